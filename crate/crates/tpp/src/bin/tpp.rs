// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tpp::endhost::cp::{CpDoc, TppControlPlane};
use tpp::experiments::{self, load_config, run_config, Preset};
use tpp_core::analysis::{analyze_with, AnalyzeOptions};
use tpp_core::asm::{assemble_with, disassemble, AsmOptions};
use tpp_core::TppProgram;

#[derive(Parser)]
#[command(name = "tpp", version, about = "Tiny packet programs: assembler, analyzer and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a listing into its wire encoding.
    Asm {
        input: PathBuf,
        /// Write the binary here instead of hex to stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = AsmOptions::default().max_tpp_bytes)]
        max_bytes: usize,
    },
    /// Print the listing of an encoded TPP (binary, or hex with --hex).
    Disasm {
        input: PathBuf,
        #[arg(long)]
        hex: bool,
    },
    /// Check a TPP against an app's memory policies. Exits 1 when it violates them.
    Analyze {
        /// Listing, or an encoded TPP with --encoded.
        input: PathBuf,
        #[arg(long)]
        encoded: bool,
        /// Policy document; defaults to the bundled apps' policies.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        appid: u64,
        #[arg(long)]
        deny_writes: bool,
    },
    /// Run an experiment config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        deny_writes: bool,
    },
    /// List the experiment presets.
    ListExperiments,
    /// Print the switch memory map as markdown.
    Memmap,
}

fn read_tpp(path: &Path, hex_text: bool) -> anyhow::Result<TppProgram> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let bytes = if hex_text {
        let text: String = String::from_utf8(raw)?.split_whitespace().collect();
        hex::decode(text).context("bad hex")?
    } else {
        raw
    };
    Ok(TppProgram::decode(&bytes)?)
}

fn analyze(input: &Path, encoded: bool, policy: Option<&Path>, appid: u64, deny_writes: bool) -> anyhow::Result<bool> {
    let tpp = if encoded {
        read_tpp(input, false)?
    } else {
        assemble_with(&std::fs::read_to_string(input)?, &AsmOptions::default())?
    };
    let doc = match policy {
        Some(p) => serde_json::from_slice::<CpDoc>(&std::fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => experiments::standard_policy_doc(),
    };
    let cp = TppControlPlane::from_doc(&doc)?;
    let opts = AnalyzeOptions { deny_writes: deny_writes || doc.deny_writes };
    let report = analyze_with(&tpp, &cp.policies, appid, &opts);
    let mut out = std::io::stdout().lock();
    for r in &report.touched_ranges {
        writeln!(out, "insn {}: {} {}..={}", r.index, r.op, r.start, r.end)?;
    }
    for v in &report.violations {
        writeln!(out, "violation: insn {}: {}", v.index, v.reason)?;
    }
    if !report.hazard_order_ok {
        writeln!(out, "warning: instruction order has a stage hazard")?;
    }
    writeln!(out, "{}", if report.admissible() { "ok" } else { "rejected" })?;
    Ok(report.admissible())
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, deny_writes: bool) -> anyhow::Result<u64> {
    let loaded = load_config(config)?;
    let out = out
        .or_else(|| loaded.config.out.as_ref().map(|o| loaded.base.join(o)))
        .unwrap_or_else(|| PathBuf::from("out").join(&loaded.config.name));
    let r = run_config(&loaded, seed, &out, deny_writes)?;
    println!("{}", serde_json::to_string_pretty(&r.outcome.summary)?);
    println!("outputs in {}", r.out_dir.display());
    for v in &r.outcome.log.violations {
        eprintln!("invariant violation: {v}");
    }
    Ok(r.manifest.violations)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: anyhow::Result<ExitCode> = (|| match cli.cmd {
        Cmd::Asm { input, out, max_bytes } => {
            let src = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let bytes = assemble_with(&src, &AsmOptions { max_tpp_bytes: max_bytes })?.encode()?;
            match out {
                Some(o) => std::fs::write(o, &bytes)?,
                None => println!("{}", hex::encode(&bytes)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Disasm { input, hex } => {
            print!("{}", disassemble(&read_tpp(&input, hex)?));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Analyze { input, encoded, policy, appid, deny_writes } => {
            Ok(if analyze(&input, encoded, policy.as_deref(), appid, deny_writes)? { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Run { config, seed, out, deny_writes } => match load_config(&config) {
            Err(e) => {
                eprintln!("error: {e}");
                Ok(ExitCode::from(2))
            }
            Ok(_) => {
                let violations = run(&config, seed, out, deny_writes)?;
                Ok(if violations == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
            }
        },
        Cmd::ListExperiments => {
            for p in [Preset::Traffic, Preset::Rcp, Preset::CstoreRace, Preset::Conga, Preset::Microburst, Preset::Ndb, Preset::Sketch] {
                let name = serde_json::to_value(p)?;
                println!("{:<12} {}", name.as_str().unwrap_or_default(), p.describe());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Memmap => {
            print!("{}", tpp_core::memmap::render_markdown());
            Ok(ExitCode::SUCCESS)
        }
    })();
    match result {
        Ok(c) => c,
        Err(e) => {
            // Unreadable input, bad listings and bad configs all land here.
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

