// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tpp::endhost::cp::{CpDoc, CpError, Filter, TppControlPlane};
use tpp::experiments::standard_policy_doc;
use tpp_core::asm::assemble;

#[derive(Parser)]
#[command(name = "tppctl", version, about = "Edit a TPP control plane's rule file")]
struct Cli {
    /// Rule file; created on first write.
    #[arg(long)]
    state: PathBuf,
    /// Apps and policies to start from when the rule file does not exist yet;
    /// defaults to the bundled apps.
    #[arg(long)]
    policies: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Install a TPP for packets matching a filter. Prints the rule handle.
    AddTpp {
        /// Listing, or an encoded TPP with --encoded.
        tpp: PathBuf,
        #[arg(long)]
        encoded: bool,
        #[arg(long)]
        appid: u64,
        /// e.g. `dst=10.0.0.2,proto=udp`; `*` matches everything.
        #[arg(long, default_value = "*")]
        filter: String,
        /// Stamp one matching packet in this many.
        #[arg(long, default_value_t = 1)]
        every: u32,
        #[arg(long, default_value_t = 0)]
        priority: i32,
    },
    /// Print the rules in the order they are consulted.
    ListRules,
    /// Delete a rule by handle.
    Remove { handle: u64 },
}

fn load(state: &Path, policies: Option<&Path>) -> anyhow::Result<TppControlPlane> {
    let doc: CpDoc = if state.exists() {
        let text = std::fs::read_to_string(state).with_context(|| format!("reading {}", state.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", state.display()))?
    } else if let Some(p) = policies {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
    } else {
        standard_policy_doc()
    };
    Ok(TppControlPlane::from_doc(&doc)?)
}

fn save(state: &Path, cp: &TppControlPlane) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&cp.to_doc())?;
    std::fs::write(state, text + "\n").with_context(|| format!("writing {}", state.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cp = load(&cli.state, cli.policies.as_deref())?;
    match cli.cmd {
        Cmd::AddTpp { tpp, encoded, appid, filter, every, priority } => {
            let bytes = if encoded {
                std::fs::read(&tpp).with_context(|| format!("reading {}", tpp.display()))?
            } else {
                let text = std::fs::read_to_string(&tpp).with_context(|| format!("reading {}", tpp.display()))?;
                assemble(&text)?.encode()?
            };
            let filter: Filter = filter.parse()?;
            match cp.add_tpp(filter, &bytes, every, priority, appid) {
                Ok(handle) => {
                    save(&cli.state, &cp)?;
                    println!("{handle}");
                }
                Err(e @ (CpError::PolicyViolation(_) | CpError::NotRegistered(_))) => {
                    eprintln!("rejected: {e}");
                    return Ok(ExitCode::from(1));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Cmd::ListRules => {
            for r in cp.rules() {
                let session = r.tpp.header.session_id;
                println!(
                    "{}\tapp={}\tsession={session:#06x}\tpriority={}\tevery={}\tfilter={}\tinsns={}",
                    r.handle,
                    r.appid,
                    r.priority,
                    r.sample_frequency,
                    r.filter,
                    r.tpp.insn_count()
                );
            }
        }
        Cmd::Remove { handle } => {
            cp.remove(handle)?;
            save(&cli.state, &cp)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
