// SPDX-License-Identifier: Apache-2.0

//! Runnable experiments: a config file names a preset, a topology, an optional
//! background workload and the preset's parameters.

pub mod conga;
pub mod cstore_race;
pub mod microburst;
pub mod ndb;
pub mod rcp;
pub mod sketch;
pub mod traffic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tpp_core::analysis::{AccessOp, MemoryPolicy};
use tpp_core::{resolve, Address};

use crate::endhost::cp::{Aggregator, AppRegistration, CpDoc, PolicyDoc, TppControlPlane};
use crate::netsim::{SimConfig, Simulator, TraceLog};
use crate::topology::{load_topology, Topology};
use traffic::{FlowSpec, WorkloadDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Traffic,
    Rcp,
    CstoreRace,
    Conga,
    Microburst,
    Ndb,
    Sketch,
}

impl Preset {
    pub fn describe(self) -> &'static str {
        match self {
            Preset::Traffic => "background traffic only; netsim outputs",
            Preset::Rcp => "RCP* rate control over TPPs (rcp_rates.csv)",
            Preset::CstoreRace => "concurrent versioned CSTORE updaters on one link",
            Preset::Conga => "CONGA* flowlet steering against static equal split",
            Preset::Microburst => "per-packet queue occupancy from TPPs (queues.csv, microburst_cdf.csv)",
            Preset::Ndb => "packet histories and netwatch checks (histories.jsonl)",
            Preset::Sketch => "distributed bitmap sketches of destinations per link (sketch_report.json)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub preset: Preset,
    /// Relative to the config file.
    pub topology: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: serde_json::Value,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error(transparent)]
    Workload(#[from] traffic::WorkloadError),
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn invalid(what: impl Into<String>) -> ConfigError {
        ConfigError::Invalid(what.into())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigError> {
    std::fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, ConfigError> {
    serde_json::from_slice(bytes).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
}

/// A config with its files read and checked.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub topology: Topology,
    pub flows: Vec<FlowSpec>,
    pub base: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let config: ExperimentConfig = parse(path, &read(path)?)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let topology = load_topology(&base.join(&config.topology))?;
    let flows = match &config.workload {
        Some(w) => {
            let p = base.join(w);
            parse::<WorkloadDoc>(&p, &read(&p)?)?.flows
        }
        None => Vec::new(),
    };
    if !(config.duration_s >= 0.0 && config.duration_s.is_finite()) {
        return Err(ConfigError::invalid("duration_s must be a nonnegative number"));
    }
    Ok(LoadedConfig { config, topology, flows, base })
}

/// What every preset gets.
#[derive(Debug, Clone)]
pub struct Input {
    pub topo: Topology,
    pub flows: Vec<FlowSpec>,
    pub seed: u64,
    pub duration_ns: u64,
    /// Switches skip TPP writes and control planes refuse TPPs that write.
    pub deny_writes: bool,
}

impl Input {
    pub fn new(topo: Topology, seed: u64, duration_s: f64) -> Input {
        Input { topo, flows: Vec::new(), seed, duration_ns: (duration_s * 1e9).round() as u64, deny_writes: false }
    }

    /// A simulator with the standard apps registered on every host and the background flows attached.
    pub fn simulator(&self, cfg: SimConfig) -> Result<Simulator, ConfigError> {
        let cfg = SimConfig {
            seed: self.seed,
            duration_ns: self.duration_ns,
            write_enabled: cfg.write_enabled && !self.deny_writes,
            ..cfg
        };
        let mut sim = Simulator::new(&self.topo, cfg);
        for h in self.topo.hosts() {
            let cp = &mut sim.shim_mut(h).unwrap().cp;
            install_standard_apps(cp);
            cp.deny_writes = self.deny_writes;
        }
        traffic::install(&mut sim, &self.flows)?;
        Ok(sim)
    }
}

/// Result of a preset run.
pub struct Outcome {
    pub log: TraceLog,
    pub summary: serde_json::Value,
    /// App-specific output files.
    pub files: Vec<(String, Vec<u8>)>,
}

/// Apps every host's control plane knows about.
pub mod apps {
    pub const MICROBURST: (u64, u16) = (1, 0x0101);
    pub const RCP: (u64, u16) = (2, 0x0102);
    pub const NDB: (u64, u16) = (3, 0x0103);
    pub const CONGA: (u64, u16) = (4, 0x0104);
    pub const SKETCH: (u64, u16) = (5, 0x0105);
    pub const EXECUTOR: (u64, u16) = (6, 0x0106);
}

fn addr(m: &str) -> Address {
    resolve(m).expect("standard mnemonic")
}

fn policy(appid: u64, op: AccessOp, start: &str, end: &str) -> MemoryPolicy {
    let parse = |s: &str| match s.strip_prefix("0x") {
        Some(h) => Address(u16::from_str_radix(h, 16).unwrap()),
        None => addr(s),
    };
    MemoryPolicy::new(appid, op, parse(start), parse(end))
}

/// Registrations and policies of the bundled apps.
pub fn standard_apps() -> Vec<(AppRegistration, Vec<MemoryPolicy>)> {
    use AccessOp::{Read, Write};
    let reg = |(appid, session): (u64, u16), name: &str, aggregator| AppRegistration { appid, session, name: name.into(), aggregator };
    let switch_id = |a| policy(a, Read, "[Switch:SwitchID]", "[Switch:SwitchID]");
    let (mb, rcp, ndb, conga, sketch, exec) =
        (apps::MICROBURST.0, apps::RCP.0, apps::NDB.0, apps::CONGA.0, apps::SKETCH.0, apps::EXECUTOR.0);
    vec![
        (
            reg(apps::MICROBURST, "microburst", Aggregator::Local),
            vec![
                switch_id(mb),
                policy(mb, Read, "[PacketMetadata:OutputPort]", "[PacketMetadata:OutputPort]"),
                policy(mb, Read, "0xb000", "0xb0ff"),
            ],
        ),
        (
            reg(apps::RCP, "rcp", Aggregator::Source),
            vec![
                switch_id(rcp),
                policy(rcp, Read, "0xa000", "0xa0ff"),
                policy(rcp, Write, "[Link:AppSpecific_0]", "[Link:AppSpecific_1]"),
            ],
        ),
        (reg(apps::NDB, "ndb", Aggregator::Local), vec![switch_id(ndb), policy(ndb, Read, "0xc000", "0xc0ff")]),
        (reg(apps::CONGA, "conga", Aggregator::Source), vec![switch_id(conga), policy(conga, Read, "0xa000", "0xa0ff")]),
        (
            reg(apps::SKETCH, "sketch", Aggregator::Local),
            vec![switch_id(sketch), policy(sketch, Read, "[PacketMetadata:OutputPort]", "[PacketMetadata:OutputPort]")],
        ),
        (
            reg(apps::EXECUTOR, "executor", Aggregator::Source),
            vec![policy(exec, Read, "0x0000", "0xc0ff")],
        ),
    ]
}

pub fn install_standard_apps(cp: &mut TppControlPlane) {
    for (reg, policies) in standard_apps() {
        cp.register_app(reg).expect("standard apps are distinct");
        for p in policies {
            cp.add_policy(p).expect("standard policies are consistent");
        }
    }
}

/// The standard apps as a policy document.
pub fn standard_policy_doc() -> CpDoc {
    let mut doc = CpDoc::default();
    for (reg, policies) in standard_apps() {
        doc.apps.push(reg);
        doc.policies.extend(policies.iter().map(PolicyDoc::from));
    }
    doc
}

pub fn run_preset(preset: Preset, input: &Input, params: &serde_json::Value) -> Result<Outcome, ConfigError> {
    fn typed<T: serde::de::DeserializeOwned + Default>(v: &serde_json::Value) -> Result<T, ConfigError> {
        if v.is_null() {
            return Ok(T::default());
        }
        serde_json::from_value(v.clone()).map_err(|e| ConfigError::invalid(format!("params: {e}")))
    }
    match preset {
        Preset::Traffic => traffic_only(input),
        Preset::Rcp => rcp::run(input, &typed(params)?),
        Preset::CstoreRace => cstore_race::run(input, &typed(params)?),
        Preset::Conga => conga::run(input, &typed(params)?),
        Preset::Microburst => microburst::run(input, &typed(params)?),
        Preset::Ndb => ndb::run(input, &typed(params)?),
        Preset::Sketch => sketch::run(input, &typed(params)?),
    }
}

fn traffic_only(input: &Input) -> Result<Outcome, ConfigError> {
    let cfg = SimConfig {
        queue_sampling: Some(crate::netsim::QueueSampling { every_ns: 1_000_000, ports: crate::netsim::PortSet::AllSwitchPorts }),
        record_utilization: true,
        ..SimConfig::default()
    };
    let log = input.simulator(cfg)?.finish();
    let summary = serde_json::json!({ "counters": log.counters, "deliveries": log.deliveries.len() });
    Ok(Outcome { log, summary, files: Vec::new() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub preset: Preset,
    pub config_sha256: String,
    pub seed: u64,
    pub deny_writes: bool,
    pub versions: std::collections::BTreeMap<String, String>,
    pub trace_sha256: String,
    pub violations: u64,
    /// Output file name to SHA-256.
    pub outputs: std::collections::BTreeMap<String, String>,
}

pub struct RunResult {
    pub manifest: Manifest,
    pub outcome: Outcome,
    pub out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs a loaded config and writes every output plus `manifest.json` to `out_dir`.
pub fn run_config(
    loaded: &LoadedConfig,
    seed: Option<u64>,
    out_dir: &Path,
    deny_writes: bool,
) -> anyhow::Result<RunResult> {
    let mut config = loaded.config.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    config.out = None;
    let mut input = Input::new(loaded.topology.clone(), config.seed, config.duration_s);
    input.flows = loaded.flows.clone();
    input.deny_writes = deny_writes;
    let outcome = run_preset(config.preset, &input, &config.params)?;

    std::fs::create_dir_all(out_dir)?;
    outcome.log.write_csvs(out_dir)?;
    for (name, bytes) in &outcome.files {
        std::fs::write(out_dir.join(name), bytes)?;
    }
    let mut summary = outcome.summary.clone();
    if let Some(obj) = summary.as_object_mut() {
        obj.insert("seed".into(), config.seed.into());
        obj.insert("violations".into(), outcome.log.violations.clone().into());
    }
    std::fs::write(out_dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;

    let mut outputs = std::collections::BTreeMap::new();
    let mut names: Vec<String> = ["queues.csv", "utilization.csv", "deliveries.csv", "tpp_records.csv", "summary.json"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(outcome.files.iter().map(|(n, _)| n.clone()));
    for n in names {
        outputs.insert(n.clone(), sha256_hex(&std::fs::read(out_dir.join(&n))?));
    }
    // The hash covers the effective config, including the resolved topology and workload.
    let effective = serde_json::json!({
        "config": config,
        "topology": sha256_hex(&std::fs::read(loaded.base.join(&loaded.config.topology))?),
        "workload": serde_json::to_value(&loaded.flows)?,
        "deny_writes": deny_writes,
    });
    let manifest = Manifest {
        name: config.name.clone(),
        preset: config.preset,
        config_sha256: sha256_hex(&serde_json::to_vec(&effective)?),
        seed: config.seed,
        deny_writes,
        versions: [
            ("tpp".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("tpp-core".to_string(), tpp_core_version().to_string()),
        ]
        .into_iter()
        .collect(),
        trace_sha256: outcome.log.digest(),
        violations: outcome.log.violation_count,
        outputs,
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(RunResult { manifest, outcome, out_dir: out_dir.to_path_buf() })
}

fn tpp_core_version() -> &'static str {
    // Both crates are versioned together in this workspace.
    env!("CARGO_PKG_VERSION")
}

/// Bundled experiment configs, relative to the crate root.
pub const BUNDLED: &[&str] = &[
    "experiments/traffic.json",
    "experiments/rcp_maxmin.json",
    "experiments/rcp_proportional.json",
    "experiments/cstore_race.json",
    "experiments/conga.json",
    "experiments/microburst.json",
    "experiments/ndb.json",
    "experiments/sketch.json",
];

/// Mean of `xs`, or 0 for none.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn to_csv<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

/// Keeps every record of one session that reaches its host.
#[derive(Debug, Default)]
pub struct RecordSink {
    pub session: u16,
    pub records: Vec<crate::packet::HostRecord>,
}

impl RecordSink {
    pub fn new(session: u16) -> RecordSink {
        RecordSink { session, records: Vec::new() }
    }
}

impl crate::netsim::Agent for RecordSink {
    fn on_record(&mut self, _ctx: &mut crate::netsim::Ctx<'_>, rec: &crate::packet::HostRecord) {
        if rec.record.session_id == self.session {
            self.records.push(rec.clone());
        }
    }
}

/// Installs `tpp` on every host for all outgoing traffic, on one packet in `every`.
pub fn install_everywhere(
    sim: &mut Simulator,
    appid: u64,
    tpp: &tpp_core::TppProgram,
    every: u32,
) -> Result<(), ConfigError> {
    let bytes = tpp.encode().map_err(|e| ConfigError::invalid(e.to_string()))?;
    for h in sim.topology().hosts() {
        let cp = &mut sim.shim_mut(h).expect("host").cp;
        cp.add_tpp(crate::endhost::cp::Filter::any(), &bytes, every, 0, appid)
            .map_err(|e| ConfigError::invalid(format!("installing TPP: {e}")))?;
    }
    Ok(())
}

/// Poisson all-to-all messages from every host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllToAll {
    pub load: f64,
    pub message_bytes: u64,
    /// Largest UDP payload per packet; leave room for any TPP that rides along.
    #[serde(default = "traffic::default_payload")]
    pub payload_bytes: u32,
}

impl AllToAll {
    pub fn install(&self, sim: &mut Simulator) -> Result<(), ConfigError> {
        if !(self.load > 0.0 && self.load <= 1.0) || self.message_bytes == 0 || self.payload_bytes == 0 {
            return Err(ConfigError::invalid("all-to-all needs 0 < load <= 1 and a message size"));
        }
        let topo = sim.topology().clone();
        for (i, h) in topo.hosts().into_iter().enumerate() {
            let peers = topo.hosts().into_iter().filter(|p| *p != h).map(|p| topo.host_ip(p).unwrap()).collect();
            let base = 0x4000_0000 + ((i as u32) << 20);
            let mut src = traffic::PoissonSource::new(base, self.load, self.message_bytes, peers);
            src.payload = self.payload_bytes;
            sim.add_agent(h, Box::new(src));
        }
        Ok(())
    }
}
