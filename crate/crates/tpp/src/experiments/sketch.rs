// SPDX-License-Identifier: Apache-2.0

//! Distinct destinations per link, counted with bitmap sketches that every
//! receiver keeps and a collector merges.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tpp_core::apps::sketch::{SketchBank, PROBE_SOURCE};
use tpp_core::asm::assemble;
use tpp_core::TppProgram;

use super::{apps, install_everywhere, AllToAll, ConfigError, Input, Outcome};
use crate::netsim::{Agent, Ctx, SimConfig};
use crate::packet::HostRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub traffic: AllToAll,
    pub bits: usize,
    pub hash_seed: u64,
    pub hops: usize,
    pub sample_every: u32,
}

impl Default for Params {
    fn default() -> Params {
        Params { traffic: AllToAll { load: 0.1, message_bytes: 4_000, payload_bytes: super::traffic::MSS }, bits: 1024, hash_seed: 7, hops: 4, sample_every: 1 }
    }
}

pub fn program(hops: usize) -> TppProgram {
    let mut t = assemble(PROBE_SOURCE).expect("sketch listing assembles");
    t.memory = vec![0; hops * 2 * 2];
    t.header.session_id = apps::SKETCH.1;
    t
}

/// A receiver's sketches, plus the exact sets from the simulator's path log.
pub struct SketchAgent {
    pub bank: SketchBank,
    pub exact: BTreeMap<(u16, u16), BTreeSet<u32>>,
}

impl Agent for SketchAgent {
    fn on_record(&mut self, _ctx: &mut Ctx<'_>, rec: &HostRecord) {
        if rec.record.session_id != apps::SKETCH.1 {
            return;
        }
        self.bank.update(&rec.record, rec.dst_ip);
        for h in &rec.path {
            self.exact.entry((h.switch_id, u16::from(h.out_port))).or_default().insert(rec.dst_ip);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkEstimate {
    pub switch_id: u16,
    pub port: u16,
    pub exact: usize,
    pub estimate: Option<f64>,
    pub relative_error: Option<f64>,
}

pub fn run(input: &Input, p: &Params) -> Result<Outcome, ConfigError> {
    if p.bits == 0 {
        return Err(ConfigError::invalid("sketch: bits must be positive"));
    }
    let mut sim = input.simulator(SimConfig { log_deliveries: false, log_records: false, ..SimConfig::default() })?;
    install_everywhere(&mut sim, apps::SKETCH.0, &program(p.hops), p.sample_every.max(1))?;
    p.traffic.install(&mut sim)?;
    let hosts = sim.topology().hosts();
    let agents: Vec<_> = hosts
        .iter()
        .map(|h| {
            let a = SketchAgent { bank: SketchBank::new(p.bits, p.hash_seed), exact: BTreeMap::new() };
            (*h, sim.add_agent(*h, Box::new(a)))
        })
        .collect();
    sim.run_until(input.duration_ns);
    let mut merged = SketchBank::new(p.bits, p.hash_seed);
    let mut exact: BTreeMap<(u16, u16), BTreeSet<u32>> = BTreeMap::new();
    for (h, i) in &agents {
        let a = sim.agent::<SketchAgent>(*h, *i).expect("installed above");
        merged.merge(&a.bank).map_err(|e| ConfigError::invalid(e.to_string()))?;
        for (k, s) in &a.exact {
            exact.entry(*k).or_default().extend(s);
        }
    }
    let links: Vec<LinkEstimate> = exact
        .iter()
        .map(|((sw, port), set)| {
            let estimate = merged.sketches.get(&(*sw, *port)).and_then(|s| s.estimate().ok());
            LinkEstimate {
                switch_id: *sw,
                port: *port,
                exact: set.len(),
                estimate,
                relative_error: estimate.map(|e| (e - set.len() as f64).abs() / set.len() as f64),
            }
        })
        .collect();
    let errors: Vec<f64> = links.iter().filter_map(|l| l.relative_error).collect();
    let report = serde_json::json!({
        "bits": p.bits,
        "links": links,
        "mean_relative_error": super::mean(&errors),
        "saturated": links.iter().filter(|l| l.estimate.is_none()).count(),
    });
    let bytes = serde_json::to_vec_pretty(&report).map_err(|e| ConfigError::invalid(e.to_string()))?;
    let log = sim.finish();
    let summary = serde_json::json!({
        "links": report["links"].as_array().map_or(0, Vec::len),
        "mean_relative_error": report["mean_relative_error"],
        "saturated": report["saturated"],
        "counters": log.counters,
    });
    Ok(Outcome { log, summary, files: vec![("sketch_report.json".into(), bytes)] })
}
