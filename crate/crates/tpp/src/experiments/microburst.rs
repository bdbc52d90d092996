// SPDX-License-Identifier: Apache-2.0

//! Micro-burst detection: every packet carries a TPP that reads the queue it
//! joins at each hop.

use serde::{Deserialize, Serialize};
use tpp_core::apps::microburst::{microburst_ingest, MICROBURST_SOURCE, WORDS_PER_HOP};
use tpp_core::asm::assemble;
use tpp_core::switch::state::CELL_BYTES;
use tpp_core::TppProgram;

use super::{apps, install_everywhere, to_csv, AllToAll, ConfigError, Input, Outcome, RecordSink};
use crate::netsim::{PortSet, QueueSampling, SimConfig};
use crate::packet::HostRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub traffic: AllToAll,
    /// Hops the TPP has room for.
    pub hops: usize,
    /// One packet in this many carries the TPP.
    pub sample_every: u32,
    pub queue_sample_interval_s: f64,
}

impl Default for Params {
    fn default() -> Params {
        Params {
            traffic: AllToAll { load: 0.3, message_bytes: 10_000, payload_bytes: super::traffic::MSS },
            hops: 5,
            sample_every: 1,
            queue_sample_interval_s: 0.0005,
        }
    }
}

pub fn program(hops: usize) -> TppProgram {
    let mut t = assemble(MICROBURST_SOURCE).expect("micro-burst listing assembles");
    t.memory = vec![0; hops * WORDS_PER_HOP * 2];
    t.header.session_id = apps::MICROBURST.1;
    t
}

/// Per-hop samples checked against what the simulator saw at that hop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Fidelity {
    pub records: u64,
    pub samples: u64,
    pub mismatches: u64,
    /// Records whose hop count disagrees with the path.
    pub bad_records: u64,
}

pub fn check_fidelity<'a>(records: impl IntoIterator<Item = &'a HostRecord>) -> Fidelity {
    let mut f = Fidelity::default();
    for r in records {
        f.records += 1;
        let words = r.record.stack_words();
        if words.len() != r.path.len() * WORDS_PER_HOP || usize::from(r.record.hop_count) != r.path.len() {
            f.bad_records += 1;
        }
        for (w, hop) in words.chunks_exact(WORDS_PER_HOP).zip(&r.path) {
            f.samples += 1;
            let cells = hop.queue_bytes.div_ceil(CELL_BYTES).min(0xFFFF) as u16;
            if (w[0], w[1], w[2]) != (hop.switch_id, u16::from(hop.out_port), cells) {
                f.mismatches += 1;
            }
        }
    }
    f
}

pub fn run(input: &Input, p: &Params) -> Result<Outcome, ConfigError> {
    let every_ns = (p.queue_sample_interval_s * 1e9) as u64;
    let cfg = SimConfig {
        queue_sampling: (every_ns > 0).then_some(QueueSampling { every_ns, ports: PortSet::HostFacing }),
        log_deliveries: false,
        log_records: false,
        ..SimConfig::default()
    };
    let mut sim = input.simulator(cfg)?;
    install_everywhere(&mut sim, apps::MICROBURST.0, &program(p.hops), p.sample_every.max(1))?;
    p.traffic.install(&mut sim)?;
    let hosts = sim.topology().hosts();
    let sinks: Vec<_> = hosts.iter().map(|h| (*h, sim.add_agent(*h, Box::new(RecordSink::new(apps::MICROBURST.1))))).collect();
    sim.run_until(input.duration_ns);
    let records: Vec<&HostRecord> =
        sinks.iter().flat_map(|(h, i)| sim.agent::<RecordSink>(*h, *i).expect("installed above").records.iter()).collect();
    let fidelity = check_fidelity(records.iter().copied());
    let report = microburst_ingest(records.iter().map(|r| &r.record));
    let rows = report.cdf.iter().flat_map(|((sw, port), c)| c.iter().map(move |(q, frac)| (*sw, *port, *q, *frac)));
    let cdf = to_csv(&["switch_id", "port", "qsize_cells", "fraction"], rows).map_err(|e| ConfigError::invalid(e.to_string()))?;
    let queues = report.series.len();
    let malformed = report.malformed;
    let log = sim.finish();
    let empty = log.queue_samples.iter().filter(|q| q.bytes == 0).count();
    let summary = serde_json::json!({
        "fidelity": fidelity,
        // Each per-packet sample includes the packet itself, so idle time comes from the periodic samples.
        "empty_fraction": if log.queue_samples.is_empty() { 1.0 } else { empty as f64 / log.queue_samples.len() as f64 },
        "queues": queues,
        "malformed": malformed,
        "counters": log.counters,
    });
    Ok(Outcome { log, summary, files: vec![("microburst_cdf.csv".into(), cdf)] })
}
