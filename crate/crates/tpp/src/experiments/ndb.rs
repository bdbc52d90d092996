// SPDX-License-Identifier: Apache-2.0

//! Packet histories: sampled packets record the switch, forwarding entry and
//! input port at every hop; receivers check them against a netwatch policy.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use tpp_core::apps::history::{build_history, netwatch_check, NetwatchPolicy, Verdict, NDB_SOURCE, NDB_WORDS_PER_HOP};
use tpp_core::asm::assemble;
use tpp_core::TppProgram;

use super::{apps, install_everywhere, AllToAll, ConfigError, Input, Outcome, RecordSink};
use crate::netsim::SimConfig;
use crate::packet::HostRecord;
use crate::topology::format_ip;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetwatchDoc {
    /// `[switch_id, entry_id]` pairs; absent allows every entry.
    pub allowed_entries: Option<Vec<(u16, u16)>>,
    pub forbidden_entries: Vec<(u16, u16)>,
    pub forbidden_switches: Vec<u16>,
}

impl NetwatchDoc {
    pub fn policy(&self) -> NetwatchPolicy {
        NetwatchPolicy {
            allowed_entries: self.allowed_entries.as_ref().map(|v| v.iter().copied().collect()),
            forbidden_entries: self.forbidden_entries.iter().copied().collect(),
            forbidden_switches: self.forbidden_switches.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub traffic: AllToAll,
    pub hops: usize,
    pub sample_every: u32,
    pub netwatch: NetwatchDoc,
}

impl Default for Params {
    fn default() -> Params {
        Params {
            traffic: AllToAll { load: 0.3, message_bytes: 10_000, payload_bytes: super::traffic::MSS },
            hops: 10,
            sample_every: 10,
            netwatch: NetwatchDoc::default(),
        }
    }
}

pub fn program(hops: usize) -> TppProgram {
    let mut t = assemble(NDB_SOURCE).expect("ndb listing assembles");
    t.memory = vec![0; hops * NDB_WORDS_PER_HOP * 2];
    t.header.session_id = apps::NDB.1;
    t
}

#[derive(Debug, Clone, Serialize)]
struct HistoryLine<'a> {
    time_ns: u64,
    src: String,
    dst: String,
    flow: u32,
    seq: u64,
    hops: Vec<[u16; 3]>,
    verdict: &'a str,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NdbReport {
    pub histories: u64,
    pub truncated: u64,
    /// Histories that differ from the path the simulator recorded.
    pub mismatched: u64,
    pub netwatch_failures: u64,
}

pub fn run(input: &Input, p: &Params) -> Result<Outcome, ConfigError> {
    let mut sim = input.simulator(SimConfig { log_deliveries: false, log_records: false, ..SimConfig::default() })?;
    install_everywhere(&mut sim, apps::NDB.0, &program(p.hops), p.sample_every.max(1))?;
    p.traffic.install(&mut sim)?;
    let hosts = sim.topology().hosts();
    let sinks: Vec<_> = hosts.iter().map(|h| (*h, sim.add_agent(*h, Box::new(RecordSink::new(apps::NDB.1))))).collect();
    sim.run_until(input.duration_ns);
    let policy = p.netwatch.policy();
    let mut records: Vec<&HostRecord> =
        sinks.iter().flat_map(|(h, i)| sim.agent::<RecordSink>(*h, *i).expect("installed above").records.iter()).collect();
    records.sort_by_key(|r| (r.record.receive_time_ns, r.record.origin, r.flow, r.seq));
    let mut report = NdbReport::default();
    let mut out = Vec::new();
    let mut offending = BTreeSet::new();
    for r in records {
        report.histories += 1;
        let h = match build_history(&r.record) {
            Ok(h) => h,
            Err(_) => {
                report.truncated += 1;
                continue;
            }
        };
        let truth: Vec<[u16; 3]> = r.path.iter().map(|x| [x.switch_id, x.entry_id, u16::from(x.in_port)]).collect();
        let got: Vec<[u16; 3]> = h.hops.iter().map(|x| [x.switch_id, x.entry_id, x.input_port]).collect();
        if got != truth {
            report.mismatched += 1;
        }
        let verdict = match netwatch_check(&h, &policy) {
            Verdict::Pass => "pass",
            Verdict::Fail { hop } => {
                report.netwatch_failures += 1;
                offending.insert(got[hop]);
                "fail"
            }
        };
        let line = HistoryLine {
            time_ns: r.record.receive_time_ns,
            src: format_ip(r.record.origin),
            dst: format_ip(r.dst_ip),
            flow: r.flow,
            seq: r.seq,
            hops: got,
            verdict,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| ConfigError::invalid(e.to_string()))?;
        out.write_all(b"\n").expect("writing to memory");
    }
    let log = sim.finish();
    let summary = serde_json::json!({
        "report": report,
        "offending_hops": offending.into_iter().collect::<Vec<_>>(),
        "counters": log.counters,
    });
    Ok(Outcome { log, summary, files: vec![("histories.jsonl".into(), out)] })
}
