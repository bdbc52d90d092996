// SPDX-License-Identifier: Apache-2.0

//! Many RCP* updaters racing to publish a rate on the same link, checked
//! against the simulator's shadow log.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tpp_core::apps::rcp::{
    next_version, phase1_program, rcp_update_program, HopUpdate, NO_UPDATE, PHASE1_WORDS_PER_HOP,
};

use super::{apps, ConfigError, Input, Outcome};
use crate::netsim::{Agent, Ctx, ShadowEvent, SimConfig, TraceLog, WordRef};
use crate::packet::HostRecord;

const PROBE: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Hosts running an updater; empty means every host but the sink.
    pub updaters: Vec<String>,
    pub sink: String,
    /// Switch and port whose link the updaters fight over.
    pub switch: String,
    pub toward: String,
    /// Successful updates to wait for.
    pub rounds: u64,
    /// Upper bound on random think time between rounds.
    pub jitter_ns: u64,
}

impl Default for Params {
    fn default() -> Params {
        Params {
            updaters: Vec::new(),
            sink: "sink".into(),
            switch: "s0".into(),
            toward: "s1".into(),
            rounds: 10_000,
            jitter_ns: 2_000,
        }
    }
}

/// Reads the link's version with a phase-1 probe, then immediately tries to bump it.
pub struct Updater {
    flow: u32,
    dst_ip: u32,
    jitter_ns: u64,
    probe: Option<u64>,
    update: Option<u64>,
    pub stopped: bool,
    pub attempts: u64,
}

impl Updater {
    pub fn new(flow: u32, dst_ip: u32, jitter_ns: u64) -> Updater {
        Updater { flow, dst_ip, jitter_ns, probe: None, update: None, stopped: false, attempts: 0 }
    }

    fn again(&mut self, ctx: &mut Ctx<'_>) {
        let wait = if self.jitter_ns > 0 { ctx.rng().gen_range(0..=self.jitter_ns) } else { 0 };
        ctx.set_timer(wait, PROBE);
    }
}

impl Agent for Updater {
    fn start(&mut self, ctx: &mut Ctx<'_>) {
        self.again(ctx);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, _token: u64) {
        if self.stopped {
            return;
        }
        self.probe = ctx.send_tpp(self.dst_ip, phase1_program(2, apps::RCP.1), 0, self.flow).ok();
    }

    fn on_record(&mut self, ctx: &mut Ctx<'_>, rec: &HostRecord) {
        if rec.flow != self.flow {
            return;
        }
        if self.probe == Some(rec.seq) {
            self.probe = None;
            let fwd = rec.record.forward_part(rec.forward_hops(), PHASE1_WORDS_PER_HOP);
            let Some(&version) = fwd.stack_words().get(3) else {
                return self.again(ctx);
            };
            // The rate is the new version, so every successful store changes the word.
            let up = HopUpdate { version, rate_word: next_version(version) };
            let tpp = rcp_update_program(&[Some(up), None], apps::RCP.1).expect("one hop updates");
            if self.stopped {
                return;
            }
            self.attempts += 1;
            self.update = ctx.send_tpp(self.dst_ip, tpp, 0, self.flow).ok();
            if self.update.is_none() {
                self.again(ctx);
            }
        } else if self.update == Some(rec.seq) {
            self.update = None;
            self.again(ctx);
        }
    }
}

/// What the shadow log says about one contended version word.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RaceReport {
    pub cstores: u64,
    pub successes: u64,
    /// Versions that were installed and later replaced.
    pub superseded_versions: u64,
    /// Superseded versions with a success count other than one.
    pub versions_without_one_winner: u64,
    /// Successes whose expected version was not the one after the previous success.
    pub out_of_sequence: u64,
    /// Version-word writes that were not a step to the next version.
    pub bad_version_writes: u64,
    pub version_writes: u64,
    pub rate_writes: u64,
    /// Successful CSTOREs whose rate STORE left no trace.
    pub lost_updates: u64,
    /// Rate writes by packets whose CSTORE failed.
    pub unguarded_rate_writes: u64,
    pub no_update_successes: u64,
    pub final_version: u16,
    pub ok: bool,
}

pub fn verify(log: &TraceLog, switch_id: u16, port: u8) -> RaceReport {
    let version_word = WordRef::LinkAppSpecific { port, index: 0 };
    let rate_word = WordRef::LinkAppSpecific { port, index: 1 };
    let mut r = RaceReport::default();
    let mut expect = 0u16;
    let mut winners: BTreeMap<u16, u64> = BTreeMap::new();
    let mut won_packets = Vec::new();
    let mut rate_packets = Vec::new();
    for ev in &log.shadow {
        match *ev {
            ShadowEvent::Cstore { switch_id: s, word: Some(w), pre, success, packet, x_before, .. } if s == switch_id && w == version_word => {
                r.cstores += 1;
                if success {
                    r.successes += 1;
                    if pre == NO_UPDATE {
                        r.no_update_successes += 1;
                    }
                    if pre != expect {
                        r.out_of_sequence += 1;
                    }
                    expect = next_version(pre);
                    *winners.entry(pre).or_default() += 1;
                    won_packets.push(packet);
                } else if let Some(x) = x_before {
                    winners.entry(x).or_default();
                }
            }
            ShadowEvent::Write { switch_id: s, word, old, new, packet, .. } if s == switch_id => {
                if word == version_word {
                    r.version_writes += 1;
                    if new != next_version(old) {
                        r.bad_version_writes += 1;
                    }
                    winners.entry(old).or_default();
                } else if word == rate_word {
                    r.rate_writes += 1;
                    rate_packets.push(packet);
                }
            }
            _ => {}
        }
    }
    r.final_version = expect;
    // Every version but the live one was replaced; each must have exactly one winner.
    winners.remove(&expect);
    r.superseded_versions = winners.len() as u64;
    r.versions_without_one_winner = winners.values().filter(|n| **n != 1).count() as u64;
    let rate_set: std::collections::BTreeSet<u64> = rate_packets.iter().copied().collect();
    let won_set: std::collections::BTreeSet<u64> = won_packets.iter().copied().collect();
    r.lost_updates = won_packets.iter().filter(|p| !rate_set.contains(p)).count() as u64;
    r.unguarded_rate_writes = rate_packets.iter().filter(|p| !won_set.contains(p)).count() as u64;
    r.ok = r.successes > 0
        && r.out_of_sequence == 0
        && r.versions_without_one_winner == 0
        && r.superseded_versions == r.successes
        && r.bad_version_writes == 0
        && r.version_writes == r.successes
        && r.rate_writes == r.successes
        && r.lost_updates == 0
        && r.unguarded_rate_writes == 0
        && r.no_update_successes == 0;
    r
}

pub fn run(input: &Input, p: &Params) -> Result<Outcome, ConfigError> {
    let topo = &input.topo;
    let node = |n: &str| topo.node(n).ok_or_else(|| ConfigError::invalid(format!("cstore_race: unknown node {n:?}")));
    let sink = node(&p.sink)?;
    let sink_ip = topo.host_ip(sink).ok_or_else(|| ConfigError::invalid("cstore_race: sink must be a host"))?;
    let sw = node(&p.switch)?;
    let toward = node(&p.toward)?;
    let switch_id = topo.switch_id(sw).ok_or_else(|| ConfigError::invalid("cstore_race: switch must be a switch"))?;
    let port = topo.nodes[sw]
        .ports
        .iter()
        .position(|x| x.peer == toward)
        .ok_or_else(|| ConfigError::invalid("cstore_race: switch has no link toward that node"))? as u8;
    let hosts: Vec<_> = if p.updaters.is_empty() {
        topo.hosts().into_iter().filter(|h| *h != sink).collect()
    } else {
        p.updaters.iter().map(|h| node(h)).collect::<Result<_, _>>()?
    };

    let mut sim = input.simulator(SimConfig { log_deliveries: false, log_records: false, ..SimConfig::default() })?;
    let agents: Vec<_> = hosts
        .iter()
        .enumerate()
        .map(|(i, h)| (*h, sim.add_agent(*h, Box::new(Updater::new(0xC5_0000 + i as u32, sink_ip, p.jitter_ns)))))
        .collect();
    let successes = |log: &TraceLog| {
        log.shadow
            .iter()
            .filter(|e| matches!(e, ShadowEvent::Cstore { switch_id: s, word: Some(WordRef::LinkAppSpecific { port: q, index: 0 }), success: true, .. } if *s == switch_id && *q == port))
            .count() as u64
    };
    let step = 5_000_000;
    let mut counted = 0;
    while sim.now() < input.duration_ns {
        sim.run_until(sim.now() + step);
        counted = successes(sim.log());
        if counted >= p.rounds {
            break;
        }
    }
    let stopped_at = sim.now();
    // Let the last updates land before reading the link.
    for (h, i) in &agents {
        sim.agent_mut::<Updater>(*h, *i).expect("installed above").stopped = true;
    }
    sim.run_until(sim.now() + step);
    let attempts: u64 = agents.iter().map(|(h, i)| sim.agent::<Updater>(*h, *i).unwrap().attempts).sum();
    let final_word = sim.switch(sw).expect("switch node").links[usize::from(port)].app_specific;
    let log = sim.finish();
    let mut report = verify(&log, switch_id, port);
    report.ok &= final_word == [report.final_version, report.final_version] || (report.successes == 0);
    let summary = serde_json::json!({
        "updaters": hosts.len(),
        "rounds_target": p.rounds,
        "rounds_reached": counted >= p.rounds,
        "stopped_at_ns": stopped_at,
        "attempts": attempts,
        "report": report,
        "final_word": final_word,
        "counters": log.counters,
    });
    Ok(Outcome { log, summary, files: Vec::new() })
}
