// SPDX-License-Identifier: Apache-2.0

//! RCP* flows: each source probes its path, computes per-link fair rates and
//! publishes them back into the links with versioned CSTOREs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tpp_core::apps::rcp::{
    phase1_program, rcp_update_program, Alpha, HopUpdate, RcpFlowState, RcpParams, PHASE1_WORDS_PER_HOP,
};

use super::traffic::{tx_time_ns, wire_bytes, DATA_PORT, MSS};
use super::{apps, mean, to_csv, ConfigError, Input, Outcome};
use crate::netsim::{Agent, Ctx, SimConfig};
use crate::packet::{HostRecord, Packet};

const DATA: u64 = 0;
const PROBE: u64 = 1;
const UPDATE: u64 = 2;

/// Hops a phase-1 probe has room for until the path length is known.
pub const DISCOVERY_HOPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcpFlow {
    pub name: String,
    pub src: String,
    pub dst: String,
    /// Expected converged rate, bits/s; reported next to the measured one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub flows: Vec<RcpFlow>,
    /// Absent for max-min fairness.
    pub alpha: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub period_s: f64,
    pub r_min_bps: f64,
    pub initial_rate_bps: f64,
    pub capacity_bps: f64,
    pub probe_interval_s: f64,
    pub payload_bytes: u32,
    /// Share of the run, at its end, over which rates are averaged.
    pub final_fraction: f64,
}

impl Default for Params {
    fn default() -> Params {
        let d = RcpParams::default();
        let flow = |name: &str, src: &str, dst: &str| RcpFlow { name: name.into(), src: src.into(), dst: dst.into(), expect_bps: None };
        Params {
            flows: vec![flow("a", "a_src", "a_dst"), flow("b", "b_src", "b_dst"), flow("c", "c_src", "c_dst")],
            alpha: None,
            a: d.a,
            b: d.b,
            period_s: d.t,
            r_min_bps: d.r_min,
            initial_rate_bps: 1e6,
            capacity_bps: 100e6,
            probe_interval_s: 0.002,
            payload_bytes: MSS,
            final_fraction: 1.0 / 3.0,
        }
    }
}

impl Params {
    pub fn rcp_params(&self) -> RcpParams {
        RcpParams {
            a: self.a,
            b: self.b,
            t: self.period_s,
            r_min: self.r_min_bps,
            alpha: self.alpha.map_or(Alpha::Infinite, Alpha::Finite),
        }
    }
}

/// One RCP* flow at its source host.
pub struct RcpAgent {
    pub name: String,
    pub flow: u32,
    pub dst_ip: u32,
    pub state: RcpFlowState,
    session: u16,
    payload: u32,
    probe_ns: u64,
    period_ns: u64,
    hops: Option<u8>,
    probes: BTreeSet<u64>,
    pending: BTreeMap<u64, Vec<Option<HopUpdate>>>,
    seq: u64,
    /// `(time, rate)` after every update period.
    pub samples: Vec<(u64, f64)>,
    pub sent_bytes: u64,
    /// TPPs the control plane refused.
    pub refused: u64,
}

impl RcpAgent {
    pub fn new(name: &str, flow: u32, dst_ip: u32, p: &Params) -> RcpAgent {
        RcpAgent {
            name: name.to_string(),
            flow,
            dst_ip,
            state: RcpFlowState::new(p.rcp_params(), p.initial_rate_bps, p.capacity_bps),
            session: apps::RCP.1,
            payload: p.payload_bytes,
            probe_ns: (p.probe_interval_s * 1e9) as u64,
            period_ns: (p.period_s * 1e9) as u64,
            hops: None,
            probes: BTreeSet::new(),
            pending: BTreeMap::new(),
            seq: 0,
            samples: Vec::new(),
            sent_bytes: 0,
            refused: 0,
        }
    }

    fn send_data(&mut self, ctx: &mut Ctx<'_>) {
        let mut p = Packet::udp(ctx.ip(), self.dst_ip, DATA_PORT, DATA_PORT, self.payload);
        p.flow = self.flow;
        p.seq = self.seq;
        self.seq += 1;
        if ctx.send(p) {
            self.sent_bytes += wire_bytes(self.payload);
        }
        ctx.set_timer(tx_time_ns(wire_bytes(self.payload), self.state.rate).max(1), DATA);
    }

    fn probe(&mut self, ctx: &mut Ctx<'_>) {
        let hops = self.hops.map_or(DISCOVERY_HOPS, usize::from);
        match ctx.send_tpp(self.dst_ip, phase1_program(hops, self.session), 0, self.flow) {
            Ok(seq) => {
                self.probes.insert(seq);
            }
            Err(_) => self.refused += 1,
        }
        ctx.set_timer(self.probe_ns, PROBE);
    }

    fn update(&mut self, ctx: &mut Ctx<'_>) {
        if let Ok(ups) = self.state.plan_update(ctx.now()) {
            if ups.iter().any(Option::is_some) {
                let tpp = rcp_update_program(&ups, self.session).expect("some hop has an update");
                match ctx.send_tpp(self.dst_ip, tpp, 0, self.flow) {
                    Ok(seq) => {
                        self.pending.insert(seq, ups);
                    }
                    Err(_) => self.refused += 1,
                }
            }
        }
        self.samples.push((ctx.now(), self.state.rate));
        ctx.set_timer(self.period_ns, UPDATE);
    }
}

impl Agent for RcpAgent {
    fn start(&mut self, ctx: &mut Ctx<'_>) {
        ctx.set_timer(0, DATA);
        ctx.set_timer(0, PROBE);
        ctx.set_timer(self.period_ns, UPDATE);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        match token {
            DATA => self.send_data(ctx),
            PROBE => self.probe(ctx),
            _ => self.update(ctx),
        }
    }

    fn on_record(&mut self, ctx: &mut Ctx<'_>, rec: &HostRecord) {
        if rec.flow != self.flow {
            return;
        }
        let fwd = rec.forward_hops();
        if self.probes.remove(&rec.seq) {
            self.hops = Some(fwd);
            self.state.observe_rtt(rec.rtt_ns() as f64 / 1e9);
            self.state.ingest_phase1(&rec.record.forward_part(fwd, PHASE1_WORDS_PER_HOP), ctx.now());
        } else if let Some(ups) = self.pending.remove(&rec.seq) {
            self.state.ingest_phase3(&ups, &rec.record.forward_part(fwd, 0));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult {
    pub name: String,
    pub mean_rate_bps: f64,
    pub goodput_bps: f64,
    pub expect_bps: Option<f64>,
    pub updates_sent: u64,
    pub updates_won: u64,
    pub refused: u64,
}

pub fn run(input: &Input, p: &Params) -> Result<Outcome, ConfigError> {
    if p.flows.is_empty() || !(p.final_fraction > 0.0 && p.final_fraction <= 1.0) {
        return Err(ConfigError::invalid("rcp: need flows and 0 < final_fraction <= 1"));
    }
    let mut sim = input.simulator(SimConfig { log_deliveries: true, ..SimConfig::default() })?;
    let topo = input.topo.clone();
    let mut agents = Vec::new();
    for (i, f) in p.flows.iter().enumerate() {
        let unknown = |h: &str| ConfigError::invalid(format!("rcp: unknown host {h:?}"));
        let src = topo.node(&f.src).filter(|n| topo.nodes[*n].is_host()).ok_or_else(|| unknown(&f.src))?;
        let dst = topo.node(&f.dst).and_then(|n| topo.host_ip(n)).ok_or_else(|| unknown(&f.dst))?;
        let flow = 0x5C9_0000 + i as u32;
        agents.push((src, sim.add_agent(src, Box::new(RcpAgent::new(&f.name, flow, dst, p)))));
    }
    sim.run_until(input.duration_ns);
    let from = input.duration_ns - (input.duration_ns as f64 * p.final_fraction) as u64;
    let window_s = (input.duration_ns - from) as f64 / 1e9;
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for ((src, idx), f) in agents.iter().zip(&p.flows) {
        let a = sim.agent::<RcpAgent>(*src, *idx).expect("agent installed above");
        let tail: Vec<f64> = a.samples.iter().filter(|(t, _)| *t >= from).map(|(_, r)| *r).collect();
        let delivered: u64 = sim
            .log()
            .deliveries
            .iter()
            .filter(|d| d.flow == a.flow && d.time_ns >= from)
            .map(|d| wire_bytes(d.payload_bytes))
            .sum();
        results.push(FlowResult {
            name: a.name.clone(),
            mean_rate_bps: mean(&tail),
            goodput_bps: if window_s > 0.0 { delivered as f64 * 8.0 / window_s } else { 0.0 },
            expect_bps: f.expect_bps,
            updates_sent: a.state.updates_sent,
            updates_won: a.state.updates_won,
            refused: a.refused,
        });
        rows.extend(a.samples.iter().map(|(t, r)| (a.name.clone(), *t, *r)));
    }
    rows.sort_by(|x, y| (x.1, &x.0).cmp(&(y.1, &y.0)));
    let csv = to_csv(&["flow", "time_ns", "rate_bps"], rows).map_err(|e| ConfigError::invalid(e.to_string()))?;
    let log = sim.finish();
    let summary = serde_json::json!({
        "alpha": p.alpha,
        "flows": results,
        "counters": log.counters,
    });
    Ok(Outcome { log, summary, files: vec![("rcp_rates.csv".into(), csv)] })
}
