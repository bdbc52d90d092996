// SPDX-License-Identifier: Apache-2.0

//! CONGA*: a host probes its paths with TPPs and steers flowlets by VLAN tag
//! onto the least congested one.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use tpp_core::apps::conga::{conga_select, CongaPathTable, HopUtilization, MetricMode, PROBE_SOURCE, PROBE_WORDS_PER_HOP};
use tpp_core::asm::assemble;
use tpp_core::TppProgram;

use super::traffic::{wire_bytes, PathSelector, UdpSource};
use super::{apps, ConfigError, Input, Outcome};
use crate::netsim::{Agent, Ctx, SimConfig, TraceLog};
use crate::packet::HostRecord;
use crate::topology::max_flow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Steering {
    #[default]
    Conga,
    /// Flow `i` always takes path `i % paths`.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbrDemand {
    pub src: String,
    pub dst: String,
    pub rate_bps: f64,
}

/// On/off flows from one host that may take any of `paths` VLAN-selected paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowletDemand {
    pub src: String,
    pub dst: String,
    pub flows: u32,
    pub rate_bps: f64,
    pub burst_bytes: u64,
    pub paths: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub steering: Steering,
    /// Also run static steering on the same inputs and report both.
    pub compare_static: bool,
    pub cbr: Vec<CbrDemand>,
    pub flowlets: FlowletDemand,
    pub metric: Metric,
    pub probe_interval_s: f64,
    /// Probe every path each interval rather than one path per interval in turn.
    pub probe_all_paths: bool,
    /// Flowlet gap floor; the gap is otherwise twice the smoothed probe RTT.
    pub min_gap_ns: u64,
    /// Throughput is measured after this point.
    pub warmup_s: f64,
}

impl Default for Params {
    fn default() -> Params {
        Params {
            steering: Steering::Conga,
            compare_static: true,
            cbr: vec![CbrDemand { src: "h0".into(), dst: "h2".into(), rate_bps: 60e6 }],
            flowlets: FlowletDemand { src: "h1".into(), dst: "h2".into(), flows: 10, rate_bps: 10e6, burst_bytes: 15_000, paths: 2 },
            metric: Metric::Max,
            probe_interval_s: 0.001,
            probe_all_paths: false,
            min_gap_ns: 100_000,
            warmup_s: 2.0,
        }
    }
}

/// Probes every path and keeps the shared path table current.
pub struct CongaProber {
    pub table: Rc<RefCell<CongaPathTable>>,
    dst_ip: u32,
    paths: u16,
    all_paths: bool,
    interval_ns: u64,
    min_gap_ns: u64,
    program: TppProgram,
    next_path: u16,
    pending: BTreeMap<u64, u16>,
    rtt_ns: Option<f64>,
    pub probes_sent: u64,
    pub probes_back: u64,
}

/// Flow tag of probe packets.
pub const PROBE_FLOW: u32 = 0xC0_A6A0;

/// Switch hops a probe has room for.
pub const PROBE_HOPS: usize = 3;

impl CongaProber {
    pub fn new(table: Rc<RefCell<CongaPathTable>>, dst_ip: u32, paths: u16, p: &Params) -> CongaProber {
        let mut program = assemble(PROBE_SOURCE).expect("probe listing assembles");
        program.memory = vec![0; PROBE_HOPS * PROBE_WORDS_PER_HOP * 2];
        program.header.session_id = apps::CONGA.1;
        CongaProber {
            table,
            dst_ip,
            paths,
            all_paths: p.probe_all_paths,
            interval_ns: (p.probe_interval_s * 1e9) as u64,
            min_gap_ns: p.min_gap_ns,
            program,
            next_path: 0,
            pending: BTreeMap::new(),
            rtt_ns: None,
            probes_sent: 0,
            probes_back: 0,
        }
    }

    fn send(&mut self, ctx: &mut Ctx<'_>, path: u16) {
        if let Ok(seq) = ctx.send_tpp(self.dst_ip, self.program.clone(), path, PROBE_FLOW) {
            self.pending.insert(seq, path);
            self.probes_sent += 1;
        }
    }
}

impl Agent for CongaProber {
    fn start(&mut self, ctx: &mut Ctx<'_>) {
        ctx.set_timer(0, 0);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, _token: u64) {
        if self.all_paths {
            for path in 0..self.paths {
                self.send(ctx, path);
            }
        } else {
            let path = self.next_path;
            self.next_path = (path + 1) % self.paths;
            self.send(ctx, path);
        }
        ctx.set_timer(self.interval_ns, 0);
    }

    fn on_record(&mut self, ctx: &mut Ctx<'_>, rec: &HostRecord) {
        if rec.flow != PROBE_FLOW {
            return;
        }
        let Some(path) = self.pending.remove(&rec.seq) else { return };
        self.probes_back += 1;
        let fwd = rec.forward_hops();
        let part = rec.record.forward_part(fwd, PROBE_WORDS_PER_HOP);
        let words = part.stack_words();
        let n = words.len() / PROBE_WORDS_PER_HOP;
        let hops: Vec<HopUtilization> = words
            .chunks_exact(PROBE_WORDS_PER_HOP)
            .enumerate()
            .map(|(i, w)| HopUtilization::from_word(w[0], w[1], i + 1 < n))
            .collect();
        let sample = rec.rtt_ns() as f64;
        let rtt = match self.rtt_ns {
            None => sample,
            Some(d) => d + (sample - d) / 8.0,
        };
        self.rtt_ns = Some(rtt);
        let mut t = self.table.borrow_mut();
        t.update(path, &hops, ctx.now());
        t.gap_ns = ((2.0 * rtt) as u64).max(self.min_gap_ns);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongaResult {
    pub steering: Steering,
    pub throughput_bps: f64,
    pub per_source_bps: BTreeMap<String, f64>,
    pub tpp_overhead: f64,
    pub dropped: u64,
    pub probes_sent: u64,
    pub probes_back: u64,
}

fn simulate(input: &Input, p: &Params, steering: Steering) -> Result<(CongaResult, TraceLog), ConfigError> {
    let topo = &input.topo;
    let host = |n: &str| {
        topo.node(n)
            .filter(|x| topo.nodes[*x].is_host())
            .ok_or_else(|| ConfigError::invalid(format!("conga: unknown host {n:?}")))
    };
    let f = &p.flowlets;
    if f.paths == 0 || f.flows == 0 || !(f.rate_bps > 0.0) || f.burst_bytes == 0 {
        return Err(ConfigError::invalid("conga: flowlet demand needs paths, flows, a rate and a burst size"));
    }
    let mut sim = input.simulator(SimConfig { log_records: false, ..SimConfig::default() })?;
    let sink = host(&f.dst)?;
    let sink_ip = topo.host_ip(sink).unwrap();
    let mut names = BTreeMap::new();
    for (i, d) in p.cbr.iter().enumerate() {
        let src = host(&d.src)?;
        if host(&d.dst)? != sink {
            return Err(ConfigError::invalid("conga: every demand must go to the flowlet destination"));
        }
        let flow = 0xCB_0000 + i as u32;
        names.insert(flow, d.src.clone());
        sim.add_agent(src, Box::new(UdpSource::cbr(flow, sink_ip, d.rate_bps)));
    }
    let src = host(&f.src)?;
    let gap0 = p.min_gap_ns;
    let mode = match p.metric {
        Metric::Max => MetricMode::Max,
        Metric::Sum => MetricMode::Sum,
    };
    let table = Rc::new(RefCell::new(CongaPathTable::new(usize::from(f.paths), mode, gap0)));
    let mut prober = None;
    if steering == Steering::Conga {
        prober = Some(sim.add_agent(src, Box::new(CongaProber::new(table.clone(), sink_ip, f.paths, p))));
    }
    let paths = f.paths;
    let selector: PathSelector = match steering {
        Steering::Conga => {
            let t = table.clone();
            Rc::new(RefCell::new(move |flow: u32, now: u64| conga_select(u64::from(flow), now, &mut t.borrow_mut())))
        }
        Steering::Static => Rc::new(RefCell::new(move |flow: u32, _now: u64| (flow % u32::from(paths)) as u16)),
    };
    for i in 0..f.flows {
        let flow = 0xF1_0000 + i;
        names.insert(flow, f.src.clone());
        let mut s = UdpSource::on_off(flow, sink_ip, f.rate_bps, f.burst_bytes);
        s.selector = Some(selector.clone());
        sim.add_agent(src, Box::new(s));
    }
    sim.run_until(input.duration_ns);
    let (probes_sent, probes_back) = prober
        .and_then(|i| sim.agent::<CongaProber>(src, i))
        .map_or((0, 0), |a| (a.probes_sent, a.probes_back));
    let log = sim.finish();
    let from = (p.warmup_s * 1e9) as u64;
    let window = input.duration_ns.saturating_sub(from) as f64 / 1e9;
    let mut per_source: BTreeMap<String, f64> = BTreeMap::new();
    for d in log.deliveries.iter().filter(|d| d.time_ns >= from && d.host == sink) {
        if let Some(name) = names.get(&d.flow) {
            *per_source.entry(name.clone()).or_default() += wire_bytes(d.payload_bytes) as f64 * 8.0;
        }
    }
    if window > 0.0 {
        per_source.values_mut().for_each(|v| *v /= window);
    }
    let c = log.counters;
    let result = CongaResult {
        steering,
        throughput_bps: per_source.values().sum(),
        per_source_bps: per_source,
        tpp_overhead: if c.link_bytes > 0 { c.tpp_link_bytes as f64 / c.link_bytes as f64 } else { 0.0 },
        dropped: c.dropped(),
        probes_sent,
        probes_back,
    };
    Ok((result, log))
}

/// Best aggregate rate the demands can get into the sink, bits/s.
pub fn optimum(input: &Input, p: &Params) -> Result<f64, ConfigError> {
    let topo = &input.topo;
    let node = |n: &str| topo.node(n).ok_or_else(|| ConfigError::invalid(format!("conga: unknown host {n:?}")));
    let mut sources: Vec<(usize, f64)> = Vec::new();
    for d in &p.cbr {
        sources.push((node(&d.src)?, d.rate_bps));
    }
    sources.push((node(&p.flowlets.src)?, p.flowlets.rate_bps * f64::from(p.flowlets.flows)));
    Ok(max_flow(topo, &sources, node(&p.flowlets.dst)?, 1.0))
}

pub fn run(input: &Input, p: &Params) -> Result<Outcome, ConfigError> {
    if !(p.probe_interval_s > 0.0) || p.warmup_s * 1e9 >= input.duration_ns as f64 {
        return Err(ConfigError::invalid("conga: need a positive probe interval and a run longer than the warmup"));
    }
    let optimum = optimum(input, p)?;
    let (main, log) = simulate(input, p, p.steering)?;
    let baseline = if p.compare_static && p.steering != Steering::Static {
        Some(simulate(input, p, Steering::Static)?.0)
    } else {
        None
    };
    let summary = serde_json::json!({
        "optimum_bps": optimum,
        "fraction_of_optimum": main.throughput_bps / optimum,
        "result": main,
        "static": baseline,
        "counters": log.counters,
    });
    Ok(Outcome { log, summary, files: Vec::new() })
}
