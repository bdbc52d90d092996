// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event network simulator.
//!
//! Store-and-forward links with drop-tail queues, strict priority between the
//! queues of a port, hosts running [`Agent`]s behind a [`Shim`], and a shadow
//! log kept independently of the switch model's own counters.

pub mod log;

use std::any::Any;
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpp_core::apps::sketch::fmix64;
use tpp_core::switch::{forward_and_execute, PacketView, SwitchState};
use tpp_core::{Instruction, TppProgram};

pub use log::{Delivery, QueueSample, RecordRow, ShadowEvent, SimCounters, TraceLog, UtilSample, WordRef};

use crate::endhost::cp::CpError;
use crate::endhost::shim::Shim;
use crate::packet::{HostRecord, Packet, PathHop};
use crate::topology::{NodeId, NodeKind, Topology};

/// Violations kept verbatim; the rest are only counted.
const MAX_VIOLATIONS_KEPT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortSet {
    AllSwitchPorts,
    HostFacing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueSampling {
    pub every_ns: u64,
    pub ports: PortSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_ns: u64,
    pub util_window_ns: u64,
    pub write_enabled: bool,
    pub queue_sampling: Option<QueueSampling>,
    pub record_utilization: bool,
    pub log_deliveries: bool,
    pub log_records: bool,
    pub shadow_queue_events: bool,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            seed: 1,
            duration_ns: 1_000_000_000,
            util_window_ns: 1_000_000,
            write_enabled: true,
            queue_sampling: None,
            record_utilization: false,
            log_deliveries: true,
            log_records: true,
            shadow_queue_events: false,
        }
    }
}

#[derive(Debug)]
enum EventKind {
    Arrive { node: NodeId, port: u8, pkt: Box<Packet> },
    TransmitDone { node: NodeId, port: u8 },
    EnqueueDone { node: NodeId, port: u8 },
    Timer { node: NodeId, agent: usize, token: u64 },
    UtilTick,
    QueueSampleTick,
}

#[derive(Debug)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct Queued {
    pkt: Box<Packet>,
    stamp: u64,
}

struct PortRt {
    queues: Vec<VecDeque<Queued>>,
    bytes: Vec<u64>,
    cap: Vec<u64>,
    /// Queue whose head is on the wire.
    busy: Option<usize>,
    next_stamp: Vec<u64>,
    next_out: Vec<u64>,
    /// Set while the port is idle with a nonempty queue.
    waiting_since: Option<u64>,
}

impl PortRt {
    fn new(queues: usize, cap: u64) -> PortRt {
        PortRt {
            queues: (0..queues).map(|_| VecDeque::new()).collect(),
            bytes: vec![0; queues],
            cap: vec![cap; queues],
            busy: None,
            next_stamp: vec![0; queues],
            next_out: vec![0; queues],
            waiting_since: None,
        }
    }

    fn packets(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }
}

struct HostRt {
    ip: u32,
    shim: Shim,
    rng: ChaCha8Rng,
}

enum Dispatch {
    Timer { node: NodeId, agent: usize, token: u64 },
    Packet { node: NodeId, pkt: Packet },
    Record { node: NodeId, rec: HostRecord },
}

/// Behaviour attached to a host.
pub trait Agent: Any {
    fn start(&mut self, _ctx: &mut Ctx<'_>) {}
    fn on_timer(&mut self, _ctx: &mut Ctx<'_>, _token: u64) {}
    /// An application packet arrived at this host (TPP already stripped).
    fn on_packet(&mut self, _ctx: &mut Ctx<'_>, _pkt: &Packet) {}
    /// An executed TPP was routed to this host.
    fn on_record(&mut self, _ctx: &mut Ctx<'_>, _rec: &HostRecord) {}
}

/// Everything except the agents, so agents can borrow it during callbacks.
pub struct SimCore {
    topo: Topology,
    cfg: SimConfig,
    now: u64,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    switches: Vec<Option<SwitchState>>,
    ports: Vec<Vec<PortRt>>,
    hosts: Vec<Option<HostRt>>,
    loss_rng: ChaCha8Rng,
    next_packet: u64,
    log: TraceLog,
    pending: VecDeque<Dispatch>,
}

fn stream_seed(seed: u64, node: usize, tag: u64) -> u64 {
    fmix64(seed ^ fmix64((node as u64) << 8 | tag))
}

impl SimCore {
    fn new(topo: &Topology, cfg: SimConfig) -> SimCore {
        let mut switches = Vec::new();
        let mut ports = Vec::new();
        let mut hosts = Vec::new();
        for (n, node) in topo.nodes.iter().enumerate() {
            switches.push(topo.build_switch(n));
            match node.kind {
                NodeKind::Host { ip } => {
                    ports.push(vec![PortRt::new(1, topo.host_queue_bytes)]);
                    hosts.push(Some(HostRt {
                        ip,
                        shim: Shim::new(n, ip, topo.mtu, stream_seed(cfg.seed, n, 1)),
                        rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, n, 2)),
                    }));
                }
                NodeKind::Switch { queues, .. } => {
                    ports.push(node.ports.iter().map(|p| PortRt::new(queues, p.queue_bytes)).collect());
                    hosts.push(None);
                }
            }
        }
        let log = TraceLog { seed: cfg.seed, duration_ns: cfg.duration_ns, ..TraceLog::default() };
        let mut core = SimCore {
            topo: topo.clone(),
            loss_rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, usize::MAX >> 8, 3)),
            cfg,
            now: 0,
            seq: 0,
            events: BinaryHeap::new(),
            switches,
            ports,
            hosts,
            next_packet: 1,
            log,
            pending: VecDeque::new(),
        };
        if core.cfg.util_window_ns > 0 {
            core.schedule(core.cfg.util_window_ns, EventKind::UtilTick);
        }
        if let Some(q) = core.cfg.queue_sampling {
            if q.every_ns > 0 {
                core.schedule(0, EventKind::QueueSampleTick);
            }
        }
        core
    }

    fn schedule(&mut self, delay_ns: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event { time: self.now + delay_ns, seq: self.seq, kind }));
    }

    fn violation(&mut self, what: String) {
        self.log.violation_count += 1;
        if self.log.violations.len() < MAX_VIOLATIONS_KEPT {
            self.log.violations.push(format!("t={}ns: {what}", self.now));
        }
    }

    fn switch_id(&self, node: NodeId) -> u16 {
        self.topo.switch_id(node).unwrap_or(u16::MAX)
    }

    /// Puts a packet on a host's NIC queue.
    fn inject(&mut self, node: NodeId, mut pkt: Packet) -> bool {
        if pkt.id == 0 {
            pkt.id = self.next_packet;
            self.next_packet += 1;
        }
        self.log.counters.injected += 1;
        if self.enqueue(node, 0, 0, Box::new(pkt)) {
            true
        } else {
            self.log.counters.dropped_host_queue += 1;
            false
        }
    }

    fn fits(&self, node: NodeId, port: u8, queue: usize, len: u64) -> bool {
        let p = &self.ports[node][usize::from(port)];
        p.bytes[queue] + len <= p.cap[queue]
    }

    fn enqueue(&mut self, node: NodeId, port: u8, queue: usize, pkt: Box<Packet>) -> bool {
        let len = pkt.wire_len() as u64;
        if !self.fits(node, port, queue, len) {
            return false;
        }
        let now = self.now;
        let id = pkt.id;
        let p = &mut self.ports[node][usize::from(port)];
        let stamp = p.next_stamp[queue];
        p.next_stamp[queue] += 1;
        p.queues[queue].push_back(Queued { pkt, stamp });
        p.bytes[queue] += len;
        let bytes_after = p.bytes[queue];
        let idle = p.busy.is_none();
        if idle && p.waiting_since.is_none() {
            p.waiting_since = Some(now);
        }
        if self.cfg.shadow_queue_events && self.switches[node].is_some() {
            let switch_id = self.switch_id(node);
            self.log.shadow.push(ShadowEvent::Enqueue { time_ns: now, switch_id, port, queue: queue as u8, packet: id, bytes_after });
        }
        if idle {
            self.schedule(0, EventKind::EnqueueDone { node, port });
        }
        true
    }

    fn start_tx(&mut self, node: NodeId, port: u8) {
        let now = self.now;
        let p = &mut self.ports[node][usize::from(port)];
        if p.busy.is_some() {
            return;
        }
        let Some(q) = p.queues.iter().position(|q| !q.is_empty()) else {
            p.waiting_since = None;
            return;
        };
        let waited = p.waiting_since.take().filter(|t| *t < now);
        p.busy = Some(q);
        let head = &p.queues[q][0].pkt;
        let len = head.wire_len() as u64;
        let overhead = if head.is_standalone() { len } else { head.tpp_bytes() as u64 };
        let cap = self.topo.nodes[node].ports[usize::from(port)].capacity_bps;
        let ser = (len * 8 * 1_000_000_000).div_ceil(cap);
        self.log.counters.link_bytes += len;
        self.log.counters.tpp_link_bytes += overhead;
        if let Some(t) = waited {
            self.violation(format!("node {node} port {port} idle with a backlog since {t}ns"));
        }
        self.schedule(ser, EventKind::TransmitDone { node, port });
    }

    fn transmit_done(&mut self, node: NodeId, port: u8) {
        let now = self.now;
        let p = &mut self.ports[node][usize::from(port)];
        let q = p.busy.take().expect("transmission in progress");
        let Queued { pkt, stamp } = p.queues[q].pop_front().expect("head of line");
        let len = pkt.wire_len() as u64;
        p.bytes[q] -= len;
        let bytes_after = p.bytes[q];
        let fifo_ok = stamp == p.next_out[q];
        p.next_out[q] = stamp + 1;
        if !fifo_ok {
            self.violation(format!("node {node} port {port} queue {q} left FIFO order"));
        }
        if let Some(sw) = self.switches[node].as_mut() {
            sw.dequeue(port, q as u8, len);
            let occ = sw.links[usize::from(port)].queues[q].occupancy_bytes;
            let switch_id = sw.switch_id;
            if occ != bytes_after {
                self.violation(format!("switch {switch_id} port {port} queue {q}: model {occ} B, simulator {bytes_after} B"));
            }
            if self.cfg.shadow_queue_events {
                self.log.shadow.push(ShadowEvent::Dequeue { time_ns: now, switch_id, port, queue: q as u8, packet: pkt.id, bytes_after });
            }
        }
        let link = self.topo.nodes[node].ports[usize::from(port)];
        if link.loss > 0.0 && self.loss_rng.gen::<f64>() < link.loss {
            self.log.counters.dropped_loss += 1;
        } else {
            self.schedule(link.delay_ns, EventKind::Arrive { node: link.peer, port: link.peer_port, pkt });
        }
        self.start_tx(node, port);
    }

    fn arrive(&mut self, node: NodeId, port: u8, pkt: Box<Packet>) {
        if self.switches[node].is_some() {
            self.switch_arrive(node, port, pkt);
        } else {
            self.host_arrive(node, *pkt);
        }
    }

    fn switch_arrive(&mut self, node: NodeId, in_port: u8, mut pkt: Box<Packet>) {
        let now = self.now;
        let len = pkt.wire_len() as u64;
        let view = PacketView {
            input_port: in_port,
            dst_ip: pkt.dst_ip,
            vlan: pkt.vlan,
            length: len.min(u64::from(u16::MAX)) as u16,
            flow_hash: pkt.flow_hash(),
            queue: pkt.queue,
        };
        let expected_port = self.topo.select_path(node, &view);
        let sw = self.switches[node].as_mut().expect("switch node");
        let switch_id = sw.switch_id;
        let snapshot = pkt.tpp.as_ref().map(|_| sw.writable_words());
        let before: Option<TppProgram> =
            pkt.tpp.as_ref().filter(|t| t.instructions.iter().any(|i| matches!(i, Instruction::Cstore { .. }))).cloned();
        // The simulator's own admission decision, made before the model's.
        let decision = expected_port.map(|p| {
            let q = usize::from(pkt.queue).min(self.ports[node][usize::from(p)].queues.len() - 1);
            (p, q, self.fits(node, p, q, len))
        });
        let sw = self.switches[node].as_mut().expect("switch node");
        let fwd = forward_and_execute(sw, &view, pkt.tpp.as_mut(), now, self.cfg.write_enabled);
        let entry_id = fwd.meta.matched.iter().rev().flatten().next().and_then(|r| sw.entry(*r)).map_or(0, |e| e.id);
        let after = snapshot.as_ref().map(|_| sw.writable_words());
        let cstores: Vec<_> = match (&fwd.trace, &before) {
            (Some(t), Some(b)) => t
                .records
                .iter()
                .filter(|r| r.cond.is_some())
                .filter_map(|r| match r.insn {
                    Instruction::Cstore { addr, pre, post } => {
                        let word = sw.physical_location(addr, &fwd.meta);
                        let pre_v = b.read_word(b.header.hop_slot(pre)).unwrap_or(0);
                        let post_v = b.read_word(b.header.hop_slot(post)).unwrap_or(0);
                        Some((word, pre_v, post_v, r.cond.unwrap()))
                    }
                    _ => None,
                })
                .collect(),
            _ => Vec::new(),
        };
        if fwd.meta.output_port != expected_port {
            self.violation(format!("switch {switch_id} forwarded to {:?}, topology says {:?}", fwd.meta.output_port, expected_port));
        }
        let Some((out, q, fits)) = decision else {
            self.log.counters.dropped_noroute += 1;
            return;
        };
        if fits != fwd.enqueued {
            self.violation(format!("switch {switch_id} port {out}: admission model {} simulator {fits}", fwd.enqueued));
        }
        if !fwd.enqueued {
            self.log.counters.dropped_queue += 1;
            return;
        }
        if fwd.trace.is_some() {
            self.log.counters.tpp_executions += 1;
        }
        let session = pkt.tpp.as_ref().map_or(0, |t| t.header.session_id);
        if let (Some(old), Some(new)) = (&snapshot, &after) {
            for ((w, a), (_, b)) in old.iter().zip(new) {
                if a != b {
                    let ev = ShadowEvent::Write { time_ns: now, switch_id, word: (*w).into(), old: *a, new: *b, packet: pkt.id, session };
                    self.log.shadow.push(ev);
                }
            }
            for (word, pre, post, cond) in cstores {
                let x_before = word.and_then(|w| old.iter().find(|(k, _)| *k == w).map(|(_, v)| *v));
                let success = x_before == Some(pre);
                if success != cond {
                    self.violation(format!("switch {switch_id}: CSTORE outcome {cond}, shadow says {success}"));
                }
                self.log.shadow.push(ShadowEvent::Cstore {
                    time_ns: now,
                    switch_id,
                    word: word.map(Into::into),
                    pre,
                    post,
                    x_before,
                    success,
                    packet: pkt.id,
                    session,
                });
            }
        }
        let queue_bytes = self.ports[node][usize::from(out)].bytes[q] + len;
        pkt.path.push(PathHop {
            node,
            switch_id,
            in_port,
            out_port: out,
            queue: q as u8,
            entry_id,
            time_ns: now,
            queue_bytes,
        });
        let enqueued = self.enqueue(node, out, q, pkt);
        debug_assert!(enqueued);
        let occ = self.switches[node].as_ref().unwrap().links[usize::from(out)].queues[q].occupancy_bytes;
        if occ != queue_bytes {
            self.violation(format!("switch {switch_id} port {out} queue {q}: model {occ} B, simulator {queue_bytes} B"));
        }
    }

    fn host_arrive(&mut self, node: NodeId, pkt: Packet) {
        let now = self.now;
        let host = self.hosts[node].as_mut().expect("host node");
        if pkt.dst_ip != host.ip {
            self.log.counters.dropped_misdelivered += 1;
            return;
        }
        self.log.counters.arrived += 1;
        let r = host.shim.on_receive(pkt, now);
        if let Some(d) = r.deliver {
            if self.cfg.log_deliveries {
                self.log.deliveries.push(Delivery {
                    time_ns: now,
                    host: node,
                    flow: d.flow,
                    seq: d.seq,
                    src_ip: d.src_ip,
                    dst_ip: d.dst_ip,
                    payload_bytes: d.payload_bytes,
                    latency_ns: now - d.born_ns,
                });
            }
            self.pending.push_back(Dispatch::Packet { node, pkt: d });
        }
        if let Some(rec) = r.record {
            if self.cfg.log_records {
                self.log.records.push(RecordRow::from(&rec));
            }
            self.pending.push_back(Dispatch::Record { node, rec });
        }
        if let Some(e) = r.echo {
            self.inject(node, e);
        }
    }

    fn util_tick(&mut self) {
        let window = self.cfg.util_window_ns;
        let now = self.now;
        for sw in self.switches.iter_mut().flatten() {
            sw.clock_ns = now;
            sw.update_link_utilization(window);
            if self.cfg.record_utilization {
                for (port, l) in sw.links.iter().enumerate() {
                    self.log.util_samples.push(UtilSample {
                        time_ns: now,
                        switch_id: sw.switch_id,
                        port: port as u8,
                        tx_utilization: l.tx_utilization,
                        rx_utilization: l.rx_utilization,
                    });
                }
            }
        }
        self.schedule(window, EventKind::UtilTick);
    }

    fn queue_sample_tick(&mut self) {
        let Some(qs) = self.cfg.queue_sampling else { return };
        for (n, node) in self.topo.nodes.iter().enumerate() {
            let NodeKind::Switch { id, .. } = node.kind else { continue };
            for (port, p) in node.ports.iter().enumerate() {
                if qs.ports == PortSet::HostFacing && !self.topo.nodes[p.peer].is_host() {
                    continue;
                }
                for (queue, bytes) in self.ports[n][port].bytes.iter().enumerate() {
                    self.log.queue_samples.push(QueueSample {
                        time_ns: self.now,
                        switch_id: id,
                        port: port as u8,
                        queue: queue as u8,
                        bytes: *bytes,
                    });
                }
            }
        }
        self.schedule(qs.every_ns, EventKind::QueueSampleTick);
    }

    fn process(&mut self, ev: Event) {
        self.now = ev.time;
        match ev.kind {
            EventKind::Arrive { node, port, pkt } => self.arrive(node, port, pkt),
            EventKind::TransmitDone { node, port } => self.transmit_done(node, port),
            EventKind::EnqueueDone { node, port } => self.start_tx(node, port),
            EventKind::Timer { node, agent, token } => self.pending.push_back(Dispatch::Timer { node, agent, token }),
            EventKind::UtilTick => self.util_tick(),
            EventKind::QueueSampleTick => self.queue_sample_tick(),
        }
    }

    fn in_flight(&self) -> u64 {
        let queued: u64 = self.ports.iter().flatten().map(PortRt::packets).sum();
        let flying = self.events.iter().filter(|Reverse(e)| matches!(e.kind, EventKind::Arrive { .. })).count() as u64;
        queued + flying
    }

    fn send(&mut self, node: NodeId, mut pkt: Packet) -> bool {
        let now = self.now;
        let host = self.hosts[node].as_mut().expect("agents live on hosts");
        pkt.src_ip = host.ip;
        if pkt.born_ns == 0 {
            pkt.born_ns = now;
        }
        host.shim.on_transmit(&mut pkt);
        self.inject(node, pkt)
    }

    fn send_tpp(&mut self, node: NodeId, dst_ip: u32, tpp: TppProgram, vlan: u16, flow: u32) -> Result<u64, CpError> {
        let host = self.hosts[node].as_ref().expect("agents live on hosts");
        let app = host.shim.cp.app_for_session(tpp.header.session_id).ok_or(CpError::UnknownSession(tpp.header.session_id))?;
        host.shim.cp.check(app.appid, &tpp)?;
        let id = self.next_packet;
        self.next_packet += 1;
        let mut pkt = Packet::standalone(host.ip, dst_ip, tpp);
        pkt.id = id;
        pkt.seq = id;
        pkt.flow = flow;
        pkt.vlan = vlan;
        pkt.born_ns = self.now;
        self.inject(node, pkt);
        Ok(id)
    }
}

/// An agent's handle on the simulation during a callback.
pub struct Ctx<'a> {
    core: &'a mut SimCore,
    node: NodeId,
    agent: usize,
}

impl Ctx<'_> {
    pub fn now(&self) -> u64 {
        self.core.now
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn ip(&self) -> u32 {
        self.core.hosts[self.node].as_ref().unwrap().ip
    }

    pub fn topology(&self) -> &Topology {
        &self.core.topo
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.core.hosts[self.node].as_mut().unwrap().rng
    }

    pub fn shim(&mut self) -> &mut Shim {
        &mut self.core.hosts[self.node].as_mut().unwrap().shim
    }

    pub fn set_timer(&mut self, delay_ns: u64, token: u64) {
        let (node, agent) = (self.node, self.agent);
        self.core.schedule(delay_ns, EventKind::Timer { node, agent, token });
    }

    /// Sends through the shim. False if the NIC queue was full.
    pub fn send(&mut self, pkt: Packet) -> bool {
        self.core.send(self.node, pkt)
    }

    /// Sends a standalone TPP after the control plane admits it; returns its sequence number.
    pub fn send_tpp(&mut self, dst_ip: u32, tpp: TppProgram, vlan: u16, flow: u32) -> Result<u64, CpError> {
        self.core.send_tpp(self.node, dst_ip, tpp, vlan, flow)
    }

    /// Bytes waiting in this host's NIC queue.
    pub fn nic_backlog(&self) -> u64 {
        self.core.ports[self.node][0].bytes[0]
    }
}

pub struct Simulator {
    core: SimCore,
    agents: Vec<Vec<Option<Box<dyn Agent>>>>,
    started: bool,
}

impl Simulator {
    pub fn new(topo: &Topology, cfg: SimConfig) -> Simulator {
        let n = topo.nodes.len();
        Simulator { core: SimCore::new(topo, cfg), agents: (0..n).map(|_| Vec::new()).collect(), started: false }
    }

    pub fn now(&self) -> u64 {
        self.core.now
    }

    pub fn topology(&self) -> &Topology {
        &self.core.topo
    }

    pub fn config(&self) -> &SimConfig {
        &self.core.cfg
    }

    pub fn log(&self) -> &TraceLog {
        &self.core.log
    }

    pub fn switch(&self, node: NodeId) -> Option<&SwitchState> {
        self.core.switches.get(node).and_then(Option::as_ref)
    }

    pub fn shim(&self, host: NodeId) -> Option<&Shim> {
        self.core.hosts.get(host).and_then(Option::as_ref).map(|h| &h.shim)
    }

    pub fn shim_mut(&mut self, host: NodeId) -> Option<&mut Shim> {
        self.core.hosts.get_mut(host).and_then(Option::as_mut).map(|h| &mut h.shim)
    }

    /// Attaches an agent to a host; returns its index there.
    pub fn add_agent(&mut self, host: NodeId, agent: Box<dyn Agent>) -> usize {
        assert!(self.core.hosts[host].is_some(), "agents live on hosts");
        self.agents[host].push(Some(agent));
        let i = self.agents[host].len() - 1;
        if self.started {
            self.with_agent(host, i, |a, ctx| a.start(ctx));
        }
        i
    }

    pub fn agent<T: Agent>(&self, host: NodeId, index: usize) -> Option<&T> {
        let a: &dyn Any = self.agents.get(host)?.get(index)?.as_deref()?;
        a.downcast_ref()
    }

    pub fn agent_mut<T: Agent>(&mut self, host: NodeId, index: usize) -> Option<&mut T> {
        let a: &mut dyn Any = self.agents.get_mut(host)?.get_mut(index)?.as_deref_mut()?;
        a.downcast_mut()
    }

    /// First agent of type `T` on `host`.
    pub fn find_agent<T: Agent>(&self, host: NodeId) -> Option<(usize, &T)> {
        self.agents.get(host)?.iter().enumerate().find_map(|(i, a)| {
            let a: &dyn Any = a.as_deref()?;
            a.downcast_ref().map(|t| (i, t))
        })
    }

    /// Sends a packet from a host as if an application had.
    pub fn send(&mut self, host: NodeId, pkt: Packet) -> bool {
        self.core.send(host, pkt)
    }

    pub fn send_tpp(&mut self, host: NodeId, dst_ip: u32, tpp: TppProgram, vlan: u16, flow: u32) -> Result<u64, CpError> {
        self.core.send_tpp(host, dst_ip, tpp, vlan, flow)
    }

    /// Puts a packet straight on a host's NIC queue, skipping the shim and
    /// control plane, as a misbehaving host would.
    pub fn inject_raw(&mut self, host: NodeId, pkt: Packet) -> bool {
        self.core.inject(host, pkt)
    }

    fn with_agent(&mut self, node: NodeId, i: usize, f: impl FnOnce(&mut dyn Agent, &mut Ctx<'_>)) {
        let Some(mut a) = self.agents[node][i].take() else { return };
        let mut ctx = Ctx { core: &mut self.core, node, agent: i };
        f(a.as_mut(), &mut ctx);
        self.agents[node][i] = Some(a);
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for node in 0..self.agents.len() {
            for i in 0..self.agents[node].len() {
                self.with_agent(node, i, |a, ctx| a.start(ctx));
            }
        }
        self.dispatch();
    }

    fn dispatch(&mut self) {
        while let Some(d) = self.core.pending.pop_front() {
            match d {
                Dispatch::Timer { node, agent, token } => self.with_agent(node, agent, |a, ctx| a.on_timer(ctx, token)),
                Dispatch::Packet { node, pkt } => {
                    for i in 0..self.agents[node].len() {
                        self.with_agent(node, i, |a, ctx| a.on_packet(ctx, &pkt));
                    }
                }
                Dispatch::Record { node, rec } => {
                    for i in 0..self.agents[node].len() {
                        self.with_agent(node, i, |a, ctx| a.on_record(ctx, &rec));
                    }
                }
            }
        }
    }

    /// Processes every event up to `t` (and never past the configured duration).
    pub fn run_until(&mut self, t: u64) {
        self.start();
        let horizon = t.min(self.core.cfg.duration_ns);
        while let Some(Reverse(ev)) = self.core.events.peek() {
            if ev.time > horizon {
                break;
            }
            let Reverse(ev) = self.core.events.pop().unwrap();
            self.core.process(ev);
            self.dispatch();
        }
        self.core.now = self.core.now.max(horizon);
    }

    /// Runs to the end and returns the log, with end-of-run checks applied.
    pub fn finish(mut self) -> TraceLog {
        self.run_until(self.core.cfg.duration_ns);
        let in_flight = self.core.in_flight();
        self.core.log.counters.in_flight_end = in_flight;
        let c = self.core.log.counters;
        if c.injected != c.arrived + c.dropped() + in_flight {
            self.core.violation(format!(
                "conservation: injected {} != arrived {} + dropped {} + in flight {}",
                c.injected,
                c.arrived,
                c.dropped(),
                in_flight
            ));
        }
        self.core.log
    }
}
