// SPDX-License-Identifier: Apache-2.0

//! Switch state, forwarding tables and the memory-mapped view of both.

use alloc::vec::Vec;

use crate::memmap::{
    flow_entry_field as fe, link_field as lf, metadata_field as md, queue_field as qf, stage_field as sf,
    switch_field as swf, Address, AddressInfo, Namespace, INGRESS_STAGES,
};

/// Queue occupancy words count buffer cells of this many bytes.
pub const CELL_BYTES: u64 = 64;
/// Utilization words are scaled so this value is full capacity.
pub const UTILIZATION_SCALE: u64 = 65535;
/// Default per-queue buffer.
pub const DEFAULT_QUEUE_BYTES: u64 = 150_000;
/// The switch clock word ticks once per microsecond.
pub const CLOCK_TICK_NS: u64 = 1_000;

fn lo(v: u64) -> u16 {
    v as u16
}

fn hi(v: u64) -> u16 {
    (v >> 16) as u16
}

/// Occupancy in cells, saturating at the word size.
pub fn bytes_to_cells(bytes: u64) -> u16 {
    bytes.div_ceil(CELL_BYTES).min(u64::from(u16::MAX)) as u16
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueState {
    pub capacity_bytes: u64,
    pub occupancy_bytes: u64,
    pub queued_packets: u64,
    pub tx_packets: u64,
    pub tx_bytes: u64,
    pub enqueued_packets: u64,
    pub enqueued_bytes: u64,
    pub drop_packets: u64,
    pub drop_bytes: u64,
    pub sched_weight: u16,
}

impl QueueState {
    pub fn new(capacity_bytes: u64) -> QueueState {
        QueueState {
            capacity_bytes,
            occupancy_bytes: 0,
            queued_packets: 0,
            tx_packets: 0,
            tx_bytes: 0,
            enqueued_packets: 0,
            enqueued_bytes: 0,
            drop_packets: 0,
            drop_bytes: 0,
            sched_weight: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkState {
    pub id: u16,
    pub up: bool,
    pub capacity_bps: u64,
    pub app_specific: [u16; 2],
    pub tx_packets: u64,
    pub tx_bytes: u64,
    pub rx_packets: u64,
    pub rx_bytes: u64,
    pub drop_packets: u64,
    pub drop_bytes: u64,
    pub error_packets: u64,
    pub tx_utilization: u16,
    pub rx_utilization: u16,
    /// Bytes serialized in the current utilization window.
    pub window_tx_bytes: u64,
    /// Bytes offered to the egress queues in the current window, drops included.
    pub window_offered_bytes: u64,
    pub queues: Vec<QueueState>,
}

impl LinkState {
    pub fn new(id: u16, capacity_bps: u64, queues: usize, queue_bytes: u64) -> LinkState {
        LinkState {
            id,
            up: true,
            capacity_bps,
            app_specific: [0; 2],
            tx_packets: 0,
            tx_bytes: 0,
            rx_packets: 0,
            rx_bytes: 0,
            drop_packets: 0,
            drop_bytes: 0,
            error_packets: 0,
            tx_utilization: 0,
            rx_utilization: 0,
            window_tx_bytes: 0,
            window_offered_bytes: 0,
            queues: (0..queues.max(1)).map(|_| QueueState::new(queue_bytes)).collect(),
        }
    }

    pub fn occupancy_bytes(&self) -> u64 {
        self.queues.iter().map(|q| q.occupancy_bytes).sum()
    }

    pub fn queued_packets(&self) -> u64 {
        self.queues.iter().map(|q| q.queued_packets).sum()
    }

    /// Closes a utilization window of `window_ns` and starts the next one.
    pub fn update_utilization(&mut self, window_ns: u64) {
        self.tx_utilization = utilization_word(self.window_tx_bytes, self.capacity_bps, window_ns);
        self.rx_utilization = utilization_word(self.window_offered_bytes, self.capacity_bps, window_ns);
        self.window_tx_bytes = 0;
        self.window_offered_bytes = 0;
    }
}

/// `round(65535 * bits / (capacity * window))`, saturating at 65535.
pub fn utilization_word(bytes: u64, capacity_bps: u64, window_ns: u64) -> u16 {
    if capacity_bps == 0 || window_ns == 0 {
        return 0;
    }
    let num = u128::from(UTILIZATION_SCALE) * u128::from(bytes) * 8 * 1_000_000_000;
    let den = u128::from(capacity_bps) * u128::from(window_ns);
    ((num + den / 2) / den).min(u128::from(UTILIZATION_SCALE)) as u16
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageState {
    pub version: u16,
    pub lookup_packets: u64,
    pub lookup_bytes: u64,
    pub match_packets: u64,
    pub match_bytes: u64,
    pub regs: [u16; 16],
}

/// Statistics of one match-action table entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntryStats {
    pub id: u16,
    pub insert_clock: u16,
    pub match_packets: u64,
    pub match_bytes: u64,
    pub version: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Output(u8),
    Group(u16),
    Drop,
}

/// Header field a group hashes on to choose a member port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupSelector {
    #[default]
    Vlan,
    DstIp,
    FlowHash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactEntry {
    pub dst_ip: u32,
    pub action: Action,
    pub stats: EntryStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpmEntry {
    pub prefix: u32,
    pub len: u8,
    pub action: Action,
    pub stats: EntryStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupEntry {
    pub group: u16,
    pub ports: Vec<u8>,
    pub selector: GroupSelector,
    pub stats: EntryStats,
}

impl GroupEntry {
    /// Member port for a packet: the selected field modulo the fan-out.
    pub fn select(&self, view: &PacketView) -> Option<u8> {
        if self.ports.is_empty() {
            return None;
        }
        let key = match self.selector {
            GroupSelector::Vlan => u64::from(view.vlan),
            GroupSelector::DstIp => u64::from(view.dst_ip),
            GroupSelector::FlowHash => u64::from(view.flow_hash),
        };
        Some(self.ports[(key % self.ports.len() as u64) as usize])
    }
}

/// Where the entry a packet matched at some stage lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryRef {
    Port(u8),
    Exact(usize),
    Lpm(usize),
    Group(usize),
}

/// Header fields the parser extracts for forwarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketView {
    pub input_port: u8,
    pub dst_ip: u32,
    pub vlan: u16,
    /// Frame length in bytes, TPP included.
    pub length: u16,
    pub flow_hash: u32,
    /// Egress queue (traffic class) requested by the packet.
    pub queue: u8,
}

/// Per-packet metadata produced by forwarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketMetadata {
    pub input_port: u8,
    pub output_port: Option<u8>,
    pub output_queue: u8,
    /// Entry matched at ingress stage `i + 1`.
    pub matched: [Option<EntryRef>; INGRESS_STAGES as usize],
    pub packet_length: u16,
    pub vlan: u16,
    pub hop_index: u8,
}

impl PacketMetadata {
    pub fn output_port_bitmap(&self) -> u16 {
        self.output_port.map_or(0, |p| 1u16.checked_shl(u32::from(p)).unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchState {
    pub switch_id: u16,
    pub version_number: u16,
    pub clock_ns: u64,
    pub stages: [StageState; INGRESS_STAGES as usize],
    pub links: Vec<LinkState>,
    pub port_entries: Vec<EntryStats>,
    pub exact: Vec<ExactEntry>,
    pub lpm: Vec<LpmEntry>,
    pub groups: Vec<GroupEntry>,
    next_entry_id: u16,
}

impl SwitchState {
    pub fn new(switch_id: u16) -> SwitchState {
        SwitchState {
            switch_id,
            version_number: 1,
            clock_ns: 0,
            stages: Default::default(),
            links: Vec::new(),
            port_entries: Vec::new(),
            exact: Vec::new(),
            lpm: Vec::new(),
            groups: Vec::new(),
            next_entry_id: 1,
        }
    }

    fn alloc_entry(&mut self) -> EntryStats {
        let id = self.next_entry_id;
        self.next_entry_id = self.next_entry_id.wrapping_add(1);
        EntryStats { id, insert_clock: lo(self.clock_ns / CLOCK_TICK_NS), version: 1, ..EntryStats::default() }
    }

    /// Adds a port; returns its number.
    pub fn add_port(&mut self, capacity_bps: u64, queues: usize, queue_bytes: u64) -> u8 {
        let port = self.links.len() as u8;
        self.links.push(LinkState::new(u16::from(port), capacity_bps, queues, queue_bytes));
        let e = self.alloc_entry();
        self.port_entries.push(e);
        port
    }

    pub fn add_exact(&mut self, dst_ip: u32, action: Action) -> u16 {
        let stats = self.alloc_entry();
        let id = stats.id;
        self.exact.push(ExactEntry { dst_ip, action, stats });
        self.stages[1].version = self.stages[1].version.wrapping_add(1);
        id
    }

    pub fn add_lpm(&mut self, prefix: u32, len: u8, action: Action) -> u16 {
        let stats = self.alloc_entry();
        let id = stats.id;
        self.lpm.push(LpmEntry { prefix, len: len.min(32), action, stats });
        self.stages[2].version = self.stages[2].version.wrapping_add(1);
        id
    }

    pub fn add_group(&mut self, group: u16, ports: Vec<u8>, selector: GroupSelector) -> u16 {
        let stats = self.alloc_entry();
        let id = stats.id;
        self.groups.push(GroupEntry { group, ports, selector, stats });
        self.stages[3].version = self.stages[3].version.wrapping_add(1);
        id
    }

    pub fn entry(&self, r: EntryRef) -> Option<&EntryStats> {
        match r {
            EntryRef::Port(p) => self.port_entries.get(usize::from(p)),
            EntryRef::Exact(i) => self.exact.get(i).map(|e| &e.stats),
            EntryRef::Lpm(i) => self.lpm.get(i).map(|e| &e.stats),
            EntryRef::Group(i) => self.groups.get(i).map(|e| &e.stats),
        }
    }

    fn entry_mut(&mut self, r: EntryRef) -> Option<&mut EntryStats> {
        match r {
            EntryRef::Port(p) => self.port_entries.get_mut(usize::from(p)),
            EntryRef::Exact(i) => self.exact.get_mut(i).map(|e| &mut e.stats),
            EntryRef::Lpm(i) => self.lpm.get_mut(i).map(|e| &mut e.stats),
            EntryRef::Group(i) => self.groups.get_mut(i).map(|e| &mut e.stats),
        }
    }

    fn reference_count(&self, stage: usize) -> usize {
        match stage {
            0 => self.port_entries.len(),
            1 => self.exact.len(),
            2 => self.lpm.len(),
            _ => self.groups.len(),
        }
    }

    fn count_stage(&mut self, stage: usize, bytes: u64, hit: Option<EntryRef>) {
        let st = &mut self.stages[stage];
        st.lookup_packets += 1;
        st.lookup_bytes += bytes;
        if let Some(r) = hit {
            st.match_packets += 1;
            st.match_bytes += bytes;
            if let Some(e) = self.entry_mut(r) {
                e.match_packets += 1;
                e.match_bytes += bytes;
            }
        }
    }

    /// Runs the ingress pipeline: port table, exact match, longest prefix, group table.
    ///
    /// Updates lookup/match counters and the input port's receive counters.
    /// `output_port` is `None` when the packet is dropped.
    pub fn forward(&mut self, view: &PacketView) -> PacketMetadata {
        let bytes = u64::from(view.length);
        let mut meta = PacketMetadata {
            input_port: view.input_port,
            packet_length: view.length,
            vlan: view.vlan,
            output_queue: view.queue,
            ..PacketMetadata::default()
        };
        if let Some(link) = self.links.get_mut(usize::from(view.input_port)) {
            link.rx_packets += 1;
            link.rx_bytes += bytes;
        }

        let port_hit = (usize::from(view.input_port) < self.port_entries.len()).then_some(EntryRef::Port(view.input_port));
        self.count_stage(0, bytes, port_hit);
        meta.matched[0] = port_hit;

        let exact_hit = self.exact.iter().position(|e| e.dst_ip == view.dst_ip).map(EntryRef::Exact);
        self.count_stage(1, bytes, exact_hit);
        meta.matched[1] = exact_hit;

        let mut action = exact_hit.map(|r| match r {
            EntryRef::Exact(i) => self.exact[i].action,
            _ => Action::Drop,
        });
        let lpm_hit = if action.is_none() {
            self.lpm
                .iter()
                .enumerate()
                .filter(|(_, e)| prefix_match(e.prefix, e.len, view.dst_ip))
                .max_by_key(|(_, e)| e.len)
                .map(|(i, _)| EntryRef::Lpm(i))
        } else {
            None
        };
        self.count_stage(2, bytes, lpm_hit);
        meta.matched[2] = lpm_hit;
        if let Some(EntryRef::Lpm(i)) = lpm_hit {
            action = Some(self.lpm[i].action);
        }

        let mut group_hit = None;
        let out = match action {
            Some(Action::Output(p)) => Some(p),
            Some(Action::Group(g)) => match self.groups.iter().position(|e| e.group == g) {
                Some(i) => {
                    group_hit = Some(EntryRef::Group(i));
                    self.groups[i].select(view)
                }
                None => None,
            },
            Some(Action::Drop) | None => None,
        };
        self.count_stage(3, bytes, group_hit);
        meta.matched[3] = group_hit;
        meta.output_port = out.filter(|p| usize::from(*p) < self.links.len() && self.links[usize::from(*p)].up);
        meta
    }

    /// Queue accounting at enqueue; returns false on a drop-tail drop.
    pub fn enqueue(&mut self, port: u8, queue: u8, bytes: u64) -> bool {
        let Some(link) = self.links.get_mut(usize::from(port)) else {
            return false;
        };
        link.window_offered_bytes += bytes;
        let q = usize::from(queue).min(link.queues.len() - 1);
        let qs = &mut link.queues[q];
        if qs.occupancy_bytes + bytes > qs.capacity_bytes {
            qs.drop_packets += 1;
            qs.drop_bytes += bytes;
            link.drop_packets += 1;
            link.drop_bytes += bytes;
            return false;
        }
        qs.occupancy_bytes += bytes;
        qs.queued_packets += 1;
        qs.enqueued_packets += 1;
        qs.enqueued_bytes += bytes;
        true
    }

    /// Queue accounting when a frame leaves the queue for the wire.
    pub fn dequeue(&mut self, port: u8, queue: u8, bytes: u64) {
        let link = &mut self.links[usize::from(port)];
        let q = usize::from(queue).min(link.queues.len() - 1);
        let qs = &mut link.queues[q];
        debug_assert!(qs.occupancy_bytes >= bytes);
        qs.occupancy_bytes -= bytes;
        qs.queued_packets -= 1;
        qs.tx_packets += 1;
        qs.tx_bytes += bytes;
        link.tx_packets += 1;
        link.tx_bytes += bytes;
        link.window_tx_bytes += bytes;
    }

    /// Closes the utilization window on every link.
    pub fn update_link_utilization(&mut self, window_ns: u64) {
        for link in &mut self.links {
            link.update_utilization(window_ns);
        }
    }

    pub fn queue_index(&self, port: u8, queue: u8) -> Option<usize> {
        let link = self.links.get(usize::from(port))?;
        Some(usize::from(queue).min(link.queues.len() - 1))
    }

    fn link_for(&self, ns: Namespace, meta: &PacketMetadata) -> Option<usize> {
        let port = match ns {
            Namespace::Link(Some(i)) => i,
            Namespace::Link(None) | Namespace::Queue(None) => meta.output_port?,
            Namespace::Queue(Some((i, _))) => i,
            _ => return None,
        };
        (usize::from(port) < self.links.len()).then_some(usize::from(port))
    }

    fn queue_for(&self, ns: Namespace, meta: &PacketMetadata) -> Option<(usize, usize)> {
        let l = self.link_for(ns, meta)?;
        let q = match ns {
            Namespace::Queue(Some((_, j))) => usize::from(j),
            _ => usize::from(meta.output_queue).min(self.links[l].queues.len() - 1),
        };
        (q < self.links[l].queues.len()).then_some((l, q))
    }

    /// Reads a word as seen by a packet with metadata `meta`. `None` is nonexistent.
    pub fn read_word(&self, addr: Address, meta: &PacketMetadata) -> Option<u16> {
        let info = addr.info()?;
        self.read_info(&info, meta)
    }

    fn read_info(&self, info: &AddressInfo, meta: &PacketMetadata) -> Option<u16> {
        let off = info.field.offset;
        Some(match info.namespace {
            Namespace::Switch => match off {
                swf::SWITCH_ID => self.switch_id,
                swf::VERSION_NUMBER => self.version_number,
                swf::CLOCK => lo(self.clock_ns / CLOCK_TICK_NS),
                swf::CLOCK_HI => hi(self.clock_ns / CLOCK_TICK_NS),
                swf::CLOCK_FREQUENCY => (1_000_000_000 / CLOCK_TICK_NS / 1_000) as u16,
                swf::PORT_COUNT => self.links.len() as u16,
                _ => return None,
            },
            Namespace::Stage(i) => {
                let idx = usize::from(i) - 1;
                let st = &self.stages[idx];
                match off {
                    sf::VERSION_NUMBER => st.version,
                    sf::REFERENCE_COUNT => self.reference_count(idx) as u16,
                    sf::LOOKUP_PACKETS => lo(st.lookup_packets),
                    sf::LOOKUP_BYTES => lo(st.lookup_bytes),
                    sf::LOOKUP_BYTES_HI => hi(st.lookup_bytes),
                    sf::MATCH_PACKETS => lo(st.match_packets),
                    sf::MATCH_BYTES => lo(st.match_bytes),
                    sf::MATCH_BYTES_HI => hi(st.match_bytes),
                    r if (sf::REG0..sf::REG0 + sf::REG_COUNT).contains(&r) => st.regs[usize::from(r - sf::REG0)],
                    _ => return None,
                }
            }
            Namespace::FlowEntry(i) => {
                let e = self.entry(meta.matched[usize::from(i) - 1]?)?;
                match off {
                    fe::ENTRY_ID => e.id,
                    fe::INSERT_CLOCK => e.insert_clock,
                    fe::MATCH_PACKETS => lo(e.match_packets),
                    fe::MATCH_BYTES => lo(e.match_bytes),
                    fe::MATCH_BYTES_HI => hi(e.match_bytes),
                    fe::ENTRY_VERSION => e.version,
                    _ => return None,
                }
            }
            Namespace::Link(_) => {
                let l = &self.links[self.link_for(info.namespace, meta)?];
                match off {
                    lf::ID => l.id,
                    lf::STATUS => u16::from(l.up),
                    lf::QUEUE_SIZE => bytes_to_cells(l.occupancy_bytes()),
                    lf::TX_UTILIZATION => l.tx_utilization,
                    lf::RX_UTILIZATION => l.rx_utilization,
                    lf::APP_SPECIFIC_0 => l.app_specific[0],
                    lf::APP_SPECIFIC_1 => l.app_specific[1],
                    lf::CAPACITY => (l.capacity_bps / 1_000_000).min(0xFFFF) as u16,
                    x if x == lf::TX_PACKETS => lo(l.tx_packets),
                    x if x == lf::TX_PACKETS + 1 => hi(l.tx_packets),
                    x if x == lf::TX_BYTES => lo(l.tx_bytes),
                    x if x == lf::TX_BYTES + 1 => hi(l.tx_bytes),
                    x if x == lf::RX_PACKETS => lo(l.rx_packets),
                    x if x == lf::RX_PACKETS + 1 => hi(l.rx_packets),
                    x if x == lf::RX_BYTES => lo(l.rx_bytes),
                    x if x == lf::RX_BYTES + 1 => hi(l.rx_bytes),
                    x if x == lf::DROP_PACKETS => lo(l.drop_packets),
                    x if x == lf::DROP_PACKETS + 1 => hi(l.drop_packets),
                    x if x == lf::DROP_BYTES => lo(l.drop_bytes),
                    x if x == lf::DROP_BYTES + 1 => hi(l.drop_bytes),
                    lf::QUEUED_PACKETS => lo(l.queued_packets()),
                    lf::ERROR_PACKETS => lo(l.error_packets),
                    _ => return None,
                }
            }
            Namespace::Queue(_) => {
                let (li, qi) = self.queue_for(info.namespace, meta)?;
                let q = &self.links[li].queues[qi];
                match off {
                    qf::OCCUPANCY => bytes_to_cells(q.occupancy_bytes),
                    qf::QUEUED_PACKETS => lo(q.queued_packets),
                    x if x == qf::TX_PACKETS => lo(q.tx_packets),
                    x if x == qf::TX_PACKETS + 1 => hi(q.tx_packets),
                    x if x == qf::TX_BYTES => lo(q.tx_bytes),
                    x if x == qf::TX_BYTES + 1 => hi(q.tx_bytes),
                    x if x == qf::ENQUEUED_PACKETS => lo(q.enqueued_packets),
                    x if x == qf::ENQUEUED_PACKETS + 1 => hi(q.enqueued_packets),
                    x if x == qf::ENQUEUED_BYTES => lo(q.enqueued_bytes),
                    x if x == qf::ENQUEUED_BYTES + 1 => hi(q.enqueued_bytes),
                    x if x == qf::DROP_PACKETS => lo(q.drop_packets),
                    x if x == qf::DROP_PACKETS + 1 => hi(q.drop_packets),
                    x if x == qf::DROP_BYTES => lo(q.drop_bytes),
                    x if x == qf::DROP_BYTES + 1 => hi(q.drop_bytes),
                    qf::SCHED_WEIGHT => q.sched_weight,
                    qf::ID => qi as u16,
                    _ => return None,
                }
            }
            Namespace::PacketMetadata => match off {
                md::INPUT_PORT => u16::from(meta.input_port),
                md::OUTPUT_PORT => u16::from(meta.output_port?),
                md::OUTPUT_PORT_BITMAP => meta.output_port_bitmap(),
                md::MATCHED_ENTRY_ID => self.entry(meta.matched.iter().rev().find_map(|m| *m)?)?.id,
                md::OUTPUT_QUEUE => {
                    let l = usize::from(meta.output_port?);
                    self.queue_index(l as u8, meta.output_queue)? as u16
                }
                md::PACKET_LENGTH => meta.packet_length,
                md::VLAN_ID => meta.vlan,
                md::HOP_INDEX => u16::from(meta.hop_index),
                x if (md::MATCHED_ENTRY_1..md::MATCHED_ENTRY_1 + INGRESS_STAGES).contains(&x) => {
                    self.entry(meta.matched[usize::from(x - md::MATCHED_ENTRY_1)]?)?.id
                }
                _ => return None,
            },
        })
    }

    /// Writes a TPP-writable word. Fails for nonexistent and read-only words.
    pub fn write_word(&mut self, addr: Address, meta: &PacketMetadata, value: u16) -> bool {
        let Some(info) = addr.info() else {
            return false;
        };
        if !info.writable() {
            return false;
        }
        let off = info.field.offset;
        match info.namespace {
            Namespace::Stage(i) => {
                self.stages[usize::from(i) - 1].regs[usize::from(off - sf::REG0)] = value;
                true
            }
            Namespace::Link(_) => match self.link_for(info.namespace, meta) {
                Some(l) => {
                    self.links[l].app_specific[usize::from(off - lf::APP_SPECIFIC_0)] = value;
                    true
                }
                None => false,
            },
            _ => false,
        }
    }

    /// The physical word a writable address names for this packet, for shadow logging.
    pub fn physical_location(&self, addr: Address, meta: &PacketMetadata) -> Option<PhysicalWord> {
        let info = addr.info()?;
        match info.namespace {
            Namespace::Stage(i) => Some(PhysicalWord::StageReg { stage: i, reg: info.field.offset - sf::REG0 }),
            Namespace::Link(_) if info.writable() => Some(PhysicalWord::LinkAppSpecific {
                port: self.link_for(info.namespace, meta)? as u8,
                index: info.field.offset - lf::APP_SPECIFIC_0,
            }),
            _ => None,
        }
    }

    /// Every TPP-writable word and its value, in a fixed order.
    pub fn writable_words(&self) -> Vec<(PhysicalWord, u16)> {
        let mut out = Vec::new();
        for (s, st) in self.stages.iter().enumerate() {
            for (r, v) in st.regs.iter().enumerate() {
                out.push((PhysicalWord::StageReg { stage: s as u8 + 1, reg: r as u8 }, *v));
            }
        }
        for (p, l) in self.links.iter().enumerate() {
            for (i, v) in l.app_specific.iter().enumerate() {
                out.push((PhysicalWord::LinkAppSpecific { port: p as u8, index: i as u8 }, *v));
            }
        }
        out
    }
}

/// A TPP-writable word, independent of how it was addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhysicalWord {
    StageReg { stage: u8, reg: u8 },
    LinkAppSpecific { port: u8, index: u8 },
}

fn prefix_match(prefix: u32, len: u8, ip: u32) -> bool {
    if len == 0 {
        return true;
    }
    let mask = u32::MAX << (32 - u32::from(len.min(32)));
    (prefix & mask) == (ip & mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memmap::resolve;

    fn two_port() -> SwitchState {
        let mut sw = SwitchState::new(7);
        sw.add_port(100_000_000, 1, DEFAULT_QUEUE_BYTES);
        sw.add_port(100_000_000, 2, DEFAULT_QUEUE_BYTES);
        sw.add_exact(0x0A00_0002, Action::Output(1));
        sw.add_lpm(0x0A00_0000, 8, Action::Output(0));
        sw
    }

    #[test]
    fn utilization_examples() {
        let ms = 1_000_000;
        assert_eq!(utilization_word(0, 100_000_000, ms), 0);
        assert_eq!(utilization_word(12_500, 100_000_000, ms), 65535);
        assert_eq!(utilization_word(25_000, 100_000_000, ms), 65535);
        let half = utilization_word(6_250, 100_000_000, ms);
        assert!((32767..=32769).contains(&half), "{half}");
    }

    #[test]
    fn utilization_window_resets_but_counters_are_monotone() {
        let mut sw = two_port();
        assert!(sw.enqueue(1, 0, 6_250));
        sw.dequeue(1, 0, 6_250);
        sw.update_link_utilization(1_000_000);
        let l = &sw.links[1];
        assert_eq!(l.tx_utilization, 32768);
        assert_eq!(l.window_tx_bytes, 0);
        assert_eq!(l.tx_bytes, 6_250);
        sw.update_link_utilization(1_000_000);
        assert_eq!(sw.links[1].tx_utilization, 0);
        assert_eq!(sw.links[1].tx_bytes, 6_250);
    }

    #[test]
    fn forwarding_fills_metadata() {
        let mut sw = two_port();
        let meta = sw.forward(&PacketView { input_port: 0, dst_ip: 0x0A00_0002, length: 100, ..Default::default() });
        assert_eq!(meta.output_port, Some(1));
        assert_eq!(meta.output_port_bitmap(), 0b10);
        assert_eq!(sw.read_word(resolve("[PacketMetadata:OutputPort]").unwrap(), &meta), Some(1));
        assert_eq!(sw.read_word(resolve("[PacketMetadata:MatchedEntryID]").unwrap(), &meta), Some(3));
        assert_eq!(sw.read_word(resolve("[FlowEntry2:MatchPackets]").unwrap(), &meta), Some(1));
        assert_eq!(sw.read_word(resolve("[FlowEntry3:MatchPackets]").unwrap(), &meta), None);
        let meta = sw.forward(&PacketView { input_port: 1, dst_ip: 0x0A01_0101, length: 100, ..Default::default() });
        assert_eq!(meta.output_port, Some(0));
        let meta = sw.forward(&PacketView { input_port: 1, dst_ip: 0x0B00_0001, length: 100, ..Default::default() });
        assert_eq!(meta.output_port, None);
    }

    #[test]
    fn groups_select_by_vlan_modulo() {
        let mut sw = two_port();
        sw.add_lpm(0x1400_0000, 8, Action::Group(9));
        sw.add_group(9, alloc::vec![0, 1], GroupSelector::Vlan);
        let port = |sw: &mut SwitchState, vlan| {
            sw.forward(&PacketView { dst_ip: 0x1400_0001, vlan, length: 64, ..Default::default() }).output_port
        };
        assert_eq!(port(&mut sw, 0), Some(0));
        assert_eq!(port(&mut sw, 1), Some(1));
        assert_eq!(port(&mut sw, 2), Some(0));
    }

    #[test]
    fn drop_tail_and_occupancy_cells() {
        let mut sw = SwitchState::new(1);
        sw.add_port(1_000_000, 1, 1000);
        assert!(sw.enqueue(0, 0, 600));
        assert!(!sw.enqueue(0, 0, 500));
        assert!(sw.enqueue(0, 0, 400));
        let meta = PacketMetadata { output_port: Some(0), ..Default::default() };
        assert_eq!(sw.read_word(Address(0xB000), &meta), Some(16));
        assert_eq!(sw.links[0].drop_packets, 1);
    }

    #[test]
    fn read_only_words_reject_writes() {
        let mut sw = two_port();
        let meta = PacketMetadata { output_port: Some(1), ..Default::default() };
        assert!(!sw.write_word(resolve("[Switch:SwitchID]").unwrap(), &meta, 3));
        assert!(sw.write_word(resolve("[Link:AppSpecific_0]").unwrap(), &meta, 3));
        assert_eq!(sw.links[1].app_specific[0], 3);
        assert_eq!(sw.read_word(resolve("[Link$1:AppSpecific_0]").unwrap(), &meta), Some(3));
    }
}
