// SPDX-License-Identifier: Apache-2.0

//! The standardized switch memory map.
//!
//! Every statistic a TPP can touch lives at a fixed 16-bit virtual address.
//! The address space is split into namespaces:
//!
//! | range             | namespace                                   |
//! |-------------------|---------------------------------------------|
//! | `0x0000..0x0100`  | `[Switch:]` global registers                |
//! | `0x1100..0x1500`  | `[Stage$i:]`, i = 1..=4, one page per stage |
//! | `0x2100..0x2500`  | `[FlowEntry$i:]`, entry matched at stage i  |
//! | `0x4000..0x5000`  | `[Link$i:]`, i = 0..16                      |
//! | `0x6000..0x7000`  | `[Queue$i$j:]`, i = 0..16, j = 0..8         |
//! | `0xA000..0xA100`  | `[Link:]`, the packet's egress link         |
//! | `0xB000..0xB100`  | `[Queue:]`, the packet's egress queue       |
//! | `0xC000..0xC100`  | `[PacketMetadata:]`                         |
//!
//! Anything else is nonexistent. Words are 16 bits; 32-bit counters are
//! exposed as a low word followed by a `_Hi` word.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Number of ingress match-action stages. Stage 5 is the egress stage.
pub const INGRESS_STAGES: u8 = 4;
/// The egress stage, where link and queue state lives.
pub const EGRESS_STAGE: u8 = INGRESS_STAGES + 1;
/// Ports addressable through `[Link$i:]`.
pub const MAX_PORTS: u8 = 16;
/// Queues per port addressable through `[Queue$i$j:]`.
pub const MAX_QUEUES: u8 = 8;

const SWITCH_BASE: u16 = 0x0000;
const STAGE_BASE: u16 = 0x1000;
const FLOW_ENTRY_BASE: u16 = 0x2000;
const LINK_INDEXED_BASE: u16 = 0x4000;
const QUEUE_INDEXED_BASE: u16 = 0x6000;
const LINK_EGRESS_BASE: u16 = 0xA000;
const QUEUE_EGRESS_BASE: u16 = 0xB000;
const PACKET_METADATA_BASE: u16 = 0xC000;
const QUEUE_STRIDE: u16 = 0x20;

/// Whether a word may be written by a TPP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

/// One named word inside a namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldDef {
    pub name: &'static str,
    pub offset: u8,
    pub access: Access,
    /// Low word of a 32-bit counter; the high word follows at `offset + 1`.
    pub wide: bool,
    /// Pipeline stage the word lives at, when it differs from the namespace default.
    pub stage: Option<u8>,
    pub aliases: &'static [&'static str],
}

const fn ro(name: &'static str, offset: u8) -> FieldDef {
    FieldDef { name, offset, access: Access::ReadOnly, wide: false, stage: None, aliases: &[] }
}

const fn ro_wide(name: &'static str, offset: u8) -> FieldDef {
    FieldDef { name, offset, access: Access::ReadOnly, wide: true, stage: None, aliases: &[] }
}

const fn rw(name: &'static str, offset: u8) -> FieldDef {
    FieldDef { name, offset, access: Access::ReadWrite, wide: false, stage: None, aliases: &[] }
}

const fn aliased(mut f: FieldDef, aliases: &'static [&'static str]) -> FieldDef {
    f.aliases = aliases;
    f
}

const fn at_stage(mut f: FieldDef, stage: u8) -> FieldDef {
    f.stage = Some(stage);
    f
}

pub mod switch_field {
    pub const SWITCH_ID: u8 = 0x00;
    pub const VERSION_NUMBER: u8 = 0x01;
    pub const CLOCK: u8 = 0x02;
    pub const CLOCK_HI: u8 = 0x03;
    pub const CLOCK_FREQUENCY: u8 = 0x04;
    pub const PORT_COUNT: u8 = 0x05;
}

pub mod stage_field {
    pub const VERSION_NUMBER: u8 = 0x00;
    pub const REFERENCE_COUNT: u8 = 0x01;
    pub const LOOKUP_PACKETS: u8 = 0x02;
    pub const LOOKUP_BYTES: u8 = 0x03;
    pub const LOOKUP_BYTES_HI: u8 = 0x04;
    pub const MATCH_PACKETS: u8 = 0x05;
    pub const MATCH_BYTES: u8 = 0x06;
    pub const MATCH_BYTES_HI: u8 = 0x07;
    pub const REG0: u8 = 0x10;
    pub const REG_COUNT: u8 = 16;
}

pub mod flow_entry_field {
    pub const ENTRY_ID: u8 = 0x00;
    pub const INSERT_CLOCK: u8 = 0x01;
    pub const MATCH_PACKETS: u8 = 0x02;
    pub const MATCH_BYTES: u8 = 0x03;
    pub const MATCH_BYTES_HI: u8 = 0x04;
    pub const ENTRY_VERSION: u8 = 0x05;
}

pub mod link_field {
    pub const ID: u8 = 0x00;
    pub const STATUS: u8 = 0x01;
    pub const QUEUE_SIZE: u8 = 0x02;
    pub const TX_UTILIZATION: u8 = 0x03;
    pub const RX_UTILIZATION: u8 = 0x04;
    pub const APP_SPECIFIC_0: u8 = 0x05;
    pub const APP_SPECIFIC_1: u8 = 0x06;
    pub const CAPACITY: u8 = 0x07;
    pub const TX_PACKETS: u8 = 0x08;
    pub const TX_BYTES: u8 = 0x0A;
    pub const RX_PACKETS: u8 = 0x0C;
    pub const RX_BYTES: u8 = 0x0E;
    pub const DROP_PACKETS: u8 = 0x10;
    pub const DROP_BYTES: u8 = 0x12;
    pub const QUEUED_PACKETS: u8 = 0x14;
    pub const ERROR_PACKETS: u8 = 0x15;
}

pub mod queue_field {
    pub const OCCUPANCY: u8 = 0x00;
    pub const QUEUED_PACKETS: u8 = 0x01;
    pub const TX_PACKETS: u8 = 0x02;
    pub const TX_BYTES: u8 = 0x04;
    pub const ENQUEUED_PACKETS: u8 = 0x06;
    pub const ENQUEUED_BYTES: u8 = 0x08;
    pub const DROP_PACKETS: u8 = 0x0A;
    pub const DROP_BYTES: u8 = 0x0C;
    pub const SCHED_WEIGHT: u8 = 0x0E;
    pub const ID: u8 = 0x0F;
}

pub mod metadata_field {
    pub const INPUT_PORT: u8 = 0x00;
    pub const OUTPUT_PORT: u8 = 0x01;
    pub const OUTPUT_PORT_BITMAP: u8 = 0x02;
    pub const MATCHED_ENTRY_ID: u8 = 0x03;
    pub const OUTPUT_QUEUE: u8 = 0x04;
    pub const PACKET_LENGTH: u8 = 0x05;
    pub const VLAN_ID: u8 = 0x06;
    pub const HOP_INDEX: u8 = 0x07;
    pub const MATCHED_ENTRY_1: u8 = 0x10;
}

static SWITCH_FIELDS: &[FieldDef] = &[
    aliased(ro("SwitchID", switch_field::SWITCH_ID), &["ID"]),
    ro("VersionNumber", switch_field::VERSION_NUMBER),
    ro_wide("Clock", switch_field::CLOCK),
    ro("Clock_Hi", switch_field::CLOCK_HI),
    ro("ClockFrequency", switch_field::CLOCK_FREQUENCY),
    ro("PortCount", switch_field::PORT_COUNT),
];

static STAGE_FIELDS: &[FieldDef] = &[
    ro("VersionNumber", stage_field::VERSION_NUMBER),
    ro("ReferenceCount", stage_field::REFERENCE_COUNT),
    ro("LookupPackets", stage_field::LOOKUP_PACKETS),
    ro_wide("LookupBytes", stage_field::LOOKUP_BYTES),
    ro("LookupBytes_Hi", stage_field::LOOKUP_BYTES_HI),
    ro("MatchPackets", stage_field::MATCH_PACKETS),
    ro_wide("MatchBytes", stage_field::MATCH_BYTES),
    ro("MatchBytes_Hi", stage_field::MATCH_BYTES_HI),
    rw("Reg0", 0x10),
    rw("Reg1", 0x11),
    rw("Reg2", 0x12),
    rw("Reg3", 0x13),
    rw("Reg4", 0x14),
    rw("Reg5", 0x15),
    rw("Reg6", 0x16),
    rw("Reg7", 0x17),
    rw("Reg8", 0x18),
    rw("Reg9", 0x19),
    rw("Reg10", 0x1A),
    rw("Reg11", 0x1B),
    rw("Reg12", 0x1C),
    rw("Reg13", 0x1D),
    rw("Reg14", 0x1E),
    rw("Reg15", 0x1F),
];

static FLOW_ENTRY_FIELDS: &[FieldDef] = &[
    aliased(ro("EntryID", flow_entry_field::ENTRY_ID), &["ID"]),
    ro("InsertClock", flow_entry_field::INSERT_CLOCK),
    ro("MatchPackets", flow_entry_field::MATCH_PACKETS),
    ro_wide("MatchBytes", flow_entry_field::MATCH_BYTES),
    ro("MatchBytes_Hi", flow_entry_field::MATCH_BYTES_HI),
    ro("EntryVersion", flow_entry_field::ENTRY_VERSION),
];

static LINK_FIELDS: &[FieldDef] = &[
    aliased(ro("ID", link_field::ID), &["LinkID"]),
    ro("Status", link_field::STATUS),
    ro("QueueSize", link_field::QUEUE_SIZE),
    ro("TX-Utilization", link_field::TX_UTILIZATION),
    ro("RX-Utilization", link_field::RX_UTILIZATION),
    rw("AppSpecific_0", link_field::APP_SPECIFIC_0),
    rw("AppSpecific_1", link_field::APP_SPECIFIC_1),
    ro("Capacity", link_field::CAPACITY),
    ro_wide("TX-Packets", link_field::TX_PACKETS),
    ro("TX-Packets_Hi", link_field::TX_PACKETS + 1),
    ro_wide("TX-Bytes", link_field::TX_BYTES),
    ro("TX-Bytes_Hi", link_field::TX_BYTES + 1),
    ro_wide("RX-Packets", link_field::RX_PACKETS),
    ro("RX-Packets_Hi", link_field::RX_PACKETS + 1),
    ro_wide("RX-Bytes", link_field::RX_BYTES),
    ro("RX-Bytes_Hi", link_field::RX_BYTES + 1),
    ro_wide("Drop-Packets", link_field::DROP_PACKETS),
    ro("Drop-Packets_Hi", link_field::DROP_PACKETS + 1),
    ro_wide("Drop-Bytes", link_field::DROP_BYTES),
    ro("Drop-Bytes_Hi", link_field::DROP_BYTES + 1),
    ro("QueuedPackets", link_field::QUEUED_PACKETS),
    ro("Error-Packets", link_field::ERROR_PACKETS),
];

static QUEUE_FIELDS: &[FieldDef] = &[
    aliased(ro("QueueOccupancy", queue_field::OCCUPANCY), &["QueueSize"]),
    ro("QueuedPackets", queue_field::QUEUED_PACKETS),
    ro_wide("TX-Packets", queue_field::TX_PACKETS),
    ro("TX-Packets_Hi", queue_field::TX_PACKETS + 1),
    ro_wide("TX-Bytes", queue_field::TX_BYTES),
    ro("TX-Bytes_Hi", queue_field::TX_BYTES + 1),
    ro_wide("Enqueued-Packets", queue_field::ENQUEUED_PACKETS),
    ro("Enqueued-Packets_Hi", queue_field::ENQUEUED_PACKETS + 1),
    ro_wide("Enqueued-Bytes", queue_field::ENQUEUED_BYTES),
    ro("Enqueued-Bytes_Hi", queue_field::ENQUEUED_BYTES + 1),
    ro_wide("Drop-Packets", queue_field::DROP_PACKETS),
    ro("Drop-Packets_Hi", queue_field::DROP_PACKETS + 1),
    ro_wide("Drop-Bytes", queue_field::DROP_BYTES),
    ro("Drop-Bytes_Hi", queue_field::DROP_BYTES + 1),
    ro("SchedWeight", queue_field::SCHED_WEIGHT),
    aliased(ro("ID", queue_field::ID), &["QueueID"]),
];

static METADATA_FIELDS: &[FieldDef] = &[
    at_stage(ro("InputPort", metadata_field::INPUT_PORT), 1),
    at_stage(ro("OutputPort", metadata_field::OUTPUT_PORT), INGRESS_STAGES),
    at_stage(ro("OutputPortBitmap", metadata_field::OUTPUT_PORT_BITMAP), INGRESS_STAGES),
    at_stage(
        aliased(ro("MatchedEntryID", metadata_field::MATCHED_ENTRY_ID), &["MatchedEntry"]),
        INGRESS_STAGES,
    ),
    at_stage(
        aliased(ro("OutputQueue", metadata_field::OUTPUT_QUEUE), &["EnqueuedQueueID"]),
        EGRESS_STAGE,
    ),
    at_stage(ro("PacketLength", metadata_field::PACKET_LENGTH), 1),
    at_stage(ro("VlanID", metadata_field::VLAN_ID), 1),
    at_stage(ro("HopIndex", metadata_field::HOP_INDEX), 1),
    at_stage(ro("MatchedEntry1", metadata_field::MATCHED_ENTRY_1), 1),
    at_stage(ro("MatchedEntry2", metadata_field::MATCHED_ENTRY_1 + 1), 2),
    at_stage(ro("MatchedEntry3", metadata_field::MATCHED_ENTRY_1 + 2), 3),
    at_stage(ro("MatchedEntry4", metadata_field::MATCHED_ENTRY_1 + 3), 4),
];

/// Namespace of a defined address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Namespace {
    Switch,
    /// Ingress stage 1..=4.
    Stage(u8),
    /// The flow entry this packet matched at ingress stage 1..=4.
    FlowEntry(u8),
    /// `None` is the packet's egress link, `Some(i)` is port `i`.
    Link(Option<u8>),
    /// `None` is the packet's egress queue, `Some((port, queue))` is explicit.
    Queue(Option<(u8, u8)>),
    PacketMetadata,
}

impl Namespace {
    fn fields(self) -> &'static [FieldDef] {
        match self {
            Namespace::Switch => SWITCH_FIELDS,
            Namespace::Stage(_) => STAGE_FIELDS,
            Namespace::FlowEntry(_) => FLOW_ENTRY_FIELDS,
            Namespace::Link(_) => LINK_FIELDS,
            Namespace::Queue(_) => QUEUE_FIELDS,
            Namespace::PacketMetadata => METADATA_FIELDS,
        }
    }

    fn base(self) -> u16 {
        match self {
            Namespace::Switch => SWITCH_BASE,
            Namespace::Stage(i) => STAGE_BASE + u16::from(i) * 0x100,
            Namespace::FlowEntry(i) => FLOW_ENTRY_BASE + u16::from(i) * 0x100,
            Namespace::Link(None) => LINK_EGRESS_BASE,
            Namespace::Link(Some(i)) => LINK_INDEXED_BASE + u16::from(i) * 0x100,
            Namespace::Queue(None) => QUEUE_EGRESS_BASE,
            Namespace::Queue(Some((i, j))) => {
                QUEUE_INDEXED_BASE + u16::from(i) * 0x100 + u16::from(j) * QUEUE_STRIDE
            }
            Namespace::PacketMetadata => PACKET_METADATA_BASE,
        }
    }

    fn valid(self) -> bool {
        match self {
            Namespace::Stage(i) | Namespace::FlowEntry(i) => (1..=INGRESS_STAGES).contains(&i),
            Namespace::Link(Some(i)) => i < MAX_PORTS,
            Namespace::Queue(Some((i, j))) => i < MAX_PORTS && j < MAX_QUEUES,
            _ => true,
        }
    }

    /// Pipeline stage that owns this namespace's words.
    pub fn default_stage(self) -> u8 {
        match self {
            Namespace::Switch => 1,
            Namespace::Stage(i) | Namespace::FlowEntry(i) => i,
            Namespace::Link(_) | Namespace::Queue(_) => EGRESS_STAGE,
            Namespace::PacketMetadata => 1,
        }
    }

    /// Every concrete namespace instance, in address order.
    pub fn all() -> Vec<Namespace> {
        let mut out = Vec::new();
        out.push(Namespace::Switch);
        out.extend((1..=INGRESS_STAGES).map(Namespace::Stage));
        out.extend((1..=INGRESS_STAGES).map(Namespace::FlowEntry));
        out.extend((0..MAX_PORTS).map(|i| Namespace::Link(Some(i))));
        for i in 0..MAX_PORTS {
            out.extend((0..MAX_QUEUES).map(move |j| Namespace::Queue(Some((i, j)))));
        }
        out.push(Namespace::Link(None));
        out.push(Namespace::Queue(None));
        out.push(Namespace::PacketMetadata);
        out
    }

    fn from_raw(raw: u16) -> Option<(Namespace, u8)> {
        let page = raw & 0xFF00;
        let low = (raw & 0x00FF) as u8;
        let ns = match raw >> 12 {
            0x0 if page == SWITCH_BASE => Namespace::Switch,
            0x1 => Namespace::Stage(((raw >> 8) & 0xF) as u8),
            0x2 => Namespace::FlowEntry(((raw >> 8) & 0xF) as u8),
            0x4 => Namespace::Link(Some(((raw >> 8) & 0xF) as u8)),
            0x6 => {
                let port = ((raw >> 8) & 0xF) as u8;
                let queue = low / QUEUE_STRIDE as u8;
                let ns = Namespace::Queue(Some((port, queue)));
                return ns.valid().then_some((ns, low % QUEUE_STRIDE as u8));
            }
            0xA if page == LINK_EGRESS_BASE => Namespace::Link(None),
            0xB if page == QUEUE_EGRESS_BASE => Namespace::Queue(None),
            0xC if page == PACKET_METADATA_BASE => Namespace::PacketMetadata,
            _ => return None,
        };
        ns.valid().then_some((ns, low))
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Namespace::Switch => f.write_str("Switch"),
            Namespace::Stage(i) => write!(f, "Stage{i}"),
            Namespace::FlowEntry(i) => write!(f, "FlowEntry{i}"),
            Namespace::Link(None) => f.write_str("Link"),
            Namespace::Link(Some(i)) => write!(f, "Link${i}"),
            Namespace::Queue(None) => f.write_str("Queue"),
            Namespace::Queue(Some((i, j))) => write!(f, "Queue${i}${j}"),
            Namespace::PacketMetadata => f.write_str("PacketMetadata"),
        }
    }
}

/// A raw 16-bit switch-memory address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub u16);

/// Decoded view of a defined address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressInfo {
    pub namespace: Namespace,
    pub field: &'static FieldDef,
}

impl AddressInfo {
    pub fn stage(&self) -> u8 {
        self.field.stage.unwrap_or_else(|| self.namespace.default_stage())
    }

    pub fn writable(&self) -> bool {
        self.field.access == Access::ReadWrite
    }

    pub fn address(&self) -> Address {
        Address(self.namespace.base() + u16::from(self.field.offset))
    }
}

impl Address {
    /// Address of `field` within `ns`.
    pub fn new(ns: Namespace, field: u8) -> Address {
        Address(ns.base() + u16::from(field))
    }

    pub const fn raw(self) -> u16 {
        self.0
    }

    /// Looks the address up in the map; `None` means nonexistent.
    pub fn info(self) -> Option<AddressInfo> {
        let (namespace, offset) = Namespace::from_raw(self.0)?;
        let field = namespace.fields().iter().find(|f| f.offset == offset)?;
        Some(AddressInfo { namespace, field })
    }

    pub fn exists(self) -> bool {
        self.info().is_some()
    }

    /// Pipeline stage, or `None` for nonexistent addresses.
    pub fn stage(self) -> Option<u8> {
        self.info().map(|i| i.stage())
    }

    /// Canonical mnemonic, e.g. `[Queue:QueueOccupancy]`.
    pub fn mnemonic(self) -> Option<String> {
        self.info().map(|i| format!("[{}:{}]", i.namespace, i.field.name))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mnemonic() {
            Some(m) => f.write_str(&m),
            None => write!(f, "[{:#06x}]", self.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
}

fn parse_index(s: &str) -> Option<u8> {
    s.parse::<u8>().ok()
}

fn parse_namespace(ns: &str) -> Option<Namespace> {
    let lower = ns.to_ascii_lowercase();
    let indexed = |prefix: &str| -> Option<&str> {
        lower.strip_prefix(prefix).map(|rest| rest.strip_prefix('$').unwrap_or(rest))
    };
    let parsed = match lower.as_str() {
        "switch" => Namespace::Switch,
        "link" => Namespace::Link(None),
        "queue" => Namespace::Queue(None),
        "packetmetadata" => Namespace::PacketMetadata,
        _ => {
            if let Some(rest) = indexed("flowentry") {
                Namespace::FlowEntry(parse_index(rest)?)
            } else if let Some(rest) = indexed("stage") {
                Namespace::Stage(parse_index(rest)?)
            } else if let Some(rest) = indexed("link") {
                Namespace::Link(Some(parse_index(rest)?))
            } else if let Some(rest) = indexed("queue") {
                let (i, j) = rest.split_once('$')?;
                Namespace::Queue(Some((parse_index(i)?, parse_index(j)?)))
            } else {
                return None;
            }
        }
    };
    parsed.valid().then_some(parsed)
}

/// Resolves a `[Namespace:Name]` mnemonic (brackets optional, case-insensitive).
pub fn resolve(mnemonic: &str) -> Result<Address, ResolveError> {
    let unknown = || ResolveError::UnknownMnemonic(String::from(mnemonic));
    let trimmed = mnemonic.trim();
    let inner = trimmed
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(trimmed);
    let (ns, name) = inner.split_once(':').ok_or_else(unknown)?;
    let namespace = parse_namespace(ns.trim()).ok_or_else(unknown)?;
    let name = name.trim();
    let field = namespace
        .fields()
        .iter()
        .find(|f| {
            f.name.eq_ignore_ascii_case(name) || f.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))
        })
        .ok_or_else(unknown)?;
    Ok(Address(namespace.base() + u16::from(field.offset)))
}

/// One row of the published memory map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapEntry {
    pub mnemonic: String,
    pub address: Address,
    pub width_bits: u8,
    pub stage: u8,
    pub access: Access,
}

/// Every defined word, in address order.
pub fn entries() -> Vec<MapEntry> {
    let mut out = Vec::new();
    for ns in Namespace::all() {
        for field in ns.fields() {
            let info = AddressInfo { namespace: ns, field };
            out.push(MapEntry {
                mnemonic: format!("[{}:{}]", ns, field.name),
                address: info.address(),
                width_bits: if field.wide { 32 } else { 16 },
                stage: info.stage(),
                access: field.access,
            });
        }
    }
    out.sort_by_key(|e| e.address);
    out
}

/// Renders the memory map as a markdown document.
pub fn render_markdown() -> String {
    let mut s = String::new();
    s.push_str("# TPP switch memory map\n\n");
    s.push_str("Generated by `tpp memmap`. Do not edit by hand.\n\n");
    s.push_str("Words are 16 bits. A width of 32 marks the low word of a counter whose high word\n");
    s.push_str("is the following `_Hi` address. `[Link:]` and `[Queue:]` without an index refer to\n");
    s.push_str("the egress link and queue chosen for the packet at the switch executing the TPP.\n");
    s.push_str("Queue occupancy words count 64-byte buffer cells. Utilization words are scaled so\n");
    s.push_str("65535 is full link capacity; `RX-Utilization` measures the rate offered to the\n");
    s.push_str("link's egress queue, `TX-Utilization` the rate serialized onto the wire.\n\n");
    s.push_str("Pipeline: stages 1-4 are ingress match-action stages (1: port table, 2: exact-match\n");
    s.push_str("routes, 3: longest-prefix routes, 4: group table); stage 5 is egress.\n\n");
    s.push_str("| mnemonic | address | width | stage | access |\n");
    s.push_str("|---|---|---|---|---|\n");
    for e in entries() {
        let access = match e.access {
            Access::ReadOnly => "RO",
            Access::ReadWrite => "RW",
        };
        s.push_str(&format!(
            "| `{}` | `{:#06x}` | {} | {} | {} |\n",
            e.mnemonic, e.address.0, e.width_bits, e.stage, access
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_occupancy_is_0xb000() {
        assert_eq!(resolve("[Queue:QueueOccupancy]").unwrap(), Address(0xb000));
    }

    #[test]
    fn switch_id_is_first_switch_word() {
        assert_eq!(resolve("[Switch:SwitchID]").unwrap(), Address(0x0000));
        assert_eq!(resolve("[Switch:ID]").unwrap(), Address(0x0000));
    }

    #[test]
    fn bogus_is_unknown() {
        assert!(matches!(resolve("[Bogus:Nothing]"), Err(ResolveError::UnknownMnemonic(_))));
        assert!(resolve("[Switch:Nothing]").is_err());
        assert!(resolve("[Stage9:Reg1]").is_err());
        assert!(resolve("[Link$16:ID]").is_err());
        assert!(resolve("Switch").is_err());
    }

    #[test]
    fn paper_listing_mnemonics_resolve() {
        for m in [
            "[Link:QueueSize]",
            "[Link:RX-Utilization]",
            "[Link:AppSpecific_0]",
            "[Link:AppSpecific_1]",
            "[PacketMetadata:MatchedEntryID]",
            "[PacketMetadata:InputPort]",
            "[PacketMetadata:OutputPort]",
            "[Link:ID]",
            "[Link:TX-Utilization]",
            "[Link:TX-Bytes]",
            "[Stage1:Reg1]",
            "[Stage$3:Reg3]",
            "[Queue$2$1:Drop-Bytes]",
        ] {
            assert!(resolve(m).is_ok(), "{m}");
        }
    }

    #[test]
    fn resolution_is_a_bijection_over_canonical_names() {
        let all = entries();
        let mut raws: Vec<u16> = all.iter().map(|e| e.address.0).collect();
        raws.dedup();
        assert_eq!(raws.len(), all.len());
        for e in &all {
            assert_eq!(resolve(&e.mnemonic).unwrap(), e.address, "{}", e.mnemonic);
            assert_eq!(e.address.mnemonic().unwrap(), e.mnemonic);
        }
    }

    #[test]
    fn undefined_raw_addresses_are_nonexistent() {
        for raw in [0x0006u16, 0x0100, 0x1000, 0x1500, 0x3000, 0x6010, 0x7000, 0xA0FF, 0xFFFF] {
            assert!(!Address(raw).exists(), "{raw:#x}");
        }
        let defined = entries().len();
        let scanned = (0..=u16::MAX).filter(|r| Address(*r).exists()).count();
        assert_eq!(defined, scanned);
    }

    #[test]
    fn stages_follow_pipeline_layout() {
        assert_eq!(resolve("[Stage1:Reg1]").unwrap().stage(), Some(1));
        assert_eq!(resolve("[Stage3:Reg3]").unwrap().stage(), Some(3));
        assert_eq!(resolve("[PacketMetadata:InputPort]").unwrap().stage(), Some(1));
        assert_eq!(resolve("[PacketMetadata:OutputPort]").unwrap().stage(), Some(4));
        assert_eq!(resolve("[Queue:QueueOccupancy]").unwrap().stage(), Some(EGRESS_STAGE));
        assert_eq!(Address(0x7fff).stage(), None);
    }
}
