// SPDX-License-Identifier: Apache-2.0

//! The switch model: forwarding pipeline plus the distributed TCPU.

pub mod exec;
pub mod rewrite;
pub mod state;
pub mod trace;

pub use exec::{
    exec_cexec, exec_cstore, execute_in_order, execute_pipelined, execute_sequential, legal_orders, pipeline_order,
    write_cexec_block, FlatMemory, SwitchMemory,
};
pub use rewrite::{rewrite_push_pop, RewriteError};
pub use state::{Action, GroupSelector, LinkState, PacketMetadata, PacketView, PhysicalWord, QueueState, SwitchState};
pub use trace::{Disposition, ExecutionTrace, InsnRecord, SkipReason};

use crate::memmap::Address;
use crate::program::TppProgram;

/// A switch's memory bound to one packet's metadata.
pub struct PacketScope<'a> {
    pub switch: &'a mut SwitchState,
    pub meta: &'a PacketMetadata,
}

impl SwitchMemory for PacketScope<'_> {
    fn read(&self, addr: Address) -> Option<u16> {
        self.switch.read_word(addr, self.meta)
    }

    fn write(&mut self, addr: Address, value: u16) -> bool {
        self.switch.write_word(addr, self.meta, value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Forwarded {
    pub meta: PacketMetadata,
    /// False when the packet was dropped (no route or full queue).
    pub enqueued: bool,
    pub trace: Option<ExecutionTrace>,
}

/// Forwarding, queue accounting and then TPP execution for one packet.
///
/// The TPP sees the state forwarding left behind, including its own bytes in
/// the egress queue, and its writes land after forwarding's. Dropped packets
/// do not execute. The hop index advances on egress.
pub fn forward_and_execute(
    sw: &mut SwitchState,
    view: &PacketView,
    tpp: Option<&mut TppProgram>,
    now_ns: u64,
    write_enabled: bool,
) -> Forwarded {
    sw.clock_ns = now_ns;
    let mut meta = sw.forward(view);
    let enqueued = match meta.output_port {
        Some(port) => sw.enqueue(port, meta.output_queue, u64::from(view.length)),
        None => false,
    };
    let trace = match tpp {
        Some(p) if enqueued => {
            meta.hop_index = p.header.hop_index;
            let hop_index = p.header.hop_index;
            let mut scope = PacketScope { switch: sw, meta: &meta };
            let records = execute_pipelined(p, &mut scope, write_enabled);
            p.header.hop_index = p.header.hop_index.saturating_add(1);
            Some(ExecutionTrace { switch_id: sw.switch_id, hop_index, records })
        }
        _ => None,
    };
    Forwarded { meta, enqueued, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::program::Flags;

    fn switch() -> SwitchState {
        let mut sw = SwitchState::new(5);
        sw.add_port(100_000_000, 1, 150_000);
        sw.add_port(100_000_000, 1, 150_000);
        sw.add_lpm(0, 0, Action::Output(1));
        sw
    }

    #[test]
    fn microburst_tpp_appends_three_words() {
        let mut sw = switch();
        assert!(sw.enqueue(1, 0, 100));
        let mut p = assemble(".hops 5\nPUSH [Switch:SwitchID]\nPUSH [PacketMetadata:OutputPort]\nPUSH [Queue:QueueOccupancy]").unwrap();
        let view = PacketView { input_port: 0, length: 100, ..Default::default() };
        let f = forward_and_execute(&mut sw, &view, Some(&mut p), 0, true);
        assert!(f.enqueued);
        assert_eq!(p.header.sp, 6);
        assert_eq!(&p.words()[..3], [5, 1, 4]);
        assert_eq!(p.header.hop_index, 1);
        assert_eq!(f.trace.unwrap().records.len(), 3);
    }

    #[test]
    fn undefined_load_fails_gracefully() {
        let mut sw = switch();
        let mut p = assemble("LOAD [0x7fff], [Packet:Hop[0]]\nLOAD [Switch:SwitchID], [Packet:Hop[1]]").unwrap();
        let view = PacketView { length: 100, ..Default::default() };
        let f = forward_and_execute(&mut sw, &view, Some(&mut p), 0, true);
        let t = f.trace.unwrap();
        assert_eq!(t.records[0].disposition, Disposition::Skipped(SkipReason::NonexistentMemory));
        assert!(t.records[1].executed());
        assert_eq!(p.words(), [0, 5]);
        assert!(p.header.flags.contains(Flags::EXEC_ERROR));
        assert!(t.to_log().lines().count() == 2);
    }

    #[test]
    fn store_with_writes_disabled_leaves_switch_unchanged() {
        let mut sw = switch();
        let before = sw.clone();
        let mut p = assemble("STORE [Link:AppSpecific_0], [Packet:Hop[0]]\nPacketMemory:\nHop1: 9").unwrap();
        let view = PacketView { length: 100, ..Default::default() };
        let f = forward_and_execute(&mut sw, &view, Some(&mut p), 0, false);
        assert_eq!(f.trace.unwrap().records[0].disposition, Disposition::Skipped(SkipReason::WriteDisabled));
        assert_eq!(sw.writable_words(), before.writable_words());
        assert!(p.header.flags.contains(Flags::WRITE_SKIPPED));
    }

    #[test]
    fn dropped_packets_do_not_execute() {
        let mut sw = SwitchState::new(1);
        sw.add_port(1_000_000, 1, 150_000);
        let mut p = assemble("PUSH [Switch:SwitchID]").unwrap();
        let f = forward_and_execute(&mut sw, &PacketView::default(), Some(&mut p), 0, true);
        assert!(!f.enqueued && f.trace.is_none());
        assert_eq!(p.header.hop_index, 0);
    }
}
