// SPDX-License-Identifier: Apache-2.0

//! Static analysis of TPPs: access control and pipeline-order hazards.

use alloc::vec::Vec;
use core::fmt;

use crate::isa::Instruction;
use crate::memmap::{Address, Namespace};
use crate::program::{TppProgram, WORD_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessOp {
    Read,
    Write,
}

impl fmt::Display for AccessOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessOp::Read => "read",
            AccessOp::Write => "write",
        })
    }
}

/// `(appid, op, address_range)`; the range is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryPolicy {
    pub appid: u64,
    pub op: AccessOp,
    pub start: Address,
    pub end: Address,
}

impl MemoryPolicy {
    pub fn new(appid: u64, op: AccessOp, start: Address, end: Address) -> MemoryPolicy {
        MemoryPolicy { appid, op, start, end }
    }

    pub fn well_formed(&self) -> bool {
        self.start <= self.end
    }

    pub fn covers(&self, appid: u64, op: AccessOp, addr: Address) -> bool {
        self.appid == appid && self.op == op && self.start <= addr && addr <= self.end
    }

    pub fn overlaps(&self, other: &MemoryPolicy) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// One switch-memory operand of one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TouchedRange {
    pub index: usize,
    pub op: AccessOp,
    pub start: Address,
    pub end: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationReason {
    /// No policy of the app grants this access.
    NotPermitted { op: AccessOp, addr: Address },
    /// Write instructions are disabled outright.
    WritesDisabled { addr: Address },
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationReason::NotPermitted { op, addr } => write!(f, "{op} of {addr} not permitted"),
            ViolationReason::WritesDisabled { addr } => write!(f, "write to {addr} with write instructions disabled"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub reason: ViolationReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisReport {
    pub touched_ranges: Vec<TouchedRange>,
    pub violations: Vec<Violation>,
    pub has_writes: bool,
    pub hazard_order_ok: bool,
}

impl AnalysisReport {
    pub fn admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AnalyzeOptions {
    pub deny_writes: bool,
}

/// Switch-memory accesses made by one instruction.
pub fn switch_accesses(insn: &Instruction) -> &'static [AccessOp] {
    match insn {
        Instruction::Load { .. } | Instruction::Push { .. } | Instruction::Cexec { .. } => &[AccessOp::Read],
        Instruction::Store { .. } | Instruction::Pop { .. } => &[AccessOp::Write],
        Instruction::Cstore { .. } => &[AccessOp::Read, AccessOp::Write],
    }
}

pub fn analyze(p: &TppProgram, policies: &[MemoryPolicy], appid: u64) -> AnalysisReport {
    analyze_with(p, policies, appid, &AnalyzeOptions::default())
}

pub fn analyze_with(p: &TppProgram, policies: &[MemoryPolicy], appid: u64, opts: &AnalyzeOptions) -> AnalysisReport {
    let mut touched_ranges = Vec::new();
    let mut violations = Vec::new();
    for (index, insn) in p.instructions.iter().enumerate() {
        let addr = insn.address();
        for &op in switch_accesses(insn) {
            touched_ranges.push(TouchedRange { index, op, start: addr, end: addr });
            if op == AccessOp::Write && opts.deny_writes {
                violations.push(Violation { index, reason: ViolationReason::WritesDisabled { addr } });
            } else if !policies.iter().any(|pol| pol.covers(appid, op, addr)) {
                violations.push(Violation { index, reason: ViolationReason::NotPermitted { op, addr } });
            }
        }
    }
    AnalysisReport {
        touched_ranges,
        violations,
        has_writes: p.instructions.iter().any(|i| i.opcode().writes_switch()),
        hazard_order_ok: hazard_order_ok(p),
    }
}

/// Pipeline stage an instruction executes at. Nonexistent addresses fail at the first stage.
pub fn instruction_stage(insn: &Instruction) -> u8 {
    insn.address().stage().unwrap_or(1)
}

/// Byte offsets of packet memory an instruction reads and writes, with stack
/// operands resolved statically from the header's stack pointer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PacketAccess {
    pub reads: Vec<usize>,
    pub writes: Vec<usize>,
}

/// Static byte slot of every PUSH/POP, in program order, and the stack pointer after each.
pub fn stack_slots(p: &TppProgram) -> Vec<(Option<usize>, usize)> {
    let mut sp = usize::from(p.header.sp);
    let mem = p.mem_len();
    p.instructions
        .iter()
        .map(|insn| match insn {
            Instruction::Push { .. } => {
                if sp + WORD_BYTES <= mem {
                    let slot = sp;
                    sp += WORD_BYTES;
                    (Some(slot), sp)
                } else {
                    (None, sp)
                }
            }
            Instruction::Pop { .. } => {
                if sp >= WORD_BYTES && sp <= mem {
                    sp -= WORD_BYTES;
                    (Some(sp), sp)
                } else {
                    (None, sp)
                }
            }
            _ => (None, sp),
        })
        .collect()
}

pub fn packet_accesses(p: &TppProgram) -> Vec<PacketAccess> {
    let stack = stack_slots(p);
    let h = &p.header;
    p.instructions
        .iter()
        .zip(stack)
        .map(|(insn, (stack_slot, _))| {
            let mut a = PacketAccess::default();
            match *insn {
                Instruction::Load { slot, .. } => a.writes.push(h.hop_slot(slot)),
                Instruction::Store { slot, .. } => a.reads.push(h.hop_slot(slot)),
                Instruction::Push { .. } => a.writes.extend(stack_slot),
                Instruction::Pop { .. } => a.reads.extend(stack_slot),
                Instruction::Cstore { pre, post, .. } => {
                    a.reads.push(h.hop_slot(pre));
                    a.reads.push(h.hop_slot(post));
                    a.writes.push(h.hop_slot(pre));
                }
                Instruction::Cexec { block, .. } => {
                    a.reads.extend((0..4).map(|k| h.hop_slot(block) + k * WORD_BYTES));
                }
            }
            a
        })
        .collect()
}

/// Whether two switch addresses may name the same physical word.
///
/// `[Link:]`/`[Queue:]` alias whichever indexed link/queue the packet leaves on.
pub fn may_alias(a: Address, b: Address) -> bool {
    if a == b {
        return true;
    }
    let (Some(x), Some(y)) = (a.info(), b.info()) else {
        return false;
    };
    if x.field.offset != y.field.offset {
        return false;
    }
    matches!(
        (x.namespace, y.namespace),
        (Namespace::Link(None), Namespace::Link(_))
            | (Namespace::Link(_), Namespace::Link(None))
            | (Namespace::Queue(None), Namespace::Queue(_))
            | (Namespace::Queue(_), Namespace::Queue(None))
    )
}

fn switch_conflict(a: &Instruction, b: &Instruction) -> bool {
    let writes = |i: &Instruction| i.opcode().writes_switch();
    (writes(a) || writes(b)) && may_alias(a.address(), b.address())
}

fn packet_conflict(a: &PacketAccess, b: &PacketAccess) -> bool {
    let hit = |x: &[usize], y: &[usize]| x.iter().any(|s| y.contains(s));
    hit(&a.writes, &b.writes) || hit(&a.writes, &b.reads) || hit(&a.reads, &b.writes)
}

/// True when every stage-order execution of `p` is equivalent to program order.
///
/// Instructions run in pipeline-stage order and in parallel within a stage. A
/// pair `i < j` is a hazard when `j` would not run strictly after `i` and they
/// conflict on a switch word or a packet slot, or when `i` is a conditional and
/// `j` sits at an earlier stage than `i`.
pub fn hazard_order_ok(p: &TppProgram) -> bool {
    let stages: Vec<u8> = p.instructions.iter().map(instruction_stage).collect();
    let pkt = packet_accesses(p);
    let n = p.instructions.len();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&p.instructions[i], &p.instructions[j]);
            if a.opcode().is_conditional() && stages[j] < stages[i] {
                return false;
            }
            if stages[j] <= stages[i] && (switch_conflict(a, b) || packet_conflict(&pkt[i], &pkt[j])) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::memmap::resolve;

    fn read_all(appid: u64) -> Vec<MemoryPolicy> {
        alloc::vec![MemoryPolicy::new(appid, AccessOp::Read, Address(0), Address(0xFFFF))]
    }

    #[test]
    fn rcp_phase1_is_read_only_and_admissible() {
        let p = assemble(
            "PUSH [Switch:SwitchID]\nPUSH [Link:QueueSize]\nPUSH [Link:RX-Utilization]\nPUSH [Link:AppSpecific_0]\nPUSH [Link:AppSpecific_1]",
        )
        .unwrap();
        let policies: Vec<MemoryPolicy> = p
            .instructions
            .iter()
            .map(|i| MemoryPolicy::new(7, AccessOp::Read, i.address(), i.address()))
            .collect();
        let r = analyze(&p, &policies, 7);
        assert!(r.violations.is_empty());
        assert!(!r.has_writes);
        assert_eq!(r.touched_ranges.len(), 5);
        assert!(!analyze(&p, &policies, 8).admissible());
    }

    #[test]
    fn rcp_phase3_under_read_only_policies() {
        let p = assemble(
            "CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]\nSTORE [Link:AppSpecific_1], [Packet:Hop[2]]",
        )
        .unwrap();
        let r = analyze(&p, &read_all(1), 1);
        assert_eq!(r.violations.len(), 2);
        assert!(r.has_writes);
        let a0 = resolve("[Link:AppSpecific_0]").unwrap();
        let a1 = resolve("[Link:AppSpecific_1]").unwrap();
        let mut pol = read_all(1);
        pol.push(MemoryPolicy::new(1, AccessOp::Write, a0, a1));
        assert!(analyze(&p, &pol, 1).admissible());
        let denied = analyze_with(&p, &pol, 1, &AnalyzeOptions { deny_writes: true });
        assert_eq!(denied.violations.len(), 2);
    }

    #[test]
    fn empty_program_report() {
        let p = TppProgram::new(Vec::new(), 0, 0);
        let r = analyze(&p, &[], 0);
        assert!(r.touched_ranges.is_empty() && r.violations.is_empty());
        assert!(r.hazard_order_ok && !r.has_writes);
    }

    #[test]
    fn hazards() {
        // Conditional at egress guarding an ingress read.
        let p = assemble("CEXEC [Link:ID], [Packet:Hop[0]]\nPUSH [Switch:ID]").unwrap();
        assert!(!hazard_order_ok(&p));
        // Ingress conditional guarding an egress read is fine.
        let p = assemble("CEXEC [Switch:ID], [Packet:Hop[0]]\nPUSH [Link:ID]").unwrap();
        assert!(hazard_order_ok(&p));
        // Egress write of a slot an ingress instruction later reads.
        let p = assemble("LOAD [Link:ID], [Packet:Hop[0]]\nSTORE [Stage2:Reg0], [Packet:Hop[0]]").unwrap();
        assert!(!hazard_order_ok(&p));
        let p = assemble("PUSH [PacketMetadata:OutputPort]\nPUSH [PacketMetadata:InputPort]\nPUSH [Stage1:Reg1]\nPOP [Stage3:Reg3]").unwrap();
        assert!(hazard_order_ok(&p));
        // Egress-relative and indexed link words alias.
        let p = assemble("STORE [Link:AppSpecific_0], [Packet:Hop[0]]\nLOAD [Link$2:AppSpecific_0], [Packet:Hop[1]]").unwrap();
        assert!(!hazard_order_ok(&p));
    }
}
