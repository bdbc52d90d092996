// SPDX-License-Identifier: Apache-2.0

//! TPP execution at one hop.
//!
//! [`execute_sequential`] is the reference interpreter: instructions run in
//! program order and the stack pointer moves as they go. [`execute_pipelined`]
//! is what a switch does: stack operands are bound to slots when the TPP is
//! parsed and instructions run at the stage that owns their switch operand.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::analysis::{instruction_stage, stack_slots};
use crate::isa::Instruction;
use crate::memmap::Address;
use crate::program::{Flags, TppProgram, WORD_BYTES};
use crate::switch::trace::{Disposition, InsnRecord, SkipReason};

/// Switch memory as seen by one packet.
pub trait SwitchMemory {
    fn read(&self, addr: Address) -> Option<u16>;
    /// Fails for nonexistent and read-only words.
    fn write(&mut self, addr: Address, value: u16) -> bool;
}

/// Outcome of one CSTORE, following the reference pseudocode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CstoreOutcome {
    pub succeeded: bool,
    pub final_x: u16,
}

/// `if X == pre { X = post }; pre = X`. Returns `None` when an operand does not dereference.
pub fn exec_cstore<M: SwitchMemory>(
    mem: &mut M,
    p: &mut TppProgram,
    x: Address,
    pre_slot: u8,
    post_slot: u8,
) -> Option<CstoreOutcome> {
    let pre_at = p.header.hop_slot(pre_slot);
    let post_at = p.header.hop_slot(post_slot);
    let pre = p.read_word(pre_at)?;
    let post = p.read_word(post_at)?;
    let current = mem.read(x)?;
    let mut succeeded = false;
    let mut final_x = current;
    if current == pre {
        if !mem.write(x, post) {
            return None;
        }
        final_x = post;
        succeeded = true;
    }
    p.write_word(pre_at, final_x);
    Some(CstoreOutcome { succeeded, final_x })
}

/// `(switch_value & mask) == value` with the 32-bit mask and value in the
/// 4-word block at `block_slot` (mask high, mask low, value high, value low).
pub fn exec_cexec<M: SwitchMemory>(mem: &M, p: &TppProgram, x: Address, block_slot: u8) -> Option<bool> {
    let at = p.header.hop_slot(block_slot);
    let w = |k: usize| p.read_word(at + k * WORD_BYTES).map(u32::from);
    let mask = (w(0)? << 16) | w(1)?;
    let value = (w(2)? << 16) | w(3)?;
    let switch_value = u32::from(mem.read(x)?);
    Some(switch_value & mask == value)
}

/// Writes the CEXEC mask/value block into a hop slot.
pub fn write_cexec_block(p: &mut TppProgram, byte_offset: usize, mask: u32, value: u32) -> bool {
    [(mask >> 16) as u16, mask as u16, (value >> 16) as u16, value as u16]
        .iter()
        .enumerate()
        .all(|(k, w)| p.write_word(byte_offset + k * WORD_BYTES, *w))
}

/// Switch memory with one independent word per defined address, zero by default.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatMemory(pub BTreeMap<u16, u16>);

impl SwitchMemory for FlatMemory {
    fn read(&self, addr: Address) -> Option<u16> {
        addr.exists().then(|| self.0.get(&addr.0).copied().unwrap_or(0))
    }

    fn write(&mut self, addr: Address, value: u16) -> bool {
        match addr.info() {
            Some(i) if i.writable() => {
                self.0.insert(addr.0, value);
                true
            }
            _ => false,
        }
    }
}

struct Step {
    record: InsnRecord,
    /// A conditional that failed; later instructions are suppressed.
    halts: bool,
}

fn skipped(index: usize, insn: Instruction, stage: u8, slot: Option<usize>, why: SkipReason) -> Step {
    let mut record = InsnRecord::new(index, insn, stage);
    record.slot = slot;
    record.disposition = Disposition::Skipped(why);
    Step { record, halts: insn.opcode().is_conditional() }
}

/// Executes one instruction with its stack slot already bound.
fn step<M: SwitchMemory>(
    mem: &mut M,
    p: &mut TppProgram,
    index: usize,
    stack_slot: Option<usize>,
    write_enabled: bool,
) -> Step {
    let insn = p.instructions[index];
    let stage = instruction_stage(&insn);
    let mut record = InsnRecord::new(index, insn, stage);
    let nonexistent = |slot| skipped(index, insn, stage, slot, SkipReason::NonexistentMemory);
    let disabled = |slot| skipped(index, insn, stage, slot, SkipReason::WriteDisabled);
    match insn {
        Instruction::Load { addr, .. } | Instruction::Push { addr } => {
            let at = match insn {
                Instruction::Load { slot, .. } => Some(p.header.hop_slot(slot)),
                _ => stack_slot,
            };
            let Some(at) = at.filter(|a| a + WORD_BYTES <= p.mem_len()) else {
                return nonexistent(at);
            };
            let Some(v) = mem.read(addr) else {
                return nonexistent(Some(at));
            };
            p.write_word(at, v);
            record.slot = Some(at);
            record.read = Some(v);
            record.written = Some(v);
        }
        Instruction::Store { addr, .. } | Instruction::Pop { addr } => {
            let at = match insn {
                Instruction::Store { slot, .. } => Some(p.header.hop_slot(slot)),
                _ => stack_slot,
            };
            let Some(at) = at.filter(|a| a + WORD_BYTES <= p.mem_len()) else {
                return nonexistent(at);
            };
            if !write_enabled {
                return disabled(Some(at));
            }
            let v = p.read_word(at).unwrap_or(0);
            if !mem.write(addr, v) {
                return nonexistent(Some(at));
            }
            record.slot = Some(at);
            record.read = Some(v);
            record.written = Some(v);
        }
        Instruction::Cstore { addr, pre, post } => {
            let at = p.header.hop_slot(pre);
            if !write_enabled {
                return disabled(Some(at));
            }
            let before = mem.read(addr);
            match exec_cstore(mem, p, addr, pre, post) {
                Some(out) => {
                    record.slot = Some(at);
                    record.read = before;
                    record.written = Some(out.final_x);
                    record.cond = Some(out.succeeded);
                    return Step { record, halts: !out.succeeded };
                }
                None => return nonexistent(Some(at)),
            }
        }
        Instruction::Cexec { addr, block } => {
            let at = p.header.hop_slot(block);
            match exec_cexec(mem, p, addr, block) {
                Some(gate) => {
                    record.slot = Some(at);
                    record.read = mem.read(addr);
                    record.cond = Some(gate);
                    return Step { record, halts: !gate };
                }
                None => return nonexistent(Some(at)),
            }
        }
    }
    Step { record, halts: false }
}

fn finish(p: &mut TppProgram, records: &[InsnRecord]) {
    for r in records {
        match r.disposition {
            Disposition::Skipped(SkipReason::NonexistentMemory) => p.header.flags.set(Flags::EXEC_ERROR),
            Disposition::Skipped(SkipReason::WriteDisabled) => p.header.flags.set(Flags::WRITE_SKIPPED),
            _ => {}
        }
    }
}

/// Reference semantics: program order, dynamic stack pointer.
pub fn execute_sequential<M: SwitchMemory>(p: &mut TppProgram, mem: &mut M, write_enabled: bool) -> Vec<InsnRecord> {
    let mut records = Vec::with_capacity(p.insn_count());
    let mut sp = usize::from(p.header.sp);
    let mut halted = false;
    for index in 0..p.insn_count() {
        let insn = p.instructions[index];
        if halted {
            records.push(skipped(index, insn, instruction_stage(&insn), None, SkipReason::CondFailed).record);
            continue;
        }
        let stack_slot = match insn {
            Instruction::Push { .. } if sp + WORD_BYTES <= p.mem_len() => {
                sp += WORD_BYTES;
                Some(sp - WORD_BYTES)
            }
            Instruction::Pop { .. } if sp >= WORD_BYTES => {
                sp -= WORD_BYTES;
                Some(sp)
            }
            _ => None,
        };
        let s = step(mem, p, index, stack_slot, write_enabled);
        halted = s.halts;
        records.push(s.record);
    }
    p.header.sp = sp as u16;
    finish(p, &records);
    records
}

/// Stage order: by pipeline stage, program order within a stage.
pub fn pipeline_order(p: &TppProgram) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.insn_count()).collect();
    order.sort_by_key(|&i| (instruction_stage(&p.instructions[i]), i));
    order
}

/// Executes in an arbitrary order with statically bound stack slots.
///
/// An instruction is suppressed when a conditional earlier in program order
/// has already failed. The stack pointer ends where the last non-suppressed
/// stack instruction leaves it.
pub fn execute_in_order<M: SwitchMemory>(
    p: &mut TppProgram,
    mem: &mut M,
    write_enabled: bool,
    order: &[usize],
) -> Vec<InsnRecord> {
    let slots = stack_slots(p);
    let mut failed_at: Option<usize> = None;
    let mut records: Vec<Option<InsnRecord>> = alloc::vec![None; p.insn_count()];
    for &index in order {
        let insn = p.instructions[index];
        if failed_at.is_some_and(|f| f < index) {
            records[index] = Some(skipped(index, insn, instruction_stage(&insn), None, SkipReason::CondFailed).record);
            continue;
        }
        let s = step(mem, p, index, slots[index].0, write_enabled);
        if s.halts {
            failed_at = Some(failed_at.map_or(index, |f| f.min(index)));
        }
        records[index] = Some(s.record);
    }
    let mut sp = usize::from(p.header.sp);
    for (index, insn) in p.instructions.iter().enumerate() {
        let live = failed_at.is_none_or(|f| index <= f);
        if live && matches!(insn, Instruction::Push { .. } | Instruction::Pop { .. }) {
            sp = slots[index].1;
        }
    }
    p.header.sp = sp as u16;
    let records: Vec<InsnRecord> = records.into_iter().map(|r| r.expect("order is a permutation")).collect();
    finish(p, &records);
    records
}

pub fn execute_pipelined<M: SwitchMemory>(p: &mut TppProgram, mem: &mut M, write_enabled: bool) -> Vec<InsnRecord> {
    let order = pipeline_order(p);
    execute_in_order(p, mem, write_enabled, &order)
}

/// Every order the pipeline may legally use: stage-nondecreasing, and within a
/// stage a conditional runs before the instructions that follow it.
pub fn legal_orders(p: &TppProgram) -> Vec<Vec<usize>> {
    let n = p.insn_count();
    let stages: Vec<u8> = p.instructions.iter().map(instruction_stage).collect();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    let mut used = alloc::vec![false; n];
    fn rec(
        p: &TppProgram,
        stages: &[u8],
        cur: &mut Vec<usize>,
        used: &mut Vec<bool>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let n = stages.len();
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for j in 0..n {
            if used[j] {
                continue;
            }
            let ok = (0..n).filter(|&i| !used[i] && i != j).all(|i| {
                let stage_first = stages[i] < stages[j];
                let cond_first = stages[i] == stages[j] && i < j && p.instructions[i].opcode().is_conditional();
                !(stage_first || cond_first)
            });
            if ok {
                used[j] = true;
                cur.push(j);
                rec(p, stages, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    rec(p, &stages, &mut cur, &mut used, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    type Flat = FlatMemory;

    fn with(words: &[(&str, u16)]) -> Flat {
        let mut f = Flat::default();
        for (m, v) in words {
            f.0.insert(crate::memmap::resolve(m).unwrap().0, *v);
        }
        f
    }

    fn cstore_prog(x: u16, pre: u16, post: u16) -> (TppProgram, Flat) {
        let mut p = assemble("CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]\nPUSH [Switch:ID]").unwrap();
        p.memory = alloc::vec![0; 10];
        p.header.sp = 4;
        p.write_word(0, pre);
        p.write_word(2, post);
        (p, with(&[("[Link:AppSpecific_0]", x), ("[Switch:ID]", 42)]))
    }

    #[test]
    fn cstore_examples() {
        let a0 = crate::memmap::resolve("[Link:AppSpecific_0]").unwrap();
        let (mut p, mut m) = cstore_prog(5, 5, 9);
        let r = execute_sequential(&mut p, &mut m, true);
        assert_eq!(m.read(a0), Some(9));
        assert_eq!(p.read_word(0), Some(9));
        assert_eq!(r[0].cond, Some(true));
        assert_eq!(p.read_word(4), Some(42));

        let (mut p, mut m) = cstore_prog(7, 5, 9);
        let r = execute_sequential(&mut p, &mut m, true);
        assert_eq!(m.read(a0), Some(7));
        assert_eq!(p.read_word(0), Some(7));
        assert_eq!(r[1].disposition, Disposition::Skipped(SkipReason::CondFailed));
        assert_eq!(p.read_word(4), Some(0));

        let (mut p, mut m) = cstore_prog(5, 5, 5);
        let r = execute_sequential(&mut p, &mut m, true);
        assert_eq!(m.read(a0), Some(5));
        assert_eq!(r[0].cond, Some(true));
    }

    #[test]
    fn cexec_examples() {
        let id = crate::memmap::resolve("[Switch:SwitchID]").unwrap();
        let mut p = assemble(".hop_size 5\nCEXEC [Switch:SwitchID], [Packet:Hop[0]]\nLOAD [Switch:SwitchID], [Packet:Hop[4]]").unwrap();
        write_cexec_block(&mut p, 0, 0xFFFF_FFFF, 3);
        assert_eq!(exec_cexec(&with(&[("[Switch:SwitchID]", 3)]), &p, id, 0), Some(true));
        assert_eq!(exec_cexec(&with(&[("[Switch:SwitchID]", 4)]), &p, id, 0), Some(false));
        let mut q = p.clone();
        let r = execute_sequential(&mut q, &mut with(&[("[Switch:SwitchID]", 4)]), true);
        assert_eq!(r[1].disposition, Disposition::Skipped(SkipReason::CondFailed));
        write_cexec_block(&mut p, 0, 0, 0);
        assert_eq!(exec_cexec(&with(&[("[Switch:SwitchID]", 4)]), &p, id, 0), Some(true));
        write_cexec_block(&mut p, 0, 0, 1);
        assert_eq!(exec_cexec(&with(&[("[Switch:SwitchID]", 4)]), &p, id, 0), Some(false));
        assert_eq!(exec_cexec(&with(&[]), &p, Address(0x7fff), 0), None);
    }

    #[test]
    fn graceful_failure_skips_only_the_bad_instruction() {
        let mut p = assemble(".hops 1\nLOAD [0x7fff], [Packet:Hop[0]]\nLOAD [Switch:ID], [Packet:Hop[1]]").unwrap();
        let r = execute_sequential(&mut p, &mut with(&[("[Switch:ID]", 9)]), true);
        assert_eq!(r[0].disposition, Disposition::Skipped(SkipReason::NonexistentMemory));
        assert_eq!(r[1].disposition, Disposition::Executed);
        assert_eq!(p.read_word(2), Some(9));
        assert!(p.header.flags.contains(Flags::EXEC_ERROR));
    }

    #[test]
    fn writes_disabled() {
        let mut p = assemble("STORE [Stage1:Reg0], [Packet:Hop[0]]\nPacketMemory:\nHop1: 5").unwrap();
        let mut m = Flat::default();
        let r = execute_sequential(&mut p, &mut m, false);
        assert_eq!(r[0].disposition, Disposition::Skipped(SkipReason::WriteDisabled));
        assert!(m.0.is_empty());
        assert!(p.header.flags.contains(Flags::WRITE_SKIPPED));
    }

    #[test]
    fn push_pop_listing_in_stage_order() {
        let src = ".hop_size 3\nPUSH [PacketMetadata:OutputPort]\nPUSH [PacketMetadata:InputPort]\nPUSH [Stage1:Reg1]\nPOP [Stage3:Reg3]";
        let p = assemble(src).unwrap();
        let m = with(&[("[PacketMetadata:OutputPort]", 2), ("[PacketMetadata:InputPort]", 1), ("[Stage1:Reg1]", 77)]);
        let (mut a, mut ma) = (p.clone(), m.clone());
        execute_sequential(&mut a, &mut ma, true);
        let (mut b, mut mb) = (p.clone(), m.clone());
        execute_pipelined(&mut b, &mut mb, true);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.words(), [2, 1, 77]);
        assert_eq!(a.header.sp, 4);
        assert_eq!(ma.read(crate::memmap::resolve("[Stage3:Reg3]").unwrap()), Some(77));
        assert_eq!(legal_orders(&p).len(), 2);
    }
}
