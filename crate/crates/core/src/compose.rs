// SPDX-License-Identifier: Apache-2.0

//! Program transformations used by executors: gating a TPP on one switch and
//! splitting a TPP that is too large for a long path.

use alloc::vec::Vec;

use crate::isa::{Instruction, MAX_HOP_OFFSET};
use crate::memmap::{metadata_field, switch_field, Address, Namespace};
use crate::program::{encoded_len, TppProgram, MAX_INSTRUCTIONS, WORD_BYTES};
use crate::record::ExecutedTppRecord;
use crate::switch::exec::write_cexec_block;

/// Words taken by a CEXEC mask/value block.
pub const GATE_WORDS: usize = 4;
const GATE_BYTES: usize = GATE_WORDS * WORD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ComposeError {
    #[error("payload has {0} instructions; a gate needs one free slot")]
    TooManyInstructions(usize),
    #[error("a single hop needs {need} bytes, over the {budget}-byte budget")]
    Unsplittable { need: usize, budget: usize },
    #[error("only stack programs can be split by hop")]
    HopAddressed,
    #[error("hop size too large to append a gate block")]
    HopTooLarge,
}

fn uses_hop_slots(p: &TppProgram) -> bool {
    p.instructions.iter().any(|i| !matches!(i, Instruction::Push { .. } | Instruction::Pop { .. }))
}

fn pushes(p: &TppProgram) -> usize {
    p.instructions.iter().filter(|i| matches!(i, Instruction::Push { .. })).count()
}

fn gated(gate_addr: Address, payload: &TppProgram, mask: u32, value: u32) -> Result<TppProgram, ComposeError> {
    let n = payload.insn_count();
    if n >= MAX_INSTRUCTIONS {
        return Err(ComposeError::TooManyInstructions(n));
    }
    if !uses_hop_slots(payload) {
        // Stack program: one shared gate block ahead of the stack.
        let mut insns = alloc::vec![Instruction::Cexec { addr: gate_addr, block: 0 }];
        insns.extend(payload.instructions.iter().copied());
        let mut out = TppProgram::new(insns, 0, GATE_BYTES + payload.mem_len());
        out.header.session_id = payload.header.session_id;
        out.header.flags = payload.header.flags;
        out.header.hop_index = payload.header.hop_index;
        out.header.sp = payload.header.sp + GATE_BYTES as u16;
        write_cexec_block(&mut out, 0, mask, value);
        out.memory[GATE_BYTES..].copy_from_slice(&payload.memory);
        return Ok(out);
    }
    // Hop-addressed program: every hop gets the gate block after its own slots.
    let hs = usize::from(payload.header.hop_size_words);
    if hs + GATE_WORDS > usize::from(MAX_HOP_OFFSET) + 1 {
        return Err(ComposeError::HopTooLarge);
    }
    let hop_bytes = hs * WORD_BYTES;
    let hops = if hs == 0 { 1 } else { payload.mem_len().div_ceil(hop_bytes).max(1) };
    let new_hop = hop_bytes + GATE_BYTES;
    let mut insns = alloc::vec![Instruction::Cexec { addr: gate_addr, block: hs as u8 }];
    insns.extend(payload.instructions.iter().copied());
    let mut out = TppProgram::new(insns, (hs + GATE_WORDS) as u8, hops * new_hop);
    out.header.session_id = payload.header.session_id;
    out.header.flags = payload.header.flags;
    out.header.hop_index = payload.header.hop_index;
    out.header.sp = payload.header.sp;
    for h in 0..hops {
        let src = &payload.memory[(h * hop_bytes).min(payload.mem_len())..((h + 1) * hop_bytes).min(payload.mem_len())];
        out.memory[h * new_hop..h * new_hop + src.len()].copy_from_slice(src);
        write_cexec_block(&mut out, h * new_hop + hop_bytes, mask, value);
    }
    Ok(out)
}

/// Wraps `payload` so that only the switch with `switch_id` executes it.
pub fn targeted(payload: &TppProgram, switch_id: u16) -> Result<TppProgram, ComposeError> {
    let id = Address::new(Namespace::Switch, switch_field::SWITCH_ID);
    gated(id, payload, 0xFFFF_FFFF, u32::from(switch_id))
}

/// Hop range covered by one piece of a split TPP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPiece {
    pub first_hop: usize,
    pub hops: usize,
    pub program: TppProgram,
}

/// Bytes a stack program needs to record `hops` hops.
pub fn stack_program_bytes(p: &TppProgram, hops: usize) -> usize {
    encoded_len(p.insn_count(), usize::from(p.header.sp) + pushes(p) * WORD_BYTES * hops)
}

/// Splits a stack program meant for `hops` hops into pieces of at most
/// `max_bytes`, each gated on an aligned block of hop indices.
pub fn split_large(p: &TppProgram, hops: usize, max_bytes: usize) -> Result<Vec<SplitPiece>, ComposeError> {
    if uses_hop_slots(p) {
        return Err(ComposeError::HopAddressed);
    }
    let whole = stack_program_bytes(p, hops);
    if whole <= max_bytes {
        let mut single = p.clone();
        single.memory.resize(whole - encoded_len(p.insn_count(), 0), 0);
        return Ok(alloc::vec![SplitPiece { first_hop: 0, hops, program: single }]);
    }
    let n = p.insn_count();
    if n >= MAX_INSTRUCTIONS {
        return Err(ComposeError::TooManyInstructions(n));
    }
    let per_hop = pushes(p) * WORD_BYTES;
    let fixed = encoded_len(n + 1, GATE_BYTES + usize::from(p.header.sp));
    let fit = if per_hop == 0 { hops.max(1) } else { max_bytes.saturating_sub(fixed) / per_hop };
    if fixed > max_bytes || fit == 0 {
        return Err(ComposeError::Unsplittable { need: fixed + per_hop, budget: max_bytes });
    }
    let cap = 1usize << (usize::BITS - 1 - fit.leading_zeros());
    let hop_index = Address::new(Namespace::PacketMetadata, metadata_field::HOP_INDEX);
    let mut out = Vec::new();
    let mut start = 0;
    while start < hops {
        let mut size = cap;
        while size > 1 && (start % size != 0 || size > hops - start) {
            size /= 2;
        }
        let mut payload = p.clone();
        payload.memory.resize(usize::from(p.header.sp) + per_hop * size, 0);
        let mask = !(size as u32 - 1);
        let program = gated(hop_index, &payload, mask, start as u32)?;
        out.push(SplitPiece { first_hop: start, hops: size, program });
        start += size;
    }
    Ok(out)
}

/// Stacked words from the records of split pieces, in hop order.
pub fn join_split_records(records: &[ExecutedTppRecord]) -> Vec<u16> {
    records.iter().flat_map(|r| r.stack_words().get(GATE_WORDS..).unwrap_or(&[]).iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn three_push() -> TppProgram {
        assemble("PUSH [Switch:ID]\nPUSH [PacketMetadata:OutputPort]\nPUSH [Queue:QueueOccupancy]\n").unwrap()
    }

    #[test]
    fn split_twenty_hops() {
        let p = three_push();
        assert_eq!(stack_program_bytes(&p, 17), 126);
        let pieces = split_large(&p, 20, 128).unwrap();
        assert!(pieces.len() >= 2);
        let mut next = 0;
        for piece in &pieces {
            assert_eq!(piece.first_hop, next);
            assert!(piece.program.encoded_len() <= 128);
            next += piece.hops;
        }
        assert_eq!(next, 20);
    }

    #[test]
    fn split_identity_and_unsplittable() {
        let p = three_push();
        let one = split_large(&p, 3, 1500).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].program.instructions, p.instructions);
        assert!(matches!(split_large(&p, 20, 40), Err(ComposeError::Unsplittable { .. })));
    }

    #[test]
    fn targeted_budget() {
        let p = assemble("PUSH [Switch:ID]\n").unwrap();
        let t = targeted(&p, 7).unwrap();
        assert_eq!(t.insn_count(), 2);
        assert_eq!(t.header.sp, 8);
        assert_eq!(&t.words()[..4], &[0xFFFF, 0xFFFF, 0, 7]);
        let five = assemble("PUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]\n").unwrap();
        assert_eq!(targeted(&five, 1), Err(ComposeError::TooManyInstructions(5)));
    }
}
