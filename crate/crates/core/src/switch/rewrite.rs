// SPDX-License-Identifier: Apache-2.0

//! PUSH/POP to LOAD/STORE conversion.

use crate::analysis::stack_slots;
use crate::isa::{Instruction, MAX_HOP_OFFSET};
use crate::program::{TppProgram, WORD_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    /// The stack slot of instruction `index` lies outside packet memory or
    /// cannot be named hop-relatively.
    #[error("instruction {index}: stack slot outside addressable packet memory")]
    MemoryOverflow { index: usize },
}

/// Binds every PUSH/POP to its stack slot and turns it into a LOAD/STORE on the
/// equivalent hop-relative offset. The header's stack pointer is set to where
/// the stack ends after all stack instructions.
pub fn rewrite_push_pop(p: &TppProgram) -> Result<TppProgram, RewriteError> {
    let slots = stack_slots(p);
    let base = p.header.hop_base();
    let mut out = p.clone();
    for (index, insn) in p.instructions.iter().enumerate() {
        if !matches!(insn, Instruction::Push { .. } | Instruction::Pop { .. }) {
            continue;
        }
        let offset = slots[index]
            .0
            .filter(|s| *s >= base && (s - base) % WORD_BYTES == 0)
            .map(|s| (s - base) / WORD_BYTES)
            .filter(|o| *o <= usize::from(MAX_HOP_OFFSET))
            .ok_or(RewriteError::MemoryOverflow { index })? as u8;
        out.instructions[index] = match *insn {
            Instruction::Push { addr } => Instruction::Load { addr, slot: offset },
            Instruction::Pop { addr } => Instruction::Store { addr, slot: offset },
            other => other,
        };
    }
    if let Some((_, sp)) = slots.last() {
        out.header.sp = *sp as u16;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    #[test]
    fn listing_example() {
        let p = assemble(".hop_size 3\nPUSH [PacketMetadata:OutputPort]\nPUSH [PacketMetadata:InputPort]\nPUSH [Stage1:Reg1]\nPOP [Stage3:Reg3]").unwrap();
        let q = rewrite_push_pop(&p).unwrap();
        let expected = assemble(".hop_size 3\nLOAD [PacketMetadata:OutputPort], [Packet:Hop[0]]\nLOAD [PacketMetadata:InputPort], [Packet:Hop[1]]\nLOAD [Stage1:Reg1], [Packet:Hop[2]]\nSTORE [Stage3:Reg3], [Packet:Hop[2]]").unwrap();
        assert_eq!(q.instructions, expected.instructions);
        assert_eq!(q.header.sp, 4);
    }

    #[test]
    fn identity_without_stack_instructions() {
        let p = assemble("LOAD [Switch:ID], [Packet:Hop[0]]").unwrap();
        assert_eq!(rewrite_push_pop(&p).unwrap(), p);
    }

    #[test]
    fn fourth_push_overflows_one_hop() {
        let three = assemble(".hop_size 3\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]").unwrap();
        let q = rewrite_push_pop(&three).unwrap();
        let slots: alloc::vec::Vec<u8> = q
            .instructions
            .iter()
            .map(|i| match i {
                Instruction::Load { slot, .. } => *slot,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(slots, [0, 1, 2]);
        let four = assemble(".hop_size 3\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]").unwrap();
        assert_eq!(rewrite_push_pop(&four), Err(RewriteError::MemoryOverflow { index: 3 }));
    }
}
