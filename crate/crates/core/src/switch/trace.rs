// SPDX-License-Identifier: Apache-2.0

//! Per-instruction execution records.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::isa::Instruction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    NonexistentMemory,
    CondFailed,
    WriteDisabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Disposition {
    Executed,
    Skipped(SkipReason),
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Disposition::Executed => "executed",
            Disposition::Skipped(SkipReason::NonexistentMemory) => "skipped:nonexistent-memory",
            Disposition::Skipped(SkipReason::CondFailed) => "skipped:cond-failed",
            Disposition::Skipped(SkipReason::WriteDisabled) => "skipped:write-disabled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsnRecord {
    pub index: usize,
    pub insn: Instruction,
    pub stage: u8,
    /// Packet memory byte offset the instruction used.
    pub slot: Option<usize>,
    /// Switch value read.
    pub read: Option<u16>,
    /// Value written (to the switch for STORE/POP, to the packet otherwise).
    pub written: Option<u16>,
    /// Outcome of a conditional.
    pub cond: Option<bool>,
    pub disposition: Disposition,
}

impl InsnRecord {
    pub fn new(index: usize, insn: Instruction, stage: u8) -> InsnRecord {
        InsnRecord { index, insn, stage, slot: None, read: None, written: None, cond: None, disposition: Disposition::Executed }
    }

    pub fn executed(&self) -> bool {
        self.disposition == Disposition::Executed
    }
}

/// What one switch did with one TPP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub switch_id: u16,
    /// Hop index the TPP carried when it arrived.
    pub hop_index: u8,
    pub records: Vec<InsnRecord>,
}

fn opt(v: Option<impl fmt::LowerHex>) -> String {
    match v {
        Some(v) => alloc::format!("{v:#06x}"),
        None => String::from("-"),
    }
}

impl ExecutionTrace {
    /// One line per instruction: hop, stage, opcode, operands, values, disposition.
    pub fn to_log(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "sw={} hop={} stage={} insn={} {} slot={} read={} written={} cond={} {}",
                self.switch_id,
                self.hop_index,
                r.stage,
                r.index,
                r.insn,
                r.slot.map_or(String::from("-"), |x| alloc::format!("{x}")),
                opt(r.read),
                opt(r.written),
                r.cond.map_or("-", |c| if c { "true" } else { "false" }),
                r.disposition,
            );
        }
        s
    }
}
