// SPDX-License-Identifier: Apache-2.0

//! Instruction set and the 4-byte instruction encoding.
//!
//! ```text
//! byte 0     opcode
//! bytes 1-2  switch address, big-endian
//! byte 3     LOAD/STORE/CEXEC: bit 7 reserved (0), bits 0-6 hop-relative word offset
//!            CSTORE:           (pre << 4) | post, hop-relative word offsets
//!            PUSH/POP:         0
//! ```

use core::fmt;

use crate::memmap::Address;

pub const INSTRUCTION_BYTES: usize = 4;
/// Largest hop-relative word offset a LOAD/STORE/CEXEC can name.
pub const MAX_HOP_OFFSET: u8 = 0x7F;
/// Largest hop-relative word offset a CSTORE operand can name.
pub const MAX_CSTORE_OFFSET: u8 = 0x0F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Load = 1,
    Store = 2,
    Push = 3,
    Pop = 4,
    Cstore = 5,
    Cexec = 6,
}

impl Opcode {
    pub fn from_byte(b: u8) -> Option<Opcode> {
        Some(match b {
            1 => Opcode::Load,
            2 => Opcode::Store,
            3 => Opcode::Push,
            4 => Opcode::Pop,
            5 => Opcode::Cstore,
            6 => Opcode::Cexec,
            _ => return None,
        })
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Push => "PUSH",
            Opcode::Pop => "POP",
            Opcode::Cstore => "CSTORE",
            Opcode::Cexec => "CEXEC",
        }
    }

    pub fn parse(s: &str) -> Option<Opcode> {
        [Opcode::Load, Opcode::Store, Opcode::Push, Opcode::Pop, Opcode::Cstore, Opcode::Cexec]
            .into_iter()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }

    /// STORE, POP and CSTORE modify switch memory.
    pub fn writes_switch(self) -> bool {
        matches!(self, Opcode::Store | Opcode::Pop | Opcode::Cstore)
    }

    /// Instructions that disabling writes turns into no-ops.
    pub fn is_store(self) -> bool {
        matches!(self, Opcode::Store | Opcode::Cstore)
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, Opcode::Cstore | Opcode::Cexec)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// A decoded instruction. Packet operands are hop-relative word offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    /// Switch word -> packet hop slot.
    Load { addr: Address, slot: u8 },
    /// Packet hop slot -> switch word.
    Store { addr: Address, slot: u8 },
    /// Switch word -> packet memory at sp; sp += 2.
    Push { addr: Address },
    /// sp -= 2; packet memory at sp -> switch word.
    Pop { addr: Address },
    /// Compare-and-swap on `addr` against hop slot `pre`, new value from hop slot `post`.
    Cstore { addr: Address, pre: u8, post: u8 },
    /// Gate on `(switch word & mask) == value`, mask/value in the 4-word block at hop slot `block`.
    Cexec { addr: Address, block: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstructionError {
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("reserved operand bits set in {0:#04x}")]
    ReservedBits(u8),
    #[error("hop offset {0} does not fit the operand field")]
    OffsetOutOfRange(u8),
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Load { .. } => Opcode::Load,
            Instruction::Store { .. } => Opcode::Store,
            Instruction::Push { .. } => Opcode::Push,
            Instruction::Pop { .. } => Opcode::Pop,
            Instruction::Cstore { .. } => Opcode::Cstore,
            Instruction::Cexec { .. } => Opcode::Cexec,
        }
    }

    pub fn address(&self) -> Address {
        match *self {
            Instruction::Load { addr, .. }
            | Instruction::Store { addr, .. }
            | Instruction::Push { addr }
            | Instruction::Pop { addr }
            | Instruction::Cstore { addr, .. }
            | Instruction::Cexec { addr, .. } => addr,
        }
    }

    /// Checks operand ranges so that `encode` is lossless.
    pub fn validate(&self) -> Result<(), InstructionError> {
        match *self {
            Instruction::Load { slot, .. }
            | Instruction::Store { slot, .. }
            | Instruction::Cexec { block: slot, .. }
                if slot > MAX_HOP_OFFSET =>
            {
                Err(InstructionError::OffsetOutOfRange(slot))
            }
            Instruction::Cstore { pre, post, .. } if pre > MAX_CSTORE_OFFSET || post > MAX_CSTORE_OFFSET => {
                Err(InstructionError::OffsetOutOfRange(pre.max(post)))
            }
            _ => Ok(()),
        }
    }

    pub fn encode(&self) -> [u8; INSTRUCTION_BYTES] {
        let [hi, lo] = self.address().0.to_be_bytes();
        let operand = match *self {
            Instruction::Load { slot, .. } | Instruction::Store { slot, .. } => slot & MAX_HOP_OFFSET,
            Instruction::Cexec { block, .. } => block & MAX_HOP_OFFSET,
            Instruction::Push { .. } | Instruction::Pop { .. } => 0,
            Instruction::Cstore { pre, post, .. } => (pre << 4) | (post & 0x0F),
        };
        [self.opcode() as u8, hi, lo, operand]
    }

    pub fn decode(bytes: [u8; INSTRUCTION_BYTES]) -> Result<Instruction, InstructionError> {
        let op = Opcode::from_byte(bytes[0]).ok_or(InstructionError::UnknownOpcode(bytes[0]))?;
        let addr = Address(u16::from_be_bytes([bytes[1], bytes[2]]));
        let operand = bytes[3];
        let hop_slot = || {
            if operand & 0x80 != 0 {
                Err(InstructionError::ReservedBits(operand))
            } else {
                Ok(operand)
            }
        };
        Ok(match op {
            Opcode::Load => Instruction::Load { addr, slot: hop_slot()? },
            Opcode::Store => Instruction::Store { addr, slot: hop_slot()? },
            Opcode::Cexec => Instruction::Cexec { addr, block: hop_slot()? },
            Opcode::Push | Opcode::Pop if operand != 0 => return Err(InstructionError::ReservedBits(operand)),
            Opcode::Push => Instruction::Push { addr },
            Opcode::Pop => Instruction::Pop { addr },
            Opcode::Cstore => Instruction::Cstore { addr, pre: operand >> 4, post: operand & 0x0F },
        })
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instruction::Load { addr, slot } => write!(f, "LOAD {addr}, [Packet:Hop[{slot}]]"),
            Instruction::Store { addr, slot } => write!(f, "STORE {addr}, [Packet:Hop[{slot}]]"),
            Instruction::Push { addr } => write!(f, "PUSH {addr}"),
            Instruction::Pop { addr } => write!(f, "POP {addr}"),
            Instruction::Cstore { addr, pre, post } => {
                write!(f, "CSTORE {addr}, [Packet:Hop[{pre}]], [Packet:Hop[{post}]]")
            }
            Instruction::Cexec { addr, block } => write!(f, "CEXEC {addr}, [Packet:Hop[{block}]]"),
        }
    }
}
