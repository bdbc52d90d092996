// SPDX-License-Identifier: Apache-2.0

//! TPP header, program container and the binary codec.
//!
//! Wire layout of the 12-byte header:
//!
//! ```text
//! byte 0      version (high nibble) | flags (low nibble)
//! byte 1      instruction count
//! byte 2      hop size, in 16-bit words
//! byte 3      hop index (the base of hop addressing)
//! bytes 4-5   stack pointer, byte offset into packet memory
//! bytes 6-7   packet memory length in bytes
//! bytes 8-9   session id
//! bytes 10-11 ones-complement checksum over header and instructions
//! ```
//!
//! The header is followed by `4 * count` instruction bytes and then packet memory.

use alloc::vec::Vec;

use crate::isa::{Instruction, InstructionError, INSTRUCTION_BYTES};

pub const HEADER_BYTES: usize = 12;
pub const MAX_INSTRUCTIONS: usize = 5;
pub const TPP_VERSION: u8 = 1;
pub const WORD_BYTES: usize = 2;

/// Header flag bits (4 bits on the wire).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Flags(pub u8);

impl Flags {
    /// An instruction touched nonexistent memory somewhere on the path.
    pub const EXEC_ERROR: u8 = 0b0001;
    /// A STORE/CSTORE was skipped because writes are disabled.
    pub const WRITE_SKIPPED: u8 = 0b0010;
    /// The TPP has been turned around by the receiving end-host.
    pub const ECHOED: u8 = 0b0100;

    pub fn contains(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn set(&mut self, bit: u8) {
        self.0 |= bit & 0x0F;
    }

    pub fn clear(&mut self, bit: u8) {
        self.0 &= !bit;
    }
}

/// Header fields that are not derived from the program body.
///
/// The instruction count, memory length and checksum are computed from the
/// program when encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct TppHeader {
    pub version: u8,
    pub flags: Flags,
    pub hop_size_words: u8,
    pub hop_index: u8,
    pub sp: u16,
    pub session_id: u16,
}

impl TppHeader {
    /// Byte offset of the current hop's first word.
    pub fn hop_base(&self) -> usize {
        usize::from(self.hop_index) * usize::from(self.hop_size_words) * WORD_BYTES
    }

    /// Byte offset of a hop-relative word.
    pub fn hop_slot(&self, offset: u8) -> usize {
        self.hop_base() + usize::from(offset) * WORD_BYTES
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TppProgram {
    pub header: TppHeader,
    pub instructions: Vec<Instruction>,
    pub memory: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("packet truncated: need {needed} bytes, have {have}")]
    TruncatedPacket { needed: usize, have: usize },
    #[error("unsupported TPP version {0}")]
    BadVersion(u8),
    #[error("checksum mismatch: header says {expected:#06x}, computed {computed:#06x}")]
    ChecksumMismatch { expected: u16, computed: u16 },
    #[error("{0} instructions exceed the limit of {MAX_INSTRUCTIONS}")]
    TooManyInstructions(usize),
    #[error("stack pointer {sp} outside packet memory of {mem_len} bytes")]
    StackPointerOutOfRange { sp: u16, mem_len: usize },
    #[error("packet memory of {0} bytes is too large")]
    MemoryTooLarge(usize),
    #[error("instruction {index}: {source}")]
    BadInstruction { index: usize, source: InstructionError },
}

/// Ones-complement checksum over big-endian 16-bit words.
pub fn ones_complement_checksum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in bytes.chunks(2) {
        let word = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from_be_bytes([chunk[0], 0])
        };
        sum += u32::from(word);
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

impl TppProgram {
    /// An empty program with `mem_len` zeroed bytes of packet memory.
    pub fn new(instructions: Vec<Instruction>, hop_size_words: u8, mem_len: usize) -> TppProgram {
        TppProgram {
            header: TppHeader { version: TPP_VERSION, hop_size_words, ..TppHeader::default() },
            instructions,
            memory: alloc::vec![0; mem_len],
        }
    }

    pub fn insn_count(&self) -> usize {
        self.instructions.len()
    }

    pub fn mem_len(&self) -> usize {
        self.memory.len()
    }

    /// Total encoded size: header, instructions and packet memory.
    pub fn encoded_len(&self) -> usize {
        encoded_len(self.insn_count(), self.mem_len())
    }

    pub fn read_word(&self, byte_offset: usize) -> Option<u16> {
        let b = self.memory.get(byte_offset..byte_offset + WORD_BYTES)?;
        Some(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn write_word(&mut self, byte_offset: usize, value: u16) -> bool {
        match self.memory.get_mut(byte_offset..byte_offset + WORD_BYTES) {
            Some(b) => {
                b.copy_from_slice(&value.to_be_bytes());
                true
            }
            None => false,
        }
    }

    /// Packet memory as 16-bit words (a trailing odd byte is dropped).
    pub fn words(&self) -> Vec<u16> {
        self.memory.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.insn_count() > MAX_INSTRUCTIONS {
            return Err(CodecError::TooManyInstructions(self.insn_count()));
        }
        if self.mem_len() > usize::from(u16::MAX) {
            return Err(CodecError::MemoryTooLarge(self.mem_len()));
        }
        if usize::from(self.header.sp) > self.mem_len() {
            return Err(CodecError::StackPointerOutOfRange { sp: self.header.sp, mem_len: self.mem_len() });
        }
        for (index, insn) in self.instructions.iter().enumerate() {
            insn.validate().map_err(|source| CodecError::BadInstruction { index, source })?;
        }
        Ok(())
    }

    fn header_bytes(&self) -> [u8; HEADER_BYTES] {
        let h = &self.header;
        let mut out = [0u8; HEADER_BYTES];
        out[0] = (h.version << 4) | (h.flags.0 & 0x0F);
        out[1] = self.insn_count() as u8;
        out[2] = h.hop_size_words;
        out[3] = h.hop_index;
        out[4..6].copy_from_slice(&h.sp.to_be_bytes());
        out[6..8].copy_from_slice(&(self.mem_len() as u16).to_be_bytes());
        out[8..10].copy_from_slice(&h.session_id.to_be_bytes());
        out
    }

    /// Encodes header, instructions and memory; the checksum is recomputed.
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header_bytes());
        for insn in &self.instructions {
            out.extend_from_slice(&insn.encode());
        }
        let checksum = ones_complement_checksum(&out);
        out[10..12].copy_from_slice(&checksum.to_be_bytes());
        out.extend_from_slice(&self.memory);
        Ok(out)
    }

    /// Decodes a TPP starting at the first byte of `bytes`.
    ///
    /// Returns the program and the number of bytes it occupied.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(TppProgram, usize), CodecError> {
        if bytes.len() < HEADER_BYTES {
            return Err(CodecError::TruncatedPacket { needed: HEADER_BYTES, have: bytes.len() });
        }
        let version = bytes[0] >> 4;
        if version != TPP_VERSION {
            return Err(CodecError::BadVersion(version));
        }
        let count = usize::from(bytes[1]);
        if count > MAX_INSTRUCTIONS {
            return Err(CodecError::TooManyInstructions(count));
        }
        let mem_len = usize::from(u16::from_be_bytes([bytes[6], bytes[7]]));
        let total = encoded_len(count, mem_len);
        if bytes.len() < total {
            return Err(CodecError::TruncatedPacket { needed: total, have: bytes.len() });
        }
        let code_end = HEADER_BYTES + count * INSTRUCTION_BYTES;
        let expected = u16::from_be_bytes([bytes[10], bytes[11]]);
        let mut covered = [0u8; HEADER_BYTES + MAX_INSTRUCTIONS * INSTRUCTION_BYTES];
        covered[..code_end].copy_from_slice(&bytes[..code_end]);
        covered[10] = 0;
        covered[11] = 0;
        let computed = ones_complement_checksum(&covered[..code_end]);
        if computed != expected {
            return Err(CodecError::ChecksumMismatch { expected, computed });
        }
        let header = TppHeader {
            version,
            flags: Flags(bytes[0] & 0x0F),
            hop_size_words: bytes[2],
            hop_index: bytes[3],
            sp: u16::from_be_bytes([bytes[4], bytes[5]]),
            session_id: u16::from_be_bytes([bytes[8], bytes[9]]),
        };
        let mut instructions = Vec::with_capacity(count);
        for index in 0..count {
            let at = HEADER_BYTES + index * INSTRUCTION_BYTES;
            let raw = [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]];
            let insn = Instruction::decode(raw).map_err(|source| CodecError::BadInstruction { index, source })?;
            instructions.push(insn);
        }
        let program = TppProgram { header, instructions, memory: bytes[code_end..total].to_vec() };
        if usize::from(program.header.sp) > mem_len {
            return Err(CodecError::StackPointerOutOfRange { sp: program.header.sp, mem_len });
        }
        Ok((program, total))
    }

    /// Decodes a TPP that occupies all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<TppProgram, CodecError> {
        let (program, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            // Trailing bytes belong to an encapsulated payload; callers that
            // expect one use `decode_prefix`.
            return Err(CodecError::TruncatedPacket { needed: used, have: bytes.len() });
        }
        Ok(program)
    }
}

/// `12 + 4 * insn_count + mem_len`.
pub const fn encoded_len(insn_count: usize, mem_len: usize) -> usize {
    HEADER_BYTES + insn_count * INSTRUCTION_BYTES + mem_len
}
