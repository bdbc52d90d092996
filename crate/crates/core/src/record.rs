// SPDX-License-Identifier: Apache-2.0

//! Fully executed TPPs as seen by the end-host.

use alloc::vec::Vec;

use crate::program::{Flags, TppProgram, WORD_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutedTppRecord {
    /// IPv4 address of the host that built the TPP.
    pub origin: u32,
    pub receive_time_ns: u64,
    pub session_id: u16,
    /// Hops the TPP executed at: the header's hop index at receipt.
    pub hop_count: u8,
    pub hop_size_words: u8,
    /// Packet memory as words.
    pub words: Vec<u16>,
    pub flags: Flags,
    pub sp: u16,
}

impl ExecutedTppRecord {
    pub fn from_tpp(p: &TppProgram, origin: u32, receive_time_ns: u64) -> ExecutedTppRecord {
        ExecutedTppRecord {
            origin,
            receive_time_ns,
            session_id: p.header.session_id,
            hop_count: p.header.hop_index,
            hop_size_words: p.header.hop_size_words,
            words: p.words(),
            flags: p.header.flags,
            sp: p.header.sp,
        }
    }

    /// Hops whose slots fit the allocated memory.
    pub fn allocated_hops(&self) -> usize {
        match usize::from(self.hop_size_words) {
            0 => 0,
            h => self.words.len() / h,
        }
    }

    /// True when the TPP visited more hops than it had room for.
    pub fn truncated(&self) -> bool {
        usize::from(self.hop_count) > self.allocated_hops()
    }

    /// Word slots of hop `h` (0-based) under hop addressing.
    pub fn hop(&self, h: usize) -> Option<&[u16]> {
        let n = usize::from(self.hop_size_words);
        if n == 0 || h >= usize::from(self.hop_count) {
            return None;
        }
        self.words.get(h * n..(h + 1) * n)
    }

    /// Per-hop slots for every executed hop that fit in memory.
    pub fn hops(&self) -> Vec<&[u16]> {
        (0..usize::from(self.hop_count)).map_while(|h| self.hop(h)).collect()
    }

    /// Words pushed so far, in push order.
    pub fn stack_words(&self) -> &[u16] {
        let n = (usize::from(self.sp) / WORD_BYTES).min(self.words.len());
        &self.words[..n]
    }

    /// The record as it stood after its first `hops` hops, for a TPP that kept
    /// executing after it was echoed. `stack_words_per_hop` is how many words
    /// each hop pushes (0 for hop-addressed programs).
    pub fn forward_part(&self, hops: u8, stack_words_per_hop: usize) -> ExecutedTppRecord {
        let mut out = self.clone();
        out.hop_count = self.hop_count.min(hops);
        let sp = usize::from(out.hop_count) * stack_words_per_hop * WORD_BYTES;
        out.sp = self.sp.min(sp as u16);
        out
    }
}
