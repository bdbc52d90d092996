// SPDX-License-Identifier: Apache-2.0

//! Bitmap (linear counting) sketch of distinct destinations per link.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::record::ExecutedTppRecord;

pub const PROBE_SOURCE: &str = "\
PUSH [Switch:ID]
PUSH [PacketMetadata:OutputPort]
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SketchError {
    #[error("every bit is set; the estimate is unbounded")]
    Saturated,
    #[error("sketches differ in size or seed")]
    Incompatible,
}

/// 64-bit finalizer from MurmurHash3.
pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

pub fn seeded_hash(item: u64, seed: u64) -> u64 {
    fmix64(item ^ fmix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitmapSketch {
    b: usize,
    seed: u64,
    words: Vec<u64>,
}

impl BitmapSketch {
    pub fn new(b: usize, seed: u64) -> BitmapSketch {
        let b = b.max(1);
        BitmapSketch { b, seed, words: alloc::vec![0; b.div_ceil(64)] }
    }

    pub fn bits(&self) -> usize {
        self.b
    }

    pub fn insert(&mut self, item: u64) {
        let i = (seeded_hash(item, self.seed) % self.b as u64) as usize;
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn zeros(&self) -> usize {
        self.b - self.words.iter().map(|w| w.count_ones() as usize).sum::<usize>()
    }

    /// `b ln(b / z)`.
    pub fn estimate(&self) -> Result<f64, SketchError> {
        sketch_estimate(self.b, self.zeros())
    }

    /// Bitwise OR.
    pub fn merge(&mut self, other: &BitmapSketch) -> Result<(), SketchError> {
        if self.b != other.b || self.seed != other.seed {
            return Err(SketchError::Incompatible);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
        Ok(())
    }
}

pub fn sketch_estimate(b: usize, zeros: usize) -> Result<f64, SketchError> {
    if zeros == 0 {
        return Err(SketchError::Saturated);
    }
    let b = b as f64;
    Ok(b * libm::log(b / zeros as f64))
}

/// One sketch per (switch id, output port).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchBank {
    pub b: usize,
    pub seed: u64,
    pub sketches: BTreeMap<(u16, u16), BitmapSketch>,
}

impl SketchBank {
    pub fn new(b: usize, seed: u64) -> SketchBank {
        SketchBank { b, seed, sketches: BTreeMap::new() }
    }

    /// Sets the destination's bit in every (switch, port) the record traversed.
    pub fn update(&mut self, rec: &ExecutedTppRecord, dest_ip: u32) {
        for w in rec.stack_words().chunks_exact(2) {
            let (b, seed) = (self.b, self.seed);
            self.sketches.entry((w[0], w[1])).or_insert_with(|| BitmapSketch::new(b, seed)).insert(u64::from(dest_ip));
        }
    }

    pub fn merge(&mut self, other: &SketchBank) -> Result<(), SketchError> {
        for (k, s) in &other.sketches {
            match self.sketches.get_mut(k) {
                Some(mine) => mine.merge(s)?,
                None => {
                    self.sketches.insert(*k, s.clone());
                }
            }
        }
        Ok(())
    }
}
