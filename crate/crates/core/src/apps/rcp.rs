// SPDX-License-Identifier: Apache-2.0

//! RCP*: rate control computed at end-hosts from link state read and written
//! through TPPs.
//!
//! Every link keeps a version in `[Link:AppSpecific_0]` and its fair rate in
//! `[Link:AppSpecific_1]` (units of capacity / 65535). A flow collects link
//! samples, computes a new rate per link with the RCP control law, and
//! publishes it with a versioned CSTORE so concurrent updaters cannot lose
//! updates.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::asm::assemble;
use crate::isa::Instruction;
use crate::memmap::{resolve, Address};
use crate::program::TppProgram;
use crate::record::ExecutedTppRecord;
use crate::switch::state::{CELL_BYTES, UTILIZATION_SCALE};

pub const PHASE1_SOURCE: &str = "\
PUSH [Switch:SwitchID]
PUSH [Link:QueueSize]
PUSH [Link:RX-Utilization]
PUSH [Link:AppSpecific_0] # version
PUSH [Link:AppSpecific_1] # fair rate
";

pub const PHASE3_SOURCE: &str = "\
CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]
STORE [Link:AppSpecific_1], [Packet:Hop[2]]
";

pub const PHASE1_WORDS_PER_HOP: usize = 5;
pub const PHASE3_WORDS_PER_HOP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    /// Max-min fairness.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RcpError {
    #[error("no links on the path")]
    EmptyPath,
    #[error("no link samples fresher than the update period")]
    StaleSamples,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcpParams {
    pub a: f64,
    pub b: f64,
    /// Update period, seconds.
    pub t: f64,
    /// Rate floor, bits/s.
    pub r_min: f64,
    pub alpha: Alpha,
}

impl Default for RcpParams {
    fn default() -> Self {
        RcpParams { a: 0.5, b: 0.25, t: 0.010, r_min: 100_000.0, alpha: Alpha::Infinite }
    }
}

/// `R(t+T) = R(t) (1 - (T/d) (a (y - C) + b q / d) / C)`, clamped to `[r_min, C]`.
///
/// Rates in bits/s, `q` in bytes, `d` and `t` in seconds.
#[allow(clippy::too_many_arguments)]
pub fn rcp_compute_rate(r: f64, c: f64, y: f64, q_bytes: f64, d: f64, t: f64, a: f64, b: f64, r_min: f64) -> f64 {
    let q_bits = q_bytes * 8.0;
    let next = r * (1.0 - (t / d) * (a * (y - c) + b * q_bits / d) / c);
    if next.is_nan() {
        return r_min;
    }
    next.clamp(r_min.min(c), c)
}

/// `(sum R_i^-alpha)^(-1/alpha)`, or the minimum for infinite alpha.
pub fn alpha_aggregate(rates: &[f64], alpha: Alpha) -> Result<f64, RcpError> {
    if rates.is_empty() {
        return Err(RcpError::EmptyPath);
    }
    Ok(match alpha {
        Alpha::Infinite => rates.iter().copied().fold(f64::INFINITY, f64::min),
        Alpha::Finite(a) => {
            // Scaled by the minimum so large alpha neither underflows nor overflows.
            let m = rates.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = rates.iter().map(|r| libm::pow(*r / m, -a)).sum();
            m * libm::pow(s, -1.0 / a)
        }
    })
}

pub fn rate_to_word(rate: f64, capacity: f64) -> u16 {
    let w = libm::round(rate / capacity * UTILIZATION_SCALE as f64);
    w.clamp(0.0, UTILIZATION_SCALE as f64) as u16
}

pub fn word_to_rate(word: u16, capacity: f64) -> f64 {
    f64::from(word) / UTILIZATION_SCALE as f64 * capacity
}

pub fn phase1_program(hops: usize, session: u16) -> TppProgram {
    let mut p = assemble(PHASE1_SOURCE).expect("phase-1 listing assembles");
    p.memory = alloc::vec![0; hops * PHASE1_WORDS_PER_HOP * 2];
    p.header.session_id = session;
    p
}

/// Pre-slot value for a hop that is not being updated. Versions never take it.
pub const NO_UPDATE: u16 = 0xFFFF;

/// The version that follows `v`, skipping `NO_UPDATE`.
pub fn next_version(v: u16) -> u16 {
    match v.wrapping_add(1) {
        NO_UPDATE => 0,
        n => n,
    }
}

/// One hop's update: CSTORE the version from `version` to `version + 1`, then store `rate_word`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopUpdate {
    pub version: u16,
    pub rate_word: u16,
}

/// Phase-3 TPP with per-hop memory `(V, V+1, R_new)`.
///
/// Hops without an update get `NO_UPDATE` as their expected version, so the
/// CSTORE fails there and suppresses the STORE.
pub fn rcp_update_program(updates: &[Option<HopUpdate>], session: u16) -> Result<TppProgram, RcpError> {
    if updates.iter().all(Option::is_none) {
        return Err(RcpError::EmptyPath);
    }
    let mut p = assemble(PHASE3_SOURCE).expect("phase-3 listing assembles");
    p.memory = alloc::vec![0; updates.len() * PHASE3_WORDS_PER_HOP * 2];
    p.header.session_id = session;
    for (h, u) in updates.iter().enumerate() {
        let base = h * PHASE3_WORDS_PER_HOP * 2;
        let (pre, post, rate) = match u {
            Some(u) => (u.version, next_version(u.version), u.rate_word),
            None => (NO_UPDATE, NO_UPDATE, 0),
        };
        p.write_word(base, pre);
        p.write_word(base + 2, post);
        p.write_word(base + 4, rate);
    }
    Ok(p)
}

/// The link-state addresses RCP* reads and writes.
pub fn addresses() -> (Address, Address) {
    (resolve("[Link:AppSpecific_0]").unwrap(), resolve("[Link:AppSpecific_1]").unwrap())
}

/// One phase-1 observation of one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSample {
    pub time_ns: u64,
    pub switch_id: u16,
    pub qsize_cells: u16,
    pub utilization: u16,
    pub version: u16,
    pub rate_word: u16,
}

#[derive(Debug, Clone, Default)]
struct LinkTrack {
    samples: Vec<LinkSample>,
    /// When this flow first saw the link at its current version.
    version_seen: Option<(u16, u64)>,
    /// Last rate computed for this link, bits/s.
    computed: Option<f64>,
}

/// One flow's rate controller.
#[derive(Debug, Clone)]
pub struct RcpFlowState {
    pub params: RcpParams,
    /// Current sending rate, bits/s.
    pub rate: f64,
    /// Capacity of every link on the path, bits/s.
    pub capacity: f64,
    /// Smoothed RTT, seconds.
    pub rtt: Option<f64>,
    links: BTreeMap<usize, LinkTrack>,
    pub updates_sent: u64,
    pub updates_won: u64,
}

impl RcpFlowState {
    pub fn new(params: RcpParams, initial_rate: f64, capacity: f64) -> RcpFlowState {
        RcpFlowState {
            params,
            rate: initial_rate,
            capacity,
            rtt: None,
            links: BTreeMap::new(),
            updates_sent: 0,
            updates_won: 0,
        }
    }

    /// EWMA with gain 1/8.
    pub fn observe_rtt(&mut self, sample_s: f64) {
        self.rtt = Some(match self.rtt {
            None => sample_s,
            Some(d) => d + (sample_s - d) / 8.0,
        });
    }

    /// Ingests a returned phase-1 TPP. Hops whose egress link leads to a host are kept too.
    pub fn ingest_phase1(&mut self, rec: &ExecutedTppRecord, now_ns: u64) {
        let horizon = (self.params.t * 4.0 * 1e9) as u64;
        for (h, w) in rec.stack_words().chunks_exact(PHASE1_WORDS_PER_HOP).enumerate() {
            let s = LinkSample {
                time_ns: now_ns,
                switch_id: w[0],
                qsize_cells: w[1],
                utilization: w[2],
                version: w[3],
                rate_word: w[4],
            };
            let track = self.links.entry(h).or_default();
            match track.version_seen {
                Some((v, _)) if v == s.version => {}
                _ => track.version_seen = Some((s.version, now_ns)),
            }
            track.samples.push(s);
            track.samples.retain(|x| x.time_ns + horizon >= now_ns);
        }
    }

    fn link_rate_now(&self, track: &LinkTrack) -> Option<f64> {
        let last = track.samples.last()?;
        Some(if last.rate_word == 0 { self.rate } else { word_to_rate(last.rate_word, self.capacity) })
    }

    /// Recomputes the per-link rates and the flow's aggregate rate.
    ///
    /// Returns the phase-3 updates for links whose version has been stable
    /// for at least one period, or `StaleSamples` when nothing recent is known.
    pub fn plan_update(&mut self, now_ns: u64) -> Result<Vec<Option<HopUpdate>>, RcpError> {
        if self.links.is_empty() {
            return Err(RcpError::EmptyPath);
        }
        let t_ns = (self.params.t * 1e9) as u64;
        let d = self.rtt.unwrap_or(self.params.t).max(1e-6);
        let c = self.capacity;
        let mut updates = Vec::new();
        let mut any_fresh = false;
        let keys: Vec<usize> = self.links.keys().copied().collect();
        for h in keys {
            let track = &self.links[&h];
            let recent: Vec<&LinkSample> = track.samples.iter().filter(|s| s.time_ns + t_ns >= now_ns).collect();
            if recent.is_empty() {
                updates.push(None);
                continue;
            }
            any_fresh = true;
            let n = recent.len() as f64;
            let y = recent.iter().map(|s| f64::from(s.utilization)).sum::<f64>() / n / UTILIZATION_SCALE as f64 * c;
            let q = recent.iter().map(|s| f64::from(s.qsize_cells) * CELL_BYTES as f64).sum::<f64>() / n;
            let r = self.link_rate_now(track).unwrap_or(self.rate);
            let p = &self.params;
            let r_new = rcp_compute_rate(r, c, y, q, d, p.t, p.a, p.b, p.r_min);
            let last = **recent.last().unwrap();
            let settled = track.version_seen.is_some_and(|(v, since)| v == last.version && since + t_ns <= now_ns);
            let track = self.links.get_mut(&h).unwrap();
            track.computed = Some(r_new);
            updates.push(settled.then_some(HopUpdate { version: last.version, rate_word: rate_to_word(r_new, c) }));
        }
        if !any_fresh {
            return Err(RcpError::StaleSamples);
        }
        self.rate = self.aggregate_rate();
        Ok(updates)
    }

    /// The rate the flow should send at, from the links' published rates.
    ///
    /// Links whose rate sits at capacity do not constrain the flow and count
    /// as infinitely fast.
    pub fn aggregate_rate(&self) -> f64 {
        let c = self.capacity;
        let rates: Vec<f64> = self
            .links
            .values()
            .filter_map(|t| t.computed.or_else(|| self.link_rate_now(t)))
            .filter(|r| *r < c * 0.999)
            .collect();
        match alpha_aggregate(&rates, self.params.alpha) {
            Ok(r) => r.clamp(self.params.r_min.min(c), c),
            Err(_) => c,
        }
    }

    /// Hops whose CSTORE did not take: the returned pre-slot is not `V + 1`.
    pub fn ingest_phase3(&mut self, sent: &[Option<HopUpdate>], rec: &ExecutedTppRecord) -> Vec<usize> {
        let mut failed = Vec::new();
        for (h, u) in sent.iter().enumerate() {
            let Some(u) = u else { continue };
            self.updates_sent += 1;
            let pre = rec.words.get(h * PHASE3_WORDS_PER_HOP).copied();
            if pre == Some(next_version(u.version)) && h < usize::from(rec.hop_count) {
                self.updates_won += 1;
            } else {
                failed.push(h);
                if let Some(t) = self.links.get_mut(&h) {
                    t.version_seen = None;
                }
            }
        }
        failed
    }
}

/// Whether an instruction list is exactly the phase-3 listing.
pub fn is_phase3(insns: &[Instruction]) -> bool {
    let (v, r) = addresses();
    matches!(
        insns,
        [Instruction::Cstore { addr, pre: 0, post: 1 }, Instruction::Store { addr: a2, slot: 2 }] if *addr == v && *a2 == r
    )
}
