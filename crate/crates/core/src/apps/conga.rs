// SPDX-License-Identifier: Apache-2.0

//! CONGA*: flowlet load balancing driven by path congestion probes.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::switch::state::UTILIZATION_SCALE;

pub const PROBE_SOURCE: &str = "\
PUSH [Link:ID]
PUSH [Link:TX-Utilization]
PUSH [Link:TX-Bytes]
";

pub const PROBE_WORDS_PER_HOP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    #[default]
    Max,
    Sum,
}

/// Utilization of one hop's egress link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopUtilization {
    pub link_id: u16,
    /// Normalized to `[0, 1]`.
    pub utilization: f64,
    /// False for the last hop, whose egress link leads to a host.
    pub switch_to_switch: bool,
}

impl HopUtilization {
    pub fn from_word(link_id: u16, word: u16, switch_to_switch: bool) -> HopUtilization {
        HopUtilization { link_id, utilization: f64::from(word) / UTILIZATION_SCALE as f64, switch_to_switch }
    }
}

/// Max or sum of switch-to-switch utilization; 0 with no samples.
pub fn conga_metric(hops: &[HopUtilization], mode: MetricMode) -> f64 {
    let it = hops.iter().filter(|h| h.switch_to_switch).map(|h| h.utilization);
    match mode {
        MetricMode::Max => it.fold(0.0, f64::max),
        MetricMode::Sum => it.sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flowlet {
    pub path: u16,
    pub last_seen_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongaPathTable {
    pub mode: MetricMode,
    /// Metric per path id; unprobed paths stay at 0.
    pub metrics: Vec<f64>,
    pub updated_ns: Vec<Option<u64>>,
    pub gap_ns: u64,
    pub flowlets: BTreeMap<u64, Flowlet>,
}

impl CongaPathTable {
    pub fn new(paths: usize, mode: MetricMode, gap_ns: u64) -> CongaPathTable {
        CongaPathTable {
            mode,
            metrics: alloc::vec![0.0; paths.max(1)],
            updated_ns: alloc::vec![None; paths.max(1)],
            gap_ns,
            flowlets: BTreeMap::new(),
        }
    }

    /// Records a probe result for `path`.
    pub fn update(&mut self, path: u16, hops: &[HopUtilization], now_ns: u64) {
        let i = usize::from(path);
        if i < self.metrics.len() {
            self.metrics[i] = conga_metric(hops, self.mode);
            self.updated_ns[i] = Some(now_ns);
        }
    }

    /// Least congested path; ties go to the lowest id.
    pub fn argmin(&self) -> u16 {
        let mut best = 0;
        for (i, m) in self.metrics.iter().enumerate() {
            if *m < self.metrics[best] {
                best = i;
            }
        }
        best as u16
    }
}

/// Path for a packet of flow `key` at `now_ns`: a new flowlet starts on the
/// least congested path after an idle gap longer than the threshold.
pub fn conga_select(key: u64, now_ns: u64, table: &mut CongaPathTable) -> u16 {
    let gap = table.gap_ns;
    let best = table.argmin();
    let f = table.flowlets.entry(key).or_insert(Flowlet { path: best, last_seen_ns: now_ns });
    if now_ns.saturating_sub(f.last_seen_ns) > gap {
        f.path = best;
    }
    f.last_seen_ns = now_ns;
    f.path
}
