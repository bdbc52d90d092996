// SPDX-License-Identifier: Apache-2.0

//! Per-packet queue occupancy from the micro-burst TPP.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::record::ExecutedTppRecord;

pub const MICROBURST_SOURCE: &str = "\
PUSH [Switch:SwitchID]
PUSH [PacketMetadata:OutputPort]
PUSH [Queue:QueueOccupancy]
";

pub const WORDS_PER_HOP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QueueSample {
    pub time_ns: u64,
    pub qsize: u16,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MicroburstReport {
    /// Raw samples keyed by (switch, port), in arrival order.
    pub series: BTreeMap<(u16, u16), Vec<QueueSample>>,
    /// Empirical CDF per queue: (occupancy, fraction of samples at or below it).
    pub cdf: BTreeMap<(u16, u16), Vec<(u16, f64)>>,
    pub malformed: usize,
}

impl MicroburstReport {
    /// Fraction of samples across all queues that saw an empty queue.
    pub fn empty_fraction(&self) -> f64 {
        let total: usize = self.series.values().map(Vec::len).sum();
        if total == 0 {
            return 1.0;
        }
        let zeros: usize = self.series.values().flatten().filter(|s| s.qsize == 0).count();
        zeros as f64 / total as f64
    }
}

fn cdf(samples: &[QueueSample]) -> Vec<(u16, f64)> {
    let mut v: Vec<u16> = samples.iter().map(|s| s.qsize).collect();
    v.sort_unstable();
    let n = v.len() as f64;
    let mut out: Vec<(u16, f64)> = Vec::new();
    for (i, q) in v.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == *q => last.1 = (i + 1) as f64 / n,
            _ => out.push((*q, (i + 1) as f64 / n)),
        }
    }
    out
}

pub fn microburst_ingest<'a>(records: impl IntoIterator<Item = &'a ExecutedTppRecord>) -> MicroburstReport {
    let mut r = MicroburstReport::default();
    for rec in records {
        let words = rec.stack_words();
        if words.len() % WORDS_PER_HOP != 0 || words.len() / WORDS_PER_HOP != usize::from(rec.hop_count) {
            r.malformed += 1;
            continue;
        }
        for w in words.chunks_exact(WORDS_PER_HOP) {
            r.series.entry((w[0], w[1])).or_default().push(QueueSample { time_ns: rec.receive_time_ns, qsize: w[2] });
        }
    }
    r.cdf = r.series.iter().map(|(k, s)| (*k, cdf(s))).collect();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::Flags;

    fn rec(words: &[u16], t: u64) -> ExecutedTppRecord {
        ExecutedTppRecord {
            origin: 0,
            receive_time_ns: t,
            session_id: 0,
            hop_count: (words.len() / 3) as u8,
            hop_size_words: 3,
            words: words.to_vec(),
            flags: Flags::default(),
            sp: (words.len() * 2) as u16,
        }
    }

    #[test]
    fn grouping_and_cdf() {
        let rs = [rec(&[1, 2, 0, 2, 0, 5], 1), rec(&[1, 2, 0, 2, 0, 0], 2), rec(&[1, 2, 9], 3)];
        let m = microburst_ingest(rs.iter());
        assert_eq!(m.series.len(), 2);
        assert_eq!(m.series[&(1, 2)].len(), 3);
        assert_eq!(m.cdf[&(1, 2)][0], (0, 2.0 / 3.0));
        assert_eq!(m.cdf[&(2, 0)], [(0, 0.5), (5, 1.0)]);
        let idle = microburst_ingest([rec(&[1, 2, 0], 1)].iter());
        assert_eq!(idle.empty_fraction(), 1.0);
        let bad = microburst_ingest([rec(&[1, 2], 1)].iter());
        assert_eq!(bad.malformed, 1);
    }
}
