// SPDX-License-Identifier: Apache-2.0

//! Packet histories and policy checks over them.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::record::ExecutedTppRecord;

pub const NDB_SOURCE: &str = "\
PUSH [Switch:ID]
PUSH [PacketMetadata:MatchedEntryID]
PUSH [PacketMetadata:InputPort]
";

pub const NDB_WORDS_PER_HOP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryHop {
    pub switch_id: u16,
    pub entry_id: u16,
    pub input_port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PacketHistory {
    pub hops: Vec<HistoryHop>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HistoryError {
    #[error("TPP visited {hops} hops but had room for {allocated}")]
    TruncatedHistory { hops: usize, allocated: usize },
}

/// Path-ordered history from an ndb record.
pub fn build_history(rec: &ExecutedTppRecord) -> Result<PacketHistory, HistoryError> {
    let words = rec.stack_words();
    let hops = usize::from(rec.hop_count);
    let allocated = rec.words.len() / NDB_WORDS_PER_HOP;
    if hops > allocated || words.len() < hops * NDB_WORDS_PER_HOP {
        return Err(HistoryError::TruncatedHistory { hops, allocated });
    }
    Ok(PacketHistory {
        hops: words
            .chunks_exact(NDB_WORDS_PER_HOP)
            .take(hops)
            .map(|w| HistoryHop { switch_id: w[0], entry_id: w[1], input_port: w[2] })
            .collect(),
    })
}

/// Predicates a history must satisfy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NetwatchPolicy {
    /// When set, only these (switch, entry) pairs may be used.
    pub allowed_entries: Option<BTreeSet<(u16, u16)>>,
    pub forbidden_entries: BTreeSet<(u16, u16)>,
    /// Switches this traffic class must never traverse.
    pub forbidden_switches: BTreeSet<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail { hop: usize },
}

pub fn netwatch_check(h: &PacketHistory, policy: &NetwatchPolicy) -> Verdict {
    for (i, hop) in h.hops.iter().enumerate() {
        let pair = (hop.switch_id, hop.entry_id);
        let not_allowed = policy.allowed_entries.as_ref().is_some_and(|a| !a.contains(&pair));
        if not_allowed || policy.forbidden_entries.contains(&pair) || policy.forbidden_switches.contains(&hop.switch_id) {
            return Verdict::Fail { hop: i };
        }
    }
    Verdict::Pass
}
