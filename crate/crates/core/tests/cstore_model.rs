// SPDX-License-Identifier: Apache-2.0

//! Exhaustive interleavings of versioned updaters racing on one link word.

use tpp_core::apps::rcp::{addresses, rcp_update_program, HopUpdate};
use tpp_core::switch::{execute_sequential, FlatMemory, SwitchMemory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Writer {
    Idle,
    Read(u16),
    Done,
}

#[derive(Default)]
struct Tally {
    schedules: u64,
}

/// Every writer reads the version, then tries a CSTORE from it; losers re-read.
fn explore(mem: &FlatMemory, writers: &[Writer], wins: &mut Vec<(u16, usize)>, tally: &mut Tally) {
    let (version, _) = addresses();
    if writers.iter().all(|w| *w == Writer::Done) {
        tally.schedules += 1;
        let final_v = mem.read(version).unwrap();
        assert_eq!(usize::from(final_v), writers.len());
        let mut pres: Vec<u16> = wins.iter().map(|(v, _)| *v).collect();
        pres.sort_unstable();
        assert_eq!(pres, (0..writers.len() as u16).collect::<Vec<_>>(), "one success per version");
        return;
    }
    for i in 0..writers.len() {
        let mut next = writers.to_vec();
        let mut m = mem.clone();
        match writers[i] {
            Writer::Done => continue,
            Writer::Idle => next[i] = Writer::Read(m.read(version).unwrap()),
            Writer::Read(v) => {
                let mut p = rcp_update_program(&[Some(HopUpdate { version: v, rate_word: 100 + i as u16 })], 1).unwrap();
                execute_sequential(&mut p, &mut m, true);
                if p.read_word(0) == Some(v + 1) && m.read(version) == Some(v + 1) && mem.read(version) == Some(v) {
                    wins.push((v, i));
                    next[i] = Writer::Done;
                    explore(&m, &next, wins, tally);
                    wins.pop();
                    continue;
                }
                assert_eq!(m, *mem, "a failed CSTORE must not touch the link");
                next[i] = Writer::Idle;
            }
        }
        explore(&m, &next, wins, tally);
    }
}

#[test]
fn exactly_one_winner_per_version() {
    for n in 1..=3 {
        let mut tally = Tally::default();
        explore(&FlatMemory::default(), &vec![Writer::Idle; n], &mut Vec::new(), &mut tally);
        assert!(tally.schedules > 0);
    }
}
