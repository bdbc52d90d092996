// SPDX-License-Identifier: Apache-2.0

//! Values worked out by hand, checked against the implementation.

use tpp_core::apps::history::NDB_SOURCE;
use tpp_core::apps::microburst::MICROBURST_SOURCE;
use tpp_core::apps::rcp::{phase1_program, rcp_compute_rate, rcp_update_program, HopUpdate};
use tpp_core::apps::sketch::sketch_estimate;
use tpp_core::asm::assemble;
use tpp_core::compose::{split_large, stack_program_bytes, targeted};
use tpp_core::switch::state::utilization_word;
use tpp_core::switch::{GroupSelector, PacketView, SwitchState};

fn with_hops(src: &str, hops: usize) -> usize {
    let mut p = assemble(src).unwrap();
    p.memory = vec![0; hops * 3 * 2];
    p.encode().unwrap().len()
}

#[test]
fn per_packet_overheads() {
    // 12-byte header, three 4-byte instructions, three 2-byte words per hop.
    assert_eq!(with_hops(MICROBURST_SOURCE, 5), 12 + 3 * 4 + 5 * 3 * 2);
    assert_eq!(with_hops(MICROBURST_SOURCE, 5), 54);
    assert_eq!(with_hops(NDB_SOURCE, 10), 84);
    assert_eq!(phase1_program(0, 0).encode().unwrap().len(), 12 + 5 * 4);
}

#[test]
fn half_loaded_link() {
    // 50 Mb/s for 1 ms on a 100 Mb/s link is 6250 bytes: 65535 / 2 rounded.
    let w = utilization_word(6250, 100_000_000, 1_000_000);
    assert!((32767..=32769).contains(&w), "{w}");
    assert_eq!(utilization_word(0, 100_000_000, 1_000_000), 0);
    assert_eq!(utilization_word(12_500, 100_000_000, 1_000_000), 65535);
}

#[test]
fn control_law_substitution() {
    // 100 * (1 - 1 * 0.5 * 50 / 100) = 75.
    let r = rcp_compute_rate(100e6, 100e6, 150e6, 0.0, 0.02, 0.02, 0.5, 0.25, 1e5);
    assert!((r - 75e6).abs() < 1.0);
    let p = rcp_update_program(&[Some(HopUpdate { version: 3, rate_word: 80 })], 0).unwrap();
    assert_eq!(p.words(), [3, 4, 80]);
}

#[test]
fn split_size_arithmetic() {
    let p = assemble(MICROBURST_SOURCE).unwrap();
    // 12 + 12 + 6h <= 128 holds up to h = 17.
    assert!(stack_program_bytes(&p, 17) <= 128);
    assert!(stack_program_bytes(&p, 18) > 128);
    let pieces = split_large(&p, 20, 128).unwrap();
    assert!(pieces.len() >= 2);
    assert_eq!(pieces.iter().map(|x| x.hops).sum::<usize>(), 20);
    assert!(pieces.iter().all(|x| x.program.encoded_len() <= 128));
    assert!(targeted(&assemble("PUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]").unwrap(), 1).is_err());
}

#[test]
fn group_selection_is_vlan_modulo_fanout() {
    let mut sw = SwitchState::new(1);
    for _ in 0..3 {
        sw.add_port(100_000_000, 1, 150_000);
    }
    sw.add_group(0, vec![1, 2], GroupSelector::Vlan);
    let entry = sw.groups.last().unwrap();
    let view = |vlan| PacketView { vlan, ..PacketView::default() };
    assert_eq!(entry.select(&view(0)), Some(1));
    assert_eq!(entry.select(&view(1)), Some(2));
    assert_eq!(entry.select(&view(2)), entry.select(&view(0)));
    for vlan in 0..64 {
        assert_eq!(entry.select(&view(vlan)), Some([1, 2][usize::from(vlan) % 2]));
    }
}

#[test]
fn sketch_half_full() {
    let e = sketch_estimate(64, 32).unwrap();
    assert!((e - 64.0 * std::f64::consts::LN_2).abs() < 1e-9);
    assert!((e - 44.36).abs() < 0.01);
}
