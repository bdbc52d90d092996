// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;

use tpp_core::analysis::{analyze, hazard_order_ok, AccessOp, MemoryPolicy};
use tpp_core::apps::conga::{conga_select, CongaPathTable, MetricMode};
use tpp_core::apps::rcp::{alpha_aggregate, Alpha};
use tpp_core::apps::sketch::BitmapSketch;
use tpp_core::memmap::{entries, resolve, Access};
use tpp_core::program::{encoded_len, HEADER_BYTES};
use tpp_core::switch::{execute_in_order, execute_sequential, legal_orders, rewrite_push_pop, FlatMemory, SwitchMemory};
use tpp_core::{Address, Instruction, TppProgram};

const HOT: &[&str] = &[
    "[Stage1:Reg0]",
    "[Stage1:Reg1]",
    "[Stage2:Reg0]",
    "[Stage3:Reg3]",
    "[Stage4:Reg2]",
    "[Link:AppSpecific_0]",
    "[Link:AppSpecific_1]",
    "[Switch:SwitchID]",
    "[PacketMetadata:InputPort]",
    "[Queue:QueueOccupancy]",
];

fn address() -> impl Strategy<Value = Address> {
    let all: Vec<Address> = entries().into_iter().map(|e| e.address).collect();
    let hot: Vec<Address> = HOT.iter().map(|m| resolve(m).unwrap()).collect();
    prop_oneof![
        6 => proptest::sample::select(hot),
        3 => proptest::sample::select(all),
        1 => (0x7000u16..0x8000).prop_map(Address),
    ]
}

fn instruction(max_slot: u8) -> impl Strategy<Value = Instruction> {
    let s = 0..=max_slot;
    let c = 0..=max_slot.min(15);
    prop_oneof![
        (address(), s.clone()).prop_map(|(addr, slot)| Instruction::Load { addr, slot }),
        (address(), s.clone()).prop_map(|(addr, slot)| Instruction::Store { addr, slot }),
        address().prop_map(|addr| Instruction::Push { addr }),
        address().prop_map(|addr| Instruction::Pop { addr }),
        (address(), c.clone(), c).prop_map(|(addr, pre, post)| Instruction::Cstore { addr, pre, post }),
        (address(), s).prop_map(|(addr, block)| Instruction::Cexec { addr, block }),
    ]
}

fn stack_instruction() -> impl Strategy<Value = Instruction> {
    prop_oneof![
        3 => address().prop_map(|addr| Instruction::Push { addr }),
        1 => address().prop_map(|addr| Instruction::Pop { addr }),
        1 => (address(), 0u8..6).prop_map(|(addr, slot)| Instruction::Load { addr, slot }),
    ]
}

fn with_memory(insns: Vec<Instruction>, hop_size: u8, hops: usize, mem: Vec<u16>, sp_words: usize) -> TppProgram {
    let words = (usize::from(hop_size) * hops).max(mem.len().min(8));
    let mut p = TppProgram::new(insns, hop_size, words * 2);
    for (i, w) in mem.iter().take(words).enumerate() {
        p.write_word(i * 2, *w);
    }
    p.header.sp = (sp_words.min(words) * 2) as u16;
    p
}

fn program() -> impl Strategy<Value = TppProgram> {
    (
        proptest::collection::vec(instruction(7), 0..=5),
        0u8..8,
        1usize..4,
        proptest::collection::vec(any::<u16>(), 0..32),
        0usize..4,
        any::<u16>(),
        0u8..3,
    )
        .prop_map(|(insns, hs, hops, mem, sp, session, hop_index)| {
            let mut p = with_memory(insns, hs, hops, mem, sp);
            p.header.session_id = session;
            p.header.hop_index = hop_index;
            p
        })
}

fn stack_program() -> impl Strategy<Value = TppProgram> {
    (
        proptest::collection::vec(stack_instruction(), 1..=5),
        0u8..5,
        proptest::collection::vec(any::<u16>(), 0..12),
        0usize..3,
        0u8..2,
    )
        .prop_map(|(insns, hs, mem, sp, hop_index)| {
            let mut p = with_memory(insns, hs.max(1), 2, mem, sp);
            p.header.hop_index = hop_index;
            p
        })
}

fn switch_memory() -> impl Strategy<Value = FlatMemory> {
    proptest::collection::vec((proptest::sample::select(HOT.to_vec()), 0u16..6), 0..8).prop_map(|kv| {
        let mut m = FlatMemory::default();
        for (k, v) in kv {
            m.0.insert(resolve(k).unwrap().0, v);
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn codec_round_trip(p in program()) {
        let bytes = p.encode().unwrap();
        prop_assert_eq!(TppProgram::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn size_law(p in program()) {
        let n = p.encode().unwrap().len();
        prop_assert_eq!(n, HEADER_BYTES + 4 * p.insn_count() + p.mem_len());
        prop_assert_eq!(n, encoded_len(p.insn_count(), p.mem_len()));
    }

    #[test]
    fn single_bit_flips_never_decode_to_a_different_header(p in program(), bit in 0usize..96) {
        let mut bytes = p.encode().unwrap();
        bytes[bit / 8] ^= 1 << (bit % 8);
        if let Ok(q) = TppProgram::decode(&bytes) {
            prop_assert_eq!(q.header, p.header);
        }
    }

    #[test]
    fn reorder_equivalence(p in program(), m in switch_memory(), we in any::<bool>()) {
        prop_assume!(hazard_order_ok(&p));
        let (mut seq, mut seq_mem) = (p.clone(), m.clone());
        execute_sequential(&mut seq, &mut seq_mem, we);
        for order in legal_orders(&p) {
            let (mut q, mut q_mem) = (p.clone(), m.clone());
            execute_in_order(&mut q, &mut q_mem, we, &order);
            prop_assert_eq!(&q, &seq, "order {:?}", order);
            prop_assert_eq!(&q_mem, &seq_mem);
        }
    }

    #[test]
    fn rewrite_equivalence(p in stack_program(), m in switch_memory()) {
        let Ok(r) = rewrite_push_pop(&p) else { return Ok(()); };
        let (mut a, mut ma) = (p.clone(), m.clone());
        let ra = execute_sequential(&mut a, &mut ma, true);
        let (mut b, mut mb) = (r.clone(), m.clone());
        execute_sequential(&mut b, &mut mb, true);
        prop_assert_eq!(&a.memory, &b.memory);
        prop_assert_eq!(&ma, &mb);
        prop_assert_eq!(a.header.flags, b.header.flags);
        if ra.iter().all(|x| x.executed()) {
            prop_assert_eq!(a.header.sp, b.header.sp);
        }
    }

    #[test]
    fn analyzer_soundness(p in program(), m in switch_memory(), grant in proptest::collection::vec(any::<(bool, bool)>(), 5)) {
        let mut policies = Vec::new();
        for (insn, (r, w)) in p.instructions.iter().zip(&grant) {
            let a = insn.address();
            if *r {
                policies.push(MemoryPolicy::new(1, AccessOp::Read, a, a));
            }
            if *w {
                policies.push(MemoryPolicy::new(1, AccessOp::Write, a, a));
            }
        }
        let report = analyze(&p, &policies, 1);
        let mut spy = Spy { inner: m, reads: Default::default(), writes: Vec::new() };
        let mut q = p.clone();
        execute_sequential(&mut q, &mut spy, true);
        let touched = |op: AccessOp, a: Address| report.touched_ranges.iter().any(|t| t.op == op && t.start <= a && a <= t.end);
        let permitted = |op: AccessOp, a: Address| policies.iter().any(|x| x.covers(1, op, a));
        for a in spy.reads.borrow().iter() {
            prop_assert!(touched(AccessOp::Read, *a));
            prop_assert!(!report.admissible() || permitted(AccessOp::Read, *a));
        }
        for a in &spy.writes {
            prop_assert!(touched(AccessOp::Write, *a));
            prop_assert!(!report.admissible() || permitted(AccessOp::Write, *a));
        }
    }

    #[test]
    fn alpha_aggregate_below_min(rates in proptest::collection::vec(1.0f64..1e9, 1..6), alpha in 1.0f64..50.0) {
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let r = alpha_aggregate(&rates, Alpha::Finite(alpha)).unwrap();
        prop_assert!(r <= min * (1.0 + 1e-9));
        prop_assert_eq!(alpha_aggregate(&rates, Alpha::Infinite).unwrap(), min);
        let mut bigger = rates.clone();
        bigger[0] *= 2.0;
        prop_assert!(alpha_aggregate(&bigger, Alpha::Finite(alpha)).unwrap() >= r * (1.0 - 1e-9));
    }

    #[test]
    fn conga_argmin_scale_invariant(m in proptest::collection::vec(0.0f64..1.0, 1..6), k in 0.001f64..1000.0) {
        let mut a = CongaPathTable::new(m.len(), MetricMode::Max, 100);
        a.metrics = m.clone();
        let mut b = a.clone();
        b.metrics = m.iter().map(|x| x * k).collect();
        prop_assert_eq!(conga_select(1, 0, &mut a), conga_select(1, 0, &mut b));
    }

    #[test]
    fn sketch_merge_is_union(xs in proptest::collection::vec(any::<u32>(), 0..300),
                             ys in proptest::collection::vec(any::<u32>(), 0..300), seed in any::<u64>()) {
        let mut a = BitmapSketch::new(1024, seed);
        let mut b = BitmapSketch::new(1024, seed);
        let mut u = BitmapSketch::new(1024, seed);
        xs.iter().for_each(|x| { a.insert(u64::from(*x)); u.insert(u64::from(*x)); });
        ys.iter().for_each(|y| { b.insert(u64::from(*y)); u.insert(u64::from(*y)); });
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        prop_assert_eq!(&ab, &u);
        prop_assert_eq!(&ba, &u);
        let again = { let mut x = ab.clone(); x.merge(&ab).unwrap(); x };
        prop_assert_eq!(&again, &ab);
        prop_assert_eq!(ab.estimate(), u.estimate());
    }
}

struct Spy {
    inner: FlatMemory,
    reads: std::cell::RefCell<Vec<Address>>,
    writes: Vec<Address>,
}

impl SwitchMemory for Spy {
    fn read(&self, addr: Address) -> Option<u16> {
        self.reads.borrow_mut().push(addr);
        self.inner.read(addr)
    }

    fn write(&mut self, addr: Address, value: u16) -> bool {
        self.writes.push(addr);
        self.inner.write(addr, value)
    }
}

#[test]
fn memory_map_resolution_is_a_bijection() {
    let all = entries();
    let mut seen = std::collections::BTreeSet::new();
    for e in &all {
        assert_eq!(resolve(&e.mnemonic).unwrap(), e.address, "{}", e.mnemonic);
        assert!(seen.insert(e.address), "duplicate address {:?}", e.address);
        assert_eq!(e.address.mnemonic().as_deref(), Some(e.mnemonic.as_str()));
    }
    assert!(all.iter().any(|e| e.access == Access::ReadWrite));
    assert_eq!(resolve("[Queue:QueueOccupancy]").unwrap(), Address(0xb000));
    assert!(resolve("[Bogus:Nothing]").is_err());
    assert!(!Address(0x7fff).exists());
}
