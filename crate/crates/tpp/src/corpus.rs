// SPDX-License-Identifier: Apache-2.0

//! Labelled TPPs for checking the control plane's admission decisions, and
//! seeded random programs for the execution-order and rewrite checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpp_core::analysis::hazard_order_ok;
use tpp_core::memmap::{entries, resolve};
use tpp_core::switch::{execute_in_order, execute_sequential, legal_orders, rewrite_push_pop, FlatMemory};
use tpp_core::{Address, Instruction, TppProgram};

/// One corpus program with the verdict the standard policies must give it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyCase {
    pub name: &'static str,
    pub appid: u64,
    pub source: &'static str,
    /// Touches memory outside the app's policies, or the app is unknown.
    pub violating: bool,
    /// Contains an instruction that writes switch memory.
    pub writes: bool,
}

const fn ok(name: &'static str, appid: u64, source: &'static str, writes: bool) -> PolicyCase {
    PolicyCase { name, appid, source, violating: false, writes }
}

const fn bad(name: &'static str, appid: u64, source: &'static str, writes: bool) -> PolicyCase {
    PolicyCase { name, appid, source, violating: true, writes }
}

/// Fifty programs against the standard apps, half of them out of policy.
pub const POLICY_CORPUS: &[PolicyCase] = &[
    ok("microburst_listing", 1, tpp_core::apps::microburst::MICROBURST_SOURCE, false),
    ok("microburst_load_queue", 1, "LOAD [Queue:QueueOccupancy], [Packet:Hop[0]]", false),
    ok("microburst_id_and_queue", 1, "PUSH [Switch:SwitchID]\nPUSH [Queue:QueueOccupancy]", false),
    ok("microburst_output_port", 1, "PUSH [PacketMetadata:OutputPort]", false),
    ok("microburst_queue_id", 1, "PUSH [Queue:QueueID]", false),
    ok("rcp_phase1", 2, tpp_core::apps::rcp::PHASE1_SOURCE, false),
    ok("rcp_phase3", 2, tpp_core::apps::rcp::PHASE3_SOURCE, true),
    ok("rcp_queue_and_rx", 2, "PUSH [Link:QueueSize]\nPUSH [Link:RX-Utilization]", false),
    ok("rcp_pop_rate", 2, "POP [Link:AppSpecific_1]", true),
    ok("rcp_tx_bytes", 2, "LOAD [Link:TX-Bytes], [Packet:Hop[0]]\nLOAD [Link:TX-Bytes_Hi], [Packet:Hop[1]]", false),
    ok("rcp_gate_on_switch", 2, "CEXEC [Switch:SwitchID], [Packet:Hop[0]]\nPUSH [Link:AppSpecific_0]", false),
    ok("ndb_listing", 3, tpp_core::apps::history::NDB_SOURCE, false),
    ok("ndb_input_port", 3, "PUSH [PacketMetadata:InputPort]", false),
    ok("ndb_matched_entry", 3, "PUSH [PacketMetadata:MatchedEntryID]", false),
    ok("ndb_output_port", 3, "PUSH [Switch:ID]\nPUSH [PacketMetadata:OutputPort]", false),
    ok("conga_listing", 4, tpp_core::apps::conga::PROBE_SOURCE, false),
    ok("conga_tx_utilization", 4, "PUSH [Link:TX-Utilization]", false),
    ok("conga_capacity", 4, "PUSH [Switch:SwitchID]\nPUSH [Link:Capacity]", false),
    ok("sketch_listing", 5, tpp_core::apps::sketch::PROBE_SOURCE, false),
    ok("sketch_output_port", 5, "LOAD [PacketMetadata:OutputPort], [Packet:Hop[0]]", false),
    ok("executor_register", 6, "PUSH [Stage1:Reg0]", false),
    ok("executor_link_counter", 6, "LOAD [Link$2:TX-Bytes], [Packet:Hop[0]]", false),
    ok("executor_flow_entry", 6, "PUSH [FlowEntry3:MatchPackets]", false),
    ok("executor_clock_and_queue", 6, "PUSH [Queue:QueueOccupancy]\nPUSH [Switch:Clock]", false),
    ok("executor_metadata", 6, "PUSH [PacketMetadata:InputPort]\nPUSH [Switch:PortCount]", false),
    bad("microburst_reads_link", 1, "PUSH [Link:TX-Utilization]", false),
    bad("microburst_writes_register", 1, "STORE [Stage1:Reg0], [Packet:Hop[0]]", true),
    bad("microburst_pops_queue", 1, "PUSH [Switch:SwitchID]\nPOP [Queue:QueueOccupancy]", true),
    bad("microburst_reads_clock", 1, "PUSH [Switch:Clock]", false),
    bad("microburst_stores_rate", 1, "PUSH [Queue:QueueOccupancy]\nSTORE [Link:AppSpecific_1], [Packet:Hop[1]]", true),
    bad("ndb_listing_as_microburst", 1, tpp_core::apps::history::NDB_SOURCE, false),
    bad("rcp_writes_register", 2, "STORE [Stage1:Reg1], [Packet:Hop[0]]", true),
    bad("rcp_reads_input_port", 2, "PUSH [PacketMetadata:InputPort]", false),
    bad("rcp_reads_queue", 2, "PUSH [Queue:QueueOccupancy]", false),
    bad("rcp_cstore_absolute_link", 2, "CSTORE [Link$0:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]", true),
    bad("rcp_reads_flow_entry", 2, "PUSH [FlowEntry2:EntryID]", false),
    bad("ndb_reads_link", 3, "PUSH [Link:TX-Bytes]", false),
    bad("ndb_pops_switch_id", 3, "POP [Switch:SwitchID]", true),
    bad("ndb_reads_register", 3, "PUSH [Switch:ID]\nPUSH [Stage2:Reg3]", false),
    bad("conga_reads_queue", 4, "PUSH [Queue:QueueOccupancy]", false),
    bad("conga_stores_version", 4, "STORE [Link:AppSpecific_0], [Packet:Hop[0]]", true),
    bad("rcp_phase3_as_conga", 4, tpp_core::apps::rcp::PHASE3_SOURCE, true),
    bad("conga_listing_as_sketch", 5, tpp_core::apps::conga::PROBE_SOURCE, false),
    bad("sketch_reads_input_port", 5, "PUSH [PacketMetadata:InputPort]", false),
    bad("sketch_reads_link_id", 5, "PUSH [Link:ID]", false),
    bad("sketch_pops_output_port", 5, "POP [PacketMetadata:OutputPort]", true),
    bad("sketch_gates_on_queue", 5, "CEXEC [Queue:QueueOccupancy], [Packet:Hop[0]]", false),
    bad("executor_stores_register", 6, "STORE [Stage1:Reg0], [Packet:Hop[0]]", true),
    bad("executor_reads_unmapped", 6, "LOAD [0xd000], [Packet:Hop[0]]", false),
    bad("unregistered_app", 9, "PUSH [Switch:SwitchID]", false),
];

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

/// Draws addresses and programs from a seeded generator.
pub struct ProgramGen {
    rng: ChaCha8Rng,
    hot: Vec<Address>,
    all: Vec<Address>,
}

impl ProgramGen {
    pub fn new(seed: u64) -> ProgramGen {
        ProgramGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            hot: HOT.iter().map(|m| resolve(m).expect("known mnemonic")).collect(),
            all: entries().into_iter().map(|e| e.address).collect(),
        }
    }

    fn address(&mut self) -> Address {
        match self.rng.gen_range(0..10) {
            0..=5 => *self.hot.choose(&mut self.rng).unwrap(),
            6..=8 => *self.all.choose(&mut self.rng).unwrap(),
            _ => Address(self.rng.gen_range(0x7000..0x8000)),
        }
    }

    fn instruction(&mut self, max_slot: u8) -> Instruction {
        let addr = self.address();
        let slot = self.rng.gen_range(0..=max_slot);
        let c = max_slot.min(15);
        match self.rng.gen_range(0..6) {
            0 => Instruction::Load { addr, slot },
            1 => Instruction::Store { addr, slot },
            2 => Instruction::Push { addr },
            3 => Instruction::Pop { addr },
            4 => Instruction::Cstore { addr, pre: self.rng.gen_range(0..=c), post: self.rng.gen_range(0..=c) },
            _ => Instruction::Cexec { addr, block: slot },
        }
    }

    fn with_memory(&mut self, insns: Vec<Instruction>, hop_size: u8, hops: usize, sp_words: usize) -> TppProgram {
        let filled = self.rng.gen_range(0..32usize);
        let words = (usize::from(hop_size) * hops).max(filled.min(8));
        let mut p = TppProgram::new(insns, hop_size, words * 2);
        for i in 0..filled.min(words) {
            p.write_word(i * 2, self.rng.gen());
        }
        p.header.sp = (sp_words.min(words) * 2) as u16;
        p
    }

    /// Any program of up to `max_insns` instructions.
    pub fn program(&mut self, max_insns: usize) -> TppProgram {
        let n = self.rng.gen_range(1..=max_insns);
        let insns = (0..n).map(|_| self.instruction(7)).collect();
        let (hs, hops, sp) = (self.rng.gen_range(0..8), self.rng.gen_range(1..4), self.rng.gen_range(0..4));
        let mut p = self.with_memory(insns, hs, hops, sp);
        p.header.session_id = self.rng.gen();
        p.header.hop_index = self.rng.gen_range(0..3);
        p
    }

    /// A program whose instruction order is free of hazards the pipeline could reorder.
    pub fn hazard_free(&mut self, max_insns: usize) -> TppProgram {
        loop {
            let p = self.program(max_insns);
            if hazard_order_ok(&p) {
                return p;
            }
        }
    }

    /// PUSH/POP-heavy program over two hops.
    pub fn stack_program(&mut self, max_insns: usize) -> TppProgram {
        let n = self.rng.gen_range(1..=max_insns);
        let insns = (0..n)
            .map(|_| {
                let addr = self.address();
                match self.rng.gen_range(0..5) {
                    0..=2 => Instruction::Push { addr },
                    3 => Instruction::Pop { addr },
                    _ => Instruction::Load { addr, slot: self.rng.gen_range(0..6) },
                }
            })
            .collect();
        let (hs, sp) = (self.rng.gen_range(1..5), self.rng.gen_range(0..3));
        let mut p = self.with_memory(insns, hs, 2, sp);
        p.header.hop_index = self.rng.gen_range(0..2);
        p
    }

    /// Switch memory with a few hot words preset to small values.
    pub fn switch_memory(&mut self) -> FlatMemory {
        let mut m = FlatMemory::default();
        for _ in 0..self.rng.gen_range(0..8) {
            let a = *self.hot.choose(&mut self.rng).unwrap();
            m.0.insert(a.0, self.rng.gen_range(0..6));
        }
        m
    }

    pub fn coin(&mut self) -> bool {
        self.rng.gen()
    }
}

/// True if every legal pipeline order leaves the packet and switch exactly as
/// in-order execution does.
pub fn reorder_equivalent(p: &TppProgram, m: &FlatMemory, write_enabled: bool) -> bool {
    let (mut seq, mut seq_mem) = (p.clone(), m.clone());
    execute_sequential(&mut seq, &mut seq_mem, write_enabled);
    legal_orders(p).iter().all(|order| {
        let (mut q, mut q_mem) = (p.clone(), m.clone());
        execute_in_order(&mut q, &mut q_mem, write_enabled, order);
        q == seq && q_mem == seq_mem
    })
}

/// Outcome of rewriting one stack program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteCheck {
    Equivalent,
    Differs,
    /// The stack runs past addressable packet memory; nothing to compare.
    Overflow,
}

/// Runs `p` and its LOAD/STORE rewrite against the same switch memory.
pub fn rewrite_check(p: &TppProgram, m: &FlatMemory) -> RewriteCheck {
    let Ok(r) = rewrite_push_pop(p) else { return RewriteCheck::Overflow };
    let (mut a, mut ma) = (p.clone(), m.clone());
    let ra = execute_sequential(&mut a, &mut ma, true);
    let (mut b, mut mb) = (r, m.clone());
    execute_sequential(&mut b, &mut mb, true);
    let sp_ok = !ra.iter().all(|x| x.executed()) || a.header.sp == b.header.sp;
    if a.memory == b.memory && ma == mb && a.header.flags == b.header.flags && sp_ok {
        RewriteCheck::Equivalent
    } else {
        RewriteCheck::Differs
    }
}
