// SPDX-License-Identifier: Apache-2.0

//! Executors: run standalone TPPs to completion on top of a running simulation.

use std::collections::BTreeMap;

use tpp_core::compose::{join_split_records, split_large, targeted, ComposeError, SplitPiece};
use tpp_core::record::ExecutedTppRecord;
use tpp_core::isa::Instruction;
use tpp_core::program::WORD_BYTES;
use tpp_core::TppProgram;

use super::cp::CpError;
use crate::netsim::{Agent, Ctx, Simulator};
use crate::packet::HostRecord;
use crate::topology::NodeId;

/// Flow tag on executor probes, so their echoes find their way back here.
pub const EXECUTOR_FLOW: u32 = 0xEC5E_C000;

/// Collects echoed executor probes on a host.
#[derive(Debug, Default)]
pub struct ExecutorAgent {
    pub records: BTreeMap<u64, HostRecord>,
}

impl Agent for ExecutorAgent {
    fn on_record(&mut self, _ctx: &mut Ctx<'_>, rec: &HostRecord) {
        if rec.flow == EXECUTOR_FLOW {
            self.records.insert(rec.seq, rec.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("no completed record after {transmissions} transmissions")]
    Exhausted { transmissions: u32 },
    #[error("control plane refused the TPP: {0}")]
    Rejected(#[from] CpError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Executed {
    pub record: HostRecord,
    pub transmissions: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retry {
    pub max_retries: u32,
    pub timeout_ns: u64,
}

impl Default for Retry {
    fn default() -> Retry {
        Retry { max_retries: 3, timeout_ns: 20_000_000 }
    }
}

fn collector(sim: &mut Simulator, host: NodeId) -> usize {
    match sim.find_agent::<ExecutorAgent>(host) {
        Some((i, _)) => i,
        None => sim.add_agent(host, Box::<ExecutorAgent>::default()),
    }
}

/// Sends `tpp` to `dst_ip` until its echo returns or retries run out.
/// The TPP must be safe to execute more than once.
pub fn execute_reliable(
    sim: &mut Simulator,
    host: NodeId,
    tpp: &TppProgram,
    dst_ip: u32,
    retry: Retry,
) -> Result<Executed, ExecError> {
    let agent = collector(sim, host);
    let mut transmissions = 0;
    for _ in 0..=retry.max_retries {
        if sim.now() >= sim.config().duration_ns {
            break;
        }
        let seq = sim.send_tpp(host, dst_ip, tpp.clone(), 0, EXECUTOR_FLOW)?;
        transmissions += 1;
        let deadline = sim.now() + retry.timeout_ns;
        sim.run_until(deadline);
        let got = sim.agent_mut::<ExecutorAgent>(host, agent).and_then(|a| a.records.remove(&seq));
        if let Some(record) = got {
            return Ok(Executed { record, transmissions });
        }
    }
    Err(ExecError::Exhausted { transmissions })
}

/// Runs `payload` only at the switch with `switch_id` on the way to `dst_ip`.
pub fn execute_targeted(
    sim: &mut Simulator,
    host: NodeId,
    payload: &TppProgram,
    switch_id: u16,
    dst_ip: u32,
    retry: Retry,
) -> Result<Executed, ExecError> {
    let tpp = targeted(payload, switch_id)?;
    execute_reliable(sim, host, &tpp, dst_ip, retry)
}

/// One targeted execution per `(switch_id, destination)`; failures stay per switch.
pub fn scatter_gather(
    sim: &mut Simulator,
    host: NodeId,
    payload: &TppProgram,
    targets: &[(u16, u32)],
    retry: Retry,
) -> Vec<(u16, Result<Executed, ExecError>)> {
    targets.iter().map(|&(sw, dst)| (sw, execute_targeted(sim, host, payload, sw, dst, retry))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub pieces: Vec<SplitPiece>,
    pub records: Vec<ExecutedTppRecord>,
    /// Stack words of all pieces in hop order.
    pub words: Vec<u16>,
    pub transmissions: u32,
}

/// Splits a stack program that would not fit `max_bytes` over `hops` hops and runs each piece.
pub fn execute_split(
    sim: &mut Simulator,
    host: NodeId,
    tpp: &TppProgram,
    hops: usize,
    max_bytes: usize,
    dst_ip: u32,
    retry: Retry,
) -> Result<SplitResult, ExecError> {
    let pieces = split_large(tpp, hops, max_bytes)?;
    let pushes = tpp.instructions.iter().filter(|i| matches!(i, Instruction::Push { .. })).count();
    let mut records = Vec::new();
    let mut transmissions = 0;
    for piece in &pieces {
        let done = execute_reliable(sim, host, &piece.program, dst_ip, retry)?;
        transmissions += done.transmissions;
        // Echoed TPPs keep executing, and return hops can fall inside this
        // piece's gate; keep only what outbound hops in its range pushed.
        let forward = usize::from(done.record.forward_hops());
        let kept = (piece.first_hop + piece.hops).min(forward).saturating_sub(piece.first_hop);
        let mut rec = done.record.record;
        rec.hop_count = rec.hop_count.min(forward as u8);
        let sp = usize::from(piece.program.header.sp) + kept * pushes * WORD_BYTES;
        rec.sp = rec.sp.min(sp as u16);
        records.push(rec);
    }
    let words = if pieces.len() == 1 {
        records[0].stack_words().to_vec()
    } else {
        join_split_records(&records)
    };
    Ok(SplitResult { pieces, records, words, transmissions })
}
