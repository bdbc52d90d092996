// SPDX-License-Identifier: Apache-2.0

//! What a run leaves behind: deliveries, records, samples and the shadow log.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tpp_core::switch::PhysicalWord;

use crate::packet::HostRecord;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Delivery {
    pub time_ns: u64,
    pub host: NodeId,
    pub flow: u32,
    pub seq: u64,
    pub src_ip: u32,
    pub dst_ip: u32,
    pub payload_bytes: u32,
    pub latency_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordRow {
    pub time_ns: u64,
    pub host: NodeId,
    pub session: u16,
    pub flow: u32,
    pub seq: u64,
    pub hop_count: u8,
    pub hop_size_words: u8,
    pub turnaround: Option<u8>,
    pub flags: u8,
    pub words: Vec<u16>,
}

impl From<&HostRecord> for RecordRow {
    fn from(r: &HostRecord) -> RecordRow {
        RecordRow {
            time_ns: r.record.receive_time_ns,
            host: r.host,
            session: r.record.session_id,
            flow: r.flow,
            seq: r.seq,
            hop_count: r.record.hop_count,
            hop_size_words: r.record.hop_size_words,
            turnaround: r.turnaround,
            flags: r.record.flags.0,
            words: r.record.words.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QueueSample {
    pub time_ns: u64,
    pub switch_id: u16,
    pub port: u8,
    pub queue: u8,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UtilSample {
    pub time_ns: u64,
    pub switch_id: u16,
    pub port: u8,
    pub tx_utilization: u16,
    pub rx_utilization: u16,
}

/// A TPP-writable switch word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WordRef {
    StageReg { stage: u8, reg: u8 },
    LinkAppSpecific { port: u8, index: u8 },
}

impl From<PhysicalWord> for WordRef {
    fn from(w: PhysicalWord) -> WordRef {
        match w {
            PhysicalWord::StageReg { stage, reg } => WordRef::StageReg { stage, reg },
            PhysicalWord::LinkAppSpecific { port, index } => WordRef::LinkAppSpecific { port, index },
        }
    }
}

/// Ground truth, computed by the simulator independently of the switch's own bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ShadowEvent {
    /// A switch word changed while a TPP executed.
    Write { time_ns: u64, switch_id: u16, word: WordRef, old: u16, new: u16, packet: u64, session: u16 },
    /// A CSTORE reached its compare.
    Cstore {
        time_ns: u64,
        switch_id: u16,
        word: Option<WordRef>,
        pre: u16,
        post: u16,
        x_before: Option<u16>,
        success: bool,
        packet: u64,
        session: u16,
    },
    Enqueue { time_ns: u64, switch_id: u16, port: u8, queue: u8, packet: u64, bytes_after: u64 },
    Dequeue { time_ns: u64, switch_id: u16, port: u8, queue: u8, packet: u64, bytes_after: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimCounters {
    pub injected: u64,
    pub arrived: u64,
    pub dropped_queue: u64,
    pub dropped_loss: u64,
    pub dropped_noroute: u64,
    pub dropped_host_queue: u64,
    pub dropped_misdelivered: u64,
    pub in_flight_end: u64,
    /// Bytes serialized onto links, all links.
    pub link_bytes: u64,
    /// Of those, bytes that exist only because of TPPs.
    pub tpp_link_bytes: u64,
    pub tpp_executions: u64,
}

impl SimCounters {
    pub fn dropped(&self) -> u64 {
        self.dropped_queue + self.dropped_loss + self.dropped_noroute + self.dropped_host_queue + self.dropped_misdelivered
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TraceLog {
    pub seed: u64,
    pub duration_ns: u64,
    pub deliveries: Vec<Delivery>,
    pub records: Vec<RecordRow>,
    pub queue_samples: Vec<QueueSample>,
    pub util_samples: Vec<UtilSample>,
    pub shadow: Vec<ShadowEvent>,
    pub counters: SimCounters,
    pub violations: Vec<String>,
    pub violation_count: u64,
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl TraceLog {
    /// SHA-256 of the canonical JSON form, hex.
    pub fn digest(&self) -> String {
        let mut w = HashWriter(Sha256::new());
        serde_json::to_writer(&mut w, self).expect("trace log serializes");
        hex::encode(w.0.finalize())
    }

    pub fn write_csvs(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("queues.csv"))?;
        w.write_record(["time_ns", "switch", "port", "queue", "bytes"])?;
        for s in &self.queue_samples {
            w.serialize((s.time_ns, s.switch_id, s.port, s.queue, s.bytes))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("utilization.csv"))?;
        w.write_record(["time_ns", "switch", "port", "tx_utilization", "rx_utilization"])?;
        for s in &self.util_samples {
            w.serialize((s.time_ns, s.switch_id, s.port, s.tx_utilization, s.rx_utilization))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("deliveries.csv"))?;
        w.write_record(["time_ns", "flow", "seq", "payload_bytes", "latency_ns"])?;
        for d in &self.deliveries {
            w.serialize((d.time_ns, d.flow, d.seq, d.payload_bytes, d.latency_ns))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("tpp_records.csv"))?;
        w.write_record(["time_ns", "host", "session", "flow", "seq", "hop", "slot", "value"])?;
        for r in &self.records {
            let per_hop = usize::from(r.hop_size_words.max(1));
            for (i, v) in r.words.iter().enumerate() {
                w.serialize((r.time_ns, r.host, r.session, r.flow, r.seq, i / per_hop, i % per_hop, v))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
