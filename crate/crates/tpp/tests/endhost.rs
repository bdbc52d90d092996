// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use tpp::endhost::executor::{execute_reliable, execute_split, execute_targeted, ExecError, Retry};
use tpp::experiments::{apps, install_everywhere, Input};
use tpp::netsim::{SimConfig, Simulator};
use tpp::topology::{build_topology, Topology, TopologySpec};
use tpp_core::asm::assemble;
use tpp_core::TppProgram;

/// h0 - s0 - s1 - s2 - h1, with `loss` on the s1-s2 link.
fn chain(loss: f64) -> Topology {
    let spec: TopologySpec = serde_json::from_value(serde_json::json!({
        "hosts": [{ "name": "h0", "ip": "10.9.0.1" }, { "name": "h1", "ip": "10.9.0.2" }],
        "switches": [{ "name": "s0", "id": 1 }, { "name": "s1", "id": 2 }, { "name": "s2", "id": 3 }],
        "links": [
            { "a": "h0", "b": "s0", "capacity_bps": 1000000000u64, "delay_ns": 10000 },
            { "a": "s0", "b": "s1", "capacity_bps": 1000000000u64, "delay_ns": 10000 },
            { "a": "s1", "b": "s2", "capacity_bps": 1000000000u64, "delay_ns": 10000, "loss": loss },
            { "a": "s2", "b": "h1", "capacity_bps": 1000000000u64, "delay_ns": 10000 }
        ]
    }))
    .unwrap();
    build_topology(&spec).unwrap()
}

fn sim(topo: &Topology, seed: u64) -> Simulator {
    Input::new(topo.clone(), seed, 10.0).simulator(SimConfig::default()).unwrap()
}

fn probe(src: &str, hops: usize) -> TppProgram {
    let mut t = assemble(src).unwrap();
    t.memory = vec![0; hops * 2 * t.header.hop_size_words.max(1) as usize * 2];
    t.header.session_id = apps::EXECUTOR.1;
    t
}

#[test]
fn reliable_execution_survives_loss() {
    let topo = chain(0.3);
    let mut s = sim(&topo, 3);
    let (h0, h1) = (topo.node("h0").unwrap(), topo.node("h1").unwrap());
    let dst = topo.host_ip(h1).unwrap();
    let retry = Retry { max_retries: 30, timeout_ns: 1_000_000 };
    let mut transmissions = 0;
    for _ in 0..20 {
        let done = execute_reliable(&mut s, h0, &probe("PUSH [Switch:SwitchID]", 3), dst, retry).unwrap();
        assert_eq!(&done.record.record.stack_words()[..3], &[1, 2, 3]);
        transmissions += done.transmissions;
    }
    // Each try crosses the lossy link twice, so some must have been resent.
    assert!(transmissions > 20, "{transmissions}");
}

#[test]
fn reliable_execution_gives_up() {
    let topo = chain(1.0);
    let mut s = sim(&topo, 1);
    let (h0, h1) = (topo.node("h0").unwrap(), topo.node("h1").unwrap());
    let retry = Retry { max_retries: 4, timeout_ns: 1_000_000 };
    let err = execute_reliable(&mut s, h0, &probe("PUSH [Switch:SwitchID]", 3), topo.host_ip(h1).unwrap(), retry).unwrap_err();
    assert_eq!(err, ExecError::Exhausted { transmissions: 5 });
}

#[test]
fn policy_refusal_is_reported() {
    let topo = chain(0.0);
    let mut s = sim(&topo, 1);
    let (h0, h1) = (topo.node("h0").unwrap(), topo.node("h1").unwrap());
    let err = execute_reliable(&mut s, h0, &probe("POP [Stage1:Reg0]", 3), topo.host_ip(h1).unwrap(), Retry::default()).unwrap_err();
    assert!(matches!(err, ExecError::Rejected(_)), "{err:?}");
}

#[test]
fn targeted_execution_runs_at_one_switch() {
    let topo = chain(0.0);
    let mut s = sim(&topo, 1);
    let (h0, h1) = (topo.node("h0").unwrap(), topo.node("h1").unwrap());
    let mut payload = assemble(".hop_size 1\nLOAD [Switch:Clock], [Packet:Hop[0]]").unwrap();
    payload.memory = vec![0; 3 * 2];
    payload.header.session_id = apps::EXECUTOR.1;
    let done = execute_targeted(&mut s, h0, &payload, 2, topo.host_ip(h1).unwrap(), Retry::default()).unwrap();
    // Only the second hop's slot is written.
    let rec = &done.record.record;
    let hs = usize::from(rec.hop_size_words);
    let clock = |hop: usize| rec.words[hop * hs];
    assert_eq!(clock(0), 0);
    assert_ne!(clock(1), 0);
    assert_eq!(clock(2), 0);
}

#[test]
fn split_execution_joins_pieces_in_hop_order() {
    let topo = chain(0.0);
    let mut s = sim(&topo, 1);
    let (h0, h1) = (topo.node("h0").unwrap(), topo.node("h1").unwrap());
    // Room for 16 hops in 48 bytes; a 40-byte budget needs four gated pieces of four hops.
    let tpp = probe("PUSH [Switch:SwitchID]", 0);
    assert_eq!(tpp_core::compose::stack_program_bytes(&tpp, 16), 48);
    let r = execute_split(&mut s, h0, &tpp, 16, 40, topo.host_ip(h1).unwrap(), Retry::default()).unwrap();
    assert_eq!(r.pieces.iter().map(|p| (p.first_hop, p.hops)).collect::<Vec<_>>(), [(0, 4), (4, 4), (8, 4), (12, 4)]);
    assert_eq!(r.words, [1, 2, 3]);
}

/// Payload bytes each flow delivers, with and without TPPs on every packet.
#[test]
fn shim_is_transparent() {
    let topo = tpp::topology::load_topology(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../topologies/dumbbell6.json")).unwrap();
    let loaded_flows: Vec<tpp::experiments::traffic::FlowSpec> = serde_json::from_value(serde_json::json!([
        { "id": 1, "src": "h0", "dst": "h3", "type": "rate_limited_udp", "rate_bps": 20000000 },
        { "id": 2, "src": "h1", "dst": "h4", "type": "on_off", "rate_bps": 10000000, "burst_bytes": 20000 },
        { "id": 3, "src": "h5", "dst": "h2", "type": "bulk", "bytes": 300000, "payload_bytes": 1300 }
    ]))
    .unwrap();
    let delivered = |with_tpps: bool| {
        let mut input = Input::new(topo.clone(), 9, 0.5);
        input.flows = loaded_flows.clone();
        let mut s = input.simulator(SimConfig::default()).unwrap();
        if with_tpps {
            let tpp = tpp::experiments::microburst::program(5);
            install_everywhere(&mut s, apps::MICROBURST.0, &tpp, 1).unwrap();
        }
        s.run_until(input.duration_ns);
        let log = s.finish();
        assert!(!with_tpps || log.counters.tpp_executions > 0);
        let mut per_flow: BTreeMap<u32, u64> = BTreeMap::new();
        for d in &log.deliveries {
            *per_flow.entry(d.flow).or_default() += u64::from(d.payload_bytes);
        }
        (per_flow, log.counters.dropped())
    };
    let (plain, plain_drops) = delivered(false);
    let (stamped, stamped_drops) = delivered(true);
    assert_eq!((plain_drops, stamped_drops), (0, 0));
    assert_eq!(plain.len(), 3);
    assert_eq!(plain, stamped);
}
