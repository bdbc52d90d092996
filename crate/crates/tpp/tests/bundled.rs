// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::PathBuf;

use tpp::endhost::cp::CpDoc;
use tpp::experiments::{load_config, standard_policy_doc, BUNDLED};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn memory_map_doc_is_current() {
    let doc = std::fs::read_to_string(root().join("docs/memory-map.md")).unwrap();
    assert_eq!(doc, tpp_core::memmap::render_markdown(), "regenerate with `tpp memmap > docs/memory-map.md`");
}

#[test]
fn standard_policy_file_matches_the_bundled_apps() {
    let doc: CpDoc = serde_json::from_slice(&std::fs::read(root().join("policies/standard.json")).unwrap()).unwrap();
    assert_eq!(doc, standard_policy_doc());
}

#[test]
fn every_bundled_config_loads() {
    let listed: BTreeSet<String> = BUNDLED.iter().map(|s| s.to_string()).collect();
    let on_disk: BTreeSet<String> = std::fs::read_dir(root().join("experiments"))
        .unwrap()
        .map(|e| format!("experiments/{}", e.unwrap().file_name().to_string_lossy()))
        .filter(|n| n.ends_with(".json"))
        .collect();
    assert_eq!(listed, on_disk);
    for c in BUNDLED {
        let loaded = load_config(&root().join(c)).unwrap_or_else(|e| panic!("{c}: {e}"));
        assert!(loaded.config.duration_s > 0.0);
    }
}

#[test]
fn named_topologies_exist() {
    for t in ["dumbbell6.json", "conga2path.json"] {
        tpp::topology::load_topology(&root().join("topologies").join(t)).unwrap();
    }
}
