use std::path::{Path, PathBuf};

use knobwise_core::hypothesis::HypothesisStore;
use knobwise_core::io::{read_catalog, read_document, read_observations};
use knobwise_core::mapping::*;
use knobwise_core::rulebook::Rulebook;
use knobwise_core::simulator::Scenario;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn graph(name: &str) -> DependencyGraph {
    DependencyGraph::from_document(read_document(&fixtures().join(format!("graphs/{name}.json"))).unwrap()).unwrap()
}

#[test]
fn explicit_log_buffer_control() {
    let map = build_full_map(&graph("buffer"));
    let knobs: Vec<_> = map.knobs_for("log_buffer_flush_to_disk").collect();
    assert_eq!(knobs, [("innodb_log_buffer_size", ControlKind::Explicit)]);
    assert_eq!(map.knobs_for("log_write_low").count(), 0);
}

#[test]
fn implicit_spin_control() {
    let map = build_full_map(&graph("spin"));
    for f in ["ut_delay", "sync_array_wait_event"] {
        let knobs: Vec<_> = map.knobs_for(f).collect();
        assert_eq!(knobs, [("innodb_spin_wait_delay", ControlKind::Implicit)]);
    }
    assert_eq!(map.knobs_for("rw_lock_x_lock_func").count(), 0);
}

#[test]
fn shipped_maps_match_their_graphs() {
    for name in ["buffer", "spin", "composite"] {
        let shipped = FunctionKnobMap::from_document(read_document(&fixtures().join(format!("maps/{name}.json"))).unwrap()).unwrap();
        assert_eq!(shipped, build_full_map(&graph(name)), "{name}");
    }
}

#[test]
fn seed_rules_carry_their_confidences() {
    let rb = Rulebook::load(&fixtures().join("rules/seed_rules.json")).unwrap();
    let mut conf: Vec<f64> = rb
        .rules()
        .iter()
        .filter(|r| !r.knobs().contains("innodb_log_buffer_size"))
        .map(|r| (r.confidence().unwrap() * 100.0).round() / 100.0)
        .collect();
    conf.sort_by(|a, b| b.total_cmp(a));
    assert_eq!(conf, [0.87, 0.85, 0.74]);
    for r in rb.rules() {
        assert_eq!(r.id, r.derived_id());
    }
}

#[test]
fn shipped_documents_load() {
    let catalog = read_catalog(&fixtures().join("knobs.json")).unwrap();
    assert_eq!(catalog, Scenario::shipped("composite").unwrap().catalog);
    let obs = read_observations(&fixtures().join("obs.jsonl"), &catalog).unwrap();
    assert_eq!(obs.len(), 40);
    let store = HypothesisStore::load(&fixtures().join("hypotheses.json")).unwrap();
    assert_eq!(store.all().len(), 4);
    for name in ["buffer", "spin", "composite"] {
        let from_file = Scenario::load(&fixtures().join(format!("scenarios/{name}.json"))).unwrap();
        assert_eq!(from_file.name(), name);
    }
}
