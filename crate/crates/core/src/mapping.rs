//! Function–knob maps built by taint propagation over a declarative
//! dependency graph.
//!
//! A knob is anchored at one program variable. Data edges carry taint from
//! variable to variable (assignment, parameter passing, return values, and
//! conditional flows all propagate identically). Control edges record that a
//! function is control-dependent on a variable; only the declared edge
//! targets count as controlled, not the function containing the branch.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Versioned;
use crate::model::{ValidationIssue, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataEdgeKind {
    Assignment,
    Parameter,
    Return,
    Conditional,
}

/// Explicit control gates a branch; implicit control changes execution
/// frequency or timing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    Explicit,
    Implicit,
}

impl ControlKind {
    /// Explicit wins over implicit.
    pub fn strongest(self, other: ControlKind) -> ControlKind {
        self.min(other)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataEdge {
    pub from: String,
    pub to: String,
    pub kind: DataEdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlEdge {
    /// Variable the function depends on.
    pub from: String,
    /// Controlled function.
    pub to: String,
    pub kind: ControlKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub variables: BTreeSet<String>,
    pub functions: BTreeSet<String>,
    pub knob_anchors: BTreeMap<String, String>,
    #[serde(default)]
    pub data_edges: Vec<DataEdge>,
    #[serde(default)]
    pub control_edges: Vec<ControlEdge>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub graph: DependencyGraph,
}

impl Versioned for GraphDocument {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

impl DependencyGraph {
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        for (knob, var) in &self.knob_anchors {
            if !self.variables.contains(var) {
                issues.push(ValidationIssue::new(
                    format!("knob_anchors.{knob}"),
                    format!("anchor variable `{var}` not declared"),
                ));
            }
        }
        for (i, e) in self.data_edges.iter().enumerate() {
            for end in [&e.from, &e.to] {
                if !self.variables.contains(end) {
                    issues.push(ValidationIssue::new(
                        format!("data_edges[{i}]"),
                        format!("unknown variable `{end}`"),
                    ));
                }
            }
        }
        for (i, e) in self.control_edges.iter().enumerate() {
            if !self.variables.contains(&e.from) {
                issues.push(ValidationIssue::new(
                    format!("control_edges[{i}].from"),
                    format!("unknown variable `{}`", e.from),
                ));
            }
            if !self.functions.contains(&e.to) {
                issues.push(ValidationIssue::new(
                    format!("control_edges[{i}].to"),
                    format!("unknown function `{}`", e.to),
                ));
            }
        }
        issues
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self> {
        let issues = doc.graph.validate();
        if issues.is_empty() {
            Ok(doc.graph)
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            schema_version: SCHEMA_VERSION,
            graph: self.clone(),
        }
    }
}

/// Variables reachable from the knob's anchor through data edges, anchor
/// included.
pub fn propagate_taint(graph: &DependencyGraph, knob: &str) -> Result<BTreeSet<String>> {
    let anchor = graph
        .knob_anchors
        .get(knob)
        .ok_or_else(|| Error::UnknownKnob(knob.to_string()))?;

    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &graph.data_edges {
        succ.entry(e.from.as_str()).or_default().push(e.to.as_str());
    }

    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut queue = VecDeque::from([anchor.as_str()]);
    seen.insert(anchor.clone());
    while let Some(v) = queue.pop_front() {
        for &w in succ.get(v).map(Vec::as_slice).unwrap_or_default() {
            if seen.insert(w.to_string()) {
                queue.push_back(w);
            }
        }
    }
    Ok(seen)
}

/// Functions with a control edge from any tainted variable. A function
/// reached by several edges keeps the strongest kind.
pub fn controlled_functions(
    graph: &DependencyGraph,
    tainted: &BTreeSet<String>,
) -> BTreeMap<String, ControlKind> {
    let mut out: BTreeMap<String, ControlKind> = BTreeMap::new();
    for e in graph.control_edges.iter().filter(|e| tainted.contains(&e.from)) {
        out.entry(e.to.clone())
            .and_modify(|k| *k = k.strongest(e.kind))
            .or_insert(e.kind);
    }
    out
}

/// Bidirectional function ↔ knob association.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionKnobMap {
    pub by_function: BTreeMap<String, BTreeMap<String, ControlKind>>,
    pub by_knob: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub map: FunctionKnobMap,
}

impl Versioned for MapDocument {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

impl FunctionKnobMap {
    pub fn insert(&mut self, function: &str, knob: &str, kind: ControlKind) {
        self.by_function
            .entry(function.to_string())
            .or_default()
            .entry(knob.to_string())
            .and_modify(|k| *k = k.strongest(kind))
            .or_insert(kind);
        self.by_knob
            .entry(knob.to_string())
            .or_default()
            .insert(function.to_string());
    }

    /// Controlling knobs of `function` (K^f).
    pub fn knobs_for(&self, function: &str) -> impl Iterator<Item = (&str, ControlKind)> {
        self.by_function
            .get(function)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, kind)| (k.as_str(), *kind)))
    }

    /// Functions controlled by `knob` (F^k).
    pub fn functions_for(&self, knob: &str) -> impl Iterator<Item = &str> {
        self.by_knob
            .get(knob)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    /// True when `by_knob` is exactly the transpose of `by_function`.
    pub fn is_consistent(&self) -> bool {
        let mut transposed: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (f, knobs) in &self.by_function {
            for k in knobs.keys() {
                transposed.entry(k).or_default().insert(f);
            }
        }
        let by_knob: BTreeMap<&str, BTreeSet<&str>> = self
            .by_knob
            .iter()
            .filter(|(_, fs)| !fs.is_empty())
            .map(|(k, fs)| (k.as_str(), fs.iter().map(String::as_str).collect()))
            .collect();
        transposed == by_knob
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            schema_version: SCHEMA_VERSION,
            map: self.clone(),
        }
    }

    pub fn from_document(doc: MapDocument) -> Result<Self> {
        if doc.map.is_consistent() {
            Ok(doc.map)
        } else {
            Err(Error::invalid("function-knob map: by_knob is not the transpose of by_function"))
        }
    }
}

/// Result of building a map; unanchored knobs are skipped and reported.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapBuild {
    pub map: FunctionKnobMap,
    pub skipped: Vec<String>,
}

pub fn build_function_knob_map<S: AsRef<str>>(graph: &DependencyGraph, knobs: &[S]) -> MapBuild {
    let mut build = MapBuild::default();
    for knob in knobs {
        let knob = knob.as_ref();
        match propagate_taint(graph, knob) {
            Ok(tainted) => {
                build.map.by_knob.entry(knob.to_string()).or_default();
                for (f, kind) in controlled_functions(graph, &tainted) {
                    build.map.insert(&f, knob, kind);
                }
            }
            Err(_) => {
                tracing::warn!(knob, "knob has no anchor in dependency graph; skipped");
                build.skipped.push(knob.to_string());
            }
        }
    }
    build
}

/// Builds the map over every anchored knob in the graph.
pub fn build_full_map(graph: &DependencyGraph) -> FunctionKnobMap {
    let knobs: Vec<&String> = graph.knob_anchors.keys().collect();
    build_function_knob_map(graph, &knobs).map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn data(from: &str, to: &str) -> DataEdge {
        DataEdge {
            from: from.into(),
            to: to.into(),
            kind: DataEdgeKind::Assignment,
        }
    }

    fn ctrl(from: &str, to: &str, kind: ControlKind) -> ControlEdge {
        ControlEdge {
            from: from.into(),
            to: to.into(),
            kind,
        }
    }

    fn graph(vars: &[&str], funcs: &[&str], anchors: &[(&str, &str)]) -> DependencyGraph {
        DependencyGraph {
            variables: set(vars),
            functions: set(funcs),
            knob_anchors: anchors
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn isolated_anchor() {
        let g = graph(&["v"], &[], &[("k", "v")]);
        assert_eq!(propagate_taint(&g, "k").unwrap(), set(&["v"]));
    }

    #[test]
    fn linear_chain_ignores_unrelated() {
        let mut g = graph(&["v", "a", "b", "c"], &[], &[("k", "v")]);
        g.data_edges = vec![data("v", "a"), data("a", "b")];
        assert_eq!(propagate_taint(&g, "k").unwrap(), set(&["v", "a", "b"]));
    }

    /// Fixed point by repeated edge application until nothing changes.
    fn closure_oracle(g: &DependencyGraph, knob: &str) -> BTreeSet<String> {
        let mut s = set(&[g.knob_anchors[knob].as_str()]);
        loop {
            let before = s.len();
            for e in &g.data_edges {
                if s.contains(&e.from) {
                    s.insert(e.to.clone());
                }
            }
            if s.len() == before {
                return s;
            }
        }
    }

    #[test]
    fn cycle_terminates() {
        let mut g = graph(&["v", "a"], &[], &[("k", "v")]);
        g.data_edges = vec![data("v", "a"), data("a", "v")];
        let got = propagate_taint(&g, "k").unwrap();
        assert_eq!(got, set(&["v", "a"]));
        assert_eq!(got, closure_oracle(&g, "k"));
    }

    #[test]
    fn unknown_knob_is_an_error() {
        let g = graph(&["v"], &[], &[("k", "v")]);
        assert!(matches!(propagate_taint(&g, "nope"), Err(Error::UnknownKnob(_))));
    }

    #[test]
    fn explicit_log_buffer_flush() {
        let mut g = graph(&["log.buf_size"], &["log_buffer_flush_to_disk"], &[]);
        g.control_edges = vec![ctrl("log.buf_size", "log_buffer_flush_to_disk", ControlKind::Explicit)];
        let got = controlled_functions(&g, &set(&["log.buf_size"]));
        assert_eq!(
            got,
            BTreeMap::from([("log_buffer_flush_to_disk".to_string(), ControlKind::Explicit)])
        );
        assert!(controlled_functions(&g, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn implicit_spin_wait() {
        let mut g = graph(&["srv_spin_wait_delay"], &["ut_delay", "sync_array_wait_event"], &[]);
        g.control_edges = vec![
            ctrl("srv_spin_wait_delay", "ut_delay", ControlKind::Implicit),
            ctrl("srv_spin_wait_delay", "sync_array_wait_event", ControlKind::Implicit),
        ];
        let got = controlled_functions(&g, &set(&["srv_spin_wait_delay"]));
        assert_eq!(got.len(), 2);
        assert!(got.values().all(|k| *k == ControlKind::Implicit));
    }

    #[test]
    fn explicit_beats_implicit_on_ties() {
        let mut g = graph(&["a", "b"], &["f"], &[("k", "a")]);
        g.data_edges = vec![data("a", "b")];
        g.control_edges = vec![
            ctrl("a", "f", ControlKind::Implicit),
            ctrl("b", "f", ControlKind::Explicit),
        ];
        let m = build_function_knob_map(&g, &["k"]).map;
        assert_eq!(m.by_function["f"]["k"], ControlKind::Explicit);
    }

    #[test]
    fn shared_function_lists_both_knobs() {
        let mut g = graph(
            &["srv_buf_pool_instances", "srv_random_read_ahead"],
            &["buf_read_ahead_random"],
            &[
                ("innodb_buffer_pool_instances", "srv_buf_pool_instances"),
                ("innodb_random_read_ahead", "srv_random_read_ahead"),
            ],
        );
        g.control_edges = vec![
            ctrl("srv_buf_pool_instances", "buf_read_ahead_random", ControlKind::Explicit),
            ctrl("srv_random_read_ahead", "buf_read_ahead_random", ControlKind::Explicit),
        ];
        let b = build_function_knob_map(&g, &["innodb_buffer_pool_instances", "innodb_random_read_ahead", "ghost"]);
        let knobs: Vec<_> = b.map.knobs_for("buf_read_ahead_random").map(|(k, _)| k).collect();
        assert_eq!(knobs, vec!["innodb_buffer_pool_instances", "innodb_random_read_ahead"]);
        assert_eq!(b.skipped, vec!["ghost".to_string()]);
        assert!(b.map.is_consistent());
    }

    /// Six variables, hand-traced:
    /// k1 → v1 → v2 → v3, v2 → v4; k2 → v5 → v6 → v4.
    /// Closure(k1) = {v1,v2,v3,v4}; closure(k2) = {v5,v6,v4}.
    #[test]
    fn six_node_fixture() {
        let mut g = graph(
            &["v1", "v2", "v3", "v4", "v5", "v6"],
            &["fa", "fb", "fc"],
            &[("k1", "v1"), ("k2", "v5")],
        );
        g.data_edges = vec![
            data("v1", "v2"),
            data("v2", "v3"),
            data("v2", "v4"),
            data("v5", "v6"),
            data("v6", "v4"),
        ];
        g.control_edges = vec![
            ctrl("v3", "fa", ControlKind::Explicit),
            ctrl("v4", "fb", ControlKind::Implicit),
            ctrl("v6", "fc", ControlKind::Explicit),
        ];
        assert!(g.validate().is_empty());
        assert_eq!(propagate_taint(&g, "k1").unwrap(), set(&["v1", "v2", "v3", "v4"]));
        assert_eq!(propagate_taint(&g, "k2").unwrap(), set(&["v4", "v5", "v6"]));
        let m = build_full_map(&g);
        assert_eq!(m.by_knob["k1"], set(&["fa", "fb"]));
        assert_eq!(m.by_knob["k2"], set(&["fb", "fc"]));
        assert_eq!(m.by_function["fb"].len(), 2);
        assert!(m.is_consistent());
    }

    #[test]
    fn validation_flags_dangling_edges() {
        let mut g = graph(&["v"], &[], &[("k", "w")]);
        g.data_edges = vec![data("v", "x")];
        g.control_edges = vec![ctrl("v", "f", ControlKind::Explicit)];
        assert_eq!(g.validate().len(), 3);
    }

    fn arb_graph() -> impl Strategy<Value = DependencyGraph> {
        (2usize..30, 1usize..20).prop_flat_map(|(nv, nf)| {
            let data = prop::collection::vec((0..nv, 0..nv), 0..60);
            let ctrl = prop::collection::vec((0..nv, 0..nf, any::<bool>()), 0..40);
            let anchors = prop::collection::vec(0..nv, 1..5);
            (Just(nv), Just(nf), data, ctrl, anchors).prop_map(|(nv, nf, data, ctrl, anchors)| {
                let v = |i: usize| format!("v{i}");
                let f = |i: usize| format!("f{i}");
                DependencyGraph {
                    variables: (0..nv).map(v).collect(),
                    functions: (0..nf).map(f).collect(),
                    knob_anchors: anchors
                        .iter()
                        .enumerate()
                        .map(|(i, a)| (format!("k{i}"), v(*a)))
                        .collect(),
                    data_edges: data
                        .into_iter()
                        .map(|(a, b)| DataEdge {
                            from: v(a),
                            to: v(b),
                            kind: DataEdgeKind::Assignment,
                        })
                        .collect(),
                    control_edges: ctrl
                        .into_iter()
                        .map(|(a, b, e)| ControlEdge {
                            from: v(a),
                            to: f(b),
                            kind: if e { ControlKind::Explicit } else { ControlKind::Implicit },
                        })
                        .collect(),
                }
            })
        })
    }

    proptest! {
        #[test]
        fn taint_matches_fixed_point(g in arb_graph()) {
            for k in g.knob_anchors.keys() {
                prop_assert_eq!(propagate_taint(&g, k).unwrap(), closure_oracle(&g, k));
            }
        }

        #[test]
        fn taint_is_monotone(g in arb_graph(), a in 0usize..30, b in 0usize..30) {
            let n = g.variables.len();
            let mut bigger = g.clone();
            bigger.data_edges.push(data(&format!("v{}", a % n), &format!("v{}", b % n)));
            for k in g.knob_anchors.keys() {
                let small = propagate_taint(&g, k).unwrap();
                let large = propagate_taint(&bigger, k).unwrap();
                prop_assert!(small.is_subset(&large));
            }
        }

        #[test]
        fn map_is_transpose_and_order_independent(g in arb_graph()) {
            let m = build_full_map(&g);
            prop_assert!(m.is_consistent());
            let mut rev = g.clone();
            rev.data_edges.reverse();
            rev.control_edges.reverse();
            prop_assert_eq!(build_full_map(&rev), m);
        }
    }
}
