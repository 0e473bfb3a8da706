//! Human-readable report text. Numbers are printed in full so text and JSON
//! reports carry the same values.

use std::collections::BTreeMap;
use std::fmt::Write;

use knobwise_core::diagnosis::Diagnosis;
use knobwise_core::mapping::FunctionKnobMap;
use knobwise_core::mining::MiningReport;
use knobwise_core::model::{Configuration, ContextSnapshot, Signal, TuningRule};
use knobwise_core::rulebook::{expected_improvement, ranking_confidence, MergeSummary, Rulebook};
use knobwise_core::tuner::{Branch, SessionReport};
use serde_json::{json, Value};

pub fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Exploit => "exploit",
        Branch::Explore => "explore",
        Branch::Remote => "remote",
        Branch::Random => "random",
        Branch::Noop => "noop",
    }
}

fn config_lines(out: &mut String, config: &Configuration) {
    for (k, v) in config {
        let _ = writeln!(out, "  {k} = {v}");
    }
}

pub fn map(map: &FunctionKnobMap, skipped: &[String]) -> String {
    let mut s = String::new();
    for (f, knobs) in &map.by_function {
        let list: Vec<String> = knobs.iter().map(|(k, kind)| format!("{k} ({kind:?})").to_lowercase()).collect();
        let _ = writeln!(s, "{f}: {}", list.join(", "));
    }
    for k in skipped {
        let _ = writeln!(s, "skipped {k}: no anchor in graph");
    }
    s
}

pub fn mining(r: &MiningReport, merged: &MergeSummary, book: &Rulebook) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "observations: {}", r.observations);
    let _ = writeln!(s, "transactions: {}", r.transactions);
    let _ = writeln!(s, "distinct items: {} ({} adjustments)", r.distinct_items, r.target_items);
    let _ = writeln!(s, "frequent itemsets: {}", r.itemsets);
    let _ = writeln!(s, "rules kept: {}", r.rules);
    let _ = writeln!(s, "conditional trees: {}", r.pruning.conditional_trees);
    let _ = writeln!(s, "rulebook: {} rules ({} added, {} already present)", book.len(), merged.added, merged.already_present);
    s
}

pub fn diagnosis(d: &Diagnosis, selected: Option<&[String]>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method: {}", d.method);
    if d.flagged.is_empty() {
        let _ = writeln!(s, "no bottleneck flagged");
    }
    for f in &d.flagged {
        let signal = match f.signal {
            Signal::HighRate => "high rate",
            Signal::LowRate => "low rate",
        };
        let _ = writeln!(s, "flagged {} severity {} ({signal})", f.function, f.severity);
    }
    if let Some(knobs) = selected {
        let _ = writeln!(s, "selected knobs: {}", if knobs.is_empty() { "none".to_string() } else { knobs.join(", ") });
    }
    s
}

pub fn rule_json(r: &TuningRule) -> Value {
    json!({
        "rule": r,
        "text": r.to_string(),
        "confidence": r.confidence(),
        "expected_improvement": expected_improvement(r),
        "ranking_confidence": ranking_confidence(r),
    })
}

pub fn rule_list(rules: &[&TuningRule]) -> String {
    let mut s = String::new();
    for r in rules {
        let conf = r.confidence().map_or("unverified".to_string(), |c| c.to_string());
        let _ = writeln!(s, "{}  EI {}  confidence {}  {}", r.id, expected_improvement(r), conf, r);
    }
    s
}

pub fn rule_detail(r: &TuningRule) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "id: {}", r.id);
    let _ = writeln!(s, "rule: {r}");
    let _ = writeln!(s, "coverage: {}", r.coverage);
    let _ = writeln!(s, "trials: {} successes: {}", r.trial_count, r.success_count);
    let _ = writeln!(s, "improvement sum: {}", r.improvement_sum);
    let _ = writeln!(s, "expected improvement: {}", expected_improvement(r));
    match r.confidence() {
        Some(c) => {
            let _ = writeln!(s, "confidence: {c}");
        }
        None => {
            let _ = writeln!(s, "confidence: unverified");
        }
    }
    if let Some(m) = &r.mined {
        let _ = writeln!(
            s,
            "mined: {} of {} pairs improved, confidence {}, mean improvement {}",
            m.pair_successes, m.pair_trials, m.confidence, m.mean_improvement
        );
    }
    s
}

pub fn evaluation(scenario: &str, perf: f64, config: &Configuration, ctx: Option<&ContextSnapshot>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {scenario}");
    let _ = writeln!(s, "performance: {perf}");
    let _ = writeln!(s, "configuration:");
    config_lines(&mut s, config);
    if let Some(ctx) = ctx {
        let _ = writeln!(s, "function rates:");
        for (f, r) in &ctx.function_rates {
            let _ = writeln!(s, "  {f} {r}");
        }
    }
    s
}

pub fn session(r: &SessionReport, branches: &BTreeMap<String, usize>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "strategy: {}", r.strategy);
    let _ = writeln!(s, "system: {}", r.system);
    let _ = writeln!(s, "budget: {} ({} observations, {} failed, {} no-op)", r.budget, r.observations, r.failed_steps, r.noop_steps);
    let steps: Vec<String> = branches.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let _ = writeln!(s, "steps: {}", steps.join(", "));
    let _ = writeln!(s, "default performance: {}", r.default_performance);
    let _ = writeln!(s, "best performance: {} ({})", r.best_performance, r.best_observation);
    let _ = writeln!(s, "best improvement: {}", r.best_improvement);
    let _ = writeln!(s, "cumulative improvement: {}", r.cumulative_improvement);
    let _ = writeln!(s, "bad configurations: {}", r.bad_configurations);
    let _ = writeln!(s, "re-mining runs: {}, rules: {}", r.mining_runs, r.rules);
    let _ = writeln!(s, "best configuration:");
    config_lines(&mut s, &r.best_configuration);
    s
}
