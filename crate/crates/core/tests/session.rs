use std::path::{Path, PathBuf};

use knobwise_core::hypothesis::HypothesisStore;
use knobwise_core::io::read_document;
use knobwise_core::mapping::FunctionKnobMap;
use knobwise_core::mining::config_changes;
use knobwise_core::model::*;
use knobwise_core::rulebook::Rulebook;
use knobwise_core::simulator::*;
use knobwise_core::tuner::*;
use knobwise_core::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn composite_config(seed: u64) -> (Scenario, StrategyConfig) {
    let scn = Scenario::shipped("composite").unwrap();
    let mut cfg = StrategyConfig::new(scn.catalog.clone());
    cfg.map = FunctionKnobMap::from_document(read_document(&fixtures().join("maps/composite.json")).unwrap()).unwrap();
    cfg.rulebook = Rulebook::load(&fixtures().join("rules/seed_rules.json")).unwrap();
    cfg.hypotheses = HypothesisStore::load(&fixtures().join("hypotheses.json")).unwrap();
    cfg.seed = seed;
    (scn, cfg)
}

fn run(scn: &Scenario, cfg: &StrategyConfig, strategy: &str, budget: usize) -> SessionResult {
    let mut s = strategy_registry().create(strategy, cfg).unwrap();
    let mut adapter = SimulatorAdapter {
        sim: Simulator::with_seed(scn.clone(), cfg.seed).unwrap(),
    };
    run_session(&mut adapter, s.as_mut(), &scn.catalog, &scn.defaults(), budget).unwrap()
}

#[test]
fn first_step_exploits_buffer_pool_rule() {
    let (scn, cfg) = composite_config(7);
    let r = run(&scn, &cfg, "rules", 1);
    let t = &r.traces[0];
    assert_eq!(t.branch, Branch::Exploit);
    assert_eq!(t.delta.keys().collect::<Vec<_>>(), ["innodb_buffer_pool_size"]);
    let before = scn.defaults()["innodb_buffer_pool_size"].as_f64().unwrap();
    assert!(t.delta["innodb_buffer_pool_size"].as_f64().unwrap() > before);
    assert_eq!(t.matched_rules[0].id, t.rule_id.clone().unwrap());
    assert_eq!(r.history.len(), 2);
}

#[test]
fn budget_one_appends_one_observation() {
    let (scn, cfg) = composite_config(3);
    let r = run(&scn, &cfg, "random", 1);
    assert_eq!(r.history.len(), 2);
    assert_eq!(r.traces.len(), 1);
    assert!(run_session(
        &mut SimulatorAdapter { sim: Simulator::new(scn.clone()).unwrap() },
        strategy_registry().create("random", &cfg).unwrap().as_mut(),
        &scn.catalog,
        &scn.defaults(),
        0
    )
    .is_err());
}

#[test]
fn nothing_to_do_is_a_noop() {
    let scn = Scenario::shipped("spin").unwrap();
    let cfg = StrategyConfig::new(scn.catalog.clone());
    let r = run(&scn, &cfg, "rules", 2);
    assert_eq!(r.history.len(), 1);
    assert!(r.traces.iter().all(|t| t.branch == Branch::Noop && t.outcome.is_none()));
    assert_eq!(r.report.noop_steps, 2);
    assert_eq!(r.report.best_observation, "obs-0000");
}

#[test]
fn regression_lowers_confidence_of_hit_rule() {
    let scn = Scenario::shipped("spin").unwrap();
    let mut rule = TuningRule::new(
        vec![Predicate::FunctionRate {
            function: "ut_delay".into(),
            interval: Interval::new(0.0, 1.0),
        }],
        vec![KnobAdjustment {
            knob: "innodb_spin_wait_delay".into(),
            form: AdjustmentForm::Relative,
            direction: AdjustDirection::Increase,
            magnitude_interval: Interval::new(0.6, 0.8),
        }],
    );
    rule.trial_count = 5;
    rule.success_count = 5;
    rule.improvement_sum = 0.5;
    let id = rule.id.clone();
    let mut cfg = StrategyConfig::new(scn.catalog.clone());
    cfg.rulebook = Rulebook::new(vec![rule]).unwrap();
    cfg.params.remine_period = 0;
    let r = run(&scn, &cfg, "rules", 1);
    let out = r.traces[0].outcome.as_ref().unwrap();
    assert!(!out.improved);
    assert_eq!(out.hit_rules, std::slice::from_ref(&id));
    let after = r.rulebook.unwrap().get(&id).unwrap().clone();
    assert_eq!((after.success_count, after.trial_count), (5, 6));
    assert!(after.confidence().unwrap() < 1.0);
}

#[test]
fn remining_follows_the_period() {
    let (scn, mut cfg) = composite_config(11);
    cfg.params.remine_period = 5;
    let r = run(&scn, &cfg, "rules", 12);
    assert_eq!(r.report.failed_steps + r.report.noop_steps, 0);
    let mined: Vec<usize> = r
        .traces
        .iter()
        .filter(|t| t.mining.is_some())
        .map(|t| t.step)
        .collect();
    assert_eq!(mined, [5, 10]);
    assert_eq!(r.report.mining_runs, 2);
    assert!(r.report.rules > cfg.rulebook.len());
    for rule in r.rulebook.unwrap().rules() {
        assert!(rule.success_count <= rule.trial_count);
    }
}

#[test]
fn rule_statistics_replay_from_trace() {
    let (scn, mut cfg) = composite_config(5);
    cfg.params.remine_period = 0;
    let r = run(&scn, &cfg, "rules", 10);
    let mut replay = cfg.rulebook.clone();
    let hw = scn.hardware();
    for t in &r.traces {
        let Some(out) = &t.outcome else { continue };
        let from = r.history.iter().find(|h| h.id == t.incumbent).unwrap();
        let to = r.history.iter().find(|h| h.id == out.observation_id).unwrap();
        let applied = config_changes(&scn.catalog, &from.configuration, &to.configuration, &hw).unwrap();
        let relevant: Vec<String> = t.matched_rules.iter().map(|m| m.id.clone()).collect();
        let hits = replay
            .update_rule_stats(&relevant, &applied, out.improved, out.improvement.max(0.0))
            .unwrap();
        assert_eq!(hits, out.hit_rules);
    }
    assert_eq!(&replay, r.rulebook.as_ref().unwrap());
}

#[test]
fn best_so_far_is_monotone_and_reported() {
    let (scn, cfg) = composite_config(9);
    for strategy in ["rules", "random"] {
        let r = run(&scn, &cfg, strategy, 8);
        let curve = best_so_far(&r.history);
        assert!(curve.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*curve.last().unwrap(), r.report.best_performance);
        assert!(r.report.best_performance >= r.report.default_performance);
        let best = r.history.iter().find(|h| h.id == r.report.best_observation).unwrap();
        assert_eq!(best.configuration, r.report.best_configuration);
    }
}

#[test]
fn sessions_are_reproducible() {
    let (scn, cfg) = composite_config(7);
    for strategy in ["rules", "random"] {
        let a = run(&scn, &cfg, strategy, 10);
        let b = run(&scn, &cfg, strategy, 10);
        assert_eq!(serde_json::to_string(&a.history).unwrap(), serde_json::to_string(&b.history).unwrap());
        assert_eq!(serde_json::to_string(&a.traces).unwrap(), serde_json::to_string(&b.traces).unwrap());
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn composite_session_gets_close_to_the_optimum() {
    let (scn, cfg) = composite_config(7);
    let (_, opt) = ground_truth_optimum(&scn, 21).unwrap();
    let r = run(&scn, &cfg, "rules", 10);
    let (best, _) = scn.evaluate_noiseless(&r.report.best_configuration).unwrap();
    assert!(best >= 0.9 * opt, "{best} vs {opt}");
    assert_eq!(r.report.bad_configurations, 0);
    assert!(r.report.cumulative_improvement > 0.0);
}

struct Flaky {
    inner: SimulatorAdapter,
    calls: usize,
}

impl SystemAdapter for Flaky {
    fn describe(&self) -> String {
        "flaky".into()
    }

    fn apply(&mut self, config: &Configuration) -> knobwise_core::Result<Evaluation> {
        self.calls += 1;
        if self.calls == 2 {
            return Err(Error::Adapter("benchmark crashed".into()));
        }
        self.inner.apply(config)
    }
}

#[test]
fn adapter_failure_marks_step_failed() {
    let (scn, cfg) = composite_config(7);
    let mut adapter = Flaky {
        inner: SimulatorAdapter {
            sim: Simulator::with_seed(scn.clone(), 7).unwrap(),
        },
        calls: 0,
    };
    let mut s = strategy_registry().create("rules", &cfg).unwrap();
    let r = run_session(&mut adapter, s.as_mut(), &scn.catalog, &scn.defaults(), 3).unwrap();
    assert_eq!(r.report.failed_steps, 1);
    assert!(r.traces[0].failure.is_some());
    assert_eq!(r.traces[0].incumbent, "obs-0000");
    assert_eq!(r.traces[1].incumbent, "obs-0000");
    assert_eq!(r.history.len(), 3);
}

#[test]
fn command_adapter_round_trip() {
    let reply = r#"{"performance":{"metric_name":"throughput","value":42.0,"direction":"higher-better"},"context":{"function_rates":{"f":0.5}}}"#;
    let mut a = CommandAdapter {
        program: "sh".into(),
        args: vec!["-c".into(), format!("cat >/dev/null; echo '{reply}'")],
    };
    let eval = a.apply(&Configuration::new()).unwrap();
    assert_eq!(eval.performance.value, 42.0);
    assert_eq!(eval.context.rate("f"), 0.5);

    let mut bad = CommandAdapter {
        program: "sh".into(),
        args: vec!["-c".into(), "cat >/dev/null; echo nope".into()],
    };
    assert!(matches!(bad.apply(&Configuration::new()), Err(Error::Adapter(_))));
    let mut failing = CommandAdapter::from_command_line("false").unwrap();
    assert!(failing.apply(&Configuration::new()).is_err());
    assert!(CommandAdapter::from_command_line("  ").is_err());
}

#[test]
fn strategy_registry_lists_both() {
    let registry = strategy_registry();
    let names: Vec<&str> = registry.names().collect();
    assert_eq!(names, ["random", "rules"]);
    let (_, cfg) = composite_config(1);
    assert!(matches!(
        strategy_registry().create("bayes", &cfg),
        Err(Error::UnknownStrategy { .. })
    ));
}
