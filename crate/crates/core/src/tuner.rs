//! The online tuning loop.
//!
//! A session evaluates the starting configuration, then repeatedly asks a
//! strategy for the next configuration, applies it through a system adapter
//! and feeds the outcome back. The rule-guided strategy diagnoses the current
//! best configuration, selects knobs, retrieves rules and hypotheses, asks an
//! advisor for a delta, maintains rule statistics and periodically re-mines
//! the accumulated history.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::process::{Command, Stdio};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnosis::{diagnoser_registry, select_knobs, Diagnoser, DiagnoserConfig, DiagnosisInput, Flagged};
use crate::error::{Error, Result};
use crate::hypothesis::{
    advisor_registry, build_prompt, AdviceKind, AdviceRequest, Advisor, AdvisorConfig, ExploreMove,
    HypothesisStore, TaskInfo,
};
use crate::mapping::FunctionKnobMap;
use crate::mining::{config_changes, mine_rules, MiningParams, MiningReport};
use crate::model::{
    Configuration, Hypothesis, KnobCatalog, ObservationRecord, Shift, Signal, SCHEMA_VERSION,
};
use crate::registry::Registry;
use crate::rulebook::{expected_improvement, ranking_confidence, Rulebook, DEFAULT_TOP_K};
use crate::simulator::{random_configuration, Evaluation, Simulator};

pub const DEFAULT_EXPLOIT_FLOOR: f64 = 0.02;
pub const DEFAULT_REMINE_PERIOD: usize = 5;

/// Applies a configuration to the tuned system and observes it.
pub trait SystemAdapter {
    fn describe(&self) -> String;
    fn apply(&mut self, config: &Configuration) -> Result<Evaluation>;
}

pub struct SimulatorAdapter {
    pub sim: Simulator,
}

impl SystemAdapter for SimulatorAdapter {
    fn describe(&self) -> String {
        format!("simulator:{}", self.sim.scenario().name())
    }

    fn apply(&mut self, config: &Configuration) -> Result<Evaluation> {
        self.sim.evaluate(config).map_err(|e| Error::Adapter(e.to_string()))
    }
}

/// Runs a user command per evaluation. The command reads
/// `{"schema_version": 1, "configuration": {...}}` on stdin and prints
/// `{"performance": {...}, "context": {...}}` on stdout.
pub struct CommandAdapter {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandAdapter {
    /// Splits a command line on whitespace.
    pub fn from_command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::invalid("empty adapter command"))?;
        Ok(CommandAdapter {
            program,
            args: parts.collect(),
        })
    }
}

impl SystemAdapter for CommandAdapter {
    fn describe(&self) -> String {
        format!("command:{}", self.program)
    }

    fn apply(&mut self, config: &Configuration) -> Result<Evaluation> {
        let fail = |m: String| Error::Adapter(format!("{}: {m}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        let request = serde_json::json!({"schema_version": SCHEMA_VERSION, "configuration": config});
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(request.to_string().as_bytes())
            .map_err(|e| fail(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let eval: Evaluation = serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad reply: {e}")))?;
        let issues = eval.context.validate("context");
        if !issues.is_empty() || !eval.performance.value.is_finite() {
            return Err(fail("reply failed validation".into()));
        }
        Ok(eval)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Exploit,
    Explore,
    Remote,
    Random,
    Noop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub id: String,
    pub expected_improvement: f64,
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation_id: String,
    pub performance: f64,
    /// Relative improvement over the configuration the step started from.
    pub improvement: f64,
    pub improved: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hit_rules: Vec<String>,
}

/// Everything decided in one step, for auditing and replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub step: usize,
    pub strategy: String,
    /// Observation the step started from.
    pub incumbent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis_method: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<Flagged>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selected_knobs: Vec<String>,
    /// Rules whose antecedent held, ranked; these are the relevant rules for
    /// maintenance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matched_rules: Vec<RuleScore>,
    pub branch: Branch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    pub delta: Configuration,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moves: Vec<ExploreMove>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<StepOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mining: Option<MiningReport>,
}

/// What a strategy sees when proposing a step.
pub struct StepView<'a> {
    pub step: usize,
    pub history: &'a [ObservationRecord],
    pub incumbent: usize,
    pub catalog: &'a KnobCatalog,
}

pub trait TuningStrategy {
    fn name(&self) -> &'static str;

    /// Proposes a delta against the incumbent. An empty delta is a no-op.
    fn propose(&mut self, view: &StepView<'_>) -> Result<DecisionTrace>;

    /// Receives the observation produced by the proposal. `trace.outcome` is
    /// filled in by the strategy.
    fn feedback(&mut self, view: &StepView<'_>, trace: &mut DecisionTrace, observed: &ObservationRecord) -> Result<()>;

    /// Called after each observation is appended; may return a mining report.
    fn after_observation(&mut self, _history: &[ObservationRecord]) -> Result<Option<MiningReport>> {
        Ok(None)
    }

    fn rulebook(&self) -> Option<&Rulebook> {
        None
    }
}

fn blank_trace(step: usize, strategy: &str, incumbent: &str, branch: Branch) -> DecisionTrace {
    DecisionTrace {
        step,
        strategy: strategy.into(),
        incumbent: incumbent.into(),
        diagnosis_method: None,
        flagged: vec![],
        selected_knobs: vec![],
        matched_rules: vec![],
        branch,
        rule_id: None,
        delta: Configuration::new(),
        moves: vec![],
        notes: vec![],
        outcome: None,
        failure: None,
        mining: None,
    }
}

fn relative_outcome(view: &StepView<'_>, observed: &ObservationRecord) -> (f64, bool) {
    let base = &view.history[view.incumbent].performance;
    let gain = base
        .direction
        .relative_improvement(base.value, observed.performance.value)
        .unwrap_or(0.0);
    (gain, base.direction.better(observed.performance.value, base.value))
}

/// Uniform random configurations in encoded space.
pub struct RandomSearch {
    rng: ChaCha8Rng,
}

impl RandomSearch {
    pub fn new(seed: u64) -> Self {
        RandomSearch {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TuningStrategy for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn propose(&mut self, view: &StepView<'_>) -> Result<DecisionTrace> {
        let inc = &view.history[view.incumbent];
        let hw = inc.context.hardware;
        let config = random_configuration(view.catalog, &hw, &mut self.rng);
        let mut t = blank_trace(view.step, self.name(), &inc.id, Branch::Random);
        t.delta = config
            .into_iter()
            .filter(|(k, v)| inc.configuration.get(k) != Some(v))
            .collect();
        Ok(t)
    }

    fn feedback(&mut self, view: &StepView<'_>, trace: &mut DecisionTrace, observed: &ObservationRecord) -> Result<()> {
        let (improvement, improved) = relative_outcome(view, observed);
        trace.outcome = Some(StepOutcome {
            observation_id: observed.id.clone(),
            performance: observed.performance.value,
            improvement,
            improved,
            hit_rules: vec![],
        });
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub exploit_floor: f64,
    pub top_k: usize,
    /// Re-mine after this many new observations; 0 disables re-mining.
    pub remine_period: usize,
    pub mining: MiningParams,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            exploit_floor: DEFAULT_EXPLOIT_FLOOR,
            top_k: DEFAULT_TOP_K,
            remine_period: DEFAULT_REMINE_PERIOD,
            mining: MiningParams::default(),
        }
    }
}

/// Rule-guided strategy: diagnose, select knobs, exploit or explore.
pub struct RuleEngine {
    pub catalog: KnobCatalog,
    pub map: FunctionKnobMap,
    pub rulebook: Rulebook,
    pub hypotheses: HypothesisStore,
    pub params: EngineParams,
    advisor: Box<dyn Advisor>,
    diagnoser: Box<dyn Diagnoser>,
    /// (incumbent observation, rule) applications already tried.
    tabu: BTreeSet<(String, String)>,
    failures: BTreeMap<(String, Shift), u32>,
    since_mining: usize,
    pub mining_runs: usize,
}

impl RuleEngine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        catalog: KnobCatalog,
        map: FunctionKnobMap,
        rulebook: Rulebook,
        hypotheses: HypothesisStore,
        params: EngineParams,
        advisor: Box<dyn Advisor>,
        diagnoser: Box<dyn Diagnoser>,
    ) -> Self {
        RuleEngine {
            catalog,
            map,
            rulebook,
            hypotheses,
            params,
            advisor,
            diagnoser,
            tabu: BTreeSet::new(),
            failures: BTreeMap::new(),
            since_mining: 0,
            mining_runs: 0,
        }
    }
}

impl TuningStrategy for RuleEngine {
    fn name(&self) -> &'static str {
        "rules"
    }

    fn propose(&mut self, view: &StepView<'_>) -> Result<DecisionTrace> {
        let inc = &view.history[view.incumbent];
        let ctx = &inc.context;
        let mut trace = blank_trace(view.step, self.name(), &inc.id, Branch::Noop);

        let diagnosis = self.diagnoser.diagnose(&DiagnosisInput {
            current: ctx,
            baseline: None,
            history: view.history,
        })?;
        trace.diagnosis_method = Some(diagnosis.method.clone());
        trace.flagged = diagnosis.flagged.clone();
        let selected = select_knobs(&diagnosis.flagged, &self.map, Some(&self.rulebook), ctx);
        trace.selected_knobs = selected.clone();

        let matched = self.rulebook.retrieve(ctx, usize::MAX);
        trace.matched_rules = matched
            .iter()
            .map(|r| RuleScore {
                id: r.id.clone(),
                expected_improvement: expected_improvement(r),
                confidence: r.confidence(),
            })
            .collect();

        let flagged_fns: Vec<&str> = diagnosis.flagged.iter().map(|f| f.function.as_str()).collect();
        let hyps: Vec<&Hypothesis> = self.hypotheses.retrieve_hypotheses(&selected, &flagged_fns);
        let signals: BTreeMap<String, Signal> =
            diagnosis.flagged.iter().map(|f| (f.function.clone(), f.signal)).collect();
        let retrieved: Vec<_> = matched.iter().copied().take(self.params.top_k).collect();
        let task = TaskInfo {
            hardware: ctx.hardware,
            workload: ctx.workload_predicates.clone(),
            bottlenecks: diagnosis.flagged.clone(),
            selected_knobs: selected.clone(),
            current: inc.configuration.clone(),
        };
        let prompt = build_prompt(&task, &hyps, &retrieved);

        // Exploit candidates: matched rules above the floor, not yet tried
        // from this incumbent.
        let candidates: Vec<_> = matched
            .iter()
            .copied()
            .filter(|r| expected_improvement(r) > self.params.exploit_floor)
            .filter(|r| !self.tabu.contains(&(inc.id.clone(), r.id.clone())))
            .collect();
        let mut newly_tabu = Vec::new();
        let mut advice = None;
        for rule in &candidates {
            let only = [*rule];
            let req = AdviceRequest {
                prompt: &prompt,
                context: ctx,
                current: &inc.configuration,
                catalog: &self.catalog,
                rules: &only,
                hypotheses: &hyps,
                selected_knobs: &selected,
                signals: &signals,
                failures: &self.failures,
            };
            let a = self.advisor.advise(&req)?;
            newly_tabu.push(rule.id.clone());
            if !a.delta.is_empty() {
                advice = Some(a);
                break;
            }
            trace.notes.push(format!("rule {} yields no change here", rule.id));
        }
        for id in newly_tabu {
            self.tabu.insert((inc.id.clone(), id));
        }
        let advice = match advice {
            Some(a) => a,
            None => {
                let req = AdviceRequest {
                    prompt: &prompt,
                    context: ctx,
                    current: &inc.configuration,
                    catalog: &self.catalog,
                    rules: &[],
                    hypotheses: &hyps,
                    selected_knobs: &selected,
                    signals: &signals,
                    failures: &self.failures,
                };
                self.advisor.advise(&req)?
            }
        };
        trace.branch = match advice.kind {
            AdviceKind::Exploit => Branch::Exploit,
            AdviceKind::Explore => Branch::Explore,
            AdviceKind::Remote => Branch::Remote,
            AdviceKind::Empty => Branch::Noop,
        };
        if advice.delta.is_empty() {
            trace.branch = Branch::Noop;
        }
        trace.rule_id = advice.rule_id;
        trace.delta = advice.delta;
        trace.moves = advice.moves;
        trace.notes.extend(advice.notes);
        Ok(trace)
    }

    fn feedback(&mut self, view: &StepView<'_>, trace: &mut DecisionTrace, observed: &ObservationRecord) -> Result<()> {
        let inc = &view.history[view.incumbent];
        let (improvement, improved) = relative_outcome(view, observed);
        let applied = config_changes(
            &self.catalog,
            &inc.configuration,
            &observed.configuration,
            &inc.context.hardware,
        )?;
        let relevant: Vec<String> = trace.matched_rules.iter().map(|r| r.id.clone()).collect();
        let hit_rules = self
            .rulebook
            .update_rule_stats(&relevant, &applied, improved, improvement.max(0.0))?;
        for m in &trace.moves {
            let key = (m.knob.clone(), m.direction);
            if improved {
                self.failures.remove(&key);
            } else {
                *self.failures.entry(key).or_default() += 1;
            }
        }
        trace.outcome = Some(StepOutcome {
            observation_id: observed.id.clone(),
            performance: observed.performance.value,
            improvement,
            improved,
            hit_rules,
        });
        Ok(())
    }

    fn after_observation(&mut self, history: &[ObservationRecord]) -> Result<Option<MiningReport>> {
        if self.params.remine_period == 0 {
            return Ok(None);
        }
        self.since_mining += 1;
        if self.since_mining < self.params.remine_period {
            return Ok(None);
        }
        self.since_mining = 0;
        self.mining_runs += 1;
        let outcome = mine_rules(history, &self.catalog, &self.params.mining)?;
        let merged = self.rulebook.merge(outcome.rules);
        tracing::info!(
            transactions = outcome.report.transactions,
            rules = outcome.report.rules,
            added = merged.added,
            "re-mined rules"
        );
        Ok(Some(outcome.report))
    }

    fn rulebook(&self) -> Option<&Rulebook> {
        Some(&self.rulebook)
    }
}

/// Inputs a strategy factory may draw on.
#[derive(Clone, Default)]
pub struct StrategyConfig {
    pub catalog: KnobCatalog,
    pub map: FunctionKnobMap,
    pub rulebook: Rulebook,
    pub hypotheses: HypothesisStore,
    pub params: EngineParams,
    pub advisor: String,
    pub advisor_config: AdvisorConfig,
    pub diagnoser: String,
    pub diagnoser_config: DiagnoserConfig,
    pub seed: u64,
}

impl StrategyConfig {
    pub fn new(catalog: KnobCatalog) -> Self {
        StrategyConfig {
            catalog,
            advisor: "stub".into(),
            diagnoser: "shap".into(),
            ..Default::default()
        }
    }
}

pub fn strategy_registry() -> Registry<dyn TuningStrategy, StrategyConfig> {
    let mut r: Registry<dyn TuningStrategy, StrategyConfig> = Registry::new("strategy");
    r.register("rules", |c: &StrategyConfig| {
        let advisor = advisor_registry().create(&c.advisor, &c.advisor_config)?;
        let diagnoser = diagnoser_registry().create(&c.diagnoser, &c.diagnoser_config)?;
        Ok(Box::new(RuleEngine::new(
            c.catalog.clone(),
            c.map.clone(),
            c.rulebook.clone(),
            c.hypotheses.clone(),
            c.params.clone(),
            advisor,
            diagnoser,
        )) as Box<dyn TuningStrategy>)
    });
    r.register("random", |c: &StrategyConfig| {
        Ok(Box::new(RandomSearch::new(c.seed)) as Box<dyn TuningStrategy>)
    });
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub strategy: String,
    pub system: String,
    pub budget: usize,
    pub observations: usize,
    pub default_performance: f64,
    pub best_observation: String,
    pub best_performance: f64,
    pub best_configuration: Configuration,
    /// Relative improvement of the best observation over the default.
    pub best_improvement: f64,
    /// Sum over step observations of their relative improvement over the
    /// default.
    pub cumulative_improvement: f64,
    /// Step observations worse than the default.
    pub bad_configurations: usize,
    pub failed_steps: usize,
    pub noop_steps: usize,
    pub mining_runs: usize,
    pub rules: usize,
}

#[derive(Clone, Debug)]
pub struct SessionResult {
    pub history: Vec<ObservationRecord>,
    pub traces: Vec<DecisionTrace>,
    pub report: SessionReport,
    pub rulebook: Option<Rulebook>,
}

/// Evaluates the starting configuration, then runs `budget` steps.
pub fn run_session(
    adapter: &mut dyn SystemAdapter,
    strategy: &mut dyn TuningStrategy,
    catalog: &KnobCatalog,
    start: &Configuration,
    budget: usize,
) -> Result<SessionResult> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    let first = adapter.apply(start)?;
    let mut history = vec![first.into_record("obs-0000".into(), start.clone())];
    let direction = history[0].performance.direction;
    let mut incumbent = 0usize;
    let mut traces = Vec::with_capacity(budget);
    let (mut failed, mut noops) = (0, 0);

    for step in 1..=budget {
        let view = StepView {
            step,
            history: &history,
            incumbent,
            catalog,
        };
        let mut trace = strategy.propose(&view)?;
        if trace.delta.is_empty() {
            trace.branch = Branch::Noop;
            noops += 1;
            tracing::info!(step, "no-op step");
            traces.push(trace);
            continue;
        }
        let mut config = history[incumbent].configuration.clone();
        config.extend(trace.delta.clone());
        match adapter.apply(&config) {
            Ok(eval) => {
                let record = eval.into_record(format!("obs-{:04}", history.len()), config);
                strategy.feedback(&view, &mut trace, &record)?;
                let better = direction.better(record.performance.value, history[incumbent].performance.value);
                tracing::info!(
                    step,
                    branch = ?trace.branch,
                    performance = record.performance.value,
                    improved = better,
                    "step evaluated"
                );
                history.push(record);
                if better {
                    incumbent = history.len() - 1;
                }
                trace.mining = strategy.after_observation(&history)?;
            }
            Err(e) => {
                tracing::warn!(step, error = %e, "step failed");
                failed += 1;
                trace.failure = Some(e.to_string());
            }
        }
        traces.push(trace);
    }

    let default_perf = history[0].performance.value;
    let best = &history[incumbent];
    let bad = history[1..]
        .iter()
        .filter(|h| direction.better(default_perf, h.performance.value))
        .count();
    let report = SessionReport {
        strategy: strategy.name().into(),
        system: adapter.describe(),
        budget,
        observations: history.len(),
        default_performance: default_perf,
        best_observation: best.id.clone(),
        best_performance: best.performance.value,
        best_configuration: best.configuration.clone(),
        best_improvement: direction
            .relative_improvement(default_perf, best.performance.value)
            .unwrap_or(0.0),
        cumulative_improvement: history[1..]
            .iter()
            .filter_map(|h| direction.relative_improvement(default_perf, h.performance.value))
            .sum(),
        bad_configurations: bad,
        failed_steps: failed,
        noop_steps: noops,
        mining_runs: traces.iter().filter(|t| t.mining.is_some()).count(),
        rules: strategy.rulebook().map_or(0, Rulebook::len),
    };
    Ok(SessionResult {
        history,
        traces,
        report,
        rulebook: strategy.rulebook().cloned(),
    })
}

/// Best-so-far performance after each observation.
pub fn best_so_far(history: &[ObservationRecord]) -> Vec<f64> {
    let mut out = Vec::with_capacity(history.len());
    let mut best: Option<f64> = None;
    for h in history {
        let v = h.performance.value;
        best = Some(match best {
            Some(b) if !h.performance.direction.better(v, b) => b,
            _ => v,
        });
        out.push(best.expect("set above"));
    }
    out
}

/// Ranking key shared with reports: EI, then confidence.
pub fn rule_score(rule: &crate::model::TuningRule) -> (f64, f64) {
    (expected_improvement(rule), ranking_confidence(rule))
}
