//! Bottleneck diagnosis from sampled profiles.
//!
//! Differential profiling compares a degraded snapshot with a baseline.
//! Without a baseline, a linear model of performance over function rates is
//! fitted on history and each function's exact Shapley value against the
//! historical mean is used instead.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::FunctionKnobMap;
use crate::mining::history_direction;
use crate::model::{ContextSnapshot, Direction, ObservationRecord, Signal};
use crate::registry::Registry;
use crate::rulebook::{expected_improvement, Rulebook};

pub const DEFAULT_THRESHOLD: f64 = 0.03;
pub const RIDGE_LAMBDA: f64 = 1e-3;

/// Per-function sample counts from collapsed-stack text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapsedProfile {
    /// Samples whose leaf frame is the function.
    pub leaf_samples: BTreeMap<String, u64>,
    pub total_samples: u64,
}

impl CollapsedProfile {
    /// Parses `frame;frame;leaf count` lines. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = CollapsedProfile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::invalid(format!("collapsed stack line {}: {m}", i + 1));
            let (stack, count) = line.rsplit_once(char::is_whitespace).ok_or_else(|| bad("missing sample count"))?;
            let count: u64 = count.parse().map_err(|_| bad("sample count is not a non-negative integer"))?;
            let leaf = stack.trim_end().rsplit(';').next().unwrap_or("").trim();
            if leaf.is_empty() {
                return Err(bad("empty stack"));
            }
            *p.leaf_samples.entry(leaf.to_string()).or_default() += count;
            p.total_samples += count;
        }
        Ok(p)
    }

    /// Leaf sampling rates; empty when no samples were recorded.
    pub fn rates(&self) -> BTreeMap<String, f64> {
        if self.total_samples == 0 {
            return BTreeMap::new();
        }
        let n = self.total_samples as f64;
        self.leaf_samples.iter().map(|(f, c)| (f.clone(), *c as f64 / n)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileDelta {
    pub function: String,
    pub baseline_rate: f64,
    pub observed_rate: f64,
    pub delta: f64,
}

/// Functions whose rate moved by at least `threshold`, largest moves first.
pub fn differential_profile(
    baseline: &ContextSnapshot,
    degraded: &ContextSnapshot,
    threshold: f64,
) -> Result<Vec<ProfileDelta>> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("differential threshold must be positive"));
    }
    let names: BTreeSet<&String> = baseline.function_rates.keys().chain(degraded.function_rates.keys()).collect();
    let mut out: Vec<ProfileDelta> = names
        .into_iter()
        .map(|f| {
            let (b, o) = (baseline.rate(f), degraded.rate(f));
            ProfileDelta {
                function: f.clone(),
                baseline_rate: b,
                observed_rate: o,
                delta: o - b,
            }
        })
        .filter(|d| d.delta.abs() >= threshold)
        .collect();
    out.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then_with(|| a.function.cmp(&b.function)));
    Ok(out)
}

/// Performance as an affine function of sampling rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub functions: Vec<String>,
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub direction: Direction,
}

impl LinearModel {
    pub fn rate_vector(&self, ctx: &ContextSnapshot) -> Vec<f64> {
        self.functions.iter().map(|f| ctx.rate(f)).collect()
    }

    pub fn predict_rates(&self, rates: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(rates).map(|(w, r)| w * r).sum::<f64>()
    }

    pub fn predict(&self, ctx: &ContextSnapshot) -> f64 {
        self.predict_rates(&self.rate_vector(ctx))
    }

    pub fn weight(&self, function: &str) -> f64 {
        self.functions
            .iter()
            .position(|f| f == function)
            .map_or(0.0, |i| self.weights[i])
    }
}

/// Ridge fit on centred data, refined by iterated Tikhonov steps so that
/// well-determined directions converge to the least-squares solution while
/// unidentifiable ones stay at zero.
pub fn fit_performance_model(history: &[ObservationRecord]) -> Result<LinearModel> {
    if history.is_empty() {
        return Err(Error::invalid("cannot fit a model on an empty history"));
    }
    let direction = history_direction(history)?;
    let functions: Vec<String> = history
        .iter()
        .flat_map(|h| h.context.function_rates.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (n, p) = (history.len(), functions.len());
    let x = DMatrix::from_fn(n, p, |i, j| history[i].context.rate(&functions[j]));
    let y = DVector::from_iterator(n, history.iter().map(|h| h.performance.value));
    let x_mean: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let y_mean = y.mean();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
    let yc = y.add_scalar(-y_mean);

    let mut w = DVector::zeros(p);
    if p > 0 {
        let gram = xc.transpose() * &xc;
        let a = &gram + DMatrix::identity(p, p) * RIDGE_LAMBDA;
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::invalid("ridge system is not positive definite"))?;
        let xty = xc.transpose() * &yc;
        for _ in 0..500 {
            let next = chol.solve(&(&xty + &w * RIDGE_LAMBDA));
            let step = (&next - &w).amax();
            w = next;
            if step <= 1e-15 * (1.0 + w.amax()) {
                break;
            }
        }
    }
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel {
        functions,
        intercept,
        weights,
        direction,
    })
}

/// Mean rate per model function over `history`.
pub fn background_rates(model: &LinearModel, history: &[ObservationRecord]) -> Vec<f64> {
    if history.is_empty() {
        return vec![0.0; model.functions.len()];
    }
    let n = history.len() as f64;
    model
        .functions
        .iter()
        .map(|f| history.iter().map(|h| h.context.rate(f)).sum::<f64>() / n)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub function: String,
    /// In units of the performance metric.
    pub shap_value: f64,
    /// 1-based position among contributors that hurt performance.
    pub rank: Option<usize>,
}

/// Exact Shapley values of the linear model, most harmful first.
pub fn shap_profile(model: &LinearModel, current: &ContextSnapshot, background: &[f64]) -> Vec<Attribution> {
    let rates = model.rate_vector(current);
    let sign = model.direction.sign();
    let mut out: Vec<Attribution> = model
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| Attribution {
            function: f.clone(),
            shap_value: model.weights[i] * (rates[i] - background[i]),
            rank: None,
        })
        .collect();
    out.sort_by(|a, b| {
        (sign * a.shap_value)
            .total_cmp(&(sign * b.shap_value))
            .then_with(|| a.function.cmp(&b.function))
    });
    let mut rank = 0;
    for a in &mut out {
        if sign * a.shap_value < 0.0 {
            rank += 1;
            a.rank = Some(rank);
        }
    }
    out
}

/// A function judged to be a bottleneck.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub function: String,
    pub severity: f64,
    /// Whether the function runs hotter or colder than the reference.
    pub signal: Signal,
}

/// Knobs controlling the flagged functions (by descending severity), then
/// knobs named by rules matching `ctx` (by descending EI). Ties are broken
/// by name; each knob appears once.
pub fn select_knobs(
    flagged: &[Flagged],
    map: &FunctionKnobMap,
    rulebook: Option<&Rulebook>,
    ctx: &ContextSnapshot,
) -> Vec<String> {
    let mut by_severity: BTreeMap<String, f64> = BTreeMap::new();
    for f in flagged {
        for (knob, _) in map.knobs_for(&f.function) {
            let e = by_severity.entry(knob.to_string()).or_insert(f64::NEG_INFINITY);
            *e = e.max(f.severity);
        }
    }
    let mut mapped: Vec<(String, f64)> = by_severity.into_iter().collect();
    mapped.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut out: Vec<String> = mapped.into_iter().map(|(k, _)| k).collect();

    if let Some(book) = rulebook {
        let mut by_ei: BTreeMap<String, f64> = BTreeMap::new();
        for r in book.match_rules(ctx) {
            let ei = expected_improvement(r);
            for k in r.knobs() {
                let e = by_ei.entry(k.to_string()).or_insert(f64::NEG_INFINITY);
                *e = e.max(ei);
            }
        }
        let mut ruled: Vec<(String, f64)> = by_ei.into_iter().filter(|(k, _)| !out.contains(k)).collect();
        ruled.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.extend(ruled.into_iter().map(|(k, _)| k));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoserConfig {
    pub threshold: f64,
    /// Harmful contributors kept by SHAP diagnosis.
    pub shap_top: usize,
}

impl Default for DiagnoserConfig {
    fn default() -> Self {
        DiagnoserConfig {
            threshold: DEFAULT_THRESHOLD,
            shap_top: 3,
        }
    }
}

pub struct DiagnosisInput<'a> {
    pub current: &'a ContextSnapshot,
    pub baseline: Option<&'a ContextSnapshot>,
    pub history: &'a [ObservationRecord],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub method: String,
    pub flagged: Vec<Flagged>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<ProfileDelta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributions: Vec<Attribution>,
}

pub trait Diagnoser: Send + Sync {
    fn name(&self) -> &'static str;
    fn diagnose(&self, input: &DiagnosisInput<'_>) -> Result<Diagnosis>;
}

pub struct DifferentialDiagnoser {
    pub threshold: f64,
}

impl Diagnoser for DifferentialDiagnoser {
    fn name(&self) -> &'static str {
        "differential"
    }

    fn diagnose(&self, input: &DiagnosisInput<'_>) -> Result<Diagnosis> {
        let baseline = input
            .baseline
            .ok_or_else(|| Error::invalid("differential diagnosis needs a baseline snapshot"))?;
        let deltas = differential_profile(baseline, input.current, self.threshold)?;
        Ok(Diagnosis {
            method: self.name().into(),
            flagged: deltas
                .iter()
                .map(|d| Flagged {
                    function: d.function.clone(),
                    severity: d.delta.abs(),
                    signal: if d.delta > 0.0 { Signal::HighRate } else { Signal::LowRate },
                })
                .collect(),
            deltas,
            attributions: vec![],
        })
    }
}

pub struct ShapDiagnoser {
    pub top: usize,
}

impl Diagnoser for ShapDiagnoser {
    fn name(&self) -> &'static str {
        "shap"
    }

    fn diagnose(&self, input: &DiagnosisInput<'_>) -> Result<Diagnosis> {
        let model = fit_performance_model(input.history)?;
        let background = background_rates(&model, input.history);
        let attributions = shap_profile(&model, input.current, &background);
        let flagged = attributions
            .iter()
            .filter(|a| a.rank.is_some_and(|r| r <= self.top))
            .map(|a| Flagged {
                function: a.function.clone(),
                severity: a.shap_value.abs(),
                // sign(rate - background) = sign(shap) * sign(weight)
                signal: if a.shap_value * model.weight(&a.function) > 0.0 {
                    Signal::HighRate
                } else {
                    Signal::LowRate
                },
            })
            .collect();
        Ok(Diagnosis {
            method: self.name().into(),
            flagged,
            deltas: vec![],
            attributions,
        })
    }
}

/// Differential when a baseline is available, SHAP otherwise.
pub struct AutoDiagnoser {
    differential: DifferentialDiagnoser,
    shap: ShapDiagnoser,
}

impl Diagnoser for AutoDiagnoser {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn diagnose(&self, input: &DiagnosisInput<'_>) -> Result<Diagnosis> {
        if input.baseline.is_some() {
            self.differential.diagnose(input)
        } else {
            self.shap.diagnose(input)
        }
    }
}

pub fn diagnoser_registry() -> Registry<dyn Diagnoser, DiagnoserConfig> {
    let mut r: Registry<dyn Diagnoser, DiagnoserConfig> = Registry::new("diagnoser");
    r.register("differential", |c: &DiagnoserConfig| {
        Ok(Box::new(DifferentialDiagnoser { threshold: c.threshold }) as Box<dyn Diagnoser>)
    });
    r.register("shap", |c: &DiagnoserConfig| Ok(Box::new(ShapDiagnoser { top: c.shap_top }) as Box<dyn Diagnoser>));
    r.register("auto", |c: &DiagnoserConfig| {
        Ok(Box::new(AutoDiagnoser {
            differential: DifferentialDiagnoser { threshold: c.threshold },
            shap: ShapDiagnoser { top: c.shap_top },
        }) as Box<dyn Diagnoser>)
    });
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::ControlKind;
    use crate::model::Performance;
    use proptest::prelude::*;

    fn snap(rates: &[(&str, f64)]) -> ContextSnapshot {
        let mut c = ContextSnapshot::default();
        for (f, r) in rates {
            c.function_rates.insert(f.to_string(), *r);
        }
        c
    }

    fn obs(i: usize, rates: &[(&str, f64)], perf: f64) -> ObservationRecord {
        ObservationRecord {
            id: format!("h{i}"),
            context: snap(rates),
            configuration: Default::default(),
            performance: Performance {
                metric_name: "tps".into(),
                value: perf,
                direction: Direction::HigherBetter,
            },
        }
    }

    #[test]
    fn collapsed_stacks_fold_to_leaf_rates() {
        let text = "# perf script | stackcollapse\nmain;run;buf_LRU_get_free_block 30\nmain;run;ut_delay 10\nmain;other;buf_LRU_get_free_block 20\n\nmain 40\n";
        let p = CollapsedProfile::parse(text).unwrap();
        assert_eq!(p.total_samples, 100);
        let r = p.rates();
        assert_eq!(r["buf_LRU_get_free_block"], 0.5);
        assert_eq!(r["ut_delay"], 0.1);
        assert_eq!(r["main"], 0.4);
        assert!(CollapsedProfile::parse("a;b x").is_err());
        assert!(CollapsedProfile::parse("a;b").is_err());
    }

    #[test]
    fn differential_examples() {
        let base = snap(&[("a", 0.2), ("b", 0.3)]);
        assert!(differential_profile(&base, &base, 0.05).unwrap().is_empty());
        let shifted = snap(&[("a", 0.3), ("b", 0.3)]);
        let d = differential_profile(&base, &shifted, 0.05).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].function, "a");
        let only = snap(&[("a", 0.2), ("b", 0.3), ("c", 0.2)]);
        let d = differential_profile(&base, &only, 0.05).unwrap();
        assert_eq!((d[0].function.as_str(), d[0].delta), ("c", 0.2));
        assert!(differential_profile(&base, &base, 0.0).is_err());
    }

    #[test]
    fn recovers_generating_weight() {
        let h: Vec<_> = (0..12)
            .map(|i| {
                let r1 = 0.02 * i as f64;
                let r2 = 0.3 - 0.01 * ((i * 7) % 12) as f64;
                obs(i, &[("f1", r1), ("f2", r2)], 100.0 - 50.0 * r1)
            })
            .collect();
        let m = fit_performance_model(&h).unwrap();
        assert!((m.weight("f1") + 50.0).abs() < 1e-6);
        assert!(m.weight("f2").abs() < 1e-6);
        assert!((m.intercept - 100.0).abs() < 1e-6);
    }

    #[test]
    fn two_points_interpolate_and_constant_is_flat() {
        let h = vec![obs(0, &[("f", 0.1)], 10.0), obs(1, &[("f", 0.3)], 20.0)];
        let m = fit_performance_model(&h).unwrap();
        assert!((m.predict(&snap(&[("f", 0.1)])) - 10.0).abs() < 1e-9);
        assert!((m.predict(&snap(&[("f", 0.3)])) - 20.0).abs() < 1e-9);
        let flat: Vec<_> = (0..5).map(|i| obs(i, &[("f", 0.1 * i as f64)], 7.0)).collect();
        let m = fit_performance_model(&flat).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        assert!(fit_performance_model(&[]).is_err());
    }

    #[test]
    fn shap_linear_identity() {
        let m = LinearModel {
            functions: vec!["r1".into(), "r2".into()],
            intercept: 0.0,
            weights: vec![2.0, 3.0],
            direction: Direction::HigherBetter,
        };
        let cur = snap(&[("r1", 1.0), ("r2", 1.0)]);
        let a = shap_profile(&m, &cur, &[0.0, 0.0]);
        let by: BTreeMap<_, _> = a.iter().map(|a| (a.function.as_str(), a.shap_value)).collect();
        assert_eq!((by["r1"], by["r2"]), (2.0, 3.0));
        assert_eq!(a.iter().map(|a| a.shap_value).sum::<f64>(), 5.0);
        assert!(a.iter().all(|a| a.rank.is_none()));
        let zero = shap_profile(&m, &cur, &[1.0, 1.0]);
        assert!(zero.iter().all(|a| a.shap_value == 0.0));
    }

    #[test]
    fn negative_weight_ranks_first() {
        let m = LinearModel {
            functions: vec!["f1".into(), "f2".into()],
            intercept: 100.0,
            weights: vec![-50.0, 5.0],
            direction: Direction::HigherBetter,
        };
        let a = shap_profile(&m, &snap(&[("f1", 0.4), ("f2", 0.3)]), &[0.2, 0.2]);
        assert_eq!(a[0].function, "f1");
        assert_eq!(a[0].rank, Some(1));
        // Latency: a positive contribution is the harmful one.
        let lat = LinearModel {
            direction: Direction::LowerBetter,
            ..m
        };
        let a = shap_profile(&lat, &snap(&[("f1", 0.4), ("f2", 0.3)]), &[0.2, 0.2]);
        assert_eq!(a[0].function, "f2");
    }

    fn sample_map() -> FunctionKnobMap {
        let mut m = FunctionKnobMap::default();
        m.insert("buf_LRU_get_free_block", "innodb_buffer_pool_size", ControlKind::Explicit);
        m.insert("ut_delay", "innodb_spin_wait_delay", ControlKind::Implicit);
        m.insert("sync_array_wait_event", "innodb_spin_wait_delay", ControlKind::Implicit);
        m
    }

    #[test]
    fn knob_selection() {
        let map = sample_map();
        let ctx = ContextSnapshot::default();
        let f = |n: &str, s| Flagged {
            function: n.into(),
            severity: s,
            signal: Signal::HighRate,
        };
        assert_eq!(
            select_knobs(&[f("buf_LRU_get_free_block", 0.1)], &map, None, &ctx),
            vec!["innodb_buffer_pool_size"]
        );
        assert!(select_knobs(&[], &map, Some(&Rulebook::default()), &ctx).is_empty());
        assert_eq!(
            select_knobs(&[f("ut_delay", 0.1), f("sync_array_wait_event", 0.2)], &map, None, &ctx),
            vec!["innodb_spin_wait_delay"]
        );
    }

    #[test]
    fn registry_resolves_names() {
        let reg = diagnoser_registry();
        let base = snap(&[("a", 0.1)]);
        let cur = snap(&[("a", 0.3)]);
        let input = DiagnosisInput {
            current: &cur,
            baseline: Some(&base),
            history: &[],
        };
        let d = reg.create("auto", &DiagnoserConfig::default()).unwrap().diagnose(&input).unwrap();
        assert_eq!(d.method, "differential");
        assert!(reg.create("shapp", &DiagnoserConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn local_accuracy(
            w in prop::collection::vec(-100.0f64..100.0, 1..8),
            seed in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 8),
        ) {
            let functions: Vec<String> = (0..w.len()).map(|i| format!("f{i}")).collect();
            let m = LinearModel { functions: functions.clone(), intercept: 3.0, weights: w.clone(), direction: Direction::HigherBetter };
            let cur_rates: Vec<(String, f64)> = functions.iter().zip(&seed).map(|(f, s)| (f.clone(), s.0)).collect();
            let bg: Vec<f64> = seed.iter().take(w.len()).map(|s| s.1).collect();
            let mut cur = ContextSnapshot::default();
            cur.function_rates = cur_rates.into_iter().collect();
            let total: f64 = shap_profile(&m, &cur, &bg).iter().map(|a| a.shap_value).sum();
            prop_assert!((total - (m.predict(&cur) - m.predict_rates(&bg))).abs() < 1e-9);
        }

        #[test]
        fn differential_antisymmetric(a in prop::collection::vec(0.0f64..0.2, 4), b in prop::collection::vec(0.0f64..0.2, 4)) {
            let s1 = snap(&[("a", a[0]), ("b", a[1]), ("c", a[2]), ("d", a[3])]);
            let s2 = snap(&[("a", b[0]), ("b", b[1]), ("c", b[2]), ("d", b[3])]);
            let fwd = differential_profile(&s1, &s2, 0.03).unwrap();
            let back = differential_profile(&s2, &s1, 0.03).unwrap();
            let f: BTreeMap<_, _> = fwd.iter().map(|d| (d.function.clone(), d.delta)).collect();
            let g: BTreeMap<_, _> = back.iter().map(|d| (d.function.clone(), d.delta)).collect();
            prop_assert_eq!(f.len(), g.len());
            for (k, v) in f {
                prop_assert_eq!(v, -g[&k]);
            }
        }

        #[test]
        fn selection_permutation_invariant(sev in prop::collection::vec(0.0f64..1.0, 3), rot in 0usize..3) {
            let names = ["buf_LRU_get_free_block", "ut_delay", "sync_array_wait_event"];
            let flagged: Vec<Flagged> = names.iter().zip(&sev).map(|(n, s)| Flagged { function: n.to_string(), severity: *s, signal: Signal::HighRate }).collect();
            let mut rotated = flagged.clone();
            rotated.rotate_left(rot);
            let ctx = ContextSnapshot::default();
            prop_assert_eq!(select_knobs(&flagged, &sample_map(), None, &ctx), select_knobs(&rotated, &sample_map(), None, &ctx));
        }
    }
}
