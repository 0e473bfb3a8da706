//! A synthetic knob-controlled system with known optimum.
//!
//! Each function's expected time share is a cost expression over knob
//! values; sampling rates are the normalized costs and performance is the
//! workload intensity divided by the total cost, perturbed by seeded
//! log-normal noise.

pub mod expr;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_document, read_document, Versioned};
use crate::mining::{decode_value, encoded_range};
use crate::model::{
    Configuration, ContextSnapshot, Direction, Hardware, KnobCatalog, KnobKind, KnobSpec, KnobValue,
    ObservationRecord, Performance, PredicateValue, Scale, ValidationIssue,
};

pub use expr::Expr;

pub const DEFAULT_NOISE_SCALE: f64 = 0.02;
pub const MAX_GRID_POINTS: u64 = 1_000_000;

pub const BUFFER_SCENARIO: &str = include_str!("../../../../fixtures/scenarios/buffer.json");
pub const SPIN_SCENARIO: &str = include_str!("../../../../fixtures/scenarios/spin.json");
pub const COMPOSITE_SCENARIO: &str = include_str!("../../../../fixtures/scenarios/composite.json");

fn default_noise_scale() -> f64 {
    DEFAULT_NOISE_SCALE
}

fn default_metric() -> String {
    "throughput".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub intensity: f64,
    #[serde(rename = "type")]
    pub kind: String,
    /// Extra predicates reported in every snapshot.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub predicates: BTreeMap<String, PredicateValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub knobs: Vec<KnobSpec>,
    #[serde(default)]
    pub hardware: Hardware,
    pub workload: Workload,
    /// Function name to cost expression.
    pub functions: BTreeMap<String, String>,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_metric")]
    pub metric: String,
}

impl Versioned for ScenarioDocument {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub doc: ScenarioDocument,
    pub catalog: KnobCatalog,
    costs: Vec<(String, Expr)>,
}

impl Scenario {
    pub fn from_document(doc: ScenarioDocument) -> Result<Self> {
        let catalog = KnobCatalog::new(doc.knobs.clone()).map_err(Error::Validation)?;
        let mut issues = Vec::new();
        if !(doc.workload.intensity.is_finite() && doc.workload.intensity > 0.0) {
            issues.push(ValidationIssue::new("workload.intensity", "must be finite and positive"));
        }
        if !(doc.noise_scale >= 0.0 && doc.noise_scale.is_finite()) {
            issues.push(ValidationIssue::new("noise_scale", "must be finite and non-negative"));
        }
        if doc.functions.is_empty() {
            issues.push(ValidationIssue::new("functions", "at least one function is required"));
        }
        let mut costs = Vec::new();
        for (f, src) in &doc.functions {
            match Expr::parse(src) {
                Ok(e) => {
                    for v in e.variables() {
                        if !is_builtin(v) && catalog.get(v).is_none() {
                            issues.push(ValidationIssue::new(
                                format!("functions.{f}"),
                                format!("unknown variable `{v}`"),
                            ));
                        }
                    }
                    costs.push((f.clone(), e));
                }
                Err(e) => issues.push(ValidationIssue::new(format!("functions.{f}"), e.to_string())),
            }
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(Scenario { doc, catalog, costs })
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Scenario::from_document(parse_document(text, origin)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::from_document(read_document(path)?)
    }

    /// A shipped scenario by name: `buffer`, `spin` or `composite`.
    pub fn shipped(name: &str) -> Option<Scenario> {
        let text = match name {
            "buffer" => BUFFER_SCENARIO,
            "spin" => SPIN_SCENARIO,
            "composite" => COMPOSITE_SCENARIO,
            _ => return None,
        };
        Some(Scenario::parse(text, name).expect("shipped scenarios are valid"))
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn hardware(&self) -> Hardware {
        self.doc.hardware
    }

    pub fn defaults(&self) -> Configuration {
        self.catalog.defaults()
    }

    /// Fills missing knobs with defaults and checks domains.
    pub fn complete(&self, config: &Configuration) -> Result<Configuration> {
        let mut full = self.catalog.defaults();
        for (k, v) in config {
            if self.catalog.get(k).is_none() {
                return Err(Error::UnknownKnob(k.clone()));
            }
            full.insert(k.clone(), v.clone());
        }
        let issues = self.catalog.check_configuration(&full, "configuration");
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(full)
    }

    fn bindings(&self, config: &Configuration) -> BTreeMap<String, f64> {
        let mut vars = BTreeMap::new();
        vars.insert("intensity".into(), self.doc.workload.intensity);
        vars.insert("mem".into(), self.doc.hardware.total_memory_bytes as f64);
        vars.insert("cores".into(), self.doc.hardware.cores as f64);
        for spec in self.catalog.iter() {
            let v = match &config[&spec.name] {
                KnobValue::Number(n) => *n,
                KnobValue::Label(l) => spec.category_index(l).unwrap_or(0) as f64,
            };
            vars.insert(spec.name.clone(), v);
        }
        vars
    }

    /// Per-function costs of a complete, in-domain configuration.
    fn costs(&self, config: &Configuration) -> Result<Vec<(String, f64)>> {
        let vars = self.bindings(config);
        self.costs
            .iter()
            .map(|(f, e)| {
                let c = e.eval(&vars)?;
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::invalid(format!("cost of `{f}` is {c}; costs must be finite and >= 0")));
                }
                Ok((f.clone(), c))
            })
            .collect()
    }

    /// Noise-free performance and the snapshot observed under `config`.
    pub fn evaluate_noiseless(&self, config: &Configuration) -> Result<(f64, ContextSnapshot)> {
        let full = self.complete(config)?;
        self.evaluate_complete(&full)
    }

    fn evaluate_complete(&self, full: &Configuration) -> Result<(f64, ContextSnapshot)> {
        let costs = self.costs(full)?;
        let total: f64 = costs.iter().map(|(_, c)| c).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("total cost must be positive"));
        }
        let mut ctx = ContextSnapshot {
            hardware: self.doc.hardware,
            ..Default::default()
        };
        ctx.workload_predicates
            .insert("workload_type".into(), PredicateValue::Label(self.doc.workload.kind.clone()));
        for (k, v) in &self.doc.workload.predicates {
            ctx.workload_predicates.insert(k.clone(), v.clone());
        }
        for (f, c) in costs {
            if c > 0.0 {
                ctx.function_rates.insert(f, c / total);
            }
        }
        Ok((self.doc.workload.intensity / total, ctx))
    }
}

fn is_builtin(v: &str) -> bool {
    matches!(v, "intensity" | "mem" | "cores")
}

/// One evaluation of the simulated system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub performance: Performance,
    pub context: ContextSnapshot,
}

impl Evaluation {
    pub fn into_record(self, id: String, configuration: Configuration) -> ObservationRecord {
        ObservationRecord {
            id,
            context: self.context,
            configuration,
            performance: self.performance,
        }
    }
}

/// A scenario with a noise stream.
#[derive(Clone, Debug)]
pub struct Simulator {
    scenario: Scenario,
    rng: ChaCha8Rng,
    noise: Option<LogNormal<f64>>,
}

impl Simulator {
    /// Noise drawn from a stream seeded with the scenario's `noise_seed`.
    pub fn new(scenario: Scenario) -> Result<Self> {
        let seed = scenario.doc.noise_seed;
        Simulator::with_seed(scenario, seed)
    }

    pub fn with_seed(scenario: Scenario, seed: u64) -> Result<Self> {
        let scale = scenario.doc.noise_scale;
        let noise = if scale > 0.0 {
            Some(LogNormal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(Simulator {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn evaluate(&mut self, config: &Configuration) -> Result<Evaluation> {
        let (perf, context) = self.scenario.evaluate_noiseless(config)?;
        let factor = match &self.noise {
            Some(d) => d.sample(&mut self.rng),
            None => 1.0,
        };
        Ok(Evaluation {
            performance: Performance {
                metric_name: self.scenario.doc.metric.clone(),
                value: perf * factor,
                direction: Direction::HigherBetter,
            },
            context,
        })
    }
}

/// Grid values for one knob, ascending and distinct.
pub fn grid_axis(spec: &KnobSpec, resolution: usize) -> Vec<KnobValue> {
    if spec.kind == KnobKind::Categorical {
        return spec.categories.iter().cloned().map(KnobValue::Label).collect();
    }
    let n = resolution.max(1);
    let mut vals: Vec<f64> = (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let v = match spec.scale {
                Scale::Log => (spec.min.ln() + t * (spec.max.ln() - spec.min.ln())).exp(),
                _ => spec.min + t * (spec.max - spec.min),
            };
            spec.clamp_number(v)
        })
        .collect();
    vals.dedup();
    vals.into_iter().map(KnobValue::Number).collect()
}

/// Exhaustive noise-free grid search. Ties go to the lexicographically
/// smallest configuration (knobs in name order, values ascending).
pub fn ground_truth_optimum(scenario: &Scenario, resolution: usize) -> Result<(Configuration, f64)> {
    let axes: Vec<(&str, Vec<KnobValue>)> = scenario
        .catalog
        .iter()
        .map(|s| (s.name.as_str(), grid_axis(s, resolution)))
        .collect();
    let total = axes
        .iter()
        .try_fold(1u64, |acc, (_, a)| acc.checked_mul(a.len() as u64))
        .filter(|t| *t <= MAX_GRID_POINTS)
        .ok_or_else(|| Error::invalid(format!("grid exceeds {MAX_GRID_POINTS} points")))?;
    let mut idx = vec![0usize; axes.len()];
    let mut best: Option<(Configuration, f64)> = None;
    for _ in 0..total {
        let config: Configuration = axes
            .iter()
            .zip(&idx)
            .map(|((k, a), i)| (k.to_string(), a[*i].clone()))
            .collect();
        let (perf, _) = scenario.evaluate_complete(&config)?;
        if best.as_ref().is_none_or(|(_, b)| perf > *b) {
            best = Some((config, perf));
        }
        // Odometer with the last knob varying fastest.
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].1.len() {
                break;
            }
            idx[d] = 0;
        }
    }
    best.ok_or_else(|| Error::invalid("empty grid"))
}

/// Uniform draw in encoded space.
pub fn random_configuration(catalog: &KnobCatalog, hw: &Hardware, rng: &mut impl Rng) -> Configuration {
    catalog
        .iter()
        .map(|s| {
            let (lo, hi) = encoded_range(s, hw);
            let v = if s.kind == KnobKind::Categorical {
                KnobValue::Label(s.categories[rng.random_range(0..s.categories.len())].clone())
            } else {
                decode_value(s, lo + rng.random::<f64>() * (hi - lo), hw)
            };
            (s.name.clone(), v)
        })
        .collect()
}

/// `n` Latin-hypercube samples in encoded space.
pub fn latin_hypercube(catalog: &KnobCatalog, hw: &Hardware, n: usize, rng: &mut impl Rng) -> Vec<Configuration> {
    let mut out = vec![Configuration::new(); n];
    for s in catalog.iter() {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        let (lo, hi) = encoded_range(s, hw);
        for (cfg, stratum) in out.iter_mut().zip(strata) {
            let t = (stratum as f64 + rng.random::<f64>()) / n as f64;
            let v = if s.kind == KnobKind::Categorical {
                let k = s.categories.len();
                KnobValue::Label(s.categories[((t * k as f64) as usize).min(k - 1)].clone())
            } else {
                decode_value(s, lo + t * (hi - lo), hw)
            };
            cfg.insert(s.name.clone(), v);
        }
    }
    out
}

/// Observation history from Latin-hypercube samples plus the default.
pub fn sample_history(sim: &mut Simulator, n: usize, rng: &mut impl Rng) -> Result<Vec<ObservationRecord>> {
    let hw = sim.scenario().hardware();
    let mut configs = vec![sim.scenario().defaults()];
    configs.extend(latin_hypercube(&sim.scenario().catalog, &hw, n.saturating_sub(1), rng));
    configs
        .into_iter()
        .enumerate()
        .map(|(i, c)| Ok(sim.evaluate(&c)?.into_record(format!("obs-{i:04}"), c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(c: &Configuration, k: &str) -> f64 {
        c[k].as_f64().unwrap()
    }

    fn with(scn: &Scenario, k: &str, v: f64) -> Configuration {
        let mut c = scn.defaults();
        c.insert(k.into(), KnobValue::Number(v));
        c
    }

    #[test]
    fn shipped_scenarios_load() {
        for n in ["buffer", "spin", "composite"] {
            let s = Scenario::shipped(n).unwrap();
            assert_eq!(s.name(), n);
            let (p, ctx) = s.evaluate_noiseless(&s.defaults()).unwrap();
            assert!(p.is_finite() && p > 0.0);
            let sum: f64 = ctx.function_rates.values().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert!(Scenario::shipped("nope").is_none());
    }

    #[test]
    fn spin_tradeoff() {
        let s = Scenario::shipped("spin").unwrap();
        let (_, at0) = s.evaluate_noiseless(&with(&s, "innodb_spin_wait_delay", 0.0)).unwrap();
        assert!(at0.rate("sync_array_wait_event") > at0.rate("ut_delay"));
        let mut prev: Option<ContextSnapshot> = None;
        for d in 0..=100 {
            let (_, ctx) = s.evaluate_noiseless(&with(&s, "innodb_spin_wait_delay", d as f64)).unwrap();
            if let Some(p) = prev {
                assert!(ctx.rate("sync_array_wait_event") < p.rate("sync_array_wait_event"));
                assert!(ctx.rate("ut_delay") > p.rate("ut_delay"));
            }
            prev = Some(ctx);
        }
        let (best, _) = ground_truth_optimum(&s, 1000).unwrap();
        let d = num(&best, "innodb_spin_wait_delay");
        assert!(d > 0.0 && d < 100.0, "interior optimum, got {d}");
    }

    #[test]
    fn buffer_guard() {
        let s = Scenario::shipped("buffer").unwrap();
        let big = with(&s, "innodb_log_buffer_size", 64.0 * 1048576.0);
        let (_, ctx) = s.evaluate_noiseless(&big).unwrap();
        assert_eq!(ctx.rate("log_buffer_flush_to_disk"), 0.0);
        let small = with(&s, "innodb_log_buffer_size", 8.0 * 1048576.0);
        let (_, ctx) = s.evaluate_noiseless(&small).unwrap();
        assert!(ctx.rate("log_buffer_flush_to_disk") > 0.0);
        // Monotone in the knob: the optimum sits on the flat region's lower
        // edge or the domain boundary.
        let (best, _) = ground_truth_optimum(&s, 200).unwrap();
        assert!(num(&best, "innodb_log_buffer_size") >= 32.0 * 1048576.0);
    }

    #[test]
    fn noise_is_seeded() {
        let mut s = Scenario::shipped("spin").unwrap();
        s.doc.noise_scale = 0.0;
        let mut a = Simulator::new(s.clone()).unwrap();
        let c = s.defaults();
        assert_eq!(a.evaluate(&c).unwrap(), a.evaluate(&c).unwrap());
        s.doc.noise_scale = 0.02;
        let mut x = Simulator::with_seed(s.clone(), 7).unwrap();
        let mut y = Simulator::with_seed(s.clone(), 7).unwrap();
        let seq_x: Vec<f64> = (0..5).map(|_| x.evaluate(&c).unwrap().performance.value).collect();
        let seq_y: Vec<f64> = (0..5).map(|_| y.evaluate(&c).unwrap().performance.value).collect();
        assert_eq!(seq_x, seq_y);
        assert!(seq_x.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn separable_optima_compose() {
        let text = r#"{
            "schema_version": 1, "name": "sep",
            "knobs": [
                {"name": "a", "kind": "continuous", "min": 0, "max": 10, "default": 0, "scale": "linear"},
                {"name": "b", "kind": "continuous", "min": 0, "max": 10, "default": 0, "scale": "linear"}
            ],
            "workload": {"intensity": 100, "type": "oltp"},
            "functions": {"fa": "1 + (a - 3)^2", "fb": "1 + (b - 7)^2"},
            "noise_scale": 0
        }"#;
        let s = Scenario::parse(text, "sep").unwrap();
        let (joint, _) = ground_truth_optimum(&s, 11).unwrap();
        assert_eq!((num(&joint, "a"), num(&joint, "b")), (3.0, 7.0));
    }

    #[test]
    fn monotone_single_knob_hits_boundary() {
        let text = r#"{
            "schema_version": 1, "name": "mono",
            "knobs": [{"name": "a", "kind": "continuous", "min": 1, "max": 9, "default": 1, "scale": "linear"}],
            "workload": {"intensity": 10, "type": "oltp"},
            "functions": {"f": "10 / a"}
        }"#;
        let s = Scenario::parse(text, "mono").unwrap();
        let (best, _) = ground_truth_optimum(&s, 50).unwrap();
        assert_eq!(num(&best, "a"), 9.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Scenario::shipped("spin").unwrap();
        assert!(s.evaluate_noiseless(&with(&s, "innodb_spin_wait_delay", 1000.0)).is_err());
        let mut bad = s.clone();
        bad.doc.functions.insert("x".into(), "nope * 2".into());
        assert!(Scenario::from_document(bad.doc).is_err());
        assert!(ground_truth_optimum(&Scenario::shipped("composite").unwrap(), 1000).is_err());
    }

    #[test]
    fn lhs_covers_strata() {
        let s = Scenario::shipped("spin").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = latin_hypercube(&s.catalog, &s.hardware(), 10, &mut rng);
        let mut bins: Vec<usize> = samples
            .iter()
            .map(|c| ((num(c, "innodb_spin_wait_delay") / 100.0 * 10.0).floor() as usize).min(9))
            .collect();
        bins.sort();
        bins.dedup();
        assert!(bins.len() >= 8);
    }
}
