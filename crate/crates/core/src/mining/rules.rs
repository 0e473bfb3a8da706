//! Coverage, pair confidence and consequent matching.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mining::encode::{encode_adjustment, EncodedChange};
use crate::model::{
    AdjustmentForm, Configuration, Direction, Hardware, KnobAdjustment, KnobCatalog, ObservationRecord,
    TuningRule,
};

/// Fraction of `history` in which the rule's antecedent holds.
pub fn compute_coverage(rule: &TuningRule, history: &[ObservationRecord]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let hits = history.iter().filter(|h| rule.antecedent_holds(&h.context)).count();
    hits as f64 / history.len() as f64
}

/// Encoded changes for every knob that differs between `from` and `to`.
/// Knobs missing from a configuration take their default.
pub fn config_changes(
    catalog: &KnobCatalog,
    from: &Configuration,
    to: &Configuration,
    hw: &Hardware,
) -> Result<BTreeMap<String, EncodedChange>> {
    let mut out = BTreeMap::new();
    for name in from.keys().chain(to.keys()) {
        if out.contains_key(name) {
            continue;
        }
        let spec = catalog.get(name).ok_or_else(|| Error::UnknownKnob(name.clone()))?;
        let a = from.get(name).unwrap_or(&spec.default);
        let b = to.get(name).unwrap_or(&spec.default);
        if a != b {
            out.insert(name.clone(), encode_adjustment(spec, a, b, hw)?);
        }
    }
    Ok(out)
}

/// Whether an applied change realises `adj`: same knob and direction, with
/// the magnitude (relative) or target (absolute) inside the interval.
pub fn adjustment_matches(adj: &KnobAdjustment, change: &EncodedChange) -> bool {
    if adj.knob != change.knob {
        return false;
    }
    match adj.form {
        AdjustmentForm::Relative => change.relative.is_some_and(|r| {
            r.direction == adj.direction && adj.magnitude_interval.contains(r.magnitude)
        }),
        AdjustmentForm::Absolute => adj.magnitude_interval.contains(change.absolute),
    }
}

/// Every adjustment of the consequent is matched by the applied changes.
pub fn consequent_matches(consequent: &[KnobAdjustment], changes: &BTreeMap<String, EncodedChange>) -> bool {
    !consequent.is_empty()
        && consequent
            .iter()
            .all(|adj| changes.get(&adj.knob).is_some_and(|c| adjustment_matches(adj, c)))
}

/// Counts over ordered observation pairs where the antecedent held in the
/// source and the move to the destination realised the consequent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PairStats {
    pub trials: u64,
    pub successes: u64,
    /// Sum of relative improvements over the successful pairs.
    pub improvement_sum: f64,
}

impl PairStats {
    pub fn confidence(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.successes as f64 / self.trials as f64)
    }
}

/// An ordered pair with its configuration delta, precomputed once.
#[derive(Clone, Debug)]
pub struct PairDelta {
    pub source: usize,
    pub dest: usize,
    pub changes: BTreeMap<String, EncodedChange>,
    /// Relative improvement of dest over source; may be negative.
    pub improvement: f64,
}

/// All ordered pairs of `history` whose configurations differ.
pub fn ordered_pair_deltas(
    history: &[ObservationRecord],
    catalog: &KnobCatalog,
    direction: Direction,
) -> Result<Vec<PairDelta>> {
    let mut out = Vec::new();
    for (i, a) in history.iter().enumerate() {
        for (j, b) in history.iter().enumerate() {
            if i == j {
                continue;
            }
            let changes = config_changes(catalog, &a.configuration, &b.configuration, &a.context.hardware)?;
            if changes.is_empty() {
                continue;
            }
            let improvement = direction
                .relative_improvement(a.performance.value, b.performance.value)
                .unwrap_or(0.0);
            out.push(PairDelta {
                source: i,
                dest: j,
                changes,
                improvement,
            });
        }
    }
    Ok(out)
}

pub fn pair_stats(rule: &TuningRule, history: &[ObservationRecord], deltas: &[PairDelta]) -> PairStats {
    let mut s = PairStats::default();
    for d in deltas {
        if !rule.antecedent_holds(&history[d.source].context) || !consequent_matches(&rule.consequent, &d.changes) {
            continue;
        }
        s.trials += 1;
        if d.improvement > 0.0 {
            s.successes += 1;
            s.improvement_sum += d.improvement;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        AdjustDirection, ContextSnapshot, Interval, KnobKind, KnobSpec, KnobValue, Performance, Predicate, Scale,
    };

    fn catalog() -> KnobCatalog {
        KnobCatalog::new([KnobSpec {
            name: "k".into(),
            kind: KnobKind::Continuous,
            min: 0.0,
            max: 100.0,
            default: KnobValue::Number(50.0),
            scale: Scale::Linear,
            categories: vec![],
        }])
        .unwrap()
    }

    fn rec(id: &str, rate: f64, k: f64, perf: f64) -> ObservationRecord {
        let mut context = ContextSnapshot::default();
        context.function_rates.insert("f".into(), rate);
        ObservationRecord {
            id: id.into(),
            context,
            configuration: [("k".to_string(), KnobValue::Number(k))].into(),
            performance: Performance {
                metric_name: "tps".into(),
                value: perf,
                direction: Direction::HigherBetter,
            },
        }
    }

    fn rate_rule(lo: f64, hi: f64) -> TuningRule {
        TuningRule::new(
            vec![Predicate::FunctionRate {
                function: "f".into(),
                interval: Interval::new(lo, hi),
            }],
            vec![KnobAdjustment {
                knob: "k".into(),
                form: AdjustmentForm::Relative,
                direction: AdjustDirection::Increase,
                magnitude_interval: Interval::new(0.0, 1.0),
            }],
        )
    }

    #[test]
    fn coverage_half_open() {
        let h: Vec<_> = [0.15, 0.25, 0.05, 0.2]
            .iter()
            .enumerate()
            .map(|(i, r)| rec(&i.to_string(), *r, 10.0, 1.0))
            .collect();
        assert_eq!(compute_coverage(&rate_rule(0.1, 0.2), &h), 0.5);
        let vacuous = TuningRule::new(vec![], rate_rule(0.0, 1.0).consequent);
        assert_eq!(compute_coverage(&vacuous, &h), 1.0);
        let unseen = TuningRule::new(
            vec![Predicate::Workload {
                name: "workload_type".into(),
                condition: crate::model::WorkloadCondition::Equals(crate::model::PredicateValue::Label("oltp".into())),
            }],
            vacuous.consequent.clone(),
        );
        assert_eq!(compute_coverage(&unseen, &h), 0.0);
    }

    #[test]
    fn four_pairs_three_improved() {
        // Sources with rate 0.3 move upward to four destinations; one regresses.
        let h = vec![
            rec("s", 0.3, 10.0, 100.0),
            rec("a", 0.0, 20.0, 110.0),
            rec("b", 0.0, 30.0, 120.0),
            rec("c", 0.0, 40.0, 130.0),
            rec("d", 0.0, 50.0, 90.0),
        ];
        let deltas = ordered_pair_deltas(&h, &catalog(), Direction::HigherBetter).unwrap();
        let s = pair_stats(&rate_rule(0.2, 1.0), &h, &deltas);
        assert_eq!((s.trials, s.successes), (4, 3));
        assert_eq!(s.confidence(), Some(0.75));
        assert!((s.improvement_sum - 0.6).abs() < 1e-12);
    }

    #[test]
    fn direction_must_agree() {
        let spec_changes = config_changes(
            &catalog(),
            &[("k".to_string(), KnobValue::Number(60.0))].into(),
            &[("k".to_string(), KnobValue::Number(40.0))].into(),
            &Hardware::default(),
        )
        .unwrap();
        assert!(!consequent_matches(&rate_rule(0.0, 1.0).consequent, &spec_changes));
        assert!(config_changes(
            &catalog(),
            &[("nope".to_string(), KnobValue::Number(1.0))].into(),
            &Configuration::new(),
            &Hardware::default()
        )
        .is_err());
    }
}
