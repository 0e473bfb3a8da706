//! Rule mining: pairwise augmentation, encoding, discretization and
//! target-pruned FP-Growth.

pub mod augment;
pub mod discretize;
pub mod encode;
pub mod fpgrowth;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AdjustDirection, AdjustmentForm, Interval, KnobAdjustment, KnobCatalog, KnobKind, MinedStats, ObservationRecord,
    Predicate, PredicateValue, TuningRule, WorkloadCondition,
};

pub use augment::{augment_pairs, history_direction, AugmentedPair};
pub use discretize::{discretize_impact, Binning};
pub use encode::{apply_relative, decode_value, encode_adjustment, encode_value, encoded_range, EncodedChange};
pub use fpgrowth::{fp_growth_bounded, fp_growth_targeted, fp_growth_with_stats, FpStats, FrequentItemset, Item};
pub use rules::{compute_coverage, config_changes, consequent_matches, ordered_pair_deltas, pair_stats, PairStats};

/// One mining item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum EncodedItem {
    ContextPredicate { name: String, value: PredicateValue },
    FunctionRateInterval { function: String, bin: usize, interval: Interval },
    Adjustment { adjustment: KnobAdjustment },
}

impl EncodedItem {
    /// Canonical key; two items are equal exactly when their keys are.
    pub fn key(&self) -> String {
        match self {
            EncodedItem::ContextPredicate { .. } | EncodedItem::FunctionRateInterval { .. } => {
                self.predicate().expect("context item").canonical_key()
            }
            EncodedItem::Adjustment { adjustment } => adjustment.canonical_key(),
        }
    }

    pub fn predicate(&self) -> Option<Predicate> {
        match self {
            EncodedItem::ContextPredicate { name, value } => Some(Predicate::Workload {
                name: name.clone(),
                condition: WorkloadCondition::Equals(value.clone()),
            }),
            EncodedItem::FunctionRateInterval { function, interval, .. } => Some(Predicate::FunctionRate {
                function: function.clone(),
                interval: *interval,
            }),
            EncodedItem::Adjustment { .. } => None,
        }
    }

    pub fn is_adjustment(&self) -> bool {
        matches!(self, EncodedItem::Adjustment { .. })
    }
}

/// Items interned as ids in lexicographic order of their keys.
#[derive(Clone, Debug, Default)]
pub struct ItemTable {
    items: Vec<EncodedItem>,
}

impl ItemTable {
    fn intern(all: Vec<EncodedItem>) -> (Self, BTreeMap<String, Item>) {
        let mut by_key: BTreeMap<String, EncodedItem> = BTreeMap::new();
        for it in all {
            by_key.entry(it.key()).or_insert(it);
        }
        let ids = by_key.keys().enumerate().map(|(i, k)| (k.clone(), i as Item)).collect();
        (
            ItemTable {
                items: by_key.into_values().collect(),
            },
            ids,
        )
    }

    pub fn get(&self, id: Item) -> &EncodedItem {
        &self.items[id as usize]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transaction {
    /// Sorted, distinct item ids.
    pub items: Vec<Item>,
    pub improvement: f64,
    pub source: (String, String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub min_improvement: f64,
    pub min_coverage: f64,
    pub min_confidence: f64,
    pub max_intervals: usize,
    pub min_support: usize,
    /// Itemsets must also occur in at least this many transactions; keeps
    /// small histories from admitting every subset of every transaction.
    #[serde(default = "default_min_itemset_count")]
    pub min_itemset_count: usize,
    /// Longest itemset (antecedent plus consequent items) mined; `None`
    /// mines all lengths.
    #[serde(default)]
    pub max_itemset_len: Option<usize>,
    /// Workload predicate names admitted as items; `None` admits all.
    #[serde(default)]
    pub workload_vocabulary: Option<BTreeSet<String>>,
    /// Disable target pruning (for comparison runs).
    #[serde(default)]
    pub disable_pruning: bool,
}

pub const DEFAULT_MAX_ITEMSET_LEN: usize = 4;

fn default_min_itemset_count() -> usize {
    3
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            min_improvement: 0.05,
            min_coverage: 0.05,
            min_confidence: 0.7,
            max_intervals: 5,
            min_support: 3,
            min_itemset_count: default_min_itemset_count(),
            max_itemset_len: Some(DEFAULT_MAX_ITEMSET_LEN),
            workload_vocabulary: None,
            disable_pruning: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub observations: usize,
    pub transactions: usize,
    pub distinct_items: usize,
    pub target_items: usize,
    pub itemsets: usize,
    pub candidate_rules: usize,
    pub rules: usize,
    pub pruning: FpStats,
}

#[derive(Clone, Debug)]
pub struct MiningOutcome {
    pub rules: Vec<TuningRule>,
    pub report: MiningReport,
}

/// Transactions plus the item table they refer to.
#[derive(Clone, Debug)]
pub struct TransactionSet {
    pub items: ItemTable,
    pub transactions: Vec<Transaction>,
}

/// Interval for bin `i` of `b`, widened so that the first bin reaches `floor`
/// and the last bin reaches `ceil`.
fn bin_interval(b: &Binning, i: usize, floor: f64, ceil: f64) -> Interval {
    let last = b.interval_count() - 1;
    let (lo, hi) = b.bounds(i);
    Interval::new(if i == 0 { floor } else { lo }, if i == last { ceil.max(hi) } else { hi })
}

struct Staged {
    pair: AugmentedPair,
    context: Vec<EncodedItem>,
    rates: Vec<(String, f64)>,
    changes: BTreeMap<String, EncodedChange>,
}

/// Augments `history` into transactions with discretized items.
pub fn build_transactions(
    history: &[ObservationRecord],
    catalog: &KnobCatalog,
    params: &MiningParams,
) -> Result<TransactionSet> {
    let pairs = augment_pairs(history, params.min_improvement)?;
    let mut staged = Vec::new();
    for pair in pairs {
        let (w, b) = (&history[pair.worse], &history[pair.better]);
        let changes = config_changes(catalog, &w.configuration, &b.configuration, &w.context.hardware)?;
        if changes.is_empty() {
            continue;
        }
        let context = w
            .context
            .workload_predicates
            .iter()
            .filter(|(n, _)| params.workload_vocabulary.as_ref().is_none_or(|v| v.contains(*n)))
            .map(|(n, v)| EncodedItem::ContextPredicate {
                name: n.clone(),
                value: v.clone(),
            })
            .collect();
        let rates = w
            .context
            .function_rates
            .iter()
            .filter(|(_, r)| **r > 0.0)
            .map(|(f, r)| (f.clone(), *r))
            .collect();
        staged.push(Staged {
            pair,
            context,
            rates,
            changes,
        });
    }

    // Impact samples per discretized feature.
    let mut rate_samples: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rel_samples: BTreeMap<(&str, AdjustDirection), Vec<(f64, f64)>> = BTreeMap::new();
    let mut abs_samples: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &staged {
        let y = s.pair.improvement;
        for (f, r) in &s.rates {
            rate_samples.entry(f).or_default().push((*r, y));
        }
        for (k, c) in &s.changes {
            if let Some(rel) = c.relative {
                rel_samples.entry((k, rel.direction)).or_default().push((rel.magnitude, y));
            }
            abs_samples.entry(k).or_default().push((c.absolute, y));
        }
    }
    let bin = |samples: &[(f64, f64)]| discretize_impact(samples, params.max_intervals, params.min_support);
    let rate_bins: BTreeMap<&str, Binning> =
        rate_samples.iter().map(|(k, s)| Ok((*k, bin(s)?))).collect::<Result<_>>()?;
    let rel_bins: BTreeMap<(&str, AdjustDirection), Binning> =
        rel_samples.iter().map(|(k, s)| Ok((*k, bin(s)?))).collect::<Result<_>>()?;
    let abs_bins: BTreeMap<&str, Binning> = abs_samples
        .iter()
        .filter(|(k, _)| catalog.get(k).is_some_and(|s| s.kind != KnobKind::Categorical))
        .map(|(k, s)| Ok((*k, bin(s)?)))
        .collect::<Result<_>>()?;

    let mut per_tx: Vec<Vec<EncodedItem>> = Vec::with_capacity(staged.len());
    for s in &staged {
        let mut items = s.context.clone();
        for (f, r) in &s.rates {
            let b = &rate_bins[f.as_str()];
            let i = b.bin_of(*r);
            items.push(EncodedItem::FunctionRateInterval {
                function: f.clone(),
                bin: i,
                interval: bin_interval(b, i, 0.0, 1.0),
            });
        }
        for (k, c) in &s.changes {
            if let Some(rel) = c.relative {
                let b = &rel_bins[&(k.as_str(), rel.direction)];
                let i = b.bin_of(rel.magnitude);
                items.push(EncodedItem::Adjustment {
                    adjustment: KnobAdjustment {
                        knob: k.clone(),
                        form: AdjustmentForm::Relative,
                        direction: rel.direction,
                        magnitude_interval: bin_interval(b, i, 0.0, b.max()),
                    },
                });
            }
            let interval = match abs_bins.get(k.as_str()) {
                Some(b) => {
                    let i = b.bin_of(c.absolute);
                    let floor = if b.min() > 0.0 { 0.0 } else { b.min() - 1.0 };
                    bin_interval(b, i, floor, b.max())
                }
                None => Interval::new(c.absolute - 0.5, c.absolute + 0.5),
            };
            items.push(EncodedItem::Adjustment {
                adjustment: KnobAdjustment {
                    knob: k.clone(),
                    form: AdjustmentForm::Absolute,
                    direction: AdjustDirection::Set,
                    magnitude_interval: interval,
                },
            });
        }
        per_tx.push(items);
    }

    let (table, ids) = ItemTable::intern(per_tx.iter().flatten().cloned().collect());
    let transactions = staged
        .iter()
        .zip(per_tx)
        .map(|(s, items)| {
            let mut ids: Vec<Item> = items.iter().map(|it| ids[&it.key()]).collect();
            ids.sort_unstable();
            ids.dedup();
            Transaction {
                items: ids,
                improvement: s.pair.improvement,
                source: (s.pair.worse_id.clone(), s.pair.better_id.clone()),
            }
        })
        .collect();
    Ok(TransactionSet {
        items: table,
        transactions,
    })
}

/// Splits itemsets into rules, scores them on `history` and keeps those
/// reaching `min_confidence`. The pair-based confidence is kept in `mined`;
/// trial counts start at zero so a rule stays unverified until tuning hits it.
pub fn derive_rules(
    itemsets: &[FrequentItemset],
    items: &ItemTable,
    history: &[ObservationRecord],
    catalog: &KnobCatalog,
    min_confidence: f64,
) -> Result<Vec<TuningRule>> {
    let direction = history_direction(history)?;
    let deltas = ordered_pair_deltas(history, catalog, direction)?;
    let mut by_id: BTreeMap<String, TuningRule> = BTreeMap::new();
    for set in itemsets {
        let mut antecedent = Vec::new();
        let mut consequent = Vec::new();
        for id in &set.items {
            match items.get(*id) {
                EncodedItem::Adjustment { adjustment } => consequent.push(adjustment.clone()),
                other => antecedent.push(other.predicate().expect("context item")),
            }
        }
        if consequent.is_empty() {
            continue;
        }
        let mut rule = TuningRule::new(antecedent, consequent);
        if by_id.contains_key(&rule.id) {
            continue;
        }
        let stats = pair_stats(&rule, history, &deltas);
        let Some(confidence) = stats.confidence() else {
            continue;
        };
        if confidence < min_confidence {
            continue;
        }
        rule.coverage = compute_coverage(&rule, history);
        rule.mined = Some(MinedStats {
            pair_trials: stats.trials,
            pair_successes: stats.successes,
            confidence,
            mean_improvement: if stats.successes > 0 {
                stats.improvement_sum / stats.successes as f64
            } else {
                0.0
            },
        });
        by_id.insert(rule.id.clone(), rule);
    }
    let mut rules: Vec<TuningRule> = by_id.into_values().collect();
    rules.sort_by(|a, b| {
        let ca = a.mined.as_ref().map_or(0.0, |m| m.confidence);
        let cb = b.mined.as_ref().map_or(0.0, |m| m.confidence);
        cb.total_cmp(&ca)
            .then(b.coverage.total_cmp(&a.coverage))
            .then(a.id.cmp(&b.id))
    });
    Ok(rules)
}

/// The full pipeline from an observation history to scored rules.
pub fn mine_rules(history: &[ObservationRecord], catalog: &KnobCatalog, params: &MiningParams) -> Result<MiningOutcome> {
    if !(params.min_confidence >= 0.0 && params.min_confidence <= 1.0) {
        return Err(Error::invalid("min_confidence must lie in [0, 1]"));
    }
    let set = build_transactions(history, catalog, params)?;
    let mut report = MiningReport {
        observations: history.len(),
        transactions: set.transactions.len(),
        distinct_items: set.items.len(),
        ..Default::default()
    };
    let target: BTreeSet<Item> = (0..set.items.len() as Item)
        .filter(|i| set.items.get(*i).is_adjustment())
        .collect();
    report.target_items = target.len();
    if set.transactions.is_empty() || target.is_empty() {
        return Ok(MiningOutcome { rules: vec![], report });
    }
    let txs: Vec<Vec<Item>> = set.transactions.iter().map(|t| t.items.clone()).collect();
    let floor = params.min_itemset_count as f64 / txs.len().max(1) as f64;
    let coverage = params.min_coverage.max(floor).min(1.0);
    let fp = fp_growth_bounded(&txs, &target, coverage, !params.disable_pruning, params.max_itemset_len)?;
    report.itemsets = fp.itemsets.len();
    report.pruning = fp.stats;
    report.candidate_rules = fp
        .itemsets
        .iter()
        .filter(|s| s.items.iter().any(|i| set.items.get(*i).is_adjustment()))
        .count();
    let rules = derive_rules(&fp.itemsets, &set.items, history, catalog, params.min_confidence)?;
    report.rules = rules.len();
    Ok(MiningOutcome { rules, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContextSnapshot, Direction, KnobSpec, KnobValue, Performance, Scale};

    const GIB: f64 = (1u64 << 30) as f64;

    fn catalog() -> KnobCatalog {
        KnobCatalog::new([KnobSpec {
            name: "buffer_pool".into(),
            kind: KnobKind::MemoryBytes,
            min: 0.0,
            max: 16.0 * GIB,
            default: KnobValue::Number(2.0 * GIB),
            scale: Scale::MemoryFraction,
            categories: vec![],
        }])
        .unwrap()
    }

    /// Throughput rises with the buffer pool while the free-block search is hot.
    fn history() -> Vec<ObservationRecord> {
        (0..8)
            .map(|i| {
                let frac = 0.1 + 0.05 * i as f64;
                let mut context = ContextSnapshot::default();
                context.function_rates.insert("buf_LRU_get_free_block".into(), 0.4 - 0.04 * i as f64);
                context.workload_predicates.insert("workload_type".into(), PredicateValue::Label("oltp".into()));
                ObservationRecord {
                    id: format!("h{i}"),
                    context,
                    configuration: [("buffer_pool".to_string(), KnobValue::Number((frac * 16.0 * GIB).round()))].into(),
                    performance: Performance {
                        metric_name: "tps".into(),
                        value: 1000.0 * (1.0 + frac),
                        direction: Direction::HigherBetter,
                    },
                }
            })
            .collect()
    }

    #[test]
    fn transactions_carry_context_and_both_forms() {
        let set = build_transactions(&history(), &catalog(), &MiningParams::default()).unwrap();
        // Adjacent records differ by under 5%; every pair at distance 2 or
        // more clears the threshold: 28 - 7 = 21 pairs.
        assert_eq!(set.transactions.len(), 21);
        for t in &set.transactions {
            let kinds: Vec<_> = t.items.iter().map(|i| set.items.get(*i)).collect();
            assert!(kinds.iter().any(|k| matches!(k, EncodedItem::ContextPredicate { .. })));
            assert!(kinds.iter().any(|k| matches!(k, EncodedItem::FunctionRateInterval { .. })));
            let adj = kinds.iter().filter(|k| k.is_adjustment()).count();
            assert_eq!(adj, 2);
            assert!(t.improvement > 0.05);
        }
    }

    #[test]
    fn mined_rules_increase_the_pool() {
        let out = mine_rules(&history(), &catalog(), &MiningParams::default()).unwrap();
        assert!(out.report.rules > 0);
        assert_eq!(out.report.transactions, 21);
        for r in &out.rules {
            assert!(r.mined.as_ref().unwrap().confidence >= 0.7);
            assert_eq!(r.trial_count, 0);
            assert!(r.validate("r").is_empty());
            for a in &r.consequent {
                if a.form == AdjustmentForm::Relative {
                    assert_eq!(a.direction, AdjustDirection::Increase);
                }
            }
        }
        let pruned = out.report.pruning.conditional_trees;
        let p = MiningParams {
            disable_pruning: true,
            ..Default::default()
        };
        let full = mine_rules(&history(), &catalog(), &p).unwrap();
        assert_eq!(full.rules, out.rules);
        assert!(pruned <= full.report.pruning.conditional_trees);
    }

    #[test]
    fn empty_antecedent_rule_has_full_coverage() {
        let out = mine_rules(&history(), &catalog(), &MiningParams::default()).unwrap();
        let vacuous: Vec<_> = out.rules.iter().filter(|r| r.antecedent.is_empty()).collect();
        assert!(!vacuous.is_empty());
        assert!(vacuous.iter().all(|r| r.coverage == 1.0));
    }

    #[test]
    fn item_keys_distinguish_payloads() {
        let a = EncodedItem::ContextPredicate {
            name: "w".into(),
            value: PredicateValue::Label("oltp".into()),
        };
        let b = EncodedItem::ContextPredicate {
            name: "w".into(),
            value: PredicateValue::Label("olap".into()),
        };
        assert_ne!(a.key(), b.key());
        assert_eq!(a.key(), a.clone().key());
    }
}
