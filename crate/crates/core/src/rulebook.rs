//! Rule storage, retrieval by context, ranking by expected improvement and
//! maintenance from tuning feedback.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_document, write_document, Versioned};
use crate::mining::rules::consequent_matches;
use crate::mining::EncodedChange;
use crate::model::{ContextSnapshot, TuningRule, ValidationIssue, SCHEMA_VERSION};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulebookDocument {
    pub schema_version: u32,
    pub rules: Vec<TuningRule>,
}

impl Versioned for RulebookDocument {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

/// Mean gain times confidence; 0 for unverified rules or rules without a
/// success.
pub fn expected_improvement(rule: &TuningRule) -> f64 {
    if rule.trial_count == 0 || rule.success_count == 0 {
        return 0.0;
    }
    let mean = rule.improvement_sum / rule.success_count as f64;
    mean * (rule.success_count as f64 / rule.trial_count as f64)
}

/// Verified confidence, else the mining-time estimate, else 0.
pub fn ranking_confidence(rule: &TuningRule) -> f64 {
    rule.confidence()
        .or(rule.mined.as_ref().map(|m| m.confidence))
        .unwrap_or(0.0)
}

fn rank_order(a: &TuningRule, b: &TuningRule) -> Ordering {
    expected_improvement(b)
        .total_cmp(&expected_improvement(a))
        .then_with(|| ranking_confidence(b).total_cmp(&ranking_confidence(a)))
        .then_with(|| a.id.cmp(&b.id))
}

/// Top `k` rules by EI, ties by confidence then id.
pub fn rank_and_take(mut rules: Vec<&TuningRule>, k: usize) -> Vec<&TuningRule> {
    rules.sort_by(|a, b| rank_order(a, b));
    rules.truncate(k);
    rules
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MergeSummary {
    pub added: usize,
    pub already_present: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rulebook {
    rules: Vec<TuningRule>,
}

impl Rulebook {
    /// Validates every rule; duplicate identities keep the first occurrence.
    pub fn new(rules: Vec<TuningRule>) -> Result<Self> {
        let mut issues: Vec<ValidationIssue> = Vec::new();
        for (i, r) in rules.iter().enumerate() {
            issues.extend(r.validate(&format!("rules[{i}]")));
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let mut book = Rulebook::default();
        book.merge(rules);
        Ok(book)
    }

    pub fn from_document(doc: RulebookDocument) -> Result<Self> {
        Rulebook::new(doc.rules)
    }

    pub fn to_document(&self) -> RulebookDocument {
        RulebookDocument {
            schema_version: SCHEMA_VERSION,
            rules: self.rules.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Rulebook::from_document(read_document(path)?)
    }

    /// Rewrites the whole document atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_document(path, &self.to_document())
    }

    pub fn rules(&self) -> &[TuningRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TuningRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Adds rules whose identity is new; existing rules keep their statistics.
    pub fn merge(&mut self, incoming: impl IntoIterator<Item = TuningRule>) -> MergeSummary {
        let mut seen: BTreeSet<String> = self.rules.iter().map(TuningRule::identity_key).collect();
        let mut summary = MergeSummary::default();
        for r in incoming {
            if seen.insert(r.identity_key()) {
                self.rules.push(r);
                summary.added += 1;
            } else {
                summary.already_present += 1;
            }
        }
        summary
    }

    /// Rules whose whole antecedent holds in `ctx`.
    pub fn match_rules(&self, ctx: &ContextSnapshot) -> Vec<&TuningRule> {
        self.rules.iter().filter(|r| r.antecedent_holds(ctx)).collect()
    }

    /// Matched rules ranked by EI, at most `k`.
    pub fn retrieve(&self, ctx: &ContextSnapshot, k: usize) -> Vec<&TuningRule> {
        rank_and_take(self.match_rules(ctx), k)
    }

    /// Credits the relevant rules hit by `applied`. Returns the ids of the
    /// hit rules.
    pub fn update_rule_stats(
        &mut self,
        relevant: &[String],
        applied: &BTreeMap<String, EncodedChange>,
        improved: bool,
        improvement: f64,
    ) -> Result<Vec<String>> {
        if improved && !(improvement >= 0.0 && improvement.is_finite()) {
            return Err(Error::invalid("improvement must be finite and non-negative"));
        }
        let relevant: BTreeSet<&str> = relevant.iter().map(String::as_str).collect();
        let mut hits = Vec::new();
        for rule in &mut self.rules {
            if !relevant.contains(rule.id.as_str()) || !consequent_matches(&rule.consequent, applied) {
                continue;
            }
            rule.trial_count += 1;
            if improved {
                rule.success_count += 1;
                rule.improvement_sum += improvement;
            }
            hits.push(rule.id.clone());
        }
        Ok(hits)
    }
}
