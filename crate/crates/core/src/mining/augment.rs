//! Pairwise augmentation of an observation history.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Direction, ObservationRecord};

/// One retained pair: the worse observation's context plus the move to the
/// better observation's configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AugmentedPair {
    /// Index of the worse record in the history.
    pub worse: usize,
    /// Index of the better record in the history.
    pub better: usize,
    pub worse_id: String,
    pub better_id: String,
    /// Direction-aware relative improvement of better over worse.
    pub improvement: f64,
}

/// The shared metric and direction of a history.
pub fn history_direction(history: &[ObservationRecord]) -> Result<Direction> {
    let first = history
        .first()
        .ok_or_else(|| Error::invalid("empty observation history"))?;
    for r in history {
        if r.performance.metric_name != first.performance.metric_name {
            return Err(Error::invalid(format!(
                "mixed performance metrics: `{}` and `{}`",
                first.performance.metric_name, r.performance.metric_name
            )));
        }
        if r.performance.direction != first.performance.direction {
            return Err(Error::invalid("mixed performance directions"));
        }
    }
    Ok(first.performance.direction)
}

/// Every unordered pair whose better member improves on the worse one by
/// more than `min_improvement`, skipping pairs with identical configurations.
pub fn augment_pairs(history: &[ObservationRecord], min_improvement: f64) -> Result<Vec<AugmentedPair>> {
    if history.len() < 2 {
        return Err(Error::invalid("pairwise augmentation needs at least 2 records"));
    }
    if !(min_improvement > 0.0) {
        return Err(Error::invalid("min_improvement must be positive"));
    }
    let direction = history_direction(history)?;
    let mut out = Vec::new();
    for i in 0..history.len() {
        for j in (i + 1)..history.len() {
            let (a, b) = (&history[i], &history[j]);
            if a.configuration == b.configuration {
                continue;
            }
            let (worse, better) = if direction.better(b.performance.value, a.performance.value) {
                (i, j)
            } else if direction.better(a.performance.value, b.performance.value) {
                (j, i)
            } else {
                continue;
            };
            let Some(gain) = direction.relative_improvement(
                history[worse].performance.value,
                history[better].performance.value,
            ) else {
                continue;
            };
            if gain > min_improvement {
                out.push(AugmentedPair {
                    worse,
                    better,
                    worse_id: history[worse].id.clone(),
                    better_id: history[better].id.clone(),
                    improvement: gain,
                });
            }
        }
    }
    Ok(out)
}
