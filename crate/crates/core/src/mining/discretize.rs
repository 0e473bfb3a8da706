//! Impact-aware discretization of continuous features.
//!
//! Greedy recursive binary splitting: starting from one interval over the
//! observed range, repeatedly apply the single split (over all current
//! intervals) that most reduces the within-interval squared deviation of the
//! impact variable, until `max_intervals` is reached or no split helps.
//! Cuts sit halfway between adjacent distinct values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted boundaries `[min, c1, ..., max]`. Interval 0 is `[min, c1]`, every
/// later interval is `(c_i, c_{i+1}]`. A single distinct value gives `[v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub boundaries: Vec<f64>,
}

impl Binning {
    pub fn interval_count(&self) -> usize {
        self.boundaries.len().saturating_sub(1).max(1)
    }

    /// Index of the interval containing `x`; values outside the observed
    /// range map to the nearest end interval.
    pub fn bin_of(&self, x: f64) -> usize {
        let cuts = &self.boundaries[1..self.boundaries.len().saturating_sub(1).max(1)];
        cuts.partition_point(|c| *c < x)
    }

    /// `(lo, hi)` bounds of interval `i` as observed.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        let b = &self.boundaries;
        if b.len() == 1 {
            (b[0], b[0])
        } else {
            (b[i], b[i + 1])
        }
    }

    pub fn min(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn max(&self) -> f64 {
        *self.boundaries.last().expect("non-empty")
    }
}

/// Prefix sums over impacts sorted by value; impacts are centred first to
/// keep the one-pass variance formula well conditioned.
struct Prefix {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Prefix {
    fn new(impacts: &[f64]) -> Self {
        let mean = impacts.iter().sum::<f64>() / impacts.len() as f64;
        let mut sum = vec![0.0; impacts.len() + 1];
        let mut sq = vec![0.0; impacts.len() + 1];
        for (i, y) in impacts.iter().enumerate() {
            let d = y - mean;
            sum[i + 1] = sum[i] + d;
            sq[i + 1] = sq[i] + d * d;
        }
        Prefix { sum, sq }
    }

    /// Squared deviation of impacts in `[a, b)`.
    fn sse(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let s = self.sum[b] - self.sum[a];
        (self.sq[b] - self.sq[a] - s * s / n).max(0.0)
    }
}

/// Best split of `[a, b)`: the position `p` and the resulting gain.
fn best_split(values: &[f64], pre: &Prefix, a: usize, b: usize, min_support: usize) -> Option<(usize, f64)> {
    let whole = pre.sse(a, b);
    let mut best: Option<(usize, f64)> = None;
    let lo = a + min_support.max(1);
    let hi = b.saturating_sub(min_support.max(1));
    for p in lo..=hi {
        if p <= a || p >= b || values[p - 1] == values[p] {
            continue;
        }
        let gain = whole - pre.sse(a, p) - pre.sse(p, b);
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((p, gain));
        }
    }
    best
}

pub fn discretize_impact(samples: &[(f64, f64)], max_intervals: usize, min_support: usize) -> Result<Binning> {
    if max_intervals == 0 {
        return Err(Error::invalid("max_intervals must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("cannot discretize an empty sample"));
    }
    if samples.iter().any(|(v, y)| !v.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("discretization samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let values: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    let impacts: Vec<f64> = sorted.iter().map(|s| s.1).collect();
    let (min, max) = (values[0], values[values.len() - 1]);
    let whole = |min: f64, max: f64| Binning {
        boundaries: if min < max { vec![min, max] } else { vec![min] },
    };

    if min_support.saturating_mul(max_intervals) > sorted.len() {
        return Ok(whole(min, max));
    }

    let pre = Prefix::new(&impacts);
    let tolerance = 1e-12 * (1.0 + pre.sse(0, values.len()));
    let mut leaves: Vec<(usize, usize)> = vec![(0, values.len())];
    while leaves.len() < max_intervals {
        let mut best: Option<(usize, usize, f64)> = None;
        for (li, &(a, b)) in leaves.iter().enumerate() {
            if let Some((p, gain)) = best_split(&values, &pre, a, b, min_support) {
                if best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((li, p, gain));
                }
            }
        }
        match best {
            Some((li, p, gain)) if gain > tolerance => {
                let (a, b) = leaves[li];
                leaves[li] = (a, p);
                leaves.insert(li + 1, (p, b));
            }
            _ => break,
        }
    }

    let mut boundaries = vec![min];
    for &(_, b) in &leaves[..leaves.len() - 1] {
        boundaries.push(0.5 * (values[b - 1] + values[b]));
    }
    if max > min {
        boundaries.push(max);
    }
    Ok(Binning { boundaries })
}

/// Total within-interval squared deviation of `samples` under `binning`.
pub fn binned_sse(samples: &[(f64, f64)], binning: &Binning) -> f64 {
    let k = binning.interval_count();
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (v, y) in samples {
        groups[binning.bin_of(*v)].push(*y);
    }
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|y| (y - m) * (y - m)).sum::<f64>()
        })
        .sum()
}
