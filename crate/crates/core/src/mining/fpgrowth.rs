//! FP-Growth restricted to itemsets that contain at least one target item.
//!
//! While mining the conditional pattern base of an item, a prefix path is
//! kept only if the new prefix already contains a target or the path itself
//! does; any other path can only contribute itemsets without a target.
//! Supports of target-containing itemsets are unaffected by the pruning.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Item = u32;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FrequentItemset {
    /// Sorted ascending.
    pub items: Vec<Item>,
    pub count: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpStats {
    /// Conditional FP-trees built during the recursion.
    pub conditional_trees: u64,
    /// Prefix paths dropped by target pruning.
    pub paths_pruned: u64,
    /// Prefix paths kept.
    pub paths_kept: u64,
}

#[derive(Clone, Debug, Default)]
pub struct FpResult {
    pub itemsets: Vec<FrequentItemset>,
    pub transactions: usize,
    pub stats: FpStats,
}

impl FpResult {
    pub fn support(&self, set: &FrequentItemset) -> f64 {
        set.count as f64 / self.transactions as f64
    }
}

/// Smallest count `c` with `c / n >= min_coverage`.
pub fn min_count(n: usize, min_coverage: f64) -> u64 {
    let n_f = n as f64;
    let mut c = (min_coverage * n_f).ceil().max(1.0) as u64;
    while c > 1 && (c - 1) as f64 / n_f >= min_coverage {
        c -= 1;
    }
    while (c as f64 / n_f) < min_coverage {
        c += 1;
    }
    c
}

struct Node {
    item: Item,
    count: u64,
    parent: usize,
    children: Vec<usize>,
}

const ROOT: usize = 0;

struct FpTree {
    nodes: Vec<Node>,
    /// item -> nodes holding it
    header: BTreeMap<Item, Vec<usize>>,
    /// item -> total count in this tree
    counts: BTreeMap<Item, u64>,
}

impl FpTree {
    fn build(paths: &[(Vec<Item>, u64)], min_count: u64) -> FpTree {
        let mut counts: BTreeMap<Item, u64> = BTreeMap::new();
        for (path, w) in paths {
            for &i in path {
                *counts.entry(i).or_default() += w;
            }
        }
        counts.retain(|_, c| *c >= min_count);

        let mut tree = FpTree {
            nodes: vec![Node {
                item: Item::MAX,
                count: 0,
                parent: ROOT,
                children: Vec::new(),
            }],
            header: BTreeMap::new(),
            counts,
        };
        let mut ordered: Vec<Item> = Vec::new();
        for (path, w) in paths {
            ordered.clear();
            ordered.extend(path.iter().copied().filter(|i| tree.counts.contains_key(i)));
            // Descending support, ties by item.
            ordered.sort_by(|a, b| tree.counts[b].cmp(&tree.counts[a]).then(a.cmp(b)));
            ordered.dedup();
            tree.insert(&ordered, *w);
        }
        tree
    }

    fn insert(&mut self, items: &[Item], weight: u64) {
        let mut cur = ROOT;
        for &item in items {
            let found = self.nodes[cur]
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].item == item);
            cur = match found {
                Some(c) => c,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(Node {
                        item,
                        count: 0,
                        parent: cur,
                        children: Vec::new(),
                    });
                    self.nodes[cur].children.push(id);
                    self.header.entry(item).or_default().push(id);
                    id
                }
            };
            self.nodes[cur].count += weight;
        }
    }

    fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// The nodes along the path if the tree has no branching.
    fn single_path(&self) -> Option<Vec<usize>> {
        let mut path = Vec::new();
        let mut cur = ROOT;
        loop {
            match self.nodes[cur].children.as_slice() {
                [] => return Some(path),
                [only] => {
                    path.push(*only);
                    cur = *only;
                }
                _ => return None,
            }
        }
    }

    /// Items in processing order: ascending support, ties by item.
    fn ascending_items(&self) -> Vec<Item> {
        let mut items: Vec<Item> = self.counts.keys().copied().collect();
        items.sort_by(|a, b| self.counts[a].cmp(&self.counts[b]).then(a.cmp(b)));
        items
    }

    fn prefix_paths(&self, item: Item) -> Vec<(Vec<Item>, u64)> {
        self.header
            .get(&item)
            .map(|nodes| {
                nodes
                    .iter()
                    .map(|&n| {
                        let mut path = Vec::new();
                        let mut cur = self.nodes[n].parent;
                        while cur != ROOT {
                            path.push(self.nodes[cur].item);
                            cur = self.nodes[cur].parent;
                        }
                        (path, self.nodes[n].count)
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

struct Miner<'a> {
    target: &'a BTreeSet<Item>,
    min_count: u64,
    prune: bool,
    max_len: usize,
    out: Vec<FrequentItemset>,
    stats: FpStats,
}

impl Miner<'_> {
    fn hits(&self, items: &[Item]) -> bool {
        items.iter().any(|i| self.target.contains(i))
    }

    fn emit(&mut self, items: &[Item], count: u64) {
        if items.len() <= self.max_len && self.hits(items) {
            let mut items = items.to_vec();
            items.sort_unstable();
            self.out.push(FrequentItemset { items, count });
        }
    }

    fn grow(&mut self, tree: &FpTree, prefix: &[Item]) {
        if let Some(path) = tree.single_path() {
            self.enumerate_path(tree, &path, prefix);
            return;
        }
        for item in tree.ascending_items() {
            let mut nprefix = prefix.to_vec();
            nprefix.push(item);
            self.emit(&nprefix, tree.counts[&item]);
            if nprefix.len() >= self.max_len {
                continue;
            }

            let prefix_hits = self.hits(&nprefix);
            let mut base = tree.prefix_paths(item);
            if self.prune {
                let before = base.len();
                base.retain(|(p, _)| prefix_hits || self.hits(p));
                self.stats.paths_pruned += (before - base.len()) as u64;
            }
            self.stats.paths_kept += base.len() as u64;
            if base.iter().all(|(p, _)| p.is_empty()) {
                continue;
            }
            let cond = FpTree::build(&base, self.min_count);
            self.stats.conditional_trees += 1;
            if !cond.is_empty() {
                self.grow(&cond, &nprefix);
            }
        }
    }

    /// Every non-empty combination of the path's nodes; support is the count
    /// of the deepest chosen node.
    fn enumerate_path(&mut self, tree: &FpTree, path: &[usize], prefix: &[Item]) {
        let n = path.len();
        assert!(n < 63, "single path too long to enumerate");
        let mut candidate: Vec<Item> = Vec::with_capacity(prefix.len() + n);
        for mask in 1u64..(1u64 << n) {
            if prefix.len() + mask.count_ones() as usize > self.max_len {
                continue;
            }
            candidate.clear();
            candidate.extend_from_slice(prefix);
            let mut count = u64::MAX;
            for (bit, &node) in path.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    candidate.push(tree.nodes[node].item);
                    count = count.min(tree.nodes[node].count);
                }
            }
            self.emit(&candidate, count);
        }
    }
}

/// Mines every itemset with support `>= min_coverage` that intersects
/// `target`. With `prune` off, the recursion explores every branch and
/// filters only on output.
pub fn fp_growth_with_stats(
    transactions: &[Vec<Item>],
    target: &BTreeSet<Item>,
    min_coverage: f64,
    prune: bool,
) -> Result<FpResult> {
    fp_growth_bounded(transactions, target, min_coverage, prune, None)
}

/// As [`fp_growth_with_stats`], keeping only itemsets of at most `max_len`
/// items; the recursion stops growing prefixes at that length.
pub fn fp_growth_bounded(
    transactions: &[Vec<Item>],
    target: &BTreeSet<Item>,
    min_coverage: f64,
    prune: bool,
    max_len: Option<usize>,
) -> Result<FpResult> {
    if transactions.is_empty() {
        return Err(Error::invalid("FP-Growth needs at least one transaction"));
    }
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(Error::invalid("min_coverage must lie in (0, 1]"));
    }
    if target.is_empty() {
        return Err(Error::invalid("target item set must be non-empty"));
    }
    let min_count = min_count(transactions.len(), min_coverage);
    let paths: Vec<(Vec<Item>, u64)> = transactions.iter().map(|t| (t.clone(), 1)).collect();
    let tree = FpTree::build(&paths, min_count);
    let mut miner = Miner {
        target,
        min_count,
        prune,
        max_len: max_len.unwrap_or(usize::MAX),
        out: Vec::new(),
        stats: FpStats::default(),
    };
    if !tree.is_empty() {
        miner.grow(&tree, &[]);
    }
    let mut itemsets = miner.out;
    itemsets.sort();
    Ok(FpResult {
        itemsets,
        transactions: transactions.len(),
        stats: miner.stats,
    })
}

/// `(itemset, support)` pairs for every frequent target-containing itemset.
pub fn fp_growth_targeted(
    transactions: &[Vec<Item>],
    target: &BTreeSet<Item>,
    min_coverage: f64,
) -> Result<Vec<(Vec<Item>, f64)>> {
    let r = fp_growth_with_stats(transactions, target, min_coverage, true)?;
    Ok(r.itemsets
        .iter()
        .map(|s| (s.items.clone(), r.support(s)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Level-wise Apriori over all candidate itemsets, filtered on output.
    fn apriori(transactions: &[Vec<Item>], target: &BTreeSet<Item>, min_coverage: f64) -> Vec<FrequentItemset> {
        let n = transactions.len() as f64;
        let sets: Vec<BTreeSet<Item>> = transactions.iter().map(|t| t.iter().copied().collect()).collect();
        let count = |c: &BTreeSet<Item>| sets.iter().filter(|t| c.is_subset(t)).count() as u64;
        let universe: BTreeSet<Item> = sets.iter().flatten().copied().collect();
        let mut level: Vec<BTreeSet<Item>> = universe
            .iter()
            .map(|i| BTreeSet::from([*i]))
            .filter(|c| count(c) as f64 / n >= min_coverage)
            .collect();
        let mut all = Vec::new();
        while !level.is_empty() {
            all.extend(level.iter().cloned());
            let mut next: BTreeSet<BTreeSet<Item>> = BTreeSet::new();
            for a in &level {
                for i in &universe {
                    if !a.contains(i) {
                        let mut c = a.clone();
                        c.insert(*i);
                        if count(&c) as f64 / n >= min_coverage {
                            next.insert(c);
                        }
                    }
                }
            }
            level = next.into_iter().collect();
        }
        let mut out: Vec<FrequentItemset> = all
            .into_iter()
            .filter(|c| c.iter().any(|i| target.contains(i)))
            .map(|c| FrequentItemset {
                count: count(&c),
                items: c.into_iter().collect(),
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    const A: Item = 0;
    const B: Item = 1;
    const T: Item = 2;

    #[test]
    fn small_targeted_example() {
        let tx = vec![vec![A, B, T], vec![A, T], vec![A, B]];
        let got = fp_growth_targeted(&tx, &BTreeSet::from([T]), 0.6).unwrap();
        assert_eq!(got, vec![(vec![A, T], 2.0 / 3.0), (vec![T], 2.0 / 3.0)]);
    }

    #[test]
    fn absent_target_yields_nothing() {
        let tx = vec![vec![A, B], vec![A]];
        assert!(fp_growth_targeted(&tx, &BTreeSet::from([T]), 0.1).unwrap().is_empty());
    }

    #[test]
    fn full_coverage_single_transaction_is_power_set() {
        let tx = vec![vec![A, B, T, 3]];
        let target = BTreeSet::from([T]);
        let got = fp_growth_targeted(&tx, &target, 1.0).unwrap();
        // Non-empty subsets of {A,B,T,3} that contain T: 2^3 = 8.
        let mut oracle: Vec<Vec<Item>> = Vec::new();
        for mask in 0u32..8 {
            let mut s: Vec<Item> = [A, B, 3]
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .map(|(_, i)| *i)
                .collect();
            s.push(T);
            s.sort();
            oracle.push(s);
        }
        oracle.sort();
        let got_sets: Vec<Vec<Item>> = got.iter().map(|(s, _)| s.clone()).collect();
        assert_eq!(got_sets, oracle);
        assert!(got.iter().all(|(_, sup)| *sup == 1.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let t = BTreeSet::from([T]);
        assert!(fp_growth_targeted(&[], &t, 0.5).is_err());
        assert!(fp_growth_targeted(&[vec![A]], &t, 0.0).is_err());
        assert!(fp_growth_targeted(&[vec![A]], &BTreeSet::new(), 0.5).is_err());
    }

    #[test]
    fn min_count_edges() {
        assert_eq!(min_count(3, 0.6), 2);
        assert_eq!(min_count(10, 0.3), 3);
        assert_eq!(min_count(1, 1.0), 1);
        assert_eq!(min_count(200, 0.05), 10);
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Vec<Item>>, BTreeSet<Item>, f64)> {
        (2u32..10, 1usize..60).prop_flat_map(|(items, n)| {
            let tx = prop::collection::vec(prop::collection::btree_set(0..items, 0..items as usize), n);
            let target = prop::collection::btree_set(0..items, 1..3);
            (tx, target, 0.05f64..0.6).prop_map(|(tx, target, cov)| {
                (tx.into_iter().map(|s| s.into_iter().collect()).collect(), target, cov)
            })
        })
    }

    proptest! {
        #[test]
        fn matches_apriori((tx, target, cov) in arb_instance()) {
            let got = fp_growth_with_stats(&tx, &target, cov, true).unwrap();
            prop_assert_eq!(got.itemsets, apriori(&tx, &target, cov));
        }

        #[test]
        fn length_cap_matches_apriori((tx, target, cov) in arb_instance(), max_len in 1usize..4) {
            let got = fp_growth_bounded(&tx, &target, cov, true, Some(max_len)).unwrap();
            let mut want = apriori(&tx, &target, cov);
            want.retain(|s| s.items.len() <= max_len);
            prop_assert_eq!(got.itemsets, want);
        }

        #[test]
        fn pruning_is_sound((tx, target, cov) in arb_instance()) {
            let pruned = fp_growth_with_stats(&tx, &target, cov, true).unwrap();
            let full = fp_growth_with_stats(&tx, &target, cov, false).unwrap();
            prop_assert_eq!(&pruned.itemsets, &full.itemsets);
            prop_assert!(pruned.stats.conditional_trees <= full.stats.conditional_trees);
        }
    }
}
