//! Discrete Brownian driver on a path tree.
//!
//! Every step splits a node into the `2^d'` sign combinations of the
//! increments `ΔW^k = ±√dt`, all equiprobable. Conditional expectations and
//! the martingale representation are therefore finite sums and exact. Two
//! layouts are provided:
//!
//! * [`TreeMode::Full`]: every path is its own node, level `n` holds
//!   `2^(d'·n)` nodes. The children of node `j` are `j·B .. j·B + B` where
//!   `B = 2^d'`, so the base-`B` digits of an index spell out its path.
//! * [`TreeMode::Recombining`] (`d' = 1` only): node `(n, j)` is the state
//!   reached after `j` down moves, `W_n = (n − 2j)√dt`. Only data that depend
//!   on the path through `(t_n, W_n)` can live on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest `d'·n_steps` accepted in full mode (about 8M nodes).
pub const FULL_TREE_BUDGET: usize = 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("full tree needs d'·n_steps = {required} but the budget is {limit} (use recombining mode)")]
    BudgetExceeded { required: usize, limit: usize },
    #[error("recombining mode requires d' = 1, got d' = {0}")]
    UnsupportedMode(usize),
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
    #[error("incomplete field at node ({level}, {index}): expected {expected} values, got {got}")]
    IncompleteField {
        level: usize,
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("node ({level}, {index}) does not exist")]
    NoSuchNode { level: usize, index: usize },
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, LatticeError> {
        if n_steps == 0 {
            return Err(LatticeError::InvalidTimeGrid("n_steps must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(LatticeError::InvalidTimeGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node time `t_n`; the last level is exactly `T`.
    pub fn time(&self, level: usize) -> f64 {
        if level == self.n_steps {
            self.horizon
        } else {
            level as f64 * self.dt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMode {
    Full,
    Recombining,
}

impl std::str::FromStr for TreeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(TreeMode::Full),
            "recombining" => Ok(TreeMode::Recombining),
            other => Err(format!("unknown tree mode '{other}' (expected full or recombining)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { level: 0, index: 0 };

    pub fn new(level: usize, index: usize) -> Self {
        Self { level, index }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.level, self.index)
    }
}

/// Immutable path tree carrying the discrete Wiener process.
#[derive(Debug, Clone)]
pub struct PathTree {
    time: TimeGrid,
    wiener_dim: usize,
    mode: TreeMode,
    sqrt_dt: f64,
}

impl PathTree {
    pub fn build(time: TimeGrid, wiener_dim: usize, mode: TreeMode) -> Result<Self, LatticeError> {
        if wiener_dim == 0 {
            return Err(LatticeError::InvalidTimeGrid("d' must be at least 1".into()));
        }
        match mode {
            TreeMode::Full => {
                let required = wiener_dim * time.n_steps();
                if required > FULL_TREE_BUDGET {
                    return Err(LatticeError::BudgetExceeded {
                        required,
                        limit: FULL_TREE_BUDGET,
                    });
                }
            }
            TreeMode::Recombining => {
                if wiener_dim != 1 {
                    return Err(LatticeError::UnsupportedMode(wiener_dim));
                }
            }
        }
        Ok(Self {
            time,
            wiener_dim,
            mode,
            sqrt_dt: time.dt().sqrt(),
        })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn n_steps(&self) -> usize {
        self.time.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener_dim
    }

    pub fn mode(&self) -> TreeMode {
        self.mode
    }

    /// Number of children of every non-leaf node, `2^d'`.
    pub fn branching(&self) -> usize {
        1 << self.wiener_dim
    }

    pub fn branch_probability(&self) -> f64 {
        1.0 / self.branching() as f64
    }

    pub fn level_size(&self, level: usize) -> usize {
        match self.mode {
            TreeMode::Full => 1usize << (self.wiener_dim * level),
            TreeMode::Recombining => level + 1,
        }
    }

    pub fn node_count(&self) -> usize {
        (0..=self.n_steps()).map(|n| self.level_size(n)).sum()
    }

    pub fn leaf_level(&self) -> usize {
        self.n_steps()
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node.level == self.n_steps()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.level <= self.n_steps() && node.index < self.level_size(node.level)
    }

    pub fn nodes_at(&self, level: usize) -> impl Iterator<Item = NodeId> {
        (0..self.level_size(level)).map(move |index| NodeId { level, index })
    }

    /// Increment `ΔW^k` taken along `branch`: bit `k` clear is `+√dt`, set is `−√dt`.
    pub fn increment(&self, branch: usize, k: usize) -> f64 {
        if (branch >> k) & 1 == 0 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    pub fn increments(&self, branch: usize) -> Vec<f64> {
        (0..self.wiener_dim).map(|k| self.increment(branch, k)).collect()
    }

    pub fn child(&self, node: NodeId, branch: usize) -> NodeId {
        debug_assert!(branch < self.branching());
        let index = match self.mode {
            TreeMode::Full => node.index * self.branching() + branch,
            TreeMode::Recombining => node.index + branch,
        };
        NodeId {
            level: node.level + 1,
            index,
        }
    }

    pub fn children(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.branching()).map(move |b| self.child(node, b))
    }

    pub fn time_of(&self, node: NodeId) -> f64 {
        self.time.time(node.level)
    }

    /// Wiener state `W` at the node.
    pub fn wiener(&self, node: NodeId) -> Vec<f64> {
        let mut w = vec![0.0; self.wiener_dim];
        match self.mode {
            TreeMode::Full => {
                let b = self.branching();
                let mut idx = node.index;
                for _ in 0..node.level {
                    let branch = idx % b;
                    idx /= b;
                    for (k, wk) in w.iter_mut().enumerate() {
                        *wk += self.increment(branch, k);
                    }
                }
            }
            TreeMode::Recombining => {
                w[0] = (node.level as f64 - 2.0 * node.index as f64) * self.sqrt_dt;
            }
        }
        w
    }

    /// Branch sequence from the root to `node` (full mode only; `None` otherwise).
    pub fn path(&self, node: NodeId) -> Option<Vec<usize>> {
        if self.mode != TreeMode::Full {
            return None;
        }
        let b = self.branching();
        let mut idx = node.index;
        let mut path = vec![0; node.level];
        for slot in path.iter_mut().rev() {
            *slot = idx % b;
            idx /= b;
        }
        Some(path)
    }

    /// Probabilities of reaching each node of `level` from the root.
    pub fn level_probabilities(&self, level: usize) -> Vec<f64> {
        match self.mode {
            TreeMode::Full => {
                let size = self.level_size(level);
                vec![1.0 / size as f64; size]
            }
            TreeMode::Recombining => {
                // Pascal's triangle with halving keeps every entry in range.
                let mut row = vec![1.0];
                for _ in 0..level {
                    let mut next = vec![0.0; row.len() + 1];
                    for (j, p) in row.iter().enumerate() {
                        next[j] += 0.5 * p;
                        next[j + 1] += 0.5 * p;
                    }
                    row = next;
                }
                row
            }
        }
    }

    pub fn node_probability(&self, node: NodeId) -> f64 {
        self.level_probabilities(node.level)[node.index]
    }

    fn check_children(&self, node: NodeId, got: usize) -> Result<(), LatticeError> {
        if !self.contains(node) || self.is_leaf(node) {
            return Err(LatticeError::NoSuchNode {
                level: node.level,
                index: node.index,
            });
        }
        if got != self.branching() {
            return Err(LatticeError::IncompleteField {
                level: node.level,
                index: node.index,
                expected: self.branching(),
                got,
            });
        }
        Ok(())
    }

    /// `E[X_{n+1} | node]` from the values on the children, in branch order.
    pub fn conditional_expectation(&self, node: NodeId, child_values: &[f64]) -> Result<f64, LatticeError> {
        self.check_children(node, child_values.len())?;
        Ok(child_values.iter().sum::<f64>() * self.branch_probability())
    }

    /// `q^k = E[X_{n+1} ΔW^k | node] / dt`.
    pub fn martingale_representation(&self, node: NodeId, child_values: &[f64]) -> Result<Vec<f64>, LatticeError> {
        self.check_children(node, child_values.len())?;
        let scale = self.branch_probability() / self.dt();
        Ok((0..self.wiener_dim)
            .map(|k| {
                child_values
                    .iter()
                    .enumerate()
                    .map(|(b, v)| v * self.increment(b, k))
                    .sum::<f64>()
                    * scale
            })
            .collect())
    }

    /// Grid-valued conditional expectation: `out[x] = Σ_b p_b children[b][x]`.
    pub fn expect_fields(&self, node: NodeId, children: &[&[f64]]) -> Result<Vec<f64>, LatticeError> {
        self.check_children(node, children.len())?;
        let p = self.branch_probability();
        let len = children[0].len();
        let mut out = vec![0.0; len];
        for child in children {
            for (o, v) in out.iter_mut().zip(child.iter()) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= p);
        Ok(out)
    }

    /// Grid-valued martingale representation, one field per Wiener component.
    pub fn represent_fields(&self, node: NodeId, children: &[&[f64]]) -> Result<Vec<Vec<f64>>, LatticeError> {
        self.check_children(node, children.len())?;
        let scale = self.branch_probability() / self.dt();
        let len = children[0].len();
        Ok((0..self.wiener_dim)
            .map(|k| {
                let mut out = vec![0.0; len];
                for (b, child) in children.iter().enumerate() {
                    let dw = self.increment(b, k);
                    for (o, v) in out.iter_mut().zip(child.iter()) {
                        *o += v * dw;
                    }
                }
                out.iter_mut().for_each(|o| *o *= scale);
                out
            })
            .collect())
    }

    /// `E[X]` for a field given on every node of `level`.
    pub fn tree_expectation(&self, level: usize, values: &[f64]) -> Result<f64, LatticeError> {
        let size = self.level_size(level);
        if values.len() != size {
            return Err(LatticeError::IncompleteField {
                level,
                index: 0,
                expected: size,
                got: values.len(),
            });
        }
        Ok(self
            .level_probabilities(level)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum())
    }

    /// `E[max_n X_n]` along paths for a scalar adapted field.
    ///
    /// Exact in both modes: the recombining case carries the distribution of
    /// the running maximum per node.
    pub fn expected_path_supremum(&self, field: &AdaptedField<f64>) -> Result<f64, LatticeError> {
        self.check_adapted(field)?;
        // (running max, probability mass) per node, sorted by running max.
        let mut states: Vec<Vec<(f64, f64)>> = vec![vec![(field.get(NodeId::ROOT).to_owned(), 1.0)]];
        for level in 0..self.n_steps() {
            let mut next: Vec<Vec<(f64, f64)>> = vec![Vec::new(); self.level_size(level + 1)];
            let p = self.branch_probability();
            for (index, dist) in states.iter().enumerate() {
                let node = NodeId { level, index };
                for child in self.children(node) {
                    let x = *field.get(child);
                    let slot = &mut next[child.index];
                    for &(m, mass) in dist {
                        slot.push((m.max(x), mass * p));
                    }
                }
            }
            for slot in next.iter_mut() {
                slot.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged: Vec<(f64, f64)> = Vec::with_capacity(slot.len());
                for &(m, mass) in slot.iter() {
                    match merged.last_mut() {
                        Some(last) if last.0 == m => last.1 += mass,
                        _ => merged.push((m, mass)),
                    }
                }
                *slot = merged;
            }
            states = next;
        }
        Ok(states.iter().flatten().map(|(m, mass)| m * mass).sum())
    }

    fn check_adapted<T>(&self, field: &AdaptedField<T>) -> Result<(), LatticeError> {
        for level in 0..=self.n_steps() {
            let got = field.levels.get(level).map_or(0, |l| l.len());
            if got != self.level_size(level) {
                return Err(LatticeError::IncompleteField {
                    level,
                    index: 0,
                    expected: self.level_size(level),
                    got,
                });
            }
        }
        Ok(())
    }
}

/// A value per tree node, stored level by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedField<T> {
    pub levels: Vec<Vec<T>>,
}

impl<T> AdaptedField<T> {
    pub fn from_levels(levels: Vec<Vec<T>>) -> Self {
        Self { levels }
    }

    pub fn get(&self, node: NodeId) -> &T {
        &self.levels[node.level][node.index]
    }

    pub fn get_mut(&mut self, node: NodeId) -> &mut T {
        &mut self.levels[node.level][node.index]
    }

    pub fn level(&self, level: usize) -> &[T] {
        &self.levels[level]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn map<U>(&self, mut f: impl FnMut(NodeId, &T) -> U) -> AdaptedField<U> {
        AdaptedField {
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(level, vals)| {
                    vals.iter()
                        .enumerate()
                        .map(|(index, v)| f(NodeId { level, index }, v))
                        .collect()
                })
                .collect(),
        }
    }
}

impl<T: Clone> AdaptedField<T> {
    pub fn filled(tree: &PathTree, value: T) -> Self {
        Self {
            levels: (0..=tree.n_steps())
                .map(|n| vec![value.clone(); tree.level_size(n)])
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(n: usize, dp: usize, mode: TreeMode) -> PathTree {
        PathTree::build(TimeGrid::new(1.0, n).unwrap(), dp, mode).unwrap()
    }

    #[test]
    fn node_counts() {
        assert_eq!(tree(1, 1, TreeMode::Full).node_count(), 3);
        let t = tree(2, 1, TreeMode::Recombining);
        let sizes: Vec<_> = (0..=2).map(|n| t.level_size(n)).collect();
        assert_eq!(sizes, vec![1, 2, 3]);
        assert_eq!(tree(12, 1, TreeMode::Full).node_count(), 8191);
        assert_eq!(tree(3, 2, TreeMode::Full).level_size(3), 64);
    }

    #[test]
    fn build_errors() {
        let tg = TimeGrid::new(1.0, 12).unwrap();
        assert_eq!(
            PathTree::build(tg, 2, TreeMode::Full).unwrap_err(),
            LatticeError::BudgetExceeded {
                required: 24,
                limit: 22
            }
        );
        assert_eq!(
            PathTree::build(tg, 2, TreeMode::Recombining).unwrap_err(),
            LatticeError::UnsupportedMode(2)
        );
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn last_time_is_horizon() {
        let tg = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(tg.time(7), 0.3);
        assert!((tg.time(3) - 3.0 * 0.3 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_expectation_examples() {
        let t = tree(4, 1, TreeMode::Full);
        let root = NodeId::ROOT;
        assert_eq!(t.conditional_expectation(root, &[1.0, 3.0]).unwrap(), 2.0);
        let dw: Vec<f64> = (0..2).map(|b| t.increment(b, 0)).collect();
        assert!(t.conditional_expectation(root, &dw).unwrap().abs() < 1e-16);
        let dw2: Vec<f64> = dw.iter().map(|d| d * d).collect();
        assert!((t.conditional_expectation(root, &dw2).unwrap() - t.dt()).abs() < 1e-15);
        assert!(matches!(
            t.conditional_expectation(root, &[1.0]),
            Err(LatticeError::IncompleteField {
                expected: 2,
                got: 1,
                ..
            })
        ));
    }

    #[test]
    fn martingale_representation_examples() {
        let t = tree(3, 2, TreeMode::Full);
        let node = NodeId::new(1, 2);
        let dw1: Vec<f64> = (0..4).map(|b| t.increment(b, 0)).collect();
        let q = t.martingale_representation(node, &dw1).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-14 && q[1].abs() < 1e-14);
        let q = t.martingale_representation(node, &[5.0; 4]).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-14));
        let sq: Vec<f64> = dw1.iter().map(|d| d * d).collect();
        let q = t.martingale_representation(node, &sq).unwrap();
        assert!(q[0].abs() < 1e-14);
    }

    #[test]
    fn tree_expectation_examples() {
        let t = tree(6, 1, TreeMode::Full);
        let n = t.leaf_level();
        let leaves: Vec<NodeId> = t.nodes_at(n).collect();
        let c = vec![2.5; leaves.len()];
        assert!((t.tree_expectation(n, &c).unwrap() - 2.5).abs() < 1e-14);
        let w: Vec<f64> = leaves.iter().map(|&l| t.wiener(l)[0]).collect();
        assert!(t.tree_expectation(n, &w).unwrap().abs() < 1e-14);
        let w2: Vec<f64> = w.iter().map(|x| x * x).collect();
        assert!((t.tree_expectation(n, &w2).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn moment_identities_every_node() {
        let t = tree(3, 2, TreeMode::Full);
        for level in 0..3 {
            for node in t.nodes_at(level) {
                for k in 0..2 {
                    let dk: Vec<f64> = (0..4).map(|b| t.increment(b, k)).collect();
                    assert!(t.conditional_expectation(node, &dk).unwrap().abs() < 1e-15);
                    for l in 0..2 {
                        let prod: Vec<f64> = (0..4).map(|b| t.increment(b, k) * t.increment(b, l)).collect();
                        let e = t.conditional_expectation(node, &prod).unwrap();
                        let want = if k == l { t.dt() } else { 0.0 };
                        assert!((e - want).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn wiener_state_follows_children() {
        let t = tree(4, 2, TreeMode::Full);
        for level in 0..4 {
            for node in t.nodes_at(level) {
                let w = t.wiener(node);
                for b in 0..t.branching() {
                    let wc = t.wiener(t.child(node, b));
                    for k in 0..2 {
                        assert!((wc[k] - w[k] - t.increment(b, k)).abs() < 1e-14);
                    }
                }
            }
        }
        let r = tree(5, 1, TreeMode::Recombining);
        for level in 0..5 {
            for node in r.nodes_at(level) {
                let w = r.wiener(node)[0];
                for b in 0..2 {
                    let wc = r.wiener(r.child(node, b))[0];
                    assert!((wc - w - r.increment(b, 0)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn recombining_probabilities_are_binomial() {
        let t = tree(6, 1, TreeMode::Recombining);
        let p = t.level_probabilities(6);
        let want = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0].map(|c| c / 64.0);
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-16);
        }
    }

    #[test]
    fn path_supremum_full_tree_matches_enumeration() {
        let t = tree(3, 1, TreeMode::Full);
        let field = AdaptedField::filled(&t, 0.0).map(|node, _| (t.wiener(node)[0]).abs());
        let e = t.expected_path_supremum(&field).unwrap();
        let mut brute = 0.0;
        for leaf in t.nodes_at(3) {
            let path = t.path(leaf).unwrap();
            let mut node = NodeId::ROOT;
            let mut m = *field.get(node);
            for b in path {
                node = t.child(node, b);
                m = m.max(*field.get(node));
            }
            brute += m / 8.0;
        }
        assert!((e - brute).abs() < 1e-15);
    }

    #[test]
    fn path_supremum_recombining_matches_full() {
        let full = tree(5, 1, TreeMode::Full);
        let rec = tree(5, 1, TreeMode::Recombining);
        let f = |t: f64, w: f64| (w + 0.3 * t).sin();
        let ff = AdaptedField::filled(&full, 0.0).map(|n, _| f(full.time_of(n), full.wiener(n)[0]));
        let fr = AdaptedField::filled(&rec, 0.0).map(|n, _| f(rec.time_of(n), rec.wiener(n)[0]));
        let a = full.expected_path_supremum(&ff).unwrap();
        let b = rec.expected_path_supremum(&fr).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
