//! Non-recombining binomial scenario tree for a `d'`-dimensional Brownian
//! motion on `[0, T]`.
//!
//! Each node has `B = 2^{d'}` equally likely children. Child `b` of a node
//! carries the increment `ΔW_k = +√Δt` when bit `k` of `b` is 0 and `-√Δt`
//! otherwise, so conditional means and covariances of `ΔW` are exact.
//! Nodes are addressed by `(level, index)`; the children of node `j` at level
//! `ℓ` are `j·B .. j·B + B` at level `ℓ + 1`.

use std::ops::{AddAssign, MulAssign, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of leaves.
pub const MAX_LEAVES_LOG2: usize = 20;
pub const MAX_STEPS: usize = 16;
pub const MAX_NOISE_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    horizon: f64,
    n_steps: usize,
    d_prime: usize,
    dt: f64,
    increments: Vec<Vec<f64>>,
}

impl ScenarioTree {
    pub fn new(horizon: f64, n_steps: usize, d_prime: usize) -> Result<Self> {
        check_size(n_steps, d_prime)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidTree(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 || n_steps > MAX_STEPS {
            return Err(Error::InvalidTree(format!("n_steps must be in 1..={MAX_STEPS}, got {n_steps}")));
        }
        if d_prime == 0 || d_prime > MAX_NOISE_DIM {
            return Err(Error::InvalidTree(format!("d_prime must be in 1..={MAX_NOISE_DIM}, got {d_prime}")));
        }
        let dt = horizon / n_steps as f64;
        let root = dt.sqrt();
        let increments = (0..1usize << d_prime)
            .map(|b| (0..d_prime).map(|k| if b >> k & 1 == 0 { root } else { -root }).collect())
            .collect();
        Ok(Self {
            horizon,
            n_steps,
            d_prime,
            dt,
            increments,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn d_prime(&self) -> usize {
        self.d_prime
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn branching(&self) -> usize {
        self.increments.len()
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        1 << (self.d_prime * level)
    }

    /// Total node count on levels `0..=n_steps`.
    pub fn node_count(&self) -> usize {
        (0..=self.n_steps).map(|l| self.nodes_at(l)).sum()
    }

    /// Number of nodes carrying a control, i.e. levels `0..n_steps`.
    pub fn decision_nodes(&self) -> usize {
        (0..self.n_steps).map(|l| self.nodes_at(l)).sum()
    }

    /// Probability of each node at `level`; all nodes on a level are equally likely.
    pub fn node_probability(&self, level: usize) -> f64 {
        (self.branching() as f64).powi(-(level as i32))
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn children(&self, index: usize) -> Range<usize> {
        let b = self.branching();
        index * b..index * b + b
    }

    pub fn parent(&self, index: usize) -> usize {
        index / self.branching()
    }

    /// Brownian increment leading into node `index` (at any level ≥ 1).
    pub fn increment(&self, index: usize) -> &[f64] {
        &self.increments[index % self.branching()]
    }

    /// Increments of the `B` branches, in child order.
    pub fn branch_increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    /// `E[v(children) | node]` for every node at `level`, from the values on
    /// `level + 1`.
    pub fn conditional_expectation<V>(&self, field: &NodeField<V>, level: usize) -> Result<Vec<V>>
    where
        V: Clone + Send + Sync + for<'a> AddAssign<&'a V> + MulAssign<f64>,
    {
        let children = self.field_level(field, level + 1)?;
        Ok(self.average_children(children))
    }

    /// Per-node average of child values given as a flat level vector.
    pub fn average_children<V>(&self, children: &[V]) -> Vec<V>
    where
        V: Clone + Send + Sync + for<'a> AddAssign<&'a V> + MulAssign<f64>,
    {
        let b = self.branching();
        let weight = 1.0 / b as f64;
        children
            .chunks(b)
            .map(|group| {
                let mut acc = group[0].clone();
                for v in &group[1..] {
                    acc += v;
                }
                acc *= weight;
                acc
            })
            .collect()
    }

    /// `E[Σ_ℓ running(ℓ) Δt + terminal]` with running values on levels
    /// `0..n_steps` and the terminal value on the leaves.
    pub fn expectation_pathwise(&self, running: &NodeField<f64>, terminal: &[f64]) -> Result<f64> {
        if running.levels() != self.n_steps {
            return Err(Error::LevelMismatch {
                expected: self.n_steps,
                found: running.levels(),
            });
        }
        let mut total = 0.0;
        for level in 0..self.n_steps {
            let values = self.field_level(running, level)?;
            total += self.node_probability(level) * values.iter().sum::<f64>() * self.dt;
        }
        if terminal.len() != self.nodes_at(self.n_steps) {
            return Err(Error::LevelMismatch {
                expected: self.n_steps,
                found: running.levels(),
            });
        }
        total += self.node_probability(self.n_steps) * terminal.iter().sum::<f64>();
        Ok(total)
    }

    fn field_level<'f, V>(&self, field: &'f NodeField<V>, level: usize) -> Result<&'f [V]> {
        match field.values.get(level) {
            Some(values) if values.len() == self.nodes_at(level) => Ok(values),
            _ => Err(Error::LevelMismatch {
                expected: level,
                found: field.levels(),
            }),
        }
    }
}

fn check_size(n_steps: usize, d_prime: usize) -> Result<()> {
    if n_steps.saturating_mul(d_prime) > MAX_LEAVES_LOG2 {
        return Err(Error::SizeExceeded { n_steps, d_prime });
    }
    Ok(())
}

/// One value per node on levels `0..levels()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeField<V> {
    values: Vec<Vec<V>>,
}

impl<V> NodeField<V> {
    /// Builds a field on levels `0..levels` by evaluating `f(level, index)`.
    pub fn from_fn(tree: &ScenarioTree, levels: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        let values = (0..levels)
            .map(|l| (0..tree.nodes_at(l)).map(|j| f(l, j)).collect())
            .collect();
        Self { values }
    }

    /// Wraps per-level vectors, checking them against the tree.
    pub fn from_levels(tree: &ScenarioTree, values: Vec<Vec<V>>) -> Result<Self> {
        for (level, v) in values.iter().enumerate() {
            if level > tree.n_steps() || v.len() != tree.nodes_at(level) {
                return Err(Error::LevelMismatch {
                    expected: level,
                    found: values.len(),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn levels(&self) -> usize {
        self.values.len()
    }

    pub fn level(&self, level: usize) -> &[V] {
        &self.values[level]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut Vec<V> {
        &mut self.values[level]
    }

    pub fn get(&self, level: usize, index: usize) -> &V {
        &self.values[level][index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &V)> {
        self.values
            .iter()
            .enumerate()
            .flat_map(|(l, vs)| vs.iter().enumerate().map(move |(j, v)| (l, j, v)))
    }

    pub fn map<W>(&self, mut f: impl FnMut(usize, usize, &V) -> W) -> NodeField<W> {
        NodeField {
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(l, vs)| vs.iter().enumerate().map(|(j, v)| f(l, j, v)).collect())
                .collect(),
        }
    }

    pub fn into_levels(self) -> Vec<Vec<V>> {
        self.values
    }

    /// True when the field has exactly `levels` levels shaped like `tree`.
    pub fn fits(&self, tree: &ScenarioTree, levels: usize) -> bool {
        self.values.len() == levels
            && self
                .values
                .iter()
                .enumerate()
                .all(|(l, v)| v.len() == tree.nodes_at(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_trees() {
        let t = ScenarioTree::new(1.0, 1, 1).unwrap();
        assert_eq!(t.nodes_at(1), 2);
        assert_eq!(t.increment(0), &[1.0]);
        assert_eq!(t.increment(1), &[-1.0]);
        assert_eq!(t.node_probability(1), 0.5);

        let t = ScenarioTree::new(1.0, 8, 1).unwrap();
        assert_eq!(t.nodes_at(8), 256);
        assert_eq!(t.node_probability(8), 1.0 / 256.0);

        let t = ScenarioTree::new(0.5, 2, 2).unwrap();
        assert_eq!(t.nodes_at(2), 16);
        for inc in t.branch_increments() {
            assert!(inc.iter().all(|x| x.abs() == 0.5));
        }
        assert_eq!(t.node_count(), 21);
        assert_eq!(t.decision_nodes(), 5);
    }

    #[test]
    fn guards() {
        assert_eq!(
            ScenarioTree::new(1.0, 11, 2),
            Err(Error::SizeExceeded { n_steps: 11, d_prime: 2 })
        );
        assert!(ScenarioTree::new(1.0, 16, 1).is_ok());
        assert!(ScenarioTree::new(1.0, 17, 1).is_err());
        assert!(ScenarioTree::new(0.0, 2, 1).is_err());
        assert!(ScenarioTree::new(1.0, 0, 1).is_err());
        assert!(ScenarioTree::new(1.0, 2, 3).is_err());
    }

    #[test]
    fn riemann_sum_of_time() {
        let t = ScenarioTree::new(1.0, 4, 1).unwrap();
        let running = NodeField::from_fn(&t, 4, |l, _| t.time(l));
        let e = t.expectation_pathwise(&running, &[0.0; 16]).unwrap();
        assert!((e - 0.375).abs() < 1e-15);
    }

    #[test]
    fn mismatched_levels_are_rejected() {
        let t = ScenarioTree::new(1.0, 2, 1).unwrap();
        let field = NodeField::from_fn(&t, 2, |_, _| 1.0);
        assert!(matches!(
            t.conditional_expectation(&field, 1),
            Err(Error::LevelMismatch { .. })
        ));
        assert!(t.conditional_expectation(&field, 0).is_ok());
    }
}
