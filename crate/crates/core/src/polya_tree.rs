//! Finite multivariate Pólya trees on `R^k`.
//!
//! The partition at level `m` is the cross product of the dyadic quantile
//! intervals of each marginal of the centring measure, so it has `2^{km}`
//! sets. Intervals are left-open and right-closed everywhere.
//!
//! Branching probabilities are stored one flat array per level, with the
//! `2^k` children of every node contiguous: the flat index of a set at level
//! `m` is `parent_flat * 2^k + child_digit`, where the child digit packs the
//! parity bit of each coordinate (first coordinate most significant). With
//! this layout the whole root-to-leaf path of a point is determined by its
//! leaf index: the level-`m` ancestor of leaf `f` is `f >> k (M - m)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numerics::{self, ln_gamma_unchecked, RngHandle, LN_2PI};

/// Largest supported `k * M`; beyond this the leaf level alone would need
/// more than 16M entries.
pub const MAX_TOTAL_BITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeShape {
    dim: usize,
    depth: usize,
    alpha: f64,
    delta: f64,
}

impl TreeShape {
    /// `depth = 0` is accepted as a degenerate tree with no branching
    /// probabilities (the density is then the centring density itself).
    pub fn new(dim: usize, depth: usize, alpha: f64, delta: f64) -> Result<Self> {
        if dim == 0 {
            return domain("tree dimension must be positive");
        }
        if dim * depth > MAX_TOTAL_BITS {
            return domain(format!(
                "k * M = {} exceeds the supported maximum of {MAX_TOTAL_BITS}",
                dim * depth
            ));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return domain(format!("precision alpha must be positive, got {alpha}"));
        }
        if !(delta > 1.0) || !delta.is_finite() {
            return domain(format!("exponent delta must exceed 1, got {delta}"));
        }
        Ok(Self { dim, depth, alpha, delta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return domain(format!("precision alpha must be positive, got {alpha}"));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Number of children per node, `2^k`.
    pub fn branching(&self) -> usize {
        1 << self.dim
    }

    /// Number of sets at level `m`, `2^{km}`.
    pub fn level_len(&self, level: usize) -> usize {
        1 << (self.dim * level)
    }

    /// Total number of stored branching probabilities, `sum_{m=1}^M 2^{km}`.
    pub fn storage_len(&self) -> usize {
        (1..=self.depth).map(|m| self.level_len(m)).sum()
    }

    /// `phi(m) = m^delta`.
    pub fn phi(&self, m: usize) -> f64 {
        (m as f64).powf(self.delta)
    }

    /// Common Dirichlet parameter of the children of a level-`level` node
    /// for a given precision.
    pub fn child_param(&self, alpha: f64, level: usize) -> f64 {
        alpha * self.phi(level + 1)
    }

    pub fn partition(&self) -> Partition {
        Partition::new(self.depth)
    }
}

/// Position of a partition set: level `m` and a 1-based index per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeAddress {
    pub level: usize,
    pub index: Vec<u32>,
}

impl NodeAddress {
    pub fn new(shape: &TreeShape, level: usize, index: Vec<u32>) -> Result<Self> {
        if level > shape.depth {
            return domain(format!("level {level} exceeds tree depth {}", shape.depth));
        }
        if index.len() != shape.dim {
            return domain(format!("index has {} coordinates, expected {}", index.len(), shape.dim));
        }
        let side = 1u64 << level;
        if let Some(j) = index.iter().find(|&&j| j == 0 || u64::from(j) > side) {
            return domain(format!("index {j} outside 1..={side} at level {level}"));
        }
        Ok(Self { level, index })
    }

    pub fn root(dim: usize) -> Self {
        Self { level: 0, index: vec![1; dim] }
    }

    /// `(m - 1, ceil(j_l / 2))`, or `None` at the root.
    pub fn parent(&self) -> Option<Self> {
        if self.level == 0 {
            return None;
        }
        Some(Self {
            level: self.level - 1,
            index: self.index.iter().map(|j| j.div_ceil(2)).collect(),
        })
    }

    /// The `2^k` children in flat-digit order.
    pub fn children(&self) -> Vec<Self> {
        let k = self.index.len();
        (0..1usize << k)
            .map(|digit| Self {
                level: self.level + 1,
                index: self
                    .index
                    .iter()
                    .enumerate()
                    .map(|(l, j)| 2 * j - 1 + ((digit >> (k - 1 - l)) & 1) as u32)
                    .collect(),
            })
            .collect()
    }

    pub fn flat(&self) -> usize {
        let k = self.index.len();
        self.index
            .iter()
            .enumerate()
            .map(|(l, &j)| deposit_bits((j - 1) as usize, k, k - 1 - l, self.level))
            .fold(0, |acc, v| acc | v)
    }

    pub fn from_flat(dim: usize, level: usize, flat: usize) -> Self {
        let index = (0..dim)
            .map(|l| extract_bits(flat, dim, dim - 1 - l, level) as u32 + 1)
            .collect();
        Self { level, index }
    }
}

/// Spreads the low `bits` bits of `q` to positions `k * b + offset`.
#[inline]
fn deposit_bits(q: usize, k: usize, offset: usize, bits: usize) -> usize {
    let mut out = 0;
    for b in 0..bits {
        out |= ((q >> b) & 1) << (k * b + offset);
    }
    out
}

#[inline]
fn extract_bits(flat: usize, k: usize, offset: usize, bits: usize) -> usize {
    let mut out = 0;
    for b in 0..bits {
        out |= ((flat >> (k * b + offset)) & 1) << b;
    }
    out
}

/// Product of independent normals `N(mu_l, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringMeasure {
    pub mu: Vec<f64>,
}

impl CenteringMeasure {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.iter().any(|m| !m.is_finite()) {
            return domain("centring mean must be a non-empty finite vector");
        }
        Ok(Self { mu })
    }

    pub fn zero(dim: usize) -> Self {
        Self { mu: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn norm(&self) -> f64 {
        self.mu.iter().map(|m| m * m).sum::<f64>().sqrt()
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        ln_std_normal_product(&self.mu, x)
    }

    /// Marginal CDF `F_{0,l}(x_l)`.
    pub fn marginal_cdf(&self, coord: usize, x: f64) -> f64 {
        numerics::normal_cdf(x - self.mu[coord])
    }
}

#[inline]
pub(crate) fn ln_std_normal_product(mu: &[f64], x: &[f64]) -> f64 {
    let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (x.len() as f64 * LN_2PI + sq)
}

/// Standard-normal dyadic quantiles at the finest level of a tree.
///
/// Both [`partition_bounds`] and [`locate`] read boundaries from the same
/// quantile function, so membership is exactly consistent with the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    depth: usize,
    bounds: Vec<f64>,
}

impl Partition {
    pub fn new(depth: usize) -> Self {
        let cells = 1usize << depth;
        let bounds = (1..cells)
            .map(|i| numerics::normal_quantile(i as f64 / cells as f64).expect("p in (0,1)"))
            .collect();
        Self { depth, bounds }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// 0-based cell of `x` along one coordinate at the finest level.
    #[inline]
    pub fn leaf_cell(&self, mu: f64, x: f64) -> usize {
        self.bounds.partition_point(|b| mu + b < x)
    }

    /// Flat index of the finest-level set containing `x`.
    #[inline]
    pub fn leaf_flat(&self, mu: &[f64], x: &[f64]) -> usize {
        let k = x.len();
        let mut flat = 0;
        for (l, (&xl, &ml)) in x.iter().zip(mu).enumerate() {
            flat |= deposit_bits(self.leaf_cell(ml, xl), k, k - 1 - l, self.depth);
        }
        flat
    }

    /// Like [`Partition::leaf_flat`] for a centring mean of zero.
    #[inline]
    pub fn leaf_flat_centered(&self, x: &[f64]) -> usize {
        let k = x.len();
        let mut flat = 0;
        for (l, &xl) in x.iter().enumerate() {
            let cell = self.bounds.partition_point(|b| *b < xl);
            flat |= deposit_bits(cell, k, k - 1 - l, self.depth);
        }
        flat
    }
}

pub fn partition_bounds(
    shape: &TreeShape,
    center: &CenteringMeasure,
    level: usize,
    coord: usize,
    index: u32,
) -> Result<(f64, f64)> {
    if coord >= shape.dim || center.dim() != shape.dim {
        return domain(format!("coordinate {coord} outside dimension {}", shape.dim));
    }
    let side = 1u64 << level;
    if index == 0 || u64::from(index) > side {
        return domain(format!("index {index} outside 1..={side} at level {level}"));
    }
    let mu = center.mu[coord];
    let cells = side as f64;
    let lower = mu + numerics::normal_quantile((index - 1) as f64 / cells)?;
    let upper = mu + numerics::normal_quantile(index as f64 / cells)?;
    Ok((lower, upper))
}

/// The level-`level` set containing `x`.
pub fn locate(
    shape: &TreeShape,
    center: &CenteringMeasure,
    x: &[f64],
    level: usize,
) -> Result<NodeAddress> {
    if x.len() != shape.dim || center.dim() != shape.dim {
        return domain(format!("point has dimension {}, expected {}", x.len(), shape.dim));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return domain("cannot locate a non-finite point");
    }
    if level == 0 || level > shape.depth {
        return domain(format!("level {level} outside 1..={}", shape.depth));
    }
    let leaf = shape.partition().leaf_flat(&center.mu, x);
    Ok(NodeAddress::from_flat(shape.dim, level, leaf >> (shape.dim * (shape.depth - level))))
}

/// Dirichlet parameter vector of a node's children: every entry `alpha (m+1)^delta`.
pub fn prior_alphas(shape: &TreeShape, node: &NodeAddress) -> Result<Vec<f64>> {
    if node.level >= shape.depth {
        return domain(format!(
            "level {} has no children in a depth-{} tree",
            node.level, shape.depth
        ));
    }
    Ok(vec![shape.child_param(shape.alpha, node.level); shape.branching()])
}

/// Branching probabilities of every set at levels `1..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredProbabilities", into = "StoredProbabilities")]
pub struct BranchingProbabilities {
    dim: usize,
    depth: usize,
    frozen_root: bool,
    values: Vec<Vec<f64>>,
    logs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct StoredProbabilities {
    dim: usize,
    depth: usize,
    frozen_root: bool,
    log_values: Vec<Vec<f64>>,
}

impl From<StoredProbabilities> for BranchingProbabilities {
    fn from(s: StoredProbabilities) -> Self {
        let values = s.log_values.iter().map(|lv| lv.iter().map(|l| l.exp()).collect()).collect();
        Self { dim: s.dim, depth: s.depth, frozen_root: s.frozen_root, values, logs: s.log_values }
    }
}

impl From<BranchingProbabilities> for StoredProbabilities {
    fn from(b: BranchingProbabilities) -> Self {
        Self { dim: b.dim, depth: b.depth, frozen_root: b.frozen_root, log_values: b.logs }
    }
}

impl BranchingProbabilities {
    /// Every branching probability at its prior mean `1 / 2^k`.
    pub fn uniform(shape: &TreeShape, frozen_root: bool) -> Self {
        let p = 1.0 / shape.branching() as f64;
        let values: Vec<Vec<f64>> = (1..=shape.depth).map(|m| vec![p; shape.level_len(m)]).collect();
        let logs = values.iter().map(|v| vec![p.ln(); v.len()]).collect();
        Self { dim: shape.dim, depth: shape.depth, frozen_root, values, logs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Whether the root's children are pinned at `1 / 2^k` (median regression).
    pub fn frozen_root(&self) -> bool {
        self.frozen_root
    }

    pub fn branching(&self) -> usize {
        1 << self.dim
    }

    /// Branching probabilities of the sets at level `m` (1-based).
    pub fn level(&self, m: usize) -> &[f64] {
        &self.values[m - 1]
    }

    pub fn level_logs(&self, m: usize) -> &[f64] {
        &self.logs[m - 1]
    }

    /// The probability vector over the children of internal node `node`.
    pub fn children_of(&self, node_level: usize, node_flat: usize) -> &[f64] {
        let b = self.branching();
        &self.values[node_level][node_flat * b..(node_flat + 1) * b]
    }

    pub fn get(&self, node: &NodeAddress) -> Result<f64> {
        self.check_address(node)?;
        Ok(self.values[node.level - 1][node.flat()])
    }

    /// Replaces the child vector of internal node `(node_level, node_flat)`.
    pub fn set_children(&mut self, node_level: usize, node_flat: usize, probs: &[f64]) -> Result<()> {
        let b = self.branching();
        if probs.len() != b {
            return domain(format!("child vector must have length {b}"));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-12 {
            return domain("child vector is not a probability vector");
        }
        let range = node_flat * b..(node_flat + 1) * b;
        self.values[node_level][range.clone()].copy_from_slice(probs);
        for (l, p) in self.logs[node_level][range].iter_mut().zip(probs) {
            *l = p.ln();
        }
        Ok(())
    }

    pub(crate) fn children_mut(&mut self, node_level: usize, node_flat: usize) -> (&mut [f64], &mut [f64]) {
        let b = self.branching();
        let range = node_flat * b..(node_flat + 1) * b;
        (&mut self.values[node_level][range.clone()], &mut self.logs[node_level][range])
    }

    fn check_address(&self, node: &NodeAddress) -> Result<()> {
        if node.level == 0 || node.level > self.depth || node.index.len() != self.dim {
            return domain(format!("address {node:?} is not a set of this tree"));
        }
        let side = 1u64 << node.level;
        if node.index.iter().any(|&j| j == 0 || u64::from(j) > side) {
            return domain(format!("address {node:?} is not a set of this tree"));
        }
        Ok(())
    }

    /// `sum_m ln Y_m` along the root-to-leaf path of finest-level set `leaf`.
    #[inline]
    pub fn ln_path(&self, leaf: usize) -> f64 {
        let mut acc = 0.0;
        for m in 1..=self.depth {
            acc += self.logs[m - 1][leaf >> (self.dim * (self.depth - m))];
        }
        acc
    }

    /// `prod_m Y_m` along the root-to-leaf path of finest-level set `leaf`.
    #[inline]
    pub fn path_product(&self, leaf: usize) -> f64 {
        let mut acc = 1.0;
        for m in 1..=self.depth {
            acc *= self.values[m - 1][leaf >> (self.dim * (self.depth - m))];
        }
        acc
    }

    /// Probabilities of every finest-level set.
    pub fn leaf_probabilities(&self) -> Vec<f64> {
        let n = 1usize << (self.dim * self.depth);
        (0..n).map(|leaf| self.path_product(leaf)).collect()
    }

    /// Sum of `ln Y` over the sets at each level `1..=M`, skipping the
    /// frozen root vector. These are the sufficient statistics of the
    /// precision's conditional posterior.
    pub fn level_log_sums(&self) -> Vec<f64> {
        self.logs
            .iter()
            .enumerate()
            .map(|(i, lv)| if i == 0 && self.frozen_root { 0.0 } else { lv.iter().sum() })
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        let b = self.branching();
        self.values.iter().all(|lv| {
            lv.chunks(b).all(|c| {
                c.iter().all(|p| (0.0..=1.0).contains(p)) && (c.iter().sum::<f64>() - 1.0).abs() <= 1e-12
            })
        })
    }
}

pub fn sample_prior(shape: &TreeShape, rng: &mut RngHandle, frozen_root: bool) -> BranchingProbabilities {
    let mut probs = BranchingProbabilities::uniform(shape, frozen_root);
    let b = shape.branching();
    let mut params = vec![0.0; b];
    for level in 0..shape.depth {
        if level == 0 && frozen_root {
            continue;
        }
        params.fill(shape.child_param(shape.alpha, level));
        for node in 0..shape.level_len(level) {
            let (vals, logs) = probs.children_mut(level, node);
            numerics::sample_dirichlet_into(&params, rng, vals, logs).expect("positive parameters");
        }
    }
    probs
}

/// `F(B_{m,j})`: product of branching probabilities from the root to `node`.
pub fn set_probability(probs: &BranchingProbabilities, node: &NodeAddress) -> Result<f64> {
    probs.check_address(node)?;
    let k = probs.dim;
    let flat = node.flat();
    Ok((1..=node.level).map(|m| probs.values[m - 1][flat >> (k * (node.level - m))]).product())
}

pub fn ln_tree_density(
    partition: &Partition,
    probs: &BranchingProbabilities,
    center: &CenteringMeasure,
    x: &[f64],
) -> f64 {
    let leaf = partition.leaf_flat(&center.mu, x);
    let k = x.len();
    probs.ln_path(leaf) + (k * probs.depth) as f64 * std::f64::consts::LN_2 + center.ln_density(x)
}

/// `{prod_m Y_{m, j_m(x)}} 2^{kM} f_0(x)`.
pub fn tree_density(
    shape: &TreeShape,
    probs: &BranchingProbabilities,
    center: &CenteringMeasure,
    x: &[f64],
) -> Result<f64> {
    if x.len() != shape.dim || center.dim() != shape.dim || probs.dim != shape.dim {
        return domain("dimension mismatch between point, centring measure and tree");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return domain("tree density evaluated at a non-finite point");
    }
    Ok(ln_tree_density(&shape.partition(), probs, center, x).exp())
}

/// Sum over internal nodes of the log Dirichlet density of their children,
/// evaluated at the shape's precision.
///
/// The frozen root vector contributes nothing. A branching probability of
/// exactly zero contributes `-inf` when its Dirichlet parameter exceeds one,
/// `+inf` when it is below one and nothing when it equals one (the value of
/// `y^{a-1}` in each case).
pub fn log_prior_density_y(shape: &TreeShape, probs: &BranchingProbabilities) -> f64 {
    ln_tree_prior_from_sums(shape, shape.alpha, probs.frozen_root, &probs.level_log_sums())
}

/// [`log_prior_density_y`] from precomputed [`BranchingProbabilities::level_log_sums`].
pub fn ln_tree_prior_from_sums(shape: &TreeShape, alpha: f64, frozen_root: bool, sums: &[f64]) -> f64 {
    let b = shape.branching() as f64;
    let mut total = 0.0;
    for level in 0..shape.depth {
        if level == 0 && frozen_root {
            continue;
        }
        let a = shape.child_param(alpha, level);
        let nodes = shape.level_len(level) as f64;
        total += nodes * (ln_gamma_unchecked(b * a) - b * ln_gamma_unchecked(a));
        if a != 1.0 {
            total += (a - 1.0) * sums[level];
        }
    }
    total
}
