//! Densities of the angles obtained by integrating the tree density along
//! rays from the origin.
//!
//! For a direction `theta` with unit vector `u`, the projected density is
//!
//! ```text
//! f(theta) = int_0^inf f_tree(r u - shift) r^{k-1} dr * prod_l sin(theta_l)^{k-l-1}
//! ```
//!
//! approximated by a right-endpoint Riemann sum on `T` equally spaced
//! resultants in `(0, r_max]`. `shift` is `Gamma z` in the median
//! regression model (whose centring mean is then zero) and absent otherwise.

use std::f64::consts::{LN_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{angular_jacobian, unit_vector_into, wrap_angle, AngleVector};
use crate::moments;
use crate::numerics::LN_2PI;
use crate::polya_tree::{BranchingProbabilities, CenteringMeasure, Partition, TreeShape};

/// Number of quadrature nodes used throughout the analyses.
pub const DEFAULT_NODES: usize = 100;
/// Distance beyond the centring norm covered by the quadrature.
pub const RADIUS_MARGIN: f64 = 4.0;
/// Default number of cell midpoints per angle axis.
pub const DEFAULT_RESOLUTION: usize = 100;
pub const MIN_RESOLUTION: usize = 16;
/// Conditional slices lighter than this cannot be renormalised.
pub const MIN_SLICE_MASS: f64 = 1e-12;
/// Concentration below which a circular mean is reported as undefined.
pub const UNDEFINED_CONCENTRATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMode {
    /// Integrand at `r_t` times the width `r_t - r_{t-1}`.
    #[default]
    RightRiemann,
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    r_max: f64,
    mode: QuadratureMode,
}

impl QuadratureRule {
    pub fn new(count: usize, r_max: f64, mode: QuadratureMode) -> Result<Self> {
        if count < 2 {
            return domain(format!("quadrature needs at least 2 nodes, got {count}"));
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return domain(format!("quadrature upper limit must be positive, got {r_max}"));
        }
        let h = r_max / count as f64;
        let nodes: Vec<f64> = (1..=count).map(|t| r_max * t as f64 / count as f64).collect();
        let mut weights = vec![h; count];
        if mode == QuadratureMode::Trapezoid {
            // The r = 0 node carries r^{k-1} = 0 and is dropped.
            weights[count - 1] = 0.5 * h;
        }
        Ok(Self { nodes, weights, r_max, mode })
    }

    /// `T` nodes up to `center_norm + 4`.
    pub fn for_center_norm(count: usize, center_norm: f64, mode: QuadratureMode) -> Result<Self> {
        Self::new(count, center_norm + RADIUS_MARGIN, mode)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn mode(&self) -> QuadratureMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Row-major `k x p` matrix of regression coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return domain(format!("{} entries cannot form a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Writes `Gamma z` into `out`.
    #[inline]
    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        for (row, o) in self.data.chunks(self.cols).zip(out.iter_mut()) {
            *o = row.iter().zip(z).map(|(g, v)| g * v).sum();
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply_into(z, &mut out);
        out
    }
}

/// Covariate-dependent location `Gamma z` of the unprojected vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionContext {
    gamma: Option<CoefficientMatrix>,
    z: Vec<f64>,
}

impl RegressionContext {
    pub fn inactive() -> Self {
        Self::default()
    }

    pub fn new(gamma: CoefficientMatrix, z: Vec<f64>) -> Result<Self> {
        if z.len() != gamma.cols {
            return domain(format!("covariate vector has {} entries, expected {}", z.len(), gamma.cols));
        }
        Ok(Self { gamma: Some(gamma), z })
    }

    pub fn is_active(&self) -> bool {
        self.gamma.is_some()
    }

    pub fn shift(&self) -> Option<Vec<f64>> {
        self.gamma.as_ref().map(|g| g.apply(&self.z))
    }
}

/// Evaluator of the projected density for one fixed state.
pub struct ProjectedModel<'a> {
    partition: Partition,
    probs: &'a BranchingProbabilities,
    mu: &'a [f64],
    shift: Option<Vec<f64>>,
    quad: &'a QuadratureRule,
    ln_const: f64,
}

impl<'a> ProjectedModel<'a> {
    pub fn new(
        shape: &TreeShape,
        probs: &'a BranchingProbabilities,
        center: &'a CenteringMeasure,
        quad: &'a QuadratureRule,
        reg: &RegressionContext,
    ) -> Result<Self> {
        let k = shape.dim();
        if k < 2 {
            return domain("projection needs dimension at least 2");
        }
        if probs.dim() != k || center.dim() != k || probs.depth() != shape.depth() {
            return domain("tree, centring measure and shape disagree");
        }
        let shift = reg.shift();
        if let Some(s) = &shift {
            if s.len() != k {
                return domain(format!("regression shift has {} rows, expected {k}", s.len()));
            }
        }
        let ln_const = (k * shape.depth()) as f64 * LN_2 - 0.5 * k as f64 * LN_2PI;
        Ok(Self { partition: shape.partition(), probs, mu: &center.mu, shift, quad, ln_const })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Density at raw angles (assumed inside `H`); `buf` must hold `2k` values.
    #[inline]
    pub fn density_with(&self, theta: &[f64], buf: &mut [f64]) -> f64 {
        self.density_shifted(theta, self.shift.as_deref(), buf)
    }

    /// Like [`ProjectedModel::density_with`] with an explicit `Gamma z`
    /// replacing the model's own.
    #[inline]
    pub fn density_shifted(&self, theta: &[f64], shift: Option<&[f64]>, buf: &mut [f64]) -> f64 {
        let k = self.mu.len();
        let (u, x) = buf.split_at_mut(k);
        unit_vector_into(theta, u);
        let angular = angular_jacobian(theta);
        if angular == 0.0 {
            return 0.0;
        }
        let c = self.ln_const.exp();
        let mut total = 0.0;
        for (&r, &w) in self.quad.nodes.iter().zip(&self.quad.weights) {
            let mut sq = 0.0;
            for l in 0..k {
                let mut v = r * u[l];
                if let Some(s) = shift {
                    v -= s[l];
                }
                x[l] = v;
                let d = v - self.mu[l];
                sq += d * d;
            }
            let leaf = self.partition.leaf_flat(self.mu, &x[..k]);
            let tree = self.probs.path_product(leaf);
            if tree == 0.0 {
                continue;
            }
            total += tree * (-0.5 * sq).exp() * r.powi(k as i32 - 1) * w;
        }
        c * total * angular
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        let mut buf = vec![0.0; 2 * self.mu.len()];
        self.density_with(theta, &mut buf)
    }
}

pub fn projected_density_at(
    shape: &TreeShape,
    probs: &BranchingProbabilities,
    center: &CenteringMeasure,
    quad: &QuadratureRule,
    theta: &AngleVector,
    reg: &RegressionContext,
) -> Result<f64> {
    if theta.dim() != shape.dim() {
        return domain(format!("angles describe dimension {}, expected {}", theta.dim(), shape.dim()));
    }
    Ok(ProjectedModel::new(shape, probs, center, quad, reg)?.density(theta.as_slice()))
}

/// Uniformly spaced cell midpoints on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    /// Whether the axis is the periodic longitude.
    pub periodic: bool,
}

impl GridAxis {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64, points: usize, periodic: bool) -> Result<Self> {
        if points == 0 || !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return domain("grid axis needs a positive number of points on a finite interval");
        }
        Ok(Self { name: name.into(), lower, upper, points, periodic })
    }

    /// Full support of angle `coord` (0-based) in dimension `k`.
    pub fn for_angle(k: usize, coord: usize, points: usize) -> Result<Self> {
        let periodic = coord == k - 2;
        let upper = if periodic { TAU } else { PI };
        Self::new(format!("theta{}", coord + 1), 0.0, upper, points, periodic)
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / self.points as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.step()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.midpoint(i)).collect()
    }

    pub fn spans_full_support(&self) -> bool {
        let width = if self.periodic { TAU } else { PI };
        (self.upper - self.lower - width).abs() < 1e-9
    }

    /// Index of the cell containing (or nearest to) `value`.
    pub fn nearest(&self, value: f64) -> usize {
        let v = if self.periodic && self.spans_full_support() {
            self.lower + wrap_angle(value - self.lower)
        } else {
            value
        };
        let pos = ((v - self.lower) / self.step()).floor();
        pos.clamp(0.0, (self.points - 1) as f64) as usize
    }
}

/// Density values on a tensor grid of cell midpoints (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    /// Ambient dimension `k` of the model the grid came from.
    pub dim: usize,
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    /// Axes that were sliced away, with the grid value they were fixed at.
    pub conditioning: Vec<(String, f64)>,
}

impl DensityGrid {
    pub fn new(dim: usize, axes: Vec<GridAxis>, values: Vec<f64>) -> Result<Self> {
        let cells: usize = axes.iter().map(|a| a.points).product();
        if axes.is_empty() || values.len() != cells {
            return domain(format!("grid with {} cells given {} values", cells, values.len()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("density values must be finite and non-negative");
        }
        Ok(Self { dim, axes, values, conditioning: Vec::new() })
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::step).product()
    }

    /// Riemann sum of the density over the grid.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].points;
        }
        strides
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.strides()
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| (flat / s) % a.points)
            .collect()
    }

    pub fn value(&self, index: &[usize]) -> f64 {
        let flat: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.values[flat]
    }

    /// Coordinates of the midpoint of cell `flat`.
    pub fn coordinates(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.midpoint(i))
            .collect()
    }

    pub fn axis_position(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    /// Copy of the grid with the periodic axis rotated from `[0, 2 pi)` to
    /// `[-pi, pi)`. Only the labelling changes; the axis needs an even
    /// number of points so that midpoints map onto midpoints.
    pub fn rotated(&self) -> Result<Self> {
        let Some(pos) = self.axes.iter().position(|a| a.periodic && a.spans_full_support() && a.lower == 0.0)
        else {
            return domain("grid has no periodic axis on [0, 2pi) to rotate");
        };
        let n = self.axes[pos].points;
        if n % 2 != 0 {
            return domain("rotation needs an even number of points on the periodic axis");
        }
        let strides = self.strides();
        let mut values = vec![0.0; self.values.len()];
        for (flat, v) in self.values.iter().enumerate() {
            let mut idx = self.multi_index(flat);
            idx[pos] = (idx[pos] + n / 2) % n;
            let target: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            values[target] = *v;
        }
        let mut out = self.clone();
        out.axes[pos].lower = -PI;
        out.axes[pos].upper = PI;
        out.values = values;
        Ok(out)
    }
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < MIN_RESOLUTION {
        return domain(format!("grid resolution must be at least {MIN_RESOLUTION}, got {resolution}"));
    }
    Ok(())
}

/// Evaluates the model at every midpoint of the given axes.
pub fn grid_on_axes(model: &ProjectedModel<'_>, axes: Vec<GridAxis>) -> Result<DensityGrid> {
    let k = model.dim();
    if axes.len() != k - 1 {
        return domain(format!("need {} axes for dimension {k}, got {}", k - 1, axes.len()));
    }
    let shell = DensityGrid {
        dim: k,
        axes,
        values: Vec::new(),
        conditioning: Vec::new(),
    };
    let cells: usize = shell.axes.iter().map(|a| a.points).product();
    let values: Vec<f64> = (0..cells)
        .into_par_iter()
        .map_init(
            || vec![0.0; 2 * k],
            |buf, flat| model.density_with(&shell.coordinates(flat), buf),
        )
        .collect();
    DensityGrid::new(k, shell.axes, values)
}

/// The joint density of all `k - 1` angles on their full support.
pub fn joint_grid(model: &ProjectedModel<'_>, resolution: usize) -> Result<DensityGrid> {
    check_resolution(resolution)?;
    let k = model.dim();
    let axes = (0..k - 1)
        .map(|c| GridAxis::for_angle(k, c, resolution))
        .collect::<Result<Vec<_>>>()?;
    grid_on_axes(model, axes)
}

/// Integrates out every axis except `axis`.
pub fn marginal_density(grid: &DensityGrid, axis: usize) -> Result<DensityGrid> {
    if axis >= grid.ndim() {
        return domain(format!("axis {axis} out of range for a {}-axis grid", grid.ndim()));
    }
    if !grid.conditioning.is_empty() {
        return domain("cannot marginalise a conditional grid");
    }
    if grid.axes.iter().enumerate().any(|(i, a)| i != axis && !a.spans_full_support()) {
        return domain("integrated-out axes must cover their full support");
    }
    let other_volume: f64 = grid
        .axes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != axis)
        .map(|(_, a)| a.step())
        .product();
    let target = &grid.axes[axis];
    let mut out = vec![0.0; target.points];
    for (flat, v) in grid.values.iter().enumerate() {
        out[grid.multi_index(flat)[axis]] += v * other_volume;
    }
    DensityGrid::new(grid.dim, vec![target.clone()], out)
}

/// Slices the joint at the given `(axis, value)` pairs (snapped to the
/// nearest cell) and renormalises over the remaining axes.
pub fn conditional_density(grid: &DensityGrid, conditions: &[(usize, f64)]) -> Result<DensityGrid> {
    let mut fixed = vec![None; grid.ndim()];
    for &(axis, value) in conditions {
        if axis >= grid.ndim() {
            return domain(format!("axis {axis} out of range for a {}-axis grid", grid.ndim()));
        }
        fixed[axis] = Some(grid.axes[axis].nearest(value));
    }
    let free: Vec<usize> = (0..grid.ndim()).filter(|i| fixed[*i].is_none()).collect();
    if free.is_empty() {
        return domain("conditioning on every axis leaves nothing free");
    }
    let mut values = Vec::new();
    for (flat, v) in grid.values.iter().enumerate() {
        let idx = grid.multi_index(flat);
        if fixed.iter().zip(&idx).all(|(f, i)| f.is_none_or(|f| f == *i)) {
            values.push(*v);
        }
    }
    let axes: Vec<GridAxis> = free.iter().map(|&i| grid.axes[i].clone()).collect();
    let volume: f64 = axes.iter().map(GridAxis::step).product();
    let mass = values.iter().sum::<f64>() * volume;
    if !(mass >= MIN_SLICE_MASS) {
        return Err(Error::DegenerateConditional(mass));
    }
    for v in &mut values {
        *v /= mass;
    }
    let mut out = DensityGrid::new(grid.dim, axes, values)?;
    out.conditioning = grid.conditioning.clone();
    for (axis, cell) in fixed.iter().enumerate() {
        if let Some(cell) = cell {
            out.conditioning.push((grid.axes[axis].name.clone(), grid.axes[axis].midpoint(*cell)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMean {
    /// Circular mean for the periodic axis, arithmetic otherwise.
    #[default]
    Auto,
    Circular,
    Arithmetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub condition: f64,
    pub mean: f64,
    /// Length of the first trigonometric moment of the conditional.
    pub concentration: f64,
    /// False when a circular mean was requested but the conditional has no
    /// preferred direction.
    pub defined: bool,
}

/// Conditional mean of `response` at every grid value of `conditioning`.
pub fn regression_curve(
    grid: &DensityGrid,
    response: usize,
    conditioning: usize,
    kind: CurveMean,
) -> Result<Vec<CurvePoint>> {
    if grid.ndim() != 2 || response > 1 || conditioning > 1 || response == conditioning {
        return domain("regression curves need a two-axis grid and two distinct axes");
    }
    let cond_axis = &grid.axes[conditioning];
    let circular = match kind {
        CurveMean::Auto => grid.axes[response].periodic,
        CurveMean::Circular => true,
        CurveMean::Arithmetic => false,
    };
    (0..cond_axis.points)
        .map(|i| {
            let value = cond_axis.midpoint(i);
            let slice = conditional_density(grid, &[(conditioning, value)])?;
            let moment = moments::trig_moment_from_grid(&slice, 1)?;
            let summary = moments::mean_direction(&moment)?;
            let (mean, defined) = if circular {
                (summary.nu, summary.defined)
            } else {
                let axis = &slice.axes[0];
                let m = slice
                    .values
                    .iter()
                    .enumerate()
                    .map(|(j, f)| axis.midpoint(j) * f * axis.step())
                    .sum();
                (m, true)
            };
            Ok(CurvePoint { condition: value, mean, concentration: summary.rho, defined })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngHandle;
    use crate::polya_tree::sample_prior;

    fn shape(k: usize) -> TreeShape {
        TreeShape::new(k, 3, 1.0, 1.1).unwrap()
    }

    fn default_rule(norm: f64) -> QuadratureRule {
        QuadratureRule::for_center_norm(DEFAULT_NODES, norm, QuadratureMode::RightRiemann).unwrap()
    }

    #[test]
    fn quadrature_rule_layout() {
        let q = default_rule(0.0);
        assert_eq!(q.len(), 100);
        assert!((q.nodes()[99] - 4.0).abs() < 1e-15);
        assert!((q.nodes()[0] - 0.04).abs() < 1e-15);
        assert!(q.weights().iter().all(|w| (w - 0.04).abs() < 1e-15));
        assert!(QuadratureRule::new(1, 4.0, QuadratureMode::RightRiemann).is_err());
        let t = QuadratureRule::new(10, 1.0, QuadratureMode::Trapezoid).unwrap();
        assert!((t.weights().iter().sum::<f64>() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn uniform_circle() {
        let s = shape(2);
        let p = BranchingProbabilities::uniform(&s, false);
        let c = CenteringMeasure::zero(2);
        let q = default_rule(0.0);
        let model = ProjectedModel::new(&s, &p, &c, &q, &RegressionContext::inactive()).unwrap();
        for i in 0..50 {
            let th = (i as f64 + 0.5) * TAU / 50.0;
            let f = model.density(&[th]);
            assert!((f * TAU - 1.0).abs() < 0.01, "theta={th} f={f}");
        }
    }

    #[test]
    fn uniform_sphere() {
        let s = shape(3);
        let p = BranchingProbabilities::uniform(&s, false);
        let c = CenteringMeasure::zero(3);
        let q = default_rule(0.0);
        let model = ProjectedModel::new(&s, &p, &c, &q, &RegressionContext::inactive()).unwrap();
        for i in 0..50 {
            for j in [0usize, 17, 33] {
                let th = [(i as f64 + 0.5) * PI / 50.0, (j as f64 + 0.5) * TAU / 50.0];
                let f = model.density(&th);
                let expect = th[0].sin() / (4.0 * PI);
                assert!((f / expect - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn angles_outside_support_are_rejected() {
        assert!(AngleVector::new(vec![4.0, 1.0]).is_err());
        let s = shape(3);
        let p = BranchingProbabilities::uniform(&s, false);
        let c = CenteringMeasure::zero(3);
        let th = AngleVector::new(vec![1.0]).unwrap();
        let r = projected_density_at(&s, &p, &c, &default_rule(0.0), &th, &RegressionContext::inactive());
        assert!(r.is_err());
    }

    #[test]
    fn joint_grid_normalises_and_refines() {
        let mut rng = RngHandle::new(8);
        let s = shape(3);
        let p = sample_prior(&s, &mut rng, false);
        let c = CenteringMeasure::new(vec![0.5, -0.3, 0.8]).unwrap();
        let q = default_rule(c.norm());
        let model = ProjectedModel::new(&s, &p, &c, &q, &RegressionContext::inactive()).unwrap();
        let coarse = joint_grid(&model, 100).unwrap();
        let fine = joint_grid(&model, 200).unwrap();
        assert!((coarse.total_mass() - 1.0).abs() < 0.02);
        assert!((coarse.total_mass() - fine.total_mass()).abs() < 0.01);
        assert!(joint_grid(&model, 8).is_err());
    }

    #[test]
    fn uniform_sphere_grid_shape_and_marginals() {
        let s = shape(3);
        let p = BranchingProbabilities::uniform(&s, false);
        let c = CenteringMeasure::zero(3);
        let q = default_rule(0.0);
        let model = ProjectedModel::new(&s, &p, &c, &q, &RegressionContext::inactive()).unwrap();
        let g = joint_grid(&model, 40).unwrap();
        for i in 0..40 {
            let row: Vec<f64> = (0..40).map(|j| g.value(&[i, j])).collect();
            let spread = row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 1e-3 * row[0]);
        }
        let m1 = marginal_density(&g, 0).unwrap();
        for (i, v) in m1.values.iter().enumerate() {
            let t = m1.axes[0].midpoint(i);
            assert!((v - t.sin() / 2.0).abs() < 0.01);
        }
        let m2 = marginal_density(&g, 1).unwrap();
        assert!(m2.values.iter().all(|v| (v * TAU - 1.0).abs() < 0.02));
        assert!((m1.total_mass() - 1.0).abs() < 0.02);
    }

    fn product_grid() -> DensityGrid {
        let a = GridAxis::for_angle(3, 0, 30).unwrap();
        let b = GridAxis::for_angle(3, 1, 40).unwrap();
        let fa: Vec<f64> = (0..30).map(|i| a.midpoint(i).sin() / 2.0).collect();
        let fb: Vec<f64> = (0..40).map(|j| (1.0 + 0.8 * (b.midpoint(j) - 1.0).cos()) / TAU).collect();
        let values = fa.iter().flat_map(|x| fb.iter().map(move |y| x * y)).collect();
        DensityGrid::new(3, vec![a, b], values).unwrap()
    }

    #[test]
    fn marginal_of_product_is_factor() {
        let g = product_grid();
        let m = marginal_density(&g, 1).unwrap();
        let b = &g.axes[1];
        // The a-factor integrates to 1 up to the midpoint rule error.
        let a_mass: f64 = (0..30).map(|i| g.axes[0].midpoint(i).sin() / 2.0 * g.axes[0].step()).sum();
        for (j, v) in m.values.iter().enumerate() {
            let expect = (1.0 + 0.8 * (b.midpoint(j) - 1.0).cos()) / TAU * a_mass;
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_of_product_equals_marginal() {
        let g = product_grid();
        let m = marginal_density(&g, 1).unwrap();
        let cond = conditional_density(&g, &[(0, 1.3)]).unwrap();
        assert!((cond.total_mass() - 1.0).abs() < 1e-12);
        let mass = m.total_mass();
        for (c, v) in cond.values.iter().zip(&m.values) {
            assert!((c - v / mass).abs() < 1e-12);
        }
        assert_eq!(cond.conditioning.len(), 1);
        assert!(marginal_density(&cond, 0).is_err());
    }

    #[test]
    fn conditional_times_marginal_recovers_joint() {
        let mut rng = RngHandle::new(12);
        let s = shape(3);
        let p = sample_prior(&s, &mut rng, false);
        let c = CenteringMeasure::new(vec![-1.0, 0.0, 1.0]).unwrap();
        let q = default_rule(c.norm());
        let model = ProjectedModel::new(&s, &p, &c, &q, &RegressionContext::inactive()).unwrap();
        let g = joint_grid(&model, 32).unwrap();
        let m2 = marginal_density(&g, 1).unwrap();
        for j in [0usize, 7, 20, 31] {
            let t2 = g.axes[1].midpoint(j);
            let cond = conditional_density(&g, &[(1, t2)]).unwrap();
            for i in 0..32 {
                let rebuilt = cond.values[i] * m2.values[j];
                assert!((rebuilt - g.value(&[i, j])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_conditional_is_reported() {
        let a = GridAxis::for_angle(3, 0, 16).unwrap();
        let b = GridAxis::for_angle(3, 1, 16).unwrap();
        let mut values = vec![0.0; 256];
        values[0] = 1.0;
        let g = DensityGrid::new(3, vec![a, b], values).unwrap();
        assert!(matches!(conditional_density(&g, &[(0, 2.0)]), Err(Error::DegenerateConditional(_))));
        assert!(regression_curve(&g, 1, 0, CurveMean::Auto).is_err());
    }

    #[test]
    fn independent_joint_gives_flat_curve() {
        let g = product_grid();
        let curve = regression_curve(&g, 1, 0, CurveMean::Auto).unwrap();
        let first = curve[0].mean;
        assert!(curve.iter().all(|c| (c.mean - first).abs() < 1e-3 && c.defined));
        assert!((first - 1.0).abs() < 1e-3);
        let curve = regression_curve(&g, 0, 1, CurveMean::Auto).unwrap();
        assert!(curve.iter().all(|c| (c.mean - PI / 2.0).abs() < 1e-3));
    }

    #[test]
    fn point_mass_conditional_mean() {
        let a = GridAxis::for_angle(3, 0, 20).unwrap();
        let b = GridAxis::for_angle(3, 1, 40).unwrap();
        let mut values = vec![0.0; 800];
        for i in 0..20 {
            values[i * 40 + (5 + i)] = 1.0;
        }
        let g = DensityGrid::new(3, vec![a.clone(), b.clone()], values).unwrap();
        let curve = regression_curve(&g, 1, 0, CurveMean::Auto).unwrap();
        for (i, c) in curve.iter().enumerate() {
            assert!((c.mean - b.midpoint(5 + i)).abs() <= b.step());
            assert!(c.defined && (c.concentration - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_conditional_has_undefined_direction() {
        let a = GridAxis::for_angle(3, 0, 20).unwrap();
        let b = GridAxis::for_angle(3, 1, 40).unwrap();
        let g = DensityGrid::new(3, vec![a, b], vec![1.0; 800]).unwrap();
        let curve = regression_curve(&g, 1, 0, CurveMean::Auto).unwrap();
        assert!(curve.iter().all(|c| !c.defined && c.concentration < 1e-9));
        let arithmetic = regression_curve(&g, 1, 0, CurveMean::Arithmetic).unwrap();
        assert!(arithmetic.iter().all(|c| c.defined && (c.mean - PI).abs() < 1e-9));
    }

    #[test]
    fn regression_shift_matches_centring_shift() {
        let s = shape(3);
        let p_reg = BranchingProbabilities::uniform(&s, true);
        let p = BranchingProbabilities::uniform(&s, false);
        let shift = vec![0.7, -1.2, 0.4];
        let gamma = CoefficientMatrix::from_rows(3, 1, shift.clone()).unwrap();
        let reg = RegressionContext::new(gamma, vec![1.0]).unwrap();
        let zero = CenteringMeasure::zero(3);
        let shifted = CenteringMeasure::new(shift).unwrap();
        let q = default_rule(shifted.norm());
        let with_reg = ProjectedModel::new(&s, &p_reg, &zero, &q, &reg).unwrap();
        let with_mu = ProjectedModel::new(&s, &p, &shifted, &q, &RegressionContext::inactive()).unwrap();
        for th in [[0.4, 1.0], [1.5, 3.0], [2.7, 5.9]] {
            let a = with_reg.density(&th);
            let b = with_mu.density(&th);
            assert!((a - b).abs() <= 0.01 * b.max(1e-12));
        }
    }

    #[test]
    fn rotation_relabels_periodic_axis() {
        let g = product_grid();
        let r = g.rotated().unwrap();
        assert_eq!(r.axes[1].lower, -PI);
        // A value at theta2 = 5.5 moves to 5.5 - 2pi.
        let j = g.axes[1].nearest(5.5);
        let jr = r.axes[1].nearest(5.5 - TAU);
        assert!((r.axes[1].midpoint(jr) - (g.axes[1].midpoint(j) - TAU)).abs() < 1e-12);
        assert_eq!(r.value(&[3, jr]), g.value(&[3, j]));
        assert!((r.total_mass() - g.total_mass()).abs() < 1e-12);
    }
}
