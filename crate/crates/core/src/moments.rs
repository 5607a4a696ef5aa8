//! Trigonometric moments, mean direction and the sine-based circular
//! correlation, from density grids or from samples.
//!
//! Colatitudes are summarised with the same formulas as the periodic
//! longitude even though `[0, pi]` does not wrap.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::wrap_angle;
use crate::projected_density::{marginal_density, DensityGrid, UNDEFINED_CONCENTRATION};

/// Allowed deviation of a grid's mass from one.
pub const MASS_TOLERANCE: f64 = 0.05;
const MIN_VARIANCE: f64 = 1e-14;

/// `E cos(q Theta)` and `E sin(q Theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigMoment {
    pub order: u32,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalSummary {
    /// Mean direction in `[0, 2 pi)`; zero when undefined.
    pub nu: f64,
    /// Concentration `sqrt(a^2 + b^2)`.
    pub rho: f64,
    pub defined: bool,
}

pub fn trig_moment_from_grid(marginal: &DensityGrid, q: u32) -> Result<TrigMoment> {
    if marginal.ndim() != 1 {
        return domain(format!("trigonometric moments need a 1-D grid, got {} axes", marginal.ndim()));
    }
    let mass = marginal.total_mass();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return domain(format!("grid mass {mass} is not normalised"));
    }
    let axis = &marginal.axes[0];
    let h = axis.step();
    let qf = f64::from(q);
    let (mut a, mut b) = (0.0, 0.0);
    for (i, f) in marginal.values.iter().enumerate() {
        let (s, c) = (qf * axis.midpoint(i)).sin_cos();
        a += c * f * h;
        b += s * f * h;
    }
    Ok(TrigMoment { order: q, a, b })
}

pub fn trig_moment_from_samples(theta: &[f64], q: u32) -> Result<TrigMoment> {
    if theta.is_empty() {
        return domain("trigonometric moments need at least one sample");
    }
    let qf = f64::from(q);
    let n = theta.len() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for t in theta {
        let (s, c) = (qf * t).sin_cos();
        a += c;
        b += s;
    }
    Ok(TrigMoment { order: q, a: a / n, b: b / n })
}

pub fn mean_direction(moment: &TrigMoment) -> Result<DirectionalSummary> {
    if moment.order != 1 {
        return domain(format!("mean direction needs the first moment, got order {}", moment.order));
    }
    let rho = moment.a.hypot(moment.b).min(1.0);
    if rho <= UNDEFINED_CONCENTRATION {
        return Ok(DirectionalSummary { nu: 0.0, rho, defined: false });
    }
    Ok(DirectionalSummary { nu: wrap_angle(moment.b.atan2(moment.a)), rho, defined: true })
}

fn sine_correlation(cross: f64, var_l: f64, var_h: f64) -> Result<f64> {
    if !(var_l > MIN_VARIANCE) || !(var_h > MIN_VARIANCE) {
        return Err(Error::UndefinedCorrelation(format!(
            "sine variances {var_l:e} and {var_h:e}"
        )));
    }
    Ok((cross / (var_l * var_h).sqrt()).clamp(-1.0, 1.0))
}

pub fn circular_correlation_from_samples(theta_l: &[f64], theta_h: &[f64]) -> Result<f64> {
    if theta_l.len() != theta_h.len() {
        return domain("correlation samples must have equal length");
    }
    if theta_l.len() < 3 {
        return domain("correlation needs at least 3 samples");
    }
    let nu_l = mean_direction(&trig_moment_from_samples(theta_l, 1)?)?.nu;
    let nu_h = mean_direction(&trig_moment_from_samples(theta_h, 1)?)?.nu;
    let (mut cross, mut var_l, mut var_h) = (0.0, 0.0, 0.0);
    for (tl, th) in theta_l.iter().zip(theta_h) {
        let sl = (tl - nu_l).sin();
        let sh = (th - nu_h).sin();
        cross += sl * sh;
        var_l += sl * sl;
        var_h += sh * sh;
    }
    sine_correlation(cross, var_l, var_h)
}

pub fn circular_correlation_from_grid(joint: &DensityGrid) -> Result<f64> {
    if joint.ndim() != 2 {
        return domain(format!("correlation needs a 2-D grid, got {} axes", joint.ndim()));
    }
    let nu_l = mean_direction(&trig_moment_from_grid(&marginal_density(joint, 0)?, 1)?)?.nu;
    let nu_h = mean_direction(&trig_moment_from_grid(&marginal_density(joint, 1)?, 1)?)?.nu;
    let (ax, ay) = (&joint.axes[0], &joint.axes[1]);
    let sl: Vec<f64> = (0..ax.points).map(|i| (ax.midpoint(i) - nu_l).sin()).collect();
    let sh: Vec<f64> = (0..ay.points).map(|j| (ay.midpoint(j) - nu_h).sin()).collect();
    let (mut cross, mut var_l, mut var_h) = (0.0, 0.0, 0.0);
    for (i, row) in joint.values.chunks(ay.points).enumerate() {
        for (j, f) in row.iter().enumerate() {
            cross += sl[i] * sh[j] * f;
            var_l += sl[i] * sl[i] * f;
            var_h += sh[j] * sh[j] * f;
        }
    }
    let vol = joint.cell_volume();
    sine_correlation(cross * vol, var_l * vol, var_h * vol)
}

/// Mean directions and concentrations of every angle, plus the correlation
/// of the two angles when there are exactly two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMoments {
    pub nu: Vec<f64>,
    pub varrho: Vec<f64>,
    /// `None` for one-angle grids or when a sine variance vanishes.
    pub rho: Option<f64>,
}

pub fn grid_moments(joint: &DensityGrid) -> Result<GridMoments> {
    let mut nu = Vec::with_capacity(joint.ndim());
    let mut varrho = Vec::with_capacity(joint.ndim());
    for axis in 0..joint.ndim() {
        let marginal = if joint.ndim() == 1 { joint.clone() } else { marginal_density(joint, axis)? };
        let s = mean_direction(&trig_moment_from_grid(&marginal, 1)?)?;
        nu.push(s.nu);
        varrho.push(s.rho);
    }
    let rho = if joint.ndim() == 2 {
        match circular_correlation_from_grid(joint) {
            Ok(r) => Some(r),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(GridMoments { nu, varrho, rho })
}

/// Draws `n` cell midpoints from a 2-D grid, jittered uniformly within
/// their cell.
pub fn sample_grid(joint: &DensityGrid, n: usize, rng: &mut crate::numerics::RngHandle) -> Vec<Vec<f64>> {
    let mut cdf = Vec::with_capacity(joint.values.len());
    let mut acc = 0.0;
    for v in &joint.values {
        acc += v;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.uniform() * acc;
            let flat = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
            let idx = joint.multi_index(flat);
            idx.iter()
                .zip(&joint.axes)
                .map(|(&i, a)| a.midpoint(i) + (rng.uniform() - 0.5) * a.step())
                .collect()
        })
        .collect()
}

/// Rotates every sample by `c` modulo `2 pi`.
pub fn rotate_samples(theta: &[f64], c: f64) -> Vec<f64> {
    theta.iter().map(|t| wrap_angle(t + c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngHandle;
    use crate::projected_density::GridAxis;
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    fn circle_grid(values: Vec<f64>) -> DensityGrid {
        let n = values.len();
        DensityGrid::new(2, vec![GridAxis::for_angle(2, 0, n).unwrap()], values).unwrap()
    }

    fn spike(n: usize, at: f64) -> DensityGrid {
        let axis = GridAxis::for_angle(2, 0, n).unwrap();
        let mut values = vec![0.0; n];
        values[axis.nearest(at)] = 1.0 / axis.step();
        circle_grid(values)
    }

    #[test]
    fn trig_moment_examples() {
        let m = trig_moment_from_grid(&circle_grid(vec![1.0 / TAU; 100]), 1).unwrap();
        assert!(m.a.abs() < 1e-12 && m.b.abs() < 1e-12);
        let g = spike(400, PI / 2.0 + 1e-9);
        let m1 = trig_moment_from_grid(&g, 1).unwrap();
        let m2 = trig_moment_from_grid(&g, 2).unwrap();
        assert!(m1.a.abs() < 0.01 && (m1.b - 1.0).abs() < 1e-3);
        assert!((m2.a + 1.0).abs() < 1e-3 && m2.b.abs() < 0.02);
        let s = trig_moment_from_samples(&[PI / 2.0; 4], 2).unwrap();
        assert!((s.a + 1.0).abs() < 1e-15 && s.b.abs() < 1e-15);
        assert!(trig_moment_from_grid(&circle_grid(vec![1.0; 100]), 1).is_err());
    }

    #[test]
    fn mean_direction_examples() {
        let s = mean_direction(&TrigMoment { order: 1, a: 0.0, b: 1.0 }).unwrap();
        assert!((s.nu - PI / 2.0).abs() < 1e-15 && s.rho == 1.0 && s.defined);
        let s = mean_direction(&TrigMoment { order: 1, a: -1.0, b: 0.0 }).unwrap();
        assert!((s.nu - PI).abs() < 1e-15);
        let s = mean_direction(&TrigMoment { order: 1, a: 0.0, b: 0.0 }).unwrap();
        assert!(!s.defined && s.rho == 0.0);
        let s = mean_direction(&TrigMoment { order: 1, a: 0.3, b: -0.3 }).unwrap();
        assert!((s.nu - 7.0 * PI / 4.0).abs() < 1e-15);
        assert!(mean_direction(&TrigMoment { order: 2, a: 1.0, b: 0.0 }).is_err());
    }

    #[test]
    fn sample_correlation_examples() {
        let mut rng = RngHandle::new(3);
        let t: Vec<f64> = (0..500).map(|_| 0.3 + 0.8 * rng.standard_normal()).map(wrap_angle).collect();
        assert_eq!(circular_correlation_from_samples(&t, &t).unwrap(), 1.0);
        let neg: Vec<f64> = t.iter().map(|v| wrap_angle(-v)).collect();
        assert!((circular_correlation_from_samples(&t, &neg).unwrap() + 1.0).abs() < 1e-12);
        let u: Vec<f64> = (0..10_000).map(|_| TAU * rng.uniform()).collect();
        let w: Vec<f64> = (0..10_000).map(|_| TAU * rng.uniform()).collect();
        assert!(circular_correlation_from_samples(&u, &w).unwrap().abs() < 0.05);
        assert!(circular_correlation_from_samples(&t[..2], &t[..2]).is_err());
        assert!(matches!(
            circular_correlation_from_samples(&[1.0; 5], &t[..5]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    fn torus_grid(n: usize, f: impl Fn(f64, f64) -> f64) -> DensityGrid {
        let a = GridAxis::for_angle(3, 1, n).unwrap();
        let mut a0 = a.clone();
        a0.name = "theta1".into();
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(a.midpoint(i), a.midpoint(j)));
            }
        }
        let mass: f64 = values.iter().sum::<f64>() * a.step() * a.step();
        values.iter_mut().for_each(|v| *v /= mass);
        DensityGrid::new(3, vec![a0, a], values).unwrap()
    }

    #[test]
    fn grid_correlation_examples() {
        let product = torus_grid(120, |x, y| (1.0 + 0.7 * (x - 1.0).cos()) * (1.0 + 0.5 * (y - 4.0).cos()));
        assert!(circular_correlation_from_grid(&product).unwrap().abs() < 1e-3);
        let diagonal = torus_grid(120, |x, y| (8.0 * ((x - y).cos() - 1.0)).exp() * (1.0 + 0.9 * (x - 2.0).cos()));
        assert!(circular_correlation_from_grid(&diagonal).unwrap() > 0.9);
        let flat = torus_grid(50, |_, _| 1.0);
        assert!(matches!(
            circular_correlation_from_grid(&flat).map(|r| r.abs() <= 1.0),
            Ok(true) | Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn grid_and_sample_correlation_agree() {
        let g = torus_grid(150, |x, y| (1.5 * ((x - y).cos() - 1.0)).exp() * (1.0 + 0.8 * (x - 1.0).cos()));
        let grid_rho = circular_correlation_from_grid(&g).unwrap();
        let mut rng = RngHandle::new(21);
        let pts = sample_grid(&g, 100_000, &mut rng);
        let tl: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let th: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let sample_rho = circular_correlation_from_samples(&tl, &th).unwrap();
        assert!((grid_rho - sample_rho).abs() < 0.02, "{grid_rho} vs {sample_rho}");
    }

    #[test]
    fn rotation_equivariance_of_samples() {
        let mut rng = RngHandle::new(4);
        let tl: Vec<f64> = (0..300).map(|_| wrap_angle(1.0 + rng.standard_normal())).collect();
        let th: Vec<f64> = tl.iter().map(|t| wrap_angle(t + 0.5 * rng.standard_normal())).collect();
        let c = 2.1;
        let s0 = mean_direction(&trig_moment_from_samples(&th, 1).unwrap()).unwrap();
        let rotated = rotate_samples(&th, c);
        let s1 = mean_direction(&trig_moment_from_samples(&rotated, 1).unwrap()).unwrap();
        let d = (s1.nu - wrap_angle(s0.nu + c)).abs();
        assert!(d.min(TAU - d) < 1e-10);
        assert!((s1.rho - s0.rho).abs() < 1e-10);
        let r0 = circular_correlation_from_samples(&tl, &th).unwrap();
        let r1 = circular_correlation_from_samples(&tl, &rotated).unwrap();
        assert!((r0 - r1).abs() < 1e-10);
    }

    #[test]
    fn grid_moments_of_product() {
        let g = torus_grid(100, |x, y| (1.0 + 0.6 * (x - 1.0).cos()) * (1.0 + 0.6 * (y - 5.0).cos()));
        let m = grid_moments(&g).unwrap();
        assert!((m.nu[0] - 1.0).abs() < 1e-6 && (m.nu[1] - 5.0).abs() < 1e-6);
        assert!((m.varrho[0] - 0.3).abs() < 1e-6);
        assert!(m.rho.unwrap().abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bounded_on_random_samples(seed in 0u64..1_000_000, n in 3usize..60) {
            let mut rng = RngHandle::new(seed);
            let a: Vec<f64> = (0..n).map(|_| TAU * rng.uniform()).collect();
            let b: Vec<f64> = (0..n).map(|_| TAU * rng.uniform()).collect();
            if let Ok(r) = circular_correlation_from_samples(&a, &b) {
                prop_assert!(r.abs() <= 1.0);
            }
            let s = mean_direction(&trig_moment_from_samples(&a, 1).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.rho));
            prop_assert!((0.0..TAU).contains(&s.nu));
        }

        #[test]
        fn bounded_on_random_grids(seed in 0u64..1_000_000) {
            let mut rng = RngHandle::new(seed);
            let values: Vec<f64> = (0..16 * 16).map(|_| rng.uniform().powi(4)).collect();
            let mut g = torus_grid(16, |_, _| 1.0);
            let mass: f64 = values.iter().sum::<f64>() * g.cell_volume();
            g.values = values.iter().map(|v| v / mass).collect();
            if let Ok(r) = circular_correlation_from_grid(&g) {
                prop_assert!(r.abs() <= 1.0);
            }
        }
    }
}
