//! k-dimensional polar coordinates.
//!
//! A direction in `R^k` is described by `k - 1` angles: colatitudes
//! `theta_1..theta_{k-2}` in `[0, pi]` and a periodic longitude
//! `theta_{k-1}` in `[0, 2 pi)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Norms at or below this are treated as the origin.
pub const ORIGIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleVector {
    theta: Vec<f64>,
}

impl AngleVector {
    /// Validates that the angles lie in the support `H`.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return domain("a direction needs at least one angle");
        }
        let last = theta.len() - 1;
        for (l, &t) in theta.iter().enumerate() {
            let ok = if l == last { (0.0..TAU).contains(&t) } else { (0.0..=PI).contains(&t) };
            if !ok {
                return domain(format!("angle {} = {t} outside its support", l + 1));
            }
        }
        Ok(Self { theta })
    }

    /// Like [`AngleVector::new`] but first wraps the periodic angle into
    /// `[0, 2 pi)`, identifying `2 pi` with `0`.
    pub fn wrapped(mut theta: Vec<f64>) -> Result<Self> {
        if let Some(last) = theta.last_mut() {
            *last = wrap_angle(*last);
        }
        Self::new(theta)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// Ambient dimension `k`.
    pub fn dim(&self) -> usize {
        self.theta.len() + 1
    }
}

/// Maps any finite angle into `[0, 2 pi)`.
pub fn wrap_angle(t: f64) -> f64 {
    let w = t.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub angles: AngleVector,
    r: f64,
}

impl PolarPoint {
    pub fn new(angles: AngleVector, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return domain(format!("resultant length must be positive, got {r}"));
        }
        Ok(Self { angles, r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: Vec<f64>,
}

impl CartesianPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return domain("cartesian point must be finite");
        }
        Ok(Self { x })
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Writes the unit vector `x(theta, 1)` into `out` (length `theta.len() + 1`).
#[inline]
pub fn unit_vector_into(theta: &[f64], out: &mut [f64]) {
    let mut sin_prod = 1.0;
    for (l, &t) in theta.iter().enumerate() {
        let (s, c) = t.sin_cos();
        out[l] = sin_prod * c;
        sin_prod *= s;
    }
    out[theta.len()] = sin_prod;
}

pub fn unit_vector(theta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; theta.len() + 1];
    unit_vector_into(theta, &mut out);
    out
}

pub fn polar_to_cartesian(p: &PolarPoint) -> CartesianPoint {
    let mut x = unit_vector(p.angles.as_slice());
    for v in &mut x {
        *v *= p.r;
    }
    CartesianPoint { x }
}

/// Inverse of [`polar_to_cartesian`].
///
/// Once a colatitude lands exactly on a pole, every later angle is set to 0.
pub fn cartesian_to_polar(x: &CartesianPoint) -> Result<PolarPoint> {
    let k = x.x.len();
    if k < 2 {
        return domain("polar coordinates need dimension at least 2");
    }
    let r = x.norm();
    if !(r > ORIGIN_EPS) {
        return Err(Error::DegenerateOrigin(r));
    }
    let mut theta = vec![0.0; k - 1];
    // tail[l] = ||(x_{l+1}, ..., x_k)||, accumulated from the back for accuracy.
    let mut tail = vec![0.0f64; k + 1];
    for l in (0..k).rev() {
        tail[l] = tail[l + 1].hypot(x.x[l]);
    }
    for l in 0..k - 2 {
        theta[l] = tail[l + 1].atan2(x.x[l]);
        if tail[l + 1] == 0.0 {
            return Ok(PolarPoint { angles: AngleVector { theta }, r });
        }
    }
    theta[k - 2] = wrap_angle(x.x[k - 1].atan2(x.x[k - 2]));
    Ok(PolarPoint { angles: AngleVector { theta }, r })
}

/// Angular part of the Jacobian, `prod_{l=1}^{k-2} sin(theta_l)^{k-l-1}`.
#[inline]
pub fn angular_jacobian(theta: &[f64]) -> f64 {
    let k = theta.len() + 1;
    let mut acc = 1.0;
    for l in 0..k.saturating_sub(2) {
        acc *= theta[l].sin().powi((k - l - 2) as i32);
    }
    acc
}

/// `|J| = r^{k-1} prod_{l=1}^{k-2} sin(theta_l)^{k-l-1}`.
pub fn jacobian_abs(p: &PolarPoint, k: usize) -> Result<f64> {
    if p.angles.dim() != k {
        return domain(format!("point has dimension {}, expected {k}", p.angles.dim()));
    }
    Ok(p.r.powi(k as i32 - 1) * angular_jacobian(p.angles.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn polar(theta: Vec<f64>, r: f64) -> PolarPoint {
        PolarPoint::new(AngleVector::new(theta).unwrap(), r).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn polar_to_cartesian_examples() {
        let x = polar_to_cartesian(&polar(vec![PI / 2.0, 0.0], 1.0));
        assert!(close(&x.x, &[0.0, 1.0, 0.0], 1e-15));
        let x = polar_to_cartesian(&polar(vec![PI], 2.0));
        assert!(close(&x.x, &[-2.0, 0.0], 1e-15));
        let x = polar_to_cartesian(&polar(vec![PI / 3.0, PI / 4.0], 2.0));
        let expect = [
            2.0 * (PI / 3.0).cos(),
            2.0 * (PI / 3.0).sin() * (PI / 4.0).cos(),
            2.0 * (PI / 3.0).sin() * (PI / 4.0).sin(),
        ];
        assert!(close(&x.x, &expect, 1e-15));
        assert!(close(&x.x, &[1.0, 1.224_744_9, 1.224_744_9], 1e-7));
    }

    #[test]
    fn cartesian_to_polar_examples() {
        let p = cartesian_to_polar(&CartesianPoint::new(vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert!(close(p.angles.as_slice(), &[PI / 2.0, 0.0], 1e-15));
        assert_eq!(p.r(), 1.0);
        let p = cartesian_to_polar(&CartesianPoint::new(vec![0.0, 0.0, -1.0]).unwrap()).unwrap();
        assert!(close(p.angles.as_slice(), &[PI / 2.0, 3.0 * PI / 2.0], 1e-15));
        let err = cartesian_to_polar(&CartesianPoint::new(vec![0.0, 1e-13, 0.0]).unwrap());
        assert!(matches!(err, Err(Error::DegenerateOrigin(_))));
    }

    #[test]
    fn pole_convention() {
        let p = cartesian_to_polar(&CartesianPoint::new(vec![-3.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.angles.as_slice(), &[PI, 0.0, 0.0]);
        assert_eq!(p.r(), 3.0);
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(jacobian_abs(&polar(vec![1.234], 3.0), 2).unwrap(), 3.0);
        assert!((jacobian_abs(&polar(vec![PI / 2.0, 0.3], 2.0), 3).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(jacobian_abs(&polar(vec![0.0, 0.3], 1.0), 3).unwrap(), 0.0);
        assert!(jacobian_abs(&polar(vec![0.3], 1.0), 3).is_err());
    }

    #[test]
    fn angle_support() {
        assert!(AngleVector::new(vec![TAU]).is_err());
        assert!(AngleVector::new(vec![3.5, 1.0]).is_err());
        assert!(AngleVector::new(vec![-0.1, 1.0]).is_err());
        assert_eq!(AngleVector::wrapped(vec![1.0, TAU]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(wrap_angle(-1e-18), 0.0);
    }

    #[test]
    fn sphere_area_from_angular_jacobian() {
        // k = 3: integral of sin(theta_1) over H is 4 pi.
        let n = 400;
        let (h1, h2) = (PI / n as f64, TAU / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let th = [(i as f64 + 0.5) * h1, (j as f64 + 0.5) * h2];
                total += angular_jacobian(&th) * h1 * h2;
            }
        }
        assert!((total / (4.0 * PI) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn round_trip_random_points() {
        use crate::numerics::RngHandle;
        let mut rng = RngHandle::new(1);
        for _ in 0..10_000 {
            let k = 2 + rng.index(4);
            let x: Vec<f64> = (0..k).map(|_| 3.0 * rng.standard_normal()).collect();
            let c = CartesianPoint::new(x.clone()).unwrap();
            let back = polar_to_cartesian(&cartesian_to_polar(&c).unwrap());
            assert!(close(&back.x, &x, 1e-10));
        }
    }

    proptest! {
        #[test]
        fn norm_is_preserved(t1 in 0.0..PI, t2 in 0.0..PI, t3 in 0.0..TAU, r in 1e-6..1e3f64) {
            let p = polar(vec![t1, t2, t3], r);
            let x = polar_to_cartesian(&p);
            prop_assert!((x.norm() - r).abs() <= 1e-12 * r.max(1.0));
        }

        #[test]
        fn angles_round_trip_away_from_poles(t1 in 1e-6..PI - 1e-6, t2 in 0.0..TAU, r in 1e-3..1e3f64) {
            let p = polar(vec![t1, t2], r);
            let back = cartesian_to_polar(&polar_to_cartesian(&p)).unwrap();
            prop_assert!((back.r() - r).abs() <= 1e-10 * r.max(1.0));
            prop_assert!((back.angles.as_slice()[0] - t1).abs() <= 1e-9);
            let d = (back.angles.as_slice()[1] - t2).abs();
            prop_assert!(d.min(TAU - d) <= 1e-9);
        }
    }
}
