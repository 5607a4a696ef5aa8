//! Synthetic stand-ins for the reference datasets.

use std::f64::consts::PI;

use ppt_core::geometry::{cartesian_to_polar, unit_vector};
use ppt_core::{CartesianPoint, CoefficientMatrix, RngHandle};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CliError, Result};

/// Mode directions of the bimodal stand-in, as `(colatitude, longitude)`.
pub const BIMODAL_MODES: [[f64; 2]; 2] = [[PI / 2.0, 5.0 * PI / 3.0], [PI / 3.0, 2.0 * PI / 3.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Projected normal around `--mu`.
    ProjectedNormal,
    /// Two-mode mixture with well separated, concentrated components.
    BimodalStrong,
    /// The same modes with weak location, close to uniform.
    BimodalDiffuse,
    /// Two groups with indicator covariates and distinct locations.
    TwoGroup,
}

fn angles_of(x: Vec<f64>) -> Result<Vec<f64>> {
    let p = cartesian_to_polar(&CartesianPoint::new(x)?)?;
    Ok(p.angles.as_slice().to_vec())
}

fn draw(mean: &[f64], rng: &mut RngHandle) -> Result<Vec<f64>> {
    angles_of(mean.iter().map(|m| m + rng.standard_normal()).collect())
}

/// `n` directions of `mu + N(0, I)`.
pub fn projected_normal(n: usize, mu: &[f64], rng: &mut RngHandle) -> Result<Dataset> {
    if mu.len() < 2 {
        return Err(CliError::Config("projected normal needs dimension at least 2".into()));
    }
    let angles = (0..n).map(|_| draw(mu, rng)).collect::<Result<_>>()?;
    Ok(Dataset { dim: mu.len(), angles, covariates: None, rejected: Vec::new() })
}

/// Equal-weight mixture of projected normals centred at `strength` times
/// the unit vectors of [`BIMODAL_MODES`] in `R^3`.
pub fn bimodal(n: usize, strength: f64, rng: &mut RngHandle) -> Result<Dataset> {
    let means: Vec<Vec<f64>> =
        BIMODAL_MODES.iter().map(|m| unit_vector(m).into_iter().map(|v| strength * v).collect()).collect();
    let angles = (0..n).map(|_| draw(&means[rng.index(2)], rng)).collect::<Result<_>>()?;
    Ok(Dataset { dim: 3, angles, covariates: None, rejected: Vec::new() })
}

/// Group A (`z = (1, 0)`) then group B (`z = (0, 1)`), each direction the
/// projection of `Gamma z + N(0, I)`.
pub fn two_group(n_a: usize, n_b: usize, gamma: &CoefficientMatrix, rng: &mut RngHandle) -> Result<Dataset> {
    if gamma.cols() != 2 || gamma.rows() < 2 {
        return Err(CliError::Config("two-group data needs a k x 2 coefficient matrix".into()));
    }
    let mut angles = Vec::with_capacity(n_a + n_b);
    let mut covariates = Vec::with_capacity(n_a + n_b);
    for (z, n) in [(vec![1.0, 0.0], n_a), (vec![0.0, 1.0], n_b)] {
        let mean = gamma.apply(&z);
        for _ in 0..n {
            angles.push(draw(&mean, rng)?);
            covariates.push(z.clone());
        }
    }
    Ok(Dataset { dim: gamma.rows(), angles, covariates: Some(covariates), rejected: Vec::new() })
}

/// Default coefficients of the two-group generator in `R^3`: the groups
/// differ mainly in the first coordinate.
pub fn default_two_group_gamma() -> CoefficientMatrix {
    CoefficientMatrix::from_rows(3, 2, vec![2.0, -2.0, 1.0, 1.0, 1.0, 1.0]).expect("3 x 2 entries")
}
