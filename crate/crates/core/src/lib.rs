//! Projected Pólya tree models for directional data.
//!
//! A finite multivariate Pólya tree on `R^k`, centred on a product of
//! unit-precision normals, is pushed through the polar transform to give a
//! random density on the angles of the unit sphere. The crate provides:
//!
//! * [`numerics`]: special functions and seeded random variate generation,
//! * [`polya_tree`]: partitions, branching probabilities and tree densities,
//! * [`geometry`]: the polar/Cartesian correspondence and its Jacobian,
//! * [`projected_density`]: quadrature over the latent resultant, density
//!   grids, marginals, conditionals and regression curves,
//! * [`moments`]: trigonometric moments and circular correlation,
//! * [`inference`]: the data-augmented Gibbs sampler and LPML scoring,
//! * [`io`]: the CSV schemas shared with downstream tooling.

pub mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod moments;
pub mod numerics;
pub mod polya_tree;
pub mod projected_density;

pub use error::{Error, Result};
pub use geometry::{AngleVector, CartesianPoint, PolarPoint};
pub use inference::{
    AcceptanceLog, ChainConfig, ChainOutput, CoefficientMatrix, CountTensor, McmcState,
    Observations, PriorHyperparams,
};
pub use moments::{DirectionalSummary, TrigMoment};
pub use numerics::{GammaShapeRate, RngHandle};
pub use polya_tree::{BranchingProbabilities, CenteringMeasure, NodeAddress, Partition, TreeShape};
pub use projected_density::{
    CurveMean, CurvePoint, DensityGrid, GridAxis, ProjectedModel, QuadratureMode, QuadratureRule,
    RegressionContext,
};
