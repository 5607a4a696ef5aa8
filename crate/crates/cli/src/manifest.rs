//! Run configuration: one JSON file per experiment, overridable from flags.

use std::fs;
use std::path::{Path, PathBuf};

use ppt_core::{ChainConfig, CurveMean, PriorHyperparams, TreeShape};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PriorSim,
    Fit,
    FitRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub dim: usize,
    pub depth: usize,
    /// Concentration for prior simulation; the starting value is `a/b` in fits.
    pub alpha: f64,
    pub delta: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { dim: 3, depth: 3, alpha: 1.0, delta: 1.1 }
    }
}

impl TreeConfig {
    pub fn shape(&self) -> Result<TreeShape> {
        Ok(TreeShape::new(self.dim, self.depth, self.alpha, self.delta)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Grid points per angle axis.
    pub resolution: usize,
    /// Report the periodic angle on `[-pi, pi)` instead of `[0, 2 pi)`.
    pub rotate: bool,
    pub curve_mean: CurveMean,
    /// Optional `[lower, upper]` per angle for an extra cropped joint grid.
    pub close_up: Option<Vec<[f64; 2]>>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { resolution: 100, rotate: false, curve_mean: CurveMean::Auto, close_up: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSimConfig {
    pub paths: usize,
    pub centers: Vec<Vec<f64>>,
}

impl Default for PriorSimConfig {
    fn default() -> Self {
        let centers = [[-1.0, -1.0, -1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, -1.0, 1.0], [-1.0, 0.0, 1.0], [
            -1.0, 1.0, 0.0,
        ]];
        Self { paths: 20, centers: centers.iter().map(|c| c.to_vec()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub prior: PriorHyperparams,
    /// Defaults to the regression tuning for `fit-regression`.
    #[serde(default)]
    pub chain: Option<ChainConfig>,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub prior_sim: PriorSimConfig,
}

/// Command-line values that replace manifest entries when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub depth: Option<usize>,
    pub tau_mu: Option<f64>,
    pub resolution: Option<usize>,
    pub rotate: bool,
    pub paths: Option<usize>,
}

/// What every run writes next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEcho {
    pub version: String,
    pub manifest: RunManifest,
}

impl RunManifest {
    pub fn new(experiment: ExperimentKind, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            experiment,
            output_dir: output_dir.into(),
            tree: TreeConfig::default(),
            prior: PriorHyperparams::default(),
            chain: None,
            dataset: None,
            output: OutputConfig::default(),
            prior_sim: PriorSimConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Chain settings with the experiment's defaults filled in.
    pub fn chain_config(&self) -> ChainConfig {
        self.chain.clone().unwrap_or_else(|| match self.experiment {
            ExperimentKind::FitRegression => ChainConfig::regression(),
            _ => ChainConfig::default(),
        })
    }

    /// Fills in defaults, applies overrides and validates the result.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        let mut chain = self.chain_config();
        if let Some(v) = o.seed {
            chain.seed = v;
        }
        if let Some(v) = o.iterations {
            chain.iterations = v;
        }
        if let Some(v) = o.burn_in {
            chain.burn_in = v;
        }
        if let Some(v) = o.thin {
            chain.thin = v;
        }
        self.chain = Some(chain);
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.depth {
            self.tree.depth = v;
        }
        if let Some(v) = o.tau_mu {
            self.prior.tau_mu = v;
        }
        if let Some(v) = o.resolution {
            self.output.resolution = v;
        }
        if let Some(v) = o.paths {
            self.prior_sim.paths = v;
        }
        self.output.rotate |= o.rotate;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.shape()?;
        self.prior.validate()?;
        self.chain_config().validate()?;
        if self.output.resolution < 2 {
            return Err(CliError::Config("grid resolution must be at least 2".into()));
        }
        if self.output.rotate && self.output.resolution % 2 != 0 {
            return Err(CliError::Config("rotation needs an even grid resolution".into()));
        }
        if let Some(c) = &self.output.close_up {
            if c.len() != self.tree.dim - 1 || c.iter().any(|[lo, hi]| !(lo < hi)) {
                return Err(CliError::Config("close_up needs one increasing [lower, upper] pair per angle".into()));
            }
        }
        match self.experiment {
            ExperimentKind::PriorSim => {
                if self.prior_sim.paths == 0 {
                    return Err(CliError::Config("prior simulation needs at least one path".into()));
                }
                if self.prior_sim.centers.is_empty()
                    || self.prior_sim.centers.iter().any(|c| c.len() != self.tree.dim || c.iter().any(|v| !v.is_finite()))
                {
                    return Err(CliError::Config(format!(
                        "prior simulation centers must be finite vectors of length {}",
                        self.tree.dim
                    )));
                }
            }
            ExperimentKind::Fit | ExperimentKind::FitRegression => {
                let Some(d) = &self.dataset else {
                    return Err(CliError::Config("fits need a dataset".into()));
                };
                d.validate()?;
                if d.dim() != self.tree.dim {
                    return Err(CliError::Config(format!(
                        "dataset has {} angle columns but the tree dimension is {}",
                        d.angles.len(),
                        self.tree.dim
                    )));
                }
                let regression = self.experiment == ExperimentKind::FitRegression;
                if regression && d.covariates.is_empty() {
                    return Err(CliError::Config("fit-regression needs covariate columns".into()));
                }
                if !regression && !d.covariates.is_empty() {
                    return Err(CliError::Config("fit does not use covariates; use fit-regression".into()));
                }
            }
        }
        Ok(())
    }

    /// Creates the output directory and writes `manifest.json`.
    pub fn write_echo(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::Config(format!("output directory {}: {e}", self.output_dir.display())))?;
        let echo = ManifestEcho { version: env!("CARGO_PKG_VERSION").to_owned(), manifest: self.clone() };
        fs::write(self.output_dir.join("manifest.json"), serde_json::to_string_pretty(&echo)? + "\n")?;
        Ok(())
    }
}

pub fn read_echo(dir: &Path) -> Result<ManifestEcho> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
