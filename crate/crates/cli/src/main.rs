use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppt_cli::dataset::{write_dataset, DatasetSpec};
use ppt_cli::manifest::{ExperimentKind, Overrides, RunManifest};
use ppt_cli::synth::{self, SynthKind};
use ppt_cli::{runs, CliError, Result};
use ppt_core::RngHandle;

#[derive(Parser)]
#[command(name = "ppt", version, about = "Projected Polya tree models for directional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw densities from the prior and write grids and moments.
    SimulatePrior(RunArgs),
    /// Fit the location model to a dataset.
    Fit(RunArgs),
    /// Fit the regression model to a dataset with covariates.
    FitRegression(RunArgs),
    /// Recompute LPML from a stored likelihood matrix.
    Lpml {
        likelihood: PathBuf,
        /// Also write the per-observation log CPO table here.
        #[arg(long)]
        cpo: Option<PathBuf>,
    },
    /// Re-evaluate posterior grids from a finished fit directory.
    Grid {
        fit_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        rotate: bool,
    },
    /// Write a synthetic dataset (radians, with header).
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Size of the second group for two-group data.
        #[arg(long, default_value_t = 100)]
        n_b: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated location for projected-normal data.
        #[arg(long, value_delimiter = ',', default_value = "1,1,1", allow_hyphen_values = true)]
        mu: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data table, used when the manifest has no dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Transform preset for `--data` (b15, b19, b23); default is radians.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    tau_mu: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    /// Report the periodic angle on [-pi, pi).
    #[arg(long)]
    rotate: bool,
}

fn manifest_for(kind: ExperimentKind, a: RunArgs) -> Result<RunManifest> {
    let mut m = match &a.config {
        Some(p) => RunManifest::load(p)?,
        None => {
            let dir = a.output_dir.clone().ok_or_else(|| CliError::Config("give --config or --output-dir".into()))?;
            RunManifest::new(kind, dir)
        }
    };
    if m.experiment != kind {
        return Err(CliError::Config(format!("manifest experiment is {:?}, not {kind:?}", m.experiment)));
    }
    if let Some(data) = a.data {
        let spec = match &a.preset {
            Some(name) => DatasetSpec::preset(name, data)?,
            None => {
                let covariates = if kind == ExperimentKind::FitRegression { 2 } else { 0 };
                DatasetSpec::radians(data, m.tree.dim - 1, covariates)
            }
        };
        m.dataset = Some(spec);
    }
    let o = Overrides {
        output_dir: a.output_dir,
        seed: a.seed,
        iterations: a.iterations,
        burn_in: a.burn_in,
        thin: a.thin,
        depth: a.depth,
        tau_mu: a.tau_mu,
        resolution: a.resolution,
        rotate: a.rotate,
        paths: a.paths,
    };
    m.resolve(&o)
}

fn synth(kind: SynthKind, n: usize, n_b: usize, seed: u64, mu: &[f64], out: &PathBuf) -> Result<serde_json::Value> {
    let mut rng = RngHandle::new(seed);
    let data = match kind {
        SynthKind::ProjectedNormal => synth::projected_normal(n, mu, &mut rng)?,
        SynthKind::BimodalStrong => synth::bimodal(n, 3.0, &mut rng)?,
        SynthKind::BimodalDiffuse => synth::bimodal(n, 0.5, &mut rng)?,
        SynthKind::TwoGroup => synth::two_group(n, n_b, &synth::default_two_group_gamma(), &mut rng)?,
    };
    write_dataset(out, &data)?;
    Ok(serde_json::json!({ "rows": data.len(), "path": out }))
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::SimulatePrior(a) => runs::run(&manifest_for(ExperimentKind::PriorSim, a)?),
        Command::Fit(a) => runs::run(&manifest_for(ExperimentKind::Fit, a)?),
        Command::FitRegression(a) => runs::run(&manifest_for(ExperimentKind::FitRegression, a)?),
        Command::Lpml { likelihood, cpo } => {
            let lp = runs::recompute_lpml(&likelihood, cpo.as_deref())?;
            Ok(serde_json::json!({
                "lpml": lp.lpml,
                "floored_densities": lp.floored,
                "zero_density_observations": lp.zero_density.iter().map(|i| i + 1).collect::<Vec<_>>(),
            }))
        }
        Command::Grid { fit_dir, out, resolution, rotate } => {
            let skipped = runs::regrid(&fit_dir, &out, resolution, rotate)?;
            Ok(serde_json::json!({ "out": out, "skipped_curves": skipped }))
        }
        Command::Synth { kind, n, n_b, seed, mu, out } => synth(kind, n, n_b, seed, &mu, &out),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(v) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ppt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
