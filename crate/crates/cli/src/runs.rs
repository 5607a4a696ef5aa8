//! Experiment drivers and their file outputs.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ppt_core::io::{self, MarginalBand, MomentRow, TraceLayout};
use ppt_core::moments::{grid_moments, mean_direction, trig_moment_from_grid, GridMoments};
use ppt_core::polya_tree::sample_prior;
use ppt_core::projected_density::{grid_on_axes, joint_grid, marginal_density, regression_curve};
use ppt_core::{
    inference, CenteringMeasure, ChainConfig, ChainOutput, CurveMean, DensityGrid, GridAxis, McmcState, ProjectedModel,
    QuadratureRule, RegressionContext, RngHandle, TreeShape,
};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, Dataset};
use crate::error::{CliError, Result};
use crate::manifest::{read_echo, ExperimentKind, RunManifest};

/// Label stored with every credible band.
pub const BAND_KIND: &str = "pointwise-95";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Sample mean and equal-tailed 95% interval.
    pub fn from_samples(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lower: quantile(&sorted, 0.025),
            upper: quantile(&sorted, 0.975),
        })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn axis_label(l: usize) -> String {
    format!("theta{}", l + 1)
}

/// Maps an angle from `[0, 2 pi)` to `[-pi, pi)`.
fn to_signed(t: f64) -> f64 {
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

fn full_axes(dim: usize, resolution: usize) -> Result<Vec<GridAxis>> {
    Ok((0..dim - 1).map(|c| GridAxis::for_angle(dim, c, resolution)).collect::<ppt_core::Result<_>>()?)
}

fn marginals(joint: &DensityGrid) -> Result<Vec<DensityGrid>> {
    if joint.ndim() == 1 {
        return Ok(vec![joint.clone()]);
    }
    Ok((0..joint.ndim()).map(|a| marginal_density(joint, a)).collect::<ppt_core::Result<_>>()?)
}

/// The joint scaled to unit Riemann mass, so moments see a probability
/// grid even where a peaked density is under-resolved.
fn normalized(joint: &DensityGrid) -> Result<DensityGrid> {
    let mass = joint.total_mass();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(CliError::Numerical(format!("density grid has mass {mass}")));
    }
    let mut g = joint.clone();
    g.values.iter_mut().for_each(|v| *v /= mass);
    Ok(g)
}

/// Arithmetic mean of a colatitude marginal, circular mean of the periodic one.
fn location(marginal: &DensityGrid) -> Result<f64> {
    let axis = &marginal.axes[0];
    if axis.periodic {
        return Ok(mean_direction(&trig_moment_from_grid(marginal, 1)?)?.nu);
    }
    Ok(marginal.values.iter().enumerate().map(|(j, f)| axis.midpoint(j) * f * axis.step()).sum())
}

/// Writes both regression curves of a two-angle grid. Slices without mass
/// are reported instead of aborting the run.
fn write_curves(dir: &Path, joint: &DensityGrid, kind: CurveMean, rotate: bool) -> Result<Vec<String>> {
    let mut skipped = Vec::new();
    if joint.ndim() != 2 {
        return Ok(skipped);
    }
    for (response, conditioning) in [(0, 1), (1, 0)] {
        let name = format!("curve_{}_given_{}.csv", axis_label(response), axis_label(conditioning));
        match regression_curve(joint, response, conditioning, kind) {
            Ok(mut curve) => {
                if rotate && joint.axes[response].periodic {
                    curve.iter_mut().for_each(|p| p.mean = to_signed(p.mean));
                }
                io::write_curve(create(&dir.join(&name))?, &curve)?;
            }
            Err(ppt_core::Error::DegenerateConditional(m)) => skipped.push(format!("{name}: slice mass {m}")),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(skipped)
}

/// Posterior summaries of the density over a set of states.
pub struct PosteriorGrids {
    pub mean_joint: DensityGrid,
    pub bands: Vec<MarginalBand>,
    pub moments: Vec<MomentRow>,
    /// Smallest and largest raw grid mass over the states.
    pub mass_range: [f64; 2],
}

impl PosteriorGrids {
    /// Evaluates `evaluate(state)` for every state and accumulates the
    /// mean joint density, pointwise bands and per-state moments. Moments
    /// use the unrotated grid scaled to unit mass; the joint and bands
    /// follow `rotate` and keep the raw values.
    pub fn collect<F>(states: &[McmcState], iterations: &[usize], rotate: bool, mut evaluate: F) -> Result<Self>
    where
        F: FnMut(&McmcState) -> Result<DensityGrid>,
    {
        let mut sum: Option<DensityGrid> = None;
        let mut per_axis: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut moments = Vec::with_capacity(states.len());
        let mut mass_range = [f64::INFINITY, f64::NEG_INFINITY];
        for (state, &iteration) in states.iter().zip(iterations) {
            let joint = evaluate(state)?;
            let mass = joint.total_mass();
            mass_range = [mass_range[0].min(mass), mass_range[1].max(mass)];
            moments.push(MomentRow { iteration, moments: grid_moments(&normalized(&joint)?)? });
            let shown = if rotate { joint.rotated()? } else { joint };
            let margs = marginals(&shown)?;
            if per_axis.is_empty() {
                per_axis = margs.iter().map(|m| vec![Vec::with_capacity(states.len()); m.values.len()]).collect();
            }
            for (slots, m) in per_axis.iter_mut().zip(&margs) {
                slots.iter_mut().zip(&m.values).for_each(|(s, v)| s.push(*v));
            }
            match &mut sum {
                Some(acc) => acc.values.iter_mut().zip(&shown.values).for_each(|(a, v)| *a += v),
                None => sum = Some(shown),
            }
        }
        let Some(mut mean_joint) = sum else {
            return Err(CliError::Numerical("no retained states to summarise".into()));
        };
        let n = states.len() as f64;
        mean_joint.values.iter_mut().for_each(|v| *v /= n);
        mean_joint.conditioning.clear();
        let bands = marginals(&mean_joint)?
            .into_iter()
            .zip(per_axis)
            .map(|(m, slots)| {
                let axis = &m.axes[0];
                let (lower, upper) = slots
                    .into_iter()
                    .map(|mut s| {
                        s.sort_by(f64::total_cmp);
                        (quantile(&s, 0.025), quantile(&s, 0.975))
                    })
                    .unzip();
                MarginalBand { axis: axis.name.clone(), theta: axis.midpoints(), mean: m.values.clone(), lower, upper }
            })
            .collect();
        Ok(Self { mean_joint, bands, moments, mass_range })
    }

    /// Writes `joint_mean.csv`, `band_*.csv`, `moments.csv` and the curves.
    pub fn write(&self, dir: &Path, kind: CurveMean, rotate: bool) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        io::write_grid(create(&dir.join("joint_mean.csv"))?, &self.mean_joint)?;
        for band in &self.bands {
            io::write_band(create(&dir.join(format!("band_{}.csv", band.axis)))?, band)?;
        }
        let angles = self.mean_joint.ndim();
        io::write_moments(create(&dir.join("moments.csv"))?, angles, &self.moments)?;
        write_curves(dir, &self.mean_joint, kind, rotate)
    }

    pub fn moment_summary(&self) -> MomentSummary {
        let col = |f: &dyn Fn(&GridMoments) -> Option<f64>| {
            let v: Vec<f64> = self.moments.iter().filter_map(|r| f(&r.moments)).collect();
            Interval::from_samples(&v)
        };
        let angles = self.mean_joint.ndim();
        let rhos: Vec<f64> = self.moments.iter().filter_map(|r| r.moments.rho).collect();
        MomentSummary {
            nu: (0..angles).filter_map(|l| col(&|m| Some(m.nu[l]))).collect(),
            varrho: (0..angles).filter_map(|l| col(&|m| Some(m.varrho[l]))).collect(),
            rho: Interval::from_samples(&rhos),
            rho_positive: (!rhos.is_empty())
                .then(|| rhos.iter().filter(|r| **r > 0.0).count() as f64 / rhos.len() as f64),
            grid_mass: self.mass_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub nu: Vec<Interval>,
    pub varrho: Vec<Interval>,
    pub rho: Option<Interval>,
    /// Posterior probability that the correlation is positive.
    pub rho_positive: Option<f64>,
    /// Range of the raw Riemann mass of the per-state joint grids.
    pub grid_mass: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub r: f64,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub observations: usize,
    pub rejected_rows: Vec<usize>,
    pub retained: usize,
    pub lpml: f64,
    pub floored_densities: usize,
    pub zero_density_observations: Vec<usize>,
    pub alpha: Interval,
    pub acceptance: AcceptanceRates,
    pub wall_time_seconds: f64,
    pub band_kind: String,
    pub skipped_curves: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub chain: ChainSummary,
    pub mu: Vec<Interval>,
    pub moments: MomentSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSummary {
    /// 1-based row (angle coordinate) and column (covariate).
    pub row: usize,
    pub col: usize,
    pub interval: Interval,
    pub prob_positive: f64,
    /// Posterior mass on the side of zero holding the majority.
    pub prob_away_from_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub z: Vec<f64>,
    /// Location of each angle under the posterior mean predictive density.
    pub location: Vec<f64>,
    pub moments: MomentSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub chain: ChainSummary,
    pub gamma: Vec<GammaSummary>,
    pub profiles: Vec<ProfileSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSummary {
    pub mu: Vec<f64>,
    /// Argmax of the ensemble mean marginal of each angle.
    pub mean_marginal_mode: Vec<f64>,
    /// Largest relative deviation of the ensemble mean periodic marginal
    /// from the uniform level `1 / (2 pi)`.
    pub periodic_uniform_deviation: f64,
    pub rho_quartiles: Option<[f64; 3]>,
}

impl CenterSummary {
    pub fn rho_iqr(&self) -> Option<f64> {
        self.rho_quartiles.map(|q| q[2] - q[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSimSummary {
    pub paths: usize,
    pub centers: Vec<CenterSummary>,
    pub wall_time_seconds: f64,
}

fn shape_of(m: &RunManifest) -> Result<TreeShape> {
    m.tree.shape()
}

/// Draws prior trees around each configured centre and writes per-path
/// joint and marginal grids, ensemble mean marginals and moments.
pub fn run_prior_simulation(m: &RunManifest) -> Result<PriorSimSummary> {
    if m.experiment != ExperimentKind::PriorSim {
        return Err(CliError::Config("manifest is not a prior-sim experiment".into()));
    }
    let start = Instant::now();
    m.write_echo()?;
    let shape = shape_of(m)?;
    let chain = m.chain_config();
    let k = shape.dim();
    let resolution = m.output.resolution;
    let mut centers = Vec::with_capacity(m.prior_sim.centers.len());
    for (s, mu) in m.prior_sim.centers.iter().enumerate() {
        let dir = m.output_dir.join(format!("center_{}", s + 1));
        fs::create_dir_all(&dir)?;
        let mut rng = RngHandle::with_stream(chain.seed, s as u64);
        let center = CenteringMeasure::new(mu.clone())?;
        let quad = QuadratureRule::for_center_norm(chain.quadrature_nodes, center.norm(), chain.quadrature_mode)?;
        let mut rows = Vec::with_capacity(m.prior_sim.paths);
        let mut mean_marginals: Vec<DensityGrid> = Vec::new();
        for j in 0..m.prior_sim.paths {
            let probs = sample_prior(&shape, &mut rng, false);
            let model = ProjectedModel::new(&shape, &probs, &center, &quad, &RegressionContext::inactive())?;
            let joint = joint_grid(&model, resolution)?;
            rows.push(MomentRow { iteration: j + 1, moments: grid_moments(&normalized(&joint)?)? });
            let shown = if m.output.rotate { joint.rotated()? } else { joint };
            io::write_grid(create(&dir.join(format!("path_{}_joint.csv", j + 1)))?, &shown)?;
            let margs = marginals(&shown)?;
            for (l, g) in margs.iter().enumerate() {
                io::write_grid(create(&dir.join(format!("path_{}_{}.csv", j + 1, axis_label(l))))?, g)?;
            }
            if j == 0 {
                write_curves(&dir, &shown, m.output.curve_mean, m.output.rotate)?;
                mean_marginals = margs;
            } else {
                for (acc, g) in mean_marginals.iter_mut().zip(&margs) {
                    acc.values.iter_mut().zip(&g.values).for_each(|(a, v)| *a += v);
                }
            }
        }
        let paths = m.prior_sim.paths as f64;
        let mut modes = Vec::with_capacity(k - 1);
        let mut deviation = 0.0;
        for (l, g) in mean_marginals.iter_mut().enumerate() {
            g.values.iter_mut().for_each(|v| *v /= paths);
            io::write_grid(create(&dir.join(format!("mean_{}.csv", axis_label(l))))?, g)?;
            let arg = (0..g.values.len()).max_by(|&a, &b| g.values[a].total_cmp(&g.values[b])).unwrap_or(0);
            modes.push(g.axes[0].midpoint(arg));
            if g.axes[0].periodic {
                let level = 1.0 / (2.0 * PI);
                deviation = g.values.iter().map(|v| (v / level - 1.0).abs()).fold(0.0, f64::max);
            }
        }
        io::write_moments(create(&dir.join("moments.csv"))?, k - 1, &rows)?;
        let mut rhos: Vec<f64> = rows.iter().filter_map(|r| r.moments.rho).collect();
        rhos.sort_by(f64::total_cmp);
        let rho_quartiles =
            (!rhos.is_empty()).then(|| [quantile(&rhos, 0.25), quantile(&rhos, 0.5), quantile(&rhos, 0.75)]);
        centers.push(CenterSummary {
            mu: mu.clone(),
            mean_marginal_mode: modes,
            periodic_uniform_deviation: deviation,
            rho_quartiles,
        });
    }
    let summary =
        PriorSimSummary { paths: m.prior_sim.paths, centers, wall_time_seconds: start.elapsed().as_secs_f64() };
    write_json(&m.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize, Deserialize)]
struct StateLine {
    iteration: usize,
    state: McmcState,
}

fn write_states(path: &Path, iterations: &[usize], states: &[McmcState]) -> Result<()> {
    let mut f = create(path)?;
    for (&iteration, state) in iterations.iter().zip(states) {
        serde_json::to_writer(&mut f, &StateLine { iteration, state: state.clone() })?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `states.jsonl` back into iterations and states.
pub fn read_states(path: &Path) -> Result<(Vec<usize>, Vec<McmcState>)> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut iterations = Vec::new();
    let mut states = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: StateLine = serde_json::from_str(&line)?;
        iterations.push(s.iteration);
        states.push(s.state);
    }
    Ok((iterations, states))
}

fn load(m: &RunManifest) -> Result<Dataset> {
    let spec = m.dataset.as_ref().ok_or_else(|| CliError::Config("fits need a dataset".into()))?;
    load_dataset(spec)
}

/// Writes the chain-level files shared by both fit kinds and returns the
/// chain summary without curve information.
fn write_chain_outputs(
    m: &RunManifest,
    data: &Dataset,
    layout: TraceLayout,
    out: &ChainOutput,
    start: Instant,
) -> Result<ChainSummary> {
    let dir = &m.output_dir;
    io::write_traces(create(&dir.join("traces.csv"))?, layout, &out.traces)?;
    io::write_likelihood(create(&dir.join("likelihood.csv"))?, &out.iterations, &out.likelihood)?;
    let lp = inference::lpml(&out.likelihood)?;
    io::write_cpo(create(&dir.join("cpo.csv"))?, &lp.log_cpo)?;
    write_states(&dir.join("states.jsonl"), &out.iterations, &out.states)?;
    let alphas: Vec<f64> = out.states.iter().map(|s| s.alpha).collect();
    Ok(ChainSummary {
        observations: data.len(),
        rejected_rows: data.rejected.clone(),
        retained: out.states.len(),
        lpml: lp.lpml,
        floored_densities: lp.floored,
        zero_density_observations: lp.zero_density.iter().map(|i| i + 1).collect(),
        alpha: Interval::from_samples(&alphas).ok_or_else(|| CliError::Numerical("empty chain".into()))?,
        acceptance: AcceptanceRates {
            r: out.acceptance.r.rate(),
            alpha: out.acceptance.alpha.rate(),
            gamma: out.acceptance.gamma.rate(),
        },
        wall_time_seconds: start.elapsed().as_secs_f64(),
        band_kind: BAND_KIND.into(),
        skipped_curves: Vec::new(),
    })
}

fn location_grids(
    shape: &TreeShape,
    chain: &ChainConfig,
    states: &[McmcState],
    iterations: &[usize],
    resolution: usize,
    rotate: bool,
) -> Result<PosteriorGrids> {
    let axes = full_axes(shape.dim(), resolution)?;
    PosteriorGrids::collect(states, iterations, rotate, |state| {
        let center = state.center();
        let quad = QuadratureRule::for_center_norm(chain.quadrature_nodes, center.norm(), chain.quadrature_mode)?;
        let model = ProjectedModel::new(shape, &state.probs, &center, &quad, &RegressionContext::inactive())?;
        Ok(grid_on_axes(&model, axes.clone())?)
    })
}

/// Predictive density at covariates `z`; quadrature reaches `||Gamma z|| + 4`.
fn predictive_grid(
    shape: &TreeShape,
    chain: &ChainConfig,
    state: &McmcState,
    z: &[f64],
    axes: Vec<GridAxis>,
) -> Result<DensityGrid> {
    let gamma = state.gamma.clone().ok_or_else(|| CliError::Config("state has no regression coefficients".into()))?;
    let reg = RegressionContext::new(gamma, z.to_vec())?;
    let reach = reg.shift().map_or(0.0, |s| s.iter().map(|v| v * v).sum::<f64>().sqrt());
    let quad = QuadratureRule::for_center_norm(chain.quadrature_nodes, reach, chain.quadrature_mode)?;
    let center = state.center();
    let model = ProjectedModel::new(shape, &state.probs, &center, &quad, &reg)?;
    Ok(grid_on_axes(&model, axes)?)
}

fn close_up_axes(m: &RunManifest) -> Result<Option<Vec<GridAxis>>> {
    let Some(bounds) = &m.output.close_up else { return Ok(None) };
    let last = bounds.len() - 1;
    let axes = bounds
        .iter()
        .enumerate()
        .map(|(l, [lo, hi])| GridAxis::new(axis_label(l), *lo, *hi, m.output.resolution, l == last && hi - lo >= 2.0 * PI))
        .collect::<ppt_core::Result<Vec<_>>>()?;
    Ok(Some(axes))
}

fn mean_grid<F>(states: &[McmcState], axes: &[GridAxis], mut evaluate: F) -> Result<DensityGrid>
where
    F: FnMut(&McmcState, Vec<GridAxis>) -> Result<DensityGrid>,
{
    let mut acc: Option<DensityGrid> = None;
    for s in states {
        let g = evaluate(s, axes.to_vec())?;
        match &mut acc {
            Some(a) => a.values.iter_mut().zip(&g.values).for_each(|(x, v)| *x += v),
            None => acc = Some(g),
        }
    }
    let mut g = acc.ok_or_else(|| CliError::Numerical("no retained states to summarise".into()))?;
    g.values.iter_mut().for_each(|v| *v /= states.len() as f64);
    Ok(g)
}

/// Location-model posterior analysis.
pub fn run_fit(m: &RunManifest) -> Result<FitSummary> {
    if m.experiment != ExperimentKind::Fit {
        return Err(CliError::Config("manifest is not a fit experiment".into()));
    }
    let start = Instant::now();
    let data = load(m)?;
    let obs = data.observations()?;
    m.write_echo()?;
    let shape = shape_of(m)?;
    let chain = m.chain_config();
    let out = inference::run_chain(&shape, &obs, &m.prior, &chain, None)?;
    let layout = TraceLayout::Location { dim: shape.dim() };
    let mut summary = write_chain_outputs(m, &data, layout, &out, start)?;
    let grids = location_grids(&shape, &chain, &out.states, &out.iterations, m.output.resolution, m.output.rotate)?;
    summary.skipped_curves = grids.write(&m.output_dir, m.output.curve_mean, m.output.rotate)?;
    if let Some(axes) = close_up_axes(m)? {
        let g = mean_grid(&out.states, &axes, |state, axes| {
            let center = state.center();
            let quad = QuadratureRule::for_center_norm(chain.quadrature_nodes, center.norm(), chain.quadrature_mode)?;
            let model = ProjectedModel::new(&shape, &state.probs, &center, &quad, &RegressionContext::inactive())?;
            Ok(grid_on_axes(&model, axes)?)
        })?;
        io::write_grid(create(&m.output_dir.join("joint_mean_closeup.csv"))?, &g)?;
    }
    let mu = (0..shape.dim())
        .filter_map(|l| Interval::from_samples(&out.states.iter().map(|s| s.mu[l]).collect::<Vec<_>>()))
        .collect();
    summary.wall_time_seconds = start.elapsed().as_secs_f64();
    let fit = FitSummary { chain: summary, mu, moments: grids.moment_summary() };
    write_json(&m.output_dir.join("summary.json"), &fit)?;
    Ok(fit)
}

fn write_gamma_samples(path: &Path, dim: usize, covariates: usize, out: &ChainOutput) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["iteration".to_owned()];
    header.extend((1..=dim).flat_map(|l| (1..=covariates).map(move |h| format!("gamma_{l}_{h}"))));
    wtr.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for row in &out.traces {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(row.gamma.iter().map(f64::to_string));
        wtr.write_record(&rec).map_err(|e| CliError::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

fn gamma_summaries(states: &[McmcState]) -> Vec<GammaSummary> {
    let Some(first) = states.first().and_then(|s| s.gamma.as_ref()) else { return Vec::new() };
    let mut out = Vec::new();
    for row in 0..first.rows() {
        for col in 0..first.cols() {
            let v: Vec<f64> = states.iter().filter_map(|s| s.gamma.as_ref()).map(|g| g.get(row, col)).collect();
            let positive = v.iter().filter(|x| **x > 0.0).count() as f64 / v.len() as f64;
            out.push(GammaSummary {
                row: row + 1,
                col: col + 1,
                interval: Interval::from_samples(&v).expect("non-empty chain"),
                prob_positive: positive,
                prob_away_from_zero: positive.max(1.0 - positive),
            });
        }
    }
    out
}

fn regression_profiles(
    m: &RunManifest,
    shape: &TreeShape,
    data: &Dataset,
    states: &[McmcState],
    iterations: &[usize],
    out_dir: &Path,
) -> Result<(Vec<ProfileSummary>, Vec<String>)> {
    let chain = m.chain_config();
    let axes = full_axes(shape.dim(), m.output.resolution)?;
    let close_up = close_up_axes(m)?;
    let mut profiles = Vec::new();
    let mut skipped = Vec::new();
    for (p, z) in data.covariate_profiles().into_iter().enumerate() {
        let dir = out_dir.join(format!("profile_{}", p + 1));
        let grids = PosteriorGrids::collect(states, iterations, m.output.rotate, |state| {
            predictive_grid(shape, &chain, state, &z, axes.clone())
        })?;
        skipped.extend(grids.write(&dir, m.output.curve_mean, m.output.rotate)?);
        if let Some(axes) = &close_up {
            let g = mean_grid(states, axes, |state, axes| predictive_grid(shape, &chain, state, &z, axes))?;
            io::write_grid(create(&dir.join("joint_mean_closeup.csv"))?, &g)?;
        }
        let unrotated = if m.output.rotate {
            mean_grid(states, &axes, |state, axes| predictive_grid(shape, &chain, state, &z, axes))?
        } else {
            grids.mean_joint.clone()
        };
        let location = marginals(&normalized(&unrotated)?)?.iter().map(location).collect::<Result<Vec<_>>>()?;
        profiles.push(ProfileSummary { z, location, moments: grids.moment_summary() });
    }
    Ok((profiles, skipped))
}

/// Directional regression analysis with covariates.
pub fn run_fit_regression(m: &RunManifest) -> Result<RegressionSummary> {
    if m.experiment != ExperimentKind::FitRegression {
        return Err(CliError::Config("manifest is not a fit-regression experiment".into()));
    }
    let start = Instant::now();
    let data = load(m)?;
    if data.covariates.is_none() {
        return Err(CliError::Config("fit-regression needs covariates".into()));
    }
    let obs = data.observations()?;
    m.write_echo()?;
    let shape = shape_of(m)?;
    let chain = m.chain_config();
    let out = inference::run_chain(&shape, &obs, &m.prior, &chain, None)?;
    let layout = TraceLayout::Regression { dim: shape.dim(), covariates: obs.n_covariates() };
    let mut summary = write_chain_outputs(m, &data, layout, &out, start)?;
    write_gamma_samples(&m.output_dir.join("gamma_samples.csv"), shape.dim(), obs.n_covariates(), &out)?;
    let (profiles, skipped) = regression_profiles(m, &shape, &data, &out.states, &out.iterations, &m.output_dir)?;
    summary.skipped_curves = skipped;
    summary.wall_time_seconds = start.elapsed().as_secs_f64();
    let reg = RegressionSummary { chain: summary, gamma: gamma_summaries(&out.states), profiles };
    write_json(&m.output_dir.join("summary.json"), &reg)?;
    Ok(reg)
}

/// Recomputes LPML from a stored likelihood matrix, optionally rewriting
/// the CPO table.
pub fn recompute_lpml(likelihood: &Path, cpo_out: Option<&Path>) -> Result<inference::LpmlResult> {
    let f = File::open(likelihood).map_err(|e| CliError::Io(format!("{}: {e}", likelihood.display())))?;
    let (_, matrix) = io::read_likelihood(f)?;
    let lp = inference::lpml(&matrix)?;
    if let Some(p) = cpo_out {
        io::write_cpo(create(p)?, &lp.log_cpo)?;
    }
    Ok(lp)
}

/// Re-evaluates posterior grids from a finished fit directory into `out`.
pub fn regrid(fit_dir: &Path, out: &Path, resolution: Option<usize>, rotate: bool) -> Result<Vec<String>> {
    let mut m = read_echo(fit_dir)?.manifest;
    if let Some(r) = resolution {
        m.output.resolution = r;
    }
    m.output.rotate |= rotate;
    m.output_dir = out.to_path_buf();
    m.validate()?;
    let (iterations, states) = read_states(&fit_dir.join("states.jsonl"))?;
    let shape = shape_of(&m)?;
    fs::create_dir_all(out)?;
    match m.experiment {
        ExperimentKind::Fit => {
            let grids = location_grids(&shape, &m.chain_config(), &states, &iterations, m.output.resolution, m.output.rotate)?;
            grids.write(out, m.output.curve_mean, m.output.rotate)
        }
        ExperimentKind::FitRegression => {
            let data = load(&m)?;
            Ok(regression_profiles(&m, &shape, &data, &states, &iterations, out)?.1)
        }
        ExperimentKind::PriorSim => Err(CliError::Config("prior simulations store no states to re-evaluate".into())),
    }
}

/// Dispatches on the experiment kind.
pub fn run(m: &RunManifest) -> Result<serde_json::Value> {
    Ok(match m.experiment {
        ExperimentKind::PriorSim => serde_json::to_value(run_prior_simulation(m)?)?,
        ExperimentKind::Fit => serde_json::to_value(run_fit(m)?)?,
        ExperimentKind::FitRegression => serde_json::to_value(run_fit_regression(m)?)?,
    })
}
