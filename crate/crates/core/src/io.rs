//! CSV schemas for grids, curves, moments, traces, likelihoods and CPO.
//!
//! Every writer has a matching reader, and floats are written in Rust's
//! shortest round-trip form, so reading back is lossless.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::inference::TraceRow;
use crate::moments::GridMoments;
use crate::projected_density::{CurvePoint, DensityGrid, GridAxis};

fn parse_f64(field: &str, line: u64, column: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Csv(format!("line {line}: column {column}: cannot parse {field:?} as a number")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

fn header_of<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    Ok(rdr.headers()?.iter().map(str::to_owned).collect())
}

fn expect_header(found: &[String], expected: &[String]) -> Result<()> {
    if found != expected {
        return Err(Error::Csv(format!("expected header {expected:?}, found {found:?}")));
    }
    Ok(())
}

/// Header `axis names..., density`; one row per cell, last axis fastest.
pub fn write_grid<W: Write>(w: W, grid: &DensityGrid) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = grid.axes.iter().map(|a| a.name.as_str()).collect();
    header.push("density");
    wtr.write_record(&header)?;
    for (flat, v) in grid.values.iter().enumerate() {
        let mut row: Vec<String> = grid.coordinates(flat).iter().map(f64::to_string).collect();
        row.push(v.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Rebuilds a grid from [`write_grid`] output. Axis bounds are recovered
/// from the midpoints; an axis spanning `2 pi` is marked periodic.
pub fn read_grid<R: Read>(r: R) -> Result<DensityGrid> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    if header.len() < 2 || header.last().map(String::as_str) != Some("density") {
        return Err(Error::Csv(format!("grid header must end in 'density', found {header:?}")));
    }
    let n_axes = header.len() - 1;
    let mut coords: Vec<Vec<f64>> = vec![Vec::new(); n_axes];
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        for (a, c) in coords.iter_mut().enumerate() {
            c.push(parse_f64(&rec[a], line, &header[a])?);
        }
        values.push(parse_f64(&rec[n_axes], line, "density")?);
    }
    let mut axes = Vec::with_capacity(n_axes);
    for (a, c) in coords.iter().enumerate() {
        let mut mids: Vec<f64> = c.clone();
        mids.sort_by(f64::total_cmp);
        mids.dedup();
        if mids.len() < 2 {
            return Err(Error::Csv(format!("axis {} needs at least two distinct values", header[a])));
        }
        let step = (mids[mids.len() - 1] - mids[0]) / (mids.len() - 1) as f64;
        let lower = mids[0] - 0.5 * step;
        let upper = mids[mids.len() - 1] + 0.5 * step;
        let periodic = (upper - lower - TAU).abs() < 1e-9;
        let (lower, upper) = snap_bounds(lower, upper);
        axes.push(GridAxis::new(header[a].clone(), lower, upper, mids.len(), periodic)?);
    }
    let grid = DensityGrid::new(n_axes + 1, axes, values)?;
    for (flat, expect) in (0..grid.values.len()).map(|f| (f, grid.coordinates(f))) {
        for (a, e) in expect.iter().enumerate() {
            if (coords[a][flat] - e).abs() > 1e-9 {
                return Err(Error::Csv(format!("row {} is out of grid order", flat + 1)));
            }
        }
    }
    Ok(grid)
}

/// Snaps recovered bounds onto the angle supports they approximate.
fn snap_bounds(lower: f64, upper: f64) -> (f64, f64) {
    let snap = |v: f64| {
        for target in [0.0, PI, -PI, TAU] {
            if (v - target).abs() < 1e-9 {
                return target;
            }
        }
        v
    };
    (snap(lower), snap(upper))
}

pub fn write_curve<W: Write>(w: W, curve: &[CurvePoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["condition", "mean", "concentration", "defined"])?;
    for p in curve {
        wtr.write_record([
            p.condition.to_string(),
            p.mean.to_string(),
            p.concentration.to_string(),
            p.defined.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_curve<R: Read>(r: R) -> Result<Vec<CurvePoint>> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    expect_header(&header, &["condition", "mean", "concentration", "defined"].map(String::from))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let defined = match &rec[3] {
            "true" => true,
            "false" => false,
            other => return Err(Error::Csv(format!("line {line}: column defined: {other:?} is not a boolean"))),
        };
        out.push(CurvePoint {
            condition: parse_f64(&rec[0], line, "condition")?,
            mean: parse_f64(&rec[1], line, "mean")?,
            concentration: parse_f64(&rec[2], line, "concentration")?,
            defined,
        });
    }
    Ok(out)
}

/// One row of the moment table: per-angle mean direction and concentration
/// plus the correlation of the two angles (empty when undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub iteration: usize,
    pub moments: GridMoments,
}

pub fn moment_header(angles: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_owned()];
    h.extend((1..=angles).map(|l| format!("nu_{l}")));
    h.extend((1..=angles).map(|l| format!("varrho_{l}")));
    h.push("rho".into());
    h
}

pub fn write_moments<W: Write>(w: W, angles: usize, rows: &[MomentRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(moment_header(angles))?;
    for row in rows {
        if row.moments.nu.len() != angles || row.moments.varrho.len() != angles {
            return domain("moment row does not match the table width");
        }
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(row.moments.nu.iter().map(f64::to_string));
        rec.extend(row.moments.varrho.iter().map(f64::to_string));
        rec.push(row.moments.rho.map(|r| r.to_string()).unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_moments<R: Read>(r: R) -> Result<Vec<MomentRow>> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    let angles = header.len().saturating_sub(2) / 2;
    expect_header(&header, &moment_header(angles))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let iteration = parse_f64(&rec[0], line, "iteration")? as usize;
        let col = |c: usize| parse_f64(&rec[c], line, &header[c]);
        let nu = (1..=angles).map(col).collect::<Result<Vec<_>>>()?;
        let varrho = (angles + 1..=2 * angles).map(col).collect::<Result<Vec<_>>>()?;
        let rho = if rec[2 * angles + 1].is_empty() { None } else { Some(col(2 * angles + 1)?) };
        out.push(MomentRow { iteration, moments: GridMoments { nu, varrho, rho } });
    }
    Ok(out)
}

/// Columns of a trace table: `mu_l` for `k` coordinates or `gamma_l_h`
/// for a `k x p` coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLayout {
    Location { dim: usize },
    Regression { dim: usize, covariates: usize },
}

impl TraceLayout {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["iteration".to_owned(), "alpha".to_owned()];
        match *self {
            TraceLayout::Location { dim } => h.extend((1..=dim).map(|l| format!("mu_{l}"))),
            TraceLayout::Regression { dim, covariates } => {
                for l in 1..=dim {
                    h.extend((1..=covariates).map(|c| format!("gamma_{l}_{c}")));
                }
            }
        }
        h.extend(["r_acceptance", "alpha_acceptance", "gamma_acceptance"].map(String::from));
        h
    }

    fn width(&self) -> usize {
        match *self {
            TraceLayout::Location { dim } => dim,
            TraceLayout::Regression { dim, covariates } => dim * covariates,
        }
    }

    fn from_header(header: &[String]) -> Result<Self> {
        let mu = header.iter().filter(|h| h.starts_with("mu_")).count();
        let gamma: Vec<(usize, usize)> = header
            .iter()
            .filter_map(|h| h.strip_prefix("gamma_"))
            .filter_map(|rest| {
                let (l, c) = rest.split_once('_')?;
                Some((l.parse().ok()?, c.parse().ok()?))
            })
            .collect();
        let layout = if gamma.is_empty() {
            TraceLayout::Location { dim: mu }
        } else {
            let dim = gamma.iter().map(|g| g.0).max().unwrap_or(0);
            let covariates = gamma.iter().map(|g| g.1).max().unwrap_or(0);
            TraceLayout::Regression { dim, covariates }
        };
        expect_header(header, &layout.header())?;
        Ok(layout)
    }
}

pub fn write_traces<W: Write>(w: W, layout: TraceLayout, rows: &[TraceRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(layout.header())?;
    for row in rows {
        let values = match layout {
            TraceLayout::Location { .. } => &row.mu,
            TraceLayout::Regression { .. } => &row.gamma,
        };
        if values.len() != layout.width() {
            return domain("trace row does not match the table layout");
        }
        let mut rec = vec![row.iteration.to_string(), row.alpha.to_string()];
        rec.extend(values.iter().map(f64::to_string));
        rec.extend([row.r_rate, row.alpha_rate, row.gamma_rate].iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a trace table. Under the regression layout `mu` is returned as
/// zeros, matching the fixed centring mean.
pub fn read_traces<R: Read>(r: R) -> Result<(TraceLayout, Vec<TraceRow>)> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    let layout = TraceLayout::from_header(&header)?;
    let width = layout.width();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let col = |c: usize| parse_f64(&rec[c], line, &header[c]);
        let values = (2..2 + width).map(col).collect::<Result<Vec<_>>>()?;
        let (mu, gamma) = match layout {
            TraceLayout::Location { .. } => (values, Vec::new()),
            TraceLayout::Regression { dim, .. } => (vec![0.0; dim], values),
        };
        out.push(TraceRow {
            iteration: col(0)? as usize,
            alpha: col(1)?,
            mu,
            gamma,
            r_rate: col(2 + width)?,
            alpha_rate: col(3 + width)?,
            gamma_rate: col(4 + width)?,
        });
    }
    Ok((layout, out))
}

/// Wide likelihood table: `iteration, obs_1, ..., obs_n`.
pub fn write_likelihood<W: Write>(w: W, iterations: &[usize], likelihood: &[Vec<f64>]) -> Result<()> {
    if iterations.len() != likelihood.len() {
        return domain("one iteration label per likelihood row is required");
    }
    let n = likelihood.first().map_or(0, Vec::len);
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["iteration".to_owned()];
    header.extend((1..=n).map(|i| format!("obs_{i}")));
    wtr.write_record(&header)?;
    for (t, row) in iterations.iter().zip(likelihood) {
        if row.len() != n {
            return domain("likelihood rows have different lengths");
        }
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_likelihood<R: Read>(r: R) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    if header.first().map(String::as_str) != Some("iteration")
        || header.iter().skip(1).enumerate().any(|(i, h)| *h != format!("obs_{}", i + 1))
    {
        return Err(Error::Csv(format!("unexpected likelihood header {header:?}")));
    }
    let (mut iterations, mut rows) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        iterations.push(parse_f64(&rec[0], line, "iteration")? as usize);
        rows.push((1..header.len()).map(|c| parse_f64(&rec[c], line, &header[c])).collect::<Result<Vec<_>>>()?);
    }
    Ok((iterations, rows))
}

pub fn write_cpo<W: Write>(w: W, log_cpo: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["observation", "log_cpo"])?;
    for (i, v) in log_cpo.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_cpo<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    expect_header(&header, &["observation", "log_cpo"].map(String::from))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            parse_f64(&rec[1], line, "log_cpo")
        })
        .collect()
}

/// Posterior mean of a marginal density with a pointwise credible band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalBand {
    pub axis: String,
    pub theta: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn write_band<W: Write>(w: W, band: &MarginalBand) -> Result<()> {
    let n = band.theta.len();
    if band.mean.len() != n || band.lower.len() != n || band.upper.len() != n {
        return domain("band columns have different lengths");
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([band.axis.as_str(), "mean", "lower", "upper"])?;
    for i in 0..n {
        wtr.write_record([band.theta[i], band.mean[i], band.lower[i], band.upper[i]].map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_band<R: Read>(r: R) -> Result<MarginalBand> {
    let mut rdr = reader(r);
    let header = header_of(&mut rdr)?;
    if header.len() != 4 || header[1..] != ["mean", "lower", "upper"] {
        return Err(Error::Csv(format!("unexpected band header {header:?}")));
    }
    let mut band = MarginalBand {
        axis: header[0].clone(),
        theta: Vec::new(),
        mean: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        band.theta.push(parse_f64(&rec[0], line, &header[0])?);
        band.mean.push(parse_f64(&rec[1], line, "mean")?);
        band.lower.push(parse_f64(&rec[2], line, "lower")?);
        band.upper.push(parse_f64(&rec[3], line, "upper")?);
    }
    Ok(band)
}
