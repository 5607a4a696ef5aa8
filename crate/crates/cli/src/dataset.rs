//! Delimited-table ingestion with per-column angle transforms.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ppt_core::geometry::wrap_angle;
use ppt_core::{AngleVector, Observations};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result as CliResult};

/// Slack for colatitudes that land a rounding error outside `[0, pi]`.
const SUPPORT_SLACK: f64 = 1e-12;
/// Maximum number of offending rows quoted in an ingestion error.
const MAX_REPORTED: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

/// One angle coordinate: `theta = unit((value + offset) * scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleColumn {
    pub column: ColumnRef,
    #[serde(default)]
    pub unit: AngleUnit,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl AngleColumn {
    pub fn radians(column: usize) -> Self {
        Self { column: ColumnRef::Index(column), unit: AngleUnit::Radians, offset: 0.0, scale: 1.0 }
    }

    pub fn degrees(column: usize) -> Self {
        Self { unit: AngleUnit::Degrees, ..Self::radians(column) }
    }

    pub fn transform(&self, value: f64) -> f64 {
        let v = (value + self.offset) * self.scale;
        match self.unit {
            AngleUnit::Radians => v,
            AngleUnit::Degrees => v * PI / 180.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Auto,
    Comma,
    Whitespace,
}

/// Where the data lives and what each column means. Angle columns are
/// listed colatitudes first; the last one is the periodic angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub angles: Vec<AngleColumn>,
    #[serde(default)]
    pub covariates: Vec<ColumnRef>,
    #[serde(default)]
    pub delimiter: Delimiter,
    /// `None` detects a header from the first row.
    #[serde(default)]
    pub header: Option<bool>,
}

impl DatasetSpec {
    /// Angles in radians in the first columns, then covariates.
    pub fn radians(path: impl Into<PathBuf>, n_angles: usize, n_covariates: usize) -> Self {
        Self {
            path: path.into(),
            angles: (0..n_angles).map(AngleColumn::radians).collect(),
            covariates: (n_angles..n_angles + n_covariates).map(ColumnRef::Index).collect(),
            delimiter: Delimiter::Auto,
            header: None,
        }
    }

    /// Transform presets for the three reference datasets.
    ///
    /// `b15`, `b19`: latitude-like colatitude and longitude in degrees in
    /// columns 0 and 1. `b23`: latitude in `[-90, 90]` shifted by 90, then
    /// longitude, then two site indicators.
    pub fn preset(name: &str, path: impl Into<PathBuf>) -> CliResult<Self> {
        let mut spec = Self::radians(path, 0, 0);
        match name {
            "b15" | "b19" => spec.angles = vec![AngleColumn::degrees(0), AngleColumn::degrees(1)],
            "b23" => {
                spec.angles = vec![AngleColumn { offset: 90.0, ..AngleColumn::degrees(0) }, AngleColumn::degrees(1)];
                spec.covariates = vec![ColumnRef::Index(2), ColumnRef::Index(3)];
            }
            other => return Err(CliError::Config(format!("unknown dataset preset {other:?}"))),
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.angles.len() + 1
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.angles.is_empty() {
            return Err(CliError::Config("dataset needs at least one angle column".into()));
        }
        for a in &self.angles {
            if !a.offset.is_finite() || !a.scale.is_finite() || a.scale == 0.0 {
                return Err(CliError::Config(format!("bad transform for angle column {:?}", a.column)));
            }
        }
        Ok(())
    }
}

/// Transformed angles (radians, inside the support) and optional covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub angles: Vec<Vec<f64>>,
    pub covariates: Option<Vec<Vec<f64>>>,
    /// 1-based line numbers of rows dropped for missing values.
    pub rejected: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn observations(&self) -> CliResult<Observations> {
        let angles = self.angles.iter().cloned().map(AngleVector::new).collect::<ppt_core::Result<Vec<_>>>()?;
        let obs = match &self.covariates {
            Some(z) => Observations::with_covariates(self.dim, angles, z.clone())?,
            None => Observations::new(self.dim, angles)?,
        };
        Ok(obs)
    }

    /// Distinct covariate rows in order of first appearance.
    pub fn covariate_profiles(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for z in self.covariates.iter().flatten() {
            if !out.iter().any(|p| p.iter().zip(z).all(|(a, b)| a.to_bits() == b.to_bits())) {
                out.push(z.clone());
            }
        }
        out
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | "?" | ".")
}

fn split_rows(text: &str, delimiter: Delimiter) -> CliResult<Vec<(usize, Vec<String>)>> {
    let delimiter = match delimiter {
        Delimiter::Auto => {
            let first = text.lines().find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
            if first.is_some_and(|l| l.contains(',')) {
                Delimiter::Comma
            } else {
                Delimiter::Whitespace
            }
        }
        d => d,
    };
    let mut rows = Vec::new();
    match delimiter {
        Delimiter::Comma => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .comment(Some(b'#'))
                .from_reader(text.as_bytes());
            for rec in rdr.records() {
                let rec = rec.map_err(|e| CliError::Ingestion(e.to_string()))?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                rows.push((line, rec.iter().map(|f| f.trim().to_owned()).collect()));
            }
        }
        _ => {
            for (i, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') {
                    continue;
                }
                rows.push((i + 1, t.split_whitespace().map(str::to_owned).collect()));
            }
        }
    }
    Ok(rows)
}

fn resolve(col: &ColumnRef, names: Option<&HashMap<String, usize>>) -> CliResult<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(n) => names
            .and_then(|m| m.get(n).copied())
            .ok_or_else(|| CliError::Config(format!("column {n:?} not found in the header"))),
    }
}

fn offenders(kind: &str, rows: &[(usize, String)]) -> CliError {
    let mut msg = format!("{} {kind} row(s):", rows.len());
    for (line, why) in rows.iter().take(MAX_REPORTED) {
        msg.push_str(&format!("\n  line {line}: {why}"));
    }
    if rows.len() > MAX_REPORTED {
        msg.push_str(&format!("\n  ... and {} more", rows.len() - MAX_REPORTED));
    }
    CliError::Ingestion(msg)
}

/// Reads the table, applies the transforms and checks support.
pub fn load_dataset(spec: &DatasetSpec) -> CliResult<Dataset> {
    spec.validate()?;
    let text = fs::read_to_string(&spec.path)
        .map_err(|e| CliError::Ingestion(format!("cannot read {}: {e}", spec.path.display())))?;
    let mut rows = split_rows(&text, spec.delimiter)?;
    let has_header = spec.header.unwrap_or_else(|| {
        rows.first()
            .is_some_and(|(_, r)| r.iter().any(|f| !is_missing(f) && f.parse::<f64>().is_err()))
    });
    let names = if has_header && !rows.is_empty() {
        let (_, header) = rows.remove(0);
        Some(header.into_iter().enumerate().map(|(i, n)| (n, i)).collect::<HashMap<_, _>>())
    } else {
        None
    };
    let angle_cols =
        spec.angles.iter().map(|a| resolve(&a.column, names.as_ref())).collect::<CliResult<Vec<_>>>()?;
    let cov_cols = spec.covariates.iter().map(|c| resolve(c, names.as_ref())).collect::<CliResult<Vec<_>>>()?;
    let last = spec.angles.len() - 1;

    let mut angles = Vec::with_capacity(rows.len());
    let mut covariates = Vec::with_capacity(rows.len());
    let mut rejected = Vec::new();
    let mut malformed = Vec::new();
    let mut outside = Vec::new();
    'rows: for (line, fields) in &rows {
        let wanted = angle_cols.iter().chain(&cov_cols);
        let mut values = Vec::with_capacity(angle_cols.len() + cov_cols.len());
        for &c in wanted.clone() {
            let Some(field) = fields.get(c) else {
                malformed.push((*line, format!("has {} fields, column {c} missing", fields.len())));
                continue 'rows;
            };
            if is_missing(field) {
                rejected.push(*line);
                continue 'rows;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    malformed.push((*line, format!("column {c} value {field:?} is not a real number")));
                    continue 'rows;
                }
            }
        }
        let mut theta = Vec::with_capacity(spec.angles.len());
        for (l, col) in spec.angles.iter().enumerate() {
            let t = col.transform(values[l]);
            if l == last {
                theta.push(wrap_angle(t));
            } else if (-SUPPORT_SLACK..=PI + SUPPORT_SLACK).contains(&t) {
                theta.push(t.clamp(0.0, PI));
            } else {
                outside.push((*line, format!("colatitude {} is {t} rad, outside [0, pi]", l + 1)));
                continue 'rows;
            }
        }
        angles.push(theta);
        covariates.push(values[spec.angles.len()..].to_vec());
    }
    if !malformed.is_empty() {
        return Err(offenders("malformed", &malformed));
    }
    if !outside.is_empty() {
        return Err(offenders("out-of-support", &outside));
    }
    if angles.is_empty() {
        return Err(CliError::Ingestion(format!("{} holds no complete rows", spec.path.display())));
    }
    Ok(Dataset {
        dim: spec.dim(),
        angles,
        covariates: (!cov_cols.is_empty()).then_some(covariates),
        rejected,
    })
}

/// Writes the transformed table in radians with a `theta*`/`z*` header.
/// Values use the shortest round-trip representation.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let n_cov = data.covariates.as_ref().and_then(|z| z.first()).map_or(0, Vec::len);
    let mut header: Vec<String> = (1..data.dim).map(|l| format!("theta{l}")).collect();
    header.extend((1..=n_cov).map(|h| format!("z{h}")));
    writeln!(f, "{}", header.join(","))?;
    for (i, theta) in data.angles.iter().enumerate() {
        let mut fields: Vec<String> = theta.iter().map(f64::to_string).collect();
        if let Some(z) = &data.covariates {
            fields.extend(z[i].iter().map(f64::to_string));
        }
        writeln!(f, "{}", fields.join(","))?;
    }
    f.flush()?;
    Ok(())
}
