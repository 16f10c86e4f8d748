//! Seeded synthetic dataset generators and CSV ingestion.
//!
//! Generator constants (radii, spans, noise levels) are fixed here and echoed
//! into run manifests; they are chosen so the shapes defeat plain Gaussian
//! clusters while staying at unit scale after centering.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// An observed dataset with optional ground-truth cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// N×D observation matrix, raw coordinates.
    pub y: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    /// Number of distinct label values, when labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let set: std::collections::HashSet<usize> = l.iter().copied().collect();
            set.len()
        })
    }
}

/// Per-dimension centering of an observation matrix. The original matrix is
/// retained so undoing the centering is exact, not merely arithmetic.
#[derive(Debug, Clone)]
pub struct Centered {
    pub values: DMatrix<f64>,
    pub means: DVector<f64>,
    original: DMatrix<f64>,
}

impl Centered {
    pub fn uncenter(&self) -> &DMatrix<f64> {
        &self.original
    }
}

pub fn center(y: &DMatrix<f64>) -> Centered {
    let n = y.nrows().max(1) as f64;
    let means = DVector::from_fn(y.ncols(), |j, _| y.column(j).sum() / n);
    let values = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - means[j]);
    Centered {
        values,
        means,
        original: y.clone(),
    }
}

// two-curve: two parallel parabolic arcs separated vertically; the shared
// curvature is strong enough that one full-covariance Gaussian per curve
// cannot separate them
const TWO_CURVE_HALF_SPAN: f64 = 1.5;
const TWO_CURVE_GAP: f64 = 0.65;
const TWO_CURVE_NOISE: f64 = 0.03;

/// Two parallel curved lines: 100 points, 50 per curve.
pub fn gen_two_curve(seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Generator);
    let n_per = 50;
    let mut y = DMatrix::zeros(2 * n_per, 2);
    let mut labels = Vec::with_capacity(2 * n_per);
    for c in 0..2 {
        for i in 0..n_per {
            let t = (rng.random::<f64>() - 0.5) * 2.0 * TWO_CURVE_HALF_SPAN;
            let noise: f64 = StandardNormal.sample(&mut rng);
            let noise2: f64 = StandardNormal.sample(&mut rng);
            let row = c * n_per + i;
            y[(row, 0)] = t + TWO_CURVE_NOISE * noise;
            y[(row, 1)] = t * t + TWO_CURVE_GAP * c as f64 + TWO_CURVE_NOISE * noise2;
            labels.push(c);
        }
    }
    Dataset {
        name: "two-curve".into(),
        y,
        labels: Some(labels),
    }
}

// three-semi: interleaved half-circles
const THREE_SEMI_NOISE: f64 = 0.05;

/// Three interleaved half-circles: 300 points, 100 per arc.
pub fn gen_three_semi(seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Generator);
    let n_per = 100;
    let mut y = DMatrix::zeros(3 * n_per, 2);
    let mut labels = Vec::with_capacity(3 * n_per);
    for c in 0..3 {
        for i in 0..n_per {
            let t = rng.random::<f64>() * std::f64::consts::PI;
            let noise: f64 = StandardNormal.sample(&mut rng);
            let noise2: f64 = StandardNormal.sample(&mut rng);
            let (px, py) = if c % 2 == 0 {
                (c as f64 + t.cos(), t.sin() - 0.25)
            } else {
                (c as f64 + t.cos(), 0.25 - t.sin())
            };
            let row = c * n_per + i;
            y[(row, 0)] = px + THREE_SEMI_NOISE * noise;
            y[(row, 1)] = py + THREE_SEMI_NOISE * noise2;
            labels.push(c);
        }
    }
    Dataset {
        name: "three-semi".into(),
        y,
        labels: Some(labels),
    }
}

// two-circle: concentric circles, radii ratio 2.5 so the inner circle is
// strictly enclosed
const TWO_CIRCLE_RADII: [f64; 2] = [0.5, 1.25];
const TWO_CIRCLE_NOISE: f64 = 0.04;

/// Two concentric circles: 100 points, 50 per ring.
pub fn gen_two_circle(seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Generator);
    let n_per = 50;
    let mut y = DMatrix::zeros(2 * n_per, 2);
    let mut labels = Vec::with_capacity(2 * n_per);
    for (c, &radius) in TWO_CIRCLE_RADII.iter().enumerate() {
        for i in 0..n_per {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let noise: f64 = StandardNormal.sample(&mut rng);
            let noise2: f64 = StandardNormal.sample(&mut rng);
            let row = c * n_per + i;
            y[(row, 0)] = radius * theta.cos() + TWO_CIRCLE_NOISE * noise;
            y[(row, 1)] = radius * theta.sin() + TWO_CIRCLE_NOISE * noise2;
            labels.push(c);
        }
    }
    Dataset {
        name: "two-circle".into(),
        y,
        labels: Some(labels),
    }
}

// pinwheel: radial-angular warp of per-arm Gaussians
const PINWHEEL_RADIAL_STD: f64 = 0.3;
const PINWHEEL_TANGENTIAL_STD: f64 = 0.1;
const PINWHEEL_RATE: f64 = 0.25;

/// Five spiral arms: 250 points, 50 per arm.
pub fn gen_pinwheel(seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Generator);
    let arms = 5;
    let n_per = 50;
    let mut y = DMatrix::zeros(arms * n_per, 2);
    let mut labels = Vec::with_capacity(arms * n_per);
    for c in 0..arms {
        let base = std::f64::consts::TAU * c as f64 / arms as f64;
        for i in 0..n_per {
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            let radial = 1.0 + PINWHEEL_RADIAL_STD * e0;
            let tangential = PINWHEEL_TANGENTIAL_STD * e1;
            let angle = base + PINWHEEL_RATE * radial.exp();
            let row = c * n_per + i;
            y[(row, 0)] = radial * angle.cos() - tangential * angle.sin();
            y[(row, 1)] = radial * angle.sin() + tangential * angle.cos();
            labels.push(c);
        }
    }
    Dataset {
        name: "pinwheel".into(),
        y,
        labels: Some(labels),
    }
}

/// Generator lookup by dataset name.
pub fn generate(name: &str, seed: u64) -> Result<Dataset> {
    match name {
        "two-curve" => Ok(gen_two_curve(seed)),
        "three-semi" => Ok(gen_three_semi(seed)),
        "two-circle" => Ok(gen_two_circle(seed)),
        "pinwheel" => Ok(gen_pinwheel(seed)),
        other => Err(Error::Usage(format!(
            "unknown dataset name '{other}' (expected two-curve, three-semi, two-circle or pinwheel)"
        ))),
    }
}

/// Serialize a dataset: header row, one observation per line, labels as a
/// final integer column when present. Floats use the shortest round-trip
/// representation, so write/read is lossless.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    let headers: Vec<String> = (0..ds.d()).map(|j| format!("y{j}")).collect();
    out.push_str(&headers.join(","));
    if ds.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for i in 0..ds.n() {
        for j in 0..ds.d() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", ds.y[(i, j)]);
        }
        if let Some(labels) = &ds.labels {
            let _ = write!(out, ",{}", labels[i]);
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(ds)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a dataset from CSV text. `label_column` names the column holding
/// integer cluster labels; pass `None` to treat every column as a feature.
/// Lines starting with '#' are ignored.
pub fn parse_csv(text: &str, name: &str, label_column: Option<&str>) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{name}: file is empty")))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = match label_column {
        Some(want) => Some(
            columns
                .iter()
                .position(|c| *c == want)
                .ok_or_else(|| Error::Data(format!("{name}: no column named '{want}'")))?,
        ),
        None => None,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::Data(format!(
                "{name}: line {line_no} has {} cells, expected {}",
                cells.len(),
                columns.len()
            )));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (j, cell) in cells.iter().enumerate() {
            if Some(j) == label_idx {
                let label: usize = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "{name}: line {line_no}: label '{cell}' is not a non-negative integer"
                    ))
                })?;
                labels.push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "{name}: line {line_no}: cell '{cell}' is not numeric"
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{name}: line {line_no}: cell '{cell}' is not finite"
                    )));
                }
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{name}: no data rows")));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::Data(format!("{name}: no feature columns")));
    }
    let y = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Ok(Dataset {
        name: name.to_string(),
        y,
        labels: if label_idx.is_some() {
            Some(labels)
        } else {
            None
        },
    })
}

pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".to_string());
    parse_csv(&text, &name, label_column)
}
