//! Rotated two-Gaussian domain-shift benchmark and its CSV format.
//!
//! CSV layout: `x0,...,x{D-1},label,domain`, one sample per row, values with
//! 17 significant digits, an empty `label` cell for unlabeled samples and
//! `domain` one of `source` / `target`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Domain, Sample};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub class_means: [[f64; 2]; 2],
    /// Shared class covariance, must be symmetric positive-definite.
    pub covariance: [[f64; 2]; 2],
    pub n_per_class_source: usize,
    pub n_per_class_target: usize,
    /// Counter-clockwise rotation of the target domain about the mean of the
    /// class means.
    pub rotation_deg: f64,
    pub seed: u64,
    /// Rotate the very source points instead of drawing fresh target points.
    pub rotate_exact_points: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_means: [[-2.0, 0.0], [2.0, 0.0]],
            covariance: [[0.65, 0.0], [0.0, 0.65]],
            n_per_class_source: 500,
            n_per_class_target: 500,
            rotation_deg: 90.0,
            seed: 0,
            rotate_exact_points: false,
        }
    }
}

impl SyntheticSpec {
    /// Lower Cholesky factor of the covariance.
    fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        let [[a, b], [c, d]] = self.covariance;
        if [a, b, c, d].iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("covariance entries must be finite".into()));
        }
        if (b - c).abs() > 1e-12 * (1.0 + b.abs().max(c.abs())) {
            return Err(Error::Spec("covariance must be symmetric".into()));
        }
        if a <= 0.0 || a * d - b * c <= 0.0 {
            return Err(Error::Spec("covariance must be positive-definite".into()));
        }
        let l00 = a.sqrt();
        let l10 = b / l00;
        let l11 = (d - l10 * l10).sqrt();
        Ok([[l00, 0.0], [l10, l11]])
    }

    pub fn validate(&self) -> Result<()> {
        self.cholesky()?;
        if self.n_per_class_source == 0 || self.n_per_class_target == 0 {
            return Err(Error::Spec("per-class counts must be positive".into()));
        }
        if !self.rotation_deg.is_finite() || self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Spec("means and rotation must be finite".into()));
        }
        Ok(())
    }

    pub fn pivot(&self) -> [f64; 2] {
        let [m0, m1] = self.class_means;
        [(m0[0] + m1[0]) / 2.0, (m0[1] + m1[1]) / 2.0]
    }

    /// Maps a point through the target rotation.
    pub fn rotate(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let [px, py] = self.pivot();
        let (dx, dy) = (p[0] - px, p[1] - py);
        [px + c * dx - s * dy, py + s * dx + c * dy]
    }
}

/// A labeled source set and a target set whose labels act as the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDomains<T> {
    pub source: Vec<Sample<T>>,
    pub target: Vec<Sample<T>>,
}

/// Draws the source domain per class, then the target domain as the rotated
/// image of fresh draws (or of the source points themselves with
/// `rotate_exact_points`). Samples are grouped by class.
pub fn gen_toy<T: Scalar>(spec: &SyntheticSpec) -> Result<ToyDomains<T>> {
    spec.validate()?;
    let chol = spec.cholesky()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |class: usize| -> [f64; 2] {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let m = spec.class_means[class];
        [m[0] + chol[0][0] * z0, m[1] + chol[1][0] * z0 + chol[1][1] * z1]
    };

    let mut source_points = Vec::with_capacity(2 * spec.n_per_class_source);
    for class in 0..2 {
        for _ in 0..spec.n_per_class_source {
            source_points.push((draw(class), class));
        }
    }
    let target_points: Vec<([f64; 2], usize)> = if spec.rotate_exact_points {
        (0..2)
            .flat_map(|class| {
                source_points
                    .iter()
                    .filter(move |(_, c)| *c == class)
                    .cycle()
                    .take(spec.n_per_class_target)
                    .map(|&(p, c)| (spec.rotate(p), c))
            })
            .collect()
    } else {
        let mut pts = Vec::with_capacity(2 * spec.n_per_class_target);
        for class in 0..2 {
            for _ in 0..spec.n_per_class_target {
                pts.push((spec.rotate(draw(class)), class));
            }
        }
        pts
    };

    let to_samples = |pts: &[([f64; 2], usize)], domain| {
        pts.iter().map(|&(p, y)| Sample::labeled(vec![T::lit(p[0]), T::lit(p[1])], y, domain)).collect()
    };
    Ok(ToyDomains { source: to_samples(&source_points, Domain::Source), target: to_samples(&target_points, Domain::Target) })
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `dataset` as CSV text. An empty dataset yields the header
/// `label,domain` alone.
pub fn write_csv<T: Scalar, W: Write>(dataset: &[Sample<T>], writer: W) -> Result<()> {
    let dim = dataset.first().map_or(0, Sample::dim);
    let mut csv = csv::WriterBuilder::new().from_writer(writer);
    let io = |e: csv::Error| Error::Io { path: "<writer>".into(), message: e.to_string() };
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("domain".into());
    csv.write_record(&header).map_err(io)?;
    for s in dataset {
        if s.dim() != dim {
            return Err(Error::Shape { expected: dim, got: s.dim() });
        }
        let mut row: Vec<String> = s.features.iter().map(|v| format_value(v.as_f64())).collect();
        row.push(s.label.map(|y| y.to_string()).unwrap_or_default());
        row.push(s.domain.as_str().into());
        csv.write_record(&row).map_err(io)?;
    }
    csv.flush().map_err(|e| Error::Io { path: "<writer>".into(), message: e.to_string() })?;
    Ok(())
}

/// Parses CSV text produced by [`write_csv`].
pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<Vec<Sample<T>>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "domain" {
        return Err(Error::Parse { line: 1, message: "header must end with `label,domain`".into() });
    }
    let dim = cols.len() - 2;
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("x{i}") {
            return Err(Error::Parse { line: 1, message: format!("expected column `x{i}`, found `{c}`") });
        }
    }
    let mut out = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if record.len() != dim + 2 {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", dim + 2, record.len()) });
        }
        let features = record
            .iter()
            .take(dim)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::lit)
                    .ok_or_else(|| Error::Parse { line, message: format!("bad feature value `{f}`") })
            })
            .collect::<Result<Vec<T>>>()?;
        let label_cell = record[dim].trim();
        let label = if label_cell.is_empty() {
            None
        } else {
            Some(label_cell.parse::<usize>().map_err(|_| Error::Parse { line, message: format!("bad label `{label_cell}`") })?)
        };
        let domain = record[dim + 1].trim().parse::<Domain>().map_err(|message| Error::Parse { line, message })?;
        out.push(Sample { features, label, domain });
    }
    Ok(out)
}

pub fn save_csv<T: Scalar>(dataset: &[Sample<T>], path: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
    let file = File::create(path).map_err(io)?;
    let mut writer = BufWriter::new(file);
    write_csv(dataset, &mut writer).map_err(|e| match e {
        Error::Io { message, .. } => Error::Io { path: path.display().to_string(), message },
        other => other,
    })?;
    writer.flush().map_err(io)
}

pub fn load_csv<T: Scalar>(path: &Path) -> Result<Vec<Sample<T>>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    read_csv(file)
}
