use std::path::Path;

use nalgebra::DMatrix;
use regntk::PointSet;

use crate::config::{DatasetConfig, Labels};
use crate::error::{CliError, CliResult};

/// Sample points with q × m labels, and optional probe points.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: PointSet,
    pub labels: DMatrix<f64>,
    pub probes: Option<PointSet>,
}

impl Dataset {
    pub fn load(cfg: &DatasetConfig) -> CliResult<Self> {
        let (points, labels) = match (&cfg.points, &cfg.labels, &cfg.path) {
            (Some(p), Some(l), None) => (p.clone(), label_matrix(l, p.len())?),
            (None, None, Some(path)) => read_csv(path, cfg.has_header)?,
            _ => {
                return Err(CliError::Config(
                    "dataset: points+labels or path required".into(),
                ))
            }
        };
        let samples = PointSet::new(points)?;
        let probes = cfg.probes.clone().map(PointSet::new).transpose()?;
        if let Some(p) = &probes {
            if p.dim() != samples.dim() {
                return Err(CliError::Config(format!(
                    "probes have dimension {}, samples {}",
                    p.dim(),
                    samples.dim()
                )));
            }
        }
        Ok(Self {
            samples,
            labels,
            probes,
        })
    }

    /// Projects samples and probes onto the sphere of radius √n0.
    pub fn sphere_normalised(self) -> CliResult<Self> {
        Ok(Self {
            samples: self.samples.sphere_normalised()?,
            labels: self.labels,
            probes: self.probes.map(|p| p.sphere_normalised()).transpose()?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.labels.nrows()
    }

    pub fn probe_count(&self) -> usize {
        self.probes.as_ref().map_or(0, |p| p.len())
    }
}

fn label_matrix(labels: &Labels, m: usize) -> CliResult<DMatrix<f64>> {
    let mismatch = |got: usize| CliError::Config(format!("dataset: {m} points but {got} labels"));
    match labels {
        Labels::Scalar(v) => {
            if v.len() != m {
                return Err(mismatch(v.len()));
            }
            Ok(DMatrix::from_row_slice(1, m, v))
        }
        Labels::Vector(rows) => {
            if rows.len() != m {
                return Err(mismatch(rows.len()));
            }
            let q = rows.first().map_or(0, Vec::len);
            if q == 0 || rows.iter().any(|r| r.len() != q) {
                return Err(CliError::Config(
                    "dataset: label vectors must share a positive length".into(),
                ));
            }
            Ok(DMatrix::from_fn(q, m, |k, j| rows[j][k]))
        }
    }
}

fn read_csv(path: &Path, has_header: bool) -> CliResult<(Vec<Vec<f64>>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("dataset {}: {e}", path.display())))?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("dataset {}: {e}", path.display())))?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| {
                CliError::Config(format!("dataset {} row {}: {e}", path.display(), i + 1))
            })?;
        if vals.len() < 2 {
            return Err(CliError::Config(format!(
                "dataset {} row {}: need at least one feature and a label",
                path.display(),
                i + 1
            )));
        }
        let (x, y) = vals.split_at(vals.len() - 1);
        points.push(x.to_vec());
        labels.push(y[0]);
    }
    if points.is_empty() {
        return Err(CliError::Config(format!(
            "dataset {} is empty",
            path.display()
        )));
    }
    let m = labels.len();
    Ok((points, DMatrix::from_row_slice(1, m, &labels)))
}
