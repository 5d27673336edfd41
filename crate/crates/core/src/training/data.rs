//! In-memory datasets, synthetic generators and file loaders.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::TrainingError;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Class { labels: Vec<usize>, num_classes: usize },
    Real(Vec<f64>),
}

/// Row-major feature matrix with one target per row. `strata` is the
/// categorical key used for Dirichlet partitioning: the class label for
/// classification data, a latent group (or quantile bin) for regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub n_features: usize,
    pub targets: Targets,
    pub strata: Vec<usize>,
}

impl Dataset {
    pub fn classification(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, TrainingError> {
        let ds = Dataset {
            features,
            n_features,
            strata: labels.clone(),
            targets: Targets::Class { labels, num_classes },
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn regression(
        features: Vec<f64>,
        n_features: usize,
        targets: Vec<f64>,
        strata: Vec<usize>,
    ) -> Result<Self, TrainingError> {
        let ds = Dataset {
            features,
            n_features,
            targets: Targets::Real(targets),
            strata,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), TrainingError> {
        if self.n_features == 0 {
            return Err(TrainingError::Dataset("zero features".into()));
        }
        if !self.features.len().is_multiple_of(self.n_features) {
            return Err(TrainingError::Dataset(format!(
                "{} feature values is not a multiple of {} columns",
                self.features.len(),
                self.n_features
            )));
        }
        let n = self.features.len() / self.n_features;
        let t = match &self.targets {
            Targets::Class { labels, num_classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                    return Err(TrainingError::Dataset(format!(
                        "label {bad} out of range for {num_classes} classes"
                    )));
                }
                labels.len()
            }
            Targets::Real(y) => y.len(),
        };
        if t != n || self.strata.len() != n {
            return Err(TrainingError::Dataset(format!(
                "{n} rows but {t} targets and {} strata",
                self.strata.len()
            )));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(TrainingError::Dataset("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        match &self.targets {
            Targets::Class { labels, .. } => labels[i],
            Targets::Real(_) => self.strata[i],
        }
    }

    pub fn target(&self, i: usize) -> f64 {
        match &self.targets {
            Targets::Class { labels, .. } => labels[i] as f64,
            Targets::Real(y) => y[i],
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Class { num_classes, .. } => Some(*num_classes),
            Targets::Real(_) => None,
        }
    }

    pub fn num_strata(&self) -> usize {
        self.strata.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Copies the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Class { labels, num_classes } => Targets::Class {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                num_classes: *num_classes,
            },
            Targets::Real(y) => Targets::Real(rows.iter().map(|&r| y[r]).collect()),
        };
        Dataset {
            features,
            n_features: self.n_features,
            targets,
            strata: rows.iter().map(|&r| self.strata[r]).collect(),
        }
    }
}

/// Gaussian class clusters: class means are drawn once with per-coordinate
/// standard deviation `separation`, samples add unit noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSpec {
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        ClassificationSpec {
            classes: 10,
            features: 20,
            train_per_class: 500,
            test_per_class: 100,
            separation: 0.5,
        }
    }
}

fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synthetic_classification<R: rand::Rng + ?Sized>(
    spec: &ClassificationSpec,
    rng: &mut R,
) -> Result<(Dataset, Dataset), TrainingError> {
    let p = spec.features;
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..p).map(|_| spec.separation * normal(rng)).collect())
        .collect();
    let mut draw = |per_class: usize| {
        let mut feats = Vec::with_capacity(per_class * spec.classes * p);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                feats.extend(mean.iter().map(|m| m + normal(rng)));
                labels.push(c);
            }
        }
        Dataset::classification(feats, p, labels, spec.classes)
    };
    let train = draw(spec.train_per_class)?;
    let test = draw(spec.test_per_class)?;
    Ok((train, test))
}

/// Least-squares regression data with a latent group per sample.
///
/// Coordinate `j` of the features has standard deviation
/// `scale_min · (scale_max/scale_min)^(j/(p−1))`, so gradient entries have
/// persistently different magnitudes. Each group shifts the feature mean by
/// a random offset of size `group_shift`; targets are `x·w* + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub features: usize,
    pub groups: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub group_shift: f64,
    pub noise: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            features: 200,
            groups: 10,
            train_samples: 5000,
            test_samples: 1000,
            scale_min: 0.1,
            scale_max: 2.0,
            group_shift: 0.5,
            noise: 0.5,
        }
    }
}

pub fn synthetic_regression<R: rand::Rng + ?Sized>(
    spec: &RegressionSpec,
    rng: &mut R,
) -> Result<(Dataset, Dataset), TrainingError> {
    let p = spec.features;
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let t = if p > 1 { j as f64 / (p - 1) as f64 } else { 0.0 };
            spec.scale_min * (spec.scale_max / spec.scale_min).powf(t)
        })
        .collect();
    let w_star: Vec<f64> = (0..p).map(|_| normal(rng)).collect();
    let shifts: Vec<Vec<f64>> = (0..spec.groups)
        .map(|_| (0..p).map(|j| spec.group_shift * scales[j] * normal(rng)).collect())
        .collect();
    let mut draw = |n: usize| {
        let mut feats = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        let mut strata = Vec::with_capacity(n);
        for _ in 0..n {
            let g = rng.random_range(0..spec.groups);
            let start = feats.len();
            for j in 0..p {
                feats.push(shifts[g][j] + scales[j] * normal(rng));
            }
            let dot: f64 = feats[start..].iter().zip(&w_star).map(|(a, b)| a * b).sum();
            y.push(dot + spec.noise * normal(rng));
            strata.push(g);
        }
        Dataset::regression(feats, p, y, strata)
    };
    let train = draw(spec.train_samples)?;
    let test = draw(spec.test_samples)?;
    Ok((train, test))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, TrainingError> {
    fs::read(path).map_err(|source| TrainingError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses an IDX file (big-endian magic `0x0000 TT DD`, `DD` u32 dimensions).
/// Returns the dimensions and the payload converted to `f64`.
pub fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>), TrainingError> {
    let bad = |m: &str| TrainingError::Dataset(format!("IDX: {m}"));
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("bad magic number"));
    }
    let (dtype, ndim) = (bytes[2], bytes[3] as usize);
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let b = &bytes[4 + 4 * i..8 + 4 * i];
            u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    let width = match dtype {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        other => return Err(bad(&format!("unknown data type 0x{other:02x}"))),
    };
    if body.len() != count * width {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            count * width,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(width)
        .map(|c| match dtype {
            0x08 => c[0] as f64,
            0x09 => c[0] as i8 as f64,
            0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
            0x0C => i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
            0x0D => f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
            _ => f64::from_be_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]),
        })
        .collect();
    Ok((dims, values))
}

/// Loads an IDX image file and its label file. Pixel values are divided by
/// `pixel_scale` (255 for 8-bit images).
pub fn load_idx(
    images: &Path,
    labels: &Path,
    pixel_scale: f64,
) -> Result<Dataset, TrainingError> {
    let (dims, pixels) = parse_idx(&read_bytes(images)?)?;
    let (ldims, label_values) = parse_idx(&read_bytes(labels)?)?;
    if dims.is_empty() || ldims.len() != 1 || ldims[0] != dims[0] {
        return Err(TrainingError::Dataset(format!(
            "IDX: {} images vs {} labels",
            dims.first().copied().unwrap_or(0),
            ldims.first().copied().unwrap_or(0)
        )));
    }
    let n_features: usize = dims[1..].iter().product::<usize>().max(1);
    let labels: Vec<usize> = label_values.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset::classification(
        pixels.into_iter().map(|x| x / pixel_scale).collect(),
        n_features,
        labels,
        num_classes,
    )
}

/// Loads a numeric CSV. `label_column` holds the target; every other column
/// is a feature. With `classification` the target must be a nonnegative
/// integer class; otherwise it is real-valued and rows are stratified into
/// `regression_bins` quantile bins for partitioning.
pub fn load_csv(
    path: &Path,
    label_column: usize,
    has_header: bool,
    classification: bool,
    regression_bins: usize,
) -> Result<Dataset, TrainingError> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|e| TrainingError::Dataset(format!("{}: {e}", path.display())))?;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().skip(usize::from(has_header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                TrainingError::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        if *width.get_or_insert(cells.len()) != cells.len() || label_column >= cells.len() {
            return Err(TrainingError::Dataset(format!(
                "{}:{}: ragged row or missing label column",
                path.display(),
                lineno + 1
            )));
        }
        for (j, &v) in cells.iter().enumerate() {
            if j == label_column {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let n_features = width.unwrap_or(1).saturating_sub(1);
    if classification {
        if let Some(bad) = targets.iter().find(|t| t.fract() != 0.0 || **t < 0.0) {
            return Err(TrainingError::Dataset(format!(
                "{}: class label {bad} is not a nonnegative integer",
                path.display()
            )));
        }
        let labels: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Dataset::classification(features, n_features, labels, num_classes)
    } else {
        let strata = quantile_bins(&targets, regression_bins.max(1));
        Dataset::regression(features, n_features, targets, strata)
    }
}

fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / values.len().max(1);
    }
    out
}
