use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};

/// Features are mapped into this interval.
pub const FEATURE_RANGE: (f64, f64) = (0.25, 0.75);
/// Values beyond the training range are clipped into this band.
pub const GUARD_RANGE: (f64, f64) = (0.26, 0.74);

/// Per-feature training minima and maxima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit(raw: &[Vec<f64>]) -> Result<Self> {
        let n = raw
            .first()
            .map(Vec::len)
            .ok_or_else(|| DslError::InvalidInput("empty feature matrix".into()))?;
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for row in raw {
            check_row(row, n)?;
            for j in 0..n {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        check_row(row, self.dim())?;
        let (lo, hi) = FEATURE_RANGE;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let range = self.max[j] - self.min[j];
                if range <= 0.0 {
                    return 0.5 * (lo + hi);
                }
                let y = lo + (hi - lo) * (v - self.min[j]) / range;
                if y < lo {
                    GUARD_RANGE.0
                } else if y > hi {
                    GUARD_RANGE.1
                } else {
                    y
                }
            })
            .collect())
    }

    pub fn invert(&self, row: &[f64]) -> Result<Vec<f64>> {
        check_row(row, self.dim())?;
        let (lo, hi) = FEATURE_RANGE;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let range = self.max[j] - self.min[j];
                if range <= 0.0 {
                    self.min[j]
                } else {
                    self.min[j] + (y - lo) / (hi - lo) * range
                }
            })
            .collect())
    }
}

fn check_row(row: &[f64], n: usize) -> Result<()> {
    if row.len() != n {
        return Err(DslError::ShapeMismatch {
            context: "feature row",
            expected: n,
            got: row.len(),
        });
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(DslError::InvalidInput("non-finite feature value".into()));
    }
    Ok(())
}

/// Normalized features with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub normalization: Normalization,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    /// Normalize `raw`, fitting the statistics on it unless `stats` is given.
    pub fn from_raw(
        raw: &[Vec<f64>],
        labels: Vec<usize>,
        stats: Option<&Normalization>,
    ) -> Result<Self> {
        if raw.len() != labels.len() {
            return Err(DslError::ShapeMismatch {
                context: "labels",
                expected: raw.len(),
                got: labels.len(),
            });
        }
        let (features, normalization) = normalize(raw, stats)?;
        Ok(Self {
            features,
            labels,
            normalization,
        })
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            normalization: self.normalization.clone(),
        }
    }
}

/// Affine map of every feature onto [0.25, 0.75] using `stats` or the
/// statistics of `raw` itself.
pub fn normalize(
    raw: &[Vec<f64>],
    stats: Option<&Normalization>,
) -> Result<(Vec<Vec<f64>>, Normalization)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => Normalization::fit(raw)?,
    };
    let rows = raw
        .iter()
        .map(|r| stats.apply(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, stats))
}

pub fn denormalize(features: &[Vec<f64>], stats: &Normalization) -> Result<Vec<Vec<f64>>> {
    features.iter().map(|r| stats.invert(r)).collect()
}

/// Two interleaving half circles with Gaussian noise, `m / 2` points each,
/// in shuffled order.
pub fn two_moons(m: usize, noise: f64, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if m == 0 || m % 2 != 0 {
        return Err(DslError::InvalidInput(format!(
            "two moons needs an even positive size, got {m}"
        )));
    }
    if !(noise >= 0.0) {
        return Err(DslError::InvalidInput("noise must be non-negative".into()));
    }
    let half = m / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("positive scale");
    let mut pts: Vec<(Vec<f64>, usize)> = Vec::with_capacity(m);
    for class in 0..2 {
        for i in 0..half {
            let th = std::f64::consts::PI * i as f64 / (half.max(2) - 1) as f64;
            let (x, y) = if class == 0 {
                (th.cos(), th.sin())
            } else {
                (1.0 - th.cos(), 0.5 - th.sin())
            };
            pts.push((vec![x, y], class));
        }
    }
    pts.shuffle(&mut rng);
    if noise > 0.0 {
        for (p, _) in pts.iter_mut() {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(pts.into_iter().unzip())
}
