//! The predictor x ↦ L u(x) + b, its losses and the training loop.

pub mod data;
pub mod model;
pub mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};
use crate::gradflow::{self, Upstream};
use crate::slcore::Spectrum;

pub use data::{denormalize, normalize, two_moons, DatasetSplit, Normalization};
pub use model::{Block, DslModel, Formulation, ForwardCache, ModelConfig, SolverOptions};
pub use train::{fit, fit_model, Adam, EpochRecord, FitResult, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Σ_{j≠y} max(0, 1 + z_j − z_y)
    #[default]
    Hinge,
    CrossEntropy,
    /// ½ Σ_j (z_j − [j = y])²
    Squared,
}

fn check_label(logits: &[f64], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(DslError::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn loss(logits: &[f64], label: usize, kind: LossKind) -> Result<f64> {
    check_label(logits, label)?;
    let zy = logits[label];
    Ok(match kind {
        LossKind::Hinge => logits
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != label)
            .map(|(_, z)| (1.0 + z - zy).max(0.0))
            .sum(),
        LossKind::CrossEntropy => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            (lse - zy).max(0.0)
        }
        LossKind::Squared => logits
            .iter()
            .enumerate()
            .map(|(j, z)| 0.5 * (z - if j == label { 1.0 } else { 0.0 }).powi(2))
            .sum(),
    })
}

/// ∂loss/∂logits (a subgradient at hinge kinks).
pub fn loss_grad(logits: &[f64], label: usize, kind: LossKind) -> Result<Vec<f64>> {
    check_label(logits, label)?;
    let mut g = vec![0.0; logits.len()];
    match kind {
        LossKind::Hinge => {
            for j in 0..logits.len() {
                if j != label && 1.0 + logits[j] - logits[label] > 0.0 {
                    g[j] += 1.0;
                    g[label] -= 1.0;
                }
            }
        }
        LossKind::CrossEntropy => {
            g = softmax(logits);
            g[label] -= 1.0;
        }
        LossKind::Squared => {
            for (j, z) in logits.iter().enumerate() {
                g[j] = z - if j == label { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(g)
}

/// (α / d) Σ |λ_i|
pub fn spectral_penalty(spec: &Spectrum, alpha: f64) -> f64 {
    if spec.lambdas.is_empty() {
        return 0.0;
    }
    alpha / spec.lambdas.len() as f64 * spec.lambdas.iter().map(|l| l.abs()).sum::<f64>()
}

fn penalty_grad(spec: &Spectrum, alpha: f64) -> Vec<f64> {
    let d = spec.lambdas.len() as f64;
    spec.lambdas
        .iter()
        .map(|l| alpha / d * l.signum())
        .collect()
}

/// Loss plus spectral penalty for one sample.
pub fn sample_objective(
    model: &DslModel,
    x: &[f64],
    label: usize,
    kind: LossKind,
    alpha: f64,
    opts: &SolverOptions,
) -> Result<(f64, ForwardCache)> {
    let cache = model.forward(x, opts)?;
    let l = loss(&cache.logits, label, kind)? + spectral_penalty(&cache.spectrum, alpha);
    Ok((l, cache))
}

/// Objective value and its gradient w.r.t. all parameters for one sample.
pub fn sample_gradient(
    model: &DslModel,
    x: &[f64],
    label: usize,
    kind: LossKind,
    alpha: f64,
    opts: &SolverOptions,
) -> Result<(f64, DslModel)> {
    let (value, cache) = sample_objective(model, x, label, kind, alpha, opts)?;
    let upstream = Upstream {
        logits: loss_grad(&cache.logits, label, kind)?,
        lambdas: penalty_grad(&cache.spectrum, alpha),
    };
    let grad = gradflow::implicit_grad(model, &cache, &upstream, opts)?;
    Ok((value, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean loss over the samples whose forward pass succeeded.
    pub mean_loss: f64,
    pub failures: usize,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and loss from per-sample logits; `None` marks a failed sample,
/// which counts as misclassified.
pub fn score(logits: &[Option<Vec<f64>>], labels: &[usize], kind: LossKind) -> Result<Evaluation> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(DslError::InvalidInput(
            "evaluation needs a nonempty split".into(),
        ));
    }
    let mut correct = 0;
    let mut failures = 0;
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        match z {
            Some(z) => {
                if argmax(z) == y {
                    correct += 1;
                }
                total += loss(z, y, kind)?;
            }
            None => failures += 1,
        }
    }
    let ok = logits.len() - failures;
    Ok(Evaluation {
        accuracy: correct as f64 / logits.len() as f64,
        mean_loss: if ok > 0 { total / ok as f64 } else { f64::NAN },
        failures,
    })
}

/// Predict every sample of `split` in parallel and score the result.
pub fn evaluate(
    model: &DslModel,
    split: &DatasetSplit,
    kind: LossKind,
    opts: &SolverOptions,
) -> Result<Evaluation> {
    let logits: Vec<Option<Vec<f64>>> = split
        .features
        .par_iter()
        .map(|x| model.predict(x, opts).ok())
        .collect();
    score(&logits, &split.labels, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn hinge_values() {
        assert_eq!(loss(&[3.0, 1.0, 2.0], 0, LossKind::Hinge).unwrap(), 0.0);
        assert_eq!(loss(&[0.0, 0.5], 0, LossKind::Hinge).unwrap(), 1.5);
        assert_eq!(
            loss_grad(&[0.0, 0.5], 0, LossKind::Hinge).unwrap(),
            vec![-1.0, 1.0]
        );
    }

    #[test]
    fn cross_entropy_uniform() {
        for k in 2..6 {
            let l = loss(&vec![0.3; k], 1, LossKind::CrossEntropy).unwrap();
            assert!((l - (k as f64).ln()).abs() < 1e-12);
        }
        let g = loss_grad(&[1.0, 2.0, 0.5], 2, LossKind::CrossEntropy).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn losses_nonnegative() {
        for kind in [LossKind::Hinge, LossKind::CrossEntropy, LossKind::Squared] {
            for z in [[5.0, -3.0], [-1.0, 4.0], [0.0, 0.0]] {
                assert!(loss(&z, 0, kind).unwrap() >= 0.0);
            }
        }
        assert!(loss(&[0.0], 1, LossKind::Hinge).is_err());
    }

    #[test]
    fn penalty_arithmetic() {
        let spec = Spectrum {
            d: 2,
            lambdas: vec![PI * PI, 4.0 * PI * PI],
            bounds: vec![(0.0, 0.0); 2],
            residuals: vec![0.0; 2],
            tol_lambda: 1e-4,
        };
        assert_eq!(spectral_penalty(&spec, 0.0), 0.0);
        let p = spectral_penalty(&spec, 1e-4);
        assert!((p - 2.4674e-3).abs() < 1e-7, "{p}");
    }

    #[test]
    fn scoring() {
        let onehot = vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])];
        assert_eq!(
            score(&onehot, &[0, 1], LossKind::Hinge).unwrap().accuracy,
            1.0
        );
        let constant = vec![Some(vec![1.0, 0.0]); 4];
        assert_eq!(
            score(&constant, &[0, 1, 0, 1], LossKind::Hinge)
                .unwrap()
                .accuracy,
            0.5
        );
        let failed = vec![None, Some(vec![0.0, 1.0])];
        let e = score(&failed, &[0, 1], LossKind::Hinge).unwrap();
        assert_eq!((e.accuracy, e.failures), (0.5, 1));
    }
}
