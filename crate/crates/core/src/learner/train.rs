use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::DatasetSplit;
use super::model::{DslModel, ModelConfig, SolverOptions};
use super::{evaluate, sample_gradient, LossKind};
use crate::error::{DslError, Result};
use crate::fieldline::TraceOptions;
use crate::odeint::{Method, OdeOptions};
use crate::slcore::ShootingOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Spectral penalty coefficient.
    pub alpha: f64,
    pub tol_lambda: f64,
    pub tol_t: f64,
    pub knots: usize,
    pub rtol: f64,
    pub atol: f64,
    pub ode_method: Method,
    pub substeps: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub freeze_knot_positions: bool,
    /// Largest tolerated fraction of failed samples in one batch.
    pub max_failure_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            epochs: 40,
            batch_size: 32,
            alpha: 1e-4,
            tol_lambda: 1e-4,
            tol_t: 1e-4,
            knots: 2000,
            rtol: 1e-6,
            atol: 1e-6,
            ode_method: Method::Dop853,
            substeps: 1,
            loss: LossKind::Hinge,
            seed: 0,
            freeze_knot_positions: false,
            max_failure_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("tol_lambda", self.tol_lambda),
            ("tol_t", self.tol_t),
            ("rtol", self.rtol),
            ("atol", self.atol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DslError::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DslError::InvalidInput(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.substeps == 0 {
            return Err(DslError::InvalidInput(
                "epochs, batch_size and substeps must be positive".into(),
            ));
        }
        if self.knots < 2 {
            return Err(DslError::InvalidInput("knots must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(DslError::InvalidInput(
                "max_failure_rate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            trace: TraceOptions {
                tol_t: self.tol_t,
                ode: OdeOptions {
                    method: self.ode_method,
                    ..OdeOptions::with_tolerances(self.rtol, self.atol)
                },
            },
            shooting: ShootingOptions {
                tol_lambda: self.tol_lambda,
                substeps: self.substeps,
            },
            knots: self.knots,
            freeze_knot_positions: self.freeze_knot_positions,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective (loss plus penalty) over the epoch's successful samples.
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters of the epoch with the best validation accuracy.
    pub model: DslModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Initialize a model from `model_cfg` with the training seed and fit it.
pub fn fit(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train: &DatasetSplit,
    val: &DatasetSplit,
) -> Result<FitResult> {
    let k = train
        .labels
        .iter()
        .chain(&val.labels)
        .copied()
        .max()
        .unwrap_or(0)
        + 1;
    let model = DslModel::new(train.dim(), k.max(2), model_cfg, cfg.seed)?;
    fit_model(cfg, model, train, val, |_| {})
}

/// Minibatch Adam from an initial model; `on_epoch` sees every record.
pub fn fit_model<F>(
    cfg: &TrainConfig,
    mut model: DslModel,
    train: &DatasetSplit,
    val: &DatasetSplit,
    mut on_epoch: F,
) -> Result<FitResult>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    model.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(DslError::InvalidInput(
            "training and validation splits must be nonempty".into(),
        ));
    }
    if train.dim() != model.n || val.dim() != model.n {
        return Err(DslError::ShapeMismatch {
            context: "dataset dimension",
            expected: model.n,
            got: train.dim(),
        });
    }
    if let Some(&bad) = train
        .labels
        .iter()
        .chain(&val.labels)
        .find(|&&y| y >= model.k)
    {
        return Err(DslError::InvalidInput(format!(
            "label {bad} outside the {} model classes",
            model.k
        )));
    }
    let opts = cfg.solver_options();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_0ba7c4e5);
    let mut adam = Adam::new(cfg.lr, model.n_params());
    let mut params = model.to_flat();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut ok_total = 0usize;
        let mut skipped = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, DslModel)>> = batch
                .par_iter()
                .map(|&i| {
                    sample_gradient(
                        &model,
                        &train.features[i],
                        train.labels[i],
                        cfg.loss,
                        cfg.alpha,
                        &opts,
                    )
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            let mut ok = 0usize;
            for r in &results {
                if let Ok((l, g)) = r {
                    loss_sum += l;
                    for (acc, v) in grad.iter_mut().zip(g.params()) {
                        *acc += v;
                    }
                    ok += 1;
                }
            }
            let failed = batch.len() - ok;
            if failed as f64 > cfg.max_failure_rate * batch.len() as f64 {
                return Err(DslError::TrainingAborted {
                    epoch,
                    batch: b,
                    failed,
                    size: batch.len(),
                });
            }
            skipped += failed;
            ok_total += ok;
            if ok == 0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g /= ok as f64);
            adam.step(&mut params, &grad);
            model.set_flat(&params)?;
        }
        let val_eval = evaluate(&model, val, cfg.loss, &opts)?;
        let rec = EpochRecord {
            epoch,
            train_loss: if ok_total > 0 {
                loss_sum / ok_total as f64
            } else {
                f64::NAN
            },
            val_accuracy: val_eval.accuracy,
            skipped,
        };
        on_epoch(&rec);
        if rec.val_accuracy > best.2 {
            best = (model.clone(), epoch, rec.val_accuracy);
        }
        history.push(rec);
    }
    Ok(FitResult {
        model: best.0,
        best_epoch: best.1,
        history,
    })
}
