//! Linear probes: hinge-loss SVM (one-vs-rest for more than two classes),
//! softmax regression, and an L1-regularised softmax variant trained with
//! proximal updates. All are fitted by shuffled mini-batch SGD.

pub mod objective;
mod model;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Label;

pub use model::{LinearModel, PredictMode, Prediction, MODEL_MAGIC, MODEL_VERSION};
use objective::{cross_entropy_loss_grad, hinge_loss_grad, l1_penalty, soft_threshold, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Hinge,
    CrossEntropy,
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" | "hinge" => Ok(Loss::Hinge),
            "mlp" | "cross_entropy" | "ce" => Ok(Loss::CrossEntropy),
            other => Err(Error::invalid(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub l2_lambda: f64,
    pub l1_lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Weight samples by inverse class frequency.
    #[serde(default)]
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Hinge,
            l2_lambda: 1e-4,
            l1_lambda: 0.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 1,
            seed: 0,
            threshold: 0.5,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, v) in [("l2_lambda", self.l2_lambda), ("l1_lambda", self.l1_lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Class-index targets with their names. Binary detection uses `["real", "fake"]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTargets {
    pub names: Vec<String>,
    pub index: Vec<usize>,
}

impl ClassTargets {
    pub fn binary(labels: &[Label]) -> Self {
        Self {
            names: vec![Label::Real.as_str().into(), Label::Fake.as_str().into()],
            index: labels.iter().map(|l| usize::from(l.is_fake())).collect(),
        }
    }

    /// Targets from per-row names against a fixed, ordered class list.
    pub fn from_names(classes: &[String], per_row: &[String]) -> Result<Self> {
        let index = per_row
            .iter()
            .map(|n| {
                classes
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::invalid(format!("unknown class {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: classes.to_vec(),
            index,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &i in &self.index {
            c[i] += 1;
        }
        c
    }

    fn sample_weights(&self) -> Vec<f64> {
        let counts = self.counts();
        let n = self.index.len() as f64;
        let k = self.n_classes() as f64;
        self.index.iter().map(|&i| n / (k * counts[i] as f64)).collect()
    }
}

fn check_inputs(x: &Array2<f64>, targets: &ClassTargets) -> Result<()> {
    if x.nrows() != targets.index.len() {
        return Err(Error::DimensionMismatch {
            row: x.nrows().min(targets.index.len()),
            detail: format!("{} feature rows, {} labels", x.nrows(), targets.index.len()),
        });
    }
    if targets.n_classes() < 2 || targets.counts().contains(&0) {
        return Err(Error::SingleClass);
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / x.ncols(),
            col: pos % x.ncols(),
        });
    }
    Ok(())
}

enum Objective<'a> {
    Hinge(&'a [f64]),
    CrossEntropy(&'a [usize]),
}

struct Sgd<'a> {
    x: &'a Array2<f64>,
    objective: Objective<'a>,
    sample_weights: Option<Vec<f64>>,
    cfg: &'a TrainConfig,
}

impl Sgd<'_> {
    fn smooth_loss_grad(&self, params: &Params, x: ArrayView2<f64>, rows: Option<&[usize]>) -> (f64, Params) {
        let sw_all = self.sample_weights.as_deref();
        let pick_f = |v: &[f64]| -> Vec<f64> {
            rows.map_or_else(|| v.to_vec(), |r| r.iter().map(|&i| v[i]).collect())
        };
        let sw = sw_all.map(pick_f);
        match self.objective {
            Objective::Hinge(y) => {
                let y = pick_f(y);
                hinge_loss_grad(params, x, &y, sw.as_deref(), self.cfg.l2_lambda)
            }
            Objective::CrossEntropy(y) => {
                let y: Vec<usize> = rows.map_or_else(|| y.to_vec(), |r| r.iter().map(|&i| y[i]).collect());
                cross_entropy_loss_grad(params, x, &y, sw.as_deref(), self.cfg.l2_lambda)
            }
        }
    }

    /// Full objective including the L1 term.
    fn objective(&self, params: &Params) -> f64 {
        self.smooth_loss_grad(params, self.x.view(), None).0 + l1_penalty(params, self.cfg.l1_lambda)
    }

    fn run(&self, classes: usize, seed: u64, mut trace: Option<&mut Vec<f64>>) -> Params {
        let n = self.x.nrows();
        let d = self.x.ncols();
        let mut params = Params::zeros(classes, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        let lr = self.cfg.learning_rate;
        let shrink = lr * self.cfg.l1_lambda;
        let mut batch = Array2::<f64>::zeros((0, d));
        if let Some(t) = trace.as_deref_mut() {
            t.push(self.objective(&params));
        }
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut rng);
            for rows in order.chunks(self.cfg.batch_size) {
                if batch.nrows() != rows.len() {
                    batch = Array2::zeros((rows.len(), d));
                }
                for (dst, &src) in rows.iter().enumerate() {
                    batch.row_mut(dst).assign(&self.x.row(src));
                }
                let (_, grad) = self.smooth_loss_grad(&params, batch.view(), Some(rows));
                params.w.scaled_add(-lr, &grad.w);
                params.b.scaled_add(-lr, &grad.b);
                if shrink > 0.0 {
                    params.w.mapv_inplace(|v| soft_threshold(v, shrink));
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(&params));
                }
            }
        }
        params
    }
}

fn fit_params(
    x: &Array2<f64>,
    targets: &ClassTargets,
    cfg: &TrainConfig,
    trace: Option<&mut Vec<f64>>,
) -> Result<Params> {
    cfg.validate()?;
    check_inputs(x, targets)?;
    let sample_weights = cfg.class_weighting.then(|| targets.sample_weights());
    match cfg.loss {
        Loss::CrossEntropy => {
            let sgd = Sgd {
                x,
                objective: Objective::CrossEntropy(&targets.index),
                sample_weights,
                cfg,
            };
            Ok(sgd.run(targets.n_classes(), cfg.seed, trace))
        }
        Loss::Hinge if targets.n_classes() == 2 => {
            let y: Vec<f64> = targets.index.iter().map(|&i| if i == 1 { 1.0 } else { -1.0 }).collect();
            let sgd = Sgd {
                x,
                objective: Objective::Hinge(&y),
                sample_weights,
                cfg,
            };
            Ok(sgd.run(1, cfg.seed, trace))
        }
        Loss::Hinge => {
            // One-vs-rest; each problem is independent.
            let rows: Vec<Params> = (0..targets.n_classes())
                .into_par_iter()
                .map(|c| {
                    let y: Vec<f64> = targets.index.iter().map(|&i| if i == c { 1.0 } else { -1.0 }).collect();
                    let sw = cfg.class_weighting.then(|| {
                        let pos = y.iter().filter(|&&v| v > 0.0).count() as f64;
                        let n = y.len() as f64;
                        y.iter().map(|&v| if v > 0.0 { n / (2.0 * pos) } else { n / (2.0 * (n - pos)) }).collect()
                    });
                    let sgd = Sgd {
                        x,
                        objective: Objective::Hinge(&y),
                        sample_weights: sw,
                        cfg,
                    };
                    sgd.run(1, cfg.seed.wrapping_add(c as u64), None)
                })
                .collect();
            let mut params = Params::zeros(rows.len(), x.ncols());
            for (c, p) in rows.into_iter().enumerate() {
                params.w.row_mut(c).assign(&p.w.row(0));
                params.b[c] = p.b[0];
            }
            Ok(params)
        }
    }
}

fn finish(params: Params, targets: &ClassTargets, cfg: &TrainConfig) -> Result<LinearModel> {
    if params.w.iter().chain(params.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("training diverged to non-finite parameters".into()));
    }
    Ok(LinearModel::new(
        targets.names.clone(),
        cfg.loss,
        params.w.mapv(|v| v as f32),
        params.b.iter().map(|&v| v as f32).collect(),
        cfg.clone(),
    ))
}

/// Trains with `cfg.loss` as given.
pub fn train(x: &Array2<f64>, targets: &ClassTargets, cfg: &TrainConfig) -> Result<LinearModel> {
    let params = fit_params(x, targets, cfg, None)?;
    finish(params, targets, cfg)
}

/// Trains and records the full objective before the first and after every update.
pub fn train_with_trace(
    x: &Array2<f64>,
    targets: &ClassTargets,
    cfg: &TrainConfig,
) -> Result<(LinearModel, Vec<f64>)> {
    let mut trace = Vec::new();
    let params = fit_params(x, targets, cfg, Some(&mut trace))?;
    Ok((finish(params, targets, cfg)?, trace))
}

pub fn train_svm(x: &Array2<f64>, targets: &ClassTargets, cfg: &TrainConfig) -> Result<LinearModel> {
    let cfg = TrainConfig {
        loss: Loss::Hinge,
        ..cfg.clone()
    };
    train(x, targets, &cfg)
}

pub fn train_mlp(x: &Array2<f64>, targets: &ClassTargets, cfg: &TrainConfig) -> Result<LinearModel> {
    let cfg = TrainConfig {
        loss: Loss::CrossEntropy,
        ..cfg.clone()
    };
    train(x, targets, &cfg)
}

/// Softmax probe with an L1 penalty applied by soft-thresholding after each step.
pub fn train_l1(x: &Array2<f64>, targets: &ClassTargets, cfg: &TrainConfig) -> Result<LinearModel> {
    if cfg.l1_lambda.is_nan() || cfg.l1_lambda <= 0.0 {
        return Err(Error::invalid(format!(
            "l1_lambda must be positive, got {}",
            cfg.l1_lambda
        )));
    }
    train_mlp(x, targets, cfg)
}
