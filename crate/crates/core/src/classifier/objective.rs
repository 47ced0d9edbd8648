//! Probe objectives and their (sub)gradients.
//!
//! Both objectives are a weighted mean over the batch plus `l2 * ||W||^2`.
//! The bias is never regularised.

use ndarray::{Array1, Array2, ArrayView2};

/// Weights (`C x D`) and bias (`C`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Params {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            w: Array2::zeros((classes, features)),
            b: Array1::zeros(classes),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened view, weights first then bias.
    pub fn to_vec(&self) -> Vec<f64> {
        self.w.iter().chain(self.b.iter()).copied().collect()
    }

    pub fn from_vec(classes: usize, features: usize, v: &[f64]) -> Self {
        let split = classes * features;
        Self {
            w: Array2::from_shape_vec((classes, features), v[..split].to_vec()).expect("shape"),
            b: Array1::from(v[split..].to_vec()),
        }
    }
}

fn weight_of(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

/// Mean hinge loss `max(0, 1 - y (w.x + b))` for `y in {-1, +1}`, using row 0 of `params`.
pub fn hinge_loss_grad(
    params: &Params,
    x: ArrayView2<f64>,
    y: &[f64],
    sample_weights: Option<&[f64]>,
    l2: f64,
) -> (f64, Params) {
    let n = x.nrows() as f64;
    let w = params.w.row(0);
    let mut grad = Params::zeros(1, x.ncols());
    let mut loss = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        let margin = y[i] * (row.dot(&w) + params.b[0]);
        if margin < 1.0 {
            let sw = weight_of(sample_weights, i);
            loss += sw * (1.0 - margin);
            let scale = -sw * y[i] / n;
            grad.w.row_mut(0).scaled_add(scale, &row);
            grad.b[0] += scale;
        }
    }
    loss /= n;
    loss += l2 * w.dot(&w);
    grad.w.scaled_add(2.0 * l2, &params.w);
    (loss, grad)
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy for class indices `y`.
pub fn cross_entropy_loss_grad(
    params: &Params,
    x: ArrayView2<f64>,
    y: &[usize],
    sample_weights: Option<&[f64]>,
    l2: f64,
) -> (f64, Params) {
    let n = x.nrows() as f64;
    let classes = params.w.nrows();
    let mut grad = Params::zeros(classes, x.ncols());
    let mut loss = 0.0;
    let logits = x.dot(&params.w.t()) + &params.b;
    for (i, row) in x.rows().into_iter().enumerate() {
        let z = logits.row(i).to_vec();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let sw = weight_of(sample_weights, i);
        loss += sw * (lse - z[y[i]]);
        for c in 0..classes {
            let p = (z[c] - lse).exp();
            let delta = sw * (p - if c == y[i] { 1.0 } else { 0.0 }) / n;
            grad.w.row_mut(c).scaled_add(delta, &row);
            grad.b[c] += delta;
        }
    }
    loss /= n;
    loss += l2 * params.w.iter().map(|v| v * v).sum::<f64>();
    grad.w.scaled_add(2.0 * l2, &params.w);
    (loss, grad)
}

pub fn l1_penalty(params: &Params, l1: f64) -> f64 {
    l1 * params.w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Proximal operator of `threshold * |w|`.
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}
