use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::objective::softmax;
use super::{Loss, TrainConfig};
use crate::error::{Error, Result};
use crate::store::FeatureStore;
use crate::window::{build_features_rows, Normalizer, WindowSpec};

pub const MODEL_MAGIC: &[u8; 4] = b"LMPM";
pub const MODEL_VERSION: u32 = 1;

/// A trained probe. Binary hinge models carry a single weight row scoring
/// the second class; all other models carry one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    classes: Vec<String>,
    loss: Loss,
    weights: Array2<f32>,
    bias: Vec<f32>,
    pub window: Option<WindowSpec>,
    pub normalizer: Option<Normalizer>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Scores,
    Labels,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// `N x C` scores in `[0, 1]`.
    Scores(Array2<f64>),
    /// Class indices into [`LinearModel::classes`].
    Labels(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    classes: Vec<String>,
    loss: Loss,
    rows: usize,
    features: usize,
    window: Option<WindowSpec>,
    normalizer: Option<Normalizer>,
    config: TrainConfig,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub(crate) fn new(
        classes: Vec<String>,
        loss: Loss,
        weights: Array2<f32>,
        bias: Vec<f32>,
        config: TrainConfig,
    ) -> Self {
        Self {
            classes,
            loss,
            weights,
            bias,
            window: None,
            normalizer: None,
            config,
        }
    }

    /// Builds a model from explicit parameters.
    pub fn from_parts(
        classes: Vec<String>,
        loss: Loss,
        weights: Array2<f32>,
        bias: Vec<f32>,
        config: TrainConfig,
    ) -> Result<Self> {
        let expected_rows = if loss == Loss::Hinge && classes.len() == 2 { 1 } else { classes.len() };
        if classes.len() < 2 || weights.nrows() != expected_rows || bias.len() != expected_rows {
            return Err(Error::invalid(format!(
                "{} classes need {expected_rows} weight rows, got {} (bias {})",
                classes.len(),
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self::new(classes, loss, weights, bias, config))
    }

    pub fn with_window(mut self, window: WindowSpec, normalizer: Normalizer) -> Self {
        self.window = Some(window);
        self.normalizer = Some(normalizer);
        self
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn weights(&self) -> &Array2<f32> {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    fn is_binary_margin(&self) -> bool {
        self.loss == Loss::Hinge && self.weights.nrows() == 1
    }

    /// Raw linear outputs `X W^T + b`.
    pub fn decision_function(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let w = self.weights.mapv(f64::from);
        let b = ndarray::Array1::from_iter(self.bias.iter().map(|&v| f64::from(v)));
        Ok(x.dot(&w.t()) + &b)
    }

    /// Per-class scores in `[0, 1]`: logistic-squashed margins for hinge
    /// models, softmax probabilities otherwise.
    pub fn scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.decision_function(x)?;
        Ok(match self.loss {
            Loss::Hinge if self.is_binary_margin() => {
                let mut out = Array2::zeros((x.nrows(), 2));
                for (i, m) in z.column(0).iter().enumerate() {
                    let p = sigmoid(*m);
                    out[[i, 0]] = 1.0 - p;
                    out[[i, 1]] = p;
                }
                out
            }
            Loss::Hinge => z.mapv(sigmoid),
            Loss::CrossEntropy => {
                let mut out = z.clone();
                for mut row in out.axis_iter_mut(Axis(0)) {
                    let p = softmax(&row.to_vec());
                    row.iter_mut().zip(p).for_each(|(dst, v)| *dst = v);
                }
                out
            }
        })
    }

    /// Score of the positive (second) class for binary models.
    pub fn positive_scores(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if self.classes.len() != 2 {
            return Err(Error::invalid("positive_scores needs a binary model"));
        }
        Ok(self.scores(x)?.column(1).to_vec())
    }

    /// Binary: positive iff score >= threshold (ties go positive).
    /// Multiclass: argmax, lowest index on ties.
    pub fn predict_labels(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let scores = self.scores(x)?;
        if self.classes.len() == 2 {
            return Ok(scores
                .column(1)
                .iter()
                .map(|&p| usize::from(p >= self.config.threshold))
                .collect());
        }
        // Argmax on raw outputs avoids sigmoid saturation ties.
        let z = self.decision_function(x)?;
        Ok(z.axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn predict(&self, x: &Array2<f64>, mode: PredictMode) -> Result<Prediction> {
        Ok(match mode {
            PredictMode::Scores => Prediction::Scores(self.scores(x)?),
            PredictMode::Labels => Prediction::Labels(self.predict_labels(x)?),
        })
    }

    /// Window features for `rows` of `store`, using the model's window and normalizer.
    pub fn features(&self, store: &FeatureStore, rows: &[usize]) -> Result<Array2<f64>> {
        let window = self
            .window
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no layer window attached"))?;
        let (x, _) = build_features_rows(store, rows, window, self.normalizer.as_ref())?;
        Ok(x)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            classes: self.classes.clone(),
            loss: self.loss,
            rows: self.weights.nrows(),
            features: self.weights.ncols(),
            window: self.window.clone(),
            normalizer: self.normalizer.clone(),
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("model header encode: {e}")))?;
        let json_len = u32::try_from(json.len()).map_err(|_| Error::Format("model header too large".into()))?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&json_len.to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Format("not a probe model file".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        let version = u32_at(4);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let json_end = 12 + u32_at(8) as usize;
        if bytes.len() < json_end {
            return Err(Error::Corruption {
                what: "model header",
                expected: (json_end - 12) as u64,
                actual: (bytes.len() - 12) as u64,
            });
        }
        let header: ModelHeader = serde_json::from_slice(&bytes[12..json_end])
            .map_err(|e| Error::Format(format!("model header decode: {e}")))?;
        let n_floats = header.rows * header.features + header.rows;
        let body = &bytes[json_end..];
        if body.len() != n_floats * 4 {
            return Err(Error::Corruption {
                what: "model weights",
                expected: (n_floats * 4) as u64,
                actual: body.len() as u64,
            });
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let split = header.rows * header.features;
        let weights = Array2::from_shape_vec((header.rows, header.features), floats[..split].to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut model = Self::from_parts(header.classes, header.loss, weights, floats[split..].to_vec(), header.config)?;
        model.window = header.window;
        model.normalizer = header.normalizer;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
