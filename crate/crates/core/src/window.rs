//! Symmetric middle-layer windows and probe feature construction.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{FeatureStore, Label};

const STD_EPSILON: f64 = 1e-8;

/// The `2k + 1` block layers centred on the middle layer, clipped to `[1, L]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub layer_count: usize,
    pub k: usize,
    pub indices: Vec<usize>,
}

/// 1-based middle layer: `L/2` for even depth, `(L+1)/2` for odd depth.
pub fn middle_layer(layer_count: usize) -> usize {
    layer_count.div_ceil(2)
}

pub fn max_k(layer_count: usize) -> usize {
    layer_count / 2
}

pub fn window_indices(layer_count: usize, k: usize) -> Result<WindowSpec> {
    if layer_count == 0 || k > max_k(layer_count) {
        return Err(Error::InvalidWindow {
            k,
            layer_count,
            max: max_k(layer_count),
        });
    }
    let mid = middle_layer(layer_count);
    let lo = mid.saturating_sub(k).max(1);
    let hi = (mid + k).min(layer_count);
    Ok(WindowSpec {
        layer_count,
        k,
        indices: (lo..=hi).collect(),
    })
}

impl WindowSpec {
    pub fn mid(&self) -> usize {
        middle_layer(self.layer_count)
    }

    /// Full-depth window, `k = floor(L/2)`.
    pub fn all_layers(layer_count: usize) -> Result<WindowSpec> {
        window_indices(layer_count, max_k(layer_count))
    }

    /// A window over explicitly chosen layers (e.g. a single layer sweep or a pseudo-layer).
    pub fn explicit(layer_count: usize, indices: Vec<usize>) -> Result<WindowSpec> {
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("explicit layer list must be non-empty and ascending"));
        }
        Ok(WindowSpec {
            layer_count,
            k: 0,
            indices,
        })
    }

    pub fn feature_width(&self, store: &FeatureStore) -> usize {
        self.indices.iter().map(|&l| store.dims()[l - 1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    ZScore,
    L2,
    Identity,
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" | "z_score" => Ok(NormKind::ZScore),
            "l2" => Ok(NormKind::L2),
            "none" | "identity" => Ok(NormKind::Identity),
            other => Err(Error::invalid(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Per-column standardisation fitted on training rows, or a stateless
/// row-wise L2 / identity transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: NormKind,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_normalizer(train: &Array2<f64>) -> Result<Normalizer> {
    if train.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalizer needs at least 2 rows, got {}",
            train.nrows()
        )));
    }
    let mean: Array1<f64> = train.mean_axis(Axis(0)).expect("non-empty");
    let std = train
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s < STD_EPSILON { 1.0 } else { s });
    Ok(Normalizer {
        kind: NormKind::ZScore,
        mean: mean.to_vec(),
        std: std.to_vec(),
    })
}

impl Normalizer {
    pub fn fit(kind: NormKind, train: &Array2<f64>) -> Result<Normalizer> {
        match kind {
            NormKind::ZScore => fit_normalizer(train),
            NormKind::L2 | NormKind::Identity => Ok(Normalizer {
                kind,
                mean: Vec::new(),
                std: Vec::new(),
            }),
        }
    }

    pub fn apply(&self, x: &mut Array2<f64>) -> Result<()> {
        match self.kind {
            NormKind::ZScore => {
                if x.ncols() != self.mean.len() {
                    return Err(Error::invalid(format!(
                        "normalizer fitted on {} columns, got {}",
                        self.mean.len(),
                        x.ncols()
                    )));
                }
                for mut row in x.rows_mut() {
                    for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                        *v = (*v - m) / s;
                    }
                }
            }
            NormKind::L2 => {
                for mut row in x.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    if norm > STD_EPSILON {
                        row.mapv_inplace(|v| v / norm);
                    }
                }
            }
            NormKind::Identity => {}
        }
        Ok(())
    }
}

/// Window features for `rows` of `store`, normalized when `normalizer` is given.
/// Labels are taken from the manifest.
pub fn build_features_rows(
    store: &FeatureStore,
    rows: &[usize],
    spec: &WindowSpec,
    normalizer: Option<&Normalizer>,
) -> Result<(Array2<f64>, Vec<Label>)> {
    let block_layers = store.header().block_layer_count();
    if spec.layer_count != block_layers {
        return Err(Error::invalid(format!(
            "window built for {} layers, store has {block_layers}",
            spec.layer_count
        )));
    }
    let mut x = store.slice_rows_layers(rows, &spec.indices)?;
    if let Some(n) = normalizer {
        n.apply(&mut x)?;
    }
    let labels = rows.iter().map(|&r| store.manifest()[r].label).collect();
    Ok((x, labels))
}

pub fn build_features(
    store: &FeatureStore,
    spec: &WindowSpec,
    normalizer: Option<&Normalizer>,
) -> Result<(Array2<f64>, Vec<Label>)> {
    let rows: Vec<usize> = (0..store.len()).collect();
    build_features_rows(store, &rows, spec, normalizer)
}
