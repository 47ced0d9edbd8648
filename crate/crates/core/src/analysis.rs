//! Layer-wise analyses: cluster separability per layer, single-layer probe
//! sweeps, L1 weight mass per layer, and data-driven window size selection.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_l1, ClassTargets, LinearModel, TrainConfig};
use crate::cluster::{kmeans2, KMeansConfig};
use crate::error::{Error, Result};
use crate::metrics::dbi;
use crate::probe::{evaluate_rows, fit_probe, Headline};
use crate::sampling::{derive_seed, fraction_split, per_class_sample};
use crate::store::{FeatureStore, Label, AUG_JPEG50};
use crate::window::{max_k, window_indices, NormKind, Normalizer, WindowSpec};

/// Training regime for the layer analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// 80% of the non-JPEG rows per class.
    Full,
    /// 15 non-JPEG rows per class.
    FewShot,
    /// 15 JPEG-50 rows per class.
    FewShotJpeg,
}

pub const FEW_SHOT_PER_CLASS: usize = 15;
pub const FULL_FRACTION: f64 = 0.8;

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Full => "full",
            Scenario::FewShot => "few-shot",
            Scenario::FewShotJpeg => "few-shot+jpeg",
        }
    }

    /// Rows eligible for this scenario.
    pub fn candidates(self, store: &FeatureStore) -> Vec<usize> {
        match self {
            Scenario::Full | Scenario::FewShot => store.filter_manifest(|r| r.augmentation != AUG_JPEG50),
            Scenario::FewShotJpeg => store.filter_manifest(|r| r.augmentation == AUG_JPEG50),
        }
    }

    /// (train, holdout) rows drawn from [`candidates`](Self::candidates).
    pub fn split(self, store: &FeatureStore, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let pool = self.candidates(store);
        match self {
            Scenario::Full => {
                let (train, rest) = fraction_split(store, &pool, FULL_FRACTION, seed);
                let has_both = |rows: &[usize]| {
                    let fake = rows.iter().filter(|&&r| store.manifest()[r].label.is_fake()).count();
                    fake > 0 && fake < rows.len()
                };
                if !has_both(&train) {
                    return Err(Error::InsufficientData(
                        "full scenario needs both labels among non-JPEG rows".into(),
                    ));
                }
                Ok((train, rest))
            }
            Scenario::FewShot | Scenario::FewShotJpeg => {
                per_class_sample(store, &pool, FEW_SHOT_PER_CLASS, seed)
            }
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scenario::Full),
            "few-shot" | "fewshot" => Ok(Scenario::FewShot),
            "few-shot+jpeg" | "few-shot-jpeg" | "fewshot-jpeg" => Ok(Scenario::FewShotJpeg),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerValue {
    pub layer: usize,
    /// `None` marks a layer the metric could not be computed for.
    pub value: Option<f64>,
}

/// One scalar per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub metric: String,
    pub scenario: String,
    pub values: Vec<LayerValue>,
}

impl LayerProfile {
    pub fn get(&self, layer: usize) -> Option<f64> {
        self.values.iter().find(|v| v.layer == layer).and_then(|v| v.value)
    }

    /// Layer of the largest present value (lowest layer on ties).
    pub fn argmax(&self) -> Option<usize> {
        self.values
            .iter()
            .filter_map(|v| v.value.map(|x| (v.layer, x)))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|b| b.0)
    }

    pub fn argmin(&self) -> Option<usize> {
        self.values
            .iter()
            .filter_map(|v| v.value.map(|x| (v.layer, x)))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|b| b.0)
    }
}

fn block_layers(store: &FeatureStore) -> Vec<usize> {
    (1..=store.header().block_layer_count()).collect()
}

fn mean_present(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = vals.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// k-means (k = 2) then DBI on one layer's features. `None` when the layer
/// cannot be clustered (identical features, coincident centroids).
pub fn layer_dbi(x: &Array2<f64>, cfg: &KMeansConfig) -> Result<Option<f64>> {
    let km = match kmeans2(x, cfg) {
        Ok(km) => km,
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    match dbi(x, &km.assignment) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per block layer: 2-means DBI on the scenario's training rows of each
/// source group, averaged over groups.
pub fn dbi_profile(store: &FeatureStore, scenario: Scenario, seed: u64, kmeans: &KMeansConfig) -> Result<LayerProfile> {
    let (rows, _) = scenario.split(store, seed)?;
    let selected: std::collections::BTreeSet<usize> = rows.iter().copied().collect();
    let groups: Vec<Vec<usize>> = store
        .source_groups()
        .into_iter()
        .map(|g| g.rows.into_iter().filter(|r| selected.contains(r)).collect::<Vec<_>>())
        .filter(|rows| rows.len() >= 2)
        .collect();
    if groups.is_empty() {
        return Err(Error::InsufficientData("no source group with at least 2 rows".into()));
    }
    let values = block_layers(store)
        .into_par_iter()
        .map(|layer| -> Result<LayerValue> {
            let per_group = groups
                .iter()
                .map(|rows| layer_dbi(&store.slice_rows_layers(rows, &[layer])?, kmeans))
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerValue {
                layer,
                value: mean_present(per_group.into_iter()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerProfile {
        metric: "dbi".into(),
        scenario: scenario.name().into(),
        values,
    })
}

/// Per block layer: train a probe on that layer alone and evaluate it.
///
/// Evaluation uses every row of each store in `eval_stores`, or the
/// scenario's holdout rows of `train_store` when none are given. The value
/// is the mean over evaluation sets of accuracy (image stores) or EER
/// (audio stores).
pub fn per_layer_sweep(
    train_store: &FeatureStore,
    eval_stores: &[FeatureStore],
    cfg: &TrainConfig,
    scenario: Scenario,
    norm: NormKind,
) -> Result<LayerProfile> {
    let (train_rows, holdout) = scenario.split(train_store, cfg.seed)?;
    for s in eval_stores {
        if s.dims() != train_store.dims() {
            return Err(Error::Format("eval store layer dims differ from train store".into()));
        }
    }
    let headline = Headline::for_modality(train_store.header().modality);
    let eval_sets: Vec<(&FeatureStore, Vec<usize>)> = if eval_stores.is_empty() {
        if holdout.is_empty() {
            return Err(Error::InsufficientData("no holdout rows to evaluate on".into()));
        }
        vec![(train_store, holdout)]
    } else {
        eval_stores.iter().map(|s| (s, (0..s.len()).collect())).collect()
    };
    let l_count = train_store.header().block_layer_count();
    let values = block_layers(train_store)
        .into_par_iter()
        .map(|layer| -> Result<LayerValue> {
            let window = WindowSpec::explicit(l_count, vec![layer])?;
            let model = fit_probe(train_store, &train_rows, &window, norm, cfg)?;
            let scores = eval_sets
                .iter()
                .map(|(store, rows)| headline.of(&evaluate_rows(&model, store, rows, "")?))
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerValue {
                layer,
                value: Some(scores.iter().sum::<f64>() / scores.len() as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerProfile {
        metric: headline.name().into(),
        scenario: scenario.name().into(),
        values,
    })
}

/// Trains the L1-regularised softmax probe on the all-layer concatenation.
pub fn train_l1_probe(store: &FeatureStore, rows: &[usize], norm: NormKind, cfg: &TrainConfig) -> Result<LinearModel> {
    let window = WindowSpec::all_layers(store.header().block_layer_count())?;
    let mut x = store.slice_rows_layers(rows, &window.indices)?;
    let normalizer = Normalizer::fit(norm, &x)?;
    normalizer.apply(&mut x)?;
    let labels: Vec<Label> = rows.iter().map(|&r| store.manifest()[r].label).collect();
    Ok(train_l1(&x, &ClassTargets::binary(&labels), cfg)?.with_window(window, normalizer))
}

/// Share of total `|w|` falling in each layer's block. `dims` are the
/// store's per-layer widths; the model's window selects which apply.
pub fn l1_weight_mass(model: &LinearModel, dims: &[usize]) -> Result<LayerProfile> {
    let window = model
        .window
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no layer window"))?;
    let widths: Vec<usize> = window
        .indices
        .iter()
        .map(|&l| dims.get(l - 1).copied().ok_or(Error::LayerOutOfRange { layer: l, layer_count: dims.len() }))
        .collect::<Result<_>>()?;
    if widths.iter().sum::<usize>() != model.n_features() {
        return Err(Error::invalid(format!(
            "window covers {} features, model has {}",
            widths.iter().sum::<usize>(),
            model.n_features()
        )));
    }
    let w = model.weights();
    let mut mass = Vec::with_capacity(widths.len());
    let mut start = 0;
    for width in &widths {
        let block: f64 = w
            .columns()
            .into_iter()
            .skip(start)
            .take(*width)
            .flat_map(|c| c.into_iter().map(|v| f64::from(v.abs())).collect::<Vec<_>>())
            .sum();
        mass.push(block);
        start += width;
    }
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("fully sparse model".into()));
    }
    Ok(LayerProfile {
        metric: "l1_mass".into(),
        scenario: "all-layers".into(),
        values: window
            .indices
            .iter()
            .zip(mass)
            .map(|(&layer, m)| LayerValue {
                layer,
                value: Some(m / total),
            })
            .collect(),
    })
}

pub const DEFAULT_K_CANDIDATES: [usize; 6] = [0, 3, 5, 7, 9, 10];

/// Default candidate list for `layer_count` layers: the fixed values that
/// fit, plus the maximum window.
pub fn default_k_candidates(layer_count: usize) -> Vec<usize> {
    let max = max_k(layer_count);
    let mut ks: Vec<usize> = DEFAULT_K_CANDIDATES.iter().copied().filter(|&k| k <= max).collect();
    if ks.last() != Some(&max) {
        ks.push(max);
    }
    ks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub mean_acc: f64,
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub chosen: usize,
    pub scores: Vec<KScore>,
}

/// Chooses the window half-width by training on `n_train` rows (half per
/// class) of `train_store` and validating on the JPEG-50 rows of
/// `validation`, averaging accuracy over `n_seeds` draws. Ties go to the
/// smaller `k`.
pub fn select_k(
    train_store: &FeatureStore,
    validation: &FeatureStore,
    candidates: &[usize],
    cfg: &TrainConfig,
    n_train: usize,
    n_seeds: usize,
    norm: NormKind,
) -> Result<KSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty k candidate list"));
    }
    if n_seeds == 0 || n_train < 2 {
        return Err(Error::invalid("need n_seeds >= 1 and n_train >= 2"));
    }
    if validation.dims() != train_store.dims() {
        return Err(Error::Format("validation store layer dims differ from train store".into()));
    }
    let val_rows = validation.filter_manifest(|r| r.augmentation == AUG_JPEG50);
    if val_rows.is_empty() {
        return Err(Error::InsufficientData("validation store has no jpeg50 rows".into()));
    }
    let l_count = train_store.header().block_layer_count();
    let windows = candidates
        .iter()
        .map(|&k| window_indices(l_count, k))
        .collect::<Result<Vec<_>>>()?;
    let pool: Vec<usize> = (0..train_store.len()).collect();
    let runs = (0..n_seeds)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let seed = derive_seed(cfg.seed, s as u64);
            let (train_rows, _) = per_class_sample(train_store, &pool, n_train / 2, seed)?;
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            windows
                .iter()
                .map(|w| {
                    let model = fit_probe(train_store, &train_rows, w, norm, &run_cfg)?;
                    Ok(evaluate_rows(&model, validation, &val_rows, "")?.acc)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<KScore> = candidates
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let r: Vec<f64> = runs.iter().map(|run| run[i]).collect();
            KScore {
                k,
                mean_acc: r.iter().sum::<f64>() / r.len() as f64,
                runs: r,
            }
        })
        .collect();
    let chosen = pick_k(&scores);
    Ok(KSelection { chosen, scores })
}

/// Highest mean accuracy; ties resolve to the smallest k.
pub fn pick_k(scores: &[KScore]) -> usize {
    scores
        .iter()
        .fold(None::<&KScore>, |best, cur| match best {
            Some(b) if b.mean_acc > cur.mean_acc || (b.mean_acc == cur.mean_acc && b.k <= cur.k) => Some(b),
            _ => Some(cur),
        })
        .map(|s| s.k)
        .expect("non-empty")
}
