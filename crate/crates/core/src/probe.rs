//! Store-level helpers: fit a window probe on some rows, score others.

use crate::classifier::{train, ClassTargets, LinearModel, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::store::{FeatureStore, Label, Modality};
use crate::window::{NormKind, Normalizer, WindowSpec};

/// Trains `cfg.loss` on `rows` of `store` over `window`, with the
/// normalizer fitted on those rows only.
pub fn fit_probe(
    store: &FeatureStore,
    rows: &[usize],
    window: &WindowSpec,
    norm: NormKind,
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    let mut x = store.slice_rows_layers(rows, &window.indices)?;
    let normalizer = Normalizer::fit(norm, &x)?;
    normalizer.apply(&mut x)?;
    let labels: Vec<Label> = rows.iter().map(|&r| store.manifest()[r].label).collect();
    let model = train(&x, &ClassTargets::binary(&labels), cfg)?;
    Ok(model.with_window(window.clone(), normalizer))
}

/// Fake-class scores and ground truth for `rows`.
pub fn score_rows(model: &LinearModel, store: &FeatureStore, rows: &[usize]) -> Result<(Vec<f64>, Vec<Label>)> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows to score".into()));
    }
    let x = model.features(store, rows)?;
    let scores = model.positive_scores(&x)?;
    let truth = rows.iter().map(|&r| store.manifest()[r].label).collect();
    Ok((scores, truth))
}

pub fn evaluate_rows(model: &LinearModel, store: &FeatureStore, rows: &[usize], source: &str) -> Result<EvalReport> {
    let (scores, truth) = score_rows(model, store, rows)?;
    EvalReport::from_scores(source, &truth, &scores, model.config.threshold)
}

/// Headline metric of a store's modality: accuracy for images, EER for audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Headline {
    Accuracy,
    Eer,
}

impl Headline {
    pub fn for_modality(m: Modality) -> Self {
        match m {
            Modality::Image => Headline::Accuracy,
            Modality::Audio => Headline::Eer,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Headline::Accuracy => "acc",
            Headline::Eer => "eer",
        }
    }

    pub fn of(self, report: &EvalReport) -> Result<f64> {
        match self {
            Headline::Accuracy => Ok(report.acc),
            Headline::Eer => report.eer.ok_or(Error::SingleClass),
        }
    }
}
