//! Few-shot source attribution: which generator produced a sample.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_svm, ClassTargets, LinearModel, TrainConfig};
use crate::error::{Error, Result};
use crate::sampling::{rng, split_pool};
use crate::store::FeatureStore;
use crate::window::{window_indices, NormKind, Normalizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionSplit {
    pub sources: Vec<String>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

/// Samples `n_per_source` training rows uniformly from every source; the
/// rest become test rows. Every source must keep at least one test row.
pub fn few_shot_split(store: &FeatureStore, n_per_source: usize, seed: u64) -> Result<AttributionSplit> {
    if n_per_source == 0 {
        return Err(Error::invalid("n_per_source must be positive"));
    }
    let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for rec in store.manifest() {
        by_source.entry(rec.source.as_str()).or_default().push(rec.row);
    }
    let mut rng = rng(seed);
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (source, rows) in &by_source {
        if rows.len() <= n_per_source {
            return Err(Error::InsufficientData(format!(
                "source {source:?} has {} rows, needs more than {n_per_source}",
                rows.len()
            )));
        }
        let (train, test) = split_pool(rows, n_per_source, &mut rng);
        train_rows.extend(train);
        test_rows.extend(test);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(AttributionSplit {
        sources: by_source.keys().map(|s| s.to_string()).collect(),
        train_rows,
        test_rows,
        seed,
    })
}

/// One-vs-rest hinge probes, one per source; prediction is the argmax margin.
pub fn train_attributor(
    x: &Array2<f64>,
    row_sources: &[String],
    sources: &[String],
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    if sources.len() < 2 {
        return Err(Error::InsufficientData("attribution needs at least two sources".into()));
    }
    let targets = ClassTargets::from_names(sources, row_sources)?;
    train_svm(x, &targets, cfg)
}

/// Row-normalised confusion matrix (rows = true source, columns = predicted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub sources: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub percent: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.sources.len()).map(|i| self.percent[i][i]).collect()
    }

    pub fn mean_diagonal(&self) -> f64 {
        let d = self.diagonal();
        d.iter().sum::<f64>() / d.len() as f64
    }

    /// Per-source accuracy as a fraction.
    pub fn per_source_accuracy(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| row[i] as f64 / row.iter().sum::<usize>() as f64)
            .collect()
    }

    /// CSV with one-decimal percentages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for s in &self.sources {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (s, row) in self.sources.iter().zip(&self.percent) {
            out.push_str(s);
            for v in row {
                out.push_str(&format!(",{v:.1}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(pred: &[String], truth: &[String], sources: &[String]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("predictions and truth differ in length"));
    }
    let index = |name: &str, what: &str| {
        sources
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::invalid(format!("unknown {what} source {name:?}")))
    };
    let s = sources.len();
    let mut counts = vec![vec![0usize; s]; s];
    for (p, t) in pred.iter().zip(truth) {
        counts[index(t, "true")?][index(p, "predicted")?] += 1;
    }
    let mut percent = vec![vec![0.0; s]; s];
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            return Err(Error::InsufficientData(format!("no test rows for source {:?}", sources[i])));
        }
        for (j, &c) in row.iter().enumerate() {
            percent[i][j] = 100.0 * c as f64 / total as f64;
        }
    }
    Ok(ConfusionMatrix {
        sources: sources.to_vec(),
        counts,
        percent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub k: usize,
    pub n_per_source: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub mean_diagonal: f64,
    pub confusion: ConfusionMatrix,
}

/// Full protocol: split, fit the window features' normalizer on the
/// training rows, train the one-vs-rest probe, and score the test rows.
pub fn attribute(
    store: &FeatureStore,
    k: usize,
    n_per_source: usize,
    norm: NormKind,
    cfg: &TrainConfig,
) -> Result<AttributionReport> {
    let split = few_shot_split(store, n_per_source, cfg.seed)?;
    let window = window_indices(store.header().block_layer_count(), k)?;
    let x_train = store.slice_rows_layers(&split.train_rows, &window.indices)?;
    let normalizer = Normalizer::fit(norm, &x_train)?;
    let mut x_train = x_train;
    normalizer.apply(&mut x_train)?;
    let source_of = |rows: &[usize]| -> Vec<String> {
        rows.iter().map(|&r| store.manifest()[r].source.clone()).collect()
    };
    let model = train_attributor(&x_train, &source_of(&split.train_rows), &split.sources, cfg)?
        .with_window(window, normalizer);
    let x_test = model.features(store, &split.test_rows)?;
    let pred: Vec<String> = model
        .predict_labels(&x_test)?
        .into_iter()
        .map(|c| split.sources[c].clone())
        .collect();
    let truth = source_of(&split.test_rows);
    let hits = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
    let cm = confusion(&pred, &truth, &split.sources)?;
    Ok(AttributionReport {
        k,
        n_per_source,
        seed: cfg.seed,
        n_train: split.train_rows.len(),
        n_test: split.test_rows.len(),
        accuracy: hits as f64 / truth.len() as f64,
        mean_diagonal: cm.mean_diagonal(),
        confusion: cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions_identity() {
        let src = names(&["a", "b", "c"]);
        let truth = names(&["a", "b", "c", "a"]);
        let cm = confusion(&truth, &truth, &src).unwrap();
        assert_eq!(cm.diagonal(), vec![100.0; 3]);
        assert_eq!(cm.percent[0][1], 0.0);
    }

    #[test]
    fn unknown_prediction_rejected() {
        let src = names(&["a", "b"]);
        assert!(confusion(&names(&["z"]), &names(&["a"]), &src).is_err());
    }

    #[test]
    fn rows_sum_to_hundred() {
        let src = names(&["a", "b", "c"]);
        let truth = names(&["a", "a", "a", "b", "b", "c", "c", "c", "c", "c", "c", "c"]);
        let pred = names(&["a", "b", "c", "b", "a", "c", "c", "a", "b", "c", "c", "c"]);
        let cm = confusion(&pred, &truth, &src).unwrap();
        for row in &cm.percent {
            assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
        let csv = cm.to_csv();
        assert!(csv.starts_with("true\\pred,a,b,c\n"));
        assert!(csv.contains("c,14.3,14.3,71.4"));
    }
}
