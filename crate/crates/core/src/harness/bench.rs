use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{LinearModel, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::probe::{evaluate_rows, fit_probe};
use crate::sampling::stratified_sample;
use crate::store::FeatureStore;
use crate::window::{window_indices, NormKind};

/// Default window half-width for image backbones.
pub const DEFAULT_K_IMAGE: usize = 9;
/// Default window half-width for audio backbones.
pub const DEFAULT_K_AUDIO: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub train_store: PathBuf,
    pub eval_stores: Vec<PathBuf>,
    pub k: usize,
    pub norm: NormKind,
    pub train: TrainConfig,
    /// Train on a stratified subset of this many rows (few-shot audio setting).
    pub train_subset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub reports: Vec<EvalReport>,
    pub average: EvalReport,
}

impl BenchResult {
    /// Per-source rows followed by the average row.
    pub fn rows(&self) -> Vec<EvalReport> {
        let mut v = self.reports.clone();
        v.push(self.average.clone());
        v
    }
}

/// Trains once on `train` and evaluates every source group of every eval store.
pub fn run_benchmark_stores(
    train: &FeatureStore,
    evals: &[FeatureStore],
    k: usize,
    norm: NormKind,
    cfg: &TrainConfig,
    train_subset: Option<usize>,
) -> Result<(LinearModel, BenchResult)> {
    if evals.is_empty() {
        return Err(Error::invalid("no eval stores"));
    }
    for (i, e) in evals.iter().enumerate() {
        if e.dims() != train.dims() || e.header().block_layer_count() != train.header().block_layer_count() {
            return Err(Error::Format(format!("eval store {i} is not layer-compatible with the train store")));
        }
    }
    let window = window_indices(train.header().block_layer_count(), k)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let rows = match train_subset {
        Some(n) => stratified_sample(train, &all, n, cfg.seed)?.0,
        None => all,
    };
    let model = fit_probe(train, &rows, &window, norm, cfg)?;
    let jobs: Vec<(usize, String, Vec<usize>)> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.source_groups().into_iter().map(move |g| (i, g.name, g.rows)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|(i, name, rows)| evaluate_rows(&model, &evals[*i], rows, name))
        .collect::<Result<Vec<_>>>()?;
    let average = EvalReport::average("average", &reports)?;
    Ok((model, BenchResult { reports, average }))
}

pub fn run_benchmark(config: &BenchConfig) -> Result<(LinearModel, BenchResult)> {
    let train = FeatureStore::read(&config.train_store)?;
    let evals = config
        .eval_stores
        .iter()
        .map(FeatureStore::read)
        .collect::<Result<Vec<_>>>()?;
    run_benchmark_stores(&train, &evals, config.k, config.norm, &config.train, config.train_subset)
}

/// Evaluates an already trained model on every source group of each store.
pub fn evaluate_model(model: &LinearModel, evals: &[FeatureStore]) -> Result<BenchResult> {
    if evals.is_empty() {
        return Err(Error::invalid("no eval stores"));
    }
    let mut reports = Vec::new();
    for s in evals {
        for g in s.source_groups() {
            reports.push(evaluate_rows(model, s, &g.rows, &g.name)?);
        }
    }
    let average = EvalReport::average("average", &reports)?;
    Ok(BenchResult { reports, average })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
