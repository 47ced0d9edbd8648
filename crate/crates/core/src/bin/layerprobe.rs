use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use layerprobe::analysis::{
    dbi_profile, default_k_candidates, l1_weight_mass, per_layer_sweep, select_k, train_l1_probe, LayerProfile,
    Scenario,
};
use layerprobe::attribution::attribute;
use layerprobe::classifier::{LinearModel, Loss, TrainConfig};
use layerprobe::cluster::{cluster_detect_by_source, ClusterConfig, ClusterVerdict, KMeansConfig, Reducer};
use layerprobe::harness::bench::{DEFAULT_K_AUDIO, DEFAULT_K_IMAGE};
use layerprobe::harness::report::{emit_report, profile_from_csv, reports_from_csv, reports_to_csv};
use layerprobe::harness::{evaluate_model, gen_synthetic_store, profile, run_benchmark_stores, BenchResult, SyntheticSpec};
use layerprobe::metrics::EvalReport;
use layerprobe::sampling::derive_seed;
use layerprobe::store::{FeatureStore, Modality};
use layerprobe::window::{max_k, NormKind};
use layerprobe::Error;

#[derive(Parser)]
#[command(name = "layerprobe", version, about = "Layer-window linear probes for synthetic media detection")]
struct Cli {
    /// TOML file with default values for any flag; flags on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a window probe and save it.
    Train(TrainCmd),
    /// Evaluate a saved model (or train one) on every source of the eval stores.
    Eval(EvalCmd),
    /// Single-layer probe accuracy (or EER) for every layer.
    SweepLayers(SweepCmd),
    /// Davies-Bouldin index of 2-means clusters for every layer.
    DbiProfile(DbiCmd),
    /// Per-layer share of L1-regularized probe weight mass.
    L1Mass(L1Cmd),
    /// Choose the window half-width k on a validation store.
    SelectK(SelectKCmd),
    /// Clustering-based detection with a probe-driven majority vote.
    ClusterDetect(ClusterCmd),
    /// Few-shot source attribution with a confusion matrix.
    Attribute(AttributeCmd),
    /// Write a synthetic store with a chosen per-layer separation profile.
    GenSynthetic(SynthCmd),
    /// Render CSV tables and SVG charts from profile and report CSVs.
    Report(ReportCmd),
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Classifier {
    Svm,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum NormArg {
    Zscore,
    L2,
    Identity,
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Zscore => NormKind::ZScore,
            NormArg::L2 => NormKind::L2,
            NormArg::Identity => NormKind::Identity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScenarioArg {
    Full,
    FewShot,
    FewShotJpeg,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Full => Scenario::Full,
            ScenarioArg::FewShot => Scenario::FewShot,
            ScenarioArg::FewShotJpeg => Scenario::FewShotJpeg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ProfileArg {
    MiddlePeak,
    Band,
    Flat,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModalityArg {
    Image,
    Audio,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ReducerArg {
    Pca,
    None,
}

/// Values a `--config` file may provide. Keys mirror the long flag names
/// with dashes replaced by underscores.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    store: Option<PathBuf>,
    train_store: Option<PathBuf>,
    eval_store: Option<Vec<PathBuf>>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    k: Option<usize>,
    classifier: Option<Classifier>,
    seed: Option<u64>,
    epochs: Option<usize>,
    threshold: Option<f64>,
    lr: Option<f64>,
    l2: Option<f64>,
    l1: Option<f64>,
    batch_size: Option<usize>,
    norm: Option<NormArg>,
    scenario: Option<ScenarioArg>,
    train_subset: Option<usize>,
    reduce_dim: Option<usize>,
    reducer: Option<ReducerArg>,
    kmeans_inits: Option<usize>,
    kmeans_max_iter: Option<usize>,
    n_per_source: Option<usize>,
    candidates: Option<Vec<usize>>,
    n_train: Option<usize>,
    n_seeds: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, value_enum)]
    classifier: Option<Classifier>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty.
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    train_store: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Train on a label-ratio preserving subset of this many rows.
    #[arg(long)]
    train_subset: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct EvalCmd {
    /// Saved model; without it a probe is trained on --train-store.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    train_store: Option<PathBuf>,
    #[arg(long)]
    eval_store: Vec<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    train_subset: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long)]
    train_store: Option<PathBuf>,
    /// Evaluate on these stores instead of the held-out split.
    #[arg(long)]
    eval_store: Vec<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct DbiCmd {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kmeans_inits: Option<usize>,
    #[arg(long)]
    kmeans_max_iter: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct L1Cmd {
    #[arg(long)]
    store: Option<PathBuf>,
    /// L1 penalty.
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SelectKCmd {
    #[arg(long)]
    train_store: Option<PathBuf>,
    /// Validation store; its jpeg50 rows are scored.
    #[arg(long)]
    eval_store: Vec<PathBuf>,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct ClusterCmd {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    reduce_dim: Option<usize>,
    #[arg(long, value_enum)]
    reducer: Option<ReducerArg>,
    #[arg(long)]
    kmeans_inits: Option<usize>,
    #[arg(long)]
    kmeans_max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttributeCmd {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_per_source: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long, default_value_t = 24)]
    layers: usize,
    /// Width of every layer.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, value_enum, default_value_t = ProfileArg::MiddlePeak)]
    profile: ProfileArg,
    /// Peak (or band/flat) separation.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Middle-peak triangle half-width in layers.
    #[arg(long, default_value_t = 6.0)]
    half_width: f64,
    /// Band radius around the middle layer.
    #[arg(long, default_value_t = 9)]
    band_radius: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds the per-layer class directions.
    #[arg(long, default_value_t = 0)]
    geometry_seed: u64,
    /// Fake source name; repeat for several sources with distinct geometry.
    #[arg(long)]
    fake_source: Vec<String>,
    #[arg(long, default_value = "synthetic-real")]
    real_source: String,
    /// Name each source's real rows after the source itself.
    #[arg(long)]
    paired_reals: bool,
    #[arg(long, default_value = "none")]
    augmentation: String,
    #[arg(long, value_enum, default_value_t = ModalityArg::Image)]
    modality: ModalityArg,
    /// Store file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    /// Layer profile CSV (repeatable).
    #[arg(long)]
    profile: Vec<PathBuf>,
    /// Evaluation report CSV (repeatable).
    #[arg(long)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidWindow { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> CliResult<T> {
    flag.or(file).ok_or_else(|| Failure::Usage(format!("missing required --{name}")))
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_fail(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_fail(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn train_config(flags: &TrainFlags, file: &FileConfig) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let loss = match flags.classifier.or(file.classifier) {
        Some(Classifier::Mlp) => Loss::CrossEntropy,
        Some(Classifier::Svm) | None => Loss::Hinge,
    };
    let cfg = TrainConfig {
        loss,
        l2_lambda: flags.l2.or(file.l2).unwrap_or(d.l2_lambda),
        l1_lambda: file.l1.unwrap_or(d.l1_lambda),
        learning_rate: flags.lr.or(file.lr).unwrap_or(d.learning_rate),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        epochs: flags.epochs.or(file.epochs).unwrap_or(d.epochs),
        seed: flags.seed.or(file.seed).unwrap_or(d.seed),
        threshold: flags.threshold.or(file.threshold).unwrap_or(d.threshold),
        class_weighting: d.class_weighting,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn norm(flags: &TrainFlags, file: &FileConfig) -> NormKind {
    flags.norm.or(file.norm).map(NormKind::from).unwrap_or_default()
}

fn default_k(store: &FeatureStore) -> usize {
    let k = match store.header().modality {
        Modality::Image => DEFAULT_K_IMAGE,
        Modality::Audio => DEFAULT_K_AUDIO,
    };
    k.min(max_k(store.header().block_layer_count()))
}

fn read_store(path: &Path) -> CliResult<FeatureStore> {
    Ok(FeatureStore::read(path)?)
}

fn read_stores(paths: &[PathBuf]) -> CliResult<Vec<FeatureStore>> {
    paths.iter().map(|p| read_store(p)).collect()
}

fn eval_paths(flag: &[PathBuf], file: &FileConfig) -> Vec<PathBuf> {
    if flag.is_empty() {
        file.eval_store.clone().unwrap_or_default()
    } else {
        flag.to_vec()
    }
}

fn write_profile(profile: &LayerProfile, out: &Path) -> CliResult<()> {
    emit_report(std::slice::from_ref(profile), &[], out)?;
    for v in &profile.values {
        let value = v.value.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!("layer {:>3}  {} {value}", v.layer, profile.metric);
    }
    Ok(())
}

fn write_bench(result: &BenchResult, out: &Path) -> CliResult<()> {
    let rows = result.rows();
    write_bytes(&out.join("reports.csv"), reports_to_csv(&rows)?.as_bytes())?;
    write_json(&out.join("reports.json"), &rows)?;
    for r in &rows {
        println!("{:<24} n={:<6} acc={:.4} eer={}", r.source, r.n, r.acc, fmt_opt(r.eer));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn cmd_train(c: TrainCmd, file: &FileConfig) -> CliResult<()> {
    let cfg = train_config(&c.train, file)?;
    let store = read_store(&required(c.train_store, file.train_store.clone(), "train-store")?)?;
    let out = required(c.out, file.out.clone(), "out")?;
    let k = c.k.or(file.k).unwrap_or_else(|| default_k(&store));
    let window = layerprobe::window::window_indices(store.header().block_layer_count(), k)?;
    let all: Vec<usize> = (0..store.len()).collect();
    let rows = match c.train_subset.or(file.train_subset) {
        Some(n) => layerprobe::sampling::stratified_sample(&store, &all, n, cfg.seed)?.0,
        None => all,
    };
    let model = layerprobe::probe::fit_probe(&store, &rows, &window, norm(&c.train, file), &cfg)?;
    model.save(&out)?;
    println!("trained on {} rows, window {:?}, {} features", rows.len(), window.indices, model.n_features());
    Ok(())
}

fn cmd_eval(c: EvalCmd, file: &FileConfig) -> CliResult<()> {
    let out = required(c.out, file.out.clone(), "out")?;
    let evals = read_stores(&eval_paths(&c.eval_store, file))?;
    if evals.is_empty() {
        return Err(Failure::Usage("missing required --eval-store".into()));
    }
    let result = match c.model.or(file.model.clone()) {
        Some(path) => evaluate_model(&LinearModel::load(&path)?, &evals)?,
        None => {
            let cfg = train_config(&c.train, file)?;
            let train = read_store(&required(c.train_store, file.train_store.clone(), "train-store or --model")?)?;
            let k = c.k.or(file.k).unwrap_or_else(|| default_k(&train));
            run_benchmark_stores(&train, &evals, k, norm(&c.train, file), &cfg, c.train_subset.or(file.train_subset))?.1
        }
    };
    write_bench(&result, &out)
}

fn cmd_sweep(c: SweepCmd, file: &FileConfig) -> CliResult<()> {
    let cfg = train_config(&c.train, file)?;
    let train = read_store(&required(c.train_store, file.train_store.clone(), "train-store")?)?;
    let evals = read_stores(&eval_paths(&c.eval_store, file))?;
    let out = required(c.out, file.out.clone(), "out")?;
    let scenario = c.scenario.or(file.scenario).map_or(Scenario::Full, Scenario::from);
    let profile = per_layer_sweep(&train, &evals, &cfg, scenario, norm(&c.train, file))?;
    write_profile(&profile, &out)
}

fn cmd_dbi(c: DbiCmd, file: &FileConfig) -> CliResult<()> {
    let store = read_store(&required(c.store, file.store.clone(), "store")?)?;
    let out = required(c.out, file.out.clone(), "out")?;
    let scenario = c.scenario.or(file.scenario).map_or(Scenario::Full, Scenario::from);
    let seed = c.seed.or(file.seed).unwrap_or(0);
    let d = KMeansConfig::default();
    let km = KMeansConfig {
        n_init: c.kmeans_inits.or(file.kmeans_inits).unwrap_or(d.n_init),
        max_iter: c.kmeans_max_iter.or(file.kmeans_max_iter).unwrap_or(d.max_iter),
        seed,
    };
    let profile = dbi_profile(&store, scenario, seed, &km)?;
    write_profile(&profile, &out)
}

fn cmd_l1(c: L1Cmd, file: &FileConfig) -> CliResult<()> {
    let mut cfg = train_config(&c.train, file)?;
    cfg.l1_lambda = c.l1.or(file.l1).unwrap_or(1e-3);
    let store = read_store(&required(c.store, file.store.clone(), "store")?)?;
    let out = required(c.out, file.out.clone(), "out")?;
    let rows: Vec<usize> = (0..store.len()).collect();
    let model = train_l1_probe(&store, &rows, norm(&c.train, file), &cfg)?;
    let profile = l1_weight_mass(&model, store.dims())?;
    write_profile(&profile, &out)
}

#[derive(Serialize)]
struct KSelectionOut<'a> {
    chosen: usize,
    n_train: usize,
    n_seeds: usize,
    seed: u64,
    scores: &'a [layerprobe::analysis::KScore],
}

fn cmd_select_k(c: SelectKCmd, file: &FileConfig) -> CliResult<()> {
    let cfg = train_config(&c.train, file)?;
    let train = read_store(&required(c.train_store, file.train_store.clone(), "train-store")?)?;
    let out = required(c.out, file.out.clone(), "out")?;
    let evals = eval_paths(&c.eval_store, file);
    let validation = match evals.as_slice() {
        [] => train.clone(),
        [one] => read_store(one)?,
        _ => return Err(Failure::Usage("select-k takes one --eval-store".into())),
    };
    let candidates = if c.candidates.is_empty() {
        file.candidates
            .clone()
            .unwrap_or_else(|| default_k_candidates(train.header().block_layer_count()))
    } else {
        c.candidates
    };
    let n_train = c.n_train.or(file.n_train).unwrap_or(100);
    let n_seeds = c.n_seeds.or(file.n_seeds).unwrap_or(10);
    let sel = select_k(&train, &validation, &candidates, &cfg, n_train, n_seeds, norm(&c.train, file))?;
    let mut csv = String::from("k,mean_acc\n");
    for s in &sel.scores {
        csv.push_str(&format!("{},{}\n", s.k, s.mean_acc));
        println!("k={:<3} mean_acc={:.4}", s.k, s.mean_acc);
    }
    write_bytes(&out.join("k_scores.csv"), csv.as_bytes())?;
    write_json(
        &out.join("k_selection.json"),
        &KSelectionOut {
            chosen: sel.chosen,
            n_train,
            n_seeds,
            seed: cfg.seed,
            scores: &sel.scores,
        },
    )?;
    println!("chosen k={}", sel.chosen);
    Ok(())
}

#[derive(Serialize)]
struct ClusterOut<'a> {
    reducer: Reducer,
    reduce_dim: usize,
    seed: u64,
    mean_accuracy: f64,
    verdicts: &'a [ClusterVerdict],
}

fn cmd_cluster(c: ClusterCmd, file: &FileConfig) -> CliResult<()> {
    let store = read_store(&required(c.store, file.store.clone(), "store")?)?;
    let model = LinearModel::load(required(c.model, file.model.clone(), "model")?)?;
    let out = required(c.out, file.out.clone(), "out")?;
    let d = ClusterConfig::default();
    let cfg = ClusterConfig {
        reduce_dim: c.reduce_dim.or(file.reduce_dim).unwrap_or(d.reduce_dim),
        reducer: match c.reducer.or(file.reducer) {
            Some(ReducerArg::None) => Reducer::None,
            _ => Reducer::Pca,
        },
        kmeans_inits: c.kmeans_inits.or(file.kmeans_inits).unwrap_or(d.kmeans_inits),
        kmeans_max_iter: c.kmeans_max_iter.or(file.kmeans_max_iter).unwrap_or(d.kmeans_max_iter),
        seed: c.seed.or(file.seed).unwrap_or(d.seed),
    };
    let verdicts = cluster_detect_by_source(&store, &model, &cfg)?;
    let mean = verdicts.iter().map(|v| v.accuracy).sum::<f64>() / verdicts.len() as f64;
    let mut csv = String::from("source,n,accuracy,probe_accuracy,decided_by\n");
    for v in &verdicts {
        csv.push_str(&format!("{},{},{},{},{}\n", v.source, v.n, v.accuracy, v.probe_accuracy, v.decided_by));
        println!("{:<24} n={:<6} cluster_acc={:.4} probe_acc={:.4}", v.source, v.n, v.accuracy, v.probe_accuracy);
    }
    csv.push_str(&format!("average,{},{},,\n", verdicts.iter().map(|v| v.n).sum::<usize>(), mean));
    write_bytes(&out.join("cluster_accuracy.csv"), csv.as_bytes())?;
    write_json(
        &out.join("cluster_verdict.json"),
        &ClusterOut {
            reducer: cfg.reducer,
            reduce_dim: cfg.reduce_dim,
            seed: cfg.seed,
            mean_accuracy: mean,
            verdicts: &verdicts,
        },
    )
}

fn cmd_attribute(c: AttributeCmd, file: &FileConfig) -> CliResult<()> {
    let cfg = train_config(&c.train, file)?;
    let store = read_store(&required(c.store, file.store.clone(), "store")?)?;
    let out = required(c.out, file.out.clone(), "out")?;
    let k = c.k.or(file.k).unwrap_or(0);
    let n = c.n_per_source.or(file.n_per_source).unwrap_or(10);
    let report = attribute(&store, k, n, norm(&c.train, file), &cfg)?;
    write_bytes(&out.join("confusion.csv"), report.confusion.to_csv().as_bytes())?;
    write_json(&out.join("attribution.json"), &report)?;
    println!(
        "{} sources, {} train / {} test rows, accuracy {:.4}, mean diagonal {:.1}",
        report.confusion.sources.len(),
        report.n_train,
        report.n_test,
        report.accuracy,
        report.mean_diagonal
    );
    Ok(())
}

fn cmd_synth(c: SynthCmd, file: &FileConfig) -> CliResult<()> {
    let out = required(c.out, file.out.clone(), "out")?;
    let seed = c.seed.or(file.seed).unwrap_or(0);
    let l = c.layers;
    if l == 0 {
        return Err(Failure::Usage("--layers must be >= 1".into()));
    }
    let separation = match c.profile {
        ProfileArg::MiddlePeak => profile::middle_peak(l, c.separation, c.half_width),
        ProfileArg::Band => {
            let mid = layerprobe::window::middle_layer(l);
            profile::band(l, mid.saturating_sub(c.band_radius).max(1), (mid + c.band_radius).min(l), c.separation)
        }
        ProfileArg::Flat => profile::flat(l, c.separation),
    };
    let fakes = if c.fake_source.is_empty() {
        vec!["synthetic-fake".to_string()]
    } else {
        c.fake_source
    };
    let parts = fakes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let spec = SyntheticSpec {
                noise_std: c.noise_std,
                seed: derive_seed(seed, i as u64),
                geometry_seed: derive_seed(c.geometry_seed, i as u64),
                fake_source: name.clone(),
                real_source: if c.paired_reals { name.clone() } else { c.real_source.clone() },
                augmentation: c.augmentation.clone(),
                modality: match c.modality {
                    ModalityArg::Image => Modality::Image,
                    ModalityArg::Audio => Modality::Audio,
                },
                ..SyntheticSpec::new(vec![c.dim; l], c.n_per_class, separation.clone())
            };
            gen_synthetic_store(&spec)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let store = FeatureStore::concat(&parts)?;
    store.write(&out)?;
    println!("wrote {} rows x {} layers", store.len(), store.layer_count());
    Ok(())
}

fn cmd_report(c: ReportCmd, file: &FileConfig) -> CliResult<()> {
    let out = required(c.out, file.out.clone(), "out")?;
    let read = |p: &PathBuf| fs::read_to_string(p).map_err(|e| io_fail(p, e));
    let profiles = c
        .profile
        .iter()
        .map(|p| Ok(profile_from_csv(&read(p)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for p in &c.reports {
        reports.extend(reports_from_csv(&read(p)?)?);
    }
    for path in emit_report(&profiles, &reports, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("LF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("LF_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train(c) => cmd_train(c, &file),
        Command::Eval(c) => cmd_eval(c, &file),
        Command::SweepLayers(c) => cmd_sweep(c, &file),
        Command::DbiProfile(c) => cmd_dbi(c, &file),
        Command::L1Mass(c) => cmd_l1(c, &file),
        Command::SelectK(c) => cmd_select_k(c, &file),
        Command::ClusterDetect(c) => cmd_cluster(c, &file),
        Command::Attribute(c) => cmd_attribute(c, &file),
        Command::GenSynthetic(c) => cmd_synth(c, &file),
        Command::Report(c) => cmd_report(c, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
