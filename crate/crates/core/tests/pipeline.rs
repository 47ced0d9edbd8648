//! End-to-end library pipelines on synthetic stores.

mod common;

use common::rng;
use layerprobe::analysis::{dbi_profile, layer_dbi, per_layer_sweep, select_k, Scenario};
use layerprobe::attribution::{attribute, confusion, few_shot_split};
use layerprobe::classifier::TrainConfig;
use layerprobe::cluster::{cluster_detect, ClusterConfig, KMeansConfig};
use layerprobe::harness::report::reports_to_csv;
use layerprobe::harness::{gen_synthetic_store, profile, run_benchmark, run_benchmark_stores, BenchConfig, SyntheticSpec};
use layerprobe::probe::fit_probe;
use layerprobe::store::{FeatureStore, Label, ManifestRecord, Modality, Pooling, StoreHeader, AUG_JPEG50};
use layerprobe::window::{middle_layer, window_indices, NormKind};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const L: usize = 12;

fn spec(seed: u64, n: usize, separation: Vec<f64>) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::new(vec![8; L], n, separation)
    }
}

fn peak() -> Vec<f64> {
    profile::middle_peak(L, 10.0, 3.0)
}

/// Fake-only rows, one Gaussian blob per source, on a 1-layer store.
fn blob_store(centres: &[(&str, Vec<f64>)], per_source: usize, spread: f64, seed: u64) -> FeatureStore {
    let d = centres[0].1.len();
    let mut r = rng(seed);
    let mut tensor = Vec::new();
    let mut manifest = Vec::new();
    for (name, c) in centres {
        for i in 0..per_source {
            for x in c {
                let z: f64 = StandardNormal.sample(&mut r);
                tensor.push((x + spread * z) as f32);
            }
            manifest.push(ManifestRecord::new(manifest.len(), format!("{name}-{i}"), Label::Fake, *name));
        }
    }
    let header = StoreHeader::new("blobs", Modality::Image, vec![d], Pooling::ClassToken, manifest.len());
    FeatureStore::from_flat(header, tensor, manifest).unwrap()
}

#[test]
fn benchmark_transfers_to_sources_sharing_geometry() {
    let train = gen_synthetic_store(&SyntheticSpec {
        fake_source: "progan".into(),
        ..spec(1, 200, peak())
    })
    .unwrap();
    let evals: Vec<FeatureStore> = ["ldm", "glide", "dalle"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            gen_synthetic_store(&SyntheticSpec {
                fake_source: name.to_string(),
                real_source: name.to_string(),
                ..spec(10 + i as u64, 100, peak())
            })
            .unwrap()
        })
        .collect();
    let (_, result) = run_benchmark_stores(&train, &evals, 3, NormKind::ZScore, &TrainConfig::default(), None).unwrap();
    assert_eq!(result.reports.len(), 3);
    assert!(result.average.acc >= 0.95, "average acc {}", result.average.acc);
    let mean = result.reports.iter().map(|r| r.acc).sum::<f64>() / 3.0;
    assert!((result.average.acc - mean).abs() < 1e-12);
}

#[test]
fn inverted_labels_invert_accuracy() {
    let train = gen_synthetic_store(&spec(1, 200, profile::middle_peak(L, 2.0, 3.0))).unwrap();
    let eval = gen_synthetic_store(&spec(2, 200, profile::middle_peak(L, 2.0, 3.0))).unwrap();
    let flipped_manifest: Vec<ManifestRecord> = eval
        .manifest()
        .iter()
        .map(|r| ManifestRecord {
            label: r.label.opposite(),
            ..r.clone()
        })
        .collect();
    let flipped = FeatureStore::from_flat(eval.header().clone(), eval.tensor().to_vec(), flipped_manifest).unwrap();
    let cfg = TrainConfig::default();
    let (_, base) = run_benchmark_stores(&train, &[eval], 3, NormKind::ZScore, &cfg, None).unwrap();
    let (_, inv) = run_benchmark_stores(&train, &[flipped], 3, NormKind::ZScore, &cfg, None).unwrap();
    assert!((inv.average.acc - (1.0 - base.average.acc)).abs() < 1e-12);
    assert!(base.average.acc > 0.8);
}

#[test]
fn incompatible_stores_fail_before_training() {
    let train = gen_synthetic_store(&spec(1, 20, peak())).unwrap();
    let other = gen_synthetic_store(&SyntheticSpec::new(vec![4; L], 20, peak())).unwrap();
    assert!(run_benchmark_stores(&train, &[other], 3, NormKind::ZScore, &TrainConfig::default(), None).is_err());
}

#[test]
fn benchmark_from_files_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.lmfe");
    let eval_path = dir.path().join("eval.lmfe");
    gen_synthetic_store(&spec(1, 100, peak())).unwrap().write(&train_path).unwrap();
    gen_synthetic_store(&spec(2, 50, peak())).unwrap().write(&eval_path).unwrap();
    let config = BenchConfig {
        train_store: train_path,
        eval_stores: vec![eval_path],
        k: 3,
        norm: NormKind::ZScore,
        train: TrainConfig::default(),
        train_subset: Some(60),
    };
    let a = reports_to_csv(&run_benchmark(&config).unwrap().1.rows()).unwrap();
    let b = reports_to_csv(&run_benchmark(&config).unwrap().1.rows()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_signal_sweep_is_chance_everywhere() {
    let store = gen_synthetic_store(&spec(3, 300, profile::flat(L, 0.0))).unwrap();
    let p = per_layer_sweep(&store, &[], &TrainConfig::default(), Scenario::Full, NormKind::ZScore).unwrap();
    for v in &p.values {
        let acc = v.value.unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "layer {} acc {acc}", v.layer);
    }
}

#[test]
fn sweep_locates_planted_layer() {
    for planted in [1, 5, L] {
        let store = gen_synthetic_store(&spec(4, 150, profile::band(L, planted, planted, 8.0))).unwrap();
        let p = per_layer_sweep(&store, &[], &TrainConfig::default(), Scenario::Full, NormKind::ZScore).unwrap();
        assert_eq!(p.argmax(), Some(planted));
        assert_eq!(p.values.len(), L);
    }
}

#[test]
fn identical_layers_give_flat_sweep() {
    let base = gen_synthetic_store(&SyntheticSpec::new(vec![6], 150, vec![1.5])).unwrap();
    let layer: Vec<Vec<Vec<f32>>> = (0..base.len()).map(|i| vec![base.layer(i, 1).to_vec(); 4]).collect();
    let header = StoreHeader::new("copies", Modality::Image, vec![6; 4], Pooling::ClassToken, base.len());
    let store = FeatureStore::from_rows(header, &layer, base.manifest().to_vec()).unwrap();
    let p = per_layer_sweep(&store, &[], &TrainConfig::default(), Scenario::Full, NormKind::ZScore).unwrap();
    let values: Vec<f64> = p.values.iter().map(|v| v.value.unwrap()).collect();
    let spread = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) - values.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread <= 0.02, "{values:?}");
}

#[test]
fn single_layer_sweep_is_one_probe() {
    let store = gen_synthetic_store(&SyntheticSpec::new(vec![6], 100, vec![4.0])).unwrap();
    let p = per_layer_sweep(&store, &[], &TrainConfig::default(), Scenario::Full, NormKind::ZScore).unwrap();
    let (train, holdout) = Scenario::Full.split(&store, 0).unwrap();
    let model = fit_probe(&store, &train, &window_indices(1, 0).unwrap(), NormKind::ZScore, &TrainConfig::default()).unwrap();
    let direct = layerprobe::probe::evaluate_rows(&model, &store, &holdout, "").unwrap().acc;
    assert_eq!(p.values.len(), 1);
    assert_eq!(p.get(1), Some(direct));
}

#[test]
fn audio_sweep_reports_eer() {
    let store = gen_synthetic_store(&SyntheticSpec {
        modality: Modality::Audio,
        ..spec(5, 100, peak())
    })
    .unwrap();
    let p = per_layer_sweep(&store, &[], &TrainConfig::default(), Scenario::Full, NormKind::ZScore).unwrap();
    assert_eq!(p.metric, "eer");
    assert!(p.get(middle_layer(L)).unwrap() < 0.05);
}

#[test]
fn few_shot_scenarios_use_fifteen_per_class() {
    let plain = gen_synthetic_store(&spec(6, 50, peak())).unwrap();
    let jpeg = gen_synthetic_store(&SyntheticSpec {
        augmentation: AUG_JPEG50.into(),
        ..spec(7, 50, peak())
    })
    .unwrap();
    let both = FeatureStore::concat(&[plain, jpeg]).unwrap();
    let (train, _) = Scenario::FewShot.split(&both, 1).unwrap();
    assert_eq!(train.len(), 30);
    assert!(train.iter().all(|&r| both.manifest()[r].augmentation != AUG_JPEG50));
    let (train, _) = Scenario::FewShotJpeg.split(&both, 1).unwrap();
    assert_eq!(train.len(), 30);
    assert!(train.iter().all(|&r| both.manifest()[r].augmentation == AUG_JPEG50));
    let small = gen_synthetic_store(&spec(8, 10, peak())).unwrap();
    assert!(Scenario::FewShot.split(&small, 1).is_err());
}

#[test]
fn dbi_profile_composes_single_layer_dbi() {
    let store = gen_synthetic_store(&SyntheticSpec::new(vec![5; 3], 40, vec![0.0, 6.0, 1.0])).unwrap();
    let km = KMeansConfig::default();
    let p = dbi_profile(&store, Scenario::Full, 3, &km).unwrap();
    let (rows, _) = Scenario::Full.split(&store, 3).unwrap();
    for layer in 1..=3 {
        let x = store.slice_rows_layers(&rows, &[layer]).unwrap();
        assert_eq!(p.get(layer), layer_dbi(&x, &km).unwrap());
    }
    assert_eq!(p.argmin(), Some(2));
}

#[test]
fn dbi_of_two_far_singletons_is_zero() {
    let header = StoreHeader::new("t", Modality::Image, vec![2], Pooling::ClassToken, 2);
    let manifest = vec![
        ManifestRecord::new(0, "a", Label::Real, "s"),
        ManifestRecord::new(1, "b", Label::Fake, "s"),
    ];
    let store = FeatureStore::from_flat(header, vec![0.0, 0.0, 100.0, 100.0], manifest).unwrap();
    let x = store.slice_layers(&[1]).unwrap();
    assert_eq!(layer_dbi(&x, &KMeansConfig::default()).unwrap(), Some(0.0));
}

#[test]
fn select_k_single_informative_layer_picks_zero() {
    let mid = middle_layer(L);
    let sep = profile::band(L, mid, mid, 8.0);
    let train = gen_synthetic_store(&spec(20, 100, sep.clone())).unwrap();
    let val = gen_synthetic_store(&SyntheticSpec {
        augmentation: AUG_JPEG50.into(),
        ..spec(21, 200, sep)
    })
    .unwrap();
    let sel = select_k(&train, &val, &[0, 2, 4, 6], &TrainConfig::default(), 100, 3, NormKind::ZScore).unwrap();
    assert_eq!(sel.chosen, 0, "{:?}", sel.scores);
    assert!(select_k(&train, &val, &[], &TrainConfig::default(), 100, 3, NormKind::ZScore).is_err());
    // Validation rows must carry the jpeg50 tag.
    assert!(select_k(&train, &train, &[0], &TrainConfig::default(), 100, 3, NormKind::ZScore).is_err());
}

#[test]
fn cluster_detect_is_deterministic() {
    let store = gen_synthetic_store(&spec(30, 100, peak())).unwrap();
    let rows: Vec<usize> = (0..store.len()).collect();
    let model = fit_probe(&store, &rows, &window_indices(L, 3).unwrap(), NormKind::ZScore, &TrainConfig::default()).unwrap();
    let cfg = ClusterConfig { seed: 4, ..ClusterConfig::default() };
    let a = cluster_detect(&store, &model, &cfg).unwrap();
    let b = cluster_detect(&store, &model, &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.cluster_labels[0], a.cluster_labels[1]);
    assert!(a.accuracy >= 0.99);
}

#[test]
fn attribution_split_sizes() {
    let names: Vec<String> = (0..12).map(|i| format!("gen{i:02}")).collect();
    let centres: Vec<(&str, Vec<f64>)> = names.iter().map(|n| (n.as_str(), vec![0.0, 0.0])).collect();
    let store = blob_store(&centres, 500, 1.0, 1);
    let split = few_shot_split(&store, 10, 3).unwrap();
    assert_eq!(split.train_rows.len(), 120);
    assert_eq!(split.test_rows.len(), 5880);
    let other = few_shot_split(&store, 10, 4).unwrap();
    assert_ne!(split.train_rows, other.train_rows);
    assert_eq!(other.train_rows.len(), 120);
    assert!(few_shot_split(&store, 0, 3).is_err());
    let err = few_shot_split(&blob_store(&[("a", vec![0.0]), ("tiny", vec![1.0])], 5, 1.0, 1), 10, 0).unwrap_err();
    assert!(err.to_string().contains('a') || err.to_string().contains("tiny"));
}

#[test]
fn attribution_separates_far_blobs() {
    let centres = vec![
        ("a", vec![0.0, 0.0, 0.0]),
        ("b", vec![20.0, 0.0, 0.0]),
        ("c", vec![0.0, 20.0, 0.0]),
        ("d", vec![0.0, 0.0, 20.0]),
    ];
    let store = blob_store(&centres, 60, 0.5, 2);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 20,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let report = attribute(&store, 0, 10, NormKind::ZScore, &cfg).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.confusion.diagonal(), vec![100.0; 4]);
    assert_eq!(attribute(&store, 0, 10, NormKind::ZScore, &cfg).unwrap(), report);
}

#[test]
fn attribution_of_identical_sources_splits_evenly() {
    let store = blob_store(&[("x", vec![0.0; 4]), ("y", vec![0.0; 4])], 500, 1.0, 3);
    for seed in 0..5 {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let report = attribute(&store, 0, 10, NormKind::ZScore, &cfg).unwrap();
        let m = &report.confusion.percent;
        for row in m {
            assert!((row[0] - 50.0).abs() <= 15.0, "seed {seed}: {m:?}");
        }
    }
}

#[test]
fn uniform_random_predictions_give_flat_confusion() {
    let sources: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let mut r = rng(9);
    let truth: Vec<String> = (0..2000).map(|i| sources[i % 4].clone()).collect();
    let pred: Vec<String> = (0..2000).map(|_| sources[r.random_range(0..4)].clone()).collect();
    let cm = confusion(&pred, &truth, &sources).unwrap();
    for row in &cm.percent {
        assert!((row.iter().sum::<f64>() - 100.0).abs() <= 0.5);
        for v in row {
            assert!((v - 25.0).abs() <= 10.0);
        }
    }
    // Relabelling permutes rows and columns consistently.
    let perm = [2, 0, 3, 1];
    let rename = |s: &String| sources[perm[sources.iter().position(|x| x == s).unwrap()]].clone();
    let cm2 = confusion(
        &pred.iter().map(rename).collect::<Vec<_>>(),
        &truth.iter().map(rename).collect::<Vec<_>>(),
        &sources,
    )
    .unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(cm.counts[i][j], cm2.counts[perm[i]][perm[j]]);
        }
    }
}

#[test]
fn pseudo_layer_is_excluded_from_windows() {
    let base = gen_synthetic_store(&SyntheticSpec::new(vec![4; 5], 30, profile::middle_peak(5, 6.0, 2.0))).unwrap();
    let mut header = base.header().clone();
    header.pseudo_layers = vec!["after_projection".into()];
    let store = FeatureStore::from_flat(header, base.tensor().to_vec(), base.manifest().to_vec()).unwrap();
    assert_eq!(store.header().block_layer_count(), 4);
    let p = per_layer_sweep(&store, &[], &TrainConfig::default(), Scenario::Full, NormKind::ZScore).unwrap();
    assert_eq!(p.values.len(), 4);
    let rows: Vec<usize> = (0..store.len()).collect();
    let model = fit_probe(&store, &rows, &window_indices(4, 2).unwrap(), NormKind::ZScore, &TrainConfig::default()).unwrap();
    assert_eq!(model.n_features(), 16);
}
