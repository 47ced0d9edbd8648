mod common;

use common::*;
use layerprobe::classifier::objective::{cross_entropy_loss_grad, hinge_loss_grad, Params};
use layerprobe::classifier::{train_svm, ClassTargets, Loss, TrainConfig};
use layerprobe::cluster::{kmeans2, KMeansConfig};
use layerprobe::metrics::{average_precision, dbi, eer, ranking_map, ScoredSet};
use layerprobe::store::Label;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn set(scores: &[f64], labels: &[Label]) -> ScoredSet {
    ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
}

fn matrix(points: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_vec((points.len(), points[0].len()), points.concat()).unwrap()
}

proptest! {
    #[test]
    fn eer_matches_threshold_sweep(seed in any::<u64>()) {
        let (s, l) = random_scored(&mut rng(seed), 50);
        prop_assert!((eer(&set(&s, &l)).unwrap() - eer_oracle(&s, &l)).abs() < 1e-9);
    }

    #[test]
    fn ap_matches_step_sum(seed in any::<u64>()) {
        let (s, l) = random_scored(&mut rng(seed), 50);
        prop_assert!((average_precision(&set(&s, &l)).unwrap() - ap_oracle(&s, &l)).abs() < 1e-9);
    }

    #[test]
    fn ranking_map_averages_both_classes(seed in any::<u64>()) {
        let (s, l) = random_scored(&mut rng(seed), 50);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let flipped: Vec<Label> = l.iter().map(|x| x.opposite()).collect();
        let want = (ap_oracle(&s, &l) + ap_oracle(&neg, &flipped)) / 2.0;
        prop_assert!((ranking_map(&set(&s, &l)).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn dbi_matches_definition(seed in any::<u64>()) {
        let (p, a) = random_clustering(&mut rng(seed), 50);
        prop_assert!((dbi(&matrix(&p), &a).unwrap() - dbi_oracle(&p, &a)).abs() < 1e-9);
    }

    #[test]
    fn eer_in_unit_interval_and_inverts(seed in any::<u64>()) {
        let (s, l) = random_scored(&mut rng(seed), 50);
        let e = eer(&set(&s, &l)).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}

#[test]
fn eer_perfect_and_inverted() {
    let l = [Label::Real, Label::Real, Label::Fake, Label::Fake];
    assert_eq!(eer(&set(&[0.1, 0.2, 0.8, 0.9], &l)).unwrap(), 0.0);
    assert_eq!(eer(&set(&[0.8, 0.9, 0.1, 0.2], &l)).unwrap(), 1.0);
}

#[test]
fn ap_worked_examples() {
    use Label::{Fake as F, Real as R};
    let ap = average_precision(&set(&[0.9, 0.8, 0.7, 0.6], &[F, R, F, R])).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    let ap = average_precision(&set(&[0.9, 0.8, 0.1], &[R, R, F])).unwrap();
    assert!((ap - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn dbi_two_pairs() {
    let p = vec![vec![0.0, 0.0], vec![0.0, 2.0], vec![10.0, 0.0], vec![10.0, 2.0]];
    assert!((dbi(&matrix(&p), &[0, 0, 1, 1]).unwrap() - 0.2).abs() < 1e-12);
}

fn random_batch(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| r.random::<f64>() * 4.0 - 2.0)
}

#[test]
fn hinge_gradient_matches_finite_differences() {
    let mut r = rng(11);
    let mut checked = 0;
    while checked < 50 {
        let (n, d) = (r.random_range(1..=8), r.random_range(1..=6));
        let x = random_batch(&mut r, n, d);
        let y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let sw: Vec<f64> = (0..n).map(|_| 0.5 + r.random::<f64>()).collect();
        let theta: Vec<f64> = (0..=d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let p = Params::from_vec(1, d, &theta);
        // The subgradient is only the gradient away from the kink.
        let near_kink = x.rows().into_iter().zip(&y).any(|(row, yi)| {
            let m = yi * (row.dot(&p.w.row(0)) + p.b[0]);
            (m - 1.0).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        let (_, g) = hinge_loss_grad(&p, x.view(), &y, Some(&sw), 0.01);
        let fd = fd_gradient(
            |t| hinge_loss_grad(&Params::from_vec(1, d, t), x.view(), &y, Some(&sw), 0.01).0,
            &theta,
            1e-6,
        );
        assert!(rel_err(&g.to_vec(), &fd) < 1e-4);
        checked += 1;
    }
}

#[test]
fn cross_entropy_gradient_5x4() {
    let mut r = rng(5);
    let x = random_batch(&mut r, 5, 4);
    let y = vec![0, 2, 1, 1, 0];
    let theta: Vec<f64> = (0..15).map(|_| r.random::<f64>() - 0.5).collect();
    let p = Params::from_vec(3, 4, &theta);
    let (_, g) = cross_entropy_loss_grad(&p, x.view(), &y, None, 1e-3);
    let fd = fd_gradient(
        |t| cross_entropy_loss_grad(&Params::from_vec(3, 4, t), x.view(), &y, None, 1e-3).0,
        &theta,
        1e-6,
    );
    assert!(rel_err(&g.to_vec(), &fd) < 1e-4);
}

fn hinge_objective(x: &[f64], y: &[f64], w: f64, b: f64, l2: f64) -> f64 {
    let loss: f64 = x.iter().zip(y).map(|(xi, yi)| (1.0 - yi * (w * xi + b)).max(0.0)).sum::<f64>() / x.len() as f64;
    loss + l2 * w * w
}

#[test]
fn svm_near_grid_optimum_on_six_points() {
    // Overlapping classes so the optimum has positive loss.
    let xs = [-2.0, -1.0, 0.5, -0.5, 1.0, 2.0];
    let ys = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
    let l2 = 0.05;
    let mut grid_best = f64::INFINITY;
    let steps = 1200;
    for i in 0..=steps {
        let w = -6.0 + 12.0 * i as f64 / steps as f64;
        for j in 0..=steps {
            let b = -6.0 + 12.0 * j as f64 / steps as f64;
            grid_best = grid_best.min(hinge_objective(&xs, &ys, w, b, l2));
        }
    }
    let x = Array2::from_shape_vec((6, 1), xs.to_vec()).unwrap();
    let labels: Vec<Label> = ys.iter().map(|&v| if v > 0.0 { Label::Fake } else { Label::Real }).collect();
    let cfg = TrainConfig {
        loss: Loss::Hinge,
        l2_lambda: l2,
        learning_rate: 0.01,
        batch_size: 6,
        epochs: 4000,
        ..TrainConfig::default()
    };
    let model = train_svm(&x, &ClassTargets::binary(&labels), &cfg).unwrap();
    let got = hinge_objective(&xs, &ys, f64::from(model.weights()[[0, 0]]), f64::from(model.bias()[0]), l2);
    assert!(got <= grid_best * 1.05, "trained objective {got}, grid optimum {grid_best}");
}

fn exhaustive_case(points: &[Vec<f64>], cfg: &KMeansConfig) {
    let oracle = best_two_partition_inertia(points);
    let got = kmeans2(&matrix(points), cfg).unwrap();
    assert!((got.inertia - oracle).abs() < 1e-9, "seed {}: {} vs {oracle}", cfg.seed, got.inertia);
}

#[test]
fn kmeans_matches_exhaustive_partition_search() {
    use rand_distr::{Distribution, StandardNormal};
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let points: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                (0..2)
                    .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r) + if i < 6 { 0.0 } else { 3.0 })
                    .collect::<Vec<f64>>()
            })
            .collect();
        exhaustive_case(&points, &KMeansConfig { seed, ..KMeansConfig::default() });
    }
}

#[test]
fn kmeans_matches_exhaustive_search_on_noise_with_more_restarts() {
    // Structureless points have many near-equal local optima.
    for seed in 0..20u64 {
        let mut r = rng(2000 + seed);
        let points: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..2).map(|_| r.random::<f64>() * 10.0).collect())
            .collect();
        exhaustive_case(&points, &KMeansConfig { seed, n_init: 100, ..KMeansConfig::default() });
    }
}

#[test]
fn kmeans_inertia_never_increases() {
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let points: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| r.random::<f64>()).collect())
            .collect();
        let km = kmeans2(&matrix(&points), &KMeansConfig { seed, ..KMeansConfig::default() }).unwrap();
        for w in km.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
