use ndarray::{Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Which restart produced this solution.
    pub restart: usize,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    centroids
        .rows()
        .into_iter()
        .enumerate()
        .map(|(c, centre)| (c, sq_dist(point, centre)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Greedy k-means++ seeding: first centre uniform, then for each further
/// centre `2 + ln k` candidates drawn proportional to squared distance from
/// the nearest chosen centre, keeping the one that lowers the potential most.
pub fn kmeans_plus_plus(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let candidates: Vec<usize> = match WeightedIndex::new(&d2) {
            Ok(dist) => (0..trials).map(|_| dist.sample(rng)).collect(),
            // All remaining mass is zero: any point will do.
            Err(_) => vec![rng.random_range(0..n)],
        };
        let (_, best, best_d2) = candidates
            .into_iter()
            .map(|cand| {
                let next: Vec<f64> = points
                    .rows()
                    .into_iter()
                    .zip(&d2)
                    .map(|(p, &d)| d.min(sq_dist(p, points.row(cand))))
                    .collect();
                (next.iter().sum::<f64>(), cand, next)
            })
            .fold((f64::INFINITY, 0, Vec::new()), |best, cur| if cur.0 < best.0 { cur } else { best });
        centroids.row_mut(c).assign(&points.row(best));
        d2 = best_d2;
    }
    centroids
}

fn inertia_of(points: &Array2<f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, centroids.row(c)))
        .sum()
}

fn update_centroids(points: &Array2<f64>, assignment: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut centroids = Array2::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (p, &c) in points.rows().into_iter().zip(assignment) {
        centroids.row_mut(c).scaled_add(1.0, &p);
        counts[c] += 1;
    }
    for (mut row, &n) in centroids.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            row /= n as f64;
        }
    }
    (centroids, counts)
}

/// Lloyd iterations from `init` until the assignment is stable or
/// `max_iter` is reached. Ties go to the lower centroid id. An emptied
/// cluster is re-seeded with the point farthest from its centroid.
pub fn lloyd(points: &Array2<f64>, init: Array2<f64>, max_iter: usize) -> KMeansResult {
    let k = init.nrows();
    let mut centroids = init;
    let mut assignment: Vec<usize> = vec![usize::MAX; points.nrows()];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let next: Vec<usize> = points.rows().into_iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assignment;
        assignment = next;
        if !changed {
            break;
        }
        let (mut c, mut counts) = update_centroids(points, &assignment, k);
        while let Some(empty) = counts.iter().position(|&n| n == 0) {
            let far = points
                .rows()
                .into_iter()
                .zip(&assignment)
                .enumerate()
                .filter(|(_, (_, &a))| counts[a] > 1)
                .map(|(i, (p, &a))| (i, sq_dist(p, c.row(a))))
                .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            if far == usize::MAX {
                break;
            }
            assignment[far] = empty;
            (c, counts) = update_centroids(points, &assignment, k);
        }
        centroids = c;
        let inertia = inertia_of(points, &centroids, &assignment);
        debug_assert!(
            trace.last().is_none_or(|&prev: &f64| inertia <= prev * (1.0 + 1e-12) + 1e-12),
            "Lloyd inertia increased"
        );
        trace.push(inertia);
    }
    let inertia = inertia_of(points, &centroids, &assignment);
    KMeansResult {
        assignment,
        centroids,
        inertia,
        restart: 0,
        inertia_trace: trace,
    }
}

/// Best of `cfg.n_init` k-means++ restarts by inertia (ties: lowest restart).
pub fn kmeans(points: &Array2<f64>, k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if k < 1 || cfg.n_init == 0 {
        return Err(Error::invalid("k and n_init must be positive"));
    }
    let n = points.nrows();
    if n < k {
        return Err(Error::InsufficientData(format!("{n} points for {k} clusters")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input must be finite"));
    }
    let distinct = (1..n).any(|i| points.row(i) != points.row(0));
    if k > 1 && !distinct {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let runs: Vec<KMeansResult> = (0..cfg.n_init)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng(derive_seed(cfg.seed, r as u64));
            let init = kmeans_plus_plus(points, k, &mut rng);
            let mut res = lloyd(points, init, cfg.max_iter);
            res.restart = r;
            res
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, cur| if cur.inertia < best.inertia { cur } else { best })
        .expect("n_init > 0"))
}

/// Two-cluster k-means.
pub fn kmeans2(points: &Array2<f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    kmeans(points, 2, cfg)
}

/// Every restart's result, for inspection.
pub fn kmeans_restarts(points: &Array2<f64>, k: usize, cfg: &KMeansConfig) -> Vec<KMeansResult> {
    (0..cfg.n_init)
        .map(|r| {
            let mut rng = rng(derive_seed(cfg.seed, r as u64));
            let init = kmeans_plus_plus(points, k, &mut rng);
            let mut res = lloyd(points, init, cfg.max_iter);
            res.restart = r;
            res
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Normal, StandardNormal};

    fn two_blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((60, 3));
        let mut truth = Vec::new();
        for i in 0..60 {
            let m = if i % 2 == 0 { -10.0 } else { 10.0 };
            for j in 0..3 {
                x[[i, j]] = m + noise.sample(&mut r);
            }
            truth.push(i % 2);
        }
        (x, truth)
    }

    #[test]
    fn separates_far_blobs() {
        let (x, truth) = two_blobs(1);
        let res = kmeans2(&x, &KMeansConfig::default()).unwrap();
        let agree = res.assignment.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(agree == 60 || agree == 0);
    }

    #[test]
    fn best_restart_selected() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((40, 2), |_| StandardNormal.sample(&mut r));
        let cfg = KMeansConfig { seed: 5, ..KMeansConfig::default() };
        let best = kmeans2(&x, &cfg).unwrap();
        for run in kmeans_restarts(&x, 2, &cfg) {
            assert!(best.inertia <= run.inertia);
        }
    }

    #[test]
    fn inertia_never_increases() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((200, 4), |_| StandardNormal.sample(&mut r));
        for run in kmeans_restarts(&x, 2, &KMeansConfig::default()) {
            for w in run.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn identical_points_rejected() {
        let x = Array2::ones((5, 2));
        assert!(matches!(kmeans2(&x, &KMeansConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, _) = two_blobs(3);
        let cfg = KMeansConfig { seed: 42, ..KMeansConfig::default() };
        assert_eq!(kmeans2(&x, &cfg).unwrap(), kmeans2(&x, &cfg).unwrap());
    }
}
