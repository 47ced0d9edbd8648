//! Brute-force reference implementations and fixtures shared by the
//! integration tests. Everything here is written directly from the metric
//! definitions with plain loops, without reusing library internals.

#![allow(dead_code)]

use layerprobe::store::Label;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Operating points from +inf down through every distinct score. A sample
/// is accepted as fake when `score >= t`.
fn thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    let mut out = vec![f64::INFINITY];
    out.extend(t);
    out
}

fn counts_at(scores: &[f64], labels: &[Label], t: f64) -> (usize, usize) {
    let mut fake_acc = 0;
    let mut real_acc = 0;
    for (s, l) in scores.iter().zip(labels) {
        if *s >= t {
            if l.is_fake() {
                fake_acc += 1;
            } else {
                real_acc += 1;
            }
        }
    }
    (fake_acc, real_acc)
}

/// EER from an exhaustive threshold sweep: the first operating point where
/// FAR - FRR is non-negative, linearly interpolated with its predecessor.
pub fn eer_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let pos = labels.iter().filter(|l| l.is_fake()).count() as f64;
    let neg = labels.len() as f64 - pos;
    let curve: Vec<(f64, f64)> = thresholds(scores)
        .into_iter()
        .map(|t| {
            let (f, r) = counts_at(scores, labels, t);
            (r as f64 / neg, 1.0 - f as f64 / pos)
        })
        .collect();
    for i in 0..curve.len() {
        let (far, frr) = curve[i];
        if far - frr >= 0.0 {
            if i == 0 || far == frr {
                return far;
            }
            let (pfar, pfrr) = curve[i - 1];
            let a = pfar - pfrr;
            let b = far - frr;
            let t = a / (a - b);
            return pfar + t * (far - pfar);
        }
    }
    panic!("sweep never crossed")
}

/// Step-sum average precision over the same thresholds, fake = positive.
pub fn ap_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let pos = labels.iter().filter(|l| l.is_fake()).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds(scores).into_iter().skip(1) {
        let (tp, fp) = counts_at(scores, labels, t);
        let recall = tp as f64 / pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Davies-Bouldin index from its definition, with plain vectors.
pub fn dbi_oracle(points: &[Vec<f64>], assignment: &[usize]) -> f64 {
    let k = assignment.iter().max().unwrap() + 1;
    let d = points[0].len();
    let mut centroids = vec![vec![0.0; d]; k];
    let mut sizes = vec![0.0; k];
    for (p, &c) in points.iter().zip(assignment) {
        for j in 0..d {
            centroids[c][j] += p[j];
        }
        sizes[c] += 1.0;
    }
    for c in 0..k {
        for j in 0..d {
            centroids[c][j] /= sizes[c];
        }
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut sigma = vec![0.0; k];
    for (p, &c) in points.iter().zip(assignment) {
        sigma[c] += dist(p, &centroids[c]) / sizes[c];
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i != j {
                worst = worst.max((sigma[i] + sigma[j]) / dist(&centroids[i], &centroids[j]));
            }
        }
        total += worst;
    }
    total / k as f64
}

/// Scores with both classes present; half the instances are coarsely
/// quantised so that ties occur often.
pub fn random_scored(r: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<Label>) {
    let n = r.random_range(2..=max_n);
    let quantise = r.random_bool(0.5);
    let mut labels: Vec<Label> = (0..n)
        .map(|_| if r.random_bool(0.5) { Label::Fake } else { Label::Real })
        .collect();
    labels[0] = Label::Real;
    labels[1] = Label::Fake;
    let scores = labels
        .iter()
        .map(|l| {
            let s: f64 = r.random::<f64>() + if l.is_fake() { 0.2 } else { 0.0 };
            if quantise {
                (s * 5.0).round() / 5.0
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

/// Points in `k` clusters with every cluster non-empty and distinct centroids.
pub fn random_clustering(r: &mut ChaCha8Rng, max_n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = r.random_range(2..=4usize);
    let n = r.random_range(k.max(2)..=max_n.max(k));
    let d = r.random_range(1..=5usize);
    let assignment: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    let points = assignment
        .iter()
        .map(|&c| (0..d).map(|_| c as f64 * 1.5 + r.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    (points, assignment)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// All 2-partitions of `points`, returning the smallest within-cluster sum
/// of squares among partitions that are Lloyd fixed points.
pub fn best_two_partition_inertia(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    // Point 0 is fixed in cluster 0 so each partition is visited once.
    for mask in 1u32..(1 << (n - 1)) {
        let member = |i: usize| i > 0 && (mask >> (i - 1)) & 1 == 1;
        let mut c = [vec![0.0; d], vec![0.0; d]];
        let mut size = [0.0; 2];
        for (i, p) in points.iter().enumerate() {
            let id = usize::from(member(i));
            for j in 0..d {
                c[id][j] += p[j];
            }
            size[id] += 1.0;
        }
        for id in 0..2 {
            for j in 0..d {
                c[id][j] /= size[id];
            }
        }
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let fixed = points.iter().enumerate().all(|(i, p)| {
            let own = usize::from(member(i));
            sq(p, &c[own]) <= sq(p, &c[1 - own])
        });
        if fixed {
            let inertia: f64 = points
                .iter()
                .enumerate()
                .map(|(i, p)| sq(p, &c[usize::from(member(i))]))
                .sum();
            best = best.min(inertia);
        }
    }
    best
}
