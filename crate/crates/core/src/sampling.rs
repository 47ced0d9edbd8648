//! Seeded row sampling shared by the analyses.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::{FeatureStore, Label};

/// Independent child seed for stream `stream` of `seed` (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of `n` items from `pool` without replacement, returned in
/// pool order, plus the remaining items.
pub fn split_pool(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut picked = vec![false; pool.len()];
    for i in index::sample(rng, pool.len(), n.min(pool.len())) {
        picked[i] = true;
    }
    let mut chosen = Vec::with_capacity(n);
    let mut rest = Vec::with_capacity(pool.len().saturating_sub(n));
    for (&row, &p) in pool.iter().zip(&picked) {
        if p {
            chosen.push(row);
        } else {
            rest.push(row);
        }
    }
    (chosen, rest)
}

/// Rows of `candidates` partitioned by label: (real, fake).
pub fn by_label(store: &FeatureStore, candidates: &[usize]) -> (Vec<usize>, Vec<usize>) {
    candidates
        .iter()
        .partition(|&&r| store.manifest()[r].label == Label::Real)
}

/// `n_per_class` rows of each label; the remainder is returned as holdout.
pub fn per_class_sample(
    store: &FeatureStore,
    candidates: &[usize],
    n_per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (real, fake) = by_label(store, candidates);
    for (name, pool) in [("real", &real), ("fake", &fake)] {
        if pool.len() < n_per_class {
            return Err(Error::InsufficientData(format!(
                "need {n_per_class} {name} rows, have {}",
                pool.len()
            )));
        }
    }
    let mut rng = rng(seed);
    let (mut train, mut rest) = split_pool(&real, n_per_class, &mut rng);
    let (train_f, rest_f) = split_pool(&fake, n_per_class, &mut rng);
    train.extend(train_f);
    rest.extend(rest_f);
    train.sort_unstable();
    rest.sort_unstable();
    Ok((train, rest))
}

/// Stratified sample of `n` rows preserving the real/fake ratio of
/// `candidates` (largest-remainder rounding), plus the remainder.
pub fn stratified_sample(
    store: &FeatureStore,
    candidates: &[usize],
    n: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n > candidates.len() {
        return Err(Error::InsufficientData(format!(
            "requested {n} rows from {}",
            candidates.len()
        )));
    }
    let (real, fake) = by_label(store, candidates);
    let exact_real = n as f64 * real.len() as f64 / candidates.len().max(1) as f64;
    let mut n_real = exact_real.floor() as usize;
    if exact_real - n_real as f64 >= 0.5 {
        n_real += 1;
    }
    let n_real = n_real.min(real.len());
    let n_fake = (n - n_real).min(fake.len());
    let mut rng = rng(seed);
    let (mut train, mut rest) = split_pool(&real, n_real, &mut rng);
    let (tf, rf) = split_pool(&fake, n_fake, &mut rng);
    train.extend(tf);
    rest.extend(rf);
    train.sort_unstable();
    rest.sort_unstable();
    Ok((train, rest))
}

/// Fractional split per label (e.g. 0.8 for an 80/20 train/holdout split).
pub fn fraction_split(
    store: &FeatureStore,
    candidates: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let (real, fake) = by_label(store, candidates);
    let mut rng = rng(seed);
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for pool in [real, fake] {
        let n = (pool.len() as f64 * fraction).round() as usize;
        let (t, r) = split_pool(&pool, n, &mut rng);
        train.extend(t);
        rest.extend(r);
    }
    train.sort_unstable();
    rest.sort_unstable();
    (train, rest)
}

/// Random permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng(seed));
    v
}
