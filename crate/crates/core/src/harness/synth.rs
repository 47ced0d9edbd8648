use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{derive_seed, rng};
use crate::store::{FeatureStore, Label, ManifestRecord, Modality, Pooling, StoreHeader, AUG_NONE};
use crate::window::middle_layer;

/// Class-conditional Gaussian features: at layer `l` the real and fake
/// means sit at `-/+ separation[l] / 2` along a random unit direction, with
/// isotropic noise of `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub n_per_class: usize,
    pub separation: Vec<f64>,
    pub noise_std: f64,
    /// Seeds the samples.
    pub seed: u64,
    /// Seeds the per-layer directions; stores sharing it share signal geometry.
    pub geometry_seed: u64,
    pub fake_source: String,
    pub real_source: String,
    pub augmentation: String,
    pub modality: Modality,
}

impl SyntheticSpec {
    pub fn new(dims: Vec<usize>, n_per_class: usize, separation: Vec<f64>) -> Self {
        Self {
            dims,
            n_per_class,
            separation,
            noise_std: 1.0,
            seed: 0,
            geometry_seed: 0,
            fake_source: "synthetic-fake".into(),
            real_source: "synthetic-real".into(),
            augmentation: AUG_NONE.into(),
            modality: Modality::Image,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::invalid("synthetic dims must be non-empty and positive"));
        }
        if self.separation.len() != self.dims.len() {
            return Err(Error::invalid(format!(
                "separation profile has {} entries for {} layers",
                self.separation.len(),
                self.dims.len()
            )));
        }
        if self.separation.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("separations must be finite and non-negative"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if self.fake_source.is_empty() || self.real_source.is_empty() {
            return Err(Error::invalid("source names must be non-empty"));
        }
        Ok(())
    }
}

/// Separation profiles over `layer_count` layers (index 0 is layer 1).
pub mod profile {
    use super::middle_layer;

    /// Triangle peaking at the middle layer with `peak`, reaching zero
    /// `half_width` layers away.
    pub fn middle_peak(layer_count: usize, peak: f64, half_width: f64) -> Vec<f64> {
        let mid = middle_layer(layer_count) as f64;
        (1..=layer_count)
            .map(|l| peak * (1.0 - (l as f64 - mid).abs() / half_width).max(0.0))
            .collect()
    }

    /// `value` on layers `lo..=hi`, zero elsewhere.
    pub fn band(layer_count: usize, lo: usize, hi: usize, value: f64) -> Vec<f64> {
        (1..=layer_count)
            .map(|l| if (lo..=hi).contains(&l) { value } else { 0.0 })
            .collect()
    }

    pub fn flat(layer_count: usize, value: f64) -> Vec<f64> {
        vec![value; layer_count]
    }
}

fn unit_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a balanced store; rows alternate real, fake.
pub fn gen_synthetic_store(spec: &SyntheticSpec) -> Result<FeatureStore> {
    spec.validate()?;
    let directions: Vec<Vec<f64>> = spec
        .dims
        .iter()
        .enumerate()
        .map(|(l, &d)| unit_direction(d, derive_seed(spec.geometry_seed, l as u64)))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng(spec.seed);
    let n = 2 * spec.n_per_class;
    let width: usize = spec.dims.iter().sum();
    let mut tensor = Vec::with_capacity(n * width);
    let mut manifest = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
        let sign = if label.is_fake() { 0.5 } else { -0.5 };
        for (l, dir) in directions.iter().enumerate() {
            let shift = sign * spec.separation[l];
            for &u in dir {
                tensor.push((shift * u + noise.sample(&mut r)) as f32);
            }
        }
        let source = if label.is_fake() { &spec.fake_source } else { &spec.real_source };
        manifest.push(
            ManifestRecord::new(i, format!("{}-{i:05}", spec.fake_source), label, source.clone())
                .with_augmentation(spec.augmentation.clone()),
        );
    }
    let mut header = StoreHeader::new("synthetic", spec.modality, spec.dims.clone(), Pooling::ClassToken, n);
    header
        .metadata
        .insert("generator".into(), "gaussian-class-conditional".into());
    FeatureStore::from_flat(header, tensor, manifest)
}
