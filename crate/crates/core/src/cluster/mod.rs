//! Clustering-based detection: reduce each source's probe features, split
//! them with 2-means, classify every row with a trained probe, and label each
//! cluster by majority vote.

pub mod kmeans;
pub mod pca;

use serde::{Deserialize, Serialize};

use crate::classifier::LinearModel;
use crate::error::{Error, Result};
use crate::store::{FeatureStore, Label};

pub use kmeans::{kmeans, kmeans2, lloyd, KMeansConfig, KMeansResult};
pub use pca::{reduce_dim, Pca};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Pca,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub reduce_dim: usize,
    pub reducer: Reducer,
    pub kmeans_inits: usize,
    pub kmeans_max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            reduce_dim: 100,
            reducer: Reducer::Pca,
            kmeans_inits: 10,
            kmeans_max_iter: 300,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reducer == Reducer::Pca && self.reduce_dim < 2 {
            return Err(Error::invalid("reduce_dim must be >= 2"));
        }
        Ok(())
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            n_init: self.kmeans_inits,
            max_iter: self.kmeans_max_iter,
            seed: self.seed,
        }
    }
}

/// Outcome of labelling two clusters from per-row probe predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub cluster_labels: [Label; 2],
    /// Majority probe label inside each cluster.
    pub majority: [Label; 2],
    /// Fraction of each cluster carrying its majority label.
    pub fractions: [f64; 2],
    /// Cluster whose majority fixed the labelling.
    pub decided_by: usize,
}

/// The cluster with the stronger majority keeps its majority label and the
/// other cluster gets the opposite one, so the result is always one real and
/// one fake cluster. An exact 50/50 split counts as fake with fraction 0.5;
/// equal fractions are decided by cluster 0.
pub fn cluster_vote(assignment: &[usize], probe_labels: &[Label]) -> Result<Vote> {
    if assignment.len() != probe_labels.len() {
        return Err(Error::invalid("assignment and labels differ in length"));
    }
    let mut fake = [0usize; 2];
    let mut total = [0usize; 2];
    for (&c, l) in assignment.iter().zip(probe_labels) {
        if c > 1 {
            return Err(Error::invalid(format!("cluster id {c} outside {{0, 1}}")));
        }
        total[c] += 1;
        fake[c] += usize::from(l.is_fake());
    }
    if let Some(empty) = total.iter().position(|&t| t == 0) {
        return Err(Error::Degenerate(format!("cluster {empty} is empty")));
    }
    let mut majority = [Label::Real; 2];
    let mut fractions = [0.0; 2];
    for c in 0..2 {
        let fake_frac = fake[c] as f64 / total[c] as f64;
        if fake_frac >= 0.5 {
            majority[c] = Label::Fake;
            fractions[c] = fake_frac;
        } else {
            fractions[c] = (total[c] - fake[c]) as f64 / total[c] as f64;
        }
    }
    let decided_by = if fractions[1] > fractions[0] { 1 } else { 0 };
    let mut cluster_labels = [Label::Real; 2];
    cluster_labels[decided_by] = majority[decided_by];
    cluster_labels[1 - decided_by] = majority[decided_by].opposite();
    Ok(Vote {
        cluster_labels,
        majority,
        fractions,
        decided_by,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub source: String,
    pub n: usize,
    pub assignment: Vec<usize>,
    pub cluster_labels: [Label; 2],
    pub vote_fractions: [f64; 2],
    pub decided_by: usize,
    /// Accuracy of the cluster-propagated labels.
    pub accuracy: f64,
    /// Accuracy of the per-row probe labels, for comparison.
    pub probe_accuracy: f64,
}

/// Runs the clustering benchmark over `rows` of `store`.
pub fn cluster_detect_rows(
    store: &FeatureStore,
    rows: &[usize],
    source: &str,
    model: &LinearModel,
    cfg: &ClusterConfig,
) -> Result<ClusterVerdict> {
    cfg.validate()?;
    if model.classes().len() != 2 {
        return Err(Error::invalid("clustering detection needs a binary probe"));
    }
    let features = model.features(store, rows)?;
    let reduced = match cfg.reducer {
        Reducer::Pca => {
            // Small sources cannot support the full target dimension.
            let target = cfg.reduce_dim.min(rows.len().saturating_sub(1)).min(features.ncols());
            reduce_dim(&features, target)?
        }
        Reducer::None => features.clone(),
    };
    let km = kmeans2(&reduced, &cfg.kmeans())?;
    let probe: Vec<Label> = model
        .predict_labels(&features)?
        .into_iter()
        .map(|c| if c == 1 { Label::Fake } else { Label::Real })
        .collect();
    let vote = cluster_vote(&km.assignment, &probe)?;
    let truth: Vec<Label> = rows.iter().map(|&r| store.manifest()[r].label).collect();
    let predicted: Vec<Label> = km.assignment.iter().map(|&c| vote.cluster_labels[c]).collect();
    let n = rows.len();
    let hits = |pred: &[Label]| truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / n as f64;
    Ok(ClusterVerdict {
        source: source.to_string(),
        n,
        accuracy: hits(&predicted),
        probe_accuracy: hits(&probe),
        assignment: km.assignment,
        cluster_labels: vote.cluster_labels,
        vote_fractions: vote.fractions,
        decided_by: vote.decided_by,
    })
}

/// Clusters the whole store as one source.
pub fn cluster_detect(store: &FeatureStore, model: &LinearModel, cfg: &ClusterConfig) -> Result<ClusterVerdict> {
    let rows: Vec<usize> = (0..store.len()).collect();
    let name = store.sources().join("+");
    cluster_detect_rows(store, &rows, &name, model, cfg)
}

/// One verdict per source group of `store`.
pub fn cluster_detect_by_source(
    store: &FeatureStore,
    model: &LinearModel,
    cfg: &ClusterConfig,
) -> Result<Vec<ClusterVerdict>> {
    store
        .source_groups()
        .iter()
        .map(|g| cluster_detect_rows(store, &g.rows, &g.name, model, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Fake as F, Real as R};

    fn labels(n_real: usize, n_fake: usize) -> Vec<Label> {
        let mut v = vec![R; n_real];
        v.extend(vec![F; n_fake]);
        v
    }

    #[test]
    fn worked_example_first_cluster_decides() {
        // Cluster 0: 60% real. Cluster 1: 51% fake.
        let mut assignment = vec![0; 100];
        assignment.extend(vec![1; 100]);
        let mut probe = labels(60, 40);
        probe.extend(labels(49, 51));
        let v = cluster_vote(&assignment, &probe).unwrap();
        assert_eq!(v.decided_by, 0);
        assert_eq!(v.cluster_labels, [R, F]);
        assert_eq!(v.fractions, [0.6, 0.51]);
    }

    #[test]
    fn both_fake_majorities_still_split() {
        let mut assignment = vec![0; 10];
        assignment.extend(vec![1; 10]);
        let mut probe = labels(1, 9);
        probe.extend(labels(3, 7));
        let v = cluster_vote(&assignment, &probe).unwrap();
        assert_eq!(v.cluster_labels, [F, R]);
        assert_eq!(v.decided_by, 0);
    }

    #[test]
    fn fifty_fifty_loses_to_clear_majority() {
        let mut assignment = vec![0; 10];
        assignment.extend(vec![1; 10]);
        let mut probe = labels(5, 5);
        probe.extend(labels(8, 2));
        let v = cluster_vote(&assignment, &probe).unwrap();
        assert_eq!(v.decided_by, 1);
        assert_eq!(v.cluster_labels, [F, R]);
    }

    #[test]
    fn equal_fractions_cluster_zero_decides() {
        let v = cluster_vote(&[0, 0, 1, 1], &[R, R, R, R]).unwrap();
        assert_eq!(v.decided_by, 0);
        assert_eq!(v.cluster_labels, [R, F]);
    }

    #[test]
    fn empty_cluster_is_error() {
        assert!(cluster_vote(&[0, 0, 0], &[R, F, R]).is_err());
    }
}
