//! Detection metrics and the Davies-Bouldin cluster validity index.
//!
//! Scores follow the convention "higher = more fake"; fake is the positive class.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Label;

/// Scores paired with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|l| l.is_fake()).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClass);
        }
        Ok((pos, neg))
    }

    /// Indices grouped by identical score, in descending score order.
    fn tie_groups(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some(g) if self.scores[g[0]] == self.scores[i] => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }

    fn flipped(&self) -> ScoredSet {
        ScoredSet {
            scores: self.scores.iter().map(|s| -s).collect(),
            labels: self.labels.iter().map(|l| l.opposite()).collect(),
        }
    }
}

fn check_pair(truth: &[Label], pred: &[Label]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::InsufficientData("empty label set".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    Ok(())
}

pub fn accuracy(truth: &[Label], pred: &[Label]) -> Result<f64> {
    check_pair(truth, pred)?;
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroPrecision {
    pub value: f64,
    pub precision_real: f64,
    pub precision_fake: f64,
    /// Classes that were never predicted; each contributes precision 0.
    pub never_predicted: Vec<Label>,
}

/// Mean of the real and fake precisions at the decision threshold.
pub fn macro_precision(truth: &[Label], pred: &[Label]) -> Result<MacroPrecision> {
    check_pair(truth, pred)?;
    let mut never_predicted = Vec::new();
    let mut precision = |class: Label| {
        let predicted = pred.iter().filter(|&&p| p == class).count();
        if predicted == 0 {
            never_predicted.push(class);
            return 0.0;
        }
        let hits = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **p == class && **t == class)
            .count();
        hits as f64 / predicted as f64
    };
    let precision_real = precision(Label::Real);
    let precision_fake = precision(Label::Fake);
    Ok(MacroPrecision {
        value: (precision_real + precision_fake) / 2.0,
        precision_real,
        precision_fake,
        never_predicted,
    })
}

/// Area under the precision-recall step curve, fake as positive.
/// Tied scores enter the ranking together.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let (pos, _) = set.require_both_classes()?;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for group in set.tie_groups() {
        seen += group.len();
        tp += group.iter().filter(|&&i| set.labels[i].is_fake()).count();
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mean of the AP with fake as positive and the AP with real as positive.
pub fn ranking_map(set: &ScoredSet) -> Result<f64> {
    Ok((average_precision(set)? + average_precision(&set.flipped())?) / 2.0)
}

/// Equal error rate.
///
/// Operating points are "accept as fake iff score >= t" for `t = +inf` and
/// every distinct score. FAR (reals accepted) rises and FRR (fakes rejected)
/// falls along that sweep; the EER is their common value where `FAR - FRR`
/// reaches zero, interpolated linearly between the two bracketing points.
pub fn eer(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.require_both_classes()?;
    let mut far = 0.0;
    let mut frr = 1.0;
    let mut accepted_fake = 0usize;
    let mut accepted_real = 0usize;
    for group in set.tie_groups() {
        let (prev_far, prev_frr) = (far, frr);
        for &i in &group {
            if set.labels[i].is_fake() {
                accepted_fake += 1;
            } else {
                accepted_real += 1;
            }
        }
        far = accepted_real as f64 / neg as f64;
        frr = 1.0 - accepted_fake as f64 / pos as f64;
        let diff = far - frr;
        if diff >= 0.0 {
            if diff == 0.0 {
                return Ok(far);
            }
            let prev_diff = prev_far - prev_frr;
            let t = -prev_diff / (diff - prev_diff);
            return Ok(prev_far + t * (far - prev_far));
        }
    }
    unreachable!("FAR - FRR reaches +1 at the last operating point")
}

/// Davies-Bouldin index with `sigma_i` the mean Euclidean distance of cluster
/// `i`'s points to its centroid. `assignment` holds ids `0..k`.
pub fn dbi(points: &Array2<f64>, assignment: &[usize]) -> Result<f64> {
    if points.nrows() != assignment.len() {
        return Err(Error::invalid(format!(
            "{} points but {} assignments",
            points.nrows(),
            assignment.len()
        )));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::InsufficientData("dbi needs at least 2 clusters".into()));
    }
    let d = points.ncols();
    let mut centroids = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (row, &c) in points.rows().into_iter().zip(assignment) {
        centroids.row_mut(c).scaled_add(1.0, &row);
        counts[c] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Degenerate(format!("empty cluster {empty}")));
    }
    for (mut c, &n) in centroids.rows_mut().into_iter().zip(&counts) {
        c /= n as f64;
    }
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut spread = Array1::<f64>::zeros(k);
    for (row, &c) in points.rows().into_iter().zip(assignment) {
        spread[c] += dist(row, centroids.row(c));
    }
    for (s, &n) in spread.iter_mut().zip(&counts) {
        *s /= n as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in (0..k).filter(|&j| j != i) {
            let sep = dist(centroids.row(i), centroids.row(j));
            if sep < 1e-12 {
                return Err(Error::Degenerate("degenerate centroids".into()));
            }
            worst = worst.max((spread[i] + spread[j]) / sep);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Metrics for one train/eval pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub n: usize,
    pub acc: f64,
    pub macro_precision: f64,
    /// Ranking AP, fake as positive. Empty when the set holds one class.
    pub ap: Option<f64>,
    /// Mean ranking AP over both classes as positive.
    pub ap_map: Option<f64>,
    pub eer: Option<f64>,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
    pub never_predicted_real: bool,
    pub never_predicted_fake: bool,
}

impl EvalReport {
    /// Builds a report from scores, deriving labels with `score >= threshold`.
    pub fn from_scores(source: impl Into<String>, truth: &[Label], scores: &[f64], threshold: f64) -> Result<Self> {
        let pred: Vec<Label> = scores
            .iter()
            .map(|&s| if s >= threshold { Label::Fake } else { Label::Real })
            .collect();
        let acc = accuracy(truth, &pred)?;
        let mp = macro_precision(truth, &pred)?;
        let set = ScoredSet::new(scores.to_vec(), truth.to_vec())?;
        let ranked = |f: fn(&ScoredSet) -> Result<f64>| match f(&set) {
            Ok(v) => Ok(Some(v)),
            Err(Error::SingleClass) => Ok(None),
            Err(e) => Err(e),
        };
        let mut confusion = [[0usize; 2]; 2];
        for (t, p) in truth.iter().zip(&pred) {
            confusion[usize::from(t.is_fake())][usize::from(p.is_fake())] += 1;
        }
        Ok(Self {
            source: source.into(),
            n: truth.len(),
            acc,
            macro_precision: mp.value,
            ap: ranked(average_precision)?,
            ap_map: ranked(ranking_map)?,
            eer: ranked(eer)?,
            tn: confusion[0][0],
            fp: confusion[0][1],
            fn_: confusion[1][0],
            tp: confusion[1][1],
            never_predicted_real: mp.never_predicted.contains(&Label::Real),
            never_predicted_fake: mp.never_predicted.contains(&Label::Fake),
        })
    }

    /// Unweighted mean of every metric over `reports`, with summed counts.
    pub fn average(source: impl Into<String>, reports: &[EvalReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InsufficientData("no reports to average".into()));
        }
        let k = reports.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        let mean_opt = |f: fn(&EvalReport) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = reports.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / k)
        };
        Ok(Self {
            source: source.into(),
            n: reports.iter().map(|r| r.n).sum(),
            acc: mean(|r| r.acc),
            macro_precision: mean(|r| r.macro_precision),
            ap: mean_opt(|r| r.ap),
            ap_map: mean_opt(|r| r.ap_map),
            eer: mean_opt(|r| r.eer),
            tn: reports.iter().map(|r| r.tn).sum(),
            fp: reports.iter().map(|r| r.fp).sum(),
            fn_: reports.iter().map(|r| r.fn_).sum(),
            tp: reports.iter().map(|r| r.tp).sum(),
            never_predicted_real: reports.iter().any(|r| r.never_predicted_real),
            never_predicted_fake: reports.iter().any(|r| r.never_predicted_fake),
        })
    }
}
