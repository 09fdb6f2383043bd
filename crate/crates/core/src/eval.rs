//! Classification metrics and the Fréchet distance between feature sets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i][j]` = examples of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let k = class_names.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::invalid(format!("label pair ({t}, {p}) outside 0..{k}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts, class_names: class_names.to_vec() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub uar: f64,
    pub macro_f1: f64,
    pub class_names: Vec<String>,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.get(name)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest precision/recall/F1 per class, accuracy, UAR (mean recall)
/// and macro F1. Undefined ratios are 0.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics need at least one evaluated example"));
    }
    let k = cm.classes();
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let mut per_class = BTreeMap::new();
    let (mut recall_sum, mut f1_sum) = (0.0, 0.0);
    for i in 0..k {
        let tp = cm.counts[i][i];
        let predicted: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let actual: u64 = cm.counts[i].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = f1_score(precision, recall);
        recall_sum += recall;
        f1_sum += f1;
        per_class.insert(cm.class_names[i].clone(), ClassMetrics { precision, recall, f1 });
    }
    Ok(MetricsReport {
        accuracy: ratio(trace, total),
        per_class,
        uar: recall_sum / k as f64,
        macro_f1: f1_sum / k as f64,
        class_names: cm.class_names.clone(),
    })
}

const SYM_TOL: f64 = 1e-9;
const NEG_EIG_TOL: f64 = 1e-8;

/// Principal square root of a symmetric positive semidefinite matrix via
/// its eigendecomposition. Eigenvalues in `[-1e-8, 0)` (relative to the
/// spectrum's scale) are treated as zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("matrix square root of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYM_TOL * scale {
        return Err(Error::Numerical(format!("matrix is not symmetric (max deviation {asym:e})")));
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (r, &lambda) in roots.iter_mut().zip(eig.eigenvalues.iter()) {
        if lambda < -NEG_EIG_TOL * scale {
            return Err(Error::Numerical(format!("matrix has a negative eigenvalue {lambda:e}")));
        }
        *r = lambda.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FidStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
}

impl FidStats {
    /// Mean and unbiased covariance of the rows of `features`.
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::invalid(format!("FID needs at least 2 samples, got {n}")));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("feature rows must share one positive dimension".into()));
        }
        if n < d + 1 {
            log::warn!("only {n} samples for {d}-dimensional features; covariance is rank deficient");
        }
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let covariance = centered.transpose() * &centered / (n - 1) as f64;
        Ok(FidStats { mean, covariance, sample_count: n })
    }
}

/// `|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2))`, with the trace of
/// the product root taken through the symmetric `S_r^(1/2) S_g S_r^(1/2)`.
pub fn fid_from_stats(real: &FidStats, gen: &FidStats) -> Result<f64> {
    if real.mean.len() != gen.mean.len() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            real.mean.len(),
            gen.mean.len()
        )));
    }
    let diff = &real.mean - &gen.mean;
    let root_r = matrix_sqrt_psd(&real.covariance)?;
    let inner = &root_r * &gen.covariance * &root_r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let value = diff.norm_squared() + real.covariance.trace() + gen.covariance.trace() - 2.0 * cross;
    if value < -NEG_EIG_TOL * value.abs().max(1.0) {
        return Err(Error::Numerical(format!("FID evaluated to {value:e}")));
    }
    Ok(value.max(0.0))
}

pub fn fid(real_features: &[Vec<f64>], gen_features: &[Vec<f64>]) -> Result<f64> {
    fid_from_stats(&FidStats::from_features(real_features)?, &FidStats::from_features(gen_features)?)
}
