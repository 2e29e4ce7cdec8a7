//! Distances between activation vectors and fitted class Gaussians.
//!
//! Everything here assumes diagonal covariances and works in 64-bit.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::real_sig;
use crate::kav_store::ClassId;
use crate::stats::{ClassStats, FittedModel};

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::usage(format!("dimension mismatch: {a} vs {b}")))
    }
}

fn check_finite(kav: &[f64]) -> Result<()> {
    match kav.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::usage(format!("non-finite kav value at element {i}"))),
    }
}

/// Σ (x − μ)² / σ² over matched slices. Callers check lengths.
fn squared_scaled(kav: &[f64], mean: &[f64], variance: &[f64]) -> f64 {
    kav.iter()
        .zip(mean)
        .zip(variance)
        .map(|((x, m), v)| {
            let d = x - m;
            d * d / v
        })
        .sum()
}

/// Squared diagonal Mahalanobis distance of `kav` from `stats`.
pub fn mahalanobis_diag_sq(kav: &[f64], stats: &ClassStats) -> Result<f64> {
    check_dims(kav.len(), stats.dim())?;
    check_finite(kav)?;
    Ok(squared_scaled(kav, &stats.mean, &stats.variance))
}

/// Diagonal Mahalanobis distance: the norm of [`standardize`]`(kav, stats)`.
pub fn mahalanobis_diag(kav: &[f64], stats: &ClassStats) -> Result<f64> {
    mahalanobis_diag_sq(kav, stats).map(f64::sqrt)
}

/// `(kav − μ) / σ` elementwise.
pub fn standardize(kav: &[f64], stats: &ClassStats) -> Result<Vec<f64>> {
    check_dims(kav.len(), stats.dim())?;
    check_finite(kav)?;
    Ok(kav
        .iter()
        .zip(&stats.mean)
        .zip(&stats.variance)
        .map(|((x, m), v)| (x - m) / v.sqrt())
        .collect())
}

/// Gaussian of the sum of two independent class variables.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStats {
    pub mean_joint: Vec<f64>,
    pub variance_joint: Vec<f64>,
}

pub fn joint_stats(a: &ClassStats, b: &ClassStats) -> Result<JointStats> {
    check_dims(a.dim(), b.dim())?;
    Ok(JointStats {
        mean_joint: a.mean.iter().zip(&b.mean).map(|(x, y)| x + y).collect(),
        variance_joint: a
            .variance
            .iter()
            .zip(&b.variance)
            .map(|(x, y)| x + y)
            .collect(),
    })
}

pub fn joint_distance_sq(kav: &[f64], joint: &JointStats) -> Result<f64> {
    check_dims(kav.len(), joint.mean_joint.len())?;
    check_finite(kav)?;
    Ok(squared_scaled(
        kav,
        &joint.mean_joint,
        &joint.variance_joint,
    ))
}

pub fn joint_distance(kav: &[f64], joint: &JointStats) -> Result<f64> {
    joint_distance_sq(kav, joint).map(f64::sqrt)
}

/// Cut on squared distances: `df + sqrt(2 df)`, the mean plus one standard
/// deviation of the normal approximation N(df, 2 df) to χ²_df.
pub fn outlier_threshold(df: u64) -> Result<f64> {
    if df == 0 {
        return Err(Error::usage("degrees of freedom must be at least 1"));
    }
    let df = df as f64;
    Ok(df + (2.0 * df).sqrt())
}

/// Bhattacharyya distance between two diagonal Gaussians.
///
/// Uses the average covariance `(σ₁² + σ₂²)/2`. The log-determinant term is
/// summed per dimension as `¼ Σ (2 ln((σ₁² + σ₂²)/2) − ln σ₁² − ln σ₂²)` so it
/// never forms a product of variances.
pub fn bhattacharyya_diag(a: &ClassStats, b: &ClassStats) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let mut mean_term = 0.0;
    let mut log_term = 0.0;
    for i in 0..a.dim() {
        let (v1, v2) = (a.variance[i], b.variance[i]);
        let avg = 0.5 * (v1 + v2);
        let d = a.mean[i] - b.mean[i];
        mean_term += d * d / avg;
        log_term += 2.0 * avg.ln() - (v1.ln() + v2.ln());
    }
    Ok(mean_term / 8.0 + log_term / 4.0)
}

/// Symmetric matrix of pairwise Bhattacharyya distances.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    class_ids: Vec<ClassId>,
    values: Vec<f64>,
}

impl OverlapMatrix {
    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Entry at positions `(i, j)` in `class_ids` order.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// CSV with class ids on the first row and column; cells at 6 significant digits.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut line = String::from("class");
        for id in &self.class_ids {
            line.push_str(&format!(",{id}"));
        }
        writeln!(sink, "{line}")?;
        for (i, id) in self.class_ids.iter().enumerate() {
            line = id.to_string();
            for v in self.row(i) {
                line.push(',');
                line.push_str(&real_sig(*v, 6));
            }
            writeln!(sink, "{line}")?;
        }
        sink.flush()?;
        Ok(())
    }
}

/// Computes every unordered class pair once and mirrors it.
pub fn overlap_matrix(model: &FittedModel) -> Result<OverlapMatrix> {
    let classes: Vec<&ClassStats> = model.classes().collect();
    let n = classes.len();
    if n < 2 {
        return Err(Error::usage(format!(
            "overlap needs at least 2 classes, model has {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| bhattacharyya_diag(classes[i], classes[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(OverlapMatrix {
        class_ids: classes.iter().map(|c| c.class_id).collect(),
        values,
    })
}
