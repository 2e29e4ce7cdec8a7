#![allow(dead_code)]

use kavguard::{KavDataset, KavRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn assert_rel_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            rel_close(*x, *y, tol),
            "{what}[{i}]: {x} vs {y} (tol {tol})"
        );
    }
}

/// Labeled dataset: class `c` has mean `1 + c + 0.01 * k` and std `0.5 + 0.1 * c` in dimension k.
pub fn labeled_dataset(seed: u64, n: usize, dim: usize, classes: u32) -> KavDataset {
    let mut r = rng(seed);
    let mut d = KavDataset::new(dim as u32, classes, false).unwrap();
    for _ in 0..n {
        let c = r.random_range(0..classes);
        let kav = (0..dim)
            .map(|k| {
                let z: f64 = StandardNormal.sample(&mut r);
                (1.0 + c as f64 + 0.01 * k as f64 + (0.5 + 0.1 * c as f64) * z) as f32
            })
            .collect();
        d.push(Some(c), None, kav).unwrap();
    }
    d
}

/// Textbook two-pass per-class mean and population variance.
pub fn two_pass(records: &[KavRecord], dim: usize, class: u32) -> (Vec<f64>, Vec<f64>) {
    let members: Vec<&KavRecord> = records.iter().filter(|r| r.label == Some(class)).collect();
    let n = members.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &members {
        for (m, &v) in mean.iter_mut().zip(&r.kav) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in &members {
        for ((s, &v), m) in var.iter_mut().zip(&r.kav).zip(&mean) {
            let d = f64::from(v) - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Quadratic form (x − μ)ᵀ Σ⁻¹ (x − μ) with Σ inverted by Gauss–Jordan elimination.
pub fn dense_mahalanobis_sq(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut a: Vec<Vec<f64>> = cov.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[row][j] -= f * a[col][j];
                        inv[row][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    (0..n)
        .map(|i| d[i] * (0..n).map(|j| inv[i][j] * d[j]).sum::<f64>())
        .sum()
}

pub fn diag_matrix(v: &[f64]) -> Vec<Vec<f64>> {
    (0..v.len())
        .map(|i| {
            (0..v.len())
                .map(|j| if i == j { v[i] } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Double-double accumulator (error-free TwoSum), ~106-bit significand.
#[derive(Default, Clone, Copy)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        let lo = self.lo + err;
        self.hi = s + lo;
        self.lo = lo - (self.hi - s);
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

pub fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).unwrap()
}
