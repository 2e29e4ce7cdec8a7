//! Detection-quality metrics and plot-ready reports.

use std::io::Write;

use serde::Serialize;

use crate::decision::{Category, Verdict};
use crate::error::{Error, Result};
use crate::fmt::real17;
use crate::kav_store::ClassId;
use crate::stats::write_json;

/// Average (1-based) ranks of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank (i+1 + j)/2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// ROC curve plus its area.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub auroc: f64,
    /// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
    pub curve: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Trapezoidal area under `curve`.
    pub fn trapezoid_area(&self) -> f64 {
        self.curve
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    /// JSON report `{auroc, curve: [[fpr, tpr], ...]}`.
    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        write_json(sink, self)
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "fpr,tpr")?;
        for (f, t) in &self.curve {
            writeln!(sink, "{},{}", real17(*f), real17(*t))?;
        }
        sink.flush()?;
        Ok(())
    }
}

fn check_scores(scores: &[f64], side: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::usage(format!("{side} score set is empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::usage(format!("{side} scores must be finite")));
    }
    Ok(())
}

/// AUROC of `positives` against `negatives` (higher score = positive).
///
/// The area is the Mann–Whitney statistic with average ranks for ties; the
/// curve sweeps a threshold down through the distinct scores.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> Result<RocCurve> {
    check_scores(positives, "positive")?;
    check_scores(negatives, "negative")?;
    let (np, nn) = (positives.len(), negatives.len());

    let all: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    let ranks = average_ranks(&all);
    let rank_sum: f64 = ranks[..np].iter().sum();
    let u = rank_sum - (np * (np + 1)) as f64 / 2.0;
    let area = u / (np as f64 * nn as f64);

    let mut tagged: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < tagged.len() {
        let score = tagged[i].0;
        while i < tagged.len() && tagged[i].0 == score {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / nn as f64, tp as f64 / np as f64));
    }
    Ok(RocCurve { auroc: area, curve })
}

/// Fraction of verdicts labeled outlier.
pub fn outlier_rate(verdicts: &[Verdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::usage("no verdicts"));
    }
    let outliers = verdicts
        .iter()
        .filter(|v| v.category == Category::Outlier)
        .count();
    Ok(outliers as f64 / verdicts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyReport {
    /// Top-1 accuracy over every verdict.
    pub overall: f64,
    /// Top-1 accuracy among certain verdicts; `None` when there are none.
    pub certain_only: Option<f64>,
    /// Fraction of verdicts that are uncertain or outlier.
    pub abstain_rate: f64,
}

pub fn accuracy(verdicts: &[Verdict], truth: &[ClassId]) -> Result<AccuracyReport> {
    if verdicts.len() != truth.len() {
        return Err(Error::usage(format!(
            "{} verdicts but {} labels",
            verdicts.len(),
            truth.len()
        )));
    }
    if verdicts.is_empty() {
        return Err(Error::usage("no verdicts"));
    }
    let n = verdicts.len();
    let (mut correct, mut certain, mut certain_correct) = (0usize, 0usize, 0usize);
    for (v, &t) in verdicts.iter().zip(truth) {
        let hit = v.top1 == t;
        correct += usize::from(hit);
        if v.category == Category::Certain {
            certain += 1;
            certain_correct += usize::from(hit);
        }
    }
    Ok(AccuracyReport {
        overall: correct as f64 / n as f64,
        certain_only: (certain > 0).then(|| certain_correct as f64 / certain as f64),
        abstain_rate: (n - certain) as f64 / n as f64,
    })
}

/// Scores observed at one corruption level.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepLevel {
    pub noise_level: f64,
    /// Clean in-distribution reference scores.
    pub positives: Vec<f64>,
    /// Scores of the inputs corrupted at this level.
    pub negatives: Vec<f64>,
}

impl SweepLevel {
    /// Negatives are the verdict confidences.
    pub fn from_verdicts(noise_level: f64, positives: Vec<f64>, verdicts: &[Verdict]) -> Self {
        Self {
            noise_level,
            positives,
            negatives: verdicts.iter().map(|v| v.confidence).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub noise_level: f64,
    pub mean_confidence: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub levels: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "noise_level,mean_confidence,auc")?;
        for p in &self.levels {
            writeln!(
                sink,
                "{},{},{}",
                real17(p.noise_level),
                real17(p.mean_confidence),
                real17(p.auc)
            )?;
        }
        sink.flush()?;
        Ok(())
    }
}

/// Per level: mean confidence of the corrupted set and its AUROC against the
/// clean reference. Levels come back sorted ascending.
pub fn sweep_report(mut levels: Vec<SweepLevel>) -> Result<SweepReport> {
    if levels.len() < 2 {
        return Err(Error::usage("a sweep needs at least 2 noise levels"));
    }
    if levels.iter().any(|l| !l.noise_level.is_finite()) {
        return Err(Error::usage("noise levels must be finite"));
    }
    levels.sort_by(|a, b| a.noise_level.total_cmp(&b.noise_level));
    if levels
        .windows(2)
        .any(|w| w[0].noise_level == w[1].noise_level)
    {
        return Err(Error::usage("duplicate noise level"));
    }
    let points = levels
        .iter()
        .map(|l| {
            let roc = auroc(&l.positives, &l.negatives)?;
            Ok(SweepPoint {
                noise_level: l.noise_level,
                mean_confidence: l.negatives.iter().sum::<f64>() / l.negatives.len() as f64,
                auc: roc.auroc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { levels: points })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::usage(
            "spearman needs two equal-length series of length >= 2",
        ));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::usage("spearman undefined for a constant series"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
