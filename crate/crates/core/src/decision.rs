//! Hierarchical three-way verdict for a test activation.
//!
//! 1. Pick the top-2 candidate classes (largest logits, or smallest distances).
//! 2. Outlier test: compare the squared distance to the joint Gaussian of the
//!    two candidates against `df + sqrt(2 df)`.
//! 3. Otherwise, if the two class distances are within `k_percent` of each
//!    other the point is uncertain, else certain for the top class.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::real17;
use crate::geometry::{joint_distance_sq, joint_stats, mahalanobis_diag, outlier_threshold};
use crate::kav_store::{ClassId, KavRecord};
use crate::stats::FittedModel;

pub const DEFAULT_K_PERCENT: f64 = 0.10;

/// Direction of the outlier comparison against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// Outlier iff `d_joint² <= threshold`.
    #[default]
    AsWrittenBelow,
    /// Outlier iff `d_joint² > threshold`, i.e. outside the μ + σ band.
    ProseAbove,
}

impl Orientation {
    pub fn is_outlier(self, d_joint_sq: f64, threshold: f64) -> bool {
        match self {
            Orientation::AsWrittenBelow => d_joint_sq <= threshold,
            Orientation::ProseAbove => d_joint_sq > threshold,
        }
    }
}

/// Where the top-2 candidate classes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Top2Source {
    /// Logits when the record carries them, distances otherwise.
    #[default]
    Auto,
    Logits,
    MinDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionConfig {
    pub k_percent: f64,
    pub orientation: Orientation,
    pub top2_source: Top2Source,
    /// Degrees of freedom of the χ² law; the kav dimension.
    pub df: u64,
}

impl DecisionConfig {
    /// Defaults with `df` taken from the model dimension.
    pub fn for_model(model: &FittedModel) -> Self {
        Self {
            k_percent: DEFAULT_K_PERCENT,
            orientation: Orientation::default(),
            top2_source: Top2Source::default(),
            df: model.dim() as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.k_percent.is_finite() || !(0.0..=1.0).contains(&self.k_percent) {
            return Err(Error::usage(format!(
                "k_percent must lie in [0, 1], got {}",
                self.k_percent
            )));
        }
        if self.df == 0 {
            return Err(Error::usage("df must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Certain,
    Uncertain,
    Outlier,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Certain => "certain",
            Category::Uncertain => "uncertain",
            Category::Outlier => "outlier",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "certain" => Ok(Category::Certain),
            "uncertain" => Ok(Category::Uncertain),
            "outlier" => Ok(Category::Outlier),
            other => Err(Error::format(format!("unknown category {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub record_index: u64,
    pub category: Category,
    pub top1: ClassId,
    pub top2: ClassId,
    pub d1: f64,
    pub d2: f64,
    pub d_joint_sq: f64,
    pub threshold: f64,
    /// `-d1`; larger means closer to the predicted class.
    pub confidence: f64,
}

/// `|d1 − d2| / max(d1, d2)`, with `0/0` taken as 0.
pub fn closeness_ratio(d1: f64, d2: f64) -> f64 {
    let hi = d1.max(d2);
    if hi == 0.0 {
        0.0
    } else {
        (d1 - d2).abs() / hi
    }
}

/// Indices of the two largest values, lower index first on ties.
fn top2_by<F>(
    candidates: impl Iterator<Item = (ClassId, f64)>,
    better: F,
) -> Option<(ClassId, ClassId)>
where
    F: Fn(f64, f64) -> bool,
{
    let mut best: Option<(ClassId, f64)> = None;
    let mut second: Option<(ClassId, f64)> = None;
    for (id, v) in candidates {
        match best {
            Some((_, b)) if !better(v, b) => match second {
                Some((_, s)) if !better(v, s) => {}
                _ => second = Some((id, v)),
            },
            _ => {
                second = best;
                best = Some((id, v));
            }
        }
    }
    Some((best?.0, second?.0))
}

fn distances(kav: &[f64], model: &FittedModel) -> Result<Vec<(ClassId, f64)>> {
    model
        .classes()
        .map(|c| Ok((c.class_id, mahalanobis_diag(kav, c)?)))
        .collect()
}

/// The two candidate classes for `record`, best first.
pub fn select_top2(
    record: &KavRecord,
    model: &FittedModel,
    config: &DecisionConfig,
) -> Result<(ClassId, ClassId)> {
    select_top2_with(record, &record.kav_f64(), model, config)
}

fn select_top2_with(
    record: &KavRecord,
    kav: &[f64],
    model: &FittedModel,
    config: &DecisionConfig,
) -> Result<(ClassId, ClassId)> {
    if model.num_classes() < 2 {
        return Err(Error::usage(format!(
            "decision needs at least 2 classes, model has {}",
            model.num_classes()
        )));
    }
    let use_logits = match config.top2_source {
        Top2Source::Logits => true,
        Top2Source::MinDistance => false,
        Top2Source::Auto => record.logits.is_some(),
    };
    if use_logits {
        let logits = record.logits.as_ref().ok_or_else(|| {
            Error::usage(format!(
                "record {}: top-2 from logits requested but the record has none",
                record.record_index
            ))
        })?;
        if logits.iter().any(|v| v.is_nan()) {
            return Err(Error::usage(format!(
                "record {}: NaN logit",
                record.record_index
            )));
        }
        let (a, b) = top2_by(
            logits
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as ClassId, f64::from(v))),
            |v, cur| v > cur,
        )
        .ok_or_else(|| Error::usage("need at least two logits"))?;
        for id in [a, b] {
            if model.class(id).is_none() {
                return Err(Error::usage(format!(
                    "record {}: logit class {id} has no fitted statistics",
                    record.record_index
                )));
            }
        }
        Ok((a, b))
    } else {
        let d = distances(kav, model)?;
        Ok(top2_by(d.into_iter(), |v, cur| v < cur).expect("at least two classes"))
    }
}

pub fn decide(record: &KavRecord, model: &FittedModel, config: &DecisionConfig) -> Result<Verdict> {
    config.validate()?;
    if record.kav.len() != model.dim() {
        return Err(Error::usage(format!(
            "record {}: kav length {} does not match model dim {}",
            record.record_index,
            record.kav.len(),
            model.dim()
        )));
    }
    let kav = record.kav_f64();
    let (top1, top2) = select_top2_with(record, &kav, model, config)?;
    let (s1, s2) = (model.class(top1).unwrap(), model.class(top2).unwrap());
    let d1 = mahalanobis_diag(&kav, s1)?;
    let d2 = mahalanobis_diag(&kav, s2)?;
    let d_joint_sq = joint_distance_sq(&kav, &joint_stats(s1, s2)?)?;
    let threshold = outlier_threshold(config.df)?;

    let category = if config.orientation.is_outlier(d_joint_sq, threshold) {
        Category::Outlier
    } else if closeness_ratio(d1, d2) <= config.k_percent {
        Category::Uncertain
    } else {
        Category::Certain
    };
    Ok(Verdict {
        record_index: record.record_index,
        category,
        top1,
        top2,
        d1,
        d2,
        d_joint_sq,
        threshold,
        confidence: -d1,
    })
}

/// Applies [`decide`] to every record in parallel, preserving order.
///
/// On failure, the error of the lowest-indexed failing record is returned.
pub fn decide_batch(
    records: &[KavRecord],
    model: &FittedModel,
    config: &DecisionConfig,
) -> Result<Vec<Verdict>> {
    config.validate()?;
    let results: Vec<Result<Verdict>> = records
        .par_iter()
        .map(|r| decide(r, model, config))
        .collect();
    results.into_iter().collect()
}

pub const VERDICT_HEADER: &str =
    "record_index,category,top1,top2,d1,d2,d_joint_sq,threshold,confidence";

/// Writes verdicts as CSV, reals at 17 significant digits.
pub struct VerdictWriter<W: Write> {
    sink: W,
}

impl<W: Write> VerdictWriter<W> {
    pub fn new(mut sink: W) -> Result<Self> {
        writeln!(sink, "{VERDICT_HEADER}")?;
        Ok(Self { sink })
    }

    pub fn write(&mut self, v: &Verdict) -> Result<()> {
        writeln!(
            self.sink,
            "{},{},{},{},{},{},{},{},{}",
            v.record_index,
            v.category,
            v.top1,
            v.top2,
            real17(v.d1),
            real17(v.d2),
            real17(v.d_joint_sq),
            real17(v.threshold),
            real17(v.confidence)
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

pub fn write_verdicts<W: Write>(verdicts: &[Verdict], sink: W) -> Result<()> {
    let mut w = VerdictWriter::new(sink)?;
    for v in verdicts {
        w.write(v)?;
    }
    w.finish().map(drop)
}

pub fn read_verdicts<R: Read>(source: R) -> Result<Vec<Verdict>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != VERDICT_HEADER {
        return Err(Error::format(format!(
            "line 1: verdict header must be `{VERDICT_HEADER}`"
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::format(format!("line {line}: bad {what}"));
        let real = |i: usize, what: &str| row[i].parse::<f64>().map_err(|_| bad(what));
        out.push(Verdict {
            record_index: row[0].parse().map_err(|_| bad("record_index"))?,
            category: row[1].parse().map_err(|_| bad("category"))?,
            top1: row[2].parse().map_err(|_| bad("top1"))?,
            top2: row[3].parse().map_err(|_| bad("top2"))?,
            d1: real(4, "d1")?,
            d2: real(5, "d2")?,
            d_joint_sq: real(6, "d_joint_sq")?,
            threshold: real(7, "threshold")?,
            confidence: real(8, "confidence")?,
        });
    }
    Ok(out)
}
