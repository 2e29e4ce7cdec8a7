//! Per-class diagonal Gaussian fitting in a single pass over the data.
//!
//! Each class keeps a running count, Σ kav and Σ kav² in 64-bit. Finalizing
//! gives the mean and the population variance `Σ kav²/N − mean²`, floored at
//! `variance_floor`. The two-moment form loses relative precision when
//! `|mean| >> std`; the floor also absorbs the small negative values this
//! cancellation can produce.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kav_store::{ClassId, KavDataset, KavRecord};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;
pub const STATS_FORMAT: &str = "kav-stats/1";
pub const ACCUMULATORS_FORMAT: &str = "kav-accumulators/1";

/// Running moments for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    pub class_id: ClassId,
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(class_id: ClassId, dim: usize) -> Self {
        Self {
            class_id,
            count: 0,
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn accumulate(&mut self, record: &KavRecord) -> Result<()> {
        if record.label != Some(self.class_id) {
            return Err(Error::usage(format!(
                "record {}: label {:?} does not belong to class {}",
                record.record_index, record.label, self.class_id
            )));
        }
        if record.kav.len() != self.dim() {
            return Err(Error::format(format!(
                "record {}: kav length {} does not match dim {}",
                record.record_index,
                record.kav.len(),
                self.dim()
            )));
        }
        self.add(&record.kav);
        Ok(())
    }

    fn add(&mut self, kav: &[f32]) {
        self.count += 1;
        for ((s, q), &v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(kav) {
            let v = f64::from(v);
            *s += v;
            *q += v * v;
        }
    }

    /// Folds `other` into `self`.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.class_id != other.class_id {
            return Err(Error::usage(format!(
                "cannot merge class {} into class {}",
                other.class_id, self.class_id
            )));
        }
        if self.dim() != other.dim() {
            return Err(Error::usage(format!(
                "cannot merge dim {} into dim {}",
                other.dim(),
                self.dim()
            )));
        }
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        Ok(())
    }

    pub fn finalize(&self, variance_floor: f64) -> Result<ClassStats> {
        check_floor(variance_floor)?;
        if self.count == 0 {
            return Err(Error::usage(format!("empty class {}", self.class_id)));
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let variance = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(variance_floor))
            .collect();
        Ok(ClassStats {
            class_id: self.class_id,
            count: self.count,
            mean,
            variance,
            variance_floor,
        })
    }
}

fn check_floor(variance_floor: f64) -> Result<()> {
    if variance_floor > 0.0 && variance_floor.is_finite() {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "variance floor must be positive and finite, got {variance_floor}"
        )))
    }
}

/// Finalized mean and (floored, population) variance of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class_id: ClassId,
    pub count: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub variance_floor: f64,
}

impl ClassStats {
    /// Builds stats directly, flooring the variances.
    pub fn new(
        class_id: ClassId,
        count: u64,
        mean: Vec<f64>,
        variance: Vec<f64>,
        variance_floor: f64,
    ) -> Result<Self> {
        check_floor(variance_floor)?;
        if mean.len() != variance.len() || mean.is_empty() {
            return Err(Error::usage(format!(
                "class {class_id}: mean length {} and variance length {} must match and be positive",
                mean.len(),
                variance.len()
            )));
        }
        if mean.iter().chain(&variance).any(|v| !v.is_finite()) {
            return Err(Error::usage(format!(
                "class {class_id}: non-finite mean or variance"
            )));
        }
        let variance = variance
            .into_iter()
            .map(|v| v.max(variance_floor))
            .collect();
        Ok(Self {
            class_id,
            count,
            mean,
            variance,
            variance_floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// The fitted per-class Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    dim: usize,
    variance_floor: f64,
    classes: BTreeMap<ClassId, ClassStats>,
}

impl FittedModel {
    pub fn from_classes(
        dim: usize,
        variance_floor: f64,
        classes: impl IntoIterator<Item = ClassStats>,
    ) -> Result<Self> {
        check_floor(variance_floor)?;
        if dim == 0 {
            return Err(Error::usage("dim must be positive"));
        }
        let mut map = BTreeMap::new();
        for c in classes {
            if c.dim() != dim {
                return Err(Error::usage(format!(
                    "class {} has dim {}, model dim is {dim}",
                    c.class_id,
                    c.dim()
                )));
            }
            if map.insert(c.class_id, c).is_some() {
                return Err(Error::usage("duplicate class id"));
            }
        }
        Ok(Self {
            dim,
            variance_floor,
            classes: map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    pub fn classes(&self) -> impl ExactSizeIterator<Item = &ClassStats> {
        self.classes.values()
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassStats> {
        self.classes.get(&id)
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.keys().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Accumulators for every class seen so far; the unit that shards merge.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccumulators {
    dim: usize,
    classes: BTreeMap<ClassId, MomentAccumulator>,
}

impl ClassAccumulators {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("dim must be positive"));
        }
        Ok(Self {
            dim,
            classes: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, class_id: ClassId) -> Option<&MomentAccumulator> {
        self.classes.get(&class_id)
    }

    pub fn accumulate(&mut self, record: &KavRecord) -> Result<()> {
        let Some(label) = record.label else {
            return Err(Error::usage(format!(
                "record {}: unlabeled record in training data",
                record.record_index
            )));
        };
        let dim = self.dim;
        self.classes
            .entry(label)
            .or_insert_with(|| MomentAccumulator::new(label, dim))
            .accumulate(record)
    }

    pub fn merge(&mut self, other: &ClassAccumulators) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::usage(format!(
                "cannot merge dim {} into dim {}",
                other.dim, self.dim
            )));
        }
        for (id, acc) in &other.classes {
            match self.classes.get_mut(id) {
                Some(mine) => mine.merge(acc)?,
                None => {
                    self.classes.insert(*id, acc.clone());
                }
            }
        }
        Ok(())
    }

    /// Finalizes every class. Classes with no records are skipped.
    pub fn finalize(&self, variance_floor: f64) -> Result<FittedModel> {
        let classes = self
            .classes
            .values()
            .filter(|a| a.count > 0)
            .map(|a| a.finalize(variance_floor))
            .collect::<Result<Vec<_>>>()?;
        FittedModel::from_classes(self.dim, variance_floor, classes)
    }

    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        let doc = AccumulatorsFile {
            format: ACCUMULATORS_FORMAT.into(),
            dim: self.dim,
            classes: self.classes.values().cloned().collect(),
        };
        write_json(sink, &doc)
    }

    pub fn read_json<R: Read>(source: R) -> Result<Self> {
        let doc: AccumulatorsFile = serde_json::from_reader(source)?;
        if doc.format != ACCUMULATORS_FORMAT {
            return Err(Error::format(format!(
                "expected format {ACCUMULATORS_FORMAT:?}, found {:?}",
                doc.format
            )));
        }
        let mut out = ClassAccumulators::new(doc.dim).map_err(into_format)?;
        for acc in doc.classes {
            if acc.dim() != doc.dim || acc.sum_sq.len() != doc.dim {
                return Err(Error::format(format!(
                    "class {}: vector length does not match dim {}",
                    acc.class_id, doc.dim
                )));
            }
            if out.classes.insert(acc.class_id, acc).is_some() {
                return Err(Error::format("duplicate class id"));
            }
        }
        Ok(out)
    }
}

/// Accumulates a record stream in one pass. Iteration stops at the first error.
pub fn accumulate_all<I>(records: I, dim: usize) -> Result<ClassAccumulators>
where
    I: IntoIterator<Item = Result<KavRecord>>,
{
    let mut accs = ClassAccumulators::new(dim)?;
    for record in records {
        accs.accumulate(&record?)?;
    }
    Ok(accs)
}

/// Fits the model from a single pass over `records`.
pub fn fit<I>(records: I, dim: usize, variance_floor: f64) -> Result<FittedModel>
where
    I: IntoIterator<Item = Result<KavRecord>>,
{
    check_floor(variance_floor)?;
    accumulate_all(records, dim)?.finalize(variance_floor)
}

pub fn fit_dataset(dataset: &KavDataset, variance_floor: f64) -> Result<FittedModel> {
    fit(
        dataset.records().iter().cloned().map(Ok),
        dataset.dim() as usize,
        variance_floor,
    )
}

/// Fits over `shards` contiguous partitions in parallel, merging in shard order.
///
/// The result depends only on the data and `shards`, not on thread scheduling.
pub fn fit_sharded(
    dataset: &KavDataset,
    shards: usize,
    variance_floor: f64,
) -> Result<FittedModel> {
    if shards == 0 {
        return Err(Error::usage("shard count must be positive"));
    }
    check_floor(variance_floor)?;
    let records = dataset.records();
    let dim = dataset.dim() as usize;
    let chunk = records.len().div_ceil(shards).max(1);
    let partials = records
        .par_chunks(chunk)
        .map(|part| {
            let mut accs = ClassAccumulators::new(dim)?;
            for r in part {
                accs.accumulate(r)?;
            }
            Ok(accs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ClassAccumulators::new(dim)?;
    for p in &partials {
        total.merge(p)?;
    }
    total.finalize(variance_floor)
}

#[derive(Serialize, Deserialize)]
struct AccumulatorsFile {
    format: String,
    dim: usize,
    classes: Vec<MomentAccumulator>,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    format: String,
    dim: usize,
    variance_floor: f64,
    classes: Vec<StatsEntry>,
}

#[derive(Serialize, Deserialize)]
struct StatsEntry {
    id: ClassId,
    count: u64,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

fn into_format(e: Error) -> Error {
    match e {
        Error::Usage(m) => Error::Format(m),
        other => other,
    }
}

pub(crate) fn write_json<W: Write, T: Serialize>(mut sink: W, doc: &T) -> Result<()> {
    serde_json::to_writer(&mut sink, doc)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

/// Serializes the model as a `kav-stats/1` JSON document.
pub fn write_stats<W: Write>(model: &FittedModel, sink: W) -> Result<()> {
    let doc = StatsFile {
        format: STATS_FORMAT.into(),
        dim: model.dim,
        variance_floor: model.variance_floor,
        classes: model
            .classes()
            .map(|c| StatsEntry {
                id: c.class_id,
                count: c.count,
                mean: c.mean.clone(),
                variance: c.variance.clone(),
            })
            .collect(),
    };
    write_json(sink, &doc)
}

pub fn read_stats<R: Read>(source: R) -> Result<FittedModel> {
    let doc: StatsFile = serde_json::from_reader(source)?;
    if doc.format != STATS_FORMAT {
        return Err(Error::format(format!(
            "expected format {STATS_FORMAT:?}, found {:?}",
            doc.format
        )));
    }
    let classes = doc
        .classes
        .into_iter()
        .map(|c| {
            if c.count == 0 {
                return Err(Error::format(format!(
                    "class {}: count must be positive",
                    c.id
                )));
            }
            ClassStats::new(c.id, c.count, c.mean, c.variance, doc.variance_floor)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(into_format)?;
    FittedModel::from_classes(doc.dim, doc.variance_floor, classes).map_err(into_format)
}
