//! Per-class store of the training records closest to their own class Gaussian.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mahalanobis_diag;
use crate::kav_store::{ClassId, KavRecord};
use crate::stats::{write_json, FittedModel};

pub const MEMBERS_FORMAT: &str = "kav-members/1";
pub const DEFAULT_MEMBERS: usize = 25;

/// A stored member: training record index and its distance to the class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub record_index: u64,
    pub distance: f64,
}

impl Eq for Member {}

impl Ord for Member {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.record_index.cmp(&other.record_index))
    }
}

impl PartialOrd for Member {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberStore {
    capacity: usize,
    source_file: String,
    classes: BTreeMap<ClassId, Vec<Member>>,
}

impl MemberStore {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn source_file(&self) -> &str {
        &self.source_file
    }

    pub fn set_source_file(&mut self, source: impl Into<String>) {
        self.source_file = source.into();
    }

    pub fn members(&self, class_id: ClassId) -> Option<&[Member]> {
        self.classes.get(&class_id).map(Vec::as_slice)
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.keys().copied().collect()
    }

    /// The first `m` stored record indices of a class, nearest first.
    pub fn retrieve(&self, class_id: ClassId, m: usize) -> Result<Vec<u64>> {
        if m == 0 {
            return Err(Error::usage("m must be positive"));
        }
        if m > self.capacity {
            return Err(Error::usage(format!(
                "m = {m} exceeds the store capacity M = {}",
                self.capacity
            )));
        }
        let list = self
            .classes
            .get(&class_id)
            .ok_or_else(|| Error::usage(format!("unknown class {class_id}")))?;
        Ok(list.iter().take(m).map(|e| e.record_index).collect())
    }

    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        let doc = MembersFile {
            format: MEMBERS_FORMAT.into(),
            m: self.capacity,
            source_file: self.source_file.clone(),
            classes: self
                .classes
                .iter()
                .map(|(id, v)| {
                    (
                        *id,
                        v.iter().map(|e| (e.record_index, e.distance)).collect(),
                    )
                })
                .collect(),
        };
        write_json(sink, &doc)
    }

    pub fn read_json<R: Read>(source: R) -> Result<Self> {
        let doc: MembersFile = serde_json::from_reader(source)?;
        if doc.format != MEMBERS_FORMAT {
            return Err(Error::format(format!(
                "expected format {MEMBERS_FORMAT:?}, found {:?}",
                doc.format
            )));
        }
        if doc.m == 0 {
            return Err(Error::format("M must be positive"));
        }
        let mut classes = BTreeMap::new();
        for (id, pairs) in doc.classes {
            let list: Vec<Member> = pairs
                .into_iter()
                .map(|(record_index, distance)| Member {
                    record_index,
                    distance,
                })
                .collect();
            if list.len() > doc.m || list.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::format(format!(
                    "class {id}: member list longer than M or not sorted"
                )));
            }
            classes.insert(id, list);
        }
        Ok(Self {
            capacity: doc.m,
            source_file: doc.source_file,
            classes,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MembersFile {
    format: String,
    #[serde(rename = "M")]
    m: usize,
    source_file: String,
    classes: BTreeMap<ClassId, Vec<(u64, f64)>>,
}

/// Keeps, per class, the `capacity` labeled records nearest their own class
/// under diagonal Mahalanobis distance; ties go to the lower record index.
pub fn build_member_store<I>(
    records: I,
    model: &FittedModel,
    capacity: usize,
) -> Result<MemberStore>
where
    I: IntoIterator<Item = Result<KavRecord>>,
{
    if capacity == 0 {
        return Err(Error::usage("member count M must be positive"));
    }
    // Max-heaps holding the current best `capacity` per class.
    let mut heaps: BTreeMap<ClassId, BinaryHeap<Member>> = BTreeMap::new();
    for record in records {
        let record = record?;
        let Some(label) = record.label else {
            return Err(Error::usage(format!(
                "record {}: unlabeled record in training data",
                record.record_index
            )));
        };
        let stats = model.class(label).ok_or_else(|| {
            Error::usage(format!(
                "record {}: class {label} is not in the fitted model",
                record.record_index
            ))
        })?;
        let candidate = Member {
            record_index: record.record_index,
            distance: mahalanobis_diag(&record.kav_f64(), stats)?,
        };
        let heap = heaps.entry(label).or_default();
        if heap.len() < capacity {
            heap.push(candidate);
        } else if heap.peek().is_some_and(|worst| candidate < *worst) {
            heap.pop();
            heap.push(candidate);
        }
    }
    Ok(MemberStore {
        capacity,
        source_file: String::new(),
        classes: heaps
            .into_iter()
            .map(|(id, h)| (id, h.into_sorted_vec()))
            .collect(),
    })
}
