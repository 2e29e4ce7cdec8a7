//! KAV datasets and their on-disk encodings.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! header  : "KAVF" | version u16 = 1 | flags u16 | dim u32 | num_classes u32 | count u64
//! record  : label i32 | [num_classes x f32 logits, if flags & 1] | dim x f32 kav
//! ```
//!
//! Labels are stored as `-1` when a record is unlabeled.

use std::io::{self, BufRead, ErrorKind, Read, Write};

use crate::error::{Error, Result};
use crate::fmt::real17;

pub const MAGIC: &[u8; 4] = b"KAVF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 24;
pub const FLAG_HAS_LOGITS: u16 = 1;
pub const UNLABELED: i32 = -1;

/// Class identifier. Labels on disk are `i32`; `-1` maps to `None`.
pub type ClassId = u32;

/// One activation vector with its optional label and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct KavRecord {
    pub record_index: u64,
    pub label: Option<ClassId>,
    pub logits: Option<Vec<f32>>,
    pub kav: Vec<f32>,
}

impl KavRecord {
    pub fn new(record_index: u64, label: Option<ClassId>, kav: Vec<f32>) -> Self {
        Self {
            record_index,
            label,
            logits: None,
            kav,
        }
    }

    pub fn with_logits(mut self, logits: Vec<f32>) -> Self {
        self.logits = Some(logits);
        self
    }

    /// The kav widened to 64-bit for distance math.
    pub fn kav_f64(&self) -> Vec<f64> {
        self.kav.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Fixed per-file metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KavHeader {
    pub dim: u32,
    pub num_classes: u32,
    pub has_logits: bool,
    pub count: u64,
}

impl KavHeader {
    pub fn record_len(&self) -> u64 {
        let logits = if self.has_logits {
            u64::from(self.num_classes)
        } else {
            0
        };
        4 + 4 * (logits + u64::from(self.dim))
    }

    /// Exact size in bytes of a file with this header.
    pub fn file_len(&self) -> u64 {
        HEADER_LEN + self.count * self.record_len()
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::format("dim must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::format("num_classes must be positive"));
        }
        Ok(())
    }

    /// Checks one record against this header.
    pub fn check_record(&self, record: &KavRecord) -> Result<()> {
        let idx = record.record_index;
        if record.kav.len() != self.dim as usize {
            return Err(Error::format(format!(
                "record {idx}: kav length {} does not match dim {}",
                record.kav.len(),
                self.dim
            )));
        }
        match (&record.logits, self.has_logits) {
            (Some(l), true) if l.len() != self.num_classes as usize => {
                return Err(Error::format(format!(
                    "record {idx}: {} logits, expected {}",
                    l.len(),
                    self.num_classes
                )))
            }
            (None, true) => return Err(Error::format(format!("record {idx}: logits missing"))),
            (Some(_), false) => {
                return Err(Error::format(format!(
                    "record {idx}: logits present but dataset has none"
                )))
            }
            _ => {}
        }
        if let Some(label) = record.label {
            if label >= self.num_classes {
                return Err(Error::format(format!(
                    "record {idx}: label {label} outside [0, {})",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// An in-memory KAV dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct KavDataset {
    dim: u32,
    num_classes: u32,
    has_logits: bool,
    records: Vec<KavRecord>,
}

impl KavDataset {
    pub fn new(dim: u32, num_classes: u32, has_logits: bool) -> Result<Self> {
        let header = KavHeader {
            dim,
            num_classes,
            has_logits,
            count: 0,
        };
        header.validate().map_err(|e| match e {
            Error::Format(m) => Error::Usage(m),
            other => other,
        })?;
        Ok(Self {
            dim,
            num_classes,
            has_logits,
            records: Vec::new(),
        })
    }

    /// Appends a record, assigning it the next `record_index`.
    pub fn push(
        &mut self,
        label: Option<ClassId>,
        logits: Option<Vec<f32>>,
        kav: Vec<f32>,
    ) -> Result<()> {
        let record = KavRecord {
            record_index: self.records.len() as u64,
            label,
            logits,
            kav,
        };
        self.header().check_record(&record)?;
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn has_logits(&self) -> bool {
        self.has_logits
    }

    pub fn records(&self) -> &[KavRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> KavHeader {
        KavHeader {
            dim: self.dim,
            num_classes: self.num_classes,
            has_logits: self.has_logits,
            count: self.records.len() as u64,
        }
    }

    pub fn into_records(self) -> Vec<KavRecord> {
        self.records
    }
}

fn write_header<W: Write>(sink: &mut W, header: &KavHeader) -> io::Result<()> {
    let flags = if header.has_logits {
        FLAG_HAS_LOGITS
    } else {
        0
    };
    sink.write_all(MAGIC)?;
    sink.write_all(&VERSION.to_le_bytes())?;
    sink.write_all(&flags.to_le_bytes())?;
    sink.write_all(&header.dim.to_le_bytes())?;
    sink.write_all(&header.num_classes.to_le_bytes())?;
    sink.write_all(&header.count.to_le_bytes())
}

fn write_record<W: Write>(sink: &mut W, record: &KavRecord) -> io::Result<()> {
    let label = record.label.map_or(UNLABELED, |l| l as i32);
    sink.write_all(&label.to_le_bytes())?;
    if let Some(logits) = &record.logits {
        for v in logits {
            sink.write_all(&v.to_le_bytes())?;
        }
    }
    for v in &record.kav {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes `dataset` in the binary format and returns the number of bytes emitted.
pub fn write_kav<W: Write>(dataset: &KavDataset, sink: W) -> Result<u64> {
    let header = dataset.header();
    for (i, r) in dataset.records.iter().enumerate() {
        if r.record_index != i as u64 {
            return Err(Error::format(format!(
                "record {i}: record_index {} out of sequence",
                r.record_index
            )));
        }
        header.check_record(r)?;
    }
    let mut writer = KavWriter::new(sink, header)?;
    for r in &dataset.records {
        writer.write(r)?;
    }
    writer.finish()
}

/// Streaming writer. The record count is fixed up front because it lives in the header.
pub struct KavWriter<W: Write> {
    sink: W,
    header: KavHeader,
    written: u64,
    bytes: u64,
}

impl<W: Write> KavWriter<W> {
    pub fn new(mut sink: W, header: KavHeader) -> Result<Self> {
        header.validate()?;
        write_header(&mut sink, &header)?;
        Ok(Self {
            sink,
            header,
            written: 0,
            bytes: HEADER_LEN,
        })
    }

    pub fn write(&mut self, record: &KavRecord) -> Result<()> {
        if self.written == self.header.count {
            return Err(Error::usage(format!(
                "header declares {} records, refusing to write more",
                self.header.count
            )));
        }
        self.header.check_record(record)?;
        write_record(&mut self.sink, record)?;
        self.written += 1;
        self.bytes += self.header.record_len();
        Ok(())
    }

    /// Flushes and returns the total byte count.
    pub fn finish(mut self) -> Result<u64> {
        if self.written != self.header.count {
            return Err(Error::usage(format!(
                "header declares {} records but {} were written",
                self.header.count, self.written
            )));
        }
        self.sink.flush()?;
        Ok(self.bytes)
    }
}

/// Streaming reader: yields validated records one at a time.
pub struct KavReader<R: Read> {
    source: R,
    header: KavHeader,
    next: u64,
    offset: u64,
    buf: Vec<u8>,
    failed: bool,
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::format_at(offset, format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    })
}

impl<R: Read> KavReader<R> {
    /// Reads and validates the header.
    pub fn new(mut source: R) -> Result<Self> {
        let mut raw = [0u8; HEADER_LEN as usize];
        read_full(&mut source, &mut raw[..4], 0, "header")?;
        if &raw[..4] != MAGIC {
            return Err(Error::format_at(0, "bad magic bytes"));
        }
        read_full(&mut source, &mut raw[4..], 4, "header")?;
        let version = u16::from_le_bytes([raw[4], raw[5]]);
        if version != VERSION {
            return Err(Error::format_at(
                4,
                format!("unsupported version {version}"),
            ));
        }
        let flags = u16::from_le_bytes([raw[6], raw[7]]);
        if flags & !FLAG_HAS_LOGITS != 0 {
            return Err(Error::format_at(
                6,
                format!("unknown flag bits {flags:#06x}"),
            ));
        }
        let dim = u32::from_le_bytes(raw[8..12].try_into().unwrap());
        if dim == 0 {
            return Err(Error::format_at(8, "dim must be positive"));
        }
        let num_classes = u32::from_le_bytes(raw[12..16].try_into().unwrap());
        if num_classes == 0 {
            return Err(Error::format_at(12, "num_classes must be positive"));
        }
        let count = u64::from_le_bytes(raw[16..24].try_into().unwrap());
        let header = KavHeader {
            dim,
            num_classes,
            has_logits: flags & FLAG_HAS_LOGITS != 0,
            count,
        };
        Ok(Self {
            source,
            buf: vec![0; header.record_len() as usize],
            header,
            next: 0,
            offset: HEADER_LEN,
            failed: false,
        })
    }

    pub fn header(&self) -> KavHeader {
        self.header
    }

    fn read_record(&mut self) -> Result<KavRecord> {
        let start = self.offset;
        let index = self.next;
        read_full(
            &mut self.source,
            &mut self.buf,
            start,
            &format!("record {index}"),
        )?;
        let mut words = self.buf.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let raw_label = i32::from_le_bytes(words.next().unwrap());
        let label = match raw_label {
            UNLABELED => None,
            l if l >= 0 && (l as u32) < self.header.num_classes => Some(l as u32),
            l => {
                return Err(Error::format_at(
                    start,
                    format!("record {index}: invalid label {l}"),
                ))
            }
        };
        let logits = self.header.has_logits.then(|| {
            words
                .by_ref()
                .take(self.header.num_classes as usize)
                .map(f32::from_le_bytes)
                .collect()
        });
        let kav = words.map(f32::from_le_bytes).collect();
        self.next += 1;
        self.offset += self.header.record_len();
        Ok(KavRecord {
            record_index: index,
            label,
            logits,
            kav,
        })
    }

    fn check_trailing(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.source.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::format_at(
                        self.offset,
                        format!("trailing bytes after {} records", self.header.count),
                    ))
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl<R: Read> Iterator for KavReader<R> {
    type Item = Result<KavRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.next == self.header.count {
            // Report trailing garbage once, then end.
            self.failed = true;
            return self.check_trailing().err().map(Err);
        }
        let item = self.read_record();
        if item.is_err() {
            self.failed = true;
        }
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.count - self.next) as usize;
        (0, Some(left.saturating_add(1)))
    }
}

/// Reads a whole binary KAV file into memory.
pub fn read_kav<R: Read>(source: R) -> Result<KavDataset> {
    let reader = KavReader::new(source)?;
    let header = reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok(KavDataset {
        dim: header.dim,
        num_classes: header.num_classes,
        has_logits: header.has_logits,
        records,
    })
}

/// Reads the text form: header `label,v0,v1,...`, one record per row, no logits.
pub fn read_kav_csv<R: Read>(source: R, num_classes: u32) -> Result<KavDataset> {
    if num_classes == 0 {
        return Err(Error::usage("num_classes must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(Error::format("empty csv: missing header row")),
    };
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::format(
            "line 1: header must be `label,v0,v1,...` with at least one value column",
        ));
    }
    let dim = (header.len() - 1) as u32;
    let mut dataset = KavDataset::new(dim, num_classes, false)?;
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(Error::format(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                row.len()
            )));
        }
        let label: i64 = row[0]
            .parse()
            .map_err(|_| Error::format(format!("line {line}: bad label {:?}", &row[0])))?;
        let label = match label {
            -1 => None,
            l if l >= 0 && l < i64::from(num_classes) => Some(l as u32),
            l => {
                return Err(Error::format(format!(
                    "line {line}: label {l} outside [0, {num_classes})"
                )))
            }
        };
        let kav = row
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map(|x| x as f32)
                    .map_err(|_| Error::format(format!("line {line}: bad value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        dataset.push(label, None, kav)?;
    }
    Ok(dataset)
}

/// Writes the text form with 17-significant-digit values. Logits are not representable.
pub fn write_kav_csv<W: Write>(dataset: &KavDataset, mut sink: W) -> Result<()> {
    if dataset.has_logits {
        return Err(Error::usage("csv form cannot carry logits"));
    }
    let mut line = String::from("label");
    for i in 0..dataset.dim {
        line.push_str(&format!(",v{i}"));
    }
    writeln!(sink, "{line}")?;
    for r in &dataset.records {
        line.clear();
        line.push_str(&r.label.map_or(UNLABELED, |l| l as i32).to_string());
        for &v in &r.kav {
            line.push(',');
            line.push_str(&real17(f64::from(v)));
        }
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}

/// One row of a score file: higher scores mean more in-distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub id: u64,
    pub score: f64,
    /// `true` for the positive (in-distribution) set.
    pub positive: bool,
}

pub fn write_scores<W: Write>(rows: &[ScoreRow], mut sink: W) -> Result<()> {
    writeln!(sink, "id,score,label")?;
    for r in rows {
        if !r.score.is_finite() {
            return Err(Error::usage(format!("row {}: score is not finite", r.id)));
        }
        writeln!(
            sink,
            "{},{},{}",
            r.id,
            real17(r.score),
            u8::from(r.positive)
        )?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_scores<R: Read>(source: R) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "score", "label"] {
        return Err(Error::format(
            "line 1: score header must be `id,score,label`",
        ));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::format(format!("line {line}: bad {what}"));
        let id = row[0].parse().map_err(|_| bad("id"))?;
        let score: f64 = row[1].parse().map_err(|_| bad("score"))?;
        if !score.is_finite() {
            return Err(bad("score (not finite)"));
        }
        let positive = match &row[2] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("label (expected 0 or 1)")),
        };
        out.push(ScoreRow {
            id,
            score,
            positive,
        });
    }
    Ok(out)
}

/// Convenience for file inputs that may be either format, sniffed by magic.
pub fn read_kav_any<R: BufRead>(mut source: R, num_classes_for_csv: u32) -> Result<KavDataset> {
    let head = source.fill_buf()?;
    if head.starts_with(MAGIC) {
        read_kav(source)
    } else {
        read_kav_csv(source, num_classes_for_csv)
    }
}
