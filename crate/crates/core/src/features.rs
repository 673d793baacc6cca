//! Feature records, the per-class FIFO queue of class-augmented ID features,
//! and the feature file formats.
//!
//! Binary layout (`.vosf`, little-endian):
//!
//! ```text
//! magic "VOSF" | version u32 | D u32 | K u32 | count u64
//! per record: class_id u16 | label u8 | D x f32
//! ```
//!
//! Labels are encoded `0 = ID`, `1 = FP`, `2 = SYNTH_OUTLIER`. Values are
//! stored as 32-bit floats, so in-memory features that are not exactly
//! representable are rounded on write. The CSV form has the header
//! `class_id,label,f0,...,f{D-1}` and stores values at full precision.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"VOSF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Id,
    Fp,
    SynthOutlier,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Id => 0,
            Label::Fp => 1,
            Label::SynthOutlier => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Id),
            1 => Some(Label::Fp),
            2 => Some(Label::SynthOutlier),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Id => "ID",
            Label::Fp => "FP",
            Label::SynthOutlier => "SYNTH_OUTLIER",
        }
    }

    /// Anything that is not ID counts as an outlier.
    pub fn is_outlier(self) -> bool {
        self != Label::Id
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ID" | "0" => Ok(Label::Id),
            "FP" | "1" => Ok(Label::Fp),
            "SYNTH_OUTLIER" | "2" => Ok(Label::SynthOutlier),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// One detection-proposal feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub vector: Vec<f64>,
    /// Predicted class of the detection.
    pub class_id: usize,
    pub label: Label,
    pub source_id: String,
}

/// Concatenates the feature with the one-hot encoding of its class: `[u, e_class]`.
pub fn augment_one_hot(rec: &FeatureRecord, k: usize) -> Result<Array1<f64>> {
    augment_slice(&rec.vector, rec.class_id, k)
}

pub(crate) fn augment_slice(vector: &[f64], class_id: usize, k: usize) -> Result<Array1<f64>> {
    if class_id >= k {
        return Err(Error::invalid(format!("class id {class_id} out of range for K = {k}")));
    }
    let d = vector.len();
    let mut out = Array1::zeros(d + k);
    out.slice_mut(ndarray::s![..d])
        .assign(&ndarray::ArrayView1::from(vector));
    out[d + class_id] = 1.0;
    Ok(out)
}

/// Row-wise one-hot augmentation of a feature matrix.
pub fn augment_matrix(features: &Array2<f64>, classes: &[usize], k: usize) -> Result<Array2<f64>> {
    let (n, d) = features.dim();
    if classes.len() != n {
        return Err(Error::invalid(format!("{} class ids for {n} rows", classes.len())));
    }
    let mut out = Array2::zeros((n, d + k));
    out.slice_mut(ndarray::s![.., ..d]).assign(features);
    for (i, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::invalid(format!("class id {c} out of range for K = {k}")));
        }
        out[[i, d + c]] = 1.0;
    }
    Ok(out)
}

/// Fixed-capacity per-class FIFO of class-augmented ID features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureQueue {
    d: usize,
    k: usize,
    capacity_per_class: usize,
    buffers: Vec<VecDeque<Array1<f64>>>,
}

impl FeatureQueue {
    pub fn new(d: usize, k: usize, capacity_per_class: usize) -> Result<Self> {
        if d == 0 || k == 0 || capacity_per_class == 0 {
            return Err(Error::invalid("queue dims and capacity must be positive"));
        }
        Ok(Self {
            d,
            k,
            capacity_per_class,
            buffers: (0..k).map(|_| VecDeque::with_capacity(capacity_per_class)).collect(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity_per_class
    }

    pub fn len(&self, class: usize) -> usize {
        self.buffers.get(class).map_or(0, VecDeque::len)
    }

    pub fn total_len(&self) -> usize {
        self.buffers.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// True once every class buffer holds at least one feature.
    pub fn is_ready(&self) -> bool {
        self.buffers.iter().all(|b| !b.is_empty())
    }

    /// Stored augmented vectors of one class, oldest first.
    pub fn buffer(&self, class: usize) -> impl Iterator<Item = &Array1<f64>> {
        self.buffers[class].iter()
    }

    /// Appends an ID record to its class buffer, evicting the oldest entry when full.
    pub fn push(&mut self, rec: &FeatureRecord) -> Result<()> {
        if rec.label != Label::Id {
            return Err(Error::invalid(format!(
                "queue only holds ID features, got {}",
                rec.label
            )));
        }
        self.push_vector(&rec.vector, rec.class_id)
    }

    /// Pushes a raw ID feature row with its predicted class.
    pub fn push_vector(&mut self, vector: &[f64], class_id: usize) -> Result<()> {
        if vector.len() != self.d {
            return Err(Error::invalid(format!(
                "feature has {} entries, queue expects {}",
                vector.len(),
                self.d
            )));
        }
        let augmented = augment_slice(vector, class_id, self.k)?;
        let buf = &mut self.buffers[class_id];
        if buf.len() == self.capacity_per_class {
            buf.pop_front();
        }
        buf.push_back(augmented);
        Ok(())
    }

    /// Draws `n_per_class` rows uniformly with replacement from every class.
    ///
    /// Rows are grouped by class: rows `c * n .. (c + 1) * n` come from class `c`.
    pub fn sample<R: Rng + ?Sized>(&self, n_per_class: usize, rng: &mut R) -> Result<Array2<f64>> {
        if let Some(empty) = self.buffers.iter().position(VecDeque::is_empty) {
            return Err(Error::NotReady(format!(
                "queue buffer for class {empty} is empty; defer auto-encoder training until every class has features"
            )));
        }
        let width = self.d + self.k;
        let mut out = Array2::zeros((n_per_class * self.k, width));
        for (c, buf) in self.buffers.iter().enumerate() {
            for i in 0..n_per_class {
                let pick = rng.random_range(0..buf.len());
                out.row_mut(c * n_per_class + i).assign(&buf[pick]);
            }
        }
        Ok(out)
    }

    /// All stored features without the one-hot suffix, with their classes.
    pub fn contents(&self) -> (Array2<f64>, Vec<usize>) {
        let n = self.total_len();
        let mut out = Array2::zeros((n, self.d));
        let mut classes = Vec::with_capacity(n);
        let mut row = 0;
        for (c, buf) in self.buffers.iter().enumerate() {
            for v in buf {
                out.row_mut(row).assign(&v.slice(ndarray::s![..self.d]));
                classes.push(c);
                row += 1;
            }
        }
        (out, classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Names used when a file does not carry class names.
pub fn default_class_names(k: usize) -> Vec<String> {
    if k == 3 {
        ["vehicle", "pedestrian", "cyclist"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (0..k).map(|i| format!("class{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub d: usize,
    pub k: usize,
    pub class_names: Vec<String>,
    pub records: Vec<FeatureRecord>,
    pub split: Split,
}

impl FeatureDataset {
    pub fn new(d: usize, k: usize, records: Vec<FeatureRecord>, split: Split) -> Result<Self> {
        let ds = Self {
            d,
            k,
            class_names: default_class_names(k),
            records,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::invalid("D and K must be positive"));
        }
        if self.class_names.len() != self.k {
            return Err(Error::invalid("class name count must equal K"));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.vector.len() != self.d {
                return Err(Error::invalid(format!(
                    "record {i} has {} entries, dataset D = {}",
                    r.vector.len(),
                    self.d
                )));
            }
            if r.class_id >= self.k {
                return Err(Error::invalid(format!("record {i} class {} >= K", r.class_id)));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("record {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Feature matrix and classes of every record with the given label, in file order.
    pub fn matrix(&self, label: Label) -> (Array2<f64>, Vec<usize>) {
        let picked: Vec<&FeatureRecord> = self.records.iter().filter(|r| r.label == label).collect();
        let mut m = Array2::zeros((picked.len(), self.d));
        for (i, r) in picked.iter().enumerate() {
            m.row_mut(i).assign(&ndarray::ArrayView1::from(&r.vector[..]));
        }
        (m, picked.iter().map(|r| r.class_id).collect())
    }

    /// Feature matrix of all records plus their classes and labels.
    pub fn all(&self) -> (Array2<f64>, Vec<usize>, Vec<Label>) {
        let mut m = Array2::zeros((self.records.len(), self.d));
        for (i, r) in self.records.iter().enumerate() {
            m.row_mut(i).assign(&ndarray::ArrayView1::from(&r.vector[..]));
        }
        (
            m,
            self.records.iter().map(|r| r.class_id).collect(),
            self.records.iter().map(|r| r.label).collect(),
        )
    }
}

/// Writes records in the binary feature format.
pub fn write_vosf<W: Write>(mut w: W, d: usize, k: usize, records: &[FeatureRecord]) -> Result<()> {
    let d32 = u32::try_from(d).map_err(|_| Error::invalid("D too large"))?;
    let k32 = u32::try_from(k).map_err(|_| Error::invalid("K too large"))?;
    if k > u16::MAX as usize + 1 {
        return Err(Error::invalid("K does not fit the u16 class field"));
    }
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&d32.to_le_bytes())?;
    w.write_all(&k32.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(3 + 4 * d);
    for r in records {
        if r.vector.len() != d || r.class_id >= k {
            return Err(Error::invalid(format!("record {} does not match D/K", r.source_id)));
        }
        buf.clear();
        buf.extend_from_slice(&(r.class_id as u16).to_le_bytes());
        buf.push(r.label.code());
        for &v in &r.vector {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a binary feature file. Records get their file index as `source_id`.
pub fn read_vosf<R: Read>(mut r: R, split: Split) -> Result<FeatureDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format("feature file", "bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FEATURE_VERSION {
        return Err(Error::format("feature file", format!("unsupported version {version}")));
    }
    r.read_exact(&mut word)?;
    let d = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let k = u32::from_le_bytes(word) as usize;
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let count = u64::from_le_bytes(long) as usize;
    let mut buf = vec![0u8; 3 + 4 * d];
    let mut records = Vec::with_capacity(count.min(1 << 24));
    for i in 0..count {
        r.read_exact(&mut buf)?;
        let class_id = u16::from_le_bytes([buf[0], buf[1]]) as usize;
        let label = Label::from_code(buf[2])
            .ok_or_else(|| Error::format("feature file", format!("record {i}: unknown label {}", buf[2])))?;
        let vector = buf[3..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        records.push(FeatureRecord {
            vector,
            class_id,
            label,
            source_id: i.to_string(),
        });
    }
    FeatureDataset::new(d, k, records, split)
}

/// Writes records as CSV with header `class_id,label,f0..f{D-1}`.
pub fn write_feature_csv<W: Write>(w: W, d: usize, records: &[FeatureRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["class_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for r in records {
        if r.vector.len() != d {
            return Err(Error::invalid(format!("record {} does not match D", r.source_id)));
        }
        let mut row = vec![r.class_id.to_string(), r.label.to_string()];
        row.extend(r.vector.iter().map(|v| v.to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the CSV feature form. `k` defaults to `max(class_id) + 1`.
pub fn read_feature_csv<R: Read>(r: R, k: Option<usize>, split: Split) -> Result<FeatureDataset> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "class_id" || &header[1] != "label" {
        return Err(Error::format("feature csv", "header must start with class_id,label,f0"));
    }
    let d = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::format(
                "feature csv",
                format!("column {} should be f{i}, got {name}", i + 2),
            ));
        }
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let class_id = row[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::format("feature csv", format!("row {i}: class_id: {e}")))?;
        let label: Label = row[1].parse()?;
        let vector = row
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("feature csv", format!("row {i}: {e}")))?;
        records.push(FeatureRecord {
            vector,
            class_id,
            label,
            source_id: i.to_string(),
        });
    }
    let k = k.unwrap_or_else(|| records.iter().map(|r| r.class_id + 1).max().unwrap_or(1));
    FeatureDataset::new(d, k, records, split)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}
