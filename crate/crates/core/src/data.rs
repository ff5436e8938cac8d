//! Feature matrices and their on-disk formats.
//!
//! Two interchangeable encodings are supported:
//!
//! * CSV with header `id,label,f0,...,f{D-1}`. The label cell may be empty
//!   for unlabeled data (all rows or none). Columns that are not `id`,
//!   `label` or `f<k>` are ignored, which lets ground-truth columns ride
//!   along in generated datasets.
//! * A little-endian binary layout: magic `CGF1`, `u32` N, `u32` D, then N
//!   ids (each `u32` byte length followed by UTF-8 bytes), N `i32` labels
//!   (`-1` for unlabeled), and finally N*D `f64` values in row-major order.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"CGF1";

/// N samples with D finite features each, unique ids and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
    dim: usize,
    labels: Option<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl FeatureMatrix {
    /// Builds a matrix from row vectors, validating every invariant.
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::input(format!(
                "sample `{}` has {} features, expected {dim}",
                ids.get(i).map(String::as_str).unwrap_or("?"),
                row.len()
            )));
        }
        let values = rows.into_iter().flatten().collect();
        Self::from_flat(ids, values, dim, labels)
    }

    /// Builds a matrix from row-major values.
    pub fn from_flat(
        ids: Vec<String>,
        values: Vec<f64>,
        dim: usize,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::input("feature matrix needs at least one sample"));
        }
        if dim == 0 {
            return Err(Error::input("feature matrix needs at least one feature column"));
        }
        if values.len() != n * dim {
            return Err(Error::input(format!(
                "expected {} feature values for {n}x{dim}, got {}",
                n * dim,
                values.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::input(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                id: ids[pos / dim].clone(),
                column: pos % dim,
            });
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate sample id `{id}`")));
            }
        }
        Ok(Self {
            ids,
            values,
            dim,
            labels,
            index,
        })
    }

    /// Ids `"0"`, `"1"`, ... for callers that have no natural identifiers.
    pub fn sequential_ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Labels, or an input error when the matrix is unlabeled.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::input("operation requires class labels"))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Row indices carrying `label`, ascending.
    pub fn class_indices(&self, label: usize) -> Vec<usize> {
        match &self.labels {
            Some(labels) => (0..self.len()).filter(|&i| labels[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// A new matrix holding the given rows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::from_flat(ids, values, self.dim, labels)
    }

    /// Same ids and labels with a replacement feature block of width `dim`.
    pub fn with_values(&self, values: Vec<f64>, dim: usize) -> Result<Self> {
        Self::from_flat(self.ids.clone(), values, dim, self.labels.clone())
    }

    /// Loads CSV or binary depending on the file extension (`.cgf` is binary).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_binary_path(path) {
            Self::read_binary(BufReader::new(File::open(path)?))
        } else {
            Self::read_csv(File::open(path)?)
        }
    }

    /// Writes CSV or binary depending on the file extension (`.cgf` is binary).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = BufWriter::new(File::create(path)?);
        if is_binary_path(path) {
            self.write_binary(file)
        } else {
            self.write_csv(file)
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let id_col = column(&header, "id")?;
        let label_col = column(&header, "label")?;
        let mut feature_cols = Vec::new();
        while let Some(c) = header.iter().position(|h| h == format!("f{}", feature_cols.len())) {
            feature_cols.push(c);
        }
        if feature_cols.is_empty() {
            return Err(Error::input("CSV header has no `f0` feature column"));
        }
        let dim = feature_cols.len();

        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut labels: Vec<Option<usize>> = Vec::new();
        for (row_no, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(row_no as u64 + 2);
            let id = record.get(id_col).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::input(format!("line {line}: empty sample id")));
            }
            let label = match record.get(label_col).unwrap_or("") {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|_| {
                    Error::input(format!("line {line}: sample `{id}`: invalid label `{s}`"))
                })?),
            };
            for (k, &c) in feature_cols.iter().enumerate() {
                let cell = record.get(c).unwrap_or("");
                let v = cell.parse::<f64>().map_err(|_| {
                    Error::input(format!(
                        "line {line}: sample `{id}`: column f{k}: invalid number `{cell}`"
                    ))
                })?;
                values.push(v);
            }
            ids.push(id);
            labels.push(label);
        }
        let labels = collect_labels(labels)?;
        Self::from_flat(ids, values, dim, labels)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.ids[i].clone(),
                self.label(i).map(|l| l.to_string()).unwrap_or_default(),
            ];
            rec.extend(self.row(i).iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::input("binary feature file lacks the CGF1 magic"));
        }
        let n = read_u32(&mut reader)? as usize;
        let dim = read_u32(&mut reader)? as usize;
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let len = read_u32(&mut reader)? as usize;
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf)?;
            let id = String::from_utf8(buf)
                .map_err(|_| Error::input(format!("sample {i}: id is not valid UTF-8")))?;
            ids.push(id);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            reader.read_exact(&mut b)?;
            let l = i32::from_le_bytes(b);
            labels.push(if l < 0 { None } else { Some(l as usize) });
        }
        let mut values = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            let mut b = [0u8; 8];
            reader.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        let labels = collect_labels(labels)?;
        Self::from_flat(ids, values, dim, labels)
    }

    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        let n = u32::try_from(self.len()).map_err(|_| Error::input("too many samples"))?;
        let d = u32::try_from(self.dim).map_err(|_| Error::input("too many features"))?;
        writer.write_all(BINARY_MAGIC)?;
        writer.write_all(&n.to_le_bytes())?;
        writer.write_all(&d.to_le_bytes())?;
        for id in &self.ids {
            writer.write_all(&(id.len() as u32).to_le_bytes())?;
            writer.write_all(id.as_bytes())?;
        }
        for i in 0..self.len() {
            let l = match self.label(i) {
                Some(l) => i32::try_from(l).map_err(|_| Error::input("label exceeds i32"))?,
                None => -1,
            };
            writer.write_all(&l.to_le_bytes())?;
        }
        for v in &self.values {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn is_binary_path(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("cgf"))
        .unwrap_or(false)
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::input(format!("CSV header lacks `{name}` column")))
}

fn collect_labels(labels: Vec<Option<usize>>) -> Result<Option<Vec<usize>>> {
    let present = labels.iter().filter(|l| l.is_some()).count();
    if present == 0 {
        Ok(None)
    } else if present == labels.len() {
        Ok(Some(labels.into_iter().flatten().collect()))
    } else {
        Err(Error::input("labels must be given for every sample or for none"))
    }
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    reader.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
