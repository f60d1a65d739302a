//! Datasets, file loaders, and label transforms.
//!
//! A [`Dataset`] never changes after construction. Every transform returns a
//! new dataset that shares the feature matrix with its source, so only the
//! label vector is copied.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The generator behind every seeded choice in the crate: ChaCha with 8
/// rounds, seeded through `seed_from_u64`.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `floor(fraction * n)`, tolerant of the representation error in products
/// such as `0.29 * 100`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let count = (raw + 1e-9 * raw.abs().max(1.0)).floor() as usize;
    count.min(n)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(Error::InvalidFraction(fraction))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

/// Row-major feature storage, dense or compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
}

/// Borrowed view of one feature row.
#[derive(Clone, Copy, Debug)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse {
        indices: &'a [usize],
        values: &'a [f64],
    },
}

impl<'a> Row<'a> {
    /// Inner product with the leading entries of `w`.
    pub fn dot(&self, w: &[f64]) -> f64 {
        match *self {
            Row::Dense(x) => x.iter().zip(w).map(|(a, b)| a * b).sum(),
            Row::Sparse { indices, values } => {
                indices.iter().zip(values).map(|(&j, v)| v * w[j]).sum()
            }
        }
    }

    /// `out[j] += alpha * x[j]`.
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        match *self {
            Row::Dense(x) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o += alpha * v;
                }
            }
            Row::Sparse { indices, values } => {
                for (&j, v) in indices.iter().zip(values) {
                    out[j] += alpha * v;
                }
            }
        }
    }

    /// Iterates over `(column, value)` pairs, skipping nothing for dense rows.
    pub fn entries(&self) -> Box<dyn Iterator<Item = (usize, f64)> + 'a> {
        match *self {
            Row::Dense(x) => Box::new(x.iter().copied().enumerate()),
            Row::Sparse { indices, values } => {
                Box::new(indices.iter().copied().zip(values.iter().copied()))
            }
        }
    }

    pub fn to_dense(&self, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; cols];
        self.axpy(1.0, &mut out);
        out
    }
}

impl FeatureMatrix {
    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDataset);
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "dense feature buffer",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            storage: Storage::Dense(data),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::dense(rows.len(), cols, data)
    }

    /// Builds a CSR matrix. Each row's `(index, value)` pairs must have
    /// strictly increasing indices below `cols`.
    pub fn sparse(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.is_empty() || cols == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            for (pos, &(j, v)) in row.iter().enumerate() {
                if j >= cols || !v.is_finite() {
                    return Err(Error::InvalidFeature { row: i, col: j });
                }
                if pos > 0 && row[pos - 1].0 >= j {
                    return Err(Error::UnsortedIndex { line: i + 1 });
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            storage: Storage::Sparse {
                indptr,
                indices,
                values,
            },
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.storage {
            Storage::Dense(data) => Row::Dense(&data[i * self.cols..(i + 1) * self.cols]),
            Storage::Sparse {
                indptr,
                indices,
                values,
            } => {
                let (lo, hi) = (indptr[i], indptr[i + 1]);
                Row::Sparse {
                    indices: &indices[lo..hi],
                    values: &values[lo..hi],
                }
            }
        }
    }

    fn select(&self, keep: &[usize]) -> Result<Self> {
        match &self.storage {
            Storage::Dense(_) => {
                let mut data = Vec::with_capacity(keep.len() * self.cols);
                for &i in keep {
                    if let Row::Dense(x) = self.row(i) {
                        data.extend_from_slice(x);
                    }
                }
                Self::dense(keep.len(), self.cols, data)
            }
            Storage::Sparse { .. } => {
                let rows = keep
                    .iter()
                    .map(|&i| self.row(i).entries().collect())
                    .collect();
                Self::sparse(self.cols, rows)
            }
        }
    }
}

/// Immutable feature matrix with binary labels and optional group tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Arc<FeatureMatrix>,
    labels: Vec<u8>,
    tags: Option<Arc<Vec<String>>>,
    feature_names: Option<Arc<Vec<String>>>,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<u8>,
        tags: Option<Vec<String>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.rows != labels.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: features.rows,
                got: labels.len(),
            });
        }
        if let Some(row) = labels.iter().position(|&y| y > 1) {
            return Err(Error::NonBinaryLabel {
                row,
                value: labels[row].to_string(),
            });
        }
        if let Some(t) = &tags {
            if t.len() != labels.len() {
                return Err(Error::LengthMismatch {
                    what: "tags",
                    expected: labels.len(),
                    got: t.len(),
                });
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != features.cols {
                return Err(Error::LengthMismatch {
                    what: "feature names",
                    expected: features.cols,
                    got: names.len(),
                });
            }
        }
        Ok(Dataset {
            features: Arc::new(features),
            labels,
            tags: tags.map(Arc::new),
            feature_names: feature_names.map(Arc::new),
        })
    }

    /// Convenience constructor for dense rows without tags.
    pub fn from_dense_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        Self::new(FeatureMatrix::from_rows(rows)?, labels, None, None)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        self.features.row(i)
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        self.row(i).to_dense(self.n_features())
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn tags(&self) -> Option<&[String]> {
        self.tags.as_deref().map(Vec::as_slice)
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref().map(Vec::as_slice)
    }

    /// True when both datasets point at the same feature allocation.
    pub fn shares_features_with(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.features, &other.features)
    }

    fn with_labels(&self, labels: Vec<u8>) -> Dataset {
        Dataset {
            features: Arc::clone(&self.features),
            labels,
            tags: self.tags.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Copy of the dataset with the given rows dropped.
    pub fn without(&self, drop: &BTreeSet<usize>) -> Result<Dataset> {
        if let Some(&bad) = drop.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.n_samples(),
            });
        }
        let keep: Vec<usize> = (0..self.n_samples()).filter(|i| !drop.contains(i)).collect();
        self.select(&keep)
    }

    /// Copy of the dataset restricted to `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = keep.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.n_samples(),
            });
        }
        let features = self.features.select(keep)?;
        let labels = keep.iter().map(|&i| self.labels[i]).collect();
        let tags = self
            .tags
            .as_ref()
            .map(|t| keep.iter().map(|&i| t[i].clone()).collect());
        Dataset::new(
            features,
            labels,
            tags,
            self.feature_names.as_ref().map(|n| n.to_vec()),
        )
    }
}

/// Map from training index to its new label. Every entry must change the
/// label it targets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelabelPlan {
    entries: BTreeMap<usize, u8>,
}

impl RelabelPlan {
    pub fn new(entries: BTreeMap<usize, u8>) -> Self {
        RelabelPlan { entries }
    }

    /// Plan that flips `y -> 1 - y` at each index of `ds`.
    pub fn flipping(ds: &Dataset, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for i in indices {
            if i >= ds.n_samples() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: ds.n_samples(),
                });
            }
            entries.insert(i, 1 - ds.label(i));
        }
        Ok(RelabelPlan { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.entries.iter().map(|(&i, &y)| (i, y))
    }
}

pub fn apply_relabels(ds: &Dataset, plan: &RelabelPlan) -> Result<Dataset> {
    let mut labels = ds.labels.clone();
    for (index, new_label) in plan.iter() {
        if index >= labels.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: labels.len(),
            });
        }
        if new_label > 1 {
            return Err(Error::NonBinaryLabel {
                row: index,
                value: new_label.to_string(),
            });
        }
        if labels[index] == new_label {
            return Err(Error::NoOpRelabel {
                index,
                label: new_label,
            });
        }
        labels[index] = new_label;
    }
    Ok(ds.with_labels(labels))
}

/// Flips the labels of `floor(ratio * N)` uniformly chosen rows.
///
/// The rows are a prefix of one seeded permutation, so for a fixed seed the
/// noise set of a smaller ratio is contained in that of a larger one.
pub fn inject_label_noise(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset, BTreeSet<usize>)> {
    check_fraction(ratio)?;
    let n = ds.n_samples();
    let count = fraction_count(ratio, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let chosen: BTreeSet<usize> = order.into_iter().take(count).collect();
    let plan = RelabelPlan::flipping(ds, chosen.iter().copied())?;
    Ok((apply_relabels(ds, &plan)?, chosen))
}

/// Flips a seeded `floor(flip_fraction * count)` subset of the rows tagged
/// `target_tag` whose label is `eligible_label`.
pub fn inject_group_bias(
    ds: &Dataset,
    target_tag: &str,
    eligible_label: u8,
    flip_fraction: f64,
    seed: u64,
) -> Result<(Dataset, BTreeSet<usize>)> {
    check_fraction(flip_fraction)?;
    let tags = ds.tags().ok_or(Error::MissingTags)?;
    if !tags.iter().any(|t| t == target_tag) {
        return Err(Error::UnknownTag(target_tag.to_string()));
    }
    let mut eligible: Vec<usize> = (0..ds.n_samples())
        .filter(|&i| tags[i] == target_tag && ds.label(i) == eligible_label)
        .collect();
    let count = fraction_count(flip_fraction, eligible.len());
    eligible.shuffle(&mut seeded_rng(seed));
    let chosen: BTreeSet<usize> = eligible.into_iter().take(count).collect();
    let plan = RelabelPlan::flipping(ds, chosen.iter().copied())?;
    Ok((apply_relabels(ds, &plan)?, chosen))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Loads a comma-separated file with a header row.
///
/// Every column other than the label and tag columns becomes a feature.
/// Labels may be `0`/`1`, or any two distinct strings, which map to 0 and 1
/// in sorted order.
pub fn load_dense_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    tag_column: Option<&str>,
) -> Result<Dataset> {
    read_dense_csv(open(path.as_ref())?, label_column, tag_column)
}

pub fn read_dense_csv<R: Read>(
    reader: R,
    label_column: &str,
    tag_column: Option<&str>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let tag_idx = match tag_column {
        Some(t) => Some(
            header
                .iter()
                .position(|h| h == t)
                .ok_or_else(|| Error::MissingColumn(t.to_string()))?,
        ),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != label_idx && Some(c) != tag_idx)
        .collect();

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut tags = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row,
                expected: header.len(),
                got: record.len(),
            });
        }
        for (col, &c) in feature_cols.iter().enumerate() {
            let v: f64 = record[c]
                .parse()
                .map_err(|_| Error::InvalidFeature { row, col })?;
            if !v.is_finite() {
                return Err(Error::InvalidFeature { row, col });
            }
            data.push(v);
        }
        raw_labels.push(record[label_idx].to_string());
        if let Some(t) = tag_idx {
            tags.push(record[t].to_string());
        }
    }
    if raw_labels.is_empty() || feature_cols.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = map_labels(&raw_labels)?;
    let features = FeatureMatrix::dense(raw_labels.len(), feature_cols.len(), data)?;
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    Dataset::new(features, labels, tag_idx.map(|_| tags), Some(names))
}

fn numeric_label(s: &str) -> Option<u8> {
    match s.parse::<f64>() {
        Ok(v) if v == 0.0 => Some(0),
        Ok(v) if v == 1.0 => Some(1),
        _ => None,
    }
}

fn map_labels(raw: &[String]) -> Result<Vec<u8>> {
    if let Some(labels) = raw.iter().map(|s| numeric_label(s)).collect::<Option<Vec<_>>>() {
        return Ok(labels);
    }
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    if distinct.len() != 2 {
        let row = raw
            .iter()
            .position(|s| numeric_label(s).is_none())
            .unwrap_or(0);
        return Err(Error::NonBinaryLabel {
            row,
            value: raw[row].clone(),
        });
    }
    let negative = *distinct.iter().next().expect("two values");
    Ok(raw.iter().map(|s| u8::from(s != negative)).collect())
}

/// Loads `<label> <idx>:<value> ...` lines with 0-based indices.
pub fn load_sparse(path: impl AsRef<Path>) -> Result<Dataset> {
    read_sparse(BufReader::new(open(path.as_ref())?))
}

pub fn read_sparse<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut cols = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| Error::io("<sparse input>", e))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label = numeric_label(label_tok).ok_or_else(|| Error::NonBinaryLabel {
            row: labels.len(),
            value: label_tok.to_string(),
        })?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Malformed {
                line: line_no,
                message: format!("expected `<index>:<value>`, got `{tok}`"),
            })?;
            if idx.starts_with('-') {
                return Err(Error::NegativeIndex {
                    line: line_no,
                    token: tok.to_string(),
                });
            }
            let idx: usize = idx.parse().map_err(|_| Error::Malformed {
                line: line_no,
                message: format!("bad feature index `{idx}`"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::InvalidFeature {
                row: labels.len(),
                col: idx,
            })?;
            if !val.is_finite() {
                return Err(Error::InvalidFeature {
                    row: labels.len(),
                    col: idx,
                });
            }
            if let Some(&(prev, _)) = row.last() {
                if prev == idx || row.iter().any(|&(j, _)| j == idx) {
                    return Err(Error::DuplicateIndex {
                        line: line_no,
                        index: idx,
                    });
                }
                if prev > idx {
                    return Err(Error::UnsortedIndex { line: line_no });
                }
            }
            cols = cols.max(idx + 1);
            row.push((idx, val));
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // An input made only of empty rows still has one (all-zero) column.
    let features = FeatureMatrix::sparse(cols.max(1), rows)?;
    Dataset::new(features, labels, None, None)
}

/// Writes a dataset as a dense CSV with feature columns, then the optional
/// `tag` column, then `label_column`.
pub fn write_dense_csv<W: Write>(ds: &Dataset, writer: W, label_column: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let d = ds.n_features();
    let mut header: Vec<String> = match ds.feature_names() {
        Some(names) => names.to_vec(),
        None => (0..d).map(|j| format!("x{j}")).collect(),
    };
    if ds.tags().is_some() {
        header.push("tag".into());
    }
    header.push(label_column.into());
    wtr.write_record(&header)?;
    for i in 0..ds.n_samples() {
        let mut record: Vec<String> = ds.dense_row(i).iter().map(|v| v.to_string()).collect();
        if let Some(tags) = ds.tags() {
            record.push(tags[i].clone());
        }
        record.push(ds.label(i).to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}
