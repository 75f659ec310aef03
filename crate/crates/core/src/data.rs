//! Dataset ingestion and partitioning.
//!
//! Supports MNIST's IDX binary container and LIBSVM sparse text (as used for
//! COVERTYPE). Both accept gzip input transparently. Parsed sets are
//! immutable and shared by all workers through `Arc`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{self, Stream};
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_count: usize,
    class_count: usize,
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::config("dataset must contain at least one row"));
        }
        if !features.len().is_multiple_of(n) {
            return Err(Error::config(format!(
                "{} feature values do not split into {n} rows",
                features.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::config(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::config("dataset features contain NaN"));
        }
        Ok(Dataset {
            feature_count: features.len() / n,
            features,
            labels,
            class_count,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// New dataset made of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.feature_count);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            labels,
            feature_count: self.feature_count,
            class_count: self.class_count,
            image_shape: self.image_shape,
        }
    }

    /// Standardise every column to zero mean and unit variance. Constant
    /// columns become zero.
    pub fn standardize(&mut self) {
        let n = self.len() as f64;
        let d = self.feature_count;
        for t in 0..d {
            let mean = (0..self.len())
                .map(|i| self.features[i * d + t])
                .sum::<f64>()
                / n;
            let var = (0..self.len())
                .map(|i| (self.features[i * d + t] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            for i in 0..self.len() {
                let v = &mut self.features[i * d + t];
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
    }

    /// Class-stratified subsample of at most `cap` rows.
    ///
    /// Each class keeps a share proportional to its frequency (largest
    /// remainders break ties); rows are drawn by a seeded shuffle.
    pub fn stratified_subsample(&self, cap: usize, seed: u64) -> Dataset {
        if cap >= self.len() {
            return self.clone();
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let n = self.len();
        let mut quota: Vec<(usize, usize, usize)> = by_class
            .iter()
            .enumerate()
            .map(|(c, rows)| {
                let exact = rows.len() * cap;
                (c, exact / n, exact % n)
            })
            .collect();
        let assigned: usize = quota.iter().map(|q| q.1).sum();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| quota[b].2.cmp(&quota[a].2).then(a.cmp(&b)));
        for &c in order.iter().take(cap - assigned) {
            quota[c].1 += 1;
        }
        let mut rng = rng::stream(seed, Stream::Subsample, 0, 0);
        let mut keep = Vec::with_capacity(cap);
        for (c, take, _) in quota {
            let mut rows = by_class[c].clone();
            rows.shuffle(&mut rng);
            keep.extend(rows.into_iter().take(take));
        }
        keep.sort_unstable();
        self.select(&keep)
    }

    /// Seeded random split into `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test fraction must lie in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, Stream::Partition, u64::MAX, 0));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        if n_test == 0 || n_test >= self.len() {
            return Err(Error::config("split leaves an empty train or test set"));
        }
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select(&train), self.select(&test)))
    }
}

/// Decompress `bytes` when they start with the gzip magic.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn read_maybe_gzip(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    maybe_gunzip(std::fs::read(path)?)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Bytes {
            offset,
            message: format!("truncated header while reading {what}"),
        })
}

/// Parse an IDX image file and its label file. Pixels are scaled to [0, 1].
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Bytes {
            offset: 0,
            message: format!("unexpected magic 0x{magic:08x} in image file"),
        });
    }
    let n = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let pixels = n * rows * cols;
    if images.len() < 16 + pixels {
        return Err(Error::Bytes {
            offset: images.len(),
            message: format!("image payload truncated: need {} bytes", 16 + pixels),
        });
    }

    let lmagic = be_u32(labels, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Bytes {
            offset: 0,
            message: format!("unexpected magic 0x{lmagic:08x} in label file"),
        });
    }
    let ln = be_u32(labels, 4, "label count")? as usize;
    if ln != n {
        return Err(Error::Bytes {
            offset: 4,
            message: format!("label count {ln} does not match image count {n}"),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::Bytes {
            offset: labels.len(),
            message: format!("label payload truncated: need {} bytes", 8 + n),
        });
    }

    let features = images[16..16 + pixels]
        .iter()
        .map(|&p| p as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = labels[8..8 + n].iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    let mut ds = Dataset::new(features, labels, classes)?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

/// Serialise a dataset of byte-valued pixels back to `(images, labels)` IDX.
pub fn write_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = ds.image_shape.unwrap_or((1, ds.feature_count));
    if rows * cols != ds.feature_count {
        return Err(Error::config("image shape does not match feature count"));
    }
    if ds.class_count > 256 {
        return Err(Error::config("IDX labels are single bytes"));
    }
    let mut images = Vec::with_capacity(16 + ds.features.len());
    for v in [IDX_IMAGES_MAGIC, ds.len() as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for &v in &ds.features {
        let p = (v * 255.0).round();
        if !(0.0..=255.0).contains(&p) {
            return Err(Error::config(format!(
                "feature {v} is not a byte-valued pixel"
            )));
        }
        images.push(p as u8);
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS_MAGIC, ds.len() as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Parse LIBSVM text (`label idx:val ...`, 1-based increasing indices).
///
/// Labels are remapped to contiguous 0-based classes in ascending numeric
/// order; blank lines are skipped.
pub fn parse_libsvm(text: &str, feature_count: usize) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut features = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |message: String| Error::Line {
            line: line_no,
            message,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: i64 = label_tok
            .trim_start_matches('+')
            .parse()
            .map_err(|_| err(format!("label {label_tok:?} is not an integer")))?;
        let mut row = vec![0.0; feature_count];
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed pair {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("index {idx:?} is not a positive integer")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("value {val:?} is not numeric")))?;
            if idx == 0 || idx > feature_count {
                return Err(err(format!("index {idx} outside 1..={feature_count}")));
            }
            if idx <= last {
                return Err(err(format!("index {idx} not strictly increasing")));
            }
            if !val.is_finite() {
                return Err(err(format!("value {val} is not finite")));
            }
            last = idx;
            row[idx - 1] = val;
        }
        raw_labels.push(label);
        features.extend(row);
    }
    if raw_labels.is_empty() {
        return Err(Error::Line {
            line: 0,
            message: "no samples".into(),
        });
    }
    let classes: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(c, l)| (l, c))
        .collect();
    let labels = raw_labels.iter().map(|l| classes[l]).collect();
    Dataset::new(features, labels, classes.len())
}

/// Load `train-*` and `t10k-*` IDX files (optionally `.gz`) from `dir`.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let find = |stem: &str| -> Result<Vec<u8>> {
        for name in [stem.to_string(), format!("{stem}.gz")] {
            let p = dir.join(&name);
            if p.exists() {
                return read_maybe_gzip(p);
            }
        }
        Err(Error::config(format!(
            "{stem}[.gz] not found in {}",
            dir.display()
        )))
    };
    let train = parse_idx(
        &find("train-images-idx3-ubyte")?,
        &find("train-labels-idx1-ubyte")?,
    )?;
    let test = parse_idx(
        &find("t10k-images-idx3-ubyte")?,
        &find("t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// Per-worker index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn workers(&self) -> usize {
        self.shards.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }
}

/// Seeded random even split of `n` samples over `workers` shards.
pub fn partition_iid(n: usize, workers: usize, seed: u64) -> Result<Partition> {
    if workers == 0 {
        return Err(Error::config("partition needs at least one worker"));
    }
    if n < workers {
        return Err(Error::config(format!(
            "{n} samples cannot give each of {workers} workers a sample"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Partition, 0, 0));
    let base = n / workers;
    let extra = n % workers;
    let mut shards = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < extra);
        let mut shard = idx[start..start + len].to_vec();
        shard.sort_unstable();
        shards.push(shard);
        start += len;
    }
    Ok(Partition { shards })
}

/// Non-i.i.d. split: workers `2c` and `2c+1` share class `c` half and half.
pub fn partition_digit_pairs(ds: &Dataset, workers: usize) -> Result<Partition> {
    if workers != 2 * ds.class_count() {
        return Err(Error::config(format!(
            "digit-pair partition needs exactly {} workers for {} classes, got {workers}",
            2 * ds.class_count(),
            ds.class_count()
        )));
    }
    let mut shards = vec![Vec::new(); workers];
    for c in 0..ds.class_count() {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == c).collect();
        if rows.len() < 2 {
            return Err(Error::config(format!(
                "class {c} has fewer than two samples"
            )));
        }
        let half = rows.len().div_ceil(2);
        shards[2 * c] = rows[..half].to_vec();
        shards[2 * c + 1] = rows[half..].to_vec();
    }
    Ok(Partition { shards })
}

/// Draw `batch_size` shard members uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    shard: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    assert!(!shard.is_empty(), "cannot sample from an empty shard");
    (0..batch_size)
        .map(|_| shard[rng.random_range(0..shard.len())])
        .collect()
}

/// Gaussian class blobs: class `c` is centred at a seeded random point with
/// unit-norm-scale spread `spread`.
pub fn synthetic_blobs(
    classes: usize,
    features: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || features == 0 || per_class == 0 {
        return Err(Error::config(
            "synthetic set needs classes, features and samples",
        ));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic, 0, 0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, spread).map_err(|e| Error::config(e.to_string()))?;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| 2.0 * unit.sample(&mut rng)).collect())
        .collect();
    let mut feats = Vec::with_capacity(classes * per_class * features);
    let mut labels = Vec::with_capacity(classes * per_class);
    for i in 0..classes * per_class {
        let c = i % classes;
        feats.extend(centers[c].iter().map(|m| m + noise.sample(&mut rng)));
        labels.push(c);
    }
    Dataset::new(feats, labels, classes)
}
