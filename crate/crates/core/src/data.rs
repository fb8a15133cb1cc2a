//! Dataset ingestion, min-max scaling, stratified splitting and mini-batch
//! iteration.
//!
//! Tabular data comes from CSV. Toy image data comes either from a small
//! binary file or from a seeded generator; images are kept flattened (one
//! row per image) together with their `channels x height x width` shape.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use crate::augment::{Batch, BatchInputs, ImageTensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::one_hot;
use crate::rng::RngStream;

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const IMAGE_MAGIC: &[u8; 8] = b"MWHIMG1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Original label strings, indexed by class id.
    pub class_names: Vec<String>,
    pub feature_names: Option<Vec<String>>,
    /// `[channels, height, width]` when each row is a flattened image.
    pub image_shape: Option<[usize; 3]>,
}

pub type TabularDataset = Dataset;

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `indices`, in that order, as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            features: Matrix::zeros(0, self.features.cols()),
            labels: Vec::new(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            image_shape: self.image_shape,
        }
    }

    pub fn targets(&self) -> Matrix {
        one_hot(&self.labels, self.num_classes)
    }

    fn batch_of(&self, indices: &[usize]) -> Result<Batch> {
        let x = self.features.select_rows(indices);
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let inputs = match self.image_shape {
            Some([c, h, w]) => BatchInputs::Images(ImageTensor::from_matrix(&x, c, h, w)?),
            None => BatchInputs::Features(x),
        };
        Batch::new(inputs, one_hot(&labels, self.num_classes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

impl LabelColumn {
    /// Integers select by 0-based position, anything else by header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) if s.trim().eq_ignore_ascii_case("last") => LabelColumn::Last,
            Err(_) => LabelColumn::Name(s.trim().to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_column: LabelColumn,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            label_column: LabelColumn::Last,
        }
    }
}

/// Reads a comma-separated file with numeric features and one label column.
///
/// Labels are mapped to dense class ids in order of first appearance. Row
/// numbers in errors are 1-based file line numbers.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let headers: Option<Vec<String>> = if opts.has_header {
        let h = reader.headers().map_err(|e| csv_error(path, e))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut label_idx: Option<usize> = None;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let n = record.len();
        let w = *width.get_or_insert(n);
        if n != w {
            return Err(Error::MalformedRow {
                path: path.into(),
                row,
                detail: format!("expected {w} fields, found {n}"),
            });
        }
        let li = match label_idx {
            Some(i) => i,
            None => {
                let i =
                    resolve_label(&opts.label_column, headers.as_deref(), n).map_err(|detail| {
                        Error::Format {
                            path: path.into(),
                            detail,
                        }
                    })?;
                label_idx = Some(i);
                i
            }
        };
        if n < 2 {
            return Err(Error::MalformedRow {
                path: path.into(),
                row,
                detail: "need at least one feature and a label".into(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            if c == li {
                continue;
            }
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    path: path.into(),
                    row,
                    column: headers
                        .as_ref()
                        .and_then(|h| h.get(c).cloned())
                        .unwrap_or_else(|| c.to_string()),
                    value: field.to_string(),
                })?;
            values.push(v);
        }
        let label = record.get(li).unwrap_or_default().to_string();
        if label.is_empty() {
            return Err(Error::MalformedRow {
                path: path.into(),
                row,
                detail: "empty label".into(),
            });
        }
        let next = class_ids.len();
        let id = *class_ids.entry(label.clone()).or_insert_with(|| {
            class_names.push(label);
            next
        });
        labels.push(id);
    }

    if labels.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let w = width.unwrap_or(0);
    let li = label_idx.unwrap_or(0);
    let features = Matrix::from_vec(labels.len(), w - 1, values)?;
    let feature_names = headers.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|&(c, _)| c != li)
            .map(|(_, name)| name)
            .collect()
    });
    Ok(Dataset {
        features,
        labels,
        num_classes: class_names.len(),
        class_names,
        feature_names,
        image_shape: None,
    })
}

fn resolve_label(
    col: &LabelColumn,
    headers: Option<&[String]>,
    width: usize,
) -> std::result::Result<usize, String> {
    match col {
        LabelColumn::Last => Ok(width.saturating_sub(1)),
        LabelColumn::Index(i) if *i < width => Ok(*i),
        LabelColumn::Index(i) => Err(format!("label column {i} but rows have {width} fields")),
        LabelColumn::Name(name) => headers
            .ok_or_else(|| {
                format!("label column {name:?} given by name but the file has no header")
            })?
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("no column named {name:?}")),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            path: path.into(),
            row,
            detail: format!("{other:?}"),
        },
    }
}

/// Per-column min-max parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Matrix) -> Self {
        let mut min = vec![f64::INFINITY; x.cols()];
        let mut max = vec![f64::NEG_INFINITY; x.cols()];
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Self { min, max }
    }

    /// `(x - min) / (max - min)`; columns that were constant at fit time map
    /// to zero.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.min.len() {
            return Err(Error::shape(
                "MinMaxScaler::transform",
                format!("{} columns, scaler fitted on {}", x.cols(), self.min.len()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let range = self.max[c] - self.min[c];
                *v = if range > 0.0 {
                    (*v - self.min[c]) / range
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Scales a dataset by its own column ranges.
pub fn minmax_scale(dataset: &Dataset) -> Dataset {
    let scaler = MinMaxScaler::fit(&dataset.features);
    Dataset {
        features: scaler.transform(&dataset.features).expect("same width"),
        ..dataset.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(Error::config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )))
        }
    }
}

fn train_count(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).min(n)
}

/// Splits `total` training slots across groups of the given sizes in
/// proportion to their size (largest remainder, ties to the earlier group).
fn allocate(sizes: &[usize], frac: f64) -> Vec<usize> {
    let total = train_count(sizes.iter().sum(), frac);
    let quotas: Vec<f64> = sizes.iter().map(|&n| n as f64 * frac).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(counts.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if counts[g] < sizes[g] {
            counts[g] += 1;
            missing -= 1;
        }
    }
    counts
}

/// Shuffled split. With stratification the `round(n * train_fraction)`
/// training rows are shared out across classes by largest remainder, so
/// class proportions hold within one row. Classes with fewer than two rows
/// are pooled and split without stratification.
pub fn split(
    dataset: &Dataset,
    spec: &SplitSpec,
    rng: &mut RngStream,
) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    if spec.stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
        for (i, &y) in dataset.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut pooled = Vec::new();
        for (class, idx) in by_class.into_iter().enumerate() {
            match idx.len() {
                0 => {}
                1 => {
                    warn!("class {class} has a single sample; splitting it without stratification");
                    pooled.extend(idx);
                }
                _ => groups.push(idx),
            }
        }
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let counts = allocate(&sizes, spec.train_fraction);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (mut idx, k) in groups.into_iter().zip(counts) {
            rng.shuffle(&mut idx);
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
        if !pooled.is_empty() {
            rng.shuffle(&mut pooled);
            let k = train_count(pooled.len(), spec.train_fraction);
            train.extend_from_slice(&pooled[..k]);
            test.extend_from_slice(&pooled[k..]);
        }
        Ok(finish_split(dataset, train, test))
    } else {
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut idx);
        let k = train_count(idx.len(), spec.train_fraction);
        let test = idx.split_off(k);
        Ok(finish_split(dataset, idx, test))
    }
}

fn finish_split(
    dataset: &Dataset,
    mut train: Vec<usize>,
    mut test: Vec<usize>,
) -> (Dataset, Dataset) {
    train.sort_unstable();
    test.sort_unstable();
    (dataset.subset(&train), dataset.subset(&test))
}

/// Epoch-wise mini-batch iterator; the final batch may be short.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(Self {
            dataset,
            batch_size,
            order: (0..dataset.len()).collect(),
            cursor: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.batch_size)
    }

    /// Reshuffles the visiting order with one permutation draw and rewinds.
    pub fn start_epoch(&mut self, rng: &mut RngStream) {
        self.order = rng.permutation(self.dataset.len());
        self.cursor = 0;
    }

    /// Dataset indices of the next batch, or `None` at the end of the epoch.
    pub fn next_indices(&mut self) -> Option<&[usize]> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        Some(idx)
    }

    /// Next batch with one-hot targets, or `None` at the end of the epoch.
    pub fn next_batch(&mut self) -> Option<Result<Batch>> {
        let dataset = self.dataset;
        self.next_indices().map(|idx| dataset.batch_of(idx))
    }
}

/// Seeded two-or-more-class toy image task: each class lights up a
/// different quadrant on top of uniform background noise.
///
/// Pixels are `U[0, 0.6)` noise plus `0.4` inside the class quadrant
/// (classes cycle through top-left, bottom-right, top-right, bottom-left),
/// rounded to `f32` so the binary format stores them exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticImages {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for SyntheticImages {
    fn default() -> Self {
        Self {
            n: 200,
            channels: 1,
            height: 8,
            width: 8,
            classes: 2,
            seed: 0,
        }
    }
}

impl SyntheticImages {
    pub fn generate(&self) -> Result<Dataset> {
        if self.classes < 2 || self.classes > 4 {
            return Err(Error::config("synthetic images support 2 to 4 classes"));
        }
        if self.n == 0 || self.channels == 0 || self.height < 2 || self.width < 2 {
            return Err(Error::config(
                "synthetic images need n >= 1 and at least 2x2 pixels",
            ));
        }
        let mut rng = RngStream::new(self.seed);
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(self.n * self.channels * h * w);
        let mut labels = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let class = i % self.classes;
            labels.push(class);
            let (top, left) = match class {
                0 => (true, true),
                1 => (false, false),
                2 => (true, false),
                _ => (false, true),
            };
            for _ in 0..self.channels {
                for y in 0..h {
                    for x in 0..w {
                        let lit = (y < h / 2) == top && (x < w / 2) == left;
                        let v = 0.6 * rng.uniform01() + if lit { 0.4 } else { 0.0 };
                        data.push(v.min(1.0) as f32 as f64);
                    }
                }
            }
        }
        let images = ImageTensor::new(self.n, self.channels, h, w, data)?;
        Ok(image_dataset(&images, labels, self.classes))
    }
}

pub fn image_dataset(images: &ImageTensor, labels: Vec<usize>, num_classes: usize) -> Dataset {
    Dataset {
        features: images.to_matrix(),
        labels,
        num_classes,
        class_names: (0..num_classes).map(|k| k.to_string()).collect(),
        feature_names: None,
        image_shape: Some([images.channels(), images.height(), images.width()]),
    }
}

/// Writes images in the binary toy format:
///
/// ```text
/// magic     8 bytes  "MWHIMG1\0"
/// dims      4 x u32  batch, channels, height, width
/// classes   u32
/// labels    batch x u32
/// payload   batch*channels*height*width x f32, row-major
/// ```
///
/// All integers and floats are little-endian.
pub fn write_images(
    path: &Path,
    images: &ImageTensor,
    labels: &[usize],
    num_classes: usize,
) -> Result<()> {
    if labels.len() != images.batch() {
        return Err(Error::shape("write_images", "one label per image required"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(8 + 20 + 4 * labels.len() + 4 * images.data().len());
    bytes.extend_from_slice(IMAGE_MAGIC);
    for d in images.dims() {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&(num_classes as u32).to_le_bytes());
    for &l in labels {
        bytes.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &v in images.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_images(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Format {
        path: path.into(),
        detail: detail.to_string(),
    };
    if bytes.len() < 28 || &bytes[..8] != IMAGE_MAGIC {
        return Err(bad("missing image header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let dims = [word(8), word(12), word(16), word(20)];
    let classes = word(24);
    let [n, c, h, w] = dims;
    let count = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let want = 28 + 4 * n + 4 * count;
    if bytes.len() != want {
        return Err(bad(&format!(
            "expected {want} bytes, found {}",
            bytes.len()
        )));
    }
    let labels: Vec<usize> = (0..n).map(|i| word(28 + 4 * i)).collect();
    if classes == 0 || labels.iter().any(|&l| l >= classes) {
        return Err(bad("label outside the declared class count"));
    }
    let base = 28 + 4 * n;
    let data: Vec<f64> = (0..count)
        .map(|i| {
            let k = base + 4 * i;
            f32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as f64
        })
        .collect();
    let images = ImageTensor::new(n, c, h, w, data)?;
    Ok(image_dataset(&images, labels, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn toy_csv() {
        let f = write_tmp("a,b,label\n1,2,cat\n3,4,dog\n5,6,cat\n");
        let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.class_names, vec!["cat", "dog"]);
        assert_eq!(ds.features.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn label_by_name_index_and_headerless() {
        let f = write_tmp("y,a,b\n1,0.5,2\n0,1.5,3\n");
        let by_name = CsvOptions {
            has_header: true,
            label_column: LabelColumn::parse("y"),
        };
        let ds = load_csv(f.path(), &by_name).unwrap();
        assert_eq!(ds.features.row(0), &[0.5, 2.0]);
        assert_eq!(
            ds.feature_names.as_deref(),
            Some(&["a".to_string(), "b".to_string()][..])
        );

        let g = write_tmp("1,0.5,2\n0,1.5,3\n");
        let headerless = CsvOptions {
            has_header: false,
            label_column: LabelColumn::parse("0"),
        };
        let ds = load_csv(g.path(), &headerless).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.class_names, vec!["1", "0"]);
    }

    #[test]
    fn bad_row_is_named() {
        let f = write_tmp("a,b,label\n1,2,x\n3,oops,y\n5,6,x\n");
        match load_csv(f.path(), &CsvOptions::default()) {
            Err(Error::NonNumeric {
                row, column, value, ..
            }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_error_kinds() {
        let missing = load_csv(Path::new("/nonexistent/file.csv"), &CsvOptions::default());
        assert!(matches!(missing, Err(Error::Io { .. })));
        let empty = write_tmp("a,b,label\n");
        assert!(matches!(
            load_csv(empty.path(), &CsvOptions::default()),
            Err(Error::EmptyDataset(_))
        ));
        let ragged = write_tmp("a,b,label\n1,2,x\n3,y\n");
        assert!(matches!(
            load_csv(ragged.path(), &CsvOptions::default()),
            Err(Error::MalformedRow { row: 3, .. })
        ));
    }

    #[test]
    fn minmax_arithmetic() {
        let ds = Dataset {
            features: Matrix::from_rows(&[[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]),
            labels: vec![0, 0, 0],
            num_classes: 1,
            class_names: vec!["a".into()],
            feature_names: None,
            image_shape: None,
        };
        let scaled = minmax_scale(&ds);
        assert_eq!(
            scaled.features,
            Matrix::from_rows(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        );
    }

    fn balanced(n: usize) -> Dataset {
        Dataset {
            features: Matrix::from_fn(n, 1, |r, _| r as f64),
            labels: (0..n).map(|i| i % 2).collect(),
            num_classes: 2,
            class_names: vec!["a".into(), "b".into()],
            feature_names: None,
            image_shape: None,
        }
    }

    #[test]
    fn stratified_split_counts() {
        let ds = balanced(100);
        let (train, test) = split(&ds, &SplitSpec::default(), &mut RngStream::new(3)).unwrap();
        assert_eq!(train.len(), 75);
        assert_eq!(test.len(), 25);
        let zeros = train.labels.iter().filter(|&&y| y == 0).count();
        assert!(zeros == 37 || zeros == 38);
        let (t2, _) = split(&ds, &SplitSpec::default(), &mut RngStream::new(3)).unwrap();
        assert_eq!(t2, train);
    }

    #[test]
    fn split_partitions_dataset() {
        let ds = balanced(37);
        for stratified in [true, false] {
            let spec = SplitSpec {
                train_fraction: 0.6,
                stratified,
            };
            let (train, test) = split(&ds, &spec, &mut RngStream::new(8)).unwrap();
            let mut all: Vec<usize> = train
                .features
                .data()
                .iter()
                .chain(test.features.data())
                .map(|&v| v as usize)
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..37).collect::<Vec<_>>());
        }
    }

    #[test]
    fn singleton_class_falls_back() {
        let mut ds = balanced(20);
        ds.labels[0] = 2;
        ds.num_classes = 3;
        let (train, test) = split(&ds, &SplitSpec::default(), &mut RngStream::new(1)).unwrap();
        assert_eq!(train.len() + test.len(), 20);
        assert!(split(
            &ds,
            &SplitSpec {
                train_fraction: 1.0,
                stratified: true
            },
            &mut RngStream::new(1)
        )
        .is_err());
    }

    #[test]
    fn batch_sizes_follow_ceil_rule() {
        let ds = balanced(10);
        let mut it = BatchIterator::new(&ds, 3).unwrap();
        assert_eq!(it.batches_per_epoch(), 4);
        it.start_epoch(&mut RngStream::new(0));
        let mut sizes = Vec::new();
        let mut seen = Vec::new();
        while let Some(b) = it.next_batch() {
            let b = b.unwrap();
            sizes.push(b.len());
            for r in 0..b.len() {
                assert_eq!(b.targets.row(r).iter().sum::<f64>(), 1.0);
                seen.push(b.inputs.to_matrix().get(r, 0) as usize);
            }
        }
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(BatchIterator::new(&ds, 0).is_err());
    }

    #[test]
    fn synthetic_images_in_unit_range() {
        let ds = SyntheticImages::default().generate().unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.image_shape, Some([1, 8, 8]));
        assert!(ds.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn image_file_round_trip() {
        let ds = SyntheticImages {
            n: 12,
            channels: 2,
            height: 4,
            width: 5,
            classes: 3,
            seed: 4,
        }
        .generate()
        .unwrap();
        let [c, h, w] = ds.image_shape.unwrap();
        let images = ImageTensor::from_matrix(&ds.features, c, h, w).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_images(f.path(), &images, &ds.labels, ds.num_classes).unwrap();
        let back = load_images(f.path()).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.num_classes, 3);
        let bytes = std::fs::read(f.path()).unwrap();
        let g = tempfile::NamedTempFile::new().unwrap();
        write_images(
            g.path(),
            &ImageTensor::from_matrix(&back.features, c, h, w).unwrap(),
            &back.labels,
            3,
        )
        .unwrap();
        assert_eq!(std::fs::read(g.path()).unwrap(), bytes);
    }

    #[test]
    fn malformed_image_header() {
        let f = write_tmp("not an image file at all....");
        assert!(matches!(load_images(f.path()), Err(Error::Format { .. })));
        let mut bytes = IMAGE_MAGIC.to_vec();
        for d in [1u32, 1, 2, 2, 2, 0] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        let g = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(g.path(), &bytes).unwrap();
        assert!(matches!(load_images(g.path()), Err(Error::Format { .. })));
    }
}
