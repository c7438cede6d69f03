//! MNIST ingestion (IDX files) and per-class k-means clustering.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

/// Environment variable naming the directory holding the four MNIST files.
pub const DATA_DIR_ENV: &str = "FOLDSCOPE_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Standard MNIST file names for this split.
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

/// Images (one row per sample, values in `[0, 1]`) with labels `0..=9`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Array2<f64>,
    labels: Vec<u8>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Array2<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::validation(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::validation(format!("label {bad} outside 0..=9")));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            split,
        })
    }

    pub fn images(&self) -> ArrayView2<'_, f64> {
        self.images.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn image(&self, i: usize) -> ArrayView1<'_, f64> {
        self.images.row(i)
    }

    pub fn class_indices(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Rows at `indices`, in order.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.images.select(Axis(0), indices)
    }

    /// Up to `limit` samples of one class, chosen uniformly without
    /// replacement from the seed and returned in dataset order.
    pub fn sample_class(&self, label: u8, limit: Option<usize>, seed: u64) -> Result<Array2<f64>> {
        let mut idx = self.class_indices(label);
        if idx.is_empty() {
            return Err(Error::validation(format!("class {label} has no samples")));
        }
        if let Some(limit) = limit {
            if limit == 0 {
                return Err(Error::validation("per-class limit must be at least 1"));
            }
            if limit < idx.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(label as u64);
                let mut chosen = rand::seq::index::sample(&mut rng, idx.len(), limit).into_vec();
                chosen.sort_unstable();
                idx = chosen.into_iter().map(|i| idx[i]).collect();
            }
        }
        Ok(self.rows(&idx))
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

fn read_u32(bytes: &[u8], at: usize, context: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: context.into(),
            message: format!("truncated header: {} bytes", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, context: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, context)?;
    if magic != expected {
        return Err(Error::Format {
            path: context.into(),
            message: format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, count: usize, context: &str) -> Result<()> {
    let have = bytes.len() - header;
    if have != count {
        return Err(Error::Format {
            path: context.into(),
            message: format!("expected {count} payload bytes after the header, found {have}"),
        });
    }
    Ok(())
}

/// Parse an IDX image file; returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], context: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC, context)?;
    let n = read_u32(bytes, 4, context)? as usize;
    let rows = read_u32(bytes, 8, context)? as usize;
    let cols = read_u32(bytes, 12, context)? as usize;
    check_payload(bytes, 16, n * rows * cols, context)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], context: &str) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, context)?;
    let n = read_u32(bytes, 4, context)? as usize;
    check_payload(bytes, 8, n, context)?;
    Ok(bytes[8..].to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load an image/label file pair. The split is `Test` when the image file
/// name contains `t10k` or `test`.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let name = ip.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    let split = if name.contains("t10k") || name.contains("test") {
        Split::Test
    } else {
        Split::Train
    };
    let (n, rows, cols, pixels) = parse_idx_images(&read_file(ip)?, &ip.display().to_string())?;
    let labels = parse_idx_labels(&read_file(lp)?, &lp.display().to_string())?;
    if labels.len() != n {
        return Err(Error::validation(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let images = Array2::from_shape_vec((n, rows * cols), pixels)
        .expect("payload length was checked")
        .mapv(|p| p as f64 / 255.0);
    LabeledDataset::new(images, labels, split)
}

/// Load one split from a directory holding the standard file names.
pub fn load_mnist_split(dir: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let (images, labels) = split.file_names();
    let dir = dir.as_ref();
    let mut data = load_mnist_idx(dir.join(images), dir.join(labels))?;
    data.split = split;
    Ok(data)
}

/// `explicit` if given, otherwise the directory named by `FOLDSCOPE_DATA_DIR`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(dir) = explicit {
        return Ok(dir.to_path_buf());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::validation(format!("no data directory given and {DATA_DIR_ENV} is unset")))
}

/// Result of clustering the samples of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassClustering {
    pub class: Option<u8>,
    pub k: usize,
    pub seed: u64,
    pub init: String,
    pub iterations: usize,
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

impl ClassClustering {
    pub fn centroid_matrix(&self) -> Array2<f64> {
        let dim = self.centroids.first().map_or(0, Vec::len);
        Array2::from_shape_fn((self.k, dim), |(i, j)| self.centroids[i][j])
    }

    pub fn final_inertia(&self) -> f64 {
        *self.inertia.last().expect("at least one iteration")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("clustering serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (ties to the lowest index) and its squared distance.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm seeded with `k` distinct random samples. Clusters that
/// become empty take the point farthest from the centroid of the currently
/// largest cluster. Stops when assignments no longer change or after
/// `max_iters` assignment steps.
pub fn kmeans_cluster(samples: ArrayView2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<ClassClustering> {
    let n = samples.nrows();
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if k > n {
        return Err(Error::validation(format!("k = {k} exceeds the {n} samples")));
    }
    if max_iters == 0 {
        return Err(Error::validation("max_iters must be at least 1"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("samples must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = rand::seq::index::sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids = samples.select(Axis(0), &init);
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let nearest_all: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(samples.row(i), &centroids))
            .collect();
        let mut changed = false;
        let mut dist = Vec::with_capacity(n);
        for (i, (j, d)) in nearest_all.into_iter().enumerate() {
            changed |= assignment[i] != j;
            assignment[i] = j;
            dist.push(d);
        }
        let mut counts = vec![0usize; k];
        for &j in &assignment {
            counts[j] += 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("k >= 1");
            let far = (0..n)
                .filter(|&i| assignment[i] == largest)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("largest cluster is non-empty");
            assignment[far] = empty;
            counts[largest] -= 1;
            counts[empty] = 1;
            dist[far] = 0.0;
            centroids.row_mut(empty).assign(&samples.row(far));
            changed = true;
        }
        inertia.push(dist.iter().sum());
        if !changed && iterations > 1 {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        for (i, &j) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(j);
            row += &samples.row(i);
        }
        for j in 0..k {
            let mut row = sums.row_mut(j);
            row /= counts[j] as f64;
        }
        centroids = sums;
    }
    let mut counts = vec![0usize; k];
    for &j in &assignment {
        counts[j] += 1;
    }
    Ok(ClassClustering {
        class: None,
        k,
        seed,
        init: "uniform-distinct-samples".to_string(),
        iterations,
        centroids: centroids.outer_iter().map(|r| r.to_vec()).collect(),
        counts,
        inertia,
    })
}
