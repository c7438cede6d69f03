//! Pairwise folding statistics over dataset classes.
//!
//! Every pair `(a, b)` of samples from two classes defines a straight path;
//! the per-path statistic is either the final `chi` or the maximum of the
//! running prefix `chi`. Paths without folding are counted but excluded from
//! the median and MAD, which are computed over the non-zero values only.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{kmeans_cluster, LabeledDataset};
use crate::error::{Error, Result};
use crate::folding::{PathStat, SegmentProbe};
use crate::nn::{LayerMask, MlpNetwork};

/// Path statistic for every pair `(a_i, b_j)`, in row-major order over `i, j`,
/// using all hidden layers.
pub fn pair_folding_sweep(
    net: &MlpNetwork,
    samples_a: ArrayView2<f64>,
    samples_b: ArrayView2<f64>,
    n_steps: usize,
    stat: PathStat,
) -> Result<Vec<f64>> {
    pair_folding_sweep_with_mask(net, samples_a, samples_b, n_steps, stat, &LayerMask::hidden(net))
}

pub fn pair_folding_sweep_with_mask(
    net: &MlpNetwork,
    samples_a: ArrayView2<f64>,
    samples_b: ArrayView2<f64>,
    n_steps: usize,
    stat: PathStat,
    mask: &LayerMask,
) -> Result<Vec<f64>> {
    if samples_a.nrows() == 0 || samples_b.nrows() == 0 {
        return Err(Error::validation("sample sets must be non-empty"));
    }
    if n_steps < 2 {
        return Err(Error::validation("paths need at least two samples"));
    }
    for s in [&samples_a, &samples_b] {
        if s.ncols() != net.input_dim() {
            return Err(Error::validation(format!(
                "samples have dimension {}, the network expects {}",
                s.ncols(),
                net.input_dim()
            )));
        }
    }
    let probe = SegmentProbe::new(net, mask.clone());
    let anchors = |s: &ArrayView2<f64>| -> Result<Vec<_>> {
        s.outer_iter().map(|row| probe.anchor(&row.to_vec())).collect()
    };
    let (za, zb) = (anchors(&samples_a)?, anchors(&samples_b)?);
    let nb = zb.len();
    Ok((0..za.len() * nb)
        .into_par_iter()
        .map(|ij| probe.path_stat(&za[ij / nb], &zb[ij % nb], n_steps, stat))
        .collect())
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub class_a: u8,
    pub class_b: u8,
    pub n_paths: usize,
    pub nonzero_count: usize,
    pub nonzero_ratio: f64,
    /// Median of the non-zero values; absent when every path is flat.
    pub median_max_chi: Option<f64>,
    pub mad: Option<f64>,
}

pub fn summarize_pair(values: &[f64], class_a: u8, class_b: u8) -> PairSummary {
    let nonzero: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let (median_max_chi, spread) = if nonzero.is_empty() {
        (None, None)
    } else {
        (Some(median(&nonzero)), Some(mad(&nonzero)))
    };
    PairSummary {
        class_a,
        class_b,
        n_paths: values.len(),
        nonzero_count: nonzero.len(),
        nonzero_ratio: if values.is_empty() {
            0.0
        } else {
            nonzero.len() as f64 / values.len() as f64
        },
        median_max_chi,
        mad: spread,
    }
}

/// How the representatives of each class are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Up to `limit` samples per class (all samples when `None`).
    Limit(Option<usize>),
    /// `k` k-means centroids per class.
    Cluster { k: usize, max_iters: usize },
}

pub const DEFAULT_PER_CLASS: usize = 100;
pub const DEFAULT_KMEANS_ITERS: usize = 100;

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Limit(Some(DEFAULT_PER_CLASS))
    }
}

/// Representatives of one class under `sampling`.
pub fn class_representatives(
    data: &LabeledDataset,
    class: u8,
    sampling: &Sampling,
    seed: u64,
) -> Result<Array2<f64>> {
    match sampling {
        Sampling::Limit(limit) => data.sample_class(class, *limit, seed),
        Sampling::Cluster { k, max_iters } => {
            let raw = data.sample_class(class, None, seed)?;
            Ok(kmeans_cluster(raw.view(), *k, seed, *max_iters)?.centroid_matrix())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub classes: Vec<u8>,
    /// Row-major over ordered pairs `(classes[i], classes[j])`.
    pub cells: Vec<PairSummary>,
}

impl Heatmap {
    pub fn cell(&self, a: u8, b: u8) -> Option<&PairSummary> {
        self.cells.iter().find(|c| c.class_a == a && c.class_b == b)
    }

    /// Median of the cell medians, over cells that have one.
    pub fn aggregate(&self) -> Option<f64> {
        let medians: Vec<f64> = self.cells.iter().filter_map(|c| c.median_max_chi).collect();
        (!medians.is_empty()).then(|| median(&medians))
    }

    pub fn to_csv(&self) -> String {
        summaries_csv(&self.cells)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `class_a,class_b,n_paths,nonzero_count,nonzero_ratio,median_max_chi,mad`;
/// absent statistics are empty fields.
pub fn summaries_csv(cells: &[PairSummary]) -> String {
    let mut out = String::from("class_a,class_b,n_paths,nonzero_count,nonzero_ratio,median_max_chi,mad\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.class_a,
            c.class_b,
            c.n_paths,
            c.nonzero_count,
            c.nonzero_ratio,
            opt(c.median_max_chi),
            opt(c.mad)
        );
    }
    out
}

/// Summary for every ordered pair of `classes`, diagonal included.
pub fn heatmap_matrix(
    net: &MlpNetwork,
    data: &LabeledDataset,
    classes: &[u8],
    sampling: &Sampling,
    n_steps: usize,
    stat: PathStat,
    seed: u64,
) -> Result<Heatmap> {
    if classes.is_empty() {
        return Err(Error::validation("no classes selected"));
    }
    let reps = classes
        .iter()
        .map(|&c| class_representatives(data, c, sampling, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(classes.len() * classes.len());
    for (i, &a) in classes.iter().enumerate() {
        for (j, &b) in classes.iter().enumerate() {
            let values = pair_folding_sweep(net, reps[i].view(), reps[j].view(), n_steps, stat)?;
            cells.push(summarize_pair(&values, a, b));
        }
    }
    Ok(Heatmap {
        classes: classes.to_vec(),
        cells,
    })
}

/// Pearson correlation of `(depth, aggregate)` points.
pub fn depth_correlation(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::validation("need at least three depth points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with zero variance".to_string()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldingRatioReport {
    pub pairs: Vec<PairSummary>,
    pub mean_ratio: f64,
    pub std_ratio: f64,
}

pub fn folding_ratio_report(
    net: &MlpNetwork,
    data: &LabeledDataset,
    class_pairs: &[(u8, u8)],
    sampling: &Sampling,
    n_steps: usize,
    stat: PathStat,
    seed: u64,
) -> Result<FoldingRatioReport> {
    if class_pairs.is_empty() {
        return Err(Error::validation("no class pairs selected"));
    }
    let mut pairs = Vec::with_capacity(class_pairs.len());
    for &(a, b) in class_pairs {
        let ra = class_representatives(data, a, sampling, seed)?;
        let rb = class_representatives(data, b, sampling, seed)?;
        let values = pair_folding_sweep(net, ra.view(), rb.view(), n_steps, stat)?;
        pairs.push(summarize_pair(&values, a, b));
    }
    let ratios: Vec<f64> = pairs.iter().map(|p| p.nonzero_ratio).collect();
    let (mean_ratio, std_ratio) = mean_std(&ratios);
    Ok(FoldingRatioReport {
        pairs,
        mean_ratio,
        std_ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Only the first class is replaced by centroids.
    OneClass,
    BothClasses,
}

impl ClusterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterMode::OneClass => "one_class",
            ClusterMode::BothClasses => "both_classes",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub n_steps: usize,
    pub stat: PathStat,
    pub seed: u64,
    /// Raw samples per class; centroids are computed from these samples and
    /// the reference uses them directly. `None` uses the whole class.
    pub per_class: Option<usize>,
    pub max_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub k: usize,
    pub mode: ClusterMode,
    /// Mean and sample standard deviation of the path statistic, zeros included.
    pub mean_chi: f64,
    pub std_chi: f64,
    pub summary: PairSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
    pub reference_chi: f64,
    pub reference_std: f64,
    pub reference: PairSummary,
}

impl SensitivityReport {
    /// `k,mode,mean_chi,std_chi,reference_chi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mode,mean_chi,std_chi,reference_chi\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.k,
                r.mode.as_str(),
                r.mean_chi,
                r.std_chi,
                self.reference_chi
            );
        }
        out
    }

    pub fn row(&self, k: usize) -> Option<&SensitivityRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

/// Folding between two classes when each class is replaced by `k` centroids,
/// for every `k` in `k_list`, next to the raw-sample reference.
pub fn clustering_sensitivity_sweep(
    net: &MlpNetwork,
    data: &LabeledDataset,
    class_a: u8,
    class_b: u8,
    k_list: &[usize],
    mode: ClusterMode,
    config: &SensitivityConfig,
) -> Result<SensitivityReport> {
    if k_list.is_empty() {
        return Err(Error::validation("k list is empty"));
    }
    let raw_a = data.sample_class(class_a, config.per_class, config.seed)?;
    let raw_b = data.sample_class(class_b, config.per_class, config.seed)?;
    for &k in k_list {
        let limit = match mode {
            ClusterMode::OneClass => raw_a.nrows(),
            ClusterMode::BothClasses => raw_a.nrows().min(raw_b.nrows()),
        };
        if k == 0 || k > limit {
            return Err(Error::validation(format!("k = {k} must be in 1..={limit}")));
        }
    }
    let sweep = |a: ArrayView2<f64>, b: ArrayView2<f64>| {
        pair_folding_sweep(net, a, b, config.n_steps, config.stat)
    };
    let reference_values = sweep(raw_a.view(), raw_b.view())?;
    let (reference_chi, reference_std) = mean_std(&reference_values);
    let centroids = |raw: &Array2<f64>, k: usize| -> Result<Array2<f64>> {
        Ok(kmeans_cluster(raw.view(), k, config.seed, config.max_iters)?.centroid_matrix())
    };
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let ca = centroids(&raw_a, k)?;
        let values = match mode {
            ClusterMode::OneClass => sweep(ca.view(), raw_b.view())?,
            ClusterMode::BothClasses => sweep(ca.view(), centroids(&raw_b, k)?.view())?,
        };
        let (mean_chi, std_chi) = mean_std(&values);
        rows.push(SensitivityRow {
            k,
            mode,
            mean_chi,
            std_chi,
            summary: summarize_pair(&values, class_a, class_b),
        });
    }
    Ok(SensitivityReport {
        rows,
        reference_chi,
        reference_std,
        reference: summarize_pair(&reference_values, class_a, class_b),
    })
}
