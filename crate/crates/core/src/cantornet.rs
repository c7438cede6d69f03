//! CantorNet: a hand-built ReLU network whose decision surface on the unit
//! square is the `k`-fold nesting of `A(x) = max{-3x + 1, 0, 3x - 2}`.
//!
//! Each recursion block maps `(x, y)` to `(A(x), y)` with two hidden layers
//! of widths 3 and 2, so depth `k` has `2k` hidden layers and `5k` hidden
//! neurons. The linear head computes `-A^(k)(x)/2 + y - 1/2`, which is `<= 0`
//! exactly on the region `y <= (A^(k)(x) + 1) / 2`.
//!
//! The fixtures binarize the output unit together with the hidden units: the
//! decision boundary is part of the tessellation being walked.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::array;

use crate::error::{Error, Result};
use crate::folding::{folding_with_layer_mask, refine_path, sample_segment, FoldingProfile};
use crate::nn::{DenseLayer, LayerMask, MlpNetwork};
use crate::pattern::ActivationPattern;

pub fn generating_function(x: f64) -> f64 {
    (-3.0 * x + 1.0).max(0.0).max(3.0 * x - 2.0)
}

/// `A` composed `k` times (`k = 0` is the identity).
pub fn nested_generating_function(x: f64, k: usize) -> f64 {
    (0..k).fold(x, |v, _| generating_function(v))
}

pub fn build_cantornet(k: usize) -> Result<MlpNetwork> {
    if k < 1 {
        return Err(Error::validation("CantorNet recursion depth must be at least 1"));
    }
    let mut layers = Vec::with_capacity(2 * k + 1);
    for _ in 0..k {
        layers.push(DenseLayer::new(
            array![[-3.0, 0.0], [3.0, 0.0], [0.0, 1.0]],
            array![1.0, -2.0, 0.0],
        )?);
        layers.push(DenseLayer::new(
            array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            array![0.0, 0.0],
        )?);
    }
    layers.push(DenseLayer::new(array![[-0.5, 1.0]], array![-0.5])?);
    MlpNetwork::new(2, layers)
}

/// Membership in `R_k = {(x, y) : y <= (A^(k)(x) + 1) / 2}`.
pub fn decision_region_contains(k: usize, point: [f64; 2]) -> bool {
    let [x, y] = point;
    y <= (nested_generating_function(x, k) + 1.0) / 2.0
}

/// A maximal run of consecutive scan samples sharing one pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionRun {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub pattern: ActivationPattern,
}

/// Sample `resolution` equally spaced points between `x1` and `x2` and group
/// them into runs of identical patterns.
pub fn scan_regions(
    net: &MlpNetwork,
    x1: &[f64],
    x2: &[f64],
    resolution: usize,
    mask: &LayerMask,
) -> Result<Vec<RegionRun>> {
    let path = sample_segment(x1, x2, resolution)?;
    let mut runs: Vec<RegionRun> = Vec::new();
    for (i, x) in path.points().enumerate() {
        let pattern = net.pattern_with_mask(&x, mask)?;
        let lambda = path.lambdas()[i];
        match runs.last_mut() {
            Some(run) if run.pattern == pattern => run.lambda_end = lambda,
            _ => runs.push(RegionRun {
                lambda_start: lambda,
                lambda_end: lambda,
                pattern,
            }),
        }
    }
    Ok(runs)
}

/// Raster of the tessellation on `[0,1]^2` as CSV (`x,y,region,pattern`).
/// Region ids are assigned in order of first appearance, row by row.
pub fn tessellation_csv(k: usize, resolution: usize, include_output: bool) -> Result<String> {
    if resolution < 2 {
        return Err(Error::validation("raster resolution must be at least 2"));
    }
    let net = build_cantornet(k)?;
    let mask = if include_output {
        LayerMask::hidden_and_output(&net)
    } else {
        LayerMask::hidden(&net)
    };
    let step = 1.0 / (resolution - 1) as f64;
    let mut ids: HashMap<ActivationPattern, usize> = HashMap::new();
    let mut out = String::from("x,y,region,pattern\n");
    for iy in 0..resolution {
        for ix in 0..resolution {
            let (x, y) = (ix as f64 * step, iy as f64 * step);
            let pattern = net.pattern_with_mask(&[x, y], &mask)?;
            let next = ids.len();
            let id = *ids.entry(pattern.clone()).or_insert(next);
            let _ = writeln!(out, "{x},{y},{id},{pattern}");
        }
    }
    Ok(out)
}

/// Horizontal line used by both fixtures.
pub const FIXTURE_HEIGHT: f64 = 0.75;

/// Samples of the initial path; `2^5 + 1` keeps every λ dyadic so no sample
/// falls on a region boundary (those sit at multiples of `1/18`).
const FIXTURE_SAMPLES: usize = 33;
const FIXTURE_BUDGET: usize = 4096;

#[derive(Clone, Debug)]
pub struct Fig3Report {
    /// Hidden-layer regions found along the scanned segment.
    pub regions: Vec<RegionRun>,
    pub first_layer_chi: f64,
    pub hidden_chi: f64,
    /// Hidden layers plus the output unit.
    pub all_layers_chi: f64,
}

impl Fig3Report {
    pub fn passed(&self) -> bool {
        self.regions.len() == 3 && self.first_layer_chi == 0.0 && self.all_layers_chi == 0.5
    }
}

/// Depth-1 walk across the three regions met by the line `y = 3/4`, measured
/// with only the first layer and with all layers.
pub fn fig3_fixture() -> Result<Fig3Report> {
    let net = build_cantornet(1)?;
    let (x1, x2) = ([0.0, FIXTURE_HEIGHT], [1.0, FIXTURE_HEIGHT]);
    let regions = scan_regions(&net, &x1, &x2, 4097, &LayerMask::hidden(&net))?;
    let path = sample_segment(&x1, &x2, FIXTURE_SAMPLES)?;
    let chi = |mask: LayerMask| -> Result<f64> {
        Ok(folding_with_layer_mask(&net, &path, &mask)?.chi_final)
    };
    Ok(Fig3Report {
        regions,
        first_layer_chi: chi(LayerMask::new(&net, &[0])?)?,
        hidden_chi: chi(LayerMask::hidden(&net))?,
        all_layers_chi: chi(LayerMask::hidden_and_output(&net))?,
    })
}

#[derive(Clone, Debug)]
pub struct Fig4Report {
    pub profile: FoldingProfile,
    pub samples: usize,
    pub budget_exhausted: bool,
    /// Transitions where several units switch at the same point.
    pub unresolved: usize,
}

impl Fig4Report {
    pub fn r1(&self) -> usize {
        self.profile.r1()
    }

    pub fn chi_final(&self) -> f64 {
        self.profile.chi_final
    }

    pub fn passed(&self) -> bool {
        self.r1() == 5 && (0.65..=0.75).contains(&self.chi_final())
    }
}

/// Depth-2 walk along `y = 3/4` from `x = 0` to `x = 1`, refined so that
/// every region crossed by the segment is visited.
pub fn fig4_fixture() -> Result<Fig4Report> {
    let net = build_cantornet(2)?;
    let mask = LayerMask::hidden_and_output(&net);
    let path = sample_segment(&[0.0, FIXTURE_HEIGHT], &[1.0, FIXTURE_HEIGHT], FIXTURE_SAMPLES)?;
    let refined = refine_path(&net, &path, FIXTURE_BUDGET, &mask)?;
    let profile = folding_with_layer_mask(&net, &refined.path, &mask)?;
    Ok(Fig4Report {
        profile,
        samples: refined.path.len(),
        budget_exhausted: refined.budget_exhausted,
        unresolved: refined.unresolved,
    })
}
