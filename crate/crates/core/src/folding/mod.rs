//! The space folding measure.
//!
//! A straight segment in input space is sampled, every sample is mapped to its
//! activation pattern, and the resulting walk on the Hamming cube is measured
//! with two range statistics:
//!
//! * `r1`, the largest Hamming distance from the first pattern reached so far;
//! * `r2`, the total Hamming length walked.
//!
//! The folding value is `chi = 1 - r1 / r2`. A walk that only ever moves away
//! from its start has `chi = 0`; a walk oscillating between two neighbouring
//! patterns approaches 1. Consecutive samples that share a pattern are
//! collapsed first, so re-sampling inside one linear region never changes the
//! result. A walk that never leaves its starting region has `r2 = 0`; it is
//! reported as `chi = 0` with the `degenerate` flag set.

mod global;
mod path;
mod probe;

use std::fmt::Write as _;

pub use global::{
    global_folding_estimate, global_folding_estimate_with_mask, PathGenerator, PathPool,
    RandomSegments,
};
pub use path::{refine_path, sample_segment, PathSamples, Refinement, MIN_REFINE_GAP};
pub use probe::SegmentProbe;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerMask, MlpNetwork};
use crate::pattern::ActivationPattern;

/// Which scalar to extract from a folding profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStat {
    /// `chi` of the whole path.
    Final,
    /// Largest `chi` over all prefixes of the path.
    PrefixMax,
}

/// Scalar summary of one path, computed without keeping the pattern list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldingSummary {
    pub r1: usize,
    pub r2: usize,
    /// Number of entries in the collapsed pattern sequence.
    pub distinct: usize,
    pub chi_final: f64,
    pub chi_prefix_max: f64,
    pub degenerate: bool,
}

impl FoldingSummary {
    pub fn stat(&self, stat: PathStat) -> f64 {
        match stat {
            PathStat::Final => self.chi_final,
            PathStat::PrefixMax => self.chi_prefix_max,
        }
    }
}

/// Streaming evaluation of the range measures.
#[derive(Clone, Debug, Default)]
pub(crate) struct RangeTracker {
    start: Option<ActivationPattern>,
    last: Option<ActivationPattern>,
    r1: usize,
    r2: usize,
    distinct: usize,
    prefix_max: f64,
}

/// What a single `push` changed, if the pattern started a new run.
pub(crate) struct Step {
    pub to_start: usize,
}

impl RangeTracker {
    pub fn push(&mut self, p: &ActivationPattern) -> Option<Step> {
        let Some(start) = &self.start else {
            self.start = Some(p.clone());
            self.last = Some(p.clone());
            self.distinct = 1;
            return Some(Step { to_start: 0 });
        };
        let last = self.last.as_ref().expect("last is set with start");
        let step = last.hamming_unchecked(p);
        if step == 0 {
            return None;
        }
        let to_start = start.hamming_unchecked(p);
        self.r1 = self.r1.max(to_start);
        self.r2 += step;
        self.distinct += 1;
        self.prefix_max = self.prefix_max.max(self.chi());
        self.last = Some(p.clone());
        Some(Step { to_start })
    }

    pub fn chi(&self) -> f64 {
        if self.r2 == 0 {
            0.0
        } else {
            1.0 - self.r1 as f64 / self.r2 as f64
        }
    }

    pub fn summary(&self) -> FoldingSummary {
        FoldingSummary {
            r1: self.r1,
            r2: self.r2,
            distinct: self.distinct,
            chi_final: self.chi(),
            chi_prefix_max: self.prefix_max,
            degenerate: self.r2 == 0,
        }
    }
}

/// Summarize a walk given as a pattern sequence.
pub fn fold_summary<'a, I>(patterns: I) -> FoldingSummary
where
    I: IntoIterator<Item = &'a ActivationPattern>,
{
    let mut tracker = RangeTracker::default();
    for p in patterns {
        tracker.push(p);
    }
    tracker.summary()
}

/// Per-prefix record of the range measures along a path.
///
/// All vectors are indexed by position in the collapsed pattern sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldingProfile {
    pub patterns: Vec<ActivationPattern>,
    /// λ of the first sample that produced each pattern, when known.
    pub lambdas: Vec<f64>,
    /// `d(π_{i+1}, π_1) - d(π_i, π_1)`, one entry per step.
    pub deltas: Vec<i64>,
    pub hamming_to_start: Vec<usize>,
    pub r1_prefix: Vec<usize>,
    pub r2_prefix: Vec<usize>,
    /// `None` for the first prefix, which holds a single pattern.
    pub chi_prefix: Vec<Option<f64>>,
    pub chi_final: f64,
    pub degenerate: bool,
}

impl FoldingProfile {
    /// Build a profile from a raw pattern sequence. `lambdas`, when given,
    /// must be parallel to `patterns`.
    pub fn from_patterns(patterns: &[ActivationPattern], lambdas: Option<&[f64]>) -> Result<Self> {
        let Some(first) = patterns.first() else {
            return Err(Error::validation("empty pattern sequence"));
        };
        if patterns.iter().any(|p| p.len() != first.len()) {
            return Err(Error::validation("patterns of unequal length"));
        }
        if let Some(l) = lambdas {
            if l.len() != patterns.len() {
                return Err(Error::validation("lambdas and patterns differ in length"));
            }
        }
        let mut tracker = RangeTracker::default();
        let mut profile = FoldingProfile {
            patterns: Vec::new(),
            lambdas: Vec::new(),
            deltas: Vec::new(),
            hamming_to_start: Vec::new(),
            r1_prefix: Vec::new(),
            r2_prefix: Vec::new(),
            chi_prefix: Vec::new(),
            chi_final: 0.0,
            degenerate: true,
        };
        for (i, p) in patterns.iter().enumerate() {
            let Some(step) = tracker.push(p) else {
                continue;
            };
            if let Some(&prev) = profile.hamming_to_start.last() {
                profile.deltas.push(step.to_start as i64 - prev as i64);
            }
            profile.patterns.push(p.clone());
            profile
                .lambdas
                .push(lambdas.map_or(i as f64, |l| l[i]));
            profile.hamming_to_start.push(step.to_start);
            profile.r1_prefix.push(tracker.r1);
            profile.r2_prefix.push(tracker.r2);
            profile
                .chi_prefix
                .push((profile.patterns.len() > 1).then(|| tracker.chi()));
        }
        let summary = tracker.summary();
        profile.chi_final = summary.chi_final;
        profile.degenerate = summary.degenerate;
        Ok(profile)
    }

    pub fn r1(&self) -> usize {
        *self.r1_prefix.last().expect("profile is never empty")
    }

    pub fn r2(&self) -> usize {
        *self.r2_prefix.last().expect("profile is never empty")
    }

    pub fn distinct_count(&self) -> usize {
        self.patterns.len()
    }

    /// Maximum of the running `chi` over all prefixes (0 for a single region).
    pub fn chi_prefix_max(&self) -> f64 {
        self.chi_prefix.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn stat(&self, stat: PathStat) -> f64 {
        match stat {
            PathStat::Final => self.chi_final,
            PathStat::PrefixMax => self.chi_prefix_max(),
        }
    }

    /// CSV with one row per collapsed prefix.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prefix_index,lambda,hamming_to_start,r1,r2,chi\n");
        for i in 0..self.patterns.len() {
            let chi = self.chi_prefix[i].map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{chi}",
                self.lambdas[i], self.hamming_to_start[i], self.r1_prefix[i], self.r2_prefix[i]
            );
        }
        out
    }
}

/// Folding profile of `path` over all hidden layers.
pub fn folding_profile(net: &MlpNetwork, path: &PathSamples) -> Result<FoldingProfile> {
    folding_with_layer_mask(net, path, &LayerMask::hidden(net))
}

/// Folding profile of `path` with patterns restricted to the layers in `mask`.
pub fn folding_with_layer_mask(
    net: &MlpNetwork,
    path: &PathSamples,
    mask: &LayerMask,
) -> Result<FoldingProfile> {
    if path.dim() != net.input_dim() {
        return Err(Error::InputShape {
            expected: net.input_dim(),
            actual: path.dim(),
        });
    }
    let patterns = path
        .points()
        .map(|x| net.pattern_with_mask(&x, mask))
        .collect::<Result<Vec<_>>>()?;
    FoldingProfile::from_patterns(&patterns, Some(path.lambdas()))
}

/// Upper bound `1 - 1/(2(m-1))` on `chi` for a collapsed walk of `m >= 2` patterns.
pub fn chi_upper_bound(distinct: usize) -> f64 {
    assert!(distinct >= 2, "bound needs at least two patterns");
    1.0 - 1.0 / (2.0 * (distinct as f64 - 1.0))
}
