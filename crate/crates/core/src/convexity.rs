//! Empirical check that, for arrangements of lines crossing the whole domain
//! (the tessellation produced by a first hidden layer), a union of regions is
//! convex in the plane exactly when its set of activation patterns is convex
//! in the Hamming cube.
//!
//! Hamming convexity is restricted to observable patterns: a subset `S` is
//! convex when every observable pattern lying on some shortest path between
//! two members of `S` also belongs to `S`. Euclidean convexity is tested by
//! following segments between points of the union and computing every region
//! the segment crosses exactly (crossing parameters are solved in closed
//! form), so a reported counterexample is a certificate. Agreement is
//! statistical: the segments tested are random pairs plus pairs of region
//! witnesses placed next to every arrangement vertex, which exposes reflex
//! corners of the union.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::folding::sample_segment;
use crate::nn::MlpNetwork;
use crate::pattern::ActivationPattern;

pub type Point = [f64; 2];

/// Line `normal · p + offset = 0`; points with a positive value get bit 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Hyperplane {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Hyperplane {
    pub fn value(&self, p: Point) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.offset
    }

    fn unit_normal(&self) -> [f64; 2] {
        let n = self.normal[0].hypot(self.normal[1]);
        [self.normal[0] / n, self.normal[1] / n]
    }

    /// Euclidean distance from `p` to the line.
    pub fn distance(&self, p: Point) -> f64 {
        self.value(p).abs() / self.normal[0].hypot(self.normal[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn unit() -> Self {
        Self {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn contains_strict(&self, p: Point) -> bool {
        (0..2).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    fn diagonal(&self) -> f64 {
        (self.max[0] - self.min[0]).hypot(self.max[1] - self.min[1])
    }

    fn corners(&self) -> [Point; 4] {
        [
            self.min,
            [self.max[0], self.min[1]],
            self.max,
            [self.min[0], self.max[1]],
        ]
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        [
            rng.random_range(self.min[0]..self.max[0]),
            rng.random_range(self.min[1]..self.max[1]),
        ]
    }
}

pub const MAX_HYPERPLANES: usize = 8;

/// Tolerance for rejecting near-parallel or near-concurrent lines.
pub const GENERIC_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperplaneArrangement {
    hyperplanes: Vec<Hyperplane>,
    domain: BoundingBox,
}

impl HyperplaneArrangement {
    pub fn new(hyperplanes: Vec<Hyperplane>, domain: BoundingBox) -> Result<Self> {
        if hyperplanes.is_empty() || hyperplanes.len() > MAX_HYPERPLANES {
            return Err(Error::validation(format!(
                "arrangement needs 1..={MAX_HYPERPLANES} hyperplanes, got {}",
                hyperplanes.len()
            )));
        }
        if !(domain.min[0] < domain.max[0] && domain.min[1] < domain.max[1]) {
            return Err(Error::validation("empty domain"));
        }
        for (i, h) in hyperplanes.iter().enumerate() {
            if !(h.normal[0].hypot(h.normal[1]) > 0.0) || !h.offset.is_finite() {
                return Err(Error::validation(format!("hyperplane {i} has a zero normal")));
            }
            let signs: Vec<f64> = domain.corners().iter().map(|&c| h.value(c)).collect();
            let crosses = signs.iter().any(|&s| s > 0.0) && signs.iter().any(|&s| s < 0.0);
            if !crosses {
                return Err(Error::validation(format!(
                    "hyperplane {i} does not cross the domain"
                )));
            }
        }
        Ok(Self {
            hyperplanes,
            domain,
        })
    }

    /// Random arrangement of `m` lines, each through a uniform point of the
    /// domain with a uniform direction, rejected until in general position.
    pub fn random<R: Rng + ?Sized>(m: usize, domain: BoundingBox, rng: &mut R) -> Result<Self> {
        loop {
            let hyperplanes = (0..m)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    let normal = [theta.cos(), theta.sin()];
                    let p = domain.sample(rng);
                    Hyperplane {
                        normal,
                        offset: -(normal[0] * p[0] + normal[1] * p[1]),
                    }
                })
                .collect();
            let Ok(arr) = Self::new(hyperplanes, domain) else {
                continue;
            };
            if arr.is_generic(GENERIC_TOLERANCE) {
                return Ok(arr);
            }
        }
    }

    pub fn hyperplanes(&self) -> &[Hyperplane] {
        &self.hyperplanes
    }

    pub fn domain(&self) -> BoundingBox {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.hyperplanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyperplanes.is_empty()
    }

    pub fn pattern(&self, p: Point) -> ActivationPattern {
        ActivationPattern::from_bits(self.hyperplanes.iter().map(|h| h.value(p) > 0.0))
    }

    /// No two lines are parallel within `tol` (sine of the angle), and no
    /// intersection point lies within `tol` of a third line or of the domain
    /// boundary.
    pub fn is_generic(&self, tol: f64) -> bool {
        let n = self.hyperplanes.len();
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (self.hyperplanes[i].unit_normal(), self.hyperplanes[j].unit_normal());
                if (a[0] * b[1] - a[1] * b[0]).abs() < tol {
                    return false;
                }
                let Some(v) = self.intersection(i, j) else {
                    return false;
                };
                if (0..n)
                    .filter(|&k| k != i && k != j)
                    .any(|k| self.hyperplanes[k].distance(v) < tol)
                {
                    return false;
                }
                let d = &self.domain;
                let near_edge = (0..2)
                    .any(|c| (v[c] - d.min[c]).abs() < tol || (v[c] - d.max[c]).abs() < tol);
                if near_edge {
                    return false;
                }
            }
        }
        true
    }

    fn intersection(&self, i: usize, j: usize) -> Option<Point> {
        let (a, b) = (&self.hyperplanes[i], &self.hyperplanes[j]);
        let det = a.normal[0] * b.normal[1] - a.normal[1] * b.normal[0];
        if det == 0.0 {
            return None;
        }
        let x = (-a.offset * b.normal[1] + b.offset * a.normal[1]) / det;
        let y = (-a.normal[0] * b.offset + b.normal[0] * a.offset) / det;
        Some([x, y])
    }

    /// Vertices of the arrangement clipped to the domain: pairwise
    /// intersections inside the box, line/box-edge intersections and corners.
    fn vertices(&self) -> Vec<Point> {
        let d = self.domain;
        let mut out: Vec<Point> = d.corners().to_vec();
        let n = self.hyperplanes.len();
        for i in 0..n {
            for j in i + 1..n {
                if let Some(v) = self.intersection(i, j) {
                    if d.contains(v) {
                        out.push(v);
                    }
                }
            }
            let h = &self.hyperplanes[i];
            for c in 0..2 {
                for edge in [d.min[c], d.max[c]] {
                    let other = 1 - c;
                    if h.normal[other] == 0.0 {
                        continue;
                    }
                    let t = -(h.offset + h.normal[c] * edge) / h.normal[other];
                    let mut p = [0.0; 2];
                    p[c] = edge;
                    p[other] = t;
                    if d.contains(p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Points just inside every angular sector around every vertex.
    fn vertex_witnesses(&self) -> Vec<Point> {
        let eps = 1e-7 * self.domain.diagonal();
        let mut out = Vec::new();
        for v in self.vertices() {
            let mut angles = Vec::new();
            for h in &self.hyperplanes {
                if h.distance(v) < eps * 1e-3 {
                    let t = h.normal[0].atan2(-h.normal[1]);
                    angles.push(t);
                    angles.push(t + std::f64::consts::PI);
                }
            }
            for k in 0..4 {
                angles.push(k as f64 * std::f64::consts::FRAC_PI_2);
            }
            let mut angles: Vec<f64> = angles
                .into_iter()
                .map(|a| a.rem_euclid(std::f64::consts::TAU))
                .collect();
            angles.sort_by(f64::total_cmp);
            angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            for (k, &a) in angles.iter().enumerate() {
                let b = angles
                    .get(k + 1)
                    .copied()
                    .unwrap_or(angles[0] + std::f64::consts::TAU);
                let mid = 0.5 * (a + b);
                let p = [v[0] + eps * mid.cos(), v[1] + eps * mid.sin()];
                if self.domain.contains_strict(p) && self.hyperplanes.iter().all(|h| h.value(p) != 0.0)
                {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Patterns of the sub-intervals of the segment `[p, q]` between
    /// consecutive line crossings, in order from `p` to `q`.
    pub fn segment_patterns(&self, p: Point, q: Point) -> Vec<ActivationPattern> {
        let mut ts = vec![0.0, 1.0];
        for h in &self.hyperplanes {
            let (a, b) = (h.value(p), h.value(q));
            if (a > 0.0) != (b > 0.0) && a != b {
                let t = a / (a - b);
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let at = |t: f64| [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
        let mut out = vec![self.pattern(p)];
        for w in ts.windows(2) {
            out.push(self.pattern(at(0.5 * (w[0] + w[1]))));
        }
        out.push(self.pattern(q));
        out.dedup();
        out
    }
}

/// Observable patterns of an arrangement with one interior witness each.
#[derive(Clone, Debug)]
pub struct RegionSet {
    patterns: Vec<ActivationPattern>,
    witnesses: Vec<Point>,
    // Region witnesses and points next to vertices, with their pattern index.
    probes: Vec<(Point, usize)>,
}

impl RegionSet {
    pub fn patterns(&self) -> &[ActivationPattern] {
        &self.patterns
    }

    pub fn witnesses(&self) -> &[Point] {
        &self.witnesses
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn index_of(&self, p: &ActivationPattern) -> Option<usize> {
        self.patterns.binary_search(p).ok()
    }
}

/// Enumerate observable regions on a `grid_resolution²` grid of cell centres,
/// augmented with points next to every arrangement vertex. Slivers thinner
/// than the grid spacing and away from vertices can only be missed when the
/// arrangement is not in general position.
pub fn enumerate_regions(arr: &HyperplaneArrangement, grid_resolution: usize) -> Result<RegionSet> {
    if grid_resolution < 64 {
        return Err(Error::validation("grid resolution must be at least 64"));
    }
    let d = arr.domain();
    let off_lines = |p: &Point| arr.hyperplanes().iter().all(|h| h.value(*p) != 0.0);
    let mut grid = Vec::with_capacity(grid_resolution * grid_resolution);
    for iy in 0..grid_resolution {
        for ix in 0..grid_resolution {
            let fx = (ix as f64 + 0.5) / grid_resolution as f64;
            let fy = (iy as f64 + 0.5) / grid_resolution as f64;
            grid.push([
                d.min[0] + fx * (d.max[0] - d.min[0]),
                d.min[1] + fy * (d.max[1] - d.min[1]),
            ]);
        }
    }
    grid.retain(off_lines);
    let mut near_vertices = arr.vertex_witnesses();
    near_vertices.retain(off_lines);

    let mut first_seen: Vec<(ActivationPattern, Point)> = Vec::new();
    let mut seen = BTreeSet::new();
    for &p in grid.iter().chain(&near_vertices) {
        let pat = arr.pattern(p);
        if seen.insert(pat.clone()) {
            first_seen.push((pat, p));
        }
    }
    first_seen.sort_by(|a, b| a.0.cmp(&b.0));
    let (patterns, witnesses): (Vec<_>, Vec<_>) = first_seen.into_iter().unzip();
    let mut probes: Vec<(Point, usize)> = witnesses.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    for p in near_vertices {
        let idx = patterns.binary_search(&arr.pattern(p)).expect("pattern was collected");
        probes.push((p, idx));
    }
    Ok(RegionSet {
        patterns,
        witnesses,
        probes,
    })
}

/// First violation of Hamming convexity: `(x, z, y)` with `x, y` in the set,
/// `z` observable on a shortest path between them, and `z` outside the set.
pub fn hamming_violation(
    set: &[ActivationPattern],
    observable: &[ActivationPattern],
) -> Option<(ActivationPattern, ActivationPattern, ActivationPattern)> {
    let members: BTreeSet<&ActivationPattern> = set.iter().collect();
    for (i, x) in set.iter().enumerate() {
        for y in &set[i + 1..] {
            let dxy = x.hamming_unchecked(y);
            for z in observable {
                if !members.contains(z) && x.hamming_unchecked(z) + z.hamming_unchecked(y) == dxy {
                    return Some((x.clone(), z.clone(), y.clone()));
                }
            }
        }
    }
    None
}

pub fn hamming_convex(set: &[ActivationPattern], observable: &[ActivationPattern]) -> bool {
    hamming_violation(set, observable).is_none()
}

/// Outcome of the segment test on a union of regions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EuclideanCheck {
    pub segments_tested: usize,
    /// A segment with both endpoints in the union that leaves it.
    pub counterexample: Option<(Point, Point)>,
}

impl EuclideanCheck {
    pub fn convex(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Test all segments between probe points of the union (region witnesses and
/// points next to vertices) plus `samples` random segments.
pub fn euclidean_convex_union(
    arr: &HyperplaneArrangement,
    set: &[ActivationPattern],
    regions: &RegionSet,
    samples: usize,
    seed: u64,
) -> EuclideanCheck {
    let members: BTreeSet<&ActivationPattern> = set.iter().collect();
    let leaves = |p: Point, q: Point| {
        arr.segment_patterns(p, q)
            .iter()
            .any(|pat| !members.contains(pat))
    };
    let mut tested = 0;

    let mut inside: Vec<Point> = regions
        .probes
        .iter()
        .filter(|(_, idx)| members.contains(&regions.patterns[*idx]))
        .map(|&(p, _)| p)
        .collect();
    let vertex_probes = inside.len();

    for i in 0..vertex_probes {
        for j in i + 1..vertex_probes {
            let (p, q) = (inside[i], inside[j]);
            // Regions are convex, so pairs inside one region never leave it.
            if arr.pattern(p) == arr.pattern(q) {
                continue;
            }
            tested += 1;
            if leaves(p, q) {
                return EuclideanCheck {
                    segments_tested: tested,
                    counterexample: Some((p, q)),
                };
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = arr.domain();
    let mut tries = 0;
    while inside.len() < vertex_probes + 2 * samples && tries < 64 * samples.max(1) {
        tries += 1;
        let p = domain.sample(&mut rng);
        if members.contains(&arr.pattern(p)) {
            inside.push(p);
        }
    }
    if inside.len() >= 2 {
        for _ in 0..samples {
            let i = rng.random_range(0..inside.len());
            let j = rng.random_range(0..inside.len());
            tested += 1;
            if leaves(inside[i], inside[j]) {
                return EuclideanCheck {
                    segments_tested: tested,
                    counterexample: Some((inside[i], inside[j])),
                };
            }
        }
    }
    EuclideanCheck {
        segments_tested: tested,
        counterexample: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Lemma1Verdict {
    /// Both notions agree; `convex` is the shared verdict.
    Consistent { convex: bool },
    Counterexample {
        euclidean_convex: bool,
        hamming_convex: bool,
        segment: Option<(Point, Point)>,
        triple: Option<(String, String, String)>,
    },
}

impl Lemma1Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Lemma1Verdict::Consistent { .. })
    }
}

/// Compare Euclidean and Hamming convexity of the union of `set`.
pub fn verify_lemma1(
    arr: &HyperplaneArrangement,
    set: &[ActivationPattern],
    regions: &RegionSet,
    samples: usize,
    seed: u64,
) -> Lemma1Verdict {
    let euclid = euclidean_convex_union(arr, set, regions, samples, seed);
    let violation = hamming_violation(set, regions.patterns());
    let hamming = violation.is_none();
    if euclid.convex() == hamming {
        Lemma1Verdict::Consistent { convex: hamming }
    } else {
        Lemma1Verdict::Counterexample {
            euclidean_convex: euclid.convex(),
            hamming_convex: hamming,
            segment: euclid.counterexample,
            triple: violation.map(|(a, z, b)| (a.to_string(), z.to_string(), b.to_string())),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialConfig {
    pub trials: usize,
    pub max_hyperplanes: usize,
    pub grid_resolution: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            max_hyperplanes: 5,
            grid_resolution: 64,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialCounterexample {
    pub trial: usize,
    pub arrangement: HyperplaneArrangement,
    pub subset: Vec<String>,
    pub verdict: Lemma1Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub config: TrialConfig,
    pub trials: usize,
    pub agreements: usize,
    pub convex_subsets: usize,
    pub counterexamples: Vec<TrialCounterexample>,
}

/// Region subset for one trial. Cycles through subsets that are convex by
/// construction (intersections of half-planes), arbitrary random subsets and
/// pairs of regions.
fn trial_subset<R: Rng + ?Sized>(
    kind: usize,
    arr: &HyperplaneArrangement,
    regions: &RegionSet,
    rng: &mut R,
) -> Vec<ActivationPattern> {
    let pats = regions.patterns();
    let subset: Vec<ActivationPattern> = match kind % 3 {
        0 => {
            let mut constraints: Vec<(usize, bool)> = Vec::new();
            for i in 0..arr.len() {
                if rng.random_bool(0.5) {
                    constraints.push((i, rng.random_bool(0.5)));
                }
            }
            pats.iter()
                .filter(|p| constraints.iter().all(|&(i, side)| p.get(i) == side))
                .cloned()
                .collect()
        }
        1 => pats.iter().filter(|_| rng.random_bool(0.5)).cloned().collect(),
        _ => {
            let a = rng.random_range(0..pats.len());
            let b = rng.random_range(0..pats.len());
            let mut v = vec![pats[a].clone(), pats[b].clone()];
            v.sort();
            v.dedup();
            v
        }
    };
    if subset.is_empty() {
        vec![pats[rng.random_range(0..pats.len())].clone()]
    } else {
        subset
    }
}

/// Randomized equivalence trials on the unit square.
pub fn run_equivalence_trials(config: &TrialConfig) -> Result<TrialReport> {
    if config.trials == 0 {
        return Err(Error::validation("trials must be at least 1"));
    }
    if config.max_hyperplanes == 0 || config.max_hyperplanes > MAX_HYPERPLANES {
        return Err(Error::validation(format!(
            "max_hyperplanes must be in 1..={MAX_HYPERPLANES}"
        )));
    }
    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<(bool, Option<TrialCounterexample>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(trial as u64);
            let m = rng.random_range(1..=config.max_hyperplanes);
            let arr = HyperplaneArrangement::random(m, BoundingBox::unit(), &mut rng)?;
            let regions = enumerate_regions(&arr, config.grid_resolution)?;
            let subset = trial_subset(trial, &arr, &regions, &mut rng);
            let verdict = verify_lemma1(&arr, &subset, &regions, config.samples, rng.random());
            Ok(match verdict {
                Lemma1Verdict::Consistent { convex } => (convex, None),
                verdict => (
                    false,
                    Some(TrialCounterexample {
                        trial,
                        arrangement: arr,
                        subset: subset.iter().map(|p| p.to_string()).collect(),
                        verdict,
                    }),
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let convex_subsets = outcomes.iter().filter(|(c, ce)| *c && ce.is_none()).count();
    let counterexamples: Vec<_> = outcomes.into_iter().filter_map(|(_, ce)| ce).collect();
    Ok(TrialReport {
        config: config.clone(),
        trials: config.trials,
        agreements: config.trials - counterexamples.len(),
        convex_subsets,
        counterexamples,
    })
}

/// True iff the Hamming distance to the first sample never decreases along
/// `n` samples of the segment. Only defined for one-hidden-layer networks.
pub fn depth1_monotone(net: &MlpNetwork, x1: &[f64], x2: &[f64], n: usize) -> Result<bool> {
    if net.hidden_layer_count() != 1 {
        return Err(Error::validation(format!(
            "expected exactly one hidden layer, got {}",
            net.hidden_layer_count()
        )));
    }
    let path = sample_segment(x1, x2, n)?;
    let mut start = None;
    let mut prev = 0;
    for x in path.points() {
        let (_, p) = net.forward_with_pattern(&x)?;
        let start = start.get_or_insert(p.clone());
        let d = start.hamming_unchecked(&p);
        if d < prev {
            return Ok(false);
        }
        prev = d;
    }
    Ok(true)
}
