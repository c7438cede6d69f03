use crate::error::{Error, Result};
use crate::nn::{LayerMask, MlpNetwork};
use crate::pattern::ActivationPattern;

/// Smallest λ gap that `refine_path` will still bisect.
pub const MIN_REFINE_GAP: f64 = 1e-10;

/// Points `(1 - λ) x1 + λ x2` on a straight segment, λ strictly increasing
/// from 0 to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSamples {
    start: Vec<f64>,
    end: Vec<f64>,
    lambdas: Vec<f64>,
}

impl PathSamples {
    pub fn from_lambdas(start: Vec<f64>, end: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::InputShape {
                expected: start.len(),
                actual: end.len(),
            });
        }
        if lambdas.len() < 2 {
            return Err(Error::validation("a path needs at least two samples"));
        }
        if lambdas[0] != 0.0 || lambdas[lambdas.len() - 1] != 1.0 {
            return Err(Error::validation("lambda must start at 0 and end at 1"));
        }
        if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::validation("lambda must be strictly increasing"));
        }
        if !start.iter().chain(&end).all(|v| v.is_finite()) {
            return Err(Error::validation("non-finite segment endpoint"));
        }
        Ok(Self { start, end, lambdas })
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn end(&self) -> &[f64] {
        &self.end
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn point_at(&self, lambda: f64) -> Vec<f64> {
        self.start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.point_at(self.lambdas[i])
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.lambdas.iter().map(|&l| self.point_at(l))
    }
}

/// `n` equally spaced samples on the segment from `x1` to `x2`, endpoints included.
pub fn sample_segment(x1: &[f64], x2: &[f64], n: usize) -> Result<PathSamples> {
    if n < 2 {
        return Err(Error::validation(format!("need at least 2 samples, got {n}")));
    }
    let last = (n - 1) as f64;
    let lambdas = (0..n)
        .map(|i| if i == n - 1 { 1.0 } else { i as f64 / last })
        .collect();
    PathSamples::from_lambdas(x1.to_vec(), x2.to_vec(), lambdas)
}

#[derive(Clone, Debug)]
pub struct Refinement {
    pub path: PathSamples,
    /// The path reached `max_points` samples.
    pub budget_exhausted: bool,
    /// Adjacent sample pairs still differing in two or more bits. Without
    /// budget exhaustion these are points where several units switch at once.
    pub unresolved: usize,
}

/// Bisect every adjacent sample pair whose patterns differ in at least two
/// bits, breadth first, until all neighbours differ in at most one bit or the
/// path holds `max_points` samples.
pub fn refine_path(
    net: &MlpNetwork,
    path: &PathSamples,
    max_points: usize,
    mask: &LayerMask,
) -> Result<Refinement> {
    if max_points < path.len() {
        return Err(Error::validation(format!(
            "max_points {max_points} is smaller than the path length {}",
            path.len()
        )));
    }
    if path.dim() != net.input_dim() {
        return Err(Error::InputShape {
            expected: net.input_dim(),
            actual: path.dim(),
        });
    }
    let pattern_at = |lambda: f64| net.pattern_with_mask(&path.point_at(lambda), mask);
    let mut samples: Vec<(f64, ActivationPattern)> = path
        .lambdas()
        .iter()
        .map(|&l| Ok((l, pattern_at(l)?)))
        .collect::<Result<_>>()?;

    loop {
        let mut next = Vec::with_capacity(samples.len() * 2);
        let mut inserted = false;
        let mut budget = max_points - samples.len();
        for i in 0..samples.len() {
            next.push(samples[i].clone());
            if i + 1 == samples.len() || budget == 0 {
                continue;
            }
            let (la, pa) = &samples[i];
            let (lb, pb) = &samples[i + 1];
            if lb - la <= MIN_REFINE_GAP || pa.hamming_unchecked(pb) < 2 {
                continue;
            }
            let mid = 0.5 * (la + lb);
            if mid <= *la || mid >= *lb {
                continue;
            }
            next.push((mid, pattern_at(mid)?));
            budget -= 1;
            inserted = true;
        }
        samples = next;
        if !inserted {
            break;
        }
    }

    let budget_exhausted = samples.len() >= max_points;
    let unresolved = samples
        .windows(2)
        .filter(|w| w[0].1.hamming_unchecked(&w[1].1) >= 2)
        .count();
    let lambdas = samples.into_iter().map(|(l, _)| l).collect();
    Ok(Refinement {
        path: PathSamples::from_lambdas(path.start().to_vec(), path.end().to_vec(), lambdas)?,
        budget_exhausted,
        unresolved,
    })
}
