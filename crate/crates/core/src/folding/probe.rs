use ndarray::{Array1, Array2, Axis};

use super::{FoldingSummary, PathStat, RangeTracker};
use crate::error::{Error, Result};
use crate::nn::{LayerMask, MlpNetwork};
use crate::pattern::ActivationPattern;

/// Batched pattern evaluation along segments.
///
/// The first layer is affine in the input, so its pre-activation along the
/// segment is the interpolation `(1 - λ) z(x1) + λ z(x2)` of the endpoint
/// pre-activations. Those are computed once per endpoint with
/// [`SegmentProbe::anchor`]; each sample then only pays for the deeper layers.
/// Results agree with point-wise `forward` up to floating-point rounding.
pub struct SegmentProbe<'a> {
    net: &'a MlpNetwork,
    mask: LayerMask,
    // Deepest layer that must be evaluated to fill the mask.
    depth: usize,
    // Bit offset of each masked layer inside a pattern.
    offsets: Vec<Option<usize>>,
    pattern_len: usize,
}

impl<'a> SegmentProbe<'a> {
    pub fn new(net: &'a MlpNetwork, mask: LayerMask) -> Self {
        let mut offsets = vec![None; net.layers().len()];
        let mut offset = 0;
        for &l in mask.layers() {
            offsets[l] = Some(offset);
            offset += net.layers()[l].rows();
        }
        let depth = *mask.layers().last().expect("mask is never empty");
        Self {
            net,
            mask,
            depth,
            offsets,
            pattern_len: offset,
        }
    }

    pub fn mask(&self) -> &LayerMask {
        &self.mask
    }

    /// First-layer pre-activation of an endpoint.
    pub fn anchor(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.net.input_dim() {
            return Err(Error::InputShape {
                expected: self.net.input_dim(),
                actual: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("non-finite input"));
        }
        let first = &self.net.layers()[0];
        Ok(first.weights().dot(&ndarray::aview1(x)) + first.bias())
    }

    /// Patterns at the given λ values between two anchors.
    pub fn patterns(
        &self,
        za: &Array1<f64>,
        zb: &Array1<f64>,
        lambdas: &[f64],
    ) -> Vec<ActivationPattern> {
        let n = lambdas.len();
        let mut z = Array2::from_shape_fn((n, za.len()), |(i, j)| {
            (1.0 - lambdas[i]) * za[j] + lambdas[i] * zb[j]
        });
        let mut out = vec![ActivationPattern::zeros(self.pattern_len); n];
        let layers = self.net.layers();
        for k in 0..=self.depth {
            if k > 0 {
                z.mapv_inplace(|v| v.max(0.0));
                z = z.dot(&layers[k].weights().t()) + layers[k].bias();
            }
            if let Some(offset) = self.offsets[k] {
                for (row, pattern) in z.axis_iter(Axis(0)).zip(out.iter_mut()) {
                    for (j, &v) in row.iter().enumerate() {
                        if v > 0.0 {
                            pattern.set(offset + j, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Range measures along `steps` equally spaced samples between two anchors.
    pub fn summarize(&self, za: &Array1<f64>, zb: &Array1<f64>, steps: usize) -> FoldingSummary {
        let last = (steps.max(2) - 1) as f64;
        let lambdas: Vec<f64> = (0..steps.max(2))
            .map(|i| if i as f64 == last { 1.0 } else { i as f64 / last })
            .collect();
        let mut tracker = RangeTracker::default();
        for p in &self.patterns(za, zb, &lambdas) {
            tracker.push(p);
        }
        tracker.summary()
    }

    pub fn path_stat(&self, za: &Array1<f64>, zb: &Array1<f64>, steps: usize, stat: PathStat) -> f64 {
        self.summarize(za, zb, steps).stat(stat)
    }
}
