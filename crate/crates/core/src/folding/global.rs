use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{folding_with_layer_mask, sample_segment, PathSamples};
use crate::error::{Error, Result};
use crate::nn::{LayerMask, MlpNetwork};

/// Deterministic source of paths: `generate(i)` always returns the same path.
pub trait PathGenerator: Sync {
    fn generate(&self, index: usize) -> Result<PathSamples>;
}

/// Uniformly random segments inside an axis-aligned box.
#[derive(Clone, Debug)]
pub struct RandomSegments {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
}

impl PathGenerator for RandomSegments {
    fn generate(&self, index: usize) -> Result<PathSamples> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::validation("box bounds differ in dimension"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| if lo < hi { rng.random_range(lo..hi) } else { lo })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        sample_segment(&a, &b, self.steps)
    }
}

/// A fixed list of paths, cycled when the budget exceeds its length.
#[derive(Clone, Debug)]
pub struct PathPool(pub Vec<PathSamples>);

impl PathGenerator for PathPool {
    fn generate(&self, index: usize) -> Result<PathSamples> {
        if self.0.is_empty() {
            return Err(Error::validation("empty path pool"));
        }
        Ok(self.0[index % self.0.len()].clone())
    }
}

/// Estimate of the global folding value: the largest `chi` over the first
/// `budget` generated paths, using all hidden layers.
pub fn global_folding_estimate(
    net: &MlpNetwork,
    generator: &dyn PathGenerator,
    budget: usize,
) -> Result<f64> {
    global_folding_estimate_with_mask(net, generator, budget, &LayerMask::hidden(net))
}

pub fn global_folding_estimate_with_mask(
    net: &MlpNetwork,
    generator: &dyn PathGenerator,
    budget: usize,
    mask: &LayerMask,
) -> Result<f64> {
    if budget == 0 {
        return Err(Error::validation("budget must be at least 1"));
    }
    let values = (0..budget)
        .into_par_iter()
        .map(|i| {
            let path = generator.generate(i)?;
            Ok(folding_with_layer_mask(net, &path, mask)?.chi_final)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}
