//! Space folding analysis for ReLU networks.
//!
//! Straight segments in input space are mapped to walks on the Hamming cube
//! of activation patterns; the folding measure quantifies how far such a walk
//! deviates from a shortest path.

pub mod analysis;
pub mod cantornet;
pub mod convexity;
pub mod dataset;
pub mod error;
pub mod folding;
pub mod nn;
pub mod pattern;
pub mod trainer;

pub use error::{Error, Result};
pub use folding::{
    folding_profile, folding_with_layer_mask, sample_segment, FoldingProfile, PathSamples,
    PathStat,
};
pub use nn::{load_network, save_network, DenseLayer, LayerMask, MlpNetwork};
pub use pattern::{hamming, ActivationPattern};
