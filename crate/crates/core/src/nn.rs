//! Feed-forward ReLU networks.
//!
//! A network is a list of affine layers. Every layer but the last is followed
//! by a ReLU; the last (output) layer is linear. The activation pattern of an
//! input is the binarization of all hidden pre-activations, concatenated
//! layer-major.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::ActivationPattern;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl DenseLayer {
    /// `weights` is `rows x cols` (outputs x inputs), `bias` has `rows` entries.
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::validation(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::validation("layer with an empty dimension"));
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::validation("non-finite weight or bias"));
        }
        Ok(Self { weights, bias })
    }

    /// Build from a row-major weight buffer.
    pub fn from_row_major(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::validation(format!(
                "expected {} weights for a {rows}x{cols} layer, got {}",
                rows * cols,
                weights.len()
            )));
        }
        let weights = Array2::from_shape_vec((rows, cols), weights)
            .map_err(|e| Error::validation(e.to_string()))?;
        Self::new(weights, Array1::from(bias))
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    /// `W x + b` into `out`.
    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.rows().into_iter().zip(self.bias.iter()) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl MlpNetwork {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::validation("input dimension must be positive"));
        }
        if layers.len() < 2 {
            return Err(Error::validation(
                "a network needs at least one hidden layer and an output layer",
            ));
        }
        let mut prev = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.cols() != prev {
                return Err(Error::validation(format!(
                    "layer {k} has {} columns but its input has dimension {prev}",
                    layer.cols()
                )));
            }
            prev = layer.rows();
        }
        Ok(Self { input_dim, layers })
    }

    /// Random network with uniform He-style initialization
    /// (weights in `±sqrt(6 / fan_in)`, zero biases).
    pub fn he_uniform<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::validation("layer widths must be positive"));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                DenseLayer::new(weights, Array1::zeros(fan_out))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(DenseLayer::rows).unwrap_or(0)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_layer_count()]
            .iter()
            .map(DenseLayer::rows)
            .collect()
    }

    /// Total number of hidden neurons, the length of an activation pattern.
    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InputShape {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("non-finite input"));
        }
        Ok(())
    }

    /// Pre-activations of every layer, output layer last.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.rows());
            layer.affine_into(&input, &mut z);
            if k + 1 < self.layers.len() {
                input = z.iter().map(|v| v.max(0.0)).collect();
            }
            out.push(z);
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pre_activations(x)?.pop().unwrap_or_default())
    }

    /// Outputs for a batch of inputs, one per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::InputShape {
                expected: self.input_dim,
                actual: x.ncols(),
            });
        }
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.weights.t()) + &layer.bias;
            if k + 1 < self.layers.len() {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(a)
    }

    /// Output and full hidden activation pattern of `x`.
    pub fn forward_with_pattern(&self, x: &[f64]) -> Result<(Vec<f64>, ActivationPattern)> {
        let mut pre = self.pre_activations(x)?;
        let output = pre.pop().unwrap_or_default();
        let pattern = ActivationPattern::from_bits(pre.iter().flatten().map(|&v| v > 0.0));
        Ok((output, pattern))
    }

    /// Activation pattern restricted to the layers selected by `mask`.
    pub fn pattern_with_mask(&self, x: &[f64], mask: &LayerMask) -> Result<ActivationPattern> {
        let pre = self.pre_activations(x)?;
        Ok(mask.binarize(&pre))
    }
}

/// Selection of layers whose units contribute bits to an activation pattern.
///
/// Indices `0..hidden_layer_count` address hidden layers. The index
/// `hidden_layer_count` addresses the output layer, whose units are binarized
/// on the sign of their (linear) output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMask {
    layers: Vec<usize>,
}

impl LayerMask {
    pub fn new(net: &MlpNetwork, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::validation("layer subset must not be empty"));
        }
        let mut layers = subset.to_vec();
        layers.sort_unstable();
        layers.dedup();
        if let Some(&bad) = layers.iter().find(|&&l| l > net.hidden_layer_count()) {
            return Err(Error::validation(format!(
                "layer index {bad} out of range (network has {} hidden layers)",
                net.hidden_layer_count()
            )));
        }
        Ok(Self { layers })
    }

    /// Every hidden layer; the default scope of an activation pattern.
    pub fn hidden(net: &MlpNetwork) -> Self {
        Self {
            layers: (0..net.hidden_layer_count()).collect(),
        }
    }

    /// Every hidden layer plus the output units.
    pub fn hidden_and_output(net: &MlpNetwork) -> Self {
        Self {
            layers: (0..=net.hidden_layer_count()).collect(),
        }
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn pattern_len(&self, net: &MlpNetwork) -> usize {
        self.layers.iter().map(|&l| net.layers()[l].rows()).sum()
    }

    pub(crate) fn binarize(&self, pre: &[Vec<f64>]) -> ActivationPattern {
        ActivationPattern::from_bits(
            self.layers
                .iter()
                .flat_map(|&l| pre[l].iter())
                .map(|&v| v > 0.0),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    input_dim: usize,
    layers: Vec<LayerRecord>,
}

impl MlpNetwork {
    pub fn to_json(&self) -> String {
        let record = NetworkRecord {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.rows(),
                    cols: l.cols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&record).expect("network record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let record: NetworkRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let layers = record
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                if l.bias.len() != l.rows {
                    return Err(Error::validation(format!(
                        "layer {k}: bias has {} entries, expected {}",
                        l.bias.len(),
                        l.rows
                    )));
                }
                DenseLayer::from_row_major(l.rows, l.cols, l.weights, l.bias)
                    .map_err(|e| Error::validation(format!("layer {k}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(record.input_dim, layers)
    }
}

pub fn save_network(net: &MlpNetwork, destination: impl AsRef<Path>) -> Result<()> {
    let path = destination.as_ref();
    fs::write(path, net.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_network(source: impl AsRef<Path>) -> Result<MlpNetwork> {
    let path = source.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MlpNetwork::from_json(&text, &path.display().to_string())
}
