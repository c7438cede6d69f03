//! Mini-batch SGD training of ReLU classifiers with softmax cross-entropy.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::MlpNetwork;

/// Networks of the small suite share this many hidden neurons.
pub const SMALL_SUITE_NEURONS: usize = 60;
pub const SMALL_SUITE: [(usize, usize); 6] = [(2, 30), (3, 20), (4, 15), (5, 12), (6, 10), (10, 6)];
pub const LARGE_SUITE: [(usize, usize); 2] = [(2, 300), (3, 200)];
pub const SUITE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Runs that end below this validation accuracy are tagged low-accuracy.
pub const LOW_ACCURACY: f64 = 0.90;

pub const INIT_DESCRIPTION: &str = "uniform He: weights in ±sqrt(6/fan_in), zero biases";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub classes: usize,
}

impl TrainConfig {
    /// Defaults: 30 epochs, learning rate 0.1, batch size 64, ten classes.
    pub fn new(hidden: Vec<usize>, seed: u64) -> Self {
        Self {
            hidden,
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 64,
            seed,
            classes: NUM_CLASSES,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::validation("architecture needs at least one non-empty hidden layer"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::validation("need at least two classes"));
        }
        Ok(())
    }
}

/// Parse `LxW` (e.g. `2x30`) into `L` hidden layers of width `W`.
pub fn parse_architecture(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::validation(format!("architecture `{text}` is not of the form LxW"));
    let (l, w) = text.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let l: usize = l.parse().map_err(|_| bad())?;
    let w: usize = w.parse().map_err(|_| bad())?;
    if l == 0 || w == 0 {
        return Err(Error::validation(format!("architecture `{text}` has a zero dimension")));
    }
    Ok(vec![w; l])
}

/// `LxW` for uniform widths, otherwise widths joined by `-`.
pub fn architecture_label(hidden: &[usize]) -> String {
    match hidden.first() {
        Some(&w) if hidden.iter().all(|&v| v == w) => format!("{}x{}", hidden.len(), w),
        _ => hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"),
    }
}

pub fn model_file_name(hidden: &[usize], seed: u64) -> String {
    format!("mlp_{}_seed{seed}.json", architecture_label(hidden))
}

/// Architectures of a named suite (`small` or `large`).
pub fn suite(name: &str) -> Result<Vec<Vec<usize>>> {
    let list: &[(usize, usize)] = match name {
        "small" => &SMALL_SUITE,
        "large" => &LARGE_SUITE,
        _ => return Err(Error::validation(format!("unknown suite `{name}`"))),
    };
    Ok(list.iter().map(|&(l, w)| vec![w; l]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub config: TrainConfig,
    pub init: String,
    /// Validation accuracy of the initialized network.
    pub initial_accuracy: f64,
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(self.initial_accuracy, |r| r.val_accuracy)
    }

    pub fn is_low_accuracy(&self) -> bool {
        self.final_accuracy() < LOW_ACCURACY
    }

    /// `epoch,train_loss,val_accuracy`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_accuracy);
        }
        out
    }
}

fn check_data(net_input: usize, data: &LabeledDataset, classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    if data.dim() != net_input {
        return Err(Error::InputShape {
            expected: net_input,
            actual: data.dim(),
        });
    }
    if let Some(&l) = data.labels().iter().find(|&&l| l as usize >= classes) {
        return Err(Error::validation(format!("label {l} outside the {classes} classes")));
    }
    Ok(())
}

/// Forward pass keeping every layer's input; returns `(inputs, logits)`.
fn forward_keep(net: &MlpNetwork, x: Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
    let layers = net.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut a = x;
    for (k, layer) in layers.iter().enumerate() {
        let z = a.dot(&layer.weights().t()) + layer.bias();
        inputs.push(a);
        a = if k + 1 < layers.len() { z.mapv(|v| v.max(0.0)) } else { z };
    }
    (inputs, a)
}

/// Row-wise softmax in place; returns the summed cross-entropy of `labels`.
fn softmax_cross_entropy(logits: &mut Array2<f64>, labels: &[u8]) -> f64 {
    let mut loss = 0.0;
    for (mut row, &y) in logits.axis_iter_mut(Axis(0)).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        loss -= row[y as usize].max(f64::MIN_POSITIVE).ln();
    }
    loss
}

/// Train a fresh network. Initialization uses stream 0 of a ChaCha8 generator
/// seeded with `config.seed`; the per-epoch shuffles use stream 1.
pub fn train(
    config: &TrainConfig,
    train_data: &LabeledDataset,
    val_data: &LabeledDataset,
) -> Result<(MlpNetwork, TrainingHistory)> {
    config.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut net = MlpNetwork::he_uniform(train_data.dim(), &config.hidden, config.classes, &mut init_rng)?;
    check_data(net.input_dim(), train_data, config.classes)?;
    check_data(net.input_dim(), val_data, config.classes)?;

    let mut history = TrainingHistory {
        config: config.clone(),
        init: INIT_DESCRIPTION.to_string(),
        initial_accuracy: evaluate(&net, val_data)?,
        records: Vec::with_capacity(config.epochs),
    };
    let n = train_data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train_data.rows(batch);
            let labels: Vec<u8> = batch.iter().map(|&i| train_data.labels()[i]).collect();
            total_loss += sgd_step(&mut net, x, &labels, config.learning_rate);
            if !total_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "loss is not finite".to_string(),
                });
            }
        }
        let weights_finite = net
            .layers()
            .iter()
            .all(|l| l.weights().iter().chain(l.bias().iter()).all(|v| v.is_finite()));
        if !weights_finite {
            return Err(Error::Training {
                epoch,
                message: "weights are not finite".to_string(),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: total_loss / n as f64,
            val_accuracy: evaluate(&net, val_data)?,
        });
    }
    Ok((net, history))
}

/// One gradient step on a batch; returns the summed loss before the step.
fn sgd_step(net: &mut MlpNetwork, x: Array2<f64>, labels: &[u8], lr: f64) -> f64 {
    let b = x.nrows() as f64;
    let (inputs, mut probs) = forward_keep(net, x);
    let loss = softmax_cross_entropy(&mut probs, labels);
    // Gradient of the mean loss with respect to the logits.
    let mut delta = probs;
    for (i, &y) in labels.iter().enumerate() {
        delta[[i, y as usize]] -= 1.0;
    }
    delta /= b;
    for k in (0..net.layers().len()).rev() {
        let grad_w = delta.t().dot(&inputs[k]);
        let grad_b: Array1<f64> = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(net.layers()[k].weights());
            // The input of layer k is relu(z); its derivative is 1 where positive.
            back.zip_mut_with(&inputs[k], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
        let layer = &mut net.layers_mut()[k];
        layer.weights_mut().scaled_add(-lr, &grad_w);
        layer.bias_mut().scaled_add(-lr, &grad_b);
    }
    loss
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn batch_predictions(net: &MlpNetwork, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    const CHUNK: usize = 2048;
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(x.nrows());
        let logits = net.forward_batch(x.slice(s![start..end, ..]))?;
        out.extend(logits.outer_iter().map(|r| argmax(&r.to_vec())));
    }
    Ok(out)
}

/// Fraction of samples whose argmax output equals the label.
pub fn evaluate(net: &MlpNetwork, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let predictions = batch_predictions(net, data.images())?;
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::nn::DenseLayer;
    use ndarray::array;
    use rand::Rng;

    /// Two linearly separable blobs in the unit square, labelled by `x + y > 1`.
    fn toy(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        while labels.len() < n {
            let (x, y): (f64, f64) = (rng.random(), rng.random());
            if (x + y - 1.0).abs() < 0.1 {
                continue;
            }
            pts.extend([x, y]);
            labels.push((x + y > 1.0) as u8);
        }
        LabeledDataset::new(Array2::from_shape_vec((n, 2), pts).unwrap(), labels, Split::Train).unwrap()
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            classes: 2,
            ..TrainConfig::new(vec![4], 0)
        }
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!(parse_architecture("2x30").unwrap(), vec![30, 30]);
        assert_eq!(parse_architecture("10x6").unwrap(), vec![6; 10]);
        assert!(parse_architecture("0x10").is_err());
        assert!(parse_architecture("3x0").is_err());
        assert!(parse_architecture("30").is_err());
        assert_eq!(architecture_label(&[30, 30]), "2x30");
        assert_eq!(architecture_label(&[30, 20]), "30-20");
        assert_eq!(model_file_name(&[10; 6], 4), "mlp_6x10_seed4.json");
    }

    #[test]
    fn small_suite_has_sixty_neurons() {
        let s = suite("small").unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|h| h.iter().sum::<usize>() == SMALL_SUITE_NEURONS));
        assert_eq!(suite("large").unwrap(), vec![vec![300, 300], vec![200, 200, 200]]);
        assert!(suite("medium").is_err());
    }

    #[test]
    fn evaluate_constant_nets() {
        let data = toy(40, 1);
        // Output 1 is always larger: predicts class 1.
        let net = MlpNetwork::new(
            2,
            vec![
                DenseLayer::new(array![[0.0, 0.0]], array![0.0]).unwrap(),
                DenseLayer::new(array![[0.0], [0.0]], array![0.0, 1.0]).unwrap(),
            ],
        )
        .unwrap();
        let ones = data.labels().iter().filter(|&&l| l == 1).count() as f64 / 40.0;
        assert_eq!(evaluate(&net, &data).unwrap(), ones);
        // Equal outputs: ties go to class 0.
        let tie = MlpNetwork::new(
            2,
            vec![
                DenseLayer::new(array![[0.0, 0.0]], array![0.0]).unwrap(),
                DenseLayer::new(array![[0.0], [0.0]], array![0.0, 0.0]).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(evaluate(&tie, &data).unwrap(), 1.0 - ones);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (train_set, val_set) = (toy(400, 2), toy(200, 3));
        let (net, history) = train(&toy_config(50), &train_set, &val_set).unwrap();
        assert_eq!(evaluate(&net, &val_set).unwrap(), 1.0);
        assert_eq!(history.records.len(), 50);
        assert!(history.records[49].train_loss < history.records[0].train_loss);
        let flipped = LabeledDataset::new(
            val_set.images().to_owned(),
            val_set.labels().iter().map(|l| 1 - l).collect(),
            Split::Test,
        )
        .unwrap();
        assert_eq!(evaluate(&net, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, val_set) = (toy(200, 4), toy(50, 5));
        let a = train(&toy_config(3), &train_set, &val_set).unwrap();
        let b = train(&toy_config(3), &train_set, &val_set).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let zero = train(&toy_config(0), &train_set, &val_set).unwrap();
        assert!(zero.1.records.is_empty());
        assert_eq!(zero.1.to_csv(), "epoch,train_loss,val_accuracy\n");
    }

    #[test]
    fn divergence_reports_epoch() {
        let (train_set, val_set) = (toy(200, 6), toy(50, 7));
        let config = TrainConfig {
            learning_rate: 1e300,
            ..toy_config(5)
        };
        match train(&config, &train_set, &val_set) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpNetwork::he_uniform(2, &[5, 4], 3, &mut rng).unwrap();
        let labels: Vec<u8> = data.labels().iter().map(|&l| l * 2).collect();
        let loss = |net: &MlpNetwork| {
            let (_, mut p) = forward_keep(net, data.images().to_owned());
            softmax_cross_entropy(&mut p, &labels) / 8.0
        };
        // A step with lr = h moves weights by -h * grad; compare the loss change.
        let h = 1e-6;
        let mut stepped = net.clone();
        sgd_step(&mut stepped, data.images().to_owned(), &labels, h);
        let mut grad_sq = 0.0;
        for (a, b) in net.layers().iter().zip(stepped.layers()) {
            let dw = a.weights() - b.weights();
            let db = a.bias() - b.bias();
            grad_sq += dw.mapv(|v| v * v).sum() / (h * h) + db.mapv(|v| v * v).sum() / (h * h);
        }
        let predicted = -h * grad_sq;
        let actual = loss(&stepped) - loss(&net);
        assert!((actual - predicted).abs() < 1e-3 * predicted.abs(), "{actual} vs {predicted}");
    }
}
