//! Training for the small bundled reference classifiers.
//!
//! Plain per-sample SGD on softmax cross-entropy with a seeded shuffle, so
//! a fixed `(dataset, config)` pair reproduces the exact same weights on
//! every run. This is artifact plumbing, not a training framework: the
//! models are tiny (well under 100k parameters) and trained to near-perfect
//! accuracy on procedurally generated data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraint::predicted_class;
use crate::dataset::Dataset;
use crate::nn::{Layer, Model, PropagationCounter};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Training aborts with [`Error::TrainingFailed`] below this final train
/// accuracy, which guards downstream tests against degenerate fixtures.
pub const MIN_TRAIN_ACCURACY: f64 = 0.80;

/// Reference architecture to instantiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceArch {
    /// `Flatten -> Dense(hidden) -> ReLU -> Dense(classes)`.
    Mlp { hidden: usize },
    /// `Conv(3x3, pad 1) -> ReLU -> MaxPool(2) -> Flatten -> Dense(classes)`.
    /// Requires a `[c, h, w]` input with even spatial dimensions.
    Cnn { channels: usize },
}

/// Hyperparameters for [`train_reference_model`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ReferenceArch,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// MLP with 32 hidden units, learning rate 0.05.
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            arch: ReferenceArch::Mlp { hidden: 32 },
            epochs,
            learning_rate: 0.05,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        let width = match self.arch {
            ReferenceArch::Mlp { hidden } => hidden,
            ReferenceArch::Cnn { channels } => channels,
        };
        if width == 0 {
            return Err(Error::invalid("architecture width must be positive"));
        }
        Ok(())
    }
}

/// A trained model and its final accuracy on the training set.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub train_accuracy: f64,
}

/// Fraction of samples the model classifies correctly.
pub fn evaluate_accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid(
            "cannot evaluate accuracy on an empty dataset",
        ));
    }
    let mut counter = PropagationCounter::new();
    let mut correct = 0usize;
    for (image, label) in dataset.iter() {
        let logits = model.forward(image, &mut counter)?;
        if predicted_class(logits.data()) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Trains a reference classifier on `dataset` by seeded per-sample SGD.
///
/// Deterministic given `(dataset, config)`. Fails with
/// [`Error::TrainingFailed`] if the final train accuracy falls below
/// [`MIN_TRAIN_ACCURACY`].
pub fn train_reference_model(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = build_arch(
        config.arch,
        dataset.shape(),
        dataset.num_classes(),
        &mut rng,
    )?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut counter = PropagationCounter::new();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let pass = model.forward_pass(dataset.image(i), &mut counter)?;
            let upstream = cross_entropy_grad(pass.logits(), dataset.label(i));
            let (_, grads) = pass.backward_with_params(&upstream, &mut counter)?;
            model.apply_param_update(&grads, -config.learning_rate)?;
        }
    }

    let train_accuracy = evaluate_accuracy(&model, dataset)?;
    if train_accuracy < MIN_TRAIN_ACCURACY {
        return Err(Error::TrainingFailed(format!(
            "final train accuracy {train_accuracy:.3} is below the {MIN_TRAIN_ACCURACY} floor"
        )));
    }
    Ok(TrainOutcome {
        model,
        train_accuracy,
    })
}

/// Gradient of softmax cross-entropy w.r.t. the logits: `softmax(z) - e_y`.
fn cross_entropy_grad(logits: &Tensor, label: usize) -> Tensor {
    let z = logits.data();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let grad: Vec<f64> = exps
        .iter()
        .enumerate()
        .map(|(k, &e)| e / sum - if k == label { 1.0 } else { 0.0 })
        .collect();
    Tensor::vector(grad)
}

fn build_arch(
    arch: ReferenceArch,
    input_shape: &[usize],
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    let features: usize = input_shape.iter().product();
    let layers = match arch {
        ReferenceArch::Mlp { hidden } => vec![
            Layer::Flatten,
            glorot_dense(hidden, features, rng),
            Layer::Relu,
            glorot_dense(classes, hidden, rng),
        ],
        ReferenceArch::Cnn { channels } => {
            let &[in_channels, h, w] = input_shape else {
                return Err(Error::invalid(format!(
                    "CNN reference needs a [c, h, w] input, got {input_shape:?}"
                )));
            };
            vec![
                glorot_conv(channels, in_channels, 3, rng),
                Layer::Relu,
                Layer::MaxPool2d {
                    kernel: 2,
                    stride: 2,
                },
                Layer::Flatten,
                glorot_dense(classes, channels * (h / 2) * (w / 2), rng),
            ]
        }
    };
    Model::new(input_shape.to_vec(), layers)
}

/// Dense layer with Glorot-uniform weights and zero bias.
fn glorot_dense(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Layer {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    let weights: Vec<f64> = (0..out * inp)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Layer::Dense {
        weights: Tensor::from_vec(vec![out, inp], weights).expect("weight count"),
        bias: Tensor::zeros(vec![out]),
    }
}

/// 3x3 same-padding conv layer with Glorot-uniform weights and zero bias.
fn glorot_conv(
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    rng: &mut ChaCha8Rng,
) -> Layer {
    let fan_in = in_channels * kernel * kernel;
    let fan_out = out_channels * kernel * kernel;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = out_channels * in_channels * kernel * kernel;
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Layer::Conv2d {
        weights: Tensor::from_vec(vec![out_channels, in_channels, kernel, kernel], weights)
            .expect("weight count"),
        bias: Tensor::zeros(vec![out_channels]),
        stride: 1,
        padding: kernel / 2,
    }
}
