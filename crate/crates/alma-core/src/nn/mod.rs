//! A micro feed-forward network with reverse-mode input gradients.
//!
//! Models are plain data: an input shape plus a list of [`Layer`]s (dense,
//! 2-D convolution, ReLU, 2-D max-pooling, flatten) ending in a logit
//! vector of at least 3 classes. Three operations matter:
//!
//! * [`Model::forward`] — logits for one input.
//! * [`Model::forward_pass`] — a forward pass that keeps its activations so
//!   a backward pass can follow without re-running the network. This is the
//!   fused path attack loops use: exactly one forward and one backward per
//!   iteration.
//! * [`Model::input_gradient`] — `J^T u` for an upstream logit gradient
//!   `u`, running its own (counted) forward pass first.
//!
//! Every forward and backward pass increments a caller-supplied
//! [`PropagationCounter`]; attack budgets are audited with these counters,
//! so nothing in this module ever propagates silently.
//!
//! Subgradient conventions: ReLU uses slope 0 at exactly 0; max-pooling
//! routes gradients to the first maximal element in row-major window order.
//! Parameter gradients (for the reference-model trainer) reuse the same
//! backward sweep and are only materialised on request.

mod io;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Counts forward and backward propagations through a model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PropagationCounter {
    pub forwards: u64,
    pub backwards: u64,
}

impl PropagationCounter {
    /// A fresh counter at zero.
    pub fn new() -> Self {
        Self::default()
    }
}

/// One layer of a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Fully connected: `y = W x + b` with `W` of shape `[out, in]`.
    Dense { weights: Tensor, bias: Tensor },
    /// 2-D convolution over `[channels, height, width]` inputs with weights
    /// `[out_channels, in_channels, kh, kw]`, zero padding, floor-divided
    /// output extents.
    Conv2d {
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    /// Elementwise `max(0, x)`.
    Relu,
    /// Per-channel max over `kernel x kernel` windows.
    MaxPool2d { kernel: usize, stride: usize },
    /// Any shape to a flat vector.
    Flatten,
}

impl Layer {
    /// Human-readable layer kind for error messages.
    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
        }
    }

    /// Number of trainable parameters.
    fn parameter_count(&self) -> usize {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => {
                weights.len() + bias.len()
            }
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or a descriptive error.
    fn output_shape(&self, input: &[usize], index: usize) -> Result<Vec<usize>> {
        let fail = |msg: String| {
            Err(Error::ShapeChain {
                layer: index,
                msg: format!("{} layer: {msg}", self.kind()),
            })
        };
        match self {
            Layer::Dense { weights, bias } => {
                let ws = weights.shape();
                if ws.len() != 2 {
                    return fail(format!("weights must be 2-D, got {ws:?}"));
                }
                if input.len() != 1 || input[0] != ws[1] {
                    return fail(format!(
                        "expects a flat input of {} features, got {input:?}",
                        ws[1]
                    ));
                }
                if bias.shape() != [ws[0]] {
                    return fail(format!("bias shape {:?} != [{}]", bias.shape(), ws[0]));
                }
                Ok(vec![ws[0]])
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => {
                let ws = weights.shape();
                if ws.len() != 4 {
                    return fail(format!("weights must be 4-D, got {ws:?}"));
                }
                if *stride == 0 {
                    return fail("stride must be positive".into());
                }
                if input.len() != 3 || input[0] != ws[1] {
                    return fail(format!(
                        "expects [channels={}, h, w] input, got {input:?}",
                        ws[1]
                    ));
                }
                if bias.shape() != [ws[0]] {
                    return fail(format!("bias shape {:?} != [{}]", bias.shape(), ws[0]));
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < ws[2] || w < ws[3] {
                    return fail(format!(
                        "kernel {}x{} larger than padded input {h}x{w}",
                        ws[2], ws[3]
                    ));
                }
                Ok(vec![
                    ws[0],
                    (h - ws[2]) / stride + 1,
                    (w - ws[3]) / stride + 1,
                ])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { kernel, stride } => {
                if *kernel == 0 || *stride == 0 {
                    return fail("kernel and stride must be positive".into());
                }
                if input.len() != 3 {
                    return fail(format!("expects [c, h, w] input, got {input:?}"));
                }
                if input[1] < *kernel || input[2] < *kernel {
                    return fail(format!(
                        "window {kernel}x{kernel} larger than input {}x{}",
                        input[1], input[2]
                    ));
                }
                Ok(vec![
                    input[0],
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer to `input` (already shape-checked by the model).
    fn forward(&self, input: &Tensor, out_shape: &[usize]) -> Tensor {
        match self {
            Layer::Dense { weights, bias } => {
                let (out, inp) = (weights.shape()[0], weights.shape()[1]);
                let w = weights.data();
                let x = input.data();
                let mut y = bias.data().to_vec();
                for (i, yi) in y.iter_mut().enumerate() {
                    let row = &w[i * inp..(i + 1) * inp];
                    *yi += row.iter().zip(x).map(|(&a, &b)| a * b).sum::<f64>();
                }
                Tensor::from_vec(vec![out], y).expect("dense output")
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => {
                let ws = weights.shape();
                let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (h, w) = (input.shape()[1], input.shape()[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let x = input.data();
                let wt = weights.data();
                let mut y = vec![0.0; oc * oh * ow];
                for o in 0..oc {
                    let b = bias.data()[o];
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let mut acc = b;
                            for c in 0..ic {
                                for ki in 0..kh {
                                    let ii = oi * stride + ki;
                                    if ii < *padding || ii - padding >= h {
                                        continue;
                                    }
                                    let row = c * h * w + (ii - padding) * w;
                                    let wrow = ((o * ic + c) * kh + ki) * kw;
                                    for kj in 0..kw {
                                        let jj = oj * stride + kj;
                                        if jj < *padding || jj - padding >= w {
                                            continue;
                                        }
                                        acc += wt[wrow + kj] * x[row + jj - padding];
                                    }
                                }
                            }
                            y[(o * oh + oi) * ow + oj] = acc;
                        }
                    }
                }
                Tensor::from_vec(out_shape.to_vec(), y).expect("conv output")
            }
            Layer::Relu => input.map(|v| v.max(0.0)),
            Layer::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let x = input.data();
                let mut y = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            for ki in 0..*kernel {
                                let row = ch * h * w + (oi * stride + ki) * w + oj * stride;
                                for kj in 0..*kernel {
                                    let v = x[row + kj];
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                            y[(ch * oh + oi) * ow + oj] = best;
                        }
                    }
                }
                Tensor::from_vec(out_shape.to_vec(), y).expect("pool output")
            }
            Layer::Flatten => input.reshape(out_shape.to_vec()).expect("flatten"),
        }
    }

    /// Propagates `upstream` back through the layer. `input` is the cached
    /// layer input from the forward pass. Returns the input gradient and,
    /// when `with_params` is set, the parameter gradients.
    fn backward(
        &self,
        input: &Tensor,
        upstream: &Tensor,
        with_params: bool,
    ) -> (Tensor, Option<LayerGrads>) {
        match self {
            Layer::Dense { weights, .. } => {
                let (out, inp) = (weights.shape()[0], weights.shape()[1]);
                let w = weights.data();
                let u = upstream.data();
                let x = input.data();
                let mut dx = vec![0.0; inp];
                for i in 0..out {
                    let row = &w[i * inp..(i + 1) * inp];
                    let ui = u[i];
                    for (d, &wv) in dx.iter_mut().zip(row) {
                        *d += wv * ui;
                    }
                }
                let grads = with_params.then(|| {
                    let mut dw = vec![0.0; out * inp];
                    for i in 0..out {
                        let ui = u[i];
                        let row = &mut dw[i * inp..(i + 1) * inp];
                        for (d, &xv) in row.iter_mut().zip(x) {
                            *d = ui * xv;
                        }
                    }
                    LayerGrads {
                        weights: Some(Tensor::from_vec(vec![out, inp], dw).expect("dw")),
                        bias: Some(Tensor::vector(u.to_vec())),
                    }
                });
                (Tensor::from_vec(vec![inp], dx).expect("dx"), grads)
            }
            Layer::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => {
                let ws = weights.shape();
                let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (h, w) = (input.shape()[1], input.shape()[2]);
                let (oh, ow) = (upstream.shape()[1], upstream.shape()[2]);
                let x = input.data();
                let wt = weights.data();
                let u = upstream.data();
                let mut dx = vec![0.0; input.len()];
                let mut dw = vec![0.0; weights.len()];
                let mut db = vec![0.0; oc];
                for o in 0..oc {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let uv = u[(o * oh + oi) * ow + oj];
                            db[o] += uv;
                            for c in 0..ic {
                                for ki in 0..kh {
                                    let ii = oi * stride + ki;
                                    if ii < *padding || ii - padding >= h {
                                        continue;
                                    }
                                    let row = c * h * w + (ii - padding) * w;
                                    let wrow = ((o * ic + c) * kh + ki) * kw;
                                    for kj in 0..kw {
                                        let jj = oj * stride + kj;
                                        if jj < *padding || jj - padding >= w {
                                            continue;
                                        }
                                        dx[row + jj - padding] += wt[wrow + kj] * uv;
                                        if with_params {
                                            dw[wrow + kj] += x[row + jj - padding] * uv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let grads = with_params.then(|| LayerGrads {
                    weights: Some(Tensor::from_vec(ws.to_vec(), dw).expect("dw")),
                    bias: Some(Tensor::vector(db)),
                });
                (
                    Tensor::from_vec(input.shape().to_vec(), dx).expect("dx"),
                    grads,
                )
            }
            Layer::Relu => {
                // Subgradient 0 at exactly 0.
                let dx = input
                    .zip_map(upstream, |x, u| if x > 0.0 { u } else { 0.0 })
                    .expect("relu backward");
                (dx, with_params.then(LayerGrads::none))
            }
            Layer::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                let (oh, ow) = (upstream.shape()[1], upstream.shape()[2]);
                let x = input.data();
                let u = upstream.data();
                let mut dx = vec![0.0; input.len()];
                for ch in 0..c {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            // First maximal element in row-major window order.
                            let mut best = f64::NEG_INFINITY;
                            let mut best_at = 0;
                            for ki in 0..*kernel {
                                let row = ch * h * w + (oi * stride + ki) * w + oj * stride;
                                for kj in 0..*kernel {
                                    let v = x[row + kj];
                                    if v > best {
                                        best = v;
                                        best_at = row + kj;
                                    }
                                }
                            }
                            dx[best_at] += u[(ch * oh + oi) * ow + oj];
                        }
                    }
                }
                (
                    Tensor::from_vec(input.shape().to_vec(), dx).expect("dx"),
                    with_params.then(LayerGrads::none),
                )
            }
            Layer::Flatten => (
                upstream.reshape(input.shape().to_vec()).expect("unflatten"),
                with_params.then(LayerGrads::none),
            ),
        }
    }
}

/// Parameter gradients for one layer (both `None` for parameterless layers).
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl LayerGrads {
    fn none() -> Self {
        LayerGrads {
            weights: None,
            bias: None,
        }
    }
}

/// A validated feed-forward classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Per-layer output shapes, precomputed by validation.
    shapes: Vec<Vec<usize>>,
    num_classes: usize,
}

impl Model {
    /// Builds and validates a model: the shape chain must be consistent and
    /// end in a flat logit vector of at least 3 classes.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "bad input shape {input_shape:?}: dimensions must be positive"
            )));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            current = layer.output_shape(&current, i)?;
            shapes.push(current.clone());
        }
        if current.len() != 1 || current[0] < 3 {
            return Err(Error::invalid(format!(
                "model must end in a flat vector of >= 3 logits, got {current:?}"
            )));
        }
        let num_classes = current[0];
        Ok(Model {
            input_shape,
            layers,
            shapes,
            num_classes,
        })
    }

    /// Expected input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// The layers, in order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of output classes (logit count).
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Total trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Runs the network, returning the logits. Counts one forward pass.
    pub fn forward(&self, x: &Tensor, counter: &mut PropagationCounter) -> Result<Tensor> {
        Ok(self.forward_pass(x, counter)?.into_logits())
    }

    /// Runs the network and keeps all intermediate activations so that a
    /// backward pass can follow. Counts one forward pass.
    pub fn forward_pass(
        &self,
        x: &Tensor,
        counter: &mut PropagationCounter,
    ) -> Result<ForwardPass<'_>> {
        x.expect_shape(&self.input_shape)?;
        counter.forwards += 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (layer, shape) in self.layers.iter().zip(&self.shapes) {
            let next = layer.forward(activations.last().expect("nonempty"), shape);
            activations.push(next);
        }
        Ok(ForwardPass {
            model: self,
            activations,
        })
    }

    /// `J^T upstream`: gradient of `upstream . logits` w.r.t. the input.
    ///
    /// Performs its own forward pass; counts one forward and one backward.
    pub fn input_gradient(
        &self,
        x: &Tensor,
        upstream: &Tensor,
        counter: &mut PropagationCounter,
    ) -> Result<Tensor> {
        self.forward_pass(x, counter)?.backward(upstream, counter)
    }

    /// Adds `scale * grad` to every parameter, in place. `grads` must come
    /// from [`ForwardPass::backward_with_params`] on this model (one entry
    /// per layer, shapes matching).
    pub fn apply_param_update(&mut self, grads: &[LayerGrads], scale: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "{} gradient entries for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        let add = |param: &mut Tensor, grad: &Option<Tensor>, layer: usize| -> Result<()> {
            let grad = grad.as_ref().ok_or(Error::ShapeChain {
                layer,
                msg: "missing parameter gradient".into(),
            })?;
            grad.expect_shape(param.shape())?;
            for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                *p += scale * g;
            }
            Ok(())
        };
        for (i, (layer, grad)) in self.layers.iter_mut().zip(grads).enumerate() {
            match layer {
                Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => {
                    add(weights, &grad.weights, i)?;
                    add(bias, &grad.bias, i)?;
                }
                Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => {}
            }
        }
        Ok(())
    }
}

/// A completed forward pass: logits plus cached activations for one
/// backward sweep.
pub struct ForwardPass<'m> {
    model: &'m Model,
    activations: Vec<Tensor>,
}

impl ForwardPass<'_> {
    /// The logits produced by the forward pass.
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("nonempty")
    }

    /// Consumes the pass, returning only the logits.
    pub fn into_logits(mut self) -> Tensor {
        self.activations.pop().expect("nonempty")
    }

    /// Pulls `upstream` (gradient w.r.t. the logits) back to the input.
    /// Counts one backward pass.
    pub fn backward(self, upstream: &Tensor, counter: &mut PropagationCounter) -> Result<Tensor> {
        Ok(self.backward_impl(upstream, counter, false)?.0)
    }

    /// Like [`backward`](Self::backward) but also returns per-layer
    /// parameter gradients (used by the trainer).
    pub fn backward_with_params(
        self,
        upstream: &Tensor,
        counter: &mut PropagationCounter,
    ) -> Result<(Tensor, Vec<LayerGrads>)> {
        let (dx, grads) = self.backward_impl(upstream, counter, true)?;
        Ok((dx, grads.expect("requested")))
    }

    fn backward_impl(
        self,
        upstream: &Tensor,
        counter: &mut PropagationCounter,
        with_params: bool,
    ) -> Result<(Tensor, Option<Vec<LayerGrads>>)> {
        upstream.expect_shape(&[self.model.num_classes])?;
        counter.backwards += 1;
        let mut grad = upstream.clone();
        let mut param_grads = with_params.then(Vec::new);
        for (layer, input) in self.model.layers.iter().zip(&self.activations).rev() {
            let (dx, grads) = layer.backward(input, &grad, with_params);
            grad = dx;
            if let (Some(all), Some(g)) = (param_grads.as_mut(), grads) {
                all.push(g);
            }
        }
        if let Some(all) = param_grads.as_mut() {
            all.reverse();
        }
        Ok((grad, param_grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Layer {
        let w = (0..out * inp).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let b = (0..out).map(|_| rng.gen_range(-0.3..0.3)).collect();
        Layer::Dense {
            weights: Tensor::from_vec(vec![out, inp], w).unwrap(),
            bias: Tensor::vector(b),
        }
    }

    fn conv(
        oc: usize,
        ic: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Layer {
        let w = (0..oc * ic * k * k)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let b = (0..oc).map(|_| rng.gen_range(-0.2..0.2)).collect();
        Layer::Conv2d {
            weights: Tensor::from_vec(vec![oc, ic, k, k], w).unwrap(),
            bias: Tensor::vector(b),
            stride,
            padding,
        }
    }

    // ===== Forward values =====

    #[test]
    fn identity_dense_reproduces_input() {
        let n = 4;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let model = Model::new(
            vec![n],
            vec![Layer::Dense {
                weights: Tensor::from_vec(vec![n, n], w).unwrap(),
                bias: Tensor::zeros(vec![n]),
            }],
        )
        .unwrap();
        let x = Tensor::vector(vec![0.5, -1.5, 2.0, 0.0]);
        let mut c = PropagationCounter::new();
        let z = model.forward(&x, &mut c).unwrap();
        assert_eq!(z.data(), x.data());
        assert_eq!(
            c,
            PropagationCounter {
                forwards: 1,
                backwards: 0
            }
        );
    }

    #[test]
    fn dense_matches_direct_matrix_multiply() {
        let model = Model::new(
            vec![2],
            vec![Layer::Dense {
                weights: Tensor::from_vec(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap(),
                bias: Tensor::vector(vec![0.1, 0.2, 0.3]),
            }],
        )
        .unwrap();
        let z = model
            .forward(
                &Tensor::vector(vec![2.0, -1.0]),
                &mut PropagationCounter::new(),
            )
            .unwrap();
        // [1*2 + 2*(-1) + 0.1, -1*2 + 0.5*(-1) + 0.2, 0 + 3*(-1) + 0.3]
        assert_eq!(z.data(), &[0.1, -2.3, -2.7]);
    }

    #[test]
    fn conv_hand_computed_example() {
        // 3x3 input, 2x2 ones kernel, stride 1, no padding:
        // windows sum to [[12, 16], [24, 28]]; bias 0.5 shifts all.
        let conv = Layer::Conv2d {
            weights: Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
            bias: Tensor::vector(vec![0.5]),
            stride: 1,
            padding: 0,
        };
        let input = Tensor::from_vec(
            vec![1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let out = conv.forward(&input, &[1, 2, 2]);
        assert_eq!(out.data(), &[12.5, 16.5, 24.5, 28.5]);
    }

    #[test]
    fn conv_padding_covers_borders() {
        // Same kernel with padding 1: output is 4x4; the top-left output
        // cell sees only input (0,0).
        let conv = Layer::Conv2d {
            weights: Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
            bias: Tensor::vector(vec![0.0]),
            stride: 1,
            padding: 1,
        };
        let input = Tensor::from_vec(
            vec![1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let shape = conv.output_shape(&[1, 3, 3], 0).unwrap();
        assert_eq!(shape, vec![1, 4, 4]);
        let out = conv.forward(&input, &shape);
        assert_eq!(out.data()[0], 1.0);
        assert_eq!(out.data()[15], 9.0);
    }

    #[test]
    fn relu_and_maxpool_frozen_values() {
        let relu = Layer::Relu;
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu.forward(&x, &[3]).data(), &[0.0, 0.0, 2.0]);
        // Subgradient at exactly 0 is 0.
        let (dx, _) = relu.backward(&x, &Tensor::vector(vec![1.0, 1.0, 1.0]), false);
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);

        let pool = Layer::MaxPool2d {
            kernel: 2,
            stride: 2,
        };
        let x = Tensor::from_vec(
            vec![1, 4, 4],
            vec![
                1.0, 2.0, 5.0, 5.0, //
                3.0, 4.0, 5.0, 5.0, //
                9.0, 8.0, 7.0, 6.0, //
                9.0, 8.0, 7.0, 6.0,
            ],
        )
        .unwrap();
        let out = pool.forward(&x, &[1, 2, 2]);
        assert_eq!(out.data(), &[4.0, 5.0, 9.0, 7.0]);
        // Ties (the 5s and 9s) route to the first element in row-major
        // window order: positions 2 and 8.
        let (dx, _) = pool.backward(
            &x,
            &Tensor::from_vec(vec![1, 2, 2], vec![1.0; 4]).unwrap(),
            false,
        );
        assert_eq!(dx.data()[2], 1.0);
        assert_eq!(dx.data()[3], 0.0);
        assert_eq!(dx.data()[8], 1.0);
        assert_eq!(dx.data()[12], 0.0);
    }

    // ===== Validation =====

    #[test]
    fn rejects_inconsistent_chains_naming_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bad = Model::new(vec![4], vec![dense(3, 5, &mut rng)]);
        match bad {
            Err(Error::ShapeChain { layer: 0, .. }) => {}
            other => panic!("expected shape-chain error at layer 0, got {other:?}"),
        }
        let bad = Model::new(
            vec![3, 4, 4],
            vec![
                conv(2, 3, 3, 1, 0, &mut rng),
                Layer::Flatten,
                dense(3, 9, &mut rng),
            ],
        );
        match bad {
            Err(Error::ShapeChain { layer: 2, .. }) => {}
            other => panic!("expected shape-chain error at layer 2, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_small_output_models() {
        assert!(Model::new(vec![4], vec![]).is_err());
        // 2 logits < 3.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(Model::new(vec![4], vec![dense(2, 4, &mut rng)]).is_err());
        // Non-flat output.
        assert!(Model::new(vec![1, 4, 4], vec![Layer::Relu]).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(vec![4], vec![dense(3, 4, &mut rng)]).unwrap();
        let mut c = PropagationCounter::new();
        assert!(model
            .forward(&Tensor::vector(vec![1.0; 5]), &mut c)
            .is_err());
        // Failed calls do not count.
        assert_eq!(c.forwards, 0);
    }

    // ===== Counters =====

    #[test]
    fn counters_track_every_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::new(
            vec![6],
            vec![dense(5, 6, &mut rng), Layer::Relu, dense(4, 5, &mut rng)],
        )
        .unwrap();
        let x = Tensor::vector(vec![0.1; 6]);
        let mut c = PropagationCounter::new();
        model.forward(&x, &mut c).unwrap();
        assert_eq!(
            c,
            PropagationCounter {
                forwards: 1,
                backwards: 0
            }
        );
        let u = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]);
        model.input_gradient(&x, &u, &mut c).unwrap();
        assert_eq!(
            c,
            PropagationCounter {
                forwards: 2,
                backwards: 1
            }
        );
        let pass = model.forward_pass(&x, &mut c).unwrap();
        pass.backward(&u, &mut c).unwrap();
        assert_eq!(
            c,
            PropagationCounter {
                forwards: 3,
                backwards: 2
            }
        );
    }

    // ===== Gradient checks =====

    fn random_model(rng: &mut ChaCha8Rng, arch: usize) -> (Model, Vec<usize>) {
        match arch % 5 {
            // Pure MLP.
            0 => {
                let (a, b) = (rng.gen_range(4..16), rng.gen_range(3..10));
                (
                    Model::new(
                        vec![8],
                        vec![dense(a, 8, rng), Layer::Relu, dense(b.max(3), a, rng)],
                    )
                    .unwrap(),
                    vec![8],
                )
            }
            // Conv + flatten + dense.
            1 => {
                let oc = rng.gen_range(2..4);
                (
                    Model::new(
                        vec![2, 5, 5],
                        vec![
                            conv(oc, 2, 3, 1, 0, rng),
                            Layer::Relu,
                            Layer::Flatten,
                            dense(4, oc * 9, rng),
                        ],
                    )
                    .unwrap(),
                    vec![2, 5, 5],
                )
            }
            // Conv with padding and stride.
            2 => {
                let oc = rng.gen_range(2..4);
                (
                    Model::new(
                        vec![3, 6, 6],
                        vec![
                            conv(oc, 3, 3, 2, 1, rng),
                            Layer::Flatten,
                            dense(5, oc * 9, rng),
                        ],
                    )
                    .unwrap(),
                    vec![3, 6, 6],
                )
            }
            // Maxpool in the middle.
            3 => {
                let oc = rng.gen_range(2..4);
                (
                    Model::new(
                        vec![1, 6, 6],
                        vec![
                            conv(oc, 1, 3, 1, 1, rng),
                            Layer::Relu,
                            Layer::MaxPool2d {
                                kernel: 2,
                                stride: 2,
                            },
                            Layer::Flatten,
                            dense(4, oc * 9, rng),
                        ],
                    )
                    .unwrap(),
                    vec![1, 6, 6],
                )
            }
            // Deep MLP.
            _ => {
                let (a, b) = (rng.gen_range(6..16), rng.gen_range(4..12));
                (
                    Model::new(
                        vec![10],
                        vec![
                            dense(a, 10, rng),
                            Layer::Relu,
                            dense(b, a, rng),
                            Layer::Relu,
                            dense(3, b, rng),
                        ],
                    )
                    .unwrap(),
                    vec![10],
                )
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences_across_architectures() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for arch in 0..25 {
            let (model, shape) = random_model(&mut rng, arch);
            let n: usize = shape.iter().product();
            let x = Tensor::from_vec(
                shape.clone(),
                (0..n).map(|_| rng.gen_range(0.1..0.9)).collect(),
            )
            .unwrap();
            let k = model.num_classes();
            let u = Tensor::vector((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let mut c = PropagationCounter::new();
            let grad = model.input_gradient(&x, &u, &mut c).unwrap();

            let f = |x: &Tensor| {
                let z = model.forward(x, &mut PropagationCounter::new()).unwrap();
                z.data()
                    .iter()
                    .zip(u.data())
                    .map(|(&a, &b)| a * b)
                    .sum::<f64>()
            };
            let h = 1e-6;
            for i in (0..n).step_by(3) {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi.data_mut()[i] += h;
                lo.data_mut()[i] -= h;
                let fd = (f(&hi) - f(&lo)) / (2.0 * h);
                let got = grad.data()[i];
                assert!(
                    (got - fd).abs() / fd.abs().max(1.0) < 1e-4,
                    "arch {arch}: grad[{i}] = {got} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn input_gradient_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (model, shape) = random_model(&mut rng, 0);
        let n: usize = shape.iter().product();
        let x = Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
        let k = model.num_classes();
        let u1 = Tensor::vector((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let u2 = Tensor::vector((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let combo = u1.zip_map(&u2, |a, b| 2.0 * a - 0.5 * b).unwrap();
        let mut c = PropagationCounter::new();
        let g1 = model.input_gradient(&x, &u1, &mut c).unwrap();
        let g2 = model.input_gradient(&x, &u2, &mut c).unwrap();
        let gc = model.input_gradient(&x, &combo, &mut c).unwrap();
        for i in 0..n {
            let want = 2.0 * g1.data()[i] - 0.5 * g2.data()[i];
            assert!((gc.data()[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::new(
            vec![5],
            vec![dense(6, 5, &mut rng), Layer::Relu, dense(3, 6, &mut rng)],
        )
        .unwrap();
        let x = Tensor::vector((0..5).map(|_| rng.gen_range(0.1..0.9)).collect());
        let u = Tensor::vector(vec![0.3, -1.0, 0.7]);
        let mut c = PropagationCounter::new();
        let pass = model.forward_pass(&x, &mut c).unwrap();
        let (_, grads) = pass.backward_with_params(&u, &mut c).unwrap();

        // Check a few weight coordinates of layer 0 by perturbation.
        let f = |m: &Model| {
            let z = m.forward(&x, &mut PropagationCounter::new()).unwrap();
            z.data()
                .iter()
                .zip(u.data())
                .map(|(&a, &b)| a * b)
                .sum::<f64>()
        };
        let h = 1e-6;
        for idx in [0usize, 7, 13, 29] {
            let mut bumped = model.clone();
            if let Layer::Dense { weights, .. } = &mut bumped.layers[0] {
                weights.data_mut()[idx] += h;
            }
            let mut lowered = model.clone();
            if let Layer::Dense { weights, .. } = &mut lowered.layers[0] {
                weights.data_mut()[idx] -= h;
            }
            let fd = (f(&bumped) - f(&lowered)) / (2.0 * h);
            let got = grads[0].weights.as_ref().unwrap().data()[idx];
            assert!(
                (got - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "dW[{idx}] = {got} vs fd {fd}"
            );
        }
    }

    #[test]
    fn parameter_count_sums_parametric_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::new(
            vec![4],
            vec![dense(6, 4, &mut rng), Layer::Relu, dense(3, 6, &mut rng)],
        )
        .unwrap();
        assert_eq!(model.parameter_count(), 6 * 4 + 6 + 3 * 6 + 3);
    }

    #[test]
    fn param_update_adds_scaled_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = Model::new(
            vec![4],
            vec![dense(5, 4, &mut rng), Layer::Relu, dense(3, 5, &mut rng)],
        )
        .unwrap();
        let before = model.clone();
        let x = Tensor::vector(vec![0.4, 0.9, 0.1, 0.6]);
        let u = Tensor::vector(vec![1.0, -0.5, 0.25]);
        let mut c = PropagationCounter::new();
        let pass = model.forward_pass(&x, &mut c).unwrap();
        let (_, grads) = pass.backward_with_params(&u, &mut c).unwrap();

        model.apply_param_update(&grads, -0.1).unwrap();
        for (layer, (was, grad)) in model.layers.iter().zip(before.layers.iter().zip(&grads)) {
            let (
                Layer::Dense { weights, bias },
                Layer::Dense {
                    weights: w0,
                    bias: b0,
                },
            ) = (layer, was)
            else {
                continue;
            };
            let dw = grad.weights.as_ref().unwrap();
            let db = grad.bias.as_ref().unwrap();
            for ((now, old), g) in weights.data().iter().zip(w0.data()).zip(dw.data()) {
                assert!((now - (old - 0.1 * g)).abs() < 1e-15);
            }
            for ((now, old), g) in bias.data().iter().zip(b0.data()).zip(db.data()) {
                assert!((now - (old - 0.1 * g)).abs() < 1e-15);
            }
        }

        // Wrong-arity updates are rejected and leave the model untouched.
        let snapshot = model.clone();
        assert!(model.apply_param_update(&grads[..1], 1.0).is_err());
        assert_eq!(model, snapshot);
    }
}
