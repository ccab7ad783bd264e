//! Feed-forward inference for small VGG-style networks.
//!
//! Supported layers are 2-D convolution (zero padding), ReLU, max pooling (no
//! padding), flatten and dense. A forward pass keeps every intermediate
//! activation so attribution can walk the network backwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    Relu,
    Maxpool2d,
    Flatten,
    Dense,
}

/// Convolution with weights stored `[out_ch][in_ch][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

/// Fully connected layer with weights stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
    Dense(Dense<T>),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        weight: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
            return Err(Error::ShapeMismatch(
                "conv2d channels, kernel and stride must be positive".into(),
            ));
        }
        let expected = out_channels * in_channels * kernel.0 * kernel.1;
        if weight.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "conv2d weight needs {expected} values, got {}",
                weight.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias needs {out_channels} values, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        })
    }

    #[inline]
    pub(crate) fn w(&self, o: usize, c: usize, ky: usize, kx: usize) -> T {
        self.weight[((o * self.in_channels + c) * self.kernel.0 + ky) * self.kernel.1 + kx]
    }

    fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel.0 || pw < self.kernel.1 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d kernel {:?} larger than padded input {ph}x{pw}",
                self.kernel
            )));
        }
        Ok((
            (ph - self.kernel.0) / self.stride + 1,
            (pw - self.kernel.1) / self.stride + 1,
        ))
    }

    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (oh, ow) = self.output_hw(h, w).expect("shape checked at load");
        let x = input.data();
        let pad = self.padding as isize;
        let mut out = Vec::with_capacity(self.out_channels * oh * ow);
        for o in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[o].widen();
                    for c in 0..self.in_channels {
                        for ky in 0..self.kernel.0 {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = (c * h + iy as usize) * w;
                            for kx in 0..self.kernel.1 {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.w(o, c, ky, kx).widen() * x[row + ix as usize].widen();
                            }
                        }
                    }
                    out.push(T::from_f64_lossy(acc));
                }
            }
        }
        Tensor::new(vec![self.out_channels, oh, ow], out).expect("output size matches shape")
    }
}

impl MaxPool2d {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::ShapeMismatch(
                "maxpool2d window and stride must be positive".into(),
            ));
        }
        Ok(Self { window, stride })
    }

    fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.window || w < self.window {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2d window {} larger than input {h}x{w}",
                self.window
            )));
        }
        Ok((
            (h - self.window) / self.stride + 1,
            (w - self.window) / self.stride + 1,
        ))
    }

    /// Flat input index of the first (row-major) maximum of each pooling
    /// window, in output order.
    pub(crate) fn argmax_indices<T: Scalar>(&self, input: &Tensor<T>) -> Vec<usize> {
        let (ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oh, ow) = self.output_hw(h, w).expect("shape checked at load");
        let x = input.data();
        let mut idx = Vec::with_capacity(ch * oh * ow);
        for c in 0..ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (c * h + oy * self.stride) * w + ox * self.stride;
                    for dy in 0..self.window {
                        for dx in 0..self.window {
                            let i = (c * h + oy * self.stride + dy) * w + ox * self.stride + dx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        idx
    }

    /// Flat input indices covered by the window of output cell `out_index`.
    pub(crate) fn window_indices(&self, in_shape: &[usize], out_index: usize) -> Vec<usize> {
        let (h, w) = (in_shape[1], in_shape[2]);
        let (oh, ow) = self.output_hw(h, w).expect("shape checked at load");
        let c = out_index / (oh * ow);
        let oy = (out_index / ow) % oh;
        let ox = out_index % ow;
        let mut v = Vec::with_capacity(self.window * self.window);
        for dy in 0..self.window {
            for dx in 0..self.window {
                v.push((c * h + oy * self.stride + dy) * w + ox * self.stride + dx);
            }
        }
        v
    }

    fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Tensor<T> {
        let (ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oh, ow) = self.output_hw(h, w).expect("shape checked at load");
        let x = input.data();
        let data = self
            .argmax_indices(input)
            .into_iter()
            .map(|i| x[i])
            .collect();
        Tensor::new(vec![ch, oh, ow], data).expect("output size matches shape")
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::ShapeMismatch("dense dims must be positive".into()));
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense weight needs {} values, got {}",
                in_dim * out_dim,
                weight.len()
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense bias needs {out_dim} values, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        let x = input.data();
        let data = (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let acc = row.iter().zip(x).fold(self.bias[o].widen(), |acc, (w, v)| {
                    acc + w.widen() * v.widen()
                });
                T::from_f64_lossy(acc)
            })
            .collect();
        Tensor::new(vec![self.out_dim], data).expect("output size matches shape")
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::Maxpool2d,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    /// Output shape for a given input shape, or `ShapeMismatch` if the layer
    /// cannot consume it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(conv) => {
                if input.len() != 3 || input[0] != conv.in_channels {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d expects [{}, h, w], got {input:?}",
                        conv.in_channels
                    )));
                }
                let (oh, ow) = conv.output_hw(input[1], input[2])?;
                Ok(vec![conv.out_channels, oh, ow])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d(pool) => {
                if input.len() != 3 {
                    return Err(Error::ShapeMismatch(format!(
                        "maxpool2d expects [c, h, w], got {input:?}"
                    )));
                }
                let (oh, ow) = pool.output_hw(input[1], input[2])?;
                Ok(vec![input[0], oh, ow])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(dense) => {
                if input != [dense.in_dim] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects [{}], got {input:?}",
                        dense.in_dim
                    )));
                }
                Ok(vec![dense.out_dim])
            }
        }
    }

    /// Runs the layer. The input shape must already be validated.
    pub fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2d(conv) => conv.forward(input),
            Layer::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
            Layer::MaxPool2d(pool) => pool.forward(input),
            Layer::Flatten => input
                .clone()
                .reshape(vec![input.len()])
                .expect("flatten preserves length"),
            Layer::Dense(dense) => dense.forward(input),
        }
    }
}

/// A validated feed-forward network. Weights are immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    input_shape: [usize; 3],
    class_names: Vec<String>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network, checking the layer stack end to end against
    /// `input_shape` (channels, height, width) and the class count.
    pub fn new(
        layers: Vec<Layer<T>>,
        input_shape: [usize; 3],
        class_names: Vec<String>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::ShapeMismatch(
                "network needs at least one class".into(),
            ));
        }
        if input_shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "input shape must be positive, got {input_shape:?}"
            )));
        }
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::ShapeMismatch(format!("layer {i}: {e}")))?;
        }
        if shape != [class_names.len()] {
            return Err(Error::ShapeMismatch(format!(
                "network output {shape:?} does not match {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            layers,
            input_shape,
            class_names,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Output shape after every layer, in order.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.to_vec();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    /// Runs a forward pass and keeps every activation.
    pub fn forward(&self, input: &Tensor<T>) -> Result<ActivationTrace<T>> {
        input.expect_shape(&self.input_shape)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("non-empty"));
            activations.push(next);
        }
        Ok(ActivationTrace { activations })
    }

    /// Softmax over the logits with argmax (lowest index wins ties).
    pub fn predict(&self, input: &Tensor<T>) -> Result<Prediction> {
        let trace = self.forward(input)?;
        Ok(Prediction::from_logits(trace.logits().data()))
    }
}

/// Activations of one forward pass: entry 0 is the network input, entry
/// `i + 1` is the output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T> {
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn num_layers(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn input(&self, layer: usize) -> &Tensor<T> {
        &self.activations[layer]
    }

    pub fn output(&self, layer: usize) -> &Tensor<T> {
        &self.activations[layer + 1]
    }

    /// Pre-softmax outputs of the final layer.
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds the input")
    }

    /// Index of the first layer whose output is not finite.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.activations
            .iter()
            .position(|t| !t.is_finite())
            .map(|i| i.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_index: usize,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Self {
        let probabilities = softmax(logits);
        let class_index = argmax(logits);
        Self {
            class_index,
            probabilities,
        }
    }
}

/// Numerically stable softmax evaluated in `f64`.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.widen())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.widen() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
