//! Feedforward embedding network, linear classifier head and their gradients.
//!
//! Layers are dense `out x in` row-major matrices. Hidden layers apply `tanh`;
//! the last embedding layer is linear. The classifier head is one more linear
//! layer mapping embeddings to class logits.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::DetRng;

pub const DEFAULT_EMBEDDING_DIM: usize = 16;
pub const DEFAULT_LEARNING_RATE: f64 = 0.002;

/// Dense affine map `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weights: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut DetRng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weights = (0..input * output)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Self {
            input,
            output,
            weights,
            bias: vec![0.0; output],
        }
    }

    pub fn from_parts(input: usize, output: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != input * output {
            return Err(Error::DimensionMismatch {
                context: "layer weights",
                expected: input * output,
                found: weights.len(),
            });
        }
        if bias.len() != output {
            return Err(Error::DimensionMismatch {
                context: "layer bias",
                expected: output,
                found: bias.len(),
            });
        }
        Ok(Self {
            input,
            output,
            weights,
            bias,
        })
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.input)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }

    /// Accumulates `delta x^T` into `grad` and returns `W^T delta`.
    fn accumulate(&self, x: &[f64], delta: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut back = vec![0.0; self.input];
        for (o, &d) in delta.iter().enumerate() {
            grad.bias[o] += d;
            if d == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.input..(o + 1) * self.input];
            let grow = &mut grad.weights[o * self.input..(o + 1) * self.input];
            for i in 0..self.input {
                grow[i] += d * x[i];
                back[i] += row[i] * d;
            }
        }
        back
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.output)
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.input == other.input && self.output == other.output
    }
}

/// The embedding map `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    layers: Vec<Dense>,
}

/// Activations recorded by a forward pass; `activations[0]` is the input.
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }
}

impl EmbeddingModel {
    /// Randomly initialized model with layer widths `dims = [D, h1, ..., E]`.
    pub fn new(dims: &[usize], rng: &mut DetRng) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "embedding needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(Error::DimensionMismatch {
                    context: "consecutive layer widths",
                    expected: pair[0].output,
                    found: pair[1].input,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.output))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.activations.pop().expect("nonempty trace"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "embedding input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.output);
            layer.apply(&activations[l], &mut out);
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Gradients of `upstream . f(x)` with respect to the parameters and `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<Dense>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = self.zero_grad();
        let input_grad = self.backward_trace(&trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Accumulates parameter gradients for a recorded pass into `grads` and
    /// returns the gradient with respect to the input.
    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64], grads: &mut [Dense]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        if grads.len() != self.layers.len() || !grads.iter().zip(&self.layers).all(|(g, l)| g.same_shape(l)) {
            return Err(Error::invalid("grads", "gradient buffers do not match the model"));
        }
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            if l != last {
                for (d, a) in delta.iter_mut().zip(&trace.activations[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = self.layers[l].accumulate(&trace.activations[l], &delta, &mut grads[l]);
        }
        Ok(delta)
    }

    pub fn zero_grad(&self) -> Vec<Dense> {
        self.layers.iter().map(Dense::zeros_like).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Dense::params).all(|v| v.is_finite())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr >= 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("lr", format!("must be finite and >= 0, got {lr}")))
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("layer dims", "need at least input and output widths"));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("layer dims", "widths must be positive"));
    }
    Ok(())
}

/// Linear map from embeddings to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    layer: Dense,
}

/// Softmax cross-entropy of the head on one embedding.
#[derive(Clone, Debug)]
pub struct ClassificationLoss {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_embedding: Vec<f64>,
    pub grad_head: Dense,
}

impl ClassifierHead {
    pub fn new(embedding_dim: usize, num_classes: usize, rng: &mut DetRng) -> Self {
        Self {
            layer: Dense::glorot(embedding_dim, num_classes, rng),
        }
    }

    pub fn from_layer(layer: Dense) -> Self {
        Self { layer }
    }

    pub fn layer(&self) -> &Dense {
        &self.layer
    }

    pub fn num_classes(&self) -> usize {
        self.layer.output
    }

    pub fn embedding_dim(&self) -> usize {
        self.layer.input
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.layer.input {
            return Err(Error::DimensionMismatch {
                context: "classifier input",
                expected: self.layer.input,
                found: embedding.len(),
            });
        }
        let mut out = Vec::with_capacity(self.layer.output);
        self.layer.apply(embedding, &mut out);
        Ok(out)
    }

    pub fn probabilities(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(embedding)?))
    }

    pub fn loss(&self, embedding: &[f64], label: usize) -> Result<ClassificationLoss> {
        if label >= self.num_classes() {
            return Err(Error::InvalidLabel {
                label,
                num_classes: self.num_classes(),
            });
        }
        let logits = self.logits(embedding)?;
        let lse = log_sum_exp(&logits);
        let probs: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        let loss = lse - logits[label];
        let delta: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| if i == label { p - 1.0 } else { *p })
            .collect();
        let mut grad_head = self.layer.zeros_like();
        let grad_embedding = self.layer.accumulate(embedding, &delta, &mut grad_head);
        Ok(ClassificationLoss {
            loss,
            probs,
            grad_embedding,
            grad_head,
        })
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Embedding model plus classifier head: everything a trainer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub embedding: EmbeddingModel,
    pub head: ClassifierHead,
}

/// Shape-congruent gradient of a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradient {
    pub embedding: Vec<Dense>,
    pub head: Dense,
}

impl ParameterGradient {
    pub fn zeros_for(net: &Network) -> Self {
        Self {
            embedding: net.embedding.zero_grad(),
            head: net.head.layer.zeros_like(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.embedding.iter().chain(std::iter::once(&self.head)).flat_map(Dense::params)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &ParameterGradient, scale: f64) {
        let dst = self.embedding.iter_mut().chain(std::iter::once(&mut self.head));
        let src = other.embedding.iter().chain(std::iter::once(&other.head));
        for (d, s) in dst.zip(src) {
            for (a, b) in d.params_mut().zip(s.params()) {
                *a += scale * b;
            }
        }
    }
}

impl Network {
    /// Fresh network with embedding widths `dims` and a head over `num_classes`.
    /// Embedding layers are initialized before the head from the same stream.
    pub fn new(dims: &[usize], num_classes: usize, rng: &mut DetRng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        let embedding = EmbeddingModel::new(dims, rng)?;
        let head = ClassifierHead::new(embedding.output_dim(), num_classes, rng);
        Ok(Self { embedding, head })
    }

    pub fn from_parts(embedding: EmbeddingModel, head: ClassifierHead) -> Result<Self> {
        if head.embedding_dim() != embedding.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "classifier head input",
                expected: embedding.output_dim(),
                found: head.embedding_dim(),
            });
        }
        Ok(Self { embedding, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    /// Softmax class scores for one input.
    pub fn classify(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.probabilities(&self.embedding.forward(x)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.classify(x)?))
    }

    /// Plain SGD: `params -= lr * grad`. Rejects the whole update if any
    /// gradient entry is non-finite.
    pub fn sgd_step(&mut self, grad: &ParameterGradient, lr: f64) -> Result<()> {
        self.check_step(grad, lr)?;
        let dst = self
            .embedding
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head.layer));
        let src = grad.embedding.iter().chain(std::iter::once(&grad.head));
        for (d, s) in dst.zip(src) {
            for (p, g) in d.params_mut().zip(s.params()) {
                *p -= lr * g;
            }
        }
        Ok(())
    }

    /// SGD on the head only; embedding parameters are not touched.
    pub fn sgd_step_head(&mut self, grad: &Dense, lr: f64) -> Result<()> {
        if !self.head.layer.same_shape(grad) {
            return Err(Error::invalid("grad", "head gradient shape mismatch"));
        }
        check_lr(lr)?;
        if !grad.params().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "classifier head gradient".into(),
            });
        }
        for (p, g) in self.head.layer.params_mut().zip(grad.params()) {
            *p -= lr * g;
        }
        Ok(())
    }

    fn check_step(&self, grad: &ParameterGradient, lr: f64) -> Result<()> {
        check_lr(lr)?;
        let shapes_match = grad.embedding.len() == self.embedding.layers.len()
            && grad
                .embedding
                .iter()
                .zip(&self.embedding.layers)
                .all(|(g, l)| g.same_shape(l))
            && grad.head.same_shape(&self.head.layer);
        if !shapes_match {
            return Err(Error::invalid("grad", "gradient shape does not match parameters"));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                context: "parameter gradient".into(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.is_finite() && self.head.layer.params().all(|v| v.is_finite())
    }

    /// All layers in checkpoint order: embedding layers, then the head.
    pub fn all_layers(&self) -> impl Iterator<Item = &Dense> {
        self.embedding.layers.iter().chain(std::iter::once(&self.head.layer))
    }

    /// Flat parameter vector in checkpoint order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.all_layers().flat_map(Dense::params).copied().collect()
    }

    pub fn flat_params_mut(&mut self) -> Vec<&mut f64> {
        self.embedding
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head.layer))
            .flat_map(Dense::params_mut)
            .collect()
    }

    /// Raw little-endian bytes of the embedding parameters only.
    pub fn embedding_bytes(&self) -> Vec<u8> {
        self.embedding
            .layers
            .iter()
            .flat_map(Dense::params)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   tmps-ckpt v1\n
//   D h1 ... E c\n          layer widths, head output last
//   <f64 LE>...             per layer: weights (out x in, row-major), bias
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &str = "tmps-ckpt v1";

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    let mut dims = net.embedding.dims();
    dims.push(net.num_classes());
    let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
    writeln!(w, "{}", dims.join(" "))?;
    for v in net.all_layers().flat_map(Dense::params) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn checkpoint_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).expect("writing to memory");
    buf
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut rest = bytes.as_slice();
    let mut next_line = || -> Result<String> {
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?
            .to_string();
        rest = &rest[end + 1..];
        Ok(line)
    };
    if next_line()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("missing `{CHECKPOINT_MAGIC}` header")));
    }
    let dims: Vec<usize> = next_line()?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Checkpoint(format!("bad layer width `{t}`"))))
        .collect::<Result<_>>()?;
    if dims.len() < 3 || dims.contains(&0) {
        return Err(Error::Checkpoint("need at least input, embedding and class widths".into()));
    }
    let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if rest.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            rest.len()
        )));
    }
    let mut values = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut layers: Vec<Dense> = dims
        .windows(2)
        .map(|w| {
            let weights = values.by_ref().take(w[0] * w[1]).collect();
            let bias = values.by_ref().take(w[1]).collect();
            Dense::from_parts(w[0], w[1], weights, bias)
        })
        .collect::<Result<_>>()?;
    let head = ClassifierHead::from_layer(layers.pop().expect("at least two layers"));
    Network::from_parts(EmbeddingModel::from_layers(layers)?, head)
}
