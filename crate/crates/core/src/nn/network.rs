use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Conv2d, Dense, Layer, MaxPool2d, ReluRule};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Which output an attribution or gradient is taken with respect to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    /// Pre-activation class score (input of the output layer).
    #[default]
    Logit,
    /// Output of the sigmoid/softmax layer.
    Probability,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    GlorotUniform,
}

/// Declarative layer description used to build a [`Network`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        outputs: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    SigmoidOutput,
    SoftmaxOutput,
}

/// Sequential network. Weights are immutable through the public API except
/// via [`Network::layers_mut`], which invalidates outstanding traces.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    classes: usize,
    init: InitScheme,
    seed: u64,
    revision: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.input_shape == other.input_shape
            && self.classes == other.classes
            && self.init == other.init
            && self.seed == other.seed
    }
}

/// Per-layer activations of one forward pass.
///
/// `values[0]` is the input and `values[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    revision: u64,
    values: Vec<Tensor>,
    logit_index: usize,
}

impl ActivationTrace {
    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }

    /// One entry per layer, in layer order.
    pub fn outputs(&self) -> &[Tensor] {
        &self.values[1..]
    }

    pub fn layer_input(&self, layer: usize) -> &Tensor {
        &self.values[layer]
    }

    pub fn layer_output(&self, layer: usize) -> &Tensor {
        &self.values[layer + 1]
    }

    /// Final class-score vector (probabilities when the net ends in an
    /// output layer).
    pub fn scores(&self) -> &Tensor {
        self.values.last().expect("trace holds the input")
    }

    pub fn logits(&self) -> &Tensor {
        &self.values[self.logit_index]
    }

    pub fn target(&self, target: ScoreTarget) -> &Tensor {
        match target {
            ScoreTarget::Logit => self.logits(),
            ScoreTarget::Probability => self.scores(),
        }
    }

    pub fn predicted(&self) -> usize {
        self.logits().argmax()
    }
}

pub(crate) fn init_layer(layer: &mut Layer, scheme: InitScheme, seed: u64, index: usize) {
    let Some((fan_in, fan_out)) = layer.fans() else {
        return;
    };
    let InitScheme::GlorotUniform = scheme;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut r = rng::stream(&[seed, index as u64, rng::tag("glorot-uniform")]);
    let (w, b) = layer.params_mut().expect("parameterized");
    for v in w.iter_mut() {
        *v = r.random_range(-limit..limit);
    }
    b.fill(0.0);
}

fn shape_chain(layers: &[Layer], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input_shape.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let cur = shapes.last().expect("non-empty");
        let next = layer.output_shape(cur).ok_or_else(|| Error::ShapeMismatch {
            layer: i,
            expected: expected_input(layer, cur),
            found: cur.clone(),
        })?;
        shapes.push(next);
    }
    Ok(shapes)
}

/// Best-effort description of what a layer wanted, for error messages.
fn expected_input(layer: &Layer, found: &[usize]) -> Vec<usize> {
    match layer {
        Layer::Dense(d) => vec![d.inputs],
        Layer::Conv2d(c) => match found {
            [h, w, _] => vec![*h, *w, c.in_channels],
            _ => vec![0, 0, c.in_channels],
        },
        _ => found.to_vec(),
    }
}

impl Network {
    pub fn build(input_shape: &[usize], classes: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::config("network needs at least one class"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense { outputs } => match shape.as_slice() {
                    [n] => Layer::Dense(Dense::zeros(*n, outputs)),
                    _ => {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            expected: vec![shape.iter().product()],
                            found: shape,
                        })
                    }
                },
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => match shape.as_slice() {
                    [_, _, c] => Layer::Conv2d(Conv2d::zeros(*c, out_channels, kernel, stride, padding)),
                    _ => {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            expected: vec![0, 0, 0],
                            found: shape,
                        })
                    }
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { window, stride } => Layer::MaxPool2d(MaxPool2d { window, stride }),
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::SigmoidOutput => Layer::SigmoidOutput,
                LayerSpec::SoftmaxOutput => Layer::SoftmaxOutput,
            };
            shape = layer.output_shape(&shape).ok_or_else(|| Error::ShapeMismatch {
                layer: i,
                expected: expected_input(&layer, &shape),
                found: shape.clone(),
            })?;
            layers.push(layer);
        }
        let mut net = Self::from_layers(input_shape.to_vec(), classes, layers, InitScheme::GlorotUniform, seed)?;
        net.initialize();
        Ok(net)
    }

    /// Assembles a network from explicit layers, validating composition.
    pub fn from_layers(
        input_shape: Vec<usize>,
        classes: usize,
        layers: Vec<Layer>,
        init: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        let shapes = shape_chain(&layers, &input_shape)?;
        let out = shapes.last().expect("non-empty");
        if out != &[classes] {
            return Err(Error::ShapeMismatch {
                layer: layers.len().saturating_sub(1),
                expected: vec![classes],
                found: out.clone(),
            });
        }
        if let Some(pos) = layers.iter().position(Layer::is_output) {
            if pos + 1 != layers.len() {
                return Err(Error::UnsupportedLayer {
                    index: pos,
                    kind: layers[pos].kind(),
                    context: "output layers must come last".into(),
                });
            }
        }
        Ok(Self {
            layers,
            input_shape,
            classes,
            init,
            seed,
            revision: fresh_revision(),
        })
    }

    fn initialize(&mut self) {
        let (init, seed) = (self.init, self.seed);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            init_layer(layer, init, seed, i);
        }
        self.revision = fresh_revision();
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Any trace taken before this call is
    /// rejected by the backward passes afterwards.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.revision = fresh_revision();
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameterized_indices(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_parameterized())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Index one past the last layer that produces logits.
    pub(crate) fn logit_layer_end(&self) -> usize {
        match self.layers.last() {
            Some(l) if l.is_output() => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Little-endian bytes of every parameter in layer order.
    pub fn parameter_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 8);
        for layer in &self.layers {
            if let Some((w, b)) = layer.params() {
                for v in w.iter().chain(b) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Result<ActivationTrace> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                found: x.shape().to_vec(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = values.last().expect("non-empty");
            if layer.output_shape(cur.shape()).is_none() {
                return Err(Error::ShapeMismatch {
                    layer: i,
                    expected: expected_input(layer, cur.shape()),
                    found: cur.shape().to_vec(),
                });
            }
            let next = layer.forward(cur);
            values.push(next);
        }
        let trace = ActivationTrace {
            revision: self.revision,
            values,
            logit_index: self.logit_layer_end(),
        };
        if !trace.scores().is_finite() || !trace.logits().is_finite() {
            return Err(Error::NonFinite("forward pass".into()));
        }
        Ok(trace)
    }

    pub fn score(&self, x: &Tensor, class: usize, target: ScoreTarget) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.forward(x)?.target(target).data()[class])
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.predicted())
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                classes: self.classes,
            });
        }
        Ok(())
    }

    pub fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.revision != self.revision || trace.values.len() != self.layers.len() + 1 {
            return Err(Error::StaleTrace);
        }
        Ok(())
    }

    /// d score[class] / d input with the ordinary chain rule, score = logit.
    pub fn backward_gradient(&self, trace: &ActivationTrace, class: usize) -> Result<Tensor> {
        self.backward(trace, class, ScoreTarget::Logit, ReluRule::Gradient)
    }

    /// Backward pass from one class score to the input, with a selectable
    /// ReLU rule. Non-ReLU layers always use their exact local Jacobian.
    pub fn backward(
        &self,
        trace: &ActivationTrace,
        class: usize,
        target: ScoreTarget,
        rule: ReluRule,
    ) -> Result<Tensor> {
        self.check_trace(trace)?;
        self.check_class(class)?;
        let end = match target {
            ScoreTarget::Logit => self.logit_layer_end(),
            ScoreTarget::Probability => self.layers.len(),
        };
        let mut grad = Tensor::zeros(trace.values[end].shape());
        grad.data_mut()[class] = 1.0;
        for i in (0..end).rev() {
            grad = self.layers[i].backward(&trace.values[i], &trace.values[i + 1], &grad, rule, None);
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("backward pass".into()));
        }
        Ok(grad)
    }

    /// Copy of this network with the listed layers re-drawn from the
    /// original init scheme. Layer `i` draws from a stream keyed by
    /// `(seed, i)`, so the result does not depend on the order or grouping
    /// of calls.
    pub fn reinit_layers(&self, indices: &BTreeSet<usize>, seed: u64) -> Result<Network> {
        for &i in indices {
            let layer = self.layers.get(i).ok_or(Error::LayerOutOfRange {
                index: i,
                layers: self.layers.len(),
            })?;
            if !layer.is_parameterized() {
                return Err(Error::NotParameterized {
                    index: i,
                    kind: layer.kind(),
                });
            }
        }
        let mut out = self.clone();
        for &i in indices {
            init_layer(&mut out.layers[i], self.init, seed, i);
        }
        if !indices.is_empty() {
            out.revision = fresh_revision();
        }
        Ok(out)
    }
}
