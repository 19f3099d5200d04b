//! Mini-batch training with SGD or Adam.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layer::{sigmoid, softmax, ReluRule};
use super::network::Network;
use crate::data::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Softmax cross-entropy on the logits.
    #[default]
    CrossEntropy,
    /// Per-class sigmoid cross-entropy against one-hot targets.
    BinaryCrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Network layer indices whose parameters stay fixed.
    pub frozen: BTreeSet<usize>,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 10,
            batch_size: 32,
            optimizer: Optimizer::adam(),
            seed: 0,
            frozen: BTreeSet::new(),
            loss: Loss::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &Network) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        for &i in &self.frozen {
            let layer = net.layers().get(i).ok_or(Error::LayerOutOfRange {
                index: i,
                layers: net.layers().len(),
            })?;
            if !layer.is_parameterized() {
                return Err(Error::NotParameterized {
                    index: i,
                    kind: layer.kind(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Accuracy keyed by split name (`train`, `val`, `test`).
    pub accuracy: BTreeMap<String, f64>,
    /// Provenance of the data the model was fit on.
    pub provenance: Provenance,
}

/// Loss and d loss / d logits for one example.
fn loss_and_grad(loss: Loss, logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    match loss {
        Loss::CrossEntropy => {
            let p = softmax(logits);
            let l = -(p[label].max(1e-300)).ln();
            let mut g = p;
            g[label] -= 1.0;
            (l, g)
        }
        Loss::BinaryCrossEntropy => {
            let mut l = 0.0;
            let g = logits
                .iter()
                .enumerate()
                .map(|(k, &z)| {
                    let y = if k == label { 1.0 } else { 0.0 };
                    // log(1 + e^z) - y z, written to avoid overflow
                    l += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
                    sigmoid(z) - y
                })
                .collect();
            (l, g)
        }
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

pub fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for ex in &data.examples {
        if net.predict(&ex.image)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.examples.len() as f64)
}

/// Fits `net` on `data`. `held_out` sets are scored after training and
/// reported under their split names.
pub fn train(
    net: &mut Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    held_out: &[&LabeledDataset],
) -> Result<TrainReport> {
    if data.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate(net)?;
    for ex in &data.examples {
        if ex.label >= net.classes() {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes: net.classes(),
            });
        }
    }

    let trainable: Vec<usize> = net
        .parameterized_indices()
        .into_iter()
        .filter(|i| !cfg.frozen.contains(i))
        .collect();
    let sizes: Vec<usize> = net.layers().iter().map(|l| l.param_count()).collect();
    let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut adam = AdamState {
        m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        step: 0,
    };
    let logit_end = net.logit_layer_end();
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(&[cfg.seed, epoch as u64, rng::tag("epoch-order")]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.fill(0.0);
            }
            for &idx in batch {
                let ex = &data.examples[idx];
                let trace = net.forward(&ex.image)?;
                let (l, g) = loss_and_grad(cfg.loss, trace.logits().data(), ex.label);
                total += l;
                let mut grad = Tensor::from_vec(g);
                for i in (0..logit_end).rev() {
                    let layer = &net.layers()[i];
                    let pg = if layer.is_parameterized() && !cfg.frozen.contains(&i) {
                        Some(grads[i].as_mut_slice())
                    } else {
                        None
                    };
                    if i == 0 {
                        if let Some(pg) = pg {
                            layer.backward(
                                trace.layer_input(0),
                                trace.layer_output(0),
                                &grad,
                                ReluRule::Gradient,
                                Some(pg),
                            );
                        }
                        break;
                    }
                    grad = layer.backward(
                        trace.layer_input(i),
                        trace.layer_output(i),
                        &grad,
                        ReluRule::Gradient,
                        pg,
                    );
                }
            }
            let scale = 1.0 / batch.len() as f64;
            adam.step += 1;
            let layers = net.layers_mut();
            for &i in &trainable {
                let (w, b) = layers[i].params_mut().expect("parameterized");
                let nw = w.len();
                let g = &grads[i];
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        for (p, gv) in w.iter_mut().chain(b.iter_mut()).zip(g) {
                            *p -= cfg.learning_rate * gv * scale;
                        }
                    }
                    Optimizer::Adam { beta1, beta2, epsilon } => {
                        let bc1 = 1.0 - beta1.powi(adam.step);
                        let bc2 = 1.0 - beta2.powi(adam.step);
                        let m = &mut adam.m[i];
                        let v = &mut adam.v[i];
                        for (k, p) in w.iter_mut().chain(b.iter_mut()).enumerate() {
                            let gv = g[k] * scale;
                            m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                            v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                            let mh = m[k] / bc1;
                            let vh = v[k] / bc2;
                            *p -= cfg.learning_rate * mh / (vh.sqrt() + epsilon);
                        }
                        debug_assert_eq!(nw + b.len(), g.len());
                    }
                }
            }
        }
        let mean = total / data.examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_loss.push(mean);
    }

    let mut acc = BTreeMap::new();
    acc.insert(data.split.name().to_string(), accuracy(net, data)?);
    for ds in held_out {
        acc.insert(ds.split.name().to_string(), accuracy(net, ds)?);
    }
    Ok(TrainReport {
        epoch_loss,
        accuracy: acc,
        provenance: data.provenance.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let z = [0.2, -0.7, 1.1];
        let (_, g) = loss_and_grad(Loss::CrossEntropy, &z, 1);
        for k in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            let fd = (loss_and_grad(Loss::CrossEntropy, &zp, 1).0 - loss_and_grad(Loss::CrossEntropy, &zm, 1).0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let z = [3.0, -2.5];
        let (_, g) = loss_and_grad(Loss::BinaryCrossEntropy, &z, 0);
        for k in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            let fd = (loss_and_grad(Loss::BinaryCrossEntropy, &zp, 0).0
                - loss_and_grad(Loss::BinaryCrossEntropy, &zm, 0).0)
                / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}
