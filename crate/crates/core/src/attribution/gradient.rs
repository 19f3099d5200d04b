use rand_distr::{Distribution, Normal};

use super::SmoothParams;
use crate::error::{Error, Result};
use crate::nn::{Network, ReluRule, ScoreTarget};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmoothVariant {
    Mean,
    Square,
    Variance,
}

/// Signed d score[class] / d x.
pub fn gradient(net: &Network, x: &Tensor, class: usize, target: ScoreTarget) -> Result<Tensor> {
    let trace = net.forward(x)?;
    net.backward(&trace, class, target, ReluRule::Gradient)
}

/// `|d score / d x|`.
pub fn grad(net: &Network, x: &Tensor, class: usize, target: ScoreTarget) -> Result<Tensor> {
    Ok(gradient(net, x, class, target)?.map(f64::abs))
}

/// Gradient with guided-backprop or deconvnet ReLU rules.
pub fn modified_backprop(
    net: &Network,
    x: &Tensor,
    class: usize,
    target: ScoreTarget,
    rule: ReluRule,
) -> Result<Tensor> {
    let trace = net.forward(x)?;
    net.backward(&trace, class, target, rule)
}

/// `x * |grad|`, or `x * grad` when `signed`.
pub fn input_times_grad(net: &Network, x: &Tensor, class: usize, target: ScoreTarget, signed: bool) -> Result<Tensor> {
    let g = gradient(net, x, class, target)?;
    if signed {
        x.zip_map(&g, |a, b| a * b)
    } else {
        x.zip_map(&g, |a, b| a * b.abs())
    }
}

/// Gradients at `n` Gaussian perturbations of `x`, reduced per `variant`.
/// Zero noise returns the plain gradient (and zero variance) exactly.
pub fn smoothgrad(
    net: &Network,
    x: &Tensor,
    class: usize,
    target: ScoreTarget,
    variant: SmoothVariant,
    params: &SmoothParams,
    seed: u64,
) -> Result<Tensor> {
    if params.samples == 0 {
        return Err(Error::config("smoothgrad needs at least one sample"));
    }
    let sigma = params.sigma_fraction * (x.max() - x.min());
    let n = params.samples;
    let mut var = Tensor::zeros(x.shape());
    let mean = if sigma == 0.0 {
        gradient(net, x, class, target)?
    } else {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::config(format!("noise: {e}")))?;
        let mut r = rng::stream(&[seed, rng::tag("smoothgrad-noise")]);
        let mut grads = Vec::with_capacity(n);
        for _ in 0..n {
            let mut noisy = x.clone();
            for v in noisy.data_mut() {
                *v += noise.sample(&mut r);
            }
            grads.push(gradient(net, &noisy, class, target)?);
        }
        let mut acc = vec![0.0; x.len()];
        for g in &grads {
            for (a, v) in acc.iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= n as f64;
        }
        if variant == SmoothVariant::Variance {
            let d = var.data_mut();
            for g in &grads {
                for ((s, v), m) in d.iter_mut().zip(g.data()).zip(&acc) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in d.iter_mut() {
                *s /= n as f64;
            }
        }
        Tensor::new(x.shape().to_vec(), acc)?
    };
    Ok(match variant {
        SmoothVariant::Mean => mean,
        SmoothVariant::Square => mean.map(|v| v * v),
        SmoothVariant::Variance => var,
    })
}

/// `(x - b) * mean of gradients at the midpoints b + (k + 1/2)/steps (x - b)`.
pub fn integrated_gradients(
    net: &Network,
    x: &Tensor,
    class: usize,
    target: ScoreTarget,
    baseline: &Tensor,
    steps: usize,
) -> Result<Tensor> {
    x.check_same_shape(baseline)?;
    if steps == 0 {
        return Err(Error::config("integrated gradients needs at least one step"));
    }
    let diff = x.zip_map(baseline, |a, b| a - b)?;
    let mut acc = vec![0.0; x.len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        let point = baseline.zip_map(&diff, |b, d| b + alpha * d)?;
        let g = gradient(net, &point, class, target)?;
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v;
        }
    }
    let values = acc
        .iter()
        .zip(diff.data())
        .map(|(a, d)| d * (a / steps as f64))
        .collect();
    Tensor::new(x.shape().to_vec(), values)
}

/// Mean of integrated-gradient maps over a set of baselines.
pub fn expected_gradients(
    net: &Network,
    x: &Tensor,
    class: usize,
    target: ScoreTarget,
    baselines: &[Tensor],
    steps: usize,
) -> Result<Tensor> {
    let Some((first, rest)) = baselines.split_first() else {
        return Err(Error::config("expected gradients needs a non-empty baseline set"));
    };
    let mut acc = integrated_gradients(net, x, class, target, first, steps)?.into_data();
    for b in rest {
        let m = integrated_gradients(net, x, class, target, b, steps)?;
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    if !rest.is_empty() {
        let k = baselines.len() as f64;
        for a in acc.iter_mut() {
            *a /= k;
        }
    }
    Tensor::new(x.shape().to_vec(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, LayerSpec};

    fn linear(w: Vec<f64>) -> Network {
        let n = w.len();
        let d = Dense {
            inputs: n,
            outputs: 1,
            weights: w,
            bias: vec![0.25],
        };
        Network::from_layers(vec![n], 1, vec![Layer::Dense(d)], Default::default(), 0).unwrap()
    }

    fn small_relu_net() -> Network {
        let specs = [
            LayerSpec::Dense { outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: 3 },
            LayerSpec::SoftmaxOutput,
        ];
        Network::build(&[4], 3, &specs, 17).unwrap()
    }

    #[test]
    fn grad_of_linear_model_is_abs_weights() {
        let net = linear(vec![1.0, -2.0]);
        let x = Tensor::from_vec(vec![0.3, 0.7]);
        assert_eq!(grad(&net, &x, 0, ScoreTarget::Logit).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(
            input_times_grad(&net, &x, 0, ScoreTarget::Logit, false).unwrap().data(),
            &[0.3, 1.4]
        );
        let zero = Tensor::zeros(&[2]);
        assert!(input_times_grad(&net, &zero, 0, ScoreTarget::Logit, false)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn smoothgrad_degenerate_cases() {
        let net = small_relu_net();
        let x = Tensor::from_vec(vec![0.2, -0.4, 0.9, 0.1]);
        let t = ScoreTarget::Logit;
        let zero = SmoothParams {
            samples: 7,
            sigma_fraction: 0.0,
        };
        let g = gradient(&net, &x, 1, t).unwrap();
        assert_eq!(smoothgrad(&net, &x, 1, t, SmoothVariant::Mean, &zero, 3).unwrap(), g);
        let p = SmoothParams {
            samples: 9,
            sigma_fraction: 0.3,
        };
        let mean = smoothgrad(&net, &x, 1, t, SmoothVariant::Mean, &p, 3).unwrap();
        let sq = smoothgrad(&net, &x, 1, t, SmoothVariant::Square, &p, 3).unwrap();
        assert_eq!(sq, mean.map(|v| v * v));
        let one = SmoothParams {
            samples: 1,
            sigma_fraction: 0.3,
        };
        let var = smoothgrad(&net, &x, 1, t, SmoothVariant::Variance, &one, 3).unwrap();
        assert!(var.data().iter().all(|&v| v == 0.0));
        let zero_n = SmoothParams {
            samples: 0,
            sigma_fraction: 0.3,
        };
        assert!(smoothgrad(&net, &x, 1, t, SmoothVariant::Mean, &zero_n, 3).is_err());
    }

    #[test]
    fn integrated_gradients_on_linear_model() {
        let net = linear(vec![1.5, -0.5, 2.0]);
        let x = Tensor::from_vec(vec![1.0, 2.0, -1.0]);
        let b = Tensor::from_vec(vec![0.5, 0.0, 0.0]);
        for steps in [1, 3, 50] {
            let m = integrated_gradients(&net, &x, 0, ScoreTarget::Logit, &b, steps).unwrap();
            let want = [0.75, -1.0, -2.0];
            for (a, w) in m.data().iter().zip(want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
        let same = integrated_gradients(&net, &x, 0, ScoreTarget::Logit, &x, 5).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));
        assert!(integrated_gradients(&net, &x, 0, ScoreTarget::Logit, &Tensor::zeros(&[2]), 5).is_err());
    }

    #[test]
    fn expected_gradients_reduces_to_integrated_gradients() {
        let net = small_relu_net();
        let x = Tensor::from_vec(vec![0.2, -0.4, 0.9, 0.1]);
        let b = Tensor::from_vec(vec![0.0, 0.1, 0.0, 0.3]);
        let t = ScoreTarget::Logit;
        let ig = integrated_gradients(&net, &x, 2, t, &b, 16).unwrap();
        assert_eq!(
            expected_gradients(&net, &x, 2, t, std::slice::from_ref(&b), 16).unwrap(),
            ig
        );
        let own = expected_gradients(&net, &x, 2, t, std::slice::from_ref(&x), 16).unwrap();
        assert!(own.data().iter().all(|&v| v == 0.0));
        assert!(expected_gradients(&net, &x, 2, t, &[], 16).is_err());
    }

    #[test]
    fn expected_gradients_averages_linear_maps() {
        let net = linear(vec![2.0, -1.0]);
        let x = Tensor::from_vec(vec![1.0, 1.0]);
        let b1 = Tensor::from_vec(vec![0.0, 0.0]);
        let b2 = Tensor::from_vec(vec![1.0, -1.0]);
        let m = expected_gradients(&net, &x, 0, ScoreTarget::Logit, &[b1, b2], 4).unwrap();
        // IG maps [2, -1] and [0, -2]
        assert!((m.data()[0] - 1.0).abs() < 1e-12);
        assert!((m.data()[1] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn modified_rules_match_gradient_without_relu() {
        let specs = [LayerSpec::Dense { outputs: 3 }, LayerSpec::Dense { outputs: 2 }];
        let net = Network::build(&[4], 2, &specs, 5).unwrap();
        let x = Tensor::from_vec(vec![0.5, -1.0, 0.25, 2.0]);
        let g = gradient(&net, &x, 1, ScoreTarget::Logit).unwrap();
        for rule in [ReluRule::Guided, ReluRule::Deconvnet] {
            assert_eq!(modified_backprop(&net, &x, 1, ScoreTarget::Logit, rule).unwrap(), g);
        }
    }
}
