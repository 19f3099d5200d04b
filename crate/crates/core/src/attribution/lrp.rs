use crate::error::{Error, Result};
use crate::nn::{Layer, Network, ScoreTarget};
use crate::tensor::Tensor;

/// Relevance propagation rule set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrpRule {
    Z,
    Epsilon(f64),
    /// `(alpha, beta)`; bias terms are ignored.
    AlphaBeta(f64, f64),
    /// Flat at the first parameterized layer, alpha=1/beta=0 at other convs,
    /// epsilon at dense layers.
    CompositeFlat(f64),
}

#[derive(Clone, Copy, Debug)]
enum UnitRule {
    Eps(f64),
    AlphaBeta(f64, f64),
    Flat,
}

/// Redistributes the relevance `r` of one linear unit onto its inputs.
/// `inputs[k]` is the flat input offset of slot `k` (`usize::MAX` for
/// padding), `x[k]` its activation and `w[k]` its weight.
#[allow(clippy::too_many_arguments)]
fn unit(
    rule: UnitRule,
    inputs: &[usize],
    x: &[f64],
    w: &[f64],
    bias: f64,
    r: f64,
    out: &mut [f64],
    layer: usize,
) -> Result<()> {
    if r == 0.0 {
        return Ok(());
    }
    match rule {
        UnitRule::Eps(eps) => {
            let z = bias + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            let denom = z + eps * if z >= 0.0 { 1.0 } else { -1.0 };
            if denom == 0.0 {
                return Err(Error::VanishingDenominator { layer });
            }
            let s = r / denom;
            for ((&i, &a), &b) in inputs.iter().zip(x).zip(w) {
                if i != usize::MAX {
                    out[i] += a * b * s;
                }
            }
        }
        UnitRule::AlphaBeta(alpha, beta) => {
            let (mut zp, mut zn) = (0.0, 0.0);
            for (a, b) in x.iter().zip(w) {
                let c = a * b;
                if c > 0.0 {
                    zp += c;
                } else {
                    zn += c;
                }
            }
            for ((&i, &a), &b) in inputs.iter().zip(x).zip(w) {
                let c = a * b;
                if i == usize::MAX {
                    continue;
                }
                if c > 0.0 {
                    out[i] += alpha * c / zp * r;
                } else if c < 0.0 && beta != 0.0 {
                    out[i] -= beta * c / zn * r;
                }
            }
        }
        UnitRule::Flat => {
            let count = inputs.iter().filter(|&&i| i != usize::MAX).count();
            if count == 0 {
                return Err(Error::VanishingDenominator { layer });
            }
            let share = r / count as f64;
            for &i in inputs {
                if i != usize::MAX {
                    out[i] += share;
                }
            }
        }
    }
    Ok(())
}

/// Layer-wise relevance propagation from the target logit, initialized to
/// the logit value. ReLU and flatten layers pass relevance through;
/// max-pooling routes it to the winning input.
pub fn lrp(net: &Network, x: &Tensor, class: usize, target: ScoreTarget, rule: LrpRule) -> Result<Tensor> {
    net.check_class(class)?;
    let layers = net.layers();
    if target == ScoreTarget::Probability {
        let i = layers.len().saturating_sub(1);
        return Err(Error::UnsupportedLayer {
            index: i,
            kind: layers.get(i).map_or("none", Layer::kind),
            context: "relevance propagation from probabilities".into(),
        });
    }
    let trace = net.forward(x)?;
    let end = trace.outputs().len() - usize::from(layers.last().is_some_and(Layer::is_output));
    let first_param = net.parameterized_indices().first().copied();
    let logits = trace.logits();
    let mut rel = Tensor::zeros(logits.shape());
    rel.data_mut()[class] = logits.data()[class];

    for i in (0..end).rev() {
        let input = trace.layer_input(i);
        let layer = &layers[i];
        let unit_rule = match (rule, layer) {
            (LrpRule::Z, _) => UnitRule::Eps(0.0),
            (LrpRule::Epsilon(e), _) => UnitRule::Eps(e),
            (LrpRule::AlphaBeta(a, b), _) => UnitRule::AlphaBeta(a, b),
            (LrpRule::CompositeFlat(_), _) if Some(i) == first_param => UnitRule::Flat,
            (LrpRule::CompositeFlat(_), Layer::Conv2d(_)) => UnitRule::AlphaBeta(1.0, 0.0),
            (LrpRule::CompositeFlat(e), _) => UnitRule::Eps(e),
        };
        rel = match layer {
            Layer::Relu | Layer::Flatten => rel.reshape(input.shape().to_vec())?,
            Layer::MaxPool2d(p) => {
                let (_, w, ch) = input.hwc();
                let (oh, ow, _) = trace.layer_output(i).hwc();
                let mut out = vec![0.0; input.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for c in 0..ch {
                            out[p.argmax(input.data(), w, ch, oy, ox, c)] += rel.data()[(oy * ow + ox) * ch + c];
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), out)?
            }
            Layer::Dense(d) => {
                let idx: Vec<usize> = (0..d.inputs).collect();
                let mut out = vec![0.0; d.inputs];
                for j in 0..d.outputs {
                    unit(
                        unit_rule,
                        &idx,
                        input.data(),
                        d.row(j),
                        d.bias[j],
                        rel.data()[j],
                        &mut out,
                        i,
                    )?;
                }
                Tensor::new(input.shape().to_vec(), out)?
            }
            Layer::Conv2d(c) => {
                let (h, w, _) = input.hwc();
                let (oh, ow, oc_n) = trace.layer_output(i).hwc();
                let n = c.patch_len();
                let mut patch = vec![0.0; n];
                let mut valid = vec![0usize; n];
                let mut out = vec![0.0; input.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = (oy * ow + ox) * oc_n;
                        let rs = &rel.data()[base..base + oc_n];
                        if rs.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        c.gather(input.data(), h, w, oy, ox, &mut patch, &mut valid);
                        for (oc, &r) in rs.iter().enumerate() {
                            unit(unit_rule, &valid, &patch, c.kernel_row(oc), c.bias[oc], r, &mut out, i)?;
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), out)?
            }
            Layer::SigmoidOutput | Layer::SoftmaxOutput => {
                return Err(Error::UnsupportedLayer {
                    index: i,
                    kind: layer.kind(),
                    context: "relevance propagation (output layer before the logits)".into(),
                })
            }
        };
    }
    if !rel.is_finite() {
        return Err(Error::NonFinite("relevance propagation".into()));
    }
    Ok(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, LayerSpec};

    fn linear(w: Vec<f64>, b: f64) -> Network {
        let n = w.len();
        let d = Dense {
            inputs: n,
            outputs: 1,
            weights: w,
            bias: vec![b],
        };
        Network::from_layers(vec![n], 1, vec![Layer::Dense(d)], Default::default(), 0).unwrap()
    }

    #[test]
    fn z_rule_on_linear_model_is_input_times_weight() {
        let net = linear(vec![1.0, -2.0, 0.5], 0.0);
        let x = Tensor::from_vec(vec![3.0, 1.0, 2.0]);
        let r = lrp(&net, &x, 0, ScoreTarget::Logit, LrpRule::Z).unwrap();
        assert_eq!(r.data(), &[3.0, -2.0, 1.0]);
    }

    #[test]
    fn bias_absorbs_relevance_under_z_rule() {
        let net = linear(vec![1.0, -1.0], 1.0);
        // z = 1 - 1 + 1, so the inputs sum to zero relevance
        let x = Tensor::from_vec(vec![1.0, 1.0]);
        let r = lrp(&net, &x, 0, ScoreTarget::Logit, LrpRule::Z).unwrap();
        assert_eq!(r.data(), &[1.0, -1.0]);
    }

    #[test]
    fn alpha_beta_splits_positive_and_negative_parts() {
        let net = linear(vec![1.0, -1.0], 0.0);
        let x = Tensor::from_vec(vec![3.0, 1.0]);
        // logit 2; alpha=2, beta=1: [2 * 2, -1 * 2]
        let r = lrp(&net, &x, 0, ScoreTarget::Logit, LrpRule::AlphaBeta(2.0, 1.0)).unwrap();
        assert_eq!(r.data(), &[4.0, -2.0]);
    }

    #[test]
    fn flat_first_layer_is_uniform() {
        let net = linear(vec![5.0, -1.0, 2.0, 0.0], 0.0);
        let x = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let r = lrp(&net, &x, 0, ScoreTarget::Logit, LrpRule::CompositeFlat(1e-6)).unwrap();
        assert_eq!(r.data(), &[1.5; 4]);
    }

    #[test]
    fn probability_target_rejected() {
        let specs = [LayerSpec::Dense { outputs: 2 }, LayerSpec::SoftmaxOutput];
        let net = Network::build(&[3], 2, &specs, 1).unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            lrp(&net, &x, 0, ScoreTarget::Probability, LrpRule::Z),
            Err(Error::UnsupportedLayer { .. })
        ));
        assert!(lrp(&net, &x, 1, ScoreTarget::Logit, LrpRule::Z).is_ok());
    }

    #[test]
    fn vanishing_denominator_reported() {
        let mut out = [0.0; 2];
        let err = unit(
            UnitRule::Eps(0.0),
            &[0, 1],
            &[1.0, 1.0],
            &[1.0, -1.0],
            0.0,
            0.5,
            &mut out,
            3,
        );
        assert!(matches!(err, Err(Error::VanishingDenominator { layer: 3 })));
        // zero relevance through a zero denominator is fine
        unit(
            UnitRule::Eps(0.0),
            &[0, 1],
            &[1.0, 1.0],
            &[1.0, -1.0],
            0.0,
            0.0,
            &mut out,
            3,
        )
        .unwrap();
        // epsilon stabilizes sign(0) = +1
        unit(
            UnitRule::Eps(0.5),
            &[0, 1],
            &[1.0, 1.0],
            &[1.0, -1.0],
            0.0,
            0.5,
            &mut out,
            3,
        )
        .unwrap();
        assert_eq!(out, [1.0, -1.0]);
    }
}
