//! Named architecture presets.
//!
//! `bvd-desk` is the desk-scale surrogate for the five-conv / three-dense
//! classifier used in the spurious and mislabeled experiments: 3x3 convs with
//! padding 1, channel widths 8-8-16-16-16, a 2x2 max-pool after conv 2, 4 and
//! 5, then dense layers of width 64 and 32. `mini-cnn` is a cheaper two-conv
//! variant; `mlp` is a single hidden layer.

use serde::{Deserialize, Serialize};

use super::network::LayerSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Softmax,
    Sigmoid,
}

pub const PRESETS: &[&str] = &["bvd-desk", "mini-cnn", "mlp"];

fn conv(out_channels: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::Conv2d {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::Relu,
    ]
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool2d { window: 2, stride: 2 }
}

pub fn preset(id: &str, classes: usize, output: OutputKind) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    match id {
        "bvd-desk" => {
            specs.extend(conv(8));
            specs.extend(conv(8));
            specs.push(pool());
            specs.extend(conv(16));
            specs.extend(conv(16));
            specs.push(pool());
            specs.extend(conv(16));
            specs.push(pool());
            specs.push(LayerSpec::Flatten);
            specs.push(LayerSpec::Dense { outputs: 64 });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dense { outputs: 32 });
            specs.push(LayerSpec::Relu);
        }
        "mini-cnn" => {
            specs.extend(conv(8));
            specs.push(pool());
            specs.extend(conv(16));
            specs.push(pool());
            specs.push(LayerSpec::Flatten);
            specs.push(LayerSpec::Dense { outputs: 32 });
            specs.push(LayerSpec::Relu);
        }
        "mlp" => {
            specs.push(LayerSpec::Flatten);
            specs.push(LayerSpec::Dense { outputs: 32 });
            specs.push(LayerSpec::Relu);
        }
        other => {
            return Err(Error::config(format!(
                "unknown architecture `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    }
    specs.push(LayerSpec::Dense { outputs: classes });
    specs.push(match output {
        OutputKind::Softmax => LayerSpec::SoftmaxOutput,
        OutputKind::Sigmoid => LayerSpec::SigmoidOutput,
    });
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;

    #[test]
    fn bvd_desk_has_five_convs_and_three_dense() {
        let specs = preset("bvd-desk", 2, OutputKind::Sigmoid).unwrap();
        let convs = specs.iter().filter(|s| matches!(s, LayerSpec::Conv2d { .. })).count();
        let dense = specs.iter().filter(|s| matches!(s, LayerSpec::Dense { .. })).count();
        assert_eq!((convs, dense), (5, 3));
        let net = Network::build(&[16, 16, 3], 2, &specs, 0).unwrap();
        assert_eq!(net.parameterized_indices().len(), 8);
    }

    #[test]
    fn presets_build_for_desk_images() {
        for id in PRESETS {
            for size in [16, 24] {
                let specs = preset(id, 4, OutputKind::Softmax).unwrap();
                Network::build(&[size, size, 3], 4, &specs, 1).unwrap();
            }
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(preset("vgg16", 2, OutputKind::Softmax).is_err());
    }
}
