//! Declarative contamination injectors and the cascading-randomization and
//! out-of-domain pairing protocols.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionContext, AttributionMap, MethodSpec};
use crate::data::{compose_spurious, flip_labels, LabeledDataset, Source, SpuriousSpec};
use crate::error::{Error, Result};
use crate::nn::{Network, TrainConfig};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugCategory {
    #[serde(rename = "data")]
    Data,
    #[serde(rename = "model")]
    Model,
    #[serde(rename = "test-time")]
    TestTime,
}

/// Wrong preprocessing applied to test inputs only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestTransform {
    /// Multiply by 255, as if the `[0, 1]` scaling were skipped.
    Rescale255,
    /// Reverse the channel order (RGB read as BGR).
    ChannelSwap,
    /// Standardize with per-channel ImageNet statistics the model never saw.
    MeanStd,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

impl TestTransform {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            TestTransform::Rescale255 => x.map(|v| v * 255.0),
            TestTransform::ChannelSwap => {
                let c = *x.shape().last().unwrap_or(&1);
                let mut out = x.clone();
                for px in out.data_mut().chunks_exact_mut(c.max(1)) {
                    px.reverse();
                }
                out
            }
            TestTransform::MeanStd => {
                let c = *x.shape().last().unwrap_or(&1);
                let mut out = x.clone();
                for px in out.data_mut().chunks_exact_mut(c.max(1)) {
                    for (k, v) in px.iter_mut().enumerate() {
                        let (m, s) = (IMAGENET_MEAN[k % 3], IMAGENET_STD[k % 3]);
                        *v = (*v - m) / s;
                    }
                }
                out
            }
        }
    }
}

fn default_fraction_one() -> f64 {
    1.0
}

fn default_top() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BugKind {
    /// Class-mapped backgrounds on train and test data.
    Spurious {
        /// Texture id per class; identity when omitted.
        #[serde(default)]
        mapping: Option<Vec<u32>>,
        #[serde(default = "default_fraction_one")]
        fraction: f64,
    },
    /// Random wrong labels on a fraction of the training set.
    LabelFlip {
        fraction: f64,
    },
    /// Re-draw the top `top` parameterized layers, or the listed layer
    /// indices when `layers` is given.
    Reinit {
        #[serde(default = "default_top")]
        top: usize,
        #[serde(default)]
        layers: Option<Vec<usize>>,
    },
    /// Keep the listed layer indices fixed during training.
    Frozen {
        layers: Vec<usize>,
    },
    /// The model is trained on `train_domain`; at test time it receives the
    /// pipeline's test inputs, or `test_inputs` when given.
    Ood {
        train_domain: Source,
        #[serde(default)]
        test_inputs: Option<Source>,
    },
    PreprocessMismatch {
        transform: TestTransform,
    },
}

impl BugKind {
    pub fn name(&self) -> &'static str {
        match self {
            BugKind::Spurious { .. } => "spurious",
            BugKind::LabelFlip { .. } => "label_flip",
            BugKind::Reinit { .. } => "reinit",
            BugKind::Frozen { .. } => "frozen",
            BugKind::Ood { .. } => "ood",
            BugKind::PreprocessMismatch { .. } => "preprocess_mismatch",
        }
    }

    pub fn category(&self) -> BugCategory {
        match self {
            BugKind::Spurious { .. } | BugKind::LabelFlip { .. } => BugCategory::Data,
            BugKind::Reinit { .. } | BugKind::Frozen { .. } => BugCategory::Model,
            BugKind::Ood { .. } | BugKind::PreprocessMismatch { .. } => BugCategory::TestTime,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BugSpec {
    /// Report label; defaults to the kind name.
    #[serde(default)]
    pub name: Option<String>,
    pub category: BugCategory,
    #[serde(flatten)]
    pub kind: BugKind,
    #[serde(default)]
    pub seed: u64,
}

impl BugSpec {
    pub fn new(kind: BugKind, seed: u64) -> Self {
        Self {
            name: None,
            category: kind.category(),
            kind,
            seed,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.category != self.kind.category() {
            return Err(Error::CategoryMismatch {
                kind: self.kind.name().to_string(),
                category: format!("{:?}", self.category),
            });
        }
        match &self.kind {
            BugKind::Spurious { fraction, .. } | BugKind::LabelFlip { fraction } if !(0.0..=1.0).contains(fraction) => {
                Err(Error::config(format!(
                    "{}: fraction must be in [0, 1], got {fraction}",
                    self.kind.name()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Components of a learning/prediction pipeline. Each bug mutates only the
/// components its category names.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub train_data: Option<LabeledDataset>,
    pub test_data: Option<LabeledDataset>,
    pub network: Option<Network>,
    pub train_config: TrainConfig,
    /// Applied to test inputs, in order.
    pub test_transforms: Vec<TestTransform>,
    pub applied: Vec<BugSpec>,
}

impl Pipeline {
    pub fn new(
        train_data: Option<LabeledDataset>,
        test_data: Option<LabeledDataset>,
        network: Option<Network>,
        train_config: TrainConfig,
    ) -> Self {
        Self {
            train_data,
            test_data,
            network,
            train_config,
            test_transforms: Vec::new(),
            applied: Vec::new(),
        }
    }

    /// A test input as the model receives it.
    pub fn prepare_input(&self, x: &Tensor) -> Tensor {
        self.test_transforms.iter().fold(x.clone(), |acc, t| t.apply(&acc))
    }
}

fn missing(what: &str, bug: &BugSpec) -> Error {
    Error::MissingComponent(format!("{what} (needed by {} bug)", bug.kind.name()))
}

/// Indices of the top `k` parameterized layers.
pub fn top_parameterized(net: &Network, k: usize) -> Result<BTreeSet<usize>> {
    let idx = net.parameterized_indices();
    if k > idx.len() {
        return Err(Error::config(format!(
            "cannot re-initialize top {k} of {} parameterized layers",
            idx.len()
        )));
    }
    Ok(idx[idx.len() - k..].iter().copied().collect())
}

/// Replicates a single grey channel to `c` channels, or averages channels
/// down to one, so `x` matches `shape`.
pub fn adapt_channels(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if x.shape() == shape {
        return Ok(x.clone());
    }
    let incompatible = || Error::ShapesDiffer {
        left: x.shape().to_vec(),
        right: shape.to_vec(),
    };
    let (&[h, w, c], &[th, tw, tc]) = (x.shape(), shape) else {
        return Err(incompatible());
    };
    if (h, w) != (th, tw) {
        return Err(incompatible());
    }
    let data: Vec<f64> = match (c, tc) {
        (1, _) => x.data().iter().flat_map(|&v| std::iter::repeat_n(v, tc)).collect(),
        (_, 1) => x
            .data()
            .chunks_exact(c)
            .map(|p| p.iter().sum::<f64>() / c as f64)
            .collect(),
        _ => return Err(incompatible()),
    };
    Tensor::new(shape.to_vec(), data)
}

fn adapt_dataset(ds: LabeledDataset, shape: Option<&[usize]>) -> Result<LabeledDataset> {
    let Some(shape) = shape else {
        return Ok(ds);
    };
    let mut ds = ds;
    for ex in ds.examples.iter_mut() {
        ex.image = adapt_channels(&ex.image, shape)?;
        if let Some(b) = ex.backdrop.as_mut() {
            *b = adapt_channels(b, shape)?;
        }
    }
    Ok(ds)
}

/// Applies one bug to a pipeline and records it.
pub fn inject(spec: &BugSpec, pipeline: &Pipeline) -> Result<Pipeline> {
    spec.validate()?;
    let mut out = pipeline.clone();
    match &spec.kind {
        BugKind::Spurious { mapping, fraction } => {
            let train = pipeline
                .train_data
                .as_ref()
                .ok_or_else(|| missing("training data", spec))?;
            let mapping = mapping.clone().unwrap_or_else(|| (0..train.classes as u32).collect());
            let s = SpuriousSpec::new(mapping.clone(), *fraction, spec.seed);
            out.train_data = Some(compose_spurious(train, &s)?);
            if let Some(test) = &pipeline.test_data {
                let ts = SpuriousSpec::new(mapping, *fraction, rng::derive_seed(&[spec.seed, rng::tag("test")]));
                out.test_data = Some(compose_spurious(test, &ts)?);
            }
        }
        BugKind::LabelFlip { fraction } => {
            let train = pipeline
                .train_data
                .as_ref()
                .ok_or_else(|| missing("training data", spec))?;
            out.train_data = Some(flip_labels(train, *fraction, spec.seed)?);
        }
        BugKind::Reinit { top, layers } => {
            let net = pipeline.network.as_ref().ok_or_else(|| missing("network", spec))?;
            let set = match layers {
                Some(l) => l.iter().copied().collect(),
                None => top_parameterized(net, *top)?,
            };
            out.network = Some(net.reinit_layers(&set, spec.seed)?);
        }
        BugKind::Frozen { layers } => {
            let net = pipeline.network.as_ref().ok_or_else(|| missing("network", spec))?;
            out.train_config.frozen.extend(layers.iter().copied());
            out.train_config.validate(net)?;
        }
        BugKind::Ood { test_inputs, .. } => {
            let shape = pipeline.network.as_ref().map(|n| n.input_shape().to_vec());
            let test = match test_inputs {
                Some(src) => src.generate()?.with_split(crate::data::Split::Test),
                None => pipeline.test_data.clone().ok_or_else(|| missing("test data", spec))?,
            };
            out.test_data = Some(adapt_dataset(test, shape.as_deref())?);
        }
        BugKind::PreprocessMismatch { transform } => out.test_transforms.push(*transform),
    }
    out.applied.push(spec.clone());
    Ok(out)
}

/// Applies bugs in order.
pub fn inject_all(specs: &[BugSpec], pipeline: &Pipeline) -> Result<Pipeline> {
    specs.iter().try_fold(pipeline.clone(), |p, s| inject(s, &p))
}

#[derive(Clone, Debug)]
pub struct CascadeStage {
    /// Number of top parameterized layers re-drawn.
    pub depth: usize,
    pub reinitialized: BTreeSet<usize>,
    /// `maps[input][method]`.
    pub maps: Vec<Vec<AttributionMap>>,
}

/// Cumulatively re-initializes parameterized layers from the top and
/// recomputes every method's map at every stage. Stage 0 is the original
/// network. Each input keeps the class it is explained for at stage 0.
/// `max_depth` caps the number of stages after stage 0.
pub fn cascading_randomization(
    net: &Network,
    inputs: &[(Tensor, usize)],
    methods: &[MethodSpec],
    seed: u64,
    ctx: &AttributionContext,
    max_depth: Option<usize>,
) -> Result<Vec<CascadeStage>> {
    if methods.is_empty() {
        return Err(Error::config("cascading randomization needs at least one method"));
    }
    let layers = net.parameterized_indices().len();
    let last = max_depth.map_or(layers, |d| d.min(layers));
    let mut stages = Vec::with_capacity(last + 1);
    for depth in 0..=last {
        let set = top_parameterized(net, depth)?;
        let staged = net.reinit_layers(&set, seed)?;
        let maps = inputs
            .iter()
            .map(|(x, class)| {
                methods
                    .iter()
                    .map(|m| attribute(&staged, x, *class, m, ctx))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(CascadeStage {
            depth,
            reinitialized: set,
            maps,
        });
    }
    Ok(stages)
}

#[derive(Clone, Debug)]
pub struct OodRow {
    pub input: usize,
    pub method: String,
    pub in_domain: AttributionMap,
    /// One map per out-of-domain network, in the order given.
    pub out_domain: Vec<AttributionMap>,
}

/// For each input and method, the in-domain network's map next to each
/// out-of-domain network's map. Inputs are channel-adapted per network
/// and every network explains its own predicted class.
pub fn ood_pairing(
    in_domain: &Network,
    out_domain: &[&Network],
    inputs: &[Tensor],
    methods: &[MethodSpec],
    ctx: &AttributionContext,
) -> Result<Vec<OodRow>> {
    let explain = |net: &Network, x: &Tensor, m: &MethodSpec| -> Result<AttributionMap> {
        let xa = adapt_channels(x, net.input_shape())?;
        let class = net.predict(&xa)?;
        attribute(net, &xa, class, m, ctx)
    };
    let mut rows = Vec::with_capacity(inputs.len() * methods.len());
    for (i, x) in inputs.iter().enumerate() {
        for m in methods {
            rows.push(OodRow {
                input: i,
                method: m.id().to_string(),
                in_domain: explain(in_domain, x, m)?,
                out_domain: out_domain.iter().map(|n| explain(n, x, m)).collect::<Result<_>>()?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_shapes;
    use crate::nn::{preset, OutputKind};

    fn pipeline() -> Pipeline {
        let train = gen_shapes(1, 20, 2, 16).unwrap();
        let test = gen_shapes(2, 6, 2, 16).unwrap();
        let net = Network::build(&[16, 16, 3], 2, &preset("mini-cnn", 2, OutputKind::Softmax).unwrap(), 3).unwrap();
        Pipeline::new(Some(train), Some(test), Some(net), TrainConfig::default())
    }

    #[test]
    fn empty_bug_list_is_identity() {
        let p = pipeline();
        let q = inject_all(&[], &p).unwrap();
        assert_eq!(q.train_data, p.train_data);
        assert_eq!(q.network, p.network);
        assert!(q.applied.is_empty());
    }

    #[test]
    fn category_mismatch_rejected() {
        let mut spec = BugSpec::new(BugKind::LabelFlip { fraction: 0.1 }, 0);
        spec.category = BugCategory::Model;
        assert!(matches!(
            inject(&spec, &pipeline()),
            Err(Error::CategoryMismatch { .. })
        ));
    }

    #[test]
    fn bugs_touch_only_their_components() {
        let p = pipeline();
        let data = inject(&BugSpec::new(BugKind::LabelFlip { fraction: 0.2 }, 1), &p).unwrap();
        assert_eq!(
            data.network.as_ref().unwrap().parameter_bytes(),
            p.network.as_ref().unwrap().parameter_bytes()
        );
        assert_ne!(data.train_data, p.train_data);

        let model = inject(&BugSpec::new(BugKind::Reinit { top: 1, layers: None }, 1), &p).unwrap();
        assert_eq!(model.train_data, p.train_data);
        assert_eq!(model.test_data, p.test_data);
        assert_ne!(model.network, p.network);

        let tt = inject(
            &BugSpec::new(
                BugKind::PreprocessMismatch {
                    transform: TestTransform::Rescale255,
                },
                1,
            ),
            &p,
        )
        .unwrap();
        assert_eq!(tt.train_data, p.train_data);
        assert_eq!(tt.test_data, p.test_data);
        assert_eq!(tt.network, p.network);
        assert_eq!(tt.test_transforms, vec![TestTransform::Rescale255]);
    }

    #[test]
    fn missing_component_reported() {
        let mut p = pipeline();
        p.network = None;
        assert!(matches!(
            inject(&BugSpec::new(BugKind::Reinit { top: 1, layers: None }, 1), &p),
            Err(Error::MissingComponent(_))
        ));
    }

    #[test]
    fn transforms() {
        let x = Tensor::new(vec![1, 1, 3], vec![0.1, 0.5, 1.0]).unwrap();
        assert_eq!(TestTransform::ChannelSwap.apply(&x).data(), &[1.0, 0.5, 0.1]);
        assert_eq!(TestTransform::Rescale255.apply(&x).data()[2], 255.0);
        let m = TestTransform::MeanStd.apply(&x);
        assert!((m.data()[0] - (0.1 - 0.485) / 0.229).abs() < 1e-12);
    }

    #[test]
    fn channel_adaptation() {
        let g = Tensor::new(vec![1, 2, 1], vec![0.2, 0.4]).unwrap();
        let rgb = adapt_channels(&g, &[1, 2, 3]).unwrap();
        assert_eq!(rgb.data(), &[0.2, 0.2, 0.2, 0.4, 0.4, 0.4]);
        assert_eq!(adapt_channels(&rgb, &[1, 2, 1]).unwrap().data().len(), 2);
        assert!(adapt_channels(&g, &[2, 2, 3]).is_err());
    }

    #[test]
    fn bug_spec_toml() {
        let s: BugSpec =
            toml::from_str("kind = \"label_flip\"\ncategory = \"data\"\nfraction = 0.1\nseed = 4\n").unwrap();
        assert_eq!(s, BugSpec::new(BugKind::LabelFlip { fraction: 0.1 }, 4));
        let s: BugSpec =
            toml::from_str("kind = \"preprocess_mismatch\"\ncategory = \"test-time\"\ntransform = \"rescale255\"\n")
                .unwrap();
        s.validate().unwrap();
    }
}
