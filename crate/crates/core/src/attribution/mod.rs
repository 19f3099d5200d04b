//! Attribution methods as pure functions of (network, input, class,
//! hyperparameters). Every method targets the class logit unless the
//! context asks for probabilities.

mod gradient;
mod lrp;
mod surrogate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, ScoreTarget};
use crate::rng;
use crate::tensor::Tensor;

pub use gradient::{
    expected_gradients, grad, gradient, input_times_grad, integrated_gradients, modified_backprop, smoothgrad,
    SmoothVariant,
};
pub use lrp::{lrp, LrpRule};
pub use surrogate::{exact_shapley, kernel_shap, lime, segment_scores, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// Same shape as the input.
    pub values: Tensor,
    pub method: String,
    pub params: serde_json::Value,
    pub class: usize,
    /// Whether negative values carry meaning.
    pub signed: bool,
}

impl AttributionMap {
    /// Parses a JSON map file, checking the tensor's size against its shape.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut map: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "attribution map".into(),
            message: e.to_string(),
        })?;
        let shape = map.values.shape().to_vec();
        map.values = Tensor::new(
            shape,
            std::mem::replace(&mut map.values, Tensor::from_vec(Vec::new())).into_data(),
        )?;
        if !map.values.is_finite() {
            return Err(Error::NonFinite(format!("{} map file", map.method)));
        }
        Ok(map)
    }

    pub(crate) fn new(values: Tensor, spec: &MethodSpec, class: usize, signed: bool) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::NonFinite(format!("{} attribution", spec.id())));
        }
        Ok(Self {
            values,
            method: spec.id().to_string(),
            params: spec.params_json(),
            class,
            signed,
        })
    }
}

fn default_samples() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothParams {
    pub samples: usize,
    /// Noise std as a fraction of the input's value range.
    pub sigma_fraction: f64,
}

impl Default for SmoothParams {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            sigma_fraction: 0.15,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputGradParams {
    /// `x * grad` instead of `x * |grad|`.
    pub signed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Constant image at the context's domain minimum.
    #[default]
    DomainMin,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntGradParams {
    pub steps: usize,
    pub baseline: Baseline,
}

impl Default for IntGradParams {
    fn default() -> Self {
        Self {
            steps: 50,
            baseline: Baseline::DomainMin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EGradParams {
    pub steps: usize,
    /// Number of reference inputs drawn from the context's baseline pool.
    pub baselines: usize,
}

impl Default for EGradParams {
    fn default() -> Self {
        Self {
            steps: 50,
            baselines: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeParams {
    pub grid: Grid,
    pub samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            grid: Grid { rows: 5, cols: 5 },
            samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapParams {
    pub grid: Grid,
    /// Coalition budget, excluding the empty and full coalitions.
    pub samples: usize,
}

impl Default for ShapParams {
    fn default() -> Self {
        Self {
            grid: Grid { rows: 5, cols: 5 },
            samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsParams {
    pub epsilon: f64,
}

impl Default for EpsParams {
    fn default() -> Self {
        Self { epsilon: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaBetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AlphaBetaParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }
}

/// One attribution method with its hyperparameters. Serialized with a
/// `method` tag, e.g. `{ method = "intgrad", steps = 128 }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum MethodSpec {
    #[serde(rename = "grad")]
    Grad,
    #[serde(rename = "sgrad")]
    SGrad(SmoothParams),
    #[serde(rename = "sgradsq")]
    SGradSq(SmoothParams),
    #[serde(rename = "vgrad")]
    VGrad(SmoothParams),
    #[serde(rename = "inputgrad")]
    InputGrad(InputGradParams),
    #[serde(rename = "intgrad")]
    IntGrad(IntGradParams),
    #[serde(rename = "egrad")]
    EGrad(EGradParams),
    #[serde(rename = "lime")]
    Lime(LimeParams),
    #[serde(rename = "kernelshap")]
    KernelShap(ShapParams),
    #[serde(rename = "gbp")]
    Gbp,
    #[serde(rename = "dconvnet")]
    DConvNet,
    #[serde(rename = "lrp-z")]
    LrpZ,
    #[serde(rename = "lrp-eps")]
    LrpEps(EpsParams),
    #[serde(rename = "lrp-ab")]
    LrpAlphaBeta(AlphaBetaParams),
    #[serde(rename = "lrp-composite-flat")]
    LrpCompositeFlat(EpsParams),
}

pub const METHOD_IDS: &[&str] = &[
    "grad",
    "sgrad",
    "sgradsq",
    "vgrad",
    "inputgrad",
    "intgrad",
    "egrad",
    "lime",
    "kernelshap",
    "gbp",
    "dconvnet",
    "lrp-z",
    "lrp-eps",
    "lrp-ab",
    "lrp-composite-flat",
];

impl MethodSpec {
    /// Default hyperparameters for a method id.
    pub fn from_id(id: &str) -> Result<Self> {
        serde_json::from_value(serde_json::json!({ "method": id }))
            .map_err(|_| Error::config(format!("unknown method `{id}` (known: {})", METHOD_IDS.join(", "))))
    }

    pub fn id(&self) -> &'static str {
        match self {
            MethodSpec::Grad => "grad",
            MethodSpec::SGrad(_) => "sgrad",
            MethodSpec::SGradSq(_) => "sgradsq",
            MethodSpec::VGrad(_) => "vgrad",
            MethodSpec::InputGrad(_) => "inputgrad",
            MethodSpec::IntGrad(_) => "intgrad",
            MethodSpec::EGrad(_) => "egrad",
            MethodSpec::Lime(_) => "lime",
            MethodSpec::KernelShap(_) => "kernelshap",
            MethodSpec::Gbp => "gbp",
            MethodSpec::DConvNet => "dconvnet",
            MethodSpec::LrpZ => "lrp-z",
            MethodSpec::LrpEps(_) => "lrp-eps",
            MethodSpec::LrpAlphaBeta(_) => "lrp-ab",
            MethodSpec::LrpCompositeFlat(_) => "lrp-composite-flat",
        }
    }

    /// Hyperparameters without the method tag.
    pub fn params_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("method specs serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("method");
        }
        v
    }

    /// Replaces one hyperparameter, e.g. `("steps", 128)`.
    pub fn set_param(&mut self, key: &str, value: serde_json::Value) -> Result<()> {
        let mut v = serde_json::to_value(&*self).expect("method specs serialize");
        let obj = v.as_object_mut().expect("tagged object");
        if key == "method" || !obj.contains_key(key) {
            return Err(Error::config(format!(
                "method `{}` has no parameter `{key}`",
                self.id()
            )));
        }
        obj.insert(key.to_string(), value);
        *self = serde_json::from_value(v)
            .map_err(|e| Error::config(format!("bad value for `{}` parameter `{key}`: {e}", self.id())))?;
        self.validate()
    }

    // Negated comparisons below also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("{}: {msg}", self.id())));
        match self {
            MethodSpec::SGrad(p) | MethodSpec::SGradSq(p) | MethodSpec::VGrad(p) => {
                if p.samples == 0 {
                    return bad("samples must be >= 1".into());
                }
                if !(p.sigma_fraction >= 0.0 && p.sigma_fraction.is_finite()) {
                    return bad(format!("sigma_fraction must be >= 0, got {}", p.sigma_fraction));
                }
            }
            MethodSpec::IntGrad(p) if p.steps == 0 => return bad("steps must be >= 1".into()),
            MethodSpec::EGrad(p) => {
                if p.steps == 0 || p.baselines == 0 {
                    return bad("steps and baselines must be >= 1".into());
                }
            }
            MethodSpec::Lime(p) => {
                p.grid.validate()?;
                if p.samples < p.grid.segments() {
                    return bad(format!("samples {} < segments {}", p.samples, p.grid.segments()));
                }
                if !(p.kernel_width > 0.0) || !(p.ridge_lambda >= 0.0) {
                    return bad("kernel_width must be > 0 and ridge_lambda >= 0".into());
                }
            }
            MethodSpec::KernelShap(p) => {
                p.grid.validate()?;
                if p.samples < p.grid.segments() {
                    return bad(format!("samples {} < segments {}", p.samples, p.grid.segments()));
                }
            }
            MethodSpec::LrpEps(p) | MethodSpec::LrpCompositeFlat(p) => {
                if !(p.epsilon >= 0.0) {
                    return bad(format!("epsilon must be >= 0, got {}", p.epsilon));
                }
            }
            MethodSpec::LrpAlphaBeta(p) if !((p.alpha - p.beta - 1.0).abs() <= 1e-12 && p.beta >= 0.0) => {
                return bad(format!(
                    "need alpha - beta = 1 and beta >= 0, got alpha={} beta={}",
                    p.alpha, p.beta
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Inputs shared by all methods beyond (network, x, class).
#[derive(Clone, Debug, Default)]
pub struct AttributionContext {
    pub target: ScoreTarget,
    /// Mixed with the input hash and method id to seed stochastic methods.
    pub seed: u64,
    /// Reference inputs for expected gradients (typically training images).
    pub baseline_pool: Vec<Tensor>,
    /// Smallest value an input dimension can take.
    pub domain_min: f64,
}

impl AttributionContext {
    /// Seed for a stochastic method on a given input.
    pub fn method_seed(&self, x: &Tensor, method: &str) -> u64 {
        rng::derive_seed(&[self.seed, x.content_hash(), rng::tag(method)])
    }

    fn egrad_baselines(&self, x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
        use rand::seq::index;
        let n = self.baseline_pool.len();
        if n == 0 {
            return Err(Error::MissingComponent("baseline pool for expected gradients".into()));
        }
        if k >= n {
            return Ok(self.baseline_pool.clone());
        }
        let mut r = rng::stream(&[self.method_seed(x, "egrad")]);
        let mut idx = index::sample(&mut r, n, k).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| self.baseline_pool[i].clone()).collect())
    }
}

/// Computes one attribution map.
pub fn attribute(
    net: &Network,
    x: &Tensor,
    class: usize,
    spec: &MethodSpec,
    ctx: &AttributionContext,
) -> Result<AttributionMap> {
    spec.validate()?;
    net.check_class(class)?;
    let t = ctx.target;
    let (values, signed) = match spec {
        MethodSpec::Grad => (grad(net, x, class, t)?, false),
        MethodSpec::SGrad(p) => (
            smoothgrad(
                net,
                x,
                class,
                t,
                SmoothVariant::Mean,
                p,
                ctx.method_seed(x, "smoothgrad"),
            )?,
            true,
        ),
        MethodSpec::SGradSq(p) => (
            smoothgrad(
                net,
                x,
                class,
                t,
                SmoothVariant::Square,
                p,
                ctx.method_seed(x, "smoothgrad"),
            )?,
            false,
        ),
        MethodSpec::VGrad(p) => (
            smoothgrad(
                net,
                x,
                class,
                t,
                SmoothVariant::Variance,
                p,
                ctx.method_seed(x, "smoothgrad"),
            )?,
            false,
        ),
        MethodSpec::InputGrad(p) => (input_times_grad(net, x, class, t, p.signed)?, p.signed || x.min() < 0.0),
        MethodSpec::IntGrad(p) => {
            let base = match p.baseline {
                Baseline::DomainMin => Tensor::filled(x.shape(), ctx.domain_min),
                Baseline::Constant(v) => Tensor::filled(x.shape(), v),
            };
            (integrated_gradients(net, x, class, t, &base, p.steps)?, true)
        }
        MethodSpec::EGrad(p) => {
            let bases = ctx.egrad_baselines(x, p.baselines)?;
            (expected_gradients(net, x, class, t, &bases, p.steps)?, true)
        }
        MethodSpec::Lime(p) => (lime(net, x, class, t, p, ctx.method_seed(x, "lime"))?, true),
        MethodSpec::KernelShap(p) => (
            kernel_shap(net, x, class, t, p, ctx.method_seed(x, "kernelshap"))?,
            true,
        ),
        MethodSpec::Gbp => (modified_backprop(net, x, class, t, crate::nn::ReluRule::Guided)?, true),
        MethodSpec::DConvNet => (
            modified_backprop(net, x, class, t, crate::nn::ReluRule::Deconvnet)?,
            true,
        ),
        MethodSpec::LrpZ => (lrp(net, x, class, t, LrpRule::Z)?, true),
        MethodSpec::LrpEps(p) => (lrp(net, x, class, t, LrpRule::Epsilon(p.epsilon))?, true),
        MethodSpec::LrpAlphaBeta(p) => (lrp(net, x, class, t, LrpRule::AlphaBeta(p.alpha, p.beta))?, true),
        MethodSpec::LrpCompositeFlat(p) => (lrp(net, x, class, t, LrpRule::CompositeFlat(p.epsilon))?, true),
    };
    AttributionMap::new(values, spec, class, signed)
}
