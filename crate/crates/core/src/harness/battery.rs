use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use super::report::{BatteryReport, CascadeCurve, Cell, CellStatus, StagePoint, REPORT_SCHEMA_VERSION};
use super::{heatmap_bytes, BatteryConfig, Metric, CLEAN};
use crate::attribution::{attribute, AttributionContext, AttributionMap};
use crate::bugs::{
    adapt_channels, cascading_randomization, inject, BugCategory, BugKind, BugSpec, Pipeline, TestTransform,
};
use crate::data::{gt1_mask, ImageExample, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    norm_diff, normalize_values, reduce_channels, spearman_maps, ssim_values, summarize, NormMode, NormalizedMap,
};
use crate::nn::{accuracy, preset, train, Network, TrainConfig};
use crate::rng::{derive_seed, tag};
use crate::tensor::Tensor;

/// Files produced by a battery run, relative to the output directory.
#[derive(Clone, Debug, Default)]
pub struct BatteryArtifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

/// The configured architecture for the given input shape, initialized from
/// the master seed.
pub fn build_network(cfg: &BatteryConfig, input_shape: &[usize], classes: usize) -> Result<Network> {
    let specs = preset(&cfg.architecture, classes, cfg.output)?;
    Network::build(input_shape, classes, &specs, derive_seed(&[cfg.seed, tag("init")]))
}

/// Standard-normal values of the given shape.
pub fn gaussian_noise_map(shape: &[usize], seed: u64) -> Tensor {
    let mut r = crate::rng::stream(&[seed, tag("noise-map")]);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = StandardNormal.sample(&mut r);
    }
    t
}

/// Attribution settings for models trained on `train`: seeds from the
/// master seed, an expected-gradients pool of training images, and the
/// data's minimum value as the integrated-gradients baseline.
pub fn attribution_context(cfg: &BatteryConfig, train: &LabeledDataset) -> AttributionContext {
    let pool = train
        .sample_indices(cfg.baseline_pool, derive_seed(&[cfg.seed, tag("baseline-pool")]))
        .into_iter()
        .map(|i| train.examples[i].image.clone())
        .collect();
    let domain_min = train
        .examples
        .iter()
        .map(|e| e.image.min())
        .fold(f64::INFINITY, f64::min);
    AttributionContext {
        target: cfg.target,
        seed: derive_seed(&[cfg.seed, tag("attribution")]),
        baseline_pool: pool,
        domain_min: if domain_min.is_finite() { domain_min } else { 0.0 },
    }
}

fn prepare(x: &Tensor, transforms: &[TestTransform], shape: &[usize]) -> Result<Tensor> {
    let t = transforms.iter().fold(x.clone(), |acc, t| t.apply(&acc));
    adapt_channels(&t, shape)
}

fn accuracy_with(net: &Network, ds: &LabeledDataset, transforms: &[TestTransform]) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for ex in &ds.examples {
        if net.predict(&prepare(&ex.image, transforms, net.input_shape())?)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// What the reference (clean-model) maps are compared against.
enum Compared {
    /// Seeded Gaussian noise maps; the clean baseline.
    Noise,
    Net {
        net: Network,
        ctx: AttributionContext,
        /// Explain the clean model's predicted class instead of this
        /// network's own prediction.
        fixed_class: bool,
    },
}

struct Scenario {
    label: String,
    test: LabeledDataset,
    transforms: Vec<TestTransform>,
    compared: Compared,
}

/// Maps for one input of one (scenario, method).
struct InputMaps {
    reference: AttributionMap,
    compared: Tensor,
    /// Map of the network under test, scored against ground-truth masks.
    subject: Tensor,
    /// Subject network's map of the object-free background, if available.
    background: Option<Result<Tensor>>,
}

struct Run<'a> {
    cfg: &'a BatteryConfig,
    clean: Network,
    clean_ctx: AttributionContext,
    /// Clean-model maps keyed by (input hash, method index).
    cache: HashMap<(u64, usize), std::result::Result<AttributionMap, String>>,
}

impl Run<'_> {
    fn reference(&mut self, x: &Tensor, method: usize) -> Result<AttributionMap> {
        let key = (x.content_hash(), method);
        if !self.cache.contains_key(&key) {
            let spec = &self.cfg.methods[method];
            let r = self
                .clean
                .predict(x)
                .and_then(|c| attribute(&self.clean, x, c, spec, &self.clean_ctx))
                .map_err(|e| e.to_string());
            self.cache.insert(key, r);
        }
        self.cache[&key].clone().map_err(Error::config)
    }

    fn input_maps(&mut self, sc: &Scenario, ex: &ImageExample, index: usize, method: usize) -> Result<InputMaps> {
        let spec = &self.cfg.methods[method];
        let x_ref = adapt_channels(&ex.image, self.clean.input_shape())?;
        let reference = self.reference(&x_ref, method)?;
        let want_bg = self.cfg.metrics.contains(&Metric::SsimGt2);
        match &sc.compared {
            Compared::Noise => {
                let noise = gaussian_noise_map(reference.values.shape(), derive_seed(&[self.cfg.seed, index as u64]));
                let background = match (&ex.backdrop, want_bg) {
                    (Some(b), true) => Some(
                        adapt_channels(b, self.clean.input_shape())
                            .and_then(|b| attribute(&self.clean, &b, reference.class, spec, &self.clean_ctx))
                            .map(|m| m.values),
                    ),
                    _ => None,
                };
                Ok(InputMaps {
                    subject: reference.values.clone(),
                    reference,
                    compared: noise,
                    background,
                })
            }
            Compared::Net { net, ctx, fixed_class } => {
                let x = prepare(&ex.image, &sc.transforms, net.input_shape())?;
                let class = if *fixed_class {
                    reference.class
                } else {
                    net.predict(&x)?
                };
                let map = attribute(net, &x, class, spec, ctx)?;
                let background = match (&ex.backdrop, want_bg) {
                    (Some(b), true) => Some(
                        prepare(b, &sc.transforms, net.input_shape())
                            .and_then(|b| attribute(net, &b, class, spec, ctx))
                            .map(|m| m.values),
                    ),
                    _ => None,
                };
                Ok(InputMaps {
                    reference,
                    compared: map.values.clone(),
                    subject: map.values,
                    background,
                })
            }
        }
    }
}

fn plane(t: Tensor) -> Result<Tensor> {
    match *t.shape() {
        [h, w, 1] => t.reshape(vec![h, w]),
        _ => Ok(t),
    }
}

/// One input's score; `Ok(None)` when the statistic is undefined.
fn score(metric: Metric, maps: &InputMaps, ex: &ImageExample) -> Result<Option<f64>> {
    let unsigned = |t: &Tensor| normalize_values(t, NormMode::Unsigned);
    let reference = &maps.reference.values;
    match metric {
        Metric::Ssim => Ok(Some(
            ssim_values(&unsigned(reference), &unsigned(&maps.compared))?.value,
        )),
        Metric::Spearman => spearman_maps(reference, &maps.compared, false),
        Metric::SpearmanAbs => spearman_maps(reference, &maps.compared, true),
        Metric::NormDiff => {
            let r = if reference.shape() == maps.compared.shape() {
                norm_diff(reference, &maps.compared)
            } else {
                norm_diff(
                    &reduce_channels(reference, false),
                    &reduce_channels(&maps.compared, false),
                )
            };
            match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::Undefined(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        Metric::SsimGt1 => {
            let gt1 = plane(gt1_mask(ex)?)?;
            Ok(Some(ssim_values(&unsigned(&maps.subject), &gt1)?.value))
        }
        Metric::SsimGt2 => {
            let gt1 = plane(gt1_mask(ex)?)?;
            let bg = match &maps.background {
                Some(Ok(b)) => b,
                Some(Err(e)) => return Err(Error::config(format!("background attribution: {e}"))),
                None => return Err(Error::MissingComponent("object-free background for GT-2".into())),
            };
            let bg = NormalizedMap {
                values: unsigned(bg),
                method: maps.reference.method.clone(),
                mode: NormMode::Unsigned,
            };
            let gt2 = crate::metrics::gt2_mask(&gt1, &bg)?;
            Ok(Some(ssim_values(&unsigned(&maps.subject), &gt2.values)?.value))
        }
    }
}

fn failed(bug: &str, method: &str, metric: Metric, reason: String) -> Cell {
    Cell {
        bug: bug.to_string(),
        method: method.to_string(),
        metric: metric.id().to_string(),
        status: CellStatus::Failed,
        summary: None,
        undefined: 0,
        reason: Some(reason),
    }
}

fn summarize_cell(bug: &str, method: &str, metric: Metric, scores: Vec<Option<f64>>) -> Cell {
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    let undefined = scores.len() - defined.len();
    match summarize(metric.id(), &defined) {
        Ok(s) => Cell {
            bug: bug.to_string(),
            method: method.to_string(),
            metric: metric.id().to_string(),
            status: CellStatus::Ok,
            summary: Some(s),
            undefined,
            reason: None,
        },
        Err(e) => Cell {
            undefined,
            ..failed(bug, method, metric, e.to_string())
        },
    }
}

fn heatmap_file(
    cfg: &BatteryConfig,
    bug: &str,
    method: &str,
    k: usize,
    role: &str,
    values: &Tensor,
) -> Result<(String, Vec<u8>)> {
    let map = NormalizedMap {
        values: normalize_values(values, NormMode::Unsigned),
        method: method.to_string(),
        mode: NormMode::Unsigned,
    };
    let bytes = heatmap_bytes(&map, cfg.heatmaps.palette)?;
    let path = format!(
        "heatmaps/{bug}/{method}/{k:03}-{role}.{}",
        cfg.heatmaps.palette.extension()
    );
    Ok((path, bytes))
}

fn record_training(report: &mut BatteryReport, label: &str, tr: &crate::nn::TrainReport) {
    report.training.insert(label.to_string(), tr.epoch_loss.clone());
    for (split, acc) in &tr.accuracy {
        report.accuracy.insert(format!("{label}/{split}"), *acc);
    }
}

fn fit(
    init: &Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    held_out: &[&LabeledDataset],
) -> Result<(Network, crate::nn::TrainReport)> {
    let mut net = init.clone();
    let rep = train(&mut net, data, cfg, held_out)?;
    Ok((net, rep))
}

/// Bug `index` of the config with its seed mixed into the master seed.
pub fn seeded_bug(cfg: &BatteryConfig, index: usize) -> Result<BugSpec> {
    let spec = cfg
        .bugs
        .get(index)
        .ok_or_else(|| Error::config(format!("no bug at index {index}")))?;
    let mut seeded = spec.clone();
    seeded.seed = derive_seed(&[cfg.seed, tag("bug"), index as u64, spec.seed]);
    Ok(seeded)
}

/// Builds the comparison for one bug: injects it, trains or modifies the
/// network it affects, and records accuracies.
fn bug_scenario(
    cfg: &BatteryConfig,
    spec: &BugSpec,
    index: usize,
    init: &Network,
    clean: &Network,
    base: &Pipeline,
    report: &mut BatteryReport,
) -> Result<Scenario> {
    let label = spec.label();
    let seeded = seeded_bug(cfg, index)?;
    let mut start = base.clone();
    start.network = Some(match spec.category {
        BugCategory::Model if matches!(spec.kind, BugKind::Reinit { .. }) => clean.clone(),
        BugCategory::TestTime => clean.clone(),
        _ => init.clone(),
    });
    let p = inject(&seeded, &start)?;
    let mut test = p
        .test_data
        .clone()
        .ok_or_else(|| Error::MissingComponent("test data".into()))?;
    let train_ds = p
        .train_data
        .as_ref()
        .ok_or_else(|| Error::MissingComponent("training data".into()))?;
    let (net, fixed_class) = match &spec.kind {
        BugKind::Spurious { .. } | BugKind::LabelFlip { .. } | BugKind::Frozen { .. } => {
            let (net, rep) = fit(init, train_ds, &p.train_config, &[&test])?;
            record_training(report, &label, &rep);
            if matches!(spec.kind, BugKind::Spurious { .. }) {
                let bg = test.backgrounds_only()?;
                report
                    .accuracy
                    .insert(format!("{label}/background_only"), accuracy(&net, &bg)?);
            }
            if matches!(spec.kind, BugKind::LabelFlip { .. }) {
                // score the mislabeled training examples themselves
                let flipped = train_ds.flipped_indices();
                test = LabeledDataset {
                    examples: flipped.iter().map(|&i| train_ds.examples[i].clone()).collect(),
                    classes: train_ds.classes,
                    split: Split::Train,
                    provenance: train_ds.provenance.clone(),
                };
                report
                    .accuracy
                    .insert(format!("{label}/flipped_fit"), accuracy(&net, &test)?);
            }
            (net, false)
        }
        BugKind::Reinit { .. } => {
            let net = p.network.clone().expect("reinit keeps a network");
            report
                .accuracy
                .insert(format!("{label}/test"), accuracy_with(&net, &test, &[])?);
            (net, true)
        }
        BugKind::Ood { train_domain, .. } => {
            let domain = train_domain.generate()?.with_split(Split::Train);
            let shape = domain.image_shape().ok_or(Error::EmptyDataset)?.to_vec();
            let net0 = build_network(cfg, &shape, domain.classes)?;
            let (net, rep) = fit(&net0, &domain, &p.train_config, &[])?;
            record_training(report, &label, &rep);
            let ctx = attribution_context(cfg, &domain);
            return Ok(Scenario {
                label,
                test,
                transforms: p.test_transforms,
                compared: Compared::Net {
                    net,
                    ctx,
                    fixed_class: false,
                },
            });
        }
        BugKind::PreprocessMismatch { .. } => {
            report.accuracy.insert(
                format!("{label}/test"),
                accuracy_with(clean, &test, &p.test_transforms)?,
            );
            (clean.clone(), false)
        }
    };
    let ctx = attribution_context(cfg, train_ds);
    Ok(Scenario {
        label,
        test,
        transforms: p.test_transforms,
        compared: Compared::Net { net, ctx, fixed_class },
    })
}

fn cascade_curves(cfg: &BatteryConfig, run: &Run, test: &LabeledDataset, indices: &[usize]) -> Vec<CascadeCurve> {
    let Some(cc) = &cfg.cascade else {
        return Vec::new();
    };
    let mut inputs = Vec::new();
    for &i in indices.iter().take(cc.samples) {
        let x = test.examples[i].image.clone();
        match run.clean.predict(&x) {
            Ok(c) => inputs.push((x, c)),
            Err(e) => {
                return cfg
                    .methods
                    .iter()
                    .map(|m| CascadeCurve {
                        method: m.id().to_string(),
                        metric: "ssim".into(),
                        stages: Vec::new(),
                        reason: Some(e.to_string()),
                    })
                    .collect()
            }
        }
    }
    let seed = derive_seed(&[cfg.seed, tag("cascade")]);
    let mut curves = Vec::new();
    for m in &cfg.methods {
        let result = cascading_randomization(
            &run.clean,
            &inputs,
            std::slice::from_ref(m),
            seed,
            &run.clean_ctx,
            cc.depth,
        );
        for metric in [Metric::Ssim, Metric::Spearman] {
            let mut curve = CascadeCurve {
                method: m.id().to_string(),
                metric: metric.id().to_string(),
                stages: Vec::new(),
                reason: None,
            };
            let stages = match &result {
                Ok(s) => s,
                Err(e) => {
                    curve.reason = Some(e.to_string());
                    curves.push(curve);
                    continue;
                }
            };
            for st in stages {
                let mut scores = Vec::new();
                for (k, maps) in st.maps.iter().enumerate() {
                    let (a, b) = (&stages[0].maps[k][0].values, &maps[0].values);
                    let s = match metric {
                        Metric::Ssim => ssim_values(
                            &normalize_values(a, NormMode::Unsigned),
                            &normalize_values(b, NormMode::Unsigned),
                        )
                        .map(|s| Some(s.value)),
                        _ => spearman_maps(a, b, false),
                    };
                    match s {
                        Ok(Some(v)) => scores.push(v),
                        Ok(None) => {}
                        Err(e) => curve.reason = Some(e.to_string()),
                    }
                }
                match summarize(metric.id(), &scores) {
                    Ok(s) => curve.stages.push(StagePoint {
                        depth: st.depth,
                        reinitialized: st.reinitialized.iter().copied().collect(),
                        mean: s.mean,
                        sem: s.sem,
                        n: s.n,
                    }),
                    Err(e) => curve.reason = Some(format!("stage {}: {e}", st.depth)),
                }
            }
            curves.push(curve);
        }
    }
    curves
}

/// Runs the battery in memory. The report is a pure function of the config.
pub fn compute_battery(cfg: &BatteryConfig) -> Result<(BatteryReport, BatteryArtifacts)> {
    cfg.validate()?;
    let train_ds = cfg.data.train.generate()?.with_split(Split::Train);
    let test_ds = cfg.data.test.generate()?.with_split(Split::Test);
    if train_ds.classes != test_ds.classes {
        return Err(Error::config(format!(
            "train data has {} classes but test data has {}",
            train_ds.classes, test_ds.classes
        )));
    }
    let shape = train_ds.image_shape().ok_or(Error::EmptyDataset)?.to_vec();
    if test_ds.image_shape() != Some(shape.as_slice()) {
        return Err(Error::ShapesDiffer {
            left: shape,
            right: test_ds.image_shape().unwrap_or(&[]).to_vec(),
        });
    }
    let init = build_network(cfg, &shape, train_ds.classes)?;
    let tc = cfg.train_config();

    let mut report = BatteryReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        ssim_normalization: NormMode::Unsigned,
        inputs: Vec::new(),
        cells: Vec::new(),
        accuracy: BTreeMap::new(),
        training: BTreeMap::new(),
        cascade: Vec::new(),
        artifacts: Vec::new(),
    };
    let (clean, rep) = fit(&init, &train_ds, &tc, &[&test_ds])?;
    record_training(&mut report, CLEAN, &rep);

    let base = Pipeline::new(Some(train_ds.clone()), Some(test_ds.clone()), None, tc);
    let input_seed = derive_seed(&[cfg.seed, tag("inputs")]);
    report.inputs = test_ds.sample_indices(cfg.samples, input_seed);

    let mut scenarios: Vec<std::result::Result<Scenario, (String, String)>> = vec![Ok(Scenario {
        label: CLEAN.to_string(),
        test: test_ds.clone(),
        transforms: Vec::new(),
        compared: Compared::Noise,
    })];
    for (i, spec) in cfg.bugs.iter().enumerate() {
        scenarios.push(
            bug_scenario(cfg, spec, i, &init, &clean, &base, &mut report).map_err(|e| (spec.label(), e.to_string())),
        );
    }

    let mut run = Run {
        cfg,
        clean_ctx: attribution_context(cfg, &train_ds),
        clean,
        cache: HashMap::new(),
    };
    let mut artifacts = BatteryArtifacts::default();
    for sc in &scenarios {
        let sc = match sc {
            Ok(sc) => sc,
            Err((label, reason)) => {
                for m in &cfg.methods {
                    for &metric in &cfg.metrics {
                        report.cells.push(failed(label, m.id(), metric, reason.clone()));
                    }
                }
                continue;
            }
        };
        let indices = sc.test.sample_indices(cfg.samples, input_seed);
        for (mi, m) in cfg.methods.iter().enumerate() {
            let mut all = Vec::with_capacity(indices.len());
            let mut err = None;
            for &i in &indices {
                match run.input_maps(sc, &sc.test.examples[i], i, mi) {
                    Ok(maps) => all.push(maps),
                    Err(e) => {
                        err = Some(format!("input {i}: {e}"));
                        break;
                    }
                }
            }
            if let Some(reason) = err {
                for &metric in &cfg.metrics {
                    report.cells.push(failed(&sc.label, m.id(), metric, reason.clone()));
                }
                continue;
            }
            for (k, maps) in all.iter().enumerate().take(cfg.heatmaps.count) {
                artifacts.files.push(heatmap_file(
                    cfg,
                    &sc.label,
                    m.id(),
                    k,
                    "reference",
                    &maps.reference.values,
                )?);
                artifacts
                    .files
                    .push(heatmap_file(cfg, &sc.label, m.id(), k, "compared", &maps.compared)?);
            }
            for &metric in &cfg.metrics {
                let mut scores = Vec::with_capacity(all.len());
                let mut err = None;
                for (maps, &i) in all.iter().zip(&indices) {
                    match score(metric, maps, &sc.test.examples[i]) {
                        Ok(s) => scores.push(s),
                        Err(e) => {
                            err = Some(format!("input {i}: {e}"));
                            break;
                        }
                    }
                }
                report.cells.push(match err {
                    Some(reason) => failed(&sc.label, m.id(), metric, reason),
                    None => summarize_cell(&sc.label, m.id(), metric, scores),
                });
            }
        }
    }
    report.cascade = cascade_curves(cfg, &run, &test_ds, &report.inputs);
    artifacts
        .files
        .push(("scores.csv".into(), report.to_csv().into_bytes()));
    report.artifacts = artifacts.files.iter().map(|(p, _)| p.clone()).collect();
    report.artifacts.push("report.json".into());
    Ok((report, artifacts))
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs the battery and writes `report.json`, `scores.csv` and heatmaps
/// under the resolved output directory.
pub fn run_battery(cfg: &BatteryConfig) -> Result<BatteryReport> {
    let (report, artifacts) = compute_battery(cfg)?;
    let root = cfg.resolved_out_dir();
    for (rel, bytes) in &artifacts.files {
        write_file(&root, rel, bytes)?;
    }
    write_file(&root, "report.json", report.to_json()?.as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_maps_are_seeded() {
        let a = gaussian_noise_map(&[4, 4, 3], 9);
        assert_eq!(a, gaussian_noise_map(&[4, 4, 3], 9));
        assert_ne!(a, gaussian_noise_map(&[4, 4, 3], 10));
        let mean = a.sum() / a.len() as f64;
        assert!(mean.abs() < 0.5);
    }
}
