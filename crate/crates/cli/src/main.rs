//! `debugbench` command-line front end.
//!
//! Every subcommand prints one JSON object on success. Failures print one
//! JSON line `{"error": <code>, "message": <text>}` on stderr and exit 1;
//! usage errors exit 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use debugbench::attribution::{attribute, AttributionMap, MethodSpec};
use debugbench::bugs::{inject, Pipeline};
use debugbench::data::{read_dataset, write_dataset, LabeledDataset, Split};
use debugbench::harness::{
    attribution_context, build_network, export_heatmap, run_battery, seeded_bug, BatteryConfig, Metric, Palette,
};
use debugbench::metrics::{norm_diff, normalize, normalize_values, spearman_maps, ssim_values, NormMode};
use debugbench::nn::{self, train};
use debugbench::{Error, Result};

#[derive(Parser)]
#[command(
    name = "debugbench",
    version,
    about = "Train small networks, inject bugs, and score attribution methods"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured train and test datasets.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Directory for train.dbds and test.dbds; defaults to the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured architecture.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training set file; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Apply the config's bugs before training.
        #[arg(long)]
        with_bugs: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the config's bugs to a pipeline and write the results.
    Inject {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Only these bugs (by name); all when absent.
        #[arg(long = "bug")]
        bugs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute one attribution map.
    Attribute {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: PathBuf,
        /// Dataset file; the config's test data when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        method: String,
        /// Class to explain; the model's prediction when absent.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Any method parameter as `key=value` (value parsed as JSON when possible).
        #[arg(long = "param")]
        params: Vec<String>,
        /// Map file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two map files.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "ssim")]
        metric: String,
    },
    /// Run the full battery and write report.json, scores.csv and heatmaps.
    Battery {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Write a map file as a PGM or PPM heatmap.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "white-red")]
        palette: String,
        #[arg(long, default_value = "unsigned")]
        mode: String,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<BatteryConfig> {
    let mut cfg = BatteryConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dataset(file: Option<&Path>, cfg: &BatteryConfig, split: Split) -> Result<LabeledDataset> {
    match file {
        Some(p) => read_dataset(p),
        None => {
            let src = if split == Split::Train {
                &cfg.data.train
            } else {
                &cfg.data.test
            };
            Ok(src.generate()?.with_split(split))
        }
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_map(path: &Path) -> Result<AttributionMap> {
    AttributionMap::from_json(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn gen_data(config: &Path, out: Option<PathBuf>) -> Result<Value> {
    let cfg = load_config(config, None)?;
    let dir = out.unwrap_or_else(|| cfg.resolved_out_dir());
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut files = Vec::new();
    for split in [Split::Train, Split::Test] {
        let ds = dataset(None, &cfg, split)?;
        let path = dir.join(format!("{}.dbds", split.name()));
        write_dataset(&ds, &path)?;
        files.push(json!({ "split": split.name(), "path": path, "examples": ds.len(), "classes": ds.classes }));
    }
    Ok(json!({ "datasets": files }))
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    config: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    data: Option<PathBuf>,
    with_bugs: bool,
    out: &Path,
) -> Result<Value> {
    let mut cfg = load_config(config, seed)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let train_ds = dataset(data.as_deref(), &cfg, Split::Train)?;
    let test_ds = dataset(None, &cfg, Split::Test)?;
    let shape = train_ds.image_shape().ok_or(Error::EmptyDataset)?.to_vec();
    let net = build_network(&cfg, &shape, train_ds.classes)?;
    let mut pipeline = Pipeline::new(Some(train_ds), Some(test_ds), Some(net), cfg.train_config());
    if with_bugs {
        for i in 0..cfg.bugs.len() {
            pipeline = inject(&seeded_bug(&cfg, i)?, &pipeline)?;
        }
    }
    let mut net = pipeline.network.take().expect("network present");
    let train_ds = pipeline.train_data.as_ref().expect("training data present");
    let test_ds = pipeline.test_data.as_ref().expect("test data present");
    let report = train(&mut net, train_ds, &pipeline.train_config, &[test_ds])?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    nn::save(&net, out)?;
    Ok(json!({
        "model": out,
        "accuracy": report.accuracy,
        "epoch_loss": report.epoch_loss,
        "bugs": pipeline.applied.iter().map(|b| b.label()).collect::<Vec<_>>(),
    }))
}

fn inject_cmd(config: &Path, seed: Option<u64>, model: Option<PathBuf>, names: &[String], out: &Path) -> Result<Value> {
    let cfg = load_config(config, seed)?;
    for n in names {
        if !cfg.bugs.iter().any(|b| &b.label() == n) {
            return Err(Error::InvalidConfig(format!("no bug named `{n}` in the config")));
        }
    }
    let net = model.as_deref().map(nn::load).transpose()?;
    let mut pipeline = Pipeline::new(
        Some(dataset(None, &cfg, Split::Train)?),
        Some(dataset(None, &cfg, Split::Test)?),
        net,
        cfg.train_config(),
    );
    for (i, b) in cfg.bugs.iter().enumerate() {
        if names.is_empty() || names.contains(&b.label()) {
            pipeline = inject(&seeded_bug(&cfg, i)?, &pipeline)?;
        }
    }
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = Vec::new();
    for (name, ds) in [("train", &pipeline.train_data), ("test", &pipeline.test_data)] {
        if let Some(ds) = ds {
            let p = out.join(format!("{name}.dbds"));
            write_dataset(ds, &p)?;
            files.push(p);
        }
    }
    if let Some(net) = &pipeline.network {
        let p = out.join("model.dbnn");
        nn::save(net, &p)?;
        files.push(p);
    }
    let manifest = json!({
        "applied": pipeline.applied,
        "test_transforms": pipeline.test_transforms,
        "frozen": pipeline.train_config.frozen,
    });
    let p = out.join("pipeline.json");
    write_json(&p, &manifest)?;
    files.push(p);
    Ok(json!({ "applied": pipeline.applied.iter().map(|b| b.label()).collect::<Vec<_>>(), "files": files }))
}

#[allow(clippy::too_many_arguments)]
fn attribute_cmd(
    config: &Path,
    seed: Option<u64>,
    model: &Path,
    data: Option<PathBuf>,
    index: usize,
    method: &str,
    class: Option<usize>,
    overrides: Vec<(String, Value)>,
    out: Option<PathBuf>,
) -> Result<Value> {
    let cfg = load_config(config, seed)?;
    let mut spec = match cfg.methods.iter().find(|m| m.id() == method) {
        Some(m) => m.clone(),
        None => MethodSpec::from_id(method)?,
    };
    for (k, v) in overrides {
        spec.set_param(&k, v)?;
    }
    let net = nn::load(model)?;
    let ds = dataset(data.as_deref(), &cfg, Split::Test)?;
    let ex = ds
        .examples
        .get(index)
        .ok_or_else(|| Error::InvalidConfig(format!("index {index} out of range for {} examples", ds.len())))?;
    let class = match class {
        Some(c) => c,
        None => net.predict(&ex.image)?,
    };
    let ctx = attribution_context(&cfg, &dataset(None, &cfg, Split::Train)?);
    let map = attribute(&net, &ex.image, class, &spec, &ctx)?;
    match out {
        Some(p) => {
            write_json(
                &p,
                &serde_json::to_value(&map).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            )?;
            Ok(json!({ "map": p, "method": map.method, "class": map.class, "params": map.params }))
        }
        None => serde_json::to_value(&map).map_err(|e| Error::InvalidConfig(e.to_string())),
    }
}

fn evaluate_cmd(a: &Path, b: &Path, metric: &str) -> Result<Value> {
    let metric = Metric::from_id(metric)?;
    let (ma, mb) = (read_map(a)?, read_map(b)?);
    if ma.values.shape() != mb.values.shape() {
        return Err(Error::ShapesDiffer {
            left: ma.values.shape().to_vec(),
            right: mb.values.shape().to_vec(),
        });
    }
    let value = match metric {
        Metric::Ssim => {
            let s = ssim_values(
                &normalize_values(&ma.values, NormMode::Unsigned),
                &normalize_values(&mb.values, NormMode::Unsigned),
            )?;
            return Ok(json!({ "metric": metric.id(), "value": s.value, "global_fallback": s.global_fallback }));
        }
        Metric::Spearman => spearman_maps(&ma.values, &mb.values, false)?,
        Metric::SpearmanAbs => spearman_maps(&ma.values, &mb.values, true)?,
        Metric::NormDiff => Some(norm_diff(&ma.values, &mb.values)?),
        Metric::SsimGt1 | Metric::SsimGt2 => {
            return Err(Error::InvalidConfig(format!(
                "{} needs ground-truth masks; use the battery",
                metric.id()
            )))
        }
    };
    Ok(json!({ "metric": metric.id(), "value": value }))
}

fn export_cmd(map: &Path, out: &Path, palette: &str, mode: &str) -> Result<Value> {
    let palette: Palette = serde_json::from_value(Value::String(palette.into()))
        .map_err(|_| Error::InvalidConfig(format!("unknown palette `{palette}` (grayscale, white-red)")))?;
    let mode: NormMode = serde_json::from_value(Value::String(mode.into()))
        .map_err(|_| Error::InvalidConfig(format!("unknown mode `{mode}` (unsigned, signed)")))?;
    let m = read_map(map)?;
    export_heatmap(&normalize(&m, mode), out, palette)?;
    Ok(json!({ "heatmap": out }))
}

fn battery_cmd(config: &Path, seed: Option<u64>, samples: Option<usize>) -> Result<Value> {
    let mut cfg = load_config(config, seed)?;
    if let Some(n) = samples {
        cfg.samples = n;
        cfg.validate()?;
    }
    let report = run_battery(&cfg)?;
    let failed = report.cells.iter().filter(|c| c.summary.is_none()).count();
    Ok(json!({
        "out_dir": cfg.resolved_out_dir(),
        "cells": report.cells.len(),
        "failed": failed,
        "accuracy": report.accuracy,
    }))
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, out),
        Command::Train {
            config,
            seed,
            epochs,
            data,
            with_bugs,
            out,
        } => train_cmd(&config, seed, epochs, data, with_bugs, &out),
        Command::Inject {
            config,
            seed,
            model,
            bugs,
            out,
        } => inject_cmd(&config, seed, model, &bugs, &out),
        Command::Attribute {
            config,
            seed,
            model,
            data,
            index,
            method,
            class,
            steps,
            samples,
            params,
            out,
        } => {
            let mut overrides = Vec::new();
            for p in &params {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidConfig(format!("--param expects key=value, got `{p}`")))?;
                overrides.push((k.to_string(), parse_value(v)));
            }
            // dedicated flags win over --param
            if let Some(s) = steps {
                overrides.push(("steps".into(), json!(s)));
            }
            if let Some(s) = samples {
                overrides.push(("samples".into(), json!(s)));
            }
            attribute_cmd(&config, seed, &model, data, index, &method, class, overrides, out)
        }
        Command::Evaluate { config, a, b, metric } => {
            if let Some(c) = config {
                load_config(&c, None)?;
            }
            evaluate_cmd(&a, &b, &metric)
        }
        Command::Battery { config, seed, samples } => battery_cmd(&config, seed, samples),
        Command::Export {
            config,
            map,
            out,
            palette,
            mode,
        } => {
            if let Some(c) = config {
                load_config(&c, None)?;
            }
            export_cmd(&map, &out, &palette, &mode)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
