//! Battery orchestration: train, inject, attribute, score, aggregate, from
//! one declarative TOML config.

mod battery;
mod heatmap;
mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::MethodSpec;
use crate::bugs::BugSpec;
use crate::data::Source;
use crate::error::{Error, Result};
use crate::nn::{preset, OutputKind, ScoreTarget, TrainConfig};

pub use battery::{
    attribution_context, build_network, compute_battery, gaussian_noise_map, run_battery, seeded_bug, BatteryArtifacts,
};
pub use heatmap::{export_heatmap, heatmap_bytes, parse_pgm, read_pgm, Palette};
pub use report::{BatteryReport, CascadeCurve, Cell, CellStatus, StagePoint, CSV_HEADER, REPORT_SCHEMA_VERSION};

/// Overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "DEBUGBENCH_OUT_DIR";

/// Label of the uncontaminated reference cells.
pub const CLEAN: &str = "clean";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// SSIM between the reference and the compared map.
    Ssim,
    /// Rank correlation of signed channel sums.
    Spearman,
    /// Rank correlation of summed magnitudes.
    SpearmanAbs,
    /// `||reference - compared|| / ||reference||`.
    NormDiff,
    /// SSIM of the subject map against the background mask.
    SsimGt1,
    /// SSIM of the subject map against the background mask weighted by the
    /// same method's attribution of the object-free background.
    SsimGt2,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Ssim,
        Metric::Spearman,
        Metric::SpearmanAbs,
        Metric::NormDiff,
        Metric::SsimGt1,
        Metric::SsimGt2,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Spearman => "spearman",
            Metric::SpearmanAbs => "spearman_abs",
            Metric::NormDiff => "norm_diff",
            Metric::SsimGt1 => "ssim_gt1",
            Metric::SsimGt2 => "ssim_gt2",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.id() == id).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|m| m.id()).collect();
            Error::config(format!("unknown metric `{id}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Source,
    pub test: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Inputs per (bug, method) written as images.
    pub count: usize,
    pub palette: Palette,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            count: 1,
            palette: Palette::WhiteRed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    /// Inputs per method; taken from the front of the battery's sample.
    pub samples: usize,
    /// Stops after this many layers; all parameterized layers when absent.
    pub depth: Option<usize>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            depth: None,
        }
    }
}

fn default_samples() -> usize {
    190
}

fn default_out_dir() -> String {
    "debugbench-out".into()
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_pool() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    /// Master seed; every stochastic step derives from it.
    pub seed: u64,
    /// Test inputs scored per cell.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub architecture: String,
    #[serde(default)]
    pub output: OutputKind,
    #[serde(default)]
    pub target: ScoreTarget,
    /// Training images available to expected gradients as references.
    #[serde(default = "default_pool")]
    pub baseline_pool: usize,
    pub data: DataConfig,
    /// `seed` here is ignored; training is seeded from the master seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bugs: Vec<BugSpec>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub heatmaps: HeatmapConfig,
    #[serde(default)]
    pub cascade: Option<CascadeConfig>,
}

impl BatteryConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "battery config".into(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config does not serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::config(format!("samples must be >= 2, got {}", self.samples)));
        }
        if self.methods.is_empty() {
            return Err(Error::config("at least one method is required"));
        }
        if self.metrics.is_empty() {
            return Err(Error::config("at least one metric is required"));
        }
        preset(&self.architecture, 2, self.output)?;
        let mut methods = BTreeSet::new();
        for m in &self.methods {
            m.validate()?;
            if !methods.insert(m.id()) {
                return Err(Error::config(format!("method `{}` listed twice", m.id())));
            }
        }
        let mut labels = BTreeSet::from([CLEAN.to_string()]);
        for b in &self.bugs {
            b.validate()?;
            let label = b.label();
            if label.is_empty() || label.contains(['/', '\\', ',']) {
                return Err(Error::config(format!(
                    "bug name `{label}` must be non-empty without `/`, `\\` or `,`"
                )));
            }
            if !labels.insert(label.clone()) {
                return Err(Error::config(format!(
                    "bug label `{label}` is not unique (name bugs explicitly)"
                )));
            }
        }
        if let Some(c) = &self.cascade {
            if c.samples < 2 {
                return Err(Error::config("cascade samples must be >= 2"));
            }
        }
        Ok(())
    }

    /// Training settings with the seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        let mut tc = self.train.clone();
        tc.seed = crate::rng::derive_seed(&[self.seed, crate::rng::tag("train")]);
        tc
    }

    /// The configured output directory unless the environment overrides it.
    pub fn resolved_out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(&self.out_dir))
    }
}
