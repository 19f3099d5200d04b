use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Mutation};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Class-to-texture confound applied to a seeded subset of examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSpec {
    /// `mapping[class]` is the texture id painted behind that class.
    pub mapping: Vec<u32>,
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SpuriousSpec {
    pub fn new(mapping: Vec<u32>, fraction: f64, seed: u64) -> Self {
        Self {
            mapping,
            fraction,
            seed,
        }
    }

    /// Class `k` gets texture `k`.
    pub fn identity(classes: usize, fraction: f64, seed: u64) -> Self {
        Self::new((0..classes as u32).collect(), fraction, seed)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.mapping.len() != classes {
            return Err(Error::config(format!(
                "spurious mapping covers {} classes, dataset has {classes}",
                self.mapping.len()
            )));
        }
        let distinct: BTreeSet<u32> = self.mapping.iter().copied().collect();
        if distinct.len() != self.mapping.len() {
            return Err(Error::config("spurious mapping assigns one texture to two classes"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::config(format!(
                "spurious fraction must be in [0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    fn subset(&self, n: usize) -> Vec<usize> {
        let k = (self.fraction * n as f64).round() as usize;
        let mut idx = index::sample(&mut rng::stream(&[self.seed, rng::tag("spurious-subset")]), n, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

#[derive(Clone, Copy)]
struct Grating {
    low: [f64; 3],
    high: [f64; 3],
    theta_deg: f64,
    cycles: f64,
}

const GRATINGS: [Grating; 8] = [
    Grating {
        low: [0.55, 0.75, 0.95],
        high: [0.85, 0.92, 1.00],
        theta_deg: 90.0,
        cycles: 1.0,
    },
    Grating {
        low: [0.15, 0.35, 0.10],
        high: [0.55, 0.75, 0.25],
        theta_deg: 0.0,
        cycles: 4.0,
    },
    Grating {
        low: [0.80, 0.65, 0.40],
        high: [0.95, 0.85, 0.60],
        theta_deg: 30.0,
        cycles: 2.0,
    },
    Grating {
        low: [0.10, 0.30, 0.55],
        high: [0.30, 0.55, 0.75],
        theta_deg: 150.0,
        cycles: 3.0,
    },
    Grating {
        low: [0.80, 0.80, 0.85],
        high: [1.00, 1.00, 1.00],
        theta_deg: 60.0,
        cycles: 5.0,
    },
    Grating {
        low: [0.55, 0.25, 0.15],
        high: [0.80, 0.45, 0.30],
        theta_deg: 120.0,
        cycles: 2.5,
    },
    Grating {
        low: [0.75, 0.70, 0.20],
        high: [0.90, 0.85, 0.40],
        theta_deg: 0.0,
        cycles: 6.0,
    },
    Grating {
        low: [0.60, 0.30, 0.30],
        high: [0.80, 0.50, 0.45],
        theta_deg: 90.0,
        cycles: 5.0,
    },
];

fn grating(id: u32) -> Grating {
    if let Some(g) = GRATINGS.get(id as usize) {
        return *g;
    }
    let mut r = rng::stream(&[id as u64, rng::tag("texture-params")]);
    let low = [
        r.random_range(0.0..0.7),
        r.random_range(0.0..0.7),
        r.random_range(0.0..0.7),
    ];
    let high = low.map(|c| c + 0.25);
    Grating {
        low,
        high,
        theta_deg: r.random_range(0.0..180.0),
        cycles: r.random_range(1.0..6.0),
    }
}

/// Renders texture `id` as a `[size, size, 3]` sinusoidal grating with
/// pixel noise; `seed` varies phase and noise.
pub fn texture(id: u32, size: usize, seed: u64) -> Tensor {
    let g = grating(id);
    let mut r = rng::stream(&[seed, id as u64, rng::tag("texture")]);
    let phase = r.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let theta = g.theta_deg.to_radians();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) / size as f64;
            let w = 0.5 + 0.5 * (std::f64::consts::TAU * g.cycles * t + phase).sin();
            for c in 0..3 {
                let v = g.low[c] + (g.high[c] - g.low[c]) * w + noise.sample(&mut r);
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("sized buffer")
}

/// Paints the class-mapped texture behind the object of a
/// `spec.fraction` subset of examples chosen by `spec.seed`.
pub fn compose_spurious(ds: &LabeledDataset, spec: &SpuriousSpec) -> Result<LabeledDataset> {
    spec.validate(ds.classes)?;
    compose_spurious_at(ds, spec, &spec.subset(ds.len()))
}

/// Like [`compose_spurious`] on an explicit index set. Each example's
/// texture depends only on its index, label and `spec.seed`.
pub fn compose_spurious_at(ds: &LabeledDataset, spec: &SpuriousSpec, indices: &[usize]) -> Result<LabeledDataset> {
    spec.validate(ds.classes)?;
    let mut out = ds.clone();
    for &i in indices {
        let ex = out
            .examples
            .get_mut(i)
            .ok_or_else(|| Error::config(format!("spurious index {i} out of range for {} examples", ds.len())))?;
        let mask = ex.object_mask.as_ref().ok_or(Error::MissingMask { index: i })?;
        let (h, w, c) = ex.image.hwc();
        if c != 3 || h != w {
            return Err(Error::config(format!(
                "spurious backgrounds need square RGB images, got {:?}",
                ex.image.shape()
            )));
        }
        let id = spec.mapping[ex.label];
        let tex = texture(id, h, rng::derive_seed(&[spec.seed, i as u64]));
        let m = mask.data().to_vec();
        let img = ex.image.data_mut();
        for (p, &mv) in m.iter().enumerate() {
            if mv == 0.0 {
                img[p * 3..p * 3 + 3].copy_from_slice(&tex.data()[p * 3..p * 3 + 3]);
            }
        }
        ex.background_id = Some(id);
        ex.backdrop = Some(tex);
    }
    out.provenance.mutations.push(Mutation::Spurious {
        spec: spec.clone(),
        indices: indices.to_vec(),
    });
    Ok(out)
}
