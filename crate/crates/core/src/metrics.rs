//! Map comparison: normalization, windowed SSIM, Spearman rank
//! correlation, normalized L2 difference, GT-2 masks and mean/SEM
//! summaries.

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Channel-summed magnitudes min-max scaled to `[0, 1]`.
    #[default]
    Unsigned,
    /// Channel sums divided by the largest magnitude, in `[-1, 1]`.
    Signed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMap {
    /// `[H, W]` for image maps; other ranks are kept as given.
    pub values: Tensor,
    pub method: String,
    pub mode: NormMode,
}

/// Sums `[H, W, C]` values over channels (of magnitudes when `abs`);
/// other ranks are returned elementwise.
pub fn reduce_channels(values: &Tensor, abs: bool) -> Tensor {
    let f = |v: f64| if abs { v.abs() } else { v };
    if values.shape().len() != 3 {
        return values.map(f);
    }
    let (h, w, c) = values.hwc();
    let data = values
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|&v| f(v)).sum())
        .collect();
    Tensor::new(vec![h, w], data).expect("plane shape")
}

/// Normalizes raw map values. Constant inputs map to all zeros.
pub fn normalize_values(values: &Tensor, mode: NormMode) -> Tensor {
    match mode {
        NormMode::Unsigned => {
            let a = reduce_channels(values, true);
            let (lo, hi) = (a.min(), a.max());
            if hi == lo || a.is_empty() {
                return Tensor::zeros(a.shape());
            }
            a.map(|v| (v - lo) / (hi - lo))
        }
        NormMode::Signed => {
            let a = reduce_channels(values, false);
            let (lo, hi) = (a.min(), a.max());
            if hi == lo || a.is_empty() {
                return Tensor::zeros(a.shape());
            }
            let scale = lo.abs().max(hi.abs());
            a.map(|v| v / scale)
        }
    }
}

pub fn normalize(map: &AttributionMap, mode: NormMode) -> NormalizedMap {
    NormalizedMap {
        values: normalize_values(&map.values, mode),
        method: map.method.clone(),
        mode,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ssim {
    pub value: f64,
    /// Set when the image is smaller than the window and global statistics
    /// were used instead.
    pub global_fallback: bool,
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|i| g[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| g[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

fn ssim_index(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        [h, w, 1] => Ok((h, w)),
        [n] => Ok((1, n)),
        _ => Err(Error::config(format!(
            "SSIM needs a single-channel plane, got shape {:?}",
            t.shape()
        ))),
    }
}

/// Mean windowed SSIM of two planes (11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim_values(a: &Tensor, b: &Tensor) -> Result<Ssim> {
    a.check_same_shape(b)?;
    let (h, w) = plane_dims(a)?;
    let (xa, xb) = (a.data(), b.data());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = xa.len() as f64;
        let ma = xa.iter().sum::<f64>() / n;
        let mb = xb.iter().sum::<f64>() / n;
        let va = xa.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / n;
        let vb = xb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
        let cov = xa.iter().zip(xb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
        return Ok(Ssim {
            value: ssim_index(ma, mb, va, vb, cov),
            global_fallback: true,
        });
    }
    let g = gaussian_window();
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let mu_a = filter(xa, h, w, &g);
    let mu_b = filter(xb, h, w, &g);
    let eaa = filter(&sq(xa), h, w, &g);
    let ebb = filter(&sq(xb), h, w, &g);
    let ab: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p * q).collect();
    let eab = filter(&ab, h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let var_a = eaa[i] - mu_a[i] * mu_a[i];
        let var_b = ebb[i] - mu_b[i] * mu_b[i];
        let cov = eab[i] - mu_a[i] * mu_b[i];
        total += ssim_index(mu_a[i], mu_b[i], var_a, var_b, cov);
    }
    Ok(Ssim {
        value: total / n as f64,
        global_fallback: false,
    })
}

/// SSIM of two unsigned normalized maps.
pub fn ssim(a: &NormalizedMap, b: &NormalizedMap) -> Result<Ssim> {
    if a.mode != NormMode::Unsigned || b.mode != NormMode::Unsigned {
        return Err(Error::config("SSIM compares unsigned normalized maps only"));
    }
    ssim_values(&a.values, &b.values)
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation of the flattened values; `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64], use_abs: bool) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::ShapesDiffer {
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if a.len() < 2 {
        return Err(Error::config("spearman needs at least 2 elements"));
    }
    let prep = |x: &[f64]| -> Vec<f64> {
        if use_abs {
            x.iter().map(|v| v.abs()).collect()
        } else {
            x.to_vec()
        }
    };
    Ok(pearson(&ranks(&prep(a)), &ranks(&prep(b))))
}

/// `||orig - other|| / ||orig||`.
pub fn norm_diff(orig: &Tensor, other: &Tensor) -> Result<f64> {
    orig.check_same_shape(other)?;
    let base = orig.l2_norm();
    if base == 0.0 {
        return Err(Error::Undefined(
            "normalized difference of an all-zero reference map".into(),
        ));
    }
    Ok(orig.zip_map(other, |a, b| a - b)?.l2_norm() / base)
}

/// Spearman correlation of two attribution maps after channel reduction:
/// signed channel sums, or summed magnitudes when `use_abs`. Maps with
/// different channel counts compare on their shared plane.
pub fn spearman_maps(a: &Tensor, b: &Tensor, use_abs: bool) -> Result<Option<f64>> {
    let (ra, rb) = (reduce_channels(a, use_abs), reduce_channels(b, use_abs));
    ra.check_same_shape(&rb)?;
    spearman(ra.data(), rb.data(), false)
}

/// Background mask weighted by a method's own normalized attribution of the
/// object-free background.
pub fn gt2_mask(gt1: &Tensor, background_attr: &NormalizedMap) -> Result<NormalizedMap> {
    Ok(NormalizedMap {
        values: gt1.zip_map(&background_attr.values, |g, a| g * a)?,
        method: background_attr.method.clone(),
        mode: background_attr.mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub metric: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub sem: f64,
    pub n: usize,
}

pub fn summarize(metric: &str, scores: &[f64]) -> Result<ScoreSummary> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::Undefined(format!("summary of {metric} needs n >= 2, got {n}")));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(ScoreSummary {
        metric: metric.to_string(),
        scores: scores.to_vec(),
        mean,
        sem: var.sqrt() / (n as f64).sqrt(),
        n,
    })
}
