//! Segment-level surrogate models: LIME and KernelSHAP over a rectangular
//! tile grid. A dropped segment is painted with the image's per-channel
//! mean.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::{Bernoulli, Distribution};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{LimeParams, ShapParams};
use crate::error::{Error, Result};
use crate::nn::{Network, ScoreTarget};
use crate::rng;
use crate::tensor::Tensor;

/// `rows x cols` tiling of the image plane. Tile `(r, c)` covers rows
/// `[r*H/rows, (r+1)*H/rows)` and the analogous columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn segments(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config(format!(
                "segment grid must be at least 1x1, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Segment id of every pixel of an `h x w` image, row-major.
    pub fn segment_map(&self, h: usize, w: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if self.rows > h || self.cols > w {
            return Err(Error::config(format!(
                "segment grid {}x{} finer than image {h}x{w}",
                self.rows, self.cols
            )));
        }
        Ok((0..h)
            .flat_map(|y| (0..w).map(move |x| (y * self.rows / h) * self.cols + x * self.cols / w))
            .collect())
    }
}

struct Segmented<'a> {
    net: &'a Network,
    x: &'a Tensor,
    class: usize,
    target: ScoreTarget,
    seg: Vec<usize>,
    mean: Vec<f64>,
}

impl<'a> Segmented<'a> {
    fn new(net: &'a Network, x: &'a Tensor, class: usize, target: ScoreTarget, grid: Grid) -> Result<Self> {
        net.check_class(class)?;
        if x.shape().len() != 3 {
            return Err(Error::config(format!(
                "segment methods need an HxWxC image, got {:?}",
                x.shape()
            )));
        }
        let (h, w, c) = x.hwc();
        let seg = grid.segment_map(h, w)?;
        let mut mean = vec![0.0; c];
        for p in x.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= (h * w) as f64;
        }
        Ok(Self {
            net,
            x,
            class,
            target,
            seg,
            mean,
        })
    }

    fn score(&self, keep: &[bool]) -> Result<f64> {
        let c = self.mean.len();
        let mut img = self.x.clone();
        for (p, px) in img.data_mut().chunks_exact_mut(c).enumerate() {
            if !keep[self.seg[p]] {
                px.copy_from_slice(&self.mean);
            }
        }
        self.net.score(&img, self.class, self.target)
    }

    fn broadcast(&self, coef: &[f64]) -> Tensor {
        let c = self.mean.len();
        let data = self.seg.iter().flat_map(|&s| std::iter::repeat_n(coef[s], c)).collect();
        Tensor::new(self.x.shape().to_vec(), data).expect("input-shaped")
    }
}

/// Class score of `x` with the segments where `keep` is false replaced by
/// the per-channel mean, for each coalition in `coalitions`.
pub fn segment_scores(
    net: &Network,
    x: &Tensor,
    class: usize,
    target: ScoreTarget,
    grid: Grid,
    coalitions: &[Vec<bool>],
) -> Result<Vec<f64>> {
    let s = Segmented::new(net, x, class, target, grid)?;
    coalitions.iter().map(|k| s.score(k)).collect()
}

/// Solves the symmetric positive definite system `a x = b`.
fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::SingularRegression(format!("{what}: normal equations not positive definite")))?;
    let x = chol.solve(&b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularRegression(format!("{what}: non-finite solution")))
    }
}

pub fn lime(net: &Network, x: &Tensor, class: usize, target: ScoreTarget, p: &LimeParams, seed: u64) -> Result<Tensor> {
    let s = Segmented::new(net, x, class, target, p.grid)?;
    let m = p.grid.segments();
    if p.samples < m {
        return Err(Error::config(format!("lime: samples {} < segments {m}", p.samples)));
    }
    let mut r = rng::stream(&[seed, rng::tag("lime")]);
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let mut masks = vec![vec![true; m]];
    for _ in 1..p.samples {
        masks.push((0..m).map(|_| coin.sample(&mut r)).collect());
    }
    if masks.iter().all(|z| *z == masks[0]) {
        return Err(Error::DegenerateSamples(
            "lime: every perturbation sample is identical".into(),
        ));
    }
    let n = masks.len();
    let y: Vec<f64> = masks.iter().map(|z| s.score(z)).collect::<Result<_>>()?;
    let weights: Vec<f64> = masks
        .iter()
        .map(|z| {
            let on = z.iter().filter(|&&b| b).count() as f64;
            let d = if on == 0.0 { 1.0 } else { 1.0 - (on / m as f64).sqrt() };
            (-d * d / (p.kernel_width * p.kernel_width)).exp()
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let xbar: Vec<f64> = (0..m)
        .map(|j| {
            masks
                .iter()
                .zip(&weights)
                .map(|(z, w)| w * z[j] as u8 as f64)
                .sum::<f64>()
                / wsum
        })
        .collect();
    let ybar = y.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;

    let xc = DMatrix::from_fn(n, m, |i, j| masks[i][j] as u8 as f64 - xbar[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - ybar);
    let wv = DVector::from_vec(weights);
    let xw = DMatrix::from_fn(n, m, |i, j| xc[(i, j)] * wv[i]);
    let mut a = xw.transpose() * &xc;
    for j in 0..m {
        a[(j, j)] += p.ridge_lambda;
    }
    let b = xw.transpose() * yc;
    let coef = solve_spd(a, b, "lime")?;
    Ok(s.broadcast(coef.as_slice()))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `f` with every size-`k` subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// KernelSHAP with the Shapley kernel. Coalition sizes whose full
/// enumeration fits in the budget are enumerated (smallest and largest
/// first); the remaining budget is sampled by kernel mass. Additivity,
/// `sum(phi) = f(all) - f(none)`, is imposed exactly.
pub fn kernel_shap(
    net: &Network,
    x: &Tensor,
    class: usize,
    target: ScoreTarget,
    p: &ShapParams,
    seed: u64,
) -> Result<Tensor> {
    let s = Segmented::new(net, x, class, target, p.grid)?;
    let m = p.grid.segments();
    let f_none = s.score(&vec![false; m])?;
    let f_all = s.score(&vec![true; m])?;
    let total = f_all - f_none;
    if m == 1 {
        return Ok(s.broadcast(&[total]));
    }
    let budget = if m < 63 {
        p.samples.min((1usize << m) - 2)
    } else {
        p.samples
    };

    let sizes = m.div_ceil(2).max(1).min(m - 1);
    let paired = (m - 1) / 2;
    let mut weight_vector: Vec<f64> = (1..=sizes)
        .map(|k| {
            let w = (m - 1) as f64 / (k * (m - k)) as f64;
            if k <= paired {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let wsum: f64 = weight_vector.iter().sum();
    weight_vector.iter_mut().for_each(|w| *w /= wsum);

    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut kernel: Vec<f64> = Vec::new();
    let mut full_sizes = 0;
    let mut left = budget as f64;
    let mut remaining = weight_vector.clone();
    for k in 1..=sizes {
        let mut nsub = binomial(m, k);
        if k <= paired {
            nsub *= 2.0;
        }
        if left * remaining[k - 1] / nsub < 1.0 - 1e-8 {
            break;
        }
        full_sizes += 1;
        left -= nsub;
        if remaining[k - 1] < 1.0 {
            let scale = 1.0 - remaining[k - 1];
            remaining.iter_mut().for_each(|w| *w /= scale);
        }
        let mut w = weight_vector[k - 1] / binomial(m, k);
        if k <= paired {
            w /= 2.0;
        }
        for_each_combination(m, k, |idx| {
            let mut z = vec![false; m];
            for &i in idx {
                z[i] = true;
            }
            if k <= paired {
                masks.push(z.iter().map(|b| !b).collect());
                kernel.push(w);
            }
            masks.push(z);
            kernel.push(w);
        });
    }

    let fixed = masks.len();
    let mut samples_left = budget.saturating_sub(fixed);
    if full_sizes != sizes && samples_left > 0 {
        let mut rem: Vec<f64> = weight_vector
            .iter()
            .enumerate()
            .map(|(i, &w)| if i < paired { w / 2.0 } else { w })
            .skip(full_sizes)
            .collect();
        let rsum: f64 = rem.iter().sum();
        rem.iter_mut().for_each(|w| *w /= rsum);
        let pick = WeightedIndex::new(&rem).map_err(|e| Error::DegenerateSamples(format!("kernelshap: {e}")))?;
        let mut r = rng::stream(&[seed, rng::tag("kernelshap")]);
        let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut draws = 0;
        while samples_left > 0 && draws < 4 * budget {
            draws += 1;
            let k = pick.sample(&mut r) + full_sizes + 1;
            let mut z = vec![false; m];
            for i in index::sample(&mut r, m, k) {
                z[i] = true;
            }
            let comp: Vec<bool> = z.iter().map(|b| !b).collect();
            match seen.get(&z) {
                Some(&at) => {
                    kernel[at] += 1.0;
                    if k <= paired {
                        kernel[at + 1] += 1.0;
                    }
                }
                None => {
                    seen.insert(z.clone(), masks.len());
                    masks.push(z);
                    kernel.push(1.0);
                    samples_left -= 1;
                    if k <= paired && samples_left > 0 {
                        // the complement of a fresh coalition of size < m/2 is fresh too
                        masks.push(comp);
                        kernel.push(1.0);
                        samples_left -= 1;
                    }
                }
            }
        }
        let weight_left: f64 = weight_vector[full_sizes..].iter().sum();
        let drawn: f64 = kernel[fixed..].iter().sum();
        if drawn > 0.0 {
            kernel[fixed..].iter_mut().for_each(|w| *w *= weight_left / drawn);
        }
    }

    let y: Vec<f64> = masks.iter().map(|z| s.score(z)).collect::<Result<_>>()?;
    let n = masks.len();
    let last = m - 1;
    let bit = |i: usize, j: usize| masks[i][j] as u8 as f64;
    let design = DMatrix::from_fn(n, last, |i, j| bit(i, j) - bit(i, last));
    let target_adj = DVector::from_fn(n, |i, _| y[i] - f_none - bit(i, last) * total);
    let weighted = DMatrix::from_fn(n, last, |i, j| design[(i, j)] * kernel[i]);
    let a = weighted.transpose() * &design;
    let b = weighted.transpose() * target_adj;
    let head = solve_spd(a, b, "kernelshap")?;
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(total - phi.iter().sum::<f64>());
    Ok(s.broadcast(&phi))
}

/// Exact Shapley values of the segment game by enumerating all `2^m`
/// coalitions. Exponential; meant for small grids.
pub fn exact_shapley(net: &Network, x: &Tensor, class: usize, target: ScoreTarget, grid: Grid) -> Result<Vec<f64>> {
    let s = Segmented::new(net, x, class, target, grid)?;
    let m = grid.segments();
    if m > 20 {
        return Err(Error::config(format!("exact Shapley limited to 20 segments, got {m}")));
    }
    let values: Vec<f64> = (0..1usize << m)
        .map(|bits| s.score(&(0..m).map(|j| bits >> j & 1 == 1).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut phi = vec![0.0; m];
    for (bits, &v) in values.iter().enumerate() {
        let size = bits.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if bits >> j & 1 == 0 {
                let w = fact(size) * fact(m - size - 1) / fact(m);
                *p += w * (values[bits | 1 << j] - v);
            }
        }
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_map_tiles_evenly() {
        let g = Grid { rows: 2, cols: 3 };
        let map = g.segment_map(4, 6).unwrap();
        assert_eq!(&map[..6], &[0, 0, 1, 1, 2, 2]);
        assert_eq!(&map[18..], &[3, 3, 4, 4, 5, 5]);
        assert!(Grid { rows: 5, cols: 1 }.segment_map(4, 4).is_err());
    }

    #[test]
    fn combinations_enumerate_binomially() {
        let mut count = 0;
        let mut last = Vec::new();
        for_each_combination(6, 3, |c| {
            count += 1;
            last = c.to_vec();
        });
        assert_eq!(count, 20);
        assert_eq!(last, vec![3, 4, 5]);
        assert_eq!(binomial(12, 6), 924.0);
    }
}
