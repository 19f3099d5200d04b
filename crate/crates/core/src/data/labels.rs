use rand::seq::index;
use rand::Rng;

use super::{Flip, LabeledDataset, Mutation};
use crate::error::{Error, Result};
use crate::rng;

/// Assigns a different, uniformly chosen label to exactly
/// `round(fraction * n)` examples picked by `seed`.
pub fn flip_labels(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!(
            "flip fraction must be in [0, 1], got {fraction}"
        )));
    }
    let n = ds.len();
    let k = (fraction * n as f64).round() as usize;
    let mut idx = index::sample(&mut rng::stream(&[seed, rng::tag("flip-subset")]), n, k).into_vec();
    idx.sort_unstable();
    flip_labels_at(ds, &idx, seed)
}

/// Flips the labels at `indices`. The new label of example `i` depends
/// only on `i`, its current label and `seed`.
pub fn flip_labels_at(ds: &LabeledDataset, indices: &[usize], seed: u64) -> Result<LabeledDataset> {
    if ds.classes < 2 {
        return Err(Error::SingleClass);
    }
    let mut out = ds.clone();
    let mut flips = Vec::with_capacity(indices.len());
    for &i in indices {
        let ex = out
            .examples
            .get_mut(i)
            .ok_or_else(|| Error::config(format!("flip index {i} out of range for {} examples", ds.len())))?;
        let from = ex.label;
        let mut r = rng::stream(&[seed, i as u64, rng::tag("flip-label")]);
        let mut to = r.random_range(0..ds.classes - 1);
        if to >= from {
            to += 1;
        }
        ex.label = to;
        flips.push(super::Flip { index: i, from, to });
    }
    out.provenance.mutations.push(Mutation::FlipLabels { seed, flips });
    Ok(out)
}

impl LabeledDataset {
    /// Indices flipped by any recorded label mutation, in application order.
    pub fn flipped_indices(&self) -> Vec<usize> {
        self.provenance
            .mutations
            .iter()
            .filter_map(|m| match m {
                Mutation::FlipLabels { flips, .. } => Some(flips.iter().map(|f: &Flip| f.index)),
                _ => None,
            })
            .flatten()
            .collect()
    }
}
