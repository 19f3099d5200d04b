//! Datasets that carry the data-contamination bugs: procedurally drawn
//! shapes with exact object masks, class-mapped spurious backgrounds, label
//! flipping, IDX ingestion and a small binary container for caching.
//!
//! Every mutating operation appends a [`Mutation`] to the dataset's
//! [`Provenance`]; [`Provenance::replay`] rebuilds the dataset from its
//! generator and reproduces it exactly.

mod container;
mod glyphs;
mod idx;
mod labels;
mod shapes;
mod spurious;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use container::{dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset};
pub use glyphs::gen_glyphs;
pub use idx::{load_idx, load_idx_with, parse_idx, write_idx, IdxOptions, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use labels::{flip_labels, flip_labels_at};
pub use shapes::{gen_shapes, neutral_backdrop, SHAPE_NAMES};
pub use spurious::{compose_spurious, compose_spurious_at, texture, SpuriousSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageExample {
    /// `[height, width, channels]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// `[height, width]`, 1 on object pixels.
    pub object_mask: Option<Tensor>,
    /// Texture id of a composed spurious background.
    pub background_id: Option<u32>,
    /// The background render without the object, when known.
    pub backdrop: Option<Tensor>,
}

/// Where a dataset's examples originally came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Source {
    Shapes {
        seed: u64,
        n: usize,
        classes: usize,
        image_size: usize,
    },
    Glyphs {
        seed: u64,
        n: usize,
        image_size: usize,
    },
    Blobs {
        seed: u64,
        n: usize,
        separation: f64,
    },
    Idx {
        images: String,
        labels: String,
        channels: usize,
        classes: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub index: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Spurious { spec: SpuriousSpec, indices: Vec<usize> },
    FlipLabels { seed: u64, flips: Vec<Flip> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub split: Split,
    pub mutations: Vec<Mutation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<ImageExample>,
    pub classes: usize,
    pub split: Split,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self.provenance.split = split;
        self
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.examples.first().map(|e| e.image.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// Copy where every image is replaced by its object-free backdrop.
    pub fn backgrounds_only(&self) -> Result<LabeledDataset> {
        let mut out = self.clone();
        for (i, ex) in out.examples.iter_mut().enumerate() {
            let bg = ex
                .backdrop
                .clone()
                .ok_or_else(|| Error::MissingComponent(format!("backdrop of example {i}")))?;
            ex.image = bg;
            if let Some(m) = ex.object_mask.as_mut() {
                m.data_mut().fill(0.0);
            }
        }
        Ok(out)
    }

    /// Deterministic sample of `k` example indices (all of them when
    /// `k >= len`), in ascending order.
    pub fn sample_indices(&self, k: usize, seed: u64) -> Vec<usize> {
        use rand::seq::index;
        let n = self.examples.len();
        if k >= n {
            return (0..n).collect();
        }
        let mut v = index::sample(&mut rng::stream(&[seed, rng::tag("sample-indices")]), n, k).into_vec();
        v.sort_unstable();
        v
    }
}

impl Source {
    /// Builds the unmutated dataset this source describes.
    pub fn generate(&self) -> Result<LabeledDataset> {
        match self {
            Source::Shapes {
                seed,
                n,
                classes,
                image_size,
            } => gen_shapes(*seed, *n, *classes, *image_size),
            Source::Glyphs { seed, n, image_size } => gen_glyphs(*seed, *n, *image_size),
            Source::Blobs { seed, n, separation } => gen_blobs(*seed, *n, *separation),
            Source::Idx {
                images,
                labels,
                channels,
                classes,
            } => load_idx_with(
                images,
                labels,
                &IdxOptions {
                    channels: *channels,
                    classes: *classes,
                },
            ),
        }
    }
}

impl Provenance {
    /// Regenerates the dataset from its source and re-applies every
    /// recorded mutation in order.
    pub fn replay(&self) -> Result<LabeledDataset> {
        let mut ds = self.source.generate()?.with_split(self.split);
        for m in &self.mutations {
            ds = match m {
                Mutation::Spurious { spec, indices } => compose_spurious_at(&ds, spec, indices)?,
                Mutation::FlipLabels { seed, flips } => {
                    let idx: Vec<usize> = flips.iter().map(|f| f.index).collect();
                    flip_labels_at(&ds, &idx, *seed)?
                }
            };
        }
        Ok(ds)
    }
}

/// Background mask: 1 on background pixels, 0 on object pixels.
pub fn gt1_mask(ex: &ImageExample) -> Result<Tensor> {
    let mask = ex.object_mask.as_ref().ok_or(Error::MissingMask { index: 0 })?;
    Ok(mask.map(|m| 1.0 - m))
}

/// Two Gaussian blobs in the plane, centred `separation` apart on the x
/// axis with unit variance. Labels alternate.
pub fn gen_blobs(seed: u64, n: usize, separation: f64) -> Result<LabeledDataset> {
    use rand_distr::{Distribution, StandardNormal};
    if n < 2 {
        return Err(Error::config("blobs need at least 2 examples"));
    }
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let mut r = rng::stream(&[seed, i as u64, rng::tag("blob")]);
            let cx = if label == 0 {
                -separation / 2.0
            } else {
                separation / 2.0
            };
            let x: f64 = StandardNormal.sample(&mut r);
            let y: f64 = StandardNormal.sample(&mut r);
            ImageExample {
                image: Tensor::from_vec(vec![cx + x, y]),
                label,
                object_mask: None,
                background_id: None,
                backdrop: None,
            }
        })
        .collect();
    Ok(LabeledDataset {
        examples,
        classes: 2,
        split: Split::Train,
        provenance: Provenance {
            source: Source::Blobs { seed, n, separation },
            split: Split::Train,
            mutations: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gt1_partitions_with_mask() {
        let ds = gen_shapes(3, 4, 2, 16).unwrap();
        for ex in &ds.examples {
            let gt1 = gt1_mask(ex).unwrap();
            let mask = ex.object_mask.as_ref().unwrap();
            assert!(gt1.data().iter().zip(mask.data()).all(|(a, b)| a + b == 1.0));
        }
    }

    #[test]
    fn gt1_extremes() {
        let ds = gen_shapes(3, 2, 2, 16).unwrap();
        let mut ex = ds.examples[0].clone();
        ex.object_mask.as_mut().unwrap().data_mut().fill(1.0);
        assert!(gt1_mask(&ex).unwrap().data().iter().all(|&v| v == 0.0));
        ex.object_mask.as_mut().unwrap().data_mut().fill(0.0);
        assert!(gt1_mask(&ex).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn replay_reproduces_mutated_dataset() {
        let base = gen_shapes(5, 40, 2, 16).unwrap();
        let spec = SpuriousSpec::new(vec![0, 1], 0.5, 9);
        let ds = compose_spurious(&base, &spec).unwrap();
        let ds = flip_labels(&ds, 0.1, 4).unwrap();
        assert_eq!(ds.provenance.mutations.len(), 2);
        assert_eq!(ds.provenance.replay().unwrap(), ds);
    }

    #[test]
    fn sample_indices_are_sorted_and_stable() {
        let ds = gen_blobs(1, 50, 4.0).unwrap();
        let a = ds.sample_indices(10, 3);
        assert_eq!(a, ds.sample_indices(10, 3));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ds.sample_indices(100, 3).len(), 50);
    }
}
