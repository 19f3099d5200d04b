//! IDX files: a big-endian u32 magic (`0x00000803` for u8 image stacks,
//! `0x00000801` for u8 label vectors), one big-endian u32 per dimension,
//! then the raw bytes.

use std::path::Path;

use super::{ImageExample, LabeledDataset, Provenance, Source, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxOptions {
    /// 1 keeps grayscale; 3 replicates the grey channel.
    pub channels: usize,
    /// Class count; defaults to `max label + 1` (at least 2).
    pub classes: Option<usize>,
}

impl Default for IdxOptions {
    fn default() -> Self {
        Self {
            channels: 1,
            classes: None,
        }
    }
}

/// Parses one IDX buffer, returning its dims and payload.
pub fn parse_idx<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let truncated = |expected: usize| Error::Truncated {
        what: what.to_string(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(Error::BadMagic {
            what: what.to_string(),
            expected: magic,
            found,
        });
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().expect("4 bytes")) as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    Ok((dims, &bytes[header..expected]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_idx_with(images_path, labels_path, &IdxOptions::default())
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255 and every
/// example's object mask covers the whole image.
pub fn load_idx_with(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    opts: &IdxOptions,
) -> Result<LabeledDataset> {
    if opts.channels != 1 && opts.channels != 3 {
        return Err(Error::config(format!(
            "IDX channels must be 1 or 3, got {}",
            opts.channels
        )));
    }
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = read(ip)?;
    let lbytes = read(lp)?;
    let (idims, pixels) = parse_idx(&ibytes, IDX_IMAGES_MAGIC, "IDX images")?;
    let (ldims, labels) = parse_idx(&lbytes, IDX_LABELS_MAGIC, "IDX labels")?;
    let (n, rows, cols) = (idims[0], idims[1], idims[2]);
    if ldims[0] != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: ldims[0],
        });
    }
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let classes = opts.classes.unwrap_or((max_label + 1).max(2));
    if max_label >= classes {
        return Err(Error::LabelOutOfRange {
            label: max_label,
            classes,
        });
    }
    let c = opts.channels;
    let plane = rows * cols;
    let examples = (0..n)
        .map(|i| {
            let src = &pixels[i * plane..(i + 1) * plane];
            let mut data = Vec::with_capacity(plane * c);
            for &p in src {
                let v = p as f64 / 255.0;
                for _ in 0..c {
                    data.push(v);
                }
            }
            ImageExample {
                image: Tensor::new(vec![rows, cols, c], data).expect("sized buffer"),
                label: labels[i] as usize,
                object_mask: Some(Tensor::filled(&[rows, cols], 1.0)),
                background_id: None,
                backdrop: None,
            }
        })
        .collect();
    Ok(LabeledDataset {
        examples,
        classes,
        split: Split::Train,
        provenance: Provenance {
            source: Source::Idx {
                images: ip.display().to_string(),
                labels: lp.display().to_string(),
                channels: c,
                classes: opts.classes,
            },
            split: Split::Train,
            mutations: Vec::new(),
        },
    })
}

fn quantize(v: f64) -> Result<u8> {
    let q = (v * 255.0).round();
    if !(0.0..=255.0).contains(&q) || (q / 255.0 - v).abs() > 1e-9 {
        return Err(Error::config(format!(
            "pixel value {v} is not a multiple of 1/255 in [0, 1]"
        )));
    }
    Ok(q as u8)
}

/// Writes single-channel images (or the first channel of multi-channel
/// ones) and labels as an IDX pair. Pixel values must be `k / 255`.
pub fn write_idx(ds: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols, _) = ds.examples.first().ok_or(Error::EmptyDataset)?.image.hwc();
    let mut img = Vec::with_capacity(16 + ds.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), rows, cols] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for ex in &ds.examples {
        let (h, w, c) = ex.image.hwc();
        if (h, w) != (rows, cols) {
            return Err(Error::ShapesDiffer {
                left: vec![rows, cols],
                right: vec![h, w],
            });
        }
        for p in 0..h * w {
            img.push(quantize(ex.image.data()[p * c])?);
        }
        lab.push(u8::try_from(ex.label).map_err(|_| Error::config(format!("label {} does not fit a byte", ex.label)))?);
    }
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    std::fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    std::fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}
