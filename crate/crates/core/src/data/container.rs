//! Dataset cache files.
//!
//! All integers little-endian.
//!
//! ```text
//! magic       4 bytes  "DBDS"
//! version     u32      = 1
//! provenance  u32 length, then UTF-8 JSON
//! classes     u32
//! count       u32
//! rank        u32, then `rank` x u32 image dims (shared by all examples)
//! examples    per example:
//!               label u32
//!               background id i64 (-1 when absent)
//!               flags u8: bit 0 mask present, bit 1 backdrop present
//!               image f64 x product(dims)
//!               mask  u8 x (H*W) of 0/1, if flagged
//!               backdrop f64 x product(dims), if flagged
//! ```
//!
//! The split tag is part of the provenance record.

use std::path::Path;

use super::{ImageExample, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DBDS";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                what: "dataset file".into(),
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn dataset_to_bytes(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let dims: Vec<usize> = ds.image_shape().map(<[usize]>::to_vec).unwrap_or_default();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let prov = serde_json::to_vec(&ds.provenance).map_err(|e| Error::Parse {
        what: "provenance".into(),
        message: e.to_string(),
    })?;
    put_u32(&mut out, prov.len());
    out.extend_from_slice(&prov);
    put_u32(&mut out, ds.classes);
    put_u32(&mut out, ds.len());
    put_u32(&mut out, dims.len());
    for &d in &dims {
        put_u32(&mut out, d);
    }
    for ex in &ds.examples {
        if ex.image.shape() != dims.as_slice() {
            return Err(Error::ShapesDiffer {
                left: dims.clone(),
                right: ex.image.shape().to_vec(),
            });
        }
        put_u32(&mut out, ex.label);
        out.extend_from_slice(&ex.background_id.map_or(-1i64, i64::from).to_le_bytes());
        out.push(ex.object_mask.is_some() as u8 | (ex.backdrop.is_some() as u8) << 1);
        put_f64s(&mut out, ex.image.data());
        if let Some(m) = &ex.object_mask {
            out.extend(m.data().iter().map(|&v| (v != 0.0) as u8));
        }
        if let Some(b) = &ex.backdrop {
            put_f64s(&mut out, b.data());
        }
    }
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "dataset file".into(),
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
        });
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            what: "dataset file".into(),
            found: version,
            supported: VERSION,
        });
    }
    let plen = r.u32()?;
    let provenance: Provenance = serde_json::from_slice(r.take(plen)?).map_err(|e| Error::Parse {
        what: "dataset provenance".into(),
        message: e.to_string(),
    })?;
    let classes = r.u32()?;
    let count = r.u32()?;
    let rank = r.u32()?;
    let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let len: usize = dims.iter().product();
    let plane = if rank == 3 { dims[0] * dims[1] } else { len };
    let mut examples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let label = r.u32()?;
        let bg = i64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let flags = r.take(1)?[0];
        let image = Tensor::new(dims.clone(), r.f64s(len)?)?;
        let object_mask = if flags & 1 != 0 {
            let m = r.take(plane)?.iter().map(|&b| b as f64).collect();
            Some(Tensor::new(dims[..dims.len().min(2)].to_vec(), m)?)
        } else {
            None
        };
        let backdrop = if flags & 2 != 0 {
            Some(Tensor::new(dims.clone(), r.f64s(len)?)?)
        } else {
            None
        };
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        examples.push(ImageExample {
            image,
            label,
            object_mask,
            background_id: u32::try_from(bg).ok(),
            backdrop,
        });
    }
    Ok(LabeledDataset {
        examples,
        classes,
        split: provenance.split,
        provenance,
    })
}

pub fn write_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_bytes(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    dataset_from_bytes(&bytes)
}
