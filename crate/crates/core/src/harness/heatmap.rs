//! Binary PGM (P5) and PPM (P6) heatmaps of normalized maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{NormMode, NormalizedMap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    /// P5, one byte per pixel.
    Grayscale,
    /// P6, `v -> (255, 255 (1 - v), 255 (1 - v))`.
    #[default]
    WhiteRed,
}

impl Palette {
    pub fn extension(self) -> &'static str {
        match self {
            Palette::Grayscale => "pgm",
            Palette::WhiteRed => "ppm",
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a normalized map. Signed maps are shifted to `(v + 1) / 2`.
pub fn heatmap_bytes(map: &NormalizedMap, palette: Palette) -> Result<Vec<u8>> {
    let (h, w) = match *map.values.shape() {
        [h, w] => (h, w),
        [h, w, 1] => (h, w),
        _ => {
            return Err(Error::config(format!(
                "heatmaps need a single-channel plane, got shape {:?}",
                map.values.shape()
            )))
        }
    };
    let unit = |v: f64| match map.mode {
        NormMode::Unsigned => v,
        NormMode::Signed => (v + 1.0) / 2.0,
    };
    let magic = match palette {
        Palette::Grayscale => "P5",
        Palette::WhiteRed => "P6",
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for &v in map.values.data() {
        let q = quantize(unit(v));
        match palette {
            Palette::Grayscale => out.push(q),
            Palette::WhiteRed => out.extend_from_slice(&[255, 255 - q, 255 - q]),
        }
    }
    Ok(out)
}

pub fn export_heatmap(map: &NormalizedMap, path: impl AsRef<Path>, palette: Palette) -> Result<()> {
    let path = path.as_ref();
    let bytes = heatmap_bytes(map, palette)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse {
        what: "PGM".into(),
        message: message.into(),
    }
}

/// Decodes a binary PGM (maxval 255) into `[H, W]` values in `[0, 1]`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| parse_err("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(parse_err(format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(format!("bad header number `{s}`")))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(parse_err(format!("only maxval 255 is supported, found {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    if raster.len() < w * h {
        return Err(Error::Truncated {
            what: "PGM raster".into(),
            expected: w * h,
            actual: raster.len(),
        });
    }
    Tensor::new(vec![h, w], raster[..w * h].iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    parse_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
