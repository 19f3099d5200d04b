use rand::Rng;

use super::{ImageExample, LabeledDataset, Provenance, Source, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Segments lit per digit, in `a b c d e f g` order (top, top-right,
/// bottom-right, bottom, bottom-left, top-left, middle).
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// Seven-segment digits, white strokes on black, single channel. Pixel
/// values lie on the `k / 255` grid so the set round-trips through IDX.
pub fn gen_glyphs(seed: u64, n: usize, image_size: usize) -> Result<LabeledDataset> {
    if image_size < 16 {
        return Err(Error::config(format!("image size must be >= 16, got {image_size}")));
    }
    if n < 10 {
        return Err(Error::config(format!("need at least one example per digit, got n={n}")));
    }
    let s = image_size as i64;
    let examples = (0..n)
        .map(|i| {
            let label = i % 10;
            let mut r = rng::stream(&[seed, i as u64, rng::tag("glyph")]);
            let t = (s / 8).max(2);
            let bw = s / 2 + r.random_range(-1..=1);
            let bh = s * 3 / 4 + r.random_range(-1..=1);
            let x0 = (s - bw) / 2 + r.random_range(-2..=2);
            let y0 = (s - bh) / 2 + r.random_range(-2..=2);
            let ym = y0 + bh / 2;
            let ink: u8 = r.random_range(200..=255);
            // (x_lo, x_hi, y_lo, y_hi), inclusive-exclusive
            let rects = [
                (x0, x0 + bw, y0, y0 + t),
                (x0 + bw - t, x0 + bw, y0, ym + t / 2),
                (x0 + bw - t, x0 + bw, ym - t / 2, y0 + bh),
                (x0, x0 + bw, y0 + bh - t, y0 + bh),
                (x0, x0 + t, ym - t / 2, y0 + bh),
                (x0, x0 + t, y0, ym + t / 2),
                (x0, x0 + bw, ym - t / 2, ym - t / 2 + t),
            ];
            let mut data = vec![0.0; image_size * image_size];
            for (seg, &(xl, xh, yl, yh)) in rects.iter().enumerate() {
                if !SEGMENTS[label][seg] {
                    continue;
                }
                for y in yl.max(0)..yh.min(s) {
                    for x in xl.max(0)..xh.min(s) {
                        data[(y * s + x) as usize] = ink as f64 / 255.0;
                    }
                }
            }
            ImageExample {
                image: Tensor::new(vec![image_size, image_size, 1], data).expect("sized buffer"),
                label,
                object_mask: Some(Tensor::filled(&[image_size, image_size], 1.0)),
                background_id: None,
                backdrop: None,
            }
        })
        .collect();
    Ok(LabeledDataset {
        examples,
        classes: 10,
        split: Split::Train,
        provenance: Provenance {
            source: Source::Glyphs { seed, n, image_size },
            split: Split::Train,
            mutations: Vec::new(),
        },
    })
}
