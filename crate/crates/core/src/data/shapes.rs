use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ImageExample, LabeledDataset, Provenance, Source, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const SHAPE_NAMES: [&str; 6] = ["disc", "cross", "triangle", "ring", "square", "diamond"];

/// Membership test in shape-local coordinates, where the shape fits the
/// unit square `[-1, 1]^2`.
fn inside(shape: usize, u: f64, v: f64) -> bool {
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        2 => (-1.0..=0.8).contains(&v) && u.abs() <= (v + 1.0) / 1.8,
        3 => {
            let r2 = u * u + v * v;
            (0.3025..=1.0).contains(&r2)
        }
        4 => u.abs() <= 0.8 && v.abs() <= 0.8,
        5 => u.abs() + v.abs() <= 1.0,
        _ => unreachable!("shape index checked by caller"),
    }
}

/// Grey, low-contrast texture: a smooth field from two random gratings
/// plus per-pixel noise. All channels equal.
pub fn neutral_backdrop(size: usize, r: &mut ChaCha8Rng) -> Tensor {
    let base: f64 = r.random_range(0.4..0.6);
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            let theta = r.random_range(0.0..std::f64::consts::PI);
            let freq = r.random_range(0.5..2.0);
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            (theta, freq, phase)
        })
        .collect();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let mut v = base;
            for &(theta, freq, phase) in &waves {
                let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) / size as f64;
                v += 0.05 * (std::f64::consts::TAU * freq * t + phase).sin();
            }
            v += r.random_range(-0.02..0.02);
            let v = v.clamp(0.0, 1.0);
            data.extend_from_slice(&[v, v, v]);
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("sized buffer")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn draw_example(seed: u64, index: usize, label: usize, size: usize) -> ImageExample {
    let mut r = rng::stream(&[seed, index as u64, rng::tag("shape")]);
    let backdrop = neutral_backdrop(size, &mut r);
    let s = size as f64;
    let radius = r.random_range(0.22 * s..0.34 * s);
    let lo = radius + 0.5;
    let hi = s - radius - 0.5;
    let cy = r.random_range(lo..hi);
    let cx = r.random_range(lo..hi);
    let color = hsv_to_rgb(
        r.random_range(0.0..1.0),
        r.random_range(0.6..1.0),
        r.random_range(0.6..1.0),
    );

    let mut image = backdrop.clone();
    let mut mask = Tensor::zeros(&[size, size]);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5 - cx) / radius;
            let v = (y as f64 + 0.5 - cy) / radius;
            if inside(label, u, v) {
                mask.data_mut()[y * size + x] = 1.0;
                image.data_mut()[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    ImageExample {
        image,
        label,
        object_mask: Some(mask),
        background_id: None,
        backdrop: Some(backdrop),
    }
}

/// Coloured shapes (`SHAPE_NAMES[label]`) at random position and scale on
/// a neutral backdrop. Labels cycle `0, 1, .., classes-1`, so class counts
/// differ by at most one.
pub fn gen_shapes(seed: u64, n: usize, classes: usize, image_size: usize) -> Result<LabeledDataset> {
    if classes < 2 || classes > SHAPE_NAMES.len() {
        return Err(Error::config(format!(
            "shapes classes must be in 2..={}, got {classes}",
            SHAPE_NAMES.len()
        )));
    }
    if image_size < 16 {
        return Err(Error::config(format!("image size must be >= 16, got {image_size}")));
    }
    if n < classes {
        return Err(Error::config(format!(
            "need at least one example per class: n={n} < classes={classes}"
        )));
    }
    let examples = (0..n).map(|i| draw_example(seed, i, i % classes, image_size)).collect();
    Ok(LabeledDataset {
        examples,
        classes,
        split: Split::Train,
        provenance: Provenance {
            source: Source::Shapes {
                seed,
                n,
                classes,
                image_size,
            },
            split: Split::Train,
            mutations: Vec::new(),
        },
    })
}
