//! Procedural glyph dataset: one class-defining glyph per image, placed
//! with positional jitter over a textured noise background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GLYPHS: [&str; 8] = [
    "hbar", "vbar", "cross", "blob", "corner", "diagonal", "ring", "tee",
];

/// Whether glyph `class` covers cell `(r, c)` of a `g x g` stamp.
fn glyph_cell(class: usize, g: usize, r: usize, c: usize) -> bool {
    let mid = g / 2;
    let near = |a: usize, b: usize| a.abs_diff(b) <= g / 8;
    match class {
        0 => near(r, mid),
        1 => near(c, mid),
        2 => near(r, mid) || near(c, mid),
        3 => {
            let (dr, dc) = (r as f64 - mid as f64, c as f64 - mid as f64);
            dr * dr + dc * dc <= (g as f64 / 3.0).powi(2)
        }
        4 => near(r, g - 1 - g / 8) || near(c, g / 8),
        5 => r.abs_diff(c) <= g / 8,
        6 => r == 0 || c == 0 || r == g - 1 || c == g - 1,
        7 => near(r, g / 8) || (near(c, mid) && r > g / 8),
        _ => unreachable!("validated class range"),
    }
}

pub fn gen_shapes(n: usize, size: usize, classes: usize, seed: u64) -> Result<LabeledDataset> {
    if !(2..=GLYPHS.len()).contains(&classes) {
        return Err(Error::InvalidArgument(format!(
            "classes must lie in [2, {}], got {classes}",
            GLYPHS.len()
        )));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("size must be at least 8, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = size / 2 + 1;
    let jitter = (size / 16).max(1) as i64;
    let base = ((size - g) / 2) as i64;
    let plane = size * size;
    let mut data = vec![0.0; n * plane];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_mut(plane).enumerate() {
        // Balanced: class sequence repeats, ids stay stable for a given seed.
        let class = i % classes;
        labels.push(class);
        let level = rng.random_range(0.1..0.7);
        for v in img.iter_mut() {
            *v = level * rng.random_range(0.0..1.0);
        }
        let mut place = || {
            let offset = rng.random_range(-jitter..=jitter);
            (base + offset).clamp(0, (size - g) as i64) as usize
        };
        let (top, left) = (place(), place());
        // Faint glyphs over bright backgrounds keep a few percent of samples ambiguous.
        let intensity = rng.random_range(0.2..1.0);
        for r in 0..g {
            for c in 0..g {
                let (y, x) = (top + r, left + c);
                if y < size && x < size && glyph_cell(class, g, r, c) {
                    let v: &mut f64 = &mut img[y * size + x];
                    *v = v.max(intensity);
                }
            }
        }
    }
    let images = Tensor::new(vec![n, 1, size, size], data)?;
    let ids = (0..n).map(|i| format!("shapes-{seed}-{i:06}")).collect();
    LabeledDataset::new(images, labels, ids, classes)
}
