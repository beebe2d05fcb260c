//! Image-side label oracle: normalized cross-correlation of each class's
//! glyph template bank against that class's zone.

use super::glyphs::{glyph_template, zone_rect, GLYPH_SHAPES, GLYPH_SIZES};
use crate::vision::Image;

/// Peak normalized cross-correlation of `template` (side×side) over the
/// given rectangle. Flat windows score 0.
fn peak_ncc(img: &Image, template: &[f64], side: usize, y0: usize, x0: usize, zh: usize, zw: usize) -> f64 {
    if zh < side || zw < side {
        return 0.0;
    }
    let n = (side * side) as f64;
    let t_mean = template.iter().sum::<f64>() / n;
    let t_dev: Vec<f64> = template.iter().map(|v| v - t_mean).collect();
    let t_norm = t_dev.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm == 0.0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for wy in y0..=y0 + zh - side {
        for wx in x0..=x0 + zw - side {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut cross = 0.0;
            for dy in 0..side {
                for dx in 0..side {
                    let v = img.get(wy + dy, wx + dx);
                    sum += v;
                    sum_sq += v * v;
                    cross += v * t_dev[dy * side + dx];
                }
            }
            let w_mean = sum / n;
            let w_var = sum_sq - sum * w_mean;
            if w_var <= 1e-12 {
                continue;
            }
            // Σ(w−w̄)(t−t̄) = Σ w·t_dev because Σ t_dev = 0
            let ncc = cross / (w_var.sqrt() * t_norm);
            if ncc > best {
                best = ncc;
            }
        }
    }
    best
}

/// Best template-bank correlation for class `k` within its zone.
pub fn class_score(img: &Image, k: usize) -> f64 {
    let (y0, x0, zh, zw) = zone_rect(k, img.h, img.w);
    let shape = GLYPH_SHAPES[k];
    let mut best = 0.0f64;
    for size in GLYPH_SIZES {
        let (side, template) = glyph_template(shape, size);
        let s = peak_ncc(img, &template, side, y0, x0, zh, zw);
        if s > best {
            best = s;
        }
    }
    best
}

/// Presence vector: class k is present iff its peak correlation ≥ `tau`.
pub fn oracle_labels_from_image(img: &Image, num_classes: usize, tau: f64) -> Vec<bool> {
    (0..num_classes).map(|k| class_score(img, k) >= tau).collect()
}
