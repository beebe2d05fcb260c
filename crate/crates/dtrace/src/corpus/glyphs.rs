//! Glyph shapes, per-class zones, and rendering.
//!
//! Each finding class owns one glyph shape and one rectangular zone of the
//! image; glyphs are drawn only inside their zone, so image-side detection
//! never has to disambiguate classes spatially.

use crate::vision::Image;

/// Template sizes rendered and searched for. Odd so shapes are symmetric.
pub const GLYPH_SIZES: [usize; 3] = [9, 11, 13];
/// Glyphs keep this many pixels clear of the zone border.
pub const ZONE_MARGIN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlyphShape {
    Disc,
    Square,
    HBar,
    VBar,
    Cross,
    Wedge,
}

pub const GLYPH_SHAPES: [GlyphShape; 6] = [
    GlyphShape::Disc,
    GlyphShape::Square,
    GlyphShape::HBar,
    GlyphShape::VBar,
    GlyphShape::Cross,
    GlyphShape::Wedge,
];

/// Zone rectangle (y0, x0, height, width) for class `k` on an h×w canvas.
/// Layout is a 3-row, 2-column grid in class order.
pub fn zone_rect(k: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let row = k / 2;
    let col = k % 2;
    let zh = h / 3;
    let zw = w / 2;
    let y0 = row * zh;
    let x0 = col * zw;
    let height = if row == 2 { h - 2 * zh } else { zh };
    let width = if col == 1 { w - zw } else { zw };
    (y0, x0, height, width)
}

/// Binary glyph mask of side `size`.
pub fn glyph_mask(shape: GlyphShape, size: usize) -> Vec<bool> {
    let c = (size - 1) as f64 / 2.0;
    let r = c;
    let bar = (size / 4).max(1);
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let on = match shape {
                GlyphShape::Disc => dy * dy + dx * dx <= r * r + 0.25,
                GlyphShape::Square => true,
                GlyphShape::HBar => dy.abs() <= bar as f64 / 2.0 + 0.25,
                GlyphShape::VBar => dx.abs() <= bar as f64 / 2.0 + 0.25,
                GlyphShape::Cross => {
                    dy.abs() <= bar as f64 / 2.0 + 0.25 || dx.abs() <= bar as f64 / 2.0 + 0.25
                }
                GlyphShape::Wedge => x <= y,
            };
            mask[y * size + x] = on;
        }
    }
    mask
}

/// Glyph mask embedded in a one-pixel zero border, as `f64` values.
/// The border keeps the template non-constant (required by the detector's
/// normalized correlation) and matches the blank background around a
/// rendered glyph.
pub fn glyph_template(shape: GlyphShape, size: usize) -> (usize, Vec<f64>) {
    let side = size + 2;
    let mask = glyph_mask(shape, size);
    let mut t = vec![0.0; side * side];
    for y in 0..size {
        for x in 0..size {
            if mask[y * size + x] {
                t[(y + 1) * side + (x + 1)] = 1.0;
            }
        }
    }
    (side, t)
}

/// Draw a glyph with its top-left at (y, x), clamping into [0,1].
pub fn draw_glyph(img: &mut Image, shape: GlyphShape, size: usize, y: usize, x: usize, amplitude: f64) {
    let mask = glyph_mask(shape, size);
    for dy in 0..size {
        for dx in 0..size {
            if mask[dy * size + dx] {
                let v = (img.get(y + dy, x + dx) + amplitude).min(1.0);
                img.set(y + dy, x + dx, v);
            }
        }
    }
}

/// Legal top-left placement range (inclusive) for a glyph of `size` inside
/// class `k`'s zone, or None when the zone is too small.
pub fn placement_range(k: usize, size: usize, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let (y0, x0, zh, zw) = zone_rect(k, h, w);
    if zh < size + 2 * ZONE_MARGIN || zw < size + 2 * ZONE_MARGIN {
        return None;
    }
    Some((y0 + ZONE_MARGIN, x0 + ZONE_MARGIN, zh - size - 2 * ZONE_MARGIN, zw - size - 2 * ZONE_MARGIN))
}
