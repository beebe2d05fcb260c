//! Patchification, patch masking, and inverse assembly for image
//! reconstruction. Row-major patch order is the canonical position index
//! shared by mask plans, the visual encoder, and the visual decoder.

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::round_half_up;

/// H×W grayscale image, intensities in [0,1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, pixels: vec![0.0; h * w] }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.pixels[y * self.w + x] = v;
    }
}

/// Flattened P×P patches in row-major patch order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub p: usize,
    pub h: usize,
    pub w: usize,
    /// n_patches × p² values; patch (gy,gx) is row gy·(w/p)+gx.
    pub patches: Vec<f64>,
}

impl PatchGrid {
    pub fn n_patches(&self) -> usize {
        (self.h / self.p) * (self.w / self.p)
    }

    pub fn patch(&self, idx: usize) -> &[f64] {
        let len = self.p * self.p;
        &self.patches[idx * len..(idx + 1) * len]
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VisionError {
    #[error("image {h}x{w} is not divisible by patch size {p}")]
    NotDivisible { h: usize, w: usize, p: usize },
    #[error("mask plan covers {plan} patches but grid has {grid}")]
    PlanMismatch { plan: usize, grid: usize },
}

/// Sampled patch mask for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMaskPlan {
    pub alpha: f64,
    pub n_patches: usize,
    /// sorted, strictly increasing
    pub masked_patch_ids: Vec<usize>,
}

impl PatchMaskPlan {
    pub fn is_masked(&self, idx: usize) -> bool {
        self.masked_patch_ids.binary_search(&idx).is_ok()
    }

    pub fn visible_ids(&self) -> Vec<usize> {
        (0..self.n_patches).filter(|i| !self.is_masked(*i)).collect()
    }
}

pub fn patchify(img: &Image, p: usize) -> Result<PatchGrid, VisionError> {
    if p == 0 || img.h % p != 0 || img.w % p != 0 {
        return Err(VisionError::NotDivisible { h: img.h, w: img.w, p });
    }
    let gw = img.w / p;
    let gh = img.h / p;
    let mut patches = Vec::with_capacity(gh * gw * p * p);
    for gy in 0..gh {
        for gx in 0..gw {
            for dy in 0..p {
                for dx in 0..p {
                    patches.push(img.get(gy * p + dy, gx * p + dx));
                }
            }
        }
    }
    Ok(PatchGrid { p, h: img.h, w: img.w, patches })
}

pub fn unpatchify(grid: &PatchGrid) -> Image {
    let mut img = Image::new(grid.h, grid.w);
    let gw = grid.w / grid.p;
    let p = grid.p;
    for (idx, gy, gx) in (0..grid.n_patches()).map(|i| (i, i / gw, i % gw)) {
        let patch = grid.patch(idx);
        for dy in 0..p {
            for dx in 0..p {
                img.set(gy * p + dy, gx * p + dx, patch[dy * p + dx]);
            }
        }
    }
    img
}

/// Rebuild an image directly from an n_patches×p² row-major buffer.
pub fn patches_to_image(rows: &[f64], p: usize, h: usize, w: usize) -> Image {
    let grid = PatchGrid { p, h, w, patches: rows.to_vec() };
    unpatchify(&grid)
}

/// Uniformly sample round(α·n_patches) patches to mask, without replacement.
pub fn mask_patches(n_patches: usize, alpha: f64, rng: &mut dyn RngCore) -> PatchMaskPlan {
    assert!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0,1]");
    let k = round_half_up(alpha * n_patches as f64);
    let mut ids: Vec<usize> = (0..n_patches).collect();
    ids.shuffle(rng);
    let mut masked: Vec<usize> = ids.into_iter().take(k).collect();
    masked.sort_unstable();
    PatchMaskPlan { alpha, n_patches, masked_patch_ids: masked }
}
