//! Seeded region-of-interest masks and tile selection.
//!
//! Masks are unions of one to four random axis-aligned rectangles,
//! re-sampled until pixel coverage lands within ±5 percentage points of
//! the requested target (at most 20 attempts, then a deterministic
//! centered rectangle whose area matches the target). A tile is selected
//! when its fraction of ROI pixels meets the threshold.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::RoiMask;

/// Coverage tolerance around the target (absolute fraction).
pub const COVERAGE_BAND: f64 = 0.05;
/// Mask sampling attempts before the deterministic fallback.
pub const MAX_ATTEMPTS: usize = 20;
/// Re-seeds tried when searching for a mismatched mask.
pub const MISMATCH_RETRIES: u64 = 64;

/// How masks are drawn and thresholded into tile selections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiPolicy {
    pub tile_size: usize,
    pub threshold: f64,
    pub target_coverage: f64,
    pub seed: u64,
}

impl RoiPolicy {
    pub fn new(tile_size: usize, threshold: f64, target_coverage: f64, seed: u64) -> Result<Self> {
        if tile_size == 0 {
            return Err(Error::InvalidParameter("tile size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&threshold) || !threshold.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tile threshold must lie in [0, 1], got {threshold}"
            )));
        }
        if !(0.0 < target_coverage && target_coverage < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target coverage must lie strictly inside (0, 1), got {target_coverage}"
            )));
        }
        Ok(RoiPolicy { tile_size, threshold, target_coverage, seed })
    }

    /// Same policy with a different mask seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        RoiPolicy { seed, ..*self }
    }
}

fn paint_rect(mask: &mut RoiMask, y0: usize, x0: usize, rh: usize, rw: usize) {
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            mask.set(y, x, true);
        }
    }
}

/// Deterministic fallback: a centered rectangle with side lengths scaled
/// by √target, which keeps coverage within the band for non-degenerate
/// image sizes.
fn centered_rect_mask(height: usize, width: usize, target: f64) -> Result<RoiMask> {
    let rh = ((height as f64 * target.sqrt()).round() as usize).clamp(1, height);
    let rw = ((width as f64 * target.sqrt()).round() as usize).clamp(1, width);
    let mut mask = RoiMask::zeros(height, width)?;
    paint_rect(&mut mask, (height - rh) / 2, (width - rw) / 2, rh, rw);
    Ok(mask)
}

/// Draws the seeded ROI mask for an image of the given size.
pub fn generate_mask(policy: &RoiPolicy, height: usize, width: usize) -> Result<RoiMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter("mask dimensions must be positive".into()));
    }
    let target = policy.target_coverage;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    for _ in 0..MAX_ATTEMPTS {
        let n_rects = rng.gen_range(1..=4usize);
        let mut mask = RoiMask::zeros(height, width)?;
        for _ in 0..n_rects {
            // Per-rectangle area near target/n, jittered; union overlap
            // pulls the total down, the band check decides acceptance.
            let frac = (target / n_rects as f64) * rng.gen_range(0.5..1.5);
            let rh = ((height as f64 * frac.sqrt()).round() as usize).clamp(1, height);
            let rw = ((width as f64 * frac.sqrt()).round() as usize).clamp(1, width);
            let y0 = rng.gen_range(0..=height - rh);
            let x0 = rng.gen_range(0..=width - rw);
            paint_rect(&mut mask, y0, x0, rh, rw);
        }
        if (mask.coverage() - target).abs() <= COVERAGE_BAND {
            return Ok(mask);
        }
    }
    centered_rect_mask(height, width, target)
}

/// Selects the tiles whose ROI-pixel fraction meets the threshold.
/// Mask dimensions must be exact multiples of the tile size.
pub fn select_roi_tiles(
    mask: &RoiMask,
    tile_size: usize,
    threshold: f64,
) -> Result<BTreeSet<(usize, usize)>> {
    if tile_size == 0 {
        return Err(Error::InvalidParameter("tile size must be positive".into()));
    }
    if mask.height() % tile_size != 0 || mask.width() % tile_size != 0 {
        return Err(Error::InvalidParameter(format!(
            "mask {}x{} is not divisible into {tile_size}x{tile_size} tiles",
            mask.height(),
            mask.width()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "tile threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let rows = mask.height() / tile_size;
    let cols = mask.width() / tile_size;
    let area = (tile_size * tile_size) as f64;
    let mut tiles = BTreeSet::new();
    for i in 0..rows {
        for j in 0..cols {
            let mut count = 0usize;
            for y in i * tile_size..(i + 1) * tile_size {
                for x in j * tile_size..(j + 1) * tile_size {
                    if mask.get(y, x) {
                        count += 1;
                    }
                }
            }
            if count as f64 / area >= threshold {
                tiles.insert((i, j));
            }
        }
    }
    Ok(tiles)
}

/// Jaccard similarity of two tile selections; two empty sets count as
/// identical (1.0).
pub fn tile_jaccard(a: &BTreeSet<(usize, usize)>, b: &BTreeSet<(usize, usize)>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

/// Draws a mask from the same policy but a fresh seed whose *tile
/// selection* differs from the reference mask's. Retries up to
/// `MISMATCH_RETRIES` seeds; if every draw selects the same tiles the
/// scenario is unsatisfiable and a protocol error is raised.
pub fn mismatch_mask(policy: &RoiPolicy, reference: &RoiMask, seed: u64) -> Result<RoiMask> {
    let ref_tiles = select_roi_tiles(reference, policy.tile_size, policy.threshold)?;
    for k in 0..MISMATCH_RETRIES {
        let candidate = generate_mask(
            &policy.with_seed(seed.wrapping_add(k)),
            reference.height(),
            reference.width(),
        )?;
        let cand_tiles = select_roi_tiles(&candidate, policy.tile_size, policy.threshold)?;
        if tile_jaccard(&ref_tiles, &cand_tiles) < 1.0 {
            return Ok(candidate);
        }
    }
    Err(Error::Protocol(format!(
        "could not draw a mismatched mask in {MISMATCH_RETRIES} attempts; \
         the mask policy pins every draw to the same tile selection"
    )))
}
