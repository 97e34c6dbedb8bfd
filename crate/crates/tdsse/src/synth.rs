//! Seeded synthetic image corpus.
//!
//! Each image is an oriented brightness gradient, a handful of opaque
//! random rectangles, and mild uniform pixel noise. The construction is
//! cheap, fully determined by `(n, dimensions, seed)`, and produces
//! frames with rich enough level statistics to make reconstruction
//! quality measurable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Minimum gradient endpoint levels (dark corner / bright corner).
const LOW_RANGE: std::ops::RangeInclusive<f64> = 0.0..=20.0;
const HIGH_RANGE: std::ops::RangeInclusive<f64> = 235.0..=255.0;
/// Uniform pixel noise amplitude (inclusive, saturating add).
const NOISE: i32 = 6;

fn synth_one(rng: &mut ChaCha8Rng, height: usize, width: usize, channels: usize) -> ImageTensor {
    let low = rng.gen_range(LOW_RANGE);
    let high = rng.gen_range(HIGH_RANGE);
    // Oriented linear ramp: project (y, x) on a random direction, then
    // normalize the projection over the image rectangle.
    let wy = rng.gen_range(-1.0..=1.0f64);
    let wx = rng.gen_range(-1.0..=1.0f64);
    let corners = [
        0.0,
        wx * (width.saturating_sub(1)) as f64,
        wy * (height.saturating_sub(1)) as f64,
        wy * (height.saturating_sub(1)) as f64 + wx * (width.saturating_sub(1)) as f64,
    ];
    let pmin = corners.iter().cloned().fold(f64::INFINITY, f64::min);
    let pmax = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if pmax > pmin { pmax - pmin } else { 1.0 };
    let chan_scale: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.7..=1.0)).collect();

    let mut img = ImageTensor::zeros(height, width, channels).expect("validated dims");
    for y in 0..height {
        for x in 0..width {
            let proj = (wy * y as f64 + wx * x as f64 - pmin) / span;
            let base = low + (high - low) * proj;
            for (c, &scale) in chan_scale.iter().enumerate() {
                img.set_pixel(y, x, c, (base * scale).round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    // Opaque rectangles of random size and color.
    let n_rects = rng.gen_range(2..=6usize);
    for _ in 0..n_rects {
        let rh = rng.gen_range(height.div_ceil(16)..=height.div_ceil(3)).max(1);
        let rw = rng.gen_range(width.div_ceil(16)..=width.div_ceil(3)).max(1);
        let y0 = rng.gen_range(0..=height - rh);
        let x0 = rng.gen_range(0..=width - rw);
        let color: Vec<u8> = (0..channels).map(|_| rng.gen()).collect();
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                for (c, &v) in color.iter().enumerate() {
                    img.set_pixel(y, x, c, v);
                }
            }
        }
    }

    // Saturating uniform noise.
    for b in img.data_mut() {
        let v = *b as i32 + rng.gen_range(-NOISE..=NOISE);
        *b = v.clamp(0, 255) as u8;
    }
    img
}

/// Generates `n` synthetic images. Image `k` depends only on `(seed, k)`
/// and the dimensions, so prefixes are stable as `n` grows.
pub fn synth_images(
    n: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter("image dimensions must be positive".into()));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    let mut parent = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let child = parent.gen::<u64>();
        images.push(synth_one(&mut ChaCha8Rng::seed_from_u64(child), height, width, channels));
    }
    Ok(images)
}
