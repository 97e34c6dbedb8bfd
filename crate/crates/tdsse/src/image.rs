//! Image tensors, ROI masks, and the tile grid.
//!
//! Images are interleaved row-major `u8` buffers with 1 or 3 channels.
//! A tile is an `s × s` pixel block; tile bytes are the tile's rows
//! concatenated top-to-bottom, channels interleaved, so a tile of an
//! aligned image is exactly `s·s·channels` bytes.

use crate::error::{Error, Result};

/// Interleaved row-major `u8` image. Invariant: `data.len() == h·w·c`,
/// `channels ∈ {1, 3}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expect = height * width * channels;
        if data.len() != expect {
            return Err(Error::Format(format!(
                "image buffer is {} bytes, expected {expect} for {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(ImageTensor { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        ImageTensor::new(height, width, channels, vec![0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Center-crops to the largest dimensions that are multiples of `s`.
    /// Used at ingestion; errors if the image is smaller than one tile.
    pub fn center_crop_to_multiple(&self, s: usize) -> Result<ImageTensor> {
        if s == 0 {
            return Err(Error::InvalidParameter("tile size must be positive".into()));
        }
        let new_h = (self.height / s) * s;
        let new_w = (self.width / s) * s;
        if new_h == 0 || new_w == 0 {
            return Err(Error::Format(format!(
                "image {}x{} is smaller than one {s}x{s} tile",
                self.height, self.width
            )));
        }
        let y0 = (self.height - new_h) / 2;
        let x0 = (self.width - new_w) / 2;
        let mut data = Vec::with_capacity(new_h * new_w * self.channels);
        for y in 0..new_h {
            let row = ((y0 + y) * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + new_w * self.channels]);
        }
        ImageTensor::new(new_h, new_w, self.channels, data)
    }
}

/// Binary region-of-interest mask over an image grid. Public side
/// information: it never feeds any secret derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    height: usize,
    width: usize,
    bits: Vec<u8>, // one byte per pixel, 0 or 1
}

impl RoiMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::Format(format!(
                "mask buffer is {} bytes, expected {}",
                bits.len(),
                height * width
            )));
        }
        if let Some(v) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Format(format!("mask values must be 0 or 1, got {v}")));
        }
        Ok(RoiMask { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        RoiMask::new(height, width, vec![0; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        RoiMask::new(height, width, vec![1; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v as u8;
    }

    /// Fraction of pixels inside the ROI, in [0, 1].
    pub fn coverage(&self) -> f64 {
        let ones: usize = self.bits.iter().map(|&b| b as usize).sum();
        ones as f64 / self.bits.len() as f64
    }
}

/// Frame and tile coordinates: frame index `t`, tile row `i`, tile column `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileIndex {
    pub t: u32,
    pub i: usize,
    pub j: usize,
}

/// Tile grid dimensions `(rows, cols)` for an aligned `height × width` image.
pub fn tile_grid(height: usize, width: usize, s: usize) -> Result<(usize, usize)> {
    if s == 0 {
        return Err(Error::InvalidParameter("tile size must be positive".into()));
    }
    if height % s != 0 || width % s != 0 {
        return Err(Error::Format(format!(
            "dimensions {height}x{width} are not multiples of tile size {s}"
        )));
    }
    Ok((height / s, width / s))
}

/// Extracts tile `(i, j)` as a contiguous byte vector of length `s·s·channels`.
pub fn tile_bytes(img: &ImageTensor, i: usize, j: usize, s: usize) -> Result<Vec<u8>> {
    let (rows, cols) = tile_grid(img.height, img.width, s)?;
    if i >= rows || j >= cols {
        return Err(Error::OutOfRange(format!(
            "tile ({i}, {j}) outside {rows}x{cols} grid"
        )));
    }
    let c = img.channels;
    let row_bytes = s * c;
    let mut out = Vec::with_capacity(s * row_bytes);
    for y in 0..s {
        let start = ((i * s + y) * img.width + j * s) * c;
        out.extend_from_slice(&img.data[start..start + row_bytes]);
    }
    Ok(out)
}

/// Writes `bytes` back into tile `(i, j)`; exact inverse of [`tile_bytes`]
/// for a buffer of the right length.
pub fn write_tile(img: &mut ImageTensor, i: usize, j: usize, s: usize, bytes: &[u8]) -> Result<()> {
    let (rows, cols) = tile_grid(img.height, img.width, s)?;
    if i >= rows || j >= cols {
        return Err(Error::OutOfRange(format!(
            "tile ({i}, {j}) outside {rows}x{cols} grid"
        )));
    }
    let c = img.channels;
    let row_bytes = s * c;
    if bytes.len() != s * row_bytes {
        return Err(Error::Format(format!(
            "tile buffer is {} bytes, expected {}",
            bytes.len(),
            s * row_bytes
        )));
    }
    for y in 0..s {
        let start = ((i * s + y) * img.width + j * s) * c;
        img.data[start..start + row_bytes].copy_from_slice(&bytes[y * row_bytes..(y + 1) * row_bytes]);
    }
    Ok(())
}
