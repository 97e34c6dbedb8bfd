//! Binary Netpbm (P5/P6) image and mask I/O.
//!
//! Only the binary formats with an 8-bit maxval of 255 are accepted.
//! Headers may contain `#` comments; payloads must match the header
//! exactly (no truncation, no trailing bytes). Masks are P5 files whose
//! pixels are strictly 0 or 255.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageTensor, RoiMask};

struct HeaderReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    /// Skips whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            if self.buf[self.pos] == b'#' {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Format("netpbm header ended unexpectedly".into()));
        }
        Ok(&self.buf[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| {
                Error::Format(format!(
                    "netpbm header token {:?} is not a number",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

/// Decodes a binary P5 (grayscale) or P6 (RGB) buffer.
pub fn decode_netpbm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut r = HeaderReader { buf: bytes, pos: 0 };
    let magic = r.token()?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Format(format!(
                "unsupported netpbm magic {:?} (only binary P5/P6)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "netpbm maxval must be 255, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(Error::Format("netpbm header not terminated by whitespace".into()));
    }
    r.pos += 1;
    let expected = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::Format("netpbm dimensions overflow".into()))?;
    let payload = &bytes[r.pos..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "netpbm payload truncated: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "netpbm payload has {} trailing bytes",
            payload.len() - expected
        )));
    }
    ImageTensor::new(height, width, channels, payload.to_vec())
}

/// Encodes to binary P5 (1 channel) or P6 (3 channels).
pub fn encode_netpbm(image: &ImageTensor) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes)
}

pub fn save_image(image: &ImageTensor, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_netpbm(image)).map_err(|e| Error::io(path, e))
}

/// Loads a mask from a P5 file whose pixels are strictly 0 or 255.
pub fn load_mask(path: &Path) -> Result<RoiMask> {
    let image = load_image(path)?;
    if image.channels() != 1 {
        return Err(Error::Format("masks must be single-channel (P5)".into()));
    }
    let bits: Result<Vec<u8>> = image
        .data()
        .iter()
        .map(|&b| match b {
            0 => Ok(0u8),
            255 => Ok(1u8),
            other => Err(Error::Format(format!(
                "mask pixels must be 0 or 255, found {other}"
            ))),
        })
        .collect();
    RoiMask::new(image.height(), image.width(), bits?)
}

pub fn save_mask(mask: &RoiMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b == 1 { 255 } else { 0 }).collect();
    let image = ImageTensor::new(mask.height(), mask.width(), 1, data)?;
    save_image(&image, path)
}
