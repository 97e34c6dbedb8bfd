//! Tilewise selective encryption of frames, plus the on-disk frame
//! container.
//!
//! A frame is encrypted by selecting ROI tiles from its mask, deriving a
//! per-tile key according to the active variant, and running the tile
//! cipher over each selected tile; all other tiles pass through
//! unmodified. Decryption recomputes the ROI selection from the mask and
//! inverts the tile cipher. The whole-image AES-CTR baseline shares this
//! path with a single master-derived key and per-tile counter offsets
//! (or one stream over the full buffer in full-image mode).

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec;
use crate::image::{tile_bytes, tile_grid, write_tile, ImageTensor, RoiMask, TileIndex};
use crate::keys::{MasterKey, Nonce, TileKey, VariantId};
use crate::keyschedule::{derive_tile_key, hmac_sha256};
use crate::roi::{select_roi_tiles, RoiPolicy};
use crate::tile_cipher::{aes_ctr_tile, spd_decrypt_tile, spd_encrypt_tile, CtrParams};

/// Tile transformation applied to selected tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CipherKind {
    /// AES-128 in counter mode.
    AesCtr,
    /// Stream-permute-diffuse tile cipher; `permute` enables the
    /// byte-permutation stage.
    Spd { permute: bool },
    /// Pass-through used as a positive control in attacker evaluations:
    /// "ciphertext" equals plaintext, so a sound attacker must reach high
    /// fidelity. Not exposed through the command-line tools.
    Identity,
}

impl CipherKind {
    pub fn label(&self) -> &'static str {
        match self {
            CipherKind::AesCtr => "aes-ctr",
            CipherKind::Spd { permute: true } => "spd",
            CipherKind::Spd { permute: false } => "spd-xor",
            CipherKind::Identity => "identity",
        }
    }
}

/// Everything needed to encrypt or decrypt frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub variant: VariantId,
    pub cipher: CipherKind,
    pub policy: RoiPolicy,
    /// Baseline-only mode: one CTR stream over the entire frame buffer,
    /// ignoring the ROI mask.
    pub full_image_baseline: bool,
}

impl PipelineConfig {
    pub fn new(variant: VariantId, cipher: CipherKind, policy: RoiPolicy) -> Self {
        PipelineConfig { variant, cipher, policy, full_image_baseline: false }
    }

    fn validate(&self) -> Result<()> {
        if self.full_image_baseline && self.variant != VariantId::AesCtrFull {
            return Err(Error::InvalidParameter(
                "full-image mode applies only to the AES-CTR baseline".into(),
            ));
        }
        if self.variant == VariantId::AesCtrFull
            && !matches!(self.cipher, CipherKind::AesCtr | CipherKind::Identity)
        {
            return Err(Error::InvalidParameter(
                "the AES-CTR baseline supports only the aes-ctr tile cipher".into(),
            ));
        }
        Ok(())
    }
}

/// An encrypted frame. `roi_tiles` records which tiles were transformed;
/// it is derived state (recomputable from the mask) and is not serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedFrame {
    pub variant: VariantId,
    pub t: u32,
    pub nonce: Nonce,
    pub image: ImageTensor,
    pub roi_tiles: BTreeSet<(usize, usize)>,
}

/// Deterministic per-frame nonce: the first 16 bytes of an HMAC over the
/// frame counter under the master key. A2 is frame-independent by
/// construction and always uses the zero nonce.
pub fn derive_frame_nonce(master: &MasterKey, variant: VariantId, t: u32) -> Nonce {
    if variant == VariantId::A2 {
        return Nonce::ZERO;
    }
    let mut msg = Vec::with_capacity(15);
    msg.extend_from_slice(b"FRAME-NONCE");
    msg.extend_from_slice(&t.to_be_bytes());
    let tag = hmac_sha256(master.bytes(), &msg);
    let mut n = [0u8; 16];
    n.copy_from_slice(&tag[..16]);
    Nonce(n)
}

fn check_geometry(cfg: &PipelineConfig, image: &ImageTensor, mask: &RoiMask) -> Result<()> {
    cfg.validate()?;
    let s = cfg.policy.tile_size;
    tile_grid(image.height(), image.width(), s)?;
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::InvalidParameter(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

fn baseline_key(master: &MasterKey) -> TileKey {
    TileKey(*master.bytes())
}

/// CTR parameters for one baseline ROI tile: disjoint counter ranges per
/// tile position so no two tiles share keystream blocks.
fn baseline_tile_ctr(nonce: &Nonce, linear_index: usize, tile_len: usize) -> CtrParams {
    let blocks_per_tile = (tile_len as u64).div_ceil(16);
    CtrParams::with_counter_start(nonce, linear_index as u64 * blocks_per_tile)
}

fn transform_tile(
    cfg: &PipelineConfig,
    master: &MasterKey,
    nonce: &Nonce,
    idx: &TileIndex,
    cols: usize,
    bytes: &[u8],
    encrypt: bool,
) -> Result<Vec<u8>> {
    if cfg.variant == VariantId::AesCtrFull {
        if cfg.cipher == CipherKind::Identity {
            return Ok(bytes.to_vec());
        }
        let ctr = baseline_tile_ctr(nonce, idx.i * cols + idx.j, bytes.len());
        return Ok(aes_ctr_tile(&baseline_key(master), &ctr, bytes));
    }
    match cfg.cipher {
        CipherKind::Identity => Ok(bytes.to_vec()),
        CipherKind::AesCtr => {
            let key = derive_tile_key(cfg.variant, master, nonce, idx)?;
            Ok(aes_ctr_tile(&key, &CtrParams::from_nonce(nonce), bytes))
        }
        CipherKind::Spd { permute } => {
            let key = derive_tile_key(cfg.variant, master, nonce, idx)?;
            if encrypt {
                spd_encrypt_tile(&key, bytes, permute)
            } else {
                spd_decrypt_tile(&key, bytes, permute)
            }
        }
    }
}

fn apply_frame(
    cfg: &PipelineConfig,
    master: &MasterKey,
    t: u32,
    nonce: &Nonce,
    input: &ImageTensor,
    mask: &RoiMask,
    encrypt: bool,
) -> Result<(ImageTensor, BTreeSet<(usize, usize)>)> {
    check_geometry(cfg, input, mask)?;
    if cfg.variant == VariantId::A2 && !nonce.is_zero() {
        return Err(Error::InvalidParameter(
            "variant A2 is frame-independent and requires the zero nonce".into(),
        ));
    }
    let s = cfg.policy.tile_size;
    let (rows, cols) = tile_grid(input.height(), input.width(), s)?;

    if cfg.full_image_baseline {
        let all: BTreeSet<_> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
        let data = if cfg.cipher == CipherKind::Identity {
            input.data().to_vec()
        } else {
            aes_ctr_tile(&baseline_key(master), &CtrParams::from_nonce(nonce), input.data())
        };
        let image = ImageTensor::new(input.height(), input.width(), input.channels(), data)?;
        return Ok((image, all));
    }

    let selected = select_roi_tiles(mask, s, cfg.policy.threshold)?;
    let tiles: Vec<(usize, usize)> = selected.iter().copied().collect();
    let transformed = exec::map_vec(tiles.clone(), |(i, j)| {
        let idx = TileIndex { t, i, j };
        let bytes = tile_bytes(input, i, j, s)?;
        transform_tile(cfg, master, nonce, &idx, cols, &bytes, encrypt)
    });

    let mut out = input.clone();
    for ((i, j), result) in tiles.into_iter().zip(transformed) {
        write_tile(&mut out, i, j, s, &result?)?;
    }
    Ok((out, selected))
}

/// Encrypts a frame under an explicit nonce (the nonce regime is part of
/// the treatment in the protocol harness, so it is caller-controlled).
pub fn encrypt_frame_with_nonce(
    cfg: &PipelineConfig,
    master: &MasterKey,
    t: u32,
    nonce: Nonce,
    plain: &ImageTensor,
    mask: &RoiMask,
) -> Result<EncryptedFrame> {
    let (image, roi_tiles) = apply_frame(cfg, master, t, &nonce, plain, mask, true)?;
    Ok(EncryptedFrame { variant: cfg.variant, t, nonce, image, roi_tiles })
}

/// Encrypts a frame, deriving the per-frame nonce from the master key.
pub fn encrypt_frame(
    cfg: &PipelineConfig,
    master: &MasterKey,
    t: u32,
    plain: &ImageTensor,
    mask: &RoiMask,
) -> Result<EncryptedFrame> {
    let nonce = derive_frame_nonce(master, cfg.variant, t);
    encrypt_frame_with_nonce(cfg, master, t, nonce, plain, mask)
}

/// Decrypts a frame. The ROI selection is recomputed from the mask, so
/// the same mask (and policy) used at encryption time must be supplied.
pub fn decrypt_frame(
    cfg: &PipelineConfig,
    master: &MasterKey,
    frame: &EncryptedFrame,
    mask: &RoiMask,
) -> Result<ImageTensor> {
    if frame.variant != cfg.variant {
        return Err(Error::InvalidParameter(format!(
            "frame was produced by variant {} but the configuration selects {}",
            frame.variant, cfg.variant
        )));
    }
    let (image, _) = apply_frame(cfg, master, frame.t, &frame.nonce, &frame.image, mask, false)?;
    Ok(image)
}

/// Corruption-locality probe: encrypts the frame, flips one ciphertext
/// byte (which must land inside an ROI tile), decrypts, and returns the
/// set of tiles whose decrypted bytes differ from the original plaintext.
pub fn tile_locality_probe(
    cfg: &PipelineConfig,
    master: &MasterKey,
    t: u32,
    plain: &ImageTensor,
    mask: &RoiMask,
    flip_index: usize,
) -> Result<BTreeSet<(usize, usize)>> {
    let mut frame = encrypt_frame(cfg, master, t, plain, mask)?;
    let s = cfg.policy.tile_size;
    let (_, cols) = tile_grid(plain.height(), plain.width(), s)?;
    if flip_index >= plain.data().len() {
        return Err(Error::OutOfRange(format!(
            "flip index {flip_index} outside the {}-byte frame buffer",
            plain.data().len()
        )));
    }
    let pixel = flip_index / plain.channels();
    let tile = (pixel / plain.width() / s, pixel % plain.width() / s);
    if !frame.roi_tiles.contains(&tile) {
        return Err(Error::InvalidParameter(format!(
            "flip index {flip_index} falls in tile {tile:?}, which is outside the ROI selection"
        )));
    }
    frame.image.data_mut()[flip_index] ^= 0x01;
    let recovered = decrypt_frame(cfg, master, &frame, mask)?;

    let (rows, _) = tile_grid(plain.height(), plain.width(), s)?;
    let mut changed = BTreeSet::new();
    for i in 0..rows {
        for j in 0..cols {
            if tile_bytes(&recovered, i, j, s)? != tile_bytes(plain, i, j, s)? {
                changed.insert((i, j));
            }
        }
    }
    Ok(changed)
}

// --- frame container ---------------------------------------------------------
//
// Layout: magic "TDSE1", variant code, frame counter (u32 BE), nonce,
// height (u32 BE), width (u32 BE), channels, then the frame bytes. The
// ROI selection is intentionally not stored; it is derived state.

const FRAME_MAGIC: &[u8; 5] = b"TDSE1";
const HEADER_LEN: usize = 5 + 1 + 4 + 16 + 4 + 4 + 1;

pub fn encode_frame(frame: &EncryptedFrame) -> Vec<u8> {
    let img = &frame.image;
    let mut out = Vec::with_capacity(HEADER_LEN + img.data().len());
    out.extend_from_slice(FRAME_MAGIC);
    out.push(frame.variant.code());
    out.extend_from_slice(&frame.t.to_be_bytes());
    out.extend_from_slice(&frame.nonce.0);
    out.extend_from_slice(&(img.height() as u32).to_be_bytes());
    out.extend_from_slice(&(img.width() as u32).to_be_bytes());
    out.push(img.channels() as u8);
    out.extend_from_slice(img.data());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<EncryptedFrame> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("frame container truncated".into()));
    }
    if &bytes[..5] != FRAME_MAGIC {
        return Err(Error::Format("not a frame container (bad magic)".into()));
    }
    let variant = VariantId::from_code(bytes[5])?;
    let t = u32::from_be_bytes(bytes[6..10].try_into().unwrap());
    let mut nonce = [0u8; 16];
    nonce.copy_from_slice(&bytes[10..26]);
    let height = u32::from_be_bytes(bytes[26..30].try_into().unwrap()) as usize;
    let width = u32::from_be_bytes(bytes[30..34].try_into().unwrap()) as usize;
    let channels = bytes[34] as usize;
    let expected = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::Format("frame dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "frame payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let image = ImageTensor::new(height, width, channels, payload.to_vec())
        .map_err(|e| Error::Format(format!("frame header invalid: {e}")))?;
    Ok(EncryptedFrame {
        variant,
        t,
        nonce: Nonce(nonce),
        image,
        roi_tiles: BTreeSet::new(),
    })
}

pub fn write_frame(frame: &EncryptedFrame, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_frame(frame)).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<EncryptedFrame> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes)
}
