//! HKDF-HMAC-SHA256 (RFC 5869) and the per-variant tile key rules.
//!
//! Domain separation happens in two places and only these two places:
//! the per-frame salt `N_t` enters through `HKDF-Extract`, and the tile
//! position enters through the `"TILE" ‖ i ‖ j` info tag in `HKDF-Expand`.
//! The ROI mask is public side information and never feeds either input.

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::image::TileIndex;
use crate::keys::{MasterKey, Nonce, TileKey, VariantId};

type HmacSha256 = Hmac<Sha256>;

pub const HASH_LEN: usize = 32;
/// RFC 5869 caps one expand at 255 hash blocks.
pub const MAX_OKM_LEN: usize = 255 * HASH_LEN;

/// ASCII prefix of every tile info tag.
pub const INFO_TAG: &[u8; 4] = b"TILE";

pub fn hmac_sha256(key: &[u8], data: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

/// `PRK = HMAC-SHA256(salt, ikm)`. An absent salt is the all-zero string;
/// HMAC zero-pads short keys to the block size, so passing `&[]` or any
/// run of zero bytes yields the same PRK.
pub fn hkdf_extract(salt: &[u8], ikm: &[u8]) -> [u8; 32] {
    hmac_sha256(salt, ikm)
}

/// Counter-chained expand: `T(i) = HMAC(PRK, T(i-1) ‖ info ‖ i)`, output
/// truncated to `len` bytes. `1 ≤ len ≤ 8160`.
pub fn hkdf_expand(prk: &[u8; 32], info: &[u8], len: usize) -> Result<Vec<u8>> {
    if len == 0 || len > MAX_OKM_LEN {
        return Err(Error::OutOfRange(format!(
            "okm length {len} outside 1..={MAX_OKM_LEN}"
        )));
    }
    let mut okm = Vec::with_capacity(len);
    let mut t: Vec<u8> = Vec::new();
    let mut counter: u8 = 1;
    while okm.len() < len {
        let mut mac = HmacSha256::new_from_slice(prk).expect("HMAC accepts any key length");
        mac.update(&t);
        mac.update(info);
        mac.update(&[counter]);
        t = mac.finalize().into_bytes().to_vec();
        let take = (len - okm.len()).min(HASH_LEN);
        okm.extend_from_slice(&t[..take]);
        // Unused after the 255th block (len ≤ 255 · HASH_LEN), where it
        // would otherwise wrap.
        counter = counter.wrapping_add(1);
    }
    Ok(okm)
}

/// 8-byte tile info tag: `"TILE" ‖ BE16(i) ‖ BE16(j)`.
pub fn encode_info(i: usize, j: usize) -> Result<[u8; 8]> {
    if i > u16::MAX as usize || j > u16::MAX as usize {
        return Err(Error::OutOfRange(format!(
            "tile index ({i}, {j}) exceeds 16-bit range"
        )));
    }
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(INFO_TAG);
    out[4..6].copy_from_slice(&(i as u16).to_be_bytes());
    out[6..8].copy_from_slice(&(j as u16).to_be_bytes());
    Ok(out)
}

/// Derives the 32-byte tile key for one tile under the given variant.
///
/// The frame index `t` never appears in the info tag; it reaches A1/A3/B1
/// keys only through the per-frame salt, and A2 ignores it entirely.
pub fn derive_tile_key(
    variant: VariantId,
    master: &MasterKey,
    nonce: &Nonce,
    idx: &TileIndex,
) -> Result<TileKey> {
    match variant {
        // Master key verbatim: no freshness, no separation.
        VariantId::A0 => Ok(TileKey(*master.bytes())),
        // Per-frame PRK shared by all tiles. B1 uses the same derivation;
        // its keystream reuse is forced at the cipher layer.
        VariantId::A1 | VariantId::B1 => {
            Ok(TileKey(hkdf_extract(&nonce.0, master.bytes())))
        }
        // Frame-independent per-tile keys from PRK_0 = Extract(0, K).
        VariantId::A2 => {
            if !nonce.is_zero() {
                return Err(Error::InvalidParameter(
                    "variant A2 requires the all-zero nonce".into(),
                ));
            }
            let prk0 = hkdf_extract(&[0u8; 32], master.bytes());
            let info = encode_info(idx.i, idx.j)?;
            let okm = hkdf_expand(&prk0, &info, 32)?;
            Ok(TileKey(okm.try_into().expect("expand returned 32 bytes")))
        }
        // Full scheme: per-frame salt plus per-tile info separation.
        VariantId::A3 => {
            let prk = hkdf_extract(&nonce.0, master.bytes());
            let info = encode_info(idx.i, idx.j)?;
            let okm = hkdf_expand(&prk, &info, 32)?;
            Ok(TileKey(okm.try_into().expect("expand returned 32 bytes")))
        }
        VariantId::AesCtrFull => Err(Error::InvalidParameter(
            "the AES-CTR baseline keys the cipher directly from the master key".into(),
        )),
    }
}
