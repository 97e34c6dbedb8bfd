//! Tile cipher primitives.
//!
//! Two interchangeable tile ciphers operate on raw tile bytes under a
//! 32-byte tile key:
//!
//! * AES-128-CTR — keys AES-128 from the first 16 key bytes; the counter
//!   block for keystream block `b` is `nonce_prefix(8) ‖ BE64(counter_start + b)`
//!   with the prefix taken from the first 8 bytes of the frame nonce and the
//!   counter restarting at 0 for every tile. Encryption is an XOR involution.
//! * SPD (stream–permute–diffuse) — mask with keystream S1, optionally apply
//!   an S1-keyed Fisher–Yates byte permutation, then chain a forward XOR
//!   diffusion pass masked with keystream S2. Diffusion stays inside the
//!   tile, preserving tile locality.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;

use crate::error::{Error, Result};
use crate::keys::{Nonce, TileKey};
use crate::keyschedule::{hkdf_expand, hkdf_extract, MAX_OKM_LEN};

/// CTR stream parameters for one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtrParams {
    pub nonce_prefix: [u8; 8],
    pub counter_start: u64,
}

impl CtrParams {
    /// Standard per-tile parameters: prefix from the frame nonce, counter
    /// from zero. Every tile of a frame shares these; uniqueness comes from
    /// per-tile keys (or deliberately does not, for the reuse variants).
    pub fn from_nonce(nonce: &Nonce) -> Self {
        CtrParams::with_counter_start(nonce, 0)
    }

    pub fn with_counter_start(nonce: &Nonce, counter_start: u64) -> Self {
        let mut nonce_prefix = [0u8; 8];
        nonce_prefix.copy_from_slice(&nonce.0[..8]);
        CtrParams { nonce_prefix, counter_start }
    }
}

/// XORs `data` with the AES-128-CTR keystream. Involution: applying it
/// twice with identical inputs restores the plaintext.
pub fn aes_ctr_tile(key: &TileKey, params: &CtrParams, data: &[u8]) -> Vec<u8> {
    let cipher = Aes128::new(GenericArray::from_slice(&key.0[..16]));
    let mut out = Vec::with_capacity(data.len());
    for (b, chunk) in data.chunks(16).enumerate() {
        let mut block = [0u8; 16];
        block[..8].copy_from_slice(&params.nonce_prefix);
        block[8..].copy_from_slice(&params.counter_start.wrapping_add(b as u64).to_be_bytes());
        let mut ks = GenericArray::from(block);
        cipher.encrypt_block(&mut ks);
        out.extend(chunk.iter().zip(ks.iter()).map(|(d, k)| d ^ k));
    }
    out
}

/// Deterministic keystream of `n` bytes from `keyed` material (the caller
/// appends its domain label to the key).
///
/// One HKDF expand covers up to 8160 bytes with info `"SPD"`; longer
/// streams append chunks with info `"SPD" ‖ BE32(chunk)` for chunk ≥ 1,
/// so every stream is a prefix of any longer one.
pub fn prf_expand(keyed: &[u8], n: usize) -> Vec<u8> {
    if n == 0 {
        return Vec::new();
    }
    let prk = hkdf_extract(&[0u8; 32], keyed);
    let mut out = Vec::with_capacity(n);
    let mut chunk: u32 = 0;
    while out.len() < n {
        let take = (n - out.len()).min(MAX_OKM_LEN);
        let block = if chunk == 0 {
            hkdf_expand(&prk, b"SPD", take)
        } else {
            let mut info = b"SPD".to_vec();
            info.extend_from_slice(&chunk.to_be_bytes());
            hkdf_expand(&prk, &info, take)
        };
        out.extend_from_slice(&block.expect("take is within the expand range"));
        chunk += 1;
    }
    out
}

/// Keystream-driven Fisher–Yates permutation of `0..n`: for `k` from
/// `n-1` down to `1`, draw 8 bytes big-endian from `keystream` (starting
/// at offset 0) and swap positions `k` and `draw mod (k+1)`.
pub fn perm_index(keystream: &[u8], n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("cannot permute an empty tile".into()));
    }
    let need = 8 * (n - 1);
    if keystream.len() < need {
        return Err(Error::InvalidParameter(format!(
            "keystream provides {} bytes, permutation of {n} elements needs {need}",
            keystream.len()
        )));
    }
    let mut pi: Vec<usize> = (0..n).collect();
    let mut off = 0;
    for k in (1..n).rev() {
        let draw = u64::from_be_bytes(keystream[off..off + 8].try_into().unwrap());
        off += 8;
        pi.swap(k, (draw % (k as u64 + 1)) as usize);
    }
    Ok(pi)
}

fn keyed_label(key: &TileKey, label: u8) -> Vec<u8> {
    let mut k = key.0.to_vec();
    k.push(label);
    k
}

/// S1 must cover both the byte mask (`n` bytes) and, when permuting,
/// the 8-bytes-per-draw permutation schedule.
fn s1_len(n: usize, permute: bool) -> usize {
    if permute {
        n.max(8 * (n - 1))
    } else {
        n
    }
}

fn spd_streams(key: &TileKey, n: usize, permute: bool) -> (Vec<u8>, Vec<u8>) {
    let s1 = prf_expand(&keyed_label(key, 0x01), s1_len(n, permute));
    let s2 = prf_expand(&keyed_label(key, 0x02), n);
    (s1, s2)
}

/// Forward pass over explicit streams; `spd_encrypt_tile` derives the
/// streams from the key, unit tests drive this directly with zero streams.
fn spd_apply(s1: &[u8], s2: &[u8], data: &[u8], perm: Option<&[usize]>) -> Vec<u8> {
    let n = data.len();
    let mut y: Vec<u8> = data.iter().zip(&s1[..n]).map(|(x, k)| x ^ k).collect();
    if let Some(pi) = perm {
        y = (0..n).map(|k| y[pi[k]]).collect();
    }
    let mut z = vec![0u8; n];
    z[0] = y[0] ^ s2[0];
    for k in 1..n {
        z[k] = y[k] ^ z[k - 1] ^ s2[k];
    }
    z
}

fn spd_unapply(s1: &[u8], s2: &[u8], data: &[u8], perm: Option<&[usize]>) -> Vec<u8> {
    let n = data.len();
    let mut y = vec![0u8; n];
    y[0] = data[0] ^ s2[0];
    for k in 1..n {
        y[k] = data[k] ^ data[k - 1] ^ s2[k];
    }
    if let Some(pi) = perm {
        let mut un = vec![0u8; n];
        for k in 0..n {
            un[pi[k]] = y[k];
        }
        y = un;
    }
    y.iter().zip(&s1[..n]).map(|(v, k)| v ^ k).collect()
}

pub fn spd_encrypt_tile(key: &TileKey, data: &[u8], permute: bool) -> Result<Vec<u8>> {
    if data.is_empty() {
        return Err(Error::Format("cannot encrypt an empty tile".into()));
    }
    let (s1, s2) = spd_streams(key, data.len(), permute);
    let perm = if permute { Some(perm_index(&s1, data.len())?) } else { None };
    Ok(spd_apply(&s1, &s2, data, perm.as_deref()))
}

pub fn spd_decrypt_tile(key: &TileKey, data: &[u8], permute: bool) -> Result<Vec<u8>> {
    if data.is_empty() {
        return Err(Error::Format("cannot decrypt an empty tile".into()));
    }
    let (s1, s2) = spd_streams(key, data.len(), permute);
    let perm = if permute { Some(perm_index(&s1, data.len())?) } else { None };
    Ok(spd_unapply(&s1, &s2, data, perm.as_deref()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(bytes: [u8; 32]) -> TileKey {
        TileKey(bytes)
    }

    /// NIST SP 800-38A F.5.1 (CTR-AES128): splitting the initial counter
    /// block `f0f1..feff` into our prefix ‖ BE64 layout reproduces the
    /// published ciphertext for the first two message blocks.
    #[test]
    fn nist_sp800_38a_ctr_vector() {
        let mut kb = [0u8; 32];
        kb[..16].copy_from_slice(&hex::decode("2b7e151628aed2a6abf7158809cf4f3c").unwrap());
        let params = CtrParams {
            nonce_prefix: hex::decode("f0f1f2f3f4f5f6f7").unwrap().try_into().unwrap(),
            counter_start: 0xf8f9fafbfcfdfeff,
        };
        let pt = hex::decode(
            "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51",
        )
        .unwrap();
        let ct = aes_ctr_tile(&key(kb), &params, &pt);
        assert_eq!(
            hex::encode(&ct),
            "874d6191b620e3261bef6864990db6ce9806f66b7970fdff8617187bb9fffdff"
        );
        // The keystream itself (ciphertext of zeros) is the published
        // sequence of output blocks.
        let ks = aes_ctr_tile(&key(kb), &params, &[0u8; 32]);
        assert_eq!(
            hex::encode(&ks),
            "ec8cdf7398607cb0f2d21675ea9ea1e4362b7c3c6773516318a077d7fc5073ae"
        );
    }

    /// Independent construction: ECB-encrypt each counter block directly,
    /// then XOR — checks the counter layout and the XOR loop.
    #[test]
    fn ctr_matches_ecb_on_counter_blocks() {
        let tk = key(core::array::from_fn(|k| (k * 7 + 3) as u8));
        let params = CtrParams { nonce_prefix: [9, 8, 7, 6, 5, 4, 3, 2], counter_start: 0 };
        let data: Vec<u8> = (0..100).map(|k| (k * 13 % 251) as u8).collect(); // partial final block

        let cipher = Aes128::new(GenericArray::from_slice(&tk.0[..16]));
        let mut expected = Vec::new();
        for (b, chunk) in data.chunks(16).enumerate() {
            let mut counter_block = [0u8; 16];
            counter_block[..8].copy_from_slice(&params.nonce_prefix);
            counter_block[8..].copy_from_slice(&(b as u64).to_be_bytes());
            let mut ks = GenericArray::from(counter_block);
            cipher.encrypt_block(&mut ks);
            expected.extend(chunk.iter().zip(ks.iter()).map(|(d, k)| d ^ k));
        }
        assert_eq!(aes_ctr_tile(&tk, &params, &data), expected);
    }

    #[test]
    fn ctr_counter_blocks_chain() {
        // Keystream block b at counter_start 0 equals block 0 at counter_start b.
        let tk = key([0x5A; 32]);
        let n = Nonce([0x11; 16]);
        let base = aes_ctr_tile(&tk, &CtrParams::from_nonce(&n), &[0u8; 48]);
        let shifted = aes_ctr_tile(&tk, &CtrParams::with_counter_start(&n, 2), &[0u8; 16]);
        assert_eq!(&base[32..48], &shifted[..]);
    }

    #[test]
    fn ctr_identical_parameters_reuse_keystream() {
        let tk = key([0xC3; 32]);
        let params = CtrParams::from_nonce(&Nonce([4; 16]));
        let a = aes_ctr_tile(&tk, &params, &[0u8; 64]);
        let b = aes_ctr_tile(&tk, &params, &[0u8; 64]);
        assert_eq!(a, b);
    }

    #[test]
    fn prf_expand_prefix_property_across_chunks() {
        let keyed = b"some key material\x01";
        let long = prf_expand(keyed, MAX_OKM_LEN + 40);
        assert_eq!(prf_expand(keyed, 5), long[..5]);
        assert_eq!(prf_expand(keyed, 64), long[..64]);
        assert_eq!(prf_expand(keyed, MAX_OKM_LEN), long[..MAX_OKM_LEN]);
        assert_eq!(prf_expand(keyed, MAX_OKM_LEN + 8), long[..MAX_OKM_LEN + 8]);
    }

    #[test]
    fn prf_labels_separate_streams() {
        let tk = key([1; 32]);
        let (s1, s2) = spd_streams(&tk, 64, false);
        assert_ne!(s1, s2);
    }

    #[test]
    fn perm_zero_keystream_worked_example() {
        // n = 3, all-zero draws: swap(2,0) then swap(1,0).
        assert_eq!(perm_index(&[0u8; 16], 3).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn perm_single_element_is_identity() {
        assert_eq!(perm_index(&[], 1).unwrap(), vec![0]);
    }

    #[test]
    fn perm_rejects_short_keystream() {
        assert!(matches!(perm_index(&[0u8; 15], 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(perm_index(&[], 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn spd_zero_stream_worked_example() {
        // With S1 = S2 = 0 and no permutation the mask is the identity and
        // diffusion telescopes: [01, 02, 03] -> [01, 03, 00].
        let z = spd_apply(&[0u8; 3], &[0u8; 3], &[0x01, 0x02, 0x03], None);
        assert_eq!(z, vec![0x01, 0x03, 0x00]);
        let back = spd_unapply(&[0u8; 3], &[0u8; 3], &z, None);
        assert_eq!(back, vec![0x01, 0x02, 0x03]);
    }

    #[test]
    fn spd_rejects_empty_input() {
        let tk = key([2; 32]);
        assert!(matches!(spd_encrypt_tile(&tk, &[], true), Err(Error::Format(_))));
        assert!(matches!(spd_decrypt_tile(&tk, &[], false), Err(Error::Format(_))));
    }

    #[test]
    fn spd_is_deterministic_and_key_separated() {
        let tk = key([3; 32]);
        let data = [7u8; 128];
        assert_eq!(
            spd_encrypt_tile(&tk, &data, true).unwrap(),
            spd_encrypt_tile(&tk, &data, true).unwrap()
        );
        assert_ne!(
            spd_encrypt_tile(&tk, &data, true).unwrap(),
            spd_encrypt_tile(&key([4; 32]), &data, true).unwrap()
        );
    }

    #[test]
    fn spd_flip_changes_exactly_the_mapped_suffix() {
        let tk = key(core::array::from_fn(|k| (k * 3 + 1) as u8));
        let n = 64usize;
        let data: Vec<u8> = (0..n as u8).collect();
        for permute in [false, true] {
            let (s1, _) = spd_streams(&tk, n, permute);
            let pi = permute.then(|| perm_index(&s1, n).unwrap());
            let base = spd_encrypt_tile(&tk, &data, permute).unwrap();
            for p in [0usize, 17, n - 1] {
                let mut flipped = data.clone();
                flipped[p] ^= 0x5C;
                let enc = spd_encrypt_tile(&tk, &flipped, permute).unwrap();
                let first_changed = match &pi {
                    Some(pi) => pi.iter().position(|&q| q == p).unwrap(),
                    None => p,
                };
                for k in 0..n {
                    assert_eq!(
                        base[k] != enc[k],
                        k >= first_changed,
                        "permute={permute} flip at {p}: byte {k}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn ctr_is_an_involution(
            data in proptest::collection::vec(any::<u8>(), 1..512),
            kb in any::<[u8; 32]>(),
            nb in any::<[u8; 16]>(),
        ) {
            let tk = key(kb);
            let params = CtrParams::from_nonce(&Nonce(nb));
            let ct = aes_ctr_tile(&tk, &params, &data);
            prop_assert_eq!(aes_ctr_tile(&tk, &params, &ct), data);
        }

        #[test]
        fn spd_roundtrips(
            data in proptest::collection::vec(any::<u8>(), 1..256),
            kb in any::<[u8; 32]>(),
            permute in any::<bool>(),
        ) {
            let tk = key(kb);
            let ct = spd_encrypt_tile(&tk, &data, permute).unwrap();
            prop_assert_eq!(ct.len(), data.len());
            prop_assert_eq!(spd_decrypt_tile(&tk, &ct, permute).unwrap(), data);
        }

        #[test]
        fn perm_is_a_bijection(ks in proptest::collection::vec(any::<u8>(), 256), n in 1usize..32) {
            let pi = perm_index(&ks, n).unwrap();
            let mut seen = vec![false; n];
            for &v in &pi {
                prop_assert!(v < n && !seen[v]);
                seen[v] = true;
            }
        }
    }
}
