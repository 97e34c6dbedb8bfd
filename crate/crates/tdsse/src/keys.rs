//! Key material value types and encryption variant identifiers.

use crate::error::{Error, Result};

/// 256-bit master secret shared by all frames of a run.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct MasterKey([u8; 32]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        MasterKey(bytes)
    }

    /// Parses exactly 64 hex characters.
    pub fn from_hex(s: &str) -> Result<Self> {
        let raw = hex::decode(s.trim())
            .map_err(|e| Error::Format(format!("master key is not valid hex: {e}")))?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|v: Vec<u8>| Error::Format(format!("master key must be 32 bytes, got {}", v.len())))?;
        Ok(MasterKey(bytes))
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for MasterKey {
    // Key material stays out of logs and panic messages.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

/// 128-bit per-frame salt. All-zero for the frame-independent variant A2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Nonce(pub [u8; 16]);

impl Nonce {
    pub const ZERO: Nonce = Nonce([0; 16]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 16]
    }
}

/// 256-bit derived tile key; the AES path keys AES-128 from its first
/// 16 bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct TileKey(pub [u8; 32]);

impl std::fmt::Debug for TileKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TileKey(..)")
    }
}

/// Key-derivation variants of the selective encryption pipeline plus the
/// AES-CTR baseline method.
///
/// * `A0` — master key used verbatim for every tile (no freshness, no
///   separation);
/// * `A1` — per-frame key from the frame salt, shared by all tiles;
/// * `A2` — per-tile keys from tile positions only, frame-independent
///   (the frame nonce is pinned to zero);
/// * `A3` — full scheme: per-frame salt plus per-tile info separation;
/// * `B1` — A1's derivation with the cipher-layer nonce/counter parameters
///   deliberately shared by every ROI tile (total keystream reuse);
/// * `AesCtrFull` — the AES-CTR baseline keyed directly from the master key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantId {
    A0,
    A1,
    A2,
    A3,
    B1,
    AesCtrFull,
}

impl VariantId {
    pub const ALL: [VariantId; 6] = [
        VariantId::A0,
        VariantId::A1,
        VariantId::A2,
        VariantId::A3,
        VariantId::B1,
        VariantId::AesCtrFull,
    ];

    /// Method label as reported in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            VariantId::A0 => "A0",
            VariantId::A1 => "A1",
            VariantId::A2 => "A2",
            VariantId::A3 => "A3",
            VariantId::B1 => "B1",
            VariantId::AesCtrFull => "AES-CTR",
        }
    }

    /// Stable one-byte code used by the frame container.
    pub fn code(&self) -> u8 {
        match self {
            VariantId::A0 => 0,
            VariantId::A1 => 1,
            VariantId::A2 => 2,
            VariantId::A3 => 3,
            VariantId::B1 => 4,
            VariantId::AesCtrFull => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        VariantId::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown variant code {code}")))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim();
        VariantId::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(norm))
            .ok_or_else(|| {
                let valid: Vec<&str> = VariantId::ALL.iter().map(|v| v.label()).collect();
                Error::InvalidParameter(format!(
                    "unknown variant {s:?}; valid: {}",
                    valid.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for VariantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}
