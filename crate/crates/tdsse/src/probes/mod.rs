//! Reconstruction attackers and their shared input transform.
//!
//! Both attackers see tiles only through the 16×16 low-frequency proxy:
//! grayscale conversion, 4×4 mean pooling of the 64×64 tile, and scaling
//! to [0, 1]. Ciphertext tiles pass through the *same* transform as
//! plaintext targets — the attacker is given no side channel beyond the
//! tile bytes themselves.

pub mod cnn;
pub mod ridge;

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use cnn::{fit_cnn, predict_cnn, CnnFit, CnnModel, TrainOptions};
pub use ridge::{fit_ridge, fit_ridge_swept, predict_ridge, RidgeModel, LAMBDA_SWEEP};

/// Side length of the pooled proxy.
pub const LOWFREQ_SIDE: usize = 16;
/// Flattened proxy dimension.
pub const LOWFREQ_DIM: usize = LOWFREQ_SIDE * LOWFREQ_SIDE;
/// Tile side length the proxy is defined over.
pub const TILE_SIDE: usize = 64;
const POOL: usize = TILE_SIDE / LOWFREQ_SIDE; // 4×4 mean pooling

/// 16×16 low-frequency tile proxy, values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LowFreqTile {
    pub values: [f64; LOWFREQ_DIM],
}

impl LowFreqTile {
    pub fn zeros() -> Self {
        LowFreqTile { values: [0.0; LOWFREQ_DIM] }
    }
}

/// Maps a 64×64 tile (1 or 3 interleaved channels) to its proxy:
/// luma weights 0.299/0.587/0.114 for RGB, identity for single-channel,
/// then 4×4 block means scaled by 1/255.
pub fn to_lowfreq(tile: &[u8], channels: usize) -> Result<LowFreqTile> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    let expect = TILE_SIDE * TILE_SIDE * channels;
    if tile.len() != expect {
        return Err(Error::Format(format!(
            "tile buffer is {} bytes, expected {expect} for a {TILE_SIDE}x{TILE_SIDE}x{channels} tile",
            tile.len()
        )));
    }
    let mut gray = [0.0f64; TILE_SIDE * TILE_SIDE];
    match channels {
        1 => {
            for (g, &b) in gray.iter_mut().zip(tile) {
                *g = b as f64;
            }
        }
        _ => {
            for (p, g) in gray.iter_mut().enumerate() {
                let base = p * 3;
                *g = 0.299 * tile[base] as f64
                    + 0.587 * tile[base + 1] as f64
                    + 0.114 * tile[base + 2] as f64;
            }
        }
    }
    let mut out = LowFreqTile::zeros();
    for oy in 0..LOWFREQ_SIDE {
        for ox in 0..LOWFREQ_SIDE {
            let mut sum = 0.0;
            for py in 0..POOL {
                let row = (oy * POOL + py) * TILE_SIDE + ox * POOL;
                for px in 0..POOL {
                    sum += gray[row + px];
                }
            }
            out.values[oy * LOWFREQ_SIDE + ox] = sum / (POOL * POOL) as f64 / 255.0;
        }
    }
    Ok(out)
}

/// The two learned attackers of the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackerId {
    Lr,
    Cnn,
}

impl AttackerId {
    pub const ALL: [AttackerId; 2] = [AttackerId::Lr, AttackerId::Cnn];

    pub fn label(&self) -> &'static str {
        match self {
            AttackerId::Lr => "Att-LR",
            AttackerId::Cnn => "Att-CNN",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim();
        AttackerId::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(norm))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown attacker {s:?}; valid: Att-LR, Att-CNN"
                ))
            })
    }

    /// Stable one-byte code used in seed derivations.
    pub fn code(&self) -> u8 {
        match self {
            AttackerId::Lr => 0,
            AttackerId::Cnn => 1,
        }
    }
}

impl std::fmt::Display for AttackerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A trained attacker of either family.
#[derive(Debug, Clone)]
pub enum ProbeModel {
    Ridge(RidgeModel),
    Cnn(CnnModel),
}

impl ProbeModel {
    /// Predicts the plaintext proxy; outputs are clamped to [0, 1].
    pub fn predict(&self, x: &LowFreqTile) -> LowFreqTile {
        match self {
            ProbeModel::Ridge(m) => predict_ridge(m, x),
            ProbeModel::Cnn(m) => predict_cnn(m, x),
        }
    }

    pub fn attacker(&self) -> AttackerId {
        match self {
            ProbeModel::Ridge(_) => AttackerId::Lr,
            ProbeModel::Cnn(_) => AttackerId::Cnn,
        }
    }
}

// --- flat binary model files -------------------------------------------------
//
// Layout: magic "TDSM1", kind byte (0 = ridge, 1 = cnn), array count, then
// per array a dimension count, u32 LE dims, and the f64 LE payload.

const MODEL_MAGIC: &[u8; 5] = b"TDSM1";
const KIND_RIDGE: u8 = 0;
const KIND_CNN: u8 = 1;

fn push_array(out: &mut Vec<u8>, dims: &[u32], data: &[f64]) {
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    debug_assert_eq!(dims.iter().map(|&d| d as usize).product::<usize>(), data.len());
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct ArrayReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ArrayReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("model file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_array(&mut self, expect_dims: &[u32]) -> Result<Vec<f64>> {
        let ndim = self.take(1)?[0] as usize;
        if ndim != expect_dims.len() {
            return Err(Error::Format(format!(
                "model array has {ndim} dims, expected {}",
                expect_dims.len()
            )));
        }
        let mut count = 1usize;
        for &want in expect_dims {
            let got = u32::from_le_bytes(self.take(4)?.try_into().unwrap());
            if got != want {
                return Err(Error::Format(format!(
                    "model array dimension {got}, expected {want}"
                )));
            }
            count *= want as usize;
        }
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn encode_model(model: &ProbeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    match model {
        ProbeModel::Ridge(m) => {
            out.push(KIND_RIDGE);
            out.push(3); // arrays: lambda, weights, bias
            push_array(&mut out, &[1], &[m.lambda]);
            push_array(&mut out, &[LOWFREQ_DIM as u32, LOWFREQ_DIM as u32], &m.weights);
            push_array(&mut out, &[LOWFREQ_DIM as u32], &m.bias);
        }
        ProbeModel::Cnn(m) => {
            out.push(KIND_CNN);
            let shapes = cnn::LAYER_SHAPES;
            out.push(shapes.len() as u8);
            let mut off = 0usize;
            for dims in shapes {
                let len: usize = dims.iter().map(|&d| d as usize).product();
                push_array(&mut out, dims, &m.params()[off..off + len]);
                off += len;
            }
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ProbeModel> {
    let mut r = ArrayReader { buf: bytes, pos: 0 };
    if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let kind = r.take(1)?[0];
    let n_arrays = r.take(1)?[0] as usize;
    let model = match kind {
        KIND_RIDGE => {
            if n_arrays != 3 {
                return Err(Error::Format(format!(
                    "ridge model must have 3 arrays, found {n_arrays}"
                )));
            }
            let lambda = r.read_array(&[1])?[0];
            let weights = r.read_array(&[LOWFREQ_DIM as u32, LOWFREQ_DIM as u32])?;
            let bias = r.read_array(&[LOWFREQ_DIM as u32])?;
            ProbeModel::Ridge(RidgeModel { weights, bias, lambda })
        }
        KIND_CNN => {
            let shapes = cnn::LAYER_SHAPES;
            if n_arrays != shapes.len() {
                return Err(Error::Format(format!(
                    "cnn model must have {} arrays, found {n_arrays}",
                    shapes.len()
                )));
            }
            let mut params = Vec::with_capacity(cnn::PARAM_COUNT);
            for dims in shapes {
                params.extend(r.read_array(dims)?);
            }
            ProbeModel::Cnn(CnnModel::from_params(params)?)
        }
        other => return Err(Error::Format(format!("unknown model kind {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after model payload".into()));
    }
    Ok(model)
}

pub fn save_model(model: &ProbeModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ProbeModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
