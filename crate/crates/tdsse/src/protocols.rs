//! Evaluation protocols for the selective-encryption pipeline.
//!
//! * **E2** — leakage of each key-schedule variant under both learned
//!   attackers, trained and evaluated on ROI tiles of disjoint image
//!   splits.
//! * **E3** — the same comparison including the whole-image AES-CTR
//!   baseline as a method row.
//! * **E4** — training-scenario ablation: attackers trained on true ROI
//!   tiles (S1), on every tile including pass-through plaintext (S2), or
//!   on tiles picked by a deliberately mismatched mask (S3); all
//!   evaluated on true ROI tiles of held-out images.
//! * **E5** — spatial transfer: attackers trained on one forced source
//!   tile position and evaluated per target position, with a per-target
//!   transfer matrix alongside the aggregate rows.
//! * **CPA** — chosen-plaintext keystream recovery: a query frame with a
//!   zeroed tile is encrypted under the *same* nonce as the target frame,
//!   the recovered keystream is replayed against the frame's other ROI
//!   tiles, and the reconstruction quality exposes tile-key reuse.
//!
//! Every random choice flows from the per-repetition seed through tagged
//! SHA-256 derivations, so runs are bit-reproducible and shared stages
//! (data, masks, nonces, model initialization) coincide across protocols
//! by construction.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::image::{tile_bytes, tile_grid, write_tile, ImageTensor, RoiMask};
use crate::keys::{MasterKey, Nonce, VariantId};
use crate::metrics::{aggregate, metric_pair};
use crate::pipeline::{encrypt_frame_with_nonce, CipherKind, EncryptedFrame, PipelineConfig};
use crate::probes::{
    fit_cnn, fit_ridge_swept, to_lowfreq, AttackerId, LowFreqTile, ProbeModel, TrainOptions,
};
use crate::roi::{generate_mask, mismatch_mask, select_roi_tiles, RoiPolicy};
use crate::synth::synth_images;

/// The protocols the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolId {
    E2,
    E3,
    E4,
    E5,
    Cpa,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 5] = [
        ProtocolId::E2,
        ProtocolId::E3,
        ProtocolId::E4,
        ProtocolId::E5,
        ProtocolId::Cpa,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ProtocolId::E2 => "E2",
            ProtocolId::E3 => "E3",
            ProtocolId::E4 => "E4",
            ProtocolId::E5 => "E5",
            ProtocolId::Cpa => "CPA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim();
        ProtocolId::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(norm))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown protocol {s:?}; valid: E2, E3, E4, E5, CPA"
                ))
            })
    }

    /// Default method set for this protocol.
    pub fn default_variants(&self) -> Vec<VariantId> {
        let ablations = vec![VariantId::A0, VariantId::A1, VariantId::A2, VariantId::A3];
        match self {
            ProtocolId::E3 => {
                let mut v = ablations;
                v.push(VariantId::AesCtrFull);
                v
            }
            ProtocolId::Cpa => vec![VariantId::B1, VariantId::A3],
            _ => ablations,
        }
    }
}

impl std::fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// E4 training scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// Train on the true ROI tiles of the training images.
    S1,
    /// Train on every tile, including plaintext pass-through tiles.
    S2,
    /// Train on tiles selected by a mismatched mask.
    S3,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::S1, Scenario::S2, Scenario::S3];

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
        }
    }

    pub fn code(&self) -> u64 {
        match self {
            Scenario::S1 => 0,
            Scenario::S2 => 1,
            Scenario::S3 => 2,
        }
    }
}

/// E5 source tile positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourcePos {
    Center,
    Corner,
}

impl SourcePos {
    pub const ALL: [SourcePos; 2] = [SourcePos::Center, SourcePos::Corner];

    pub fn label(&self) -> &'static str {
        match self {
            SourcePos::Center => "center",
            SourcePos::Corner => "corner00",
        }
    }

    /// Seed-derivation code, offset away from the scenario codes so E5
    /// models never alias the split-protocol models.
    pub fn code(&self) -> u64 {
        match self {
            SourcePos::Center => 100,
            SourcePos::Corner => 101,
        }
    }

    pub fn tile(&self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            SourcePos::Center => (rows / 2, cols / 2),
            SourcePos::Corner => (0, 0),
        }
    }
}

/// Full description of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolSpec {
    pub protocol: ProtocolId,
    pub master: MasterKey,
    pub variants: Vec<VariantId>,
    pub attackers: Vec<AttackerId>,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub cipher: CipherKind,
    pub policy: RoiPolicy,
    /// Repetition seeds; tile metrics are pooled across repetitions
    /// before aggregation.
    pub seeds: Vec<u64>,
    /// Whole-buffer mode for the AES-CTR baseline method.
    pub full_image_baseline: bool,
    /// Diagnostic: swap the train/eval image splits.
    pub swap_split: bool,
}

impl ProtocolSpec {
    /// Desk-scale defaults: 200 synthetic 256×256 RGB frames, 64-pixel
    /// tiles, 30% coverage target, 0.5 tile threshold, AES-CTR tiles.
    pub fn new(protocol: ProtocolId, master: MasterKey, seed: u64) -> Self {
        ProtocolSpec {
            protocol,
            master,
            variants: protocol.default_variants(),
            attackers: vec![AttackerId::Lr, AttackerId::Cnn],
            n_images: 200,
            height: 256,
            width: 256,
            channels: 3,
            cipher: CipherKind::AesCtr,
            policy: RoiPolicy { tile_size: 64, threshold: 0.5, target_coverage: 0.3, seed },
            seeds: vec![seed],
            full_image_baseline: false,
            swap_split: false,
        }
    }

    pub fn dataset_label(&self) -> String {
        format!(
            "synth-n{}-{}x{}x{}",
            self.n_images, self.height, self.width, self.channels
        )
    }

    fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Protocol("no variants selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Protocol("no repetition seeds".into()));
        }
        if self.n_images < 2 {
            return Err(Error::Protocol(format!(
                "protocols need at least 2 images, got {}",
                self.n_images
            )));
        }
        if self.policy.tile_size != 64 {
            return Err(Error::Protocol(format!(
                "attacker probes are defined over 64x64 tiles, got tile size {}",
                self.policy.tile_size
            )));
        }
        match self.protocol {
            ProtocolId::Cpa => {
                for needed in [VariantId::B1, VariantId::A3] {
                    if !self.variants.contains(&needed) {
                        return Err(Error::Protocol(format!(
                            "the key-reuse probe requires variant {needed} in the method set"
                        )));
                    }
                }
                if self.cipher != CipherKind::AesCtr {
                    return Err(Error::Protocol(
                        "the key-reuse probe recovers CTR keystream and requires the aes-ctr \
                         cipher"
                            .into(),
                    ));
                }
            }
            _ => {
                if self.attackers.is_empty() {
                    return Err(Error::Protocol("no attackers selected".into()));
                }
            }
        }
        Ok(())
    }
}

/// One aggregate line of a protocol report.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub protocol: String,
    pub dataset: String,
    pub attacker: String,
    pub method: String,
    /// E4 training scenario; empty elsewhere.
    pub scenario: String,
    /// E5 source position; empty elsewhere.
    pub source: String,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub n_tiles: usize,
}

/// One per-target line of the E5 transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub source: String,
    pub target_i: usize,
    pub target_j: usize,
    pub attacker: String,
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_tiles: usize,
}

/// Everything a protocol run produces.
#[derive(Debug, Clone)]
pub struct ProtocolOutput {
    pub rows: Vec<ResultRow>,
    /// Populated by E5 only.
    pub transfer: Vec<TransferCell>,
}

// --- seed derivation ---------------------------------------------------------

/// 32 tagged bytes derived from a repetition seed: SHA-256 over a framed
/// encoding of `(seed, tag, nums)`.
pub fn sub_bytes(seed: u64, tag: &str, nums: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"TDSSE-SUB");
    h.update(seed.to_be_bytes());
    h.update((tag.len() as u32).to_be_bytes());
    h.update(tag.as_bytes());
    h.update((nums.len() as u32).to_be_bytes());
    for &n in nums {
        h.update(n.to_be_bytes());
    }
    h.finalize().into()
}

/// First eight tagged bytes as a big-endian sub-seed.
pub fn sub_seed(seed: u64, tag: &str, nums: &[u64]) -> u64 {
    u64::from_be_bytes(sub_bytes(seed, tag, nums)[..8].try_into().unwrap())
}

fn nonce_for(seed: u64, variant: VariantId, img: usize) -> Nonce {
    if variant == VariantId::A2 {
        return Nonce::ZERO;
    }
    let raw = sub_bytes(seed, "nonce", &[variant.code() as u64, img as u64]);
    let mut n = [0u8; 16];
    n.copy_from_slice(&raw[..16]);
    Nonce(n)
}

// --- dataset construction ----------------------------------------------------

struct Dataset {
    images: Vec<ImageTensor>,
    masks: Vec<RoiMask>,
    roi: Vec<BTreeSet<(usize, usize)>>,
    rows: usize,
    cols: usize,
}

fn build_dataset(spec: &ProtocolSpec, seed: u64) -> Result<Dataset> {
    let data_seed = sub_seed(seed, "data", &[]);
    let raw = synth_images(spec.n_images, spec.height, spec.width, spec.channels, data_seed)?;
    let s = spec.policy.tile_size;
    let mut images = Vec::with_capacity(raw.len());
    for img in raw {
        images.push(img.center_crop_to_multiple(s)?);
    }
    let (rows, cols) = tile_grid(images[0].height(), images[0].width(), s)?;
    let mut masks = Vec::with_capacity(images.len());
    let mut roi = Vec::with_capacity(images.len());
    for (k, img) in images.iter().enumerate() {
        let mask_seed = sub_seed(seed, "mask", &[k as u64]);
        let mask = generate_mask(&spec.policy.with_seed(mask_seed), img.height(), img.width())?;
        roi.push(select_roi_tiles(&mask, s, spec.policy.threshold)?);
        masks.push(mask);
    }
    Ok(Dataset { images, masks, roi, rows, cols })
}

fn pipeline_cfg(spec: &ProtocolSpec, variant: VariantId) -> PipelineConfig {
    PipelineConfig {
        variant,
        cipher: spec.cipher,
        policy: spec.policy,
        full_image_baseline: spec.full_image_baseline && variant == VariantId::AesCtrFull,
    }
}

/// Encrypts every image of the dataset under one variant, using the
/// supplied masks (which may differ from the dataset's own, e.g. the E5
/// augmented masks).
fn encrypt_all(
    spec: &ProtocolSpec,
    images: &[ImageTensor],
    masks: &[RoiMask],
    seed: u64,
    variant: VariantId,
) -> Result<Vec<EncryptedFrame>> {
    let cfg = pipeline_cfg(spec, variant);
    let master = spec.master;
    let frames = exec::map_indices(images.len(), |k| {
        let nonce = nonce_for(seed, variant, k);
        encrypt_frame_with_nonce(&cfg, &master, k as u32, nonce, &images[k], &masks[k])
    });
    frames.into_iter().collect()
}

fn tile_pair(
    spec: &ProtocolSpec,
    plain: &ImageTensor,
    cipher_img: &ImageTensor,
    i: usize,
    j: usize,
) -> Result<(LowFreqTile, LowFreqTile)> {
    let s = spec.policy.tile_size;
    let x = to_lowfreq(&tile_bytes(cipher_img, i, j, s)?, spec.channels)?;
    let y = to_lowfreq(&tile_bytes(plain, i, j, s)?, spec.channels)?;
    Ok((x, y))
}

/// Collects (ciphertext proxy, plaintext proxy) pairs over the given
/// images at the given per-image tile sets.
fn collect_pairs(
    spec: &ProtocolSpec,
    ds: &Dataset,
    frames: &[EncryptedFrame],
    imgs: &[usize],
    tiles_of: impl Fn(usize) -> BTreeSet<(usize, usize)>,
) -> Result<(Vec<LowFreqTile>, Vec<LowFreqTile>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &k in imgs {
        for (i, j) in tiles_of(k) {
            let (x, y) = tile_pair(spec, &ds.images[k], &frames[k].image, i, j)?;
            xs.push(x);
            ys.push(y);
        }
    }
    Ok((xs, ys))
}

fn split_indices(n: usize, swap: bool) -> (Vec<usize>, Vec<usize>) {
    let even: Vec<usize> = (0..n).step_by(2).collect();
    let odd: Vec<usize> = (1..n).step_by(2).collect();
    if swap {
        (odd, even)
    } else {
        (even, odd)
    }
}

fn fit_attacker(
    attacker: AttackerId,
    xs: &[LowFreqTile],
    ys: &[LowFreqTile],
    model_seed: u64,
) -> Result<ProbeModel> {
    match attacker {
        AttackerId::Lr => Ok(ProbeModel::Ridge(fit_ridge_swept(xs, ys)?)),
        AttackerId::Cnn => {
            let fit = fit_cnn(xs, ys, TrainOptions::with_seed(model_seed))?;
            Ok(ProbeModel::Cnn(fit.model))
        }
    }
}

#[derive(Default)]
struct MetricPool {
    psnrs: Vec<f64>,
    ssims: Vec<f64>,
}

impl MetricPool {
    fn push_eval(&mut self, model: &ProbeModel, xs: &[LowFreqTile], ys: &[LowFreqTile]) {
        for (x, y) in xs.iter().zip(ys) {
            let pred = model.predict(x);
            let m = metric_pair(&pred, y);
            self.psnrs.push(m.psnr_db);
            self.ssims.push(m.ssim);
        }
    }

    fn into_row(
        self,
        spec: &ProtocolSpec,
        attacker: &str,
        method: &str,
        scenario: &str,
        source: &str,
    ) -> Result<ResultRow> {
        let (psnr_mean, psnr_std) = aggregate(&self.psnrs)?;
        let (ssim_mean, ssim_std) = aggregate(&self.ssims)?;
        Ok(ResultRow {
            protocol: spec.protocol.label().to_string(),
            dataset: spec.dataset_label(),
            attacker: attacker.to_string(),
            method: method.to_string(),
            scenario: scenario.to_string(),
            source: source.to_string(),
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
            n_tiles: self.psnrs.len(),
        })
    }
}

/// Stable report order: protocol, attacker, method, scenario, source.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (&a.protocol, &a.attacker, &a.method, &a.scenario, &a.source).cmp(&(
            &b.protocol,
            &b.attacker,
            &b.method,
            &b.scenario,
            &b.source,
        ))
    });
}

// --- protocol bodies ---------------------------------------------------------

/// E2/E3 shared body: per variant and attacker, train on ROI tiles of the
/// training split, evaluate on ROI tiles of the held-out split.
fn run_split_protocol(spec: &ProtocolSpec) -> Result<ProtocolOutput> {
    let mut pools: BTreeMap<(VariantId, AttackerId), MetricPool> = BTreeMap::new();
    for &seed in &spec.seeds {
        let ds = build_dataset(spec, seed)?;
        let (train_idx, eval_idx) = split_indices(spec.n_images, spec.swap_split);
        for &variant in &spec.variants {
            let frames = encrypt_all(spec, &ds.images, &ds.masks, seed, variant)?;
            let (tx, ty) =
                collect_pairs(spec, &ds, &frames, &train_idx, |k| ds.roi[k].clone())?;
            if tx.is_empty() {
                return Err(Error::Protocol(
                    "training split contains no ROI tiles".into(),
                ));
            }
            let (ex, ey) = collect_pairs(spec, &ds, &frames, &eval_idx, |k| ds.roi[k].clone())?;
            if ex.is_empty() {
                return Err(Error::Protocol(
                    "evaluation split contains no ROI tiles".into(),
                ));
            }
            for &attacker in &spec.attackers {
                let model_seed = sub_seed(
                    seed,
                    "model",
                    &[variant.code() as u64, attacker.code() as u64, Scenario::S1.code()],
                );
                let model = fit_attacker(attacker, &tx, &ty, model_seed)?;
                pools
                    .entry((variant, attacker))
                    .or_default()
                    .push_eval(&model, &ex, &ey);
            }
        }
    }
    let mut rows = Vec::new();
    for ((variant, attacker), pool) in pools {
        rows.push(pool.into_row(spec, attacker.label(), variant.label(), "", "")?);
    }
    sort_rows(&mut rows);
    Ok(ProtocolOutput { rows, transfer: Vec::new() })
}

/// E4: the three training scenarios, all evaluated on true ROI tiles of
/// the held-out split.
fn run_e4(spec: &ProtocolSpec) -> Result<ProtocolOutput> {
    let mut pools: BTreeMap<(Scenario, VariantId, AttackerId), MetricPool> = BTreeMap::new();
    for &seed in &spec.seeds {
        let ds = build_dataset(spec, seed)?;
        let (train_idx, eval_idx) = split_indices(spec.n_images, spec.swap_split);

        // Mismatched masks for S3: drawn per training image, forced to
        // select a different tile set than the true mask.
        let mut mm_tiles: BTreeMap<usize, BTreeSet<(usize, usize)>> = BTreeMap::new();
        for &k in &train_idx {
            let mm_seed = sub_seed(seed, "mismatch", &[k as u64]);
            let mm = mismatch_mask(&spec.policy, &ds.masks[k], mm_seed)?;
            mm_tiles.insert(
                k,
                select_roi_tiles(&mm, spec.policy.tile_size, spec.policy.threshold)?,
            );
        }
        let all_tiles: BTreeSet<(usize, usize)> = (0..ds.rows)
            .flat_map(|i| (0..ds.cols).map(move |j| (i, j)))
            .collect();

        for &variant in &spec.variants {
            let frames = encrypt_all(spec, &ds.images, &ds.masks, seed, variant)?;
            let (ex, ey) = collect_pairs(spec, &ds, &frames, &eval_idx, |k| ds.roi[k].clone())?;
            if ex.is_empty() {
                return Err(Error::Protocol(
                    "evaluation split contains no ROI tiles".into(),
                ));
            }
            for scenario in Scenario::ALL {
                let (tx, ty) = match scenario {
                    Scenario::S1 => {
                        collect_pairs(spec, &ds, &frames, &train_idx, |k| ds.roi[k].clone())?
                    }
                    Scenario::S2 => {
                        collect_pairs(spec, &ds, &frames, &train_idx, |_| all_tiles.clone())?
                    }
                    Scenario::S3 => {
                        collect_pairs(spec, &ds, &frames, &train_idx, |k| mm_tiles[&k].clone())?
                    }
                };
                if tx.is_empty() {
                    return Err(Error::Protocol(format!(
                        "scenario {} produced an empty training set",
                        scenario.label()
                    )));
                }
                for &attacker in &spec.attackers {
                    let model_seed = sub_seed(
                        seed,
                        "model",
                        &[variant.code() as u64, attacker.code() as u64, scenario.code()],
                    );
                    let model = fit_attacker(attacker, &tx, &ty, model_seed)?;
                    pools
                        .entry((scenario, variant, attacker))
                        .or_default()
                        .push_eval(&model, &ex, &ey);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for ((scenario, variant, attacker), pool) in pools {
        rows.push(pool.into_row(
            spec,
            attacker.label(),
            variant.label(),
            scenario.label(),
            "",
        )?);
    }
    sort_rows(&mut rows);
    Ok(ProtocolOutput { rows, transfer: Vec::new() })
}

fn force_tile(mask: &RoiMask, i: usize, j: usize, s: usize) -> RoiMask {
    let mut out = mask.clone();
    for y in i * s..(i + 1) * s {
        for x in j * s..(j + 1) * s {
            out.set(y, x, true);
        }
    }
    out
}

/// E5: train at a forced source tile position, evaluate per target
/// position on held-out images.
fn run_e5(spec: &ProtocolSpec) -> Result<ProtocolOutput> {
    // Pool per (source, variant, attacker, target): metrics across seeds.
    let mut pools: BTreeMap<
        (SourcePos, VariantId, AttackerId, (usize, usize)),
        MetricPool,
    > = BTreeMap::new();
    let mut grid = (0usize, 0usize);
    for &seed in &spec.seeds {
        let ds = build_dataset(spec, seed)?;
        grid = (ds.rows, ds.cols);
        if ds.rows * ds.cols < 2 {
            return Err(Error::Protocol(format!(
                "spatial transfer needs at least two tiles, got a {}x{} grid",
                ds.rows, ds.cols
            )));
        }
        let (train_idx, eval_idx) = split_indices(spec.n_images, spec.swap_split);
        let s = spec.policy.tile_size;
        for source in SourcePos::ALL {
            let (si, sj) = source.tile(ds.rows, ds.cols);
            // Augment every mask so the source tile is always selected.
            let masks: Vec<RoiMask> =
                ds.masks.iter().map(|m| force_tile(m, si, sj, s)).collect();
            let mut roi = Vec::with_capacity(masks.len());
            for m in &masks {
                roi.push(select_roi_tiles(m, s, spec.policy.threshold)?);
            }
            for &variant in &spec.variants {
                let frames = encrypt_all(spec, &ds.images, &masks, seed, variant)?;
                let source_set: BTreeSet<(usize, usize)> = [(si, sj)].into_iter().collect();
                let (tx, ty) =
                    collect_pairs(spec, &ds, &frames, &train_idx, |_| source_set.clone())?;
                for &attacker in &spec.attackers {
                    let model_seed = sub_seed(
                        seed,
                        "model",
                        &[variant.code() as u64, attacker.code() as u64, source.code()],
                    );
                    let model = fit_attacker(attacker, &tx, &ty, model_seed)?;
                    for ti in 0..ds.rows {
                        for tj in 0..ds.cols {
                            if (ti, tj) == (si, sj) {
                                continue;
                            }
                            // Evaluate on held-out images where the target
                            // tile is actually encrypted.
                            let mut xs = Vec::new();
                            let mut ys = Vec::new();
                            for &k in &eval_idx {
                                if !roi[k].contains(&(ti, tj)) {
                                    continue;
                                }
                                let (x, y) = tile_pair(
                                    spec,
                                    &ds.images[k],
                                    &frames[k].image,
                                    ti,
                                    tj,
                                )?;
                                xs.push(x);
                                ys.push(y);
                            }
                            pools
                                .entry((source, variant, attacker, (ti, tj)))
                                .or_default()
                                .push_eval(&model, &xs, &ys);
                        }
                    }
                }
            }
        }
    }

    // Per-target cells, then across-target aggregation per row.
    let mut transfer = Vec::new();
    let mut row_stats: BTreeMap<(SourcePos, VariantId, AttackerId), (Vec<f64>, Vec<f64>, usize)> =
        BTreeMap::new();
    for ((source, variant, attacker, (ti, tj)), pool) in pools {
        if pool.psnrs.is_empty() {
            continue; // target never encrypted in the eval split
        }
        let (p_mean, _) = aggregate(&pool.psnrs)?;
        let (s_mean, _) = aggregate(&pool.ssims)?;
        transfer.push(TransferCell {
            source: source.label().to_string(),
            target_i: ti,
            target_j: tj,
            attacker: attacker.label().to_string(),
            method: variant.label().to_string(),
            psnr_db: p_mean,
            ssim: s_mean,
            n_tiles: pool.psnrs.len(),
        });
        let entry = row_stats.entry((source, variant, attacker)).or_default();
        entry.0.push(p_mean);
        entry.1.push(s_mean);
        entry.2 += pool.psnrs.len();
    }

    let mut rows = Vec::new();
    for ((source, variant, attacker), (p_means, s_means, n)) in row_stats {
        if p_means.is_empty() {
            return Err(Error::Protocol(format!(
                "no target tiles were encrypted for source {} on the {}x{} grid",
                source.label(),
                grid.0,
                grid.1
            )));
        }
        let (psnr_mean, psnr_std) = aggregate(&p_means)?;
        let (ssim_mean, ssim_std) = aggregate(&s_means)?;
        rows.push(ResultRow {
            protocol: spec.protocol.label().to_string(),
            dataset: spec.dataset_label(),
            attacker: attacker.label().to_string(),
            method: variant.label().to_string(),
            scenario: String::new(),
            source: source.label().to_string(),
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
            n_tiles: n,
        });
    }
    sort_rows(&mut rows);
    transfer.sort_by(|a, b| {
        (&a.source, &a.attacker, &a.method, a.target_i, a.target_j).cmp(&(
            &b.source,
            &b.attacker,
            &b.method,
            b.target_i,
            b.target_j,
        ))
    });
    Ok(ProtocolOutput { rows, transfer })
}

/// CPA: chosen-plaintext keystream recovery under a reused nonce. The
/// attacker's query zeroes the first ROI tile; its ciphertext is the raw
/// keystream of that tile, which is replayed against the frame's other
/// ROI tiles. Tile-key reuse (B1) makes the replay exact.
fn run_cpa(spec: &ProtocolSpec) -> Result<ProtocolOutput> {
    let mut pools: BTreeMap<VariantId, MetricPool> = BTreeMap::new();
    let s = spec.policy.tile_size;
    for &seed in &spec.seeds {
        let ds = build_dataset(spec, seed)?;
        for &variant in &spec.variants {
            let cfg = pipeline_cfg(spec, variant);
            let pool = pools.entry(variant).or_default();
            for k in 0..ds.images.len() {
                let roi = &ds.roi[k];
                if roi.len() < 2 {
                    log::warn!(
                        "image {k}: {} ROI tile(s), need at least 2 for keystream replay; \
                         skipping",
                        roi.len()
                    );
                    continue;
                }
                let nonce = nonce_for(seed, variant, k);
                let target = encrypt_frame_with_nonce(
                    &cfg,
                    &spec.master,
                    k as u32,
                    nonce,
                    &ds.images[k],
                    &ds.masks[k],
                )?;
                let &(qi, qj) = roi.iter().next().expect("len checked");
                let mut query_plain = ds.images[k].clone();
                write_tile(
                    &mut query_plain,
                    qi,
                    qj,
                    s,
                    &vec![0u8; s * s * spec.channels],
                )?;
                let query = encrypt_frame_with_nonce(
                    &cfg,
                    &spec.master,
                    k as u32,
                    nonce,
                    &query_plain,
                    &ds.masks[k],
                )?;
                // Ciphertext of the zeroed tile is that tile's keystream.
                let keystream = tile_bytes(&query.image, qi, qj, s)?;
                for &(ti, tj) in roi.iter().skip(1) {
                    let ct = tile_bytes(&target.image, ti, tj, s)?;
                    let recovered: Vec<u8> =
                        ct.iter().zip(&keystream).map(|(c, k)| c ^ k).collect();
                    let x = to_lowfreq(&recovered, spec.channels)?;
                    let y = to_lowfreq(&tile_bytes(&ds.images[k], ti, tj, s)?, spec.channels)?;
                    let m = metric_pair(&x, &y);
                    pool.psnrs.push(m.psnr_db);
                    pool.ssims.push(m.ssim);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (variant, pool) in pools {
        if pool.psnrs.is_empty() {
            return Err(Error::Protocol(format!(
                "no image offered two ROI tiles for keystream replay against {variant}"
            )));
        }
        rows.push(pool.into_row(spec, "Att-XOR", variant.label(), "", "")?);
    }
    sort_rows(&mut rows);
    Ok(ProtocolOutput { rows, transfer: Vec::new() })
}

/// Runs a protocol to completion.
pub fn run_protocol(spec: &ProtocolSpec) -> Result<ProtocolOutput> {
    spec.validate()?;
    match spec.protocol {
        ProtocolId::E2 | ProtocolId::E3 => run_split_protocol(spec),
        ProtocolId::E4 => run_e4(spec),
        ProtocolId::E5 => run_e5(spec),
        ProtocolId::Cpa => run_cpa(spec),
    }
}

// --- report serialization ----------------------------------------------------

pub const RESULTS_HEADER: &str =
    "protocol,dataset,attacker,method,scenario,source,psnr_mean,psnr_std,ssim_mean,ssim_std,n_tiles";
pub const TRANSFER_HEADER: &str =
    "source,target_i,target_j,attacker,method,psnr_db,ssim,n_tiles";

fn dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

/// Renders rows as CSV: PSNR to two decimals, SSIM to three, `-` for
/// fields a protocol does not use.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.2},{:.2},{:.3},{:.3},{}\n",
            r.protocol,
            r.dataset,
            r.attacker,
            r.method,
            dash(&r.scenario),
            dash(&r.source),
            r.psnr_mean,
            r.psnr_std,
            r.ssim_mean,
            r.ssim_std,
            r.n_tiles
        ));
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "unexpected results header {other:?}"
            )))
        }
    }
    let undash = |s: &str| if s == "-" { String::new() } else { s.to_string() };
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Format(format!(
                "results line {}: {} fields, expected 11",
                ln + 2,
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("results line {}: bad number {s:?}", ln + 2)))
        };
        rows.push(ResultRow {
            protocol: f[0].to_string(),
            dataset: f[1].to_string(),
            attacker: f[2].to_string(),
            method: f[3].to_string(),
            scenario: undash(f[4]),
            source: undash(f[5]),
            psnr_mean: num(f[6])?,
            psnr_std: num(f[7])?,
            ssim_mean: num(f[8])?,
            ssim_std: num(f[9])?,
            n_tiles: f[10]
                .parse()
                .map_err(|_| Error::Format(format!("results line {}: bad count", ln + 2)))?,
        });
    }
    Ok(rows)
}

pub fn transfer_csv(cells: &[TransferCell]) -> String {
    let mut out = String::from(TRANSFER_HEADER);
    out.push('\n');
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{:.2},{:.3},{}\n",
            c.source, c.target_i, c.target_j, c.attacker, c.method, c.psnr_db, c.ssim, c.n_tiles
        ));
    }
    out
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(results_csv(rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text)
}

pub fn write_transfer_matrix(cells: &[TransferCell], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(transfer_csv(cells).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Deterministic run description: configuration, a short fingerprint of
/// the master key (never the key itself), and the row count. Contains no
/// timestamps so identical runs produce identical files.
pub fn run_metadata(spec: &ProtocolSpec, rows: &[ResultRow]) -> String {
    let fp = Sha256::digest(spec.master.bytes());
    let join = |items: Vec<String>| items.join(",");
    let mut out = String::new();
    out.push_str("harness=tdsse\n");
    out.push_str(&format!("protocol={}\n", spec.protocol));
    out.push_str(&format!("dataset={}\n", spec.dataset_label()));
    out.push_str(&format!(
        "variants={}\n",
        join(spec.variants.iter().map(|v| v.label().to_string()).collect())
    ));
    out.push_str(&format!(
        "attackers={}\n",
        join(spec.attackers.iter().map(|a| a.label().to_string()).collect())
    ));
    out.push_str(&format!("cipher={}\n", spec.cipher.label()));
    out.push_str(&format!("full_image_baseline={}\n", spec.full_image_baseline));
    out.push_str(&format!("tile_size={}\n", spec.policy.tile_size));
    out.push_str(&format!("tile_threshold={:.3}\n", spec.policy.threshold));
    out.push_str(&format!("coverage_target={:.3}\n", spec.policy.target_coverage));
    out.push_str(&format!(
        "seeds={}\n",
        join(spec.seeds.iter().map(|s| s.to_string()).collect())
    ));
    out.push_str(&format!("swap_split={}\n", spec.swap_split));
    out.push_str(&format!(
        "master_key_fingerprint={}\n",
        hex::encode(&fp[..4])
    ));
    out.push_str(&format!("rows={}\n", rows.len()));
    out
}

pub fn write_run_metadata(spec: &ProtocolSpec, rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(run_metadata(spec, rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}
