//! Tilewise domain-separated selective encryption (TDS-SE) and the
//! chosen-plaintext evaluation harness built around it.
//!
//! The library is organized around the encryption pipeline and the probes
//! that attack it:
//!
//! * [`image`] — image tensors, ROI masks, and the tile grid;
//! * [`keys`] — key / nonce value types and the variant identifiers;
//! * [`keyschedule`] — HKDF-HMAC-SHA256 and the per-variant tile key rules;
//! * [`tile_cipher`] — AES-128-CTR tile encryption and the mask–permute–diffuse
//!   stream construction used for cipher ablations;
//! * [`roi`] — seeded rectangle-union ROI masks and tile selection;
//! * [`pipeline`] — selective per-tile encryption of whole frames plus the
//!   on-disk frame container;
//! * [`probes`] — the low-frequency tile proxy and the ridge / CNN
//!   reconstruction attackers;
//! * [`metrics`] — PSNR / SSIM on the low-frequency proxy and aggregation;
//! * [`protocols`] — the E2–E5 evaluation protocols and the CPA sanity check;
//! * [`synth`], [`netpbm`], [`config`] — synthetic imagery, PGM/PPM I/O, and
//!   run configuration for the `tdsse` binary.
//!
//! All randomness is seeded and all protocol outputs are deterministic:
//! identical configuration and seed produce byte-identical CSVs. The
//! `parallel` feature (default on) runs independent tiles, frames, and
//! protocol cells on rayon; disabling it yields a fully sequential build
//! with identical outputs.

pub mod config;
pub mod error;
pub mod exec;
pub mod image;
pub mod keys;
pub mod keyschedule;
pub mod metrics;
pub mod netpbm;
pub mod pipeline;
pub mod probes;
pub mod protocols;
pub mod roi;
pub mod synth;
pub mod tile_cipher;

pub use error::{Error, Result};
