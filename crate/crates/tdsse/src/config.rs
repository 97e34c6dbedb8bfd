//! Run configuration: defaults, `key=value` config files, and overrides.
//!
//! Precedence, lowest to highest: built-in defaults, then the config
//! file, then command-line flags. The master key adds an environment
//! lookup between file and flag: flag > `TDSSE_MASTER_KEY` > file >
//! built-in test key.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::keys::{MasterKey, VariantId};
use crate::pipeline::CipherKind;
use crate::probes::AttackerId;
use crate::protocols::{ProtocolId, ProtocolSpec};
use crate::roi::RoiPolicy;

/// Well-known key for tests and demos; never use it to protect anything.
pub const DEFAULT_MASTER_KEY_HEX: &str =
    "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

pub const DEFAULT_N_IMAGES: usize = 200;
pub const DEFAULT_IMAGE_SIZE: usize = 256;
pub const DEFAULT_CHANNELS: usize = 3;
pub const DEFAULT_TILE_SIZE: usize = 64;
pub const DEFAULT_COVERAGE: f64 = 0.3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_OUT_DIR: &str = "tdsse-out";

/// Fields a config source may set; `None` defers to lower precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub protocol: Option<ProtocolId>,
    pub variants: Option<Vec<VariantId>>,
    pub attackers: Option<Vec<AttackerId>>,
    pub n_images: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: Option<usize>,
    pub tile_size: Option<usize>,
    pub coverage: Option<f64>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub master_key: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub cipher: Option<CipherKind>,
    pub full_image: Option<bool>,
}

/// Parses the command-line cipher names. The identity pass-through is a
/// library-level positive control and is deliberately not reachable here.
pub fn parse_cipher(s: &str) -> Result<CipherKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "aes-ctr" => Ok(CipherKind::AesCtr),
        "spd" => Ok(CipherKind::Spd { permute: true }),
        other => Err(Error::InvalidParameter(format!(
            "unknown cipher {other:?}; valid: aes-ctr, spd"
        ))),
    }
}

/// Parses `SIZE` or `HEIGHTxWIDTH` (e.g. `256` or `192x256`).
pub fn parse_image_size(s: &str) -> Result<(usize, usize)> {
    let bad = || {
        Error::InvalidParameter(format!(
            "image size must be SIZE or HEIGHTxWIDTH, got {s:?}"
        ))
    };
    let t = s.trim();
    match t.split_once(['x', 'X']) {
        Some((h, w)) => {
            let h = h.trim().parse::<usize>().map_err(|_| bad())?;
            let w = w.trim().parse::<usize>().map_err(|_| bad())?;
            Ok((h, w))
        }
        None => {
            let n = t.parse::<usize>().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

pub fn parse_variant_list(s: &str) -> Result<Vec<VariantId>> {
    let items: Vec<VariantId> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(VariantId::parse)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidParameter("empty variant list".into()));
    }
    Ok(items)
}

pub fn parse_attacker_list(s: &str) -> Result<Vec<AttackerId>> {
    let items: Vec<AttackerId> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(AttackerId::parse)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidParameter("empty attacker list".into()));
    }
    Ok(items)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidParameter(format!(
            "expected a boolean, got {other:?}"
        ))),
    }
}

impl PartialConfig {
    /// Parses a `key=value` config file. Blank lines and `#` comments are
    /// skipped; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PartialConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format(format!(
                    "config line {}: expected key=value, got {line:?}",
                    ln + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let ctx = |e: Error| {
                Error::InvalidParameter(format!("config line {} ({key}): {e}", ln + 1))
            };
            let parse_num = |what: &str| -> Result<u64> {
                value.parse::<u64>().map_err(|_| {
                    Error::InvalidParameter(format!(
                        "config line {}: {what} must be a non-negative integer, got {value:?}",
                        ln + 1
                    ))
                })
            };
            let parse_float = |what: &str| -> Result<f64> {
                value.parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!(
                        "config line {}: {what} must be a number, got {value:?}",
                        ln + 1
                    ))
                })
            };
            match key {
                "protocol" => cfg.protocol = Some(ProtocolId::parse(value).map_err(ctx)?),
                "variants" => cfg.variants = Some(parse_variant_list(value).map_err(ctx)?),
                "attackers" => cfg.attackers = Some(parse_attacker_list(value).map_err(ctx)?),
                "n_images" => cfg.n_images = Some(parse_num("n_images")? as usize),
                "image_size" => {
                    let (h, w) = parse_image_size(value).map_err(ctx)?;
                    cfg.height = Some(h);
                    cfg.width = Some(w);
                }
                "channels" => cfg.channels = Some(parse_num("channels")? as usize),
                "tile_size" => cfg.tile_size = Some(parse_num("tile_size")? as usize),
                "coverage" => cfg.coverage = Some(parse_float("coverage")?),
                "threshold" => cfg.threshold = Some(parse_float("threshold")?),
                "seed" => cfg.seed = Some(parse_num("seed")?),
                "master_key" => cfg.master_key = Some(value.to_string()),
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                "cipher" => cfg.cipher = Some(parse_cipher(value).map_err(ctx)?),
                "full_image" => cfg.full_image = Some(parse_bool(value).map_err(ctx)?),
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "config line {}: unknown key {other:?}",
                        ln + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overlays `higher` on `self`: any field `higher` sets wins.
    pub fn overlay(self, higher: PartialConfig) -> PartialConfig {
        PartialConfig {
            protocol: higher.protocol.or(self.protocol),
            variants: higher.variants.or(self.variants),
            attackers: higher.attackers.or(self.attackers),
            n_images: higher.n_images.or(self.n_images),
            height: higher.height.or(self.height),
            width: higher.width.or(self.width),
            channels: higher.channels.or(self.channels),
            tile_size: higher.tile_size.or(self.tile_size),
            coverage: higher.coverage.or(self.coverage),
            threshold: higher.threshold.or(self.threshold),
            seed: higher.seed.or(self.seed),
            master_key: higher.master_key.or(self.master_key),
            out_dir: higher.out_dir.or(self.out_dir),
            cipher: higher.cipher.or(self.cipher),
            full_image: higher.full_image.or(self.full_image),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub protocol: ProtocolId,
    pub variants: Vec<VariantId>,
    pub attackers: Vec<AttackerId>,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub policy: RoiPolicy,
    pub seed: u64,
    pub master: MasterKey,
    pub out_dir: PathBuf,
    pub cipher: CipherKind,
    pub full_image: bool,
}

/// Master-key precedence: flag, then environment, then config file,
/// then the built-in test key.
pub fn resolve_master_key(
    flag: Option<&str>,
    env: Option<&str>,
    file: Option<&str>,
) -> Result<MasterKey> {
    MasterKey::from_hex(flag.or(env).or(file).unwrap_or(DEFAULT_MASTER_KEY_HEX))
}

/// Resolves precedence and validates. `env_master_key` carries the
/// `TDSSE_MASTER_KEY` value if set; the flag-level key travels inside
/// `flags.master_key` and wins over it.
pub fn resolve(
    file: PartialConfig,
    flags: PartialConfig,
    env_master_key: Option<String>,
) -> Result<RunConfig> {
    let flag_key = flags.master_key.clone();
    let file_key = file.master_key.clone();
    let merged = file.overlay(flags);
    let protocol = merged.protocol.ok_or_else(|| {
        Error::InvalidParameter(
            "no protocol selected; pass --protocol or set protocol= in the config file".into(),
        )
    })?;
    let master = resolve_master_key(
        flag_key.as_deref(),
        env_master_key.as_deref(),
        file_key.as_deref(),
    )?;

    let seed = merged.seed.unwrap_or(DEFAULT_SEED);
    let channels = merged.channels.unwrap_or(DEFAULT_CHANNELS);
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    let policy = RoiPolicy::new(
        merged.tile_size.unwrap_or(DEFAULT_TILE_SIZE),
        merged.threshold.unwrap_or(DEFAULT_THRESHOLD),
        merged.coverage.unwrap_or(DEFAULT_COVERAGE),
        seed,
    )?;
    let height = merged.height.unwrap_or(DEFAULT_IMAGE_SIZE);
    let width = merged.width.unwrap_or(DEFAULT_IMAGE_SIZE);
    if height < policy.tile_size || width < policy.tile_size {
        return Err(Error::InvalidParameter(format!(
            "images of {height}x{width} cannot hold a single {}-pixel tile",
            policy.tile_size
        )));
    }
    let full_image = merged.full_image.unwrap_or(false);
    Ok(RunConfig {
        protocol,
        variants: merged
            .variants
            .unwrap_or_else(|| protocol.default_variants()),
        attackers: merged
            .attackers
            .unwrap_or_else(|| vec![AttackerId::Lr, AttackerId::Cnn]),
        n_images: merged.n_images.unwrap_or(DEFAULT_N_IMAGES),
        height,
        width,
        channels,
        policy,
        seed,
        master,
        out_dir: merged.out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        cipher: merged.cipher.unwrap_or(CipherKind::AesCtr),
        full_image,
    })
}

impl RunConfig {
    pub fn to_protocol_spec(&self) -> ProtocolSpec {
        ProtocolSpec {
            protocol: self.protocol,
            master: self.master,
            variants: self.variants.clone(),
            attackers: self.attackers.clone(),
            n_images: self.n_images,
            height: self.height,
            width: self.width,
            channels: self.channels,
            cipher: self.cipher,
            policy: self.policy,
            seeds: vec![self.seed],
            full_image_baseline: self.full_image,
            swap_split: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config_file() {
        let text = "\
# demo configuration
protocol = E3
variants = A1, A3
attackers = Att-LR
n_images = 20
image_size = 128x256
channels = 1

tile_size = 64
coverage = 0.4
threshold = 0.25
seed = 9
master_key = ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff
out_dir = /tmp/reports
cipher = spd
full_image = false
";
        let cfg = PartialConfig::parse(text).unwrap();
        assert_eq!(cfg.protocol, Some(ProtocolId::E3));
        assert_eq!(cfg.variants, Some(vec![VariantId::A1, VariantId::A3]));
        assert_eq!(cfg.attackers, Some(vec![AttackerId::Lr]));
        assert_eq!(cfg.n_images, Some(20));
        assert_eq!((cfg.height, cfg.width), (Some(128), Some(256)));
        assert_eq!(cfg.channels, Some(1));
        assert_eq!(cfg.cipher, Some(CipherKind::Spd { permute: true }));
        assert_eq!(cfg.full_image, Some(false));
        assert_eq!(cfg.out_dir, Some(PathBuf::from("/tmp/reports")));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let err = PartialConfig::parse("tile=64\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
        assert!(matches!(
            PartialConfig::parse("just words\n"),
            Err(Error::Format(_))
        ));
        assert!(PartialConfig::parse("coverage = lots\n").is_err());
        assert!(PartialConfig::parse("cipher = identity\n").is_err());
        assert!(PartialConfig::parse("protocol = E9\n").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file = PartialConfig::parse("protocol = E2\nseed = 5\nn_images = 10\n").unwrap();
        let flags = PartialConfig { seed: Some(77), ..Default::default() };
        let cfg = resolve(file, flags, None).unwrap();
        assert_eq!(cfg.protocol, ProtocolId::E2);
        assert_eq!(cfg.seed, 77);
        assert_eq!(cfg.n_images, 10);
    }

    #[test]
    fn master_key_precedence() {
        let file_key = "11".repeat(32);
        let env_key = "22".repeat(32);
        let flag_key = "33".repeat(32);
        let file = PartialConfig::parse(&format!("protocol=E3\nmaster_key={file_key}\n")).unwrap();

        let cfg = resolve(file.clone(), PartialConfig::default(), None).unwrap();
        assert_eq!(cfg.master.bytes(), &[0x11u8; 32]);

        let cfg = resolve(file.clone(), PartialConfig::default(), Some(env_key.clone())).unwrap();
        assert_eq!(cfg.master.bytes(), &[0x22u8; 32]);

        let flags = PartialConfig { master_key: Some(flag_key), ..Default::default() };
        let cfg = resolve(file, flags, Some(env_key)).unwrap();
        assert_eq!(cfg.master.bytes(), &[0x33u8; 32]);

        // No source at all: the documented test key.
        let flags = PartialConfig { protocol: Some(ProtocolId::E3), ..Default::default() };
        let cfg = resolve(PartialConfig::default(), flags, None).unwrap();
        assert_eq!(hex::encode(cfg.master.bytes()), DEFAULT_MASTER_KEY_HEX);
    }

    #[test]
    fn defaults_materialize() {
        let flags = PartialConfig { protocol: Some(ProtocolId::E3), ..Default::default() };
        let cfg = resolve(PartialConfig::default(), flags, None).unwrap();
        assert_eq!(cfg.n_images, 200);
        assert_eq!((cfg.height, cfg.width, cfg.channels), (256, 256, 3));
        assert_eq!(cfg.policy.tile_size, 64);
        assert_eq!(cfg.policy.target_coverage, 0.3);
        assert_eq!(cfg.policy.threshold, 0.5);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.cipher, CipherKind::AesCtr);
        assert!(!cfg.full_image);
        // Per-protocol method defaults.
        assert!(cfg.variants.contains(&VariantId::AesCtrFull));
        let spec = cfg.to_protocol_spec();
        assert_eq!(spec.seeds, vec![1]);

        let flags = PartialConfig { protocol: Some(ProtocolId::Cpa), ..Default::default() };
        let cfg = resolve(PartialConfig::default(), flags, None).unwrap();
        assert_eq!(cfg.variants, vec![VariantId::B1, VariantId::A3]);
    }

    #[test]
    fn resolve_validates() {
        assert!(resolve(PartialConfig::default(), PartialConfig::default(), None).is_err());
        let flags = PartialConfig {
            protocol: Some(ProtocolId::E3),
            channels: Some(2),
            ..Default::default()
        };
        assert!(resolve(PartialConfig::default(), flags, None).is_err());
        let flags = PartialConfig {
            protocol: Some(ProtocolId::E3),
            height: Some(32),
            width: Some(32),
            ..Default::default()
        };
        assert!(resolve(PartialConfig::default(), flags, None).is_err());
        let flags = PartialConfig {
            protocol: Some(ProtocolId::E3),
            master_key: Some("zz".into()),
            ..Default::default()
        };
        assert!(resolve(PartialConfig::default(), flags, None).is_err());
    }

    #[test]
    fn image_size_forms() {
        assert_eq!(parse_image_size("256").unwrap(), (256, 256));
        assert_eq!(parse_image_size("128x64").unwrap(), (128, 64));
        assert_eq!(parse_image_size(" 64 X 128 ").unwrap(), (64, 128));
        assert!(parse_image_size("wide").is_err());
        assert!(parse_image_size("64x").is_err());
    }
}
