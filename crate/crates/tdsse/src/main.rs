//! Command-line interface: protocol runs, single-frame encrypt/decrypt,
//! and synthetic corpus generation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use tdsse::config::{
    self, parse_attacker_list, parse_cipher, parse_image_size, parse_variant_list,
    PartialConfig, DEFAULT_COVERAGE, DEFAULT_SEED, DEFAULT_THRESHOLD, DEFAULT_TILE_SIZE,
};
use tdsse::image::RoiMask;
use tdsse::keys::{MasterKey, VariantId};
use tdsse::pipeline::{self, CipherKind, PipelineConfig};
use tdsse::protocols::{
    self, results_csv, write_results, write_run_metadata, write_transfer_matrix, ProtocolId,
};
use tdsse::roi::{self, RoiPolicy};
use tdsse::{netpbm, synth, Error, Result};

#[derive(Parser)]
#[command(
    name = "tdsse",
    version,
    about = "Tilewise domain-separated selective encryption: pipeline and evaluation harness"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an evaluation protocol and write its CSV reports.
    Run(RunArgs),
    /// Encrypt one Netpbm image into a frame container.
    Encrypt(EncryptArgs),
    /// Decrypt a frame container back into a Netpbm image.
    Decrypt(DecryptArgs),
    /// Generate seeded synthetic Netpbm images.
    Synth(SynthArgs),
}

/// Flags shared by every subcommand that needs key material.
#[derive(Args)]
struct KeyArgs {
    /// Config file of key=value pairs (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master key as 64 hex digits. Precedence: this flag, then
    /// TDSSE_MASTER_KEY, then the config file, then a built-in test key.
    #[arg(long)]
    master_key: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    key: KeyArgs,
    /// Protocol to run: E2, E3, E4, E5, or CPA.
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated method list (e.g. A0,A1,A2,A3,B1,AES-CTR).
    #[arg(long)]
    variants: Option<String>,
    /// Comma-separated attacker list (Att-LR,Att-CNN).
    #[arg(long)]
    attackers: Option<String>,
    /// Number of synthetic images.
    #[arg(long)]
    n_images: Option<usize>,
    /// Image size as SIZE or HEIGHTxWIDTH.
    #[arg(long)]
    image_size: Option<String>,
    /// Color channels: 1 or 3.
    #[arg(long)]
    channels: Option<usize>,
    /// Tile side length in pixels.
    #[arg(long)]
    tile_size: Option<usize>,
    /// Target ROI pixel coverage in (0, 1).
    #[arg(long)]
    coverage: Option<f64>,
    /// ROI-fraction threshold for tile selection in [0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Repetition seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Tile cipher: aes-ctr or spd.
    #[arg(long)]
    cipher: Option<String>,
    /// Whole-buffer mode for the AES-CTR baseline method.
    #[arg(long)]
    full_image: bool,
    /// Report directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TileArgs {
    /// Tile side length in pixels.
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    tile_size: usize,
    /// ROI-fraction threshold for tile selection in [0, 1].
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Target ROI pixel coverage in (0, 1) when generating a mask.
    #[arg(long, default_value_t = DEFAULT_COVERAGE)]
    coverage: f64,
    /// Mask seed used when no mask file is given.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Tile cipher: aes-ctr or spd.
    #[arg(long, default_value = "aes-ctr")]
    cipher: String,
}

#[derive(Args)]
struct EncryptArgs {
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    tile: TileArgs,
    /// Input image (binary P5/P6). Cropped centrally to a tile multiple.
    #[arg(long)]
    input: PathBuf,
    /// Output frame container.
    #[arg(long)]
    out: PathBuf,
    /// Key-schedule variant: A0, A1, A2, A3, B1, or AES-CTR.
    #[arg(long)]
    variant: String,
    /// ROI mask (P5, pixels 0/255) matching the cropped image; generated
    /// from the seed when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Write the mask that was used (useful when it was generated).
    #[arg(long)]
    emit_mask: Option<PathBuf>,
    /// Frame counter t.
    #[arg(long, default_value_t = 0)]
    frame: u32,
    /// Encrypt the whole buffer (AES-CTR baseline only).
    #[arg(long)]
    full_image: bool,
}

#[derive(Args)]
struct DecryptArgs {
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    tile: TileArgs,
    /// Input frame container.
    #[arg(long)]
    input: PathBuf,
    /// Output image path (P5/P6 by channel count).
    #[arg(long)]
    out: PathBuf,
    /// ROI mask used at encryption time; regenerated from the seed when
    /// omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// The frame was encrypted in whole-buffer baseline mode.
    #[arg(long)]
    full_image: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of images to generate.
    #[arg(long, default_value_t = 8)]
    n_images: usize,
    /// Image size as SIZE or HEIGHTxWIDTH.
    #[arg(long, default_value = "256")]
    image_size: String,
    /// Color channels: 1 or 3.
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Corpus seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output directory for img_NNNN.pnm files.
    #[arg(long, default_value = "synth-out")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Encrypt(args) => cmd_encrypt(args),
        Cmd::Decrypt(args) => cmd_decrypt(args),
        Cmd::Synth(args) => cmd_synth(args),
    }
}

fn load_file_config(key: &KeyArgs) -> Result<PartialConfig> {
    match &key.config {
        Some(path) => PartialConfig::load(path),
        None => Ok(PartialConfig::default()),
    }
}

fn env_master_key() -> Option<String> {
    std::env::var("TDSSE_MASTER_KEY").ok()
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let file = load_file_config(&args.key)?;
    let flags = PartialConfig {
        protocol: args.protocol.as_deref().map(ProtocolId::parse).transpose()?,
        variants: args.variants.as_deref().map(parse_variant_list).transpose()?,
        attackers: args.attackers.as_deref().map(parse_attacker_list).transpose()?,
        n_images: args.n_images,
        height: None,
        width: None,
        channels: args.channels,
        tile_size: args.tile_size,
        coverage: args.coverage,
        threshold: args.threshold,
        seed: args.seed,
        master_key: args.key.master_key.clone(),
        out_dir: args.out_dir,
        cipher: args.cipher.as_deref().map(parse_cipher).transpose()?,
        full_image: args.full_image.then_some(true),
    };
    let flags = match args.image_size.as_deref() {
        Some(s) => {
            let (h, w) = parse_image_size(s)?;
            PartialConfig { height: Some(h), width: Some(w), ..flags }
        }
        None => flags,
    };
    let rc = config::resolve(file, flags, env_master_key())?;
    let spec = rc.to_protocol_spec();
    log::info!(
        "running {} on {} ({} variants, {} attackers)",
        spec.protocol,
        spec.dataset_label(),
        spec.variants.len(),
        spec.attackers.len()
    );
    let output = protocols::run_protocol(&spec)?;

    std::fs::create_dir_all(&rc.out_dir).map_err(|e| Error::io(&rc.out_dir, e))?;
    let stem = spec.protocol.label().to_lowercase();
    let results_path = rc.out_dir.join(format!("{stem}_results.csv"));
    write_results(&output.rows, &results_path)?;
    let meta_path = rc.out_dir.join("run_metadata.txt");
    write_run_metadata(&spec, &output.rows, &meta_path)?;

    print!("{}", results_csv(&output.rows));
    println!("wrote {}", results_path.display());
    if spec.protocol == ProtocolId::E5 {
        let matrix_path = rc.out_dir.join("e5_transfer_matrix.csv");
        write_transfer_matrix(&output.transfer, &matrix_path)?;
        println!("wrote {}", matrix_path.display());
    }
    println!("wrote {}", meta_path.display());
    Ok(())
}

fn tile_policy(tile: &TileArgs) -> Result<(RoiPolicy, CipherKind)> {
    let policy = RoiPolicy::new(tile.tile_size, tile.threshold, tile.coverage, tile.seed)?;
    let cipher = parse_cipher(&tile.cipher)?;
    Ok((policy, cipher))
}

fn resolve_key(key: &KeyArgs, file: &PartialConfig) -> Result<MasterKey> {
    config::resolve_master_key(
        key.master_key.as_deref(),
        env_master_key().as_deref(),
        file.master_key.as_deref(),
    )
}

fn cmd_encrypt(args: EncryptArgs) -> Result<()> {
    let file = load_file_config(&args.key)?;
    let master = resolve_key(&args.key, &file)?;
    let (policy, cipher) = tile_policy(&args.tile)?;
    let variant = VariantId::parse(&args.variant)?;

    let image = netpbm::load_image(&args.input)?.center_crop_to_multiple(policy.tile_size)?;
    let mask = match &args.mask {
        Some(path) => netpbm::load_mask(path)?,
        None => roi::generate_mask(&policy, image.height(), image.width())?,
    };
    let mut cfg = PipelineConfig::new(variant, cipher, policy);
    cfg.full_image_baseline = args.full_image;
    let frame = pipeline::encrypt_frame(&cfg, &master, args.frame, &image, &mask)?;
    pipeline::write_frame(&frame, &args.out)?;
    if let Some(path) = &args.emit_mask {
        netpbm::save_mask(&mask, path)?;
    }
    println!(
        "encrypted {} -> {} (variant {}, {} of {} tiles in ROI)",
        args.input.display(),
        args.out.display(),
        variant,
        frame.roi_tiles.len(),
        (image.height() / policy.tile_size) * (image.width() / policy.tile_size),
    );
    Ok(())
}

fn cmd_decrypt(args: DecryptArgs) -> Result<()> {
    let file = load_file_config(&args.key)?;
    let master = resolve_key(&args.key, &file)?;
    let (policy, cipher) = tile_policy(&args.tile)?;

    let frame = pipeline::read_frame(&args.input)?;
    let mask = match &args.mask {
        Some(path) => netpbm::load_mask(path)?,
        None if args.full_image => RoiMask::ones(frame.image.height(), frame.image.width())?,
        None => roi::generate_mask(&policy, frame.image.height(), frame.image.width())?,
    };
    let mut cfg = PipelineConfig::new(frame.variant, cipher, policy);
    cfg.full_image_baseline = args.full_image;
    let plain = pipeline::decrypt_frame(&cfg, &master, &frame, &mask)?;
    netpbm::save_image(&plain, &args.out)?;
    println!(
        "decrypted {} -> {} (variant {})",
        args.input.display(),
        args.out.display(),
        frame.variant
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let (height, width) = parse_image_size(&args.image_size)?;
    let images = synth::synth_images(args.n_images, height, width, args.channels, args.seed)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    for (k, img) in images.iter().enumerate() {
        let path = args.out_dir.join(format!("img_{k:04}.pnm"));
        netpbm::save_image(img, &path)?;
    }
    println!(
        "wrote {} {}x{}x{} images to {}",
        images.len(),
        height,
        width,
        args.channels,
        args.out_dir.display()
    );
    Ok(())
}
