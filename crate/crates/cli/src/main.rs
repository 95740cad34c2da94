//! `srseg`: train, super-resolve, preview boundary masks, evaluate and
//! generate the synthetic dataset.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use srseg::boundary_mask::generate_boundary_mask;
use srseg::data::{
    load_dataset, load_manifest, load_manifest_images_only, make_synthetic_dataset, remap_digest,
    RemapRegistry, NUM_CLASSES,
};
use srseg::eval::{evaluate, EvalOptions, SrSource};
use srseg::model::SEG_PREFIX;
use srseg::pixels::{check_label_ids, read_label, read_rgb, write_gray, write_rgb};
use srseg::trainer::{load_checkpoint, run_training, RunConfig, RunOptions, RunPaths};
use srseg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "srseg",
    version,
    about = "Multitask 4x super-resolution with boundary-masked segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or resume) from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's boundary-mask radius.
        #[arg(long, allow_negative_numbers = true)]
        d1: Option<i64>,
        /// Ignore existing checkpoints and start over.
        #[arg(long)]
        fresh: bool,
    },
    /// Upscale one image with the segmentation head removed.
    SuperResolve {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print every layer that ran.
        #[arg(long)]
        trace: bool,
    },
    /// Write the boundary mask of a label map (white = supervised).
    MaskPreview {
        label: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        d1: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR / SSIM (and optionally masked segmentation accuracy) over a manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Required for `--method model`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Model)]
        method: Method,
        #[arg(long, default_value_t = 2, allow_negative_numbers = true)]
        d1: i64,
        /// Also score the segmentation head (reads labels).
        #[arg(long)]
        seg: bool,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the class-textured synthetic dataset.
    MakeSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Model,
    Bicubic,
    Identity,
}

fn train(config: &Path, seed: Option<u64>, d1: Option<i64>, fresh: bool) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = d1 {
        cfg.d1 = d;
    }
    cfg.validate()?;
    let registry = RemapRegistry::builtin();
    let manifest = load_manifest(&cfg.data.manifest, &registry)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let data = load_dataset(&manifest, &registry)?;
    let digest = remap_digest(&manifest, &registry)?;
    let opts = RunOptions {
        resume: !fresh,
        max_epochs: None,
    };
    let out = run_training(&cfg, &data, &digest, &opts)?;
    if let Some(epoch) = out.resumed_from {
        eprintln!("resumed from epoch {epoch}");
    }
    let paths = RunPaths::new(&cfg.out_dir);
    println!(
        "trained {} epochs ({} steps); checkpoints in {}, log {}",
        out.state.epoch,
        out.state.global_step,
        paths.checkpoints.display(),
        paths.csv.display()
    );
    Ok(())
}

fn super_resolve(checkpoint: &Path, input: &Path, out: &Path, trace: bool) -> Result<()> {
    let image = read_rgb(input)?;
    let generator = load_checkpoint(checkpoint)?.generator.strip_seg_head();
    let (result, layers) = generator.infer_traced(&image)?;
    write_rgb(out, &result.sr)?;
    if trace {
        for layer in &layers {
            println!("{layer}");
        }
        let seg = layers.iter().filter(|l| l.starts_with(SEG_PREFIX)).count();
        println!("# {} layers, {seg} segmentation layers", layers.len());
    }
    let (h, w, _) = result.sr.dim();
    eprintln!("wrote {} ({w}x{h})", out.display());
    Ok(())
}

fn mask_preview(label: &Path, d1: i64, out: &Path) -> Result<()> {
    let label = read_label(label)?;
    check_label_ids(&label, NUM_CLASSES)?;
    let mask = generate_boundary_mask(&label, d1)?;
    write_gray(out, &mask.to_gray())?;
    println!("suppressed fraction: {}", mask.suppressed_fraction());
    Ok(())
}

fn evaluate_cmd(
    manifest: &Path,
    checkpoint: Option<&Path>,
    method: Method,
    d1: i64,
    seg: bool,
    out: &Path,
) -> Result<()> {
    let registry = RemapRegistry::builtin();
    let manifest = if seg {
        load_manifest(manifest, &registry)?
    } else {
        load_manifest_images_only(manifest, &registry)?
    };
    let state = match (method, checkpoint) {
        (Method::Model, Some(c)) => Some(load_checkpoint(c)?),
        (Method::Model, None) => {
            return Err(Error::Config("`--method model` needs --checkpoint".into()))
        }
        _ => None,
    };
    let source = match (&state, method) {
        (Some(s), _) => SrSource::Model(&s.generator),
        (None, Method::Bicubic) => SrSource::Bicubic,
        _ => SrSource::Identity,
    };
    let scale = state.as_ref().map_or(4, |s| s.generator.spec.scale);
    let opts = EvalOptions {
        scale,
        d1,
        with_seg: seg,
    };
    let report = evaluate(&manifest.entries, &registry, &source, &opts)?;
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    std::fs::write(out, json).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    print!("{}", report.summary_table());
    println!("(PSNR/SSIM are sanity checks, not perceptual quality scores)");
    Ok(())
}

fn make_synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let manifest = make_synthetic_dataset(out, count, size, seed)?;
    println!(
        "{} images; manifest {}",
        manifest.len(),
        out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            d1,
            fresh,
        } => train(&config, seed, d1, fresh),
        Command::SuperResolve {
            checkpoint,
            input,
            out,
            trace,
        } => super_resolve(&checkpoint, &input, &out, trace),
        Command::MaskPreview { label, d1, out } => mask_preview(&label, d1, &out),
        Command::Evaluate {
            manifest,
            checkpoint,
            method,
            d1,
            seg,
            out,
        } => evaluate_cmd(&manifest, checkpoint.as_deref(), method, d1, seg, &out),
        Command::MakeSynth {
            out,
            count,
            size,
            seed,
        } => make_synth(&out, count, size, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
