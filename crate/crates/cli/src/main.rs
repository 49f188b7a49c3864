use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spad_core::eval::scene::scene_from_seed;
use spad_core::eval::textio::{image_from_text, image_to_text};
use spad_core::eval::{run_experiment, simulate_pipeline, train_cloud_model, ExperimentConfig, MetricsReport};
use spad_core::losses::{attention_mass_fraction, LossWeights};
use spad_core::optimizer::{spad_optimize, SpadConfig};
use spad_core::psz::{mask_to_patches, PixelMask};
use spad_core::vit::{forward, gradient_check, init_weights, VitConfig, VitWeights};

/// Source-side privacy desensitization for a small vision transformer.
#[derive(Parser)]
#[command(name = "spad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare exact input gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        weights_seed: u64,
        #[arg(long, default_value_t = 5)]
        images: usize,
        /// Fail when any relative error reaches this bound.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Perturb one image so the model stops attending to its masked region.
    Desensitize(DesensitizeArgs),
    /// Render a synthetic scene and its privacy mask.
    Scene {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Stream frames from the edge agent to the cloud agent; one JSON line per frame.
    Simulate {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the privacy/utility experiment and write the metrics as JSON.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render a metrics JSON file as a text table.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

#[derive(Args)]
struct DesensitizeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV of the loss terms and PSZ attention share.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Binary weight file; defaults to freshly initialized weights.
    #[arg(long, conflicts_with = "weights_seed")]
    weights: Option<PathBuf>,
    #[arg(long)]
    weights_seed: Option<u64>,
    #[arg(long, value_parser = parse_fraction)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_fraction)]
    epsilon: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    w_sem: Option<f64>,
    #[arg(long)]
    w_att: Option<f64>,
    #[arg(long)]
    w_val: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    min_overlap: f64,
}

/// Accepts plain numbers and `a/b` fractions such as `16/255`.
fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|e| format!("{e}"))?;
            let d: f64 = d.trim().parse().map_err(|e| format!("{e}"))?;
            n / d
        }
        None => s.parse().map_err(|e| format!("{e}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not finite"))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_kv(&read(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn gradcheck(seed: u64, weights_seed: u64, images: usize, tolerance: f64) -> Result<bool> {
    let weights = init_weights(VitConfig::default(), weights_seed)?;
    let start = Instant::now();
    let rows = gradient_check(&weights, seed, images, 1e-5)?;
    let mut worst = 0.0_f64;
    for row in &rows {
        println!(
            "image {} {:<8} max_rel_error {:.3e}",
            row.image, row.selector, row.max_rel_error
        );
        worst = worst.max(row.max_rel_error);
    }
    let ok = worst < tolerance;
    println!(
        "worst {worst:.3e} (tolerance {tolerance:.0e}) in {:.2}s: {}",
        start.elapsed().as_secs_f64(),
        if ok { "ok" } else { "FAILED" }
    );
    Ok(ok)
}

fn desensitize(args: DesensitizeArgs) -> Result<()> {
    let weights = match &args.weights {
        Some(p) => VitWeights::load(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => init_weights(VitConfig::default(), args.weights_seed.unwrap_or(7))?,
    };
    let image = image_from_text(&read(&args.image)?).context("parsing image")?;
    let mask = PixelMask::from_text(&read(&args.mask)?).context("parsing mask")?;
    let cfg_v = &weights.config;
    if (mask.width(), mask.height()) != (cfg_v.image_w, cfg_v.image_h) {
        bail!(
            "mask is {}x{} but the model expects {}x{}",
            mask.width(),
            mask.height(),
            cfg_v.image_w,
            cfg_v.image_h
        );
    }
    let psz = mask_to_patches(&mask, cfg_v.patch, args.min_overlap)?;
    if psz.is_empty() {
        bail!("mask selects no patches");
    }

    let defaults = SpadConfig::default();
    let cfg = SpadConfig {
        alpha: args.alpha.unwrap_or(defaults.alpha),
        epsilon: args.epsilon.unwrap_or(defaults.epsilon),
        iters: args.iters.unwrap_or(defaults.iters),
        weights: LossWeights {
            w_sem: args.w_sem.unwrap_or(defaults.weights.w_sem),
            w_att: args.w_att.unwrap_or(defaults.weights.w_att),
            w_val: args.w_val.unwrap_or(defaults.weights.w_val),
        },
        seed: args.seed.unwrap_or(defaults.seed),
    };
    let (x_safe, trace) = spad_optimize(&weights, &image, &psz, &cfg)?;
    write(&args.out, &image_to_text(&x_safe)?)?;
    if let Some(p) = &args.trace {
        write(p, &trace.to_csv())?;
    }

    let before = attention_mass_fraction(&forward(&weights, &image)?, &psz)?;
    let after = attention_mass_fraction(&forward(&weights, &x_safe)?, &psz)?;
    println!("PSZ patches: {psz}");
    println!("PSZ attention mass fraction: {before:.4} -> {after:.4}");
    println!("max |delta|: {:.6}", trace.delta.max_abs());
    Ok(())
}

fn scene(seed: u64, image: &Path, mask: &Path) -> Result<()> {
    let s = scene_from_seed(seed)?;
    write(image, &image_to_text(&s.image)?)?;
    write(mask, &s.mask.to_text())?;
    println!(
        "behavior={} identity={} persons={}",
        s.labels.behavior.label(),
        s.labels.identity_id,
        s.labels.person_count
    );
    Ok(())
}

fn simulate(frames: Option<usize>, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(n) = frames {
        cfg.frames = n;
    }
    cfg.validate()?;
    let weights = init_weights(VitConfig::default(), cfg.weights_seed)?;
    let model = train_cloud_model(&cfg, &weights)?;
    let lines = simulate_pipeline(&cfg, &weights, &model)?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write(out, &text)?;
    println!("{} report lines written to {}", lines.len(), out.display());
    Ok(())
}

fn evaluate(config: Option<&Path>, report: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let metrics = run_experiment(&cfg)?;
    write(report, &serde_json::to_string_pretty(&metrics)?)?;
    print!("{}", metrics.to_table());
    Ok(())
}

fn report(metrics: &Path) -> Result<()> {
    let m: MetricsReport =
        serde_json::from_str(&read(metrics)?).with_context(|| format!("parsing {}", metrics.display()))?;
    print!("{}", m.to_table());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gradcheck {
            seed,
            weights_seed,
            images,
            tolerance,
        } => return gradcheck(seed, weights_seed, images, tolerance),
        Command::Desensitize(args) => desensitize(args)?,
        Command::Scene { seed, image, mask } => scene(seed, &image, &mask)?,
        Command::Simulate { frames, config, out } => simulate(frames, config.as_deref(), &out)?,
        Command::Evaluate { config, report: path } => evaluate(config.as_deref(), &path)?,
        Command::Report { metrics } => report(&metrics)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
