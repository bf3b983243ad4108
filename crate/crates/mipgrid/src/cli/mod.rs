//! Command-line surface: train, render, eval, gen-data, inspect-kernels.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime failure.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod viz;

use crate::data::{build_procedural_dataset, load_blender_split, load_dataset, write_multiscale_dataset, View};
use crate::error::{Error, Result};
use crate::render::{render_view, ImageF, RenderOpts};
use crate::train::{self, metrics_csv, TrainConfig};
use checkpoint::{load_checkpoint, save_checkpoint};
use clap::{Parser, Subcommand};
use config::Config;
use metrics::{ssim, EvalReport, EvalRow};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "mipgrid",
    about = "Anti-aliased factorized-grid radiance fields",
    version
)]
pub struct Cli {
    /// Worker threads (1 = fully sequential, the bit-reproducible default).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model from a config file and a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (checkpoint.mgrd, metrics.csv).
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render one view of a dataset at a chosen scale factor.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory providing the camera.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Downsample factor: 1 = full resolution, 8 = 1/8; fractional
        /// values (e.g. 8/3 for 3/8 resolution) are allowed.
        #[arg(long, default_value = "1")]
        factor: String,
        /// Explicit scale-coordinate value overriding the camera footprint.
        #[arg(long)]
        scale_value: Option<f64>,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM evaluation over the multi-scale test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory for eval.csv (table prints to stdout regardless).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the procedural multi-scale dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides scene.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump kernel PNGs, grid slices and the second-moment report.
    InspectKernels {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse argv, set up the thread pool, dispatch; returns the exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        eprintln!("error: cannot configure thread pool: {e}");
        return 3;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, out, seed } => cmd_train(&config, &out, seed),
        Command::Render {
            checkpoint,
            data,
            split,
            view,
            factor,
            scale_value,
            out,
        } => cmd_render(&checkpoint, &data, &split, view, &factor, scale_value, &out),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => cmd_eval(&checkpoint, &data, out.as_deref()),
        Command::GenData { config, out, seed } => cmd_gen_data(&config, &out, seed),
        Command::InspectKernels { checkpoint, out } => cmd_inspect_kernels(&checkpoint, &out),
    }
}

fn read_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    Config::parse(&text)
}

pub fn cmd_train(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = read_config(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let data_path = cfg
        .data_path
        .clone()
        .ok_or_else(|| Error::Config("config key data.path is required for train".into()))?;
    if !data_path.exists() {
        return Err(Error::Config(format!(
            "config key data.path points to a missing directory: {}",
            data_path.display()
        )));
    }
    let dataset = load_dataset(
        &data_path,
        &cfg.train.factors,
        cfg.train.background,
        cfg.train.near,
        cfg.train.far,
    )?;
    fs::create_dir_all(out)?;
    let echo = cfg.to_text();
    let ckpt_path = out.join("checkpoint.mgrd");
    let csv_path = out.join("metrics.csv");

    let factors = cfg.train.factors.clone();
    let mut hook = |field: &crate::field::RadianceField,
                    _iter: usize,
                    rows: &[train::MetricsRow]|
     -> Result<()> {
        // Periodic saves retain the last good state on a later abort.
        save_checkpoint(&ckpt_path, field, &echo, &[])?;
        fs::write(&csv_path, metrics_csv(&factors, rows))?;
        Ok(())
    };
    let output = train::run(&cfg.train, &dataset, Some(&mut hook))?;
    save_checkpoint(&ckpt_path, &output.field, &echo, &output.rng_state)?;
    fs::write(&csv_path, metrics_csv(&factors, &output.metrics))?;
    if let Some(last) = output.metrics.last() {
        println!(
            "trained {} iterations, final loss {:.6}, train psnr {:.2} dB",
            output.metrics.len(),
            last.loss,
            last.train_psnr
        );
        if !last.eval_psnr.is_empty() {
            let per: Vec<String> = factors
                .iter()
                .zip(last.eval_psnr.iter())
                .map(|(f, p)| format!("1/{f}: {p:.2}"))
                .collect();
            println!("test psnr  {}", per.join("  "));
        }
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics:    {}", csv_path.display());
    Ok(())
}

fn parse_factor(s: &str) -> Result<f64> {
    let v = if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad factor {s:?}")))?;
        let b: f64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad factor {s:?}")))?;
        if b == 0.0 {
            return Err(Error::Config("factor denominator is zero".into()));
        }
        a / b
    } else {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad factor {s:?}")))?
    };
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("factor must be positive, got {s:?}")));
    }
    Ok(v)
}

/// The dataset tree holding base-scale cameras (factor_1 subdir or plain).
fn base_tree(data: &Path) -> PathBuf {
    let f1 = data.join("factor_1");
    if f1.exists() {
        f1
    } else {
        data.to_path_buf()
    }
}

fn load_views(data: &Path, split: &str, cfg: &TrainConfig) -> Result<Vec<View>> {
    load_blender_split(&base_tree(data), split, cfg.background, cfg.near, cfg.far)
}

pub fn cmd_render(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    view: usize,
    factor: &str,
    scale_value: Option<f64>,
    out: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = Config::parse(&ckpt.config_echo)?;
    if let Some(v) = scale_value {
        if !(v > 0.0) {
            return Err(Error::Config(format!(
                "scale value must be positive, got {v}"
            )));
        }
    }
    let f = parse_factor(factor)?;
    let views = load_views(data, split, &cfg.train)?;
    let base = views.get(view).ok_or_else(|| {
        Error::Config(format!("view {view} out of range ({} views)", views.len()))
    })?;
    let new_w = ((base.camera.width as f64 / f).round() as usize).max(1);
    let new_h = ((base.camera.height as f64 / f).round() as usize).max(1);
    let camera = base.camera.scaled(new_w, new_h);
    let eval = ckpt.field.prepare()?;
    let n_samples = if cfg.train.scale_samples {
        ((cfg.train.n_samples as f64 / f).round() as usize).max(2)
    } else {
        cfg.train.n_samples
    };
    let opts = RenderOpts {
        n_samples,
        background: cfg.train.background,
        seed: cfg.train.seed,
        image_id: view as u64,
        scale_override: scale_value,
    };
    let img = render_view(&eval, &camera, cfg.train.bound, &opts)?;
    save_png(&img, out)?;
    println!("rendered {}x{} -> {}", new_w, new_h, out.display());
    Ok(())
}

pub fn save_png(img: &ImageF, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let rgba = image::RgbaImage::from_raw(img.width as u32, img.height as u32, img.to_rgba8())
        .expect("buffer matches dimensions");
    rgba.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = Config::parse(&ckpt.config_echo)?;
    let dataset = load_dataset(
        data,
        &cfg.train.factors,
        cfg.train.background,
        cfg.train.near,
        cfg.train.far,
    )?;
    let eval = ckpt.field.prepare()?;
    let mut rows = Vec::new();
    for level in &dataset.test {
        let n_samples = if cfg.train.scale_samples {
            (cfg.train.n_samples / level.factor as usize).max(2)
        } else {
            cfg.train.n_samples
        };
        for (i, v) in level.views.iter().enumerate() {
            let opts = RenderOpts {
                n_samples,
                background: cfg.train.background,
                seed: cfg.train.seed,
                image_id: i as u64,
                scale_override: None,
            };
            let img = render_view(&eval, &v.camera, cfg.train.bound, &opts)?;
            rows.push(EvalRow {
                factor: level.factor,
                image: i,
                psnr: metrics::psnr(&img, &v.image)?,
                ssim: ssim(&img, &v.image)?,
            });
        }
    }
    let report = EvalReport::from_rows(rows, started.elapsed().as_secs_f64())?;
    print!("{}", report.pretty_table());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let path = dir.join("eval.csv");
        fs::write(&path, report.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_gen_data(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = read_config(config_path)?;
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    // Scene cameras carry the render near/far so training and ground truth
    // agree on the sampled interval.
    cfg.scene.near = cfg.train.near;
    cfg.scene.far = cfg.train.far;
    let ds = build_procedural_dataset(&cfg.scene, &cfg.train.factors)?;
    write_multiscale_dataset(out, cfg.scene.camera_angle_x, &ds.train, &ds.test)?;
    println!(
        "wrote {} factor trees ({} train / {} test views each) under {}",
        ds.train.len(),
        ds.train[0].views.len(),
        ds.test[0].views.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_inspect_kernels(checkpoint: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.field.is_baseline() {
        return Err(Error::InvalidArg(
            "checkpoint is a single-scale baseline: no kernel banks to inspect".into(),
        ));
    }
    let report = viz::write_kernel_artifacts(&ckpt.field, out)?;
    for line in report.lines().filter(|l| l.starts_with("mean_moment")) {
        println!("{line}");
    }
    println!("artifacts under {}", out.display());
    Ok(())
}
