//! Command-line interface: dataset generation, training, rendering,
//! relighting, evaluation, inspection, and diagnostics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "relightsplat",
    about = "Relightable Gaussian-surfel splatting: train, render, relight, evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ray-traced synthetic dataset with exact masks, normals,
    /// and depth.
    Generate {
        /// Scene kind: `sphere` or `two-spheres`.
        #[arg(long, default_value = "sphere")]
        kind: String,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        test_views: usize,
        #[arg(long, default_value_t = 128)]
        res: usize,
        /// Base albedo as `r,g,b`.
        #[arg(long, default_value = "0.7,0.5,0.3")]
        albedo: String,
        #[arg(long, default_value_t = 0.6)]
        roughness: f64,
        #[arg(long, default_value_t = 0.0)]
        metallic: f64,
        /// Environment: `constant`, `gradient`, `random`, or a path to an
        /// equirectangular .hdr file.
        #[arg(long, default_value = "gradient")]
        env: String,
        #[arg(long, default_value_t = 4096)]
        spp: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a relightable asset from a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Environment initialization: .hdr path or `constant`/`gradient`/`random`.
        #[arg(long, default_value = "constant")]
        env: String,
        /// `key = value` config file; every field can also be set with --set.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config field, e.g. `--set iterations=3000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render novel views from a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// Camera manifest (transforms_*.json).
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write 32-bit float images (raw f32, see docs/formats.md).
        #[arg(long, default_value_t = false)]
        float: bool,
        /// Composite over the environment instead of black.
        #[arg(long, default_value_t = false)]
        env_background: bool,
    },
    /// Swap the environment, re-prefilter, and render.
    Relight {
        #[arg(long)]
        ckpt: PathBuf,
        /// New environment (.hdr).
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference dataset dir for per-channel least-squares rescale.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// PSNR / SSIM / normal-MAE table against a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `<frame>_normal.png` ground-truth normal maps
        /// (defaults to the data directory).
        #[arg(long)]
        gt_normals: Option<PathBuf>,
        /// Manifest split to evaluate (`test` falls back to `train`).
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump decomposed G-buffer maps as PNG.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SDF statistics, opacity histogram, projection residuals, and the
    /// analytic-field projection oracle table.
    Diagnose {
        #[arg(long)]
        ckpt: PathBuf,
        /// Optional camera manifest for per-view projection residuals.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version print and exit 0; real usage errors exit 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Generate {
            kind,
            views,
            test_views,
            res,
            albedo,
            roughness,
            metallic,
            env,
            spp,
            seed,
            out,
        } => commands::generate(
            &kind, views, test_views, res, &albedo, roughness, metallic, &env, spp, seed, &out,
        ),
        Command::Train {
            data,
            env,
            config,
            overrides,
            out,
        } => commands::train(&data, &env, config.as_deref(), &overrides, &out),
        Command::Render {
            ckpt,
            camera,
            out,
            float,
            env_background,
        } => commands::render(&ckpt, &camera, &out, float, env_background),
        Command::Relight {
            ckpt,
            env,
            camera,
            out,
            reference,
        } => commands::relight(&ckpt, &env, &camera, &out, reference.as_deref()),
        Command::Eval {
            ckpt,
            data,
            gt_normals,
            split,
            out,
        } => commands::eval(&ckpt, &data, gt_normals.as_deref(), &split, out.as_deref()),
        Command::Inspect { ckpt, camera, out } => commands::inspect(&ckpt, &camera, &out),
        Command::Diagnose { ckpt, camera } => commands::diagnose(&ckpt, camera.as_deref()),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}

/// 2 for data problems, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(core) = err.downcast_ref::<relightsplat::Error>() {
        match core {
            relightsplat::Error::NonFiniteLoss { .. } => 3,
            relightsplat::Error::InvalidSdfSample(_) => 3,
            _ => 2,
        }
    } else {
        2
    }
}
