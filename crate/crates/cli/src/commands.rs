//! Subcommand implementations.

use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use glam::DVec3;

use relightsplat::camera::Camera;
use relightsplat::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use relightsplat::cubemap::CubeMap;
use relightsplat::dataset::{load_cameras, load_dataset, load_image_rgba, load_split};
use relightsplat::envio::{load_environment, save_environment};
use relightsplat::field::unsigned_distance_median;
use relightsplat::grid::Grid;
use relightsplat::loss::LossReport;
use relightsplat::metrics::{
    least_squares_scale, mask_iou, metric_normal_mae, metric_psnr, metric_ssim,
};
use relightsplat::projection::{
    eikonal_residual_oracle, outlier_fraction, projection_loss, projection_residuals, BoxField,
    PerturbedSphereField, QuadricSphereField, ScalarField, SphereField, TorusField,
};
use relightsplat::raster::{normal_from_depth, rasterize, RasterMode};
use relightsplat::rng::Rng;
use relightsplat::shading::{
    Background, EnvironmentLight, PrefilterConfig, ShadeOptions, SpecularForm,
};
use relightsplat::synthetic::{
    decode_normal_map, env_constant, env_gradient, env_random, generate_synthetic_scene,
    SceneKind, SyntheticParams,
};
use relightsplat::trainer::{
    densify_and_prune, render_view, train_step, TrainConfig, TrainState,
};

use crate::output::{
    atomic_write, frame_stem, save_f32_image, save_png_gray, save_png_normals, save_png_rgb,
};

fn parse_vec3(s: &str) -> Result<DVec3> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("expected `r,g,b`, got `{s}`"))?;
    if parts.len() != 3 {
        bail!("expected three comma-separated components, got `{s}`");
    }
    Ok(DVec3::new(parts[0], parts[1], parts[2]))
}

/// Built-in environments or an .hdr path.
fn resolve_env(spec: &str, res: usize, seed: u64) -> Result<CubeMap> {
    Ok(match spec {
        "constant" => env_constant(res, DVec3::splat(1.0)),
        "gradient" => env_gradient(
            res,
            DVec3::new(0.2, -0.3, 1.0),
            DVec3::new(0.12, 0.14, 0.20),
            DVec3::new(1.8, 1.7, 1.5),
        ),
        "random" => env_random(res, seed),
        path => load_environment(Path::new(path), res)?.base,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    kind: &str,
    views: usize,
    test_views: usize,
    res: usize,
    albedo: &str,
    roughness: f64,
    metallic: f64,
    env_spec: &str,
    spp: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let kind = SceneKind::parse(kind)
        .ok_or_else(|| anyhow!("unknown scene kind `{kind}` (sphere | two-spheres)"))?;
    let params = SyntheticParams {
        kind,
        train_views: views,
        test_views,
        resolution: res,
        albedo: parse_vec3(albedo)?,
        roughness,
        metallic,
        samples_per_pixel: spp,
        seed,
        ..Default::default()
    };
    let env = resolve_env(env_spec, 64, seed)?;
    generate_synthetic_scene(out, &params, &env)?;
    println!(
        "wrote {} train + {} test views at {res}x{res} to {}",
        views,
        test_views,
        out.display()
    );
    Ok(())
}

pub fn train(
    data: &Path,
    env_spec: &str,
    config_path: Option<&Path>,
    overrides: &[String],
    out: &Path,
) -> Result<()> {
    let mut config = match config_path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{item}`"))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;

    let dataset = load_dataset(data)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    if dataset.views.is_empty() {
        bail!("dataset at {} has no views", data.display());
    }

    let mut env = EnvironmentLight::new(resolve_env(
        env_spec,
        config.env_resolution,
        config.seed,
    )?);
    env.prefilter(&PrefilterConfig::default());
    let mut cloud = relightsplat::trainer::init_cloud(&config)?;
    let mut state = TrainState::new(&cloud, &env, config.seed);

    std::fs::create_dir_all(out)?;
    let csv_path = out.join("loss.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        csv,
        "iteration,total,color,normal,distortion,median,projection,smoothness,mask,\
         w_color,w_normal,w_distortion,w_median,w_projection,w_smoothness,w_mask,\
         median_sdf,gamma,primitives"
    )?;

    let started = std::time::Instant::now();
    while state.iteration < config.iterations {
        let view = &dataset.views[state.rng.below(dataset.views.len())];
        let report = train_step(&mut state, &mut cloud, &mut env, view, &config)?;
        let iter = state.iteration;
        write_csv_row(&mut csv, iter, &report, &cloud)?;

        if iter >= config.densify_start
            && iter <= config.densify_stop
            && iter % config.densify_interval == 0
        {
            let r = densify_and_prune(&mut cloud, &mut state, &config)?;
            if r.skipped_capacity {
                eprintln!(
                    "iteration {iter}: densification skipped, {} primitives at capacity {}",
                    cloud.len(),
                    config.max_primitives
                );
            }
        }
        if iter % config.checkpoint_interval == 0 && iter < config.iterations {
            let path = out.join(format!("ckpt_{iter:06}.ckpt"));
            save_ckpt(&path, &cloud, &env, &state, &config)?;
        }
        if iter % 200 == 0 {
            eprintln!(
                "iter {iter}/{}: total {:.5} color {:.5} prims {} ({:.1?})",
                config.iterations,
                report.total,
                report.terms.color,
                cloud.len(),
                started.elapsed()
            );
        }
    }
    csv.flush()?;
    save_ckpt(&out.join("final.ckpt"), &cloud, &env, &state, &config)?;
    println!(
        "trained {} iterations in {:.1?}; final checkpoint at {}",
        config.iterations,
        started.elapsed(),
        out.join("final.ckpt").display()
    );
    Ok(())
}

fn write_csv_row(
    csv: &mut impl std::io::Write,
    iter: u64,
    report: &LossReport,
    cloud: &relightsplat::field::GaussianCloud,
) -> Result<()> {
    let t = &report.terms;
    let w = &report.effective_weights;
    writeln!(
        csv,
        "{iter},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{},{},{},{},{},{},{},{:.9},{:.9},{}",
        report.total,
        t.color,
        t.normal,
        t.distortion,
        t.median,
        t.projection,
        t.smoothness,
        t.mask,
        w[0],
        w[1],
        w[2],
        w[3],
        w[4],
        w[5],
        w[6],
        unsigned_distance_median(cloud).unwrap_or(f64::NAN),
        cloud.gamma(),
        cloud.len(),
    )?;
    Ok(())
}

fn save_ckpt(
    path: &Path,
    cloud: &relightsplat::field::GaussianCloud,
    env: &EnvironmentLight,
    state: &TrainState,
    config: &TrainConfig,
) -> Result<()> {
    save_checkpoint(
        path,
        &Checkpoint {
            cloud: cloud.clone(),
            env_base: env.base.clone(),
            state: state.clone(),
            config: config.clone(),
        },
    )?;
    Ok(())
}

/// Load a checkpoint and prefilter its environment.
fn load_ready(ckpt: &Path) -> Result<(Checkpoint, EnvironmentLight)> {
    let checkpoint = load_checkpoint(ckpt)?;
    let mut env = EnvironmentLight::new(checkpoint.env_base.clone());
    env.prefilter(&PrefilterConfig::default());
    Ok((checkpoint, env))
}

fn shade_opts(config: &TrainConfig, env_background: bool) -> ShadeOptions {
    ShadeOptions {
        spec_form: if config.printed_spec_form {
            SpecularForm::Printed
        } else {
            SpecularForm::Standard
        },
        background: if env_background {
            Background::Env
        } else {
            Background::Black
        },
    }
}

pub fn render(
    ckpt: &Path,
    camera: &Path,
    out: &Path,
    float: bool,
    env_background: bool,
) -> Result<()> {
    let (checkpoint, env) = load_ready(ckpt)?;
    let cameras = load_cameras(camera, (128, 128))?;
    std::fs::create_dir_all(out)?;
    let opts = shade_opts(&checkpoint.config, env_background);
    for (name, cam) in &cameras {
        let rendered = render_view(&checkpoint.cloud, &env, cam, &opts)?;
        let stem = frame_stem(name);
        save_png_rgb(&out.join(format!("{stem}.png")), &rendered.ldr)?;
        if float {
            save_f32_image(&out.join(format!("{stem}.f32")), &rendered.hdr)?;
        }
    }
    println!("rendered {} views to {}", cameras.len(), out.display());
    Ok(())
}

pub fn relight(
    ckpt: &Path,
    env_path: &Path,
    camera: &Path,
    out: &Path,
    reference: Option<&Path>,
) -> Result<()> {
    let (checkpoint, _) = load_ready(ckpt)?;
    let mut env = load_environment(env_path, checkpoint.config.env_resolution)?;
    env.prefilter(&PrefilterConfig::default());
    let cameras = load_cameras(camera, (128, 128))?;
    std::fs::create_dir_all(out)?;
    let opts = shade_opts(&checkpoint.config, false);

    let mut csv = String::from("frame,scale_r,scale_g,scale_b,psnr\n");
    for (name, cam) in &cameras {
        let rendered = render_view(&checkpoint.cloud, &env, cam, &opts)?;
        let stem = frame_stem(name);
        let mut ldr = rendered.ldr.clone();
        let mut scale = DVec3::ONE;
        let mut psnr = f64::NAN;
        if let Some(ref_dir) = reference {
            // Per-image per-channel least-squares rescale against the
            // reference, over the reference foreground.
            let ref_path = resolve_reference_image(ref_dir, name)?;
            let (ref_img, ref_alpha, _) = load_image_rgba(&ref_path)?;
            let ref_composited = Grid {
                width: ref_img.width,
                height: ref_img.height,
                data: ref_img
                    .data
                    .iter()
                    .zip(&ref_alpha.data)
                    .map(|(c, a)| *c * *a)
                    .collect(),
            };
            scale = least_squares_scale(&ldr, &ref_composited, Some(&ref_alpha));
            for px in &mut ldr.data {
                *px = (*px * scale).clamp(DVec3::ZERO, DVec3::ONE);
            }
            psnr = metric_psnr(&ldr, &ref_composited, None)?;
        }
        save_png_rgb(&out.join(format!("{stem}.png")), &ldr)?;
        csv.push_str(&format!(
            "{stem},{:.6},{:.6},{:.6},{:.3}\n",
            scale.x, scale.y, scale.z, psnr
        ));
    }
    atomic_write(&out.join("relight.csv"), csv.as_bytes())?;
    println!("relit {} views to {}", cameras.len(), out.display());
    Ok(())
}

fn resolve_reference_image(dir: &Path, frame_name: &str) -> Result<std::path::PathBuf> {
    let direct = dir.join(frame_name.trim_start_matches("./"));
    if direct.exists() {
        return Ok(direct);
    }
    let with_png = dir.join(format!("{}.png", frame_name.trim_start_matches("./")));
    if with_png.exists() {
        return Ok(with_png);
    }
    bail!(
        "reference image for frame `{frame_name}` not found under {}",
        dir.display()
    );
}

pub fn eval(
    ckpt: &Path,
    data: &Path,
    gt_normals: Option<&Path>,
    split: &str,
    out: Option<&Path>,
) -> Result<()> {
    let (checkpoint, env) = load_ready(ckpt)?;
    let manifest = format!("transforms_{split}.json");
    let dataset = if data.join(&manifest).exists() {
        load_split(data, &manifest)?
    } else {
        load_dataset(data)?
    };
    if dataset.views.is_empty() {
        bail!("no views in {}", data.display());
    }
    let opts = shade_opts(&checkpoint.config, false);
    let normals_dir = gt_normals.unwrap_or(data);

    let mut csv = String::from("frame,psnr,ssim,normal_mae_deg,mask_iou\n");
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    let mut mae_count = 0usize;
    for view in &dataset.views {
        let rendered = render_view(&checkpoint.cloud, &env, &view.camera, &opts)?;
        let gt = view.composited();
        let psnr = metric_psnr(&rendered.ldr, &gt, None)?;
        let ssim = metric_ssim(&rendered.ldr, &gt)?;
        let iou = mask_iou(&rendered.gbuffer.alpha, &view.alpha);

        // Normal MAE against ground-truth maps when available.
        let stem = view.name.trim_start_matches("./");
        let normal_path = normals_dir.join(format!("{stem}_normal.png"));
        let mae = if normal_path.exists() {
            let (img, _, _) = load_image_rgba(&normal_path)?;
            let gt_n = decode_normal_map(&img);
            let mae =
                metric_normal_mae(&rendered.gbuffer.normal, &gt_n, &view.alpha)?;
            mae_count += 1;
            sums.2 += mae;
            mae
        } else {
            f64::NAN
        };

        sums.0 += psnr;
        sums.1 += ssim;
        sums.3 += iou;
        csv.push_str(&format!(
            "{},{:.4},{:.5},{:.4},{:.5}\n",
            frame_stem(&view.name),
            psnr,
            ssim,
            mae,
            iou
        ));
    }
    let n = dataset.views.len() as f64;
    let mean_mae = if mae_count > 0 {
        sums.2 / mae_count as f64
    } else {
        f64::NAN
    };
    csv.push_str(&format!(
        "mean,{:.4},{:.5},{:.4},{:.5}\n",
        sums.0 / n,
        sums.1 / n,
        mean_mae,
        sums.3 / n
    ));
    print!("{csv}");
    if let Some(path) = out {
        atomic_write(path, csv.as_bytes())?;
    }
    Ok(())
}

pub fn inspect(ckpt: &Path, camera: &Path, out: &Path) -> Result<()> {
    let (checkpoint, env) = load_ready(ckpt)?;
    let cameras = load_cameras(camera, (128, 128))?;
    std::fs::create_dir_all(out)?;
    // The learned environment, exported for relighting workflows.
    save_environment(&out.join("env.hdr"), &checkpoint.env_base)?;
    let opts = shade_opts(&checkpoint.config, false);
    for (name, cam) in &cameras {
        let stem = frame_stem(name);
        let gb = rasterize(&checkpoint.cloud, cam, RasterMode::DeferredPbr);
        let rendered = render_view(&checkpoint.cloud, &env, cam, &opts)?;
        save_png_rgb(&out.join(format!("{stem}_shaded.png")), &rendered.ldr)?;

        // Coverage-normalized attribute maps.
        let norm = |v: f64, a: f64| if a > 1e-3 { v / a } else { 0.0 };
        let albedo = Grid {
            width: gb.width,
            height: gb.height,
            data: gb
                .albedo
                .data
                .iter()
                .zip(&gb.alpha.data)
                .map(|(c, a)| if *a > 1e-3 { *c / *a } else { DVec3::ZERO })
                .collect(),
        };
        save_png_rgb(&out.join(format!("{stem}_albedo.png")), &albedo)?;
        let rough = Grid {
            width: gb.width,
            height: gb.height,
            data: gb
                .roughness
                .data
                .iter()
                .zip(&gb.alpha.data)
                .map(|(v, a)| norm(*v, *a))
                .collect(),
        };
        save_png_gray(&out.join(format!("{stem}_roughness.png")), &rough)?;
        let metal = Grid {
            width: gb.width,
            height: gb.height,
            data: gb
                .metallic
                .data
                .iter()
                .zip(&gb.alpha.data)
                .map(|(v, a)| norm(*v, *a))
                .collect(),
        };
        save_png_gray(&out.join(format!("{stem}_metallic.png")), &metal)?;
        save_png_normals(&out.join(format!("{stem}_normal.png")), &gb.normal)?;
        save_png_gray(&out.join(format!("{stem}_alpha.png")), &gb.alpha)?;

        // Depth normalized over covered pixels.
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..gb.depth.data.len() {
            if gb.alpha.data[i] > 0.5 {
                lo = lo.min(gb.depth.data[i]);
                hi = hi.max(gb.depth.data[i]);
            }
        }
        let range = (hi - lo).max(1e-9);
        let depth_vis = Grid {
            width: gb.width,
            height: gb.height,
            data: gb
                .depth
                .data
                .iter()
                .zip(&gb.alpha.data)
                .map(|(d, a)| if *a > 0.5 { (d - lo) / range } else { 0.0 })
                .collect(),
        };
        save_png_gray(&out.join(format!("{stem}_depth.png")), &depth_vis)?;

        // Depth-derived normals for visual comparison.
        let n_hat = normal_from_depth(&gb.depth, &gb.alpha, cam);
        save_png_normals(&out.join(format!("{stem}_normal_from_depth.png")), &n_hat)?;
    }
    println!(
        "wrote decomposition maps for {} views to {}",
        cameras.len(),
        out.display()
    );
    Ok(())
}

pub fn diagnose(ckpt: &Path, camera: Option<&Path>) -> Result<()> {
    let (checkpoint, _) = load_ready(ckpt)?;
    let cloud = &checkpoint.cloud;
    let median = unsigned_distance_median(cloud)?;
    println!("primitives:        {}", cloud.len());
    println!("gamma:             {:.6}", cloud.gamma());
    println!("|s| median:        {:.6}", median);
    println!("iteration:         {}", checkpoint.state.iteration);
    println!("median loss gate:  {}", if checkpoint.state.median_loss_active { "active" } else { "off" });

    // Opacity histogram over 10 bins.
    let mut hist = [0usize; 10];
    for i in 0..cloud.len() {
        let o = cloud.opacity(i);
        hist[((o * 10.0) as usize).min(9)] += 1;
    }
    println!("\nderived-opacity histogram:");
    for (b, count) in hist.iter().enumerate() {
        println!(
            "  [{:.1}, {:.1}): {:7} {}",
            b as f64 / 10.0,
            (b + 1) as f64 / 10.0,
            count,
            "#".repeat((count * 60 / cloud.len().max(1)).min(60))
        );
    }

    // Analytic-field projection oracle table.
    println!("\nprojection oracle on analytic fields (300 shell samples, h = 1e-6):");
    println!("  field              max|f(proj)|   mean|grad|   log-log slope");
    let mut rng = Rng::new(17);
    let mut points = Vec::new();
    for k in 0..300 {
        let t = k as f64 / 299.0;
        let offset = 1e-3 * (1e-1f64 / 1e-3).powf(t);
        let dir = DVec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
        points.push(dir * (1.0 + offset));
    }
    let fields: [(&str, &dyn ScalarField); 5] = [
        (
            "sphere (exact)",
            &SphereField {
                center: DVec3::ZERO,
                radius: 1.0,
            },
        ),
        (
            "torus (exact)",
            &TorusField {
                major: 1.0,
                minor: 0.3,
            },
        ),
        (
            "box (exact)",
            &BoxField {
                half_extents: DVec3::new(0.8, 0.6, 0.9),
            },
        ),
        ("d + d^2", &PerturbedSphereField),
        ("|x|^2 - 1", &QuadricSphereField),
    ];
    for (name, field) in fields {
        let stats = eikonal_residual_oracle(field, &points, 1e-6);
        let mean_grad = stats.samples.iter().map(|s| s.grad_norm).sum::<f64>()
            / stats.samples.len() as f64;
        println!(
            "  {:<18} {:>12.3e} {:>12.4} {:>15}",
            name,
            stats.max_projected_abs(),
            mean_grad,
            stats
                .log_log_slope()
                .map(|s| format!("{s:.3}"))
                .unwrap_or_else(|| "n/a".into()),
        );
    }

    // Per-view projection residuals when cameras are provided.
    if let Some(manifest) = camera {
        let cameras = load_cameras(manifest, (128, 128))?;
        println!("\nprojection residuals (epsilon = {}):", checkpoint.config.projection_epsilon);
        println!("  view                 entries  inliers  mean-inlier   p90       max");
        for (name, cam) in &cameras {
            let gb = rasterize(cloud, cam, RasterMode::DeferredPbr);
            let batch =
                projection_residuals(cloud, &gb, cam, checkpoint.config.projection_epsilon)?;
            let mut residuals: Vec<f64> =
                batch.entries.iter().map(|e| e.residual).collect();
            residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let inliers = batch.entries.iter().filter(|e| e.inlier).count();
            let mean_inlier = projection_loss(&batch) * batch.entries.len().max(1) as f64
                / inliers.max(1) as f64;
            let p90 = residuals
                .get((residuals.len().saturating_sub(1)) * 9 / 10)
                .copied()
                .unwrap_or(f64::NAN);
            println!(
                "  {:<20} {:>7} {:>8} {:>12.3e} {:>9.3e} {:>9.3e}  (outliers {:.1}%)",
                frame_stem(name),
                batch.entries.len(),
                inliers,
                mean_inlier,
                p90,
                residuals.last().copied().unwrap_or(f64::NAN),
                outlier_fraction(&batch) * 100.0
            );
        }
    }
    Ok(())
}

fn _assert_camera_type(_c: &Camera) {}
