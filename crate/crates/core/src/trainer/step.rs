//! One optimization step: forward render, gated losses, reverse accumulation
//! through shading and rasterization, and Adam updates.

use glam::DVec3;

use super::{adam_update, TrainConfig, TrainState};
use crate::camera::Camera;
use crate::dataset::DatasetView;
use crate::error::Result;
use crate::field::{
    gamma_median, median_loss, median_loss_grad, unsigned_distance_median, GaussianCloud,
};
use crate::grid::{ColorGrid, Grid};
use crate::loss::{
    color_loss, color_loss_grad, distortion_loss, distortion_loss_grad, mask_loss, mask_loss_grad,
    normal_loss, normal_loss_grad, smoothness_loss, smoothness_loss_grad, total_loss, LossGates,
    LossReport, LossTerms,
};
use crate::metrics::{encode_gamma22, encode_gamma22_grad};
use crate::projection::{projection_loss, projection_loss_adjoint, projection_residuals};
use crate::raster::{
    normal_from_depth, normal_from_depth_adjoint, rasterize, rasterize_adjoint, GBuffer,
    GBufferGrads, RasterMode,
};
use crate::shading::{shade_adjoint, shade_deferred, Background, EnvironmentLight, ShadeOptions};

/// Everything a forward render of one view produces.
pub struct RenderedView {
    pub gbuffer: GBuffer,
    /// Linear HDR shaded image.
    pub hdr: ColorGrid,
    /// Gamma-encoded LDR image the losses see.
    pub ldr: ColorGrid,
}

/// Render one view through the full deferred pipeline.
pub fn render_view(
    cloud: &GaussianCloud,
    env: &EnvironmentLight,
    cam: &Camera,
    opts: &ShadeOptions,
) -> Result<RenderedView> {
    let gbuffer = rasterize(cloud, cam, RasterMode::DeferredPbr);
    let hdr = shade_deferred(&gbuffer, env, cam, opts)?;
    let ldr = encode_gamma22(&hdr);
    Ok(RenderedView { gbuffer, hdr, ldr })
}

/// Advance the optimization by one iteration on the given view.
///
/// Renders the view, evaluates all gated losses, backpropagates through
/// shading and rasterization, applies Adam updates (positions on the decayed
/// schedule, scales in log domain, gamma in log domain), renormalizes the
/// quaternions, and advances the schedule gates: the median loss deactivates
/// permanently once the unsigned-distance median drops below the gate, and
/// the projection loss activates after the warm-up iteration.
pub fn train_step(
    state: &mut TrainState,
    cloud: &mut GaussianCloud,
    env: &mut EnvironmentLight,
    view: &DatasetView,
    config: &TrainConfig,
) -> Result<LossReport> {
    state.validate_shapes(cloud, env)?;
    let iteration = state.iteration + 1;
    let cam = &view.camera;
    let opts = ShadeOptions {
        spec_form: config.spec_form(),
        background: Background::Black,
    };

    // Schedule gates.
    let median = unsigned_distance_median(cloud)?;
    if state.median_loss_active && median < config.median_gate {
        state.median_loss_active = false;
    }
    let gates = LossGates {
        median_active: state.median_loss_active,
        projection_active: iteration > config.projection_warmup,
    };

    // Forward.
    let rendered = render_view(cloud, env, cam, &opts)?;
    let gbuffer = &rendered.gbuffer;
    let gt_rgb = view.composited();
    let n_hat = normal_from_depth(&gbuffer.depth, &gbuffer.alpha, cam);

    // Blended normals compared in camera space where the depth normals live.
    let n_blend_cam = Grid {
        width: gbuffer.width,
        height: gbuffer.height,
        data: gbuffer.normal.data.iter().map(|n| cam.rotation * *n).collect(),
    };
    let n_valid = Grid {
        width: gbuffer.width,
        height: gbuffer.height,
        data: n_hat
            .data
            .iter()
            .zip(&gbuffer.alpha.data)
            .map(|(n, a)| *n != DVec3::ZERO && *a > 0.5)
            .collect(),
    };
    let smooth_valid = Grid {
        width: gbuffer.width,
        height: gbuffer.height,
        data: gbuffer.alpha.data.iter().map(|a| *a > 0.5).collect(),
    };

    let gamma = cloud.gamma();
    let median_term = if gates.median_active {
        median_loss(gamma, gamma_median(median)?)
    } else {
        0.0
    };
    let batch = if gates.projection_active {
        Some(projection_residuals(
            cloud,
            gbuffer,
            cam,
            config.projection_epsilon,
        )?)
    } else {
        None
    };

    let terms = LossTerms {
        color: color_loss(&rendered.ldr, &gt_rgb, config.weights.ssim_mix)?,
        normal: normal_loss(&n_hat, &n_blend_cam, &n_valid)?.0,
        distortion: distortion_loss(gbuffer),
        median: median_term,
        projection: batch.as_ref().map(projection_loss).unwrap_or(0.0),
        smoothness: smoothness_loss(
            &gbuffer.albedo,
            &gbuffer.roughness,
            &gbuffer.metallic,
            &gt_rgb,
            &smooth_valid,
        ),
        mask: mask_loss(&gbuffer.alpha, &view.alpha)?,
    };
    let report = total_loss(&terms, &config.weights, &gates, iteration)?;

    // Backward: accumulate per-channel G-buffer gradients.
    let mut channel_grads = GBufferGrads::zeros(gbuffer.width, gbuffer.height);

    // Color loss -> tonemap -> shading.
    let d_ldr = color_loss_grad(&rendered.ldr, &gt_rgb, config.weights.ssim_mix, config.weights.color);
    let d_hdr = encode_gamma22_grad(&rendered.hdr, &d_ldr);
    let (shade_grads, d_env) = shade_adjoint(gbuffer, env, cam, &opts, &d_hdr)?;
    add_grads(&mut channel_grads, &shade_grads);

    // Normal consistency: both the blended-normal path and the depth path.
    let (g_hat, g_blend_cam) =
        normal_loss_grad(&n_hat, &n_blend_cam, &n_valid, config.weights.normal);
    let r_t = cam.rotation.transpose();
    for i in 0..channel_grads.normal.data.len() {
        channel_grads.normal.data[i] += r_t * g_blend_cam.data[i];
    }
    let d_depth_from_normals = normal_from_depth_adjoint(&gbuffer.depth, &gbuffer.alpha, cam, &g_hat);
    for i in 0..channel_grads.depth.data.len() {
        channel_grads.depth.data[i] += d_depth_from_normals.data[i];
    }

    // Distortion.
    let d_dist = distortion_loss_grad(gbuffer, config.weights.distortion);
    for i in 0..channel_grads.distortion.data.len() {
        channel_grads.distortion.data[i] += d_dist.data[i];
    }

    // Smoothness.
    let (g_alb, g_rough, g_metal) = smoothness_loss_grad(
        &gbuffer.albedo,
        &gbuffer.roughness,
        &gbuffer.metallic,
        &gt_rgb,
        &smooth_valid,
        config.weights.smoothness,
    );
    for i in 0..channel_grads.albedo.data.len() {
        channel_grads.albedo.data[i] += g_alb.data[i];
        channel_grads.roughness.data[i] += g_rough.data[i];
        channel_grads.metallic.data[i] += g_metal.data[i];
    }

    // Mask.
    let d_alpha = mask_loss_grad(&gbuffer.alpha, &view.alpha, config.weights.mask);
    for i in 0..channel_grads.alpha.data.len() {
        channel_grads.alpha.data[i] += d_alpha.data[i];
    }

    // Projection: direct parameter gradients plus the aggregated-depth path.
    let proj_grads = batch.as_ref().map(|b| {
        projection_loss_adjoint(
            b,
            cloud,
            gbuffer,
            cam,
            report.effective_weights[4],
        )
    });
    if let Some(pg) = &proj_grads {
        for i in 0..channel_grads.depth.data.len() {
            channel_grads.depth.data[i] += pg.depth_upstream.data[i];
        }
    }

    // Rasterizer adjoint folds every per-pixel gradient into the parameters.
    let mut grads = rasterize_adjoint(cloud, cam, gbuffer, &channel_grads)?;
    if let Some(pg) = &proj_grads {
        for i in 0..cloud.len() {
            grads.positions[i] += pg.positions[i];
            grads.rotations[i] += pg.rotations[i];
            grads.sdf[i] += pg.sdf[i];
        }
    }
    // Median hinge acts on gamma directly (in log parameterization).
    let mut d_log_gamma = grads.log_gamma;
    if gates.median_active {
        d_log_gamma += report.effective_weights[3]
            * median_loss_grad(gamma, gamma_median(median)?)
            * gamma;
    }

    // Densification bookkeeping: width-normalized screen gradients for every
    // primitive observed in this view.
    let half_width = cloud_observed_scale(cam);
    if let Some(lists) = &gbuffer.contributors {
        let mut seen = vec![false; cloud.len()];
        for list in lists {
            for c in list {
                seen[c.index as usize] = true;
            }
        }
        for i in 0..cloud.len() {
            if seen[i] {
                state.densify_grad_accum[i] += grads.screen[i] * half_width;
                state.densify_count[i] += 1;
            }
        }
    }

    // Adam updates.
    let t = iteration;
    let ap = &config.adam;
    {
        let mut p: Vec<f64> = cloud.positions.iter().flat_map(|v| v.to_array()).collect();
        let g: Vec<f64> = grads.positions.iter().flat_map(|v| v.to_array()).collect();
        adam_update(
            &mut p,
            &g,
            &mut state.adam_positions,
            t,
            config.position_lr(t),
            ap,
        )?;
        for (i, chunk) in p.chunks_exact(3).enumerate() {
            cloud.positions[i] = DVec3::from_slice(chunk);
        }
    }
    {
        let mut p: Vec<f64> = cloud
            .rotations
            .iter()
            .flat_map(|q| [q.x, q.y, q.z, q.w])
            .collect();
        let g: Vec<f64> = grads.rotations.iter().flat_map(|v| v.to_array()).collect();
        adam_update(&mut p, &g, &mut state.adam_rotations, t, config.lr_rotation, ap)?;
        for (i, c) in p.chunks_exact(4).enumerate() {
            cloud.rotations[i] = glam::DQuat::from_xyzw(c[0], c[1], c[2], c[3]);
        }
    }
    {
        // Scales optimize in log domain to stay positive.
        let mut p: Vec<f64> = cloud
            .scales
            .iter()
            .flat_map(|s| [s.x.ln(), s.y.ln()])
            .collect();
        let g: Vec<f64> = cloud
            .scales
            .iter()
            .zip(&grads.scales)
            .flat_map(|(s, g)| [g.x * s.x, g.y * s.y])
            .collect();
        adam_update(&mut p, &g, &mut state.adam_scales, t, config.lr_scale, ap)?;
        for (i, c) in p.chunks_exact(2).enumerate() {
            cloud.scales[i] = glam::DVec2::new(c[0].exp(), c[1].exp());
        }
    }
    adam_update(
        &mut cloud.sdf_values,
        &grads.sdf,
        &mut state.adam_sdf,
        t,
        config.lr_sdf,
        ap,
    )?;
    {
        let mut p: Vec<f64> = cloud.albedo.iter().flat_map(|v| v.to_array()).collect();
        let g: Vec<f64> = grads.albedo.iter().flat_map(|v| v.to_array()).collect();
        adam_update(&mut p, &g, &mut state.adam_albedo, t, config.lr_albedo, ap)?;
        for (i, chunk) in p.chunks_exact(3).enumerate() {
            cloud.albedo[i] = DVec3::from_slice(chunk);
        }
    }
    adam_update(
        &mut cloud.roughness,
        &grads.roughness,
        &mut state.adam_roughness,
        t,
        config.lr_roughness,
        ap,
    )?;
    adam_update(
        &mut cloud.metallic,
        &grads.metallic,
        &mut state.adam_metallic,
        t,
        config.lr_metallic,
        ap,
    )?;
    {
        let mut p = [cloud.log_gamma];
        adam_update(
            &mut p,
            &[d_log_gamma],
            &mut state.adam_log_gamma,
            t,
            config.lr_log_gamma,
            ap,
        )?;
        cloud.log_gamma = p[0];
    }
    {
        let mut p: Vec<f64> = env.base.data.iter().flat_map(|v| v.to_array()).collect();
        let g: Vec<f64> = d_env.iter().flat_map(|v| v.to_array()).collect();
        adam_update(&mut p, &g, &mut state.adam_env, t, config.lr_environment, ap)?;
        for (i, chunk) in p.chunks_exact(3).enumerate() {
            // Radiance stays non-negative.
            env.base.data[i] = DVec3::from_slice(chunk).max(DVec3::ZERO);
        }
        env.refresh();
    }

    cloud.renormalize_rotations();
    state.iteration = iteration;
    Ok(report)
}

fn add_grads(dst: &mut GBufferGrads, src: &GBufferGrads) {
    for i in 0..dst.albedo.data.len() {
        dst.albedo.data[i] += src.albedo.data[i];
        dst.roughness.data[i] += src.roughness.data[i];
        dst.metallic.data[i] += src.metallic.data[i];
        dst.normal.data[i] += src.normal.data[i];
        dst.depth.data[i] += src.depth.data[i];
        dst.alpha.data[i] += src.alpha.data[i];
        dst.distortion.data[i] += src.distortion.data[i];
    }
}

/// Pixel-to-NDC-ish normalization for the densification signal (3DGS
/// thresholds are calibrated on half-image-width units).
fn cloud_observed_scale(cam: &Camera) -> f64 {
    cam.width as f64 / 2.0
}
