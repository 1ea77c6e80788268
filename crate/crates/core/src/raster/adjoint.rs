//! Reverse-mode differentiation of the rasterizer.
//!
//! The backward pass replays each pixel's retained contributor list — the
//! same primitives in the same blend order — recomputing the forward
//! quantities it needs, and accumulates exact gradients for every cloud
//! parameter. Tiles run in parallel into tile-local buffers which are then
//! reduced in fixed tile order, so results are deterministic regardless of
//! thread count.

use std::collections::HashMap;

use glam::{DMat3, DVec2, DVec3, DVec4};
use rayon::prelude::*;

use super::{
    distortion_depth, distortion_terms, project_gaussians, ray_splat_intersect, sort_and_bin,
    GBuffer, PixelRay, SplatScreen, ALPHA_CLAMP, ALPHA_SKIP, SCREEN_FILTER_SIGMA, TILE_SIZE,
};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{sdf_to_opacity_grad, GaussianCloud};
use crate::grid::{ColorGrid, Grid, ScalarGrid};
use crate::math::{mat3_dot, quat_to_mat3_grad, sigmoid_grad};

/// Upstream gradients on every G-buffer channel. Channels that do not
/// participate in a loss stay zero.
#[derive(Clone, Debug)]
pub struct GBufferGrads {
    pub albedo: ColorGrid,
    pub roughness: ScalarGrid,
    pub metallic: ScalarGrid,
    pub normal: Grid<DVec3>,
    pub depth: ScalarGrid,
    pub alpha: ScalarGrid,
    pub distortion: ScalarGrid,
}

impl GBufferGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        GBufferGrads {
            albedo: Grid::new(width, height),
            roughness: Grid::new(width, height),
            metallic: Grid::new(width, height),
            normal: Grid::new(width, height),
            depth: Grid::new(width, height),
            alpha: Grid::new(width, height),
            distortion: Grid::new(width, height),
        }
    }
}

/// Gradients with respect to the cloud parameters, in their stored
/// parameterization (logit-space PBR attributes, log-space gamma).
#[derive(Clone, Debug)]
pub struct RasterGradients {
    pub positions: Vec<DVec3>,
    pub rotations: Vec<DVec4>,
    pub scales: Vec<DVec2>,
    pub sdf: Vec<f64>,
    pub albedo: Vec<DVec3>,
    pub roughness: Vec<f64>,
    pub metallic: Vec<f64>,
    pub log_gamma: f64,
    /// Magnitude of the per-view screen-space center gradient (pixels^-1);
    /// densification accumulates this.
    pub screen: Vec<f64>,
}

impl RasterGradients {
    pub fn zeros(n: usize) -> Self {
        RasterGradients {
            positions: vec![DVec3::ZERO; n],
            rotations: vec![DVec4::ZERO; n],
            scales: vec![DVec2::ZERO; n],
            sdf: vec![0.0; n],
            albedo: vec![DVec3::ZERO; n],
            roughness: vec![0.0; n],
            metallic: vec![0.0; n],
            log_gamma: 0.0,
            screen: vec![0.0; n],
        }
    }
}

#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mu_cam: DVec3,
    tu_cam: DVec3,
    tv_cam: DVec3,
    n_cam: DVec3,
    n_world: DVec3,
    su: f64,
    sv: f64,
    sdf: f64,
    albedo: DVec3,
    rough: f64,
    metal: f64,
    center_px: DVec2,
}

struct TileGrads {
    slots: Vec<SplatGrad>,
    gamma: f64,
}

/// Exact reverse accumulation of the deferred forward pass.
///
/// Requires the G-buffer's contributor lists (the forward pass retains them);
/// gamma's gradient is reported in log-gamma parameterization to match the
/// stored parameter.
pub fn rasterize_adjoint(
    cloud: &GaussianCloud,
    cam: &Camera,
    gbuffer: &GBuffer,
    upstream: &GBufferGrads,
) -> Result<RasterGradients> {
    let lists = gbuffer
        .contributors
        .as_ref()
        .ok_or(Error::ForwardNotRetained)?;
    let mut splats = project_gaussians(cloud, cam);
    let (tiles_x, tiles_y, bins) = sort_and_bin(&mut splats, cam.width, cam.height);
    let gamma = cloud.gamma();

    let tile_grads: Vec<TileGrads> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let bin = &bins[tile];
            let mut slot_of: HashMap<u32, usize> = HashMap::with_capacity(bin.len());
            for (slot, &si) in bin.iter().enumerate() {
                slot_of.insert(splats[si as usize].index, slot);
            }
            let mut grads = TileGrads {
                slots: vec![SplatGrad::default(); bin.len()],
                gamma: 0.0,
            };
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(cam.width);
            let y1 = (y0 + TILE_SIZE).min(cam.height);
            let mut scratch = PixelScratch::default();
            for y in y0..y1 {
                for x in x0..x1 {
                    let pix = y * cam.width + x;
                    if lists[pix].is_empty() {
                        continue;
                    }
                    backward_pixel(
                        cloud,
                        cam,
                        &splats,
                        bin,
                        &slot_of,
                        &lists[pix],
                        upstream,
                        x,
                        y,
                        gamma,
                        &mut grads,
                        &mut scratch,
                    );
                }
            }
            grads
        })
        .collect();

    // Fixed-order reduction: tiles in index order, slots in bin order.
    let mut out = RasterGradients::zeros(cloud.len());
    let mut d_gamma = 0.0;
    let r_t = cam.rotation.transpose();
    for (tile, tg) in tile_grads.iter().enumerate() {
        d_gamma += tg.gamma;
        let bin = &bins[tile];
        for (slot, g) in tg.slots.iter().enumerate() {
            let s = &splats[bin[slot] as usize];
            let i = s.index as usize;

            out.positions[i] += r_t * g.mu_cam;
            out.scales[i] += DVec2::new(g.su, g.sv);
            out.sdf[i] += g.sdf;

            // Rotation: pull tangent-frame gradients back to world, then to
            // the raw quaternion through the normalized rotation matrix.
            let d_cols = DMat3::from_cols(
                r_t * g.tu_cam,
                r_t * g.tv_cam,
                r_t * g.n_cam + g.n_world,
            );
            let dr = quat_to_mat3_grad(cloud.rotations[i]);
            out.rotations[i] += DVec4::new(
                mat3_dot(&d_cols, &dr[0]),
                mat3_dot(&d_cols, &dr[1]),
                mat3_dot(&d_cols, &dr[2]),
                mat3_dot(&d_cols, &dr[3]),
            );

            // Squash the attribute gradients into logit space.
            let raw = cloud.albedo[i];
            out.albedo[i] += DVec3::new(
                g.albedo.x * sigmoid_grad(raw.x),
                g.albedo.y * sigmoid_grad(raw.y),
                g.albedo.z * sigmoid_grad(raw.z),
            );
            out.roughness[i] += g.rough * sigmoid_grad(cloud.roughness[i]);
            out.metallic[i] += g.metal * sigmoid_grad(cloud.metallic[i]);

            // Densification signal: screen-space center gradient, combining
            // the direct low-pass path with the in-plane pullback of the
            // camera-space position gradient.
            let pullback = DVec2::new(
                g.mu_cam.x * s.center.z / cam.fx,
                g.mu_cam.y * s.center.z / cam.fy,
            );
            out.screen[i] += (g.center_px + pullback).length();
        }
    }
    out.log_gamma = d_gamma * gamma;
    Ok(out)
}

#[derive(Default)]
struct PixelScratch {
    hits: Vec<super::RaySplatHit>,
    alphas: Vec<f64>,
    transmittances: Vec<f64>,
    slots: Vec<usize>,
    d_weight: Vec<f64>,
    d_depth: Vec<f64>,
    dist_dw: Vec<f64>,
    dist_dd: Vec<f64>,
    sort: Vec<usize>,
    mapped: Vec<super::Contributor>,
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    cloud: &GaussianCloud,
    cam: &Camera,
    splats: &[SplatScreen],
    bin: &[u32],
    slot_of: &HashMap<u32, usize>,
    contribs: &[super::Contributor],
    upstream: &GBufferGrads,
    x: usize,
    y: usize,
    gamma: f64,
    grads: &mut TileGrads,
    sc: &mut PixelScratch,
) {
    let pix = y * cam.width + x;
    let ray = PixelRay::through(cam, x, y);
    let k = contribs.len();

    // Replay the forward chain.
    sc.hits.clear();
    sc.alphas.clear();
    sc.transmittances.clear();
    sc.slots.clear();
    let mut transmittance = 1.0;
    let mut normal_raw = DVec3::ZERO;
    let mut sum_w = 0.0;
    let mut sum_wd = 0.0;
    for c in contribs {
        let slot = slot_of[&c.index];
        let s = &splats[bin[slot] as usize];
        debug_assert_eq!(s.index, c.index);
        let hit = ray_splat_intersect(s, &ray).expect("replay of a recorded contributor");
        let alpha = (s.opacity * hit.response).min(ALPHA_CLAMP);
        debug_assert!(alpha >= ALPHA_SKIP);
        debug_assert!((alpha * transmittance - c.weight).abs() < 1e-12);
        sc.hits.push(hit);
        sc.alphas.push(alpha);
        sc.transmittances.push(transmittance);
        sc.slots.push(slot);
        normal_raw += c.weight * s.normal_world;
        sum_w += c.weight;
        sum_wd += c.weight * c.depth;
        transmittance *= 1.0 - alpha;
    }

    // Upstream channel gradients for this pixel.
    let g_albedo = upstream.albedo.data[pix];
    let g_rough = upstream.roughness.data[pix];
    let g_metal = upstream.metallic.data[pix];
    let g_normal = upstream.normal.data[pix];
    let g_depth = upstream.depth.data[pix];
    let g_alpha = upstream.alpha.data[pix];
    let g_dist = upstream.distortion.data[pix];

    // Renormalized-normal backward.
    let norm_len = normal_raw.length();
    let g_normal_raw = if norm_len > 1e-12 {
        let n_hat = normal_raw / norm_len;
        (g_normal - n_hat * g_normal.dot(n_hat)) / norm_len
    } else {
        DVec3::ZERO
    };

    // Aggregated-depth backward.
    let denom = sum_w + 1e-8;
    let g_sum_wd = g_depth / denom;
    let g_sum_w_from_depth = -g_depth * sum_wd / (denom * denom);

    // Distortion partials in the mapped depth domain, chained back to raw z.
    sc.dist_dw.resize(k, 0.0);
    sc.dist_dd.resize(k, 0.0);
    if g_dist != 0.0 {
        sc.mapped.clear();
        sc.mapped.extend(contribs.iter().map(|c| super::Contributor {
            index: c.index,
            weight: c.weight,
            depth: distortion_depth(c.depth).0,
        }));
        distortion_terms(
            &sc.mapped,
            &mut sc.sort,
            Some(&mut sc.dist_dw[..]),
            Some(&mut sc.dist_dd[..]),
        );
    } else {
        sc.dist_dw.fill(0.0);
        sc.dist_dd.fill(0.0);
    }

    // Per-contribution weight and depth gradients.
    sc.d_weight.resize(k, 0.0);
    sc.d_depth.resize(k, 0.0);
    for i in 0..k {
        let s = &splats[bin[sc.slots[i]] as usize];
        sc.d_weight[i] = g_albedo.dot(s.albedo)
            + g_rough * s.rough
            + g_metal * s.metal
            + g_normal_raw.dot(s.normal_world)
            + g_alpha
            + g_sum_w_from_depth
            + contribs[i].depth * g_sum_wd
            + g_dist * sc.dist_dw[i];
        let dm_dz = distortion_depth(contribs[i].depth).1;
        sc.d_depth[i] = contribs[i].weight * g_sum_wd + g_dist * sc.dist_dd[i] * dm_dz;
    }

    // Reverse alpha chain: w_i = alpha_i * prod_{j<i} (1 - alpha_j).
    let mut suffix = 0.0;
    for i in (0..k).rev() {
        let d_alpha = sc.d_weight[i] * sc.transmittances[i] - suffix / (1.0 - sc.alphas[i]);
        suffix += sc.d_weight[i] * contribs[i].weight;

        let slot = sc.slots[i];
        let s = &splats[bin[slot] as usize];
        let hit = &sc.hits[i];
        let w = contribs[i].weight;
        let g = &mut grads.slots[slot];

        // Blended-attribute gradients (in evaluated space here; squashed later).
        g.albedo += g_albedo * w;
        g.rough += g_rough * w;
        g.metal += g_metal * w;
        g.n_world += g_normal_raw * w;

        // Opacity and response split; the clamp zeroes the branch.
        let (d_opacity, d_response) = if s.opacity * hit.response < ALPHA_CLAMP {
            (d_alpha * hit.response, d_alpha * s.opacity)
        } else {
            (0.0, 0.0)
        };

        // Opacity transform.
        let (do_ds, do_dgamma) =
            sdf_to_opacity_grad(cloud.sdf_values[s.index as usize], gamma).expect("finite");
        g.sdf += d_opacity * do_ds;
        grads.gamma += d_opacity * do_dgamma;

        // Response branches.
        let mut d_t = sc.d_depth[i] * ray.dir.z; // depth path is always live
        if hit.kernel >= hit.screen {
            let d_kernel = d_response;
            let du = -hit.u * hit.kernel * d_kernel;
            let dv = -hit.v * hit.kernel * d_kernel;
            let e = hit.depth / ray.dir.z * ray.dir - s.center;
            g.tu_cam += (du / s.su) * e;
            g.tv_cam += (dv / s.sv) * e;
            g.su += -du * hit.u / s.su;
            g.sv += -dv * hit.v / s.sv;
            let d_e = (du / s.su) * s.tu + (dv / s.sv) * s.tv;
            d_t += d_e.dot(ray.dir);
            g.mu_cam += -d_e;
        } else {
            let d_screen = d_response;
            let delta = DVec2::new(ray.px, ray.py) - s.center_px;
            let d_cpx = d_screen * hit.screen * delta / (SCREEN_FILTER_SIGMA * SCREEN_FILTER_SIGMA);
            g.center_px += d_cpx;
            g.mu_cam += DVec3::new(
                d_cpx.x * cam.fx / s.center.z,
                d_cpx.y * cam.fy / s.center.z,
                -(d_cpx.x * cam.fx * s.center.x + d_cpx.y * cam.fy * s.center.y)
                    / (s.center.z * s.center.z),
            );
        }

        // Intersection parameter t = (n . mu) / (n . d).
        let n_dot_d = s.normal.dot(ray.dir);
        let e = hit.depth / ray.dir.z * ray.dir - s.center;
        g.n_cam += d_t * (-e) / n_dot_d;
        g.mu_cam += d_t * s.normal / n_dot_d;
    }
}
