//! Software tile rasterizer for 2D Gaussian surfels.
//!
//! Primitives are projected to screen, ray-splat intersected, and
//! alpha-blended front-to-back into a deferred-shading G-buffer. The blend
//! weights and intersection depths of every contributor are retained per
//! pixel so that the backward pass and the projection regularizer can replay
//! the forward composition exactly.

mod adjoint;
mod depth_normal;
mod forward;

pub use adjoint::{rasterize_adjoint, GBufferGrads, RasterGradients};
pub use depth_normal::{normal_from_depth, normal_from_depth_adjoint};
pub use forward::rasterize;

use glam::{DVec2, DVec3};

use crate::camera::Camera;
use crate::field::GaussianCloud;
use crate::grid::{ColorGrid, Grid, ScalarGrid};
use crate::math::quat_to_mat3;

pub const TILE_SIZE: usize = 16;
/// Contributions with alpha below 1/255 are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Per-splat alpha is clamped to at most this value.
pub const ALPHA_CLAMP: f64 = 0.999;
/// Blending stops once transmittance falls below this threshold.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Standard deviation (pixels) of the screen-space low-pass response floor.
pub const SCREEN_FILTER_SIGMA: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Depth-range constants for the distortion term's NDC mapping.
pub const DISTORTION_NEAR: f64 = 0.2;
pub const DISTORTION_FAR: f64 = 100.0;

/// Map a camera-space z to the bounded NDC-like domain the pairwise
/// distortion accumulates in (the loss weight is calibrated for this
/// domain, not raw world units). Returns the mapped value and its
/// derivative with respect to z.
pub fn distortion_depth(z: f64) -> (f64, f64) {
    let n = DISTORTION_NEAR;
    let f = DISTORTION_FAR;
    let m = f * (z - n) / (z * (f - n));
    let dm_dz = f * n / ((f - n) * z * z);
    (m, dm_dz)
}

/// A primitive prepared for rasterization in one view. Geometry is expressed
/// in camera space; `normal_world` is kept alongside because the G-buffer
/// blends world-space normals.
#[derive(Clone, Debug)]
pub struct SplatScreen {
    pub index: u32,
    /// Camera-space disk center.
    pub center: DVec3,
    /// Camera-space tangent frame; `normal = tu x tv`.
    pub tu: DVec3,
    pub tv: DVec3,
    pub normal: DVec3,
    pub normal_world: DVec3,
    pub su: f64,
    pub sv: f64,
    /// Projected center in continuous pixel coordinates.
    pub center_px: DVec2,
    /// Inclusive pixel bounding box.
    pub x_min: u32,
    pub x_max: u32,
    pub y_min: u32,
    pub y_max: u32,
    /// Derived opacity `T_gamma(sdf)`.
    pub opacity: f64,
    /// Evaluated (squashed) PBR attributes.
    pub albedo: DVec3,
    pub rough: f64,
    pub metal: f64,
}

/// One blended contribution retained for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contributor {
    /// Primitive index in the cloud.
    pub index: u32,
    /// Blend weight `w = alpha * transmittance`.
    pub weight: f64,
    /// Ray-splat intersection depth (camera z).
    pub depth: f64,
}

/// Per-pixel alpha-blended deferred-shading buffers.
#[derive(Clone, Debug)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    /// Blended albedo (or plain color in forward-color mode).
    pub albedo: ColorGrid,
    pub roughness: ScalarGrid,
    pub metallic: ScalarGrid,
    /// Blended world-space normal, renormalized.
    pub normal: Grid<DVec3>,
    /// Normalized expected depth `sum(w_i D_i) / (sum(w_i) + 1e-8)`.
    pub depth: ScalarGrid,
    /// Accumulated alpha `sum(w_i)`.
    pub alpha: ScalarGrid,
    /// Per-pixel pairwise depth-distortion `sum_{i,j} w_i w_j |D_i - D_j|`.
    pub distortion: ScalarGrid,
    /// Per-pixel contributor records in blend order.
    pub contributors: Option<Vec<Vec<Contributor>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterMode {
    /// Blend all PBR attributes for deferred shading.
    DeferredPbr,
    /// Blend albedo as a plain color (plus depth/alpha/distortion).
    ForwardColor,
}

/// Camera-space pixel ray with its pixel-center coordinates.
#[derive(Clone, Copy, Debug)]
pub struct PixelRay {
    pub dir: DVec3,
    pub px: f64,
    pub py: f64,
}

impl PixelRay {
    pub fn through(cam: &Camera, x: usize, y: usize) -> PixelRay {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        PixelRay {
            dir: cam.ray_dir_camera(px, py),
            px,
            py,
        }
    }
}

/// Result of intersecting a pixel ray with a splat.
#[derive(Clone, Copy, Debug)]
pub struct RaySplatHit {
    /// Plane coordinates divided by the in-plane extents.
    pub u: f64,
    pub v: f64,
    /// Camera-space z of the intersection point.
    pub depth: f64,
    /// Gaussian kernel response `exp(-(u^2+v^2)/2)` before the low-pass merge.
    pub kernel: f64,
    /// Screen-space low-pass response around the projected center.
    pub screen: f64,
    /// Merged response `max(kernel, screen)`.
    pub response: f64,
}

/// Intersect a pixel ray (camera-space origin) with a splat's disk plane.
///
/// Rays parallel to the plane or hitting it behind the camera produce no hit.
pub fn ray_splat_intersect(splat: &SplatScreen, ray: &PixelRay) -> Option<RaySplatHit> {
    let denom = splat.normal.dot(ray.dir);
    if denom.abs() < 1e-8 {
        return None;
    }
    let t = splat.normal.dot(splat.center) / denom;
    if t <= 0.0 {
        return None;
    }
    let hit = t * ray.dir;
    let e = hit - splat.center;
    let u = splat.tu.dot(e) / splat.su;
    let v = splat.tv.dot(e) / splat.sv;
    let kernel = (-(u * u + v * v) / 2.0).exp();
    let dx = ray.px - splat.center_px.x;
    let dy = ray.py - splat.center_px.y;
    let screen = (-(dx * dx + dy * dy) / (2.0 * SCREEN_FILTER_SIGMA * SCREEN_FILTER_SIGMA)).exp();
    Some(RaySplatHit {
        u,
        v,
        depth: hit.z,
        kernel,
        screen,
        response: kernel.max(screen),
    })
}

/// Project the cloud into a view: primitives behind the near plane, beyond
/// the far plane, or fully outside the image are culled; each survivor gets a
/// conservative bounding box covering its 3-sigma disk extent plus the
/// screen-filter footprint.
pub fn project_gaussians(cloud: &GaussianCloud, cam: &Camera) -> Vec<SplatScreen> {
    let gamma = cloud.gamma();
    let r_t = cam.rotation.transpose();
    (0..cloud.len())
        .filter_map(|i| {
            let su = cloud.scales[i].x;
            let sv = cloud.scales[i].y;
            if su <= 1e-9 || sv <= 1e-9 {
                return None;
            }
            let center = cam.to_camera(cloud.positions[i]);
            if center.z < cam.near || center.z > cam.far {
                return None;
            }
            let rot = quat_to_mat3(cloud.rotations[i]);
            let tu = cam.rotation * rot.x_axis;
            let tv = cam.rotation * rot.y_axis;
            let normal = cam.rotation * rot.z_axis;
            let center_px = cam.project_camera(center);

            // Project the 3-sigma disk corners for the bounding box.
            let (mut lo, mut hi) = (DVec2::splat(f64::INFINITY), DVec2::splat(f64::NEG_INFINITY));
            let mut degenerate = false;
            for (a, b) in [(3.0, 3.0), (3.0, -3.0), (-3.0, 3.0), (-3.0, -3.0)] {
                let corner = center + a * su * tu + b * sv * tv;
                if corner.z < 1e-6 {
                    degenerate = true;
                    break;
                }
                let p = cam.project_camera(corner);
                lo = lo.min(p);
                hi = hi.max(p);
            }
            if degenerate {
                // A corner crosses the image plane; fall back to the full image.
                lo = DVec2::ZERO;
                hi = DVec2::new(cam.width as f64, cam.height as f64);
            }
            // The low-pass floor extends ~3 sigma around the projected center.
            let pad = 3.0 * SCREEN_FILTER_SIGMA;
            lo = lo.min(center_px - DVec2::splat(pad));
            hi = hi.max(center_px + DVec2::splat(pad));

            let x_min = lo.x.floor().max(0.0) as i64;
            let y_min = lo.y.floor().max(0.0) as i64;
            let x_max = (hi.x.ceil() as i64).min(cam.width as i64 - 1);
            let y_max = (hi.y.ceil() as i64).min(cam.height as i64 - 1);
            if x_min > x_max || y_min > y_max {
                return None;
            }
            Some(SplatScreen {
                index: i as u32,
                center,
                tu,
                tv,
                normal,
                normal_world: r_t * normal,
                su,
                sv,
                center_px,
                x_min: x_min as u32,
                x_max: x_max as u32,
                y_min: y_min as u32,
                y_max: y_max as u32,
                opacity: crate::field::sdf_to_opacity(cloud.sdf_values[i], gamma)
                    .expect("validated cloud"),
                albedo: cloud.albedo_eval(i),
                rough: cloud.roughness_eval(i),
                metal: cloud.metallic_eval(i),
            })
        })
        .collect()
}

/// Sort splats into blend order (center depth ascending, ties by primitive
/// index) and bin the sorted indices into tiles.
pub(crate) fn sort_and_bin(
    splats: &mut Vec<SplatScreen>,
    width: usize,
    height: usize,
) -> (usize, usize, Vec<Vec<u32>>) {
    splats.sort_unstable_by(|a, b| {
        a.center
            .z
            .partial_cmp(&b.center.z)
            .expect("finite depths")
            .then(a.index.cmp(&b.index))
    });
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let tx0 = s.x_min as usize / TILE_SIZE;
        let tx1 = s.x_max as usize / TILE_SIZE;
        let ty0 = s.y_min as usize / TILE_SIZE;
        let ty1 = s.y_max as usize / TILE_SIZE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    (tiles_x, tiles_y, bins)
}

/// Pairwise depth-distortion of one pixel's contributors, plus its partial
/// derivatives with respect to each weight and depth.
///
/// The sum runs over ordered pairs, so every unordered pair counts twice. It
/// is evaluated with a single running-sum recurrence over contributors sorted
/// by intersection depth, which keeps the cost linear and the result equal to
/// the brute-force double sum.
pub(crate) fn distortion_terms(
    contribs: &[Contributor],
    scratch: &mut Vec<usize>,
    d_weight: Option<&mut [f64]>,
    d_depth: Option<&mut [f64]>,
) -> f64 {
    let k = contribs.len();
    if k < 2 {
        if let Some(dw) = d_weight {
            dw[..k].fill(0.0);
        }
        if let Some(dd) = d_depth {
            dd[..k].fill(0.0);
        }
        return 0.0;
    }
    scratch.clear();
    scratch.extend(0..k);
    scratch.sort_unstable_by(|&a, &b| {
        contribs[a]
            .depth
            .partial_cmp(&contribs[b].depth)
            .expect("finite depths")
    });

    let total_w: f64 = contribs.iter().map(|c| c.weight).sum();
    let total_wd: f64 = contribs.iter().map(|c| c.weight * c.depth).sum();

    let mut loss = 0.0;
    let mut acc_w = 0.0;
    let mut acc_wd = 0.0;
    // Group equal depths so ties contribute zero and take subgradient zero.
    let mut run = 0;
    while run < k {
        let mut end = run + 1;
        let depth = contribs[scratch[run]].depth;
        while end < k && contribs[scratch[end]].depth == depth {
            end += 1;
        }
        let mut group_w = 0.0;
        for &ci in &scratch[run..end] {
            let c = &contribs[ci];
            group_w += c.weight;
            loss += 2.0 * c.weight * (c.depth * acc_w - acc_wd);
        }
        if d_weight.is_some() || d_depth.is_some() {
            let below_w = acc_w;
            let below_wd = acc_wd;
            let above_w = total_w - acc_w - group_w;
            let above_wd = total_wd - acc_wd - depth * group_w;
            for &ci in &scratch[run..end] {
                let c = &contribs[ci];
                if let Some(&mut ref mut dw) = d_weight {
                    dw[ci] =
                        2.0 * (c.depth * below_w - below_wd) + 2.0 * (above_wd - c.depth * above_w);
                }
                if let Some(&mut ref mut dd) = d_depth {
                    dd[ci] = 2.0 * c.weight * (below_w - above_w);
                }
            }
        }
        for &ci in &scratch[run..end] {
            let c = &contribs[ci];
            acc_w += c.weight;
            acc_wd += c.weight * c.depth;
        }
        run = end;
    }
    loss
}

#[cfg(test)]
pub(crate) fn distortion_brute_force(contribs: &[Contributor]) -> f64 {
    let mut sum = 0.0;
    for a in contribs {
        for b in contribs {
            sum += a.weight * b.weight * (a.depth - b.depth).abs();
        }
    }
    sum
}
