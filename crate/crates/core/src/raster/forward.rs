//! Forward rasterization: per-pixel sorted front-to-back alpha blending of
//! splat attributes into the G-buffer.

use glam::DVec3;
use rayon::prelude::*;

use super::{
    distortion_depth, distortion_terms, project_gaussians, ray_splat_intersect, sort_and_bin,
    Contributor, GBuffer, PixelRay, RasterMode, SplatScreen, ALPHA_CLAMP, ALPHA_SKIP, TILE_SIZE,
    TRANSMITTANCE_STOP,
};
use crate::camera::Camera;
use crate::field::GaussianCloud;
use crate::grid::Grid;

struct PixelScratch {
    sort: Vec<usize>,
    mapped: Vec<Contributor>,
}

struct TilePixel {
    albedo: DVec3,
    roughness: f64,
    metallic: f64,
    normal: DVec3,
    depth: f64,
    alpha: f64,
    distortion: f64,
    contributors: Vec<Contributor>,
}

/// Rasterize the cloud into a deferred G-buffer.
///
/// Contributors are blended in ascending center-depth order (ties broken by
/// primitive index); per-splat alpha is `T_gamma(s) * response`, clamped to
/// 0.999; alphas below 1/255 are skipped; blending terminates once
/// transmittance drops below 1e-4. Blended normals are renormalized and the
/// aggregated depth is coverage-normalized. Contributor lists are retained
/// for the backward pass.
pub fn rasterize(cloud: &GaussianCloud, cam: &Camera, mode: RasterMode) -> GBuffer {
    let mut splats = project_gaussians(cloud, cam);
    let (tiles_x, tiles_y, bins) = sort_and_bin(&mut splats, cam.width, cam.height);
    let deferred = mode == RasterMode::DeferredPbr;

    let tiles: Vec<(usize, Vec<TilePixel>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(cam.width);
            let y1 = (y0 + TILE_SIZE).min(cam.height);
            let bin = &bins[tile];
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut scratch = PixelScratch {
                sort: Vec::new(),
                mapped: Vec::new(),
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    out.push(blend_pixel(
                        cam,
                        &splats,
                        bin,
                        x,
                        y,
                        deferred,
                        &mut scratch,
                    ));
                }
            }
            (tile, out)
        })
        .collect();

    let mut gb = GBuffer {
        width: cam.width,
        height: cam.height,
        albedo: Grid::new(cam.width, cam.height),
        roughness: Grid::new(cam.width, cam.height),
        metallic: Grid::new(cam.width, cam.height),
        normal: Grid::new(cam.width, cam.height),
        depth: Grid::new(cam.width, cam.height),
        alpha: Grid::new(cam.width, cam.height),
        distortion: Grid::new(cam.width, cam.height),
        contributors: Some(vec![Vec::new(); cam.width * cam.height]),
    };
    let lists = gb.contributors.as_mut().expect("just created");
    for (tile, pixels) in tiles {
        let tx = tile % tiles_x;
        let ty = tile / tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(cam.width);
        let mut it = pixels.into_iter();
        for y in y0..((ty * TILE_SIZE + TILE_SIZE).min(cam.height)) {
            for x in x0..x1 {
                let p = it.next().expect("tile pixel count");
                let i = y * cam.width + x;
                gb.albedo.data[i] = p.albedo;
                gb.roughness.data[i] = p.roughness;
                gb.metallic.data[i] = p.metallic;
                gb.normal.data[i] = p.normal;
                gb.depth.data[i] = p.depth;
                gb.alpha.data[i] = p.alpha;
                gb.distortion.data[i] = p.distortion;
                lists[i] = p.contributors;
            }
        }
    }
    gb
}

fn blend_pixel(
    cam: &Camera,
    splats: &[SplatScreen],
    bin: &[u32],
    x: usize,
    y: usize,
    deferred: bool,
    scratch: &mut PixelScratch,
) -> TilePixel {
    let ray = PixelRay::through(cam, x, y);
    let mut transmittance = 1.0;
    let mut albedo = DVec3::ZERO;
    let mut roughness = 0.0;
    let mut metallic = 0.0;
    let mut normal = DVec3::ZERO;
    let mut sum_w = 0.0;
    let mut sum_wd = 0.0;
    let mut contributors: Vec<Contributor> = Vec::new();

    for &si in bin {
        let s = &splats[si as usize];
        if (x as u32) < s.x_min || (x as u32) > s.x_max || (y as u32) < s.y_min
            || (y as u32) > s.y_max
        {
            continue;
        }
        let Some(hit) = ray_splat_intersect(s, &ray) else {
            continue;
        };
        let alpha = (s.opacity * hit.response).min(ALPHA_CLAMP);
        if alpha < ALPHA_SKIP {
            continue;
        }
        let w = alpha * transmittance;
        albedo += w * s.albedo;
        if deferred {
            roughness += w * s.rough;
            metallic += w * s.metal;
            normal += w * s.normal_world;
        }
        sum_w += w;
        sum_wd += w * hit.depth;
        contributors.push(Contributor {
            index: s.index,
            weight: w,
            depth: hit.depth,
        });
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_STOP {
            break;
        }
    }

    // Distortion accumulates in the mapped depth domain.
    scratch.mapped.clear();
    scratch.mapped.extend(contributors.iter().map(|c| Contributor {
        index: c.index,
        weight: c.weight,
        depth: distortion_depth(c.depth).0,
    }));
    let distortion = distortion_terms(&scratch.mapped, &mut scratch.sort, None, None);
    let norm_len = normal.length();
    TilePixel {
        albedo,
        roughness,
        metallic,
        normal: if norm_len > 1e-12 {
            normal / norm_len
        } else {
            DVec3::ZERO
        },
        depth: sum_wd / (sum_w + 1e-8),
        alpha: sum_w,
        distortion,
        contributors,
    }
}
