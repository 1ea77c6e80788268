//! Analytic ray-traced scene generator: the ground-truth factory for
//! training and acceptance tests.
//!
//! Scenes are unions of analytic spheres shaded by direct image-based
//! lighting with the same BRDF as the Monte-Carlo reference oracle. Renders,
//! masks, world-space normals, and depth are written to disk together with
//! camera manifests and the environment map, in the dataset layout the
//! loader understands.

use std::path::Path;

use glam::DVec3;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::cubemap::CubeMap;
use crate::dataset::{camera_to_world_gl, manifest_json};
use crate::envio::save_environment;
use crate::error::Result;
use crate::grid::{ColorGrid, Grid, ScalarGrid};
use crate::metrics::encode_gamma22;
use crate::rng::Rng;
use crate::shading::{mc_reference_shade, ShadePoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Sphere,
    TwoSpheres,
}

impl SceneKind {
    pub fn parse(s: &str) -> Option<SceneKind> {
        match s {
            "sphere" => Some(SceneKind::Sphere),
            "two-spheres" => Some(SceneKind::TwoSpheres),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SphereGeom {
    pub center: DVec3,
    pub radius: f64,
    pub albedo: DVec3,
    pub roughness: f64,
    pub metallic: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticParams {
    pub kind: SceneKind,
    pub train_views: usize,
    pub test_views: usize,
    pub resolution: usize,
    pub albedo: DVec3,
    pub roughness: f64,
    pub metallic: f64,
    /// Camera distance from the origin.
    pub distance: f64,
    /// Horizontal field of view (radians).
    pub fov: f64,
    pub samples_per_pixel: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            kind: SceneKind::Sphere,
            train_views: 16,
            test_views: 4,
            resolution: 128,
            albedo: DVec3::new(0.7, 0.5, 0.3),
            roughness: 0.6,
            metallic: 0.0,
            distance: 4.0,
            fov: 0.6911,
            samples_per_pixel: 4096,
            seed: 0,
        }
    }
}

pub fn scene_geometry(params: &SyntheticParams) -> Vec<SphereGeom> {
    match params.kind {
        SceneKind::Sphere => vec![SphereGeom {
            center: DVec3::ZERO,
            radius: 1.0,
            albedo: params.albedo,
            roughness: params.roughness,
            metallic: params.metallic,
        }],
        SceneKind::TwoSpheres => vec![
            SphereGeom {
                center: DVec3::new(-0.55, 0.0, 0.0),
                radius: 0.65,
                albedo: params.albedo,
                roughness: params.roughness,
                metallic: params.metallic,
            },
            SphereGeom {
                center: DVec3::new(0.75, 0.0, 0.15),
                radius: 0.45,
                albedo: DVec3::new(0.3, 0.5, 0.8),
                roughness: (params.roughness * 0.5).max(0.05),
                metallic: params.metallic.max(0.5),
            },
        ],
    }
}

/// Built-in environments for desk-scale experiments.
pub fn env_constant(res: usize, color: DVec3) -> CubeMap {
    CubeMap::constant(res, color)
}

/// Smooth gradient along `axis` from `lo` to `hi`.
pub fn env_gradient(res: usize, axis: DVec3, lo: DVec3, hi: DVec3) -> CubeMap {
    let axis = axis.normalize();
    CubeMap::from_fn(res, |d| {
        let t = (d.dot(axis) + 1.0) * 0.5;
        lo + (hi - lo) * t
    })
}

/// Deterministic smooth random environment: a sum of von Mises-Fisher-like
/// lobes with random directions, colors, and widths.
pub fn env_random(res: usize, seed: u64) -> CubeMap {
    let mut rng = Rng::new(seed);
    let lobes: Vec<(DVec3, DVec3, f64)> = (0..6)
        .map(|_| {
            let dir = DVec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            let color = DVec3::new(
                rng.uniform_in(0.2, 1.8),
                rng.uniform_in(0.2, 1.8),
                rng.uniform_in(0.2, 1.8),
            );
            let sharpness = rng.uniform_in(1.5, 8.0);
            (dir, color, sharpness)
        })
        .collect();
    CubeMap::from_fn(res, |d| {
        let mut c = DVec3::splat(0.1);
        for (dir, color, sharpness) in &lobes {
            c += *color * ((d.dot(*dir) - 1.0) * sharpness).exp();
        }
        c
    })
}

/// Nearest positive ray-sphere intersection over the scene.
fn trace(scene: &[SphereGeom], origin: DVec3, dir: DVec3) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in scene.iter().enumerate() {
        let oc = origin - s.center;
        let b = oc.dot(dir);
        let disc = b * b - oc.length_squared() + s.radius * s.radius;
        if disc <= 0.0 {
            continue;
        }
        let t = -b - disc.sqrt();
        if t > 1e-6 && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    best
}

/// One ray-traced view: linear HDR color, coverage, world normals, depth.
pub struct TracedView {
    pub hdr: ColorGrid,
    pub alpha: ScalarGrid,
    pub normals_world: Grid<DVec3>,
    pub depth: ScalarGrid,
}

/// Ray-trace one view with direct IBL at `spp` samples per shaded point.
/// Boundary pixels are supersampled on a 4x4 coverage grid for anti-aliased
/// masks and edges.
pub fn render_view_reference(
    scene: &[SphereGeom],
    cam: &Camera,
    env: &CubeMap,
    spp: usize,
    seed: u64,
) -> TracedView {
    let (w, h) = (cam.width, cam.height);
    let origin = cam.position();
    let r_t = cam.rotation.transpose();

    let rows: Vec<Vec<(DVec3, f64, DVec3, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dir_at = |px: f64, py: f64| r_t * cam.ray_dir_camera(px, py);
                    let center_hit =
                        trace(scene, origin, dir_at(x as f64 + 0.5, y as f64 + 0.5));

                    // Detect boundary pixels from corner agreement.
                    let corners = [
                        (x as f64 + 0.01, y as f64 + 0.01),
                        (x as f64 + 0.99, y as f64 + 0.01),
                        (x as f64 + 0.01, y as f64 + 0.99),
                        (x as f64 + 0.99, y as f64 + 0.99),
                    ];
                    let corner_hits = corners
                        .iter()
                        .filter(|(px, py)| trace(scene, origin, dir_at(*px, *py)).is_some())
                        .count();
                    let uniform = (center_hit.is_some() && corner_hits == 4)
                        || (center_hit.is_none() && corner_hits == 0);

                    let coverage;
                    let represent;
                    if uniform {
                        coverage = if center_hit.is_some() { 1.0 } else { 0.0 };
                        represent = center_hit;
                    } else {
                        // 4x4 subgrid coverage; shade at the nearest covered
                        // subray hit.
                        let mut covered = 0usize;
                        let mut nearest: Option<(f64, usize)> = None;
                        for sy in 0..4 {
                            for sx in 0..4 {
                                let px = x as f64 + (sx as f64 + 0.5) / 4.0;
                                let py = y as f64 + (sy as f64 + 0.5) / 4.0;
                                if let Some(hit) = trace(scene, origin, dir_at(px, py)) {
                                    covered += 1;
                                    if nearest.map_or(true, |(t, _)| hit.0 < t) {
                                        nearest = Some(hit);
                                    }
                                }
                            }
                        }
                        coverage = covered as f64 / 16.0;
                        represent = center_hit.or(nearest);
                    }

                    let Some((t, si)) = represent else {
                        return (DVec3::ZERO, 0.0, DVec3::ZERO, 0.0);
                    };
                    if coverage == 0.0 {
                        return (DVec3::ZERO, 0.0, DVec3::ZERO, 0.0);
                    }
                    let dir = dir_at(x as f64 + 0.5, y as f64 + 0.5);
                    let hit_point = origin + t * dir;
                    let geom = &scene[si];
                    let normal = (hit_point - geom.center).normalize();
                    let point = ShadePoint {
                        albedo: geom.albedo,
                        roughness: geom.roughness,
                        metallic: geom.metallic,
                        normal,
                        view: -dir,
                    };
                    let pixel_seed =
                        seed ^ ((y as u64) << 32 | x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    let color = mc_reference_shade(&point, env, spp, pixel_seed);
                    let depth = cam.to_camera(hit_point).z;
                    (color, coverage, normal, depth)
                })
                .collect()
        })
        .collect();

    let mut out = TracedView {
        hdr: Grid::new(w, h),
        alpha: Grid::new(w, h),
        normals_world: Grid::new(w, h),
        depth: Grid::new(w, h),
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (c, a, n, d)) in row.into_iter().enumerate() {
            out.hdr.set(x, y, c);
            out.alpha.set(x, y, a);
            out.normals_world.set(x, y, n);
            out.depth.set(x, y, d);
        }
    }
    out
}

/// Deterministic camera rig: golden-angle azimuths with cycling elevations,
/// all looking at the origin with +z up. Test views continue the same
/// sequence after the training views.
pub fn rig_camera(index: usize, params: &SyntheticParams) -> (DVec3, Camera) {
    let golden = 0.618_033_988_749_895;
    let azimuth = std::f64::consts::TAU * ((index as f64 * golden) % 1.0);
    let elevations = [0.1, 0.45, -0.25, 0.7];
    let elevation: f64 = elevations[index % elevations.len()];
    let eye = DVec3::new(
        params.distance * elevation.cos() * azimuth.cos(),
        params.distance * elevation.cos() * azimuth.sin(),
        params.distance * elevation.sin(),
    );
    let cam = Camera::look_at(
        params.resolution,
        params.resolution,
        params.fov,
        eye,
        DVec3::ZERO,
        DVec3::Z,
    );
    (eye, cam)
}

/// Generate the full dataset on disk: `train/` and `test/` image splits with
/// manifests, per-view normal maps (`*_normal.png`, world-space, encoded
/// `(n+1)/2`), per-view depth (`*_depth.f64`, row-major little-endian), the
/// environment (`env.hdr`), and exact alpha masks in the image alpha channel.
pub fn generate_synthetic_scene(
    out_dir: &Path,
    params: &SyntheticParams,
    env: &CubeMap,
) -> Result<()> {
    let scene = scene_geometry(params);
    std::fs::create_dir_all(out_dir.join("train"))?;
    std::fs::create_dir_all(out_dir.join("test"))?;
    save_environment(&out_dir.join("env.hdr"), env)?;

    let mut splits = vec![
        ("train", 0usize, params.train_views, Vec::new()),
        ("test", params.train_views, params.test_views, Vec::new()),
    ];
    for (split, offset, count, frames) in &mut splits {
        for k in 0..*count {
            let index = *offset + k;
            let (eye, cam) = rig_camera(index, params);
            let traced = render_view_reference(
                &scene,
                &cam,
                env,
                params.samples_per_pixel,
                params.seed ^ (index as u64) << 20,
            );
            let name = format!("{split}/r_{k}");
            write_view_files(out_dir, &name, &traced)?;
            frames.push((
                format!("./{name}"),
                camera_to_world_gl(eye, DVec3::ZERO, DVec3::Z),
            ));
        }
    }
    for (split, _, _, frames) in &splits {
        let manifest = manifest_json(params.fov, frames);
        std::fs::write(
            out_dir.join(format!("transforms_{split}.json")),
            manifest,
        )?;
    }
    Ok(())
}

fn write_view_files(root: &Path, name: &str, traced: &TracedView) -> Result<()> {
    let (w, h) = (traced.hdr.width, traced.hdr.height);
    let ldr = encode_gamma22(&traced.hdr);
    let mut rgba = image::RgbaImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let c = ldr.get(x, y);
            let a = traced.alpha.get(x, y);
            rgba.put_pixel(
                x as u32,
                y as u32,
                image::Rgba([
                    (c.x * 255.0).round() as u8,
                    (c.y * 255.0).round() as u8,
                    (c.z * 255.0).round() as u8,
                    (a * 255.0).round() as u8,
                ]),
            );
        }
    }
    rgba.save(root.join(format!("{name}.png")))
        .map_err(crate::error::Error::Image)?;

    let mut normal_png = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let n = traced.normals_world.get(x, y);
            let enc = (n + DVec3::ONE) * 0.5 * 255.0;
            normal_png.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    enc.x.round().clamp(0.0, 255.0) as u8,
                    enc.y.round().clamp(0.0, 255.0) as u8,
                    enc.z.round().clamp(0.0, 255.0) as u8,
                ]),
            );
        }
    }
    normal_png
        .save(root.join(format!("{name}_normal.png")))
        .map_err(crate::error::Error::Image)?;

    let mut depth_bytes = Vec::with_capacity(8 * w * h);
    for d in &traced.depth.data {
        depth_bytes.extend_from_slice(&d.to_le_bytes());
    }
    std::fs::write(root.join(format!("{name}_depth.f64")), depth_bytes)?;
    Ok(())
}

/// Decode a normal map written by the generator back to unit vectors
/// (zero where the encoded vector is degenerate).
pub fn decode_normal_map(img: &ColorGrid) -> Grid<DVec3> {
    Grid {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|c| {
                let n = *c * 2.0 - DVec3::ONE;
                if n.length() > 0.2 {
                    n.normalize()
                } else {
                    DVec3::ZERO
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_params() -> SyntheticParams {
        SyntheticParams {
            train_views: 2,
            test_views: 1,
            resolution: 48,
            samples_per_pixel: 32,
            ..Default::default()
        }
    }

    #[test]
    fn silhouette_area_matches_projected_disk() {
        // The exact silhouette of a sphere is the tangent cone:
        // pi R^2 fx fy / (d^2 - R^2); at large distance this approaches the
        // flat-disk approximation pi R^2 fx fy / d^2.
        let mut params = fast_params();
        let scene = scene_geometry(&params);
        let (_, cam) = rig_camera(0, &params);
        let env = env_constant(8, DVec3::ONE);
        let traced = render_view_reference(&scene, &cam, &env, 8, 1);
        let area: f64 = traced.alpha.data.iter().sum();
        let d2 = params.distance * params.distance;
        let exact = std::f64::consts::PI * cam.fx * cam.fy / (d2 - 1.0);
        assert!((area - exact).abs() / exact < 0.02, "{area} vs {exact}");

        // Far camera: the flat-disk approximation holds within 2%.
        params.distance = 12.0;
        params.fov = 0.24;
        let (_, far_cam) = rig_camera(0, &params);
        let traced = render_view_reference(&scene, &far_cam, &env, 8, 1);
        let area: f64 = traced.alpha.data.iter().sum();
        let approx = std::f64::consts::PI * far_cam.fx * far_cam.fy
            / (params.distance * params.distance);
        assert!((area - approx).abs() / approx < 0.02, "{area} vs {approx}");
    }

    #[test]
    fn emitted_normals_are_unit_inside_the_mask() {
        let params = fast_params();
        let scene = scene_geometry(&params);
        let (_, cam) = rig_camera(1, &params);
        let env = env_constant(8, DVec3::ONE);
        let traced = render_view_reference(&scene, &cam, &env, 8, 1);
        let mut checked = 0;
        for i in 0..traced.alpha.data.len() {
            if traced.alpha.data[i] > 0.99 {
                assert!((traced.normals_world.data[i].length() - 1.0).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn generation_is_deterministic() {
        let params = fast_params();
        let scene = scene_geometry(&params);
        let (_, cam) = rig_camera(2, &params);
        let env = env_random(8, 3);
        let a = render_view_reference(&scene, &cam, &env, 64, 7);
        let b = render_view_reference(&scene, &cam, &env, 64, 7);
        assert_eq!(a.hdr.data, b.hdr.data);
        assert_eq!(a.alpha.data, b.alpha.data);
    }

    #[test]
    fn dataset_round_trips_through_the_loader() {
        let dir = std::env::temp_dir().join(format!("rls-synth-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let params = fast_params();
        let env = env_gradient(8, DVec3::Z, DVec3::splat(0.2), DVec3::splat(1.5));
        generate_synthetic_scene(&dir, &params, &env).unwrap();
        let train = crate::dataset::load_dataset(&dir).unwrap();
        assert_eq!(train.views.len(), 2);
        assert!(train.warnings.is_empty());
        let test = crate::dataset::load_split(&dir, "transforms_test.json").unwrap();
        assert_eq!(test.views.len(), 1);
        // Cameras look at the origin.
        for v in &train.views {
            let c = v.camera.to_camera(DVec3::ZERO);
            assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
        }
        // The environment file reloads.
        let env2 = crate::envio::load_environment(&dir.join("env.hdr"), 8).unwrap();
        let e0 = env.total_energy();
        let e1 = env2.base.total_energy();
        assert!((e0 - e1).length() / e0.length() < 0.03);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn two_sphere_scene_has_two_silhouettes() {
        let mut params = fast_params();
        params.kind = SceneKind::TwoSpheres;
        let scene = scene_geometry(&params);
        assert_eq!(scene.len(), 2);
        let (_, cam) = rig_camera(0, &params);
        let env = env_constant(8, DVec3::ONE);
        let traced = render_view_reference(&scene, &cam, &env, 8, 1);
        let area: f64 = traced.alpha.data.iter().sum();
        assert!(area > 100.0);
    }
}
