//! Screen-space normals from the aggregated depth map, with adjoint.

use glam::DVec3;

use crate::camera::Camera;
use crate::grid::{Grid, ScalarGrid};

/// Normal map estimated from depth by central differences.
///
/// Each pixel with reliable coverage (alpha > 0.5 at the pixel and its four
/// stencil neighbors) is unprojected to a camera-space point; the normalized
/// cross product of the x- and y-difference vectors, oriented toward the
/// camera (negative z), is the estimated normal. Pixels whose stencil touches
/// an unreliable neighbor or the image border emit a zero normal, which
/// downstream losses treat as invalid.
pub fn normal_from_depth(depth: &ScalarGrid, alpha: &ScalarGrid, cam: &Camera) -> Grid<DVec3> {
    let (w, h) = (depth.width, depth.height);
    let mut out = Grid::new(w, h);
    if w < 3 || h < 3 {
        return out;
    }
    let valid = |x: usize, y: usize| alpha.get(x, y) > 0.5;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !(valid(x, y)
                && valid(x - 1, y)
                && valid(x + 1, y)
                && valid(x, y - 1)
                && valid(x, y + 1))
            {
                continue;
            }
            let p = |xx: usize, yy: usize| {
                cam.unproject(xx as f64 + 0.5, yy as f64 + 0.5, depth.get(xx, yy))
            };
            let dpdx = (p(x + 1, y) - p(x - 1, y)) * 0.5;
            let dpdy = (p(x, y + 1) - p(x, y - 1)) * 0.5;
            let n_raw = dpdx.cross(dpdy);
            let len = n_raw.length();
            if len < 1e-15 {
                continue;
            }
            let mut n = n_raw / len;
            if n.z > 0.0 {
                n = -n;
            }
            out.set(x, y, n);
        }
    }
    out
}

/// Adjoint of [`normal_from_depth`]: pulls a gradient on the normal map back
/// to a gradient on the depth map. The validity stencil is treated as
/// constant.
pub fn normal_from_depth_adjoint(
    depth: &ScalarGrid,
    alpha: &ScalarGrid,
    cam: &Camera,
    upstream: &Grid<DVec3>,
) -> ScalarGrid {
    let (w, h) = (depth.width, depth.height);
    let mut out = Grid::new(w, h);
    if w < 3 || h < 3 {
        return out;
    }
    let valid = |x: usize, y: usize| alpha.get(x, y) > 0.5;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !(valid(x, y)
                && valid(x - 1, y)
                && valid(x + 1, y)
                && valid(x, y - 1)
                && valid(x, y + 1))
            {
                continue;
            }
            let g_n = upstream.get(x, y);
            if g_n == DVec3::ZERO {
                continue;
            }
            let p = |xx: usize, yy: usize| {
                cam.unproject(xx as f64 + 0.5, yy as f64 + 0.5, depth.get(xx, yy))
            };
            let dpdx = (p(x + 1, y) - p(x - 1, y)) * 0.5;
            let dpdy = (p(x, y + 1) - p(x, y - 1)) * 0.5;
            let n_raw = dpdx.cross(dpdy);
            let len = n_raw.length();
            if len < 1e-15 {
                continue;
            }
            let mut n = n_raw / len;
            let flip = if n.z > 0.0 { -1.0 } else { 1.0 };
            n *= flip;

            // d n / d n_raw = flip * (I - n_hat n_hat^T) / len, applied to g_n.
            let n_hat = n_raw / len;
            let g_raw = flip * (g_n - n_hat * g_n.dot(n_hat)) / len;

            // n_raw = dpdx x dpdy.
            let g_dpdx = dpdy.cross(g_raw);
            let g_dpdy = g_raw.cross(dpdx);

            // p(x, y) = depth * v(x, y) with v the fixed unprojection ray.
            let ray = |xx: usize, yy: usize| {
                DVec3::new(
                    (xx as f64 + 0.5 - cam.cx) / cam.fx,
                    (yy as f64 + 0.5 - cam.cy) / cam.fy,
                    1.0,
                )
            };
            let mut add = |xx: usize, yy: usize, g_p: DVec3| {
                let i = out.idx(xx, yy);
                out.data[i] += g_p.dot(ray(xx, yy));
            };
            add(x + 1, y, 0.5 * g_dpdx);
            add(x - 1, y, -0.5 * g_dpdx);
            add(x, y + 1, 0.5 * g_dpdy);
            add(x, y - 1, -0.5 * g_dpdy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_depth_plane_faces_the_camera() {
        let cam = Camera::looking_forward(16, 16, 20.0, 0.0);
        let depth = Grid::filled(16, 16, 3.0);
        let alpha = Grid::filled(16, 16, 1.0);
        let normals = normal_from_depth(&depth, &alpha, &cam);
        for y in 1..15 {
            for x in 1..15 {
                let n = normals.get(x, y);
                assert!(
                    (n - DVec3::new(0.0, 0.0, -1.0)).length() < 1e-4,
                    "{x},{y}: {n}"
                );
            }
        }
        // Border pixels have no full stencil.
        assert_eq!(normals.get(0, 0), DVec3::ZERO);
    }

    #[test]
    fn all_invalid_alpha_gives_zero_normals() {
        let cam = Camera::looking_forward(8, 8, 10.0, 0.0);
        let depth = Grid::filled(8, 8, 2.0);
        let alpha = Grid::filled(8, 8, 0.0);
        let normals = normal_from_depth(&depth, &alpha, &cam);
        assert!(normals.data.iter().all(|n| *n == DVec3::ZERO));
    }

    /// Analytic depth map of a sphere; used as the oracle for the normal
    /// estimator.
    fn sphere_depth(cam: &Camera, center: DVec3, radius: f64) -> (ScalarGrid, ScalarGrid) {
        let mut depth = Grid::new(cam.width, cam.height);
        let mut alpha = Grid::new(cam.width, cam.height);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let d = cam.ray_dir_camera(x as f64 + 0.5, y as f64 + 0.5);
                // |o + t d - c|^2 = r^2 with o = 0.
                let b = d.dot(center);
                let disc = b * b - center.length_squared() + radius * radius;
                if disc > 0.0 {
                    let t = b - disc.sqrt();
                    if t > 0.0 {
                        depth.set(x, y, (t * d).z);
                        alpha.set(x, y, 1.0);
                    }
                }
            }
        }
        (depth, alpha)
    }

    #[test]
    fn sphere_depth_recovers_sphere_normals() {
        let cam = Camera::looking_forward(128, 128, 128.0, 0.0);
        let center = DVec3::new(0.0, 0.0, 3.0);
        let radius = 1.0;
        let (depth, alpha) = sphere_depth(&cam, center, radius);
        let normals = normal_from_depth(&depth, &alpha, &cam);
        let mut errors: Vec<f64> = Vec::new();
        for y in 0..128 {
            for x in 0..128 {
                let n = normals.get(x, y);
                if n == DVec3::ZERO {
                    continue;
                }
                let p = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, depth.get(x, y));
                let true_n = (p - center).normalize();
                errors.push(n.dot(true_n).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        assert!(errors.len() > 1000);
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errors[errors.len() / 2];
        assert!(median < 2.0, "median angular error {median} deg");
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let cam = Camera::looking_forward(10, 10, 12.0, 0.0);
        let mut rng = Rng::new(77);
        let mut depth = Grid::filled(10, 10, 2.0);
        for v in &mut depth.data {
            *v += rng.uniform_in(-0.2, 0.2);
        }
        let alpha = Grid::filled(10, 10, 1.0);
        let mut upstream: Grid<DVec3> = Grid::new(10, 10);
        for v in &mut upstream.data {
            *v = DVec3::new(rng.normal(), rng.normal(), rng.normal());
        }
        let objective = |d: &ScalarGrid| {
            let n = normal_from_depth(d, &alpha, &cam);
            n.data
                .iter()
                .zip(&upstream.data)
                .map(|(a, b)| a.dot(*b))
                .sum::<f64>()
        };
        let grad = normal_from_depth_adjoint(&depth, &alpha, &cam, &upstream);
        let h = 1e-6;
        for i in (0..100).step_by(7) {
            let mut plus = depth.clone();
            plus.data[i] += h;
            let mut minus = depth.clone();
            minus.data[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!(
                crate::math::rel_error(grad.data[i], fd) < 1e-3
                    || (grad.data[i].abs() < 1e-8 && fd.abs() < 1e-5),
                "texel {i}: {} vs {fd}",
                grad.data[i]
            );
        }
    }
}
