//! Cubemap container with direction mapping, bilinear sampling, per-texel
//! solid angles, and equirectangular conversion.
//!
//! Face order is +x, -x, +y, -y, +z, -z. Within a face, `u` and `v` run over
//! `[0, 1)` with texel centers at `(i + 0.5) / res`, and the face-local frame
//! follows the standard cube-mapping layout documented in
//! `docs/formats.md`. Equirectangular images use +z as the pole axis:
//! `v = acos(d.z) / pi`, `u = (atan2(d.y, d.x) + pi) / (2 pi)`.

use glam::DVec3;

use crate::grid::ColorGrid;

pub const FACES: usize = 6;

/// Face-local orthogonal frames: `dir = normalize(forward + (2u-1)*right + (2v-1)*up)`.
const FACE_FORWARD: [DVec3; 6] = [
    DVec3::new(1.0, 0.0, 0.0),
    DVec3::new(-1.0, 0.0, 0.0),
    DVec3::new(0.0, 1.0, 0.0),
    DVec3::new(0.0, -1.0, 0.0),
    DVec3::new(0.0, 0.0, 1.0),
    DVec3::new(0.0, 0.0, -1.0),
];
const FACE_RIGHT: [DVec3; 6] = [
    DVec3::new(0.0, -1.0, 0.0),
    DVec3::new(0.0, 1.0, 0.0),
    DVec3::new(1.0, 0.0, 0.0),
    DVec3::new(1.0, 0.0, 0.0),
    DVec3::new(1.0, 0.0, 0.0),
    DVec3::new(-1.0, 0.0, 0.0),
];
const FACE_UP: [DVec3; 6] = [
    DVec3::new(0.0, 0.0, -1.0),
    DVec3::new(0.0, 0.0, -1.0),
    DVec3::new(0.0, 0.0, -1.0),
    DVec3::new(0.0, 0.0, 1.0),
    DVec3::new(0.0, 1.0, 0.0),
    DVec3::new(0.0, 1.0, 0.0),
];

/// RGB cubemap, `6 * res * res` texels stored face-major, row-major per face.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeMap {
    pub res: usize,
    pub data: Vec<DVec3>,
}

/// A bilinear cubemap sample with its local derivatives.
///
/// The derivative of the sampled value with respect to the lookup direction
/// decomposes as `d value / d dir = dval_ddir_u * du_ddir^T + dval_ddir_v *
/// dv_ddir^T`; adjoint code pulls an upstream gradient `g` back to the
/// direction as `du_ddir * g.dot(dval_ddir_u) + dv_ddir * g.dot(dval_ddir_v)`.
#[derive(Clone, Copy, Debug)]
pub struct CubeSample {
    pub value: DVec3,
    pub taps: [(usize, f64); 4],
    pub dval_ddir_u: DVec3,
    pub dval_ddir_v: DVec3,
    pub du_ddir: DVec3,
    pub dv_ddir: DVec3,
}

impl CubeSample {
    /// Direction gradient for an upstream gradient on the sampled value.
    pub fn dir_grad(&self, upstream: DVec3) -> DVec3 {
        self.du_ddir * upstream.dot(self.dval_ddir_u)
            + self.dv_ddir * upstream.dot(self.dval_ddir_v)
    }
}

impl CubeMap {
    pub fn constant(res: usize, value: DVec3) -> Self {
        CubeMap {
            res,
            data: vec![value; FACES * res * res],
        }
    }

    pub fn from_fn(res: usize, mut f: impl FnMut(DVec3) -> DVec3) -> Self {
        let mut map = CubeMap::constant(res, DVec3::ZERO);
        for face in 0..FACES {
            for y in 0..res {
                for x in 0..res {
                    let dir = map.texel_dir(face, x, y);
                    let i = map.index(face, x, y);
                    map.data[i] = f(dir);
                }
            }
        }
        map
    }

    #[inline]
    pub fn index(&self, face: usize, x: usize, y: usize) -> usize {
        (face * self.res + y) * self.res + x
    }

    /// Direction of the texel center.
    pub fn texel_dir(&self, face: usize, x: usize, y: usize) -> DVec3 {
        let u = (x as f64 + 0.5) / self.res as f64;
        let v = (y as f64 + 0.5) / self.res as f64;
        (FACE_FORWARD[face] + (2.0 * u - 1.0) * FACE_RIGHT[face] + (2.0 * v - 1.0) * FACE_UP[face])
            .normalize()
    }

    /// Face index plus in-face `(u, v)` in `[0, 1)` for a direction.
    pub fn dir_to_face_uv(dir: DVec3) -> (usize, f64, f64) {
        let (ax, ay, az) = (dir.x.abs(), dir.y.abs(), dir.z.abs());
        let face = if ax >= ay && ax >= az {
            if dir.x >= 0.0 {
                0
            } else {
                1
            }
        } else if ay >= az {
            if dir.y >= 0.0 {
                2
            } else {
                3
            }
        } else if dir.z >= 0.0 {
            4
        } else {
            5
        };
        let fwd = FACE_FORWARD[face];
        let scale = 1.0 / dir.dot(fwd);
        let local = dir * scale - fwd;
        let u = (local.dot(FACE_RIGHT[face]) + 1.0) * 0.5;
        let v = (local.dot(FACE_UP[face]) + 1.0) * 0.5;
        (face, u.clamp(0.0, 1.0), v.clamp(0.0, 1.0))
    }

    /// The four (texel index, weight) taps of a bilinear lookup, clamped at
    /// face borders.
    pub fn sample_taps(&self, dir: DVec3) -> [(usize, f64); 4] {
        let (face, u, v) = Self::dir_to_face_uv(dir);
        let r = self.res as f64;
        let x = (u * r - 0.5).clamp(0.0, r - 1.0);
        let y = (v * r - 0.5).clamp(0.0, r - 1.0);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.res - 1);
        let y1 = (y0 + 1).min(self.res - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        [
            (self.index(face, x0, y0), (1.0 - fx) * (1.0 - fy)),
            (self.index(face, x1, y0), fx * (1.0 - fy)),
            (self.index(face, x0, y1), (1.0 - fx) * fy),
            (self.index(face, x1, y1), fx * fy),
        ]
    }

    pub fn sample(&self, dir: DVec3) -> DVec3 {
        self.sample_taps(dir)
            .iter()
            .map(|&(i, w)| self.data[i] * w)
            .sum()
    }

    /// Bilinear lookup together with everything adjoint code needs: the taps
    /// for scattering value gradients, and the derivative of the sampled
    /// value with respect to the (unnormalized) lookup direction.
    pub fn sample_with_grad(&self, dir: DVec3) -> CubeSample {
        let (face, u, v) = Self::dir_to_face_uv(dir);
        let r = self.res as f64;
        let xc = u * r - 0.5;
        let yc = v * r - 0.5;
        let x = xc.clamp(0.0, r - 1.0);
        let y = yc.clamp(0.0, r - 1.0);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.res - 1);
        let y1 = (y0 + 1).min(self.res - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let taps = [
            (self.index(face, x0, y0), (1.0 - fx) * (1.0 - fy)),
            (self.index(face, x1, y0), fx * (1.0 - fy)),
            (self.index(face, x0, y1), (1.0 - fx) * fy),
            (self.index(face, x1, y1), fx * fy),
        ];
        let value = taps.iter().map(|&(i, w)| self.data[i] * w).sum();
        let (t00, t10, t01, t11) = (
            self.data[taps[0].0],
            self.data[taps[1].0],
            self.data[taps[2].0],
            self.data[taps[3].0],
        );
        // In-face value derivatives; zero where the lookup clamps.
        let dval_dx = if xc > 0.0 && xc < r - 1.0 {
            (t10 - t00) * (1.0 - fy) + (t11 - t01) * fy
        } else {
            DVec3::ZERO
        };
        let dval_dy = if yc > 0.0 && yc < r - 1.0 {
            (t01 - t00) * (1.0 - fx) + (t11 - t10) * fx
        } else {
            DVec3::ZERO
        };
        // u = ((d.right)/(d.forward) + 1) / 2 and likewise for v.
        let fwd = FACE_FORWARD[face];
        let rgt = FACE_RIGHT[face];
        let up = FACE_UP[face];
        let df = dir.dot(fwd);
        let du_ddir = 0.5 * (rgt * df - dir.dot(rgt) * fwd) / (df * df);
        let dv_ddir = 0.5 * (up * df - dir.dot(up) * fwd) / (df * df);
        CubeSample {
            value,
            taps,
            dval_ddir_u: dval_dx * r,
            dval_ddir_v: dval_dy * r,
            du_ddir,
            dv_ddir,
        }
    }

    /// Exact solid angle of a texel (difference of corner integrals).
    pub fn texel_solid_angle(&self, x: usize, y: usize) -> f64 {
        fn area(x: f64, y: f64) -> f64 {
            (x * y).atan2((x * x + y * y + 1.0).sqrt())
        }
        let r = self.res as f64;
        let u0 = 2.0 * (x as f64) / r - 1.0;
        let u1 = 2.0 * (x as f64 + 1.0) / r - 1.0;
        let v0 = 2.0 * (y as f64) / r - 1.0;
        let v1 = 2.0 * (y as f64 + 1.0) / r - 1.0;
        area(u1, v1) - area(u0, v1) - area(u1, v0) + area(u0, v0)
    }

    /// Total radiant energy: sum of texel values weighted by solid angle.
    pub fn total_energy(&self) -> DVec3 {
        let mut sum = DVec3::ZERO;
        for face in 0..FACES {
            for y in 0..self.res {
                for x in 0..self.res {
                    sum += self.data[self.index(face, x, y)] * self.texel_solid_angle(x, y);
                }
            }
        }
        sum
    }

    /// Resample an equirectangular image (bilinear) into a cubemap.
    pub fn from_equirect(img: &ColorGrid, res: usize) -> CubeMap {
        CubeMap::from_fn(res, |dir| sample_equirect(img, dir))
    }

    /// Render the cubemap back to an equirectangular image (bilinear).
    pub fn to_equirect(&self, width: usize, height: usize) -> ColorGrid {
        ColorGrid::from_fn(width, height, |x, y| {
            let u = (x as f64 + 0.5) / width as f64;
            let v = (y as f64 + 0.5) / height as f64;
            self.sample(equirect_dir(u, v))
        })
    }
}

/// Direction for equirectangular coordinates `(u, v)` in `[0, 1]^2`.
pub fn equirect_dir(u: f64, v: f64) -> DVec3 {
    let theta = v * std::f64::consts::PI;
    let phi = u * 2.0 * std::f64::consts::PI - std::f64::consts::PI;
    let sin_t = theta.sin();
    DVec3::new(sin_t * phi.cos(), sin_t * phi.sin(), theta.cos())
}

/// Bilinear equirectangular lookup for a direction (wraps in longitude,
/// clamps at the poles).
pub fn sample_equirect(img: &ColorGrid, dir: DVec3) -> DVec3 {
    let d = dir.normalize();
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x);
    let u = (phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
    let v = theta / std::f64::consts::PI;
    let x = u * img.width as f64 - 0.5;
    let y = (v * img.height as f64 - 0.5).clamp(0.0, img.height as f64 - 1.0);
    let y0 = y.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let fy = y - y0 as f64;
    let w = img.width as isize;
    let xf = x.floor();
    let fx = x - xf;
    let x0 = ((xf as isize % w) + w) as usize % img.width;
    let x1 = (x0 + 1) % img.width;
    img.get(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + img.get(x1, y0) * fx * (1.0 - fy)
        + img.get(x0, y1) * (1.0 - fx) * fy
        + img.get(x1, y1) * fx * fy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_dir_roundtrips_through_face_uv() {
        let map = CubeMap::constant(8, DVec3::ZERO);
        for face in 0..FACES {
            for y in 0..8 {
                for x in 0..8 {
                    let dir = map.texel_dir(face, x, y);
                    let (f2, u, v) = CubeMap::dir_to_face_uv(dir);
                    assert_eq!(face, f2, "face {face} texel {x},{y}");
                    assert!(((u * 8.0 - 0.5) - x as f64).abs() < 1e-9);
                    assert!(((v * 8.0 - 0.5) - y as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn solid_angles_sum_to_sphere() {
        let map = CubeMap::constant(16, DVec3::ZERO);
        let mut total = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                total += map.texel_solid_angle(x, y);
            }
        }
        total *= 6.0;
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9, "{total}");
    }

    #[test]
    fn sampling_a_constant_map_is_exact() {
        let map = CubeMap::constant(4, DVec3::splat(0.7));
        let mut rng = crate::rng::Rng::new(5);
        for _ in 0..200 {
            let dir = DVec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            assert!((map.sample(dir) - DVec3::splat(0.7)).length() < 1e-12);
        }
    }

    #[test]
    fn equirect_dir_poles_and_equator() {
        assert!((equirect_dir(0.5, 0.0) - DVec3::Z).length() < 1e-9);
        assert!((equirect_dir(0.5, 1.0) - DVec3::NEG_Z).length() < 1e-9);
        let d = equirect_dir(0.5, 0.5);
        assert!(d.z.abs() < 1e-9 && (d.length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_direction_gradient_matches_finite_differences() {
        let mut rng = crate::rng::Rng::new(19);
        let map = CubeMap::from_fn(16, |d| {
            DVec3::new(d.x * d.x + 0.3 * d.y, d.z.abs(), 0.5 + 0.5 * d.x * d.z)
        });
        let mut checked = 0;
        for _ in 0..100 {
            let dir = DVec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            let s = map.sample_with_grad(dir);
            let g_up = DVec3::new(rng.normal(), rng.normal(), rng.normal());
            let analytic = s.dir_grad(g_up);
            let h = 1e-6;
            let mut fd = DVec3::ZERO;
            let mut clamped = false;
            for k in 0..3 {
                let mut dp = dir;
                let mut dm = dir;
                dp[k] += h;
                dm[k] -= h;
                // Skip directions whose stencil crosses a face boundary.
                if CubeMap::dir_to_face_uv(dp).0 != CubeMap::dir_to_face_uv(dm).0 {
                    clamped = true;
                    break;
                }
                fd[k] = (map.sample(dp).dot(g_up) - map.sample(dm).dot(g_up)) / (2.0 * h);
            }
            if clamped || analytic == DVec3::ZERO {
                continue;
            }
            checked += 1;
            assert!(
                (analytic - fd).length() / fd.length().max(1e-6) < 1e-2,
                "{analytic} vs {fd}"
            );
        }
        assert!(checked > 50);
    }

    #[test]
    fn constant_equirect_gives_constant_cubemap() {
        let img = ColorGrid::filled(16, 8, DVec3::new(0.2, 0.4, 0.9));
        let map = CubeMap::from_equirect(&img, 8);
        for t in &map.data {
            assert!((*t - DVec3::new(0.2, 0.4, 0.9)).length() < 1e-6);
        }
    }
}
