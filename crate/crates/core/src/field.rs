//! Gaussian-surfel cloud carrying discrete signed-distance samples.
//!
//! Each primitive is a flat 2D disk with a position, an orientation
//! quaternion (tangent frame `t_u, t_v` and normal `n = t_u x t_v`), two
//! in-plane extents, PBR attributes, and one sampled SDF value. Opacity is
//! never stored: it is derived from the SDF sample through a bell-shaped
//! transform whose sharpness `gamma` is a single global learnable parameter.

use glam::{DQuat, DVec2, DVec3};

use crate::error::{Error, Result};
use crate::math::{logit, quat_from_normal, quat_to_mat3, sigmoid};
use crate::rng::Rng;

/// Array-of-attributes container for the primitive cloud.
///
/// PBR attributes are stored as unconstrained logits and squashed through a
/// logistic map at evaluation time; `gamma` is stored as its logarithm so the
/// transform sharpness stays positive under unconstrained optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<DVec3>,
    pub rotations: Vec<DQuat>,
    /// In-plane half extents `(s_u, s_v)`, world units, strictly positive.
    pub scales: Vec<DVec2>,
    /// Discrete SDF sample carried by each primitive, world units.
    pub sdf_values: Vec<f64>,
    /// Albedo logits; evaluate with [`GaussianCloud::albedo_eval`].
    pub albedo: Vec<DVec3>,
    /// Roughness logits.
    pub roughness: Vec<f64>,
    /// Metallicity logits.
    pub metallic: Vec<f64>,
    /// log(gamma) of the SDF-to-opacity transform.
    pub log_gamma: f64,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        assert!(gamma > 0.0);
        self.log_gamma = gamma.ln();
    }

    /// Derived opacity of primitive `i`.
    pub fn opacity(&self, i: usize) -> f64 {
        sdf_to_opacity(self.sdf_values[i], self.gamma()).expect("finite SDF sample")
    }

    pub fn albedo_eval(&self, i: usize) -> DVec3 {
        let a = self.albedo[i];
        DVec3::new(sigmoid(a.x), sigmoid(a.y), sigmoid(a.z))
    }

    pub fn roughness_eval(&self, i: usize) -> f64 {
        sigmoid(self.roughness[i])
    }

    pub fn metallic_eval(&self, i: usize) -> f64 {
        sigmoid(self.metallic[i])
    }

    /// Disk normal of primitive `i` (third rotation column, `t_u x t_v`).
    pub fn normal(&self, i: usize) -> DVec3 {
        quat_to_mat3(self.rotations[i]).z_axis
    }

    /// Renormalize all quaternions in place (call after optimizer steps).
    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = q.normalize();
        }
    }

    /// Check the structural invariants; used by tests and after densify/prune.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.scales.len() != n
            || self.sdf_values.len() != n
            || self.albedo.len() != n
            || self.roughness.len() != n
            || self.metallic.len() != n
        {
            return Err(Error::ShapeMismatch(format!(
                "attribute arrays disagree on primitive count {n}"
            )));
        }
        if !self.log_gamma.is_finite() {
            return Err(Error::ShapeMismatch("log_gamma is not finite".into()));
        }
        for i in 0..n {
            if !self.positions[i].is_finite() {
                return Err(Error::ShapeMismatch(format!("position {i} not finite")));
            }
            let q = self.rotations[i];
            if (q.length() - 1.0).abs() > 1e-4 {
                return Err(Error::NonUnitQuaternion(q.length()));
            }
            if !(self.scales[i].x > 0.0 && self.scales[i].y > 0.0) {
                return Err(Error::ShapeMismatch(format!("scale {i} not positive")));
            }
            if !self.sdf_values[i].is_finite() {
                return Err(Error::InvalidSdfSample(format!("index {i}")));
            }
        }
        Ok(())
    }
}

/// SDF-to-opacity transform `T_gamma(s) = 4 e^{-gamma s} / (1 + e^{-gamma s})^2`.
///
/// Evaluated through `t = e^{-gamma |s|}` so large `gamma * s` cannot
/// overflow; the transform is even in `s`, equals 1 exactly at `s = 0`, and
/// decays monotonically with `|s|`.
pub fn sdf_to_opacity(s: f64, gamma: f64) -> Result<f64> {
    if !s.is_finite() || !gamma.is_finite() {
        return Err(Error::InvalidSdfSample(format!("s={s}, gamma={gamma}")));
    }
    debug_assert!(gamma > 0.0);
    let t = (-gamma * s.abs()).exp();
    let one_plus = 1.0 + t;
    Ok(4.0 * t / (one_plus * one_plus))
}

/// Analytic partials `(d opacity / d s, d opacity / d gamma)`.
pub fn sdf_to_opacity_grad(s: f64, gamma: f64) -> Result<(f64, f64)> {
    if !s.is_finite() || !gamma.is_finite() {
        return Err(Error::InvalidSdfSample(format!("s={s}, gamma={gamma}")));
    }
    let t = (-gamma * s.abs()).exp();
    let one_plus = 1.0 + t;
    let k = 4.0 * t * (1.0 - t) / (one_plus * one_plus * one_plus);
    let sign = if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok((-sign * gamma * k, -s.abs() * k))
}

/// Exact median of `|s_i|`; for even counts the lower of the two middle
/// elements is taken. Treated as a constant with respect to gradients.
pub fn unsigned_distance_median(cloud: &GaussianCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut mags: Vec<f64> = cloud.sdf_values.iter().map(|s| s.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite SDF samples"));
    Ok(mags[(mags.len() - 1) / 2])
}

/// `-ln(3 - 2 sqrt(2))`: the product `gamma * s` at which the transform
/// evaluates to exactly one half.
pub const HALF_OPACITY_PRODUCT: f64 = 1.762_747_174_039_086;

/// Target sharpness `gamma_m` such that the median-distance primitive has
/// opacity 0.5.
pub fn gamma_median(s_med: f64) -> Result<f64> {
    if !(s_med > 0.0) {
        return Err(Error::DegenerateMedian(s_med));
    }
    Ok(HALF_OPACITY_PRODUCT / s_med)
}

/// Hinge loss `max(gamma_m - gamma, 0)` pulling the transform sharpness up to
/// the median-derived target while leaving sharper transforms untouched.
pub fn median_loss(gamma: f64, gamma_m: f64) -> f64 {
    (gamma_m - gamma).max(0.0)
}

/// Subgradient of [`median_loss`] with respect to `gamma` (0 at the hinge).
pub fn median_loss_grad(gamma: f64, gamma_m: f64) -> f64 {
    if gamma < gamma_m {
        -1.0
    } else {
        0.0
    }
}

/// Disk normal from an orientation quaternion, rejecting inputs that drifted
/// off the unit sphere by more than 1e-4.
pub fn gaussian_normal(rotation: DQuat) -> Result<DVec3> {
    let len = rotation.length();
    if (len - 1.0).abs() > 1e-4 {
        return Err(Error::NonUnitQuaternion(len));
    }
    Ok(quat_to_mat3(rotation).z_axis)
}

/// Cloud initialization: `count` primitives uniformly distributed on a sphere
/// of the given radius, disks oriented with outward radial normals, SDF
/// samples at zero, neutral PBR attributes, and `gamma = 10`.
pub fn spherical_init(count: usize, radius: f64, seed: u64) -> Result<GaussianCloud> {
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    assert!(radius > 0.0, "radius must be positive");
    let mut rng = Rng::new(seed);
    let mut positions = Vec::with_capacity(count);
    let mut rotations = Vec::with_capacity(count);
    // Mean inter-point spacing on the sphere surface.
    let scale = radius * (4.0 * std::f64::consts::PI / count as f64).sqrt();
    for _ in 0..count {
        let dir = loop {
            let v = DVec3::new(rng.normal(), rng.normal(), rng.normal());
            if v.length() > 1e-6 {
                break v.normalize();
            }
        };
        positions.push(dir * radius);
        rotations.push(quat_from_normal(dir));
    }
    let cloud = GaussianCloud {
        positions,
        rotations,
        scales: vec![DVec2::splat(scale); count],
        sdf_values: vec![0.0; count],
        albedo: vec![DVec3::splat(logit(0.5)); count],
        roughness: vec![logit(0.8); count],
        metallic: vec![logit(0.0); count],
        log_gamma: 10f64.ln(),
    };
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{central_difference, rel_error};

    #[test]
    fn opacity_is_one_at_zero_exactly() {
        assert_eq!(sdf_to_opacity(0.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn opacity_is_even_in_s() {
        let a = sdf_to_opacity(0.3, 7.0).unwrap();
        let b = sdf_to_opacity(-0.3, 7.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn opacity_half_at_derived_gamma() {
        // gamma solving 4x/(1+x)^2 = 0.5 at s = 0.2.
        let o = sdf_to_opacity(0.2, 8.81374).unwrap();
        assert!((o - 0.5).abs() < 1e-5, "{o}");
    }

    #[test]
    fn opacity_stable_for_huge_arguments() {
        for s in [1.0, -1.0] {
            let o = sdf_to_opacity(s, 500.0).unwrap();
            assert!(o.is_finite() && o > 0.0 && o <= 1.0);
        }
        assert!(sdf_to_opacity(f64::NAN, 5.0).is_err());
        assert!(sdf_to_opacity(f64::INFINITY, 5.0).is_err());
    }

    #[test]
    fn opacity_grad_zero_at_peak() {
        let (ds, _) = sdf_to_opacity_grad(0.0, 5.0).unwrap();
        assert_eq!(ds, 0.0);
    }

    #[test]
    fn opacity_grads_match_finite_differences() {
        let h = 1e-5;
        let (ds, dg) = sdf_to_opacity_grad(0.5, 4.0).unwrap();
        let fd_s = central_difference(|s| sdf_to_opacity(s, 4.0).unwrap(), 0.5, h);
        let fd_g = central_difference(|g| sdf_to_opacity(0.5, g).unwrap(), 4.0, h);
        assert!(rel_error(ds, fd_s) < 1e-5, "{ds} vs {fd_s}");
        assert!(rel_error(dg, fd_g) < 1e-5, "{dg} vs {fd_g}");
    }

    #[test]
    fn opacity_grads_match_fd_at_random_points() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let s = rng.uniform_in(-2.0, 2.0);
            let gamma = rng.uniform_in(0.5, 20.0);
            if s.abs() < 1e-3 {
                continue;
            }
            let (ds, dg) = sdf_to_opacity_grad(s, gamma).unwrap();
            let fd_s = central_difference(|x| sdf_to_opacity(x, gamma).unwrap(), s, 1e-6);
            let fd_g = central_difference(|x| sdf_to_opacity(s, x).unwrap(), gamma, 1e-6);
            assert!(rel_error(ds, fd_s) < 1e-4, "s={s} gamma={gamma}");
            assert!(rel_error(dg, fd_g) < 1e-4, "s={s} gamma={gamma}");
        }
    }

    fn cloud_with_sdf(values: &[f64]) -> GaussianCloud {
        let mut c = spherical_init(values.len(), 1.0, 0).unwrap();
        c.sdf_values = values.to_vec();
        c
    }

    #[test]
    fn median_odd_and_all_zero() {
        assert_eq!(
            unsigned_distance_median(&cloud_with_sdf(&[0.1, -0.3, 0.2])).unwrap(),
            0.2
        );
        assert_eq!(
            unsigned_distance_median(&cloud_with_sdf(&[0.0, 0.0, 0.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn median_even_takes_lower_middle() {
        assert_eq!(
            unsigned_distance_median(&cloud_with_sdf(&[-0.4, 0.1, 0.2, 0.3])).unwrap(),
            0.2
        );
    }

    #[test]
    fn median_rejects_empty_cloud() {
        let c = GaussianCloud {
            positions: vec![],
            rotations: vec![],
            scales: vec![],
            sdf_values: vec![],
            albedo: vec![],
            roughness: vec![],
            metallic: vec![],
            log_gamma: 0.0,
        };
        assert!(matches!(
            unsigned_distance_median(&c),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn gamma_median_numeric_value() {
        assert!((gamma_median(1.0).unwrap() - 1.76275).abs() < 1e-4);
    }

    #[test]
    fn gamma_median_reciprocal_scaling() {
        let g1 = gamma_median(0.4).unwrap();
        let g2 = gamma_median(0.4 * 3.0).unwrap();
        assert!(rel_error(g1 / 3.0, g2) < 1e-12);
    }

    #[test]
    fn gamma_median_gives_half_opacity() {
        for s_med in [0.05, 0.2, 1.0] {
            let g = gamma_median(s_med).unwrap();
            let o = sdf_to_opacity(s_med, g).unwrap();
            assert!((o - 0.5).abs() < 1e-9, "s_med={s_med}: {o}");
        }
    }

    #[test]
    fn gamma_median_rejects_nonpositive() {
        assert!(matches!(gamma_median(0.0), Err(Error::DegenerateMedian(_))));
        assert!(matches!(
            gamma_median(-0.1),
            Err(Error::DegenerateMedian(_))
        ));
    }

    #[test]
    fn median_loss_hinge() {
        assert_eq!(median_loss(5.0, 5.0), 0.0);
        assert_eq!(median_loss(8.0, 5.0), 0.0);
        assert_eq!(median_loss(4.0, 5.0), 1.0);
        assert_eq!(median_loss_grad(4.0, 5.0), -1.0);
        assert_eq!(median_loss_grad(5.0, 5.0), 0.0);
        assert_eq!(median_loss_grad(8.0, 5.0), 0.0);
    }

    #[test]
    fn normal_of_identity_and_x_rotation() {
        let n = gaussian_normal(DQuat::IDENTITY).unwrap();
        assert!((n - DVec3::Z).length() < 1e-12);
        let q = DQuat::from_axis_angle(DVec3::X, std::f64::consts::FRAC_PI_2);
        let n = gaussian_normal(q).unwrap();
        assert!((n - DVec3::new(0.0, -1.0, 0.0)).length() < 1e-12);
    }

    #[test]
    fn normal_rejects_non_unit_quaternion() {
        let q = DQuat::from_xyzw(0.0, 0.0, 0.0, 1.2);
        assert!(matches!(
            gaussian_normal(q),
            Err(Error::NonUnitQuaternion(_))
        ));
    }

    #[test]
    fn normal_equals_cross_of_tangents() {
        let mut rng = Rng::new(4);
        for _ in 0..30 {
            let q = DQuat::from_xyzw(rng.normal(), rng.normal(), rng.normal(), rng.normal())
                .normalize();
            let m = quat_to_mat3(q);
            let n = gaussian_normal(q).unwrap();
            assert!((n - m.x_axis.cross(m.y_axis)).length() < 1e-6);
            assert!((n.length() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn spherical_init_geometry() {
        let cloud = spherical_init(500, 2.5, 42).unwrap();
        for i in 0..cloud.len() {
            assert!((cloud.positions[i].length() - 2.5).abs() < 1e-6);
            let radial = cloud.positions[i].normalize();
            assert!((cloud.normal(i) - radial).length() < 1e-6);
        }
    }

    #[test]
    fn spherical_init_deterministic() {
        let a = spherical_init(200, 1.0, 7).unwrap();
        let b = spherical_init(200, 1.0, 7).unwrap();
        assert_eq!(a, b);
        let c = spherical_init(200, 1.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spherical_init_respects_invariants() {
        let cloud = spherical_init(100, 1.0, 3).unwrap();
        cloud.validate().unwrap();
        assert!((cloud.gamma() - 10.0).abs() < 1e-12);
        for i in 0..cloud.len() {
            let o = cloud.opacity(i);
            assert!(o > 0.0 && o <= 1.0);
            let a = cloud.albedo_eval(i);
            assert!((a.x - 0.5).abs() < 1e-12);
            assert!((cloud.roughness_eval(i) - 0.8).abs() < 1e-9);
            assert!(cloud.metallic_eval(i) < 2e-3);
        }
        assert!(spherical_init(0, 1.0, 0).is_err());
    }

    #[test]
    fn transform_peaks_at_zero_on_grid() {
        for gamma in [1.0, 10.0, 100.0] {
            let mut best = f64::NEG_INFINITY;
            let mut best_s = f64::NAN;
            let mut s = -5.0;
            while s <= 5.0 {
                let o = sdf_to_opacity(s, gamma).unwrap();
                assert!(o > 0.0 && o <= 1.0);
                if o > best {
                    best = o;
                    best_s = s;
                }
                s += 0.01;
            }
            assert!(best_s.abs() < 0.011, "gamma={gamma} peak at {best_s}");
        }
    }

    #[test]
    fn sharper_than_median_gamma_keeps_median_opacity_below_half() {
        let s_med = 0.37;
        let gm = gamma_median(s_med).unwrap();
        for k in [1.0, 1.5, 4.0, 20.0] {
            let o = sdf_to_opacity(s_med, gm * k).unwrap();
            assert!(o <= 0.5 + 1e-12, "k={k}: {o}");
        }
    }
}
