//! GGX microfacet terms shared by the split-sum table, the environment
//! prefilter, the Monte-Carlo oracle, and the synthetic-scene ray tracer.
//!
//! The specular lobe uses the GGX normal distribution with height-correlated
//! Smith visibility and Schlick Fresnel; perceptual roughness maps to the
//! distribution width as `alpha = roughness^2`.

use glam::DVec3;

/// Roughness floor keeping the distribution integrable.
pub const MIN_ROUGHNESS: f64 = 0.01;

pub fn ggx_alpha(roughness: f64) -> f64 {
    let r = roughness.clamp(MIN_ROUGHNESS, 1.0);
    r * r
}

/// GGX normal distribution D(NoH).
pub fn ggx_d(no_h: f64, alpha: f64) -> f64 {
    if no_h <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let d = no_h * no_h * (a2 - 1.0) + 1.0;
    a2 / (std::f64::consts::PI * d * d)
}

/// Height-correlated Smith visibility V = G / (4 NoV NoL).
pub fn smith_visibility(no_v: f64, no_l: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let lambda_v = no_l * (no_v * no_v * (1.0 - a2) + a2).sqrt();
    let lambda_l = no_v * (no_l * no_l * (1.0 - a2) + a2).sqrt();
    0.5 / (lambda_v + lambda_l).max(1e-12)
}

pub fn fresnel_schlick(vo_h: f64, f0: DVec3) -> DVec3 {
    let fc = (1.0 - vo_h).clamp(0.0, 1.0).powi(5);
    f0 + (DVec3::ONE - f0) * fc
}

/// Specular reflectance at normal incidence for a dielectric/metal mix.
pub fn f0_from_metallic(albedo: DVec3, metallic: f64) -> DVec3 {
    DVec3::splat(0.04) * (1.0 - metallic) + albedo * metallic
}

/// Sample the GGX distribution of normals in the local frame (+z up).
/// Returns the half-vector; pdf over half-vectors is `D(NoH) * NoH`.
pub fn sample_ggx_half(u1: f64, u2: f64, alpha: f64) -> DVec3 {
    let phi = 2.0 * std::f64::consts::PI * u1;
    let cos2 = (1.0 - u2) / (1.0 + (alpha * alpha - 1.0) * u2);
    let cos_t = cos2.sqrt();
    let sin_t = (1.0 - cos2).max(0.0).sqrt();
    DVec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

/// Cosine-weighted hemisphere sample in the local frame; pdf is `z / pi`.
pub fn sample_cosine_hemisphere(u1: f64, u2: f64) -> DVec3 {
    let r = u1.sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    let z = (1.0 - u1).max(0.0).sqrt();
    DVec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Pdf over light directions of GGX half-vector sampling followed by
/// reflection: `D(NoH) * NoH / (4 VoH)`.
pub fn ggx_light_pdf(no_h: f64, vo_h: f64, alpha: f64) -> f64 {
    if vo_h <= 0.0 {
        return 0.0;
    }
    ggx_d(no_h, alpha) * no_h / (4.0 * vo_h)
}

/// Full specular BRDF value D * F * V for given dot products.
pub fn specular_brdf(no_v: f64, no_l: f64, no_h: f64, vo_h: f64, alpha: f64, f0: DVec3) -> DVec3 {
    fresnel_schlick(vo_h, f0) * (ggx_d(no_h, alpha) * smith_visibility(no_v, no_l, alpha))
}
