//! Deferred split-sum shading of a G-buffer, and its adjoint.

use glam::DVec3;
use rayon::prelude::*;

use super::EnvironmentLight;
use crate::camera::Camera;
use crate::error::Result;
use crate::grid::{ColorGrid, Grid};
use crate::raster::{GBuffer, GBufferGrads};

/// Pixels with accumulated alpha at or below this are pure background.
pub const COVERAGE_MIN: f64 = 1e-3;

/// The prefiltered lookup uses the roughness-dependent dominant specular
/// direction (bent from the mirror reflection toward the normal) and a
/// grazing-angle widening of the mip level; both corrections are calibrated
/// against the Monte-Carlo reference integrator.
pub const GRAZING_LEVEL_WIDENING: f64 = 0.35;

/// Blend factor toward the mirror direction: 1 for smooth surfaces, falling
/// toward the normal as the lobe widens. Returns (f, df/d_roughness).
fn dominant_factor(roughness: f64) -> (f64, f64) {
    let r = roughness.clamp(crate::shading::brdf::MIN_ROUGHNESS, 1.0);
    let alpha = r * r;
    let s = (1.0 - alpha).sqrt();
    let f = (1.0 - alpha) * (s + alpha);
    let df_dalpha = -(s + alpha) + (1.0 - alpha) * (1.0 - 0.5 / s.max(1e-6));
    let dalpha_dr = if (crate::shading::brdf::MIN_ROUGHNESS..=1.0).contains(&roughness) {
        2.0 * r
    } else {
        0.0
    };
    (f, df_dalpha * dalpha_dr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpecularForm {
    /// `L_specular * (F0 * F1 + F2)` — the standard split-sum combination.
    #[default]
    Standard,
    /// `L_specular * F0 * F1 + F2` — F2 added without the radiance factor.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Background {
    #[default]
    Black,
    /// Look the environment up along the pixel ray.
    Env,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ShadeOptions {
    pub spec_form: SpecularForm,
    pub background: Background,
}

/// Evaluate the split-sum shade for every covered pixel and composite over
/// the background; output is linear HDR radiance.
///
/// Blended G-buffer attributes are divided by the accumulated alpha before
/// shading (they are stored premultiplied), the diffuse term queries the
/// irradiance map at the blended normal, the specular term queries the mip
/// chain at the reflection direction with trilinear level interpolation at
/// the pixel roughness, and `(F1, F2)` come from the precomputed table.
pub fn shade_deferred(
    gbuffer: &GBuffer,
    env: &EnvironmentLight,
    cam: &Camera,
    opts: &ShadeOptions,
) -> Result<ColorGrid> {
    let filtered = env.filtered()?;
    let (w, h) = (gbuffer.width, gbuffer.height);
    let rows: Vec<Vec<DVec3>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    shade_pixel(gbuffer, env, filtered, cam, opts, x, y).0
                })
                .collect()
        })
        .collect();
    let mut out = Grid::new(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, c) in row.into_iter().enumerate() {
            out.set(x, y, c);
        }
    }
    Ok(out)
}

struct PixelShade {
    // Cached intermediates for the adjoint.
    covered: bool,
    wo: DVec3,
    bg: DVec3,
    albedo: DVec3,
    rough: f64,
    metal: f64,
    normal: DVec3,
    no_v: f64,
    no_v_clamped: bool,
    refl: DVec3,
    /// Bent lookup direction before normalization and its length.
    dom_raw: DVec3,
    dom: DVec3,
    dom_factor: f64,
    dom_factor_grad: f64,
    level0: usize,
    level1: usize,
    level_frac: f64,
    level_scale: f64,
    level_clamped: bool,
    f1: f64,
    f2: f64,
    l_spec: DVec3,
    surface: DVec3,
}

fn shade_pixel(
    gbuffer: &GBuffer,
    env: &EnvironmentLight,
    filtered: &super::FilteredEnv,
    cam: &Camera,
    opts: &ShadeOptions,
    x: usize,
    y: usize,
) -> (DVec3, PixelShade) {
    let pix = y * gbuffer.width + x;
    let dir_world =
        cam.rotation.transpose() * cam.ray_dir_camera(x as f64 + 0.5, y as f64 + 0.5);
    let bg = match opts.background {
        Background::Black => DVec3::ZERO,
        Background::Env => env.base.sample(dir_world),
    };
    let coverage = gbuffer.alpha.data[pix];
    let mut info = PixelShade {
        covered: false,
        wo: -dir_world,
        bg,
        albedo: DVec3::ZERO,
        rough: 0.0,
        metal: 0.0,
        normal: DVec3::ZERO,
        no_v: 0.0,
        no_v_clamped: false,
        refl: DVec3::ZERO,
        dom_raw: DVec3::ZERO,
        dom: DVec3::ZERO,
        dom_factor: 0.0,
        dom_factor_grad: 0.0,
        level0: 0,
        level1: 0,
        level_frac: 0.0,
        level_scale: 1.0,
        level_clamped: false,
        f1: 0.0,
        f2: 0.0,
        l_spec: DVec3::ZERO,
        surface: DVec3::ZERO,
    };
    if coverage <= COVERAGE_MIN {
        return (bg, info);
    }
    info.covered = true;
    let inv_a = 1.0 / coverage;
    info.albedo = gbuffer.albedo.data[pix] * inv_a;
    info.rough = gbuffer.roughness.data[pix] * inv_a;
    info.metal = gbuffer.metallic.data[pix] * inv_a;
    info.normal = gbuffer.normal.data[pix];

    let raw_no_v = info.normal.dot(info.wo);
    info.no_v = raw_no_v.clamp(1e-4, 1.0);
    info.no_v_clamped = raw_no_v <= 1e-4 || raw_no_v >= 1.0;

    // Diffuse: irradiance at the blended normal.
    let e_irr = filtered.irradiance.sample(info.normal);
    let c_diff = info.albedo * (1.0 - info.metal) / std::f64::consts::PI * e_irr;

    // Specular: prefiltered radiance at the dominant lookup direction.
    info.refl = 2.0 * raw_no_v * info.normal - info.wo;
    let (dom_f, dom_df) = dominant_factor(info.rough);
    info.dom_factor = dom_f;
    info.dom_factor_grad = dom_df;
    info.dom_raw = info.normal + (info.refl - info.normal) * dom_f;
    info.dom = if info.dom_raw.length() > 1e-9 {
        info.dom_raw.normalize()
    } else {
        info.refl
    };
    let levels = filtered.mips.len();
    info.level_scale = 1.0 + GRAZING_LEVEL_WIDENING * (1.0 - info.no_v);
    let level_unclamped = info.rough * info.level_scale * (levels - 1) as f64;
    let level_f = level_unclamped.clamp(0.0, (levels - 1) as f64);
    info.level_clamped = level_unclamped <= 0.0 || level_unclamped >= (levels - 1) as f64;
    info.level0 = (level_f.floor() as usize).min(levels - 1);
    info.level1 = (info.level0 + 1).min(levels - 1);
    info.level_frac = level_f - info.level0 as f64;
    let s0 = filtered.mips[info.level0].sample(info.dom);
    let s1 = filtered.mips[info.level1].sample(info.dom);
    info.l_spec = s0 * (1.0 - info.level_frac) + s1 * info.level_frac;

    let (f1, f2) = filtered.dfg.sample(info.no_v, info.rough);
    info.f1 = f1;
    info.f2 = f2;
    let f0 = DVec3::splat(0.04) * (1.0 - info.metal) + info.albedo * info.metal;
    let c_spec = match opts.spec_form {
        SpecularForm::Standard => info.l_spec * (f0 * f1 + DVec3::splat(f2)),
        SpecularForm::Printed => info.l_spec * f0 * f1 + DVec3::splat(f2),
    };
    info.surface = c_diff + c_spec;
    (info.surface * coverage + bg * (1.0 - coverage), info)
}

/// Gradients of [`shade_deferred`] with respect to the G-buffer channels and
/// the base environment radiance. The prefilter is treated as the fixed
/// linear map it is: mip and irradiance texel gradients are pulled back to
/// base texels through its transpose.
pub fn shade_adjoint(
    gbuffer: &GBuffer,
    env: &EnvironmentLight,
    cam: &Camera,
    opts: &ShadeOptions,
    upstream: &ColorGrid,
) -> Result<(GBufferGrads, Vec<DVec3>)> {
    let filtered = env.filtered()?;
    let (w, h) = (gbuffer.width, gbuffer.height);
    let mut grads = GBufferGrads::zeros(w, h);
    let mut d_mips: Vec<Vec<DVec3>> = filtered
        .mips
        .iter()
        .map(|m| vec![DVec3::ZERO; m.data.len()])
        .collect();
    let mut d_irr = vec![DVec3::ZERO; filtered.irradiance.data.len()];
    let mut d_base = vec![DVec3::ZERO; env.base.data.len()];

    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let up = upstream.data[pix];
            if up == DVec3::ZERO {
                continue;
            }
            let (_, info) = shade_pixel(gbuffer, env, filtered, cam, opts, x, y);
            let coverage = gbuffer.alpha.data[pix];

            if !info.covered {
                if matches!(opts.background, Background::Env) {
                    let dir_world = cam.rotation.transpose()
                        * cam.ray_dir_camera(x as f64 + 0.5, y as f64 + 0.5);
                    for (i, wgt) in env.base.sample_taps(dir_world) {
                        d_base[i] += up * wgt;
                    }
                }
                continue;
            }

            // out = surface * A + bg * (1 - A)
            let d_surface = up * coverage;
            let mut d_alpha = up.dot(info.surface - info.bg);
            if matches!(opts.background, Background::Env) {
                let dir_world = cam.rotation.transpose()
                    * cam.ray_dir_camera(x as f64 + 0.5, y as f64 + 0.5);
                for (i, wgt) in env.base.sample_taps(dir_world) {
                    d_base[i] += up * wgt * (1.0 - coverage);
                }
            }

            // Diffuse branch.
            let irr_sample = filtered.irradiance.sample_with_grad(info.normal);
            let diff_factor = info.albedo * (1.0 - info.metal) / std::f64::consts::PI;
            let d_e_irr = d_surface * diff_factor;
            for (i, wgt) in irr_sample.taps {
                d_irr[i] += d_e_irr * wgt;
            }
            let mut d_normal = irr_sample.dir_grad(d_e_irr);
            let mut d_albedo =
                d_surface * (1.0 - info.metal) / std::f64::consts::PI * irr_sample.value;
            let mut d_metal =
                -(d_surface * info.albedo / std::f64::consts::PI).dot(irr_sample.value);

            // Specular branch.
            let f0 = DVec3::splat(0.04) * (1.0 - info.metal) + info.albedo * info.metal;
            let (d_l_spec, d_f0, d_f1, d_f2) = match opts.spec_form {
                SpecularForm::Standard => {
                    let comb = f0 * info.f1 + DVec3::splat(info.f2);
                    (
                        d_surface * comb,
                        d_surface * info.l_spec * info.f1,
                        (d_surface * info.l_spec).dot(f0),
                        (d_surface * info.l_spec).element_sum(),
                    )
                }
                SpecularForm::Printed => (
                    d_surface * f0 * info.f1,
                    d_surface * info.l_spec * info.f1,
                    (d_surface * info.l_spec).dot(f0),
                    d_surface.element_sum(),
                ),
            };
            d_albedo += d_f0 * info.metal;
            d_metal += d_f0.dot(info.albedo - DVec3::splat(0.04));

            // DFG table lookups.
            let (_, ((df1_dnov, df2_dnov), (df1_dr, df2_dr))) =
                filtered.dfg.sample_with_grad(info.no_v, info.rough);
            let mut d_rough = d_f1 * df1_dr + d_f2 * df2_dr;
            let d_no_v = d_f1 * df1_dnov + d_f2 * df2_dnov;
            if !info.no_v_clamped {
                d_normal += d_no_v * info.wo;
            }

            // Prefiltered radiance: trilinear across two mips at the
            // dominant direction.
            let s0 = filtered.mips[info.level0].sample_with_grad(info.dom);
            let s1 = filtered.mips[info.level1].sample_with_grad(info.dom);
            let g0 = d_l_spec * (1.0 - info.level_frac);
            let g1 = d_l_spec * info.level_frac;
            for (i, wgt) in s0.taps {
                d_mips[info.level0][i] += g0 * wgt;
            }
            for (i, wgt) in s1.taps {
                d_mips[info.level1][i] += g1 * wgt;
            }
            // Level interpolation: level = rough * scale(NoV) * (L - 1).
            if !info.level_clamped && info.level1 != info.level0 {
                let d_level = d_l_spec.dot(s1.value - s0.value);
                d_rough += d_level * info.level_scale * (filtered.mips.len() - 1) as f64;
                if !info.no_v_clamped {
                    let d_no_v_level = d_level
                        * info.rough
                        * (filtered.mips.len() - 1) as f64
                        * (-GRAZING_LEVEL_WIDENING);
                    d_normal += d_no_v_level * info.wo;
                }
            }
            // Through the normalized dominant direction.
            let d_dom = s0.dir_grad(g0) + s1.dir_grad(g1);
            let raw_len = info.dom_raw.length().max(1e-9);
            let d_raw = (d_dom - info.dom * d_dom.dot(info.dom)) / raw_len;
            // dom_raw = n (1 - f) + refl f.
            let d_refl = d_raw * info.dom_factor;
            d_normal += d_raw * (1.0 - info.dom_factor);
            d_rough += d_raw.dot(info.refl - info.normal) * info.dom_factor_grad;
            // refl = 2 (n.wo) n - wo.
            d_normal += 2.0 * d_refl.dot(info.normal) * info.wo
                + 2.0 * info.normal.dot(info.wo) * d_refl;

            // Un-normalize the premultiplied attributes: mean = P / A.
            let inv_a = 1.0 / coverage;
            grads.albedo.data[pix] += d_albedo * inv_a;
            grads.roughness.data[pix] += d_rough * inv_a;
            grads.metallic.data[pix] += d_metal * inv_a;
            grads.normal.data[pix] += d_normal;
            d_alpha += -(d_albedo.dot(info.albedo) + d_rough * info.rough
                + d_metal * info.metal)
                * inv_a;
            grads.alpha.data[pix] += d_alpha;
        }
    }

    // Pull prefiltered-texel gradients back to the base radiance.
    let pulled = filtered.operator.apply_transpose(&d_mips, &d_irr);
    for (dst, src) in d_base.iter_mut().zip(pulled) {
        *dst += src;
    }
    Ok((grads, d_base))
}

/// Convenience used by oracle tests: shade an isolated surface point.
pub fn shade_point_split_sum(
    env: &EnvironmentLight,
    albedo: DVec3,
    roughness: f64,
    metallic: f64,
    normal: DVec3,
    wo: DVec3,
    form: SpecularForm,
) -> Result<DVec3> {
    let filtered = env.filtered()?;
    let no_v = normal.dot(wo).clamp(1e-4, 1.0);
    let e_irr = filtered.irradiance.sample(normal);
    let c_diff = albedo * (1.0 - metallic) / std::f64::consts::PI * e_irr;
    let refl = 2.0 * normal.dot(wo) * normal - wo;
    let (dom_f, _) = dominant_factor(roughness);
    let dom = {
        let raw = normal + (refl - normal) * dom_f;
        if raw.length() > 1e-9 {
            raw.normalize()
        } else {
            refl
        }
    };
    let levels = filtered.mips.len();
    let scale = 1.0 + GRAZING_LEVEL_WIDENING * (1.0 - no_v);
    let level_f = (roughness * scale * (levels - 1) as f64).clamp(0.0, (levels - 1) as f64);
    let l0 = (level_f.floor() as usize).min(levels - 1);
    let l1 = (l0 + 1).min(levels - 1);
    let fl = level_f - l0 as f64;
    let l_spec = filtered.mips[l0].sample(dom) * (1.0 - fl) + filtered.mips[l1].sample(dom) * fl;
    let (f1, f2) = filtered.dfg.sample(no_v, roughness);
    let f0 = DVec3::splat(0.04) * (1.0 - metallic) + albedo * metallic;
    let c_spec = match form {
        SpecularForm::Standard => l_spec * (f0 * f1 + DVec3::splat(f2)),
        SpecularForm::Printed => l_spec * f0 * f1 + DVec3::splat(f2),
    };
    Ok(c_diff + c_spec)
}

/// Helper for sampling the environment along a camera ray (used by the CLI
/// for background composition in inspection renders).
pub fn env_background(env: &EnvironmentLight, cam: &Camera, x: usize, y: usize) -> DVec3 {
    let dir_world = cam.rotation.transpose() * cam.ray_dir_camera(x as f64 + 0.5, y as f64 + 0.5);
    env.base.sample(dir_world)
}
