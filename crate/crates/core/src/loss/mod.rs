//! Training losses and the weighted total objective.
//!
//! Every loss comes with the analytic gradient the trainer backpropagates;
//! gradients are verified against finite differences in the test suites.

pub mod ssim;

use glam::DVec3;

use crate::error::{Error, Result};
use crate::grid::{ColorGrid, Grid, ScalarGrid};
use crate::raster::GBuffer;

/// Loss weights; the defaults are the training configuration's values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the color term (implicit 1 in the total objective).
    pub color: f64,
    pub normal: f64,
    pub distortion: f64,
    pub gamma: f64,
    pub projection: f64,
    pub smoothness: f64,
    pub mask: f64,
    /// L1-vs-SSIM mix inside the color loss.
    pub ssim_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            color: 1.0,
            normal: 0.2,
            distortion: 2000.0,
            gamma: 1.0,
            projection: 10.0,
            smoothness: 0.05,
            mask: 0.2,
            ssim_mix: 0.8,
        }
    }
}

/// Schedule gates applied to the gated terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossGates {
    pub median_active: bool,
    pub projection_active: bool,
}

/// Raw per-term values for one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub color: f64,
    pub normal: f64,
    pub distortion: f64,
    pub median: f64,
    pub projection: f64,
    pub smoothness: f64,
    pub mask: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub terms: LossTerms,
    pub gates: LossGates,
    /// Effective weight of each term after gating, in the same order as the
    /// CSV schema: color, normal, distortion, median, projection,
    /// smoothness, mask.
    pub effective_weights: [f64; 7],
    pub total: f64,
}

/// Weighted total objective with schedule gates. Gated-off terms contribute
/// zero regardless of their raw value.
pub fn total_loss(
    terms: &LossTerms,
    weights: &LossWeights,
    gates: &LossGates,
    iteration: u64,
) -> Result<LossReport> {
    let named = [
        ("color", terms.color),
        ("normal", terms.normal),
        ("distortion", terms.distortion),
        ("median", terms.median),
        ("projection", terms.projection),
        ("smoothness", terms.smoothness),
        ("mask", terms.mask),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: name.into(),
                iteration,
            });
        }
    }
    let effective_weights = [
        weights.color,
        weights.normal,
        weights.distortion,
        if gates.median_active { weights.gamma } else { 0.0 },
        if gates.projection_active {
            weights.projection
        } else {
            0.0
        },
        weights.smoothness,
        weights.mask,
    ];
    let total = named
        .iter()
        .zip(effective_weights)
        .map(|((_, v), w)| w * v)
        .sum();
    Ok(LossReport {
        terms: *terms,
        gates: *gates,
        effective_weights,
        total,
    })
}

/// L1/SSIM mixed color loss: `mix * mean|r - g| + (1 - mix) * (1 - SSIM)`,
/// SSIM averaged over the three channels.
pub fn color_loss(render: &ColorGrid, gt: &ColorGrid, mix: f64) -> Result<f64> {
    if !render.same_shape(gt) {
        return Err(Error::DimensionMismatch(
            render.width,
            render.height,
            gt.width,
            gt.height,
        ));
    }
    let n = (render.data.len() * 3) as f64;
    let l1: f64 = render
        .data
        .iter()
        .zip(&gt.data)
        .map(|(r, g)| (*r - *g).abs().element_sum())
        .sum::<f64>()
        / n;
    let ssim = ssim_color(render, gt);
    Ok(mix * l1 + (1.0 - mix) * (1.0 - ssim))
}

/// Channel-averaged SSIM of two color images.
pub fn ssim_color(a: &ColorGrid, b: &ColorGrid) -> f64 {
    let mut total = 0.0;
    for ch in 0..3 {
        let xa = channel(a, ch);
        let xb = channel(b, ch);
        total += ssim::ssim_channel(&xa, &xb);
    }
    total / 3.0
}

/// Gradient of [`color_loss`] with respect to the render.
pub fn color_loss_grad(render: &ColorGrid, gt: &ColorGrid, mix: f64, upstream: f64) -> ColorGrid {
    let n = (render.data.len() * 3) as f64;
    let mut out: ColorGrid = Grid::new(render.width, render.height);
    for i in 0..render.data.len() {
        let d = render.data[i] - gt.data[i];
        out.data[i] = DVec3::new(subgrad_sign(d.x), subgrad_sign(d.y), subgrad_sign(d.z))
            * (mix * upstream / n);
    }
    // d/d render of (1 - mix) * (1 - ssim) = -(1 - mix)/3 * d ssim per channel.
    for ch in 0..3 {
        let xa = channel(render, ch);
        let xb = channel(gt, ch);
        let mut g = Grid::new(render.width, render.height);
        ssim::ssim_channel_with_grad(&xa, &xb, Some((&mut g, 1.0)));
        for i in 0..out.data.len() {
            out.data[i][ch] += -(1.0 - mix) / 3.0 * upstream * g.data[i];
        }
    }
    out
}

fn subgrad_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn channel(img: &ColorGrid, ch: usize) -> ScalarGrid {
    Grid {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|v| v[ch]).collect(),
    }
}

/// Mean squared difference between the depth-derived and blended normal maps
/// over valid pixels. Returns the loss and a no-valid-pixels warning flag.
pub fn normal_loss(
    n_from_depth: &Grid<DVec3>,
    n_blended: &Grid<DVec3>,
    valid: &Grid<bool>,
) -> Result<(f64, bool)> {
    if !n_from_depth.same_shape(n_blended) || !n_from_depth.same_shape(valid) {
        return Err(Error::DimensionMismatch(
            n_from_depth.width,
            n_from_depth.height,
            n_blended.width,
            n_blended.height,
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..valid.data.len() {
        if valid.data[i] {
            total += (n_from_depth.data[i] - n_blended.data[i]).length_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, true));
    }
    Ok((total / count as f64, false))
}

/// Gradients of [`normal_loss`] with respect to both maps.
pub fn normal_loss_grad(
    n_from_depth: &Grid<DVec3>,
    n_blended: &Grid<DVec3>,
    valid: &Grid<bool>,
    upstream: f64,
) -> (Grid<DVec3>, Grid<DVec3>) {
    let count = valid.data.iter().filter(|v| **v).count().max(1) as f64;
    let mut g_hat = Grid::new(n_from_depth.width, n_from_depth.height);
    let mut g_blend = Grid::new(n_from_depth.width, n_from_depth.height);
    for i in 0..valid.data.len() {
        if valid.data[i] {
            let d = n_from_depth.data[i] - n_blended.data[i];
            g_hat.data[i] = 2.0 * d * upstream / count;
            g_blend.data[i] = -2.0 * d * upstream / count;
        }
    }
    (g_hat, g_blend)
}

/// Coverage threshold defining which pixels enter the distortion mean.
pub const DISTORTION_COVERAGE: f64 = 1e-4;

/// Mean per-pixel pairwise depth distortion over covered pixels. The pairwise
/// sums themselves are accumulated by the rasterizer forward pass; this op
/// reduces them and exposes the per-pixel gradient hook.
pub fn distortion_loss(gbuffer: &GBuffer) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..gbuffer.distortion.data.len() {
        if gbuffer.alpha.data[i] > DISTORTION_COVERAGE {
            total += gbuffer.distortion.data[i];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Upstream gradient map for the rasterizer's distortion channel.
pub fn distortion_loss_grad(gbuffer: &GBuffer, upstream: f64) -> ScalarGrid {
    let count = gbuffer
        .alpha
        .data
        .iter()
        .filter(|a| **a > DISTORTION_COVERAGE)
        .count()
        .max(1) as f64;
    let mut out = Grid::new(gbuffer.width, gbuffer.height);
    for i in 0..out.data.len() {
        if gbuffer.alpha.data[i] > DISTORTION_COVERAGE {
            out.data[i] = upstream / count;
        }
    }
    out
}

/// Edge-aware smoothness of the blended attribute maps: forward-difference
/// gradient magnitude weighted by `exp(-|grad C_gt|)`, averaged over valid
/// pixels and summed over the three attributes. Differences that cross an
/// invalid pixel or the image border are zero(replicate border).
pub fn smoothness_loss(
    albedo: &ColorGrid,
    roughness: &ScalarGrid,
    metallic: &ScalarGrid,
    gt: &ColorGrid,
    valid: &Grid<bool>,
) -> f64 {
    let (value, _) = smoothness_inner(albedo, roughness, metallic, gt, valid, None);
    value
}

/// Gradients of [`smoothness_loss`] with respect to the three attribute maps.
pub fn smoothness_loss_grad(
    albedo: &ColorGrid,
    roughness: &ScalarGrid,
    metallic: &ScalarGrid,
    gt: &ColorGrid,
    valid: &Grid<bool>,
    upstream: f64,
) -> (ColorGrid, ScalarGrid, ScalarGrid) {
    let mut g_albedo: ColorGrid = Grid::new(albedo.width, albedo.height);
    let mut g_rough: ScalarGrid = Grid::new(albedo.width, albedo.height);
    let mut g_metal: ScalarGrid = Grid::new(albedo.width, albedo.height);
    smoothness_inner(
        albedo,
        roughness,
        metallic,
        gt,
        valid,
        Some((&mut g_albedo, &mut g_rough, &mut g_metal, upstream)),
    );
    (g_albedo, g_rough, g_metal)
}

type SmoothGradSinks<'a> = (
    &'a mut ColorGrid,
    &'a mut ScalarGrid,
    &'a mut ScalarGrid,
    f64,
);

fn smoothness_inner(
    albedo: &ColorGrid,
    roughness: &ScalarGrid,
    metallic: &ScalarGrid,
    gt: &ColorGrid,
    valid: &Grid<bool>,
    mut grads: Option<SmoothGradSinks<'_>>,
) -> (f64, ()) {
    let (w, h) = (albedo.width, albedo.height);
    let count = valid.data.iter().filter(|v| **v).count().max(1) as f64;
    let mut total = 0.0;

    for y in 0..h {
        for x in 0..w {
            if !valid.get(x, y) {
                continue;
            }
            let xr = x + 1 < w && valid.get(x + 1, y);
            let yd = y + 1 < h && valid.get(x, y + 1);
            // Edge weight from the ground-truth image gradient.
            let gx = if x + 1 < w {
                gt.get(x + 1, y) - gt.get(x, y)
            } else {
                DVec3::ZERO
            };
            let gy = if y + 1 < h {
                gt.get(x, y + 1) - gt.get(x, y)
            } else {
                DVec3::ZERO
            };
            let weight = (-(gx.length_squared() + gy.length_squared()).sqrt()).exp();

            // Albedo (3 channels).
            let ax = if xr {
                albedo.get(x + 1, y) - albedo.get(x, y)
            } else {
                DVec3::ZERO
            };
            let ay = if yd {
                albedo.get(x, y + 1) - albedo.get(x, y)
            } else {
                DVec3::ZERO
            };
            let s_a = ax.length_squared() + ay.length_squared();
            if s_a > 0.0 {
                let norm = s_a.sqrt();
                total += norm * weight;
                if let Some((ga, _, _, up)) = &mut grads {
                    let scale = *up * weight / (norm * count);
                    if xr {
                        let i1 = ga.idx(x + 1, y);
                        ga.data[i1] += ax * scale;
                        let i0 = ga.idx(x, y);
                        ga.data[i0] -= ax * scale;
                    }
                    if yd {
                        let i1 = ga.idx(x, y + 1);
                        ga.data[i1] += ay * scale;
                        let i0 = ga.idx(x, y);
                        ga.data[i0] -= ay * scale;
                    }
                }
            }

            // Roughness and metallic (scalar maps).
            for which in 0..2 {
                let map: &ScalarGrid = if which == 0 { roughness } else { metallic };
                let dx = if xr { map.get(x + 1, y) - map.get(x, y) } else { 0.0 };
                let dy = if yd { map.get(x, y + 1) - map.get(x, y) } else { 0.0 };
                let s = dx * dx + dy * dy;
                if s > 0.0 {
                    let norm = s.sqrt();
                    total += norm * weight;
                    if let Some((_, gr, gm, up)) = &mut grads {
                        let sink: &mut ScalarGrid = if which == 0 { gr } else { gm };
                        let scale = *up * weight / (norm * count);
                        if xr {
                            let i1 = sink.idx(x + 1, y);
                            sink.data[i1] += dx * scale;
                            let i0 = sink.idx(x, y);
                            sink.data[i0] -= dx * scale;
                        }
                        if yd {
                            let i1 = sink.idx(x, y + 1);
                            sink.data[i1] += dy * scale;
                            let i0 = sink.idx(x, y);
                            sink.data[i0] -= dy * scale;
                        }
                    }
                }
            }
        }
    }
    (total / count, ())
}

const BCE_CLAMP: f64 = 1e-6;

/// Mean binary cross-entropy between accumulated alpha and the ground-truth
/// mask; alpha is clamped into `[1e-6, 1 - 1e-6]`.
pub fn mask_loss(alpha: &ScalarGrid, gt_mask: &ScalarGrid) -> Result<f64> {
    if !alpha.same_shape(gt_mask) {
        return Err(Error::DimensionMismatch(
            alpha.width,
            alpha.height,
            gt_mask.width,
            gt_mask.height,
        ));
    }
    let n = alpha.data.len() as f64;
    let mut total = 0.0;
    for i in 0..alpha.data.len() {
        let a = alpha.data[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let m = gt_mask.data[i];
        total += -(m * a.ln() + (1.0 - m) * (1.0 - a).ln());
    }
    Ok(total / n)
}

/// Gradient of [`mask_loss`] with respect to the alpha map.
///
/// The clamp is a logarithm guard, not part of the objective: saturated
/// pixels keep the boundary gradient (straight-through) so confidently
/// wrong coverage still receives its full corrective pull.
pub fn mask_loss_grad(alpha: &ScalarGrid, gt_mask: &ScalarGrid, upstream: f64) -> ScalarGrid {
    let n = alpha.data.len() as f64;
    let mut out = Grid::new(alpha.width, alpha.height);
    for i in 0..alpha.data.len() {
        let a = alpha.data[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let m = gt_mask.data[i];
        out.data[i] = upstream * (a - m) / (a * (1.0 - a)) / n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_color(seed: u64, w: usize, h: usize) -> ColorGrid {
        let mut rng = Rng::new(seed);
        Grid {
            width: w,
            height: h,
            data: (0..w * h)
                .map(|_| DVec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
                .collect(),
        }
    }

    #[test]
    fn color_loss_zero_on_identical_images() {
        let img = random_color(1, 8, 8);
        let l = color_loss(&img, &img, 0.8).unwrap();
        assert!(l.abs() < 1e-9, "{l}");
    }

    #[test]
    fn color_loss_constant_images() {
        let render = Grid::filled(8, 8, DVec3::ONE);
        let gt = Grid::filled(8, 8, DVec3::ZERO);
        let l = color_loss(&render, &gt, 0.8).unwrap();
        // L1 part contributes exactly 0.8; SSIM of the constants is known.
        let s = (ssim::C1 * ssim::C2) / ((1.0 + ssim::C1) * ssim::C2);
        assert!((l - (0.8 + 0.2 * (1.0 - s))).abs() < 1e-12, "{l}");
    }

    #[test]
    fn color_loss_rejects_dimension_mismatch() {
        let a = random_color(1, 8, 8);
        let b = random_color(2, 8, 9);
        assert!(matches!(
            color_loss(&a, &b, 0.8),
            Err(Error::DimensionMismatch(..))
        ));
    }

    #[test]
    fn color_loss_grad_matches_finite_differences() {
        let render = random_color(3, 8, 8);
        let gt = random_color(4, 8, 8);
        let g = color_loss_grad(&render, &gt, 0.8, 1.0);
        let h = 1e-6;
        for i in (0..64).step_by(7) {
            let mut plus = render.clone();
            plus.data[i].y += h;
            let mut minus = render.clone();
            minus.data[i].y -= h;
            let fd = (color_loss(&plus, &gt, 0.8).unwrap()
                - color_loss(&minus, &gt, 0.8).unwrap())
                / (2.0 * h);
            assert!(
                crate::math::rel_error(g.data[i].y, fd) < 1e-3,
                "pixel {i}: {} vs {fd}",
                g.data[i].y
            );
        }
    }

    fn normal_maps(seed: u64) -> (Grid<DVec3>, Grid<DVec3>, Grid<bool>) {
        let mut rng = Rng::new(seed);
        let grid = |r: &mut Rng| Grid {
            width: 6,
            height: 6,
            data: (0..36)
                .map(|_| DVec3::new(r.normal(), r.normal(), r.normal()).normalize())
                .collect(),
        };
        let a = grid(&mut rng);
        let b = grid(&mut rng);
        let valid = Grid {
            width: 6,
            height: 6,
            data: (0..36).map(|i| i % 3 != 0).collect(),
        };
        (a, b, valid)
    }

    #[test]
    fn normal_loss_examples() {
        let (a, _, valid) = normal_maps(1);
        assert_eq!(normal_loss(&a, &a, &valid).unwrap(), (0.0, false));

        let up = Grid::filled(4, 4, DVec3::Z);
        let down = Grid::filled(4, 4, DVec3::NEG_Z);
        let all = Grid::filled(4, 4, true);
        let (l, _) = normal_loss(&up, &down, &all).unwrap();
        assert!((l - 4.0).abs() < 1e-12);

        let right = Grid::filled(4, 4, DVec3::X);
        let (l, _) = normal_loss(&up, &right, &all).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normal_loss_empty_mask_warns() {
        let (a, b, _) = normal_maps(2);
        let none = Grid::filled(6, 6, false);
        assert_eq!(normal_loss(&a, &b, &none).unwrap(), (0.0, true));
    }

    #[test]
    fn normal_loss_grad_matches_finite_differences() {
        let (a, b, valid) = normal_maps(3);
        let (g_hat, g_blend) = normal_loss_grad(&a, &b, &valid, 1.0);
        let h = 1e-6;
        for i in (0..36).step_by(5) {
            let mut plus = b.clone();
            plus.data[i].x += h;
            let mut minus = b.clone();
            minus.data[i].x -= h;
            let fd = (normal_loss(&a, &plus, &valid).unwrap().0
                - normal_loss(&a, &minus, &valid).unwrap().0)
                / (2.0 * h);
            assert!(
                (g_blend.data[i].x - fd).abs() < 1e-6,
                "{} vs {fd}",
                g_blend.data[i].x
            );
            let mut plus = a.clone();
            plus.data[i].z += h;
            let mut minus = a.clone();
            minus.data[i].z -= h;
            let fd = (normal_loss(&plus, &b, &valid).unwrap().0
                - normal_loss(&minus, &b, &valid).unwrap().0)
                / (2.0 * h);
            assert!((g_hat.data[i].z - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn smoothness_zero_on_constant_maps() {
        let albedo = Grid::filled(8, 8, DVec3::splat(0.4));
        let rough = Grid::filled(8, 8, 0.5);
        let metal = Grid::filled(8, 8, 0.1);
        let gt = random_color(5, 8, 8);
        let valid = Grid::filled(8, 8, true);
        assert_eq!(smoothness_loss(&albedo, &rough, &metal, &gt, &valid), 0.0);
    }

    #[test]
    fn smoothness_downweights_strong_gt_edges() {
        // Same attribute edge; flat gt vs strong gt edge at the same place.
        let mut albedo: ColorGrid = Grid::filled(8, 8, DVec3::ZERO);
        for y in 0..8 {
            for x in 4..8 {
                albedo.set(x, y, DVec3::ONE);
            }
        }
        let rough = Grid::filled(8, 8, 0.0);
        let metal = Grid::filled(8, 8, 0.0);
        let valid = Grid::filled(8, 8, true);
        let flat_gt = Grid::filled(8, 8, DVec3::splat(0.5));
        let mut edge_gt: ColorGrid = Grid::filled(8, 8, DVec3::ZERO);
        for y in 0..8 {
            for x in 4..8 {
                edge_gt.set(x, y, DVec3::ONE);
            }
        }
        let on_flat = smoothness_loss(&albedo, &rough, &metal, &flat_gt, &valid);
        let on_edge = smoothness_loss(&albedo, &rough, &metal, &edge_gt, &valid);
        assert!(on_edge < on_flat, "{on_edge} vs {on_flat}");
    }

    #[test]
    fn smoothness_is_homogeneous_in_attribute_contrast() {
        let mut rng = Rng::new(9);
        let albedo = random_color(10, 8, 8);
        let rough: ScalarGrid = Grid {
            width: 8,
            height: 8,
            data: (0..64).map(|_| rng.uniform()).collect(),
        };
        let metal = Grid::filled(8, 8, 0.0);
        let gt = Grid::filled(8, 8, DVec3::splat(0.5));
        let valid = Grid::filled(8, 8, true);
        let base = smoothness_loss(&albedo, &rough, &metal, &gt, &valid);
        let doubled_albedo = Grid {
            width: 8,
            height: 8,
            data: albedo.data.iter().map(|v| *v * 2.0).collect(),
        };
        let doubled_rough = Grid {
            width: 8,
            height: 8,
            data: rough.data.iter().map(|v| *v * 2.0).collect(),
        };
        let doubled = smoothness_loss(&doubled_albedo, &doubled_rough, &metal, &gt, &valid);
        assert!((doubled - 2.0 * base).abs() < 1e-9, "{doubled} vs {base}");
    }

    #[test]
    fn smoothness_grad_matches_finite_differences() {
        let albedo = random_color(11, 6, 6);
        let mut rng = Rng::new(12);
        let rough: ScalarGrid = Grid {
            width: 6,
            height: 6,
            data: (0..36).map(|_| rng.uniform()).collect(),
        };
        let metal: ScalarGrid = Grid {
            width: 6,
            height: 6,
            data: (0..36).map(|_| rng.uniform()).collect(),
        };
        let gt = random_color(13, 6, 6);
        let valid = Grid {
            width: 6,
            height: 6,
            data: (0..36).map(|i| i % 5 != 0).collect(),
        };
        let (ga, gr, _) = smoothness_loss_grad(&albedo, &rough, &metal, &gt, &valid, 1.0);
        let h = 1e-7;
        for i in (0..36).step_by(4) {
            let mut plus = albedo.clone();
            plus.data[i].x += h;
            let mut minus = albedo.clone();
            minus.data[i].x -= h;
            let fd = (smoothness_loss(&plus, &rough, &metal, &gt, &valid)
                - smoothness_loss(&minus, &rough, &metal, &gt, &valid))
                / (2.0 * h);
            assert!(
                crate::math::rel_error(ga.data[i].x, fd) < 1e-3
                    || (ga.data[i].x.abs() < 1e-9 && fd.abs() < 1e-6),
                "albedo {i}: {} vs {fd}",
                ga.data[i].x
            );
            let mut plus = rough.clone();
            plus.data[i] += h;
            let mut minus = rough.clone();
            minus.data[i] -= h;
            let fd = (smoothness_loss(&albedo, &plus, &metal, &gt, &valid)
                - smoothness_loss(&albedo, &minus, &metal, &gt, &valid))
                / (2.0 * h);
            assert!(
                crate::math::rel_error(gr.data[i], fd) < 1e-3
                    || (gr.data[i].abs() < 1e-9 && fd.abs() < 1e-6),
                "rough {i}: {} vs {fd}",
                gr.data[i]
            );
        }
    }

    #[test]
    fn mask_loss_examples() {
        let eps = 1e-6;
        let a: ScalarGrid = Grid::filled(4, 4, eps);
        let m = Grid::filled(4, 4, 0.0);
        assert!(mask_loss(&a, &m).unwrap() < 1e-5);
        let a = Grid::filled(4, 4, 1.0 - eps);
        let m = Grid::filled(4, 4, 1.0);
        assert!(mask_loss(&a, &m).unwrap() < 1e-5);

        let a = Grid::filled(4, 4, 0.5);
        let mut rng = Rng::new(1);
        let m: ScalarGrid = Grid {
            width: 4,
            height: 4,
            data: (0..16).map(|_| rng.uniform()).collect(),
        };
        let l = mask_loss(&a, &m).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6, "{l}");
    }

    #[test]
    fn mask_loss_symmetric_under_complement() {
        let mut rng = Rng::new(2);
        let a: ScalarGrid = Grid {
            width: 5,
            height: 5,
            data: (0..25).map(|_| rng.uniform()).collect(),
        };
        let m: ScalarGrid = Grid {
            width: 5,
            height: 5,
            data: (0..25).map(|_| rng.uniform()).collect(),
        };
        let comp_a = Grid {
            width: 5,
            height: 5,
            data: a.data.iter().map(|v| 1.0 - v).collect(),
        };
        let comp_m = Grid {
            width: 5,
            height: 5,
            data: m.data.iter().map(|v| 1.0 - v).collect(),
        };
        let l1 = mask_loss(&a, &m).unwrap();
        let l2 = mask_loss(&comp_a, &comp_m).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn mask_loss_grad_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let a: ScalarGrid = Grid {
            width: 5,
            height: 5,
            data: (0..25).map(|_| rng.uniform_in(0.05, 0.95)).collect(),
        };
        let m: ScalarGrid = Grid {
            width: 5,
            height: 5,
            data: (0..25).map(|_| rng.uniform()).collect(),
        };
        let g = mask_loss_grad(&a, &m, 1.0);
        let h = 1e-7;
        for i in 0..25 {
            let mut plus = a.clone();
            plus.data[i] += h;
            let mut minus = a.clone();
            minus.data[i] -= h;
            let fd = (mask_loss(&plus, &m).unwrap() - mask_loss(&minus, &m).unwrap()) / (2.0 * h);
            assert!(crate::math::rel_error(g.data[i], fd) < 1e-5);
        }
    }

    #[test]
    fn total_loss_examples() {
        let weights = LossWeights::default();
        let gates = LossGates {
            median_active: true,
            projection_active: true,
        };
        let zero = LossTerms::default();
        assert_eq!(total_loss(&zero, &weights, &gates, 0).unwrap().total, 0.0);

        let mut dist_only = LossTerms::default();
        dist_only.distortion = 0.001;
        let r = total_loss(&dist_only, &weights, &gates, 0).unwrap();
        assert!((r.total - 2.0).abs() < 1e-12, "{}", r.total);

        // A gated-off term contributes nothing.
        let mut proj = LossTerms::default();
        proj.projection = 123.0;
        let off = LossGates {
            median_active: false,
            projection_active: false,
        };
        assert_eq!(total_loss(&proj, &weights, &off, 0).unwrap().total, 0.0);
    }

    #[test]
    fn total_loss_rejects_non_finite_terms() {
        let weights = LossWeights::default();
        let gates = LossGates::default();
        let mut bad = LossTerms::default();
        bad.smoothness = f64::NAN;
        match total_loss(&bad, &weights, &gates, 7) {
            Err(Error::NonFiniteLoss { term, iteration }) => {
                assert_eq!(term, "smoothness");
                assert_eq!(iteration, 7);
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn report_total_is_the_weighted_sum() {
        let mut rng = Rng::new(4);
        let weights = LossWeights::default();
        let gates = LossGates {
            median_active: true,
            projection_active: false,
        };
        let terms = LossTerms {
            color: rng.uniform(),
            normal: rng.uniform(),
            distortion: rng.uniform(),
            median: rng.uniform(),
            projection: rng.uniform(),
            smoothness: rng.uniform(),
            mask: rng.uniform(),
        };
        let r = total_loss(&terms, &weights, &gates, 0).unwrap();
        let by_hand = weights.color * terms.color
            + weights.normal * terms.normal
            + weights.distortion * terms.distortion
            + weights.gamma * terms.median
            + weights.smoothness * terms.smoothness
            + weights.mask * terms.mask;
        assert!((r.total - by_hand).abs() < 1e-6);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bce_is_symmetric_under_complement(seed in 0u64..5000) {
            let mut rng = crate::rng::Rng::new(seed);
            let a: ScalarGrid = Grid {
                width: 4,
                height: 4,
                data: (0..16).map(|_| rng.uniform()).collect(),
            };
            let m: ScalarGrid = Grid {
                width: 4,
                height: 4,
                data: (0..16).map(|_| rng.uniform()).collect(),
            };
            let comp = |g: &ScalarGrid| Grid {
                width: 4,
                height: 4,
                data: g.data.iter().map(|v| 1.0 - v).collect(),
            };
            let l1 = mask_loss(&a, &m).unwrap();
            let l2 = mask_loss(&comp(&a), &comp(&m)).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
        }

        #[test]
        fn ssim_bounded_and_exact_on_self(seed in 0u64..2000) {
            let mut rng = crate::rng::Rng::new(seed);
            let img: ColorGrid = Grid {
                width: 6,
                height: 6,
                data: (0..36)
                    .map(|_| DVec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
                    .collect(),
            };
            let other: ColorGrid = Grid {
                width: 6,
                height: 6,
                data: (0..36)
                    .map(|_| DVec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
                    .collect(),
            };
            let s_self = ssim_color(&img, &img);
            prop_assert!((s_self - 1.0).abs() < 1e-9);
            let s = ssim_color(&img, &other);
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
