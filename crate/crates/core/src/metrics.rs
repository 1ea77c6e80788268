//! Image quality metrics and the gamma encoding shared by losses and
//! evaluation.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::grid::{ColorGrid, Grid, ScalarGrid};
use crate::loss::ssim_color;

/// Gamma-2.2 encode a linear HDR image and clamp to [0, 1].
pub fn encode_gamma22(hdr: &ColorGrid) -> ColorGrid {
    Grid {
        width: hdr.width,
        height: hdr.height,
        data: hdr
            .data
            .iter()
            .map(|c| {
                DVec3::new(
                    c.x.max(0.0).powf(1.0 / 2.2).min(1.0),
                    c.y.max(0.0).powf(1.0 / 2.2).min(1.0),
                    c.z.max(0.0).powf(1.0 / 2.2).min(1.0),
                )
            })
            .collect(),
    }
}

/// Adjoint of [`encode_gamma22`]. The [0, 1] clamp is treated as a range
/// guard rather than part of the objective: over-bright pixels keep the
/// power-law slope (straight-through) so saturated-wrong regions still
/// receive color gradients; the slope is floored near zero for stability.
pub fn encode_gamma22_grad(hdr: &ColorGrid, upstream: &ColorGrid) -> ColorGrid {
    let slope = |x: f64, up: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        up * (1.0 / 2.2) * x.clamp(1e-6, 1.0).powf(1.0 / 2.2 - 1.0)
    };
    Grid {
        width: hdr.width,
        height: hdr.height,
        data: hdr
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(c, u)| DVec3::new(slope(c.x, u.x), slope(c.y, u.y), slope(c.z, u.z)))
            .collect(),
    }
}

/// Peak signal-to-noise ratio in dB for images in [0, 1]; the MSE runs over
/// mask-selected pixels (mask > 0.5) when a mask is given.
pub fn metric_psnr(render: &ColorGrid, gt: &ColorGrid, mask: Option<&ScalarGrid>) -> Result<f64> {
    if !render.same_shape(gt) {
        return Err(Error::DimensionMismatch(
            render.width,
            render.height,
            gt.width,
            gt.height,
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..render.data.len() {
        if let Some(m) = mask {
            if m.data[i] <= 0.5 {
                continue;
            }
        }
        let d = render.data[i] - gt.data[i];
        total += d.length_squared();
        count += 3;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = total / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Channel-averaged SSIM (same window and constants as the color loss).
pub fn metric_ssim(render: &ColorGrid, gt: &ColorGrid) -> Result<f64> {
    if !render.same_shape(gt) {
        return Err(Error::DimensionMismatch(
            render.width,
            render.height,
            gt.width,
            gt.height,
        ));
    }
    Ok(ssim_color(render, gt))
}

/// Mean angular error between unit normal maps, in degrees, over mask-valid
/// pixels.
pub fn metric_normal_mae(
    n_render: &Grid<DVec3>,
    n_gt: &Grid<DVec3>,
    mask: &ScalarGrid,
) -> Result<f64> {
    if !n_render.same_shape(n_gt) || !n_render.same_shape(mask) {
        return Err(Error::DimensionMismatch(
            n_render.width,
            n_render.height,
            n_gt.width,
            n_gt.height,
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n_render.data.len() {
        if mask.data[i] <= 0.5 {
            continue;
        }
        let a = n_render.data[i];
        let b = n_gt.data[i];
        if a.length_squared() < 1e-12 || b.length_squared() < 1e-12 {
            continue;
        }
        total += a
            .normalize()
            .dot(b.normalize())
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

/// Intersection-over-union of two masks thresholded at 0.5.
pub fn mask_iou(a: &ScalarGrid, b: &ScalarGrid) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..a.data.len() {
        let x = a.data[i] > 0.5;
        let y = b.data[i] > 0.5;
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-channel least-squares scale of `render` against `reference` over
/// masked pixels: the scalar k minimizing |k*render - reference|^2.
pub fn least_squares_scale(
    render: &ColorGrid,
    reference: &ColorGrid,
    mask: Option<&ScalarGrid>,
) -> DVec3 {
    let mut num = DVec3::ZERO;
    let mut den = DVec3::ZERO;
    for i in 0..render.data.len() {
        if let Some(m) = mask {
            if m.data[i] <= 0.5 {
                continue;
            }
        }
        num += render.data[i] * reference.data[i];
        den += render.data[i] * render.data[i];
    }
    DVec3::new(
        if den.x > 1e-12 { num.x / den.x } else { 1.0 },
        if den.y > 1e-12 { num.y / den.y } else { 1.0 },
        if den.z > 1e-12 { num.z / den.z } else { 1.0 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn psnr_of_known_mse() {
        // Constant difference 0.1 in every channel: MSE = 0.01 -> 20 dB.
        let a = Grid::filled(8, 8, DVec3::splat(0.5));
        let b = Grid::filled(8, 8, DVec3::splat(0.6));
        let psnr = metric_psnr(&a, &b, None).unwrap();
        assert!((psnr - 20.0).abs() < 1e-9, "{psnr}");
        assert_eq!(metric_psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_empty_mask_is_an_error() {
        let a = Grid::filled(4, 4, DVec3::ZERO);
        let mask = Grid::filled(4, 4, 0.0);
        assert!(matches!(
            metric_psnr(&a, &a, Some(&mask)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn normal_mae_examples() {
        let mask = Grid::filled(4, 4, 1.0);
        let up = Grid::filled(4, 4, DVec3::Z);
        assert_eq!(metric_normal_mae(&up, &up, &mask).unwrap(), 0.0);
        let right = Grid::filled(4, 4, DVec3::X);
        let mae = metric_normal_mae(&up, &right, &mask).unwrap();
        assert!((mae - 90.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_encode_grad_matches_finite_differences() {
        let mut rng = Rng::new(1);
        let hdr: ColorGrid = Grid {
            width: 4,
            height: 4,
            data: (0..16)
                .map(|_| DVec3::splat(rng.uniform_in(0.05, 0.9)))
                .collect(),
        };
        let up: ColorGrid = Grid {
            width: 4,
            height: 4,
            data: (0..16)
                .map(|_| DVec3::new(rng.normal(), rng.normal(), rng.normal()))
                .collect(),
        };
        let g = encode_gamma22_grad(&hdr, &up);
        let h = 1e-7;
        for i in 0..16 {
            let mut plus = hdr.clone();
            plus.data[i].x += h;
            let mut minus = hdr.clone();
            minus.data[i].x -= h;
            let f = |img: &ColorGrid| {
                encode_gamma22(img)
                    .data
                    .iter()
                    .zip(&up.data)
                    .map(|(a, b)| a.dot(*b))
                    .sum::<f64>()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!(
                crate::math::rel_error(g.data[i].x, fd) < 1e-4,
                "{} vs {fd}",
                g.data[i].x
            );
        }
    }

    #[test]
    fn least_squares_scale_recovers_a_known_factor() {
        let mut rng = Rng::new(2);
        let render: ColorGrid = Grid {
            width: 6,
            height: 6,
            data: (0..36)
                .map(|_| DVec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
                .collect(),
        };
        let reference = Grid {
            width: 6,
            height: 6,
            data: render.data.iter().map(|v| *v * DVec3::new(1.5, 0.7, 2.0)).collect(),
        };
        let k = least_squares_scale(&render, &reference, None);
        assert!((k - DVec3::new(1.5, 0.7, 2.0)).length() < 1e-9);
    }

    #[test]
    fn iou_of_disjoint_and_identical_masks() {
        let mut a: ScalarGrid = Grid::filled(4, 4, 0.0);
        let mut b: ScalarGrid = Grid::filled(4, 4, 0.0);
        for i in 0..8 {
            a.data[i] = 1.0;
        }
        for i in 8..16 {
            b.data[i] = 1.0;
        }
        assert_eq!(mask_iou(&a, &a), 1.0);
        assert_eq!(mask_iou(&a, &b), 0.0);
    }
}
