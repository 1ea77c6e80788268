//! SSIM with an 11x11 Gaussian window (sigma 1.5) and a hand-written
//! adjoint.
//!
//! The window is renormalized over its in-bounds support at image borders,
//! which keeps SSIM(x, x) = 1 exactly everywhere and lets the metric run on
//! images smaller than the window.

use crate::grid::{Grid, ScalarGrid};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn window_weights() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c) * (i as f64 - c)) / (2.0 * SIGMA * SIGMA)).exp();
        total += *v;
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Separable Gaussian blur with border renormalization.
fn blur(img: &ScalarGrid) -> ScalarGrid {
    let w = window_weights();
    let half = WINDOW / 2;
    let (width, height) = (img.width, img.height);
    let mut horizontal = Grid::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let xi = x as isize + k as isize - half as isize;
                if xi >= 0 && (xi as usize) < width {
                    acc += wk * img.get(xi as usize, y);
                    norm += wk;
                }
            }
            horizontal.set(x, y, acc / norm);
        }
    }
    let mut out = Grid::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let yi = y as isize + k as isize - half as isize;
                if yi >= 0 && (yi as usize) < height {
                    acc += wk * horizontal.get(x, yi as usize);
                    norm += wk;
                }
            }
            out.set(x, y, acc / norm);
        }
    }
    out
}

/// Transpose of [`blur`] (exact adjoint of the renormalized convolution).
fn blur_transpose(upstream: &ScalarGrid) -> ScalarGrid {
    let w = window_weights();
    let half = WINDOW / 2;
    let (width, height) = (upstream.width, upstream.height);
    // Transpose of the vertical pass.
    let mut vertical: ScalarGrid = Grid::new(width, height);
    for y in 0..height {
        let mut norm = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            let yi = y as isize + k as isize - half as isize;
            if yi >= 0 && (yi as usize) < height {
                norm += wk;
            }
        }
        for x in 0..width {
            let g = upstream.get(x, y) / norm;
            for (k, &wk) in w.iter().enumerate() {
                let yi = y as isize + k as isize - half as isize;
                if yi >= 0 && (yi as usize) < height {
                    let i = vertical.idx(x, yi as usize);
                    vertical.data[i] += wk * g;
                }
            }
        }
    }
    // Transpose of the horizontal pass.
    let mut out = Grid::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let mut norm = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let xi = x as isize + k as isize - half as isize;
                if xi >= 0 && (xi as usize) < width {
                    norm += wk;
                }
            }
            let g = vertical.get(x, y) / norm;
            for (k, &wk) in w.iter().enumerate() {
                let xi = x as isize + k as isize - half as isize;
                if xi >= 0 && (xi as usize) < width {
                    let i = out.idx(xi as usize, y);
                    out.data[i] += wk * g;
                }
            }
        }
    }
    out
}

fn hadamard(a: &ScalarGrid, b: &ScalarGrid) -> ScalarGrid {
    Grid {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

/// Single-channel SSIM value.
pub fn ssim_channel(x: &ScalarGrid, y: &ScalarGrid) -> f64 {
    ssim_channel_with_grad(x, y, None).0
}

/// SSIM value, optionally accumulating `d(mean SSIM)/dx * upstream` into the
/// provided gradient buffer (the derivative is taken with respect to the
/// first image).
pub fn ssim_channel_with_grad(
    x: &ScalarGrid,
    y: &ScalarGrid,
    grad: Option<(&mut ScalarGrid, f64)>,
) -> (f64, ()) {
    let n = (x.width * x.height) as f64;
    let mu_x = blur(x);
    let mu_y = blur(y);
    let xx = blur(&hadamard(x, x));
    let yy = blur(&hadamard(y, y));
    let xy = blur(&hadamard(x, y));

    let mut value = 0.0;
    let len = x.data.len();
    let mut p_mu = Grid::new(x.width, x.height);
    let mut p_sxx = Grid::new(x.width, x.height);
    let mut p_sxy = Grid::new(x.width, x.height);
    for i in 0..len {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let sxx = xx.data[i] - mx * mx;
        let syy = yy.data[i] - my * my;
        let sxy = xy.data[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * sxy + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = sxx + syy + C2;
        value += a1 * a2 / (b1 * b2);
        if grad.is_some() {
            let d_mu = (2.0 * my * a2 * b1 - 2.0 * mx * a1 * a2) / (b1 * b1 * b2);
            let d_sxx = -a1 * a2 / (b1 * b2 * b2);
            let d_sxy = 2.0 * a1 / (b1 * b2);
            p_mu.data[i] = d_mu / n;
            p_sxx.data[i] = d_sxx / n;
            p_sxy.data[i] = d_sxy / n;
        }
    }
    value /= n;

    if let Some((out, upstream)) = grad {
        // dL/dx = C^T(p_mu - 2 mu_x p_sxx - mu_y p_sxy)
        //         + 2 x . C^T(p_sxx) + y . C^T(p_sxy)
        let mut inner = Grid::new(x.width, x.height);
        for i in 0..len {
            inner.data[i] =
                p_mu.data[i] - 2.0 * mu_x.data[i] * p_sxx.data[i] - mu_y.data[i] * p_sxy.data[i];
        }
        let t_inner = blur_transpose(&inner);
        let t_sxx = blur_transpose(&p_sxx);
        let t_sxy = blur_transpose(&p_sxy);
        for i in 0..len {
            out.data[i] += upstream
                * (t_inner.data[i] + 2.0 * x.data[i] * t_sxx.data[i] + y.data[i] * t_sxy.data[i]);
        }
    }
    (value, ())
}
