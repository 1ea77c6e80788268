//! Shared numeric helpers: quaternion frames with analytic derivatives,
//! squashing maps, and finite-difference utilities used by the gradient
//! oracles.

use glam::{DMat3, DQuat, DVec3};

/// Rotation matrix from a (possibly non-unit) quaternion.
///
/// The quaternion is normalized internally, so the map is scale-invariant and
/// stays well-defined while an optimizer perturbs raw components. Columns are
/// the rotated basis vectors: `col0 = t_u`, `col1 = t_v`, `col2 = n`.
pub fn quat_to_mat3(q: DQuat) -> DMat3 {
    let n = (q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w).sqrt();
    let (x, y, z, w) = (q.x / n, q.y / n, q.z / n, q.w / n);
    DMat3::from_cols(
        DVec3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y + z * w),
            2.0 * (x * z - y * w),
        ),
        DVec3::new(
            2.0 * (x * y - z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z + x * w),
        ),
        DVec3::new(
            2.0 * (x * z + y * w),
            2.0 * (y * z - x * w),
            1.0 - 2.0 * (x * x + y * y),
        ),
    )
}

/// Partial derivatives of [`quat_to_mat3`] with respect to the four raw
/// quaternion components (x, y, z, w), normalization included.
pub fn quat_to_mat3_grad(q: DQuat) -> [DMat3; 4] {
    let norm = (q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w).sqrt();
    let (x, y, z, w) = (q.x / norm, q.y / norm, q.z / norm, q.w / norm);

    // Derivatives of the polynomial map at the normalized quaternion.
    let dx = DMat3::from_cols(
        DVec3::new(0.0, 2.0 * y, 2.0 * z),
        DVec3::new(2.0 * y, -4.0 * x, 2.0 * w),
        DVec3::new(2.0 * z, -2.0 * w, -4.0 * x),
    );
    let dy = DMat3::from_cols(
        DVec3::new(-4.0 * y, 2.0 * x, -2.0 * w),
        DVec3::new(2.0 * x, 0.0, 2.0 * z),
        DVec3::new(2.0 * w, 2.0 * z, -4.0 * y),
    );
    let dz = DMat3::from_cols(
        DVec3::new(-4.0 * z, 2.0 * w, 2.0 * x),
        DVec3::new(-2.0 * w, -4.0 * z, 2.0 * y),
        DVec3::new(2.0 * x, 2.0 * y, 0.0),
    );
    let dw = DMat3::from_cols(
        DVec3::new(0.0, 2.0 * z, -2.0 * y),
        DVec3::new(-2.0 * z, 0.0, 2.0 * x),
        DVec3::new(2.0 * y, -2.0 * x, 0.0),
    );

    // Chain through q_hat = q / |q|: d q_hat_m / d q_k = (delta_mk - qh_m qh_k) / |q|.
    let qh = [x, y, z, w];
    let d_hat = [dx, dy, dz, dw];
    let mut out = [DMat3::ZERO; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = DMat3::ZERO;
        for (m, dm) in d_hat.iter().enumerate() {
            let jac = (if m == k { 1.0 } else { 0.0 } - qh[m] * qh[k]) / norm;
            acc += *dm * jac;
        }
        *slot = acc;
    }
    out
}

/// Frobenius inner product of two 3x3 matrices.
pub fn mat3_dot(a: &DMat3, b: &DMat3) -> f64 {
    a.x_axis.dot(b.x_axis) + a.y_axis.dot(b.y_axis) + a.z_axis.dot(b.z_axis)
}

/// Logistic squashing map used to keep PBR attributes in (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Inverse of [`sigmoid`]; the argument is clamped into (0, 1) first so that
/// boundary initialization values stay representable.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-3, 1.0 - 1e-3);
    (p / (1.0 - p)).ln()
}

/// Mirror `v` about the normal `n`: both unit, result unit.
pub fn reflect(v: DVec3, n: DVec3) -> DVec3 {
    2.0 * n.dot(v) * n - v
}

/// Deterministic right-handed tangent frame `(t, b)` for a unit normal.
pub fn orthonormal_basis(n: DVec3) -> (DVec3, DVec3) {
    let helper = if n.z.abs() < 0.9 { DVec3::Z } else { DVec3::X };
    let t = helper.cross(n).normalize();
    let b = n.cross(t);
    (t, b)
}

/// Quaternion whose rotation maps local +z onto `normal` with a deterministic
/// in-plane frame, canonicalized to w >= 0.
pub fn quat_from_normal(normal: DVec3) -> DQuat {
    let (t, b) = orthonormal_basis(normal);
    let m = DMat3::from_cols(t, b, normal);
    let q = DQuat::from_mat3(&m).normalize();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// Relative error with an absolute floor, for gradient checks.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Central finite difference of a scalar function.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
