//! Flat-array Adam with bias correction.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

/// First/second moment buffers for one parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamBuf {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamBuf {
    pub fn new(len: usize) -> Self {
        AdamBuf {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuild the buffers after densify/prune: `keep[i]` gives the old slot
    /// feeding new slot `i` (`None` -> fresh entry with zero moments).
    /// `stride` is the number of scalars per primitive in this group.
    pub fn remap(&mut self, keep: &[Option<usize>], stride: usize) {
        let mut m = vec![0.0; keep.len() * stride];
        let mut v = vec![0.0; keep.len() * stride];
        for (new_i, old) in keep.iter().enumerate() {
            if let Some(old_i) = old {
                for k in 0..stride {
                    m[new_i * stride + k] = self.m[old_i * stride + k];
                    v[new_i * stride + k] = self.v[old_i * stride + k];
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// One bias-corrected Adam step over a flat parameter slice. `t` is the
/// 1-based step count for this group.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    buf: &mut AdamBuf,
    t: u64,
    lr: f64,
    ap: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != buf.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {} grads {} moments {}",
            params.len(),
            grads.len(),
            buf.m.len()
        )));
    }
    let bc1 = 1.0 - ap.beta1.powi(t as i32);
    let bc2 = 1.0 - ap.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        buf.m[i] = ap.beta1 * buf.m[i] + (1.0 - ap.beta1) * g;
        buf.v[i] = ap.beta2 * buf.v[i] + (1.0 - ap.beta2) * g * g;
        let m_hat = buf.m[i] / bc1;
        let v_hat = buf.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ap.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut buf = AdamBuf::new(3);
        adam_update(&mut p, &g, &mut buf, 1, 0.1, &AdamParams::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_a_signed_unit_step() {
        // With zero moments, bias correction makes the first update
        // lr * g / (|g| + eps) ~= lr * sign(g).
        let mut p = vec![0.0, 0.0];
        let g = vec![3.0, -0.002];
        let mut buf = AdamBuf::new(2);
        adam_update(&mut p, &g, &mut buf, 1, 0.01, &AdamParams::default()).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9, "{}", p[0]);
        assert!((p[1] - 0.01).abs() < 1e-9, "{}", p[1]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = vec![0.5, -0.25, 0.125];
            let mut buf = AdamBuf::new(3);
            for t in 1..=50u64 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + (t as f64).sin()).collect();
                adam_update(&mut p, &g, &mut buf, t, 0.01, &AdamParams::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 3];
        let g = vec![0.0; 2];
        let mut buf = AdamBuf::new(3);
        assert!(adam_update(&mut p, &g, &mut buf, 1, 0.1, &AdamParams::default()).is_err());
    }

    #[test]
    fn remap_keeps_and_zeroes_entries() {
        let mut buf = AdamBuf::new(6); // 3 prims, stride 2
        for i in 0..6 {
            buf.m[i] = i as f64;
            buf.v[i] = 10.0 + i as f64;
        }
        buf.remap(&[Some(2), None, Some(0)], 2);
        assert_eq!(buf.m, vec![4.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(buf.v, vec![14.0, 15.0, 0.0, 0.0, 10.0, 11.0]);
    }
}
