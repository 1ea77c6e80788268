//! Environment prefiltering as a fixed linear operator.
//!
//! The GGX sample pattern around each output texel and the cosine quadrature
//! of the irradiance map do not depend on the radiance values, only on
//! directions. Building them once as explicit (sparse / dense) linear maps
//! lets the trainer re-prefilter a changing environment per step with a
//! cheap matrix-vector product, and route shading gradients back to the base
//! cubemap through the exact transpose.

use glam::DVec3;
use rayon::prelude::*;

use super::brdf::{ggx_alpha, sample_ggx_half};
use crate::cubemap::CubeMap;
use crate::math::orthonormal_basis;
use crate::rng::hammersley;

#[derive(Clone, Debug, PartialEq)]
pub struct PrefilterConfig {
    /// Number of specular mip levels; level k has roughness k / (levels - 1).
    pub mip_levels: usize,
    /// Base GGX sample count (scaled per level with lobe width).
    pub samples: usize,
    /// Resolution of the irradiance cubemap and of the pooled base it
    /// integrates over.
    pub irradiance_res: usize,
    pub dfg_res: usize,
    pub dfg_samples: usize,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        PrefilterConfig {
            mip_levels: 6,
            samples: 64,
            irradiance_res: 16,
            dfg_res: 64,
            dfg_samples: 1024,
        }
    }
}

/// CSR sparse linear map from base texels to output texels.
#[derive(Clone, Debug, Default)]
pub struct SparseMap {
    pub row_ptr: Vec<u32>,
    pub cols: Vec<u32>,
    pub weights: Vec<f64>,
    pub n_in: usize,
}

impl SparseMap {
    pub fn apply(&self, input: &[DVec3]) -> Vec<DVec3> {
        debug_assert_eq!(input.len(), self.n_in);
        let n_out = self.row_ptr.len() - 1;
        (0..n_out)
            .into_par_iter()
            .map(|row| {
                let lo = self.row_ptr[row] as usize;
                let hi = self.row_ptr[row + 1] as usize;
                let mut acc = DVec3::ZERO;
                for k in lo..hi {
                    acc += input[self.cols[k] as usize] * self.weights[k];
                }
                acc
            })
            .collect()
    }

    /// Transpose application (scatter); sequential so the accumulation order
    /// is fixed.
    pub fn apply_transpose(&self, upstream: &[DVec3]) -> Vec<DVec3> {
        let n_out = self.row_ptr.len() - 1;
        debug_assert_eq!(upstream.len(), n_out);
        let mut out = vec![DVec3::ZERO; self.n_in];
        for row in 0..n_out {
            let g = upstream[row];
            if g == DVec3::ZERO {
                continue;
            }
            for k in self.row_ptr[row] as usize..self.row_ptr[row + 1] as usize {
                out[self.cols[k] as usize] += g * self.weights[k];
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct PrefilterOperator {
    pub base_res: usize,
    pub mip_res: Vec<usize>,
    pub mips: Vec<SparseMap>,
    /// Average-pool base -> pooled cube feeding the irradiance quadrature.
    pub pool: SparseMap,
    /// Dense cosine-quadrature weights, row-major (irradiance texel, pooled texel).
    pub irr_weights: Vec<f64>,
    pub irr_res: usize,
}

impl PrefilterOperator {
    pub fn build(base_res: usize, config: &PrefilterConfig) -> PrefilterOperator {
        assert!(config.mip_levels >= 2);
        let mut mip_res = Vec::new();
        let mut mips = Vec::new();
        for level in 0..config.mip_levels {
            let res = (base_res >> level).max(2);
            mip_res.push(res);
            let roughness = level as f64 / (config.mip_levels - 1) as f64;
            let samples = if level == 0 {
                1
            } else {
                (config.samples << level >> 2).max(8)
            };
            mips.push(build_mip_taps(base_res, res, roughness, samples));
        }
        let pool = build_pool(base_res, config.irradiance_res);
        let irr_weights = build_irradiance_weights(config.irradiance_res);
        PrefilterOperator {
            base_res,
            mip_res,
            mips,
            pool,
            irr_weights,
            irr_res: config.irradiance_res,
        }
    }

    /// Apply the operator: specular mip chain plus irradiance map.
    pub fn apply(&self, base: &CubeMap) -> (Vec<CubeMap>, CubeMap) {
        assert_eq!(base.res, self.base_res, "operator built for another resolution");
        let mips: Vec<CubeMap> = self
            .mips
            .iter()
            .zip(&self.mip_res)
            .map(|(map, &res)| CubeMap {
                res,
                data: map.apply(&base.data),
            })
            .collect();
        let pooled = self.pool.apply(&base.data);
        let n_irr = 6 * self.irr_res * self.irr_res;
        let n_pool = pooled.len();
        let irr_data: Vec<DVec3> = (0..n_irr)
            .into_par_iter()
            .map(|o| {
                let row = &self.irr_weights[o * n_pool..(o + 1) * n_pool];
                let mut acc = DVec3::ZERO;
                for (p, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        acc += pooled[p] * w;
                    }
                }
                acc
            })
            .collect();
        (
            mips,
            CubeMap {
                res: self.irr_res,
                data: irr_data,
            },
        )
    }

    /// Pull mip and irradiance texel gradients back to base texels.
    pub fn apply_transpose(
        &self,
        d_mips: &[Vec<DVec3>],
        d_irradiance: &[DVec3],
    ) -> Vec<DVec3> {
        let n_base = 6 * self.base_res * self.base_res;
        let mut out = vec![DVec3::ZERO; n_base];
        for (map, d_mip) in self.mips.iter().zip(d_mips) {
            for (i, v) in map.apply_transpose(d_mip).into_iter().enumerate() {
                out[i] += v;
            }
        }
        let n_pool = self.pool.row_ptr.len() - 1;
        let mut d_pooled = vec![DVec3::ZERO; n_pool];
        for (o, g) in d_irradiance.iter().enumerate() {
            if *g == DVec3::ZERO {
                continue;
            }
            let row = &self.irr_weights[o * n_pool..(o + 1) * n_pool];
            for (p, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    d_pooled[p] += *g * w;
                }
            }
        }
        for (i, v) in self.pool.apply_transpose(&d_pooled).into_iter().enumerate() {
            out[i] += v;
        }
        out
    }
}

/// GGX prefilter taps for one mip level: for every output texel direction,
/// importance-sample the lobe around it (N = V = R) and record the bilinear
/// taps into the base cubemap, weighted by NoL and normalized so a constant
/// environment is preserved exactly.
fn build_mip_taps(base_res: usize, out_res: usize, roughness: f64, samples: usize) -> SparseMap {
    let base = CubeMap::constant(base_res, DVec3::ZERO);
    let out = CubeMap::constant(out_res, DVec3::ZERO);
    let alpha = ggx_alpha(roughness);
    let n_out = 6 * out_res * out_res;

    let rows: Vec<Vec<(u32, f64)>> = (0..n_out)
        .into_par_iter()
        .map(|o| {
            let face = o / (out_res * out_res);
            let rem = o % (out_res * out_res);
            let y = rem / out_res;
            let x = rem % out_res;
            let normal = out.texel_dir(face, x, y);
            let (tangent, bitangent) = orthonormal_basis(normal);
            let mut taps: Vec<(u32, f64)> = Vec::with_capacity(samples * 4);
            let mut total = 0.0;
            for s in 0..samples {
                let (u1, u2) = hammersley(s as u32, samples as u32);
                let h_local = sample_ggx_half(u1, u2, alpha);
                let h = tangent * h_local.x + bitangent * h_local.y + normal * h_local.z;
                let l = 2.0 * normal.dot(h) * h - normal;
                let no_l = normal.dot(l);
                if no_l <= 0.0 {
                    continue;
                }
                for (idx, w) in base.sample_taps(l) {
                    taps.push((idx as u32, w * no_l));
                    total += w * no_l;
                }
            }
            if total <= 0.0 {
                // Degenerate lobe; fall back to a direct lookup.
                taps.clear();
                for (idx, w) in base.sample_taps(normal) {
                    taps.push((idx as u32, w));
                    total += w;
                }
            }
            // Merge duplicate taps and normalize.
            taps.sort_unstable_by_key(|t| t.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(taps.len());
            for (col, w) in taps {
                match merged.last_mut() {
                    Some(last) if last.0 == col => last.1 += w,
                    _ => merged.push((col, w)),
                }
            }
            for t in &mut merged {
                t.1 /= total;
            }
            merged
        })
        .collect();

    rows_to_csr(rows, 6 * base_res * base_res)
}

/// Average-pool map from the base resolution down to `out_res` per face.
fn build_pool(base_res: usize, out_res: usize) -> SparseMap {
    assert!(base_res % out_res == 0, "pool requires divisible resolutions");
    let k = base_res / out_res;
    let w = 1.0 / (k * k) as f64;
    let n_out = 6 * out_res * out_res;
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n_out);
    for face in 0..6 {
        for y in 0..out_res {
            for x in 0..out_res {
                let mut taps = Vec::with_capacity(k * k);
                for dy in 0..k {
                    for dx in 0..k {
                        let bx = x * k + dx;
                        let by = y * k + dy;
                        taps.push((((face * base_res + by) * base_res + bx) as u32, w));
                    }
                }
                rows.push(taps);
            }
        }
    }
    rows_to_csr(rows, 6 * base_res * base_res)
}

/// Dense cosine-hemisphere quadrature over the pooled cube:
/// `E(n) = sum_p L(p) max(dir_p . n, 0) * solid_angle_p`.
fn build_irradiance_weights(res: usize) -> Vec<f64> {
    let cube = CubeMap::constant(res, DVec3::ZERO);
    let n = 6 * res * res;
    let mut dirs = Vec::with_capacity(n);
    let mut omegas = Vec::with_capacity(n);
    for face in 0..6 {
        for y in 0..res {
            for x in 0..res {
                dirs.push(cube.texel_dir(face, x, y));
                omegas.push(cube.texel_solid_angle(x, y));
            }
        }
    }
    let mut weights = vec![0.0; n * n];
    weights
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(o, row)| {
            let normal = dirs[o];
            for p in 0..n {
                let c = dirs[p].dot(normal);
                if c > 0.0 {
                    row[p] = c * omegas[p];
                }
            }
        });
    weights
}

fn rows_to_csr(rows: Vec<Vec<(u32, f64)>>, n_in: usize) -> SparseMap {
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    row_ptr.push(0u32);
    let total: usize = rows.iter().map(|r| r.len()).sum();
    let mut cols = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for row in rows {
        for (c, w) in row {
            cols.push(c);
            weights.push(w);
        }
        row_ptr.push(cols.len() as u32);
    }
    SparseMap {
        row_ptr,
        cols,
        weights,
        n_in,
    }
}
