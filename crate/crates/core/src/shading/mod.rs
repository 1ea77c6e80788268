//! Deferred PBR shading against a cubemap environment via the split-sum
//! approximation, with a Monte-Carlo rendering-equation oracle.

pub mod brdf;
mod dfg;
mod mc;
mod prefilter;
mod shade;

pub use dfg::{precompute_dfg_lut, DfgLut};
pub use mc::{mc_reference_components, mc_reference_shade, ShadePoint};
pub use prefilter::{PrefilterConfig, PrefilterOperator};
pub use shade::{
    env_background, shade_adjoint, shade_deferred, shade_point_split_sum, Background,
    ShadeOptions, SpecularForm, COVERAGE_MIN,
};

use crate::cubemap::CubeMap;
use crate::error::{Error, Result};

/// Cubemap radiance with its prefiltered specular mip chain, cosine-convolved
/// irradiance map, and the precomputed split-sum lookup table.
#[derive(Clone, Debug)]
pub struct EnvironmentLight {
    pub base: CubeMap,
    pub filtered: Option<FilteredEnv>,
}

#[derive(Clone, Debug)]
pub struct FilteredEnv {
    /// Level k is prefiltered with GGX roughness `k / (levels - 1)`.
    pub mips: Vec<CubeMap>,
    /// Cosine-weighted hemisphere integral of radiance per direction
    /// (includes the geometric pi; Lambertian shade is `albedo / pi * E`).
    pub irradiance: CubeMap,
    pub dfg: DfgLut,
    /// The fixed linear map that produced mips and irradiance from the base;
    /// re-applied whenever the base radiance changes and transposed to route
    /// gradients back to base texels.
    pub operator: PrefilterOperator,
}

impl EnvironmentLight {
    pub fn new(base: CubeMap) -> Self {
        EnvironmentLight {
            base,
            filtered: None,
        }
    }

    /// Build the prefilter operator (sampling pattern, irradiance quadrature,
    /// DFG table) and apply it to the current base radiance.
    pub fn prefilter(&mut self, config: &PrefilterConfig) {
        let operator = PrefilterOperator::build(self.base.res, config);
        let (mips, irradiance) = operator.apply(&self.base);
        self.filtered = Some(FilteredEnv {
            mips,
            irradiance,
            dfg: precompute_dfg_lut(config.dfg_res, config.dfg_samples),
            operator,
        });
    }

    /// Re-apply the existing operator after the base radiance changed.
    pub fn refresh(&mut self) {
        if let Some(f) = &mut self.filtered {
            let (mips, irradiance) = f.operator.apply(&self.base);
            f.mips = mips;
            f.irradiance = irradiance;
        }
    }

    pub fn filtered(&self) -> Result<&FilteredEnv> {
        self.filtered.as_ref().ok_or(Error::NotPrefiltered)
    }
}
