//! Densification and pruning adapted to SDF-derived opacity.

use glam::DQuat;

use super::{TrainConfig, TrainState};
use crate::error::Result;
use crate::field::{sdf_to_opacity, GaussianCloud};
use crate::math::quat_to_mat3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub split: usize,
    pub cloned: usize,
    pub pruned: usize,
    /// Densification was skipped because it would exceed the primitive cap.
    pub skipped_capacity: bool,
}

/// Split or clone primitives whose accumulated mean screen-space position
/// gradient exceeds the threshold, then prune primitives whose derived
/// opacity fell below the prune threshold. Children inherit the parent's SDF
/// sample and PBR attributes; optimizer moments of new primitives start at
/// zero and the accumulators reset.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<DensifyReport> {
    let n = cloud.len();
    let mut report = DensifyReport::default();

    // Selection from the accumulated screen gradients.
    let mut split_idx = Vec::new();
    let mut clone_idx = Vec::new();
    for i in 0..n {
        if state.densify_count[i] == 0 {
            continue;
        }
        let mean = state.densify_grad_accum[i] / state.densify_count[i] as f64;
        if mean <= config.densify_grad_threshold {
            continue;
        }
        if cloud.scales[i].max_element() > config.densify_split_size {
            split_idx.push(i);
        } else {
            clone_idx.push(i);
        }
    }

    let additions = split_idx.len() + clone_idx.len();
    if n + additions > config.max_primitives {
        report.skipped_capacity = true;
        split_idx.clear();
        clone_idx.clear();
    }

    // Old slot feeding each new slot (None = fresh moments).
    let mut keep: Vec<Option<usize>> = (0..n).map(Some).collect();

    for &i in &split_idx {
        // Two children along the major in-plane axis at +-0.8 sigma, scales
        // shrunk by 1.6; the parent slot becomes the first child.
        let rot = quat_to_mat3(cloud.rotations[i]);
        let (axis, sigma) = if cloud.scales[i].x >= cloud.scales[i].y {
            (rot.x_axis, cloud.scales[i].x)
        } else {
            (rot.y_axis, cloud.scales[i].y)
        };
        let offset = 0.8 * sigma * axis;
        let parent_pos = cloud.positions[i];
        cloud.positions[i] = parent_pos + offset;
        cloud.scales[i] /= 1.6;
        push_child(
            cloud,
            parent_pos - offset,
            cloud.rotations[i],
            cloud.scales[i],
            i,
        );
        keep[i] = None;
        keep.push(None);
        report.split += 1;
    }
    for &i in &clone_idx {
        push_child(
            cloud,
            cloud.positions[i],
            cloud.rotations[i],
            cloud.scales[i],
            i,
        );
        keep.push(None);
        report.cloned += 1;
    }

    // Prune by derived opacity.
    let gamma = cloud.gamma();
    let mut retained: Vec<Option<usize>> = Vec::with_capacity(cloud.len());
    let mut write = 0usize;
    for read in 0..cloud.len() {
        let opacity = sdf_to_opacity(cloud.sdf_values[read], gamma)?;
        if opacity < config.prune_opacity {
            report.pruned += 1;
            continue;
        }
        if write != read {
            cloud.positions[write] = cloud.positions[read];
            cloud.rotations[write] = cloud.rotations[read];
            cloud.scales[write] = cloud.scales[read];
            cloud.sdf_values[write] = cloud.sdf_values[read];
            cloud.albedo[write] = cloud.albedo[read];
            cloud.roughness[write] = cloud.roughness[read];
            cloud.metallic[write] = cloud.metallic[read];
        }
        retained.push(keep[read]);
        write += 1;
    }
    cloud.positions.truncate(write);
    cloud.rotations.truncate(write);
    cloud.scales.truncate(write);
    cloud.sdf_values.truncate(write);
    cloud.albedo.truncate(write);
    cloud.roughness.truncate(write);
    cloud.metallic.truncate(write);

    // Remap optimizer state and reset the densification accumulators.
    state.adam_positions.remap(&retained, 3);
    state.adam_rotations.remap(&retained, 4);
    state.adam_scales.remap(&retained, 2);
    state.adam_sdf.remap(&retained, 1);
    state.adam_albedo.remap(&retained, 3);
    state.adam_roughness.remap(&retained, 1);
    state.adam_metallic.remap(&retained, 1);
    state.densify_grad_accum = vec![0.0; write];
    state.densify_count = vec![0; write];

    cloud.validate()?;
    Ok(report)
}

fn push_child(
    cloud: &mut GaussianCloud,
    position: glam::DVec3,
    rotation: DQuat,
    scale: glam::DVec2,
    parent: usize,
) {
    cloud.positions.push(position);
    cloud.rotations.push(rotation);
    cloud.scales.push(scale);
    cloud.sdf_values.push(cloud.sdf_values[parent]);
    cloud.albedo.push(cloud.albedo[parent]);
    cloud.roughness.push(cloud.roughness[parent]);
    cloud.metallic.push(cloud.metallic[parent]);
}
