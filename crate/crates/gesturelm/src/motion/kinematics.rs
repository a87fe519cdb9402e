//! Forward kinematics over a rooted joint tree.

use super::Skeleton;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Global joint positions for one pose, root pinned at the origin.
///
/// Child position = parent position + parent global rotation * bone offset.
pub fn forward_kinematics(
    local_rotations: &[Matrix3<f64>],
    skeleton: &Skeleton,
) -> Result<Vec<Vector3<f64>>> {
    let j = skeleton.n_joints();
    if local_rotations.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "{} rotations for a {j}-joint skeleton",
            local_rotations.len()
        )));
    }
    let mut global_rot = vec![Matrix3::identity(); j];
    let mut pos = vec![Vector3::zeros(); j];
    for i in 0..j {
        match skeleton.parents[i] {
            None => {
                global_rot[i] = local_rotations[i];
                pos[i] = Vector3::zeros();
            }
            Some(p) => {
                let offset = Vector3::from(skeleton.offsets[i]);
                pos[i] = pos[p] + global_rot[p] * offset;
                global_rot[i] = global_rot[p] * local_rotations[i];
            }
        }
    }
    Ok(pos)
}
