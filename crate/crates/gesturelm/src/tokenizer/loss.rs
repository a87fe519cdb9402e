//! VQ-VAE training objective with per-component breakdown.

use crate::motion::Skeleton;
use crate::nn::ops;
use crate::{Error, Result};
use candle_core::{DType, Tensor};

/// Detached per-component values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub rec6d: f64,
    pub rec_axis_angle: f64,
    pub rec_joint_pos: f64,
    pub rec_geodesic: f64,
    pub codebook: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub total: f64,
}

fn mse(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    (a - b)?.sqr()?.mean_all()
}

fn scalar(t: &Tensor, name: &str) -> Result<f64> {
    let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("vqvae loss component {name}")));
    }
    Ok(v)
}

/// Differentiable forward kinematics: `rot` is `(F, J, 3, 3)` local rotations,
/// result is `(F, J, 3)` global positions with the root at the origin.
pub fn fk_batch(rot: &Tensor, skeleton: &Skeleton) -> Result<Tensor> {
    let (f, j, _, _) = rot.dims4()?;
    if j != skeleton.n_joints() {
        return Err(Error::ShapeMismatch(format!(
            "{j} joints in pose vs {} in skeleton",
            skeleton.n_joints()
        )));
    }
    let dtype = rot.dtype();
    let dev = rot.device();
    let mut globals: Vec<Tensor> = Vec::with_capacity(j);
    let mut positions: Vec<Tensor> = Vec::with_capacity(j);
    for joint in 0..j {
        let local = rot.narrow(1, joint, 1)?.squeeze(1)?.contiguous()?; // (F,3,3)
        match skeleton.parents[joint] {
            None => {
                positions.push(Tensor::zeros((f, 3), dtype, dev)?);
                globals.push(local);
            }
            Some(p) => {
                let off = Tensor::from_vec(skeleton.offsets[joint].to_vec(), (3, 1), dev)?
                    .to_dtype(dtype)?;
                let step = globals[p].broadcast_matmul(&off)?.squeeze(2)?; // (F,3)
                positions.push((&positions[p] + step)?);
                globals.push(globals[p].matmul(&local)?);
            }
        }
    }
    Ok(Tensor::stack(&positions, 1)?)
}

fn frame_difference(x: &Tensor, fps: f64) -> candle_core::Result<Tensor> {
    let n = x.dims3()?.1;
    (x.narrow(1, 1, n - 1)? - x.narrow(1, 0, n - 1)?)? * fps
}

/// Full tokenizer objective.
///
/// `x`/`xhat` are `(B, N, J*6)` motion, `z`/`zq` are `(B, M, d)` encoder
/// latents and their codebook rows. The codebook term is
/// `||sg(z) - zq||^2 + beta ||z - sg(zq)||^2` (mean over latents of the
/// squared norm), so its first half only moves the codebook and the second
/// only the encoder. Velocity/acceleration apply to the 6D channels, or to
/// joint positions when `derivative_on_positions` is set.
#[allow(clippy::too_many_arguments)]
pub fn vqvae_loss(
    x: &Tensor,
    xhat: &Tensor,
    z: &Tensor,
    zq: &Tensor,
    skeleton: &Skeleton,
    beta: f64,
    fps: f64,
    derivative_on_positions: bool,
) -> Result<(Tensor, LossBreakdown)> {
    let (b, n, feat) = x.dims3()?;
    if xhat.dims() != x.dims() {
        return Err(Error::ShapeMismatch("reconstruction shape differs from input".into()));
    }
    let j = feat / 6;

    let rec6d = mse(xhat, x)?;

    let flat_x = x.reshape((b * n * j, 6))?;
    let flat_xhat = xhat.reshape((b * n * j, 6))?;
    let rot_x = ops::sixd_to_rotmat(&flat_x)?;
    let rot_xhat = ops::sixd_to_rotmat(&flat_xhat)?;

    let aa_x = ops::rotmat_to_axis_angle_vec(&rot_x)?;
    let aa_xhat = ops::rotmat_to_axis_angle_vec(&rot_xhat)?;
    let rec_axis_angle = mse(&aa_xhat, &aa_x)?;

    let pos_x = fk_batch(&rot_x.reshape((b * n, j, 3, 3))?, skeleton)?;
    let pos_xhat = fk_batch(&rot_xhat.reshape((b * n, j, 3, 3))?, skeleton)?;
    let rec_joint_pos = mse(&pos_xhat, &pos_x)?;

    let rec_geodesic = ops::geodesic(&rot_x, &rot_xhat)?.mean_all()?;

    let first = (z.detach() - zq)?.sqr()?.sum(2)?.mean_all()?;
    let second = (z - zq.detach())?.sqr()?.sum(2)?.mean_all()?;
    let codebook = (first + (second * beta)?)?;

    let (vx, vxhat) = if derivative_on_positions {
        (
            pos_x.reshape((b, n, j * 3))?,
            pos_xhat.reshape((b, n, j * 3))?,
        )
    } else {
        (x.clone(), xhat.clone())
    };
    let vel_x = frame_difference(&vx, fps)?;
    let vel_xhat = frame_difference(&vxhat, fps)?;
    let velocity = mse(&vel_xhat, &vel_x)?;
    let acc_x = frame_difference(&vel_x, fps)?;
    let acc_xhat = frame_difference(&vel_xhat, fps)?;
    let acceleration = mse(&acc_xhat, &acc_x)?;

    let total = (((((&rec6d + &rec_axis_angle)? + &rec_joint_pos)? + &rec_geodesic)?
        + &codebook)?
        + (&velocity + &acceleration)?)?;

    let breakdown = LossBreakdown {
        rec6d: scalar(&rec6d, "rec6d")?,
        rec_axis_angle: scalar(&rec_axis_angle, "rec_axis_angle")?,
        rec_joint_pos: scalar(&rec_joint_pos, "rec_joint_pos")?,
        rec_geodesic: scalar(&rec_geodesic, "rec_geodesic")?,
        codebook: scalar(&codebook, "codebook")?,
        velocity: scalar(&velocity, "velocity")?,
        acceleration: scalar(&acceleration, "acceleration")?,
        total: scalar(&total, "total")?,
    };
    Ok((total, breakdown))
}
