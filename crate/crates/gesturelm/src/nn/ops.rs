//! Tensor ops missing from the backend plus differentiable rotation math.

use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};

/// Elementwise arccos with the input clamped to `[-1, 1]`.
///
/// The forward value is exact at the boundary (so a zero rotation error gives
/// an exactly zero geodesic term); the backward pass clamps `1 - x^2` away
/// from zero to keep gradients finite near the boundary.
struct AcosClamped;

const ACOS_GRAD_EPS: f64 = 1e-8;

impl CustomOp1 for AcosClamped {
    fn name(&self) -> &'static str {
        "acos-clamped"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("acos requires contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F64(vs) => {
                CpuStorage::F64(vs[start..end].iter().map(|x| x.clamp(-1.0, 1.0).acos()).collect())
            }
            CpuStorage::F32(vs) => {
                CpuStorage::F32(vs[start..end].iter().map(|x| x.clamp(-1.0, 1.0).acos()).collect())
            }
            _ => return Err(candle_core::Error::Msg("acos supports f32/f64 only".into())),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let one = Tensor::ones_like(arg)?;
        let denom = (&one - arg.clamp(-1.0, 1.0)?.sqr()?)?
            .clamp(ACOS_GRAD_EPS, f64::INFINITY)?
            .sqrt()?;
        Ok(Some(grad_res.div(&denom)?.neg()?))
    }
}

pub fn acos(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(AcosClamped)
}

/// Batched Gram-Schmidt 6D -> rotation matrix.
///
/// Input `(B, 6)`, output `(B, 3, 3)` with the orthonormal frame in the
/// matrix columns. Norms are clamped away from zero; callers feed
/// non-degenerate data.
pub fn sixd_to_rotmat(x: &Tensor) -> Result<Tensor> {
    let eps = 1e-8;
    let a1 = x.narrow(1, 0, 3)?;
    let a2 = x.narrow(1, 3, 3)?;
    let n1 = a1.sqr()?.sum_keepdim(1)?.clamp(eps, f64::INFINITY)?.sqrt()?;
    let b1 = a1.broadcast_div(&n1)?;
    let dot = (&b1 * &a2)?.sum_keepdim(1)?;
    let b2 = (a2 - b1.broadcast_mul(&dot)?)?;
    let n2 = b2.sqr()?.sum_keepdim(1)?.clamp(eps, f64::INFINITY)?.sqrt()?;
    let b2 = b2.broadcast_div(&n2)?;
    let b3 = cross(&b1, &b2)?;
    // Columns b1, b2, b3: stack along a new last axis.
    Tensor::stack(&[&b1, &b2, &b3], 2)
}

/// Cross product over the last axis of two `(B, 3)` tensors.
pub fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ax, ay, az) = (a.narrow(1, 0, 1)?, a.narrow(1, 1, 1)?, a.narrow(1, 2, 1)?);
    let (bx, by, bz) = (b.narrow(1, 0, 1)?, b.narrow(1, 1, 1)?, b.narrow(1, 2, 1)?);
    let cx = ((&ay * &bz)? - (&az * &by)?)?;
    let cy = ((&az * &bx)? - (&ax * &bz)?)?;
    let cz = ((&ax * &by)? - (&ay * &bx)?)?;
    Tensor::cat(&[&cx, &cy, &cz], 1)
}

fn mat_elem(r: &Tensor, i: usize, j: usize) -> Result<Tensor> {
    r.narrow(1, i, 1)?.narrow(2, j, 1)?.flatten_from(1)
}

/// Rotation angle of a batch of rotation matrices `(B, 3, 3)` -> `(B,)`.
pub fn rotation_angle(r: &Tensor) -> Result<Tensor> {
    let trace = (mat_elem(r, 0, 0)? + mat_elem(r, 1, 1)? + mat_elem(r, 2, 2)?)?;
    let cos = ((trace - 1.0)? / 2.0)?;
    acos(&cos)?.squeeze(1)
}

/// Geodesic distances between matched batches of rotation matrices.
pub fn geodesic(r1: &Tensor, r2: &Tensor) -> Result<Tensor> {
    rotation_angle(&r1.transpose(1, 2)?.matmul(r2)?)
}

/// Axis-angle vectors (`angle * unit axis`) of rotation matrices `(B, 3, 3)`.
///
/// Uses the vee of the antisymmetric part scaled by `theta / (2 sin theta)`,
/// switching to the series value near zero angle.
pub fn rotmat_to_axis_angle_vec(r: &Tensor) -> Result<Tensor> {
    let theta = rotation_angle(r)?.unsqueeze(1)?; // (B, 1)
    let vee = Tensor::cat(
        &[
            (mat_elem(r, 2, 1)? - mat_elem(r, 1, 2)?)?,
            (mat_elem(r, 0, 2)? - mat_elem(r, 2, 0)?)?,
            (mat_elem(r, 1, 0)? - mat_elem(r, 0, 1)?)?,
        ],
        1,
    )?; // (B, 3)
    // The upper clamp only guards division by sin(pi) = 0; keep the band
    // narrow so angles close to pi still use their true sine.
    let theta_safe = theta.clamp(1e-4, std::f64::consts::PI - 1e-6)?;
    let ratio = theta_safe.div(&(theta_safe.sin()? * 2.0)?)?;
    let series = ((theta.sqr()? / 12.0)? + 0.5)?;
    let small = theta.lt(1e-3)?;
    let factor = small.where_cond(&series, &ratio)?;
    vee.broadcast_mul(&factor)
}
