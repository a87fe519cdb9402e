//! Rotation representations, kinematics and motion derivatives.
//!
//! Everything in this module is a pure function over immutable inputs and is
//! safe to call concurrently. Rotations are carried in the continuous 6D
//! representation (two unnormalized 3-vectors) and converted to matrices via
//! Gram-Schmidt.

mod diff;
mod io;
mod kinematics;
pub(crate) mod rotation;

pub use diff::finite_difference;
pub use io::{load_motion, load_skeleton, save_motion, skeleton_from_str};
pub use kinematics::forward_kinematics;
pub use rotation::{
    axis_angle_to_rotmat, geodesic_distance, rotmat_to_axis_angle, rotmat_to_sixd, sixd_to_rotmat,
};

use crate::{Error, Result};
use nalgebra::Matrix3;

/// Two unnormalized 3-vectors; the continuous 6D rotation parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn to_rotmat(&self) -> Result<Matrix3<f64>> {
        sixd_to_rotmat(self)
    }
}

/// N frames x J joints of 6D rotations at a fixed frame rate.
///
/// Data is stored flat, frame-major then joint-major: the rotation of joint
/// `j` at frame `t` occupies `data[(t * n_joints + j) * 6 ..][..6]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_joints: usize,
    pub fps: f64,
}

impl MotionSequence {
    pub fn new(data: Vec<f64>, n_frames: usize, n_joints: usize, fps: f64) -> Result<Self> {
        if n_frames == 0 {
            return Err(Error::InvalidInput("motion sequence needs at least one frame".into()));
        }
        if fps <= 0.0 {
            return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
        }
        if data.len() != n_frames * n_joints * 6 {
            return Err(Error::ShapeMismatch(format!(
                "motion data length {} does not match {n_frames} frames x {n_joints} joints x 6",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion data".into()));
        }
        Ok(Self { data, n_frames, n_joints, fps })
    }

    /// Constant pose repeated for `n_frames`.
    pub fn constant(rot: Rotation6D, n_frames: usize, n_joints: usize, fps: f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n_frames * n_joints * 6);
        for _ in 0..n_frames * n_joints {
            data.extend_from_slice(&rot.0);
        }
        Self::new(data, n_frames, n_joints, fps)
    }

    pub fn rotation(&self, frame: usize, joint: usize) -> Rotation6D {
        let base = (frame * self.n_joints + joint) * 6;
        let mut r = [0.0; 6];
        r.copy_from_slice(&self.data[base..base + 6]);
        Rotation6D(r)
    }

    pub fn set_rotation(&mut self, frame: usize, joint: usize, rot: Rotation6D) {
        let base = (frame * self.n_joints + joint) * 6;
        self.data[base..base + 6].copy_from_slice(&rot.0);
    }

    /// One frame as a flat slice of J x 6 values.
    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.n_joints * 6..(frame + 1) * self.n_joints * 6]
    }

    pub fn duration_secs(&self) -> f64 {
        self.n_frames as f64 / self.fps
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames {
            return Err(Error::InvalidInput(format!(
                "window [{start}, {end}) out of range for {} frames",
                self.n_frames
            )));
        }
        let w = self.n_joints * 6;
        Self::new(self.data[start * w..end * w].to_vec(), end - start, self.n_joints, self.fps)
    }

    /// Pad to a multiple of `window` frames by repeating the last frame.
    pub fn pad_to_multiple(&self, window: usize) -> Result<Self> {
        let rem = self.n_frames % window;
        if rem == 0 {
            return Ok(self.clone());
        }
        let extra = window - rem;
        let mut data = self.data.clone();
        let last = self.frame(self.n_frames - 1).to_vec();
        for _ in 0..extra {
            data.extend_from_slice(&last);
        }
        Self::new(data, self.n_frames + extra, self.n_joints, self.fps)
    }
}

/// Rooted-tree skeleton: parent index and bone offset per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// `None` for the root, which must be joint 0.
    pub parents: Vec<Option<usize>>,
    /// Bone offset from the parent joint, meters.
    pub offsets: Vec<[f64; 3]>,
}

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, offsets: Vec<[f64; 3]>) -> Result<Self> {
        let n = names.len();
        if parents.len() != n || offsets.len() != n {
            return Err(Error::ShapeMismatch("skeleton field lengths differ".into()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("skeleton needs at least one joint".into()));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidInput("joint 0 must be the root".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                // Parents must precede children so a single forward pass works.
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(Error::InvalidInput(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                None => return Err(Error::InvalidInput(format!("joint {j} has no parent"))),
            }
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("skeleton offsets".into()));
        }
        Ok(Self { names, parents, offsets })
    }

    pub fn n_joints(&self) -> usize {
        self.names.len()
    }

    /// The 13-joint upper-body tree used by default throughout the toolkit.
    ///
    /// The topology and bone lengths are a stand-in; users with real mocap
    /// data should supply their own skeleton config.
    pub fn default_upper_body() -> Skeleton {
        skeleton_from_str(DEFAULT_SKELETON).expect("builtin skeleton parses")
    }
}

/// Shipped skeleton config (same format as [`load_skeleton`] accepts).
pub const DEFAULT_SKELETON: &str = include_str!("../../assets/upper_body_13.skel");
