//! Grid-based baseline tokenizer: coarse 2D wrist-location cells.

use crate::motion::{forward_kinematics, MotionSequence, Skeleton};
use crate::{Error, Result};

/// Rows x cols grid over a 2D bounding box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl GridSpec {
    /// Default 12x12 grid over normalized shoulder-centered coordinates.
    pub fn default_normalized() -> Self {
        Self { rows: 12, cols: 12, min_x: -1.0, max_x: 1.0, min_y: -1.0, max_y: 1.0 }
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.max_x <= self.min_x || self.max_y <= self.min_y
        {
            return Err(Error::InvalidInput(format!("degenerate grid bounds: {self:?}")));
        }
        Ok(())
    }

    /// Cell id `row * cols + col` of a point; row 0 is the top edge, points
    /// outside the bounds clamp to the border cells and exact boundary points
    /// fall into the lower-id cell.
    pub fn cell_id(&self, x: f64, y: f64) -> u32 {
        let axis = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            let frac = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let idx = (frac * n as f64).ceil() as isize - 1;
            idx.clamp(0, n as isize - 1) as usize
        };
        let col = axis(x, self.min_x, self.max_x, self.cols);
        // Row index counts from the top of the box.
        let row = axis(self.max_y - y, 0.0, self.max_y - self.min_y, self.rows);
        (row * self.cols + col) as u32
    }
}

/// One grid token per token span: the majority cell over the span's frames,
/// ties to the lower cell id.
pub fn grid_tokenize(points: &[(f64, f64)], grid: &GridSpec, span_len: usize) -> Result<Vec<u32>> {
    grid.validate()?;
    if span_len == 0 {
        return Err(Error::InvalidInput("span length must be positive".into()));
    }
    let mut out = Vec::new();
    for span in points.chunks(span_len) {
        let mut counts = vec![0usize; grid.n_cells()];
        for &(x, y) in span {
            counts[grid.cell_id(x, y) as usize] += 1;
        }
        let best = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(id, _)| id as u32)
            .unwrap_or(0);
        out.push(best);
    }
    Ok(out)
}

/// Frontal-plane (x, y) trajectory of one joint via forward kinematics.
pub fn project_wrist_2d(
    motion: &MotionSequence,
    skeleton: &Skeleton,
    joint: usize,
) -> Result<Vec<(f64, f64)>> {
    if joint >= skeleton.n_joints() {
        return Err(Error::InvalidInput(format!("joint {joint} out of range")));
    }
    let mut out = Vec::with_capacity(motion.n_frames);
    for t in 0..motion.n_frames {
        let rots = (0..motion.n_joints)
            .map(|j| motion.rotation(t, j).to_rotmat())
            .collect::<Result<Vec<_>>>()?;
        let pos = forward_kinematics(&rots, skeleton)?;
        out.push((pos[joint].x, pos[joint].y));
    }
    Ok(out)
}
