//! Motion file and skeleton config serialization.
//!
//! Motion files are a one-line ASCII header `GMOT1 <N> <J> <fps>` followed by
//! `N * J * 6` little-endian 32-bit floats, frame-major then joint-major.

use super::{MotionSequence, Skeleton};
use crate::{Error, Result};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const MAGIC: &str = "GMOT1";

pub fn save_motion(path: &Path, motion: &MotionSequence) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{MAGIC} {} {} {}", motion.n_frames, motion.n_joints, motion.fps)?;
    for v in &motion.data {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<MotionSequence> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut it = header.split_whitespace();
    let magic = it.next().unwrap_or("");
    if magic != MAGIC {
        return Err(Error::Data(format!("{}: bad motion header magic {magic:?}", path.display())));
    }
    let parse = |s: Option<&str>, what: &str| -> Result<f64> {
        s.and_then(|x| x.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: bad motion header field {what}", path.display())))
    };
    let n = parse(it.next(), "N")? as usize;
    let j = parse(it.next(), "J")? as usize;
    let fps = parse(it.next(), "fps")?;
    let count = n * j * 6;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|e| {
        Error::Data(format!("{}: truncated motion payload ({e})", path.display()))
    })?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    MotionSequence::new(data, n, j, fps)
}

/// Parse a skeleton config: one `name parent_index offset_x offset_y offset_z`
/// line per joint, `#` comments, parent `-1` for the root.
pub fn skeleton_from_str(text: &str) -> Result<Skeleton> {
    let mut names = Vec::new();
    let mut parents = Vec::new();
    let mut offsets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "skeleton line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parent: i64 = fields[1]
            .parse()
            .map_err(|_| Error::Data(format!("skeleton line {}: bad parent index", lineno + 1)))?;
        let mut off = [0.0; 3];
        for (k, s) in fields[2..5].iter().enumerate() {
            off[k] = s
                .parse()
                .map_err(|_| Error::Data(format!("skeleton line {}: bad offset", lineno + 1)))?;
        }
        names.push(fields[0].to_string());
        parents.push(if parent < 0 { None } else { Some(parent as usize) });
        offsets.push(off);
    }
    Skeleton::new(names, parents, offsets)
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    skeleton_from_str(&std::fs::read_to_string(path)?)
}
