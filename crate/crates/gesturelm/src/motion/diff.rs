//! Finite differences over frame sequences.

use crate::{Error, Result};

/// Forward finite difference of a frame sequence.
///
/// `data` holds `n` frames of `frame_len` values each; the result has
/// `n - order` frames. First order is `v_t = (x_{t+1} - x_t) * fps`, second
/// order is the first order applied twice, so units are per-second and
/// per-second squared.
pub fn finite_difference(
    data: &[f64],
    frame_len: usize,
    fps: f64,
    order: u8,
) -> Result<Vec<f64>> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidInput(format!("derivative order must be 1 or 2, got {order}")));
    }
    if frame_len == 0 || data.len() % frame_len != 0 {
        return Err(Error::ShapeMismatch(format!(
            "data length {} is not a multiple of frame length {frame_len}",
            data.len()
        )));
    }
    let n = data.len() / frame_len;
    if n <= order as usize {
        return Err(Error::InvalidInput(format!(
            "need more than {order} frames to take an order-{order} derivative, got {n}"
        )));
    }
    let mut cur = first_difference(data, frame_len, fps);
    if order == 2 {
        cur = first_difference(&cur, frame_len, fps);
    }
    Ok(cur)
}

fn first_difference(data: &[f64], frame_len: usize, fps: f64) -> Vec<f64> {
    let n = data.len() / frame_len;
    let mut out = Vec::with_capacity((n - 1) * frame_len);
    for t in 0..n - 1 {
        for k in 0..frame_len {
            out.push((data[(t + 1) * frame_len + k] - data[t * frame_len + k]) * fps);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_sequence_has_zero_derivative() {
        let data = vec![3.5; 5 * 4];
        let v = finite_difference(&data, 4, 15.0, 1).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn linear_ramp_has_unit_velocity() {
        let fps = 15.0;
        let data: Vec<f64> = (0..10).map(|t| t as f64 / fps).collect();
        let v = finite_difference(&data, 1, fps, 1).unwrap();
        assert_eq!(v.len(), 9);
        for x in v {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_difference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = finite_difference(&data, 3, 30.0, 1).unwrap();
        for t in 0..5 {
            for k in 0..3 {
                assert_eq!(v[t * 3 + k], (data[(t + 1) * 3 + k] - data[t * 3 + k]) * 30.0);
            }
        }
    }

    #[test]
    fn second_order_is_first_order_twice() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..8 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let twice =
            finite_difference(&finite_difference(&data, 2, 15.0, 1).unwrap(), 2, 15.0, 1).unwrap();
        assert_eq!(finite_difference(&data, 2, 15.0, 2).unwrap(), twice);
    }

    #[test]
    fn too_short_sequence_errors() {
        assert!(finite_difference(&[1.0], 1, 15.0, 1).is_err());
        assert!(finite_difference(&[1.0, 2.0], 1, 15.0, 2).is_err());
    }
}
