//! Rotary position embedding with half-split channel pairing.
//!
//! Channel `i` pairs with channel `i + d/2` and the pair is rotated by
//! `position · θᵢ`, `θᵢ = base^(−2i/d)`. A vector `[1, 0]` at position `p`
//! becomes `[cos p, sin p]`.

use ndarray::{Array2, ArrayView2};

use crate::attention::Real;
use crate::error::{Error, Result};

pub const DEFAULT_THETA_BASE: f64 = 10_000.0;

/// Rotation frequencies `θᵢ` for the `d/2` channel pairs.
pub fn frequencies(head_dim: usize, theta_base: f64) -> Vec<f64> {
    let half = head_dim / 2;
    (0..half).map(|i| theta_base.powf(-2.0 * i as f64 / head_dim as f64)).collect()
}

pub fn apply_rope<T: Real>(x: ArrayView2<T>, positions: &[usize], theta_base: f64) -> Result<Array2<T>> {
    let (s, d) = x.dim();
    if d % 2 != 0 {
        return Err(Error::Shape(format!("RoPE needs an even head dim, got {d}")));
    }
    if positions.len() != s {
        return Err(Error::Shape(format!("{} positions for {s} rows", positions.len())));
    }
    if !(theta_base > 0.0) {
        return Err(Error::Config(format!("theta_base must be positive, got {theta_base}")));
    }
    let half = d / 2;
    let freqs = frequencies(d, theta_base);
    let mut out = x.to_owned();
    for (r, &p) in positions.iter().enumerate() {
        for (i, &theta) in freqs.iter().enumerate() {
            let angle = p as f64 * theta;
            let (sin, cos) = (T::from_f64(angle.sin()), T::from_f64(angle.cos()));
            let lo = x[[r, i]];
            let hi = x[[r, i + half]];
            out[[r, i]] = lo * cos - hi * sin;
            out[[r, i + half]] = lo * sin + hi * cos;
        }
    }
    Ok(out)
}

/// Rotates a single vector; convenience wrapper over [`apply_rope`].
pub fn rope_vector(x: &[f64], position: usize, theta_base: f64) -> Result<Vec<f64>> {
    let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(apply_rope(m.view(), &[position], theta_base)?.into_raw_vec_and_offset().0)
}
