//! Seeded synthetic inputs and sparse indices.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::AttnInputs;
use crate::error::{Error, Result};
use crate::pattern::{sparseformat, SparseIndex};
use crate::rope::apply_rope;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, s: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((s, d), |_| rng.gen_range(-1.0..1.0))
}

/// Causal inputs with entries uniform in `[-1, 1)` at positions `0..S`.
pub fn random_inputs(seq_len: usize, head_dim: usize, seed: u64) -> Result<AttnInputs> {
    let mut r = rng(seed);
    let q = uniform(&mut r, seq_len, head_dim);
    let k = uniform(&mut r, seq_len, head_dim);
    let v = uniform(&mut r, seq_len, head_dim);
    AttnInputs::contiguous(q, k, v, true)
}

/// Inputs with the structure real heads show after RoPE: a shared query
/// and key mean (giving slash bands), a few heavy keys that every query
/// attends to (verticals, including the first token as a sink), and
/// Gaussian fluctuation around both. Logits stay moderate, so attention is
/// peaked without being one-hot.
pub fn rope_structured_inputs(seq_len: usize, head_dim: usize, theta_base: f64, seed: u64) -> Result<AttnInputs> {
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(Error::Shape(format!("head dim {head_dim} must be even and positive")));
    }
    let mut r = rng(seed);
    let d = head_dim;
    let gain = 0.2 * (d as f64).sqrt();
    let noise = 0.3;
    let mu_q: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let mu_k: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let q = Array2::from_shape_fn((seq_len, d), |(_, i)| gain * mu_q[i] + noise * r.sample::<f64, _>(StandardNormal));
    let mut k = Array2::from_shape_fn((seq_len, d), |(_, i)| gain * mu_k[i] + noise * r.sample::<f64, _>(StandardNormal));

    // heavy keys point along the mean query on the lowest-frequency pair,
    // which barely rotates over the sequence
    let (lo, hi) = (d / 2 - 1, d - 1);
    let norm = (mu_q[lo].powi(2) + mu_q[hi].powi(2)).sqrt().max(1e-3);
    let boost = 15.0 * d as f64 / norm;
    let mut cols: Vec<usize> = (1..seq_len).collect();
    cols.shuffle(&mut r);
    cols.truncate(1 + seq_len / 128);
    cols.push(0);
    for &c in &cols {
        k[[c, lo]] += boost * mu_q[lo] / norm;
        k[[c, hi]] += boost * mu_q[hi] / norm;
    }
    let positions: Vec<usize> = (0..seq_len).collect();
    let q = apply_rope(q.view(), &positions, theta_base)?;
    let k = apply_rope(k.view(), &positions, theta_base)?;
    let v = Array2::from_shape_fn((seq_len, d), |_| r.sample::<f64, _>(StandardNormal));
    AttnInputs::contiguous(q, k, v, true)
}

/// Random vertical-slash index: a handful of columns and block offsets,
/// always including column 0 and the main diagonal.
pub fn random_sparse_index(seq_len: usize, block: usize, seed: u64) -> Result<SparseIndex> {
    if block == 0 || seq_len == 0 {
        return Err(Error::Config("seq_len and block must be positive".into()));
    }
    let mut r = rng(seed);
    let nb = seq_len.div_ceil(block);
    let nv = r.gen_range(0..=seq_len.min(8));
    let ns = r.gen_range(0..=nb.min(4));
    let mut verticals: Vec<usize> = (0..nv).map(|_| r.gen_range(0..seq_len)).collect();
    let mut slashes: Vec<usize> = (0..ns).map(|_| r.gen_range(0..nb)).collect();
    verticals.push(0);
    slashes.push(0);
    sparseformat(&verticals, &slashes, seq_len, block)
}

/// Vertical-slash index whose density over the causal triangle first
/// reaches `density`. Columns and block offsets are drawn uniformly, nine
/// columns for every offset; column 0 and the main diagonal are always in.
pub fn synthetic_vertical_slash(seq_len: usize, block: usize, density: f64, seed: u64) -> Result<SparseIndex> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density must lie in (0, 1], got {density}")));
    }
    if block == 0 || seq_len == 0 {
        return Err(Error::Config("seq_len and block must be positive".into()));
    }
    let mut r = rng(seed);
    let nb = seq_len.div_ceil(block);
    let mut verticals = vec![0];
    let mut slashes = vec![0];
    let mut idx = sparseformat(&verticals, &slashes, seq_len, block)?;
    while idx.density() < density {
        if r.gen_bool(0.9) {
            verticals.push(r.gen_range(0..seq_len));
        } else {
            slashes.push(r.gen_range(0..nb));
        }
        idx = sparseformat(&verticals, &slashes, seq_len, block)?;
    }
    Ok(idx)
}

/// Random cotangent with the output's shape.
pub fn random_cotangent(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    uniform(&mut r, rows, dim)
}
