#![allow(dead_code)]

use ndarray::Array2;
use vsring_core::attention::{AttnInputs, AttnOutput};
use vsring_core::pattern::SparseIndex;

/// Textbook masked softmax attention, one row at a time, no shared code
/// with the library kernels.
pub fn naive_attention(inputs: &AttnInputs, allow: impl Fn(usize, usize) -> bool) -> (Array2<f64>, Vec<f64>) {
    let (s, d) = (inputs.q.nrows(), inputs.q.ncols());
    let mut o = Array2::zeros((s, d));
    let mut lse = vec![f64::NEG_INFINITY; s];
    for i in 0..s {
        let keys: Vec<usize> = (0..s).filter(|&j| allow(i, j)).collect();
        if keys.is_empty() {
            continue;
        }
        let logits: Vec<f64> = keys
            .iter()
            .map(|&j| (0..d).map(|c| inputs.q[[i, c]] * inputs.k[[j, c]]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        lse[i] = max + z.ln();
        for (&j, x) in keys.iter().zip(&logits) {
            let p = (x - max).exp() / z;
            for c in 0..d {
                o[[i, c]] += p * inputs.v[[j, c]];
            }
        }
    }
    (o, lse)
}

pub fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_lse(a: &AttnOutput, b: &[f64]) -> f64 {
    a.lse
        .iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

/// Loss `Σ O ⊙ dO` under the mask, for finite differences.
pub fn loss(inputs: &AttnInputs, allow: &dyn Fn(usize, usize) -> bool, d_out: &Array2<f64>) -> f64 {
    let (o, _) = naive_attention(inputs, allow);
    (&o * d_out).sum()
}

/// Central differences of the loss with respect to Q, K and V.
pub fn fd_grads(
    inputs: &AttnInputs,
    allow: &dyn Fn(usize, usize) -> bool,
    d_out: &Array2<f64>,
    eps: f64,
) -> [Array2<f64>; 3] {
    let mut out = [
        Array2::zeros(inputs.q.raw_dim()),
        Array2::zeros(inputs.k.raw_dim()),
        Array2::zeros(inputs.v.raw_dim()),
    ];
    for (which, g) in out.iter_mut().enumerate() {
        for idx in ndarray::indices(g.raw_dim()) {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            let (p, m) = match which {
                0 => (&mut plus.q, &mut minus.q),
                1 => (&mut plus.k, &mut minus.k),
                _ => (&mut plus.v, &mut minus.v),
            };
            p[idx] += eps;
            m[idx] -= eps;
            g[idx] = (loss(&plus, allow, d_out) - loss(&minus, allow, d_out)) / (2.0 * eps);
        }
    }
    out
}

/// `max |a − b| / max |b|`, with an absolute floor for all-zero references.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-8);
    max_abs(a, b) / scale
}

/// Pairs covered by the index, enumerated from its verticals, slashes and
/// block pairs rather than through `covers`.
pub fn union_mask(verticals: &[usize], slashes: &[usize], s: usize, block: usize) -> Array2<bool> {
    Array2::from_shape_fn((s, s), |(n, m)| {
        m <= n && (verticals.contains(&m) || slashes.contains(&(n / block - m / block)))
    })
}

pub fn index_mask(idx: &SparseIndex) -> Array2<bool> {
    let s = idx.seq_len();
    Array2::from_shape_fn((s, s), |(n, m)| idx.covers(n, m))
}
