//! Numerical checks that RoPE score expectations depend only on the
//! relative position.
//!
//! For the rotated dot product
//! `z(n, m) = Σᵢ φᵢ(n−m) qᵢ kᵢ + Σᵢ ψᵢ(n−m) qᵢ k₍ᵢ₊d/2 mod d₎` with
//! `φᵢ(δ) = cos(δ θ_{i mod d/2})` and `ψᵢ(δ) = ±sin(δ θ_{i mod d/2})`
//! (minus for the upper half), the expectation under a position-independent
//! `(q, k)` distribution is
//! `Σᵢ φᵢ (E[qᵢ]E[kᵢ] + σᵢᵢ) + Σᵢ ψᵢ (E[qᵢ]E[k_p(i)] + σᵢ,p(i))`,
//! where `σ` is the query/key cross-covariance.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rope::frequencies;

/// Distribution of query/key channels.
///
/// Without a `factor` this is the fixed-query model: `q = mu_q` and
/// `k = mu_k + sigma ⊙ ε`. With a `2d × 2d` factor `F`, `[q; k] = [mu_q; mu_k] + F ε`
/// and the cross-covariance is `σᵢⱼ = (F Fᵀ)[i, d + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyModel {
    pub mu_q: Vec<f64>,
    pub mu_k: Vec<f64>,
    pub sigma: Vec<f64>,
    pub factor: Option<Array2<f64>>,
}

impl KeyModel {
    pub fn zero(d: usize) -> Self {
        Self { mu_q: vec![0.0; d], mu_k: vec![0.0; d], sigma: vec![0.0; d], factor: None }
    }

    /// Seeded model with means in `[-1, 1)` and a lower-triangular factor
    /// with entries in `[-0.5, 0.5)`, so queries and keys are correlated.
    pub fn random(d: usize, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mu_q = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mu_k = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let factor = Array2::from_shape_fn((2 * d, 2 * d), |(i, j)| if j <= i { r.gen_range(-0.5..0.5) } else { 0.0 });
        Self { mu_q, mu_k, sigma: vec![0.0; d], factor: Some(factor) }
    }

    pub fn dim(&self) -> usize {
        self.mu_k.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d % 2 != 0 {
            return Err(Error::Shape(format!("model dim {d} must be even and positive")));
        }
        if self.mu_q.len() != d || self.sigma.len() != d {
            return Err(Error::Shape("mu_q, mu_k and sigma must share one length".into()));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if let Some(f) = &self.factor {
            if f.dim() != (2 * d, 2 * d) {
                return Err(Error::Shape(format!("factor must be {0} x {0}", 2 * d)));
            }
        }
        Ok(())
    }

    /// `σᵢⱼ = Cov(qᵢ, kⱼ)`.
    pub fn cross_cov(&self, i: usize, j: usize) -> f64 {
        let d = self.dim();
        match &self.factor {
            Some(f) => f.row(i).dot(&f.row(d + j)),
            None => 0.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, q: &mut [f64], k: &mut [f64]) {
        let d = self.dim();
        match &self.factor {
            None => {
                q.copy_from_slice(&self.mu_q);
                for i in 0..d {
                    let e: f64 = StandardNormal.sample(rng);
                    k[i] = self.mu_k[i] + self.sigma[i] * e;
                }
            }
            Some(f) => {
                let eps: Array1<f64> = (0..2 * d).map(|_| StandardNormal.sample(rng)).collect();
                let x = f.dot(&eps);
                for i in 0..d {
                    q[i] = self.mu_q[i] + x[i];
                    k[i] = self.mu_k[i] + x[d + i];
                }
            }
        }
    }
}

fn partner(i: usize, d: usize) -> usize {
    (i + d / 2) % d
}

/// Position-independent coefficients `(Aᵢ, Bᵢ)` of the cosine and sine terms.
pub fn coefficients(model: &KeyModel) -> (Vec<f64>, Vec<f64>) {
    let d = model.dim();
    let a = (0..d).map(|i| model.mu_q[i] * model.mu_k[i] + model.cross_cov(i, i)).collect();
    let b = (0..d)
        .map(|i| {
            let p = partner(i, d);
            model.mu_q[i] * model.mu_k[p] + model.cross_cov(i, p)
        })
        .collect();
    (a, b)
}

/// `(φᵢ(δ), ψᵢ(δ))` for every channel.
pub fn basis(delta: i64, d: usize, theta_base: f64) -> (Vec<f64>, Vec<f64>) {
    let freqs = frequencies(d, theta_base);
    let half = d / 2;
    (0..d)
        .map(|i| {
            let angle = delta as f64 * freqs[i % half];
            let sign = if i >= half { -1.0 } else { 1.0 };
            (angle.cos(), sign * angle.sin())
        })
        .unzip()
}

/// Closed-form `E[z(n, m)]` for `delta = n − m`.
pub fn expected_score(delta: i64, model: &KeyModel, theta_base: f64) -> Result<f64> {
    model.validate()?;
    let (a, b) = coefficients(model);
    let (phi, psi) = basis(delta, model.dim(), theta_base);
    Ok((0..model.dim()).map(|i| phi[i] * a[i] + psi[i] * b[i]).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    /// standard error of the mean
    pub se: f64,
    pub trials: usize,
}

pub const MIN_TRIALS: usize = 1000;
const CHUNK: usize = 1024;

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Self) -> Self {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Self { n, mean: self.mean + d * o.n / n, m2: self.m2 + o.m2 + d * d * self.n * o.n / n }
    }
}

fn rotate(x: &[f64], cos: &[f64], sin: &[f64], out: &mut [f64]) {
    let h = x.len() / 2;
    for i in 0..h {
        out[i] = x[i] * cos[i] - x[i + h] * sin[i];
        out[i + h] = x[i] * sin[i] + x[i + h] * cos[i];
    }
}

/// Monte Carlo mean of `RoPE(q, n) · RoPE(k, m)` over the model.
///
/// Trials run in fixed chunks of 1024, each with its own stream of the
/// seeded generator, merged in chunk order: the result does not depend on
/// how many threads evaluate the chunks.
pub fn monte_carlo_score(n: usize, m: usize, model: &KeyModel, theta_base: f64, trials: usize, seed: u64) -> Result<McEstimate> {
    model.validate()?;
    if trials < MIN_TRIALS {
        return Err(Error::Config(format!("Monte Carlo needs at least {MIN_TRIALS} trials, got {trials}")));
    }
    let d = model.dim();
    let freqs = frequencies(d, theta_base);
    let trig = |p: usize| -> (Vec<f64>, Vec<f64>) { freqs.iter().map(|t| ((p as f64 * t).cos(), (p as f64 * t).sin())).unzip() };
    let (cn, sn) = trig(n);
    let (cm, sm) = trig(m);
    let chunks = trials.div_ceil(CHUNK);
    let moments: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(trials - c * CHUNK);
            let (mut q, mut k, mut qr, mut kr) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut mo = Moments::default();
            for _ in 0..count {
                model.sample(&mut rng, &mut q, &mut k);
                rotate(&q, &cn, &sn, &mut qr);
                rotate(&k, &cm, &sm, &mut kr);
                mo.push(qr.iter().zip(&kr).map(|(a, b)| a * b).sum());
            }
            mo
        })
        .collect();
    let total = moments.into_iter().fold(Moments::default(), Moments::merge);
    let var = if total.n > 1.0 { (total.m2 / (total.n - 1.0)).max(0.0) } else { 0.0 };
    Ok(McEstimate { mean: total.mean, se: (var / total.n).sqrt(), trials })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandProfile {
    /// `expected[δ]` for `δ = 0..=max_delta`
    pub expected: Vec<f64>,
    /// interior local maxima of the curve
    pub band_centers: Vec<usize>,
}

pub fn band_profile(model: &KeyModel, theta_base: f64, max_delta: usize) -> Result<BandProfile> {
    if max_delta == 0 {
        return Err(Error::Config("max_delta must be at least 1".into()));
    }
    let expected = (0..=max_delta).map(|d| expected_score(d as i64, model, theta_base)).collect::<Result<Vec<_>>>()?;
    let band_centers = (1..max_delta).filter(|&i| expected[i] > expected[i - 1] && expected[i] >= expected[i + 1]).collect();
    Ok(BandProfile { expected, band_centers })
}

/// Bound on `|E(δ+1) − 2E(δ) + E(δ−1)|`: `Σᵢ θᵢ² (|Aᵢ| + |Bᵢ|)`.
pub fn second_difference_bound(model: &KeyModel, theta_base: f64) -> f64 {
    let d = model.dim();
    let freqs = frequencies(d, theta_base);
    let (a, b) = coefficients(model);
    (0..d).map(|i| freqs[i % (d / 2)].powi(2) * (a[i].abs() + b[i].abs())).sum()
}

/// Per-key attention received relative to uniform causal attention:
/// for column `m`, the mean over rows `n ≥ m` of `(n + 1) · a(n, m)`.
/// Keys and queries are drawn from the model and rotated by position.
pub fn column_scores(model: &KeyModel, seq_len: usize, theta_base: f64, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let d = model.dim();
    let freqs = frequencies(d, theta_base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut q, mut k) = (vec![0.0; d], vec![0.0; d]);
    let mut qs = Vec::with_capacity(seq_len);
    let mut ks = Vec::with_capacity(seq_len);
    for p in 0..seq_len {
        model.sample(&mut rng, &mut q, &mut k);
        let (c, s): (Vec<f64>, Vec<f64>) = freqs.iter().map(|t| ((p as f64 * t).cos(), (p as f64 * t).sin())).unzip();
        let (mut qr, mut kr) = (vec![0.0; d], vec![0.0; d]);
        rotate(&q, &c, &s, &mut qr);
        rotate(&k, &c, &s, &mut kr);
        qs.push(qr);
        ks.push(kr);
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut scores = vec![0.0; seq_len];
    for n in 0..seq_len {
        let logits: Vec<f64> = (0..=n).map(|m| qs[n].iter().zip(&ks[m]).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        for (m, x) in logits.iter().enumerate() {
            scores[m] += (n + 1) as f64 * (x - max).exp() / denom;
        }
    }
    Ok(scores.iter().enumerate().map(|(m, s)| s / (seq_len - m) as f64).collect())
}
