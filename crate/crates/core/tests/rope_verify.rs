use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsring_core::rope::{frequencies, rope_vector};
use vsring_core::rope_verify::*;

const BASE: f64 = 10_000.0;

fn random_model(d: usize, seed: u64, correlated: bool) -> KeyModel {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let factor = correlated.then(|| {
        // lower triangular, so the joint covariance is F Fᵀ
        Array2::from_shape_fn((2 * d, 2 * d), |(i, j)| if j <= i { r.gen_range(-0.5..0.5) } else { 0.0 })
    });
    KeyModel {
        mu_q: (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
        mu_k: (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
        sigma: (0..d).map(|_| r.gen_range(0.0..1.0)).collect(),
        factor,
    }
}

#[test]
fn closed_form_matches_monte_carlo() {
    for (seed, correlated) in [(1, false), (2, true), (3, true)] {
        let m = random_model(8, seed, correlated);
        for (n, k) in [(5, 5), (40, 3), (1000, 7), (7, 1000)] {
            let mc = monte_carlo_score(n, k, &m, BASE, 20_000, seed).unwrap();
            let exact = expected_score(n as i64 - k as i64, &m, BASE).unwrap();
            assert!((mc.mean - exact).abs() <= 3.0 * mc.se + 1e-12, "n={n} m={k}: {} vs {exact} (se {})", mc.mean, mc.se);
        }
    }
}

#[test]
fn score_depends_only_on_offset() {
    // for fixed q and k the rotated product is a function of n − m
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let q: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
    let dot = |n, m| -> f64 {
        let (a, b) = (rope_vector(&q, n, BASE).unwrap(), rope_vector(&k, m, BASE).unwrap());
        a.iter().zip(&b).map(|(x, y)| x * y).sum()
    };
    for shift in [1, 17, 500] {
        assert!((dot(30, 12) - dot(30 + shift, 12 + shift)).abs() < 1e-10);
    }
}

#[test]
fn translated_pairs_agree_statistically() {
    let m = random_model(8, 5, true);
    let a = monte_carlo_score(20, 10, &m, BASE, 10_000, 1).unwrap();
    let b = monte_carlo_score(520, 510, &m, BASE, 10_000, 2).unwrap();
    assert!((a.mean - b.mean).abs() <= 3.0 * (a.se.powi(2) + b.se.powi(2)).sqrt());
}

#[test]
fn monte_carlo_is_reproducible() {
    let m = random_model(8, 6, true);
    let a = monte_carlo_score(3, 1, &m, BASE, 5_000, 9).unwrap();
    let b = monte_carlo_score(3, 1, &m, BASE, 5_000, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_pair_gives_a_cosine() {
    let d = 8;
    let i = 2;
    let mut m = KeyModel::zero(d);
    m.mu_q[i] = 1.5;
    m.mu_k[i] = 2.0;
    let theta = frequencies(d, BASE)[i];
    for delta in [0i64, 1, 10, 333, -50] {
        let want = 3.0 * (delta as f64 * theta).cos();
        assert!((expected_score(delta, &m, BASE).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn partner_channel_gives_a_sine() {
    // q on the lower half, k on its partner: E = a·b·sin(δθ)
    let d = 8;
    let mut m = KeyModel::zero(d);
    m.mu_q[1] = 1.0;
    m.mu_k[5] = 1.0;
    let theta = frequencies(d, BASE)[1];
    for delta in [1i64, 7, 40] {
        assert!((expected_score(delta, &m, BASE).unwrap() - (delta as f64 * theta).sin()).abs() < 1e-12);
    }
}

#[test]
fn expectation_is_smooth_in_offset() {
    for seed in 0..5 {
        let m = random_model(16, seed, true);
        let bound = second_difference_bound(&m, BASE);
        let e: Vec<f64> = (0..200).map(|d| expected_score(d, &m, BASE).unwrap()).collect();
        for w in e.windows(3) {
            assert!((w[2] - 2.0 * w[1] + w[0]).abs() <= bound + 1e-12);
        }
    }
}

#[test]
fn band_profile_marks_local_maxima() {
    let m = random_model(16, 8, false);
    let p = band_profile(&m, BASE, 256).unwrap();
    for &c in &p.band_centers {
        assert!(p.expected[c] >= p.expected[c - 1] && p.expected[c] >= p.expected[c + 1]);
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn outlier_channel_produces_vertical_lines() {
    let d = 16;
    let lo = d / 2 - 1;
    let mut m = KeyModel { mu_q: vec![0.2; d], mu_k: vec![0.2; d], sigma: vec![0.3; d], factor: None };
    m.mu_q[lo] = 3.0;
    m.sigma[lo] = 3.0;
    let scores = column_scores(&m, 256, BASE, 1).unwrap();
    let top = scores.iter().copied().fold(0.0, f64::max);
    assert!(top >= 5.0 * median(&scores), "top {top} median {}", median(&scores));

    let plain = KeyModel { mu_q: vec![0.2; d], mu_k: vec![0.2; d], sigma: vec![0.3; d], factor: None };
    let scores = column_scores(&plain, 256, BASE, 1).unwrap();
    assert!(scores.iter().copied().fold(0.0, f64::max) < 5.0 * median(&scores));
}
