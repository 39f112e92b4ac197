//! Shared oracles and instance generators for the integration tests.
#![allow(dead_code)]

use datamarket::mechanism::ValueDistribution;
use datamarket::{ActionProfile, GaussianMarket, KnownValueInstance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `σ_i² − Var(X_i | S_A)` from the joint covariance of `(X_i, S_A)`:
/// the posterior variance is the reciprocal of the leading entry of the
/// joint precision matrix, inverted by LU.
pub fn leakage_oracle(sigma: &DMatrix<f64>, a: ActionProfile, i: usize) -> f64 {
    let shared: Vec<usize> = a.sharers().collect();
    if shared.is_empty() {
        return 0.0;
    }
    let m = shared.len() + 1;
    let idx = |k: usize| if k == 0 { i } else { shared[k - 1] };
    let joint = DMatrix::from_fn(m, m, |r, c| {
        let noise = if r == c && r > 0 { 1.0 } else { 0.0 };
        sigma[(idx(r), idx(c))] + noise
    });
    let precision = joint.lu().try_inverse().expect("joint covariance is positive definite");
    sigma[(i, i)] - 1.0 / precision[(0, 0)]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `B Bᵀ + diag(d)` with Gaussian-ish `B` of random rank and small, possibly
/// zero, diagonal jitter; rescaled to variances in roughly `[0.2, 3]`.
pub fn random_covariance(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let rank = rng.random_range(1..=n);
    let b = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let jitter: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.01..0.5) }).collect();
    let mut sigma = &b * b.transpose();
    for i in 0..n {
        sigma[(i, i)] += jitter[i] + 1e-3;
    }
    let scale: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.7)).collect();
    DMatrix::from_fn(n, n, |i, j| sigma[(i, j)] * scale[i] * scale[j])
}

pub fn random_market(rng: &mut ChaCha8Rng, max_n: usize) -> GaussianMarket {
    let n = rng.random_range(1..=max_n);
    GaussianMarket::new(random_covariance(rng, n)).expect("generator yields valid covariances")
}

pub fn random_known(rng: &mut ChaCha8Rng, max_n: usize, v_max: f64) -> KnownValueInstance {
    let market = random_market(rng, max_n);
    let values = (0..market.n()).map(|_| rng.random_range(0.0..v_max)).collect();
    KnownValueInstance::new(market, values).expect("valid instance")
}

/// Uniform on `[lo, lo + width]` with random bounds.
pub fn random_uniform(rng: &mut ChaCha8Rng) -> ValueDistribution {
    let lo = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..1.0) };
    let width = rng.random_range(0.3..2.5);
    ValueDistribution::uniform(lo, lo + width).expect("valid bounds")
}

/// Brute-force `argmax_a Σ (1 − v_i) I_i(a)`; near-ties go to the
/// lexicographically greatest profile.
pub fn brute_force_first_best(instance: &KnownValueInstance) -> (ActionProfile, f64) {
    let scored: Vec<(ActionProfile, f64)> = ActionProfile::all(instance.n())
        .map(|a| {
            let leak = instance.market().leakage(a).unwrap();
            (a, instance.values().iter().zip(&leak).map(|(v, l)| (1.0 - v) * l).sum())
        })
        .collect();
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scored.into_iter().filter(|s| s.1 >= max - 1e-12).max_by_key(|s| s.0).unwrap()
}
