//! Expected platform payoff of the optimal mechanism under truthful reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{exhaustive_argmax, run_optimal_mechanism, BayesianInstance, PaymentRule};
use crate::error::{Error, Result};
use crate::gaussian::{Leakage, TABLE_MAX_USERS};
use crate::search::{SolverOptions, TieBreak};

/// Samples drawn from each counter-derived substream.
pub const SHARD_SIZE: usize = 4096;
/// Quantile points per axis in quadrature mode.
pub const QUADRATURE_POINTS: usize = 200;
/// Largest market the tensor-grid quadrature accepts.
pub const QUADRATURE_MAX_USERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Averages `max_a` of the rent-adjusted objective.
    VirtualSurplus,
    /// Runs the mechanism per draw and averages `Σ I_i(a) − Σ p_i`.
    Realized,
    /// Tensor-grid quadrature at quantile midpoints.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedPayoff {
    pub mean: f64,
    /// `None` for quadrature.
    pub std_error: Option<f64>,
    pub samples: u64,
    pub seed: Option<u64>,
    pub estimator: Estimator,
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + delta * other.count as f64 / count as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64,
        }
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2.max(0.0) / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

/// Monte Carlo estimate from `samples` draws. Shard `k` uses a ChaCha8 stream
/// seeded with `seed` and stream number `k`, so the result does not depend on
/// the number of threads.
pub fn expected_platform_payoff(
    instance: &BayesianInstance,
    samples: u64,
    seed: u64,
    estimator: Estimator,
    opts: &SolverOptions,
) -> Result<ExpectedPayoff> {
    let n = instance.n();
    if n > TABLE_MAX_USERS {
        return Err(Error::TooLarge { what: "expected payoff estimation", n, max: TABLE_MAX_USERS });
    }
    if estimator == Estimator::Quadrature {
        return expected_platform_payoff_quadrature(instance, opts);
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let table = instance.leakage_table()?;
    let shards = samples.div_ceil(SHARD_SIZE as u64);
    let per_shard = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let len = (samples - shard * SHARD_SIZE as u64).min(SHARD_SIZE as u64);
            let mut moments = Moments::default();
            let mut reports = vec![0.0; n];
            for _ in 0..len {
                for (r, d) in reports.iter_mut().zip(instance.distributions()) {
                    *r = d.quantile(rng.random::<f64>());
                }
                moments.push(payoff_at(instance, table, &reports, estimator, opts)?);
            }
            Ok(moments)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_shard.into_iter().fold(Moments::default(), Moments::merge);
    Ok(ExpectedPayoff {
        mean: total.mean,
        std_error: Some(total.std_error()),
        samples,
        seed: Some(seed),
        estimator,
    })
}

fn payoff_at(
    instance: &BayesianInstance,
    table: &dyn Leakage,
    reports: &[f64],
    estimator: Estimator,
    opts: &SolverOptions,
) -> Result<f64> {
    match estimator {
        Estimator::Realized => Ok(run_optimal_mechanism(instance, reports, PaymentRule::Envelope, opts)?.platform_payoff),
        _ => {
            let phis = instance.virtual_values(reports)?;
            Ok(exhaustive_argmax(table, instance.n(), &phis, opts.tie(TieBreak::Greatest), opts.tie_tol).1)
        }
    }
}

/// Expected optimal objective by equal-weight quadrature at the quantiles
/// `(k + 1/2) / 200` of each user's distribution; `n ≤ 3`.
pub fn expected_platform_payoff_quadrature(instance: &BayesianInstance, opts: &SolverOptions) -> Result<ExpectedPayoff> {
    let n = instance.n();
    if n > QUADRATURE_MAX_USERS {
        return Err(Error::TooLarge { what: "quadrature", n, max: QUADRATURE_MAX_USERS });
    }
    let table = instance.leakage_table()?;
    let nodes: Vec<Vec<f64>> = instance
        .distributions()
        .iter()
        .map(|d| (0..QUADRATURE_POINTS).map(|k| d.quantile((k as f64 + 0.5) / QUADRATURE_POINTS as f64)).collect())
        .collect();
    let cells = QUADRATURE_POINTS.pow(n as u32);
    let sum = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let mut rest = cell;
            let reports: Vec<f64> = nodes
                .iter()
                .map(|axis| {
                    let x = axis[rest % QUADRATURE_POINTS];
                    rest /= QUADRATURE_POINTS;
                    x
                })
                .collect();
            payoff_at(instance, table, &reports, Estimator::VirtualSurplus, opts)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(ExpectedPayoff {
        mean: sum / cells as f64,
        std_error: None,
        samples: cells as u64,
        seed: None,
        estimator: Estimator::Quadrature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianMarket;
    use crate::mechanism::ValueDistribution;

    fn single_uniform() -> BayesianInstance {
        BayesianInstance::new(
            GaussianMarket::diagonal(&[1.0]).unwrap(),
            vec![ValueDistribution::uniform(0.0, 2.0).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn single_user_closed_form() {
        let inst = single_uniform();
        let opts = SolverOptions::exhaustive();
        let q = expected_platform_payoff_quadrature(&inst, &opts).unwrap();
        assert!((q.mean - 0.0625).abs() < 1e-12, "{}", q.mean);
        let mc = expected_platform_payoff(&inst, 20_000, 7, Estimator::VirtualSurplus, &opts).unwrap();
        let se = mc.std_error.unwrap();
        assert!((mc.mean - 0.0625).abs() < 4.0 * se, "{} ± {se}", mc.mean);
    }

    #[test]
    fn point_masses_are_deterministic() {
        let d = ValueDistribution::piecewise_linear(vec![(0.3, 0.0), (0.3, 1.0)]).unwrap();
        let inst = BayesianInstance::new(GaussianMarket::equicorrelated(2, 0.5).unwrap(), vec![d.clone(), d]).unwrap();
        let opts = SolverOptions::exhaustive();
        let mc = expected_platform_payoff(&inst, 5000, 1, Estimator::VirtualSurplus, &opts).unwrap();
        let direct = run_optimal_mechanism(&inst, &[0.3, 0.3], PaymentRule::Envelope, &opts).unwrap();
        assert_eq!(mc.std_error, Some(0.0));
        assert!((mc.mean - direct.objective).abs() < 1e-15);
    }

    #[test]
    fn seeded_runs_repeat() {
        let inst = single_uniform();
        let opts = SolverOptions::exhaustive();
        let a = expected_platform_payoff(&inst, 10_000, 42, Estimator::VirtualSurplus, &opts).unwrap();
        let b = expected_platform_payoff(&inst, 10_000, 42, Estimator::VirtualSurplus, &opts).unwrap();
        let c = expected_platform_payoff(&inst, 10_000, 43, Estimator::VirtualSurplus, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn merged_moments_match_one_pass() {
        let xs: Vec<f64> = (0..50).map(|k| ((k * 37) % 11) as f64 * 0.3).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..17].iter().for_each(|&x| a.push(x));
        xs[17..].iter().for_each(|&x| b.push(x));
        let merged = a.merge(b);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-10);
    }
}
