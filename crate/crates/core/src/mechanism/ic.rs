//! Grid search for profitable misreports.

use serde::Serialize;

use super::{payment_with, vcg_prices, AllocationRule, BayesianInstance, PaymentRule};
use crate::error::{Error, Result};
use crate::search::SolverOptions;

/// Largest market the misreport grid accepts.
pub const IC_MAX_USERS: usize = 4;
/// Gain from misreporting that counts as a violation.
pub const IC_TOL: f64 = 1e-7;
pub const DEFAULT_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// Externality prices; payoff `p_i − v_i I_i(a)`.
    Vcg,
    /// Platform-optimal mechanism; payoff `p_i − v_i (I_i(a) − I_i(a_{-i}, a_i = 0))`.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcWitness {
    pub user: usize,
    pub truth: f64,
    pub misreport: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcReport {
    pub kind: MechanismKind,
    pub grid_points: usize,
    pub pairs_checked: u64,
    pub max_violation: f64,
    pub witness: Option<IcWitness>,
    pub passed: bool,
}

/// Evenly spaced grid over the support, endpoints included.
fn support_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if hi <= lo || points < 2 {
        return vec![lo];
    }
    (0..points)
        .map(|k| if k + 1 == points { hi } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 })
        .collect()
}

/// For each user, each true value on a grid over their support and each
/// misreport on the same grid, compares the user's payoff from the misreport
/// with the payoff from telling the truth. The other users report
/// `others` truthfully.
pub fn incentive_compatibility_test(
    instance: &BayesianInstance,
    others: &[f64],
    kind: MechanismKind,
    grid_points: usize,
    rule: PaymentRule,
    opts: &SolverOptions,
) -> Result<IcReport> {
    let n = instance.n();
    if n > IC_MAX_USERS {
        return Err(Error::TooLarge { what: "incentive compatibility grid", n, max: IC_MAX_USERS });
    }
    if others.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: others.len() });
    }
    let opts = SolverOptions { symmetry: None, ..opts.clone() };
    let table = instance.leakage_table()?;
    let mut report = IcReport { kind, grid_points, pairs_checked: 0, max_violation: 0.0, witness: None, passed: true };

    for i in 0..n {
        let (lo, hi) = instance.distributions()[i].support();
        let grid = support_grid(lo, hi, grid_points);
        // Payment and charged leakage for each report; neither depends on the truth.
        let outcomes: Vec<(f64, f64)> = grid
            .iter()
            .map(|&r| {
                let mut reports = others.to_vec();
                reports[i] = r;
                match kind {
                    MechanismKind::Vcg => {
                        let vcg = vcg_prices(&instance.with_values(reports)?, &opts)?;
                        Ok((vcg.prices[i], table.row(vcg.allocation)[i]))
                    }
                    MechanismKind::Optimal => {
                        let phis = instance.virtual_values(&reports)?;
                        let alloc = AllocationRule::new(instance, &opts)?;
                        let a = alloc.allocate(&phis)?.0;
                        Ok((payment_with(&alloc, instance, &phis, r, i, rule)?, alloc.attributable(a, i)))
                    }
                }
            })
            .collect::<Result<_>>()?;
        for (t_idx, &truth) in grid.iter().enumerate() {
            let utility = |(pay, leak): (f64, f64)| pay - truth * leak;
            let honest = utility(outcomes[t_idx]);
            for (r_idx, &misreport) in grid.iter().enumerate() {
                report.pairs_checked += 1;
                let gain = utility(outcomes[r_idx]) - honest;
                if gain > report.max_violation {
                    report.max_violation = gain;
                    report.witness = Some(IcWitness { user: i, truth, misreport, gain });
                }
            }
        }
    }
    report.passed = report.max_violation <= IC_TOL;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianMarket;
    use crate::mechanism::ValueDistribution;

    fn uniform_pair(rho: f64) -> BayesianInstance {
        let u = ValueDistribution::uniform(0.0, 2.0).unwrap();
        BayesianInstance::new(GaussianMarket::equicorrelated(2, rho).unwrap(), vec![u.clone(), u]).unwrap()
    }

    #[test]
    fn grid_includes_both_ends() {
        let g = support_grid(0.0, 2.0, 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 2.0);
        assert!((g[50] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_market_is_truthful() {
        let u = ValueDistribution::uniform(0.0, 1.5).unwrap();
        let inst = BayesianInstance::new(GaussianMarket::diagonal(&[1.0, 2.0]).unwrap(), vec![u.clone(), u]).unwrap();
        let opts = SolverOptions::exhaustive();
        for kind in [MechanismKind::Vcg, MechanismKind::Optimal] {
            let r = incentive_compatibility_test(&inst, &[0.2, 0.9], kind, 41, PaymentRule::Envelope, &opts).unwrap();
            assert!(r.passed, "{kind:?}: {r:?}");
        }
    }

    #[test]
    fn correlated_pair_is_truthful_and_control_is_caught() {
        let inst = uniform_pair(0.5);
        let opts = SolverOptions::exhaustive();
        let ok = incentive_compatibility_test(&inst, &[0.3, 0.3], MechanismKind::Optimal, 101, PaymentRule::Envelope, &opts)
            .unwrap();
        assert!(ok.passed, "{ok:?}");
        let bad = incentive_compatibility_test(
            &inst,
            &[0.3, 0.3],
            MechanismKind::Optimal,
            101,
            PaymentRule::WithoutReportTerm,
            &opts,
        )
        .unwrap();
        assert!(!bad.passed);
        assert!(bad.witness.is_some());
    }

    #[test]
    fn size_cap() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let inst = BayesianInstance::new(GaussianMarket::equicorrelated(5, 0.1).unwrap(), vec![u; 5]).unwrap();
        let r = incentive_compatibility_test(&inst, &[0.5; 5], MechanismKind::Vcg, 11, PaymentRule::Envelope, &SolverOptions::exhaustive());
        assert!(matches!(r, Err(Error::TooLarge { .. })));
    }
}
