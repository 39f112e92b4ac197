//! Mechanisms for a platform that does not know users' privacy valuations.
//!
//! Two schemes are provided. [`vcg_prices`] pays each user the externality
//! their report imposes on the others' surplus, which makes truthful reporting
//! optimal. [`run_optimal_mechanism`] is the platform-optimal scheme: it
//! allocates by the rent-adjusted objective
//!
//! ```text
//! Σ_i (1 − Φ_i(v_i)) I_i(a) + Φ_i(v_i) I_i(a_{-i}, a_i = 0)
//! ```
//!
//! and pays each user the envelope integral of their attributable leakage
//! `g_i(x) = I_i(a(x, v_{-i})) − I_i(a_{-i}(x, v_{-i}), a_i = 0)`:
//!
//! ```text
//! p_i(v) = ∫_{v_i}^{v_max} g_i(x) dx + v_i g_i(v_i)
//! ```
//!
//! The printed form of this payment rule has unbalanced parentheses; the
//! reading above (integral from the user's own report) is the one under which
//! a user reporting `v_max` is paid exactly `v_max g_i(v_max)`.

mod distribution;
mod ic;
mod montecarlo;

pub use distribution::{ValueDistribution, REGULARITY_GRID};
pub use ic::{incentive_compatibility_test, IcReport, IcWitness, MechanismKind, DEFAULT_GRID_POINTS, IC_MAX_USERS, IC_TOL};
pub use montecarlo::{
    expected_platform_payoff, expected_platform_payoff_quadrature, Estimator, ExpectedPayoff, QUADRATURE_MAX_USERS,
    QUADRATURE_POINTS, SHARD_SIZE,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{rent_adjusted_objective, KnownValueInstance};
use crate::gaussian::{GaussianMarket, Leakage, LeakageTable, TABLE_MAX_USERS};
use crate::profile::ActionProfile;
use crate::search::{ProfileSpace, SolverOptions, TableCache, TieBreak};
use crate::welfare;

/// Equal-width segments scanned for allocation changes in the payment
/// integral.
pub const PAYMENT_SEGMENTS: usize = 256;
/// Width at which bisection stops refining an allocation breakpoint.
pub const BREAKPOINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BayesianInstance {
    market: GaussianMarket,
    distributions: Vec<ValueDistribution>,
    table: TableCache,
}

impl BayesianInstance {
    pub fn new(market: GaussianMarket, distributions: Vec<ValueDistribution>) -> Result<Self> {
        if distributions.len() != market.n() {
            return Err(Error::DimensionMismatch { expected: market.n(), found: distributions.len() });
        }
        let distributions = distributions.into_iter().map(ValueDistribution::validate).collect::<Result<_>>()?;
        Ok(Self { market, distributions, table: TableCache::default() })
    }

    pub fn market(&self) -> &GaussianMarket {
        &self.market
    }

    pub fn distributions(&self) -> &[ValueDistribution] {
        &self.distributions
    }

    pub fn n(&self) -> usize {
        self.market.n()
    }

    pub fn leakage_table(&self) -> Result<&LeakageTable> {
        self.table.get(&self.market)
    }

    fn source(&self, space: &ProfileSpace) -> Result<&dyn Leakage> {
        Ok(match space {
            ProfileSpace::Exhaustive(_) => self.leakage_table()?,
            ProfileSpace::Blocks(_) => &self.market,
        })
    }

    pub fn virtual_values(&self, reports: &[f64]) -> Result<Vec<f64>> {
        self.check_reports(reports)?;
        self.distributions.iter().zip(reports).map(|(d, &v)| d.virtual_value(v)).collect()
    }

    fn check_reports(&self, reports: &[f64]) -> Result<()> {
        if reports.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), found: reports.len() });
        }
        Ok(())
    }

    /// The same market with `values` taken as known valuations.
    pub fn with_values(&self, values: Vec<f64>) -> Result<KnownValueInstance> {
        KnownValueInstance::new(self.market.clone(), values)
    }
}

/// Which payment the optimal mechanism makes. `WithoutReportTerm` drops
/// `v_i g_i(v_i)`; it exists as a negative control for the incentive checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentRule {
    #[default]
    Envelope,
    WithoutReportTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VcgOutcome {
    pub allocation: ActionProfile,
    pub prices: Vec<f64>,
}

/// Truth-eliciting prices for reported valuations (the instance's values):
///
/// ```text
/// p_i(v) = [I_i(a(v)) + Σ_{j≠i} (1 − v_j) I_j(a(v))] − min_a [I_i(a) + Σ_{j≠i} (1 − v_j) I_j(a)]
/// ```
///
/// with `a(v)` the surplus-maximizing profile for the reports.
pub fn vcg_prices(reported: &KnownValueInstance, opts: &SolverOptions) -> Result<VcgOutcome> {
    let n = reported.n();
    if n > TABLE_MAX_USERS {
        return Err(Error::TooLarge { what: "VCG pricing", n, max: TABLE_MAX_USERS });
    }
    let exhaustive = SolverOptions { symmetry: None, ..opts.clone() };
    let allocation = welfare::first_best(reported, &exhaustive)?.profile;
    let table = reported.leakage_table()?;
    let values = reported.values();
    // I_i(a) + Σ_{j≠i} (1 − v_j) I_j(a) = SoS(a) + v_i I_i(a).
    let others_welfare = |a: ActionProfile, i: usize| {
        let row = table.row(a);
        let sos: f64 = values.iter().zip(row).map(|(v, l)| (1.0 - v) * l).sum();
        sos + values[i] * row[i]
    };
    let prices = (0..n)
        .map(|i| {
            let floor = ActionProfile::all(n).map(|a| others_welfare(a, i)).fold(f64::INFINITY, f64::min);
            (others_welfare(allocation, i) - floor).max(0.0)
        })
        .collect();
    Ok(VcgOutcome { allocation, prices })
}

const SEQUENTIAL_MAX: usize = 10;

/// Allocation rule of the optimal mechanism for fixed reports of all but
/// one user; reused across the many evaluations of a payment integral.
struct AllocationRule<'a> {
    src: &'a dyn Leakage,
    space: ProfileSpace,
    tol: f64,
    tie: TieBreak,
}

impl<'a> AllocationRule<'a> {
    fn new(instance: &'a BayesianInstance, opts: &SolverOptions) -> Result<Self> {
        let space = opts.space(&instance.market, "optimal allocation")?;
        Ok(Self { src: instance.source(&space)?, space, tol: opts.tie_tol, tie: opts.tie(TieBreak::Greatest) })
    }

    fn allocate(&self, phis: &[f64]) -> Result<(ActionProfile, f64)> {
        if let ProfileSpace::Blocks(blocks) = &self.space {
            blocks.validate_weights(phis, "virtual value")?;
        }
        let search = match &self.space {
            ProfileSpace::Exhaustive(n) if *n <= SEQUENTIAL_MAX => exhaustive_argmax(self.src, *n, phis, self.tie, self.tol),
            space => {
                let s = space.argmax(self.tie, self.tol, |a| rent_adjusted_objective(self.src, phis, a));
                (s.best, s.value)
            }
        };
        Ok(search)
    }

    /// `I_i(a) − I_i(a_{-i}, a_i = 0)` for sharers, zero otherwise.
    fn attributable(&self, a: ActionProfile, i: usize) -> f64 {
        if a.shares(i) {
            self.src.leakage_at(a, i) - self.src.leakage_at(a.with(i, false), i)
        } else {
            0.0
        }
    }
}

/// Sequential argmax with the same tie rule as `ProfileSpace::argmax`;
/// cheaper for the many small allocations evaluated inside payment integrals
/// and Monte Carlo loops.
pub(crate) fn exhaustive_argmax(
    src: &dyn Leakage,
    n: usize,
    phis: &[f64],
    tie: TieBreak,
    tol: f64,
) -> (ActionProfile, f64) {
    let scored: Vec<(ActionProfile, f64)> =
        ActionProfile::all(n).map(|a| (a, rent_adjusted_objective(src, phis, a))).collect();
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let tied = scored.into_iter().filter(|s| s.1 >= max - tol);
    match tie {
        TieBreak::Smallest => tied.min_by_key(|s| s.0),
        TieBreak::Greatest => tied.max_by_key(|s| s.0),
    }
    .expect("at least one profile")
}

/// Optimal-mechanism allocation for the reported valuations; ties go to the
/// lexicographically greatest profile.
pub fn bayesian_allocation(instance: &BayesianInstance, reports: &[f64], opts: &SolverOptions) -> Result<ActionProfile> {
    let phis = instance.virtual_values(reports)?;
    Ok(AllocationRule::new(instance, opts)?.allocate(&phis)?.0)
}

/// Payment to user `i` under the optimal mechanism.
pub fn bayesian_payment(
    instance: &BayesianInstance,
    reports: &[f64],
    i: usize,
    rule: PaymentRule,
    opts: &SolverOptions,
) -> Result<f64> {
    if i >= instance.n() {
        return Err(Error::IndexOutOfRange { index: i, n: instance.n() });
    }
    let phis = instance.virtual_values(reports)?;
    let alloc = AllocationRule::new(instance, opts)?;
    payment_with(&alloc, instance, &phis, reports[i], i, rule)
}

fn payment_with(
    alloc: &AllocationRule<'_>,
    instance: &BayesianInstance,
    phis: &[f64],
    report: f64,
    i: usize,
    rule: PaymentRule,
) -> Result<f64> {
    let dist = &instance.distributions[i];
    let v_max = dist.v_max();
    let mut phis = phis.to_vec();
    let mut allocate_at = |x: f64| -> Result<ActionProfile> {
        phis[i] = dist.virtual_value(x)?;
        Ok(alloc.allocate(&phis)?.0)
    };
    let at_report = allocate_at(report)?;
    let mut integral = 0.0;
    if v_max > report {
        let width = (v_max - report) / PAYMENT_SEGMENTS as f64;
        let (mut x0, mut a0) = (report, at_report);
        for k in 1..=PAYMENT_SEGMENTS {
            let x1 = if k == PAYMENT_SEGMENTS { v_max } else { report + width * k as f64 };
            let a1 = allocate_at(x1)?;
            integral += integrate_piece(alloc, i, &mut allocate_at, (x0, a0), (x1, a1))?;
            (x0, a0) = (x1, a1);
        }
    }
    let report_term = report * alloc.attributable(at_report, i);
    Ok(integral
        + match rule {
            PaymentRule::Envelope => report_term,
            PaymentRule::WithoutReportTerm => 0.0,
        })
}

/// Integrates the piecewise-constant `g_i` over `[lo, hi]`, bisecting while
/// the endpoint allocations differ.
fn integrate_piece(
    alloc: &AllocationRule<'_>,
    i: usize,
    allocate_at: &mut impl FnMut(f64) -> Result<ActionProfile>,
    (lo, a_lo): (f64, ActionProfile),
    (hi, a_hi): (f64, ActionProfile),
) -> Result<f64> {
    if a_lo == a_hi {
        return Ok((hi - lo) * alloc.attributable(a_lo, i));
    }
    if hi - lo <= BREAKPOINT_TOL {
        return Ok((hi - lo) * 0.5 * (alloc.attributable(a_lo, i) + alloc.attributable(a_hi, i)));
    }
    let mid = 0.5 * (lo + hi);
    let a_mid = allocate_at(mid)?;
    Ok(integrate_piece(alloc, i, allocate_at, (lo, a_lo), (mid, a_mid))?
        + integrate_piece(alloc, i, allocate_at, (mid, a_mid), (hi, a_hi))?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismOutcome {
    pub reports: Vec<f64>,
    pub virtual_values: Vec<f64>,
    pub allocation: ActionProfile,
    pub payments: Vec<f64>,
    pub leakage: Vec<f64>,
    /// `Σ_i I_i(a) − Σ_{i: a_i = 1} p_i`.
    pub platform_payoff: f64,
    /// The rent-adjusted objective at the allocation.
    pub objective: f64,
}

/// Allocation, payments and realized platform payoff for one report vector.
pub fn run_optimal_mechanism(
    instance: &BayesianInstance,
    reports: &[f64],
    rule: PaymentRule,
    opts: &SolverOptions,
) -> Result<MechanismOutcome> {
    let phis = instance.virtual_values(reports)?;
    let alloc = AllocationRule::new(instance, opts)?;
    let (allocation, objective) = alloc.allocate(&phis)?;
    let payments = (0..instance.n())
        .map(|i| payment_with(&alloc, instance, &phis, reports[i], i, rule))
        .collect::<Result<Vec<_>>>()?;
    let leakage = alloc.src.leakage_of(allocation).into_owned();
    let platform_payoff =
        leakage.iter().sum::<f64>() - allocation.sharers().map(|i| payments[i]).sum::<f64>();
    Ok(MechanismOutcome {
        reports: reports.to_vec(),
        virtual_values: phis,
        allocation,
        payments,
        leakage,
        platform_payoff,
        objective,
    })
}
