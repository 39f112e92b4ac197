//! Property suites run against a scenario.

use serde::Serialize;

use super::scenario::{Population, Scenario};
use crate::error::{Error, Result};
use crate::game::{
    enumerate_user_equilibria, greatest_user_equilibrium, is_user_equilibrium, least_user_equilibrium,
    platform_payoff, stackelberg_equilibrium, supporting_prices, KnownValueInstance, PriceVector,
    AUDIT_ENUMERATION_MAX,
};
use crate::gaussian::{PropertyReport, EXHAUSTIVE_CHECK_MAX};
use crate::mechanism::{
    bayesian_allocation, expected_platform_payoff, expected_platform_payoff_quadrature, incentive_compatibility_test,
    run_optimal_mechanism, vcg_prices, BayesianInstance, Estimator, MechanismKind, PaymentRule, ValueDistribution,
    DEFAULT_GRID_POINTS, IC_MAX_USERS, QUADRATURE_MAX_USERS,
};
use crate::profile::ActionProfile;
use crate::search::SolverOptions;
use crate::welfare::{first_best, surplus_upper_bound, verify_first_best_condition};

/// Slack for comparisons between exactly computed quantities.
pub const SUITE_TOL: f64 = 1e-9;
/// Tolerance for block-symmetric against full enumeration.
pub const BLOCK_AGREEMENT_TOL: f64 = 1e-10;
/// Draws used for the realized-payoff identity check.
pub const IDENTITY_SAMPLES: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Structure,
    Equilibrium,
    Mechanism,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structure" => Ok(Suite::Structure),
            "equilibrium" => Ok(Suite::Equilibrium),
            "mechanism" => Ok(Suite::Mechanism),
            _ => Err(Error::InvalidArgument(format!("unknown suite `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SuiteOptions {
    /// Run the mechanism checks with the report term dropped from payments.
    pub corrupt_payment: bool,
}

struct Checks(Vec<CheckOutcome>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.0.push(CheckOutcome { name: name.into(), passed, detail: detail.into() });
    }
}

pub fn run_property_suite(scenario: &Scenario, suite: Suite, options: SuiteOptions) -> Result<SuiteReport> {
    let mut checks = Checks(Vec::new());
    match suite {
        Suite::Structure => structure(scenario, &mut checks)?,
        Suite::Equilibrium => equilibrium(scenario, &mut checks)?,
        Suite::Mechanism => mechanism(scenario, options, &mut checks)?,
    }
    let passed = checks.0.iter().all(|c| c.passed);
    Ok(SuiteReport { suite, checks: checks.0, passed })
}

fn property_detail(r: &PropertyReport) -> String {
    match &r.witness {
        None => format!("{:?}, {} pairs", r.mode, r.pairs_checked),
        Some(w) => format!("{:?}, witness {w:?}", r.mode),
    }
}

fn structure(scenario: &Scenario, checks: &mut Checks) -> Result<()> {
    let market = &scenario.market;
    let mono = market.check_monotonicity()?;
    checks.push("monotonicity", mono.holds, property_detail(&mono));
    let sub = market.check_submodularity()?;
    checks.push("submodularity", sub.holds, property_detail(&sub));
    if market.n() <= EXHAUSTIVE_CHECK_MAX {
        let mut worst = 0.0f64;
        for a in ActionProfile::all(market.n()) {
            let sigma = market.conditional_covariance_matrix(a)?;
            let leak = market.leakage(a)?;
            for i in 0..market.n() {
                worst = worst.max((market.variance(i) - sigma[(i, i)] - leak[i]).abs());
            }
        }
        checks.push("leakage_equals_variance_reduction", worst <= SUITE_TOL, format!("max deviation {worst:e}"));
    }
    Ok(())
}

fn known(scenario: &Scenario) -> Result<KnownValueInstance> {
    match &scenario.population {
        Population::Known(_) => scenario.known_instance(),
        Population::Bayesian(_) => Err(Error::scenario("mode", "the equilibrium suite needs known valuations")),
    }
}

fn equilibrium(scenario: &Scenario, checks: &mut Checks) -> Result<()> {
    let instance = known(scenario)?;
    let opts = scenario.solver_options();
    let n = instance.n();
    let report = stackelberg_equilibrium(&instance, &opts)?;
    let out = &report.outcome;

    let nonneg = out.prices.as_slice().iter().all(|&p| p >= 0.0);
    checks.push("prices_non_negative", nonneg, format!("{:?}", out.prices.as_slice()));
    let supported = is_user_equilibrium(&instance, &out.prices, out.profile)?;
    checks.push("chosen_profile_is_user_equilibrium", supported, out.profile.to_string());

    // Lattice: least and greatest equilibria bracket every equilibrium.
    let mut price_points = vec![PriceVector::zeros(n), out.prices.clone()];
    let top = instance.values().iter().cloned().fold(0.0, f64::max);
    price_points.push(PriceVector::uniform(n, 0.5 * top)?);
    let mut lattice_ok = true;
    let mut lattice_detail = String::new();
    for p in &price_points {
        let lo = least_user_equilibrium(&instance, p)?;
        let hi = greatest_user_equilibrium(&instance, p)?;
        let mut ok = lo.is_below(&hi) && is_user_equilibrium(&instance, p, lo)? && is_user_equilibrium(&instance, p, hi)?;
        if n <= AUDIT_ENUMERATION_MAX {
            for a in enumerate_user_equilibria(&instance, p)? {
                ok &= lo.is_below(&a) && a.is_below(&hi);
            }
        }
        if !ok && lattice_ok {
            lattice_detail = format!("prices {:?}: least {lo}, greatest {hi}", p.as_slice());
        }
        lattice_ok &= ok;
    }
    checks.push("equilibrium_lattice", lattice_ok, lattice_detail);

    if n <= AUDIT_ENUMERATION_MAX && opts.symmetry.is_none() {
        // Stackelberg optimality: no profile pays more at its own supporting prices.
        let mut best_alt = (out.profile, out.platform_payoff);
        for a in ActionProfile::all(n) {
            let u = platform_payoff(&instance, a, &supporting_prices(&instance, a)?)?;
            if u > best_alt.1 {
                best_alt = (a, u);
            }
        }
        let gap = best_alt.1 - out.platform_payoff;
        checks.push(
            "stackelberg_optimal",
            gap <= SUITE_TOL,
            format!("best alternative {} exceeds by {gap:e}", best_alt.0),
        );
    }

    if let Some(blocks) = &scenario.blocks {
        if n <= AUDIT_ENUMERATION_MAX {
            let full = stackelberg_equilibrium(&instance, &SolverOptions { symmetry: None, ..opts.clone() })?;
            let reduced = stackelberg_equilibrium(&instance, &SolverOptions::with_blocks(blocks.clone()))?;
            let diff = (full.outcome.platform_payoff - reduced.outcome.platform_payoff).abs();
            checks.push("block_reduction_agrees", diff <= BLOCK_AGREEMENT_TOL, format!("payoff difference {diff:e}"));
        }
    }

    if n <= crate::gaussian::TABLE_MAX_USERS || opts.symmetry.is_some() {
        let fb = first_best(&instance, &opts)?;
        let cond = verify_first_best_condition(&instance, fb.profile)?;
        let detail = cond.users.iter().find(|u| !u.consistent).map(|u| format!("{u:?}")).unwrap_or_default();
        checks.push("first_best_condition", cond.consistent, detail);
        let bound = surplus_upper_bound(&instance, instance.values())?;
        checks.push(
            "surplus_bound",
            out.social_surplus <= bound + SUITE_TOL,
            format!("surplus {} vs bound {bound}", out.social_surplus),
        );
    }
    Ok(())
}

/// Reports between 0 and twice the largest value, for externality prices in
/// known-value scenarios.
fn report_range(values: &[f64]) -> Result<Vec<ValueDistribution>> {
    let hi = 2.0 * values.iter().cloned().fold(1.0, f64::max);
    values.iter().map(|_| ValueDistribution::uniform(0.0, hi)).collect()
}

fn mechanism(scenario: &Scenario, options: SuiteOptions, checks: &mut Checks) -> Result<()> {
    let opts = SolverOptions { symmetry: None, ..scenario.solver_options() };
    let rule = if options.corrupt_payment { PaymentRule::WithoutReportTerm } else { PaymentRule::Envelope };
    let n = scenario.n();
    if n > IC_MAX_USERS {
        return Err(Error::TooLarge { what: "mechanism suite", n, max: IC_MAX_USERS });
    }
    let (instance, truth) = match &scenario.population {
        Population::Known(v) => (BayesianInstance::new(scenario.market.clone(), report_range(v)?)?, v.clone()),
        Population::Bayesian(d) => {
            let medians = d.iter().map(|d| d.quantile(0.5)).collect();
            (scenario.bayesian_instance()?, medians)
        }
    };

    let vcg = vcg_prices(&instance.with_values(truth.clone())?, &opts)?;
    checks.push("vcg_prices_non_negative", vcg.prices.iter().all(|&p| p >= 0.0), format!("{:?}", vcg.prices));
    let ic = incentive_compatibility_test(&instance, &truth, MechanismKind::Vcg, DEFAULT_GRID_POINTS, rule, &opts)?;
    checks.push("vcg_truthful", ic.passed, format!("max gain {:e}, witness {:?}", ic.max_violation, ic.witness));

    if matches!(scenario.population, Population::Known(_)) {
        return Ok(());
    }

    let ic = incentive_compatibility_test(&instance, &truth, MechanismKind::Optimal, DEFAULT_GRID_POINTS, rule, &opts)?;
    checks.push("optimal_truthful", ic.passed, format!("max gain {:e}, witness {:?}", ic.max_violation, ic.witness));

    // Payments non-negative and own allocation monotone along each user's report grid.
    let mut pay_ok = true;
    let mut mono_ok = true;
    let mut detail = String::new();
    for i in 0..n {
        let (lo, hi) = instance.distributions()[i].support();
        let mut previous: Option<bool> = None;
        for k in 0..=20 {
            let mut reports = truth.clone();
            reports[i] = lo + (hi - lo) * k as f64 / 20.0;
            let out = run_optimal_mechanism(&instance, &reports, rule, &opts)?;
            if out.payments[i] < -SUITE_TOL {
                pay_ok = false;
                detail = format!("user {i} report {}: payment {}", reports[i], out.payments[i]);
            }
            let shares = bayesian_allocation(&instance, &reports, &opts)?.shares(i);
            if previous == Some(false) && shares {
                mono_ok = false;
                detail = format!("user {i} starts sharing again at report {}", reports[i]);
            }
            previous = Some(shares);
        }
    }
    checks.push("payments_non_negative", pay_ok, detail.clone());
    checks.push("allocation_monotone_in_report", mono_ok, detail);

    let o = &scenario.options;
    let expected = if n <= QUADRATURE_MAX_USERS {
        expected_platform_payoff_quadrature(&instance, &opts)?
    } else {
        expected_platform_payoff(&instance, o.samples, o.seed, Estimator::VirtualSurplus, &opts)?
    };
    let realized = expected_platform_payoff(&instance, IDENTITY_SAMPLES, o.seed, Estimator::Realized, &opts)?;
    let se = realized.std_error.unwrap_or(0.0) + expected.std_error.unwrap_or(0.0);
    let gap = (realized.mean - expected.mean).abs();
    checks.push(
        "payoff_identity",
        gap <= 3.0 * se + SUITE_TOL,
        format!("realized {} vs expected {} (3 s.e. = {})", realized.mean, expected.mean, 3.0 * se),
    );
    Ok(())
}
