//! The data-sharing game with known privacy valuations.
//!
//! Users best-respond to posted prices; leakage is submodular, so sharing
//! decisions are strategic complements and the user equilibria at any price
//! vector form a complete lattice. The platform leads: it picks the profile
//! it wants and offers each sharer exactly the price that makes sharing a
//! (weak) best response.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMarket, Leakage, LeakageTable, TABLE_MAX_USERS};
use crate::profile::ActionProfile;
use crate::search::{ProfileSearch, ProfileSpace, SolverOptions, TableCache, TieBreak};

/// Relative slack in the sharing test `p_i ≥ v_i·ΔI_i`. An indifferent user
/// shares; the slack keeps prices computed as the exact threshold on the
/// sharing side of it after rounding.
pub const BEST_RESPONSE_REL_TOL: f64 = 1e-12;
/// Markets up to this size get a full enumeration of the equilibria at the
/// Stackelberg prices when auditing coordination risk.
pub const AUDIT_ENUMERATION_MAX: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct KnownValueInstance {
    market: GaussianMarket,
    values: Vec<f64>,
    table: TableCache,
}

impl KnownValueInstance {
    pub fn new(market: GaussianMarket, values: Vec<f64>) -> Result<Self> {
        if values.len() != market.n() {
            return Err(Error::DimensionMismatch { expected: market.n(), found: values.len() });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { what: "valuations" });
            }
            if value < 0.0 {
                return Err(Error::Negative { what: "value of privacy", index, value });
            }
        }
        Ok(Self { market, values, table: TableCache::default() })
    }

    pub fn market(&self) -> &GaussianMarket {
        &self.market
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.market.n()
    }

    /// Full leakage table, built on first use (`n ≤ 20`).
    pub fn leakage_table(&self) -> Result<&LeakageTable> {
        self.table.get(&self.market)
    }

    pub(crate) fn source(&self, space: &ProfileSpace) -> Result<&dyn Leakage> {
        Ok(match space {
            ProfileSpace::Exhaustive(_) => self.leakage_table()?,
            ProfileSpace::Blocks(_) => &self.market,
        })
    }
}

/// Non-negative payments from the platform to users.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        for (index, &value) in prices.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { what: "prices" });
            }
            if value < 0.0 {
                return Err(Error::Negative { what: "price", index, value });
            }
        }
        Ok(Self(prices))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn uniform(n: usize, price: f64) -> Result<Self> {
        Self::new(vec![price; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for PriceVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A profile/price pair with everyone's payoff.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketOutcome {
    pub profile: ActionProfile,
    pub prices: PriceVector,
    pub user_payoffs: Vec<f64>,
    pub platform_payoff: f64,
    pub social_surplus: f64,
}

impl MarketOutcome {
    pub fn evaluate(instance: &KnownValueInstance, profile: ActionProfile, prices: PriceVector) -> Result<Self> {
        profile.check_len(instance.n())?;
        if prices.len() != instance.n() {
            return Err(Error::DimensionMismatch { expected: instance.n(), found: prices.len() });
        }
        let leakage = instance.market.leakage(profile)?;
        Ok(Self::from_leakage(instance.values(), &leakage, profile, prices))
    }

    fn from_leakage(values: &[f64], leakage: &[f64], profile: ActionProfile, prices: PriceVector) -> Self {
        let user_payoffs: Vec<f64> = (0..values.len())
            .map(|i| {
                let paid = if profile.shares(i) { prices[i] } else { 0.0 };
                paid - values[i] * leakage[i]
            })
            .collect();
        let platform_payoff = platform_payoff_from(leakage, profile, &prices);
        let social_surplus = values.iter().zip(leakage).map(|(v, l)| (1.0 - v) * l).sum();
        Self { profile, prices, user_payoffs, platform_payoff, social_surplus }
    }
}

fn platform_payoff_from(leakage: &[f64], profile: ActionProfile, prices: &PriceVector) -> f64 {
    leakage.iter().sum::<f64>() - profile.sharers().map(|i| prices[i]).sum::<f64>()
}

/// `U(a, p) = Σ_i I_i(a) − Σ_{i: a_i = 1} p_i`.
pub fn platform_payoff(instance: &KnownValueInstance, a: ActionProfile, p: &PriceVector) -> Result<f64> {
    a.check_len(instance.n())?;
    Ok(platform_payoff_from(&instance.market.leakage(a)?, a, p))
}

pub fn user_payoff(instance: &KnownValueInstance, a: ActionProfile, p: &PriceVector, i: usize) -> Result<f64> {
    a.check_len(instance.n())?;
    if i >= instance.n() {
        return Err(Error::IndexOutOfRange { index: i, n: instance.n() });
    }
    let leaked = instance.market.breached_information(a, i)?;
    let paid = if a.shares(i) { p[i] } else { 0.0 };
    Ok(paid - instance.values[i] * leaked)
}

pub(crate) fn prefers_sharing(price: f64, threshold: f64) -> bool {
    price >= threshold - BEST_RESPONSE_REL_TOL * threshold.abs().max(price.abs())
}

fn best_response_with(src: &dyn Leakage, values: &[f64], a: ActionProfile, price: f64, i: usize) -> bool {
    prefers_sharing(price, values[i] * src.marginal(a, i))
}

/// Whether user `i` shares against `a_{-i}` at price `p_i` (user `i`'s own
/// bit in `a_minus_i` is ignored).
pub fn best_response(instance: &KnownValueInstance, a_minus_i: ActionProfile, p_i: f64, i: usize) -> Result<bool> {
    a_minus_i.check_len(instance.n())?;
    if i >= instance.n() {
        return Err(Error::IndexOutOfRange { index: i, n: instance.n() });
    }
    Ok(best_response_with(&instance.market, &instance.values, a_minus_i, p_i, i))
}

fn is_user_equilibrium_with(src: &dyn Leakage, values: &[f64], p: &PriceVector, a: ActionProfile) -> bool {
    (0..a.n()).all(|i| best_response_with(src, values, a, p[i], i) == a.shares(i))
}

pub fn is_user_equilibrium(instance: &KnownValueInstance, p: &PriceVector, a: ActionProfile) -> Result<bool> {
    a.check_len(instance.n())?;
    check_prices(instance, p)?;
    Ok(is_user_equilibrium_with(&instance.market, &instance.values, p, a))
}

fn check_prices(instance: &KnownValueInstance, p: &PriceVector) -> Result<()> {
    if p.len() != instance.n() {
        return Err(Error::DimensionMismatch { expected: instance.n(), found: p.len() });
    }
    Ok(())
}

fn extreme_equilibrium(src: &dyn Leakage, values: &[f64], p: &PriceVector, start: ActionProfile) -> Result<ActionProfile> {
    let n = start.n();
    let mut a = start;
    for _ in 0..=n {
        let mut next = a;
        for i in 0..n {
            next = next.with(i, best_response_with(src, values, a, p[i], i));
        }
        if next == a {
            debug_assert!(is_user_equilibrium_with(src, values, p, a));
            return Ok(a);
        }
        a = next;
    }
    Err(Error::NonConvergence { rounds: n + 1 })
}

/// Least element of `A(p)`: simultaneous best response from nobody sharing.
pub fn least_user_equilibrium(instance: &KnownValueInstance, p: &PriceVector) -> Result<ActionProfile> {
    check_prices(instance, p)?;
    extreme_equilibrium(&instance.market, &instance.values, p, ActionProfile::empty(instance.n()))
}

/// Greatest element of `A(p)`: simultaneous best response from everyone
/// sharing.
pub fn greatest_user_equilibrium(instance: &KnownValueInstance, p: &PriceVector) -> Result<ActionProfile> {
    check_prices(instance, p)?;
    extreme_equilibrium(&instance.market, &instance.values, p, ActionProfile::full(instance.n()))
}

/// Every user equilibrium at `p`, in lexicographic order.
pub fn enumerate_user_equilibria(instance: &KnownValueInstance, p: &PriceVector) -> Result<Vec<ActionProfile>> {
    check_prices(instance, p)?;
    if instance.n() > TABLE_MAX_USERS {
        return Err(Error::TooLarge { what: "user-equilibrium enumeration", n: instance.n(), max: TABLE_MAX_USERS });
    }
    let table = instance.leakage_table()?;
    let mut out: Vec<ActionProfile> = ActionProfile::all(instance.n())
        .filter(|&a| is_user_equilibrium_with(table, &instance.values, p, a))
        .collect();
    out.sort();
    Ok(out)
}

/// `Σ_i (1 − w_i) I_i(a) + w_i I_i(a_{-i}, a_i = 0)`.
///
/// With `w = v` this is the platform's payoff when every sharer is paid
/// exactly `v_i·ΔI_i`; with `w = Φ(v)` it is the rent-adjusted objective
/// of the optimal mechanism. Non-sharers contribute `I_i(a)`.
pub(crate) fn rent_adjusted_objective(src: &dyn Leakage, weights: &[f64], a: ActionProfile) -> f64 {
    let row = src.leakage_of(a);
    let mut total: f64 = row.iter().sum();
    for i in a.sharers() {
        total -= weights[i] * (row[i] - src.leakage_at(a.with(i, false), i));
    }
    total
}

/// Cheapest prices making `a` a user equilibrium: `v_i·ΔI_i` for sharers,
/// zero otherwise.
pub fn supporting_prices(instance: &KnownValueInstance, a: ActionProfile) -> Result<PriceVector> {
    a.check_len(instance.n())?;
    PriceVector::new(supporting_prices_with(&instance.market, &instance.values, a))
}

fn supporting_prices_with(src: &dyn Leakage, values: &[f64], a: ActionProfile) -> Vec<f64> {
    (0..a.n())
        .map(|i| if a.shares(i) { (values[i] * src.marginal(a, i)).max(0.0) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMethod {
    /// All of `A(p^E)` enumerated.
    Exhaustive,
    /// Only the least and greatest elements of `A(p^E)` inspected.
    LatticeExtremes,
}

/// What else the users might coordinate on at the equilibrium prices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumAudit {
    pub method: AuditMethod,
    pub equilibria_inspected: Vec<ActionProfile>,
    pub worst_profile: ActionProfile,
    pub worst_platform_payoff: f64,
    /// Some equilibrium at `p^E` pays the platform strictly less.
    pub coordination_risk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StackelbergReport {
    pub outcome: MarketOutcome,
    pub search: ProfileSearch,
    pub audit: EquilibriumAudit,
}

/// Platform-optimal price vector and the induced profile. Ties go to the
/// lexicographically smallest profile; the full tie set is in `search`.
pub fn stackelberg_equilibrium(instance: &KnownValueInstance, opts: &SolverOptions) -> Result<StackelbergReport> {
    let space = opts.space(&instance.market, "Stackelberg search")?;
    if let ProfileSpace::Blocks(blocks) = &space {
        blocks.validate_weights(&instance.values, "value of privacy")?;
    }
    let src = instance.source(&space)?;
    let values = instance.values();
    let search = space.argmax(opts.tie(TieBreak::Smallest), opts.tie_tol, |a| rent_adjusted_objective(src, values, a));
    let a = search.best;
    let prices = PriceVector::new(supporting_prices_with(src, values, a))?;
    let leakage = src.leakage_of(a).into_owned();
    let outcome = MarketOutcome::from_leakage(values, &leakage, a, prices);
    let audit = audit_prices(instance, &outcome, opts.tie_tol)?;
    Ok(StackelbergReport { outcome, search, audit })
}

fn audit_prices(instance: &KnownValueInstance, chosen: &MarketOutcome, tol: f64) -> Result<EquilibriumAudit> {
    let p = &chosen.prices;
    let (method, equilibria) = if instance.n() <= AUDIT_ENUMERATION_MAX {
        (AuditMethod::Exhaustive, enumerate_user_equilibria(instance, p)?)
    } else {
        let lo = least_user_equilibrium(instance, p)?;
        let hi = greatest_user_equilibrium(instance, p)?;
        (AuditMethod::LatticeExtremes, if lo == hi { vec![lo] } else { vec![lo, hi] })
    };
    let mut worst = (chosen.profile, chosen.platform_payoff);
    for &a in &equilibria {
        let u = platform_payoff(instance, a, p)?;
        if u < worst.1 {
            worst = (a, u);
        }
    }
    Ok(EquilibriumAudit {
        method,
        equilibria_inspected: equilibria,
        worst_profile: worst.0,
        worst_platform_payoff: worst.1,
        coordination_risk: worst.1 < chosen.platform_payoff - tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one(rho: f64, v: f64) -> KnownValueInstance {
        KnownValueInstance::new(GaussianMarket::equicorrelated(2, rho).unwrap(), vec![v, v]).unwrap()
    }

    fn threshold(rho: f64) -> f64 {
        (2.0 - rho * rho).powi(2) / (2.0 * (4.0 - rho * rho))
    }

    fn p(s: &str) -> ActionProfile {
        s.parse().unwrap()
    }

    #[test]
    fn autarky_payoff_is_zero() {
        let inst = example_one(0.5, 1.0);
        let prices = PriceVector::uniform(2, 0.3).unwrap();
        assert_eq!(user_payoff(&inst, p("00"), &prices, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_user_payoff() {
        let inst = KnownValueInstance::new(GaussianMarket::diagonal(&[1.0]).unwrap(), vec![0.5]).unwrap();
        let prices = PriceVector::new(vec![0.3]).unwrap();
        assert!((user_payoff(&inst, p("1"), &prices, 0).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn example_one_equilibrium_payoff_is_below_autarky() {
        let inst = example_one(0.5, 1.0);
        let prices = PriceVector::uniform(2, threshold(0.5)).unwrap();
        let u = user_payoff(&inst, p("11"), &prices, 0).unwrap();
        assert!((u + 0.125).abs() < 1e-12);
    }

    #[test]
    fn best_response_cases() {
        let inst = example_one(0.5, 1.0);
        assert!(!best_response(&inst, p("01"), 0.0, 0).unwrap());
        assert!(best_response(&inst, p("01"), threshold(0.5), 0).unwrap());
        assert!(best_response(&inst, p("01"), 0.408_333_333_333_333_3, 0).unwrap());
        let indifferent = KnownValueInstance::new(GaussianMarket::equicorrelated(2, 0.5).unwrap(), vec![0.0, 1.0]).unwrap();
        assert!(best_response(&indifferent, p("00"), 0.0, 0).unwrap());
    }

    #[test]
    fn example_one_lattice() {
        let inst = example_one(0.5, 1.0);
        let prices = PriceVector::uniform(2, 0.45).unwrap();
        assert_eq!(least_user_equilibrium(&inst, &prices).unwrap(), p("00"));
        assert_eq!(greatest_user_equilibrium(&inst, &prices).unwrap(), p("11"));
        assert_eq!(enumerate_user_equilibria(&inst, &prices).unwrap(), vec![p("00"), p("11")]);
    }

    #[test]
    fn unpaid_sharing_is_never_chosen() {
        let inst = KnownValueInstance::new(GaussianMarket::equicorrelated(3, 0.4).unwrap(), vec![0.3, 1.0, 2.0]).unwrap();
        assert_eq!(least_user_equilibrium(&inst, &PriceVector::zeros(3)).unwrap(), p("000"));
    }

    #[test]
    fn high_prices_make_sharing_dominant() {
        let inst = KnownValueInstance::new(GaussianMarket::equicorrelated(3, 0.4).unwrap(), vec![0.3, 1.0, 2.0]).unwrap();
        let prices = PriceVector::uniform(3, 10.0 * 2.0).unwrap();
        assert_eq!(enumerate_user_equilibria(&inst, &prices).unwrap(), vec![p("111")]);
        assert_eq!(least_user_equilibrium(&inst, &prices).unwrap(), p("111"));
    }

    #[test]
    fn example_one_stackelberg() {
        for rho in [0.1, 0.5, 0.9] {
            let r = stackelberg_equilibrium(&example_one(rho, 1.0), &SolverOptions::exhaustive()).unwrap();
            assert_eq!(r.outcome.profile, p("11"));
            for i in 0..2 {
                assert!((r.outcome.prices[i] - threshold(rho)).abs() < 1e-12);
            }
            // (0,0) is also an equilibrium at these prices.
            assert!(r.audit.coordination_risk);
            assert_eq!(r.audit.worst_profile, p("00"));
        }
    }

    #[test]
    fn diagonal_stackelberg_buys_every_low_value_user() {
        let market = GaussianMarket::diagonal(&[1.0, 2.0, 0.5]).unwrap();
        let inst = KnownValueInstance::new(market.clone(), vec![0.2, 0.9, 0.5]).unwrap();
        let r = stackelberg_equilibrium(&inst, &SolverOptions::exhaustive()).unwrap();
        assert_eq!(r.outcome.profile, p("111"));
        for i in 0..3 {
            let s2 = market.variance(i);
            assert!((r.outcome.prices[i] - inst.values()[i] * s2 * s2 / (1.0 + s2)).abs() < 1e-12);
        }
    }

    #[test]
    fn outcome_accounting() {
        let inst = KnownValueInstance::new(GaussianMarket::equicorrelated(3, 0.3).unwrap(), vec![0.5, 1.2, 2.0]).unwrap();
        let prices = PriceVector::new(vec![0.1, 0.2, 0.3]).unwrap();
        let o = MarketOutcome::evaluate(&inst, p("101"), prices.clone()).unwrap();
        let sum_u: f64 = o.user_payoffs.iter().sum();
        assert!((o.social_surplus - (o.platform_payoff + sum_u)).abs() < 1e-12);
        for i in 0..3 {
            assert!((o.user_payoffs[i] - user_payoff(&inst, p("101"), &prices, i).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = GaussianMarket::equicorrelated(2, 0.1).unwrap();
        assert!(matches!(KnownValueInstance::new(m.clone(), vec![1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(KnownValueInstance::new(m, vec![1.0, -0.1]), Err(Error::Negative { .. })));
        assert!(PriceVector::new(vec![-1.0]).is_err());
    }
}
