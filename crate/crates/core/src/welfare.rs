//! Utilitarian benchmarks: social surplus, the first-best profile, and the
//! efficiency diagnostics for market equilibria.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::KnownValueInstance;
use crate::profile::ActionProfile;
use crate::search::{ProfileSearch, ProfileSpace, SolverOptions, TieBreak};

/// Entries of `Σ` smaller than this in magnitude count as "uncorrelated".
pub const ZERO_CORRELATION_TOL: f64 = 1e-12;
/// An equilibrium is efficient when it falls short of the first best by at
/// most this much surplus.
pub const EFFICIENCY_TOL: f64 = 1e-9;

/// `SoS(a) = Σ_i (1 − v_i) I_i(a)`; prices cancel as transfers.
pub fn social_surplus(instance: &KnownValueInstance, a: ActionProfile) -> Result<f64> {
    a.check_len(instance.n())?;
    let leakage = instance.market().leakage(a)?;
    Ok(surplus_of(instance.values(), &leakage))
}

fn surplus_of(values: &[f64], leakage: &[f64]) -> f64 {
    values.iter().zip(leakage).map(|(v, l)| (1.0 - v) * l).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstBest {
    pub profile: ActionProfile,
    pub surplus: f64,
    pub search: ProfileSearch,
}

/// Surplus-maximizing profile. Ties resolve toward the lexicographically
/// greatest profile, so a user whose sharing leaves surplus unchanged shares.
pub fn first_best(instance: &KnownValueInstance, opts: &SolverOptions) -> Result<FirstBest> {
    let space = opts.space(instance.market(), "first-best search")?;
    if let ProfileSpace::Blocks(blocks) = &space {
        blocks.validate_weights(instance.values(), "value of privacy")?;
    }
    let src = instance.source(&space)?;
    let values = instance.values();
    let search = space.argmax(opts.tie(TieBreak::Greatest), opts.tie_tol, |a| surplus_of(values, &src.leakage_of(a)));
    Ok(FirstBest { profile: search.best, surplus: search.value, search })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserCondition {
    pub user: usize,
    pub shares: bool,
    pub value: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstBestCheck {
    pub profile: ActionProfile,
    pub users: Vec<UserCondition>,
    pub consistent: bool,
}

/// Evaluates, for every user `i`, the sharing condition at `a`:
///
/// ```text
/// Σ_j (1 − v_j) Cov(X_i, X_j | a_i = 0, a_{-i})² / (1 + σ_i² − I_i(a_i = 0, a_{-i}))
/// ```
///
/// The denominator is the conditional variance of the signal `S_i` given
/// the others' shared signals, so the expression is the exact surplus change
/// from adding `S_i`. At a first best it must be non-negative for sharers and
/// negative for non-sharers.
pub fn verify_first_best_condition(instance: &KnownValueInstance, a: ActionProfile) -> Result<FirstBestCheck> {
    a.check_len(instance.n())?;
    let market = instance.market();
    let values = instance.values();
    let n = instance.n();
    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        let without = a.with(i, false);
        let cond = market.conditional_covariance_matrix(without)?;
        let signal_variance = 1.0 + cond[(i, i)];
        assert!(signal_variance >= 1.0 - 1e-12, "conditional signal variance below the noise floor");
        let mut value = 0.0;
        let mut scale = 0.0;
        for j in 0..n {
            let term = (1.0 - values[j]) * cond[(i, j)].powi(2) / signal_variance;
            value += term;
            scale += term.abs();
        }
        let slack = 1e-12 * scale.max(1e-300);
        let shares = a.shares(i);
        let consistent = if shares { value >= -slack } else { value < slack };
        users.push(UserCondition { user: i, shares, value, consistent });
    }
    let consistent = users.iter().all(|u| u.consistent);
    Ok(FirstBestCheck { profile: a, users, consistent })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValueClasses {
    /// `v_i < 1`.
    pub low: Vec<usize>,
    /// `v_i > 1`.
    pub high: Vec<usize>,
    /// `Φ_i(v_i) ≤ 1`.
    pub phi_low: Vec<usize>,
}

impl ValueClasses {
    pub fn new(values: &[f64], virtual_values: &[f64]) -> Self {
        let pick = |f: &dyn Fn(usize) -> bool| (0..values.len()).filter(|&i| f(i)).collect::<Vec<_>>();
        Self {
            low: pick(&|i| values[i] < 1.0),
            high: pick(&|i| values[i] > 1.0),
            phi_low: pick(&|i| virtual_values[i] <= 1.0),
        }
    }
}

fn check_virtual_values(instance: &KnownValueInstance, virtual_values: &[f64]) -> Result<()> {
    if virtual_values.len() != instance.n() {
        return Err(Error::DimensionMismatch { expected: instance.n(), found: virtual_values.len() });
    }
    Ok(())
}

/// Upper bound on equilibrium surplus:
/// `Σ_{V^(l)} (1 − v_i) I_i(V) − Σ_{V^(h)} (v_i − 1) I_i(V_Φ^(l))`.
///
/// With known valuations pass `virtual_values = values`.
pub fn surplus_upper_bound(instance: &KnownValueInstance, virtual_values: &[f64]) -> Result<f64> {
    check_virtual_values(instance, virtual_values)?;
    let n = instance.n();
    let values = instance.values();
    let classes = ValueClasses::new(values, virtual_values);
    let everyone = instance.market().leakage(ActionProfile::full(n))?;
    let phi_low = instance.market().leakage(ActionProfile::from_sharers(n, classes.phi_low.iter().copied()))?;
    let gain: f64 = classes.low.iter().map(|&i| (1.0 - values[i]) * everyone[i]).sum();
    let loss: f64 = classes.high.iter().map(|&i| (values[i] - 1.0) * phi_low[i]).sum();
    Ok(gain - loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Efficient,
    Inefficient,
    /// The first best could not be computed for this instance.
    Indeterminate,
}

/// Which structural hypothesis pattern of the efficiency taxonomy the
/// instance matches. Only `HighUncorrelated` comes with a guarantee; the
/// others predict inefficiency for extreme enough valuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyCase {
    /// High-value users uncorrelated with everyone and
    /// `V^(l) = V_Φ^(l)`.
    HighUncorrelated,
    /// Some high-value user correlated with a user in `V_Φ^(l)`.
    HighCorrelatedWithPhiLow,
    /// High-value users uncorrelated with `V_Φ^(l)` but correlated with
    /// some low-value user outside it.
    HighCorrelatedWithRentLow,
    /// High-value users uncorrelated with low-value users but
    /// correlated among themselves.
    HighCorrelatedAmongHigh,
}

impl EfficiencyCase {
    pub fn label(&self) -> &'static str {
        match self {
            EfficiencyCase::HighUncorrelated => "high_uncorrelated",
            EfficiencyCase::HighCorrelatedWithPhiLow => "high_correlated_with_phi_low",
            EfficiencyCase::HighCorrelatedWithRentLow => "high_correlated_with_rent_low",
            EfficiencyCase::HighCorrelatedAmongHigh => "high_correlated_among_high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub classes: ValueClasses,
    pub verdict: Verdict,
    pub matched_case: Option<EfficiencyCase>,
    pub equilibrium: ActionProfile,
    pub surplus_at_equilibrium: f64,
    pub first_best: Option<ActionProfile>,
    pub first_best_surplus: Option<f64>,
    pub surplus_bound: f64,
}

fn correlated(instance: &KnownValueInstance, i: usize, j: usize) -> bool {
    i != j && instance.market().cov(i, j).abs() > ZERO_CORRELATION_TOL
}

fn any_correlated(instance: &KnownValueInstance, from: &[usize], to: &[usize]) -> bool {
    from.iter().any(|&i| to.iter().any(|&j| correlated(instance, i, j)))
}

/// Matches the taxonomy's hypotheses against the correlation structure.
pub fn match_efficiency_case(instance: &KnownValueInstance, classes: &ValueClasses) -> Option<EfficiencyCase> {
    let n = instance.n();
    let everyone: Vec<usize> = (0..n).collect();
    let high = &classes.high;
    if !any_correlated(instance, high, &everyone) && classes.low == classes.phi_low {
        return Some(EfficiencyCase::HighUncorrelated);
    }
    if any_correlated(instance, high, &classes.phi_low) {
        return Some(EfficiencyCase::HighCorrelatedWithPhiLow);
    }
    let rent_low: Vec<usize> = classes.low.iter().copied().filter(|i| !classes.phi_low.contains(i)).collect();
    if any_correlated(instance, high, &rent_low) {
        return Some(EfficiencyCase::HighCorrelatedWithRentLow);
    }
    if !any_correlated(instance, high, &classes.low) && any_correlated(instance, high, high) {
        return Some(EfficiencyCase::HighCorrelatedAmongHigh);
    }
    None
}

/// Classifies the equilibrium profile `equilibrium`. The verdict always
/// comes from comparing its surplus with the first best; the matched case is
/// diagnostic.
pub fn classify_efficiency(
    instance: &KnownValueInstance,
    virtual_values: &[f64],
    equilibrium: ActionProfile,
    opts: &SolverOptions,
) -> Result<EfficiencyReport> {
    check_virtual_values(instance, virtual_values)?;
    let classes = ValueClasses::new(instance.values(), virtual_values);
    let matched_case = match_efficiency_case(instance, &classes);
    let surplus_at_equilibrium = social_surplus(instance, equilibrium)?;
    let surplus_bound = surplus_upper_bound(instance, virtual_values)?;
    let (verdict, first_best) = match first_best(instance, opts) {
        Ok(fb) => {
            let efficient = fb.surplus - surplus_at_equilibrium <= EFFICIENCY_TOL;
            (if efficient { Verdict::Efficient } else { Verdict::Inefficient }, Some(fb))
        }
        Err(Error::TooLarge { .. }) => (Verdict::Indeterminate, None),
        Err(e) => return Err(e),
    };
    Ok(EfficiencyReport {
        classes,
        verdict,
        matched_case,
        equilibrium,
        surplus_at_equilibrium,
        first_best: first_best.as_ref().map(|f| f.profile),
        first_best_surplus: first_best.map(|f| f.surplus),
        surplus_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianMarket;

    fn inst(rows: &[Vec<f64>], v: &[f64]) -> KnownValueInstance {
        KnownValueInstance::new(GaussianMarket::from_rows(rows).unwrap(), v.to_vec()).unwrap()
    }

    fn p(s: &str) -> ActionProfile {
        s.parse().unwrap()
    }

    #[test]
    fn surplus_examples() {
        let one = KnownValueInstance::new(GaussianMarket::diagonal(&[1.0]).unwrap(), vec![0.5]).unwrap();
        assert_eq!(social_surplus(&one, p("0")).unwrap(), 0.0);
        assert!((social_surplus(&one, p("1")).unwrap() - 0.25).abs() < 1e-15);
        let ex1 = KnownValueInstance::new(GaussianMarket::equicorrelated(2, 0.5).unwrap(), vec![1.0, 1.0]).unwrap();
        assert_eq!(social_surplus(&ex1, p("11")).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_first_best_shares_iff_value_at_most_one() {
        let k = KnownValueInstance::new(GaussianMarket::diagonal(&[1.0, 2.0, 0.5, 1.0]).unwrap(), vec![0.3, 1.7, 1.0, 0.99])
            .unwrap();
        let fb = first_best(&k, &SolverOptions::exhaustive()).unwrap();
        assert_eq!(fb.profile, p("1011"));
        let check = verify_first_best_condition(&k, fb.profile).unwrap();
        assert!(check.consistent);
        for (i, u) in check.users.iter().enumerate() {
            let s2 = k.market().variance(i);
            let expected = (1.0 - k.values()[i]) * s2 * s2 / (1.0 + s2);
            assert!((u.value - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn strong_externality_shuts_the_market() {
        let k = inst(&[vec![1.0, 0.9], vec![0.9, 1.0]], &[0.5, 5.0]);
        let fb = first_best(&k, &SolverOptions::exhaustive()).unwrap();
        assert_eq!(fb.profile, p("00"));
        assert_eq!(fb.surplus, 0.0);
        let check = verify_first_best_condition(&k, p("00")).unwrap();
        assert!(check.users[0].value < 0.0);
        assert!(check.consistent);
    }

    #[test]
    fn privacy_indifferent_users_all_share() {
        let k = inst(&[vec![1.0, 0.3], vec![0.3, 2.0]], &[0.0, 0.0]);
        assert_eq!(first_best(&k, &SolverOptions::exhaustive()).unwrap().profile, p("11"));
    }

    #[test]
    fn bound_with_only_high_value_users_is_zero() {
        let k = inst(&[vec![1.0, 0.4], vec![0.4, 1.0]], &[1.5, 3.0]);
        assert_eq!(surplus_upper_bound(&k, &[3.0, 6.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_user_bound() {
        let k = KnownValueInstance::new(GaussianMarket::diagonal(&[2.0]).unwrap(), vec![0.5]).unwrap();
        // Uniform(0, 1): Φ(0.5) = 1.
        let b = surplus_upper_bound(&k, &[1.0]).unwrap();
        assert!((b - 0.5 * 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_users_are_neither_low_nor_high() {
        let c = ValueClasses::new(&[1.0, 0.5, 2.0], &[1.0, 1.2, 4.0]);
        assert_eq!(c.low, vec![1]);
        assert_eq!(c.high, vec![2]);
        assert_eq!(c.phi_low, vec![0]);
    }
}
