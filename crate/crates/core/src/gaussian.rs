//! Covariance algebra for jointly Gaussian user types observed through
//! unit-variance noisy signals `S_i = X_i + Z_i`.
//!
//! With sharing set `A`, the platform's best estimate of `X_i` is the
//! conditional mean given `S_A`. Its mean-squared error falls from `σ_i²` by
//!
//! ```text
//! I_i(a) = Σ_{i,A} (Σ_{A,A} + Id)^{-1} Σ_{A,i}
//! ```
//!
//! which is what this module calls breached information. `Σ_{A,A} + Id` has
//! every eigenvalue at least one, so a plain Cholesky factorization always
//! succeeds on a validated market.

use std::borrow::Cow;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::profile::{ActionProfile, MAX_USERS};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const EIGENVALUE_FLOOR: f64 = -1e-10;
/// Slack allowed in the monotonicity and submodularity checks.
pub const PROPERTY_TOL: f64 = 1e-10;
/// Largest market checked exhaustively by the structural property checks.
pub const EXHAUSTIVE_CHECK_MAX: usize = 12;
pub const SAMPLED_CHECK_PAIRS: usize = 10_000;
/// Largest market whose full leakage table is materialized.
pub const TABLE_MAX_USERS: usize = 20;

/// The prior: user types `X ~ N(0, Σ)` observed through unit-variance noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMarket {
    sigma: DMatrix<f64>,
}

impl GaussianMarket {
    /// Validates and symmetrizes `sigma`.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 {
            return Err(Error::EmptyMarket);
        }
        if sigma.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: sigma.ncols() });
        }
        if n > MAX_USERS {
            return Err(Error::TooManyUsers { n, max: MAX_USERS });
        }
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "covariance" });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let difference = (sigma[(i, j)] - sigma[(j, i)]).abs();
                if difference > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric { i, j, difference });
                }
            }
        }
        for i in 0..n {
            if sigma[(i, i)] <= 0.0 {
                return Err(Error::NonPositiveVariance { index: i, value: sigma[(i, i)] });
            }
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let min_eigenvalue = sigma.clone().symmetric_eigenvalues().min();
        if min_eigenvalue < EIGENVALUE_FLOOR {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue });
        }
        Ok(Self { sigma })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyMarket);
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: bad.len() });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Independent users with the given variances.
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        let n = variances.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { variances[i] } else { 0.0 }))
    }

    /// Unit variances with a common pairwise correlation.
    pub fn equicorrelated(n: usize, rho: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho }))
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.sigma[(i, i)]
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }

    fn check_user(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, n: self.n() });
        }
        Ok(())
    }

    /// `L^{-1} Σ_{A,·}` where `L Lᵀ = Σ_{A,A} + Id`. Column `j` has squared
    /// norm `I_j(a)`; inner products of columns are the covariance reductions.
    fn whitened_cross_covariance(&self, a: ActionProfile) -> Result<Option<DMatrix<f64>>> {
        let sharers: Vec<usize> = a.sharers().collect();
        if sharers.is_empty() {
            return Ok(None);
        }
        let k = sharers.len();
        let n = self.n();
        let m = DMatrix::from_fn(k, k, |r, c| {
            self.sigma[(sharers[r], sharers[c])] + if r == c { 1.0 } else { 0.0 }
        });
        let cross = DMatrix::from_fn(k, n, |r, j| self.sigma[(sharers[r], j)]);
        let chol = Cholesky::new(m).ok_or(Error::Factorization)?;
        let w = chol.l().solve_lower_triangular(&cross).ok_or(Error::Factorization)?;
        Ok(Some(w))
    }

    /// Breached information `I_i(a)` for every user at once.
    pub fn leakage(&self, a: ActionProfile) -> Result<Vec<f64>> {
        a.check_len(self.n())?;
        Ok(match self.whitened_cross_covariance(a)? {
            None => vec![0.0; self.n()],
            Some(w) => w.column_iter().map(|c| c.norm_squared()).collect(),
        })
    }

    pub fn breached_information(&self, a: ActionProfile, i: usize) -> Result<f64> {
        a.check_len(self.n())?;
        self.check_user(i)?;
        let sharers: Vec<usize> = a.sharers().collect();
        if sharers.is_empty() {
            return Ok(0.0);
        }
        let k = sharers.len();
        let m = DMatrix::from_fn(k, k, |r, c| {
            self.sigma[(sharers[r], sharers[c])] + if r == c { 1.0 } else { 0.0 }
        });
        let b = nalgebra::DVector::from_fn(k, |r, _| self.sigma[(sharers[r], i)]);
        let chol = Cholesky::new(m).ok_or(Error::Factorization)?;
        let w = chol.l().solve_lower_triangular(&b).ok_or(Error::Factorization)?;
        Ok(w.norm_squared())
    }

    /// `Cov(X_i, X_j | S_A)`.
    pub fn conditional_covariance(&self, a: ActionProfile, i: usize, j: usize) -> Result<f64> {
        a.check_len(self.n())?;
        self.check_user(i)?;
        self.check_user(j)?;
        Ok(match self.whitened_cross_covariance(a)? {
            None => self.sigma[(i, j)],
            Some(w) => self.sigma[(i, j)] - w.column(i).dot(&w.column(j)),
        })
    }

    /// Full posterior covariance of `X` given `S_A`.
    pub fn conditional_covariance_matrix(&self, a: ActionProfile) -> Result<DMatrix<f64>> {
        a.check_len(self.n())?;
        Ok(match self.whitened_cross_covariance(a)? {
            None => self.sigma.clone(),
            Some(w) => &self.sigma - w.transpose() * w,
        })
    }

    /// `I_i(a_i = 1, a_{-i}) − I_i(a_i = 0, a_{-i})`; user `i`'s own bit in
    /// `a_minus_i` is ignored.
    pub fn marginal_leakage(&self, a_minus_i: ActionProfile, i: usize) -> Result<f64> {
        a_minus_i.check_len(self.n())?;
        self.check_user(i)?;
        let with = self.breached_information(a_minus_i.with(i, true), i)?;
        let without = self.breached_information(a_minus_i.with(i, false), i)?;
        Ok(with - without)
    }

    pub fn check_monotonicity(&self) -> Result<PropertyReport> {
        check_property(self, Property::Monotonicity)
    }

    pub fn check_submodularity(&self) -> Result<PropertyReport> {
        check_property(self, Property::Submodularity)
    }
}

/// Source of breached-information values. Solvers are written against this so
/// an exhaustive scan can read a precomputed table while block-reduced scans
/// compute the few profiles they need on demand.
pub trait Leakage: Sync {
    fn market(&self) -> &GaussianMarket;

    fn leakage_of(&self, a: ActionProfile) -> Cow<'_, [f64]>;

    fn leakage_at(&self, a: ActionProfile, i: usize) -> f64 {
        self.leakage_of(a)[i]
    }

    fn n(&self) -> usize {
        self.market().n()
    }

    /// `I_i(a_i = 1, a_{-i}) − I_i(a_i = 0, a_{-i})`.
    fn marginal(&self, a: ActionProfile, i: usize) -> f64 {
        self.leakage_at(a.with(i, true), i) - self.leakage_at(a.with(i, false), i)
    }
}

impl Leakage for GaussianMarket {
    fn market(&self) -> &GaussianMarket {
        self
    }

    fn leakage_of(&self, a: ActionProfile) -> Cow<'_, [f64]> {
        Cow::Owned(self.leakage(a).expect("validated market"))
    }

    fn leakage_at(&self, a: ActionProfile, i: usize) -> f64 {
        self.breached_information(a, i).expect("validated market")
    }
}

/// `I_i(a)` for all `2^n` profiles, row-major by profile mask.
#[derive(Debug, Clone)]
pub struct LeakageTable {
    market: GaussianMarket,
    values: Vec<f64>,
}

impl LeakageTable {
    pub fn build(market: &GaussianMarket) -> Result<Self> {
        let n = market.n();
        if n > TABLE_MAX_USERS {
            return Err(Error::TooLarge { what: "exhaustive leakage table", n, max: TABLE_MAX_USERS });
        }
        let mut values = vec![0.0; n << n];
        values
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(mask, row)| -> Result<()> {
                let a = ActionProfile::from_mask(n, mask as u64);
                row.copy_from_slice(&market.leakage(a)?);
                Ok(())
            })?;
        Ok(Self { market: market.clone(), values })
    }

    pub fn row(&self, a: ActionProfile) -> &[f64] {
        let n = self.market.n();
        let start = a.mask() as usize * n;
        &self.values[start..start + n]
    }
}

impl Leakage for LeakageTable {
    fn market(&self) -> &GaussianMarket {
        &self.market
    }

    fn leakage_of(&self, a: ActionProfile) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.row(a))
    }

    fn leakage_at(&self, a: ActionProfile, i: usize) -> f64 {
        self.values[a.mask() as usize * self.market.n() + i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Monotonicity,
    Submodularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// Every comparable pair was checked.
    Proved,
    /// Randomly drawn comparable pairs only.
    Sampled,
}

/// A failing comparable pair `lower ≤ upper` for user `user`. For
/// monotonicity `gap = I_user(lower) − I_user(upper)`; for submodularity it
/// is the marginal at `upper` minus the marginal at `lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub user: usize,
    pub lower: ActionProfile,
    pub upper: ActionProfile,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: Property,
    pub holds: bool,
    pub mode: CheckMode,
    pub pairs_checked: u64,
    pub witness: Option<Violation>,
}

fn check_property(market: &GaussianMarket, property: Property) -> Result<PropertyReport> {
    let n = market.n();
    if n <= EXHAUSTIVE_CHECK_MAX {
        let table = LeakageTable::build(market)?;
        let (pairs_checked, witness) = match property {
            Property::Monotonicity => exhaustive_monotonicity(&table),
            Property::Submodularity => exhaustive_submodularity(&table),
        };
        Ok(PropertyReport { property, holds: witness.is_none(), mode: CheckMode::Proved, pairs_checked, witness })
    } else {
        let witness = sampled_check(market, property, SAMPLED_CHECK_PAIRS, 0x5eed);
        Ok(PropertyReport {
            property,
            holds: witness.is_none(),
            mode: CheckMode::Sampled,
            pairs_checked: SAMPLED_CHECK_PAIRS as u64,
            witness,
        })
    }
}

/// Visits every proper submask of `mask` (the empty one included), largest
/// first, until `f` returns false.
fn for_each_submask(mask: u64, mut f: impl FnMut(u64) -> bool) {
    if mask == 0 {
        return;
    }
    let mut sub = (mask - 1) & mask;
    loop {
        if !f(sub) || sub == 0 {
            return;
        }
        sub = (sub - 1) & mask;
    }
}

fn exhaustive_monotonicity(table: &LeakageTable) -> (u64, Option<Violation>) {
    let n = table.n();
    let results: Vec<(u64, Option<Violation>)> = (0..1u64 << n)
        .into_par_iter()
        .map(|upper_mask| {
            let upper = ActionProfile::from_mask(n, upper_mask);
            let top = table.row(upper);
            let mut pairs = 0;
            let mut witness = None;
            for_each_submask(upper_mask, |lower_mask| {
                pairs += 1;
                let lower = ActionProfile::from_mask(n, lower_mask);
                let bottom = table.row(lower);
                for user in 0..n {
                    let gap = bottom[user] - top[user];
                    if gap > PROPERTY_TOL {
                        witness = Some(Violation { user, lower, upper, gap });
                        return false;
                    }
                }
                true
            });
            (pairs, witness)
        })
        .collect();
    fold_results(results)
}

fn exhaustive_submodularity(table: &LeakageTable) -> (u64, Option<Violation>) {
    let n = table.n();
    let mut pairs = 0;
    for user in 0..n {
        let bit = 1u64 << user;
        let results: Vec<(u64, Option<Violation>)> = (0..1u64 << n)
            .into_par_iter()
            .filter(|m| m & bit == 0)
            .map(|upper_mask| {
                let upper = ActionProfile::from_mask(n, upper_mask);
                let upper_marginal = table.marginal(upper, user);
                let mut pairs = 0;
                let mut witness = None;
                for_each_submask(upper_mask, |lower_mask| {
                    pairs += 1;
                    let lower = ActionProfile::from_mask(n, lower_mask);
                    let gap = upper_marginal - table.marginal(lower, user);
                    if gap > PROPERTY_TOL {
                        witness = Some(Violation { user, lower, upper, gap });
                        return false;
                    }
                    true
                });
                (pairs, witness)
            })
            .collect();
        let (p, w) = fold_results(results);
        pairs += p;
        if w.is_some() {
            return (pairs, w);
        }
    }
    (pairs, None)
}

fn fold_results(results: Vec<(u64, Option<Violation>)>) -> (u64, Option<Violation>) {
    let pairs = results.iter().map(|r| r.0).sum();
    (pairs, results.into_iter().find_map(|r| r.1))
}

fn sampled_check(market: &GaussianMarket, property: Property, pairs: usize, seed: u64) -> Option<Violation> {
    let n = market.n();
    let full = ActionProfile::full(n).mask();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let upper_mask = rng.random::<u64>() & full;
        let lower_mask = upper_mask & rng.random::<u64>();
        let user = rng.random_range(0..n);
        let violation = match property {
            Property::Monotonicity => {
                let upper = ActionProfile::from_mask(n, upper_mask);
                let lower = ActionProfile::from_mask(n, lower_mask);
                let gap = market.leakage_at(lower, user) - market.leakage_at(upper, user);
                (gap > PROPERTY_TOL).then_some(Violation { user, lower, upper, gap })
            }
            Property::Submodularity => {
                let upper = ActionProfile::from_mask(n, upper_mask).with(user, false);
                let lower = ActionProfile::from_mask(n, lower_mask).with(user, false);
                let gap = market.marginal(upper, user) - market.marginal(lower, user);
                (gap > PROPERTY_TOL).then_some(Violation { user, lower, upper, gap })
            }
        };
        if violation.is_some() {
            return violation;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_user(rho: f64) -> GaussianMarket {
        GaussianMarket::equicorrelated(2, rho).unwrap()
    }

    fn p(s: &str) -> ActionProfile {
        s.parse().unwrap()
    }

    /// Hand-written inverse of `[[a, b], [b, d]]` for the two-user oracle.
    fn inv2(a: f64, b: f64, d: f64) -> [[f64; 2]; 2] {
        let det = a * d - b * b;
        [[d / det, -b / det], [-b / det, a / det]]
    }

    #[test]
    fn empty_sharing_set_leaks_nothing() {
        let m = two_user(0.7);
        for i in 0..2 {
            assert_eq!(m.breached_information(p("00"), i).unwrap(), 0.0);
            assert_eq!(m.conditional_covariance(p("00"), i, 1 - i).unwrap(), 0.7);
        }
    }

    #[test]
    fn single_user_closed_form() {
        let m = GaussianMarket::diagonal(&[1.0]).unwrap();
        assert!((m.breached_information(p("1"), 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.marginal_leakage(p("0"), 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_user_values_match_hand_inverse() {
        let rho = 0.5;
        let m = two_user(rho);
        // Both share: I_1 = [1, ρ] (Σ + Id)^{-1} [1, ρ]ᵀ.
        let inv = inv2(2.0, rho, 2.0);
        let b = [1.0, rho];
        let oracle: f64 = (0..2).map(|r| (0..2).map(|c| b[r] * inv[r][c] * b[c]).sum::<f64>()).sum();
        assert!((oracle - 2.0 / (4.0 - rho * rho)).abs() < 1e-15);
        let got = m.breached_information(p("11"), 0).unwrap();
        assert!((got - oracle).abs() < 1e-14);
        assert!((got - 0.533_333_333_333_333_3).abs() < 1e-12);

        let only_other = m.breached_information(p("01"), 0).unwrap();
        assert!((only_other - 0.125).abs() < 1e-14);
        assert!((m.conditional_covariance(p("01"), 0, 0).unwrap() - 0.875).abs() < 1e-14);
    }

    #[test]
    fn marginal_leakage_example_one() {
        let rho: f64 = 0.5;
        let expected = (2.0 - rho * rho).powi(2) / (2.0 * (4.0 - rho * rho));
        let got = two_user(rho).marginal_leakage(p("01"), 0).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.408_333_333_333_333_3).abs() < 1e-12);
        assert!((two_user(0.0).marginal_leakage(p("01"), 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_variance_plus_leakage_is_prior_variance() {
        let m = GaussianMarket::from_rows(&[
            vec![2.0, 0.3, -0.4],
            vec![0.3, 1.5, 0.2],
            vec![-0.4, 0.2, 0.8],
        ])
        .unwrap();
        for a in ActionProfile::all(3) {
            let cond = m.conditional_covariance_matrix(a).unwrap();
            for i in 0..3 {
                let total = cond[(i, i)] + m.breached_information(a, i).unwrap();
                assert!((total - m.variance(i)).abs() < 1e-12);
                let direct = m.conditional_covariance(a, i, (i + 1) % 3).unwrap();
                assert!((direct - cond[(i, (i + 1) % 3)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn construction_rejects_bad_covariances() {
        assert!(matches!(
            GaussianMarket::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            GaussianMarket::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        assert!(matches!(GaussianMarket::diagonal(&[1.0, 0.0]), Err(Error::NonPositiveVariance { index: 1, .. })));
        assert!(matches!(GaussianMarket::from_rows(&[]), Err(Error::EmptyMarket)));
    }

    #[test]
    fn singular_psd_is_accepted() {
        // Perfectly correlated users: PSD with a zero eigenvalue.
        let m = two_user(1.0);
        let got = m.breached_information(p("01"), 0).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_and_index_errors() {
        let m = two_user(0.2);
        assert!(matches!(m.breached_information(p("1"), 0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.breached_information(p("11"), 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn table_matches_direct_computation() {
        let m = GaussianMarket::equicorrelated(4, 0.3).unwrap();
        let t = LeakageTable::build(&m).unwrap();
        for a in ActionProfile::all(4) {
            for i in 0..4 {
                assert_eq!(t.leakage_at(a, i), m.leakage(a).unwrap()[i]);
                assert!((t.leakage_at(a, i) - m.breached_information(a, i).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn property_checks_pass_on_example_two() {
        let m = GaussianMarket::equicorrelated(3, 0.3).unwrap();
        let mono = m.check_monotonicity().unwrap();
        let sub = m.check_submodularity().unwrap();
        assert!(mono.holds && sub.holds);
        assert_eq!(mono.mode, CheckMode::Proved);
        // 3^3 − 2^3 strictly comparable pairs.
        assert_eq!(mono.pairs_checked, 19);
    }

    #[test]
    fn large_markets_fall_back_to_sampling() {
        let m = GaussianMarket::equicorrelated(14, 0.1).unwrap();
        let r = m.check_submodularity().unwrap();
        assert!(r.holds);
        assert_eq!(r.mode, CheckMode::Sampled);
        assert_eq!(r.pairs_checked, SAMPLED_CHECK_PAIRS as u64);
    }
}
