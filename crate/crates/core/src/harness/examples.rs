//! The three worked markets: a correlated pair, a three-user tie, and two
//! communities of ten.

use serde::Serialize;

use super::sweep::{run_sweep, Axis, SweepOverrides, SweepSpec, SweepTable};
use crate::error::Result;
use crate::game::{
    enumerate_user_equilibria, is_user_equilibrium, stackelberg_equilibrium, supporting_prices, KnownValueInstance,
    PriceVector,
};
use crate::gaussian::GaussianMarket;
use crate::profile::ActionProfile;
use crate::search::SolverOptions;

/// `(2 − ρ²)² / (2(4 − ρ²))`, the price each user of the unit-variance pair
/// is offered at `v = 1`.
pub fn example1_price(rho: f64) -> f64 {
    let r2 = rho * rho;
    (2.0 - r2).powi(2) / (2.0 * (4.0 - r2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example1Row {
    pub rho: f64,
    pub value: f64,
    pub profile: ActionProfile,
    pub prices: Vec<f64>,
    pub closed_form_price: f64,
    pub price_error: f64,
    /// Open price interval on which both `00` and `11` are user equilibria.
    pub multiplicity_interval: (f64, f64),
    /// Equilibria at the midpoint of that interval.
    pub equilibria_at_midpoint: Vec<ActionProfile>,
}

/// Unit-variance pair with correlation `rho` and common value `v`.
pub fn example1_instance(rho: f64, v: f64) -> Result<KnownValueInstance> {
    KnownValueInstance::new(GaussianMarket::equicorrelated(2, rho)?, vec![v, v])
}

pub fn run_example1(rhos: &[f64], v: f64) -> Result<Vec<Example1Row>> {
    rhos.iter()
        .map(|&rho| {
            let instance = example1_instance(rho, v)?;
            let report = stackelberg_equilibrium(&instance, &SolverOptions::exhaustive())?;
            let closed_form_price = v * example1_price(rho);
            let prices = report.outcome.prices.as_slice().to_vec();
            let price_error = prices.iter().map(|p| (p - closed_form_price).abs()).fold(0.0, f64::max);
            let interval = (closed_form_price, v / 2.0);
            let mid = 0.5 * (interval.0 + interval.1);
            let equilibria_at_midpoint = enumerate_user_equilibria(&instance, &PriceVector::uniform(2, mid)?)?;
            Ok(Example1Row {
                rho,
                value: v,
                profile: report.outcome.profile,
                prices,
                closed_form_price,
                price_error,
                multiplicity_interval: interval,
                equilibria_at_midpoint,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example2Report {
    /// Optimal profiles, each with its platform payoff at its own supporting
    /// prices.
    pub optimal: Vec<(ActionProfile, f64)>,
    pub payoff_spread: f64,
    /// Each optimal profile is a user equilibrium at its supporting prices.
    pub all_supported: bool,
    pub chosen: ActionProfile,
}

/// Three users, unit variances, pairwise covariance 0.3, values 1.18.
pub fn example2_instance() -> Result<KnownValueInstance> {
    KnownValueInstance::new(GaussianMarket::equicorrelated(3, 0.3)?, vec![1.18; 3])
}

pub fn run_example2() -> Result<Example2Report> {
    let instance = example2_instance()?;
    let report = stackelberg_equilibrium(&instance, &SolverOptions::exhaustive())?;
    let mut optimal = Vec::new();
    let mut all_supported = true;
    for &a in &report.search.ties {
        let prices = supporting_prices(&instance, a)?;
        all_supported &= is_user_equilibrium(&instance, &prices, a)?;
        optimal.push((a, crate::game::platform_payoff(&instance, a, &prices)?));
    }
    let hi = optimal.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = optimal.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
    Ok(Example2Report { optimal, payoff_spread: hi - lo, all_supported, chosen: report.outcome.profile })
}

/// Known-value scenario template for the two communities: blocks of ten,
/// unit variances, within-community correlation 0.05, low value 0.9.
pub fn example3_template(v_high: f64, rho: f64) -> toml::Value {
    let text = format!(
        r#"
name = "two communities"
mode = "known"
values = {{ per_block = [0.9, {v_high:?}] }}

[covariance.blocks]
sizes = [10, 10]
variance = 1.0
within = 0.05
cross = {rho:?}

[options]
symmetry = true
"#
    );
    toml::from_str(&text).expect("template is valid TOML")
}

/// Sweep over `v_h` (axis 1) and the cross-community correlation `ρ`
/// (axis 2). Points whose covariance is not positive semidefinite are
/// marked `non_psd`.
pub fn run_example3(v_high: Axis, rho: Axis) -> Result<SweepTable> {
    let spec = SweepSpec::new(
        example3_template(v_high.min, rho.min),
        vec![
            Axis { path: "values.per_block.1".into(), ..v_high },
            Axis { path: "covariance.blocks.cross".into(), ..rho },
        ],
    )?;
    run_sweep(&spec, SweepOverrides::default())
}

/// Default grid: `v_h ∈ {1.001, 1.1, …, 2.9}` and `ρ ∈ {0, 0.05, …, 0.5}`.
pub fn example3_default_axes() -> (Axis, Axis) {
    (
        Axis { path: "values.per_block.1".into(), min: 1.001, max: 2.901, step: 0.1 },
        Axis { path: "covariance.blocks.cross".into(), min: 0.0, max: 0.5, step: 0.05 },
    )
}
