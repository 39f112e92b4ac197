//! Solvers for a monopoly data market in which users' types are correlated
//! Gaussians, so data shared by one user leaks information about others.
//!
//! The crate covers breached-information algebra ([`gaussian`]), the
//! known-value Stackelberg game ([`game`]), welfare benchmarks ([`welfare`]),
//! incentive-compatible mechanisms for unknown valuations ([`mechanism`]) and
//! scenario, sweep and example drivers ([`harness`]).

pub mod error;
pub mod game;
pub mod gaussian;
pub mod harness;
pub mod mechanism;
pub mod profile;
pub mod search;
pub mod welfare;

pub use error::{Error, Result};
pub use game::{
    enumerate_user_equilibria, greatest_user_equilibrium, is_user_equilibrium, least_user_equilibrium,
    stackelberg_equilibrium, supporting_prices, KnownValueInstance, MarketOutcome, PriceVector, StackelbergReport,
};
pub use gaussian::{GaussianMarket, Leakage, LeakageTable};
pub use mechanism::{BayesianInstance, PaymentRule, ValueDistribution};
pub use profile::ActionProfile;
pub use search::{BlockPartition, SolverOptions, TieBreak};
pub use welfare::{classify_efficiency, first_best, social_surplus, Verdict};
