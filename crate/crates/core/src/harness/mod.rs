//! Scenario files, sweeps, worked examples and property suites.

pub mod examples;
pub mod scenario;
pub mod suites;
pub mod sweep;

pub use scenario::{load_scenario, load_scenario_file, Mode, Population, Scenario, ScenarioDocument};
pub use sweep::{run_sweep, Axis, SweepOverrides, SweepSpec, SweepTable};
pub use suites::{run_property_suite, Suite, SuiteOptions, SuiteReport};
