//! Parameter sweeps over scenario templates, written as CSV.
//!
//! ```toml
//! output = "surplus.csv"
//! scenario_file = "two_communities.toml"   # or an inline [scenario] table
//!
//! [[axis]]
//! path = "values.per_block.1"              # dot path into the scenario; numbers index arrays
//! min = 1.001
//! max = 3.0
//! step = 0.1
//! ```
//!
//! Known-mode columns, after one column per axis:
//! `status, profile, sharers, prices, platform_payoff, user_payoff_sum,
//! social_surplus, first_best_profile, first_best_surplus, surplus_bound,
//! verdict, coordination_risk`.
//!
//! Bayesian-mode columns, after the axes:
//! `status, expected_payoff, std_error, samples, seed`.
//!
//! `status` is `ok`, or `non_psd` when the grid point's covariance is not
//! positive semidefinite (the remaining fields are then empty). `sharers`
//! holds per-block sharing counts joined by `;` when the scenario has a
//! block covariance, and the total count otherwise. `prices` is joined by
//! `;`. Floats carry 17 significant digits; lines end in LF.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::scenario::{scenario_from_value, Mode, Scenario};
use crate::error::{Error, Result};
use crate::game::stackelberg_equilibrium;
use crate::mechanism::{expected_platform_payoff, Estimator};
use crate::profile::ActionProfile;
use crate::welfare::{classify_efficiency, Verdict};

pub const MAX_AXES: usize = 2;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub path: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(path: impl Into<String>, min: f64, max: f64, step: f64) -> Result<Self> {
        let axis = Self { path: path.into(), min, max, step };
        axis.validate()?;
        Ok(axis)
    }

    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step.is_finite()) {
            return Err(Error::scenario(format!("axis `{}`", self.path), "bounds and step must be finite"));
        }
        if self.step <= 0.0 || self.max < self.min {
            return Err(Error::scenario(format!("axis `{}`", self.path), "needs step > 0 and max >= min"));
        }
        Ok(())
    }

    /// `min + k·step` for every `k` that stays within `max` (up to rounding).
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| (self.min + k as f64 * self.step).min(self.max)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub template: toml::Value,
    pub axes: Vec<Axis>,
    pub output: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDocument {
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    scenario: Option<toml::Value>,
    #[serde(default)]
    scenario_file: Option<PathBuf>,
    axis: Vec<Axis>,
}

impl SweepSpec {
    pub fn new(template: toml::Value, axes: Vec<Axis>) -> Result<Self> {
        let spec = Self { template, axes, output: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses a sweep document. `scenario_file` and `output` are resolved
    /// against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::scenario("<sweep>", e.message().trim()))?;
        let doc: SweepDocument = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::scenario(e.path().to_string(), e.into_inner().to_string()))?;
        let template = match (doc.scenario, doc.scenario_file) {
            (Some(inline), None) => inline,
            (None, Some(file)) => {
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| Error::scenario("scenario_file", e.message().trim()))?
            }
            _ => return Err(Error::scenario("scenario", "give exactly one of `scenario` or `scenario_file`")),
        };
        let spec = Self { template, axes: doc.axis, output: doc.output.map(|o| base_dir.join(o)) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > MAX_AXES {
            return Err(Error::scenario("axis", format!("give one or two axes, found {}", self.axes.len())));
        }
        for axis in &self.axes {
            axis.validate()?;
            let mut probe = self.template.clone();
            set_path(&mut probe, &axis.path, axis.min)?;
        }
        Ok(())
    }

    pub fn template_toml(&self) -> String {
        toml::to_string(&self.template).unwrap_or_default()
    }

    /// Grid points in row-major axis order (the last axis varies fastest).
    pub fn grid(&self) -> Vec<Vec<f64>> {
        self.axes.iter().fold(vec![vec![]], |acc, axis| {
            let values = axis.values();
            acc.into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&x| {
                        let mut point = prefix.clone();
                        point.push(x);
                        point
                    })
                })
                .collect()
        })
    }
}

/// Overwrites the number at `path`.
pub fn set_path(root: &mut toml::Value, path: &str, x: f64) -> Result<()> {
    let unresolved = |why: &str| Error::scenario(path, format!("cannot resolve parameter path: {why}"));
    let mut node = root;
    for segment in path.split('.') {
        node = match node {
            toml::Value::Table(t) => t.get_mut(segment).ok_or_else(|| unresolved(&format!("no key `{segment}`")))?,
            toml::Value::Array(a) => {
                let idx: usize = segment.parse().map_err(|_| unresolved(&format!("`{segment}` is not an index")))?;
                let len = a.len();
                a.get_mut(idx).ok_or_else(|| unresolved(&format!("index {idx} out of range for length {len}")))?
            }
            _ => return Err(unresolved(&format!("`{segment}` descends into a scalar"))),
        };
    }
    match node {
        toml::Value::Float(_) | toml::Value::Integer(_) => {
            *node = toml::Value::Float(x);
            Ok(())
        }
        _ => Err(unresolved("target is not numeric")),
    }
}

/// Renders a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(xs: impl IntoIterator<Item = String>) -> String {
    xs.into_iter().collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub const KNOWN_COLUMNS: [&str; 12] = [
    "status",
    "profile",
    "sharers",
    "prices",
    "platform_payoff",
    "user_payoff_sum",
    "social_surplus",
    "first_best_profile",
    "first_best_surplus",
    "surplus_bound",
    "verdict",
    "coordination_risk",
];

pub const BAYESIAN_COLUMNS: [&str; 5] = ["status", "expected_payoff", "std_error", "samples", "seed"];

/// Seed and sample overrides applied to every grid point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepOverrides {
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub tie_tol: Option<f64>,
}

pub fn run_sweep(spec: &SweepSpec, overrides: SweepOverrides) -> Result<SweepTable> {
    let mode = spec
        .template
        .get("mode")
        .and_then(|m| m.as_str())
        .ok_or_else(|| Error::scenario("mode", "template needs a mode"))?;
    let outcome_columns: &[&str] = if mode == "bayesian" { &BAYESIAN_COLUMNS } else { &KNOWN_COLUMNS };
    let header = spec.axes.iter().map(|a| a.path.clone()).chain(outcome_columns.iter().map(|c| c.to_string())).collect();
    let rows = spec
        .grid()
        .into_par_iter()
        .map(|point| {
            let mut doc = spec.template.clone();
            for (axis, &x) in spec.axes.iter().zip(&point) {
                set_path(&mut doc, &axis.path, x)?;
            }
            let mut row: Vec<String> = point.iter().map(|&x| fmt_f64(x)).collect();
            match scenario_from_value(doc) {
                Ok(mut scenario) => {
                    apply(&mut scenario, overrides);
                    row.extend(evaluate(&scenario)?);
                }
                Err(Error::NotPositiveSemidefinite { .. }) => {
                    row.push("non_psd".into());
                    row.extend(std::iter::repeat_n(String::new(), outcome_columns.len() - 1));
                }
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { header, rows })
}

fn apply(scenario: &mut Scenario, overrides: SweepOverrides) {
    if let Some(seed) = overrides.seed {
        scenario.options.seed = seed;
    }
    if let Some(samples) = overrides.samples {
        scenario.options.samples = samples;
    }
    if let Some(tol) = overrides.tie_tol {
        scenario.options.tie_tol = tol;
    }
}

fn sharers_field(scenario: &Scenario, a: ActionProfile) -> String {
    match &scenario.blocks {
        Some(blocks) => join(blocks.counts_of(a).into_iter().map(|c| c.to_string())),
        None => a.count().to_string(),
    }
}

fn evaluate(scenario: &Scenario) -> Result<Vec<String>> {
    let opts = scenario.solver_options();
    match scenario.mode() {
        Mode::Known => {
            let instance = scenario.known_instance()?;
            let report = stackelberg_equilibrium(&instance, &opts)?;
            let out = &report.outcome;
            let eff = classify_efficiency(&instance, instance.values(), out.profile, &opts)?;
            let verdict = match eff.verdict {
                Verdict::Efficient => "efficient",
                Verdict::Inefficient => "inefficient",
                Verdict::Indeterminate => "indeterminate",
            };
            Ok(vec![
                "ok".into(),
                out.profile.to_string(),
                sharers_field(scenario, out.profile),
                join(out.prices.as_slice().iter().map(|&p| fmt_f64(p))),
                fmt_f64(out.platform_payoff),
                fmt_f64(out.user_payoffs.iter().sum()),
                fmt_f64(out.social_surplus),
                eff.first_best.map(|a| a.to_string()).unwrap_or_default(),
                eff.first_best_surplus.map(fmt_f64).unwrap_or_default(),
                fmt_f64(eff.surplus_bound),
                verdict.into(),
                report.audit.coordination_risk.to_string(),
            ])
        }
        Mode::Bayesian => {
            let instance = scenario.bayesian_instance()?;
            let o = &scenario.options;
            let est = expected_platform_payoff(&instance, o.samples, o.seed, Estimator::VirtualSurplus, &opts)?;
            Ok(vec![
                "ok".into(),
                fmt_f64(est.mean),
                est.std_error.map(fmt_f64).unwrap_or_default(),
                est.samples.to_string(),
                o.seed.to_string(),
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::load_scenario;

    const PAIR: &str = r#"
name = "pair"
mode = "known"
values = [1.0, 1.0]

[covariance]
matrix = [[1.0, 0.5], [0.5, 1.0]]
"#;

    #[test]
    fn axis_values_include_both_ends() {
        let axis = Axis::new("x", 0.0, 0.5, 0.05).unwrap();
        let v = axis.values();
        assert_eq!(v.len(), 11);
        assert_eq!(v[10], 0.5);
        assert_eq!(Axis::new("x", 1.0, 1.0, 0.3).unwrap().values(), vec![1.0]);
        assert!(Axis::new("x", 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn path_resolution() {
        let mut v: toml::Value = toml::from_str(PAIR).unwrap();
        set_path(&mut v, "covariance.matrix.0.1", 0.3).unwrap();
        set_path(&mut v, "values.1", 2.0).unwrap();
        assert_eq!(v["covariance"]["matrix"][0][1].as_float(), Some(0.3));
        assert!(set_path(&mut v, "covariance.nope", 1.0).is_err());
        assert!(set_path(&mut v, "values.7", 1.0).is_err());
        assert!(set_path(&mut v, "name", 1.0).is_err());
    }

    #[test]
    fn single_point_matches_direct_solve() {
        let template: toml::Value = toml::from_str(PAIR).unwrap();
        let spec = SweepSpec::new(template, vec![Axis::new("values.0", 1.0, 1.0, 1.0).unwrap()]).unwrap();
        let table = run_sweep(&spec, SweepOverrides::default()).unwrap();
        assert_eq!(table.rows.len(), 1);
        let inst = load_scenario(PAIR).unwrap().known_instance().unwrap();
        let direct = stackelberg_equilibrium(&inst, &Default::default()).unwrap();
        let row = &table.rows[0];
        assert_eq!(row[table.column("profile").unwrap()], "11");
        let payoff: f64 = row[table.column("platform_payoff").unwrap()].parse().unwrap();
        assert_eq!(payoff, direct.outcome.platform_payoff);
        assert!(table.to_csv().ends_with('\n') && !table.to_csv().contains('\r'));
    }

    #[test]
    fn two_axes_in_row_major_order() {
        let template: toml::Value = toml::from_str(PAIR).unwrap();
        let spec = SweepSpec::new(
            template,
            vec![Axis::new("values.0", 0.5, 1.0, 0.5).unwrap(), Axis::new("values.1", 0.0, 2.0, 1.0).unwrap()],
        )
        .unwrap();
        let grid = spec.grid();
        assert_eq!(grid, vec![
            vec![0.5, 0.0],
            vec![0.5, 1.0],
            vec![0.5, 2.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0]
        ]);
    }

    #[test]
    fn non_psd_points_are_marked() {
        let template: toml::Value = toml::from_str(
            r#"
name = "pair"
mode = "known"
values = { per_block = [0.5, 0.5] }

[covariance.blocks]
sizes = [1, 1]
variance = 1.0
within = 0.0
cross = 0.0
"#,
        )
        .unwrap();
        let spec = SweepSpec::new(template, vec![Axis::new("covariance.blocks.cross", 0.5, 1.5, 0.5).unwrap()]).unwrap();
        let table = run_sweep(&spec, SweepOverrides::default()).unwrap();
        let status: Vec<&str> = table.rows.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(status, vec!["ok", "ok", "non_psd"]);
        assert!(table.rows[2][2..].iter().all(String::is_empty));
    }
}
