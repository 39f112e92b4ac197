//! Scenario documents (TOML).
//!
//! ```toml
//! name = "two communities"
//! mode = "known"                       # or "bayesian"
//! values = { per_block = [0.9, 3.0] }  # or an explicit list, known mode only
//!
//! [covariance.blocks]                  # or `covariance.matrix = [[...], ...]`
//! sizes = [10, 10]
//! variance = 1.0                       # scalar or one entry per block
//! within = 0.05                        # within-block correlation, scalar or per block
//! cross = 0.1                          # correlation between blocks
//!
//! [[distributions]]                    # bayesian mode only
//! kind = "uniform"
//! lo = 0.0
//! hi = 2.0
//! count = 10                           # users covered by this entry, default 1
//!
//! [options]
//! symmetry = true                      # enumerate per-block counts; needs a block spec
//! tie_order = "smallest"               # override the solver's default tie order
//! tie_tol = 1e-9
//! samples = 100000
//! seed = 0
//! payment_rule = "envelope"            # or "without_report_term"
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::KnownValueInstance;
use crate::gaussian::GaussianMarket;
use crate::mechanism::{BayesianInstance, PaymentRule, ValueDistribution};
use crate::search::{BlockPartition, SolverOptions, TieBreak, DEFAULT_TIE_TOL};

pub const DEFAULT_SAMPLES: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Known,
    Bayesian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBlock {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerBlock {
    fn expand(&self, blocks: usize, path: &str) -> Result<Vec<f64>> {
        match self {
            PerBlock::Scalar(x) => Ok(vec![*x; blocks]),
            PerBlock::List(xs) if xs.len() == blocks => Ok(xs.clone()),
            PerBlock::List(xs) => {
                Err(Error::scenario(path, format!("expected {blocks} entries (one per block), found {}", xs.len())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub sizes: Vec<usize>,
    pub variance: PerBlock,
    pub within: PerBlock,
    pub cross: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<BlockSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValuesSpec {
    Explicit(Vec<f64>),
    Blocks { per_block: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(flatten)]
    pub distribution: ValueDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    #[serde(default)]
    pub symmetry: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_order: Option<TieBreak>,
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub payment_rule: PaymentRule,
}

fn default_tie_tol() -> f64 {
    DEFAULT_TIE_TOL
}

fn default_samples() -> u64 {
    DEFAULT_SAMPLES
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            symmetry: false,
            tie_order: None,
            tie_tol: DEFAULT_TIE_TOL,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            payment_rule: PaymentRule::Envelope,
        }
    }
}

/// The document as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<ValuesSpec>,
    pub covariance: CovarianceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<DistributionEntry>>,
    #[serde(default)]
    pub options: ScenarioOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    Known(Vec<f64>),
    Bayesian(Vec<ValueDistribution>),
}

/// A validated scenario with the covariance expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub market: GaussianMarket,
    pub blocks: Option<BlockPartition>,
    pub population: Population,
    pub options: ScenarioOptions,
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::scenario("<document>", e.message().trim()))?;
    scenario_from_value(value)
}

pub fn load_scenario_file(path: &std::path::Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_scenario(&text)
}

/// Validates an already parsed document tree.
pub fn scenario_from_value(value: toml::Value) -> Result<Scenario> {
    let doc: ScenarioDocument = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::scenario(if path == "." { "<document>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    Scenario::from_document(doc)
}

fn expand_blocks(spec: &BlockSpec) -> Result<(DMatrix<f64>, BlockPartition)> {
    let partition = BlockPartition::new(spec.sizes.clone())
        .map_err(|e| Error::scenario("covariance.blocks.sizes", e.to_string()))?;
    let k = spec.sizes.len();
    let variance = spec.variance.expand(k, "covariance.blocks.variance")?;
    let within = spec.within.expand(k, "covariance.blocks.within")?;
    let n = partition.n();
    let block: Vec<usize> = (0..n).map(|i| partition.block_of(i)).collect();
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        let (bi, bj) = (block[i], block[j]);
        let corr = if i == j {
            1.0
        } else if bi == bj {
            within[bi]
        } else {
            spec.cross
        };
        corr * (variance[bi] * variance[bj]).sqrt()
    });
    Ok((sigma, partition))
}

impl Scenario {
    pub fn from_document(doc: ScenarioDocument) -> Result<Self> {
        let (market, blocks) = match (&doc.covariance.matrix, &doc.covariance.blocks) {
            (Some(rows), None) => (GaussianMarket::from_rows(rows)?, None),
            (None, Some(spec)) => {
                let (sigma, partition) = expand_blocks(spec)?;
                (GaussianMarket::new(sigma)?, Some(partition))
            }
            _ => return Err(Error::scenario("covariance", "give exactly one of `matrix` or `blocks`")),
        };
        let n = market.n();
        let population = match doc.mode {
            Mode::Known => {
                if doc.distributions.is_some() {
                    return Err(Error::scenario("distributions", "not allowed in known mode"));
                }
                let values = match doc.values {
                    None => return Err(Error::scenario("values", "required in known mode")),
                    Some(ValuesSpec::Explicit(v)) => v,
                    Some(ValuesSpec::Blocks { per_block }) => {
                        let Some(partition) = &blocks else {
                            return Err(Error::scenario("values.per_block", "needs a block covariance spec"));
                        };
                        if per_block.len() != partition.sizes().len() {
                            return Err(Error::scenario(
                                "values.per_block",
                                format!("expected {} entries, found {}", partition.sizes().len(), per_block.len()),
                            ));
                        }
                        (0..n).map(|i| per_block[partition.block_of(i)]).collect()
                    }
                };
                if values.len() != n {
                    return Err(Error::scenario("values", format!("expected {n} values, found {}", values.len())));
                }
                Population::Known(values)
            }
            Mode::Bayesian => {
                if doc.values.is_some() {
                    return Err(Error::scenario("values", "not allowed in bayesian mode; use distributions"));
                }
                let Some(entries) = doc.distributions else {
                    return Err(Error::scenario("distributions", "required in bayesian mode"));
                };
                let mut dists = Vec::with_capacity(n);
                for (k, entry) in entries.into_iter().enumerate() {
                    let d = entry
                        .distribution
                        .validate()
                        .map_err(|e| Error::scenario(format!("distributions[{k}]"), e.to_string()))?;
                    let count = entry.count.unwrap_or(1);
                    dists.extend(std::iter::repeat_n(d, count));
                }
                if dists.len() != n {
                    return Err(Error::scenario(
                        "distributions",
                        format!("entries cover {} users, covariance has {n}", dists.len()),
                    ));
                }
                Population::Bayesian(dists)
            }
        };
        let options = doc.options;
        if !(options.tie_tol.is_finite() && options.tie_tol >= 0.0) {
            return Err(Error::scenario("options.tie_tol", "must be finite and non-negative"));
        }
        if options.symmetry && blocks.is_none() {
            return Err(Error::scenario("options.symmetry", "needs a block covariance spec"));
        }
        let scenario = Self { name: doc.name, market, blocks, population, options };
        // Construct once so value/distribution errors surface at load time.
        match &scenario.population {
            Population::Known(_) => drop(scenario.known_instance()?),
            Population::Bayesian(_) => drop(scenario.bayesian_instance()?),
        }
        Ok(scenario)
    }

    pub fn n(&self) -> usize {
        self.market.n()
    }

    pub fn mode(&self) -> Mode {
        match self.population {
            Population::Known(_) => Mode::Known,
            Population::Bayesian(_) => Mode::Bayesian,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tie_tol: self.options.tie_tol,
            symmetry: if self.options.symmetry { self.blocks.clone() } else { None },
            tie_order: self.options.tie_order,
        }
    }

    pub fn known_instance(&self) -> Result<KnownValueInstance> {
        match &self.population {
            Population::Known(v) => KnownValueInstance::new(self.market.clone(), v.clone()),
            Population::Bayesian(_) => Err(Error::scenario("mode", "known valuations required; scenario is bayesian")),
        }
    }

    pub fn bayesian_instance(&self) -> Result<BayesianInstance> {
        match &self.population {
            Population::Bayesian(d) => BayesianInstance::new(self.market.clone(), d.clone()),
            Population::Known(_) => Err(Error::scenario("mode", "value distributions required; scenario is known")),
        }
    }

    /// The scenario with the covariance written out entry by entry and one
    /// value or distribution per user. Block symmetry is dropped along with
    /// the block spec.
    pub fn resolved(&self) -> ScenarioDocument {
        let n = self.n();
        let sigma = self.market.covariance();
        let matrix = (0..n).map(|i| (0..n).map(|j| sigma[(i, j)]).collect()).collect();
        let (values, distributions) = match &self.population {
            Population::Known(v) => (Some(ValuesSpec::Explicit(v.clone())), None),
            Population::Bayesian(d) => (
                None,
                Some(d.iter().map(|d| DistributionEntry { count: None, distribution: d.clone() }).collect()),
            ),
        };
        ScenarioDocument {
            name: self.name.clone(),
            mode: self.mode(),
            values,
            covariance: CovarianceSpec { matrix: Some(matrix), blocks: None },
            distributions,
            options: ScenarioOptions { symmetry: false, ..self.options.clone() },
        }
    }

    /// The resolved scenario as TOML; with a block spec the partition is kept
    /// as a comment.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(&self.resolved()).expect("scenario documents serialize");
        match &self.blocks {
            Some(b) => format!("# blocks: {:?}\n{body}", b.sizes()),
            None => body,
        }
    }
}
