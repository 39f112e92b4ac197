//! Profile search: exhaustive scans over `{0,1}^n` and the block-symmetric
//! reduction that enumerates per-block sharing counts instead.
//!
//! Scans may evaluate candidates in parallel; the reduction is deterministic
//! because ties are resolved by the lexicographic order on bit vectors, never
//! by evaluation order.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMarket, LeakageTable, TABLE_MAX_USERS};
use crate::profile::ActionProfile;

/// Absolute payoff difference below which two profiles count as tied.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;
/// Entry tolerance for recognizing block structure in a covariance matrix.
pub const BLOCK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lexicographically smallest tied profile.
    Smallest,
    /// Lexicographically greatest tied profile.
    Greatest,
}

/// Users partitioned into contiguous blocks that are exchangeable within
/// each block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    sizes: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Symmetry("block sizes must be positive and non-empty".into()));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect()
    }

    pub fn block_of(&self, user: usize) -> usize {
        self.block_ranges().iter().position(|r| r.contains(&user)).expect("user inside partition")
    }

    pub fn class_count(&self) -> u128 {
        self.sizes.iter().map(|&s| s as u128 + 1).product()
    }

    /// Checks that relabeling users inside a block leaves `Σ` unchanged:
    /// equal variances and within-block covariances per block, equal
    /// covariances per block pair.
    pub fn validate_market(&self, market: &GaussianMarket) -> Result<()> {
        if self.n() != market.n() {
            return Err(Error::DimensionMismatch { expected: market.n(), found: self.n() });
        }
        let ranges = self.block_ranges();
        let sigma = market.covariance();
        for (b, rb) in ranges.iter().enumerate() {
            for (c, rc) in ranges.iter().enumerate() {
                let mut reference: Option<f64> = None;
                for i in rb.clone() {
                    for j in rc.clone() {
                        if i == j {
                            continue;
                        }
                        let x = sigma[(i, j)];
                        match reference {
                            None => reference = Some(x),
                            Some(r) if (r - x).abs() > BLOCK_TOL => {
                                return Err(Error::Symmetry(format!(
                                    "covariance between blocks {b} and {c} is not constant at ({i}, {j})"
                                )));
                            }
                            Some(_) => {}
                        }
                    }
                }
            }
            let v0 = sigma[(rb.start, rb.start)];
            if let Some(i) = rb.clone().find(|&i| (sigma[(i, i)] - v0).abs() > BLOCK_TOL) {
                return Err(Error::Symmetry(format!("variance of user {i} differs within block {b}")));
            }
        }
        Ok(())
    }

    /// Checks that a per-user weight (valuation, virtual value) is constant
    /// inside each block.
    pub fn validate_weights(&self, weights: &[f64], what: &str) -> Result<()> {
        if weights.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), found: weights.len() });
        }
        for (b, r) in self.block_ranges().into_iter().enumerate() {
            let w0 = weights[r.start];
            if let Some(i) = r.clone().find(|&i| (weights[i] - w0).abs() > BLOCK_TOL) {
                return Err(Error::Symmetry(format!("{what} of user {i} differs within block {b}")));
            }
        }
        Ok(())
    }

    /// The class member that wins a lexicographic tie under `tie`: sharers
    /// at the end of each block for `Smallest`, at the start for `Greatest`.
    pub fn representative(&self, counts: &[usize], tie: TieBreak) -> ActionProfile {
        let mut a = ActionProfile::empty(self.n());
        for (r, &k) in self.block_ranges().into_iter().zip(counts) {
            let members: Vec<usize> = match tie {
                TieBreak::Smallest => (r.end - k..r.end).collect(),
                TieBreak::Greatest => (r.start..r.start + k).collect(),
            };
            for i in members {
                a = a.with(i, true);
            }
        }
        a
    }

    pub fn counts_of(&self, a: ActionProfile) -> Vec<usize> {
        self.block_ranges().into_iter().map(|r| r.filter(|&i| a.shares(i)).count()).collect()
    }

    pub fn class_size(&self, counts: &[usize]) -> u128 {
        self.sizes.iter().zip(counts).map(|(&s, &k)| binomial(s, k)).product()
    }

    /// All count vectors in mixed-radix order, last block fastest.
    pub fn count_vectors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for &s in &self.sizes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..=s).map(move |k| {
                        let mut v = prefix.clone();
                        v.push(k);
                        v
                    })
                })
                .collect();
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tie_tol: f64,
    /// Enumerate per-block sharing counts instead of all profiles.
    pub symmetry: Option<BlockPartition>,
    /// Overrides each solver's default tie order.
    pub tie_order: Option<TieBreak>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::exhaustive()
    }
}

impl SolverOptions {
    pub fn exhaustive() -> Self {
        Self { tie_tol: DEFAULT_TIE_TOL, symmetry: None, tie_order: None }
    }

    pub fn with_blocks(blocks: BlockPartition) -> Self {
        Self { symmetry: Some(blocks), ..Self::exhaustive() }
    }

    pub(crate) fn tie(&self, default: TieBreak) -> TieBreak {
        self.tie_order.unwrap_or(default)
    }

    pub(crate) fn space(&self, market: &GaussianMarket, what: &'static str) -> Result<ProfileSpace> {
        match &self.symmetry {
            Some(blocks) => {
                blocks.validate_market(market)?;
                Ok(ProfileSpace::Blocks(blocks.clone()))
            }
            None if market.n() <= TABLE_MAX_USERS => Ok(ProfileSpace::Exhaustive(market.n())),
            None => Err(Error::TooLarge { what, n: market.n(), max: TABLE_MAX_USERS }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ProfileSpace {
    Exhaustive(usize),
    Blocks(BlockPartition),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    BlockSymmetric,
}

/// Result of a deterministic argmax over profiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSearch {
    pub best: ActionProfile,
    pub value: f64,
    /// Tied candidates in lexicographic order. In block mode these are class
    /// representatives.
    pub ties: Vec<ActionProfile>,
    /// Number of actual profiles the tie set stands for.
    pub tie_multiplicity: u128,
    pub tie_break: TieBreak,
    pub mode: SearchMode,
    pub candidates_evaluated: u64,
}

impl ProfileSpace {
    pub(crate) fn mode(&self) -> SearchMode {
        match self {
            ProfileSpace::Exhaustive(_) => SearchMode::Exhaustive,
            ProfileSpace::Blocks(_) => SearchMode::BlockSymmetric,
        }
    }

    pub(crate) fn argmax<F>(&self, tie: TieBreak, tol: f64, objective: F) -> ProfileSearch
    where
        F: Fn(ActionProfile) -> f64 + Sync,
    {
        let scored: Vec<(ActionProfile, f64, u128)> = match self {
            ProfileSpace::Exhaustive(n) => {
                let n = *n;
                (0..1u64 << n)
                    .into_par_iter()
                    .map(|mask| {
                        let a = ActionProfile::from_mask(n, mask);
                        (a, objective(a), 1)
                    })
                    .collect()
            }
            ProfileSpace::Blocks(blocks) => blocks
                .count_vectors()
                .into_par_iter()
                .map(|counts| {
                    let a = blocks.representative(&counts, tie);
                    (a, objective(a), blocks.class_size(&counts))
                })
                .collect(),
        };
        let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let mut tied: Vec<&(ActionProfile, f64, u128)> = scored.iter().filter(|s| s.1 >= max - tol).collect();
        tied.sort_by_key(|s| s.0);
        let winner = match tie {
            TieBreak::Smallest => tied[0],
            TieBreak::Greatest => tied[tied.len() - 1],
        };
        ProfileSearch {
            best: winner.0,
            value: winner.1,
            ties: tied.iter().map(|s| s.0).collect(),
            tie_multiplicity: tied.iter().map(|s| s.2).sum(),
            tie_break: tie,
            mode: self.mode(),
            candidates_evaluated: scored.len() as u64,
        }
    }
}

/// Lazily built leakage table, shared by the exhaustive solvers of one
/// instance.
#[derive(Debug, Clone, Default)]
pub(crate) struct TableCache {
    cell: std::sync::OnceLock<LeakageTable>,
}

impl TableCache {
    pub(crate) fn get(&self, market: &GaussianMarket) -> Result<&LeakageTable> {
        if let Some(t) = self.cell.get() {
            return Ok(t);
        }
        let table = LeakageTable::build(market)?;
        Ok(self.cell.get_or_init(|| table))
    }
}

impl PartialEq for TableCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_class_sizes() {
        let b = BlockPartition::new(vec![2, 3]).unwrap();
        assert_eq!(b.count_vectors().len(), 12);
        assert_eq!(b.class_count(), 12);
        let total: u128 = b.count_vectors().iter().map(|c| b.class_size(c)).sum();
        assert_eq!(total, 32);
        assert_eq!(binomial(10, 5), 252);
    }

    #[test]
    fn representatives_are_lexicographic_extremes() {
        let b = BlockPartition::new(vec![3, 2]).unwrap();
        assert_eq!(b.representative(&[1, 1], TieBreak::Smallest).to_string(), "00101");
        assert_eq!(b.representative(&[1, 1], TieBreak::Greatest).to_string(), "10010");
        assert_eq!(b.counts_of("01101".parse().unwrap()), vec![2, 1]);
    }

    #[test]
    fn block_validation() {
        let b = BlockPartition::new(vec![2, 1]).unwrap();
        let ok = GaussianMarket::from_rows(&[vec![1.0, 0.2, 0.1], vec![0.2, 1.0, 0.1], vec![0.1, 0.1, 2.0]]).unwrap();
        b.validate_market(&ok).unwrap();
        let bad = GaussianMarket::from_rows(&[vec![1.0, 0.2, 0.1], vec![0.2, 1.0, 0.3], vec![0.1, 0.3, 2.0]]).unwrap();
        assert!(matches!(b.validate_market(&bad), Err(Error::Symmetry(_))));
        assert!(b.validate_weights(&[0.5, 0.5, 3.0], "value").is_ok());
        assert!(b.validate_weights(&[0.5, 0.6, 3.0], "value").is_err());
    }

    #[test]
    fn argmax_tie_breaking() {
        let space = ProfileSpace::Exhaustive(3);
        // Objective counts sharers, capped at two: every 2-sharer profile ties.
        let f = |a: ActionProfile| a.count().min(2) as f64 - if a.count() == 3 { 1.0 } else { 0.0 };
        let lo = space.argmax(TieBreak::Smallest, 1e-9, f);
        assert_eq!(lo.best.to_string(), "011");
        assert_eq!(lo.ties.len(), 3);
        let hi = space.argmax(TieBreak::Greatest, 1e-9, f);
        assert_eq!(hi.best.to_string(), "110");
    }
}
