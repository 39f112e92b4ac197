//! Privacy-valuation distributions with bounded support and their virtual
//! values `Φ(v) = v + F(v)/f(v)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid size for the construction-time monotonicity check of `Φ`.
pub const REGULARITY_GRID: usize = 1000;
const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDistribution {
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given rate, truncated to `[0, v_max]` and
    /// renormalized.
    Exponential { rate: f64, v_max: f64 },
    /// Piecewise-linear cdf through `(value, cdf)` knots.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
    /// All mass at one value: a piecewise cdf with a single step. The user
    /// earns no information rent, so `Φ(v) = v`.
    PointMass { value: f64 },
}

impl ValueDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi <= lo {
            return Err(Error::InvalidDistribution(format!("uniform needs 0 <= lo < hi, got [{lo}, {hi}]")));
        }
        Self::Uniform { lo, hi }.validated()
    }

    pub fn exponential(rate: f64, v_max: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) || !(v_max.is_finite() && v_max > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "exponential needs a positive rate and a finite positive v_max, got rate {rate}, v_max {v_max}"
            )));
        }
        Self::Exponential { rate, v_max }.validated()
    }

    /// Knots must have non-decreasing values starting at or above zero and a
    /// cdf rising strictly from 0 to 1. A single vertical step (all values
    /// equal) yields a point mass.
    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        if knots.len() < 2 {
            return bad("piecewise cdf needs at least two knots".into());
        }
        if knots.iter().any(|(x, c)| !x.is_finite() || !c.is_finite()) {
            return bad("piecewise cdf knots must be finite".into());
        }
        let (x0, c0) = knots[0];
        let cl = knots[knots.len() - 1].1;
        if x0 < 0.0 {
            return bad(format!("support must start at or above 0, got {x0}"));
        }
        if c0 != 0.0 || cl != 1.0 {
            return bad(format!("cdf must run from 0 to 1, got {c0} .. {cl}"));
        }
        if knots.iter().all(|k| k.0 == x0) {
            return Ok(Self::PointMass { value: x0 });
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("knot values must increase strictly, got {} then {}", w[0].0, w[1].0));
            }
            if w[1].1 <= w[0].1 {
                return bad(format!("cdf must increase strictly between knots {} and {}", w[0].0, w[1].0));
            }
        }
        Self::PiecewiseLinear { knots }.validated()
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidDistribution(format!("point mass needs a finite value >= 0, got {value}")));
        }
        Ok(Self::PointMass { value })
    }

    /// Re-runs the construction checks; used after deserialization.
    pub fn validate(self) -> Result<Self> {
        match self {
            Self::Uniform { lo, hi } => Self::uniform(lo, hi),
            Self::Exponential { rate, v_max } => Self::exponential(rate, v_max),
            Self::PiecewiseLinear { knots } => Self::piecewise_linear(knots),
            Self::PointMass { value } => Self::point_mass(value),
        }
    }

    /// Rejects distributions whose virtual value decreases somewhere.
    fn validated(self) -> Result<Self> {
        let (lo, hi) = self.support();
        let mut prev = self.virtual_value(lo)?;
        for k in 1..=REGULARITY_GRID {
            let x = if k == REGULARITY_GRID { hi } else { lo + (hi - lo) * k as f64 / REGULARITY_GRID as f64 };
            let phi = self.virtual_value(x)?;
            if phi < prev - 1e-12 * prev.abs().max(1.0) {
                return Err(Error::InvalidDistribution(format!(
                    "virtual value decreases near {x} ({prev} -> {phi}); irregular distributions are not supported"
                )));
            }
            prev = phi;
        }
        Ok(self)
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Uniform { lo, hi } => (*lo, *hi),
            Self::Exponential { v_max, .. } => (0.0, *v_max),
            Self::PiecewiseLinear { knots } => (knots[0].0, knots[knots.len() - 1].0),
            Self::PointMass { value } => (*value, *value),
        }
    }

    pub fn v_max(&self) -> f64 {
        self.support().1
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, Self::PointMass { .. })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v < lo {
            return 0.0;
        }
        if v >= hi {
            return 1.0;
        }
        match self {
            Self::Uniform { lo, hi } => (v - lo) / (hi - lo),
            Self::Exponential { rate, v_max } => (-rate * v).exp_m1() / (-rate * v_max).exp_m1(),
            Self::PiecewiseLinear { knots } => {
                let k = segment(knots, v);
                let (x0, c0) = knots[k];
                let (x1, c1) = knots[k + 1];
                c0 + (c1 - c0) * (v - x0) / (x1 - x0)
            }
            Self::PointMass { .. } => unreachable!("point mass has an empty interior"),
        }
    }

    /// Density on the support; right-continuous at interior knots and taken
    /// from the left at the upper end. Zero outside the support.
    pub fn pdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v < lo || v > hi {
            return 0.0;
        }
        match self {
            Self::Uniform { lo, hi } => 1.0 / (hi - lo),
            Self::Exponential { rate, v_max } => rate * (-rate * v).exp() / -(-rate * v_max).exp_m1(),
            Self::PiecewiseLinear { knots } => {
                let k = segment(knots, v);
                (knots[k + 1].1 - knots[k].1) / (knots[k + 1].0 - knots[k].0)
            }
            Self::PointMass { .. } => f64::INFINITY,
        }
    }

    pub fn virtual_value(&self, v: f64) -> Result<f64> {
        let (lo, hi) = self.support();
        if !(v >= lo - SUPPORT_TOL && v <= hi + SUPPORT_TOL) {
            return Err(Error::OutsideSupport { value: v, lo, hi });
        }
        let v = v.clamp(lo, hi);
        match self {
            Self::PointMass { .. } => Ok(v),
            // Truncation cancels in F/f.
            Self::Exponential { rate, .. } => Ok(v + (rate * v).exp_m1() / rate),
            _ => {
                let f = self.pdf(v);
                if f <= 0.0 {
                    return Err(Error::ZeroDensity { value: v });
                }
                Ok(v + self.cdf(v) / f)
            }
        }
    }

    /// Inverse cdf for `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::Exponential { rate, v_max } => {
                let mass = -(-rate * v_max).exp_m1();
                (-(-u * mass).ln_1p() / rate).min(*v_max)
            }
            Self::PiecewiseLinear { knots } => {
                let k = knots.windows(2).position(|w| u <= w[1].1).unwrap_or(knots.len() - 2);
                let (x0, c0) = knots[k];
                let (x1, c1) = knots[k + 1];
                x0 + (x1 - x0) * (u - c0) / (c1 - c0)
            }
            Self::PointMass { value } => *value,
        }
    }
}

/// Index `k` of the segment `[x_k, x_{k+1})` containing `v`; the last
/// segment also owns the upper end.
fn segment(knots: &[(f64, f64)], v: f64) -> usize {
    let last = knots.len() - 2;
    knots.windows(2).position(|w| v < w[1].0).unwrap_or(last).min(last)
}
