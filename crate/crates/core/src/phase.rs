//! Phase diagram of the binary-tree model: the sign of `Δ(θ)`, its root
//! in θ for each J, and grid scans over (β, J).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{closed_form_solutions, random_seeds, solve_numeric, NewtonConfig};
use crate::error::{Error, Result};
use crate::model::{discriminant, discriminant_slope, ModelParams, CRITICAL_BAND};

/// Upper end of the default search interval for the critical θ.
pub const THETA_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Unique,
    Critical,
    Coexistence,
}

impl Region {
    pub fn of(delta: f64) -> Self {
        if delta > CRITICAL_BAND {
            Region::Coexistence
        } else if delta < -CRITICAL_BAND {
            Region::Unique
        } else {
            Region::Critical
        }
    }

    /// Number of boundary solutions in the region.
    pub fn expected_solutions(&self) -> usize {
        match self {
            Region::Coexistence => 3,
            _ => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Unique => "unique",
            Region::Critical => "critical",
            Region::Coexistence => "coexistence",
        }
    }
}

/// Root of `Δ(θ) = 0` on `(1, THETA_MAX]`.
pub fn critical_theta(j: f64) -> Result<f64> {
    critical_theta_within(j, THETA_MAX)
}

/// Root of `Δ(θ) = 0` on `(1, theta_max]`: bisection on `[√3, theta_max]`
/// followed by Newton polishing. `Δ < 0` on `(1, √3]` and Δ is increasing
/// beyond it, so the root is unique when it exists.
pub fn critical_theta_within(j: f64, theta_max: f64) -> Result<f64> {
    if !j.is_finite() || j < 0.0 {
        return Err(Error::InvalidParams(format!("J must be finite and >= 0, got {j}")));
    }
    let mut lo = 3f64.sqrt();
    let mut hi = theta_max;
    if !(hi > lo) || discriminant(hi, j) <= 0.0 {
        return Err(Error::NoRoot { j, theta_max });
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if discriminant(mid, j) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..4 {
        let step = discriminant(theta, j) / discriminant_slope(theta, j);
        let next = theta - step;
        if !(lo - 1e-12..=hi + 1e-12).contains(&next) {
            break;
        }
        theta = next;
        if step.abs() < 1e-15 * theta {
            break;
        }
    }
    Ok(theta)
}

/// Inclusive evenly spaced range `lo:hi:count`; a bare number is a single
/// point. Serialized in the same string form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridRange {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        let r = GridRange { lo, hi, count };
        r.validate()?;
        Ok(r)
    }

    pub fn single(value: f64) -> Self {
        GridRange { lo: value, hi: value, count: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidParams("range bounds must be finite".into()));
        }
        if self.count == 0 {
            return Err(Error::InvalidParams("range count must be >= 1".into()));
        }
        if self.count == 1 && self.lo != self.hi {
            return Err(Error::InvalidParams("a one-point range needs lo == hi".into()));
        }
        if self.hi < self.lo {
            return Err(Error::InvalidParams(format!("range {} has hi < lo", self)));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count).map(|i| if i + 1 == self.count { self.hi } else { self.lo + i as f64 * step }).collect()
    }
}

impl fmt::Display for GridRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count == 1 {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}:{}:{}", self.lo, self.hi, self.count)
        }
    }
}

impl FromStr for GridRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("expected lo:hi:count or a number, got '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let range = match parts.as_slice() {
            [v] => GridRange::single(v.trim().parse().map_err(|_| bad())?),
            [lo, hi, count] => GridRange {
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: hi.trim().parse().map_err(|_| bad())?,
                count: count.trim().parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        range.validate()?;
        Ok(range)
    }
}

impl TryFrom<String> for GridRange {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridRange> for String {
    fn from(r: GridRange) -> String {
        r.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Seeds per grid point for the numeric solution count; 0 skips it.
    pub numeric_seeds: usize,
    pub seed: u64,
    pub newton: NewtonConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub theta: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub region: Region,
    /// Closed-form solution count, or the numeric count when it was run.
    pub solutions: usize,
    pub numeric_solutions: Option<usize>,
    /// `J = 0`: no sibling coupling, the plain Ising case.
    pub competing_free: bool,
}

impl PhasePoint {
    /// Numeric count matches the region, when a numeric count exists.
    pub fn counts_agree(&self) -> bool {
        self.numeric_solutions.is_none_or(|n| n == self.region.expected_solutions())
    }
}

pub fn phase_point(beta: f64, j: f64, options: &ScanOptions, seeds: &[[f64; 2]]) -> Result<PhasePoint> {
    let params = ModelParams::new(beta, j, 2)?;
    let theta = params.theta();
    let delta = discriminant(theta, j);
    let region = Region::of(delta);
    let closed = match region {
        Region::Coexistence => closed_form_solutions(&params)?.len(),
        _ => 1,
    };
    let numeric_solutions = if options.numeric_seeds > 0 {
        Some(solve_numeric(&params, seeds, &options.newton)?.solutions.len())
    } else {
        None
    };
    Ok(PhasePoint {
        beta,
        j,
        theta,
        delta,
        region,
        solutions: numeric_solutions.unwrap_or(closed),
        numeric_solutions,
        competing_free: j == 0.0,
    })
}

/// Row-major grid, J outer and β inner.
pub fn scan(betas: &GridRange, js: &GridRange, options: &ScanOptions) -> Result<Vec<PhasePoint>> {
    betas.validate()?;
    js.validate()?;
    let seeds = random_seeds(options.numeric_seeds, options.seed);
    let grid: Vec<(f64, f64)> = js.values().into_iter().flat_map(|j| betas.values().into_iter().map(move |b| (b, j))).collect();
    grid.par_iter().map(|&(b, j)| phase_point(b, j, options, &seeds)).collect()
}
