use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cayley_qmc::boundary::NewtonConfig;
use cayley_qmc::finite_volume::Caps;
use cayley_qmc::model::ModelParams;
use cayley_qmc::observables::SigmaLevel;
use cayley_qmc::phase::GridRange;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    PhaseScan,
    SolveBoundary,
    Verify,
    Expectation,
    Witness,
}

impl Command {
    pub fn default_format(&self) -> Format {
        match self {
            Command::PhaseScan | Command::Expectation => Format::Csv,
            _ => Format::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Boundary-equation residuals.
    pub boundary: f64,
    /// Normalization and projectivity residuals.
    pub projectivity: f64,
    /// Relative closed-form/oracle gap.
    pub expectation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { boundary: 1e-10, projectivity: 1e-10, expectation: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub beta: Option<GridRange>,
    pub theta: Option<GridRange>,
    #[serde(rename = "J")]
    pub j: GridRange,
    pub k: usize,
    pub n: usize,
    pub n_max: usize,
    pub all_solutions: bool,
    pub seed: u64,
    /// Newton seeds for numeric solves; 0 disables them in `phase-scan`.
    pub seeds: usize,
    pub sigma_level: SigmaLevel,
    pub caps: Caps,
    pub tolerances: Tolerances,
    pub newton: NewtonConfig,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Verify,
            beta: None,
            theta: None,
            j: GridRange::single(1.0),
            k: 2,
            n: 2,
            n_max: 50,
            all_solutions: false,
            seed: 0,
            seeds: 100,
            sigma_level: SigmaLevel::Level,
            caps: Caps::default(),
            tolerances: Tolerances::default(),
            newton: NewtonConfig::default(),
            out: None,
            format: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading --config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing --config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [("boundary", t.boundary), ("projectivity", t.projectivity), ("expectation", t.expectation)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("tolerance '{name}' must be > 0, got {v}");
            }
        }
        self.caps.validate().context("--caps")?;
        if self.beta.is_some() && self.theta.is_some() {
            bail!("--beta and --theta are mutually exclusive");
        }
        if self.command != Command::PhaseScan {
            if self.beta.is_none() && self.theta.is_none() {
                bail!("one of --beta or --theta is required");
            }
            for (flag, r) in [("--beta", self.beta), ("--theta", self.theta), ("--J", Some(self.j))] {
                if let Some(r) = r {
                    if r.count != 1 {
                        bail!("{flag} takes a single value for this command, got a range");
                    }
                }
            }
            self.params()?;
        } else if self.theta.is_some() {
            bail!("phase-scan takes --beta ranges, not --theta");
        }
        if self.k != 2 && self.command != Command::Verify {
            bail!("--k other than 2 is only supported by verify");
        }
        if matches!(self.command, Command::Witness) && self.n_max == 0 {
            bail!("--n-max must be >= 1");
        }
        if matches!(self.command, Command::Expectation) && self.n == 0 {
            bail!("--n must be >= 1 for expectation");
        }
        Ok(())
    }

    /// Single-point parameters for every command except `phase-scan`.
    pub fn params(&self) -> Result<ModelParams> {
        let j = self.j.lo;
        let params = match (self.beta, self.theta) {
            (Some(b), None) => ModelParams::new(b.lo, j, self.k),
            (None, Some(t)) => ModelParams::from_theta(t.lo, j).and_then(|p| ModelParams::new(p.beta, j, self.k)),
            _ => bail!("exactly one of --beta or --theta is required"),
        };
        params.context("model parameters")
    }

    pub fn format(&self) -> Format {
        if let Some(f) = self.format {
            return f;
        }
        match self.out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            _ => self.command.default_format(),
        }
    }
}
