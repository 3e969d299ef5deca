//! Ising model with competing interactions: couplings, interaction
//! operators and the derived scalar coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LocalOperator, SiteOperator, C64};

fn default_order() -> usize {
    2
}

/// Inverse temperature, competing coupling and tree order.
///
/// `beta = 0` is accepted as the θ → 1⁺ limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(default = "default_order")]
    pub k: usize,
}

impl ModelParams {
    pub fn new(beta: f64, j: f64, k: usize) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidParams(format!("beta must be finite and >= 0, got {beta}")));
        }
        if !j.is_finite() || j < 0.0 {
            return Err(Error::InvalidParams(format!("J must be finite and >= 0, got {j}")));
        }
        if k < 2 {
            return Err(Error::InvalidParams(format!("tree order must be >= 2, got {k}")));
        }
        Ok(ModelParams { beta, j, k })
    }

    /// Order-2 tree parameters from θ = e^{2β}.
    pub fn from_theta(theta: f64, j: f64) -> Result<Self> {
        if !theta.is_finite() || theta < 1.0 {
            return Err(Error::InvalidParams(format!("theta must be finite and >= 1, got {theta}")));
        }
        Self::new(0.5 * theta.ln(), j, 2)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.beta, self.j, self.k).map(|_| ())
    }

    pub fn theta(&self) -> f64 {
        (2.0 * self.beta).exp()
    }

    pub fn coefficients(&self) -> Result<Coefficients> {
        Coefficients::new(self)
    }

    fn require_binary(&self) -> Result<()> {
        if self.k != 2 {
            return Err(Error::Unsupported(format!("closed forms need k = 2, got k = {}", self.k)));
        }
        Ok(())
    }
}

/// `Δ(θ) = θᴶ(θ² − 3) − 2θ`.
pub fn discriminant(theta: f64, j: f64) -> f64 {
    theta.powf(j) * (theta * theta - 3.0) - 2.0 * theta
}

/// `dΔ/dθ`.
pub fn discriminant_slope(theta: f64, j: f64) -> f64 {
    let tj = theta.powf(j);
    j * tj / theta * (theta * theta - 3.0) + 2.0 * theta * tj - 2.0
}

/// Scalars derived from the model parameters on the binary tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub theta: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "R3")]
    pub r3: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    /// Sign decides the regime: positive means coexistence.
    #[serde(rename = "Delta")]
    pub discriminant: f64,
}

/// Relative tolerance between the two coefficient routes.
pub const ROUTE_TOL: f64 = 1e-8;

/// `|Δ|` at or below this value counts as the critical line.
pub const CRITICAL_BAND: f64 = 1e-9;

impl Coefficients {
    /// Computes τ₁, τ₂, τ₃ from γ, δ, η (all-positive sums, stable near
    /// θ = 1) and Δ from its closed form in θ, then checks both routes.
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        params.require_binary()?;
        let beta = params.beta;
        let theta = params.theta();
        let k3 = 0.5 * beta.exp_m1();
        let k0 = 1.0 + k3;
        let r3 = 0.5 * (params.j * beta).exp_m1();
        let r0 = 1.0 + r3;

        let gamma = k0 * k0 * r0 + k3 * k3 * r3;
        let delta = k0 * k3 * (r0 + r3);
        let eta = k0 * k0 * r3 + k3 * k3 * r0;
        let tau1 = gamma * gamma + 2.0 * delta * delta + eta * eta;
        let tau2 = 2.0 * (gamma * eta + delta * delta);
        let tau3 = 4.0 * delta * (gamma + eta);
        let disc = discriminant(theta, params.j);

        let c = Coefficients { theta, k0, k3, r0, r3, gamma, delta, eta, tau1, tau2, tau3, discriminant: disc };
        c.check_routes()?;
        Ok(c)
    }

    fn check_routes(&self) -> Result<()> {
        let (t1, t2, t3) = tau_from_theta(self.theta, self.j_power());
        let scale = self.tau1.max(self.tau3).max(1.0);
        let checks = [
            ("tau1", self.tau1, t1),
            ("tau2", self.tau2, t2),
            ("tau3", self.tau3, t3),
            ("Delta", self.discriminant, 4.0 * (self.tau3 - self.tau1)),
        ];
        for (quantity, left, right) in checks {
            if (left - right).abs() > ROUTE_TOL * scale {
                return Err(Error::ConsistencyFailure { quantity, left, right });
            }
        }
        Ok(())
    }

    /// θᴶ recovered from R₀ + R₃ = e^{Jβ}.
    pub fn j_power(&self) -> f64 {
        let c = self.r0 + self.r3;
        c * c
    }

    /// `τ₁/τ₃ − ½`, the subleading eigenvalue of the transfer recursion.
    pub fn decay_ratio(&self) -> f64 {
        self.tau1 / self.tau3 - 0.5
    }

    /// Δ above the critical band.
    pub fn has_broken_phase(&self) -> bool {
        self.discriminant > CRITICAL_BAND
    }
}

/// τ₁, τ₂, τ₃ from θ and θᴶ.
pub fn tau_from_theta(theta: f64, theta_j: f64) -> (f64, f64, f64) {
    let big = theta_j * (theta * theta + 1.0);
    (0.25 * (big + 2.0 * theta), 0.25 * (big - 2.0 * theta), 0.5 * theta_j * (theta * theta - 1.0))
}

/// `c₀ 𝟙⊗𝟙 + c₃ σ⊗σ` on two vertices with `c₀ = (e^b+1)/2`,
/// `c₃ = (e^b−1)/2`. Diagonal entries `(e^b, 1, 1, e^b)`.
pub fn ising_pair(coupling: f64, u: usize, v: usize) -> Result<LocalOperator> {
    let c3 = 0.5 * coupling.exp_m1();
    let c0 = 1.0 + c3;
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    LocalOperator::diagonal_real(2, vec![a, b], &[c0 + c3, c0 - c3, c0 - c3, c0 + c3])
}

/// `exp(b·H)` with `H = ½(𝟙⊗𝟙 + σ⊗σ)` computed from the spectral
/// decomposition of H, returned densely.
pub fn ising_pair_exp(coupling: f64, u: usize, v: usize) -> Result<LocalOperator> {
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    let id = LocalOperator::identity(2, vec![a, b])?;
    let ss = SiteOperator::sigma().at(a).tensor(&SiteOperator::sigma().at(b))?;
    let projector = id.add(&ss)?.scaled(C64::new(0.5, 0.0)).into_dense();
    id.into_dense().add(&projector.scaled(C64::new(coupling.exp_m1(), 0.0)))
}

/// Parent-child operator K on vertices `[0, 1]`.
pub fn edge_operator(params: &ModelParams) -> Result<LocalOperator> {
    ising_pair(params.beta, 0, 1)
}

/// Sibling operator L on vertices `[0, 1]`.
pub fn competing_operator(params: &ModelParams) -> Result<LocalOperator> {
    ising_pair(params.j * params.beta, 0, 1)
}

/// Cell operator `K_{x,c₁} K_{x,c₂} L_{c₁,c₂}` on vertices `[0, 1, 2]`.
pub fn cell_operator(params: &ModelParams) -> Result<LocalOperator> {
    params.require_binary()?;
    Interaction::ising(params)?.cell_at(0, &[1, 2])
}

/// The cell operator assembled from γ, δ, η:
/// `γ𝟙𝟙𝟙 + δσσ𝟙 + δσ𝟙σ + η𝟙σσ`.
pub fn cell_operator_expanded(c: &Coefficients) -> Result<LocalOperator> {
    let mut entries = Vec::with_capacity(8);
    for idx in 0..8usize {
        let spin = |bit: usize| if idx >> (2 - bit) & 1 == 0 { 1.0 } else { -1.0 };
        let (s0, s1, s2) = (spin(0), spin(1), spin(2));
        entries.push(c.gamma + c.delta * s0 * s1 + c.delta * s0 * s2 + c.eta * s1 * s2);
    }
    LocalOperator::diagonal_real(2, vec![0, 1, 2], &entries)
}

/// Operator templates for one cell `{x} ∪ S(x)`.
///
/// `edge` and `sibling` live on `[0, 1]`; `triple`, if present, on
/// `[0, 1, …, k]`. The cell operator is the ordered product
/// `∏ᵢ K_{x,cᵢ} · ∏ᵢ L_{cᵢ,cᵢ₊₁} · M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub k: usize,
    pub dim: usize,
    pub edge: LocalOperator,
    pub sibling: LocalOperator,
    pub triple: Option<LocalOperator>,
}

impl Interaction {
    pub fn ising(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Interaction {
            k: params.k,
            dim: 2,
            edge: edge_operator(params)?,
            sibling: competing_operator(params)?,
            triple: None,
        })
    }

    pub fn new(k: usize, edge: LocalOperator, sibling: LocalOperator, triple: Option<LocalOperator>) -> Result<Self> {
        let dim = edge.dim();
        for (name, op, want) in [("edge", &edge, 2usize), ("sibling", &sibling, 2)] {
            if op.support() != (0..want).collect::<Vec<_>>().as_slice() {
                return Err(Error::InvalidOperator(format!("{name} operator must live on [0, 1]")));
            }
            if op.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: op.dim() });
            }
        }
        if let Some(t) = &triple {
            if t.support() != (0..=k).collect::<Vec<_>>().as_slice() {
                return Err(Error::InvalidOperator(format!("cell operator must live on [0, ..., {k}]")));
            }
        }
        Ok(Interaction { k, dim, edge, sibling, triple })
    }

    pub fn is_diagonal(&self) -> bool {
        self.edge.is_diagonal_repr()
            && self.sibling.is_diagonal_repr()
            && self.triple.as_ref().is_none_or(|t| t.is_diagonal_repr())
    }

    pub fn cell_at(&self, parent: usize, children: &[usize]) -> Result<LocalOperator> {
        if children.len() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, found: children.len() });
        }
        let mut acc = LocalOperator::scalar(self.dim, C64::new(1.0, 0.0));
        for &c in children {
            acc = acc.multiply(&self.edge.relabel(vec![parent, c])?)?;
        }
        for pair in children.windows(2) {
            acc = acc.multiply(&self.sibling.relabel(vec![pair[0], pair[1]])?)?;
        }
        if let Some(t) = &self.triple {
            let mut support = vec![parent];
            support.extend_from_slice(children);
            acc = acc.multiply(&t.relabel(support)?)?;
        }
        Ok(acc)
    }
}
