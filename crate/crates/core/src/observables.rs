//! Closed-form expectation values in the symmetry-broken phase of the
//! binary-tree model, the 2×2 transfer recursion behind them, and the
//! witness quantities that separate the three states.
//!
//! States: `Alpha` uses `h = (1/τ₁)𝟙`; `Phi1`/`Phi2` use `h = ξ₀𝟙 ± ξ₃σ`.
//! Every `Phi2` quantity is the `Phi1` formula evaluated at `−ξ₃`.

use serde::{Deserialize, Serialize};

use crate::boundary::{broken_amplitudes, broken_solutions, symmetric_solution};
use crate::error::{Error, Result};
use crate::finite_volume::{expectation_oracle, BoundaryCondition, Caps, OracleMode};
use crate::linalg::{LocalOperator, SiteOperator};
use crate::model::{Coefficients, ModelParams};
use crate::numerics::compensated_sum;
use crate::tree::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateLabel {
    Alpha,
    Phi1,
    Phi2,
}

impl StateLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateLabel::Alpha => "alpha",
            StateLabel::Phi1 => "phi1",
            StateLabel::Phi2 => "phi2",
        }
    }

    fn sign(&self) -> Result<f64> {
        match self {
            StateLabel::Phi1 => Ok(1.0),
            StateLabel::Phi2 => Ok(-1.0),
            StateLabel::Alpha => Err(Error::Unsupported("closed form is defined for phi1 and phi2 only".into())),
        }
    }
}

/// `pₙ = ⊗_{Λₙ} e₁₁` or `qₙ = ⊗_{Λₙ} e₂₂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projector {
    P,
    Q,
}

impl Projector {
    fn sign(&self) -> f64 {
        match self {
            Projector::P => 1.0,
            Projector::Q => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferComponent {
    Phi1Hat,
    Phi1Check,
    Phi2Hat,
    Phi2Check,
}

/// Level that carries σ in the disorder observable `a_σ` for volume `n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaLevel {
    /// First vertex of level `n`, inside `Λₙ`.
    #[default]
    Level,
    /// First vertex of level `n + 1`.
    NextLevel,
}

impl SigmaLevel {
    fn level(&self, n: usize) -> usize {
        match self {
            SigmaLevel::Level => n,
            SigmaLevel::NextLevel => n + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// `pₙ`
    ProjectorP,
    /// `qₙ`
    ProjectorQ,
    /// `E_{Λₙ}`: e₁₁ at the first vertex of level n.
    Edge,
    /// `a_σ`: σ at the first vertex of the level chosen by [`SigmaLevel`].
    Disorder,
}

impl ObservableKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObservableKind::ProjectorP => "p_n",
            ObservableKind::ProjectorQ => "q_n",
            ObservableKind::Edge => "E_n",
            ObservableKind::Disorder => "a_sigma",
        }
    }
}

/// Scalars of the broken phase: `τ`'s, `ξ₀ = 1/τ₃`, `ξ₃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrokenPhase {
    pub coefficients: Coefficients,
    pub xi0: f64,
    pub xi3: f64,
}

impl BrokenPhase {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let c = params.coefficients()?;
        let (xi0, xi3) = broken_amplitudes(&c).ok_or(Error::NoBrokenPhase { delta: c.discriminant })?;
        Ok(BrokenPhase { coefficients: c, xi0, xi3 })
    }

    /// `μ = τ₁/τ₃ − ½`.
    pub fn decay_ratio(&self) -> f64 {
        self.coefficients.decay_ratio()
    }

    /// `3τ₃ − 2τ₁`.
    fn denominator(&self) -> f64 {
        3.0 * self.coefficients.tau3 - 2.0 * self.coefficients.tau1
    }
}

/// The recursion `(ψ̂ₙ, ψ̌ₙ) = N (ψ̂ₙ₋₁, ψ̌ₙ₋₁)` from `(1/ξ₀, 0)` with
/// `N = [[τ₁ξ₀, ½τ₃ξ₃], [τ₂ξ₃, ½]]`, and its spectral solution
/// `ψₙ = ρ₁ + ρ₂μⁿ`. The `pi_*` coefficients are those of `Phi2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferData {
    pub matrix: [[f64; 2]; 2],
    pub eigenvalues: [f64; 2],
    pub rho_hat1: f64,
    pub rho_hat2: f64,
    pub rho_check1: f64,
    pub rho_check2: f64,
    pub pi_hat1: f64,
    pub pi_hat2: f64,
    pub pi_check1: f64,
    pub pi_check2: f64,
}

fn transfer_matrix(phase: &BrokenPhase, xi3: f64) -> [[f64; 2]; 2] {
    let c = &phase.coefficients;
    [[c.tau1 * phase.xi0, 0.5 * c.tau3 * xi3], [c.tau2 * xi3, 0.5]]
}

/// `(ρ̂₁, ρ̂₂, ρ̌₁, ρ̌₂)` for the signed amplitude `xi3`.
fn spectral_coefficients(phase: &BrokenPhase, xi3: f64) -> [f64; 4] {
    let c = &phase.coefficients;
    let d = phase.denominator();
    let hat1 = c.tau3 * c.tau3 / d;
    let hat2 = 2.0 * c.tau3 * (c.tau3 - c.tau1) / d;
    let check1 = 2.0 * c.tau2 * c.tau3 * c.tau3 * xi3 / d;
    [hat1, hat2, check1, -check1]
}

impl TransferData {
    pub fn new(phase: &BrokenPhase) -> Self {
        let [rho_hat1, rho_hat2, rho_check1, rho_check2] = spectral_coefficients(phase, phase.xi3);
        let [pi_hat1, pi_hat2, pi_check1, pi_check2] = spectral_coefficients(phase, -phase.xi3);
        TransferData {
            matrix: transfer_matrix(phase, phase.xi3),
            eigenvalues: [1.0, phase.decay_ratio()],
            rho_hat1,
            rho_hat2,
            rho_check1,
            rho_check2,
            pi_hat1,
            pi_hat2,
            pi_check1,
            pi_check2,
        }
    }

    /// Eigenvalues of `N` from its trace and determinant, larger first.
    pub fn numeric_eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [c, d]] = self.matrix;
        let tr = a + d;
        let det = a * d - b * c;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        [(tr + disc) / 2.0, (tr - disc) / 2.0]
    }

    /// `(ρ̂₁, ρ̂₂, ρ̌₁, ρ̌₂)` by expanding the start vector in eigenvectors
    /// of `N` computed numerically.
    pub fn eigen_coefficients(&self, start: [f64; 2]) -> [f64; 4] {
        let [[a, b], _] = self.matrix;
        let [l1, l2] = self.numeric_eigenvalues();
        let v1 = [b, l1 - a];
        let v2 = [b, l2 - a];
        let det = v1[0] * v2[1] - v2[0] * v1[1];
        let c1 = (start[0] * v2[1] - v2[0] * start[1]) / det;
        let c2 = (v1[0] * start[1] - start[0] * v1[1]) / det;
        [c1 * v1[0], c2 * v2[0], c1 * v1[1], c2 * v2[1]]
    }
}

fn component_sign(which: TransferComponent) -> (f64, bool) {
    match which {
        TransferComponent::Phi1Hat => (1.0, true),
        TransferComponent::Phi1Check => (1.0, false),
        TransferComponent::Phi2Hat => (-1.0, true),
        TransferComponent::Phi2Check => (-1.0, false),
    }
}

/// `(ψ̂ₙ, ψ̌ₙ)` from the spectral form, for signed `xi3`.
fn psi_closed(phase: &BrokenPhase, xi3: f64, n: usize) -> (f64, f64) {
    let [h1, h2, c1, c2] = spectral_coefficients(phase, xi3);
    let decay = phase.decay_ratio().powi(n as i32);
    (h1 + h2 * decay, c1 + c2 * decay)
}

/// `(ψ̂ₙ, ψ̌ₙ)` by applying `N` n times.
fn psi_iterated(phase: &BrokenPhase, xi3: f64, n: usize) -> (f64, f64) {
    let m = transfer_matrix(phase, xi3);
    let (mut hat, mut check) = (1.0 / phase.xi0, 0.0);
    for _ in 0..n {
        let next_hat = m[0][0] * hat + m[0][1] * check;
        let next_check = m[1][0] * hat + m[1][1] * check;
        hat = next_hat;
        check = next_check;
    }
    (hat, check)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferRoute {
    Spectral,
    Iterated,
}

pub fn transfer_psi(n: usize, params: &ModelParams, which: TransferComponent, route: TransferRoute) -> Result<f64> {
    let phase = BrokenPhase::new(params)?;
    let (sign, hat) = component_sign(which);
    let (h, c) = match route {
        TransferRoute::Spectral => psi_closed(&phase, sign * phase.xi3, n),
        TransferRoute::Iterated => psi_iterated(&phase, sign * phase.xi3, n),
    };
    Ok(if hat { h } else { c })
}

/// `φ(pₙ)` or `φ(qₙ)`:
/// `(1/(2ξ₀)) (ξ₀ ± ξ₃)^{2ⁿ} ((τ₁+τ₂+τ₃)/4)^{2ⁿ−1}`, evaluated in logs.
pub fn projector_value(state: StateLabel, projector: Projector, n: usize, params: &ModelParams) -> Result<f64> {
    let phase = BrokenPhase::new(params)?;
    let c = &phase.coefficients;
    let sign = state.sign()? * projector.sign();
    let base = phase.xi0 + sign * phase.xi3;
    let cell = 0.25 * (c.tau1 + c.tau2 + c.tau3);
    let leaves = 2f64.powi(n as i32);
    let log = (0.5 / phase.xi0).ln() + leaves * base.ln() + (leaves - 1.0) * cell.ln();
    Ok(log.exp())
}

/// `φ(e^{±}_{11})` at the first vertex of level `n ≥ 1`, with
/// `e = (𝟙 + pσ)/2`:
/// `½(ξ₀+x)[(τ₁ξ₀ + τ₂x)ψ̂ₙ₋₁ + ½τ₃ p (ξ₀+x) ψ̌ₙ₋₁]` where `x = p·sξ₃`.
pub fn site_projector_value(state: StateLabel, projector: Projector, n: usize, params: &ModelParams) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParams("site projector value needs n >= 1".into()));
    }
    let phase = BrokenPhase::new(params)?;
    let c = &phase.coefficients;
    let s = state.sign()?;
    let p = projector.sign();
    let (hat, check) = psi_closed(&phase, s * phase.xi3, n - 1);
    let x = p * s * phase.xi3;
    let lead = phase.xi0 + x;
    Ok(0.5 * lead * compensated_sum(&[(c.tau1 * phase.xi0 + c.tau2 * x) * hat, 0.5 * c.tau3 * p * lead * check]))
}

/// `φ(E_{Λₙ})`, e₁₁ at the first vertex of level `n ≥ 1`.
pub fn edge_marginal(state: StateLabel, n: usize, params: &ModelParams) -> Result<f64> {
    site_projector_value(state, Projector::P, n, params)
}

/// `φ(a_σ)`. Zero for `Alpha`; for the broken states
/// `±[(τ₁+τ₂)ξ₀ξ₃ψ̂ₘ₋₁ + ½τ₃(ξ₀²+ξ₃²)ψ̌ₘ₋₁]` with `m` the level of σ.
pub fn disorder_value(state: StateLabel, n: usize, params: &ModelParams, placement: SigmaLevel) -> Result<f64> {
    let m = placement.level(n);
    if m == 0 {
        return Err(Error::InvalidParams("disorder observable needs its level >= 1".into()));
    }
    if state == StateLabel::Alpha {
        params.coefficients()?;
        return Ok(0.0);
    }
    let phase = BrokenPhase::new(params)?;
    let s = state.sign()?;
    Ok(disorder_from(&phase, s * phase.xi3, m))
}

fn disorder_from(phase: &BrokenPhase, xi3: f64, m: usize) -> f64 {
    let c = &phase.coefficients;
    let (hat, check) = psi_closed(phase, xi3, m - 1);
    compensated_sum(&[
        (c.tau1 + c.tau2) * phase.xi0 * xi3 * hat,
        0.5 * c.tau3 * (phase.xi0 * phase.xi0 + xi3 * xi3) * check,
    ])
}

/// `φ₁(a_σ) − φ₂(a_σ)` splits as `c₁ + c₂μ^{m−1}`; returns `(c₁, c₂)`.
fn disorder_constants(phase: &BrokenPhase) -> (f64, f64) {
    let c = &phase.coefficients;
    let [h1, h2, k1, k2] = spectral_coefficients(phase, phase.xi3);
    let a = (c.tau1 + c.tau2) * phase.xi0 * phase.xi3;
    let b = 0.5 * c.tau3 * (phase.xi0 * phase.xi0 + phase.xi3 * phase.xi3);
    (a * h1 + b * k1, a * h2 + b * k2)
}

/// Diagonal operator for an observable on `Λₙ` of the order-k tree.
pub fn observable_operator(kind: ObservableKind, n: usize, k: usize, placement: SigmaLevel) -> Result<LocalOperator> {
    let vol = Volume::new(n, k)?;
    match kind {
        ObservableKind::ProjectorP | ObservableKind::ProjectorQ => {
            let sites = vol.len();
            let size = 1usize
                .checked_shl(sites as u32)
                .filter(|_| sites < usize::BITS as usize)
                .ok_or(Error::ResourceCap { what: "projector sites", requested: sites as u128, cap: 63 })?;
            let mut entries = vec![0.0; size];
            let idx = if kind == ObservableKind::ProjectorP { 0 } else { size - 1 };
            entries[idx] = 1.0;
            LocalOperator::diagonal_real(2, (0..sites).collect(), &entries)
        }
        ObservableKind::Edge => Ok(SiteOperator::e11().at(vol.level_offset(n))),
        ObservableKind::Disorder => {
            let m = placement.level(n);
            let vol = Volume::new(m, k)?;
            Ok(SiteOperator::sigma().at(vol.level_offset(m)))
        }
    }
}

/// Closed-form value of any supported (observable, state) pair.
pub fn closed_form_value(kind: ObservableKind, state: StateLabel, n: usize, params: &ModelParams, placement: SigmaLevel) -> Result<f64> {
    match kind {
        ObservableKind::ProjectorP => projector_value(state, Projector::P, n, params),
        ObservableKind::ProjectorQ => projector_value(state, Projector::Q, n, params),
        ObservableKind::Edge => edge_marginal(state, n, params),
        ObservableKind::Disorder => disorder_value(state, n, params, placement),
    }
}

/// Boundary condition of a state.
pub fn state_boundary(state: StateLabel, params: &ModelParams) -> Result<BoundaryCondition> {
    match state {
        StateLabel::Alpha => symmetric_solution(params)?.boundary(),
        _ => {
            let c = params.coefficients()?;
            let (plus, minus) = broken_solutions(params)?.ok_or(Error::NoBrokenPhase { delta: c.discriminant })?;
            if state == StateLabel::Phi1 { plus.boundary() } else { minus.boundary() }
        }
    }
}

/// Enumeration-oracle value of an observable in a state.
pub fn oracle_value(
    kind: ObservableKind,
    state: StateLabel,
    n: usize,
    params: &ModelParams,
    placement: SigmaLevel,
    caps: &Caps,
) -> Result<f64> {
    let boundary = state_boundary(state, params)?;
    let obs = observable_operator(kind, n, params.k, placement)?;
    let volume = if kind == ObservableKind::Disorder { placement.level(n) } else { n };
    Ok(expectation_oracle(volume, params, &boundary, &obs, OracleMode::Auto, caps)?.re)
}

/// Values below this magnitude are compared absolutely.
pub const ZERO_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub observable: String,
    pub state: StateLabel,
    pub n: usize,
    pub closed_form: f64,
    pub oracle: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub pass: bool,
}

impl ExpectationReport {
    fn new(observable: &str, state: StateLabel, n: usize, closed_form: f64, oracle: f64, tol: f64) -> Self {
        let abs_gap = (closed_form - oracle).abs();
        let scale = closed_form.abs().max(oracle.abs()).max(ZERO_FLOOR);
        let rel_gap = abs_gap / scale;
        ExpectationReport { observable: observable.to_string(), state, n, closed_form, oracle, abs_gap, rel_gap, pass: rel_gap <= tol }
    }
}

/// The pairs compared against the oracle at one parameter point.
pub fn comparison_pairs(params: &ModelParams) -> Result<Vec<(ObservableKind, StateLabel)>> {
    let mut pairs = Vec::new();
    if params.coefficients()?.has_broken_phase() {
        pairs.extend([
            (ObservableKind::ProjectorP, StateLabel::Phi1),
            (ObservableKind::ProjectorQ, StateLabel::Phi2),
            (ObservableKind::ProjectorQ, StateLabel::Phi1),
            (ObservableKind::ProjectorP, StateLabel::Phi2),
            (ObservableKind::Edge, StateLabel::Phi1),
            (ObservableKind::Edge, StateLabel::Phi2),
        ]);
    }
    pairs.push((ObservableKind::Disorder, StateLabel::Alpha));
    if params.coefficients()?.has_broken_phase() {
        pairs.push((ObservableKind::Disorder, StateLabel::Phi1));
    }
    Ok(pairs)
}

/// Closed form against oracle for every pair of [`comparison_pairs`].
pub fn expectation_reports(params: &ModelParams, n: usize, placement: SigmaLevel, tol: f64, caps: &Caps) -> Result<Vec<ExpectationReport>> {
    comparison_pairs(params)?
        .into_iter()
        .map(|(kind, state)| {
            let cf = closed_form_value(kind, state, n, params, placement)?;
            let or = oracle_value(kind, state, n, params, placement, caps)?;
            Ok(ExpectationReport::new(kind.as_str(), state, n, cf, or, tol))
        })
        .collect()
}

/// A formula that admits two readings, with both values and the reference
/// value that decides between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub name: String,
    pub shipped: String,
    pub rejected: String,
    pub shipped_value: f64,
    pub rejected_value: f64,
    pub reference: f64,
    /// `oracle` or `iteration`.
    pub reference_kind: String,
}

/// Alternatives evaluated at `(params, n)`, `n ≥ 1`.
pub fn resolved_discrepancies(params: &ModelParams, n: usize, caps: &Caps) -> Result<Vec<Discrepancy>> {
    if n == 0 {
        return Err(Error::InvalidParams("discrepancy report needs n >= 1".into()));
    }
    let phase = BrokenPhase::new(params)?;
    let c = phase.coefficients;
    let (xi0, xi3) = (phase.xi0, phase.xi3);
    let mut out = Vec::new();
    let item = |name: &str, shipped: &str, rejected: &str, sv: f64, rv: f64, reference: f64, kind: &str| Discrepancy {
        name: name.into(),
        shipped: shipped.into(),
        rejected: rejected.into(),
        shipped_value: sv,
        rejected_value: rv,
        reference,
        reference_kind: kind.into(),
    };

    let p_oracle = oracle_value(ObservableKind::ProjectorP, StateLabel::Phi1, n, params, SigmaLevel::Level, caps)?;
    let p_shipped = projector_value(StateLabel::Phi1, Projector::P, n, params)?;
    out.push(item(
        "projector_prefactor",
        "(1/(2 xi0)) (xi0+xi3)^(2^n) ((tau1+tau2+tau3)/4)^(2^n-1)",
        "(1/xi0) (xi0+xi3)^(2^n) ((tau1+tau2+tau3)/4)^(2^n-1)",
        p_shipped,
        2.0 * p_shipped,
        p_oracle,
        "oracle",
    ));
    out.push(item(
        "projector_trailing_factor",
        "no trailing factor",
        "extra factor (1/xi0 + 1/xi3) on the 1/xi0 form",
        p_shipped,
        2.0 * p_shipped * (1.0 / xi0 + 1.0 / xi3),
        p_oracle,
        "oracle",
    ));

    let (it_hat, it_check) = psi_iterated(&phase, xi3, n);
    let [h1, h2, k1, k2] = spectral_coefficients(&phase, xi3);
    let mu = phase.decay_ratio();
    out.push(item(
        "transfer_decay_ratio",
        "(tau1/tau3 - 1/2)^n",
        "(tau1/tau3 - 1)^n",
        h1 + h2 * mu.powi(n as i32),
        h1 + h2 * (c.tau1 / c.tau3 - 1.0).powi(n as i32),
        it_hat,
        "iteration",
    ));
    out.push(item(
        "transfer_hat_limit",
        "rho_hat1 = tau3^2/(3 tau3 - 2 tau1)",
        "rho_hat1 = 2 tau3^2/(3 tau3 - 2 tau1)",
        h1 + h2 * mu.powi(n as i32),
        2.0 * h1 + h2 * mu.powi(n as i32),
        it_hat,
        "iteration",
    ));
    let alt_d = 3.0 * c.tau3 - 2.0 * c.tau2;
    let alt_k1 = 2.0 * c.tau2 * c.tau3 * c.tau3 * xi3 / alt_d;
    out.push(item(
        "transfer_check_denominator",
        "rho_check = +-2 tau2 tau3^2 xi3/(3 tau3 - 2 tau1)",
        "rho_check = +-2 tau2 tau3^2 xi3/(3 tau3 - 2 tau2)",
        k1 + k2 * mu.powi(n as i32),
        alt_k1 - alt_k1 * mu.powi(n as i32),
        it_check,
        "iteration",
    ));

    let e_oracle = oracle_value(ObservableKind::Edge, StateLabel::Phi1, n, params, SigmaLevel::Level, caps)?;
    let (hat, check) = psi_closed(&phase, xi3, n - 1);
    let lead = xi0 + xi3;
    out.push(item(
        "edge_marginal_bracket",
        "(tau1 xi0 + tau2 xi3) multiplies psi_hat",
        "(tau2 xi0 + tau2 xi3) multiplies the constant part of psi_hat",
        edge_marginal(StateLabel::Phi1, n, params)?,
        0.5 * lead * ((c.tau2 * xi0 + c.tau2 * xi3) * h1 + (c.tau1 * xi0 + c.tau2 * xi3) * (hat - h1) + 0.5 * c.tau3 * lead * check),
        e_oracle,
        "oracle",
    ));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub n: usize,
    pub gap: f64,
    pub lower_bound: f64,
    pub limit: f64,
}

/// Candidate norm of `e₁₁` and the separation `I₁/(2‖e₁₁‖)` it implies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormChoice {
    pub name: String,
    pub norm_e11: f64,
    pub separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub theta: f64,
    #[serde(rename = "Delta")]
    pub discriminant: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    pub epsilon0: f64,
    pub decay_ratio: f64,
    /// Smallest `n` with `I₂|μ|ⁿ ≤ I₁/2`.
    pub crossover: usize,
    pub norms: Vec<NormChoice>,
    /// `|φ₁(E_{Λₙ}) − φ₂(E_{Λₙ})|`
    pub edge_gap: Vec<GapPoint>,
    /// `|φ_α(a_σ) − φ₁(a_σ)|`
    pub disorder_gap: Vec<GapPoint>,
    pub lower_bound_holds: bool,
    pub above_half_beyond_crossover: bool,
}

/// Relative slack for the floating-point comparison of a gap with its
/// lower bound.
const BOUND_SLACK: f64 = 1e-12;

pub fn witness_report(params: &ModelParams, n_max: usize) -> Result<WitnessReport> {
    let phase = BrokenPhase::new(params)?;
    let c = phase.coefficients;
    let i1 = c.tau3 * phase.xi3 * (2.0 * c.tau2 + c.tau3) / phase.denominator();
    let (c1, c2) = disorder_constants(&phase);
    let i2 = c2.abs();
    let epsilon0 = c1;
    let mu = phase.decay_ratio();
    let mut crossover = 1usize;
    while i2 * mu.abs().powi(crossover as i32) > i1 / 2.0 {
        crossover += 1;
    }

    let mut edge_gap = Vec::with_capacity(n_max);
    let mut disorder_gap = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let bound = i1 - i2 * mu.abs().powi(n as i32 - 1);
        let e = (edge_marginal(StateLabel::Phi1, n, params)? - edge_marginal(StateLabel::Phi2, n, params)?).abs();
        edge_gap.push(GapPoint { n, gap: e, lower_bound: bound, limit: i1 });
        let a = (disorder_value(StateLabel::Alpha, n, params, SigmaLevel::Level)?
            - disorder_value(StateLabel::Phi1, n, params, SigmaLevel::Level)?)
        .abs();
        disorder_gap.push(GapPoint { n, gap: a, lower_bound: epsilon0 - i2 * mu.abs().powi(n as i32 - 1), limit: epsilon0 });
    }
    let holds = |curve: &[GapPoint]| curve.iter().all(|g| g.gap >= g.lower_bound - BOUND_SLACK * g.limit);
    let lower_bound_holds = holds(&edge_gap) && holds(&disorder_gap);
    let above_half_beyond_crossover = edge_gap.iter().filter(|g| g.n > crossover).all(|g| g.gap >= i1 / 2.0)
        && disorder_gap.iter().filter(|g| g.n > crossover).all(|g| g.gap >= epsilon0 / 2.0);

    let norms = vec![
        NormChoice { name: "operator".into(), norm_e11: 1.0, separation: i1 / 2.0 },
        NormChoice { name: "normalized_trace".into(), norm_e11: 0.5, separation: i1 },
    ];
    Ok(WitnessReport {
        beta: params.beta,
        j: params.j,
        theta: c.theta,
        discriminant: c.discriminant,
        i1,
        i2,
        epsilon0,
        decay_ratio: mu,
        crossover,
        norms,
        edge_gap,
        disorder_gap,
        lower_bound_holds,
        above_half_beyond_crossover,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub beta: f64,
    pub theta: f64,
    pub phi1_p: f64,
    pub phi2_p: f64,
    pub phi1_q: f64,
    pub phi2_q: f64,
    /// `φ₁(pₙ) > 1 − ε` and `φ₂(pₙ) < ε`.
    pub separated: bool,
}

pub fn overlap_report(j: f64, n: usize, betas: &[f64], epsilon: f64) -> Result<Vec<OverlapRow>> {
    betas
        .iter()
        .map(|&beta| {
            let params = ModelParams::new(beta, j, 2)?;
            let phi1_p = projector_value(StateLabel::Phi1, Projector::P, n, &params)?;
            let phi2_p = projector_value(StateLabel::Phi2, Projector::P, n, &params)?;
            let phi1_q = projector_value(StateLabel::Phi1, Projector::Q, n, &params)?;
            let phi2_q = projector_value(StateLabel::Phi2, Projector::Q, n, &params)?;
            Ok(OverlapRow {
                beta,
                theta: params.theta(),
                phi1_p,
                phi2_p,
                phi1_q,
                phi2_q,
                separated: phi1_p > 1.0 - epsilon && phi2_p < epsilon,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(theta: f64, j: f64) -> ModelParams {
        ModelParams::from_theta(theta, j).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn reference_values() {
        let p = at(3.0, 1.0);
        // brute-force enumeration of the full configuration sum
        assert!(close(projector_value(StateLabel::Phi1, Projector::P, 1, &p).unwrap(), 0.8196225644174326, 1e-12));
        assert!(close(projector_value(StateLabel::Phi1, Projector::P, 2, &p).unwrap(), 0.7557537916149838, 1e-12));
        assert!(close(edge_marginal(StateLabel::Phi1, 1, &p).unwrap(), 0.9419417382415919, 1e-12));
        assert!(close(disorder_value(StateLabel::Phi1, 1, &p, SigmaLevel::Level).unwrap(), 0.8838834764831839, 1e-12));
    }

    #[test]
    fn spectral_identity() {
        for (theta, j) in [(3.0, 1.0), (2.5, 2.0), (4.0, 1.0), (2.3, 1.0), (20.0, 1.0)] {
            let phase = BrokenPhase::new(&at(theta, j)).unwrap();
            let t = TransferData::new(&phase);
            let [l1, l2] = t.numeric_eigenvalues();
            assert!((l1 - 1.0).abs() < 1e-12, "{l1}");
            assert!((l2 - phase.decay_ratio()).abs() < 1e-12);
            let [[a, b], [c, d]] = t.matrix;
            assert!((a * d - b * c - phase.decay_ratio()).abs() < 1e-12);
            let eig = t.eigen_coefficients([1.0 / phase.xi0, 0.0]);
            let closed = [t.rho_hat1, t.rho_hat2, t.rho_check1, t.rho_check2];
            for (e, cf) in eig.iter().zip(closed) {
                assert!((e - cf).abs() <= 1e-10 * cf.abs().max(1.0), "{e} vs {cf}");
            }
        }
    }

    #[test]
    fn iterated_matches_spectral() {
        for (theta, j) in [(3.0, 1.0), (2.5, 2.0)] {
            let p = at(theta, j);
            for n in 0..=30 {
                for which in [TransferComponent::Phi1Hat, TransferComponent::Phi1Check, TransferComponent::Phi2Hat, TransferComponent::Phi2Check] {
                    let a = transfer_psi(n, &p, which, TransferRoute::Spectral).unwrap();
                    let b = transfer_psi(n, &p, which, TransferRoute::Iterated).unwrap();
                    assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
                }
            }
        }
        let p = at(3.0, 1.0);
        let phase = BrokenPhase::new(&p).unwrap();
        assert_eq!(transfer_psi(0, &p, TransferComponent::Phi1Hat, TransferRoute::Iterated).unwrap(), 1.0 / phase.xi0);
        assert_eq!(transfer_psi(0, &p, TransferComponent::Phi1Check, TransferRoute::Iterated).unwrap(), 0.0);
    }

    #[test]
    fn geometric_decay_constant_is_stable() {
        for (theta, j) in [(2.3, 1.0), (3.0, 1.0), (2.5, 2.0)] {
            let p = at(theta, j);
            let phase = BrokenPhase::new(&p).unwrap();
            let t = TransferData::new(&phase);
            let mu = phase.decay_ratio().abs();
            let limit = transfer_psi(400, &p, TransferComponent::Phi1Hat, TransferRoute::Iterated).unwrap();
            assert!((limit - t.rho_hat1).abs() < 1e-12 * t.rho_hat1);
            // rounding floor of the iteration, a few ulps per step
            let floor = 64.0 * f64::EPSILON * limit;
            let deviation = |n: usize| (transfer_psi(n, &p, TransferComponent::Phi1Hat, TransferRoute::Iterated).unwrap() - limit).abs();
            let fitted = deviation(5) / mu.powi(5);
            assert!((fitted - t.rho_hat2.abs()).abs() < 1e-6 * t.rho_hat2.abs());
            for n in 5..=40 {
                let dev = deviation(n);
                let bound = fitted * mu.powi(n as i32);
                assert!(dev <= 1.001 * bound + floor, "theta={theta} n={n}: {dev} > {bound}");
                if bound > 1e4 * floor {
                    assert!((dev / bound - 1.0).abs() < 1e-3, "theta={theta} n={n}: {dev} vs {bound}");
                }
            }
        }
    }

    #[test]
    fn flip_symmetry_is_exact() {
        let p = at(2.5, 2.0);
        for n in 1..=6 {
            assert_eq!(
                projector_value(StateLabel::Phi1, Projector::P, n, &p).unwrap(),
                projector_value(StateLabel::Phi2, Projector::Q, n, &p).unwrap()
            );
            assert_eq!(
                projector_value(StateLabel::Phi1, Projector::Q, n, &p).unwrap(),
                projector_value(StateLabel::Phi2, Projector::P, n, &p).unwrap()
            );
            assert_eq!(
                site_projector_value(StateLabel::Phi1, Projector::P, n, &p).unwrap(),
                site_projector_value(StateLabel::Phi2, Projector::Q, n, &p).unwrap()
            );
            assert_eq!(
                disorder_value(StateLabel::Phi1, n, &p, SigmaLevel::Level).unwrap(),
                -disorder_value(StateLabel::Phi2, n, &p, SigmaLevel::Level).unwrap()
            );
            let hat1 = transfer_psi(n, &p, TransferComponent::Phi1Hat, TransferRoute::Spectral).unwrap();
            let hat2 = transfer_psi(n, &p, TransferComponent::Phi2Hat, TransferRoute::Spectral).unwrap();
            let check1 = transfer_psi(n, &p, TransferComponent::Phi1Check, TransferRoute::Spectral).unwrap();
            let check2 = transfer_psi(n, &p, TransferComponent::Phi2Check, TransferRoute::Spectral).unwrap();
            assert_eq!(hat1, hat2);
            assert_eq!(check1, -check2);
        }
    }

    #[test]
    fn projector_pair_is_subnormalized() {
        for (theta, j) in [(3.0, 1.0), (2.5, 2.0), (10.0, 1.0)] {
            let p = at(theta, j);
            for n in 1..=5 {
                let a = projector_value(StateLabel::Phi1, Projector::P, n, &p).unwrap();
                let b = projector_value(StateLabel::Phi1, Projector::Q, n, &p).unwrap();
                assert!(a + b <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn site_projectors_sum_to_one() {
        let p = at(4.0, 1.0);
        for n in 1..=5 {
            for s in [StateLabel::Phi1, StateLabel::Phi2] {
                let a = site_projector_value(s, Projector::P, n, &p).unwrap();
                let b = site_projector_value(s, Projector::Q, n, &p).unwrap();
                assert!((a + b - 1.0).abs() < 1e-12);
                let sigma = disorder_value(s, n, &p, SigmaLevel::Level).unwrap();
                assert!((a - b - sigma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_forms_match_oracle_small() {
        let caps = Caps::default();
        for (theta, j) in [(3.0, 1.0), (2.5, 2.0)] {
            let p = at(theta, j);
            for n in 1..=2 {
                for r in expectation_reports(&p, n, SigmaLevel::Level, 1e-9, &caps).unwrap() {
                    assert!(r.pass, "{r:?}");
                }
            }
        }
    }

    #[test]
    fn next_level_placement_matches_oracle() {
        let p = at(3.0, 1.0);
        let caps = Caps::default();
        for n in 0..=2 {
            let cf = disorder_value(StateLabel::Phi1, n, &p, SigmaLevel::NextLevel).unwrap();
            let or = oracle_value(ObservableKind::Disorder, StateLabel::Phi1, n, &p, SigmaLevel::NextLevel, &caps).unwrap();
            assert!(close(cf, or, 1e-9));
            assert_eq!(cf, disorder_value(StateLabel::Phi1, n + 1, &p, SigmaLevel::Level).unwrap());
        }
    }

    #[test]
    fn witness_quantities() {
        let p = at(3.0, 1.0);
        let w = witness_report(&p, 50).unwrap();
        assert!(w.i1 > 0.0 && w.epsilon0 > 0.0);
        assert!((w.i1 - w.epsilon0).abs() < 1e-12 * w.i1);
        assert!(w.lower_bound_holds && w.above_half_beyond_crossover);
        assert!(w.i2 * w.decay_ratio.abs().powi(w.crossover as i32) <= w.i1 / 2.0);
        if w.crossover > 1 {
            assert!(w.i2 * w.decay_ratio.abs().powi(w.crossover as i32 - 1) > w.i1 / 2.0);
        }
        let g40 = &w.edge_gap[39];
        assert!((g40.gap - g40.limit).abs() < 1e-8);
        assert!(matches!(witness_report(&at(2.0, 1.0), 5), Err(Error::NoBrokenPhase { .. })));
    }

    #[test]
    fn epsilon0_matches_disorder_limit() {
        let p = at(4.0, 1.0);
        let phase = BrokenPhase::new(&p).unwrap();
        let t = TransferData::new(&phase);
        let c = phase.coefficients;
        let eps = (c.tau1 + c.tau2) * phase.xi0 * phase.xi3 * t.rho_hat1
            + 0.5 * c.tau3 * (phase.xi0 * phase.xi0 + phase.xi3 * phase.xi3) * t.rho_check1;
        let w = witness_report(&p, 5).unwrap();
        assert!((eps - w.epsilon0).abs() < 1e-12 * eps);
        let far = disorder_value(StateLabel::Phi1, 60, &p, SigmaLevel::Level).unwrap();
        assert!((far - eps).abs() < 1e-12 * eps);
    }

    #[test]
    fn symmetric_state_disorder_is_zero() {
        for (theta, j) in [(1.5, 1.0), (3.0, 2.0)] {
            assert_eq!(disorder_value(StateLabel::Alpha, 3, &at(theta, j), SigmaLevel::Level).unwrap(), 0.0);
        }
        assert!(matches!(
            projector_value(StateLabel::Phi1, Projector::P, 1, &at(2.0, 1.0)),
            Err(Error::NoBrokenPhase { .. })
        ));
    }

    #[test]
    fn overlap_table() {
        let betas: Vec<f64> = [3.0f64, 4.0, 6.0, 10.0, 20.0].iter().map(|t| 0.5 * t.ln()).collect();
        let rows = overlap_report(1.0, 2, &betas, 0.01).unwrap();
        for r in &rows {
            assert_eq!(r.phi2_p, r.phi1_q);
        }
        assert!(rows.windows(2).all(|w| w[1].phi1_p > w[0].phi1_p));
        assert!(rows.last().unwrap().separated);
        let near = overlap_report(1.0, 2, &[0.5 * (5f64.sqrt() + 1e-6).ln()], 0.01).unwrap();
        assert!((near[0].phi1_p - near[0].phi1_q).abs() < 1e-2 * near[0].phi1_p);
    }

    #[test]
    fn discrepancies_pick_oracle_variant() {
        let p = at(3.0, 1.0);
        for d in resolved_discrepancies(&p, 3, &Caps::default()).unwrap() {
            let shipped = (d.shipped_value - d.reference).abs();
            let rejected = (d.rejected_value - d.reference).abs();
            assert!(shipped <= 1e-9 * d.reference.abs().max(1.0), "{d:?}");
            assert!(rejected > 1e-6 * d.reference.abs().max(1.0), "{d:?}");
        }
    }
}
