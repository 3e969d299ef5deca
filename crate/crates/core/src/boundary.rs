//! Translation-invariant solutions `(ω₀, h)` of the boundary fixed-point
//! equations on the binary tree.
//!
//! With `t = tr(h)` and `s = tr(σh)` the equations reduce to
//! `t = τ₁t² + τ₂s²`, `s = τ₃ts`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite_volume::{check_boundary_equations, BoundaryCondition, BoundaryReport};
use crate::linalg::SiteOperator;
use crate::model::{Coefficients, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionTag {
    Symmetric,
    Plus,
    Minus,
    Numeric,
}

/// One boundary solution. `h = t𝟙 + sσ` is diagonal and `ω₀ = (1/t)𝟙`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySolution {
    pub tag: SolutionTag,
    pub omega0: SiteOperator,
    pub h: SiteOperator,
    pub xi0: Option<f64>,
    pub xi3: Option<f64>,
    pub alpha: Option<f64>,
}

impl BoundarySolution {
    fn from_trace_pair(tag: SolutionTag, t: f64, s: f64) -> Self {
        BoundarySolution {
            tag,
            omega0: SiteOperator::from_diag(&[1.0 / t, 1.0 / t]),
            h: SiteOperator::pauli_combination(t, s),
            xi0: None,
            xi3: None,
            alpha: None,
        }
    }

    /// `(tr h, tr σh)`.
    pub fn trace_pair(&self) -> (f64, f64) {
        let h11 = self.h.entry(0, 0).re;
        let h22 = self.h.entry(1, 1).re;
        (0.5 * (h11 + h22), 0.5 * (h11 - h22))
    }

    pub fn boundary(&self) -> Result<BoundaryCondition> {
        BoundaryCondition::new(self.omega0.clone(), self.h.clone())
    }

    pub fn residuals(&self, params: &ModelParams, tol: f64) -> Result<BoundaryReport> {
        check_boundary_equations(params, &self.boundary()?, tol)
    }

    pub fn summary(&self) -> SolutionSummary {
        let diag = |op: &SiteOperator| [op.entry(0, 0).re, op.entry(1, 1).re];
        SolutionSummary {
            tag: self.tag,
            omega0: diag(&self.omega0),
            h: diag(&self.h),
            xi0: self.xi0,
            xi3: self.xi3,
            alpha: self.alpha,
        }
    }
}

/// Serializable view: diagonal entries of `ω₀` and `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub tag: SolutionTag,
    pub omega0: [f64; 2],
    pub h: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// `h = (1/τ₁)𝟙`, `ω₀ = τ₁𝟙`. Exists for every θ ≥ 1.
pub fn symmetric_solution(params: &ModelParams) -> Result<BoundarySolution> {
    let c = params.coefficients()?;
    let alpha = 1.0 / c.tau1;
    let mut sol = BoundarySolution::from_trace_pair(SolutionTag::Symmetric, alpha, 0.0);
    sol.omega0 = SiteOperator::from_diag(&[c.tau1, c.tau1]);
    sol.alpha = Some(alpha);
    Ok(sol)
}

/// `ξ₀ = 1/τ₃` and `ξ₃ = √(τ₃−τ₁)/(τ₃√τ₂)` when Δ > 0.
pub fn broken_amplitudes(c: &Coefficients) -> Option<(f64, f64)> {
    if !c.has_broken_phase() {
        return None;
    }
    let xi0 = 1.0 / c.tau3;
    let xi3 = (0.25 * c.discriminant).sqrt() / (c.tau3 * c.tau2.sqrt());
    Some((xi0, xi3))
}

/// The pair `h = ξ₀𝟙 ± ξ₃σ`, `ω₀ = τ₃𝟙`, or `None` when Δ ≤ 0.
pub fn broken_solutions(params: &ModelParams) -> Result<Option<(BoundarySolution, BoundarySolution)>> {
    let c = params.coefficients()?;
    let Some((xi0, xi3)) = broken_amplitudes(&c) else {
        return Ok(None);
    };
    let make = |tag, sign: f64| {
        let mut sol = BoundarySolution::from_trace_pair(tag, xi0, sign * xi3);
        sol.omega0 = SiteOperator::from_diag(&[c.tau3, c.tau3]);
        sol.xi0 = Some(xi0);
        sol.xi3 = Some(xi3);
        sol
    };
    Ok(Some((make(SolutionTag::Plus, 1.0), make(SolutionTag::Minus, -1.0))))
}

/// Symmetric solution followed by Plus and Minus when they exist.
pub fn closed_form_solutions(params: &ModelParams) -> Result<Vec<BoundarySolution>> {
    let mut out = vec![symmetric_solution(params)?];
    if let Some((plus, minus)) = broken_solutions(params)? {
        out.push(plus);
        out.push(minus);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub damping: f64,
    pub max_iterations: usize,
    pub tol: f64,
    pub dedup_radius: f64,
    /// Residual bound for the boundary-equation validation of each root.
    pub validation_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { damping: 0.5, max_iterations: 200, tol: 1e-12, dedup_radius: 1e-8, validation_tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SeedOutcome {
    Converged { seed: [f64; 2], root: [f64; 2], iterations: usize },
    /// Converged to `h = 0` or to a non-positive `h`.
    Rejected { seed: [f64; 2], root: [f64; 2], iterations: usize },
    NonConvergence { seed: [f64; 2], residual: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericSolve {
    /// Distinct roots, ordered by decreasing `tr(σh)`.
    pub solutions: Vec<BoundarySolution>,
    pub outcomes: Vec<SeedOutcome>,
}

/// Dimensionless system in `u = τ₁t`, `v = τ₁s`:
/// `u² + (τ₂/τ₁)v² − u = 0`, `(τ₃/τ₁)uv − v = 0`.
struct ScaledSystem {
    r: f64,
    q: f64,
}

impl ScaledSystem {
    fn residual(&self, u: f64, v: f64) -> [f64; 2] {
        [u * u + self.r * v * v - u, self.q * u * v - v]
    }

    fn norm(&self, u: f64, v: f64) -> f64 {
        let [a, b] = self.residual(u, v);
        a.abs().max(b.abs())
    }

    fn step(&self, u: f64, v: f64) -> Option<[f64; 2]> {
        let [g1, g2] = self.residual(u, v);
        let (a, b, c, d) = (2.0 * u - 1.0, 2.0 * self.r * v, self.q * v, self.q * u - 1.0);
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some([-(d * g1 - b * g2) / det, -(a * g2 - c * g1) / det])
    }

    /// Distance to the nearby exact root, estimated as residual over the
    /// smallest singular value of the Jacobian. Large near a double root.
    fn uncertainty(&self, u: f64, v: f64) -> f64 {
        let (a, b, c, d) = (2.0 * u - 1.0, 2.0 * self.r * v, self.q * v, self.q * u - 1.0);
        let frob = a * a + b * b + c * c + d * d;
        let det = (a * d - b * c).abs();
        let sigma_min = (0.5 * (frob - ((frob * frob - 4.0 * det * det).max(0.0)).sqrt())).max(0.0).sqrt();
        let res = self.norm(u, v);
        if res == 0.0 {
            0.0
        } else if sigma_min > 0.0 {
            res / sigma_min
        } else {
            f64::INFINITY
        }
    }
}

fn newton(sys: &ScaledSystem, seed: [f64; 2], cfg: &NewtonConfig) -> std::result::Result<([f64; 2], usize), f64> {
    let [mut u, mut v] = seed;
    let mut res = sys.norm(u, v);
    for it in 0..=cfg.max_iterations {
        if res <= cfg.tol {
            for _ in 0..3 {
                let Some([du, dv]) = sys.step(u, v) else { break };
                let nres = sys.norm(u + du, v + dv);
                if !(nres < res) {
                    break;
                }
                u += du;
                v += dv;
                res = nres;
            }
            return Ok(([u, v], it));
        }
        if it == cfg.max_iterations {
            break;
        }
        let Some([du, dv]) = sys.step(u, v) else {
            return Err(res);
        };
        let mut lambda = 1.0;
        let (mut nu, mut nv) = (u + du, v + dv);
        let mut nres = sys.norm(nu, nv);
        let mut halvings = 0;
        while !(nres < res) && halvings < 40 {
            lambda *= cfg.damping;
            nu = u + lambda * du;
            nv = v + lambda * dv;
            nres = sys.norm(nu, nv);
            halvings += 1;
        }
        if !nres.is_finite() {
            return Err(res);
        }
        u = nu;
        v = nv;
        res = nres;
    }
    Err(res)
}

/// Damped Newton from each seed `(τ₁·tr h, τ₁·tr σh)`. Roots with `h`
/// not strictly positive are rejected; the rest are deduplicated and
/// validated against the boundary equations.
pub fn solve_numeric(params: &ModelParams, seeds: &[[f64; 2]], cfg: &NewtonConfig) -> Result<NumericSolve> {
    let c = params.coefficients()?;
    let sys = ScaledSystem { r: c.tau2 / c.tau1, q: c.tau3 / c.tau1 };
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| match newton(&sys, seed, cfg) {
            Ok((root, iterations)) => {
                let [u, v] = root;
                if u > v.abs() && u > cfg.dedup_radius {
                    SeedOutcome::Converged { seed, root, iterations }
                } else {
                    SeedOutcome::Rejected { seed, root, iterations }
                }
            }
            Err(residual) => SeedOutcome::NonConvergence { seed, residual },
        })
        .collect();

    let mut found: Vec<([f64; 2], f64)> = Vec::new();
    for o in &outcomes {
        if let SeedOutcome::Converged { root, .. } = o {
            let unc = sys.uncertainty(root[0], root[1]);
            let near = found.iter().position(|(r, ru)| {
                (r[0] - root[0]).abs().max((r[1] - root[1]).abs()) <= cfg.dedup_radius + 4.0 * (ru + unc)
            });
            match near {
                Some(i) if unc < found[i].1 => found[i] = (*root, unc),
                Some(_) => {}
                None => found.push((*root, unc)),
            }
        }
    }
    let mut roots: Vec<[f64; 2]> = found.into_iter().map(|(r, _)| r).collect();
    roots.sort_by(|a, b| b[1].total_cmp(&a[1]));

    let mut solutions = Vec::with_capacity(roots.len());
    for [u, v] in roots {
        let sol = BoundarySolution::from_trace_pair(SolutionTag::Numeric, u / c.tau1, v / c.tau1);
        let report = sol.residuals(params, cfg.validation_tol)?;
        if !report.pass {
            return Err(Error::ConsistencyFailure {
                quantity: "numeric boundary solution",
                left: report.eq2_residual,
                right: cfg.validation_tol,
            });
        }
        solutions.push(sol);
    }
    Ok(NumericSolve { solutions, outcomes })
}

/// `count` seeds with `u ∈ (0, 2]`, `v ∈ [−2, 2]`.
pub fn random_seeds(count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| [2.0 - rng.gen_range(0.0..2.0), rng.gen_range(-2.0..=2.0)]).collect()
}

/// Tag of the closed-form solution lying within `radius` (relative to
/// `max|h|`) of `sol`.
pub fn identify(sol: &BoundarySolution, closed: &[BoundarySolution], radius: f64) -> Option<SolutionTag> {
    let (t, s) = sol.trace_pair();
    closed
        .iter()
        .find(|c| {
            let (ct, cs) = c.trace_pair();
            let scale = ct.abs().max(cs.abs());
            (t - ct).abs().max((s - cs).abs()) <= radius * scale
        })
        .map(|c| c.tag)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Unique,
    Coexistence,
}

/// `Unique` iff Δ(θ) ≤ 0, up to the critical band.
pub fn classify(params: &ModelParams) -> Result<Classification> {
    let c = params.coefficients()?;
    Ok(if c.has_broken_phase() { Classification::Coexistence } else { Classification::Unique })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(theta: f64, j: f64) -> ModelParams {
        ModelParams::from_theta(theta, j).unwrap()
    }

    #[test]
    fn symmetric_values() {
        let s = symmetric_solution(&at(3.0, 1.0)).unwrap();
        assert!((s.alpha.unwrap() - 1.0 / 9.0).abs() < 1e-15);
        let s = symmetric_solution(&ModelParams::new(0.0, 2.0, 2).unwrap()).unwrap();
        assert_eq!(s.h, SiteOperator::identity(2));
        for (theta, j) in [(1.5, 1.0), (2.0, 2.0), (4.0, 1.0), (10.0, 3.0)] {
            let p = at(theta, j);
            let r = symmetric_solution(&p).unwrap().residuals(&p, 1e-12).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn broken_values() {
        let p = at(3.0, 1.0);
        let (plus, minus) = broken_solutions(&p).unwrap().unwrap();
        assert!((plus.xi0.unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!((plus.xi3.unwrap() - 1.0 / (12.0 * 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(plus.h.entry(0, 0), minus.h.entry(1, 1));
        assert_eq!(plus.h.entry(1, 1), minus.h.entry(0, 0));
        for sol in [&plus, &minus] {
            assert!(sol.residuals(&p, 1e-12).unwrap().pass);
            assert!(sol.h.is_positive(1e-12));
        }
        assert!(broken_solutions(&at(2.0, 1.0)).unwrap().is_none());
    }

    #[test]
    fn classification() {
        assert_eq!(classify(&at(5f64.sqrt(), 1.0)).unwrap(), Classification::Unique);
        assert_eq!(classify(&at(1.7, 2.0)).unwrap(), Classification::Unique);
        assert_eq!(classify(&at(2.1, 2.0)).unwrap(), Classification::Coexistence);
        assert_eq!(classify(&at(3.0, 1.0)).unwrap(), Classification::Coexistence);
    }

    #[test]
    fn numeric_unique_region() {
        let p = at(2.0, 1.0);
        let out = solve_numeric(&p, &random_seeds(100, 7), &NewtonConfig::default()).unwrap();
        assert_eq!(out.solutions.len(), 1);
        assert_eq!(identify(&out.solutions[0], &closed_form_solutions(&p).unwrap(), 1e-8), Some(SolutionTag::Symmetric));
    }

    #[test]
    fn numeric_coexistence_region() {
        let p = at(3.0, 1.0);
        let closed = closed_form_solutions(&p).unwrap();
        let out = solve_numeric(&p, &random_seeds(100, 7), &NewtonConfig::default()).unwrap();
        let tags: Vec<_> = out.solutions.iter().map(|s| identify(s, &closed, 1e-8)).collect();
        assert_eq!(tags, vec![Some(SolutionTag::Plus), Some(SolutionTag::Symmetric), Some(SolutionTag::Minus)]);
    }

    #[test]
    fn exact_seed_needs_no_iterations() {
        let p = at(3.0, 1.0);
        let out = solve_numeric(&p, &[[1.0, 0.0]], &NewtonConfig::default()).unwrap();
        assert!(matches!(out.outcomes[0], SeedOutcome::Converged { iterations: 0, .. }));
    }

    #[test]
    fn zero_root_is_rejected() {
        let p = at(3.0, 1.0);
        let out = solve_numeric(&p, &[[1e-3, 0.0]], &NewtonConfig::default()).unwrap();
        assert!(matches!(out.outcomes[0], SeedOutcome::Rejected { .. }));
        assert!(out.solutions.is_empty());
    }

    #[test]
    fn theta_one_gives_identity() {
        let p = ModelParams::new(0.0, 1.0, 2).unwrap();
        let out = solve_numeric(&p, &random_seeds(20, 1), &NewtonConfig::default()).unwrap();
        assert_eq!(out.solutions.len(), 1);
        let h = &out.solutions[0].h;
        assert!((h.entry(0, 0).re - 1.0).abs() < 1e-14 && (h.entry(1, 1).re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn amplitude_vanishes_at_critical_line() {
        let theta_c = 5f64.sqrt();
        let mut ratios = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let c = at(theta_c + eps, 1.0).coefficients().unwrap();
            let (_, xi3) = broken_amplitudes(&c).unwrap();
            ratios.push(xi3 / eps.sqrt());
        }
        let bound = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(bound < 1.0);
        assert!(ratios.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn summary_json() {
        let s = symmetric_solution(&at(3.0, 1.0)).unwrap().summary();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.starts_with(r#"{"tag":"symmetric","omega0":["#));
        assert!(!text.contains("xi0"));
    }
}
