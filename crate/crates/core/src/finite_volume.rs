//! Finite-volume densities `𝒲_{n]} = 𝐊ₙ𝐊ₙ*` with
//! `𝐊ₙ = ω₀^{1/2} K_{[0,1]} ⋯ K_{[n−1,n]} 𝐡ₙ^{1/2}`, their consistency
//! checks, quasi-conditional expectations, and a brute-force expectation
//! oracle that shares no code with the construction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LocalOperator, SiteOperator, C64, DEFAULT_TOL};
use crate::model::{Interaction, ModelParams};
use crate::numerics::pairwise_sum;
use crate::tree::{TreeCoord, Volume};

pub const DEFAULT_DIAGONAL_SITES: usize = 15;
pub const MAX_DIAGONAL_SITES: usize = 25;
pub const MAX_DENSE_SITES: usize = 7;

/// Upper bounds on the number of sites handled by each representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub diagonal_sites: usize,
    pub dense_sites: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { diagonal_sites: DEFAULT_DIAGONAL_SITES, dense_sites: MAX_DENSE_SITES }
    }
}

impl Caps {
    pub fn new(diagonal_sites: usize, dense_sites: usize) -> Result<Self> {
        let caps = Caps { diagonal_sites, dense_sites };
        caps.validate()?;
        Ok(caps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.diagonal_sites == 0 || self.diagonal_sites > MAX_DIAGONAL_SITES {
            return Err(Error::InvalidParams(format!(
                "diagonal cap must be in 1..={MAX_DIAGONAL_SITES}, got {}",
                self.diagonal_sites
            )));
        }
        if self.dense_sites == 0 || self.dense_sites > MAX_DENSE_SITES {
            return Err(Error::InvalidParams(format!(
                "dense cap must be in 1..={MAX_DENSE_SITES}, got {}",
                self.dense_sites
            )));
        }
        Ok(())
    }

    fn check(&self, what: &'static str, sites: usize, dense: bool) -> Result<()> {
        let cap = if dense { self.dense_sites } else { self.diagonal_sites };
        if sites > cap {
            return Err(Error::ResourceCap { what, requested: sites as u128, cap: cap as u128 });
        }
        Ok(())
    }
}

/// Boundary data `(ω₀, {hˣ})`: one default `h` plus optional per-vertex
/// overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub omega0: SiteOperator,
    pub h: SiteOperator,
    overrides: BTreeMap<TreeCoord, SiteOperator>,
}

impl BoundaryCondition {
    pub fn new(omega0: SiteOperator, h: SiteOperator) -> Result<Self> {
        if omega0.dim() != h.dim() {
            return Err(Error::DimensionMismatch { expected: omega0.dim(), found: h.dim() });
        }
        for (name, op) in [("omega0", &omega0), ("h", &h)] {
            if !op.is_positive(DEFAULT_TOL) {
                return Err(Error::NotPositive(format!("{name} = {:?}", op.matrix())));
            }
        }
        Ok(BoundaryCondition { omega0, h, overrides: BTreeMap::new() })
    }

    pub fn with_override(mut self, x: TreeCoord, op: SiteOperator) -> Result<Self> {
        if op.dim() != self.h.dim() {
            return Err(Error::DimensionMismatch { expected: self.h.dim(), found: op.dim() });
        }
        if !op.is_positive(DEFAULT_TOL) {
            return Err(Error::NotPositive(format!("h at {:?}", x.path())));
        }
        self.overrides.insert(x, op);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.overrides.values().all(|op| op == &self.h)
    }

    pub fn h_at(&self, x: &TreeCoord) -> &SiteOperator {
        self.overrides.get(x).unwrap_or(&self.h)
    }

    pub fn is_diagonal(&self) -> bool {
        self.omega0.is_diagonal(0.0) && self.h.is_diagonal(0.0) && self.overrides.values().all(|op| op.is_diagonal(0.0))
    }
}

/// Representation used by [`MarkovChain::build_state`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildPath {
    #[default]
    Auto,
    Diagonal,
    Dense,
}

/// The density `𝒲_{n]}` on `Λₙ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteVolumeState {
    pub n: usize,
    pub k: usize,
    pub density: LocalOperator,
}

impl FiniteVolumeState {
    pub fn volume(&self) -> Volume {
        Volume { n: self.n, k: self.k }
    }

    pub fn normalized_trace(&self) -> C64 {
        self.density.normalized_trace()
    }

    /// `tr(𝒲 · a)` for `a` supported in `Λₙ`.
    pub fn expectation(&self, obs: &LocalOperator) -> Result<C64> {
        Ok(self.density.multiply(obs)?.normalized_trace())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectivityReport {
    pub n: usize,
    /// `‖tr_{n−1]}(𝒲_{n]}) − 𝒲_{n−1]}‖_∞`
    pub deviation: f64,
    /// `|tr(𝒲_{n]}) − 1|`
    pub trace_deviation: f64,
    pub pass: bool,
}

/// A forward chain on the order-k tree: cell interaction plus boundary.
#[derive(Clone, Debug)]
pub struct MarkovChain {
    pub interaction: Interaction,
    pub boundary: BoundaryCondition,
    pub caps: Caps,
}

impl MarkovChain {
    pub fn new(interaction: Interaction, boundary: BoundaryCondition, caps: Caps) -> Result<Self> {
        caps.validate()?;
        if interaction.dim != boundary.dim() {
            return Err(Error::DimensionMismatch { expected: interaction.dim, found: boundary.dim() });
        }
        Ok(MarkovChain { interaction, boundary, caps })
    }

    pub fn ising(params: &ModelParams, boundary: BoundaryCondition) -> Result<Self> {
        Self::new(Interaction::ising(params)?, boundary, Caps::default())
    }

    pub fn with_caps(mut self, caps: Caps) -> Result<Self> {
        caps.validate()?;
        self.caps = caps;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.interaction.k
    }

    fn is_diagonal(&self) -> bool {
        self.interaction.is_diagonal() && self.boundary.is_diagonal()
    }

    fn resolve(&self, path: BuildPath) -> Result<BuildPath> {
        match path {
            BuildPath::Auto if self.is_diagonal() => Ok(BuildPath::Diagonal),
            BuildPath::Auto => Ok(BuildPath::Dense),
            BuildPath::Diagonal if !self.is_diagonal() => {
                Err(Error::Unsupported("diagonal path needs diagonal interaction and boundary".into()))
            }
            p => Ok(p),
        }
    }

    /// `K_{[m,m+1]}`: ordered product of the cell operators of level `m`.
    pub fn level_transfer(&self, m: usize) -> Result<LocalOperator> {
        let vol = Volume::new(m + 1, self.k())?;
        let band = vol.band_range(m, m + 1);
        self.caps.check("level transfer sites", band.len(), !self.interaction.is_diagonal())?;
        let mut acc = LocalOperator::scalar(self.interaction.dim, C64::new(1.0, 0.0));
        for x in vol.level_range(m) {
            let children: Vec<usize> = vol.children_of(x).collect();
            acc = acc.multiply(&self.interaction.cell_at(x, &children)?)?;
        }
        Ok(acc)
    }

    fn leaf_roots(&self, vol: &Volume, m: usize) -> Result<Vec<(usize, SiteOperator)>> {
        vol.level_range(m)
            .map(|v| {
                let x = vol.coord_of(v).expect("in volume");
                Ok((v, self.boundary.h_at(&x).sqrt_psd(DEFAULT_TOL)?))
            })
            .collect()
    }

    pub fn build_state(&self, n: usize, path: BuildPath) -> Result<FiniteVolumeState> {
        let path = self.resolve(path)?;
        let vol = Volume::new(n, self.k())?;
        self.caps.check("volume sites", vol.len(), path == BuildPath::Dense)?;
        let density = match path {
            BuildPath::Dense => self.build_dense(&vol)?,
            _ => self.build_diagonal(&vol)?,
        };
        Ok(FiniteVolumeState { n, k: self.k(), density })
    }

    fn build_dense(&self, vol: &Volume) -> Result<LocalOperator> {
        let root = self.boundary.omega0.sqrt_psd(DEFAULT_TOL)?.at(0).into_dense();
        let mut k_op = root;
        for m in 0..vol.n {
            k_op = k_op.multiply(&self.level_transfer(m)?)?;
        }
        for (v, op) in self.leaf_roots(vol, vol.n)? {
            k_op = k_op.multiply(&op.at(v))?;
        }
        k_op.multiply(&k_op.adjoint())
    }

    fn build_diagonal(&self, vol: &Volume) -> Result<LocalOperator> {
        let d = self.interaction.dim;
        let k = self.k();
        let sites = vol.len();
        let size = d.pow(sites as u32);
        let strides: Vec<usize> = (0..sites).map(|v| d.pow((sites - 1 - v) as u32)).collect();
        let omega = self.boundary.omega0.sqrt_psd(DEFAULT_TOL)?.diag();
        let children: Vec<usize> = (1..=k).collect();
        let cell = self.interaction.cell_at(0, &children)?.diagonal_entries();
        let leaves = self.leaf_roots(vol, vol.n)?;
        let leaf_tables: Vec<(usize, Vec<C64>)> = leaves.into_iter().map(|(v, op)| (v, op.diag())).collect();
        let parents = 0..vol.level_offset(vol.n);

        let digit = |i: usize, v: usize| (i / strides[v]) % d;
        let entries: Vec<C64> = (0..size)
            .into_par_iter()
            .map(|i| {
                let mut amp = omega[digit(i, 0)];
                for x in parents.clone() {
                    let mut idx = digit(i, x);
                    for c in vol.children_of(x) {
                        idx = idx * d + digit(i, c);
                    }
                    amp *= cell[idx];
                }
                for (v, table) in &leaf_tables {
                    amp *= table[digit(i, *v)];
                }
                C64::new(amp.norm_sqr(), 0.0)
            })
            .collect();
        LocalOperator::diagonal(d, (0..sites).collect(), entries)
    }

    pub fn check_projectivity(&self, n: usize, tol: f64) -> Result<ProjectivityReport> {
        if n == 0 {
            return Err(Error::InvalidParams("projectivity needs n >= 1".into()));
        }
        let big = self.build_state(n, BuildPath::Auto)?;
        let small = self.build_state(n - 1, BuildPath::Auto)?;
        let keep: Vec<usize> = (0..small.volume().len()).collect();
        let reduced = big.density.partial_trace(&keep)?;
        let deviation = reduced.max_abs_diff(&small.density)?;
        let trace_deviation = (big.normalized_trace() - C64::new(1.0, 0.0)).norm();
        let pass = deviation <= tol && trace_deviation <= tol;
        Ok(ProjectivityReport { n, deviation, trace_deviation, pass })
    }

    /// `φ⁽ⁿ⁾(a) = tr(𝒲_{n+1]} a)` through the construction itself.
    pub fn expectation(&self, n: usize, obs: &LocalOperator) -> Result<C64> {
        self.build_state(n + 1, BuildPath::Auto)?.expectation(obs)
    }

    pub fn quasi_conditional(&self, truncation: usize) -> Result<QuasiConditional<'_>> {
        let volume = Volume::new(truncation, self.k())?;
        Ok(QuasiConditional { chain: self, volume })
    }
}

/// Residuals of the boundary fixed-point equations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// `|tr(ω₀h) − 1|`
    pub eq1_residual: f64,
    /// `‖tr_{x]}(A ∏h A*) − h‖_∞ / ‖h‖_∞` from the cell trace.
    pub eq2_residual: f64,
    /// Same, from the 2×2 form `τ₁t² + τ₂s² ± τ₃ts`; `None` for k ≠ 2.
    pub eq2_closed_residual: Option<f64>,
    pub pass: bool,
}

fn max_entry(op: &SiteOperator) -> f64 {
    op.matrix().iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn check_boundary_equations(params: &ModelParams, boundary: &BoundaryCondition, tol: f64) -> Result<BoundaryReport> {
    if !boundary.is_translation_invariant() {
        return Err(Error::Unsupported("boundary equations need a translation-invariant boundary".into()));
    }
    let h = &boundary.h;
    let eq1 = boundary.omega0.mul(h)?.normalized_trace();
    let eq1_residual = (eq1 - C64::new(1.0, 0.0)).norm();
    let scale = max_entry(h).max(f64::MIN_POSITIVE);

    let interaction = Interaction::ising(params)?;
    let children: Vec<usize> = (1..=params.k).collect();
    let cell = interaction.cell_at(0, &children)?;
    let mut weighted = cell.clone();
    for &c in &children {
        weighted = weighted.multiply(&h.at(c))?;
    }
    let lhs = weighted.multiply(&cell.adjoint())?.partial_trace(&[0])?;
    let eq2_residual = lhs.max_abs_diff(&h.at(0))? / scale;

    let eq2_closed_residual = if params.k == 2 {
        let c = params.coefficients()?;
        let t = h.normalized_trace().re;
        let s = SiteOperator::sigma().mul(h)?.normalized_trace().re;
        let even = c.tau1 * t * t + c.tau2 * s * s;
        let odd = c.tau3 * t * s;
        let m = h.matrix();
        let r = [
            (m[(0, 0)] - C64::new(even + odd, 0.0)).norm(),
            (m[(1, 1)] - C64::new(even - odd, 0.0)).norm(),
            m[(0, 1)].norm(),
            m[(1, 0)].norm(),
        ];
        Some(r.iter().cloned().fold(0.0, f64::max) / scale)
    } else {
        None
    };
    let pass = eq1_residual <= tol && eq2_residual <= tol && eq2_closed_residual.is_none_or(|r| r <= tol);
    Ok(BoundaryReport { eq1_residual, eq2_residual, eq2_closed_residual, pass })
}

/// The maps `Ê₁(x) = tr_{[1}(K*_{[0,1]} ω₀^{1/2} x ω₀^{1/2} K_{[0,1]})` and
/// `E_k(x) = tr_{[k}(K*_{[k−1,k]} x K_{[k−1,k]})`, evaluated on the
/// truncation `Λ_T`.
pub struct QuasiConditional<'a> {
    chain: &'a MarkovChain,
    volume: Volume,
}

impl QuasiConditional<'_> {
    pub fn truncation(&self) -> usize {
        self.volume.n
    }

    pub fn apply(&self, stage: usize, x: &LocalOperator) -> Result<LocalOperator> {
        if stage == 0 || stage > self.volume.n {
            return Err(Error::InvalidParams(format!("stage must be in 1..={}, got {stage}", self.volume.n)));
        }
        let lowest = self.volume.level_offset(stage - 1);
        if x.support().iter().any(|&v| v < lowest || !self.volume.contains_index(v)) {
            return Err(Error::InvalidOperator(format!("support {:?} outside levels {}..={}", x.support(), stage - 1, self.volume.n)));
        }
        let transfer = self.chain.level_transfer(stage - 1)?;
        let dense = !(x.is_diagonal_repr() && transfer.is_diagonal_repr() && self.chain.boundary.is_diagonal());
        let mut union: Vec<usize> = x.support().iter().chain(transfer.support()).cloned().collect();
        union.sort_unstable();
        union.dedup();
        self.chain.caps.check("quasi-conditional sites", union.len(), dense)?;

        let inner = if stage == 1 {
            let root = self.chain.boundary.omega0.sqrt_psd(DEFAULT_TOL)?.at(0);
            root.multiply(x)?.multiply(&root)?
        } else {
            x.clone()
        };
        let product = transfer.adjoint().multiply(&inner)?.multiply(&transfer)?;
        let cut = self.volume.level_offset(stage);
        let keep: Vec<usize> = product.support().iter().cloned().filter(|&v| v >= cut).collect();
        product.partial_trace(&keep)
    }

    /// `tr(𝐡_{n+1} E_{n+1} ∘ ⋯ ∘ E₂ ∘ Ê₁(a))`.
    pub fn compose(&self, n: usize, a: &LocalOperator) -> Result<C64> {
        if n + 1 > self.volume.n {
            return Err(Error::InvalidParams(format!("truncation {} too small for n = {n}", self.volume.n)));
        }
        let mut y = self.apply(1, a)?;
        for stage in 2..=n + 1 {
            y = self.apply(stage, &y)?;
        }
        let mut boundary = LocalOperator::scalar(self.chain.interaction.dim, C64::new(1.0, 0.0));
        for v in self.volume.level_range(n + 1) {
            let x = self.volume.coord_of(v).expect("in truncation");
            boundary = boundary.tensor(&self.chain.boundary.h_at(&x).at(v))?;
        }
        Ok(boundary.multiply(&y)?.normalized_trace())
    }
}

/// Enumeration strategy for [`expectation_oracle`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// `Exact` when `Λ_{n+1}` fits the diagonal cap, else `LeafSummed`.
    #[default]
    Auto,
    /// Every spin configuration of `Λ_{n+1}`.
    Exact,
    /// Every configuration of `Λₙ`; each boundary cell's children are summed
    /// out locally.
    LeafSummed,
}

const ORACLE_CHUNK: usize = 1 << 12;

fn log_diag(op: &SiteOperator, what: &str) -> Result<[f64; 2]> {
    if op.dim() != 2 || !op.is_diagonal(0.0) {
        return Err(Error::Unsupported(format!("oracle needs a diagonal qubit {what}")));
    }
    let d = op.diag();
    if d.iter().any(|z| z.im != 0.0 || z.re < 0.0) {
        return Err(Error::NotPositive(what.to_string()));
    }
    Ok([d[0].re.ln(), d[1].re.ln()])
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// `φ⁽ⁿ⁾(a)` by direct enumeration of spin configurations of the Ising
/// model with competing interactions.
///
/// Weights come from counting aligned bonds, `ln W(s) = ln ω₀(s₀) +
/// 2β·#{aligned edges} + 2Jβ·#{aligned sibling pairs} + Σ ln h(s_leaf)`,
/// shifted by an upper bound before exponentiation so that large β cannot
/// overflow. Chunk sums are reduced in a fixed order.
pub fn expectation_oracle(
    n: usize,
    params: &ModelParams,
    boundary: &BoundaryCondition,
    obs: &LocalOperator,
    mode: OracleMode,
    caps: &Caps,
) -> Result<C64> {
    params.validate()?;
    caps.validate()?;
    let k = params.k;
    let inner = Volume::new(n, k)?;
    let outer = Volume::new(n + 1, k)?;
    if obs.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: obs.dim() });
    }
    let obs = obs.clone().try_into_diagonal(0.0).map_err(|_| Error::Unsupported("oracle needs a diagonal observable".into()))?;
    if let Some(&v) = obs.support().iter().find(|&&v| !inner.contains_index(v)) {
        return Err(Error::InvalidOperator(format!("observable vertex {v} outside the volume")));
    }
    let mode = match mode {
        OracleMode::Auto if outer.len() <= caps.diagonal_sites => OracleMode::Exact,
        OracleMode::Auto => OracleMode::LeafSummed,
        m => m,
    };
    let vol = if mode == OracleMode::Exact { outer } else { inner };
    caps.check("oracle sites", vol.len(), false)?;

    let edge = 2.0 * params.beta;
    let sibling = 2.0 * params.j * params.beta;
    let ln_omega = log_diag(&boundary.omega0, "omega0")?;
    let h_log = |v: usize| -> Result<[f64; 2]> {
        let x = outer.coord_of(v).expect("in outer volume");
        log_diag(boundary.h_at(&x), "h")
    };

    let last = vol.n;
    let mut last_tables = Vec::new();
    for v in vol.level_range(last) {
        let table = if mode == OracleMode::Exact {
            h_log(v)?
        } else {
            let kids: Vec<[f64; 2]> = outer.children_of(v).map(h_log).collect::<Result<_>>()?;
            let mut out = [0.0; 2];
            for (s, slot) in out.iter_mut().enumerate() {
                let terms: Vec<f64> = (0..1usize << k)
                    .map(|cfg| {
                        let spin = |i: usize| (cfg >> (k - 1 - i)) & 1;
                        let mut t = 0.0;
                        for (i, kid) in kids.iter().enumerate() {
                            if spin(i) == s {
                                t += edge;
                            }
                            if i + 1 < k && spin(i) == spin(i + 1) {
                                t += sibling;
                            }
                            t += kid[spin(i)];
                        }
                        t
                    })
                    .collect();
                *slot = log_sum_exp(&terms) - (k as f64) * std::f64::consts::LN_2;
            }
            out
        };
        last_tables.push(table);
    }

    let cells = vol.level_offset(last);
    let max2 = |t: &[f64; 2]| t[0].max(t[1]);
    let shift = max2(&ln_omega)
        + cells as f64 * (k as f64 * edge + (k - 1) as f64 * sibling)
        + last_tables.iter().map(max2).sum::<f64>();
    if !shift.is_finite() {
        return Ok(C64::new(0.0, 0.0));
    }
    let last_start = vol.level_offset(last);
    let sites = vol.len();
    let obs_bits: Vec<usize> = obs.support().iter().map(|&v| sites - 1 - v).collect();
    let obs_entries = obs.diagonal_entries();

    let total: u64 = 1u64 << sites;
    let chunks = total.div_ceil(ORACLE_CHUNK as u64) as usize;
    let partial: Vec<C64> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk as u64 * ORACLE_CHUNK as u64;
            let end = (start + ORACLE_CHUNK as u64).min(total);
            let mut buf = Vec::with_capacity((end - start) as usize);
            for i in start..end {
                let spin = |v: usize| ((i >> (sites - 1 - v)) & 1) as usize;
                let mut lw = ln_omega[spin(0)] - shift;
                for x in 0..cells {
                    let sx = spin(x);
                    let mut prev = usize::MAX;
                    for c in vol.children_of(x) {
                        let sc = spin(c);
                        if sc == sx {
                            lw += edge;
                        }
                        if sc == prev {
                            lw += sibling;
                        }
                        prev = sc;
                    }
                }
                for (offset, table) in last_tables.iter().enumerate() {
                    lw += table[spin(last_start + offset)];
                }
                let mut oi = 0usize;
                for &b in &obs_bits {
                    oi = (oi << 1) | ((i >> b) & 1) as usize;
                }
                buf.push(obs_entries[oi] * lw.exp());
            }
            pairwise_sum(&buf)
        })
        .collect();
    let sum = pairwise_sum(&partial);
    Ok(sum * (shift - sites as f64 * std::f64::consts::LN_2).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cell_operator;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn symmetric(params: &ModelParams) -> BoundaryCondition {
        let c = params.coefficients().unwrap();
        BoundaryCondition::new(SiteOperator::from_diag(&[c.tau1, c.tau1]), SiteOperator::from_diag(&[1.0 / c.tau1, 1.0 / c.tau1]))
            .unwrap()
    }

    fn broken(params: &ModelParams, sign: f64) -> BoundaryCondition {
        let c = params.coefficients().unwrap();
        let xi0 = 1.0 / c.tau3;
        let xi3 = (c.tau3 - c.tau1).sqrt() / (c.tau3 * c.tau2.sqrt());
        BoundaryCondition::new(SiteOperator::from_diag(&[c.tau3, c.tau3]), SiteOperator::pauli_combination(xi0, sign * xi3)).unwrap()
    }

    fn random_dense(rng: &mut ChaCha8Rng, support: Vec<usize>) -> LocalOperator {
        let size = 1usize << support.len();
        let m = DMatrix::from_fn(size, size, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        LocalOperator::dense(2, support, m).unwrap()
    }

    fn random_diag(rng: &mut ChaCha8Rng, support: Vec<usize>) -> LocalOperator {
        let entries: Vec<f64> = (0..1usize << support.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LocalOperator::diagonal_real(2, support, &entries).unwrap()
    }

    #[test]
    fn level_transfer_shapes() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        let chain = MarkovChain::ising(&p, symmetric(&p)).unwrap();
        let t0 = chain.level_transfer(0).unwrap();
        assert_eq!(t0, cell_operator(&p).unwrap());
        let t1 = chain.level_transfer(1).unwrap();
        assert_eq!(t1.support(), &[1, 2, 3, 4, 5, 6]);
        let a = Interaction::ising(&p).unwrap();
        let swapped = a.cell_at(2, &[5, 6]).unwrap().multiply(&a.cell_at(1, &[3, 4]).unwrap()).unwrap();
        assert!(t1.max_abs_diff(&swapped).unwrap() < 1e-12);

        let free = ModelParams::new(0.0, 1.0, 2).unwrap();
        let chain = MarkovChain::ising(&free, symmetric(&free)).unwrap();
        assert_eq!(chain.level_transfer(1).unwrap(), LocalOperator::identity(2, vec![1, 2, 3, 4, 5, 6]).unwrap());
    }

    #[test]
    fn trivial_state_is_identity() {
        let free = ModelParams::new(0.0, 1.0, 2).unwrap();
        let chain = MarkovChain::ising(&free, symmetric(&free)).unwrap();
        let s = chain.build_state(2, BuildPath::Auto).unwrap();
        assert!(s.density.is_diagonal_repr());
        assert_eq!(s.density, LocalOperator::identity(2, (0..7).collect()).unwrap());
        let r = chain.check_projectivity(2, 1e-12).unwrap();
        assert_eq!(r.deviation, 0.0);
    }

    #[test]
    fn normalized_at_fixed_points() {
        for (j, theta) in [(1.0, 3.0), (2.0, 2.5), (1.0, 4.0)] {
            let p = ModelParams::from_theta(theta, j).unwrap();
            for b in [symmetric(&p), broken(&p, 1.0), broken(&p, -1.0)] {
                let chain = MarkovChain::ising(&p, b).unwrap();
                for n in 0..=3 {
                    let s = chain.build_state(n, BuildPath::Auto).unwrap();
                    assert!((s.normalized_trace().re - 1.0).abs() < 1e-10);
                    assert!(s.density.is_positive(DEFAULT_TOL));
                }
                for n in 1..=3 {
                    assert!(chain.check_projectivity(n, 1e-10).unwrap().pass);
                }
            }
        }
    }

    #[test]
    fn perturbed_boundary_breaks_projectivity() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        for b in [symmetric(&p), broken(&p, 1.0)] {
            let mut diag: Vec<f64> = b.h.diag().iter().map(|z| z.re).collect();
            diag[0] += 0.1;
            let perturbed = BoundaryCondition::new(b.omega0.clone(), SiteOperator::from_diag(&diag)).unwrap();
            let chain = MarkovChain::ising(&p, perturbed).unwrap();
            let r = chain.check_projectivity(2, 1e-10).unwrap();
            assert!(r.deviation > 1e-3, "deviation {}", r.deviation);
            assert!(!r.pass);
        }
    }

    #[test]
    fn dense_and_diagonal_builds_agree() {
        let p = ModelParams::from_theta(2.5, 2.0).unwrap();
        let chain = MarkovChain::ising(&p, broken(&p, 1.0)).unwrap();
        for n in 0..=2 {
            let diag = chain.build_state(n, BuildPath::Diagonal).unwrap();
            let dense = chain.build_state(n, BuildPath::Dense).unwrap();
            assert!(!dense.density.is_diagonal_repr());
            assert!(diag.density.max_abs_diff(&dense.density).unwrap() < 1e-12);
        }
        assert!(matches!(chain.build_state(3, BuildPath::Dense), Err(Error::ResourceCap { .. })));
    }

    #[test]
    fn volume_cap_is_enforced() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        let chain = MarkovChain::ising(&p, symmetric(&p)).unwrap();
        assert!(matches!(chain.build_state(4, BuildPath::Auto), Err(Error::ResourceCap { .. })));
        assert!(Caps::new(26, 7).is_err());
    }

    #[test]
    fn boundary_equation_residuals() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        for b in [symmetric(&p), broken(&p, 1.0), broken(&p, -1.0)] {
            let r = check_boundary_equations(&p, &b, 1e-12).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let free = ModelParams::new(0.0, 1.0, 2).unwrap();
        let id = BoundaryCondition::new(SiteOperator::identity(2), SiteOperator::identity(2)).unwrap();
        let r = check_boundary_equations(&free, &id, 1e-15).unwrap();
        assert_eq!((r.eq1_residual, r.eq2_residual, r.eq2_closed_residual), (0.0, 0.0, Some(0.0)));

        let off = BoundaryCondition::new(SiteOperator::from_diag(&[9.0, 9.0]), SiteOperator::from_diag(&[0.2, 1.0 / 9.0])).unwrap();
        let r = check_boundary_equations(&p, &off, 1e-6).unwrap();
        assert!(!r.pass);
        assert!((r.eq2_residual - r.eq2_closed_residual.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn factorized_cell_traces() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        let b = broken(&p, 1.0);
        let chain = MarkovChain::ising(&p, b.clone()).unwrap();
        let transfer = chain.level_transfer(1).unwrap();
        let mut hs = LocalOperator::scalar(2, C64::new(1.0, 0.0));
        for v in 3..7 {
            hs = hs.tensor(&b.h.at(v)).unwrap();
        }
        let lhs = transfer.multiply(&hs).unwrap().multiply(&transfer.adjoint()).unwrap().partial_trace(&[1, 2]).unwrap();
        let a = &chain.interaction;
        let cell_trace = |x: usize, kids: [usize; 2]| {
            let cell = a.cell_at(x, &kids).unwrap();
            cell.multiply(&b.h.at(kids[0]))
                .unwrap()
                .multiply(&b.h.at(kids[1]))
                .unwrap()
                .multiply(&cell.adjoint())
                .unwrap()
                .partial_trace(&[x])
                .unwrap()
        };
        let rhs = cell_trace(1, [3, 4]).tensor(&cell_trace(2, [5, 6])).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn oracle_matches_construction() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        let b = broken(&p, 1.0);
        let chain = MarkovChain::ising(&p, b.clone()).unwrap();
        let caps = Caps::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 0..=2 {
            let support: Vec<usize> = (0..Volume::new(n, 2).unwrap().len()).filter(|_| rng.gen_bool(0.6)).collect();
            let obs = random_diag(&mut rng, support);
            let direct = chain.expectation(n, &obs).unwrap();
            let exact = expectation_oracle(n, &p, &b, &obs, OracleMode::Exact, &caps).unwrap();
            let summed = expectation_oracle(n, &p, &b, &obs, OracleMode::LeafSummed, &caps).unwrap();
            assert!((direct - exact).norm() < 1e-12, "n={n}: {direct} vs {exact}");
            assert!((exact - summed).norm() < 1e-12);
        }
        let id = LocalOperator::identity(2, vec![0]).unwrap();
        let one = expectation_oracle(3, &p, &b, &id, OracleMode::Auto, &caps).unwrap();
        assert!((one.re - 1.0).abs() < 1e-12);
        assert!(expectation_oracle(3, &p, &b, &id, OracleMode::Exact, &caps).is_err());
    }

    #[test]
    fn oracle_symmetric_root_spin_vanishes() {
        let p = ModelParams::from_theta(4.0, 2.0).unwrap();
        let b = symmetric(&p);
        let v = expectation_oracle(2, &p, &b, &SiteOperator::sigma().at(0), OracleMode::Auto, &Caps::default()).unwrap();
        assert!(v.norm() < 1e-14);
    }

    #[test]
    fn oracle_survives_large_beta() {
        // θᴶ = e^240 and unshifted weights would overflow
        let p = ModelParams::new(40.0, 3.0, 2).unwrap();
        let b = symmetric(&p);
        let id = LocalOperator::identity(2, vec![0]).unwrap();
        let one = expectation_oracle(2, &p, &b, &id, OracleMode::Auto, &Caps::default()).unwrap();
        assert!((one.re - 1.0).abs() < 1e-9, "{one}");
        let leaf = SiteOperator::e11().at(3);
        let half = expectation_oracle(2, &p, &b, &leaf, OracleMode::LeafSummed, &Caps::default()).unwrap();
        assert!((half.re - 0.5).abs() < 1e-9, "{half}");
    }

    #[test]
    fn quasi_conditional_reproduces_state() {
        let p = ModelParams::from_theta(3.0, 1.0).unwrap();
        let chain = MarkovChain::ising(&p, broken(&p, 1.0)).unwrap().with_caps(Caps::new(15, 7).unwrap()).unwrap();
        let qce = chain.quasi_conditional(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let a = random_dense(&mut rng, vec![0, 1, 2]);
            let via_maps = qce.compose(1, &a).unwrap();
            let direct = chain.build_state(2, BuildPath::Dense).unwrap().expectation(&a).unwrap();
            assert!((via_maps - direct).norm() < 1e-12, "{via_maps} vs {direct}");
        }
        let obs = SiteOperator::e11().at(1);
        let oracle = expectation_oracle(1, &p, &chain.boundary, &obs, OracleMode::Exact, &Caps::default()).unwrap();
        assert!((qce.compose(1, &obs).unwrap() - oracle).norm() < 1e-12);
    }

    fn non_diagonal_chain() -> MarkovChain {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let edge = random_dense(&mut rng, vec![0, 1]);
        let sibling = random_dense(&mut rng, vec![0, 1]);
        let interaction = Interaction::new(2, edge, sibling, None).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.2, 0.1), C64::new(0.2, -0.1), C64::new(0.5, 0.0)]);
        let h = SiteOperator::from_matrix(m).unwrap();
        MarkovChain::new(interaction, BoundaryCondition::new(SiteOperator::from_diag(&[0.7, 1.3]), h).unwrap(), Caps::default()).unwrap()
    }

    #[test]
    fn quasi_conditional_module_property() {
        let chain = non_diagonal_chain();
        let qce = chain.quasi_conditional(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_dense(&mut rng, vec![0, 1, 2]);
        let c = random_dense(&mut rng, vec![3, 4]);
        let lhs = qce.apply(1, &c.multiply(&a).unwrap()).unwrap();
        let rhs = c.multiply(&qce.apply(1, &a).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10);

        let qce3 = chain.quasi_conditional(3).unwrap();
        let a2 = random_dense(&mut rng, vec![1, 2]);
        let c2 = random_dense(&mut rng, vec![7]);
        let lhs = qce3.apply(2, &a2.multiply(&c2).unwrap()).unwrap();
        let rhs = qce3.apply(2, &a2).unwrap().multiply(&c2).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10);
    }

    #[test]
    fn quasi_conditional_is_completely_positive() {
        let chain = non_diagonal_chain();
        let qce = chain.quasi_conditional(2).unwrap();
        let unit = qce.apply(1, &LocalOperator::identity(2, vec![0]).unwrap()).unwrap();
        assert!(unit.is_positive(1e-10));
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for stage in 1..=2 {
            let support: Vec<usize> = if stage == 1 { vec![0, 1, 2] } else { vec![1, 2] };
            let size = 1usize << support.len();
            let v = nalgebra::DVector::from_fn(size, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let x = LocalOperator::dense(2, support, &v * v.adjoint()).unwrap();
            assert!(qce.apply(stage, &x).unwrap().is_positive(1e-10));
        }
    }

    #[test]
    fn non_diagonal_projectivity_check_runs() {
        let chain = non_diagonal_chain();
        let s = chain.build_state(2, BuildPath::Auto).unwrap();
        assert!(!s.density.is_diagonal_repr());
        assert!(s.density.is_positive(1e-8));
        assert!(chain.build_state(1, BuildPath::Diagonal).is_err());
    }
}
