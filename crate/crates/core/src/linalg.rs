//! Operators on single sites and on finite vertex sets.
//!
//! Basis convention: on every site index 0 is spin up, the `+1` eigenvector
//! of σ. For an operator on a support `[v₀ < v₁ < …]` the basis index is the
//! mixed-radix number whose most significant digit belongs to `v₀`.
//!
//! All traces are normalized: `tr(𝟙) = 1` on any support.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::pairwise_sum;

pub type C64 = Complex64;

/// Default tolerance for hermiticity and positivity tests.
pub const DEFAULT_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn checked_pow(d: usize, n: usize) -> Result<usize> {
    u32::try_from(n)
        .ok()
        .and_then(|n| d.checked_pow(n))
        .ok_or(Error::ResourceCap { what: "operator dimension", requested: u128::MAX, cap: usize::MAX as u128 })
}

fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// A `d × d` complex matrix acting on one site.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteOperator {
    matrix: DMatrix<C64>,
}

impl SiteOperator {
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::InvalidOperator(format!(
                "site operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidOperator("non-finite entry".into()));
        }
        Ok(SiteOperator { matrix })
    }

    /// Real diagonal operator.
    pub fn from_diag(entries: &[f64]) -> Self {
        let d = entries.len();
        let m = DMatrix::from_fn(d, d, |i, j| if i == j { C64::new(entries[i], 0.0) } else { ZERO });
        SiteOperator { matrix: m }
    }

    pub fn identity(d: usize) -> Self {
        SiteOperator { matrix: DMatrix::identity(d, d) }
    }

    /// σ = diag(1, −1).
    pub fn sigma() -> Self {
        Self::from_diag(&[1.0, -1.0])
    }

    pub fn e11() -> Self {
        Self::from_diag(&[1.0, 0.0])
    }

    pub fn e22() -> Self {
        Self::from_diag(&[0.0, 1.0])
    }

    /// `a𝟙 + bσ` on a qubit.
    pub fn pauli_combination(a: f64, b: f64) -> Self {
        Self::from_diag(&[a + b, a - b])
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    pub fn diag(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        SiteOperator { matrix: &self.matrix * C64::new(c, 0.0) }
    }

    pub fn adjoint(&self) -> Self {
        SiteOperator { matrix: self.matrix.adjoint() }
    }

    pub fn mul(&self, other: &SiteOperator) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(SiteOperator { matrix: &self.matrix * &other.matrix })
    }

    pub fn normalized_trace(&self) -> C64 {
        self.matrix.trace() / C64::new(self.dim() as f64, 0.0)
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.matrix[(i, j)].norm() <= tol))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.matrix - self.matrix.adjoint())) <= tol
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        self.is_hermitian(tol) && min_eigenvalue(&self.matrix) >= -tol
    }

    /// Principal square root of a positive operator.
    pub fn sqrt_psd(&self, tol: f64) -> Result<Self> {
        if !self.is_positive(tol) {
            return Err(Error::NotPositive(format!("{:?}", self.diag())));
        }
        if self.is_diagonal(0.0) {
            let d = self.dim();
            let m = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    C64::new(self.matrix[(i, i)].re.max(0.0).sqrt(), 0.0)
                } else {
                    ZERO
                }
            });
            return Ok(SiteOperator { matrix: m });
        }
        let eig = SymmetricEigen::new(hermitian_part(&self.matrix));
        let roots = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                C64::new(eig.eigenvalues[i].max(0.0).sqrt(), 0.0)
            } else {
                ZERO
            }
        });
        let v = &eig.eigenvectors;
        Ok(SiteOperator { matrix: v * roots * v.adjoint() })
    }

    /// Places the operator at vertex `v`, choosing the diagonal
    /// representation when the matrix is exactly diagonal.
    pub fn at(&self, v: usize) -> LocalOperator {
        let repr = if self.is_diagonal(0.0) {
            Repr::Diagonal(self.diag())
        } else {
            Repr::Dense(self.matrix.clone())
        };
        LocalOperator { dim: self.dim(), support: vec![v], repr }
    }
}

fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let eig = SymmetricEigen::new(hermitian_part(m));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Storage for a [`LocalOperator`].
#[derive(Clone, Debug, PartialEq)]
pub enum Repr {
    Dense(DMatrix<C64>),
    /// Diagonal in the product basis.
    Diagonal(Vec<C64>),
}

/// An operator on a finite, sorted set of vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    dim: usize,
    support: Vec<usize>,
    repr: Repr,
}

/// For every basis index of `full`, the index of the digits that belong to
/// `sub`. Digits of `full` missing from `sub` contribute nothing.
fn projection(dim: usize, full: &[usize], sub: &[usize]) -> Vec<usize> {
    let n_sub = sub.len();
    let mut strides = Vec::with_capacity(full.len());
    for v in full {
        match sub.binary_search(v) {
            Ok(p) => strides.push(dim.pow((n_sub - 1 - p) as u32)),
            Err(_) => strides.push(0),
        }
    }
    let mut out = vec![0usize];
    for &s in &strides {
        let mut next = Vec::with_capacity(out.len() * dim);
        for &base in &out {
            for digit in 0..dim {
                next.push(base + digit * s);
            }
        }
        out = next;
    }
    out
}

/// Offsets into the basis of `full` for every configuration of the sites
/// listed in `part` (a subset of `full`), in `part`'s own basis order.
fn offsets(dim: usize, full: &[usize], part: &[usize]) -> Vec<usize> {
    let n = full.len();
    let mut out = vec![0usize];
    for v in part {
        let p = full.binary_search(v).expect("part must be a subset of full");
        let stride = dim.pow((n - 1 - p) as u32);
        let mut next = Vec::with_capacity(out.len() * dim);
        for &base in &out {
            for digit in 0..dim {
                next.push(base + digit * stride);
            }
        }
        out = next;
    }
    out
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b.iter()).cloned().collect();
    u.sort_unstable();
    u.dedup();
    u
}

fn validate_support(support: &[usize]) -> Result<()> {
    if support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedSupport(support.to_vec()));
    }
    Ok(())
}

impl LocalOperator {
    pub fn dense(dim: usize, support: Vec<usize>, matrix: DMatrix<C64>) -> Result<Self> {
        validate_support(&support)?;
        let size = checked_pow(dim, support.len())?;
        if matrix.nrows() != size || matrix.ncols() != size {
            return Err(Error::DimensionMismatch { expected: size, found: matrix.nrows() });
        }
        Ok(LocalOperator { dim, support, repr: Repr::Dense(matrix) })
    }

    pub fn diagonal(dim: usize, support: Vec<usize>, entries: Vec<C64>) -> Result<Self> {
        validate_support(&support)?;
        let size = checked_pow(dim, support.len())?;
        if entries.len() != size {
            return Err(Error::DimensionMismatch { expected: size, found: entries.len() });
        }
        Ok(LocalOperator { dim, support, repr: Repr::Diagonal(entries) })
    }

    /// Real diagonal operator.
    pub fn diagonal_real(dim: usize, support: Vec<usize>, entries: &[f64]) -> Result<Self> {
        Self::diagonal(dim, support, entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn identity(dim: usize, support: Vec<usize>) -> Result<Self> {
        let size = checked_pow(dim, support.len())?;
        Self::diagonal(dim, support, vec![ONE; size])
    }

    /// `c·𝟙` on the empty support.
    pub fn scalar(dim: usize, c: C64) -> Self {
        LocalOperator { dim, support: Vec::new(), repr: Repr::Diagonal(vec![c]) }
    }

    /// `⊗_{v} op` over the given vertices.
    pub fn product_of_sites(ops: &[(usize, &SiteOperator)]) -> Result<Self> {
        let dim = ops.first().map(|(_, o)| o.dim()).unwrap_or(2);
        let mut acc = LocalOperator::scalar(dim, ONE);
        for (v, op) in ops {
            acc = acc.tensor(&op.at(*v))?;
        }
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn repr(&self) -> &Repr {
        &self.repr
    }

    /// Side length `d^|support|` of the matrix.
    pub fn size(&self) -> usize {
        match &self.repr {
            Repr::Dense(m) => m.nrows(),
            Repr::Diagonal(v) => v.len(),
        }
    }

    pub fn is_diagonal_repr(&self) -> bool {
        matches!(self.repr, Repr::Diagonal(_))
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
        }
    }

    pub fn into_dense(self) -> LocalOperator {
        let m = self.to_dense();
        LocalOperator { dim: self.dim, support: self.support, repr: Repr::Dense(m) }
    }

    /// Diagonal entries regardless of representation.
    pub fn diagonal_entries(&self) -> Vec<C64> {
        match &self.repr {
            Repr::Dense(m) => (0..m.nrows()).map(|i| m[(i, i)]).collect(),
            Repr::Diagonal(v) => v.clone(),
        }
    }

    /// Converts to the diagonal representation if every off-diagonal entry
    /// is within `tol` of zero.
    pub fn try_into_diagonal(self, tol: f64) -> std::result::Result<LocalOperator, LocalOperator> {
        match &self.repr {
            Repr::Diagonal(_) => Ok(self),
            Repr::Dense(m) => {
                let n = m.nrows();
                let off = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)].norm() <= tol));
                if off {
                    let d = self.diagonal_entries();
                    Ok(LocalOperator { dim: self.dim, support: self.support, repr: Repr::Diagonal(d) })
                } else {
                    Err(self)
                }
            }
        }
    }

    /// Same matrix on a different (sorted) support of equal size.
    pub fn relabel(&self, support: Vec<usize>) -> Result<Self> {
        validate_support(&support)?;
        if support.len() != self.support.len() {
            return Err(Error::DimensionMismatch { expected: self.support.len(), found: support.len() });
        }
        Ok(LocalOperator { dim: self.dim, support, repr: self.repr.clone() })
    }

    pub fn scaled(&self, c: C64) -> Self {
        let repr = match &self.repr {
            Repr::Dense(m) => Repr::Dense(m * c),
            Repr::Diagonal(v) => Repr::Diagonal(v.iter().map(|z| z * c).collect()),
        };
        LocalOperator { dim: self.dim, support: self.support.clone(), repr }
    }

    pub fn adjoint(&self) -> Self {
        let repr = match &self.repr {
            Repr::Dense(m) => Repr::Dense(m.adjoint()),
            Repr::Diagonal(v) => Repr::Diagonal(v.iter().map(|z| z.conj()).collect()),
        };
        LocalOperator { dim: self.dim, support: self.support.clone(), repr }
    }

    fn check_dim(&self, other: &LocalOperator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(())
    }

    /// Tensors with the identity on `support \ self.support`.
    pub fn extend_to(&self, support: &[usize]) -> Result<Self> {
        validate_support(support)?;
        if let Some(v) = self.support.iter().find(|v| support.binary_search(v).is_err()) {
            return Err(Error::InvalidOperator(format!("vertex {v} missing from target support")));
        }
        if support == self.support.as_slice() {
            return Ok(self.clone());
        }
        let dim = self.dim;
        let size = checked_pow(dim, support.len())?;
        let proj = projection(dim, support, &self.support);
        let repr = match &self.repr {
            Repr::Diagonal(v) => Repr::Diagonal(proj.iter().map(|&p| v[p]).collect()),
            Repr::Dense(m) => {
                let rest: Vec<usize> = support.iter().filter(|v| self.support.binary_search(v).is_err()).cloned().collect();
                let rest_proj = projection(dim, support, &rest);
                let out = DMatrix::from_fn(size, size, |i, j| {
                    if rest_proj[i] == rest_proj[j] {
                        m[(proj[i], proj[j])]
                    } else {
                        ZERO
                    }
                });
                Repr::Dense(out)
            }
        };
        Ok(LocalOperator { dim, support: support.to_vec(), repr })
    }

    /// `a ⊗ b` for disjoint supports.
    pub fn tensor(&self, other: &LocalOperator) -> Result<Self> {
        self.check_dim(other)?;
        if let Some(v) = self.support.iter().find(|v| other.support.binary_search(v).is_ok()) {
            return Err(Error::OverlappingSupport(*v));
        }
        let union = sorted_union(&self.support, &other.support);
        let dim = self.dim;
        let size = checked_pow(dim, union.len())?;
        let pa = projection(dim, &union, &self.support);
        let pb = projection(dim, &union, &other.support);
        let repr = match (&self.repr, &other.repr) {
            (Repr::Diagonal(a), Repr::Diagonal(b)) => Repr::Diagonal((0..size).map(|i| a[pa[i]] * b[pb[i]]).collect()),
            _ => {
                let a = self.to_dense();
                let b = other.to_dense();
                Repr::Dense(DMatrix::from_fn(size, size, |i, j| a[(pa[i], pa[j])] * b[(pb[i], pb[j])]))
            }
        };
        Ok(LocalOperator { dim, support: union, repr })
    }

    /// Operator product `self · other` on the union of supports. The order
    /// of the factors is kept as given.
    pub fn multiply(&self, other: &LocalOperator) -> Result<Self> {
        self.check_dim(other)?;
        let union = sorted_union(&self.support, &other.support);
        let a = self.extend_to(&union)?;
        let b = other.extend_to(&union)?;
        let repr = match (a.repr, b.repr) {
            (Repr::Diagonal(x), Repr::Diagonal(y)) => Repr::Diagonal(x.iter().zip(&y).map(|(p, q)| p * q).collect()),
            (Repr::Dense(x), Repr::Diagonal(y)) => {
                let mut m = x;
                for (j, s) in y.iter().enumerate() {
                    m.column_mut(j).apply(|z| *z *= *s);
                }
                Repr::Dense(m)
            }
            (Repr::Diagonal(x), Repr::Dense(y)) => {
                let mut m = y;
                for (i, s) in x.iter().enumerate() {
                    m.row_mut(i).apply(|z| *z *= *s);
                }
                Repr::Dense(m)
            }
            (Repr::Dense(x), Repr::Dense(y)) => Repr::Dense(x * y),
        };
        Ok(LocalOperator { dim: self.dim, support: union, repr })
    }

    /// Ordered product `a₁ a₂ ⋯ aₙ`.
    pub fn ordered_product<'a, I>(dim: usize, factors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LocalOperator>,
    {
        let mut acc = LocalOperator::scalar(dim, ONE);
        for f in factors {
            acc = acc.multiply(f)?;
        }
        Ok(acc)
    }

    /// Sum on the union of supports.
    pub fn add(&self, other: &LocalOperator) -> Result<Self> {
        self.check_dim(other)?;
        let union = sorted_union(&self.support, &other.support);
        let a = self.extend_to(&union)?;
        let b = other.extend_to(&union)?;
        let repr = match (a.repr, b.repr) {
            (Repr::Diagonal(x), Repr::Diagonal(y)) => Repr::Diagonal(x.iter().zip(&y).map(|(p, q)| p + q).collect()),
            (x, y) => {
                let dx = match x {
                    Repr::Dense(m) => m,
                    Repr::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&v)),
                };
                let dy = match y {
                    Repr::Dense(m) => m,
                    Repr::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&v)),
                };
                Repr::Dense(dx + dy)
            }
        };
        Ok(LocalOperator { dim: self.dim, support: union, repr })
    }

    /// Matrix trace divided by `d^|support|`.
    pub fn normalized_trace(&self) -> C64 {
        let diag = self.diagonal_entries();
        pairwise_sum(&diag) / C64::new(diag.len() as f64, 0.0)
    }

    /// Normalized partial trace onto `keep`. Sites of `keep` outside the
    /// support carry the identity; `keep = ∅` gives a scalar operator.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        validate_support(keep)?;
        let full = sorted_union(&self.support, keep);
        let a = self.extend_to(&full)?;
        let traced: Vec<usize> = full.iter().filter(|v| keep.binary_search(v).is_err()).cloned().collect();
        if traced.is_empty() {
            return Ok(a);
        }
        let dim = self.dim;
        let keep_off = offsets(dim, &full, keep);
        let trace_off = offsets(dim, &full, &traced);
        let norm = C64::new(trace_off.len() as f64, 0.0);
        let mut buf = vec![ZERO; trace_off.len()];
        let repr = match &a.repr {
            Repr::Diagonal(v) => Repr::Diagonal(
                keep_off
                    .iter()
                    .map(|&base| {
                        for (slot, &r) in buf.iter_mut().zip(&trace_off) {
                            *slot = v[base + r];
                        }
                        pairwise_sum(&buf) / norm
                    })
                    .collect(),
            ),
            Repr::Dense(m) => {
                let n = keep_off.len();
                let mut out = DMatrix::from_element(n, n, ZERO);
                for i in 0..n {
                    for j in 0..n {
                        for (slot, &r) in buf.iter_mut().zip(&trace_off) {
                            *slot = m[(keep_off[i] + r, keep_off[j] + r)];
                        }
                        out[(i, j)] = pairwise_sum(&buf) / norm;
                    }
                }
                Repr::Dense(out)
            }
        };
        Ok(LocalOperator { dim, support: keep.to_vec(), repr })
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        match &self.repr {
            Repr::Diagonal(v) => v.iter().all(|z| z.im.abs() <= tol),
            Repr::Dense(m) => max_abs(&(m - m.adjoint())) <= tol,
        }
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        match &self.repr {
            Repr::Diagonal(v) => v.iter().all(|z| z.im.abs() <= tol && z.re >= -tol),
            Repr::Dense(m) => self.is_hermitian(tol) && min_eigenvalue(m) >= -tol,
        }
    }

    /// Largest entrywise modulus of `self − other` after extending both to
    /// the union of supports.
    pub fn max_abs_diff(&self, other: &LocalOperator) -> Result<f64> {
        let diff = self.add(&other.scaled(-ONE))?;
        Ok(match diff.repr {
            Repr::Diagonal(v) => v.iter().fold(0.0f64, |acc, z| acc.max(z.norm())),
            Repr::Dense(m) => max_abs(&m),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LocalOperatorJson {
    support: Vec<usize>,
    repr: String,
    entries: Vec<[f64; 2]>,
}

fn infer_dim(len: usize, exponent: usize) -> Option<usize> {
    if exponent == 0 {
        return if len == 1 { Some(2) } else { None };
    }
    (2..=len).find(|&d| d.checked_pow(exponent as u32) == Some(len))
}

impl Serialize for LocalOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (repr, entries) = match &self.repr {
            Repr::Diagonal(v) => ("diag", v.iter().map(|z| [z.re, z.im]).collect()),
            Repr::Dense(m) => {
                let n = m.nrows();
                let mut e = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        e.push([m[(i, j)].re, m[(i, j)].im]);
                    }
                }
                ("dense", e)
            }
        };
        LocalOperatorJson { support: self.support.clone(), repr: repr.to_string(), entries }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LocalOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = LocalOperatorJson::deserialize(deserializer)?;
        let values: Vec<C64> = raw.entries.iter().map(|[re, im]| C64::new(*re, *im)).collect();
        let n = raw.support.len();
        match raw.repr.as_str() {
            "diag" => {
                let d = infer_dim(values.len(), n).ok_or_else(|| D::Error::custom("entry count is not d^|support|"))?;
                LocalOperator::diagonal(d, raw.support, values).map_err(D::Error::custom)
            }
            "dense" => {
                let d = infer_dim(values.len(), 2 * n).ok_or_else(|| D::Error::custom("entry count is not d^(2|support|)"))?;
                let size = d.pow(n as u32);
                let m = DMatrix::from_row_slice(size, size, &values);
                LocalOperator::dense(d, raw.support, m).map_err(D::Error::custom)
            }
            other => Err(D::Error::custom(format!("unknown repr {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_dense(rng: &mut ChaCha8Rng, support: Vec<usize>) -> LocalOperator {
        let size = 1usize << support.len();
        let m = DMatrix::from_fn(size, size, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        LocalOperator::dense(2, support, m).unwrap()
    }

    fn random_diag(rng: &mut ChaCha8Rng, support: Vec<usize>) -> LocalOperator {
        let size = 1usize << support.len();
        let v = (0..size).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        LocalOperator::diagonal(2, support, v).unwrap()
    }

    #[test]
    fn tensor_identity_law() {
        let a = LocalOperator::identity(2, vec![1]).unwrap();
        let b = LocalOperator::identity(2, vec![4]).unwrap();
        let t = a.tensor(&b).unwrap();
        assert_eq!(t, LocalOperator::identity(2, vec![1, 4]).unwrap());
    }

    #[test]
    fn tensor_of_sigmas_is_diagonal_signs() {
        let s = SiteOperator::sigma();
        let t = s.at(3).tensor(&s.at(0)).unwrap();
        assert!(t.is_diagonal_repr());
        assert_eq!(t.support(), &[0, 3]);
        assert_eq!(t.diagonal_entries(), vec![c(1.0), c(-1.0), c(-1.0), c(1.0)]);
    }

    #[test]
    fn tensor_of_projectors_has_single_entry() {
        let t = SiteOperator::e11().at(1).tensor(&SiteOperator::e22().at(2)).unwrap();
        // (spin 0 at v1, spin 1 at v2) has index 0b01
        assert_eq!(t.diagonal_entries(), vec![c(0.0), c(1.0), c(0.0), c(0.0)]);
    }

    #[test]
    fn tensor_rejects_overlap() {
        let a = SiteOperator::sigma().at(2);
        assert_eq!(a.tensor(&a), Err(Error::OverlappingSupport(2)));
    }

    #[test]
    fn tensor_reorders_dense_factors() {
        // a at site 5, b at site 1: b carries the most significant digit
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_dense(&mut rng, vec![5]);
        let b = random_dense(&mut rng, vec![1]);
        let t = a.tensor(&b).unwrap();
        let kron = b.to_dense().kronecker(&a.to_dense());
        assert!(max_abs(&(t.to_dense() - kron)) < 1e-15);
    }

    #[test]
    fn multiply_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_dense(&mut rng, vec![0, 2]);
        let id = LocalOperator::identity(2, vec![2]).unwrap();
        assert!(a.multiply(&id).unwrap().max_abs_diff(&a).unwrap() < 1e-15);

        let x = random_diag(&mut rng, vec![1, 3]);
        let y = random_diag(&mut rng, vec![3]);
        let p = x.multiply(&y).unwrap();
        assert!(p.is_diagonal_repr());
        let dense = x.clone().into_dense().multiply(&y.clone().into_dense()).unwrap();
        assert!(p.max_abs_diff(&dense).unwrap() < 1e-15);

        let z = SiteOperator::e11().at(4).multiply(&SiteOperator::e22().at(4)).unwrap();
        assert!(z.diagonal_entries().iter().all(|e| e.norm() == 0.0));
    }

    #[test]
    fn multiply_keeps_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_dense(&mut rng, vec![0]);
        let b = random_dense(&mut rng, vec![0]);
        let ab = a.multiply(&b).unwrap().to_dense();
        assert!(max_abs(&(ab - a.to_dense() * b.to_dense())) < 1e-15);
    }

    #[test]
    fn traces() {
        assert_eq!(LocalOperator::identity(2, vec![0, 1, 2]).unwrap().normalized_trace(), c(1.0));
        assert_eq!(SiteOperator::sigma().at(0).normalized_trace(), c(0.0));
        let h = SiteOperator::from_diag(&[0.3, 0.7]);
        assert!((h.at(0).normalized_trace() - c(0.5)).norm() < 1e-16);
        assert_eq!(h.normalized_trace(), (h.entry(0, 0) + h.entry(1, 1)) / 2.0);
    }

    #[test]
    fn partial_trace_rules() {
        let id = LocalOperator::identity(2, vec![1, 2]).unwrap();
        assert_eq!(id.partial_trace(&[1]).unwrap(), LocalOperator::identity(2, vec![1]).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_dense(&mut rng, vec![0, 4]);
        let b = random_dense(&mut rng, vec![2, 7]);
        let ab = a.tensor(&b).unwrap();
        let reduced = ab.partial_trace(&[0, 4]).unwrap();
        let expect = a.scaled(b.normalized_trace());
        assert!(reduced.max_abs_diff(&expect).unwrap() < 1e-14);

        let scalar = ab.partial_trace(&[]).unwrap();
        assert!(scalar.support().is_empty());
        assert!((scalar.normalized_trace() - ab.normalized_trace()).norm() < 1e-14);
    }

    #[test]
    fn conditional_trace_identity() {
        // tr(AB) = tr(A · tr_Λ(B)) for A on Λ, B on Λ' ⊇ Λ
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = random_dense(&mut rng, vec![1, 3]);
            let b = random_dense(&mut rng, vec![0, 1, 3, 5]);
            let lhs = a.multiply(&b).unwrap().normalized_trace();
            let rhs = a.multiply(&b.partial_trace(&[1, 3]).unwrap()).unwrap().normalized_trace();
            assert!((lhs - rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn positivity() {
        assert!(SiteOperator::e11().is_positive(DEFAULT_TOL));
        assert!(!SiteOperator::sigma().is_positive(DEFAULT_TOL));
        assert!(SiteOperator::pauli_combination(0.5, 0.2).is_positive(DEFAULT_TOL));
        assert!(SiteOperator::e11().at(0).is_positive(DEFAULT_TOL));
        assert!(!SiteOperator::sigma().at(0).is_positive(DEFAULT_TOL));
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(2.0), c(1.0)]);
        assert!(!SiteOperator::from_matrix(m.clone()).unwrap().is_positive(DEFAULT_TOL));
        assert!(!LocalOperator::dense(2, vec![0], m).unwrap().is_positive(DEFAULT_TOL));
        let m = DMatrix::from_row_slice(2, 2, &[c(2.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), c(2.0)]);
        assert!(LocalOperator::dense(2, vec![0], m).unwrap().is_positive(DEFAULT_TOL));
    }

    #[test]
    fn psd_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[c(2.0), C64::new(0.5, 0.5), C64::new(0.5, -0.5), c(1.0)]);
        let a = SiteOperator::from_matrix(m.clone()).unwrap();
        let r = a.sqrt_psd(DEFAULT_TOL).unwrap();
        assert!(max_abs(&(r.matrix() * r.matrix() - m)) < 1e-12);
        assert!(SiteOperator::sigma().sqrt_psd(DEFAULT_TOL).is_err());
        let d = SiteOperator::from_diag(&[4.0, 9.0]).sqrt_psd(DEFAULT_TOL).unwrap();
        assert_eq!(d.diag(), vec![c(2.0), c(3.0)]);
    }

    #[test]
    fn json_layout() {
        let op = SiteOperator::e11().at(3);
        let s = serde_json::to_string(&op).unwrap();
        assert_eq!(s, r#"{"support":[3],"repr":"diag","entries":[[1.0,0.0],[0.0,0.0]]}"#);
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(3.0), c(4.0)]);
        let dense = LocalOperator::dense(2, vec![0], m).unwrap();
        let s = serde_json::to_string(&dense).unwrap();
        assert_eq!(s, r#"{"support":[0],"repr":"dense","entries":[[1.0,0.0],[2.0,0.0],[3.0,0.0],[4.0,0.0]]}"#);
        let back: LocalOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, dense);
        assert!(serde_json::from_str::<LocalOperator>(r#"{"support":[0,1],"repr":"diag","entries":[[1,0]]}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn trace_is_cyclic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_dense(&mut rng, vec![0, 2]);
            let b = random_dense(&mut rng, vec![1, 2]);
            let ab = a.multiply(&b).unwrap().normalized_trace();
            let ba = b.multiply(&a).unwrap().normalized_trace();
            proptest::prop_assert!((ab - ba).norm() < 1e-12);
        }

        #[test]
        fn partial_trace_preserves_trace(seed in 0u64..1000, mask in 0u32..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let support: Vec<usize> = vec![0, 1, 3, 4, 6];
            let a = random_dense(&mut rng, support.clone());
            let keep: Vec<usize> = support.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, v)| *v).collect();
            let pt = a.partial_trace(&keep).unwrap();
            proptest::prop_assert!((pt.normalized_trace() - a.normalized_trace()).norm() < 1e-12);
        }

        #[test]
        fn dense_and_diagonal_paths_agree(seed in 0u64..200, n_a in 1usize..5, n_b in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sa: Vec<usize> = (0..n_a).map(|i| 2 * i).collect();
            let sb: Vec<usize> = (0..n_b).map(|i| 2 * i + 1).collect();
            let a = random_diag(&mut rng, sa.clone());
            let b = random_diag(&mut rng, sb);
            let c2 = random_diag(&mut rng, sa);
            let ad = a.clone().into_dense();
            let bd = b.clone().into_dense();
            let cd = c2.clone().into_dense();
            let t = a.tensor(&b).unwrap();
            let td = ad.tensor(&bd).unwrap();
            proptest::prop_assert!(t.max_abs_diff(&td).unwrap() < 1e-12);
            let p = t.multiply(&c2).unwrap();
            let pd = td.multiply(&cd).unwrap();
            proptest::prop_assert!(p.max_abs_diff(&pd).unwrap() < 1e-12);
            let keep: Vec<usize> = p.support().iter().cloned().filter(|v| v % 3 != 0).collect();
            let r = p.partial_trace(&keep).unwrap();
            let rd = pd.partial_trace(&keep).unwrap();
            proptest::prop_assert!(r.max_abs_diff(&rd).unwrap() < 1e-12);
            proptest::prop_assert!((p.normalized_trace() - pd.normalized_trace()).norm() < 1e-12);
        }
    }
}
