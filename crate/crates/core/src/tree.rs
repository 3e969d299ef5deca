//! Vertex addressing on the semi-infinite Cayley tree of order `k`.
//!
//! A vertex is the path of branch indices from the root, each in `1..=k`;
//! the root is the empty path. Levels are ordered lexicographically, so the
//! children of a fixed vertex form a contiguous block of the next level.
//!
//! Within a volume `Λₙ` vertices are numbered densely: root = 0, then level
//! by level in forward order. The number of a vertex does not depend on `n`,
//! and it doubles as the digit position in basis-state enumeration.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest level size `level_set` builds without an explicit cap.
pub const DEFAULT_LEVEL_CAP: usize = 1 << 25;

/// A vertex of the rooted tree, stored as its branch path.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreeCoord(Vec<usize>);

impl TreeCoord {
    pub fn root() -> Self {
        TreeCoord(Vec::new())
    }

    /// Validated constructor: every entry must lie in `1..=k`.
    pub fn new(path: Vec<usize>, k: usize) -> Result<Self> {
        if k < 1 || path.iter().any(|&i| i < 1 || i > k) {
            return Err(Error::InvalidCoordinate { path, k });
        }
        Ok(TreeCoord(path))
    }

    pub fn path(&self) -> &[usize] {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// `(x, i)`.
    pub fn child(&self, i: usize) -> TreeCoord {
        let mut p = self.0.clone();
        p.push(i);
        TreeCoord(p)
    }

    pub fn parent(&self) -> Option<TreeCoord> {
        if self.0.is_empty() {
            None
        } else {
            Some(TreeCoord(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn is_prefix_of(&self, other: &TreeCoord) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// Semigroup product `g ∘ x`: path concatenation, root is the unit.
    pub fn compose(&self, x: &TreeCoord) -> TreeCoord {
        let mut p = Vec::with_capacity(self.0.len() + x.0.len());
        p.extend_from_slice(&self.0);
        p.extend_from_slice(&x.0);
        TreeCoord(p)
    }
}

/// Direct successors `((x,1), …, (x,k))` in forward order.
pub fn successors(x: &TreeCoord, k: usize) -> Vec<TreeCoord> {
    (1..=k).map(|i| x.child(i)).collect()
}

/// Translation `τ_g(x) = g ∘ x`.
pub fn translate(g: &TreeCoord, x: &TreeCoord) -> TreeCoord {
    g.compose(x)
}

/// `kⁿ`, or `None` on overflow.
pub fn level_size(n: usize, k: usize) -> Option<usize> {
    k.checked_pow(u32::try_from(n).ok()?)
}

/// `|Λₙ| = 1 + k + … + kⁿ`, or `None` on overflow.
pub fn volume_size(n: usize, k: usize) -> Option<usize> {
    let mut total = 0usize;
    for m in 0..=n {
        total = total.checked_add(level_size(m, k)?)?;
    }
    Some(total)
}

/// The level `Wₙ` in forward order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSet {
    pub n: usize,
    pub k: usize,
    pub vertices: Vec<TreeCoord>,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Builds `Wₙ` in lexicographic order, refusing levels larger than `cap`.
pub fn level_set(n: usize, k: usize, cap: usize) -> Result<LevelSet> {
    if k < 2 {
        return Err(Error::InvalidParams(format!("tree order must be >= 2, got {k}")));
    }
    let size = level_size(n, k).ok_or(Error::ResourceCap {
        what: "level set",
        requested: u128::MAX,
        cap: cap as u128,
    })?;
    if size > cap {
        return Err(Error::ResourceCap { what: "level set", requested: size as u128, cap: cap as u128 });
    }
    let mut vertices = Vec::with_capacity(size);
    let mut path = vec![1usize; n];
    for _ in 0..size {
        vertices.push(TreeCoord(path.clone()));
        // odometer increment, last index fastest
        for pos in (0..n).rev() {
            if path[pos] < k {
                path[pos] += 1;
                break;
            }
            path[pos] = 1;
        }
    }
    Ok(LevelSet { n, k, vertices })
}

/// The finite volume `Λₙ = W₀ ∪ … ∪ Wₙ` with dense vertex numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volume {
    pub n: usize,
    pub k: usize,
}

impl Volume {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParams(format!("tree order must be >= 2, got {k}")));
        }
        volume_size(n, k).ok_or(Error::ResourceCap {
            what: "volume",
            requested: u128::MAX,
            cap: usize::MAX as u128,
        })?;
        Ok(Volume { n, k })
    }

    /// Number of vertices `|Λₙ|`.
    pub fn len(&self) -> usize {
        volume_size(self.n, self.k).expect("checked in Volume::new")
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dense index of the first vertex of level `m`.
    pub fn level_offset(&self, m: usize) -> usize {
        if m == 0 {
            0
        } else {
            volume_size(m - 1, self.k).expect("level within volume")
        }
    }

    /// Dense indices of level `m`.
    pub fn level_range(&self, m: usize) -> Range<usize> {
        let start = self.level_offset(m);
        start..start + level_size(m, self.k).expect("level within volume")
    }

    /// Dense indices of `Λ_{[lo,hi]}`.
    pub fn band_range(&self, lo: usize, hi: usize) -> Range<usize> {
        self.level_offset(lo)..self.level_range(hi).end
    }

    pub fn level_of(&self, idx: usize) -> usize {
        let mut m = 0;
        while self.level_range(m).end <= idx {
            m += 1;
        }
        m
    }

    pub fn contains_index(&self, idx: usize) -> bool {
        idx < self.len()
    }

    pub fn index_of(&self, x: &TreeCoord) -> Option<usize> {
        let m = x.level();
        if m > self.n || x.path().iter().any(|&i| i < 1 || i > self.k) {
            return None;
        }
        let rank = x.path().iter().fold(0usize, |acc, &i| acc * self.k + (i - 1));
        Some(self.level_offset(m) + rank)
    }

    pub fn coord_of(&self, idx: usize) -> Option<TreeCoord> {
        if idx >= self.len() {
            return None;
        }
        let m = self.level_of(idx);
        let mut rank = idx - self.level_offset(m);
        let mut path = vec![0usize; m];
        for pos in (0..m).rev() {
            path[pos] = rank % self.k + 1;
            rank /= self.k;
        }
        Some(TreeCoord(path))
    }

    /// Dense indices of `S(x)` for the vertex with index `idx`. The children
    /// may lie outside this volume.
    pub fn children_of(&self, idx: usize) -> Range<usize> {
        let start = idx * self.k + 1;
        start..start + self.k
    }

    pub fn parent_of(&self, idx: usize) -> Option<usize> {
        if idx == 0 {
            None
        } else {
            Some((idx - 1) / self.k)
        }
    }

    /// All vertices in dense order.
    pub fn vertices(&self) -> Vec<TreeCoord> {
        (0..self.len()).map(|i| self.coord_of(i).expect("in range")).collect()
    }
}
