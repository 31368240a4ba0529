//! Matrix-free discrete negative Laplacian with ghost-point boundary closure.
//!
//! The 7-point triangular stencil is `(2/(3h²))·(6u_i − Σ six neighbor values)`.
//! Exterior neighbors are ghosts whose value is synthesized per evaluation:
//!
//! * [`GhostScheme::Reflect`]: the ghost takes `−u_i` (Dirichlet) or `+u_i`
//!   (Neumann) where `i` is the point being updated. The ghost term folds
//!   into the diagonal, giving `12 − k_i` or `k_i`.
//! * [`GhostScheme::Average`]: the ghost takes `∓` the mean of all interior
//!   points adjacent to it, independent of the evaluation point.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lattice::{Grid, GHOST, NEIGHBOR_OFFSETS};

/// Largest grid accepted by [`Laplacian::to_dense`].
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryCondition {
    #[default]
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GhostScheme {
    #[default]
    Reflect,
    Average,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dirichlet => "dirichlet",
            Self::Neumann => "neumann",
        })
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" | "d" => Ok(Self::Dirichlet),
            "neumann" | "n" => Ok(Self::Neumann),
            _ => Err(Error::InvalidArgument(format!("unknown boundary condition {s:?}"))),
        }
    }
}

impl fmt::Display for GhostScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reflect => "reflect",
            Self::Average => "average",
        })
    }
}

impl FromStr for GhostScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reflect" => Ok(Self::Reflect),
            "average" => Ok(Self::Average),
            _ => Err(Error::InvalidArgument(format!("unknown ghost scheme {s:?}"))),
        }
    }
}

/// Values of a function at the grid points, in grid order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.values, other)
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl Deref for GridFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A symmetric linear operator that can be applied without storing a matrix.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;

    /// `y ← A·x`. Both slices have length [`dim`](Self::dim).
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// An upper bound on the largest eigenvalue.
    fn upper_bound(&self) -> f64;
}

/// Sparse ghost coupling used by the averaging scheme, CSR layout.
#[derive(Debug, Clone, Default)]
struct GhostCoupling {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    coeffs: Vec<f64>,
}

/// Discrete negative Laplacian on a grid for one boundary treatment.
#[derive(Debug, Clone)]
pub struct Laplacian<'g> {
    grid: &'g Grid,
    bc: BoundaryCondition,
    scheme: GhostScheme,
    scale: f64,
    diagonal: Vec<f64>,
    ghosts: Option<GhostCoupling>,
}

impl<'g> Laplacian<'g> {
    pub fn new(grid: &'g Grid, bc: BoundaryCondition, scheme: GhostScheme) -> Self {
        let h = grid.h();
        let scale = 2.0 / (3.0 * (h * h));
        let n = grid.len();
        let diagonal = (0..n)
            .map(|i| {
                let k = grid.interior_count(i) as f64;
                match (scheme, bc) {
                    (GhostScheme::Reflect, BoundaryCondition::Dirichlet) => 12.0 - k,
                    (GhostScheme::Reflect, BoundaryCondition::Neumann) => k,
                    (GhostScheme::Average, _) => 6.0,
                }
            })
            .collect();
        let ghosts = (scheme == GhostScheme::Average).then(|| average_coupling(grid, bc));
        Self { grid, bc, scheme, scale, diagonal, ghosts }
    }

    pub fn grid(&self) -> &'g Grid {
        self.grid
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn scheme(&self) -> GhostScheme {
        self.scheme
    }

    /// The stencil prefactor `2/(3h²)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `w = L·u`.
    pub fn apply(&self, u: &[f64]) -> Result<GridFunction> {
        if u.len() != self.grid.len() {
            return Err(Error::InvalidArgument(format!(
                "grid function has length {}, grid has {} points",
                u.len(),
                self.grid.len()
            )));
        }
        let mut w = GridFunction::zeros(u.len());
        self.apply_into(u, &mut w);
        Ok(w)
    }

    /// Assembles the operator column by column.
    pub fn to_dense(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.len();
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
        }
        let mut m = vec![vec![0.0; n]; n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col);
            e[j] = 0.0;
            for (i, &v) in col.iter().enumerate() {
                m[i][j] = v;
            }
        }
        Ok(m)
    }
}

impl SymmetricOperator for Laplacian<'_> {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn apply_into(&self, u: &[f64], w: &mut [f64]) {
        assert_eq!(u.len(), self.grid.len());
        assert_eq!(w.len(), self.grid.len());
        let table = self.grid.neighbor_table();
        for (i, (wi, row)) in w.iter_mut().zip(table).enumerate() {
            let mut acc = self.diagonal[i] * u[i];
            for &j in row {
                if j != GHOST {
                    acc -= u[j as usize];
                }
            }
            *wi = acc;
        }
        if let Some(g) = &self.ghosts {
            for (i, wi) in w.iter_mut().enumerate() {
                let (lo, hi) = (g.offsets[i], g.offsets[i + 1]);
                *wi += g.cols[lo..hi].iter().zip(&g.coeffs[lo..hi]).map(|(&j, &c)| c * u[j as usize]).sum::<f64>();
            }
        }
        for wi in w.iter_mut() {
            *wi *= self.scale;
        }
    }

    /// Gershgorin bound `(2/(3h²))·24`.
    fn upper_bound(&self) -> f64 {
        24.0 * self.scale
    }
}

/// For each point, the contribution `−(ghost value)` from each ghost slot,
/// with the ghost value `∓ mean(interior neighbors of the ghost)`.
fn average_coupling(grid: &Grid, bc: BoundaryCondition) -> GhostCoupling {
    let sign = match bc {
        // ghost = −mean, subtracted in the stencil
        BoundaryCondition::Dirichlet => 1.0,
        BoundaryCondition::Neumann => -1.0,
    };
    let mut offsets = Vec::with_capacity(grid.len() + 1);
    let mut cols = Vec::new();
    let mut coeffs = Vec::new();
    offsets.push(0);
    let mut row: Vec<(u32, f64)> = Vec::new();
    for (i, &p) in grid.points().iter().enumerate() {
        row.clear();
        for (slot, &off) in NEIGHBOR_OFFSETS.iter().enumerate() {
            if grid.neighbor_table()[i][slot] != GHOST {
                continue;
            }
            let ghost = p.offset(off);
            let adj: Vec<usize> = NEIGHBOR_OFFSETS.iter().filter_map(|&o| grid.index_of(ghost.offset(o))).collect();
            let c = sign / adj.len() as f64;
            for j in adj {
                row.push((j as u32, c));
            }
        }
        row.sort_by_key(|&(j, _)| j);
        let mut k = 0;
        while k < row.len() {
            let j = row[k].0;
            let mut c = 0.0;
            while k < row.len() && row[k].0 == j {
                c += row[k].1;
                k += 1;
            }
            cols.push(j);
            coeffs.push(c);
        }
        offsets.push(cols.len());
    }
    GhostCoupling { offsets, cols, coeffs }
}
