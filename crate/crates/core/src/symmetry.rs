//! The dihedral group D6 acting on snowflake grids.
//!
//! Elements are written `σ^f·ρ^r` with `ρ` the clockwise rotation by 60° and
//! `σ` the reflection across the y-axis; `τ = ρ³σ` reflects across the
//! x-axis. A grid function transforms as `(g·u)_i = u_{g⁻¹·i}`.
//!
//! Eigenvectors are sorted into the eight spaces `V_{p_x p_y d}` using only
//! the four parity projectors `P_{p_x p_y} = (1 + p_x σ + p_y τ + p_x p_y ρ³)/4`;
//! the full irrep projectors are provided for checking.

use std::fmt;
use std::io::Write;
use std::ops::Mul;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::eigensolver::{residual_threshold, EigenPair};
use crate::error::{Error, Result};
use crate::laplacian::{dot, GridFunction, SymmetricOperator};
use crate::lattice::{Grid, LatticeCoord};

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-6;
/// Share of the norm a simple eigenvector must keep under its projection.
pub const MEMBERSHIP_SHARE: f64 = 0.99;
/// Projection norms (relative) closer than this count as a tie.
pub const COINCIDENCE_TOL: f64 = 1e-3;
/// Allowed defect, in norm, of the defining relations of a symmetry space.
pub const RELATION_TOL: f64 = 1e-6;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// `σ^f·ρ^r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    rotation: u8,
    reflected: bool,
}

impl GroupElement {
    pub const IDENTITY: Self = Self { rotation: 0, reflected: false };
    pub const RHO: Self = Self { rotation: 1, reflected: false };
    pub const SIGMA: Self = Self { rotation: 0, reflected: true };
    pub const TAU: Self = Self { rotation: 3, reflected: true };

    pub fn new(rotation: i64, reflected: bool) -> Self {
        Self { rotation: rotation.rem_euclid(6) as u8, reflected }
    }

    pub fn rotation(self) -> u8 {
        self.rotation
    }

    pub fn reflected(self) -> bool {
        self.reflected
    }

    /// Position in [`GroupElement::all`].
    pub fn index(self) -> usize {
        6 * self.reflected as usize + self.rotation as usize
    }

    /// The twelve elements, rotations first.
    pub fn all() -> impl Iterator<Item = Self> {
        (0..12).map(|k| Self::new(k % 6, k >= 6))
    }

    pub fn inverse(self) -> Self {
        if self.reflected {
            self
        } else {
            Self::new(-(self.rotation as i64), false)
        }
    }

    pub fn pow(self, k: u32) -> Self {
        (0..k).fold(Self::IDENTITY, |acc, _| acc * self)
    }

    /// Image of a lattice point.
    pub fn apply(self, p: LatticeCoord) -> LatticeCoord {
        let mut q = p;
        for _ in 0..self.rotation {
            q = q.rotate_cw();
        }
        if self.reflected {
            q = q.reflect_y_axis();
        }
        q
    }
}

impl Mul for GroupElement {
    type Output = Self;

    /// Uses `ρ^r·σ = σ·ρ^{−r}`.
    fn mul(self, rhs: Self) -> Self {
        let r = if rhs.reflected { -(self.rotation as i64) } else { self.rotation as i64 };
        Self::new(r + rhs.rotation as i64, self.reflected ^ rhs.reflected)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.reflected, self.rotation) {
            (false, 0) => write!(f, "1"),
            (true, 0) => write!(f, "σ"),
            (false, r) => write!(f, "ρ^{r}"),
            (true, r) => write!(f, "σρ^{r}"),
        }
    }
}

pub type Matrix2 = [[f64; 2]; 2];

fn mat_mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Every entry of the canonical matrices is one of `0, ±1/2, ±√3/2, ±1`;
/// products are rounded back onto that set so the table is exact.
fn snap(x: f64) -> f64 {
    [0.0, 0.5, SQRT3_2, 1.0]
        .into_iter()
        .map(|v| v.copysign(x))
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
        .unwrap()
}

const ID2: Matrix2 = [[1.0, 0.0], [0.0, 1.0]];

/// Canonical real matrices of the six irreducible representations, indexed
/// `1..=6`. One-dimensional ones occupy the `[0][0]` entry.
#[derive(Debug, Clone)]
pub struct IrrepTable {
    matrices: [[Matrix2; 12]; 6],
}

impl IrrepTable {
    /// Images of `ρ` and `σ`.
    pub fn generators(irrep: usize) -> (Matrix2, Matrix2) {
        let one = |r: f64, s: f64| ([[r, 0.0], [0.0, 0.0]], [[s, 0.0], [0.0, 0.0]]);
        let flip = [[1.0, 0.0], [0.0, -1.0]];
        match irrep {
            1 => one(1.0, 1.0),
            2 => one(1.0, -1.0),
            3 => one(-1.0, 1.0),
            4 => one(-1.0, -1.0),
            5 => ([[-0.5, SQRT3_2], [-SQRT3_2, -0.5]], flip),
            6 => ([[0.5, SQRT3_2], [-SQRT3_2, 0.5]], flip),
            _ => panic!("irrep index {irrep} outside 1..=6"),
        }
    }

    pub fn dim(irrep: usize) -> usize {
        match irrep {
            1..=4 => 1,
            5 | 6 => 2,
            _ => panic!("irrep index {irrep} outside 1..=6"),
        }
    }

    pub fn standard() -> &'static IrrepTable {
        static TABLE: OnceLock<IrrepTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut matrices = [[[[0.0; 2]; 2]; 12]; 6];
            for (i, row) in matrices.iter_mut().enumerate() {
                let (r, s) = Self::generators(i + 1);
                let ident = if Self::dim(i + 1) == 1 { [[1.0, 0.0], [0.0, 0.0]] } else { ID2 };
                for g in GroupElement::all() {
                    let mut m = if g.reflected { s } else { ident };
                    for _ in 0..g.rotation {
                        m = mat_mul(&m, &r);
                    }
                    row[g.index()] = m.map(|r| r.map(snap));
                }
            }
            IrrepTable { matrices }
        })
    }

    pub fn matrix(&self, irrep: usize, g: GroupElement) -> Matrix2 {
        Self::dim(irrep);
        self.matrices[irrep - 1][g.index()]
    }

    pub fn character(&self, irrep: usize, g: GroupElement) -> f64 {
        let m = self.matrix(irrep, g);
        m[0][0] + m[1][1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub const BOTH: [Parity; 2] = [Parity::Even, Parity::Odd];

    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Even => "+",
            Parity::Odd => "-",
        })
    }
}

/// Names the space `V_{p_x p_y d}`: parities under `σ` and `τ`, and the
/// dimension of the irreducible representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymmetryLabel {
    pub px: Parity,
    pub py: Parity,
    pub dim: u8,
}

impl SymmetryLabel {
    pub fn new(px: Parity, py: Parity, dim: u8) -> Self {
        Self { px, py, dim }
    }

    /// Irrep index and, for two-dimensional irreps, the diagonal slot.
    pub fn irrep(self) -> (usize, usize) {
        use Parity::*;
        match (self.px, self.py, self.dim) {
            (Even, Even, 1) => (1, 1),
            (Odd, Odd, 1) => (2, 1),
            (Even, Odd, 1) => (3, 1),
            (Odd, Even, 1) => (4, 1),
            (Even, Even, _) => (5, 1),
            (Odd, Odd, _) => (5, 2),
            (Even, Odd, _) => (6, 1),
            (Odd, Even, _) => (6, 2),
        }
    }
}

impl fmt::Display for SymmetryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.px, self.py, self.dim)
    }
}

impl FromStr for SymmetryLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parity = |c| match c {
            '+' => Ok(Parity::Even),
            '-' => Ok(Parity::Odd),
            _ => Err(Error::InvalidArgument(format!("bad symmetry label {s:?}"))),
        };
        let chars: Vec<char> = s.trim().chars().collect();
        match chars.as_slice() {
            [x, y, d @ ('1' | '2')] => Ok(Self::new(parity(*x)?, parity(*y)?, *d as u8 - b'0')),
            _ => Err(Error::InvalidArgument(format!("bad symmetry label {s:?}"))),
        }
    }
}

/// For each group element `g`, the map `i ↦ g·i` on grid indices.
#[derive(Debug, Clone)]
pub struct GridPermutations {
    perms: Vec<Vec<u32>>,
}

pub fn build_permutations(grid: &Grid) -> Result<GridPermutations> {
    let perms = GroupElement::all()
        .map(|g| {
            grid.points()
                .iter()
                .map(|&p| {
                    grid.index_of(g.apply(p)).map(|j| j as u32).ok_or_else(|| {
                        Error::Internal(format!("{g} maps grid point ({}, {}) off the grid", p.a, p.b))
                    })
                })
                .collect::<Result<Vec<u32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridPermutations { perms })
}

impl GridPermutations {
    pub fn len(&self) -> usize {
        self.perms[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn permutation(&self, g: GroupElement) -> &[u32] {
        &self.perms[g.index()]
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "grid function has {} values, permutations act on {}",
                u.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `out += c·(g·u)`.
    fn accumulate(&self, g: GroupElement, c: f64, u: &[f64], out: &mut [f64]) {
        if c == 0.0 {
            return;
        }
        // (g·u)_{g·i} = u_i
        for (i, &j) in self.permutation(g).iter().enumerate() {
            out[j as usize] += c * u[i];
        }
    }

    pub fn act(&self, g: GroupElement, u: &[f64]) -> Result<GridFunction> {
        self.check(u)?;
        let mut out = vec![0.0; u.len()];
        self.accumulate(g, 1.0, u, &mut out);
        Ok(out.into())
    }

    fn combine(&self, coef: impl Fn(GroupElement) -> f64, u: &[f64]) -> Result<GridFunction> {
        self.check(u)?;
        let mut out = vec![0.0; u.len()];
        for g in GroupElement::all() {
            self.accumulate(g, coef(g), u, &mut out);
        }
        Ok(out.into())
    }

    pub fn project_parity(&self, px: Parity, py: Parity, u: &[f64]) -> Result<GridFunction> {
        let (sx, sy) = (px.sign(), py.sign());
        let half_turn = GroupElement::RHO.pow(3);
        self.combine(
            |g| match g {
                GroupElement::IDENTITY => 0.25,
                GroupElement::SIGMA => 0.25 * sx,
                GroupElement::TAU => 0.25 * sy,
                g if g == half_turn => 0.25 * sx * sy,
                _ => 0.0,
            },
            u,
        )
    }

    /// `P⁽ⁱ⁾ = (d_i/12)·Σ_g χ⁽ⁱ⁾(g)·g`.
    pub fn project_irrep(&self, irrep: usize, u: &[f64]) -> Result<GridFunction> {
        check_irrep(irrep, 1)?;
        let table = IrrepTable::standard();
        let w = IrrepTable::dim(irrep) as f64 / 12.0;
        self.combine(|g| w * table.character(irrep, g), u)
    }

    /// `P⁽ⁱ⁾_j = (d_i/12)·Σ_g [Γ⁽ⁱ⁾(g)]_{jj}·g`.
    pub fn project_irrep_diag(&self, irrep: usize, j: usize, u: &[f64]) -> Result<GridFunction> {
        check_irrep(irrep, j)?;
        let table = IrrepTable::standard();
        let w = IrrepTable::dim(irrep) as f64 / 12.0;
        self.combine(|g| w * table.matrix(irrep, g)[j - 1][j - 1], u)
    }

    /// Norm of the defect in the defining relations of the space named by
    /// `label`, for a unit vector `u`.
    pub fn relation_defect(&self, label: SymmetryLabel, u: &[f64]) -> Result<f64> {
        let rho = GroupElement::RHO;
        let mut worst: f64 = 0.0;
        let mut defect = |g: GroupElement, s: f64| -> Result<()> {
            let gu = self.act(g, u)?;
            worst = worst.max(gu.iter().zip(u).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>().sqrt());
            Ok(())
        };
        defect(GroupElement::SIGMA, label.px.sign())?;
        defect(GroupElement::TAU, label.py.sign())?;
        if label.dim == 1 {
            defect(rho, label.px.sign() * label.py.sign())?;
        } else {
            let (irrep, _) = label.irrep();
            defect(rho.pow(3), if irrep == 5 { 1.0 } else { -1.0 })?;
            let mut sum = u.to_vec();
            self.accumulate(rho.pow(2), 1.0, u, &mut sum);
            self.accumulate(rho.pow(4), 1.0, u, &mut sum);
            worst = worst.max(dot(&sum, &sum).sqrt());
        }
        Ok(worst)
    }
}

fn check_irrep(irrep: usize, j: usize) -> Result<()> {
    if !(1..=6).contains(&irrep) || j == 0 || j > IrrepTable::dim(irrep) {
        return Err(Error::InvalidArgument(format!("no projector for irrep {irrep}, slot {j}")));
    }
    Ok(())
}

/// Makes the first component that is not negligible (above `1e-8` of the
/// largest magnitude) positive.
pub fn normalize_sign(v: &mut [f64]) {
    let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-8 * big) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub pair: EigenPair,
    pub label: SymmetryLabel,
    /// Explicit residual of the canonical vector.
    pub residual: f64,
}

const PARITIES: [(Parity, Parity); 4] = [
    (Parity::Even, Parity::Even),
    (Parity::Even, Parity::Odd),
    (Parity::Odd, Parity::Even),
    (Parity::Odd, Parity::Odd),
];

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

struct Projections {
    vectors: Vec<GridFunction>,
    /// Norms relative to the input norm.
    shares: [f64; 4],
}

impl Projections {
    fn of(perms: &GridPermutations, psi: &[f64]) -> Result<Self> {
        let n = dot(psi, psi).sqrt();
        let vectors = PARITIES
            .iter()
            .map(|&(px, py)| perms.project_parity(px, py, psi))
            .collect::<Result<Vec<_>>>()?;
        let mut shares = [0.0; 4];
        for (s, v) in shares.iter_mut().zip(&vectors) {
            *s = v.norm() / n;
        }
        Ok(Self { vectors, shares })
    }

    /// Index of the largest share and whether the runner-up ties with it.
    fn best(&self) -> (usize, bool) {
        let mut order = [0, 1, 2, 3];
        order.sort_by(|&a, &b| self.shares[b].total_cmp(&self.shares[a]));
        (order[0], self.shares[order[0]] - self.shares[order[1]] <= COINCIDENCE_TOL)
    }
}

/// Sorts eigenpairs into the spaces `V_{p_x p_y d}`, replacing every vector
/// by its canonical representative.
///
/// Consecutive values within relative `degeneracy_tol` form a group. A
/// simple eigenvalue's vector must keep 99% of its norm under one parity
/// projector. For a pair, each vector is replaced by its largest parity
/// projection; when two projections tie, both vectors are projected onto the
/// two parity classes of the dominant two-dimensional irrep instead. The
/// input must not split a degenerate pair at its end.
pub fn classify<A: SymmetricOperator>(
    op: &A,
    perms: &GridPermutations,
    pairs: &[EigenPair],
    degeneracy_tol: f64,
) -> Result<Vec<Classified>> {
    if !(degeneracy_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("degeneracy tolerance must be non-negative, got {degeneracy_tol}")));
    }
    for w in pairs.windows(2) {
        if w[1].value < w[0].value {
            return Err(Error::InvalidArgument("eigenpairs must be sorted ascending".into()));
        }
    }
    let mut out = Vec::with_capacity(pairs.len());
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && close(pairs[end - 1].value, pairs[end].value, degeneracy_tol) {
            end += 1;
        }
        match end - start {
            1 => out.push(classify_simple(op, perms, &pairs[start], start)?),
            2 => out.extend(classify_double(op, perms, &pairs[start..end], start)?),
            size => return Err(Error::AccidentalDegeneracy { value: pairs[start].value, size }),
        }
        start = end;
    }
    Ok(out)
}

/// Classifies the first `count` pairs, using the extra pairs past `count`
/// only to find where the degenerate group containing index `count` ends.
pub fn classify_leading<A: SymmetricOperator>(
    op: &A,
    perms: &GridPermutations,
    pairs: &[EigenPair],
    count: usize,
    degeneracy_tol: f64,
) -> Result<Vec<Classified>> {
    let cut = (count.max(1)..pairs.len())
        .find(|&c| !close(pairs[c - 1].value, pairs[c].value, degeneracy_tol))
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} eigenpairs do not show where the group at index {count} ends; solve for more",
                pairs.len()
            ))
        })?;
    let mut out = classify(op, perms, &pairs[..cut], degeneracy_tol)?;
    out.truncate(count);
    Ok(out)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (b - a).abs() <= tol * a.abs().max(b.abs())
}

fn residual<A: SymmetricOperator>(op: &A, v: &[f64]) -> (f64, f64) {
    let mut av = vec![0.0; v.len()];
    op.apply_into(v, &mut av);
    let lambda = dot(v, &av);
    (lambda, av.iter().zip(v).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt())
}

/// Projection cannot raise the residual by more than the renormalization;
/// anything beyond that (plus rounding) means the vector left its eigenspace.
fn finish<A: SymmetricOperator>(
    op: &A,
    perms: &GridPermutations,
    mut v: Vec<f64>,
    label: SymmetryLabel,
    allowed: f64,
    index: usize,
) -> Result<Classified> {
    normalize_sign(&mut v);
    let defect = perms.relation_defect(label, &v)?;
    if defect > RELATION_TOL {
        let msg = if label.dim == 1 {
            format!("simple eigenvalue's vector is not in V{label} (defect {defect:.2e}); is its partner missing?")
        } else {
            format!("vector does not satisfy the relations of V{label} (defect {defect:.2e})")
        };
        return Err(Error::Classification { index: index + 1, msg });
    }
    let (value, r) = residual(op, &v);
    if r > allowed {
        return Err(Error::Classification {
            index: index + 1,
            msg: format!("canonical vector is no longer an eigenvector (residual {r:.2e} > {allowed:.2e})"),
        });
    }
    Ok(Classified { pair: EigenPair { value, vector: v.into() }, label, residual: r })
}

fn allowed_residual<A: SymmetricOperator>(op: &A, inputs: &[&EigenPair]) -> f64 {
    let worst = inputs.iter().map(|p| residual(op, &p.vector).1).fold(0.0, f64::max);
    4.0 * worst + residual_threshold(f64::MIN_POSITIVE, 0.0, op.upper_bound())
}

fn classify_simple<A: SymmetricOperator>(
    op: &A,
    perms: &GridPermutations,
    pair: &EigenPair,
    index: usize,
) -> Result<Classified> {
    let proj = Projections::of(perms, &pair.vector)?;
    let (best, _) = proj.best();
    if proj.shares[best] < MEMBERSHIP_SHARE {
        return Err(Error::Classification {
            index: index + 1,
            msg: format!("no parity projection keeps 99% of the norm (largest {:.4})", proj.shares[best]),
        });
    }
    let (px, py) = PARITIES[best];
    let allowed = allowed_residual(op, &[pair]);
    finish(op, perms, unit(proj.vectors[best].to_vec()), SymmetryLabel::new(px, py, 1), allowed, index)
}

fn classify_double<A: SymmetricOperator>(
    op: &A,
    perms: &GridPermutations,
    group: &[EigenPair],
    index: usize,
) -> Result<Vec<Classified>> {
    let proj = [Projections::of(perms, &group[0].vector)?, Projections::of(perms, &group[1].vector)?];
    let (b0, tie0) = proj[0].best();
    let (b1, tie1) = proj[1].best();
    // ++/-- belong to Γ⁽⁵⁾, +-/-+ to Γ⁽⁶⁾; indices into PARITIES.
    let complementary = matches!((b0.min(b1), b0.max(b1)), (0, 3) | (1, 2));
    let chosen: [(usize, Vec<f64>); 2] = if complementary && !tie0 && !tie1 {
        [(b0, proj[0].vectors[b0].to_vec()), (b1, proj[1].vectors[b1].to_vec())]
    } else {
        let weight = |a: usize, b: usize| -> f64 {
            proj.iter().map(|p| p.shares[a].powi(2) + p.shares[b].powi(2)).sum()
        };
        let (qa, qb) = if weight(0, 3) >= weight(1, 2) { (0, 3) } else { (1, 2) };
        let pick = |q: usize| -> Vec<f64> {
            let v = if proj[0].shares[q] >= proj[1].shares[q] { 0 } else { 1 };
            proj[v].vectors[q].to_vec()
        };
        [(qa, pick(qa)), (qb, pick(qb))]
    };
    let [(qa, va), (qb, vb)] = chosen;
    let (first, second) = if qa < qb { ((qa, va), (qb, vb)) } else { ((qb, vb), (qa, va)) };
    let a = unit(first.1);
    let mut b = second.1;
    let c = dot(&a, &b);
    b.iter_mut().zip(&a).for_each(|(x, y)| *x -= c * y);
    let b = unit(b);
    let allowed = allowed_residual(op, &[&group[0], &group[1]]);
    let label = |q: usize| SymmetryLabel::new(PARITIES[q].0, PARITIES[q].1, 2);
    Ok(vec![
        finish(op, perms, a, label(first.0), allowed, index)?,
        finish(op, perms, b, label(second.0), allowed, index + 1)?,
    ])
}

/// Table with columns `k lambda d p_x p_y`.
pub fn write_classification<W: Write>(mut dst: W, items: &[Classified]) -> Result<()> {
    writeln!(dst, "k lambda d p_x p_y")?;
    for (k, c) in items.iter().enumerate() {
        writeln!(dst, "{} {:.6} {} {} {}", k + 1, c.pair.value, c.label.dim, c.label.px, c.label.py)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::dense_oracle;
    use crate::laplacian::{BoundaryCondition, GhostScheme, Laplacian};
    use crate::lattice::generate_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn presentation_holds() {
        use GroupElement as G;
        assert_eq!(G::RHO.pow(6), G::IDENTITY);
        assert_eq!(G::SIGMA * G::SIGMA, G::IDENTITY);
        assert_eq!(G::RHO * G::SIGMA, G::SIGMA * G::RHO.pow(5));
        assert_eq!(G::TAU, G::RHO.pow(3) * G::SIGMA);
        assert_eq!(G::SIGMA * G::TAU, G::RHO.pow(3));
        assert_eq!(G::TAU * G::SIGMA, G::RHO.pow(3));
        for g in G::all() {
            assert_eq!(g * g.inverse(), G::IDENTITY);
            for h in G::all() {
                for k in G::all() {
                    assert_eq!((g * h) * k, g * (h * k));
                }
            }
        }
        assert_eq!(G::all().collect::<std::collections::HashSet<_>>().len(), 12);
    }

    #[test]
    fn lattice_action_is_a_left_action() {
        let p = LatticeCoord::new(3, -7);
        for g in GroupElement::all() {
            for h in GroupElement::all() {
                assert_eq!((g * h).apply(p), g.apply(h.apply(p)), "{g} {h}");
            }
        }
        // σ mirrors x, τ mirrors y
        let [x, y] = p.to_cartesian(1.0);
        let [sx, sy] = GroupElement::SIGMA.apply(p).to_cartesian(1.0);
        assert!((sx + x).abs() < 1e-12 && (sy - y).abs() < 1e-12);
        let [tx, ty] = GroupElement::TAU.apply(p).to_cartesian(1.0);
        assert!((tx - x).abs() < 1e-12 && (ty + y).abs() < 1e-12);
    }

    #[test]
    fn irreps_are_orthogonal_homomorphisms() {
        let t = IrrepTable::standard();
        for i in 1..=6 {
            for g in GroupElement::all() {
                let m = t.matrix(i, g);
                if IrrepTable::dim(i) == 2 {
                    let mtm = mat_mul(&[[m[0][0], m[1][0]], [m[0][1], m[1][1]]], &m);
                    assert!(max_diff(&mtm.concat(), &ID2.concat()) < 1e-15);
                } else {
                    assert_eq!(m[0][0].abs(), 1.0);
                }
                for h in GroupElement::all() {
                    let lhs = t.matrix(i, g * h);
                    let rhs = mat_mul(&m, &t.matrix(i, h));
                    assert!(max_diff(&lhs.concat(), &rhs.concat()) < 1e-14, "irrep {i}: {g}·{h}");
                }
            }
        }
        assert_eq!(t.matrix(5, GroupElement::RHO), [[-0.5, 3f64.sqrt() / 2.0], [-(3f64.sqrt()) / 2.0, -0.5]]);
        assert_eq!(t.matrix(6, GroupElement::TAU), [[-1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn character_orthogonality() {
        let t = IrrepTable::standard();
        for i in 1..=6 {
            for j in 1..=6 {
                let s: f64 = GroupElement::all().map(|g| t.character(i, g) * t.character(j, g)).sum();
                let expected = if i == j { 12.0 } else { 0.0 };
                assert!((s - expected).abs() < 1e-12, "{i} {j}: {s}");
            }
        }
    }

    #[test]
    fn permutations_compose() {
        let g = generate_grid(3).unwrap();
        let perms = build_permutations(&g).unwrap();
        let ident: Vec<u32> = (0..g.len() as u32).collect();
        assert_eq!(perms.permutation(GroupElement::IDENTITY), ident.as_slice());
        let rho = perms.permutation(GroupElement::RHO);
        let mut p = ident.clone();
        for _ in 0..6 {
            p = p.iter().map(|&i| rho[i as usize]).collect();
        }
        assert_eq!(p, ident);
        // π_τ = π_{ρ³} ∘ π_σ
        let (r3, s) = (perms.permutation(GroupElement::RHO.pow(3)), perms.permutation(GroupElement::SIGMA));
        let tau: Vec<u32> = s.iter().map(|&i| r3[i as usize]).collect();
        assert_eq!(perms.permutation(GroupElement::TAU), tau.as_slice());

        let u = random(g.len(), 1);
        for a in GroupElement::all() {
            for b in GroupElement::all() {
                let lhs = perms.act(a * b, &u).unwrap();
                let rhs = perms.act(a, &perms.act(b, &u).unwrap()).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
        assert_eq!(perms.act(GroupElement::IDENTITY, &u).unwrap().into_inner(), u);
        assert!(perms.act(GroupElement::RHO, &u[1..]).is_err());
    }

    #[test]
    fn sigma_fixes_the_y_axis() {
        let g = generate_grid(2).unwrap();
        let perms = build_permutations(&g).unwrap();
        let sigma = perms.permutation(GroupElement::SIGMA);
        for (i, xy) in g.cartesian().iter().enumerate() {
            assert_eq!(sigma[i] as usize == i, xy[0].abs() < 1e-12, "point {i}");
        }
        let center = g.index_of(LatticeCoord::new(0, 0)).unwrap();
        let u = random(g.len(), 2);
        for h in GroupElement::all() {
            assert_eq!(perms.act(h, &u).unwrap()[center], u[center]);
        }
    }

    #[test]
    fn parity_projectors_resolve_identity() {
        for level in 2..=4 {
            let g = generate_grid(level).unwrap();
            let perms = build_permutations(&g).unwrap();
            let u = random(g.len(), level as u64);
            let mut sum = vec![0.0; u.len()];
            let projections: Vec<_> =
                PARITIES.iter().map(|&(x, y)| perms.project_parity(x, y, &u).unwrap()).collect();
            for (a, pa) in projections.iter().enumerate() {
                sum.iter_mut().zip(pa.iter()).for_each(|(s, v)| *s += v);
                let (x, y) = PARITIES[a];
                let twice = perms.project_parity(x, y, pa).unwrap();
                assert!(max_diff(&twice, pa) < 1e-12);
                for (b, &(x2, y2)) in PARITIES.iter().enumerate() {
                    if a != b {
                        let cross = perms.project_parity(x2, y2, pa).unwrap();
                        assert!(cross.iter().all(|v| v.abs() < 1e-12));
                    }
                }
            }
            assert!(max_diff(&sum, &u) < 1e-12);
        }
    }

    #[test]
    fn explicit_plus_minus_projector() {
        let g = generate_grid(3).unwrap();
        let perms = build_permutations(&g).unwrap();
        let u = random(g.len(), 5);
        let s = perms.act(GroupElement::SIGMA, &u).unwrap();
        let t = perms.act(GroupElement::TAU, &u).unwrap();
        let r3 = perms.act(GroupElement::RHO.pow(3), &u).unwrap();
        let expected: Vec<f64> = (0..u.len()).map(|i| (u[i] + s[i] - t[i] - r3[i]) / 4.0).collect();
        let got = perms.project_parity(Parity::Even, Parity::Odd, &u).unwrap();
        assert!(max_diff(&got, &expected) < 1e-15);
    }

    #[test]
    fn irrep_projectors_decompose() {
        let g = generate_grid(4).unwrap();
        let perms = build_permutations(&g).unwrap();
        let u = random(g.len(), 9);
        let mut total = vec![0.0; u.len()];
        for i in 1..=6 {
            let p = perms.project_irrep(i, &u).unwrap();
            assert!(max_diff(&perms.project_irrep(i, &p).unwrap(), &p) < 1e-12);
            let mut parts = vec![0.0; u.len()];
            for j in 1..=IrrepTable::dim(i) {
                let pj = perms.project_irrep_diag(i, j, &u).unwrap();
                parts.iter_mut().zip(pj.iter()).for_each(|(s, v)| *s += v);
            }
            assert!(max_diff(&parts, &p) < 1e-12, "irrep {i}");
            total.iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        assert!(max_diff(&total, &u) < 1e-12);
        let p1 = perms.project_irrep(1, &u).unwrap();
        for h in GroupElement::all() {
            assert!(max_diff(&perms.act(h, &p1).unwrap(), &p1) < 1e-12);
        }
        assert!(perms.project_irrep(7, &u).is_err());
        assert!(perms.project_irrep_diag(3, 2, &u).is_err());
    }

    #[test]
    fn projector_traces_count_multiplicities() {
        let g = generate_grid(2).unwrap();
        let perms = build_permutations(&g).unwrap();
        let n = g.len();
        let t = IrrepTable::standard();
        let fixed = |h: GroupElement| perms.permutation(h).iter().enumerate().filter(|(i, &j)| *i == j as usize).count();
        let mut sum = 0.0;
        for i in 1..=6 {
            let mut trace = 0.0;
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                trace += perms.project_irrep(i, &e).unwrap()[k];
            }
            let multiplicity: f64 =
                GroupElement::all().map(|h| t.character(i, h) * fixed(h) as f64).sum::<f64>() / 12.0;
            assert!((trace - IrrepTable::dim(i) as f64 * multiplicity).abs() < 1e-12, "irrep {i}");
            sum += trace;
        }
        assert!((sum - 13.0).abs() < 1e-12);
    }

    #[test]
    fn projectors_commute_with_the_laplacian() {
        let g = generate_grid(3).unwrap();
        let perms = build_permutations(&g).unwrap();
        let u = random(g.len(), 4);
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let l = Laplacian::new(&g, bc, GhostScheme::Reflect);
            for &(x, y) in &PARITIES {
                let a = l.apply(&perms.project_parity(x, y, &u).unwrap()).unwrap();
                let b = perms.project_parity(x, y, &l.apply(&u).unwrap()).unwrap();
                assert!(max_diff(&a, &b) < 1e-9 * l.scale());
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        for s in ["++1", "--1", "+-1", "-+1", "++2", "--2", "+-2", "-+2"] {
            let label: SymmetryLabel = s.parse().unwrap();
            assert_eq!(label.to_string(), s);
        }
        let irreps: Vec<_> =
            ["++1", "--1", "+-1", "-+1", "++2", "--2", "+-2", "-+2"].iter().map(|s| s.parse::<SymmetryLabel>().unwrap().irrep()).collect();
        assert_eq!(irreps, [(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (5, 2), (6, 1), (6, 2)]);
        assert!("+3".parse::<SymmetryLabel>().is_err());
        assert!("x+1".parse::<SymmetryLabel>().is_err());
    }

    fn classified(bc: BoundaryCondition, level: u32, m: usize) -> Vec<Classified> {
        let g = generate_grid(level).unwrap();
        let l = Laplacian::new(&g, bc, GhostScheme::Reflect);
        let perms = build_permutations(&g).unwrap();
        let pairs = dense_oracle(&l, m).unwrap();
        classify(&l, &perms, &pairs, DEFAULT_DEGENERACY_TOL).unwrap()
    }

    #[test]
    fn neumann_ground_state_is_fully_symmetric() {
        let c = classified(BoundaryCondition::Neumann, 3, 6);
        assert_eq!(c[0].label.to_string(), "++1");
        let v = &c[0].pair.vector;
        assert!(v.iter().all(|&x| (x - v[0]).abs() < 1e-10 && x > 0.0));
    }

    #[test]
    fn classified_vectors_satisfy_their_relations() {
        let g = generate_grid(4).unwrap();
        let perms = build_permutations(&g).unwrap();
        let c = classified(BoundaryCondition::Dirichlet, 4, 24);
        for (k, item) in c.iter().enumerate() {
            assert!(perms.relation_defect(item.label, &item.pair.vector).unwrap() < 1e-8, "k={}", k + 1);
            assert!((item.pair.vector.norm() - 1.0).abs() < 1e-12);
        }
        for w in c.windows(2) {
            if w[0].label.dim == 2 && w[1].label.dim == 2 && (w[1].pair.value - w[0].pair.value).abs() < 1e-6 * w[0].pair.value {
                assert_ne!(w[0].label.px, w[1].label.px);
                assert_ne!(w[0].label.py, w[1].label.py);
                assert!(w[0].pair.vector.dot(&w[1].pair.vector).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tied_projections_take_the_fallback() {
        let g = generate_grid(3).unwrap();
        let l = Laplacian::new(&g, BoundaryCondition::Dirichlet, GhostScheme::Reflect);
        let perms = build_permutations(&g).unwrap();
        let c = classified(BoundaryCondition::Dirichlet, 3, 5);
        let (a, b) = (&c[3], &c[4]);
        assert_eq!((a.label.to_string().as_str(), b.label.to_string().as_str()), ("++2", "--2"));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mixed: Vec<EigenPair> = [1.0, -1.0]
            .iter()
            .map(|&sign| EigenPair {
                value: a.pair.value,
                vector: a.pair.vector.iter().zip(b.pair.vector.iter()).map(|(x, y)| s * (x + sign * y)).collect::<Vec<_>>().into(),
            })
            .collect();
        let out = classify(&l, &perms, &mixed, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(out[0].label, a.label);
        assert_eq!(out[1].label, b.label);
        assert!(max_diff(&out[0].pair.vector, &a.pair.vector) < 1e-10);
        assert!(max_diff(&out[1].pair.vector, &b.pair.vector) < 1e-10);
    }

    #[test]
    fn classification_errors() {
        let g = generate_grid(3).unwrap();
        let l = Laplacian::new(&g, BoundaryCondition::Dirichlet, GhostScheme::Reflect);
        let perms = build_permutations(&g).unwrap();
        let pairs = dense_oracle(&l, 3).unwrap();
        // A lone member of a degenerate pair.
        let err = classify(&l, &perms, &pairs[..2], DEFAULT_DEGENERACY_TOL).unwrap_err();
        assert!(matches!(err, Error::Classification { index: 2, .. }), "{err}");
        let triple = vec![pairs[1].clone(), pairs[2].clone(), pairs[2].clone()];
        let err = classify(&l, &perms, &triple, DEFAULT_DEGENERACY_TOL).unwrap_err();
        assert!(matches!(err, Error::AccidentalDegeneracy { size: 3, .. }), "{err}");
        let reversed = vec![pairs[1].clone(), pairs[0].clone()];
        assert!(classify(&l, &perms, &reversed, DEFAULT_DEGENERACY_TOL).is_err());
    }

    #[test]
    fn leading_prefix_keeps_pairs_whole() {
        let g = generate_grid(3).unwrap();
        let l = Laplacian::new(&g, BoundaryCondition::Dirichlet, GhostScheme::Reflect);
        let perms = build_permutations(&g).unwrap();
        let pairs = dense_oracle(&l, 6).unwrap();
        // Index 2 is the first half of the (2, 3) pair.
        let c = classify_leading(&l, &perms, &pairs, 2, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].label.to_string(), "+-2");
        assert!(classify_leading(&l, &perms, &pairs[..3], 2, DEFAULT_DEGENERACY_TOL).is_err());
    }

    #[test]
    fn report_layout() {
        let c = classified(BoundaryCondition::Dirichlet, 3, 3);
        let mut buf = Vec::new();
        write_classification(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k lambda d p_x p_y");
        assert!(lines[1].starts_with("1 ") && lines[1].ends_with(" 1 + +"), "{}", lines[1]);
        assert!(lines[2].ends_with(" 2 + -") && lines[3].ends_with(" 2 - +"), "{text}");
    }
}
