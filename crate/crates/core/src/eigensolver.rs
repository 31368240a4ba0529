//! Smallest eigenpairs of a symmetric operator.
//!
//! [`solve`] runs a block thick-restart Lanczos iteration on a polynomial in
//! the operator that maps the low end of the spectrum to the top. The degree-1
//! polynomial is the plain shift `c·I − A` (up to scaling), where `c` is an
//! upper bound on the spectrum. For larger grids a Chebyshev polynomial of
//! higher degree damps `[a, c]` to `[−1, 1]` and grows steeply below `a`,
//! which cuts the number of restarts (and the accumulated rounding they bring)
//! by orders of magnitude. The damping edge `a` is an upper bound on the
//! wanted eigenvalues taken from the Ritz values of a short unfiltered pass.
//!
//! Every new block is orthogonalized against the whole basis twice (classical
//! Gram-Schmidt), and the projected matrix is rebuilt from those projection
//! coefficients rather than from a three-term recurrence. A block of two
//! start vectors lets multiplicity-two eigenvalues emerge without relying on
//! rounding noise. Convergence is judged on explicit residuals of `A`.
//!
//! [`dense_oracle`] is an unrelated path (Householder tridiagonalization and
//! implicit QL) used to cross-check the iterative solver on small grids.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::laplacian::{dot, BoundaryCondition, GhostScheme, GridFunction, Laplacian, SymmetricOperator, DENSE_LIMIT};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_MATVECS: usize = 100_000;
pub const MAX_EIGENPAIRS: usize = 400;

/// Residuals are never required to fall below this many units of rounding
/// in `‖A‖`; beneath it they measure floating-point noise, not convergence.
pub const RESIDUAL_FLOOR_ULPS: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit-norm eigenvector.
    pub vector: GridFunction,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    /// Block expansion steps.
    pub iterations: usize,
    pub restarts: usize,
    pub matvecs: usize,
    /// `‖A·v − λ·v‖` for each returned pair, computed explicitly.
    pub residuals: Vec<f64>,
    pub wall_time: f64,
}

/// Best available pairs when the iteration cap is hit.
#[derive(Debug, Clone)]
pub struct PartialSolve {
    pub pairs: Vec<EigenPair>,
    pub report: SolveReport,
    /// Number of leading pairs that met the tolerance.
    pub converged: usize,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Residual tolerance, relative to `max(1, |λ|)`.
    pub tol: f64,
    pub seed: u64,
    pub max_matvecs: usize,
    pub block_size: usize,
    /// Basis size at which the iteration restarts; `None` uses `max(2m+20, 60)`.
    pub max_basis: Option<usize>,
    /// Fixed degree of the Chebyshev filter; `None` picks the largest degree
    /// whose dynamic range stays safe. `Some(1)` is plain Lanczos on the shift.
    pub filter_degree: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            seed: 0,
            max_matvecs: DEFAULT_MAX_MATVECS,
            block_size: 2,
            max_basis: None,
            filter_degree: None,
        }
    }
}

const MAX_FILTER_DEGREE: usize = 200;
/// Filter rebuilds allowed as the damping edge tightens.
const MAX_STAGES: usize = 8;
/// Upper limit on `log(p(λ₁)/p(λ_m))`; a wider dynamic range would drown
/// the smaller wanted components in rounding of the larger ones.
const FILTER_RANGE: f64 = 18.0;

/// Tolerance actually enforced on the residual of a pair with value `lambda`.
pub fn residual_threshold(tol: f64, lambda: f64, upper_bound: f64) -> f64 {
    (tol * lambda.abs().max(1.0)).max(RESIDUAL_FLOOR_ULPS * f64::EPSILON * upper_bound)
}

/// The `m` algebraically smallest eigenpairs of `op`, sorted ascending.
pub fn solve<A: SymmetricOperator>(op: &A, m: usize, tol: f64, seed: u64) -> Result<(Vec<EigenPair>, SolveReport)> {
    solve_with(op, m, &SolverOptions { tol, seed, ..SolverOptions::default() })
}

pub fn solve_with<A: SymmetricOperator>(op: &A, m: usize, opts: &SolverOptions) -> Result<(Vec<EigenPair>, SolveReport)> {
    let n = op.dim();
    if m == 0 || m > n.min(MAX_EIGENPAIRS) {
        return Err(Error::InvalidArgument(format!("m = {m} must be in 1..={}", n.min(MAX_EIGENPAIRS))));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", opts.tol)));
    }
    if opts.block_size == 0 || opts.filter_degree == Some(0) {
        return Err(Error::InvalidArgument("block size and filter degree must be positive".into()));
    }
    let start = Instant::now();
    let b = opts.block_size;
    let p = opts.max_basis.unwrap_or((2 * m + 20).max(60)).max(m + 3 * b);
    let (pairs, mut report, converged) = if n <= p + 2 * b {
        solve_small(op, m, opts.tol)
    } else {
        filtered_lanczos(op, m, p, opts)
    };
    report.wall_time = start.elapsed().as_secs_f64();
    if converged < m {
        return Err(Error::NoConvergence(Box::new(PartialSolve { pairs, report, converged })));
    }
    Ok((pairs, report))
}

fn filtered_lanczos<A: SymmetricOperator>(op: &A, m: usize, p: usize, opts: &SolverOptions) -> Outcome {
    let c = op.upper_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = SolveReport::default();
    let mut filter = Filter::new(1, 0.0, c);
    let mut start: Option<Vec<f64>> = None;
    let mut stages = 0;
    loop {
        let mut lz = Lanczos::new(op, filter, m, p, opts);
        lz.report = std::mem::take(&mut report);
        let w = start.take().unwrap_or_else(|| lz.random_block(&mut rng));
        let may_refilter = stages < MAX_STAGES && opts.filter_degree != Some(1);
        match lz.run(w, may_refilter, &mut rng) {
            Stage::Done((mut pairs, mut report, _)) => {
                pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
                let mut scratch = vec![0.0; op.dim()];
                report.residuals = pairs.iter().map(|pair| rayleigh(op, &pair.vector, &mut scratch).1).collect();
                report.matvecs += m;
                let converged = converged_prefix(&pairs, &report.residuals, opts.tol, c);
                return (pairs, report, converged);
            }
            Stage::Refilter { edge, lowest, guess, stalled, report: r } => {
                stages += 1;
                report = r;
                start = Some(guess);
                let degree = match (stalled, opts.filter_degree) {
                    (true, _) => (filter.degree / 4).max(1),
                    (false, Some(d)) => d,
                    (false, None) => auto_degree(edge, lowest.min(0.0), c),
                };
                filter = Filter::new(degree, edge, c);
            }
        }
    }
}

/// Largest degree whose dynamic range `p(lowest)/p(edge)` stays within
/// `e^FILTER_RANGE`, capped at `MAX_FILTER_DEGREE`.
fn auto_degree(edge: f64, lowest: f64, c: f64) -> usize {
    let growth = (1.0 + 2.0 * (edge - lowest) / (c - edge)).acosh();
    let allowed = (FILTER_RANGE / growth.max(1e-12)).floor();
    allowed.clamp(1.0, MAX_FILTER_DEGREE as f64) as usize
}

type Outcome = (Vec<EigenPair>, SolveReport, usize);

/// Rayleigh quotient and explicit residual for a unit vector.
fn rayleigh<A: SymmetricOperator>(op: &A, x: &[f64], scratch: &mut [f64]) -> (f64, f64) {
    op.apply_into(x, scratch);
    let lambda = dot(x, scratch);
    let r = scratch.iter().zip(x).map(|(ax, xi)| (ax - lambda * xi).powi(2)).sum::<f64>().sqrt();
    (lambda, r)
}

/// When the Krylov space would cover the whole space, project onto it directly.
fn solve_small<A: SymmetricOperator>(op: &A, m: usize, tol: f64) -> Outcome {
    let n = op.dim();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply_into(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            a[(i, j)] = col[i];
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let eig = symmetric_eigen(&a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut pairs = Vec::with_capacity(m);
    let mut report = SolveReport { matvecs: n, ..SolveReport::default() };
    for &k in order.iter().take(m) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        normalize(&mut v);
        let (lambda, r) = rayleigh(op, &v, &mut col);
        report.residuals.push(r);
        pairs.push(EigenPair { value: lambda, vector: v.into() });
    }
    let converged = converged_prefix(&pairs, &report.residuals, tol, op.upper_bound());
    (pairs, report, converged)
}

fn converged_prefix(pairs: &[EigenPair], residuals: &[f64], tol: f64, upper_bound: f64) -> usize {
    pairs
        .iter()
        .zip(residuals)
        .take_while(|(pair, &r)| r <= residual_threshold(tol, pair.value, upper_bound))
        .count()
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn fast_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `(−1)^d·T_d((A − center)/half_width)`: bounded by one on the damped
/// interval `[a, c]` and increasing as `λ` falls below `a`, so its largest
/// eigenvalues belong to the smallest eigenvalues of `A`.
#[derive(Debug, Clone, Copy)]
struct Filter {
    degree: usize,
    center: f64,
    half_width: f64,
}

impl Filter {
    fn new(degree: usize, a: f64, c: f64) -> Self {
        Self { degree, center: 0.5 * (a + c), half_width: 0.5 * (c - a) }
    }

    /// `out ← filter(A)·x`; `prev` and `tmp` are scratch of length `n`.
    fn apply<A: SymmetricOperator>(&self, op: &A, x: &[f64], out: &mut [f64], prev: &mut [f64], tmp: &mut [f64]) {
        let (z, e) = (self.center, self.half_width);
        op.apply_into(x, tmp);
        for ((o, &ax), &xi) in out.iter_mut().zip(tmp.iter()).zip(x) {
            *o = (ax - z * xi) / e;
        }
        prev.copy_from_slice(x);
        for _ in 1..self.degree {
            op.apply_into(out, tmp);
            for ((o, p), &ax) in out.iter_mut().zip(prev.iter_mut()).zip(tmp.iter()) {
                let next = 2.0 * (ax - z * *o) / e - *p;
                *p = *o;
                *o = next;
            }
        }
        if self.degree % 2 == 1 {
            out.iter_mut().for_each(|o| *o = -*o);
        }
    }
}

/// Row-major `n × stride` basis; column `j` of row `i` is `data[i*stride + j]`.
struct Basis {
    n: usize,
    stride: usize,
    data: Vec<f64>,
}

impl Basis {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.stride + j]).collect()
    }

    fn set_column(&mut self, j: usize, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self.data[i * self.stride + j] = x;
        }
    }

    /// Orthogonalizes the `b` column-vectors in `w` (row-major `n × b`)
    /// against columns `0..ncols`, two classical Gram-Schmidt passes fused
    /// into three sweeps. Returns the coefficients, `b × ncols` row-major.
    fn orthogonalize(&self, ncols: usize, w: &mut [f64], b: usize) -> Vec<f64> {
        let mut h1 = vec![0.0; b * ncols];
        let mut h2 = vec![0.0; b * ncols];
        if ncols == 0 {
            return h1;
        }
        for i in 0..self.n {
            let row = &self.row(i)[..ncols];
            for s in 0..b {
                let ws = w[i * b + s];
                for (h, &v) in h1[s * ncols..(s + 1) * ncols].iter_mut().zip(row) {
                    *h += v * ws;
                }
            }
        }
        for i in 0..self.n {
            let row = &self.row(i)[..ncols];
            for s in 0..b {
                let ws = w[i * b + s] - fast_dot(row, &h1[s * ncols..(s + 1) * ncols]);
                w[i * b + s] = ws;
                for (h, &v) in h2[s * ncols..(s + 1) * ncols].iter_mut().zip(row) {
                    *h += v * ws;
                }
            }
        }
        for i in 0..self.n {
            let row = &self.row(i)[..ncols];
            for s in 0..b {
                w[i * b + s] -= fast_dot(row, &h2[s * ncols..(s + 1) * ncols]);
            }
        }
        h1.iter_mut().zip(&h2).for_each(|(a, b)| *a += b);
        h1
    }

    /// Replaces columns `0..k` by `V·Y` where `Y` is `k × keep`.
    fn rotate(&mut self, k: usize, y: &DMatrix<f64>, keep: usize) {
        let mut tmp = vec![0.0; keep];
        for i in 0..self.n {
            let row = &mut self.data[i * self.stride..(i + 1) * self.stride];
            for (c, t) in tmp.iter_mut().enumerate() {
                *t = (0..k).map(|j| row[j] * y[(j, c)]).sum();
            }
            row[..keep].copy_from_slice(&tmp);
        }
    }

    /// Copies columns `from..from+b` to `to..to+b`.
    fn move_block(&mut self, from: usize, to: usize, b: usize) {
        for i in 0..self.n {
            let row = &mut self.data[i * self.stride..(i + 1) * self.stride];
            row.copy_within(from..from + b, to);
        }
    }
}

struct Lanczos<'a, A: SymmetricOperator> {
    op: &'a A,
    filter: Filter,
    m: usize,
    p: usize,
    b: usize,
    tol: f64,
    max_matvecs: usize,
    basis: Basis,
    /// Projected filter on the settled columns.
    t: DMatrix<f64>,
    /// Coupling `b × k` of the pending residual block to the settled columns.
    coupling: DMatrix<f64>,
    k: usize,
    report: SolveReport,
}

struct Ritz {
    theta: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl<'a, A: SymmetricOperator> Lanczos<'a, A> {
    fn new(op: &'a A, filter: Filter, m: usize, p: usize, opts: &SolverOptions) -> Self {
        let n = op.dim();
        let b = opts.block_size;
        let stride = p + b;
        Self {
            op,
            filter,
            m,
            p,
            b,
            tol: opts.tol,
            max_matvecs: opts.max_matvecs,
            basis: Basis { n, stride, data: vec![0.0; n * stride] },
            t: DMatrix::zeros(stride, stride),
            coupling: DMatrix::zeros(b, 0),
            k: 0,
            report: SolveReport::default(),
        }
    }

    fn random_block(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.basis.n * self.b).map(|_| rng.gen::<f64>() - 0.5).collect()
    }

    /// `w ← filter(A)·V[:, k..k+b]`, row-major `n × b`.
    fn apply_filtered_block(&mut self) -> Vec<f64> {
        let (n, b, k) = (self.basis.n, self.b, self.k);
        let mut w = vec![0.0; n * b];
        let (mut y, mut prev, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for s in 0..b {
            let x = self.basis.column(k + s);
            self.filter.apply(self.op, &x, &mut y, &mut prev, &mut tmp);
            for i in 0..n {
                w[i * b + s] = y[i];
            }
        }
        self.report.matvecs += b * self.filter.degree;
        w
    }

    /// Orthonormalizes the block `w` against columns `0..ncols` and within
    /// itself, stores it at `ncols..ncols+b` and returns the projection
    /// coefficients and the `b × b` triangular factor.
    fn orthonormalize_block(&mut self, ncols: usize, w: &mut [f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, DMatrix<f64>) {
        let (n, b) = (self.basis.n, self.b);
        let mut h = self.basis.orthogonalize(ncols, w, b);
        let mut r = DMatrix::zeros(b, b);
        let mut cols: Vec<Vec<f64>> = (0..b).map(|s| (0..n).map(|i| w[i * b + s]).collect()).collect();
        let scale = cols.iter().map(|c| dot(c, c).sqrt()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for s in 0..b {
            let mut before = dot(&cols[s], &cols[s]).sqrt();
            for repair in 0..3 {
                if repair > 0 {
                    // Heavy cancellation inside the block magnifies what is
                    // left of the basis directions; remove them again.
                    let extra = self.basis.orthogonalize(ncols, &mut cols[s], 1);
                    h[s * ncols..(s + 1) * ncols].iter_mut().zip(&extra).for_each(|(x, y)| *x += y);
                }
                for _pass in 0..2 {
                    for t in 0..s {
                        let c = dot(&cols[t], &cols[s]);
                        r[(t, s)] += c;
                        let (head, tail) = cols.split_at_mut(s);
                        tail[0].iter_mut().zip(&head[t]).for_each(|(x, q)| *x -= c * q);
                    }
                }
                let after = dot(&cols[s], &cols[s]).sqrt();
                if s == 0 || after >= 1e-2 * before || after <= 1e-10 * scale {
                    break;
                }
                before = after;
            }
            let nrm = dot(&cols[s], &cols[s]).sqrt();
            if nrm > 1e-10 * scale && nrm > 0.0 {
                r[(s, s)] = nrm;
                cols[s].iter_mut().for_each(|x| *x /= nrm);
            } else {
                // Invariant subspace reached: continue with a fresh direction.
                r[(s, s)] = 0.0;
                cols[s] = self.fresh_direction(ncols, &cols[..s], rng);
            }
        }
        for (s, c) in cols.iter().enumerate() {
            self.basis.set_column(ncols + s, c);
        }
        (h, r)
    }

    fn fresh_direction(&mut self, ncols: usize, block: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.basis.n;
        loop {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            self.basis.orthogonalize(ncols, &mut v, 1);
            for _ in 0..2 {
                for q in block {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
                }
            }
            if normalize(&mut v) > 1e-8 {
                return v;
            }
        }
    }

    fn start(&mut self, mut w: Vec<f64>, rng: &mut ChaCha8Rng) {
        self.orthonormalize_block(0, &mut w, rng);
    }

    /// Settles the pending block at `k..k+b` and appends the next one.
    fn expand(&mut self, rng: &mut ChaCha8Rng) {
        let (k, b) = (self.k, self.b);
        let mut w = self.apply_filtered_block();
        let (h, r) = self.orthonormalize_block(k + b, &mut w, rng);
        let nc = k + b;
        for s in 0..b {
            for j in 0..nc {
                let v = h[s * nc + j];
                self.t[(j, k + s)] = v;
                self.t[(k + s, j)] = v;
            }
        }
        for s in 0..b {
            for t in 0..s {
                let avg = 0.5 * (self.t[(k + s, k + t)] + self.t[(k + t, k + s)]);
                self.t[(k + s, k + t)] = avg;
                self.t[(k + t, k + s)] = avg;
            }
        }
        self.k = nc;
        let mut c = DMatrix::zeros(b, nc);
        c.view_mut((0, k), (b, b)).copy_from(&r);
        self.coupling = c;
        self.report.iterations += 1;
    }

    /// Ritz pairs of the projected filter, largest first.
    fn ritz(&self) -> Ritz {
        let k = self.k;
        let tk = self.t.view((0, 0), (k, k)).into_owned();
        let eig = symmetric_eigen(&tk);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
        Ritz { theta, vectors }
    }

    /// Keeps the leading Ritz vectors as columns `0..keep` (thick restart)
    /// and returns `keep`.
    fn restart(&mut self, ritz: &Ritz) -> usize {
        let (k, b) = (self.k, self.b);
        let keep = ((self.m + self.p) / 2).min(self.p - 3 * b).max(self.m).min(k);
        self.basis.rotate(k, &ritz.vectors, keep);
        self.basis.move_block(k, keep, b);
        self.t.fill(0.0);
        for i in 0..keep {
            self.t[(i, i)] = ritz.theta[i];
        }
        self.coupling = &self.coupling * ritz.vectors.columns(0, keep);
        self.k = keep;
        self.report.restarts += 1;
        keep
    }

    /// Rayleigh-Ritz for `A` itself on the leading `keep` columns. Returns
    /// all Ritz values ascending, the coefficient matrix, and the leading `m`
    /// pairs with their residuals.
    fn rayleigh_ritz(&mut self, keep: usize) -> (Vec<f64>, DMatrix<f64>, Outcome) {
        let n = self.basis.n;
        let mut az = vec![0.0; n * keep];
        let mut y = vec![0.0; n];
        for j in 0..keep {
            let x = self.basis.column(j);
            self.op.apply_into(&x, &mut y);
            for i in 0..n {
                az[i * keep + j] = y[i];
            }
        }
        self.report.matvecs += keep;
        let mut g = DMatrix::<f64>::zeros(keep, keep);
        for i in 0..n {
            let z = &self.basis.row(i)[..keep];
            let a = &az[i * keep..(i + 1) * keep];
            for (r, &zr) in z.iter().enumerate() {
                for (col, &ac) in a.iter().enumerate() {
                    g[(r, col)] += zr * ac;
                }
            }
        }
        let g = (&g + g.transpose()) * 0.5;
        let eig = symmetric_eigen(&g);
        let mut order: Vec<usize> = (0..keep).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let coef = DMatrix::from_fn(keep, keep, |r, c| eig.eigenvectors[(r, order[c])]);
        let mut pairs = Vec::with_capacity(self.m);
        let mut residuals = Vec::with_capacity(self.m);
        let (mut x, mut ax) = (vec![0.0; n], vec![0.0; n]);
        for c in 0..self.m.min(keep) {
            let yc: Vec<f64> = coef.column(c).iter().copied().collect();
            for i in 0..n {
                x[i] = fast_dot(&self.basis.row(i)[..keep], &yc);
                ax[i] = fast_dot(&az[i * keep..(i + 1) * keep], &yc);
            }
            let nrm = dot(&x, &x).sqrt();
            let lambda = dot(&x, &ax) / (nrm * nrm);
            let r = x.iter().zip(&ax).map(|(xi, ai)| (ai - lambda * xi).powi(2)).sum::<f64>().sqrt() / nrm;
            pairs.push(EigenPair { value: lambda, vector: x.iter().map(|v| v / nrm).collect::<Vec<f64>>().into() });
            residuals.push(r);
        }
        let converged = converged_prefix(&pairs, &residuals, self.tol, self.op.upper_bound());
        let mut report = self.report.clone();
        report.residuals = residuals;
        (values, coef, (pairs, report, converged))
    }

    /// `b` random combinations of the Ritz vectors `coef[:, 0..count]`.
    fn guess(&self, coef: &DMatrix<f64>, count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (n, b, keep) = (self.basis.n, self.b, coef.nrows());
        let weights = DMatrix::from_fn(count, b, |_, _| rng.gen::<f64>() - 0.5);
        let mix = coef.columns(0, count) * weights;
        let mut w = vec![0.0; n * b];
        for i in 0..n {
            let row = &self.basis.row(i)[..keep];
            for s in 0..b {
                w[i * b + s] = row.iter().enumerate().map(|(j, v)| v * mix[(j, s)]).sum();
            }
        }
        w
    }

    fn run(mut self, w: Vec<f64>, may_refilter: bool, rng: &mut ChaCha8Rng) -> Stage {
        self.start(w, rng);
        let margin = (self.m / 4).max(4);
        let edge = match self.filter.degree {
            1 => f64::INFINITY,
            _ => self.filter.center - self.filter.half_width,
        };
        // Worst unconverged residual relative to its threshold, and the
        // number of restarts since it last halved.
        let (mut best, mut idle) = (f64::INFINITY, 0);
        loop {
            self.expand(rng);
            let capped = self.report.matvecs + self.b * self.filter.degree > self.max_matvecs;
            if self.k + 2 * self.b <= self.p && !capped {
                continue;
            }
            let ritz = self.ritz();
            let keep = self.restart(&ritz);
            let (values, coef, outcome) = self.rayleigh_ritz(keep);
            if outcome.2 == self.m || capped {
                return Stage::Done(outcome);
            }
            // The j-th Ritz value bounds λ_j from above, so past this point
            // the filter damps nothing that is wanted.
            let bound = values[(self.m + margin).min(keep) - 1];
            if may_refilter && bound < edge / 1.5 && bound > values[self.m - 1] {
                let guess = self.guess(&coef, (self.m + margin).min(keep), rng);
                return Stage::Refilter { edge: bound, lowest: values[0], guess, stalled: false, report: self.report };
            }
            let c = self.op.upper_bound();
            let (pairs, res, done) = (&outcome.0, &outcome.1.residuals, outcome.2);
            let worst = (done..self.m).map(|j| res[j] / residual_threshold(self.tol, pairs[j].value, c)).fold(0.0, f64::max);
            if worst < 0.5 * best {
                (best, idle) = (worst, 0);
            } else {
                idle += 1;
            }
            // A steep filter resolves the top of the wanted range only to
            // roughly eps times its dynamic range; once restarts stop
            // helping, continue from here with a flatter one.
            if may_refilter && idle >= 2 && self.filter.degree > 1 {
                let guess = self.guess(&coef, (self.m + margin).min(keep), rng);
                let edge = self.filter.center - self.filter.half_width;
                return Stage::Refilter { edge, lowest: values[0], guess, stalled: true, report: self.report };
            }
        }
    }
}

enum Stage {
    Done(Outcome),
    /// Restart with a new filter; `stalled` asks for a lower degree on the
    /// same interval instead of a new interval.
    Refilter { edge: f64, lowest: f64, guess: Vec<f64>, stalled: bool, report: SolveReport },
}

/// All eigenpairs of the assembled operator by a dense method; the `m`
/// smallest are returned in ascending order.
pub fn dense_oracle(op: &Laplacian<'_>, m: usize) -> Result<Vec<EigenPair>> {
    let a = op.to_dense()?;
    let n = a.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("m = {m} must be in 1..={n}")));
    }
    let (values, vectors) = dense_symmetric_eigen(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    Ok(order
        .into_iter()
        .take(m)
        .map(|k| {
            let mut v: Vec<f64> = (0..n).map(|i| vectors[i][k]).collect();
            normalize(&mut v);
            EigenPair { value: values[k], vector: v.into() }
        })
        .collect())
}

struct Eigen {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

/// Eigen-decomposition of a small symmetric matrix. nalgebra's own routine
/// skips the rotation of a nearly degenerate 2×2 block and leaves residuals
/// near `1e-9·‖A‖`, too coarse for the convergence test.
fn symmetric_eigen(a: &DMatrix<f64>) -> Eigen {
    let n = a.nrows();
    let rows = (0..n).map(|i| a.row(i).iter().copied().collect()).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut z: Vec<Vec<f64>> = rows;
    tridiagonalize(&mut z, &mut d, &mut e);
    implicit_ql(&mut d, &mut e, &mut z);
    Eigen { eigenvalues: d, eigenvectors: DMatrix::from_fn(n, n, |r, c| z[r][c]) }
}

/// Householder reduction to tridiagonal form followed by the implicit QL
/// iteration. Returns eigenvalues and the eigenvector matrix (columns).
pub fn dense_symmetric_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    if n > DENSE_LIMIT {
        panic!("dense eigensolve limited to N <= {DENSE_LIMIT}");
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut a, &mut d, &mut e);
    implicit_ql(&mut d, &mut e, &mut a);
    (d, a)
}

fn tridiagonalize(z: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    if n == 0 {
        return;
    }
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| z[i][k].abs()).sum();
            if scale == 0.0 {
                e[i] = z[i][l];
            } else {
                for k in 0..=l {
                    z[i][k] /= scale;
                    h += z[i][k] * z[i][k];
                }
                let f = z[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[i][l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    z[j][i] = z[i][j] / h;
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += z[j][k] * z[i][k];
                    }
                    for k in j + 1..=l {
                        g += z[k][j] * z[i][k];
                    }
                    e[j] = g / h;
                    f += e[j] * z[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = z[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        z[j][k] -= f * e[k] + g * z[i][k];
                    }
                }
            }
        } else {
            e[i] = z[i][l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let g: f64 = (0..i).map(|k| z[i][k] * z[k][j]).sum();
                for k in 0..i {
                    z[k][j] -= g * z[k][i];
                }
            }
        }
        d[i] = z[i][i];
        z[i][i] = 1.0;
        for j in 0..i {
            z[j][i] = 0.0;
            z[i][j] = 0.0;
        }
    }
}

fn implicit_ql(d: &mut [f64], e: &mut [f64], z: &mut [Vec<f64>]) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    if n > 0 {
        e[n - 1] = 0.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut mm = l;
            while mm + 1 < n {
                let dd = d[mm].abs() + d[mm + 1].abs();
                if e[mm].abs() <= f64::EPSILON * dd {
                    break;
                }
                mm += 1;
            }
            if mm == l {
                break;
            }
            iter += 1;
            assert!(iter < 60, "implicit QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[mm] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = mm;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[mm] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[mm] = 0.0;
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Writes eigenpairs: header `level N bc scheme m`, then per pair a line
/// `k lambda` followed by N component lines.
pub fn write_eigenpairs<W: Write>(
    mut dst: W,
    level: u32,
    bc: BoundaryCondition,
    scheme: GhostScheme,
    pairs: &[EigenPair],
) -> Result<()> {
    let n = pairs.first().map_or(0, |p| p.vector.len());
    writeln!(dst, "{level} {n} {bc} {scheme} {}", pairs.len())?;
    for (k, pair) in pairs.iter().enumerate() {
        writeln!(dst, "{} {}", k + 1, fmt_f64(pair.value))?;
        for &v in pair.vector.iter() {
            writeln!(dst, "{}", fmt_f64(v))?;
        }
    }
    dst.flush()?;
    Ok(())
}

/// Contents of an eigenpair file.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenpairFile {
    pub level: u32,
    pub bc: BoundaryCondition,
    pub scheme: GhostScheme,
    pub pairs: Vec<EigenPair>,
}

pub fn read_eigenpairs<R: BufRead>(src: R) -> Result<EigenpairFile> {
    let mut lines = src.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let perr = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
    let (ln, header) = lines.next().ok_or_else(|| perr(0, "missing header".into()))?;
    let header = header?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 5 {
        return Err(perr(ln, format!("expected 'level N bc scheme m', got {header:?}")));
    }
    let level: u32 = f[0].parse().map_err(|e| perr(ln, format!("bad level: {e}")))?;
    let n: usize = f[1].parse().map_err(|e| perr(ln, format!("bad N: {e}")))?;
    let bc: BoundaryCondition = f[2].parse().map_err(|e: Error| perr(ln, e.to_string()))?;
    let scheme: GhostScheme = f[3].parse().map_err(|e: Error| perr(ln, e.to_string()))?;
    let m: usize = f[4].parse().map_err(|e| perr(ln, format!("bad m: {e}")))?;
    let mut pairs = Vec::with_capacity(m);
    for k in 1..=m {
        let (ln, line) = lines.next().ok_or_else(|| perr(ln, format!("missing block {k}")))?;
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 || f[0].parse::<usize>().ok() != Some(k) {
            return Err(perr(ln, format!("expected '{k} lambda', got {line:?}")));
        }
        let value: f64 = f[1].parse().map_err(|e| perr(ln, format!("bad eigenvalue: {e}")))?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = lines.next().ok_or_else(|| perr(ln, format!("block {k} truncated")))?;
            let line = line?;
            v.push(line.trim().parse::<f64>().map_err(|e| perr(ln, format!("bad component: {e}")))?);
        }
        pairs.push(EigenPair { value, vector: v.into() });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(perr(ln, "trailing data after last block".into()));
    }
    Ok(EigenpairFile { level, bc, scheme, pairs })
}
