//! Dense block-diagonal semidefinite programs.
//!
//! Primal: maximize `<C, X>` subject to `A(X) = b` and `X_k ⪰ 0` per block.
//! Dual: minimize `b^T y` subject to `A*(y) - C ⪰ 0`.
//!
//! A block may carry a [`PsdShift`], in which case the semidefinite
//! condition applies to `offset ± X_k` instead of `X_k`. Internally the
//! solver works in the shifted variable `W_k = offset + sigma X_k`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the distance to the cone boundary taken per step.
const STEP_FRACTION: f64 = 0.9;
/// Iterations without a better merit before giving up.
const STALL_LIMIT: usize = 6;

/// `(block, row, col, coefficient)`: contributes `coefficient * X[row][col]`.
/// Matrices are symmetric, so `(r, c)` and `(c, r)` mean the same entry.
pub type Term = (usize, usize, usize, f64);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub terms: Vec<Term>,
}

impl LinearFunctional {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: Vec<Term>) -> Self {
        LinearFunctional { terms }
    }

    pub fn add(&mut self, block: usize, row: usize, col: usize, coef: f64) {
        self.terms.push((block, row, col, coef));
    }

    pub fn eval(&self, blocks: &[DMatrix<f64>]) -> f64 {
        self.terms.iter().map(|&(b, i, j, c)| c * blocks[b][(i, j)]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqConstraint {
    pub functional: LinearFunctional,
    pub rhs: f64,
}

/// The block must satisfy `offset - X ⪰ 0` when `negate` is set and
/// `offset + X ⪰ 0` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdShift {
    pub offset: DMatrix<f64>,
    pub negate: bool,
}

impl PsdShift {
    /// `X ⪯ c`.
    pub fn upper(c: DMatrix<f64>) -> Self {
        PsdShift {
            offset: c,
            negate: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub objective: LinearFunctional,
    pub constraints: Vec<EqConstraint>,
    /// Empty, or one entry per block.
    #[serde(default)]
    pub psd_shifts: Vec<Option<PsdShift>>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<usize>) -> Self {
        SdpProblem {
            blocks,
            ..Default::default()
        }
    }

    pub fn add_block(&mut self, dim: usize) -> usize {
        self.blocks.push(dim);
        if !self.psd_shifts.is_empty() {
            self.psd_shifts.push(None);
        }
        self.blocks.len() - 1
    }

    pub fn set_shift(&mut self, block: usize, shift: PsdShift) {
        if self.psd_shifts.is_empty() {
            self.psd_shifts = vec![None; self.blocks.len()];
        }
        self.psd_shifts[block] = Some(shift);
    }

    pub fn add_constraint(&mut self, terms: Vec<Term>, rhs: f64) -> usize {
        self.constraints.push(EqConstraint {
            functional: LinearFunctional::from_terms(terms),
            rhs,
        });
        self.constraints.len() - 1
    }

    fn shift(&self, block: usize) -> Option<&PsdShift> {
        self.psd_shifts.get(block).and_then(|s| s.as_ref())
    }

    fn sigma(&self, block: usize) -> f64 {
        match self.shift(block) {
            Some(s) if s.negate => -1.0,
            _ => 1.0,
        }
    }

    /// Checks indices, finiteness and shift shapes.
    pub fn check(&self) -> Result<(), SolveError> {
        if self.blocks.iter().any(|&d| d == 0) {
            return Err(SolveError::Malformed("zero-sized block".into()));
        }
        if !self.psd_shifts.is_empty() && self.psd_shifts.len() != self.blocks.len() {
            return Err(SolveError::Malformed("psd_shifts length differs from blocks".into()));
        }
        for (b, s) in self.psd_shifts.iter().enumerate() {
            if let Some(s) = s {
                let n = self.blocks[b];
                if s.offset.nrows() != n || s.offset.ncols() != n {
                    return Err(SolveError::Malformed(format!("shift of block {b} has wrong shape")));
                }
                if (&s.offset - s.offset.transpose()).amax() > 1e-12 {
                    return Err(SolveError::Malformed(format!("shift of block {b} not symmetric")));
                }
            }
        }
        let check_terms = |f: &LinearFunctional, what: &str| -> Result<(), SolveError> {
            for &(b, i, j, c) in &f.terms {
                if b >= self.blocks.len() || i >= self.blocks[b] || j >= self.blocks[b] {
                    return Err(SolveError::Malformed(format!(
                        "{what} references ({b},{i},{j}) outside the blocks"
                    )));
                }
                if !c.is_finite() {
                    return Err(SolveError::Malformed(format!("{what} has non-finite coefficient")));
                }
            }
            Ok(())
        };
        check_terms(&self.objective, "objective")?;
        for (k, con) in self.constraints.iter().enumerate() {
            check_terms(&con.functional, &format!("constraint {k}"))?;
            if !con.rhs.is_finite() {
                return Err(SolveError::Malformed(format!("constraint {k} has non-finite rhs")));
            }
        }
        Ok(())
    }

    /// Objective value of a primal point.
    pub fn primal_objective(&self, x: &[DMatrix<f64>]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest equality violation of a primal point.
    pub fn max_residual(&self, x: &[DMatrix<f64>]) -> f64 {
        self.constraints
            .iter()
            .map(|c| (c.functional.eval(x) - c.rhs).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `|p - d| / (1 + |p| + |d|)`.
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub primal_blocks: Vec<DMatrix<f64>>,
    /// One per constraint. Constraints found to be linearly dependent on
    /// earlier ones are not used by the solver and get multiplier 0.
    pub dual_multipliers: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// Smallest eigenvalue of each semidefinite block (after shifts).
    pub min_eigenvalues: Vec<f64>,
    /// Largest equality violation over all constraints.
    pub residuals: f64,
    pub dropped_constraints: Vec<usize>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("primal infeasible: {0}")]
    Infeasible(String),
    #[error("dual infeasible (primal unbounded): {0}")]
    Unbounded(String),
    #[error("no convergence after {} iterations (gap {:.2e}, pinf {:.2e}, dinf {:.2e})",
        .diagnostics.iterations, .diagnostics.relative_gap,
        .diagnostics.primal_infeasibility, .diagnostics.dual_infeasibility)]
    MaxIterations {
        diagnostics: Diagnostics,
        best: Box<SdpSolution>,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Relative pivot size below which a constraint counts as dependent.
    pub dependency_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 120,
            dependency_tol: 1e-9,
        }
    }
}

pub fn solve(p: &SdpProblem, tol: f64) -> Result<SdpSolution, SolveError> {
    solve_with(
        p,
        &SolverOptions {
            gap_tol: tol,
            feas_tol: tol,
            ..Default::default()
        },
    )
}

/// Sparse symmetric coefficient matrix restricted to one block, with both
/// triangles stored.
type BlockEntries = Vec<(usize, usize, f64)>;

struct Canonical {
    dims: Vec<usize>,
    c: Vec<DMatrix<f64>>,
    c_const: f64,
    /// Per kept constraint: entries grouped by block.
    a: Vec<Vec<(usize, BlockEntries)>>,
    b: Vec<f64>,
    /// Original index of each kept constraint.
    kept: Vec<usize>,
    dropped: Vec<usize>,
}

fn symmetric_entries(terms: &[Term], sigma: impl Fn(usize) -> f64) -> Vec<(usize, BlockEntries)> {
    let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for &(b, i, j, c) in terms {
        let c = c * sigma(b);
        if i == j {
            *acc.entry((b, i, i)).or_insert(0.0) += c;
        } else {
            *acc.entry((b, i, j)).or_insert(0.0) += c / 2.0;
            *acc.entry((b, j, i)).or_insert(0.0) += c / 2.0;
        }
    }
    let mut out: Vec<(usize, BlockEntries)> = Vec::new();
    for ((b, i, j), v) in acc {
        if v == 0.0 {
            continue;
        }
        match out.last_mut() {
            Some((lb, e)) if *lb == b => e.push((i, j, v)),
            _ => out.push((b, vec![(i, j, v)])),
        }
    }
    out
}

fn offset_value(p: &SdpProblem, terms: &[Term]) -> f64 {
    terms
        .iter()
        .map(|&(b, i, j, c)| match p.shift(b) {
            Some(s) => c * p.sigma(b) * s.offset[(i, j)],
            None => 0.0,
        })
        .sum()
}

/// Greedy selection of linearly independent constraints, in order. A
/// dependent constraint whose right-hand side disagrees with the
/// combination of earlier ones makes the problem infeasible.
fn independent_constraints(
    p: &SdpProblem,
    rhs: &[f64],
    tol: f64,
) -> Result<(Vec<usize>, Vec<usize>), SolveError> {
    let mut offsets = Vec::with_capacity(p.blocks.len());
    let mut total = 0;
    for &n in &p.blocks {
        offsets.push(total);
        total += n * (n + 1) / 2;
    }
    let coord = |b: usize, i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        offsets[b] + j * (j + 1) / 2 + i
    };
    let mut basis: Vec<(usize, Vec<(usize, f64)>, f64)> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut row = vec![0.0; total];
    let mut touched: Vec<usize> = Vec::new();
    for (k, con) in p.constraints.iter().enumerate() {
        for &t in &touched {
            row[t] = 0.0;
        }
        touched.clear();
        let mut scale: f64 = 0.0;
        for &(b, i, j, c) in &con.functional.terms {
            let t = coord(b, i, j);
            if row[t] == 0.0 {
                touched.push(t);
            }
            row[t] += c;
            scale = scale.max(c.abs());
        }
        let mut r = rhs[k];
        // Eliminate against earlier pivots in insertion order.
        for (pc, brow, brhs) in &basis {
            let f = row[*pc];
            if f != 0.0 {
                for &(t, v) in brow {
                    if row[t] == 0.0 {
                        touched.push(t);
                    }
                    row[t] -= f * v;
                }
                row[*pc] = 0.0;
                r -= f * brhs;
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let (mut best, mut best_abs) = (usize::MAX, 0.0);
        for &t in &touched {
            if row[t].abs() > best_abs {
                best_abs = row[t].abs();
                best = t;
            }
        }
        if scale == 0.0 || best_abs <= tol * scale {
            if r.abs() > 1e-7 * (1.0 + rhs[k].abs()) {
                return Err(SolveError::Infeasible(format!(
                    "constraint {k} is a combination of earlier ones with a different rhs (residual {r:e})"
                )));
            }
            dropped.push(k);
            continue;
        }
        let inv = 1.0 / row[best];
        let entries: Vec<(usize, f64)> = touched
            .iter()
            .filter(|&&t| row[t].abs() > 1e-15 * best_abs)
            .map(|&t| (t, row[t] * inv))
            .collect();
        basis.push((best, entries, r * inv));
        kept.push(k);
    }
    Ok((kept, dropped))
}

impl Canonical {
    fn new(p: &SdpProblem, opts: &SolverOptions) -> Result<Self, SolveError> {
        p.check()?;
        let sigma = |b: usize| p.sigma(b);
        let rhs: Vec<f64> = p
            .constraints
            .iter()
            .map(|c| c.rhs + offset_value(p, &c.functional.terms))
            .collect();
        let (kept, dropped) = independent_constraints(p, &rhs, opts.dependency_tol)?;
        let a = kept
            .iter()
            .map(|&k| symmetric_entries(&p.constraints[k].functional.terms, sigma))
            .collect();
        let b = kept.iter().map(|&k| rhs[k]).collect();
        let mut c: Vec<DMatrix<f64>> = p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (blk, entries) in symmetric_entries(&p.objective.terms, sigma) {
            for (i, j, v) in entries {
                c[blk][(i, j)] += v;
            }
        }
        Ok(Canonical {
            dims: p.blocks.clone(),
            c,
            c_const: -offset_value(p, &p.objective.terms),
            a,
            b,
            kept,
            dropped,
        })
    }

    fn apply(&self, w: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.a.len(),
            self.a.iter().map(|blocks| {
                blocks
                    .iter()
                    .map(|(b, e)| e.iter().map(|&(i, j, v)| v * w[*b][(i, j)]).sum::<f64>())
                    .sum::<f64>()
            }),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (k, blocks) in self.a.iter().enumerate() {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for (b, e) in blocks {
                for &(i, j, v) in e {
                    out[*b][(i, j)] += yk * v;
                }
            }
        }
        out
    }

    /// `G_kl = <A_k, A_l>`; constant over the run.
    fn gram(&self) -> DMatrix<f64> {
        let m = self.a.len();
        let mut by_entry: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
        for (k, blocks) in self.a.iter().enumerate() {
            for (b, e) in blocks {
                for &(i, j, v) in e {
                    by_entry.entry((*b, i, j)).or_default().push((k, v));
                }
            }
        }
        let mut g = DMatrix::zeros(m, m);
        for list in by_entry.values() {
            for &(k, vk) in list {
                for &(l, vl) in list {
                    g[(k, l)] += vk * vl;
                }
            }
        }
        g
    }

    fn by_block(&self) -> Vec<Vec<(usize, &BlockEntries)>> {
        let mut out: Vec<Vec<(usize, &BlockEntries)>> = vec![Vec::new(); self.dims.len()];
        for (k, blocks) in self.a.iter().enumerate() {
            for (b, e) in blocks {
                out[*b].push((k, e));
            }
        }
        out
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest `alpha` with `x + alpha * dx ⪰ 0`, for positive definite `x`.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    if x.nrows() == 1 {
        let d = dx[(0, 0)];
        return if d >= 0.0 { f64::INFINITY } else { -x[(0, 0)] / d };
    }
    let l = match x.clone().cholesky() {
        Some(c) => c.l(),
        None => return 0.0,
    };
    let t = match l.solve_lower_triangular(dx) {
        Some(t) => t,
        None => return 0.0,
    };
    let mut m = match l.solve_lower_triangular(&t.transpose()) {
        Some(m) => m,
        None => return 0.0,
    };
    symmetrize(&mut m);
    let lmin = min_eigenvalue(&m);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

/// Nesterov-Todd scaling of one block: `S^-1 W S^-T = S^T Z S = diag(lambda)`
/// and `G = S S^T` with `G Z G = W`.
struct NtScaling {
    s: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    g: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl NtScaling {
    /// From `W = Lw Lw^T`, `Z = Lz Lz^T` and the SVD `Lz^T Lw = U D V^T`:
    /// `S = Lw V D^-1/2`, `S^-1 = D^-1/2 U^T Lz^T`, `lambda = D`.
    fn new(w: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let lw = w.clone().cholesky()?.l();
        let lz = z.clone().cholesky()?.l();
        let svd = (lz.transpose() * &lw).svd(true, true);
        let (u, vt) = (svd.u?, svd.v_t?);
        let d = svd.singular_values;
        if d.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let q = DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt()));
        let s = &lw * vt.transpose() * &q;
        let s_inv = &q * u.transpose() * lz.transpose();
        let mut g = &s * s.transpose();
        symmetrize(&mut g);
        Some(NtScaling { s, s_inv, g, lambda: d })
    }
}

enum Factor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(m: &DMatrix<f64>) -> Self {
        if let Some(ch) = m.clone().cholesky() {
            return Factor::Cholesky(ch);
        }
        let shift = 1e-13 * m.diagonal().amax().max(1e-300);
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += shift;
        }
        match reg.cholesky() {
            Some(ch) => Factor::Cholesky(ch),
            None => Factor::Lu(m.clone().lu()),
        }
    }

    fn solve(&self, h: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Cholesky(ch) => Some(ch.solve(h)),
            Factor::Lu(lu) => lu.solve(h),
        }
    }
}

struct Iterate {
    w: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
}

pub fn solve_with(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SolveError> {
    let cp = Canonical::new(p, opts)?;
    let m = cp.a.len();
    let n_total: usize = cp.dims.iter().sum();
    let by_block = cp.by_block();
    let gram = Factor::new(&cp.gram());
    let nvec: usize = cp.dims.iter().map(|n| n * (n + 1) / 2).sum();
    if nvec < m {
        return Err(SolveError::Malformed(format!(
            "{m} independent constraints exceed the {nvec} free entries"
        )));
    }

    let b_norm = cp.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_norm = frob(&cp.c);
    let bvec = DVector::from_vec(cp.b.clone());

    // Starting point scaled to the data, after the usual heuristics.
    let mut it = Iterate {
        w: Vec::new(),
        y: DVector::zeros(m),
        z: Vec::new(),
    };
    for (blk, &n) in cp.dims.iter().enumerate() {
        let nf = n as f64;
        let mut xi: f64 = 10.0f64.max(nf.sqrt());
        let mut eta: f64 = 10.0f64.max(nf.sqrt()).max(cp.c[blk].norm());
        for (k, e) in &by_block[blk] {
            let an = e.iter().map(|t| t.2 * t.2).sum::<f64>().sqrt();
            xi = xi.max(nf * (1.0 + cp.b[*k].abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        it.w.push(DMatrix::identity(n, n) * xi);
        it.z.push(DMatrix::identity(n, n) * eta);
    }

    let mut best: Option<(f64, SdpSolution)> = None;
    let mut diag = Diagnostics {
        iterations: 0,
        relative_gap: f64::INFINITY,
        primal_infeasibility: f64::INFINITY,
        dual_infeasibility: f64::INFINITY,
    };
    let mut stalled = 0;

    for iter in 0..=opts.max_iter {
        let aw = cp.apply(&it.w);
        let rp = &bvec - &aw;
        let aty = cp.adjoint(&it.y);
        let rd: Vec<DMatrix<f64>> = (0..cp.dims.len())
            .map(|b| &cp.c[b] + &it.z[b] - &aty[b])
            .collect();
        let pobj = inner(&cp.c, &it.w) + cp.c_const;
        let dobj = bvec.dot(&it.y) + cp.c_const;
        let mu = inner(&it.w, &it.z) / n_total as f64;
        diag = Diagnostics {
            iterations: iter,
            relative_gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
            primal_infeasibility: rp.norm() / (1.0 + b_norm),
            dual_infeasibility: frob(&rd) / (1.0 + c_norm),
        };
        let merit = diag
            .relative_gap
            .max(diag.primal_infeasibility)
            .max(diag.dual_infeasibility);
        if best.as_ref().map_or(true, |(bm, _)| merit < *bm) {
            best = Some((merit, finish(p, &cp, &it, diag)));
            stalled = 0;
        } else {
            stalled += 1;
        }
        if diag.relative_gap <= opts.gap_tol
            && diag.primal_infeasibility <= opts.feas_tol
            && diag.dual_infeasibility <= opts.feas_tol
        {
            return Ok(best.expect("recorded above").1);
        }
        if iter == opts.max_iter || stalled >= STALL_LIMIT {
            break;
        }
        let w_norm = frob(&it.w);
        let z_norm = frob(&it.z) + it.y.norm();
        if w_norm > 1e12 && diag.primal_infeasibility < 1e-6 {
            return Err(SolveError::Unbounded(format!("primal iterate norm {w_norm:e}")));
        }
        if z_norm > 1e12 && diag.dual_infeasibility < 1e-6 {
            return Err(SolveError::Infeasible(format!("dual iterate norm {z_norm:e}")));
        }

        let Some(nt) = it
            .w
            .iter()
            .zip(&it.z)
            .map(|(w, z)| NtScaling::new(w, z))
            .collect::<Option<Vec<_>>>()
        else {
            break;
        };

        // Schur complement M = A^ A^T with A^_k = S^T A_k S, factored as
        // R^T R through a QR of A^T so the conditioning is not squared.
        let mut ahat = DMatrix::<f64>::zeros(nvec, m);
        let mut offset = 0;
        for (blk, cons) in by_block.iter().enumerate() {
            let n = cp.dims[blk];
            let sm = &nt[blk].s;
            let mut bmat = DMatrix::<f64>::zeros(n, n);
            for &(l, el) in cons {
                bmat.fill(0.0);
                for &(c, d, v) in el.iter() {
                    for j in 0..n {
                        let f = v * sm[(d, j)];
                        if f != 0.0 {
                            for i in 0..n {
                                bmat[(i, j)] += f * sm[(c, i)];
                            }
                        }
                    }
                }
                let mut row = offset;
                for j in 0..n {
                    for i in 0..=j {
                        let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                        ahat[(row, l)] = w * 0.5 * (bmat[(i, j)] + bmat[(j, i)]);
                        row += 1;
                    }
                }
            }
            offset += n * (n + 1) / 2;
        }
        let rfac = ahat.qr().r();
        if (0..m).any(|i| rfac[(i, i)] == 0.0) {
            break;
        }
        let schur_solve = |h: &DVector<f64>| -> Option<DVector<f64>> {
            let t = rfac.tr_solve_upper_triangular(h)?;
            rfac.solve_upper_triangular(&t)
        };
        let schur_apply = |v: &DVector<f64>| {
            let s = cp.adjoint(v);
            let g: Vec<DMatrix<f64>> = (0..cp.dims.len())
                .map(|b| &nt[b].g * &s[b] * &nt[b].g)
                .collect();
            cp.apply(&g)
        };

        // Scaled complementarity: Lambda o (dW^ + dZ^) = sigma mu I - Lambda^2 - corr.
        let direction = |sigma_mu: f64,
                         corr: Option<&Vec<DMatrix<f64>>>|
         -> Option<(Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>)> {
            let mut srs = Vec::with_capacity(cp.dims.len());
            let mut rmat = Vec::with_capacity(cp.dims.len());
            for blk in 0..cp.dims.len() {
                let sc = &nt[blk];
                let n = cp.dims[blk];
                let mut h = DMatrix::<f64>::zeros(n, n);
                for i in 0..n {
                    h[(i, i)] = sigma_mu - sc.lambda[i] * sc.lambda[i];
                }
                if let Some(cm) = corr {
                    h -= &cm[blk];
                }
                let r = DMatrix::from_fn(n, n, |i, j| 2.0 * h[(i, j)] / (sc.lambda[i] + sc.lambda[j]));
                let mut sr = &sc.s * r * sc.s.transpose();
                symmetrize(&mut sr);
                rmat.push(&sr + &sc.g * &rd[blk] * &sc.g);
                srs.push(sr);
            }
            let h = cp.apply(&rmat) - &rp;
            let mut dy = schur_solve(&h)?;
            for _ in 0..3 {
                let r = &h - schur_apply(&dy);
                if r.amax() <= 1e-15 * h.amax().max(1e-300) {
                    break;
                }
                dy += schur_solve(&r)?;
            }
            let atdy = cp.adjoint(&dy);
            let dz: Vec<DMatrix<f64>> = (0..cp.dims.len()).map(|b| &atdy[b] - &rd[b]).collect();
            let mut dw = Vec::with_capacity(cp.dims.len());
            for blk in 0..cp.dims.len() {
                let g = &nt[blk].g;
                let mut d = &srs[blk] - g * &dz[blk] * g;
                symmetrize(&mut d);
                dw.push(d);
            }
            // Project back onto A(dW) = rp; rounding in the products above
            // otherwise accumulates as primal infeasibility.
            let e = &rp - cp.apply(&dw);
            let fix = cp.adjoint(&gram.solve(&e)?);
            for (d, f) in dw.iter_mut().zip(&fix) {
                *d += f;
            }
            Some((dw, dy, dz))
        };

        let steps = |dw: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
            let ap = (0..cp.dims.len())
                .map(|b| max_step(&it.w[b], &dw[b]))
                .fold(f64::INFINITY, f64::min);
            let ad = (0..cp.dims.len())
                .map(|b| max_step(&it.z[b], &dz[b]))
                .fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // Predictor.
        let Some((dw_p, _dy_p, dz_p)) = direction(0.0, None) else {
            break;
        };
        let (ap, ad) = steps(&dw_p, &dz_p);
        let (ap1, ad1) = (ap.min(1.0), ad.min(1.0));
        let mut mu_aff = 0.0;
        for blk in 0..cp.dims.len() {
            let wn = &it.w[blk] + &dw_p[blk] * ap1;
            let zn = &it.z[blk] + &dz_p[blk] * ad1;
            mu_aff += wn.dot(&zn);
        }
        mu_aff /= n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector with the scaled second-order term dW^_p dZ^_p.
        let corr: Vec<DMatrix<f64>> = (0..cp.dims.len())
            .map(|b| {
                let sc = &nt[b];
                let dws = &sc.s_inv * &dw_p[b] * sc.s_inv.transpose();
                let dzs = sc.s.transpose() * &dz_p[b] * &sc.s;
                let p = &dws * &dzs;
                (&p + p.transpose()) * 0.5
            })
            .collect();
        let Some((dw, dy, dz)) = direction(sigma * mu, Some(&corr)) else {
            break;
        };
        let (ap, ad) = steps(&dw, &dz);
        let alpha_p = (STEP_FRACTION * ap).min(1.0);
        let alpha_d = (STEP_FRACTION * ad).min(1.0);
        for blk in 0..cp.dims.len() {
            it.w[blk] += &dw[blk] * alpha_p;
            symmetrize(&mut it.w[blk]);
            it.z[blk] += &dz[blk] * alpha_d;
            symmetrize(&mut it.z[blk]);
        }
        it.y += &dy * alpha_d;
    }

    let (_, best) = best.expect("at least one iterate");
    Err(SolveError::MaxIterations {
        diagnostics: diag,
        best: Box::new(best),
    })
}

fn finish(p: &SdpProblem, cp: &Canonical, it: &Iterate, diag: Diagnostics) -> SdpSolution {
    let mut x = Vec::with_capacity(cp.dims.len());
    let mut min_eigs = Vec::with_capacity(cp.dims.len());
    for (blk, w) in it.w.iter().enumerate() {
        min_eigs.push(min_eigenvalue(w));
        x.push(match p.shift(blk) {
            Some(s) => (w - &s.offset) * p.sigma(blk),
            None => w.clone(),
        });
    }
    let mut y = vec![0.0; p.constraints.len()];
    for (pos, &k) in cp.kept.iter().enumerate() {
        y[k] = it.y[pos];
    }
    let primal_value = p.primal_objective(&x);
    let dual_value = cp.b.iter().zip(it.y.iter()).map(|(b, y)| b * y).sum::<f64>() + cp.c_const;
    SdpSolution {
        residuals: p.max_residual(&x),
        primal_blocks: x,
        dual_multipliers: y,
        primal_value,
        dual_value,
        gap: (primal_value - dual_value).abs(),
        min_eigenvalues: min_eigs,
        dropped_constraints: cp.dropped.clone(),
        diagnostics: diag,
    }
}

/// Result of an independent dual-feasibility check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualVerification {
    /// `b^T y` plus any constant from shifted blocks.
    pub dual_value: f64,
    pub min_eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub margin: f64,
    /// The dual value when the slack is semidefinite up to `margin`.
    pub certified_bound: Option<f64>,
}

impl DualVerification {
    pub fn is_certified(&self) -> bool {
        self.certified_bound.is_some()
    }
}

/// Rebuilds the dual slack `A*(y) - C` directly from the problem data and
/// checks it is positive semidefinite up to `margin`.
pub fn verify_dual_certificate(
    p: &SdpProblem,
    multipliers: &[f64],
    margin: f64,
) -> Result<DualVerification, SolveError> {
    p.check()?;
    if multipliers.len() != p.constraints.len() {
        return Err(SolveError::Malformed(format!(
            "{} multipliers for {} constraints",
            multipliers.len(),
            p.constraints.len()
        )));
    }
    let mut slack: Vec<DMatrix<f64>> = p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let mut place = |terms: &[Term], w: f64| {
        for &(b, i, j, c) in terms {
            let s = p.sigma(b);
            if i == j {
                slack[b][(i, i)] += w * s * c;
            } else {
                slack[b][(i, j)] += 0.5 * w * s * c;
                slack[b][(j, i)] += 0.5 * w * s * c;
            }
        }
    };
    place(&p.objective.terms, -1.0);
    let mut dual_value = 0.0;
    for (con, &y) in p.constraints.iter().zip(multipliers) {
        place(&con.functional.terms, y);
        let mut shifted = con.rhs;
        for &(b, i, j, c) in &con.functional.terms {
            if let Some(s) = p.shift(b) {
                shifted += c * p.sigma(b) * s.offset[(i, j)];
            }
        }
        dual_value += y * shifted;
    }
    for &(b, i, j, c) in &p.objective.terms {
        if let Some(s) = p.shift(b) {
            dual_value -= c * p.sigma(b) * s.offset[(i, j)];
        }
    }
    let min_eigenvalues: Vec<f64> = slack.iter().map(min_eigenvalue).collect();
    let min_eigenvalue = min_eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let certified_bound = (min_eigenvalue >= -margin).then_some(dual_value);
    Ok(DualVerification {
        dual_value,
        min_eigenvalues,
        min_eigenvalue,
        margin,
        certified_bound,
    })
}
