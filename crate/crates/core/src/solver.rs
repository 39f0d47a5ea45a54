//! Dantzig-selector-type programs
//!
//! ```text
//!     minimize  sum_i w_i |x_i|   subject to   |A x - b|_inf <= lambda
//! ```
//!
//! The LP (with `|x_i| <= u_i` and two-sided residual bounds) is solved by a
//! primal-dual interior-point method. The full operator is never formed:
//! a working set of columns and constraint rows is grown from pricing and
//! feasibility checks that need only `A x` and `A^T y`, and each restricted
//! LP is small enough for dense Newton steps. A point is reported as
//! converged only once it is feasible for every row and the duality gap
//! certified against the full problem is below tolerance.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, l1_norm, linf_norm, norm2};
use crate::types::SolverConfig;

/// A linear map given through its action and the action of its adjoint.
pub trait ConstraintOperator: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);

    /// Entries `A[rows[k], col]`. The default applies the operator to a unit
    /// vector; structured operators override it with a direct formula.
    fn column_entries(&self, col: usize, rows: &[usize], out: &mut [f64]) {
        let mut e = vec![0.0; self.dim_in()];
        e[col] = 1.0;
        let mut full = vec![0.0; self.dim_out()];
        self.apply(&e, &mut full);
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = full[r];
        }
    }
}

/// The identity on `R^dim`.
#[derive(Debug, Clone)]
pub struct IdentityOperator {
    pub dim: usize,
}

impl ConstraintOperator for IdentityOperator {
    fn dim_in(&self) -> usize {
        self.dim
    }
    fn dim_out(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
    fn column_entries(&self, col: usize, rows: &[usize], out: &mut [f64]) {
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = if r == col { 1.0 } else { 0.0 };
        }
    }
}

/// An explicit dense `q x p` matrix.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    m: DMatrix<f64>,
}

pub fn matrix_operator(m: DMatrix<f64>) -> Result<MatrixOperator> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "constraint matrix has non-finite entries".into(),
        ));
    }
    Ok(MatrixOperator { m })
}

impl MatrixOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

impl ConstraintOperator for MatrixOperator {
    fn dim_in(&self) -> usize {
        self.m.ncols()
    }
    fn dim_out(&self) -> usize {
        self.m.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, a) in out.iter_mut().zip(self.m.column(j).iter()) {
                    *o += a * xj;
                }
            }
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.m.column(j).as_slice(), y);
        }
    }
    fn column_entries(&self, col: usize, rows: &[usize], out: &mut [f64]) {
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = self.m[(r, col)];
        }
    }
}

/// `D -> (S1 D S2 + S2 D S1) / 2` acting on column-major `vec(D)`.
#[derive(Debug, Clone)]
pub struct SylvesterOperator {
    s1: DMatrix<f64>,
    s2: DMatrix<f64>,
}

pub fn sylvester_operator(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<SylvesterOperator> {
    check_square_pair(s1, s2)?;
    Ok(SylvesterOperator {
        s1: s1.clone(),
        s2: s2.clone(),
    })
}

fn check_square_pair(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<()> {
    let p = s1.nrows();
    for s in [s1, s2] {
        if s.nrows() != p || s.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: if s.nrows() != p { s.nrows() } else { s.ncols() },
            });
        }
    }
    Ok(())
}

impl SylvesterOperator {
    pub fn p(&self) -> usize {
        self.s1.nrows()
    }

    pub fn apply_matrix(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let a = &self.s1 * d;
        let b = &self.s2 * d;
        let mut out = a * &self.s2;
        out.gemm(0.5, &b, &self.s1, 0.5);
        out
    }

    /// `A[(a,b),(c,d)]` in matrix-index form.
    fn entry(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        0.5 * (self.s1[(a, c)] * self.s2[(d, b)] + self.s2[(a, c)] * self.s1[(d, b)])
    }
}

impl ConstraintOperator for SylvesterOperator {
    fn dim_in(&self) -> usize {
        self.p() * self.p()
    }
    fn dim_out(&self) -> usize {
        self.p() * self.p()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let p = self.p();
        let d = DMatrix::from_column_slice(p, p, x);
        out.copy_from_slice(self.apply_matrix(&d).as_slice());
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        // symmetric S1, S2 make the Kronecker form symmetric
        self.apply(y, out);
    }
    fn column_entries(&self, col: usize, rows: &[usize], out: &mut [f64]) {
        let p = self.p();
        let (c, d) = (col % p, col / p);
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = self.entry(r % p, r / p, c, d);
        }
    }
}

/// The Sylvester map restricted to symmetric `D`, in half-vectorized
/// coordinates (upper triangle, column by column).
///
/// For symmetric `D` the map needs two `p x p` products instead of four, and
/// the residual is symmetric so only its upper triangle is constrained. With
/// the weights from [`Self::l1_weights`] (1 on the diagonal, 2 off it) the
/// weighted l1 norm of the half-vector equals `|D|_1`.
#[derive(Debug, Clone)]
pub struct SymmetricSylvesterOperator {
    full: SylvesterOperator,
    index: Vec<(usize, usize)>,
}

pub fn symmetric_sylvester_operator(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
) -> Result<SymmetricSylvesterOperator> {
    let full = sylvester_operator(s1, s2)?;
    let p = full.p();
    let mut index = Vec::with_capacity(half_len(p));
    for j in 0..p {
        for i in 0..=j {
            index.push((i, j));
        }
    }
    Ok(SymmetricSylvesterOperator { full, index })
}

pub fn half_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Upper triangle of `m`, column by column.
pub fn half_vectorize(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(half_len(p));
    for j in 0..p {
        for i in 0..=j {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Symmetric matrix whose upper triangle is `h`.
pub fn half_unvectorize(h: &[f64], p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in 0..=j {
            m[(i, j)] = h[k];
            m[(j, i)] = h[k];
            k += 1;
        }
    }
    m
}

impl SymmetricSylvesterOperator {
    pub fn p(&self) -> usize {
        self.full.p()
    }

    pub fn l1_weights(&self) -> Vec<f64> {
        self.index
            .iter()
            .map(|&(i, j)| if i == j { 1.0 } else { 2.0 })
            .collect()
    }

    /// `(S1 D S2 + S2 D S1) / 2` for symmetric `D`.
    fn apply_symmetric(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let m = &self.full.s1 * d * &self.full.s2;
        (&m + m.transpose()) * 0.5
    }
}

impl ConstraintOperator for SymmetricSylvesterOperator {
    fn dim_in(&self) -> usize {
        self.index.len()
    }
    fn dim_out(&self) -> usize {
        self.index.len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let r = self.apply_symmetric(&half_unvectorize(x, self.p()));
        for (o, &(i, j)) in out.iter_mut().zip(&self.index) {
            *o = r[(i, j)];
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let p = self.p();
        let mut yt = half_unvectorize(y, p);
        for i in 0..p {
            yt[(i, i)] *= 2.0;
        }
        let r = self.apply_symmetric(&yt);
        for (o, &(i, j)) in out.iter_mut().zip(&self.index) {
            *o = if i == j { 0.5 * r[(i, i)] } else { r[(i, j)] };
        }
    }
    fn column_entries(&self, col: usize, rows: &[usize], out: &mut [f64]) {
        let (c, d) = self.index[col];
        let f = &self.full;
        for (o, &r) in out.iter_mut().zip(rows) {
            let (a, b) = self.index[r];
            *o = if c == d {
                f.entry(a, b, c, c)
            } else {
                f.entry(a, b, c, d) + f.entry(a, b, d, c)
            };
        }
    }
}

/// Relative adjoint mismatch `|<Ax,y> - <x,A^T y>| / (|Ax| |y| + |x| |A^T y|)`
/// on one random probe pair.
pub fn adjoint_mismatch(op: &dyn ConstraintOperator, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..op.dim_in()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..op.dim_out()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ax = vec![0.0; op.dim_out()];
    let mut aty = vec![0.0; op.dim_in()];
    op.apply(&x, &mut ax);
    op.apply_adjoint(&y, &mut aty);
    let scale = norm2(&ax) * norm2(&y) + norm2(&x) * norm2(&aty);
    if scale == 0.0 {
        0.0
    } else {
        (dot(&ax, &y) - dot(&x, &aty)).abs() / scale
    }
}

/// Outcome of one l1 solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    /// Weighted l1 norm of `solution` (plain l1 norm for unit weights).
    pub objective: f64,
    /// `|A x - b|_inf`.
    pub max_constraint_violation: f64,
    /// Interior-point iterations summed over all restricted solves.
    pub iterations: usize,
    pub converged: bool,
    /// Objective minus the best dual lower bound for the full problem.
    pub duality_gap: f64,
}

impl SolveReport {
    pub fn solution_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.solution)
    }
}

/// `min |x|_1  s.t.  |A x - b|_inf <= cfg.lambda`.
pub fn solve_l1_dantzig(
    op: &dyn ConstraintOperator,
    b: &[f64],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let w = vec![1.0; op.dim_in()];
    solve_weighted_l1_dantzig(op, b, &w, cfg)
}

/// `min sum w_i |x_i|  s.t.  |A x - b|_inf <= cfg.lambda` with `w > 0`.
pub fn solve_weighted_l1_dantzig(
    op: &dyn ConstraintOperator,
    b: &[f64],
    weights: &[f64],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let (n, m) = (op.dim_in(), op.dim_out());
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter("l1 weights must be positive".into()));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("right-hand side is not finite".into()));
    }
    let b_inf = linf_norm(b);
    if b_inf <= cfg.lambda {
        return Ok(SolveReport {
            solution: vec![0.0; n],
            objective: 0.0,
            max_constraint_violation: b_inf,
            iterations: 0,
            converged: true,
            duality_gap: 0.0,
        });
    }
    // An empty interior cannot host barrier iterates; a radius far below the
    // reported tolerances stands in for an exact equality constraint.
    let lambda = if cfg.lambda > 0.0 {
        cfg.lambda
    } else {
        0.1 * cfg.duality_gap_tol
    };
    WorkingSet::new(op, b, weights, lambda, cfg).solve()
}

const MAX_ROUNDS: usize = 200;

struct WorkingSet<'a> {
    op: &'a dyn ConstraintOperator,
    b: &'a [f64],
    w: &'a [f64],
    lambda: f64,
    cfg: &'a SolverConfig,
    cols: Vec<usize>,
    rows: Vec<usize>,
    in_cols: Vec<bool>,
    in_rows: Vec<bool>,
}

impl<'a> WorkingSet<'a> {
    fn new(
        op: &'a dyn ConstraintOperator,
        b: &'a [f64],
        w: &'a [f64],
        lambda: f64,
        cfg: &'a SolverConfig,
    ) -> Self {
        let mut ws = WorkingSet {
            op,
            b,
            w,
            lambda,
            cfg,
            cols: Vec::new(),
            rows: Vec::new(),
            in_cols: vec![false; op.dim_in()],
            in_rows: vec![false; op.dim_out()],
        };
        // rows violated at x = 0, and the columns that best reduce them
        let excess: Vec<f64> = b
            .iter()
            .map(|&v| v.signum() * (v.abs() - lambda).max(0.0))
            .collect();
        let magnitude: Vec<f64> = excess.iter().map(|v| v.abs()).collect();
        let violated = top_indices(&magnitude, 0.0, usize::MAX);
        ws.add_rows(&violated);
        let mut g = vec![0.0; op.dim_in()];
        op.apply_adjoint(&excess, &mut g);
        let score: Vec<f64> = g.iter().zip(w).map(|(g, w)| g.abs() / w).collect();
        let mut start = top_indices(&score, 0.0, violated.len().max(1));
        if start.is_empty() {
            start = top_indices(&score, -1.0, 1);
        }
        ws.add_cols(&start);
        ws
    }

    fn add_rows(&mut self, idx: &[usize]) {
        for &i in idx {
            if !self.in_rows[i] {
                self.in_rows[i] = true;
                self.rows.push(i);
            }
        }
    }

    fn add_cols(&mut self, idx: &[usize]) {
        for &j in idx {
            if !self.in_cols[j] {
                self.in_cols[j] = true;
                self.cols.push(j);
            }
        }
    }

    fn restricted(&self) -> Restricted<'a> {
        let (r, k) = (self.rows.len(), self.cols.len());
        let mut a = DMatrix::zeros(r, k);
        for (c, &j) in self.cols.iter().enumerate() {
            self.op
                .column_entries(j, &self.rows, a.column_mut(c).as_mut_slice());
        }
        Restricted {
            a,
            b: DVector::from_iterator(r, self.rows.iter().map(|&i| self.b[i])),
            w: DVector::from_iterator(k, self.cols.iter().map(|&j| self.w[j])),
            lambda: self.lambda,
            cfg: self.cfg,
        }
    }

    fn embed_cols(&self, xs: &DVector<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.op.dim_in()];
        for (&j, v) in self.cols.iter().zip(xs.iter()) {
            x[j] = *v;
        }
        x
    }

    fn embed_rows(&self, ys: &DVector<f64>) -> Vec<f64> {
        let mut y = vec![0.0; self.op.dim_out()];
        for (&i, v) in self.rows.iter().zip(ys.iter()) {
            y[i] = *v;
        }
        y
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.w).map(|(x, w)| w * x.abs()).sum()
    }

    /// `|g_j| / w_j - threshold` for columns outside the working set, zero
    /// inside it.
    fn outside_score(&self, g: &[f64], threshold: f64) -> Vec<f64> {
        g.iter()
            .zip(self.w)
            .enumerate()
            .map(|(j, (g, w))| {
                if self.in_cols[j] {
                    0.0
                } else {
                    g.abs() / w - threshold * (1.0 + 1e-9)
                }
            })
            .collect()
    }

    fn solve(mut self) -> Result<SolveReport> {
        let mut iterations = 0;
        let mut best: Option<SolveReport> = None;
        for _ in 0..MAX_ROUNDS {
            if self.cols.len().max(self.rows.len()) > self.cfg.max_working_set {
                break;
            }
            let outcome = self.restricted().solve()?;
            match outcome {
                SubOutcome::Infeasible {
                    nu,
                    violation,
                    iterations: it,
                } => {
                    iterations += it;
                    let nu = self.embed_rows(&nu);
                    let mut g = vec![0.0; self.op.dim_in()];
                    self.op.apply_adjoint(&nu, &mut g);
                    let score = self.outside_score(&g, 0.0);
                    let floor = 1e-9 * score.iter().fold(0.0f64, |a, v| a.max(*v));
                    let add = top_indices(&score, floor, (self.cols.len() / 2).max(16));
                    if add.is_empty() {
                        return Err(Error::Infeasible {
                            min_violation: violation,
                        });
                    }
                    self.add_cols(&add);
                }
                SubOutcome::Solved {
                    x,
                    nu,
                    iterations: it,
                } => {
                    iterations += it;
                    let x = self.embed_cols(&x);
                    let mut res = vec![0.0; self.op.dim_out()];
                    self.op.apply(&x, &mut res);
                    for (r, b) in res.iter_mut().zip(self.b) {
                        *r -= b;
                    }
                    let nu = self.embed_rows(&nu);
                    let mut g = vec![0.0; self.op.dim_in()];
                    self.op.apply_adjoint(&nu, &mut g);
                    let scale = g
                        .iter()
                        .zip(self.w)
                        .fold(1.0f64, |a, (g, w)| a.max(g.abs() / w));
                    let bound = -(dot(self.b, &nu) + self.lambda * l1_norm(&nu)) / scale;
                    let objective = self.objective(&x);
                    let violation = linf_norm(&res);
                    let feasible = violation <= self.lambda;
                    let report = SolveReport {
                        solution: x,
                        objective,
                        max_constraint_violation: violation,
                        iterations,
                        converged: false,
                        duality_gap: (objective - bound).max(0.0),
                    };
                    if feasible && report.duality_gap <= 10.0 * self.cfg.duality_gap_tol {
                        return Ok(SolveReport {
                            converged: true,
                            ..report
                        });
                    }
                    let excess: Vec<f64> = res
                        .iter()
                        .enumerate()
                        .map(|(i, r)| if self.in_rows[i] { 0.0 } else { r.abs() - self.lambda })
                        .collect();
                    let new_rows = top_indices(&excess, 0.0, (self.rows.len() / 2).max(16));
                    let score = self.outside_score(&g, 1.0);
                    let new_cols = top_indices(&score, 0.0, (self.cols.len() / 2).max(16));
                    if feasible {
                        best = Some(report);
                    }
                    if new_rows.is_empty() && new_cols.is_empty() {
                        break;
                    }
                    self.add_rows(&new_rows);
                    self.add_cols(&new_cols);
                }
            }
        }
        let report = best.unwrap_or_else(|| SolveReport {
            solution: vec![0.0; self.op.dim_in()],
            objective: 0.0,
            max_constraint_violation: linf_norm(self.b),
            iterations,
            converged: false,
            duality_gap: f64::INFINITY,
        });
        Err(Error::NotConverged {
            report: Box::new(SolveReport {
                iterations,
                ..report
            }),
        })
    }
}

/// Indices of the entries strictly above `floor`, largest first, at most
/// `limit` of them; ties go to the lower index.
fn top_indices(score: &[f64], floor: f64, limit: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..score.len()).filter(|&i| score[i] > floor).collect();
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    idx.truncate(limit);
    idx
}

enum SubOutcome {
    Solved {
        x: DVector<f64>,
        nu: DVector<f64>,
        iterations: usize,
    },
    Infeasible {
        nu: DVector<f64>,
        violation: f64,
        iterations: usize,
    },
}

/// The LP on the working set, with its constraint block held densely.
struct Restricted<'a> {
    a: DMatrix<f64>,
    b: DVector<f64>,
    w: DVector<f64>,
    lambda: f64,
    cfg: &'a SolverConfig,
}

const MU: f64 = 10.0;
const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;

/// Slacks `f` (kept strictly negative) and multipliers `l` (kept positive)
/// of the four constraint blocks `x - u`, `-x - u`, `r - lambda [- s]`,
/// `-r - lambda [- s]`.
struct Barrier {
    f: [DVector<f64>; 4],
    l: [DVector<f64>; 4],
}

impl Barrier {
    fn new(f: [DVector<f64>; 4]) -> Self {
        let l = f.clone().map(|f| f.map(|v| -1.0 / v));
        Barrier { f, l }
    }

    fn surrogate_gap(&self) -> f64 {
        -(0..4).map(|i| self.f[i].dot(&self.l[i])).sum::<f64>()
    }

    fn count(&self) -> usize {
        self.f.iter().map(|f| f.len()).sum()
    }

    /// `dl = -l - 1/(tau f) - (l/f) df`.
    fn dual_steps(&self, df: &[DVector<f64>; 4], inv_tau: f64) -> [DVector<f64>; 4] {
        std::array::from_fn(|i| {
            let (l, f, d) = (&self.l[i], &self.f[i], &df[i]);
            DVector::from_fn(l.len(), |k, _| -l[k] - inv_tau / f[k] - l[k] / f[k] * d[k])
        })
    }

    fn step(
        &self,
        df: &[DVector<f64>; 4],
        dl: &[DVector<f64>; 4],
        resnorm: impl Fn(f64) -> f64,
    ) -> Option<f64> {
        let duals: Vec<_> = self.l.iter().zip(dl.iter()).collect();
        let slacks: Vec<_> = self.f.iter().zip(df.iter()).collect();
        line_search(&duals, &slacks, resnorm)
    }

    fn advance(&mut self, s: f64, df: &[DVector<f64>; 4], dl: &[DVector<f64>; 4]) {
        for i in 0..4 {
            self.f[i].axpy(s, &df[i], 1.0);
            self.l[i].axpy(s, &dl[i], 1.0);
        }
    }

    fn nu(&self) -> DVector<f64> {
        &self.l[2] - &self.l[3]
    }
}

type Pair<'a> = (&'a DVector<f64>, &'a DVector<f64>);

/// Longest step keeping multipliers nonnegative (shortened by 1%) and slacks
/// strictly negative, then backtracking until the KKT residual norm drops.
fn line_search(duals: &[Pair<'_>], slacks: &[Pair<'_>], resnorm: impl Fn(f64) -> f64) -> Option<f64> {
    let mut smax = 1.0f64;
    for (l, d) in duals {
        for (li, di) in l.iter().zip(d.iter()) {
            if *di < 0.0 {
                smax = smax.min(-li / di);
            }
        }
    }
    let mut s = 0.99 * smax;
    let strictly_inside = |s: f64| {
        slacks
            .iter()
            .all(|(f, d)| f.iter().zip(d.iter()).all(|(fi, di)| fi + s * di < 0.0))
    };
    let mut tries = 0;
    while !strictly_inside(s) {
        s *= BETA;
        tries += 1;
        if tries > 60 {
            return None;
        }
    }
    let r0 = resnorm(0.0);
    while resnorm(s) > (1.0 - ALPHA * s) * r0 {
        s *= BETA;
        tries += 1;
        if tries > 80 || s < 1e-14 {
            return None;
        }
    }
    Some(s)
}

/// Newton-system coefficients after eliminating `du`.
struct Reduced {
    sig11: DVector<f64>,
    sig12: DVector<f64>,
    sigx: DVector<f64>,
    siga: DVector<f64>,
}

impl Reduced {
    fn new(bar: &Barrier) -> Self {
        let [f1, f2, f3, f4] = &bar.f;
        let [l1, l2, l3, l4] = &bar.l;
        let n = f1.len();
        let sig11 = DVector::from_fn(n, |i, _| -l1[i] / f1[i] - l2[i] / f2[i]);
        let sig12 = DVector::from_fn(n, |i, _| l1[i] / f1[i] - l2[i] / f2[i]);
        let sigx = DVector::from_fn(n, |i, _| sig11[i] - sig12[i] * sig12[i] / sig11[i]);
        let siga = DVector::from_fn(f3.len(), |j, _| -l3[j] / f3[j] - l4[j] / f4[j]);
        Reduced {
            sig11,
            sig12,
            sigx,
            siga,
        }
    }
}

type PhaseOne = std::result::Result<(DVector<f64>, usize), SubOutcome>;

impl Restricted<'_> {
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    fn initial_bounds(&self, x: &DVector<f64>) -> DVector<f64> {
        let xmax = x.amax().max(1e-2 * (1.0 + self.b.amax()));
        x.map(|v| 0.95 * v.abs() + 0.10 * xmax)
    }

    fn solve(&self) -> Result<SubOutcome> {
        let x0 = DVector::zeros(self.a.ncols());
        if self.b.amax() < self.lambda {
            return self.phase2(x0, 0);
        }
        match self.phase1(x0)? {
            Ok((x, it)) => self.phase2(x, it),
            Err(outcome) => Ok(outcome),
        }
    }

    /// Solves `(diag(sigx) + A^T diag(siga) A) X = R` for each right-hand side.
    fn newton_solve(
        &self,
        sigx: &DVector<f64>,
        siga: &DVector<f64>,
        rhs: &[&DVector<f64>],
    ) -> Result<Vec<DVector<f64>>> {
        let (m, n) = self.a.shape();
        if 3 * m < 2 * n {
            if let Some(out) = self.woodbury_solve(sigx, siga, rhs) {
                return Ok(out);
            }
        }
        let mut scaled = self.a.clone();
        for (mut row, s) in scaled.row_iter_mut().zip(siga.iter()) {
            row *= s.sqrt();
        }
        let mut h = scaled.transpose() * &scaled;
        for i in 0..h.nrows() {
            h[(i, i)] += sigx[i];
        }
        if let Some(chol) = Cholesky::new(h.clone()) {
            let out: Vec<DVector<f64>> = rhs.iter().map(|r| chol.solve(r)).collect();
            if out.iter().all(|v| v.iter().all(|x| x.is_finite())) {
                return Ok(out);
            }
        }
        rhs.iter()
            .map(|r| {
                let (x, res) = dense_pcg(&h, r, self.cfg.cg_tol, self.cfg.cg_max_iters);
                if res > 0.5 {
                    Err(Error::NumericalBreakdown {
                        residual: res,
                        report: None,
                    })
                } else {
                    Ok(x)
                }
            })
            .collect()
    }

    /// The same solve through the `m x m` system
    /// `diag(1/siga) + A diag(1/sigx) A^T`, accepted only if the result
    /// reproduces each right-hand side to 1e-8 relative.
    fn woodbury_solve(
        &self,
        sigx: &DVector<f64>,
        siga: &DVector<f64>,
        rhs: &[&DVector<f64>],
    ) -> Option<Vec<DVector<f64>>> {
        let inv_x = sigx.map(|v| 1.0 / v);
        let mut scaled = self.a.clone();
        for (mut col, d) in scaled.column_iter_mut().zip(inv_x.iter()) {
            col *= d.sqrt();
        }
        let mut small = &scaled * scaled.transpose();
        for i in 0..small.nrows() {
            small[(i, i)] += 1.0 / siga[i];
        }
        let chol = Cholesky::new(small)?;
        let mut out = Vec::with_capacity(rhs.len());
        for r in rhs {
            let y = r.component_mul(&inv_x);
            let z = chol.solve(&(&self.a * &y));
            let x = &y - (self.a.tr_mul(&z)).component_mul(&inv_x);
            let check = sigx.component_mul(&x) + self.a.tr_mul(&siga.component_mul(&(&self.a * &x)));
            if !((check - *r).norm() <= 1e-8 * r.norm()) {
                return None;
            }
            out.push(x);
        }
        Some(out)
    }

    /// `min s  s.t. |A x - b| <= lambda + s`, stopped as soon as `s` is
    /// safely negative. An optimum with `s >= 0` comes back with its
    /// multipliers so the caller can price new columns.
    fn phase1(&self, x0: DVector<f64>) -> Result<PhaseOne> {
        let lam = self.lambda;
        let cfg = self.cfg;
        let target = -0.25 * lam;
        let (m, n) = self.a.shape();
        let mut x = x0;
        let r = self.residual(&x);
        let mut s = r.amax() - lam + 0.1 * (1.0 + self.b.amax());
        let mut f3 = r.add_scalar(-lam - s);
        let mut f4 = (-&r).add_scalar(-lam - s);
        let mut l3 = f3.map(|v| -1.0 / v);
        let mut l4 = f4.map(|v| -1.0 / v);
        let n_ineq = (2 * m) as f64;
        let mut iterations = 0;
        while iterations < cfg.max_outer_iters {
            if s <= target {
                return Ok(Ok((x, iterations)));
            }
            let sdg = -(f3.dot(&l3) + f4.dot(&l4));
            if sdg <= cfg.duality_gap_tol.min(0.01 * lam) {
                break;
            }
            iterations += 1;
            let it = sdg / (MU * n_ineq);
            let siga = DVector::from_fn(m, |j, _| -l3[j] / f3[j] - l4[j] / f4[j]);
            let sigb = DVector::from_fn(m, |j, _| l3[j] / f3[j] - l4[j] / f4[j]);
            let t34 = DVector::from_fn(m, |j, _| 1.0 / f3[j] - 1.0 / f4[j]);
            let w1 = self.a.tr_mul(&t34) * it;
            let w3 = -1.0 - it * (0..m).map(|j| 1.0 / f3[j] + 1.0 / f4[j]).sum::<f64>();
            let g = self.a.tr_mul(&sigb);
            let c = siga.sum();
            let ridge = DVector::from_element(n, 1e-12 * siga.amax().max(1e-300));
            let sol = self.newton_solve(&ridge, &siga, &[&w1, &g])?;
            let ds = (w3 - g.dot(&sol[0])) / (c - g.dot(&sol[1]));
            let dx = &sol[0] - &sol[1] * ds;
            let adx = &self.a * &dx;
            let df3 = adx.add_scalar(-ds);
            let df4 = (-&adx).add_scalar(-ds);
            let dl3 = DVector::from_fn(m, |j, _| -l3[j] - it / f3[j] - l3[j] / f3[j] * df3[j]);
            let dl4 = DVector::from_fn(m, |j, _| -l4[j] - it / f4[j] - l4[j] / f4[j] * df4[j]);
            let at_nu = self.a.tr_mul(&(&l3 - &l4));
            let at_dnu = self.a.tr_mul(&(&dl3 - &dl4));
            let resnorm = |t: f64| -> f64 {
                let mut acc = 0.0;
                for i in 0..n {
                    let rx = at_nu[i] + t * at_dnu[i];
                    acc += rx * rx;
                }
                let mut rs = 1.0;
                for j in 0..m {
                    let a3 = l3[j] + t * dl3[j];
                    let a4 = l4[j] + t * dl4[j];
                    rs -= a3 + a4;
                    let c3 = -a3 * (f3[j] + t * df3[j]) - it;
                    let c4 = -a4 * (f4[j] + t * df4[j]) - it;
                    acc += c3 * c3 + c4 * c4;
                }
                (acc + rs * rs).sqrt()
            };
            let Some(step) = line_search(
                &[(&l3, &dl3), (&l4, &dl4)],
                &[(&f3, &df3), (&f4, &df4)],
                resnorm,
            ) else {
                break;
            };
            x.axpy(step, &dx, 1.0);
            s += step * ds;
            f3.axpy(step, &df3, 1.0);
            f4.axpy(step, &df4, 1.0);
            l3.axpy(step, &dl3, 1.0);
            l4.axpy(step, &dl4, 1.0);
        }
        if s < 0.0 {
            Ok(Ok((x, iterations)))
        } else {
            Ok(Err(SubOutcome::Infeasible {
                nu: &l3 - &l4,
                violation: s,
                iterations,
            }))
        }
    }

    fn phase2(&self, x0: DVector<f64>, start_iters: usize) -> Result<SubOutcome> {
        let lam = self.lambda;
        let cfg = self.cfg;
        let (m, n) = self.a.shape();
        let w = &self.w;
        let mut x = x0;
        let mut u = self.initial_bounds(&x);
        let r = self.residual(&x);
        let mut bar = Barrier::new([&x - &u, -&x - &u, r.add_scalar(-lam), (-&r).add_scalar(-lam)]);
        let n_ineq = bar.count() as f64;
        let mut iterations = start_iters;
        for _ in 0..cfg.max_outer_iters {
            let sdg = bar.surrogate_gap();
            if sdg <= cfg.duality_gap_tol {
                break;
            }
            iterations += 1;
            let it = sdg / (MU * n_ineq);
            let red = Reduced::new(&bar);
            let [f1, f2, f3, f4] = &bar.f;
            let [l1, l2, l3, l4] = &bar.l;
            let t34 = DVector::from_fn(m, |j, _| 1.0 / f3[j] - 1.0 / f4[j]);
            let at34 = self.a.tr_mul(&t34);
            let w1 = DVector::from_fn(n, |i, _| it * (1.0 / f1[i] - 1.0 / f2[i] + at34[i]));
            let w2 = DVector::from_fn(n, |i, _| -w[i] - it * (1.0 / f1[i] + 1.0 / f2[i]));
            let rhs = DVector::from_fn(n, |i, _| w1[i] - red.sig12[i] * w2[i] / red.sig11[i]);
            let dx = self.newton_solve(&red.sigx, &red.siga, &[&rhs])?.remove(0);
            let du = DVector::from_fn(n, |i, _| (w2[i] - red.sig12[i] * dx[i]) / red.sig11[i]);
            let adx = &self.a * &dx;
            let df = [&dx - &du, -&dx - &du, adx.clone(), -&adx];
            let dl = bar.dual_steps(&df, it);
            let dnu = &dl[2] - &dl[3];
            let at_nu = self.a.tr_mul(&bar.nu());
            let at_dnu = self.a.tr_mul(&dnu);
            let resnorm = |t: f64| -> f64 {
                let mut acc = 0.0;
                for i in 0..n {
                    let a1 = l1[i] + t * dl[0][i];
                    let a2 = l2[i] + t * dl[1][i];
                    let rx = a1 - a2 + at_nu[i] + t * at_dnu[i];
                    let ru = w[i] - a1 - a2;
                    let c1 = -a1 * (f1[i] + t * df[0][i]) - it;
                    let c2 = -a2 * (f2[i] + t * df[1][i]) - it;
                    acc += rx * rx + ru * ru + c1 * c1 + c2 * c2;
                }
                for j in 0..m {
                    let a3 = l3[j] + t * dl[2][j];
                    let a4 = l4[j] + t * dl[3][j];
                    let c3 = -a3 * (f3[j] + t * df[2][j]) - it;
                    let c4 = -a4 * (f4[j] + t * df[3][j]) - it;
                    acc += c3 * c3 + c4 * c4;
                }
                acc.sqrt()
            };
            let Some(step) = bar.step(&df, &dl, resnorm) else {
                break;
            };
            x.axpy(step, &dx, 1.0);
            u.axpy(step, &du, 1.0);
            bar.advance(step, &df, &dl);
        }
        Ok(SubOutcome::Solved {
            x,
            nu: bar.nu(),
            iterations,
        })
    }
}

/// Jacobi-preconditioned CG on an explicit SPD matrix; returns the best
/// iterate and its relative residual.
fn dense_pcg(h: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64, max_iters: usize) -> (DVector<f64>, f64) {
    let n = rhs.len();
    let bnorm = rhs.norm();
    if bnorm == 0.0 {
        return (DVector::zeros(n), 0.0);
    }
    let diag = h.diagonal().map(|d| if d > 0.0 { d } else { 1.0 });
    let mut x = DVector::zeros(n);
    let mut r = rhs.clone();
    let mut z = r.component_div(&diag);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let mut best = (x.clone(), 1.0);
    for _ in 0..max_iters {
        let hd = h * &d;
        let dhd = d.dot(&hd);
        if !(dhd > 0.0) {
            break;
        }
        let alpha = rz / dhd;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        let res = r.norm() / bnorm;
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= tol {
            break;
        }
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        d = &z + &d * (rz_new / rz);
        rz = rz_new;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64) -> SolverConfig {
        SolverConfig::default().with_lambda(lambda)
    }

    fn spd3() -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 2.0, 0.4, 0.0, 0.4, 0.7]),
        )
    }

    #[test]
    fn zero_is_returned_when_feasible() {
        let op = IdentityOperator { dim: 2 };
        let rep = solve_l1_dantzig(&op, &[0.0, 0.0], &cfg(0.1)).unwrap();
        assert_eq!(rep.solution, vec![0.0, 0.0]);
        assert_eq!(rep.objective, 0.0);
        assert!(rep.converged);
    }

    #[test]
    fn identity_operator_soft_thresholds() {
        let op = IdentityOperator { dim: 2 };
        let rep = solve_l1_dantzig(&op, &[2.0, 0.0], &cfg(1.0)).unwrap();
        assert!(rep.converged);
        assert!((rep.objective - 1.0).abs() < 1e-6, "{rep:?}");
        assert!((rep.solution[0] - 1.0).abs() < 1e-6);
        assert!(rep.solution[1].abs() < 1e-6);
        assert!(rep.max_constraint_violation <= 1.0 + 1e-6);
    }

    #[test]
    fn matrix_operator_products() {
        let id = matrix_operator(DMatrix::identity(3, 3)).unwrap();
        let mut out = vec![0.0; 3];
        id.apply(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
        let perm = matrix_operator(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let mut out = vec![0.0; 2];
        perm.apply(&[5.0, 7.0], &mut out);
        assert_eq!(out, vec![7.0, 5.0]);
        assert!(matrix_operator(DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn sylvester_with_identities_is_identity() {
        let i3 = DMatrix::identity(3, 3);
        let op = sylvester_operator(&i3, &i3).unwrap();
        let x: Vec<f64> = (0..9).map(|v| v as f64 - 3.5).collect();
        let mut out = vec![0.0; 9];
        op.apply(&x, &mut out);
        assert_eq!(out, x);
    }

    #[test]
    fn sylvester_diagonal_example() {
        let s1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let s2 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        let op = sylvester_operator(&s1, &s2).unwrap();
        let mut out = vec![0.0; 4];
        op.apply(DMatrix::<f64>::identity(2, 2).as_slice(), &mut out);
        assert_eq!(out, vec![3.0, 0.0, 0.0, 8.0]);
        assert!(sylvester_operator(&s1, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn half_vectorization_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let h = half_vectorize(&m);
        assert_eq!(h, vec![1.0, 2.0, 4.0, 3.0, 5.0, 6.0]);
        assert_eq!(half_unvectorize(&h, 3), m);
    }

    #[test]
    fn operator_adjoints_are_consistent() {
        let (s1, s2) = spd3();
        let sym = symmetric_sylvester_operator(&s1, &s2).unwrap();
        let full = sylvester_operator(&s1, &s2).unwrap();
        for seed in 0..5 {
            assert!(adjoint_mismatch(&sym, seed) < 1e-12);
            assert!(adjoint_mismatch(&full, seed) < 1e-12);
        }
    }

    #[test]
    fn column_entries_match_unit_probes() {
        struct Probe<'a>(&'a dyn ConstraintOperator);
        impl ConstraintOperator for Probe<'_> {
            fn dim_in(&self) -> usize {
                self.0.dim_in()
            }
            fn dim_out(&self) -> usize {
                self.0.dim_out()
            }
            fn apply(&self, x: &[f64], out: &mut [f64]) {
                self.0.apply(x, out)
            }
            fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
                self.0.apply_adjoint(y, out)
            }
        }
        let (s1, s2) = spd3();
        let ops: Vec<Box<dyn ConstraintOperator>> = vec![
            Box::new(sylvester_operator(&s1, &s2).unwrap()),
            Box::new(symmetric_sylvester_operator(&s1, &s2).unwrap()),
            Box::new(matrix_operator(s1.clone()).unwrap()),
        ];
        for op in &ops {
            let rows: Vec<usize> = (0..op.dim_out()).rev().collect();
            for col in 0..op.dim_in() {
                let mut fast = vec![0.0; rows.len()];
                let mut slow = vec![0.0; rows.len()];
                op.column_entries(col, &rows, &mut fast);
                Probe(op.as_ref()).column_entries(col, &rows, &mut slow);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn symmetric_formulation_matches_full() {
        let (s1, s2) = spd3();
        let target =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.3, 0.4, -0.5, 0.2, -0.3, 0.2, 0.8]);
        let full = sylvester_operator(&s1, &s2).unwrap();
        let sym = symmetric_sylvester_operator(&s1, &s2).unwrap();
        for lam in [0.01, 0.1, 0.3] {
            let a = solve_l1_dantzig(&full, target.as_slice(), &cfg(lam)).unwrap();
            let b = solve_weighted_l1_dantzig(
                &sym,
                &half_vectorize(&target),
                &sym.l1_weights(),
                &cfg(lam),
            )
            .unwrap();
            assert!((a.objective - b.objective).abs() < 1e-6, "{} {}", a.objective, b.objective);
        }
    }

    #[test]
    fn lambda_zero_recovers_the_unique_solution() {
        let op = IdentityOperator { dim: 3 };
        let rep = solve_l1_dantzig(&op, &[2.0, 0.0, -1.0], &cfg(0.0)).unwrap();
        assert!((rep.solution[0] - 2.0).abs() < 1e-6);
        assert!((rep.solution[2] + 1.0).abs() < 1e-6);
        assert!(rep.max_constraint_violation <= 10.0 * 1e-7);
    }

    #[test]
    fn infeasible_programs_are_reported() {
        // x1 = 1 and x1 = -1 cannot both hold within 0.1
        let op = matrix_operator(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        let err = solve_l1_dantzig(&op, &[1.0, -1.0], &cfg(0.1)).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }), "{err:?}");
    }

    #[test]
    fn tall_feasible_program() {
        let op = matrix_operator(DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0])).unwrap();
        let rep = solve_l1_dantzig(&op, &[1.0, 1.3, 0.8], &cfg(0.3)).unwrap();
        assert!(rep.converged);
        // feasible x in [1.0, 1.1]; minimal |x| is 1.0
        assert!((rep.objective - 1.0).abs() < 1e-6, "{rep:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let op = IdentityOperator { dim: 2 };
        assert!(solve_l1_dantzig(&op, &[1.0], &cfg(0.1)).is_err());
        assert!(solve_l1_dantzig(&op, &[1.0, f64::INFINITY], &cfg(0.1)).is_err());
        assert!(solve_l1_dantzig(&op, &[1.0, 1.0], &cfg(-1.0)).is_err());
    }

    #[test]
    fn top_indices_orders_and_breaks_ties_low() {
        assert_eq!(top_indices(&[0.5, 2.0, 0.5, -1.0], 0.0, 10), vec![1, 0, 2]);
        assert_eq!(top_indices(&[0.5, 2.0, 0.5], 0.0, 2), vec![1, 0]);
    }
}
