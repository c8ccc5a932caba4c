//! LMI programs and their conic backend.
//!
//! Decision variables are scalars, symmetric blocks or general matrix blocks,
//! each flattened into scalar unknowns. Constraints are affine matrix
//! expressions required to be negative semidefinite (or equal to zero). The
//! program is handed to Clarabel's interior-point method with PSD-triangle
//! cones; every reported solution is replayed against the original
//! constraints before it is accepted.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};

use crate::error::{Error, Result};
use crate::matrixcore::{lambda_max, max_abs, symmetrize, Mat};

// Linked for the BLAS/LAPACK symbols the PSD cones need.
extern crate openblas_src;

/// Residual allowed on any constraint of a reported feasible point.
pub const FEAS_TOL: f64 = 1e-7;
/// Objective accuracy requested from the backend.
pub const OBJ_TOL: f64 = 1e-6;
/// Replay tolerance for programs whose feasibility the caller re-checks itself
/// (margin maximization): only gross backend failures are rejected.
pub const MARGIN_SOLVE_TOL: f64 = 1e-3;
/// Floor used where a strict inequality is replaced by a closed one.
pub const STRICT_EPS: f64 = 1e-8;

/// An affine matrix expression `C + sum_k x_k A_k` in the scalar unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl Affine {
    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn scalar_const(v: f64) -> Self {
        Self::constant(Mat::from_element(1, 1, v))
    }

    /// The part independent of the unknowns.
    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&k, a)| (k, f(a))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    /// `L * self`.
    pub fn lmul(&self, l: &Mat) -> Self {
        self.map(|m| l * m)
    }

    /// `self * R`.
    pub fn rmul(&self, r: &Mat) -> Self {
        self.map(|m| m * r)
    }

    /// `L^T * self * L`.
    pub fn congruence(&self, l: &Mat) -> Self {
        let lt = l.transpose();
        self.map(|m| &lt * m * l)
    }

    /// `self * M` for a 1x1 expression `self`.
    pub fn times(&self, m: &Mat) -> Self {
        assert_eq!(self.shape(), (1, 1), "times needs a scalar expression");
        Self {
            constant: m * self.constant[(0, 0)],
            terms: self.terms.iter().map(|(&k, a)| (k, m * a[(0, 0)])).collect(),
        }
    }

    /// `self + self^T`.
    pub fn sym(&self) -> Self {
        self.map(|m| m + m.transpose())
    }

    /// Sub-block view as a new expression.
    pub fn view(&self, start: (usize, usize), shape: (usize, usize)) -> Self {
        self.map(|m| m.view(start, shape).into_owned())
    }

    /// Assemble a block expression. Every row must have the same number of
    /// blocks and shapes must line up.
    pub fn block(grid: &[Vec<Affine>]) -> Result<Self> {
        let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
        let widths: Vec<usize> = grid[0].iter().map(Affine::ncols).collect();
        let (rows, cols) = (heights.iter().sum(), widths.iter().sum());
        let mut out = Affine::zeros(rows, cols);
        let mut r = 0;
        for (i, row) in grid.iter().enumerate() {
            if row.len() != widths.len() {
                return Err(Error::DimensionMismatch(format!("expression block row {i} has {} blocks", row.len())));
            }
            let mut c = 0;
            for (j, b) in row.iter().enumerate() {
                if b.shape() != (heights[i], widths[j]) {
                    return Err(Error::DimensionMismatch(format!(
                        "expression block ({i},{j}) is {:?}, expected {:?}",
                        b.shape(),
                        (heights[i], widths[j])
                    )));
                }
                out.add_at(b, r, c);
                c += widths[j];
            }
            r += heights[i];
        }
        Ok(out)
    }

    /// Block diagonal expression.
    pub fn block_diag(blocks: &[Affine]) -> Self {
        let rows = blocks.iter().map(Affine::nrows).sum();
        let cols = blocks.iter().map(Affine::ncols).sum();
        let mut out = Affine::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for b in blocks {
            out.add_at(b, r, c);
            r += b.nrows();
            c += b.ncols();
        }
        out
    }

    /// Adds `other` into the sub-block starting at `(r, c)`.
    pub fn add_at(&mut self, other: &Affine, r: usize, c: usize) {
        let shape = other.shape();
        let mut sub = self.constant.view_mut((r, c), shape);
        sub += &other.constant;
        let (rows, cols) = self.shape();
        for (&k, a) in &other.terms {
            let entry = self.terms.entry(k).or_insert_with(|| Mat::zeros(rows, cols));
            let mut sub = entry.view_mut((r, c), shape);
            sub += a;
        }
    }

    /// Evaluate at a point of the flattened unknowns.
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, a) in &self.terms {
            out += a * x[k];
        }
        out
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, a| max_abs(a) > 0.0);
        self
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        assert_eq!(self.shape(), rhs.shape(), "affine shapes differ");
        self.add_at(&rhs, 0, 0);
        self
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self + (-rhs)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self * -1.0
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(self, s: f64) -> Affine {
        self.map(|m| m * s)
    }
}

impl Add<Mat> for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Mat) -> Affine {
        self.constant += rhs;
        self
    }
}

impl Sub<Mat> for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: Mat) -> Affine {
        self.constant -= rhs;
        self
    }
}

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Symmetric(usize),
    Matrix(usize, usize),
}

impl VarKind {
    fn len(self) -> usize {
        match self {
            VarKind::Scalar => 1,
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Matrix(r, c) => r * c,
        }
    }
}

#[derive(Debug, Clone)]
struct VarInfo {
    name: String,
    kind: VarKind,
    offset: usize,
}

#[derive(Debug, Clone)]
enum Constraint {
    Nsd(Affine),
    Zero(Affine),
}

/// An LMI feasibility / optimization program.
#[derive(Debug, Clone, Default)]
pub struct LmiProgram {
    vars: Vec<VarInfo>,
    n_scalar: usize,
    constraints: Vec<Constraint>,
    linear: Option<Affine>,
    quadratic: Vec<(f64, Affine)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective_value: f64,
    /// Largest constraint violation at the returned point.
    pub residual: f64,
    pub iterations: u32,
    x: Vec<f64>,
    vars: Vec<VarInfo>,
}

impl SolveReport {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }

    /// Value of a matrix (or 1x1 scalar) variable.
    pub fn value(&self, id: VarId) -> Mat {
        let info = &self.vars[id.0];
        unflatten(info.kind, &self.x[info.offset..info.offset + info.kind.len()])
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        self.value(id)[(0, 0)]
    }

    /// Evaluate an expression built against the same program.
    pub fn eval(&self, expr: &Affine) -> Mat {
        expr.eval(&self.x)
    }

    /// Variable values keyed by declared name.
    pub fn assignments(&self) -> BTreeMap<String, Mat> {
        self.vars.iter().enumerate().map(|(i, v)| (v.name.clone(), self.value(VarId(i)))).collect()
    }
}

fn unflatten(kind: VarKind, x: &[f64]) -> Mat {
    match kind {
        VarKind::Scalar => Mat::from_element(1, 1, x[0]),
        VarKind::Symmetric(n) => {
            let mut m = Mat::zeros(n, n);
            let mut k = 0;
            for j in 0..n {
                for i in 0..=j {
                    m[(i, j)] = x[k];
                    m[(j, i)] = x[k];
                    k += 1;
                }
            }
            m
        }
        VarKind::Matrix(r, c) => Mat::from_fn(r, c, |i, j| x[i * c + j]),
    }
}

/// Backend knobs.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iter: u32,
    pub tol: f64,
    pub feas_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-9, feas_tol: FEAS_TOL }
    }
}

impl LmiProgram {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarInfo { name: name.to_string(), kind, offset: self.n_scalar });
        self.n_scalar += kind.len();
        id
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarKind::Scalar)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, VarKind::Symmetric(n))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, VarKind::Matrix(rows, cols))
    }

    pub fn num_scalars(&self) -> usize {
        self.n_scalar
    }

    /// Expression for a declared variable.
    pub fn var(&self, id: VarId) -> Affine {
        let info = &self.vars[id.0];
        let mut terms = BTreeMap::new();
        match info.kind {
            VarKind::Scalar => {
                terms.insert(info.offset, Mat::from_element(1, 1, 1.0));
                Affine { constant: Mat::zeros(1, 1), terms }
            }
            VarKind::Symmetric(n) => {
                let mut k = info.offset;
                for j in 0..n {
                    for i in 0..=j {
                        let mut e = Mat::zeros(n, n);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
                Affine { constant: Mat::zeros(n, n), terms }
            }
            VarKind::Matrix(r, c) => {
                for i in 0..r {
                    for j in 0..c {
                        let mut e = Mat::zeros(r, c);
                        e[(i, j)] = 1.0;
                        terms.insert(info.offset + i * c + j, e);
                    }
                }
                Affine { constant: Mat::zeros(r, c), terms }
            }
        }
    }

    /// `expr ⪯ 0` (the symmetric part of `expr` is used).
    pub fn nsd(&mut self, expr: Affine) {
        assert_eq!(expr.nrows(), expr.ncols(), "matrix inequality must be square");
        if expr.nrows() > 0 {
            self.constraints.push(Constraint::Nsd(expr.map(symmetrize).prune()));
        }
    }

    /// `expr ⪰ 0`.
    pub fn psd(&mut self, expr: Affine) {
        self.nsd(-expr);
    }

    /// Entrywise `expr = 0`.
    pub fn zero(&mut self, expr: Affine) {
        if expr.nrows() * expr.ncols() > 0 {
            self.constraints.push(Constraint::Zero(expr.prune()));
        }
    }

    /// Adds a 1x1 expression to the (minimized) linear objective.
    pub fn minimize(&mut self, expr: Affine) {
        assert_eq!(expr.shape(), (1, 1), "objective must be scalar");
        self.linear = Some(match self.linear.take() {
            Some(l) => l + expr,
            None => expr,
        });
    }

    /// Adds `weight * ||expr||_F^2` to the objective.
    pub fn minimize_frobenius(&mut self, weight: f64, expr: Affine) {
        self.quadratic.push((weight, expr));
    }

    fn has_objective(&self) -> bool {
        self.linear.is_some() || !self.quadratic.is_empty()
    }

    /// Largest violation of any constraint at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| match c {
                Constraint::Nsd(e) => lambda_max(&e.eval(x)).max(0.0),
                Constraint::Zero(e) => max_abs(&e.eval(x)),
            })
            .fold(0.0, f64::max)
    }

    fn objective_at(&self, x: &[f64]) -> f64 {
        let lin = self.linear.as_ref().map_or(0.0, |l| l.eval(x)[(0, 0)]);
        let quad: f64 = self.quadratic.iter().map(|(w, e)| w * e.eval(x).norm_squared()).sum();
        lin + quad
    }

    pub fn solve(&self) -> Result<SolveReport> {
        self.solve_with(&SolverOptions::default())
    }

    pub fn solve_with(&self, opts: &SolverOptions) -> Result<SolveReport> {
        let n = self.n_scalar;
        // Column-wise triplets of A, right-hand side b, cone list.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

        let mut push_rows = |rows: Vec<(f64, BTreeMap<usize, f64>)>, b: &mut Vec<f64>| {
            for (rhs, coeffs) in rows {
                let r = b.len();
                b.push(rhs);
                for (k, v) in coeffs {
                    if v != 0.0 {
                        cols[k].push((r, v));
                    }
                }
            }
        };

        for c in &self.constraints {
            if let Constraint::Zero(e) = c {
                // C + sum x_k A_k = 0  <=>  A x = -C with s in {0}.
                let rows = entry_rows(e, |m, i, j| m[(i, j)], all_entries(e.shape()));
                let len = rows.len();
                push_rows(rows.into_iter().map(|(c, a)| (-c, a)).collect(), &mut b);
                cones.push(ZeroConeT(len));
            }
        }
        for c in &self.constraints {
            if let Constraint::Nsd(e) = c {
                if e.nrows() == 1 {
                    let rows = entry_rows(e, |m, i, j| m[(i, j)], vec![(0, 0)]);
                    push_rows(rows.into_iter().map(|(c, a)| (-c, a)).collect(), &mut b);
                    cones.push(NonnegativeConeT(1));
                }
            }
        }
        for c in &self.constraints {
            if let Constraint::Nsd(e) = c {
                let d = e.nrows();
                if d > 1 {
                    // s = svec(-E) = svec(-C) - sum x_k svec(A_k).
                    let rows = entry_rows(e, svec_entry, triu_entries(d));
                    push_rows(rows.into_iter().map(|(c, a)| (-c, a)).collect(), &mut b);
                    cones.push(PSDTriangleConeT(d));
                }
            }
        }

        let m = b.len();
        let a = csc_from_columns(m, cols);

        let mut p_dense = Mat::zeros(n, n);
        let mut q = vec![0.0; n];
        let mut q_const = 0.0;
        if let Some(lin) = &self.linear {
            q_const += lin.constant[(0, 0)];
            for (&k, a) in &lin.terms {
                q[k] += a[(0, 0)];
            }
        }
        for (w, e) in &self.quadratic {
            // ||C + sum x_k A_k||^2 expanded entry by entry.
            let (r, c) = e.shape();
            for i in 0..r {
                for j in 0..c {
                    let c0 = e.constant[(i, j)];
                    let coeffs: Vec<(usize, f64)> =
                        e.terms.iter().map(|(&k, a)| (k, a[(i, j)])).filter(|&(_, v)| v != 0.0).collect();
                    q_const += w * c0 * c0;
                    for &(k, ak) in &coeffs {
                        q[k] += 2.0 * w * c0 * ak;
                        for &(l, al) in &coeffs {
                            p_dense[(k, l)] += 2.0 * w * ak * al;
                        }
                    }
                }
            }
        }
        let p = csc_upper(&p_dense);

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(opts.max_iter)
            .tol_gap_abs(opts.tol)
            .tol_gap_rel(opts.tol)
            .tol_feas(opts.tol)
            .tol_infeas_abs(opts.tol)
            .tol_infeas_rel(opts.tol)
            .build()
            .map_err(|e| Error::NumericalFailure(format!("settings: {e:?}")))?;

        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::NumericalFailure(format!("setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let x = sol.x.clone();
        let residual = if x.iter().all(|v| v.is_finite()) { self.residual(&x) } else { f64::INFINITY };
        let feasible_point = residual <= opts.feas_tol;
        let done = if self.has_objective() { SolveStatus::Optimal } else { SolveStatus::Feasible };

        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                if feasible_point {
                    done
                } else {
                    return Err(Error::NumericalFailure(format!("returned point violates constraints by {residual:.3e}")));
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => return Err(Error::Unbounded),
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
            SolverStatus::InsufficientProgress if feasible_point => done,
            other => return Err(Error::NumericalFailure(format!("{other:?}"))),
        };
        let objective_value = if self.has_objective() { self.objective_at(&x) } else { 0.0 };
        let _ = q_const;
        Ok(SolveReport { status, objective_value, residual, iterations: sol.iterations, x, vars: self.vars.clone() })
    }
}

fn all_entries((r, c): (usize, usize)) -> Vec<(usize, usize)> {
    (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect()
}

/// Upper triangle, column by column, matching the PSD-triangle cone layout.
fn triu_entries(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|j| (0..=j).map(move |i| (i, j))).collect()
}

fn svec_entry(m: &Mat, i: usize, j: usize) -> f64 {
    if i == j {
        m[(i, j)]
    } else {
        std::f64::consts::SQRT_2 * m[(i, j)]
    }
}

/// For each selected entry: (constant part, coefficients per unknown).
fn entry_rows(
    e: &Affine,
    pick: impl Fn(&Mat, usize, usize) -> f64,
    entries: Vec<(usize, usize)>,
) -> Vec<(f64, BTreeMap<usize, f64>)> {
    entries
        .into_iter()
        .map(|(i, j)| {
            let coeffs = e.terms.iter().map(|(&k, a)| (k, pick(a, i, j))).filter(|&(_, v)| v != 0.0).collect();
            (pick(&e.constant, i, j), coeffs)
        })
        .collect()
}

fn csc_from_columns(m: usize, cols: Vec<Vec<(usize, f64)>>) -> CscMatrix<f64> {
    let n = cols.len();
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for mut col in cols {
        col.sort_by_key(|&(r, _)| r);
        for (r, v) in col {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

fn csc_upper(p: &Mat) -> CscMatrix<f64> {
    let n = p.nrows();
    let cols = (0..n)
        .map(|j| (0..=j).filter(|&i| p[(i, j)] != 0.0).map(|i| (i, 0.5 * (p[(i, j)] + p[(j, i)]))).collect())
        .collect();
    csc_from_columns(n, cols)
}
