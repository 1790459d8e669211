//! Dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  lb <= x <= ub
//!                 C x <= d
//! ```
//!
//! with a dual active-set method in the spirit of Goldfarb and Idnani: start
//! from a dual-feasible active set (the unconstrained minimum, or the set of
//! constraints tight at a warm-start point), then repeatedly pick the most
//! violated constraint and move primal and dual variables until it becomes
//! active, dropping constraints whose multipliers reach zero on the way.
//! Every working-set solve is recomputed from the Cholesky factor of `H` and a
//! fresh QR factorization, which is cheap at the problem sizes this crate
//! deals with (tens of variables) and keeps the iterates free of update drift.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("lower bound exceeds upper bound at index {0}")]
    InvertedBounds(usize),
    #[error("Hessian is not positive definite even after regularization")]
    NotConvex,
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// `m x n` inequality matrix, `C x <= d`.
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl QuadraticProgram {
    /// Problem with no bounds and no inequality rows.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::Dimension(format!("H is {}x{}, g has {n}", self.h.nrows(), self.h.ncols())));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(QpError::Dimension("bounds length differs from g".into()));
        }
        if self.c.ncols() != n || self.c.nrows() != self.d.len() {
            return Err(QpError::Dimension(format!(
                "C is {}x{}, d has {}",
                self.c.nrows(),
                self.c.ncols(),
                self.d.len()
            )));
        }
        if self.h.iter().chain(self.g.iter()).chain(self.c.iter()).chain(self.d.iter()).any(|v| !v.is_finite())
            || self.lb.iter().chain(self.ub.iter()).any(|v| v.is_nan())
        {
            return Err(QpError::NonFinite);
        }
        let scale = self.h.amax().max(1.0);
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        if let Some(i) = (0..n).find(|&i| self.lb[i] > self.ub[i]) {
            return Err(QpError::InvertedBounds(i));
        }
        Ok(())
    }

    /// Inequality constraint `a' x <= b` for the given index.
    fn constraint(&self, id: Constraint) -> (ConstraintRow<'_>, f64) {
        match id {
            Constraint::Upper(i) => (ConstraintRow::Unit(i, 1.0), self.ub[i]),
            Constraint::Lower(i) => (ConstraintRow::Unit(i, -1.0), -self.lb[i]),
            Constraint::Row(k) => (ConstraintRow::Dense(k, &self.c), self.d[k]),
        }
    }

    fn all_constraints(&self) -> impl Iterator<Item = Constraint> + '_ {
        let n = self.n();
        (0..n)
            .filter(|&i| self.ub[i].is_finite())
            .map(Constraint::Upper)
            .chain((0..n).filter(|&i| self.lb[i].is_finite()).map(Constraint::Lower))
            .chain((0..self.m()).map(Constraint::Row))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Constraint {
    Upper(usize),
    Lower(usize),
    Row(usize),
}

enum ConstraintRow<'a> {
    Unit(usize, f64),
    Dense(usize, &'a DMatrix<f64>),
}

impl ConstraintRow<'_> {
    fn dot(&self, x: &DVector<f64>) -> f64 {
        match *self {
            ConstraintRow::Unit(i, s) => s * x[i],
            ConstraintRow::Dense(k, c) => {
                let mut acc = 0.0;
                for j in 0..c.ncols() {
                    acc += c[(k, j)] * x[j];
                }
                acc
            }
        }
    }

    fn write_into(&self, out: &mut [f64]) {
        match *self {
            ConstraintRow::Unit(i, s) => {
                out.fill(0.0);
                out[i] = s;
            }
            ConstraintRow::Dense(k, c) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = c[(k, j)];
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// Non-negative multipliers for `x <= ub`, `x >= lb` and `C x <= d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub upper: DVector<f64>,
    pub lower: DVector<f64>,
    pub rows: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            upper: DVector::zeros(n),
            lower: DVector::zeros(n),
            rows: DVector::zeros(m),
        }
    }

    fn get_mut(&mut self, c: Constraint) -> &mut f64 {
        match c {
            Constraint::Upper(i) => &mut self.upper[i],
            Constraint::Lower(i) => &mut self.lower[i],
            Constraint::Row(k) => &mut self.rows[k],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub multipliers: Multipliers,
    pub active_set: Vec<Constraint>,
    /// Whether Tikhonov regularization was added to `H`.
    pub regularized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Absolute primal feasibility tolerance reported for `Optimal` solutions.
    pub feasibility_tolerance: f64,
    /// Diagonal shift added when `H` looks singular.
    pub regularization: f64,
    /// Smallest-eigenvalue estimate below which `regularization` kicks in.
    pub regularization_threshold: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            feasibility_tolerance: 1e-8,
            regularization: 1e-9,
            regularization_threshold: 1e-10,
        }
    }
}

/// Solver instance; owns its scratch space. Not shareable between threads
/// while solving, but independent instances are.
#[derive(Clone, Debug, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

/// Max of stationarity, primal infeasibility, complementarity and dual infeasibility.
pub fn kkt_residual(qp: &QuadraticProgram, x: &DVector<f64>, mult: &Multipliers) -> f64 {
    let mut grad = &qp.h * x + &qp.g + &mult.upper - &mult.lower;
    if qp.m() > 0 {
        grad += qp.c.transpose() * &mult.rows;
    }
    let mut res = grad.amax();
    for i in 0..qp.n() {
        for (lam, slack) in [(mult.upper[i], qp.ub[i] - x[i]), (mult.lower[i], x[i] - qp.lb[i])] {
            res = res.max(-slack).max(-lam);
            if slack.is_finite() {
                res = res.max((lam * slack).abs());
            } else if lam != 0.0 {
                res = res.max(lam.abs());
            }
        }
    }
    if qp.m() > 0 {
        let cx = &qp.c * x;
        for k in 0..qp.m() {
            let slack = qp.d[k] - cx[k];
            let lam = mult.rows[k];
            res = res.max(-slack).max(-lam).max((lam * slack).abs());
        }
    }
    res
}

/// Working-set data: Cholesky factor of `H` and the thin QR of `L^-1 N`.
struct WorkingSet {
    active: Vec<Constraint>,
    /// `L^-1 N` (n x k)
    m: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

struct Core<'a> {
    qp: &'a QuadraticProgram,
    chol: Cholesky<f64, Dyn>,
    /// `L^-1 g`
    wg: DVector<f64>,
    scratch: Vec<f64>,
}

impl<'a> Core<'a> {
    fn l_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().solve_lower_triangular(v).expect("non-singular factor")
    }

    fn lt_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .tr_solve_lower_triangular(v)
            .expect("non-singular factor")
    }

    fn normal(&mut self, c: Constraint) -> DVector<f64> {
        let (row, _) = self.qp.constraint(c);
        self.scratch.resize(self.qp.n(), 0.0);
        row.write_into(&mut self.scratch);
        DVector::from_column_slice(&self.scratch)
    }

    fn working_set(&mut self, active: Vec<Constraint>) -> WorkingSet {
        let n = self.qp.n();
        let k = active.len();
        let mut m = DMatrix::zeros(n, k);
        for (j, c) in active.iter().enumerate() {
            let a = self.normal(*c);
            m.set_column(j, &self.l_inv(&a));
        }
        let (q, r) = if k == 0 {
            (DMatrix::zeros(n, 0), DMatrix::zeros(0, 0))
        } else {
            let qr = m.clone().qr();
            (qr.q(), qr.r())
        };
        WorkingSet { active, m, q, r }
    }

    /// Primal/dual solution of the equality problem on the working set.
    fn equality_solution(&self, ws: &WorkingSet) -> (DVector<f64>, DVector<f64>) {
        let k = ws.active.len();
        if k == 0 {
            return (-self.lt_inv(&self.wg), DVector::zeros(0));
        }
        let b = DVector::from_iterator(k, ws.active.iter().map(|c| self.qp.constraint(*c).1));
        let rhs = -(b + ws.m.transpose() * &self.wg);
        // R' R lambda = rhs
        let y = ws.r.tr_solve_upper_triangular(&rhs).expect("independent working set");
        let lambda = ws.r.solve_upper_triangular(&y).expect("independent working set");
        let x = -self.lt_inv(&(&self.wg + &ws.m * &lambda));
        (x, lambda)
    }

    /// Step directions for adding constraint `p`: primal `z` and dual `r`.
    /// Returns `None` for `z` when `a_p` is linearly dependent on the working set.
    fn step(&mut self, ws: &WorkingSet, p: Constraint) -> (Option<DVector<f64>>, DVector<f64>) {
        let a = self.normal(p);
        let w = self.l_inv(&a);
        let k = ws.active.len();
        let (proj, r) = if k == 0 {
            (w.clone(), DVector::zeros(0))
        } else {
            let qtw = ws.q.transpose() * &w;
            let r = ws.r.solve_upper_triangular(&qtw).expect("independent working set");
            (&w - &ws.q * qtw, r)
        };
        let dependent = proj.norm() <= 1e-10 * w.norm().max(1e-300);
        let z = if dependent { None } else { Some(self.lt_inv(&proj)) };
        (z, r)
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&mut self, qp: &QuadraticProgram, warm_start: Option<&DVector<f64>>) -> Result<QpSolution, QpError> {
        qp.validate()?;
        let n = qp.n();
        let (chol, regularized) = self.factor(&qp.h)?;
        let wg = chol.l_dirty().solve_lower_triangular(&qp.g).expect("non-singular factor");
        let mut core = Core {
            qp,
            chol,
            wg,
            scratch: vec![0.0; n],
        };
        let stop_tol = 0.01 * self.settings.feasibility_tolerance;

        // initial working set from the warm start
        let mut active: Vec<Constraint> = Vec::new();
        if let Some(w) = warm_start {
            if w.len() == n && w.iter().all(|v| v.is_finite()) {
                for c in qp.all_constraints() {
                    let (row, b) = qp.constraint(c);
                    if (row.dot(w) - b).abs() <= 1e-9 * (1.0 + b.abs()) {
                        active.push(c);
                    }
                }
            }
        }
        let mut iterations = 0;
        let mut ws = core.working_set(Vec::new());
        if !active.is_empty() {
            // keep a linearly independent subset, in order
            let mut kept = Vec::new();
            for c in active {
                let trial = core.working_set(kept.clone());
                if core.step(&trial, c).0.is_some() {
                    kept.push(c);
                }
                if kept.len() == n {
                    break;
                }
            }
            ws = core.working_set(kept);
        }
        let (mut x, mut lambda) = core.equality_solution(&ws);
        // restore dual feasibility by dropping negative multipliers
        while let Some((idx, _)) = lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            let mut act = ws.active.clone();
            act.remove(idx);
            ws = core.working_set(act);
            (x, lambda) = core.equality_solution(&ws);
            iterations += 1;
        }

        let all: Vec<Constraint> = qp.all_constraints().collect();
        let status = 'outer: loop {
            // most violated inactive constraint
            let mut worst: Option<(Constraint, f64)> = None;
            for &c in &all {
                if ws.active.contains(&c) {
                    continue;
                }
                let (row, b) = qp.constraint(c);
                let viol = row.dot(&x) - b;
                if viol > stop_tol && worst.map_or(true, |(_, v)| viol > v) {
                    worst = Some((c, viol));
                }
            }
            let Some((p, _)) = worst else {
                break QpStatus::Optimal;
            };

            let mut lambda_p = 0.0;
            loop {
                if iterations >= self.settings.max_iterations {
                    break 'outer QpStatus::MaxIterations;
                }
                iterations += 1;
                let (z, r) = core.step(&ws, p);
                let (row_p, b_p) = qp.constraint(p);
                let viol = row_p.dot(&x) - b_p;
                let full = z.as_ref().map(|z| {
                    let az = row_p.dot(z);
                    if az > 0.0 {
                        viol.max(0.0) / az
                    } else {
                        f64::INFINITY
                    }
                });
                let mut partial: Option<(usize, f64)> = None;
                for (j, rj) in r.iter().enumerate() {
                    if *rj > 1e-12 {
                        let t = lambda[j] / rj;
                        if partial.map_or(true, |(_, best)| t < best) {
                            partial = Some((j, t));
                        }
                    }
                }
                let full_t = full.unwrap_or(f64::INFINITY);
                match partial {
                    None if !full_t.is_finite() => break 'outer QpStatus::Infeasible,
                    Some((j, t2)) if t2 < full_t => {
                        if let Some(z) = &z {
                            x -= z * t2;
                        }
                        lambda -= &r * t2;
                        lambda_p += t2;
                        let mut act = ws.active.clone();
                        act.remove(j);
                        let mut lam: Vec<f64> = lambda.iter().copied().collect();
                        lam.remove(j);
                        lambda = DVector::from_vec(lam);
                        ws = core.working_set(act);
                    }
                    _ => {
                        let z = z.expect("finite full step implies a primal direction");
                        x -= &z * full_t;
                        let mut act = ws.active.clone();
                        act.push(p);
                        ws = core.working_set(act);
                        (x, lambda) = core.equality_solution(&ws);
                        // clip round-off in the multipliers
                        lambda.iter_mut().for_each(|l| *l = l.max(0.0));
                        let _ = lambda_p;
                        break;
                    }
                }
            }
        };

        let mut mult = Multipliers::zeros(n, qp.m());
        for (c, l) in ws.active.iter().zip(lambda.iter()) {
            *mult.get_mut(*c) = l.max(0.0);
        }
        let kkt = kkt_residual(qp, &x, &mult);
        Ok(QpSolution {
            x,
            status,
            iterations,
            kkt_residual: kkt,
            multipliers: mult,
            active_set: ws.active,
            regularized,
        })
    }

    fn factor(&self, h: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool), QpError> {
        if let Some(chol) = Cholesky::new(h.clone()) {
            let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v * v));
            if min_pivot >= self.settings.regularization_threshold {
                return Ok((chol, false));
            }
        }
        let n = h.nrows();
        let shifted = h + DMatrix::identity(n, n) * self.settings.regularization;
        Cholesky::new(shifted).map(|c| (c, true)).ok_or(QpError::NotConvex)
    }
}

/// Convenience wrapper with default settings.
pub fn solve(qp: &QuadraticProgram, warm_start: Option<&DVector<f64>>) -> Result<QpSolution, QpError> {
    QpSolver::default().solve(qp, warm_start)
}

// ---------------------------------------------------------------------------
// document form, for dumping assembled problems
// ---------------------------------------------------------------------------

/// JSON-friendly form; infinite bounds are written as `null`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QpDocument {
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub lb: Vec<Option<f64>>,
    pub ub: Vec<Option<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl From<&QuadraticProgram> for QpDocument {
    fn from(qp: &QuadraticProgram) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        let opt = |v: &DVector<f64>| v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        Self {
            h: rows(&qp.h),
            g: qp.g.iter().copied().collect(),
            lb: opt(&qp.lb),
            ub: opt(&qp.ub),
            c: rows(&qp.c),
            d: qp.d.iter().copied().collect(),
        }
    }
}

impl QpDocument {
    pub fn into_problem(self) -> Result<QuadraticProgram, QpError> {
        let n = self.g.len();
        let flat = |rows: &[Vec<f64>], ncols: usize| -> Result<DMatrix<f64>, QpError> {
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(QpError::Dimension("ragged matrix".into()));
            }
            Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
        };
        let qp = QuadraticProgram {
            h: flat(&self.h, n)?,
            g: DVector::from_vec(self.g),
            lb: DVector::from_iterator(n, self.lb.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY))),
            ub: DVector::from_iterator(n, self.ub.iter().map(|v| v.unwrap_or(f64::INFINITY))),
            c: flat(&self.c, n)?,
            d: DVector::from_vec(self.d),
        };
        qp.validate()?;
        Ok(qp)
    }
}
