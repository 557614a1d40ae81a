//! Small dense semidefinite programs over moment matrices.
//!
//! A problem optimizes an affine function of moment variables `m` subject to
//! `Gamma(m) ⪰ 0` (entries of `Gamma` are either fixed constants or
//! variables) and extra affine constraints `f(m) {=, >=, <=} rhs`.
//!
//! Equality constraints are eliminated by substitution. The remaining free
//! moments `y` are the dual variables of a standard-form pair
//!
//! ```text
//!   min <C, X>  s.t.  <A_j, X> = b_j,  X ⪰ 0
//!   max b^T y   s.t.  Z = C - sum_j y_j A_j ⪰ 0
//! ```
//!
//! where `Z = diag(Gamma, s_1, .., s_k)` carries one 1x1 slack per
//! inequality. Moments are therefore feasible to rounding at every iterate
//! and `X` certifies the bound. The solver is an infeasible-start
//! primal-dual path following method with the HKM search direction and
//! Mehrotra's predictor-corrector.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::npa::LinearFunctional;
use crate::scalar::Real;

/// One entry of the moment matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<T> {
    Fixed(T),
    Var(usize),
}

/// Symmetric `d x d` pattern of fixed entries and variable identifications.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentLayout<T> {
    dimension: usize,
    n_variables: usize,
    cells: Vec<Cell<T>>,
}

impl<T: Real> MomentLayout<T> {
    /// `cells` is the full row-major `d x d` pattern; it must be symmetric and
    /// every variable must occur somewhere.
    pub fn new(dimension: usize, n_variables: usize, cells: Vec<Cell<T>>) -> Result<Self> {
        if cells.len() != dimension * dimension {
            return Err(Error::MalformedProblem(format!("{} cells for dimension {dimension}", cells.len())));
        }
        let mut seen = vec![false; n_variables];
        for i in 0..dimension {
            for j in 0..dimension {
                let c = cells[i * dimension + j];
                if c != cells[j * dimension + i] {
                    return Err(Error::MalformedProblem(format!("cells ({i},{j}) and ({j},{i}) differ")));
                }
                if let Cell::Var(v) = c {
                    if v >= n_variables {
                        return Err(Error::MalformedProblem(format!("variable {v} out of range")));
                    }
                    seen[v] = true;
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::MalformedProblem(format!("variable {v} does not occur in the matrix")));
        }
        Ok(Self { dimension, n_variables, cells })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn n_variables(&self) -> usize {
        self.n_variables
    }

    pub fn cell(&self, i: usize, j: usize) -> Cell<T> {
        self.cells[i * self.dimension + j]
    }

    /// The numeric moment matrix for an assignment.
    pub fn reconstruct(&self, moments: &[T]) -> Mat<T> {
        let d = self.dimension;
        let data = self
            .cells
            .iter()
            .map(|c| match *c {
                Cell::Fixed(v) => v,
                Cell::Var(k) => moments[k],
            })
            .collect();
        Mat::from_rows(d, d, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Eq,
    Ge,
    Le,
}

impl Relation {
    fn keyword(self) -> &'static str {
        match self {
            Relation::Eq => "eq",
            Relation::Ge => "ge",
            Relation::Le => "le",
        }
    }
}

/// `functional  relation  rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub functional: LinearFunctional<T>,
    pub relation: Relation,
    pub rhs: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem<T> {
    pub layout: Arc<MomentLayout<T>>,
    pub objective: LinearFunctional<T>,
    pub constraints: Vec<Constraint<T>>,
}

impl<T: Real> SdpProblem<T> {
    pub fn new(layout: Arc<MomentLayout<T>>, objective: LinearFunctional<T>) -> Self {
        Self { layout, objective, constraints: Vec::new() }
    }

    pub fn with_constraint(mut self, functional: LinearFunctional<T>, relation: Relation, rhs: T) -> Self {
        self.constraints.push(Constraint { functional, relation, rhs });
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.layout.n_variables();
        let check = |f: &LinearFunctional<T>, what: &str| match f.max_variable() {
            Some(v) if v >= n => Err(Error::MalformedProblem(format!("{what} references unknown variable {v}"))),
            _ => Ok(()),
        };
        check(&self.objective, "objective")?;
        for c in &self.constraints {
            check(&c.functional, "constraint")?;
            if !c.rhs.is_finite() {
                return Err(Error::MalformedProblem("non-finite right-hand side".into()));
            }
        }
        Ok(())
    }

    /// Text serialization for debugging; [`SdpProblem::from_str`] reads it back.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let l = &self.layout;
        let _ = writeln!(out, "sdp 1");
        let _ = writeln!(out, "dimension {}", l.dimension);
        let _ = writeln!(out, "variables {}", l.n_variables);
        for i in 0..l.dimension {
            for j in i..l.dimension {
                match l.cell(i, j) {
                    Cell::Fixed(v) => writeln!(out, "pin {i} {j} {v}"),
                    Cell::Var(k) => writeln!(out, "var {i} {j} {k}"),
                }
                .expect("write to string");
            }
        }
        let functional = |f: &LinearFunctional<T>| {
            let mut s = format!("{}", f.constant);
            for (k, v) in &f.terms {
                let _ = write!(s, " {k}:{v}");
            }
            s
        };
        let _ = writeln!(out, "objective {}", functional(&self.objective));
        for c in &self.constraints {
            let _ = writeln!(out, "constraint {} {} {}", c.relation.keyword(), c.rhs, functional(&c.functional));
        }
        out.push_str("end\n");
        out
    }
}

impl<T: Real> FromStr for SdpProblem<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |line: &str| Error::Parse(format!("SDP dump: unexpected line '{line}'"));
        let num = |t: &str| t.parse::<T>().map_err(|e| Error::Parse(format!("SDP dump: '{t}': {e}")));
        let idx = |t: &str| t.parse::<usize>().map_err(|e| Error::Parse(format!("SDP dump: '{t}': {e}")));
        let functional = |toks: &[&str]| -> Result<LinearFunctional<T>> {
            let (first, rest) = toks.split_first().ok_or_else(|| Error::Parse("SDP dump: empty functional".into()))?;
            let mut f = LinearFunctional::constant(num(first)?);
            for t in rest {
                let (k, v) = t.split_once(':').ok_or_else(|| Error::Parse(format!("SDP dump: term '{t}'")))?;
                f.add_term(idx(k)?, num(v)?);
            }
            Ok(f)
        };

        let mut dimension = None;
        let mut n_vars = None;
        let mut cells: Vec<Cell<T>> = Vec::new();
        let mut objective = None;
        let mut constraints = Vec::new();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "sdp" if toks.get(1) == Some(&"1") => {}
                "dimension" => {
                    let d = idx(toks.get(1).ok_or_else(|| bad(line))?)?;
                    dimension = Some(d);
                    cells = vec![Cell::Fixed(T::nan()); d * d];
                }
                "variables" => n_vars = Some(idx(toks.get(1).ok_or_else(|| bad(line))?)?),
                "pin" | "var" if toks.len() == 4 => {
                    let d = dimension.ok_or_else(|| bad(line))?;
                    let (i, j) = (idx(toks[1])?, idx(toks[2])?);
                    if i >= d || j >= d {
                        return Err(bad(line));
                    }
                    let c = if toks[0] == "pin" { Cell::Fixed(num(toks[3])?) } else { Cell::Var(idx(toks[3])?) };
                    cells[i * d + j] = c;
                    cells[j * d + i] = c;
                }
                "objective" => objective = Some(functional(&toks[1..])?),
                "constraint" if toks.len() >= 4 => {
                    let relation = match toks[1] {
                        "eq" => Relation::Eq,
                        "ge" => Relation::Ge,
                        "le" => Relation::Le,
                        _ => return Err(bad(line)),
                    };
                    constraints.push(Constraint { relation, rhs: num(toks[2])?, functional: functional(&toks[3..])? });
                }
                "end" => break,
                _ => return Err(bad(line)),
            }
        }
        let d = dimension.ok_or_else(|| Error::Parse("SDP dump: missing dimension".into()))?;
        if cells.iter().any(|c| matches!(c, Cell::Fixed(v) if v.is_nan())) {
            return Err(Error::Parse("SDP dump: matrix cells missing".into()));
        }
        let layout =
            MomentLayout::new(d, n_vars.ok_or_else(|| Error::Parse("SDP dump: missing variables".into()))?, cells)?;
        let problem = SdpProblem {
            layout: Arc::new(layout),
            objective: objective.ok_or_else(|| Error::Parse("SDP dump: missing objective".into()))?,
            constraints,
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality gap and relative feasibility tolerance.
    pub tolerance: f64,
    /// Smallest eigenvalue accepted on the reconstructed moment matrix.
    pub psd_tolerance: f64,
    pub max_iterations: usize,
    pub max_dimension: usize,
}

impl SolverOptions {
    pub fn for_scalar<T: Real>() -> Self {
        Self { tolerance: T::SOLVER_TOL, psd_tolerance: 1e-7f64.max(T::SOLVER_TOL * 10.0), ..Self::default() }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, psd_tolerance: 1e-7, max_iterations: 120, max_dimension: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution<T> {
    pub status: SdpStatus,
    /// Objective attained by `assignment`.
    pub value: T,
    /// Bound on the optimum from the certificate matrix: above `value` when
    /// maximizing, below it when minimizing, up to the residuals.
    pub dual_value: T,
    pub assignment: Vec<T>,
    /// Relative duality gap reached.
    pub gap: T,
    /// Largest relative residual reached (moments or certificate).
    pub infeasibility: T,
    pub min_eigenvalue: T,
    pub iterations: usize,
}

impl<T: Real> SdpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }

    /// Whether the returned point meets `tolerance` on gap and residuals
    /// and is PSD within `psd_tolerance`, whatever the status says.
    pub fn meets(&self, tolerance: f64, psd_tolerance: f64) -> bool {
        matches!(self.status, SdpStatus::Optimal | SdpStatus::NumericalFailure)
            && self.gap.to_f64_lossy() <= tolerance
            && self.infeasibility.to_f64_lossy() <= tolerance
            && self.min_eigenvalue.to_f64_lossy() >= -psd_tolerance
            && self.value.is_finite()
    }

    /// The optimal value, or an error carrying the status.
    pub fn optimal_value(&self) -> Result<T> {
        if self.is_optimal() {
            Ok(self.value)
        } else {
            Err(Error::solver(
                self.status,
                format!(
                    "after {} iterations (gap {:e}, infeasibility {:e})",
                    self.iterations,
                    self.gap.to_f64_lossy(),
                    self.infeasibility.to_f64_lossy()
                ),
            ))
        }
    }
}

/// Sparse symmetric constraint matrix: `(block, row, col, weight)` over the
/// full matrix, so `<A, X> = sum w * X[block][row][col]`.
type Sparse<T> = Vec<(usize, usize, usize, T)>;

#[derive(Debug, Clone)]
struct Blocks<T>(Vec<Mat<T>>);

impl<T: Real> Blocks<T> {
    fn zeros(sizes: &[usize]) -> Self {
        Blocks(sizes.iter().map(|&n| Mat::zeros(n, n)).collect())
    }

    fn scaled_identity(sizes: &[usize], v: T) -> Self {
        Blocks(sizes.iter().map(|&n| Mat::from_diag_value(n, v)).collect())
    }

    fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.axpy(s, b);
        }
    }

    fn add_sparse(&mut self, s: T, a: &Sparse<T>) {
        for &(b, i, j, w) in a {
            self.0[b][(i, j)] = self.0[b][(i, j)] + s * w;
        }
    }

    fn apply(&self, a: &Sparse<T>) -> T {
        a.iter().map(|&(b, i, j, w)| w * self.0[b][(i, j)]).sum()
    }

    fn zip_map(&self, other: &Self, f: impl Fn(&Mat<T>, &Mat<T>) -> Mat<T>) -> Self {
        Blocks(self.0.iter().zip(&other.0).map(|(a, b)| f(a, b)).collect())
    }

    fn inverse(&self) -> Option<Self> {
        self.0.iter().map(|m| m.spd_inverse()).collect::<Option<Vec<_>>>().map(Blocks)
    }
}

/// Largest `alpha` with `X + alpha dX ⪰ 0` (infinite if `dX ⪰ 0`).
fn max_step<T: Real>(x: &Blocks<T>, dx: &Blocks<T>) -> T {
    let mut alpha = T::infinity();
    for (xb, db) in x.0.iter().zip(&dx.0) {
        let lambda = if xb.rows() == 1 {
            db[(0, 0)] / xb[(0, 0)]
        } else {
            let l = match xb.cholesky() {
                Some(l) => l,
                None => return T::zero(),
            };
            let li = Mat::lower_inverse(&l);
            let s = li.matmul(db).matmul(&li.transpose());
            s.symmetric_eigenvalues()[0]
        };
        if lambda < T::zero() {
            alpha = alpha.min(-T::one() / lambda);
        }
    }
    alpha
}

/// Standard-form data derived from an [`SdpProblem`].
///
/// Equality constraints are eliminated first, leaving free moments `y`. The
/// moment matrix and inequality slacks form the dual slack
/// `Z = C - sum_j y_j A_j`, so `y` maps straight back to moments and every
/// equality holds by construction.
struct StandardForm<T> {
    sizes: Vec<usize>,
    /// `A_j` for each free moment.
    rows: Vec<Sparse<T>>,
    /// Objective coefficients of the free moments, negated for minimization.
    b: Vec<T>,
    c: Blocks<T>,
    /// Each original moment as `constant + sum coef * y_j`.
    recover: Vec<(T, Vec<(usize, T)>)>,
}

/// Outcome of building the standard form.
enum Built<T> {
    Form(StandardForm<T>),
    /// Nothing left to optimize; the moments are fully determined.
    Fixed(Vec<T>),
    Infeasible,
}

fn zero_tol<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(16.0))
}

/// Reduced row echelon form of the equality system over the moments.
/// Returns `(pivot variable, rhs, coefficients)` per independent row, or
/// `None` when the system is inconsistent.
fn eliminate<T: Real>(mut rows: Vec<(Vec<T>, T)>, n: usize) -> Option<Vec<(usize, T, Vec<T>)>> {
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for col in 0..n {
        let Some((best, _)) = rows
            .iter()
            .enumerate()
            .skip(r)
            .map(|(i, row)| (i, row.0[col].abs()))
            .filter(|&(_, v)| v > zero_tol::<T>())
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        else {
            continue;
        };
        rows.swap(r, best);
        let p = rows[r].0[col];
        for v in rows[r].0.iter_mut() {
            *v = *v / p;
        }
        rows[r].1 = rows[r].1 / p;
        let pivot_row = rows[r].clone();
        for (i, other) in rows.iter_mut().enumerate() {
            let f = other.0[col];
            if i == r || f == T::zero() {
                continue;
            }
            for k in 0..n {
                other.0[k] = other.0[k] - f * pivot_row.0[k];
            }
            other.1 = other.1 - f * pivot_row.1;
        }
        pivots.push(col);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    let scale = rows.iter().map(|row| row.1.abs()).fold(T::one(), |a, b| a.max(b));
    if rows[r..].iter().any(|row| row.1.abs() > T::lit(1e-9) * scale) {
        return None;
    }
    Some(rows.into_iter().take(r).zip(pivots).map(|((coef, rhs), p)| (p, rhs, coef)).collect())
}

impl<T: Real> StandardForm<T> {
    fn build(problem: &SdpProblem<T>, direction: Direction) -> Built<T> {
        let layout = &problem.layout;
        let d = layout.dimension();
        let n = layout.n_variables();

        let equalities: Vec<(Vec<T>, T)> = problem
            .constraints
            .iter()
            .filter(|c| c.relation == Relation::Eq)
            .map(|c| {
                let mut coef = vec![T::zero(); n];
                for (&k, &v) in &c.functional.terms {
                    coef[k] = coef[k] + v;
                }
                (coef, c.rhs - c.functional.constant)
            })
            .collect();
        let reduced = if equalities.is_empty() {
            Vec::new()
        } else {
            match eliminate(equalities, n) {
                Some(r) => r,
                None => return Built::Infeasible,
            }
        };
        let mut pivot_of = vec![None; n];
        for (idx, (p, _, _)) in reduced.iter().enumerate() {
            pivot_of[*p] = Some(idx);
        }
        let mut free_index = vec![usize::MAX; n];
        let mut n_free = 0;
        for k in 0..n {
            if pivot_of[k].is_none() {
                free_index[k] = n_free;
                n_free += 1;
            }
        }
        let recover: Vec<(T, Vec<(usize, T)>)> = (0..n)
            .map(|k| match pivot_of[k] {
                None => (T::zero(), vec![(free_index[k], T::one())]),
                Some(idx) => {
                    let (_, rhs, coef) = &reduced[idx];
                    let terms = (0..n)
                        .filter(|&j| pivot_of[j].is_none() && coef[j].abs() > zero_tol::<T>())
                        .map(|j| (free_index[j], -coef[j]))
                        .collect();
                    (*rhs, terms)
                }
            })
            .collect();
        let substitute = |f: &LinearFunctional<T>| -> (T, Vec<T>) {
            let mut constant = f.constant;
            let mut coef = vec![T::zero(); n_free];
            for (&k, &v) in &f.terms {
                constant = constant + v * recover[k].0;
                for &(j, w) in &recover[k].1 {
                    coef[j] = coef[j] + v * w;
                }
            }
            (constant, coef)
        };

        let inequalities: Vec<&Constraint<T>> =
            problem.constraints.iter().filter(|c| c.relation != Relation::Eq).collect();
        if n_free == 0 {
            let moments: Vec<T> = recover.iter().map(|r| r.0).collect();
            return Built::Fixed(moments);
        }

        let mut sizes = vec![d];
        let mut c0 = Mat::zeros(d, d);
        let mut entries: Vec<std::collections::BTreeMap<(usize, usize, usize), T>> =
            vec![std::collections::BTreeMap::new(); n_free];
        for i in 0..d {
            for j in 0..d {
                match layout.cell(i, j) {
                    Cell::Fixed(v) => c0[(i, j)] = v,
                    Cell::Var(k) => {
                        c0[(i, j)] = recover[k].0;
                        for &(f, w) in &recover[k].1 {
                            let e = entries[f].entry((0, i, j)).or_insert(T::zero());
                            *e = *e - w;
                        }
                    }
                }
            }
        }
        let mut slack_constants = Vec::new();
        for c in inequalities {
            let (constant, coef) = substitute(&c.functional);
            // slack = s (f(y) - rhs) >= 0
            let s = if c.relation == Relation::Ge { T::one() } else { -T::one() };
            if coef.iter().all(|v| v.abs() <= zero_tol::<T>()) {
                if s * (constant - c.rhs) < -zero_tol::<T>() * (T::one() + c.rhs.abs()) {
                    return Built::Infeasible;
                }
                continue;
            }
            let block = sizes.len();
            sizes.push(1);
            slack_constants.push(s * (constant - c.rhs));
            for (j, &v) in coef.iter().enumerate() {
                if v != T::zero() {
                    entries[j].insert((block, 0, 0), -s * v);
                }
            }
        }
        let mut blocks = vec![c0];
        blocks.extend(slack_constants.into_iter().map(|v| Mat::from_diag_value(1, v)));
        let rows: Vec<Sparse<T>> = entries
            .into_iter()
            .map(|m| m.into_iter().filter(|(_, w)| *w != T::zero()).map(|((b, i, j), w)| (b, i, j, w)).collect())
            .collect();
        let (_, obj) = substitute(&problem.objective);
        let sign = match direction {
            Direction::Maximize => T::one(),
            Direction::Minimize => -T::one(),
        };
        let b = obj.into_iter().map(|v| sign * v).collect();
        Built::Form(Self { sizes, rows, b, c: Blocks(blocks), recover })
    }

    fn op(&self, x: &Blocks<T>) -> Vec<T> {
        self.rows.iter().map(|r| x.apply(r)).collect()
    }

    fn adjoint(&self, y: &[T]) -> Blocks<T> {
        let mut out = Blocks::zeros(&self.sizes);
        for (r, &yi) in self.rows.iter().zip(y) {
            out.add_sparse(yi, r);
        }
        out
    }

    /// `M_ij = <A_i, X A_j Z^{-1}>`
    fn schur(&self, x: &Blocks<T>, zinv: &Blocks<T>) -> Mat<T> {
        let m = self.rows.len();
        let mut out = Mat::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut s = T::zero();
                for &(bi, r, c, w) in &self.rows[i] {
                    let (xb, zb) = (&x.0[bi], &zinv.0[bi]);
                    for &(bj, p, q, v) in &self.rows[j] {
                        if bi == bj {
                            s = s + w * v * xb[(r, p)] * zb[(q, c)];
                        }
                    }
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    fn moments(&self, y: &[T]) -> Vec<T> {
        self.recover.iter().map(|(c, terms)| terms.iter().fold(*c, |acc, &(j, w)| acc + w * y[j])).collect()
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Cholesky of the Schur complement, with diagonal regularization if needed.
fn factor_schur<T: Real>(m: &Mat<T>) -> Option<Mat<T>> {
    if let Some(l) = m.cholesky() {
        return Some(l);
    }
    let scale = (0..m.rows()).fold(T::zero(), |a, i| a.max(m[(i, i)].abs())).max(T::one());
    let mut shift = scale * T::epsilon() * T::lit(1e2);
    for _ in 0..8 {
        let mut reg = m.clone();
        for i in 0..m.rows() {
            reg[(i, i)] = reg[(i, i)] + shift;
        }
        if let Some(l) = reg.cholesky() {
            return Some(l);
        }
        shift = shift * T::lit(100.0);
    }
    None
}

/// Cholesky solve followed by iterative refinement against `m`, which
/// recovers accuracy lost to regularization.
fn refined_solve<T: Real>(m: &Mat<T>, chol: &Mat<T>, rhs: &[T]) -> Vec<T> {
    let mut x = Mat::cholesky_solve(chol, rhs);
    let mut last = T::infinity();
    for _ in 0..4 {
        let r: Vec<T> = (0..m.rows()).map(|i| rhs[i] - (0..m.cols()).map(|j| m[(i, j)] * x[j]).sum::<T>()).collect();
        let rn = norm(&r);
        if !(rn < last) || rn == T::zero() {
            break;
        }
        last = rn;
        let dx = Mat::cholesky_solve(chol, &r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi = *xi + *di;
        }
    }
    x
}

/// Solves the problem in the given direction.
///
/// Returns `Err` only for malformed input; solver outcomes other than
/// optimality are reported through [`SdpSolution::status`].
pub fn solve<T: Real>(
    problem: &SdpProblem<T>,
    direction: Direction,
    options: &SolverOptions,
) -> Result<SdpSolution<T>> {
    problem.validate()?;
    let d = problem.layout.dimension();
    if d == 0 || d > options.max_dimension {
        return Err(Error::MalformedProblem(format!("dimension {d} outside 1..={}", options.max_dimension)));
    }
    Ok(match StandardForm::build(problem, direction) {
        Built::Form(form) => interior_point(problem, &form, direction, options),
        Built::Fixed(moments) => fixed_point(problem, options, moments),
        Built::Infeasible => failed(problem, SdpStatus::Infeasible, 0, T::nan()),
    })
}

/// All moments determined by the equalities: check the single candidate.
fn fixed_point<T: Real>(problem: &SdpProblem<T>, options: &SolverOptions, moments: Vec<T>) -> SdpSolution<T> {
    let gamma = problem.layout.reconstruct(&moments);
    let min_eigenvalue = gamma.symmetric_eigenvalues().first().copied().unwrap_or(T::zero());
    if min_eigenvalue < -T::lit(options.psd_tolerance) || !constraints_hold(problem, &moments, options) {
        return failed(problem, SdpStatus::Infeasible, 0, T::nan());
    }
    let value = problem.objective.evaluate(&moments);
    SdpSolution {
        status: SdpStatus::Optimal,
        value,
        dual_value: value,
        assignment: moments,
        gap: T::zero(),
        infeasibility: T::zero(),
        min_eigenvalue,
        iterations: 0,
    }
}

fn constraints_hold<T: Real>(problem: &SdpProblem<T>, moments: &[T], options: &SolverOptions) -> bool {
    let feas = T::lit(options.tolerance.max(1e-7) * 10.0);
    problem.constraints.iter().all(|c| {
        let v = c.functional.evaluate(moments) - c.rhs;
        let scale = T::one() + c.rhs.abs();
        match c.relation {
            Relation::Eq => v.abs() <= feas * scale,
            Relation::Ge => v >= -feas * scale,
            Relation::Le => v <= feas * scale,
        }
    })
}

fn failed<T: Real>(problem: &SdpProblem<T>, status: SdpStatus, iterations: usize, gap: T) -> SdpSolution<T> {
    SdpSolution {
        status,
        value: T::nan(),
        dual_value: T::nan(),
        assignment: vec![T::nan(); problem.layout.n_variables()],
        gap,
        infeasibility: T::nan(),
        min_eigenvalue: T::nan(),
        iterations,
    }
}

fn interior_point<T: Real>(
    problem: &SdpProblem<T>,
    form: &StandardForm<T>,
    direction: Direction,
    options: &SolverOptions,
) -> SdpSolution<T> {
    let tol = T::lit(options.tolerance);
    let one = T::one();
    let n_total = T::lit(form.sizes.iter().sum::<usize>() as f64);
    let norm_b = norm(&form.b);
    let norm_c = form.c.norm();

    // starting point scaled to the data
    let row_norms: Vec<T> = form.rows.iter().map(|r| r.iter().map(|e| e.3 * e.3).sum::<T>().sqrt()).collect();
    let mut xi = T::lit(10.0).max(n_total.sqrt());
    let mut eta = xi;
    for (bi, ni) in form.b.iter().zip(&row_norms) {
        xi = xi.max(n_total * (one + bi.abs()) / (one + *ni));
        eta = eta.max(*ni);
    }
    eta = eta.max(norm_c);
    let mut x = Blocks::scaled_identity(&form.sizes, xi);
    let mut z = Blocks::scaled_identity(&form.sizes, eta);
    let mut y = vec![T::zero(); form.rows.len()];

    let ray_tol = T::lit(1e-7);
    let mut gamma = T::lit(0.9);
    let mut best: Option<(T, T, T, Blocks<T>, Vec<T>)> = None;
    let mut stall = 0usize;
    let mut iterations = 0;

    for iter in 0..options.max_iterations {
        iterations = iter;
        let ax = form.op(&x);
        let rp: Vec<T> = form.b.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
        let aty = form.adjoint(&y);
        let mut rd = form.c.clone();
        rd.axpy(-one, &z);
        rd.axpy(-one, &aty);
        let pobj = form.c.dot(&x);
        let dobj: T = form.b.iter().zip(&y).map(|(&b, &v)| b * v).sum();
        let xz = x.dot(&z);
        let mu = xz / n_total;
        let rel_gap = xz.max((pobj - dobj).abs()) / (one + pobj.abs() + dobj.abs());
        let pinf = norm(&rp) / (one + norm_b);
        let dinf = rd.norm() / (one + norm_c);
        let err = rel_gap.max(pinf).max(dinf);

        if err <= tol {
            return finish(
                problem,
                form,
                direction,
                options,
                &x,
                &y,
                SdpStatus::Optimal,
                iter,
                rel_gap,
                pinf.max(dinf),
            );
        }
        if best.as_ref().is_none_or(|b| err < b.0 * T::lit(0.999)) {
            best = Some((err, rel_gap, pinf.max(dinf), x.clone(), y.clone()));
            stall = 0;
        } else {
            stall += 1;
        }
        // normalized rays: y with A^T y ⪯ 0 and b^T y > 0 makes the moment
        // objective unbounded; X with A(X) = 0 and <C, X> < 0 certifies
        // that no moment matrix fits
        if dobj > T::zero() {
            let mut ray = aty.clone();
            ray.axpy(one, &z);
            if ray.norm() / dobj < ray_tol && dinf < T::lit(1e-3) * (one + dobj.abs()) {
                return failed_at(problem, SdpStatus::Unbounded, iter, rel_gap, pinf.max(dinf));
            }
        }
        if pobj < T::zero() && norm(&ax) / (-pobj) < ray_tol {
            return failed_at(problem, SdpStatus::Infeasible, iter, rel_gap, pinf.max(dinf));
        }
        if stall > 12 || !err.is_finite() {
            break;
        }

        let zinv = match z.inverse() {
            Some(zi) => zi,
            None => break,
        };
        let schur = form.schur(&x, &zinv);
        let chol = match factor_schur(&schur) {
            Some(l) => l,
            None => break,
        };
        let x_rd_zinv = x.zip_map(&rd, |xb, rb| xb.matmul(rb)).zip_map(&zinv, |a, zb| a.matmul(zb).symmetrized());

        let direction_for = |sigma_mu: T, corr: Option<&Blocks<T>>| -> (Blocks<T>, Vec<T>, Blocks<T>) {
            // W = sigma mu Z^-1 - X - sym(X Rd Z^-1) - sym(corr)
            let mut w = zinv.clone();
            for blk in w.0.iter_mut() {
                *blk = blk.scaled(sigma_mu);
            }
            w.axpy(-one, &x);
            w.axpy(-one, &x_rd_zinv);
            if let Some(g) = corr {
                w.axpy(-one, g);
            }
            let aw = form.op(&w);
            let rhs: Vec<T> = rp.iter().zip(&aw).map(|(&r, &a)| r - a).collect();
            let dy = refined_solve(&schur, &chol, &rhs);
            let atdy = form.adjoint(&dy);
            let mut dz = rd.clone();
            dz.axpy(-one, &atdy);
            // dX = W + sym(X A^T(dy) Z^-1)
            let mut dx = w;
            let extra = x.zip_map(&atdy, |xb, ab| xb.matmul(ab)).zip_map(&zinv, |a, zb| a.matmul(zb).symmetrized());
            dx.axpy(one, &extra);
            (dx, dy, dz)
        };

        // predictor
        let (dxa, _, dza) = direction_for(T::zero(), None);
        let ap = one.min(max_step(&x, &dxa));
        let ad = one.min(max_step(&z, &dza));
        let mut xa = x.clone();
        xa.axpy(ap, &dxa);
        let mut za = z.clone();
        za.axpy(ad, &dza);
        let mu_aff = xa.dot(&za) / n_total;
        let ratio = (mu_aff / mu).max(T::zero());
        let sigma = one.min(ratio * ratio * ratio).max(T::zero());

        // corrector: second-order term sym(dXa dZa Z^-1)
        let corr = dxa.zip_map(&dza, |a, b| a.matmul(b)).zip_map(&zinv, |a, zb| a.matmul(zb).symmetrized());
        let (dx, dy, dz) = direction_for(sigma * mu, Some(&corr));
        let ap = one.min(gamma * max_step(&x, &dx));
        let ad = one.min(gamma * max_step(&z, &dz));
        if !(ap > T::zero()) || !(ad > T::zero()) {
            break;
        }
        x.axpy(ap, &dx);
        z.axpy(ad, &dz);
        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi = *yi + ad * *di;
        }
        gamma = T::lit(0.9) + T::lit(0.09) * ap.min(ad);
        if x.norm() > T::lit(1e14) || z.norm() > T::lit(1e14) || norm(&y) > T::lit(1e14) {
            break;
        }
    }

    // no convergence: report the best iterate as a numerical failure
    match best {
        Some((_, gap, inf, bx, by)) => {
            finish(problem, form, direction, options, &bx, &by, SdpStatus::NumericalFailure, iterations + 1, gap, inf)
        }
        None => failed(problem, SdpStatus::NumericalFailure, iterations + 1, T::nan()),
    }
}

fn failed_at<T: Real>(problem: &SdpProblem<T>, status: SdpStatus, iterations: usize, gap: T, inf: T) -> SdpSolution<T> {
    let mut s = failed(problem, status, iterations, gap);
    s.infeasibility = inf;
    s
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    problem: &SdpProblem<T>,
    form: &StandardForm<T>,
    direction: Direction,
    options: &SolverOptions,
    x: &Blocks<T>,
    y: &[T],
    mut status: SdpStatus,
    iterations: usize,
    gap: T,
    infeasibility: T,
) -> SdpSolution<T> {
    let assignment = form.moments(y);
    let gamma = problem.layout.reconstruct(&assignment);
    let min_eigenvalue = gamma.symmetric_eigenvalues().first().copied().unwrap_or(T::zero());
    let value = problem.objective.evaluate(&assignment);
    // <C, X> bounds b^T y from above; shift it back to the objective scale
    let shift = value - form.b.iter().zip(y).map(|(&b, &v)| b * v).sum::<T>() * sign_of(direction);
    let dual_value = shift + form.c.dot(x) * sign_of(direction);
    if status == SdpStatus::Optimal
        && (min_eigenvalue < -T::lit(options.psd_tolerance) || !constraints_hold(problem, &assignment, options))
    {
        status = SdpStatus::NumericalFailure;
    }
    SdpSolution { status, value, dual_value, assignment, gap, infeasibility, min_eigenvalue, iterations }
}

fn sign_of<T: Real>(direction: Direction) -> T {
    match direction {
        Direction::Maximize => T::one(),
        Direction::Minimize => -T::one(),
    }
}
