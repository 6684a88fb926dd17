//! A small solver-agnostic conic program representation (linear objective,
//! zero / nonnegative / second-order / PSD cones) and a Clarabel backend.
//!
//! Hermitian matrix variables are stored as n² real scalars (diagonal, real
//! and imaginary parts of the strict upper triangle) and constrained PSD
//! through the real embedding [Re −Im; Im Re].

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;

/// Relative size below which a coefficient is treated as round-off.
pub const ROUNDOFF: f64 = 1e-14;

/// Σ coeff·x[var] + constant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(id: usize) -> Self {
        Self::term(id, 1.0)
    }

    pub fn term(id: usize, coeff: f64) -> Self {
        Self {
            terms: vec![(id, coeff)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, id: usize, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            self.terms.push((id, coeff));
        }
        self
    }

    pub fn add_expr(&mut self, other: &AffineExpr, scale: f64) -> &mut Self {
        for &(id, c) in &other.terms {
            self.add_term(id, scale * c);
        }
        self.constant += scale * other.constant;
        self
    }

    pub fn plus(mut self, other: &AffineExpr) -> Self {
        self.add_expr(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &AffineExpr) -> Self {
        self.add_expr(other, -1.0);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Merge duplicate variables and drop zeros.
    pub fn simplified(&self) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(id, c) in &self.terms {
            *acc.entry(id).or_insert(0.0) += c;
        }
        Self {
            terms: acc.into_iter().filter(|(_, c)| *c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(id, c)| c * x[id]).sum::<f64>()
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    /// Every expression equals zero.
    Zero(Vec<AffineExpr>),
    /// Every expression is ≥ 0.
    NonNeg(Vec<AffineExpr>),
    /// ‖(e_1, …, e_m)‖ ≤ e_0.
    Soc(Vec<AffineExpr>),
    /// Symmetric `dim`×`dim` matrix ⪰ 0, upper triangle listed column by
    /// column: (0,0), (0,1), (1,1), (0,2), …
    Psd { dim: usize, upper: Vec<AffineExpr> },
}

impl Cone {
    pub fn len(&self) -> usize {
        match self {
            Cone::Zero(v) | Cone::NonNeg(v) | Cone::Soc(v) => v.len(),
            Cone::Psd { upper, .. } => upper.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn exprs(&self) -> &[AffineExpr] {
        match self {
            Cone::Zero(v) | Cone::NonNeg(v) | Cone::Soc(v) => v,
            Cone::Psd { upper, .. } => upper,
        }
    }

    fn kind(&self) -> ConeKind {
        match self {
            Cone::Zero(_) => ConeKind::Zero,
            Cone::NonNeg(_) => ConeKind::NonNeg,
            Cone::Soc(_) => ConeKind::Soc,
            Cone::Psd { .. } => ConeKind::Psd,
        }
    }

    /// Amount by which `x` leaves the cone, relative to the size of the
    /// expression values.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let vals: Vec<f64> = self.exprs().iter().map(|e| e.eval(x)).collect();
        let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let raw = match self {
            Cone::Zero(_) => vals.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Cone::NonNeg(_) => vals.iter().fold(0.0f64, |m, v| m.max(-v)),
            Cone::Soc(_) => {
                let tail = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                (tail - vals[0]).max(0.0)
            }
            Cone::Psd { dim, .. } => {
                let m = unpack_upper(*dim, &vals);
                let min = SymmetricEigen::new(m).eigenvalues.min();
                (-min).max(0.0)
            }
        };
        raw / scale
    }
}

fn unpack_upper(dim: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for j in 0..dim {
        for i in 0..=j {
            m[(i, j)] = vals[k];
            m[(j, i)] = vals[k];
            k += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConeKind {
    Zero,
    NonNeg,
    Soc,
    Psd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub cone: Cone,
}

/// Handle to a Hermitian n×n block of real variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianVar {
    pub n: usize,
    /// Index of the first scalar; the block occupies n² consecutive slots.
    pub base: usize,
}

impl HermitianVar {
    fn upper_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        // strict upper pairs enumerated row by row
        let before: usize = (0..i).map(|r| self.n - r - 1).sum();
        before + (j - i - 1)
    }

    pub fn diag(&self, i: usize) -> usize {
        self.base + i
    }

    fn pairs(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// Variable holding Re P_ij for i < j.
    pub fn re(&self, i: usize, j: usize) -> usize {
        self.base + self.n + self.upper_index(i, j)
    }

    /// Variable holding Im P_ij for i < j.
    pub fn im(&self, i: usize, j: usize) -> usize {
        self.base + self.n + self.pairs() + self.upper_index(i, j)
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn trace(&self) -> AffineExpr {
        let mut e = AffineExpr::default();
        for i in 0..self.n {
            e.add_term(self.diag(i), 1.0);
        }
        e
    }

    /// Re tr(P G) for Hermitian G.
    /// Coefficients below `ROUNDOFF` times the largest entry of `g` are
    /// dropped.
    pub fn trace_product(&self, g: &ComplexMatrix) -> AffineExpr {
        let floor = ROUNDOFF * g.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut e = AffineExpr::default();
        let mut push = |id: usize, c: f64| {
            if c.abs() > floor {
                e.add_term(id, c);
            }
        };
        for i in 0..self.n {
            push(self.diag(i), g[(i, i)].re);
            for j in (i + 1)..self.n {
                push(self.re(i, j), 2.0 * g[(i, j)].re);
                push(self.im(i, j), 2.0 * g[(i, j)].im);
            }
        }
        e
    }

    /// Entry (r, c) of the 2n×2n real embedding as a single signed variable.
    fn embedding_entry(&self, r: usize, c: usize) -> AffineExpr {
        let n = self.n;
        let (bi, i) = (r / n, r % n);
        let (bj, j) = (c / n, c % n);
        let real = |i: usize, j: usize| -> AffineExpr {
            if i == j {
                AffineExpr::var(self.diag(i))
            } else {
                AffineExpr::var(self.re(i.min(j), i.max(j)))
            }
        };
        let imag = |i: usize, j: usize| -> AffineExpr {
            if i == j {
                AffineExpr::default()
            } else if i < j {
                AffineExpr::var(self.im(i, j))
            } else {
                AffineExpr::term(self.im(j, i), -1.0)
            }
        };
        match (bi, bj) {
            (0, 0) | (1, 1) => real(i, j),
            (0, 1) => imag(i, j).scaled(-1.0),
            _ => imag(i, j),
        }
    }

    pub fn psd_cone(&self) -> Cone {
        let dim = 2 * self.n;
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for c in 0..dim {
            for r in 0..=c {
                upper.push(self.embedding_entry(r, c));
            }
        }
        Cone::Psd { dim, upper }
    }

    pub fn value(&self, x: &[f64]) -> ComplexMatrix {
        let n = self.n;
        ComplexMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Equal => Complex64::new(x[self.diag(i)], 0.0),
            std::cmp::Ordering::Less => Complex64::new(x[self.re(i, j)], x[self.im(i, j)]),
            std::cmp::Ordering::Greater => Complex64::new(x[self.re(j, i)], -x[self.im(j, i)]),
        })
    }

    /// Write a Hermitian matrix into the variable slots of `x`.
    pub fn store(&self, m: &ComplexMatrix, x: &mut [f64]) {
        for i in 0..self.n {
            x[self.diag(i)] = m[(i, i)].re;
            for j in (i + 1)..self.n {
                x[self.re(i, j)] = m[(i, j)].re;
                x[self.im(i, j)] = m[(i, j)].im;
            }
        }
    }
}

/// min objective(x) subject to the listed cone memberships.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub var_names: Vec<String>,
    pub objective: AffineExpr,
    pub constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.var_names.len() - 1
    }

    pub fn add_hermitian(&mut self, name: &str, n: usize) -> HermitianVar {
        let base = self.n_vars();
        for i in 0..n * n {
            self.var_names.push(format!("{name}[{i}]"));
        }
        HermitianVar { n, base }
    }

    pub fn add(&mut self, name: impl Into<String>, cone: Cone) {
        self.constraints.push(Constraint {
            name: name.into(),
            cone,
        });
    }

    pub fn add_eq(&mut self, name: impl Into<String>, e: AffineExpr) {
        self.add(name, Cone::Zero(vec![e]));
    }

    /// lhs ≥ rhs.
    pub fn add_ge(&mut self, name: impl Into<String>, lhs: AffineExpr, rhs: AffineExpr) {
        self.add(name, Cone::NonNeg(vec![lhs.minus(&rhs)]));
    }

    /// Number of constraints per cone family, counting each cone once.
    pub fn cone_counts(&self) -> BTreeMap<ConeKind, usize> {
        let mut m = BTreeMap::new();
        for c in &self.constraints {
            *m.entry(c.cone.kind()).or_insert(0) += 1;
        }
        m
    }

    /// Number of scalar rows per cone family.
    pub fn row_counts(&self) -> BTreeMap<ConeKind, usize> {
        let mut m = BTreeMap::new();
        for c in &self.constraints {
            *m.entry(c.cone.kind()).or_insert(0) += c.cone.len();
        }
        m
    }

    /// Structural checks: variable references in range and cone sizes sane.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let check = |e: &AffineExpr, what: &str| -> Result<()> {
            match e.max_var() {
                Some(v) if v >= n => Err(Error::Internal(format!(
                    "{what} references variable {v} of {n}"
                ))),
                _ => Ok(()),
            }
        };
        check(&self.objective, "objective")?;
        for c in &self.constraints {
            for e in c.cone.exprs() {
                check(e, &c.name)?;
            }
            let ok = match &c.cone {
                Cone::Soc(v) => v.len() >= 2,
                Cone::Psd { dim, upper } => upper.len() == dim * (dim + 1) / 2 && *dim > 0,
                other => !other.is_empty(),
            };
            if !ok {
                return Err(Error::Internal(format!("malformed cone in `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// Largest scaled violation and the name of the constraint holding it.
    pub fn max_violation(&self, x: &[f64]) -> (f64, String) {
        self.constraints
            .iter()
            .map(|c| (c.cone.violation(x), c.name.clone()))
            .fold((0.0, String::from("none")), |best, cur| {
                if cur.0 > best.0 {
                    cur
                } else {
                    best
                }
            })
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// Converged to reduced accuracy; usable after a residual check.
    AlmostOptimal,
    /// Stopped early (numerical trouble or iteration limit) with a finite
    /// primal point; usable only after a residual check.
    Stalled,
    Infeasible,
    Unbounded,
    Failed,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub worst_constraint: String,
    pub detail: String,
}

impl Solution {
    pub fn value(&self, e: &AffineExpr) -> f64 {
        e.eval(&self.x)
    }

    /// Ordering key: status quality first, then residual.
    fn rank(&self) -> (u8, f64) {
        let status = match self.status {
            SolveStatus::Optimal => 0,
            SolveStatus::AlmostOptimal => 1,
            SolveStatus::Stalled => 2,
            SolveStatus::Infeasible | SolveStatus::Unbounded => 3,
            SolveStatus::Failed => 4,
        };
        (status, self.max_violation)
    }
}

/// Anything able to load a [`ConicProgram`] and return a primal point.
pub trait ConicBackend: Send + Sync {
    fn solve(&self, prog: &ConicProgram) -> Result<Solution>;
}

/// Static KKT regularization; larger than the solver default, which stalls
/// on the nearly rank-one blocks of the beamforming subproblems.
const STATIC_REGULARIZATION: f64 = 1e-7;

const DEFAULT_STEP_FRACTION: f64 = 0.99;

/// Step-length factor of the retry after an inaccurate solve.
const RETRY_STEP_FRACTION: f64 = 0.9;

/// Residual below which an inaccurate solve is returned without retry.
const RETRY_VIOLATION: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
    pub tol: f64,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            verbose: false,
        }
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, prog: &ConicProgram) -> Result<Solution> {
        prog.validate()?;
        let n = prog.n_vars();
        let mut q = vec![0.0; n];
        for &(id, c) in &prog.objective.terms {
            q[id] += c;
        }
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones = Vec::new();
        // Clarabel form: A x + s = b with s in the cone, so an expression
        // e = aᵀx + c becomes the row −a with b = c.
        let mut push_row = |e: &AffineExpr, scale: f64, b: &mut Vec<f64>| {
            let r = b.len();
            for &(id, c) in &e.simplified().terms {
                rows.push(r);
                cols.push(id);
                vals.push(-c * scale);
            }
            b.push(e.constant * scale);
        };
        for c in &prog.constraints {
            match &c.cone {
                Cone::Zero(v) => {
                    v.iter().for_each(|e| push_row(e, 1.0, &mut b));
                    cones.push(SupportedConeT::ZeroConeT(v.len()));
                }
                Cone::NonNeg(v) => {
                    v.iter().for_each(|e| push_row(e, 1.0, &mut b));
                    cones.push(SupportedConeT::NonnegativeConeT(v.len()));
                }
                Cone::Soc(v) => {
                    v.iter().for_each(|e| push_row(e, 1.0, &mut b));
                    cones.push(SupportedConeT::SecondOrderConeT(v.len()));
                }
                Cone::Psd { dim, upper } => {
                    let mut k = 0;
                    for j in 0..*dim {
                        for i in 0..=j {
                            let s = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                            push_row(&upper[k], s, &mut b);
                            k += 1;
                        }
                    }
                    cones.push(SupportedConeT::PSDTriangleConeT(*dim));
                }
            }
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let first = self.run(prog, &p, &q, &a, &b, &cones, 1.0)?;
        if first.status == SolveStatus::Optimal || first.max_violation <= RETRY_VIOLATION {
            return Ok(first);
        }
        // shorter interior steps often get past a stalled factorization
        let second = self.run(prog, &p, &q, &a, &b, &cones, RETRY_STEP_FRACTION)?;
        Ok(if second.rank() < first.rank() { second } else { first })
    }
}

impl ClarabelBackend {
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        prog: &ConicProgram,
        p: &CscMatrix<f64>,
        q: &[f64],
        a: &CscMatrix<f64>,
        b: &[f64],
        cones: &[SupportedConeT<f64>],
        step_fraction: f64,
    ) -> Result<Solution> {
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .chordal_decomposition_enable(false)
            .static_regularization_constant(STATIC_REGULARIZATION)
            .max_step_fraction(DEFAULT_STEP_FRACTION * step_fraction)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .tol_feas(self.tol)
            .build()
            .map_err(|e| Error::Internal(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(p, q, a, b, cones, settings)
            .map_err(|e| Error::Internal(format!("solver setup: {e:?}")))?;
        solver.solve();
        let raw = solver.solution.status;
        let status = match raw {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            SolverStatus::NumericalError | SolverStatus::InsufficientProgress | SolverStatus::MaxIterations
                if solver.solution.x.iter().all(|v| v.is_finite()) =>
            {
                SolveStatus::Stalled
            }
            _ => SolveStatus::Failed,
        };
        let x = solver.solution.x.clone();
        let (max_violation, worst_constraint) = prog.max_violation(&x);
        Ok(Solution {
            status,
            objective: prog.objective_value(&x),
            x,
            max_violation,
            worst_constraint,
            detail: format!("{raw:?}"),
        })
    }
}
