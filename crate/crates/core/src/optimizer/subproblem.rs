//! One convexified SCA subproblem: the conic program for fixed
//! linearization points and penalty directions.

use std::f64::consts::LN_2;

use crate::commrates::Strategy;
use crate::conic::{AffineExpr, Cone, ConicProgram, HermitianVar};
use crate::linalg::{principal_eigenpair, ComplexMatrix, ComplexVector};

use super::{DesignProblem, ScaState, Slack};

/// Lower bound on every τ slack.
pub const TAU_FLOOR: f64 = 1e-9;

/// What the subproblem minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Goal {
    /// Σ t_i + λ_pen·penalty under the rate threshold.
    Crb,
    /// −ρ + λ_pen·penalty with every user's rate ≥ ρ and ρ ≤ `cap`
    /// (communication-only max-min fair start).
    MaxMin { cap: f64 },
}

/// Slack variable indices. The τ variable is stored relative to its
/// linearization point, u = τ/τⁿ, which keeps the cone rows of order one
/// at high SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackVars {
    pub eta: usize,
    pub beta: usize,
    pub tau: usize,
    pub tau_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserVars {
    pub common: Option<SlackVars>,
    pub private: SlackVars,
    pub split: Option<usize>,
    pub rate: usize,
}

/// Variable layout of a built subproblem.
#[derive(Debug, Clone)]
pub struct Layout {
    pub common: Option<HermitianVar>,
    /// Private blocks; for radar-only a single block holding R_X.
    pub private: Vec<HermitianVar>,
    pub t: Option<[usize; 2]>,
    pub users: Vec<UserVars>,
    pub rho: Option<usize>,
}

impl Layout {
    pub fn blocks(&self) -> impl Iterator<Item = &HermitianVar> {
        self.common.iter().chain(self.private.iter())
    }
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub layout: Layout,
    /// Affine expression of the rank-one penalty sum (without λ_pen).
    pub penalty: AffineExpr,
}

/// Penalty directions: principal eigenvectors of the current iterate, or
/// `fallback` for a stream that is switched off.
fn penalty_expr(block: &HermitianVar, current: &ComplexMatrix, fallback: &ComplexVector) -> AffineExpr {
    let (lambda, v) = principal_eigenpair(current);
    let v = if lambda > 0.0 { v } else { fallback.clone() };
    let n = block.n;
    let proj = &v * v.adjoint();
    let g = ComplexMatrix::identity(n, n) - proj;
    block.trace_product(&g)
}

fn add_slacks(prog: &mut ConicProgram, tag: &str, at: Slack) -> SlackVars {
    SlackVars {
        eta: prog.add_var(format!("eta_{tag}")),
        beta: prog.add_var(format!("beta_{tag}")),
        tau: prog.add_var(format!("tau_{tag}")),
        tau_ref: at.tau,
    }
}

/// Linearized chain bounding ln(signal + interference + 1) − ln(interference + 1)
/// from below by η − β.
fn add_rate_chain(
    prog: &mut ConicProgram,
    tag: &str,
    s: SlackVars,
    at: Slack,
    total: &AffineExpr,
    interference: &AffineExpr,
) {
    // (interference + 1)/e^{βⁿ} ≤ β − βⁿ + 1
    let eb = at.beta.exp();
    let rhs = AffineExpr::var(s.beta).offset(1.0 - at.beta);
    prog.add_ge(format!("beta_lin_{tag}"), rhs, interference.clone().offset(1.0).scaled(1.0 / eb));
    // u ≤ (total + 1)/τⁿ
    let cap = total.clone().offset(1.0).scaled(1.0 / s.tau_ref);
    prog.add_ge(format!("tau_cap_{tag}"), cap, AffineExpr::var(s.tau));
    prog.add_ge(
        format!("tau_floor_{tag}"),
        AffineExpr::var(s.tau),
        AffineExpr::constant(TAU_FLOOR / s.tau_ref),
    );
    // u (ℓ − η) ≥ 1 with ℓ = ln τⁿ + 1, i.e. η ≤ ln τⁿ + 1 − τⁿ/τ
    let ell = s.tau_ref.ln() + 1.0;
    let head = AffineExpr::var(s.tau).minus(&AffineExpr::var(s.eta)).offset(ell);
    let first = AffineExpr::var(s.tau).plus(&AffineExpr::var(s.eta)).offset(-ell);
    prog.add(format!("soc_{tag}"), Cone::Soc(vec![head, first, AffineExpr::constant(2.0)]));
}

/// Build the conic program for the given state and goal.
pub fn build_subproblem(problem: &DesignProblem, state: &ScaState, goal: Goal) -> Subproblem {
    let n = problem.n_feeds();
    let k_users = problem.n_users();
    let strategy = problem.strategy;
    let mut prog = ConicProgram::new();

    let common = (strategy == Strategy::Rsma).then(|| prog.add_hermitian("Pc", n));
    let n_private = if strategy == Strategy::RadarOnly { 1 } else { k_users };
    let private: Vec<HermitianVar> = (0..n_private)
        .map(|k| prog.add_hermitian(&format!("P{k}"), n))
        .collect();
    let blocks: Vec<HermitianVar> = common.iter().chain(private.iter()).copied().collect();

    // (c) PSD lifted matrices
    for (i, b) in blocks.iter().enumerate() {
        prog.add(format!("psd_block_{i}"), b.psd_cone());
    }

    // (b) per-feed power, normalized: diag(ΣX) = 1/N_t
    let per_feed = 1.0 / n as f64;
    let rows: Vec<AffineExpr> = (0..n)
        .map(|i| {
            let mut e = AffineExpr::constant(-per_feed);
            for b in &blocks {
                e.add_term(b.diag(i), 1.0);
            }
            e
        })
        .collect();
    prog.add("per_feed_power", Cone::Zero(rows));

    // rank-one penalty
    let mut penalty = AffineExpr::default();
    if strategy != Strategy::RadarOnly {
        if let (Some(b), Some(cur)) = (&common, &state.common) {
            let gram = &problem.channel * problem.channel.adjoint();
            let (_, dominant) = principal_eigenpair(&gram);
            penalty.add_expr(&penalty_expr(b, cur, &dominant), 1.0);
        }
        for (k, (b, cur)) in private.iter().zip(&state.private).enumerate() {
            let h = problem.channel.column(k);
            let dir = h.unscale(h.norm().max(f64::MIN_POSITIVE));
            penalty.add_expr(&penalty_expr(b, cur, &dir), 1.0);
        }
    }

    // (a) Schur blocks on the scaled FIM
    let mut t = None;
    let mut objective = AffineExpr::default();
    if goal == Goal::Crb {
        let coeffs = problem.scaled_fim_coefficients();
        let f: Vec<AffineExpr> = coeffs
            .iter()
            .map(|g| {
                let mut e = AffineExpr::default();
                for b in &blocks {
                    e.add_expr(&b.trace_product(g), 1.0);
                }
                e.simplified()
            })
            .collect();
        let ids = [prog.add_var("t_theta"), prog.add_var("t_phi")];
        for (i, &ti) in ids.iter().enumerate() {
            let (e0, e1) = if i == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
            let upper = vec![
                f[0].clone(),
                f[1].clone(),
                f[2].clone(),
                AffineExpr::constant(e0),
                AffineExpr::constant(e1),
                AffineExpr::var(ti),
            ];
            prog.add(format!("schur_{i}"), Cone::Psd { dim: 3, upper });
            objective.add_term(ti, 1.0);
        }
        t = Some(ids);
    }

    let rho = match goal {
        Goal::MaxMin { cap } => {
            let r = prog.add_var("rho");
            prog.add_ge("rho_cap", AffineExpr::constant(cap), AffineExpr::var(r));
            objective.add_term(r, -1.0);
            Some(r)
        }
        Goal::Crb => None,
    };

    // (d)–(k) communication constraints
    let mut users = Vec::new();
    if strategy != Strategy::RadarOnly {
        let gains: Vec<ComplexMatrix> = (0..k_users).map(|k| problem.scaled_user_gain(k)).collect();
        // received power of every private block at every user
        let mut splits = Vec::new();
        for k in 0..k_users {
            let split = common.map(|_| prog.add_var(format!("C_{k}")));
            splits.push(split);
        }
        let split_sum = {
            let mut e = AffineExpr::default();
            for s in splits.iter().flatten() {
                e.add_term(*s, 1.0);
            }
            e
        };
        for (k, g) in gains.iter().enumerate() {
            let per_block: Vec<AffineExpr> = private.iter().map(|b| b.trace_product(g)).collect();
            let mut all_private = AffineExpr::default();
            for e in &per_block {
                all_private.add_expr(e, 1.0);
            }
            let all_private = all_private.simplified();
            let others = all_private.clone().minus(&per_block[k]).simplified();

            let rate = prog.add_var(format!("r_{k}"));
            let private_slacks = add_slacks(&mut prog, &format!("p{k}"), state.private_slacks[k]);
            add_rate_chain(
                &mut prog,
                &format!("p{k}"),
                private_slacks,
                state.private_slacks[k],
                &all_private,
                &others,
            );
            // η_k − β_k ≥ r_k ln 2
            prog.add_ge(
                format!("private_rate_{k}"),
                AffineExpr::var(private_slacks.eta).minus(&AffineExpr::var(private_slacks.beta)),
                AffineExpr::term(rate, LN_2),
            );

            let mut common_slacks = None;
            if let (Some(pc), Some(split)) = (&common, splits[k]) {
                let s = add_slacks(&mut prog, &format!("c{k}"), state.common_slacks[k]);
                let total = all_private.clone().plus(&pc.trace_product(g)).simplified();
                add_rate_chain(&mut prog, &format!("c{k}"), s, state.common_slacks[k], &total, &all_private);
                // η_c,k − β_c,k ≥ (Σ C) ln 2
                prog.add_ge(
                    format!("common_rate_{k}"),
                    AffineExpr::var(s.eta).minus(&AffineExpr::var(s.beta)),
                    split_sum.clone().scaled(LN_2),
                );
                prog.add_ge(format!("split_nonneg_{k}"), AffineExpr::var(split), AffineExpr::default());
                common_slacks = Some(s);
            }

            // C_k + r_k ≥ R_th (or ≥ ρ)
            let mut total_rate = AffineExpr::var(rate);
            if let Some(s) = splits[k] {
                total_rate.add_term(s, 1.0);
            }
            let target = match rho {
                Some(r) => AffineExpr::var(r),
                None => AffineExpr::constant(problem.rate_threshold),
            };
            prog.add_ge(format!("rate_threshold_{k}"), total_rate, target);

            users.push(UserVars {
                common: common_slacks,
                private: private_slacks,
                split: splits[k],
                rate,
            });
        }
    }

    objective.add_expr(&penalty, state.penalty_factor);
    prog.objective = objective.simplified();
    Subproblem {
        program: prog,
        layout: Layout {
            common,
            private,
            t,
            users,
            rho,
        },
        penalty: penalty.simplified(),
    }
}

/// Pack a state into the variable vector of `sub` (for residual checks).
pub fn pack_state(problem: &DesignProblem, state: &ScaState, sub: &Subproblem) -> Vec<f64> {
    let mut x = vec![0.0; sub.program.n_vars()];
    let scale = 1.0 / problem.total_power;
    if let (Some(b), Some(m)) = (&sub.layout.common, &state.common) {
        b.store(&m.scale(scale), &mut x);
    }
    for (b, m) in sub.layout.private.iter().zip(&state.private) {
        b.store(&m.scale(scale), &mut x);
    }
    if let Some(ids) = sub.layout.t {
        x[ids[0]] = state.t[0];
        x[ids[1]] = state.t[1];
    }
    for (k, u) in sub.layout.users.iter().enumerate() {
        let p = state.private_slacks[k];
        x[u.private.eta] = p.eta;
        x[u.private.beta] = p.beta;
        x[u.private.tau] = p.tau / u.private.tau_ref;
        x[u.rate] = state.rate_slacks[k];
        if let Some(c) = u.common {
            let s = state.common_slacks[k];
            x[c.eta] = s.eta;
            x[c.beta] = s.beta;
            x[c.tau] = s.tau / c.tau_ref;
        }
        if let Some(s) = u.split {
            x[s] = state.splits[k];
        }
    }
    if let Some(r) = sub.layout.rho {
        x[r] = state.max_min_rate;
    }
    x
}
