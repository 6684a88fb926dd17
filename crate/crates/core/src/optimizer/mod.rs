//! CRB-minimizing beamformer design under per-user rate and per-feed power
//! constraints, by successive convex approximation with a rank-one penalty.
//!
//! Inside the conic programs powers are normalized by P_t (so every lifted
//! matrix has trace at most one), user gains by the noise power, and the
//! Fisher information by the bound of the uniform covariance, which keeps
//! all variables of order one.

mod init;
mod subproblem;

pub use init::{initialize, matched_filter_start, max_min_rate};
pub use subproblem::{build_subproblem, pack_state, Goal, Layout, SlackVars, Subproblem, UserVars, TAU_FLOOR};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::scenario_channel;
use crate::commrates::{rate_report, BeamformerSet, RateReport, Strategy};
use crate::conic::{ClarabelBackend, ConicBackend, SolveStatus, Solution};
use crate::config::ScenarioConfig;
use crate::crb::{crb_trace, fim_unchecked, CrbReport, FimContext};
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_part, principal_eigenpair, rank_one_ratio, ComplexMatrix, ComplexVector};

/// Largest scaled cone violation accepted from the conic backend.
pub const SOLUTION_TOLERANCE: f64 = 1e-5;

/// Allowed objective increase between consecutive iterations.
pub const MONOTONE_TOLERANCE: f64 = 1e-7;

/// Penalty must end below this fraction of Σ t.
pub const PENALTY_FRACTION: f64 = 1e-4;

/// Lifted matrices with less than this fraction of P_t are switched off.
pub const NEGLIGIBLE_POWER: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaSettings {
    pub epsilon: f64,
    pub max_iter: usize,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub rank_ratio_min: f64,
}

impl ScaSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            epsilon: cfg.sca_epsilon,
            max_iter: cfg.sca_max_iter,
            penalty_initial: cfg.penalty_initial,
            penalty_growth: cfg.penalty_growth,
            penalty_max: cfg.penalty_max,
            rank_ratio_min: cfg.rank_ratio_min,
        }
    }
}

/// Everything fixed during one design run.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub fim: FimContext,
    /// N_t × K, column k is h_k.
    pub channel: ComplexMatrix,
    pub total_power: f64,
    pub noise_power: f64,
    pub rate_threshold: f64,
    pub strategy: Strategy,
    /// tr(CRB) of the uniform covariance (P_t/N_t)·I, the FIM scale.
    pub crb_scale: f64,
    pub settings: ScaSettings,
}

impl DesignProblem {
    pub fn new(
        fim: FimContext,
        channel: ComplexMatrix,
        cfg: &ScenarioConfig,
        strategy: Strategy,
    ) -> Result<Self> {
        let n = fim.n_tx();
        if channel.nrows() != n {
            return invalid(format!("channel has {} rows for {n} feeds", channel.nrows()));
        }
        if channel.ncols() == 0 {
            return invalid("channel has no users");
        }
        let total_power = cfg.total_power();
        let uniform = ComplexMatrix::identity(n, n).scale(total_power / n as f64);
        let crb_scale = crb_trace(&fim, &uniform)?.trace;
        Ok(Self {
            fim,
            channel,
            total_power,
            noise_power: cfg.noise_power(),
            rate_threshold: cfg.rate_threshold_bps_hz,
            strategy,
            crb_scale,
            settings: ScaSettings::from_config(cfg),
        })
    }

    /// The configured scenario: seeded channel and an L-symbol FIM.
    pub fn from_config(cfg: &ScenarioConfig, strategy: Strategy) -> Result<Self> {
        let fim = FimContext::from_config(cfg, cfg.symbols_per_cpi)?;
        let ch = scenario_channel(cfg)?;
        Self::new(fim, ch.h, cfg, strategy)
    }

    pub fn n_feeds(&self) -> usize {
        self.channel.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.channel.ncols()
    }

    /// FIM coefficients acting on normalized matrices, scaled by `crb_scale`.
    pub fn scaled_fim_coefficients(&self) -> [ComplexMatrix; 3] {
        let s = self.crb_scale * self.total_power;
        self.fim.coefficients().map(|g| g.scale(s))
    }

    /// (P_t/σ²) h_k h_kᴴ, so Re tr(G X) is the SNR of normalized X.
    pub fn scaled_user_gain(&self, k: usize) -> ComplexMatrix {
        let h = self.channel.column(k);
        (h * h.adjoint()).scale(self.total_power / self.noise_power)
    }

    /// |h_kᴴ ·|² / σ² applied to a physical lifted matrix.
    fn received(&self, k: usize, m: &ComplexMatrix) -> f64 {
        let h = self.channel.column(k);
        (h.adjoint() * m * h)[(0, 0)].re / self.noise_power
    }
}

/// Linearization point (or value) of one rate chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub eta: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Slack {
    /// Tight slacks for received total and interference powers (noise units).
    pub fn exact(total: f64, interference: f64) -> Self {
        let tau = (total + 1.0).max(TAU_FLOOR);
        Self {
            eta: tau.ln(),
            beta: (interference + 1.0).ln(),
            tau,
        }
    }

    /// ln(1 + SINR) guaranteed by the chain.
    pub fn nats(&self) -> f64 {
        self.eta - self.beta
    }
}

/// SCA iterate. Matrices are physical (mW); slacks are in noise units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    pub iteration: usize,
    pub strategy: Strategy,
    pub common: Option<ComplexMatrix>,
    /// Private lifted matrices; radar-only keeps the single covariance here.
    pub private: Vec<ComplexMatrix>,
    pub common_slacks: Vec<Slack>,
    pub private_slacks: Vec<Slack>,
    pub splits: Vec<f64>,
    pub rate_slacks: Vec<f64>,
    /// Epigraph variables of the scaled bound.
    pub t: [f64; 2],
    pub max_min_rate: f64,
    pub objective: f64,
    pub penalty_factor: f64,
}

impl ScaState {
    /// State with tight slacks for the given lifted matrices.
    pub fn from_matrices(
        problem: &DesignProblem,
        common: Option<ComplexMatrix>,
        private: Vec<ComplexMatrix>,
        penalty_factor: f64,
    ) -> Self {
        let k_users = problem.n_users();
        let mut common_slacks = Vec::new();
        let mut private_slacks = Vec::new();
        let mut private_rates = Vec::new();
        let mut common_rate = f64::INFINITY;
        if problem.strategy != Strategy::RadarOnly {
            for k in 0..k_users {
                let own: Vec<f64> = private.iter().map(|m| problem.received(k, m)).collect();
                let all: f64 = own.iter().sum();
                let p = Slack::exact(all, all - own[k]);
                private_rates.push(p.nats() / std::f64::consts::LN_2);
                private_slacks.push(p);
                if let Some(c) = &common {
                    let s = Slack::exact(all + problem.received(k, c), all);
                    common_rate = common_rate.min(s.nats() / std::f64::consts::LN_2);
                    common_slacks.push(s);
                }
            }
        }
        if common.is_none() {
            common_rate = 0.0;
        }
        let (max_min, splits) = if private_rates.is_empty() {
            (0.0, Vec::new())
        } else {
            let rho = max_min_rate(&private_rates, common_rate);
            (rho, feasible_splits(&private_rates, common_rate, problem.rate_threshold.min(rho), common.is_some()))
        };
        let covariance = covariance_of(&common, &private, problem.n_feeds());
        let t = scaled_bounds(problem, &covariance);
        let mut state = Self {
            iteration: 0,
            strategy: problem.strategy,
            common,
            private,
            common_slacks,
            private_slacks,
            splits,
            rate_slacks: private_rates,
            t,
            max_min_rate: max_min,
            objective: 0.0,
            penalty_factor,
        };
        state.objective = state.t[0] + state.t[1] + penalty_factor * state.penalty_value(problem.total_power);
        state
    }

    pub fn lifted(&self) -> impl Iterator<Item = &ComplexMatrix> {
        self.common.iter().chain(self.private.iter())
    }

    /// R_X = P_c + Σ P_k.
    pub fn covariance(&self) -> ComplexMatrix {
        covariance_of(&self.common, &self.private, self.private[0].nrows())
    }

    /// Σ (tr X − λ_max(X)) / P_t over the lifted matrices.
    pub fn penalty_value(&self, total_power: f64) -> f64 {
        if self.strategy == Strategy::RadarOnly {
            return 0.0;
        }
        self.lifted()
            .map(|m| (m.trace().re - principal_eigenpair(m).0).max(0.0))
            .sum::<f64>()
            / total_power
    }

    /// Smallest λ_max/tr over lifted matrices carrying non-negligible power.
    pub fn min_rank_ratio(&self, total_power: f64) -> f64 {
        if self.strategy == Strategy::RadarOnly {
            return 1.0;
        }
        self.lifted()
            .filter(|m| m.trace().re > NEGLIGIBLE_POWER * total_power)
            .map(rank_one_ratio)
            .fold(1.0, f64::min)
    }
}

fn covariance_of(common: &Option<ComplexMatrix>, private: &[ComplexMatrix], n: usize) -> ComplexMatrix {
    let mut r = common.clone().unwrap_or_else(|| ComplexMatrix::zeros(n, n));
    for m in private {
        r += m;
    }
    r
}

/// Per-angle CRB divided by `crb_scale`; large values when the FIM is singular.
fn scaled_bounds(problem: &DesignProblem, covariance: &ComplexMatrix) -> [f64; 2] {
    let f = fim_unchecked(&problem.fim, &hermitian_part(covariance));
    match f.inverse() {
        Ok(inv) => [inv[(0, 0)] / problem.crb_scale, inv[(1, 1)] / problem.crb_scale],
        Err(_) => [1e12, 1e12],
    }
}

/// Splits covering each user's shortfall below `target`, then the leftover
/// common rate shared evenly.
fn feasible_splits(private_rates: &[f64], common_rate: f64, target: f64, has_common: bool) -> Vec<f64> {
    let k = private_rates.len();
    if !has_common {
        return vec![0.0; k];
    }
    let mut c: Vec<f64> = private_rates.iter().map(|r| (target - r).max(0.0)).collect();
    let used: f64 = c.iter().sum();
    let spare = (common_rate - used).max(0.0) * (1.0 - 1e-9);
    c.iter_mut().for_each(|x| *x += spare / k as f64);
    c
}

/// One accepted SCA iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: String,
    pub penalty_factor: f64,
    pub objective: f64,
    pub sum_t: f64,
    pub penalty: f64,
    pub min_rank_ratio: f64,
    pub solver_status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedMatrix {
    pub name: String,
    #[serde(with = "crate::linalg::serde_matrix")]
    pub matrix: ComplexMatrix,
    pub rank_ratio: f64,
}

/// Checks on the extracted rank-one beamformers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// max_n |‖row n‖² − P_t/N_t| / (P_t/N_t).
    pub feed_power_error: f64,
    /// min_k (R_k,tot − R_th), bps/Hz; +∞ for radar-only.
    pub rate_margin: f64,
    /// min_k R_c,k − Σ C_k, bps/Hz; +∞ without a common stream.
    pub common_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub strategy: Strategy,
    pub rate_threshold: f64,
    pub beamformers: BeamformerSet,
    pub lifted: Vec<LiftedMatrix>,
    /// Exact bound for the covariance of the extracted beamformers.
    pub crb: CrbReport,
    /// Bound of the lifted (pre-extraction) covariance.
    pub lifted_crb_trace: f64,
    pub rates: Option<RateReport>,
    pub verification: Verification,
    pub objective: f64,
    pub penalty_factor: f64,
    pub min_rank_ratio: f64,
    pub iterations: Vec<IterationRecord>,
    /// Subproblem solutions discarded because they did not improve on the
    /// previous iterate.
    pub rejected_steps: usize,
    pub status: String,
    pub wall_time_s: f64,
}

fn accept(problem: &DesignProblem, sol: &Solution, what: &str) -> Result<()> {
    match sol.status {
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "{what} subproblem infeasible at R_th = {} bps/Hz ({} strategy)",
            problem.rate_threshold, problem.strategy
        ))),
        SolveStatus::Optimal | SolveStatus::AlmostOptimal | SolveStatus::Stalled if sol.max_violation <= SOLUTION_TOLERANCE => Ok(()),
        _ => Err(Error::Solver {
            status: sol.detail.clone(),
            max_residual: sol.max_violation,
            worst_constraint: sol.worst_constraint.clone(),
        }),
    }
}

/// Physical lifted matrices held by a solution.
fn matrices_of(problem: &DesignProblem, sub: &Subproblem, sol: &Solution) -> (Option<ComplexMatrix>, Vec<ComplexMatrix>) {
    let p = problem.total_power;
    let common = sub.layout.common.map(|b| b.value(&sol.x).scale(p));
    let private = sub.layout.private.iter().map(|b| b.value(&sol.x).scale(p)).collect();
    (common, private)
}

/// Clip the small negative eigenvalues left by the solver and restore the
/// exact per-feed power by diagonal rescaling (which keeps rank and PSD).
fn repair(
    problem: &DesignProblem,
    (common, private): (Option<ComplexMatrix>, Vec<ComplexMatrix>),
) -> (Option<ComplexMatrix>, Vec<ComplexMatrix>) {
    let clip = |m: ComplexMatrix| -> ComplexMatrix {
        let eig = hermitian_eigen(&m);
        if eig.values[0] >= 0.0 {
            return hermitian_part(&m);
        }
        let d = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            eig.values.len(),
            eig.values.iter().map(|&v| v.max(0.0).into()),
        ));
        hermitian_part(&(&eig.vectors * d * eig.vectors.adjoint()))
    };
    let has_common = common.is_some();
    let mut mats: Vec<ComplexMatrix> = common.into_iter().chain(private).map(clip).collect();
    if problem.strategy != Strategy::RadarOnly {
        // streams left with interior-point residue only are switched off
        for m in mats.iter_mut() {
            if m.trace().re < NEGLIGIBLE_POWER * problem.total_power {
                m.fill(0.0.into());
            }
        }
    }
    equalize_feeds(problem, &mut mats);
    let common = has_common.then(|| mats.remove(0));
    (common, mats)
}

/// Rescale feed rows so that diag(Σ X) equals P_t/N_t exactly. Every
/// matrix is conjugated by the same positive diagonal.
pub(crate) fn equalize_feeds(problem: &DesignProblem, mats: &mut [ComplexMatrix]) {
    let n = problem.n_feeds();
    let target = problem.total_power / n as f64;
    let mut diag = vec![0.0; n];
    for m in mats.iter() {
        for (i, d) in diag.iter_mut().enumerate() {
            *d += m[(i, i)].re;
        }
    }
    let scale: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { (target / d).sqrt() } else { 1.0 })
        .collect();
    for m in mats.iter_mut() {
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] *= scale[i] * scale[j];
            }
        }
    }
}

/// Solve one subproblem and return the tightened next state.
pub fn sca_step(
    problem: &DesignProblem,
    state: &ScaState,
    goal: Goal,
    backend: &dyn ConicBackend,
) -> Result<(ScaState, Solution, Subproblem)> {
    let sub = build_subproblem(problem, state, goal);
    let sol = backend.solve(&sub.program)?;
    let what = match goal {
        Goal::Crb => "CRB",
        Goal::MaxMin { .. } => "max-min rate",
    };
    accept(problem, &sol, what)?;
    let (common, private) = repair(problem, matrices_of(problem, &sub, &sol));
    let mut next = ScaState::from_matrices(problem, common, private, state.penalty_factor);
    next.iteration = state.iteration + 1;
    Ok((next, sol, sub))
}

/// Beamformers from the lifted matrices: p = sqrt(λ_max)·v_max per matrix,
/// or the eigen-decomposition of R_X for radar-only.
pub fn extract_beamformers(problem: &DesignProblem, state: &ScaState) -> Result<BeamformerSet> {
    let n = problem.n_feeds();
    let k = problem.n_users();
    let rank_one = |m: &ComplexMatrix| -> ComplexVector {
        let (lam, v) = principal_eigenpair(m);
        v.scale(lam.max(0.0).sqrt())
    };
    match problem.strategy {
        Strategy::RadarOnly => {
            let eig = hermitian_eigen(&state.private[0]);
            let private = (0..k)
                .map(|i| {
                    if i < n {
                        let idx = n - 1 - i;
                        eig.vectors.column(idx).into_owned().scale(eig.values[idx].max(0.0).sqrt())
                    } else {
                        ComplexVector::zeros(n)
                    }
                })
                .collect();
            BeamformerSet::new(ComplexVector::zeros(n), private, Strategy::RadarOnly)
        }
        Strategy::Sdma => BeamformerSet::new(ComplexVector::zeros(n), state.private.iter().map(rank_one).collect(), Strategy::Sdma),
        Strategy::Rsma => {
            let common = state.common.as_ref().map(rank_one).unwrap_or_else(|| ComplexVector::zeros(n));
            BeamformerSet::new(common, state.private.iter().map(rank_one).collect(), Strategy::Rsma)
        }
    }
}

fn record(state: &ScaState, problem: &DesignProblem, phase: &str, status: SolveStatus) -> IterationRecord {
    let sum_t = state.t[0] + state.t[1];
    IterationRecord {
        iteration: state.iteration,
        phase: phase.to_string(),
        penalty_factor: state.penalty_factor,
        objective: state.objective,
        sum_t,
        penalty: state.penalty_value(problem.total_power),
        min_rank_ratio: state.min_rank_ratio(problem.total_power),
        solver_status: status,
    }
}

/// Full design: initialization, SCA with penalty escalation, extraction and
/// exact verification.
pub fn run_sca(problem: &DesignProblem, backend: &dyn ConicBackend) -> Result<OptimizationResult> {
    let started = Instant::now();
    let mut trace = Vec::new();
    let mut rejected = 0;
    let settings = &problem.settings;

    let final_state = if problem.strategy == Strategy::RadarOnly {
        let start = initialize(problem, backend, &mut trace)?;
        let (next, sol, _) = sca_step(problem, &start, Goal::Crb, backend)?;
        trace.push(record(&next, problem, "crb", sol.status));
        next
    } else {
        let mut state = initialize(problem, backend, &mut trace)?;
        loop {
            state.objective = state.t[0] + state.t[1] + state.penalty_factor * state.penalty_value(problem.total_power);
            let mut converged = false;
            for _ in 0..settings.max_iter {
                // The previous iterate is feasible for this subproblem, so a
                // numerical failure or an exact objective above it is solver
                // inaccuracy: keep the previous iterate and end the stage.
                let (next, sol, _) = match sca_step(problem, &state, Goal::Crb, backend) {
                    Ok(step) => step,
                    Err(Error::Solver { .. }) => {
                        rejected += 1;
                        converged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let prev = state.objective;
                if next.objective > prev + MONOTONE_TOLERANCE * prev.abs().max(1.0) {
                    rejected += 1;
                    converged = true;
                    break;
                }
                trace.push(record(&next, problem, "crb", sol.status));
                let done = (prev - next.objective).abs() < settings.epsilon;
                state = next;
                if done {
                    converged = true;
                    break;
                }
            }
            let ratio = state.min_rank_ratio(problem.total_power);
            let penalty = state.penalty_value(problem.total_power);
            let sum_t = state.t[0] + state.t[1];
            if converged && ratio >= settings.rank_ratio_min && penalty <= PENALTY_FRACTION * sum_t {
                break;
            }
            let raised = state.penalty_factor * settings.penalty_growth;
            if raised > settings.penalty_max {
                return Err(Error::RankOne {
                    ratio,
                    threshold: settings.rank_ratio_min,
                });
            }
            state.penalty_factor = raised;
        }
        state
    };

    finish(problem, final_state, trace, rejected, started)
}

fn finish(
    problem: &DesignProblem,
    state: ScaState,
    iterations: Vec<IterationRecord>,
    rejected_steps: usize,
    started: Instant,
) -> Result<OptimizationResult> {
    let beamformers = extract_beamformers(problem, &state)?;
    let covariance = beamformers.covariance();
    let crb = crb_trace(&problem.fim, &hermitian_part(&covariance))?;
    let lifted_crb_trace = crb_trace(&problem.fim, &hermitian_part(&state.covariance()))
        .map(|c| c.trace)
        .unwrap_or(f64::INFINITY);
    let per_feed = problem.total_power / problem.n_feeds() as f64;
    let feed_power_error = beamformers
        .per_feed_power()
        .iter()
        .map(|p| (p - per_feed).abs() / per_feed)
        .fold(0.0, f64::max);

    let (rates, rate_margin, common_margin) = if problem.strategy == Strategy::RadarOnly {
        (None, f64::INFINITY, f64::INFINITY)
    } else {
        let probe = rate_report(&problem.channel, &beamformers, problem.noise_power, &vec![0.0; problem.n_users()])?;
        let splits = if problem.strategy == Strategy::Rsma {
            let rc = probe.common_rate;
            let sum: f64 = state.splits.iter().sum();
            let shrink = if sum > rc { rc / sum } else { 1.0 };
            state.splits.iter().map(|c| c * shrink).collect()
        } else {
            vec![0.0; problem.n_users()]
        };
        let report = rate_report(&problem.channel, &beamformers, problem.noise_power, &splits)?;
        let margin = report
            .totals
            .iter()
            .map(|r| r - problem.rate_threshold)
            .fold(f64::INFINITY, f64::min);
        let common_margin = if problem.strategy == Strategy::Rsma {
            report.common_rate - report.common_splits.iter().sum::<f64>()
        } else {
            f64::INFINITY
        };
        (Some(report), margin, common_margin)
    };

    let mut lifted = Vec::new();
    if let Some(c) = &state.common {
        lifted.push(LiftedMatrix {
            name: "P_c".into(),
            matrix: c.clone(),
            rank_ratio: rank_one_ratio(c),
        });
    }
    for (k, m) in state.private.iter().enumerate() {
        let name = if problem.strategy == Strategy::RadarOnly {
            "R_X".to_string()
        } else {
            format!("P_{}", k + 1)
        };
        lifted.push(LiftedMatrix {
            name,
            matrix: m.clone(),
            rank_ratio: rank_one_ratio(m),
        });
    }

    Ok(OptimizationResult {
        strategy: problem.strategy,
        rate_threshold: problem.rate_threshold,
        beamformers,
        lifted,
        crb,
        lifted_crb_trace,
        rates,
        verification: Verification {
            feed_power_error,
            rate_margin,
            common_margin,
        },
        objective: state.objective,
        penalty_factor: state.penalty_factor,
        min_rank_ratio: state.min_rank_ratio(problem.total_power),
        iterations,
        rejected_steps,
        status: "converged".into(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Convenience wrapper using the Clarabel backend.
pub fn optimize(cfg: &ScenarioConfig, strategy: Strategy) -> Result<OptimizationResult> {
    let problem = DesignProblem::from_config(cfg, strategy)?;
    run_sca(&problem, &ClarabelBackend::default())
}
