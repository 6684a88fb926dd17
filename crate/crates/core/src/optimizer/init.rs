//! Starting points. The radar-only optimum split into rank-one streams is
//! used when it already meets the rate threshold. Otherwise matched-filter
//! precoders with exact per-feed power are followed by a
//! communication-only max-min fair SCA until every user reaches it.

use crate::commrates::Strategy;
use crate::conic::ConicBackend;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, outer, principal_eigenpair, ComplexMatrix, ComplexVector};

use super::{equalize_feeds, NEGLIGIBLE_POWER, record, sca_step, DesignProblem, Goal, IterationRecord, ScaState};

/// Power fraction given to the initial common precoder.
const COMMON_SEED_FRACTION: f64 = 1e-3;

/// Head-room above R_th at which the max-min stage hands over.
const HANDOVER_MARGIN: f64 = 1e-4;

/// Cap on ρ in the max-min stage, above R_th.
const MAX_MIN_CAP: f64 = 1e-3;

/// Consecutive non-improving max-min iterations before declaring the
/// threshold unreachable.
const STALL_LIMIT: usize = 3;

/// Largest ρ such that Σ_k max(0, ρ − r_k) ≤ R_c: the best common user rate
/// reachable by splitting a common rate `common_rate` over private rates `r`.
pub fn max_min_rate(private_rates: &[f64], common_rate: f64) -> f64 {
    let mut r = private_rates.to_vec();
    r.sort_by(f64::total_cmp);
    let mut acc = common_rate.max(0.0);
    for m in 0..r.len() {
        acc += r[m];
        let rho = acc / (m + 1) as f64;
        if m + 1 == r.len() || rho <= r[m + 1] {
            return rho;
        }
    }
    0.0
}

/// Matched-filter private precoders (plus a weak common precoder along the
/// dominant channel direction for RSMA), with exact per-feed power.
pub fn matched_filter_start(problem: &DesignProblem, penalty_factor: f64) -> ScaState {
    let n = problem.n_feeds();
    let k = problem.n_users();
    let pt = problem.total_power;
    if problem.strategy == Strategy::RadarOnly {
        let uniform = ComplexMatrix::identity(n, n).scale(pt / n as f64);
        return ScaState::from_matrices(problem, None, vec![uniform], 0.0);
    }
    let share = if problem.strategy == Strategy::Rsma {
        pt * (1.0 - COMMON_SEED_FRACTION) / k as f64
    } else {
        pt / k as f64
    };
    let mut mats: Vec<ComplexMatrix> = Vec::with_capacity(k + 1);
    if problem.strategy == Strategy::Rsma {
        let gram = &problem.channel * problem.channel.adjoint();
        let (_, v) = principal_eigenpair(&gram);
        mats.push(outer(&v, &v).scale(pt * COMMON_SEED_FRACTION));
    }
    for col in problem.channel.column_iter() {
        let norm = col.norm();
        let u: ComplexVector = if norm > 0.0 {
            col.into_owned().unscale(norm)
        } else {
            ComplexVector::from_element(n, (1.0 / (n as f64).sqrt()).into())
        };
        mats.push(outer(&u, &u).scale(share));
    }
    equalize_feeds(problem, &mut mats);
    let common = (problem.strategy == Strategy::Rsma).then(|| mats.remove(0));
    ScaState::from_matrices(problem, common, mats, penalty_factor)
}

/// The radar-only covariance split into its eigencomponents, strongest
/// first: the common stream takes the principal one under RSMA. `None`
/// when the rank exceeds the number of streams.
pub fn radar_seeded_start(problem: &DesignProblem, backend: &dyn ConicBackend) -> Result<Option<ScaState>> {
    let n = problem.n_feeds();
    let radar = DesignProblem {
        strategy: Strategy::RadarOnly,
        ..problem.clone()
    };
    let (opt, _, _) = sca_step(&radar, &matched_filter_start(&radar, 0.0), Goal::Crb, backend)?;
    let eig = hermitian_eigen(&opt.private[0]);
    let floor = NEGLIGIBLE_POWER * problem.total_power;
    let mut parts: Vec<ComplexMatrix> = (0..n)
        .rev()
        .filter(|&i| eig.values[i] > floor)
        .map(|i| {
            let v = eig.vectors.column(i).into_owned();
            outer(&v, &v).scale(eig.values[i])
        })
        .collect();
    let slots = problem.n_users() + usize::from(problem.strategy == Strategy::Rsma);
    if parts.len() > slots {
        return Ok(None);
    }
    parts.resize(slots, ComplexMatrix::zeros(n, n));
    equalize_feeds(problem, &mut parts);
    let common = (problem.strategy == Strategy::Rsma).then(|| parts.remove(0));
    Ok(Some(ScaState::from_matrices(problem, common, parts, problem.settings.penalty_initial)))
}

/// Feasible starting state for the CRB subproblem. Iterations of the
/// max-min stage are appended to `trace`.
pub fn initialize(
    problem: &DesignProblem,
    backend: &dyn ConicBackend,
    trace: &mut Vec<IterationRecord>,
) -> Result<ScaState> {
    let lambda = problem.settings.penalty_initial;
    let mut state = matched_filter_start(problem, lambda);
    if problem.strategy == Strategy::RadarOnly {
        return Ok(state);
    }
    let target = problem.rate_threshold;
    if let Some(seed) = radar_seeded_start(problem, backend)? {
        if seed.max_min_rate >= target + HANDOVER_MARGIN {
            return Ok(seed);
        }
    }
    if state.max_min_rate >= target + HANDOVER_MARGIN {
        return Ok(state);
    }
    let goal = Goal::MaxMin {
        cap: target + MAX_MIN_CAP,
    };
    let mut stalls = 0;
    for _ in 0..problem.settings.max_iter {
        let before = state.max_min_rate;
        let (next, sol, _) = sca_step(problem, &state, goal, backend)?;
        trace.push(record(&next, problem, "max-min", sol.status));
        state = next;
        if state.max_min_rate >= target + HANDOVER_MARGIN {
            state.iteration = 0;
            state.objective = state.t[0] + state.t[1] + lambda * state.penalty_value(problem.total_power);
            return Ok(state);
        }
        if state.max_min_rate - before < problem.settings.epsilon {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Err(Error::Infeasible(format!(
        "{} cannot give every user {target} bps/Hz: best max-min rate found {:.4} bps/Hz",
        problem.strategy, state.max_min_rate
    )))
}
