//! Trial runner, regret bookkeeping, and offline evaluation.

use nalgebra::DVector;

use crate::environments::Environment;
use crate::error::{shape_err, BanditError, Result};
use crate::estimator::{bootstrap_lambda0, lambda_schedule, LeastSquares, SolverSettings};
use crate::model::{ActionSpace, ActionVector, AlgorithmConfig, ContextBatch, History, Lambda0, RepresentationMatrix};
use crate::policy::{is_exploration_round, optimal_action, OptimalAction, PolicyState};
use crate::rng::{ball_point, stream, uniform, Purpose};
use crate::scalar::Real;

/// Feasibility slack for the infeasible-action flag.
const FEASIBILITY_TOL: f64 = 1e-9;

/// One row of a trial trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics<T: Real> {
    pub t: usize,
    /// `(a*_t − a_t)ᵀ Θ* Σ_ℓ x_{t,ℓ}`.
    pub inst_regret: T,
    /// Mean of `inst_regret` over rounds `1..=t`.
    pub avg_regret: T,
    /// Cumulative expected reward `Σ_{i ≤ t} a_iᵀ Θ* Σ_ℓ x_{i,ℓ}`.
    pub cum_reward: T,
    pub explored: bool,
    pub degenerate: bool,
    /// The played action lies outside the current action space.
    pub infeasible: bool,
    /// Estimator diagnostics for `Θ̂_t`, fit on rounds `1..=t`; absent
    /// before `t_init`.
    pub lambda_t: Option<T>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub nuclear_norm: Option<T>,
    pub frob_err: Option<T>,
}

#[derive(Debug, Clone)]
pub struct TrialMetrics<T: Real> {
    pub seed: u64,
    pub t_init: usize,
    pub lambda0: T,
    pub rounds: Vec<RoundMetrics<T>>,
    /// Actions actually played, `a_1, …, a_T`.
    pub actions: Vec<ActionVector<T>>,
    /// Unperturbed argmax actions; `None` for initialization rounds.
    pub exploit_actions: Vec<Option<ActionVector<T>>>,
    /// Relative cumulative gain over a logged policy, filled by replay.
    pub gain: Option<Vec<Option<T>>>,
    pub final_estimate: Option<RepresentationMatrix<T>>,
}

impl<T: Real> TrialMetrics<T> {
    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    pub fn avg_regret_at(&self, t: usize) -> Option<T> {
        self.rounds.get(t.checked_sub(1)?).map(|r| r.avg_regret)
    }

    pub fn frob_err_at(&self, t: usize) -> Option<T> {
        self.rounds.get(t.checked_sub(1)?).and_then(|r| r.frob_err)
    }
}

/// Actions for the initialization rounds.
#[derive(Debug, Clone, Default)]
pub enum InitActions<T: Real> {
    /// Uniform draws from the action space.
    #[default]
    Random,
    /// Given actions, e.g. the first rounds of a log.
    Given(Vec<ActionVector<T>>),
}

/// Uniform draw from a bounded action space; the unit ball for `UnitBall`.
pub fn random_feasible_action<T: Real>(space: &ActionSpace<T>, d_a: usize, seed: u64, round: usize) -> Result<ActionVector<T>> {
    let mut rng = stream(seed, Purpose::InitAction, round as u64);
    let values = match space {
        ActionSpace::UnitBall => ball_point::<T, _>(&mut rng, d_a),
        ActionSpace::Box { lower, upper } => {
            DVector::from_fn(lower.len(), |i, _| lower[i] + (upper[i] - lower[i]) * uniform::<T, _>(&mut rng))
        }
        ActionSpace::LiftedPrice { lower, upper } => {
            let p = *lower + (*upper - *lower) * uniform::<T, _>(&mut rng);
            DVector::from_column_slice(&[p, p * p])
        }
    };
    ActionVector::new(values)
}

/// `argmax_{a ∈ space} aᵀ Θ* Σ_ℓ x_ℓ`.
pub fn clairvoyant_action<T: Real>(
    theta_star: &RepresentationMatrix<T>,
    batch: &ContextBatch<T>,
    space: &ActionSpace<T>,
    seed: u64,
) -> Result<OptimalAction<T>> {
    let mut rng = stream(seed, Purpose::Clairvoyant, batch.round() as u64);
    optimal_action(theta_star, batch, space, &mut rng)
}

/// Expected total reward `aᵀ Θ* Σ_ℓ x_ℓ`.
pub fn mean_reward<T: Real>(theta_star: &RepresentationMatrix<T>, a: &ActionVector<T>, batch: &ContextBatch<T>) -> Result<T> {
    if a.len() != theta_star.d_a() {
        return Err(shape_err("action", theta_star.d_a(), a.len()));
    }
    if batch.d_x() != theta_star.d_x() {
        return Err(shape_err("context", theta_star.d_x(), batch.d_x()));
    }
    Ok(a.values().dot(&(theta_star.entries() * batch.sum())))
}

/// `(a* − a)ᵀ Θ* Σ_ℓ x_ℓ`.
pub fn instantaneous_regret<T: Real>(
    theta_star: &RepresentationMatrix<T>,
    a_star: &ActionVector<T>,
    a: &ActionVector<T>,
    batch: &ContextBatch<T>,
) -> Result<T> {
    Ok(mean_reward(theta_star, a_star, batch)? - mean_reward(theta_star, a, batch)?)
}

/// Runs one trial of `horizon` rounds with random initialization actions.
pub fn run_trial<T: Real, E: Environment<T> + ?Sized>(
    env: &E,
    config: &AlgorithmConfig,
    horizon: usize,
    solver: &SolverSettings,
) -> Result<TrialMetrics<T>> {
    run_trial_with(env, config, horizon, solver, &InitActions::Random)
}

/// Runs one trial.
///
/// Rounds `1..=t_init` play the initialization actions. For
/// `t = t_init, …, horizon − 1` the loop fits `Θ̂_t` on rounds `1..=t`
/// at `λ_t = λ_0/√t`, picks `a_{t+1}` through the policy, and records
/// its regret against the clairvoyant over the policy's current space.
/// A final fit `Θ̂_T` is recorded on the last row.
pub fn run_trial_with<T: Real, E: Environment<T> + ?Sized>(
    env: &E,
    config: &AlgorithmConfig,
    horizon: usize,
    solver: &SolverSettings,
    init: &InitActions<T>,
) -> Result<TrialMetrics<T>> {
    config.validate()?;
    solver.validate()?;
    let t_init = config.t_init;
    if horizon < t_init {
        return Err(BanditError::Domain(format!("horizon {horizon} is shorter than t_init = {t_init}")));
    }
    if let InitActions::Given(actions) = init {
        if actions.len() < t_init {
            return Err(BanditError::InsufficientData(format!(
                "{} initialization actions given, need {t_init}",
                actions.len()
            )));
        }
    }
    let (d_a, d_x, l) = env.dims();
    let theta_star = env.theta_star();
    let seed = config.seed;
    let mut policy = PolicyState::new(config.clone(), env.action_space())?;

    // Gram statistics cost about one loss evaluation per round to maintain
    // and pay off as soon as the per-sample route is the dearer one.
    let p = d_a * d_x;
    let keep_gram = p * p <= horizon * d_x * (d_a + l);
    let mut ls = LeastSquares::new(d_a, d_x, l, keep_gram);
    let mut history = History::new();
    let mut rows: Vec<RoundMetrics<T>> = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut exploit_actions = Vec::with_capacity(horizon);
    let mut regret_sum = T::zero();
    let mut reward_sum = T::zero();

    let mut play = |t: usize,
                    a: ActionVector<T>,
                    batch: ContextBatch<T>,
                    explored: bool,
                    degenerate: bool,
                    space: &ActionSpace<T>,
                    history: &mut History<T>,
                    ls: &mut LeastSquares<T>,
                    rows: &mut Vec<RoundMetrics<T>>|
     -> Result<()> {
        let star = clairvoyant_action(theta_star, &batch, space, seed)?;
        let inst = instantaneous_regret(theta_star, &star.action, &a, &batch)?;
        regret_sum += inst;
        reward_sum += mean_reward(theta_star, &a, &batch)?;
        let y = env.rewards(&a, &batch);
        rows.push(RoundMetrics {
            t,
            inst_regret: inst,
            avg_regret: regret_sum / T::from_usize_lossy(t),
            cum_reward: reward_sum,
            explored,
            degenerate,
            infeasible: !space.contains(&a, T::lit(FEASIBILITY_TOL)),
            lambda_t: None,
            iterations: None,
            converged: None,
            nuclear_norm: None,
            frob_err: None,
        });
        history.push(a, batch, y)?;
        ls.push(history.rounds().last().expect("just pushed"))
    };

    for t in 1..=t_init {
        let a = match init {
            InitActions::Random => random_feasible_action(policy.action_space(), d_a, seed, t)?,
            InitActions::Given(v) => v[t - 1].clone(),
        };
        if a.len() != d_a {
            return Err(shape_err("initialization action", d_a, a.len()));
        }
        policy.record(a.clone())?;
        actions.push(a.clone());
        exploit_actions.push(None);
        let space = policy.action_space().clone();
        play(t, a, env.contexts(t), false, false, &space, &mut history, &mut ls, &mut rows)?;
    }

    let abort = |round: usize| move |e: BanditError| BanditError::Aborted { round, source: Box::new(e) };
    let lambda0 = match config.lambda0 {
        Lambda0::Fixed(v) => T::lit(v),
        Lambda0::Auto => bootstrap_lambda0(&history, solver).map_err(abort(t_init))?,
    };

    let mut estimate: Option<RepresentationMatrix<T>> = None;
    let mut curvature = None;
    for t in t_init..=horizon {
        let refit = estimate.is_none()
            || t == horizon
            || (t - t_init) % config.refit_every == 0
            || is_exploration_round(t as u64, config.exploration_exponent);
        if refit {
            let lambda = lambda_schedule(lambda0, t);
            let fit = ls
                .solve(lambda, estimate.as_ref(), curvature.as_ref(), solver)
                .map_err(abort(t))?;
            let row = &mut rows[t - 1];
            row.lambda_t = Some(lambda);
            row.iterations = Some(fit.iterations);
            row.converged = Some(fit.converged);
            row.nuclear_norm = Some(fit.theta_hat.nuclear_norm());
            row.frob_err = Some((fit.theta_hat.entries() - theta_star.entries()).norm());
            curvature = fit.curvature_direction;
            estimate = Some(fit.theta_hat);
        }
        if t == horizon {
            break;
        }
        let theta_hat = estimate.as_ref().expect("fit above");
        let batch = env.contexts(t + 1);
        let outcome = policy.step(theta_hat, &batch, t).map_err(abort(t + 1))?;
        actions.push(outcome.action.clone());
        exploit_actions.push(Some(outcome.exploit));
        let space = policy.action_space().clone();
        play(t + 1, outcome.action, batch, outcome.explored, outcome.degenerate, &space, &mut history, &mut ls, &mut rows)
            .map_err(abort(t + 1))?;
    }

    Ok(TrialMetrics {
        seed,
        t_init,
        lambda0,
        rounds: rows,
        actions,
        exploit_actions,
        gain: None,
        final_estimate: estimate,
    })
}

/// Nearest-rank quantile `sorted[⌈p n⌉ − 1]` of a non-empty sorted slice.
pub fn nearest_rank<T: Real>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow<T: Real> {
    pub t: usize,
    pub mean_avg_regret: T,
    pub q05: T,
    pub q95: T,
    /// Mean relative gain over trials that report one at this round.
    pub mean_gain: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport<T: Real> {
    pub trials: usize,
    pub rows: Vec<AggregateRow<T>>,
}

/// Per-round mean and 5%/95% nearest-rank quantiles of the time-averaged
/// regret across trials. All trials must share a horizon.
pub fn aggregate<T: Real>(trials: &[TrialMetrics<T>]) -> Result<AggregateReport<T>> {
    let Some(first) = trials.first() else {
        return Err(BanditError::InsufficientData("no trials to aggregate".into()));
    };
    let horizon = first.horizon();
    if let Some(bad) = trials.iter().find(|m| m.horizon() != horizon) {
        return Err(BanditError::LengthMismatch(format!(
            "trial horizons differ: {horizon} and {}",
            bad.horizon()
        )));
    }
    let n = T::from_usize_lossy(trials.len());
    let mut rows = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let mut values: Vec<T> = trials.iter().map(|m| m.rounds[i].avg_regret).collect();
        let mean = values.iter().fold(T::zero(), |acc, &v| acc + v) / n;
        values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let gains: Vec<T> = trials
            .iter()
            .filter_map(|m| m.gain.as_ref().and_then(|g| g.get(i).copied().flatten()))
            .collect();
        let mean_gain = (!gains.is_empty())
            .then(|| gains.iter().fold(T::zero(), |acc, &v| acc + v) / T::from_usize_lossy(gains.len()));
        rows.push(AggregateRow {
            t: first.rounds[i].t,
            mean_avg_regret: mean,
            q05: nearest_rank(&values, 0.05),
            q95: nearest_rank(&values, 0.95),
            mean_gain,
        });
    }
    Ok(AggregateReport {
        trials: trials.len(),
        rows,
    })
}

/// Cumulative expected reward of the logged actions under `theta_star`.
pub fn logged_cumulative_reward<T: Real>(logged: &History<T>, theta_star: &RepresentationMatrix<T>) -> Result<Vec<T>> {
    let mut acc = T::zero();
    logged
        .rounds()
        .iter()
        .map(|r| {
            acc += mean_reward(theta_star, &r.action, &r.batch)?;
            Ok(acc)
        })
        .collect()
}

/// Relative cumulative gain of a policy trace over the logged actions,
/// `(R^π_t − R^log_t) / |R^log_t|`, both evaluated in expectation under
/// `theta_star`. Rounds where the logged total is zero give `None`.
pub fn replay_gain<T: Real>(
    logged: &History<T>,
    trace: &TrialMetrics<T>,
    theta_star: &RepresentationMatrix<T>,
) -> Result<Vec<Option<T>>> {
    if trace.horizon() > logged.len() {
        return Err(BanditError::LengthMismatch(format!(
            "trace has {} rounds, log has {}",
            trace.horizon(),
            logged.len()
        )));
    }
    let base = logged_cumulative_reward(logged, theta_star)?;
    Ok(trace
        .rounds
        .iter()
        .zip(&base)
        .map(|(row, &b)| (b != T::zero()).then(|| (row.cum_reward - b) / b.abs()))
        .collect())
}

/// `Σ (y − ŷ)² / Σ y²`.
pub fn prediction_error_ratio<T: Real>(observed: &[T], predicted: &[T]) -> Result<T> {
    if observed.len() != predicted.len() {
        return Err(BanditError::LengthMismatch(format!(
            "{} observations, {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    let denom = observed.iter().fold(T::zero(), |acc, &y| acc + y * y);
    if denom == T::zero() {
        return Err(BanditError::DegenerateDenominator("sum of squared rewards"));
    }
    let num = observed
        .iter()
        .zip(predicted)
        .fold(T::zero(), |acc, (&y, &p)| acc + (y - p) * (y - p));
    Ok(num / denom)
}

/// Solver settings for leave-one-out folds; tighter than the online
/// defaults so that fold estimates are reproducible to high precision.
pub fn loo_settings() -> SolverSettings {
    SolverSettings {
        max_iters: 50_000,
        rel_tol: 1e-15,
        fixed_point_tol: 1e-11,
        ..SolverSettings::default()
    }
}

/// Leave-one-round-out prediction error ratio at a fixed `lambda`: each
/// round's rewards are predicted from a fit on all other rounds.
pub fn loo_prediction_error<T: Real>(logged: &History<T>, lambda: T, settings: &SolverSettings) -> Result<T> {
    if logged.len() < 3 {
        return Err(BanditError::InsufficientData(format!(
            "leave-one-out needs at least 3 rounds, have {}",
            logged.len()
        )));
    }
    let observed: Vec<T> = logged.rounds().iter().flat_map(|r| r.rewards.iter().copied()).collect();
    if observed.iter().all(|&y| y == T::zero()) {
        return Err(BanditError::DegenerateDenominator("sum of squared rewards"));
    }
    let full = LeastSquares::from_history(logged)?.solve(lambda, None, None, settings)?;
    let mut predicted = Vec::with_capacity(observed.len());
    for k in 0..logged.len() {
        let fold = LeastSquares::from_rounds(
            logged
                .rounds()
                .iter()
                .enumerate()
                .filter(move |(i, _)| *i != k)
                .map(|(_, r)| r),
        )?;
        let fit = fold.solve(lambda, Some(&full.theta_hat), full.curvature_direction.as_ref(), settings)?;
        let held = &logged.rounds()[k];
        let w = fit.theta_hat.entries().tr_mul(held.action.values());
        predicted.extend(held.batch.matrix().column_iter().map(|x| w.dot(&x)));
    }
    prediction_error_ratio(&observed, &predicted)
}
