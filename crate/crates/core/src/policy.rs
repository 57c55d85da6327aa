//! Exploit/explore action selection.
//!
//! The exploit action maximizes `Σ_ℓ aᵀ Θ̂ x_ℓ = aᵀ (Θ̂ b)` over the action
//! space, which has a closed form for every supported space. On rounds
//! `t ∈ {⌊w^e⌋ : w ≥ 1}` the chosen action is perturbed with Gaussian noise
//! and, for box-shaped spaces, the space grows to contain it.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{shape_err, BanditError, Result};
use crate::model::{context_sum, ActionSpace, ActionVector, AlgorithmConfig, ContextBatch, Perturbation, RepresentationMatrix};
use crate::rng::{normal, stream, unit_vector, Purpose};
use crate::scalar::Real;

/// Variance floor for the coordinate-wise perturbation.
pub const COORDINATE_VARIANCE_FLOOR: f64 = 1e-12;

/// Result of the argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAction<T: Real> {
    pub action: ActionVector<T>,
    /// Every feasible action scored the same; the action is a random pick.
    pub degenerate: bool,
}

fn coin<R: Rng + ?Sized>(rng: &mut R) -> bool {
    rng.random::<bool>()
}

/// `argmax_{a ∈ space} aᵀ Θ b` with `b = Σ_ℓ x_ℓ`; ties go to the
/// largest-norm maximizer, and remaining ties to `rng`.
pub fn optimal_action<T: Real, R: Rng + ?Sized>(
    theta: &RepresentationMatrix<T>,
    batch: &ContextBatch<T>,
    space: &ActionSpace<T>,
    rng: &mut R,
) -> Result<OptimalAction<T>> {
    if batch.d_x() != theta.d_x() {
        return Err(shape_err("context", theta.d_x(), batch.d_x()));
    }
    if let Some(d) = space.dim() {
        if d != theta.d_a() {
            return Err(shape_err("action space", theta.d_a(), d));
        }
    }
    let score = theta.entries() * context_sum(batch);
    Ok(maximize_linear(&score, space, rng))
}

/// `argmax_{a ∈ space} ⟨score, a⟩`.
pub fn maximize_linear<T: Real, R: Rng + ?Sized>(
    score: &DVector<T>,
    space: &ActionSpace<T>,
    rng: &mut R,
) -> OptimalAction<T> {
    match space {
        ActionSpace::UnitBall => {
            let norm = score.norm();
            if norm > T::zero() && norm.is_finite_value() {
                OptimalAction {
                    action: ActionVector::from_trusted(score / norm),
                    degenerate: false,
                }
            } else {
                OptimalAction {
                    action: ActionVector::from_trusted(unit_vector(rng, score.len())),
                    degenerate: true,
                }
            }
        }
        ActionSpace::Box { lower, upper } => {
            let mut all_zero = true;
            let a = DVector::from_fn(score.len(), |j, _| {
                let (lo, hi) = (lower[j], upper[j]);
                if score[j] > T::zero() {
                    all_zero = false;
                    hi
                } else if score[j] < T::zero() {
                    all_zero = false;
                    lo
                } else if hi.abs() > lo.abs() {
                    hi
                } else if lo.abs() > hi.abs() {
                    lo
                } else if coin(rng) {
                    hi
                } else {
                    lo
                }
            });
            OptimalAction {
                action: ActionVector::from_trusted(a),
                degenerate: all_zero,
            }
        }
        ActionSpace::LiftedPrice { lower, upper } => {
            let (lin, quad) = (score[0], score[1]);
            let value = |p: T| lin * p + quad * p * p;
            let mut candidates = vec![*lower, *upper];
            if quad < T::zero() {
                let vertex = -lin / (T::lit(2.0) * quad);
                if vertex > *lower && vertex < *upper {
                    candidates.push(vertex);
                }
            }
            let mut best = candidates[0];
            for &p in &candidates[1..] {
                let (vp, vb) = (value(p), value(best));
                if vp > vb || (vp == vb && p.abs() > best.abs()) || (vp == vb && p.abs() == best.abs() && p != best && coin(rng)) {
                    best = p;
                }
            }
            OptimalAction {
                action: ActionVector::from_trusted(DVector::from_column_slice(&[best, best * best])),
                degenerate: lin == T::zero() && quad == T::zero(),
            }
        }
    }
}

/// Whether `t = ⌊w^exponent⌋` for some integer `w ≥ 1`.
///
/// `w ↦ w^e` grows by more than 1 per step for `e > 1`, so at most one `w`
/// can hit `t`, and it lies next to `t^{1/e}`.
pub fn is_exploration_round(t: u64, exponent: f64) -> bool {
    assert!(exponent > 1.0, "exponent must exceed 1");
    if t == 0 {
        return false;
    }
    let guess = (t as f64).powf(1.0 / exponent).round() as u64;
    (guess.saturating_sub(1)..=guess + 1)
        .filter(|&w| w >= 1)
        .any(|w| floor_pow(w, exponent) == t)
}

/// `⌊w^e⌋` evaluated in `f64`.
pub fn floor_pow(w: u64, exponent: f64) -> u64 {
    (w as f64).powf(exponent).floor() as u64
}

/// Exploration rounds up to and including `horizon`.
pub fn exploration_rounds(horizon: u64, exponent: f64) -> Vec<u64> {
    (1..)
        .map(|w| floor_pow(w, exponent))
        .take_while(|&t| t <= horizon)
        .collect()
}

/// Mutable per-trial policy state.
#[derive(Debug, Clone)]
pub struct PolicyState<T: Real> {
    config: AlgorithmConfig,
    action_space: ActionSpace<T>,
    past_actions: Vec<ActionVector<T>>,
}

/// Outcome of one policy step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T: Real> {
    pub action: ActionVector<T>,
    /// The unperturbed argmax.
    pub exploit: ActionVector<T>,
    pub explored: bool,
    pub degenerate: bool,
}

impl<T: Real> PolicyState<T> {
    pub fn new(config: AlgorithmConfig, action_space: ActionSpace<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            action_space,
            past_actions: Vec::new(),
        })
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.config
    }

    pub fn action_space(&self) -> &ActionSpace<T> {
        &self.action_space
    }

    pub fn past_actions(&self) -> &[ActionVector<T>] {
        &self.past_actions
    }

    /// Records an action taken outside [`PolicyState::step`], such as an
    /// initialization action.
    pub fn record(&mut self, a: ActionVector<T>) -> Result<()> {
        if let Some(first) = self.past_actions.first() {
            if first.len() != a.len() {
                return Err(shape_err("action", first.len(), a.len()));
            }
        }
        self.past_actions.push(a);
        Ok(())
    }

    /// Argmax for the action of `round`, with the degenerate fallback drawn
    /// from that round's stream.
    pub fn exploit(&self, theta_hat: &RepresentationMatrix<T>, batch: &ContextBatch<T>, round: usize) -> Result<OptimalAction<T>> {
        let mut rng = stream(self.config.seed, Purpose::Fallback, round as u64);
        optimal_action(theta_hat, batch, &self.action_space, &mut rng)
    }

    /// Given `Θ̂_t` and the contexts of round `t + 1`, returns `a_{t+1}`.
    /// The action is perturbed when `t` itself is an exploration round.
    pub fn step(&mut self, theta_hat: &RepresentationMatrix<T>, next_batch: &ContextBatch<T>, t: usize) -> Result<StepOutcome<T>> {
        if t < self.config.t_init {
            return Err(BanditError::Domain(format!(
                "policy steps start at t_init = {}, got t = {t}",
                self.config.t_init
            )));
        }
        let choice = self.exploit(theta_hat, next_batch, t + 1)?;
        let explored = self.config.explore && is_exploration_round(t as u64, self.config.exploration_exponent);
        let action = if explored {
            let a = perturb(&choice.action, self, t + 1)?;
            self.action_space = expand_action_space(&self.action_space, &a);
            a
        } else {
            choice.action.clone()
        };
        self.past_actions.push(action.clone());
        Ok(StepOutcome {
            action,
            exploit: choice.action,
            explored,
            degenerate: choice.degenerate,
        })
    }
}

/// Sample standard deviation of each coordinate over `actions`.
pub fn coordinate_std<T: Real>(actions: &[ActionVector<T>]) -> Result<DVector<T>> {
    if actions.len() < 2 {
        return Err(BanditError::InsufficientHistory(actions.len()));
    }
    let n = T::from_usize_lossy(actions.len());
    let d = actions[0].len();
    let mut mean = DVector::<T>::zeros(d);
    for a in actions {
        mean += a.values();
    }
    mean /= n;
    let mut var = DVector::<T>::zeros(d);
    for a in actions {
        let diff = a.values() - &mean;
        var += diff.component_mul(&diff);
    }
    var /= n - T::one();
    Ok(var.map(|v| v.sqrt()))
}

/// Adds exploration noise for the action of `round`.
///
/// `Isotropic` draws `δ ~ N(0, h I)`; `CoordinateStd` draws
/// `δ_j ~ N(0, τ̂_j)` with `τ̂` from [`coordinate_std`] (floored at
/// [`COORDINATE_VARIANCE_FLOOR`]). For the lifted-price space the noise is
/// applied to the price and the action re-lifted. The result is not
/// projected back into the space.
pub fn perturb<T: Real>(a_hat: &ActionVector<T>, state: &PolicyState<T>, round: usize) -> Result<ActionVector<T>> {
    let config = &state.config;
    let mut rng = stream(config.seed, Purpose::Exploration, round as u64);
    let lifted_price = matches!(state.action_space, ActionSpace::LiftedPrice { .. });
    let dims = if lifted_price { 1 } else { a_hat.len() };
    let variances: DVector<T> = match config.perturbation {
        Perturbation::Isotropic => DVector::from_element(dims, T::lit(config.h)),
        Perturbation::CoordinateStd => {
            let tau = coordinate_std(&state.past_actions)?;
            let floor = T::lit(COORDINATE_VARIANCE_FLOOR);
            DVector::from_fn(dims, |j, _| tau[j].max(floor))
        }
    };
    let noise = DVector::from_fn(dims, |j, _| variances[j].sqrt() * normal::<T, _>(&mut rng));
    let out = if lifted_price {
        let p = a_hat.values()[0] + noise[0];
        DVector::from_column_slice(&[p, p * p])
    } else {
        a_hat.values() + noise
    };
    ActionVector::new(out)
}

/// Grows a box (or price interval) so that it contains `a`. Unit balls are
/// returned unchanged.
pub fn expand_action_space<T: Real>(space: &ActionSpace<T>, a: &ActionVector<T>) -> ActionSpace<T> {
    match space {
        ActionSpace::UnitBall => ActionSpace::UnitBall,
        ActionSpace::Box { lower, upper } => ActionSpace::Box {
            lower: lower.zip_map(a.values(), |l, v| l.min(v)),
            upper: upper.zip_map(a.values(), |u, v| u.max(v)),
        },
        ActionSpace::LiftedPrice { lower, upper } => {
            let p = a.values()[0];
            ActionSpace::LiftedPrice {
                lower: lower.min(p),
                upper: upper.max(p),
            }
        }
    }
}
