//! Domain types shared by the estimator, policy, environments and harness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, BanditError, Result};
use crate::scalar::Real;

fn all_finite<T: Real>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite_value())
}

/// The `d_a × d_x` bilinear interaction matrix. Mean reward is `aᵀ Θ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix<T: Real> {
    entries: DMatrix<T>,
}

/// Thin SVD `Θ = U diag(s) Vᵀ` with `k = min(d_a, d_x)` triplets.
///
/// Singular values are non-increasing. Each `u_j` is flipped (together with
/// `v_j`) so that its largest-magnitude entry is non-negative.
#[derive(Debug, Clone)]
pub struct Svd<T: Real> {
    pub u: DMatrix<T>,
    pub s: DVector<T>,
    pub v: DMatrix<T>,
}

impl<T: Real> Svd<T> {
    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.transpose()
    }
}

/// Sorted, sign-normalized thin SVD of an arbitrary finite matrix.
pub(crate) fn sorted_svd<T: Real>(m: &DMatrix<T>) -> Svd<T> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        };
    }
    let svd = m.clone().svd(true, true);
    let u_raw = svd.u.expect("requested U");
    let vt_raw = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = svd.singular_values[src];
        let mut ucol = u_raw.column(src).into_owned();
        let mut vcol = vt_raw.row(src).transpose();
        let pivot = ucol.iter().copied().fold(T::zero(), |best, x| {
            if x.abs() > best.abs() {
                x
            } else {
                best
            }
        });
        if pivot < T::zero() {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
    }
    Svd { u, s, v }
}

impl<T: Real> RepresentationMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(shape_err("representation matrix", "d_a ≥ 1 and d_x ≥ 1", format!("{:?}", entries.shape())));
        }
        if !all_finite(entries.as_slice()) {
            return Err(BanditError::NonFinite("representation matrix"));
        }
        Ok(Self { entries })
    }

    pub fn zeros(d_a: usize, d_x: usize) -> Self {
        assert!(d_a >= 1 && d_x >= 1, "dimensions must be positive");
        Self {
            entries: DMatrix::zeros(d_a, d_x),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "dimension must be positive");
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    /// Row-major constructor.
    pub fn from_row_slice(d_a: usize, d_x: usize, values: &[T]) -> Result<Self> {
        if values.len() != d_a * d_x {
            return Err(shape_err("representation matrix", d_a * d_x, values.len()));
        }
        Self::new(DMatrix::from_row_slice(d_a, d_x, values))
    }

    /// Wraps a matrix produced by our own arithmetic on validated inputs.
    pub(crate) fn from_trusted(entries: DMatrix<T>) -> Self {
        debug_assert!(all_finite(entries.as_slice()));
        Self { entries }
    }

    pub fn d_a(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.entries.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<T> {
        self.entries
    }

    pub fn scaled(&self, c: T) -> Self {
        Self::from_trusted(&self.entries * c)
    }

    pub fn svd(&self) -> Svd<T> {
        sorted_svd(&self.entries)
    }

    pub fn singular_values(&self) -> DVector<T> {
        self.svd().s
    }

    pub fn frobenius_norm(&self) -> T {
        self.entries.norm()
    }

    pub fn nuclear_norm(&self) -> T {
        self.singular_values().iter().fold(T::zero(), |acc, &s| acc + s)
    }

    pub fn operator_norm(&self) -> T {
        self.singular_values().iter().copied().fold(T::zero(), |a, b| a.max(b))
    }

    /// `Θ b`, the per-coordinate score an action is dotted against.
    pub fn apply(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.d_x() {
            return Err(shape_err("context", self.d_x(), x.len()));
        }
        Ok(&self.entries * x)
    }
}

/// One action `a ∈ R^{d_a}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector<T: Real> {
    values: DVector<T>,
}

impl<T: Real> ActionVector<T> {
    pub fn new(values: DVector<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(shape_err("action", "length ≥ 1", 0));
        }
        if !all_finite(values.as_slice()) {
            return Err(BanditError::NonFinite("action"));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub(crate) fn from_trusted(values: DVector<T>) -> Self {
        debug_assert!(all_finite(values.as_slice()));
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    pub fn into_values(self) -> DVector<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        self.values.norm()
    }
}

/// The `L` context vectors observed at one round, stored as the columns of
/// a `d_x × L` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch<T: Real> {
    round: usize,
    contexts: DMatrix<T>,
}

impl<T: Real> ContextBatch<T> {
    pub fn new(round: usize, contexts: Vec<DVector<T>>) -> Result<Self> {
        let Some(first) = contexts.first() else {
            return Err(shape_err("context batch", "L ≥ 1", 0));
        };
        let d_x = first.len();
        if let Some(bad) = contexts.iter().find(|c| c.len() != d_x) {
            return Err(shape_err("context batch", d_x, bad.len()));
        }
        Self::from_matrix(round, DMatrix::from_columns(&contexts))
    }

    /// Columns of `contexts` are the individual context vectors.
    pub fn from_matrix(round: usize, contexts: DMatrix<T>) -> Result<Self> {
        if contexts.ncols() == 0 || contexts.nrows() == 0 {
            return Err(shape_err("context batch", "d_x ≥ 1 and L ≥ 1", format!("{:?}", contexts.shape())));
        }
        if !all_finite(contexts.as_slice()) {
            return Err(BanditError::NonFinite("context batch"));
        }
        Ok(Self { round, contexts })
    }

    pub(crate) fn from_trusted(round: usize, contexts: DMatrix<T>) -> Self {
        Self { round, contexts }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn with_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }

    pub fn d_x(&self) -> usize {
        self.contexts.nrows()
    }

    /// Number of targets `L`.
    pub fn len(&self) -> usize {
        self.contexts.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.contexts
    }

    pub fn context(&self, l: usize) -> DVector<T> {
        self.contexts.column(l).into_owned()
    }

    pub fn sum(&self) -> DVector<T> {
        context_sum(self)
    }
}

/// `b_t = Σ_ℓ x_{t,ℓ}`.
pub fn context_sum<T: Real>(batch: &ContextBatch<T>) -> DVector<T> {
    let m = batch.matrix();
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

/// `aᵀ Θ x`.
pub fn expected_reward<T: Real>(
    theta: &RepresentationMatrix<T>,
    a: &ActionVector<T>,
    x: &DVector<T>,
) -> Result<T> {
    if a.len() != theta.d_a() {
        return Err(shape_err("action", theta.d_a(), a.len()));
    }
    if x.len() != theta.d_x() {
        return Err(shape_err("context", theta.d_x(), x.len()));
    }
    Ok(a.values().dot(&(theta.entries() * x)))
}

/// One observed reward `y_{t,ℓ}`; `target` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSample<T: Real> {
    pub round: usize,
    pub target: usize,
    pub reward: T,
}

impl<T: Real> RewardSample<T> {
    pub fn new(round: usize, target: usize, reward: T) -> Result<Self> {
        if !reward.is_finite_value() {
            return Err(BanditError::NonFinite("reward"));
        }
        if target == 0 {
            return Err(BanditError::Domain("target index is 1-based".into()));
        }
        Ok(Self { round, target, reward })
    }
}

/// One round of the log: the action taken, the contexts seen, and the `L`
/// rewards observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Round<T: Real> {
    pub action: ActionVector<T>,
    pub batch: ContextBatch<T>,
    pub rewards: DVector<T>,
}

impl<T: Real> Round<T> {
    pub fn samples(&self) -> impl Iterator<Item = RewardSample<T>> + '_ {
        self.rewards.iter().enumerate().map(move |(l, &reward)| RewardSample {
            round: self.batch.round(),
            target: l + 1,
            reward,
        })
    }
}

/// Growing log of rounds `1..=t`. All rounds share `(d_a, d_x, L)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History<T: Real> {
    rounds: Vec<Round<T>>,
}

impl<T: Real> History<T> {
    pub fn new() -> Self {
        Self { rounds: Vec::new() }
    }

    /// Appends round `t = len + 1`. The batch's round number must match.
    pub fn push(&mut self, action: ActionVector<T>, batch: ContextBatch<T>, rewards: DVector<T>) -> Result<()> {
        let expected_round = self.rounds.len() + 1;
        if batch.round() != expected_round {
            return Err(BanditError::Domain(format!(
                "history rounds must increase by one from 1: expected round {expected_round}, got {}",
                batch.round()
            )));
        }
        if rewards.len() != batch.len() {
            return Err(shape_err("rewards", batch.len(), rewards.len()));
        }
        if !all_finite(rewards.as_slice()) {
            return Err(BanditError::NonFinite("rewards"));
        }
        if let Some(first) = self.rounds.first() {
            if action.len() != first.action.len() {
                return Err(shape_err("action", first.action.len(), action.len()));
            }
            if batch.d_x() != first.batch.d_x() {
                return Err(shape_err("context", first.batch.d_x(), batch.d_x()));
            }
            if batch.len() != first.batch.len() {
                return Err(shape_err("targets per round", first.batch.len(), batch.len()));
            }
        }
        self.rounds.push(Round { action, batch, rewards });
        Ok(())
    }

    pub fn from_rounds(rounds: impl IntoIterator<Item = (ActionVector<T>, ContextBatch<T>, DVector<T>)>) -> Result<Self> {
        let mut h = Self::new();
        for (a, b, y) in rounds {
            h.push(a, b, y)?;
        }
        Ok(h)
    }

    pub fn rounds(&self) -> &[Round<T>] {
        &self.rounds
    }

    /// Number of rounds `t`.
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// `(d_a, d_x, L)`, or `None` for an empty log.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.rounds
            .first()
            .map(|r| (r.action.len(), r.batch.d_x(), r.batch.len()))
    }

    /// The first `t` rounds.
    pub fn prefix(&self, t: usize) -> Self {
        Self {
            rounds: self.rounds[..t.min(self.rounds.len())].to_vec(),
        }
    }
}

/// Feasible action set `A_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace<T: Real> {
    /// `{a : ‖a‖₂ ≤ 1}`.
    UnitBall,
    /// Axis-aligned box `lower ≤ a ≤ upper`.
    Box { lower: DVector<T>, upper: DVector<T> },
    /// Actions `(p, p²)` for a scalar price `p ∈ [lower, upper]`.
    LiftedPrice { lower: T, upper: T },
}

impl<T: Real> ActionSpace<T> {
    pub fn unit_box(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(shape_err("box bounds", lower.len(), upper.len()));
        }
        if !all_finite(lower.as_slice()) || !all_finite(upper.as_slice()) {
            return Err(BanditError::NonFinite("box bounds"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(BanditError::Domain("box requires lower ≤ upper in every coordinate".into()));
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn lifted_price(lower: T, upper: T) -> Result<Self> {
        if !(lower.is_finite_value() && upper.is_finite_value()) || lower > upper {
            return Err(BanditError::Domain("price interval requires finite lower ≤ upper".into()));
        }
        Ok(Self::LiftedPrice { lower, upper })
    }

    /// Dimension the space constrains, if it fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::UnitBall => None,
            Self::Box { lower, .. } => Some(lower.len()),
            Self::LiftedPrice { .. } => Some(2),
        }
    }

    pub fn contains(&self, a: &ActionVector<T>, tol: T) -> bool {
        let v = a.values();
        match self {
            Self::UnitBall => v.norm() <= T::one() + tol,
            Self::Box { lower, upper } => {
                v.len() == lower.len()
                    && v.iter()
                        .zip(lower.iter().zip(upper.iter()))
                        .all(|(&x, (&l, &u))| x >= l - tol && x <= u + tol)
            }
            Self::LiftedPrice { lower, upper } => {
                v.len() == 2
                    && v[0] >= *lower - tol
                    && v[0] <= *upper + tol
                    && (v[1] - v[0] * v[0]).abs() <= tol * (T::one() + v[1].abs())
            }
        }
    }
}

/// How `λ_0` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda0 {
    /// Bootstrapped from the initialization rounds.
    Auto,
    Fixed(f64),
}

/// Distribution of the exploration perturbation `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// `δ ~ N(0, h I)`.
    Isotropic,
    /// `δ_j ~ N(0, τ̂_j)`, `τ̂_j` the sample standard deviation of past actions.
    CoordinateStd,
}

/// Learner configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig {
    pub t_init: usize,
    /// Exploration variance scale.
    pub h: f64,
    pub lambda0: Lambda0,
    pub exploration_exponent: f64,
    pub perturbation: Perturbation,
    /// `false` runs the greedy ablation.
    pub explore: bool,
    pub seed: u64,
    /// Refit on exploration rounds and every `refit_every`-th round; 1 refits every round.
    pub refit_every: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            t_init: 10,
            h: 0.1,
            lambda0: Lambda0::Auto,
            exploration_exponent: 1.5,
            perturbation: Perturbation::Isotropic,
            explore: true,
            seed: 0,
            refit_every: 1,
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_init < 1 {
            return Err(BanditError::Domain("t_init must be ≥ 1".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(BanditError::Domain("h must be a positive finite number".into()));
        }
        if !(self.exploration_exponent > 1.0 && self.exploration_exponent.is_finite()) {
            return Err(BanditError::Domain("exploration_exponent must be > 1".into()));
        }
        if let Lambda0::Fixed(v) = self.lambda0 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BanditError::Domain("lambda0 must be positive".into()));
            }
        }
        if self.refit_every < 1 {
            return Err(BanditError::Domain("refit_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vector, stream, Purpose};
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn context_sum_examples() {
        let b = ContextBatch::new(1, vec![dv(&[1.0, 2.0])]).unwrap();
        assert_eq!(context_sum(&b), dv(&[1.0, 2.0]));
        let b = ContextBatch::new(1, vec![dv(&[1.0, 0.0]), dv(&[-1.0, 0.0])]).unwrap();
        assert_eq!(context_sum(&b), dv(&[0.0, 0.0]));
    }

    #[test]
    fn context_sum_matches_scalar_loop() {
        let mut rng = stream(3, Purpose::Contexts, 0);
        let xs: Vec<DVector<f64>> = (0..3).map(|_| normal_vector(&mut rng, 5)).collect();
        let b = ContextBatch::new(1, xs.clone()).unwrap();
        let got = context_sum(&b);
        for j in 0..5 {
            let mut acc = 0.0;
            for x in &xs {
                acc += x[j];
            }
            assert_eq!(got[j], acc);
        }
    }

    #[test]
    fn expected_reward_examples() {
        let id = RepresentationMatrix::<f64>::identity(2);
        let a = ActionVector::from_slice(&[1.0, 0.0]).unwrap();
        assert_eq!(expected_reward(&id, &a, &dv(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(expected_reward(&id, &a, &dv(&[1.0, 0.0])).unwrap(), 1.0);
        assert!(matches!(
            expected_reward(&id, &a, &dv(&[1.0, 0.0, 0.0])),
            Err(BanditError::Shape { .. })
        ));
    }

    #[test]
    fn rank_one_reward_factorizes() {
        let mut rng = stream(11, Purpose::Construction, 0);
        let u = normal_vector::<f64, _>(&mut rng, 4);
        let v = normal_vector::<f64, _>(&mut rng, 3);
        let theta = RepresentationMatrix::new(&u * v.transpose()).unwrap();
        for _ in 0..20 {
            let a = normal_vector::<f64, _>(&mut rng, 4);
            let x = normal_vector::<f64, _>(&mut rng, 3);
            let got = expected_reward(&theta, &ActionVector::new(a.clone()).unwrap(), &x).unwrap();
            let want = a.dot(&u) * v.dot(&x);
            assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(RepresentationMatrix::new(DMatrix::<f64>::zeros(0, 2)).is_err());
        assert!(RepresentationMatrix::new(DMatrix::from_element(1, 1, f64::NAN)).is_err());
        assert!(ActionVector::from_slice(&[f64::INFINITY]).is_err());
        assert!(ContextBatch::<f64>::new(1, vec![]).is_err());
        assert!(ContextBatch::new(1, vec![dv(&[1.0]), dv(&[1.0, 2.0])]).is_err());
        assert!(RewardSample::new(1, 1, f64::NAN).is_err());
        assert!(ActionSpace::unit_box(dv(&[1.0]), dv(&[0.0])).is_err());
    }

    #[test]
    fn history_enforces_round_order_and_dims() {
        let mut h = History::new();
        let a = ActionVector::from_slice(&[1.0, 0.0]).unwrap();
        let b1 = ContextBatch::new(1, vec![dv(&[1.0])]).unwrap();
        h.push(a.clone(), b1, dv(&[0.5])).unwrap();
        let skip = ContextBatch::new(3, vec![dv(&[1.0])]).unwrap();
        assert!(h.push(a.clone(), skip, dv(&[0.5])).is_err());
        let wide = ContextBatch::new(2, vec![dv(&[1.0, 1.0])]).unwrap();
        assert!(h.push(a.clone(), wide, dv(&[0.5])).is_err());
        let b2 = ContextBatch::new(2, vec![dv(&[2.0])]).unwrap();
        assert!(h.push(a.clone(), b2.clone(), dv(&[0.5, 0.1])).is_err());
        h.push(a, b2, dv(&[0.1])).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.dims(), Some((2, 1, 1)));
        let samples: Vec<_> = h.rounds()[1].samples().collect();
        assert_eq!(samples[0].round, 2);
        assert_eq!(samples[0].target, 1);
    }

    #[test]
    fn svd_is_sorted_sign_normalized_and_reconstructs() {
        let mut rng = stream(5, Purpose::Construction, 1);
        for (m, n) in [(3, 5), (5, 3), (4, 4), (1, 6)] {
            let entries = DMatrix::from_fn(m, n, |_, _| crate::rng::normal::<f64, _>(&mut rng));
            let theta = RepresentationMatrix::new(entries.clone()).unwrap();
            let svd = theta.svd();
            assert_eq!(svd.s.len(), m.min(n));
            for w in svd.s.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert!(svd.s.iter().all(|&s| s >= 0.0));
            for col in svd.u.column_iter() {
                let pivot = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
                assert!(pivot >= 0.0);
            }
            let err = (svd.reconstruct() - &entries).norm();
            assert!(err <= 1e-8 * entries.norm().max(1.0));
        }
    }

    #[test]
    fn f32_types_work() {
        let theta = RepresentationMatrix::<f32>::identity(3);
        let a = ActionVector::from_slice(&[1.0f32, 2.0, 3.0]).unwrap();
        let x = DVector::from_column_slice(&[1.0f32, 1.0, 1.0]);
        assert_eq!(expected_reward(&theta, &a, &x).unwrap(), 6.0);
        assert!((theta.nuclear_norm() - 3.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn reward_is_homogeneous_in_action(
            alpha in -1e3f64..1e3,
            seed in any::<u64>(),
        ) {
            let mut rng = stream(seed, Purpose::Construction, 0);
            let theta = RepresentationMatrix::new(DMatrix::from_fn(3, 4, |_, _| crate::rng::normal::<f64, _>(&mut rng))).unwrap();
            let a = normal_vector::<f64, _>(&mut rng, 3);
            let x = normal_vector::<f64, _>(&mut rng, 4);
            let base = expected_reward(&theta, &ActionVector::new(a.clone()).unwrap(), &x).unwrap();
            let scaled = expected_reward(&theta, &ActionVector::new(a * alpha).unwrap(), &x).unwrap();
            let scale = (alpha * base).abs().max(f64::MIN_POSITIVE) + theta.frobenius_norm() * alpha.abs();
            prop_assert!((scaled - alpha * base).abs() <= 8.0 * f64::EPSILON * scale * 16.0);
        }

        #[test]
        fn context_sum_is_permutation_invariant(seed in any::<u64>(), l in 1usize..6) {
            let mut rng = stream(seed, Purpose::Contexts, 0);
            let xs: Vec<DVector<f64>> = (0..l).map(|_| normal_vector(&mut rng, 3)).collect();
            let mut rev = xs.clone();
            rev.reverse();
            let a = context_sum(&ContextBatch::new(1, xs).unwrap());
            let b = context_sum(&ContextBatch::new(1, rev).unwrap());
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }
}
