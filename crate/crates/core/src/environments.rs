//! Synthetic reward generators and model reductions.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use crate::error::{shape_err, BanditError, Result};
use crate::estimator::{LeastSquares, SolverSettings};
use crate::model::{ActionSpace, ActionVector, ContextBatch, History, RepresentationMatrix};
use crate::rng::{normal, normal_vector, stream, Purpose};
use crate::scalar::Real;

/// Something the harness can run a trial against.
///
/// Contexts for round `t` never depend on the actions taken, and rewards
/// depend only on `(t, a, contexts)`, so two trials with the same seed see
/// the same contexts and noise draws.
pub trait Environment<T: Real> {
    /// `(d_a, d_x, L)`.
    fn dims(&self) -> (usize, usize, usize);
    fn theta_star(&self) -> &RepresentationMatrix<T>;
    fn action_space(&self) -> ActionSpace<T>;
    fn contexts(&self, t: usize) -> ContextBatch<T>;
    /// Noisy rewards `y_{t,ℓ}` for action `a`.
    fn rewards(&self, a: &ActionVector<T>, batch: &ContextBatch<T>) -> DVector<T>;
}

/// How context vectors are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextDistribution<T: Real> {
    /// i.i.d. `N(0, I_{d_x})`.
    StandardNormal,
    /// Every context equals the given vector (used by the multi-arm reduction).
    Constant(DVector<T>),
}

/// `y_{t,ℓ} = aᵀ Θ* x_{t,ℓ} + ε`, `ε ~ N(0, σ²)`.
#[derive(Debug, Clone)]
pub struct BilinearEnv<T: Real> {
    pub theta_star: RepresentationMatrix<T>,
    pub sigma: T,
    pub targets: usize,
    pub contexts: ContextDistribution<T>,
    pub space: ActionSpace<T>,
    pub seed: u64,
}

impl<T: Real> BilinearEnv<T> {
    pub fn new(theta_star: RepresentationMatrix<T>, sigma: T, targets: usize, seed: u64) -> Result<Self> {
        if !(sigma >= T::zero()) || !sigma.is_finite_value() {
            return Err(BanditError::Domain("sigma must be finite and non-negative".into()));
        }
        if targets == 0 {
            return Err(BanditError::Domain("L must be ≥ 1".into()));
        }
        Ok(Self {
            theta_star,
            sigma,
            targets,
            contexts: ContextDistribution::StandardNormal,
            space: ActionSpace::UnitBall,
            seed,
        })
    }

    pub fn with_space(mut self, space: ActionSpace<T>) -> Result<Self> {
        if let Some(d) = space.dim() {
            if d != self.theta_star.d_a() {
                return Err(shape_err("action space", self.theta_star.d_a(), d));
            }
        }
        self.space = space;
        Ok(self)
    }

    pub fn with_contexts(mut self, contexts: ContextDistribution<T>) -> Result<Self> {
        if let ContextDistribution::Constant(x) = &contexts {
            if x.len() != self.theta_star.d_x() {
                return Err(shape_err("constant context", self.theta_star.d_x(), x.len()));
            }
        }
        self.contexts = contexts;
        Ok(self)
    }

    /// Contexts and rewards for playing `a` at round `t`.
    pub fn sample_round(&self, a: &ActionVector<T>, t: usize) -> Result<(ContextBatch<T>, DVector<T>)> {
        if a.len() != self.theta_star.d_a() {
            return Err(shape_err("action", self.theta_star.d_a(), a.len()));
        }
        let batch = self.contexts(t);
        let y = self.rewards(a, &batch);
        Ok((batch, y))
    }
}

impl<T: Real> Environment<T> for BilinearEnv<T> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.theta_star.d_a(), self.theta_star.d_x(), self.targets)
    }

    fn theta_star(&self) -> &RepresentationMatrix<T> {
        &self.theta_star
    }

    fn action_space(&self) -> ActionSpace<T> {
        self.space.clone()
    }

    fn contexts(&self, t: usize) -> ContextBatch<T> {
        let d_x = self.theta_star.d_x();
        let m = match &self.contexts {
            ContextDistribution::StandardNormal => {
                let mut rng = stream(self.seed, Purpose::Contexts, t as u64);
                DMatrix::from_fn(d_x, self.targets, |_, _| normal::<T, _>(&mut rng))
            }
            ContextDistribution::Constant(x) => DMatrix::from_fn(d_x, self.targets, |i, _| x[i]),
        };
        ContextBatch::from_trusted(t, m)
    }

    fn rewards(&self, a: &ActionVector<T>, batch: &ContextBatch<T>) -> DVector<T> {
        let mut rng = stream(self.seed, Purpose::RewardNoise, batch.round() as u64);
        let w = self.theta_star.entries().tr_mul(a.values());
        DVector::from_fn(batch.len(), |l, _| {
            let mean = w.dot(&batch.matrix().column(l));
            mean + self.sigma * normal::<T, _>(&mut rng)
        })
    }
}

/// `Θ* = U D Vᵀ` together with its factors. `right` has orthonormal
/// columns; every column of `left` has norm `√d_a`.
#[derive(Debug, Clone)]
pub struct LowRankFactors<T: Real> {
    pub theta: RepresentationMatrix<T>,
    pub left: DMatrix<T>,
    pub right: DMatrix<T>,
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
pub fn orthonormalize<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let qk = q.column(k).into_owned();
                q.column_mut(j).axpy(-proj, &qk, T::one());
            }
        }
        let norm = q.column(j).norm();
        if norm <= T::lit(1e-12) {
            return Err(BanditError::DegenerateInput("columns are linearly dependent"));
        }
        q.column_mut(j).unscale_mut(norm);
    }
    Ok(q)
}

pub fn make_lowrank_factors<T: Real>(d_a: usize, d_x: usize, rank: usize, diag: &[T], seed: u64) -> Result<LowRankFactors<T>> {
    if rank == 0 || rank > d_a.min(d_x) {
        return Err(BanditError::Domain(format!(
            "rank {rank} must lie in 1..={}",
            d_a.min(d_x)
        )));
    }
    if diag.len() != rank {
        return Err(shape_err("diagonal", rank, diag.len()));
    }
    if diag.iter().any(|&d| !(d > T::zero()) || !d.is_finite_value()) {
        return Err(BanditError::Domain("diagonal entries must be positive".into()));
    }
    let mut rng = stream(seed, Purpose::Construction, 0);
    let u_raw = DMatrix::from_fn(d_a, rank, |_, _| normal::<T, _>(&mut rng));
    let v_raw = DMatrix::from_fn(d_x, rank, |_, _| normal::<T, _>(&mut rng));
    let left = orthonormalize(&u_raw)? * T::from_usize_lossy(d_a).sqrt();
    let right = orthonormalize(&v_raw)?;
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
    let theta = RepresentationMatrix::new(&left * d * right.transpose())?;
    Ok(LowRankFactors { theta, left, right })
}

/// Rank-`r` `Θ*` with Gram–Schmidt factors; singular values are
/// `√d_a · diag`.
pub fn make_lowrank_theta<T: Real>(d_a: usize, d_x: usize, rank: usize, diag: &[T], seed: u64) -> Result<RepresentationMatrix<T>> {
    Ok(make_lowrank_factors(d_a, d_x, rank, diag, seed)?.theta)
}

/// Each row has exactly `s0` non-zeros drawn `N(0, 1)` at uniformly chosen
/// columns.
pub fn make_sparse_theta<T: Real>(d_a: usize, d_x: usize, s0: usize, seed: u64) -> Result<RepresentationMatrix<T>> {
    if s0 == 0 || s0 > d_x {
        return Err(BanditError::Domain(format!("s0 must lie in 1..={d_x}")));
    }
    let mut rng = stream(seed, Purpose::Construction, 1);
    let mut m = DMatrix::zeros(d_a, d_x);
    for i in 0..d_a {
        let mut cols: Vec<usize> = sample(&mut rng, d_x, s0).into_vec();
        cols.sort_unstable();
        for j in cols {
            let mut v = T::zero();
            while v == T::zero() {
                v = normal::<T, _>(&mut rng);
            }
            m[(i, j)] = v;
        }
    }
    RepresentationMatrix::new(m)
}

/// Maps arm `i` (0-based) to the basis vector `e_i`.
#[derive(Debug, Clone, Copy)]
pub struct ArmEncoder {
    pub arms: usize,
}

impl ArmEncoder {
    pub fn encode<T: Real>(&self, arm: usize) -> Result<ActionVector<T>> {
        if arm >= self.arms {
            return Err(BanditError::IndexOutOfRange { index: arm, limit: self.arms });
        }
        let mut v = DVector::zeros(self.arms);
        v[arm] = T::one();
        ActionVector::new(v)
    }
}

/// Multi-armed bandit with means `μ` as a `K × 1` representation matrix
/// and constant context `x = (1)`.
pub fn reduce_multiarm<T: Real>(means: &[T]) -> Result<(RepresentationMatrix<T>, ArmEncoder)> {
    if means.is_empty() {
        return Err(BanditError::Domain("need at least one arm".into()));
    }
    let theta = RepresentationMatrix::new(DMatrix::from_column_slice(means.len(), 1, means))?;
    Ok((theta, ArmEncoder { arms: means.len() }))
}

/// Contextual multi-arm bandit with arm parameters `β_i`: `Θ* = (β_1, …, β_K)ᵀ`.
pub fn reduce_contextual_multiarm<T: Real>(betas: &[DVector<T>]) -> Result<RepresentationMatrix<T>> {
    let Some(first) = betas.first() else {
        return Err(BanditError::Domain("need at least one arm".into()));
    };
    let d_x = first.len();
    if let Some(bad) = betas.iter().find(|b| b.len() != d_x) {
        return Err(shape_err("arm parameter", d_x, bad.len()));
    }
    RepresentationMatrix::new(DMatrix::from_fn(betas.len(), d_x, |i, j| betas[i][j]))
}

/// Exponent vectors of all monomials of total degree `≤ order` in `d`
/// variables, in graded lexicographic order: by degree, then with larger
/// powers of earlier variables first.
pub fn monomial_exponents(d: usize, order: usize) -> Vec<Vec<usize>> {
    fn fill(prefix: &mut Vec<usize>, var: usize, d: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if var + 1 == d {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(prefix, var + 1, d, remaining - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for degree in 0..=order {
        if d == 0 {
            if degree == 0 {
                out.push(Vec::new());
            }
            continue;
        }
        fill(&mut Vec::with_capacity(d), 0, d, degree, &mut out);
    }
    out
}

/// All monomials of `p` up to total degree `order`, constant first.
pub fn lift_polynomial<T: Real>(p: &DVector<T>, order: usize) -> Result<DVector<T>> {
    if order == 0 {
        return Err(BanditError::Domain("order must be ≥ 1".into()));
    }
    let terms = monomial_exponents(p.len(), order);
    Ok(DVector::from_iterator(
        terms.len(),
        terms.iter().map(|exps| {
            exps.iter()
                .enumerate()
                .fold(T::one(), |acc, (i, &e)| acc * p[i].powi(e as i32))
        }),
    ))
}

/// Personalized linear demand `D = αᵀx + (βᵀx) p + ε`, revenue `Y = p D`.
#[derive(Debug, Clone)]
pub struct PricingEnv<T: Real> {
    pub alpha: DVector<T>,
    pub beta: DVector<T>,
    /// Standard deviation of the demand noise `ε`.
    pub noise_std: T,
    pub price_lower: T,
    pub price_upper: T,
    pub seed: u64,
    theta: RepresentationMatrix<T>,
}

/// Demand-model coefficients of the standard 15-dimensional pricing
/// simulation.
pub fn reference_pricing_vectors() -> (Vec<f64>, Vec<f64>) {
    let alpha = vec![1.1, -0.1, 0.0, 0.1, 0.0, 0.2, 0.0, 0.1, -0.1, 0.0, 0.0, 0.1, -0.1, 0.2, -0.2];
    let beta = [0.5, 0.1, -0.1, 0.0, 0.0, 0.0, 0.0, 0.2, 0.1, 0.2, 0.0, 0.2, -0.1, -0.2, 0.0]
        .iter()
        .map(|v| -v)
        .collect();
    (alpha, beta)
}

impl<T: Real> PricingEnv<T> {
    pub fn new(alpha: DVector<T>, beta: DVector<T>, noise_std: T, price_lower: T, price_upper: T, seed: u64) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(shape_err("beta", alpha.len(), beta.len()));
        }
        if !(noise_std >= T::zero()) {
            return Err(BanditError::Domain("noise_std must be non-negative".into()));
        }
        ActionSpace::lifted_price(price_lower, price_upper)?;
        let theta = pricing_matrix(&alpha, &beta)?;
        Ok(Self {
            alpha,
            beta,
            noise_std,
            price_lower,
            price_upper,
            seed,
            theta,
        })
    }

    /// Expected demand at price `p`.
    pub fn mean_demand(&self, p: T, x: &DVector<T>) -> T {
        self.alpha.dot(x) + self.beta.dot(x) * p
    }

    /// Revenue-maximizing unconstrained price `−αᵀx / (2βᵀx)` when `βᵀx < 0`.
    pub fn vertex_price(&self, x: &DVector<T>) -> Option<T> {
        let b = self.beta.dot(x);
        (b < T::zero()).then(|| -self.alpha.dot(x) / (T::lit(2.0) * b))
    }
}

fn pricing_matrix<T: Real>(alpha: &DVector<T>, beta: &DVector<T>) -> Result<RepresentationMatrix<T>> {
    RepresentationMatrix::new(DMatrix::from_fn(2, alpha.len(), |i, j| if i == 0 { alpha[j] } else { beta[j] }))
}

/// Maps a price `p` to the action `(p, p²)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriceEncoder;

impl PriceEncoder {
    pub fn encode<T: Real>(&self, p: T) -> Result<ActionVector<T>> {
        ActionVector::from_slice(&[p, p * p])
    }
}

/// `Θ* = (α; β)`, so that `(p, p²) Θ* x = p(αᵀx) + p²(βᵀx)`.
pub fn pricing_to_bilinear<T: Real>(env: &PricingEnv<T>) -> (RepresentationMatrix<T>, PriceEncoder) {
    (env.theta.clone(), PriceEncoder)
}

impl<T: Real> Environment<T> for PricingEnv<T> {
    fn dims(&self) -> (usize, usize, usize) {
        (2, self.alpha.len(), 1)
    }

    fn theta_star(&self) -> &RepresentationMatrix<T> {
        &self.theta
    }

    fn action_space(&self) -> ActionSpace<T> {
        ActionSpace::LiftedPrice {
            lower: self.price_lower,
            upper: self.price_upper,
        }
    }

    fn contexts(&self, t: usize) -> ContextBatch<T> {
        let mut rng = stream(self.seed, Purpose::Contexts, t as u64);
        ContextBatch::from_trusted(t, DMatrix::from_column_slice(self.alpha.len(), 1, normal_vector::<T, _>(&mut rng, self.alpha.len()).as_slice()))
    }

    /// The demand noise is drawn; the reward noise is `p ε`.
    fn rewards(&self, a: &ActionVector<T>, batch: &ContextBatch<T>) -> DVector<T> {
        let mut rng = stream(self.seed, Purpose::RewardNoise, batch.round() as u64);
        let p = a.values()[0];
        let w = self.theta.entries().tr_mul(a.values());
        DVector::from_fn(batch.len(), |l, _| {
            let eps = self.noise_std * normal::<T, _>(&mut rng);
            w.dot(&batch.matrix().column(l)) + p * eps
        })
    }
}

/// Replays the contexts of a log against a fitted model.
#[derive(Debug, Clone)]
pub struct ReplayEnv<T: Real> {
    pub theta_star: RepresentationMatrix<T>,
    pub sigma: T,
    pub space: ActionSpace<T>,
    pub seed: u64,
    batches: Vec<ContextBatch<T>>,
}

impl<T: Real> ReplayEnv<T> {
    /// The action space defaults to the coordinate-wise range of the logged
    /// actions.
    pub fn new(logged: &History<T>, theta_star: RepresentationMatrix<T>, sigma: T, seed: u64) -> Result<Self> {
        let Some((d_a, d_x, _)) = logged.dims() else {
            return Err(BanditError::InsufficientData("empty log".into()));
        };
        if theta_star.shape() != (d_a, d_x) {
            return Err(shape_err("theta", format!("{:?}", (d_a, d_x)), format!("{:?}", theta_star.shape())));
        }
        let first = logged.rounds()[0].action.values().clone();
        let (lower, upper) = logged.rounds().iter().fold((first.clone(), first), |(lo, hi), r| {
            (lo.zip_map(r.action.values(), |a, b| a.min(b)), hi.zip_map(r.action.values(), |a, b| a.max(b)))
        });
        Ok(Self {
            theta_star,
            sigma,
            space: ActionSpace::unit_box(lower, upper)?,
            seed,
            batches: logged.rounds().iter().map(|r| r.batch.clone()).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.batches.len()
    }
}

impl<T: Real> Environment<T> for ReplayEnv<T> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.theta_star.d_a(), self.theta_star.d_x(), self.batches[0].len())
    }

    fn theta_star(&self) -> &RepresentationMatrix<T> {
        &self.theta_star
    }

    fn action_space(&self) -> ActionSpace<T> {
        self.space.clone()
    }

    fn contexts(&self, t: usize) -> ContextBatch<T> {
        self.batches[t - 1].clone()
    }

    fn rewards(&self, a: &ActionVector<T>, batch: &ContextBatch<T>) -> DVector<T> {
        let mut rng = stream(self.seed, Purpose::RewardNoise, batch.round() as u64);
        let w = self.theta_star.entries().tr_mul(a.values());
        DVector::from_fn(batch.len(), |l, _| w.dot(&batch.matrix().column(l)) + self.sigma * normal::<T, _>(&mut rng))
    }
}

/// Settings used for pseudo-ground-truth fits: tighter than the per-round
/// defaults because the fit is done once.
pub fn offline_settings() -> SolverSettings {
    SolverSettings {
        max_iters: 20_000,
        rel_tol: 1e-12,
        fixed_point_tol: 1e-9,
        ..SolverSettings::default()
    }
}

/// Fits `Θ` on the whole log at `lambda` and estimates the noise level as
/// the RMS residual.
pub fn fit_pseudo_ground_truth<T: Real>(logged: &History<T>, lambda: T) -> Result<(RepresentationMatrix<T>, T)> {
    fit_pseudo_ground_truth_with(logged, lambda, &offline_settings())
}

pub fn fit_pseudo_ground_truth_with<T: Real>(
    logged: &History<T>,
    lambda: T,
    settings: &SolverSettings,
) -> Result<(RepresentationMatrix<T>, T)> {
    if logged.is_empty() {
        return Err(BanditError::InsufficientData("empty log".into()));
    }
    let ls = LeastSquares::from_history(logged)?;
    let fit = ls.solve(lambda, None, None, settings)?;
    let theta = fit.theta_hat;
    let mut sum_sq = T::zero();
    let mut count = 0usize;
    for r in logged.rounds() {
        let w = theta.entries().tr_mul(r.action.values());
        for (l, x) in r.batch.matrix().column_iter().enumerate() {
            let resid = r.rewards[l] - w.dot(&x);
            sum_sq += resid * resid;
            count += 1;
        }
    }
    let sigma = (sum_sq / T::from_usize_lossy(count)).sqrt();
    Ok((theta, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expected_reward;
    use crate::rng::{ball_point, normal_vector};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn noiseless_identity_rewards() {
        let env = BilinearEnv::new(RepresentationMatrix::<f64>::identity(2), 0.0, 3, 1).unwrap();
        let a = ActionVector::from_slice(&[1.0, 0.0]).unwrap();
        let (batch, y) = env.sample_round(&a, 4).unwrap();
        assert_eq!(batch.round(), 4);
        for l in 0..3 {
            assert_eq!(y[l], batch.matrix()[(0, l)]);
        }
    }

    #[test]
    fn reward_noise_has_requested_scale() {
        let env = BilinearEnv::new(RepresentationMatrix::<f64>::identity(2), 0.1, 1, 8).unwrap();
        let a = ActionVector::from_slice(&[0.3, -0.7]).unwrap();
        let batch = ContextBatch::new(1, vec![dv(&[0.5, 2.0])]).unwrap();
        let mean = 0.3 * 0.5 - 0.7 * 2.0;
        let n = 100_000;
        let draws: Vec<f64> = (1..=n).map(|t| env.rewards(&a, &batch.clone().with_round(t))[0]).collect();
        let avg = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|y| (y - avg).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((avg - mean).abs() < 3e-3);
        assert!((0.095..=0.105).contains(&var.sqrt()), "{}", var.sqrt());
    }

    #[test]
    fn sampling_is_reproducible() {
        let theta = make_lowrank_theta::<f64>(3, 4, 2, &[1.0, 0.5], 3).unwrap();
        let env = BilinearEnv::new(theta, 0.2, 2, 77).unwrap();
        let a = ActionVector::from_slice(&[0.1, 0.2, 0.3]).unwrap();
        let first = env.sample_round(&a, 5).unwrap();
        let second = env.sample_round(&a, 5).unwrap();
        assert_eq!(first.0, second.0);
        assert_eq!(first.1, second.1);
        assert_ne!(env.sample_round(&a, 6).unwrap().1, first.1);
    }

    #[test]
    fn lowrank_scalar_case() {
        let theta = make_lowrank_theta::<f64>(1, 1, 1, &[1.0], 0).unwrap();
        assert!((theta.entries()[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lowrank_reference_setting() {
        let diag = [1.0, 0.9, 0.9, 0.8, 0.5];
        let f = make_lowrank_factors::<f64>(10, 100, 5, &diag, 2024).unwrap();
        let gram = f.right.transpose() * &f.right;
        assert!((gram - DMatrix::identity(5, 5)).norm() < 1e-10);
        for col in f.left.column_iter() {
            assert!((col.norm() - 10f64.sqrt()).abs() < 1e-10);
        }
        // Independent check of the spectrum through the eigenvalues of ΘᵀΘ.
        let eig = (f.theta.entries().transpose() * f.theta.entries()).symmetric_eigen();
        let mut s: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut want: Vec<f64> = diag.iter().map(|d| d * 10f64.sqrt()).collect();
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for j in 0..5 {
            assert!((s[j] - want[j]).abs() <= 1e-8 * want[j]);
        }
        let rank = s.iter().filter(|&&v| v > 1e-6 * s[0]).count();
        assert_eq!(rank, 5);
    }

    #[test]
    fn lowrank_rejects_bad_rank() {
        assert!(make_lowrank_theta::<f64>(2, 3, 3, &[1.0, 1.0, 1.0], 0).is_err());
        assert!(make_lowrank_theta::<f64>(2, 3, 1, &[-1.0], 0).is_err());
    }

    #[test]
    fn sparse_rows_have_exact_support() {
        let theta = make_sparse_theta::<f64>(10, 100, 2, 5).unwrap();
        for row in theta.entries().row_iter() {
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 2);
        }
        let dense = make_sparse_theta::<f64>(4, 6, 6, 5).unwrap();
        assert!(dense.entries().iter().all(|v| *v != 0.0));
        assert!(make_sparse_theta::<f64>(2, 3, 4, 0).is_err());
    }

    #[test]
    fn multiarm_reduction() {
        let (theta, enc) = reduce_multiarm(&[0.1, 0.5, 0.3]).unwrap();
        let one = dv(&[1.0]);
        let rewards: Vec<f64> = (0..3)
            .map(|i| expected_reward(&theta, &enc.encode(i).unwrap(), &one).unwrap())
            .collect();
        assert_eq!(rewards, vec![0.1, 0.5, 0.3]);
        let best = (0..3).max_by(|&a, &b| rewards[a].partial_cmp(&rewards[b]).unwrap()).unwrap();
        assert_eq!(best, 1);
        assert!(enc.encode::<f64>(3).is_err());
    }

    #[test]
    fn reductions_are_exact_on_small_instances() {
        let mut rng = stream(4, Purpose::Construction, 0);
        for k in 1..=5 {
            let means: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
            let (theta, enc) = reduce_multiarm(&means).unwrap();
            for (i, &mu) in means.iter().enumerate() {
                let direct = theta.entries().transpose() * enc.encode::<f64>(i).unwrap().values();
                assert_eq!(direct[0], mu);
            }
            for d_x in 1..=6 {
                let betas: Vec<DVector<f64>> = (0..k).map(|_| normal_vector(&mut rng, d_x)).collect();
                let theta = reduce_contextual_multiarm(&betas).unwrap();
                let x = normal_vector::<f64, _>(&mut rng, d_x);
                for (i, beta) in betas.iter().enumerate() {
                    let got = expected_reward(&theta, &enc.encode(i).unwrap(), &x).unwrap();
                    let want: f64 = (0..d_x).map(|j| beta[j] * x[j]).sum();
                    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn polynomial_lift_examples() {
        assert_eq!(lift_polynomial(&dv(&[2.0]), 3).unwrap(), dv(&[1.0, 2.0, 4.0, 8.0]));
        let (a1, a2) = (3.0, 5.0);
        assert_eq!(
            lift_polynomial(&dv(&[a1, a2]), 2).unwrap(),
            dv(&[1.0, a1, a2, a1 * a1, a1 * a2, a2 * a2])
        );
        assert_eq!(lift_polynomial(&dv(&[a1, a2]), 1).unwrap(), dv(&[1.0, a1, a2]));
        assert!(lift_polynomial(&dv(&[1.0]), 0).is_err());
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn polynomial_lift_length_and_enumeration() {
        for d in 1..=4 {
            for order in 1..=4 {
                let terms = monomial_exponents(d, order);
                assert_eq!(terms.len(), binomial(d + order, order));
                // Brute force: every exponent vector with entries ≤ order and
                // total ≤ order appears exactly once.
                let mut count = 0;
                let mut idx = vec![0usize; d];
                loop {
                    if idx.iter().sum::<usize>() <= order {
                        count += 1;
                        assert_eq!(terms.iter().filter(|t| **t == idx).count(), 1);
                    }
                    let mut k = 0;
                    while k < d {
                        idx[k] += 1;
                        if idx[k] <= order {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == d {
                        break;
                    }
                }
                assert_eq!(count, terms.len());
                let degrees: Vec<usize> = terms.iter().map(|t| t.iter().sum()).collect();
                assert!(degrees.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    fn reference_env() -> PricingEnv<f64> {
        let (alpha, beta) = reference_pricing_vectors();
        PricingEnv::new(DVector::from_vec(alpha), DVector::from_vec(beta), 0.01, 0.0, 5.0, 0).unwrap()
    }

    #[test]
    fn pricing_reduction() {
        let env = reference_env();
        let (theta, enc) = pricing_to_bilinear(&env);
        let mut e1 = DVector::zeros(15);
        e1[0] = 1.0;
        assert_eq!(expected_reward(&theta, &enc.encode(0.0).unwrap(), &e1).unwrap(), 0.0);
        let p_star = env.vertex_price(&e1).unwrap();
        assert!((p_star - 1.1).abs() < 1e-12);
        let revenue = expected_reward(&theta, &enc.encode(p_star).unwrap(), &e1).unwrap();
        assert!((revenue - 0.605).abs() < 1e-12);

        let mut rng = stream(2, Purpose::Construction, 0);
        for _ in 0..50 {
            let x = normal_vector::<f64, _>(&mut rng, 15);
            let p: f64 = 3.0 * crate::rng::uniform::<f64, _>(&mut rng);
            let via_theta = expected_reward(&theta, &enc.encode(p).unwrap(), &x).unwrap();
            let via_demand = p * env.mean_demand(p, &x);
            assert!((via_theta - via_demand).abs() <= 1e-12 * (1.0 + via_demand.abs()));
        }
    }

    #[test]
    fn pricing_reward_noise_is_price_times_demand_noise() {
        let env = reference_env();
        let batch = env.contexts(3);
        let enc = PriceEncoder;
        let y1 = env.rewards(&enc.encode(1.0).unwrap(), &batch)[0];
        let y2 = env.rewards(&enc.encode(2.0).unwrap(), &batch)[0];
        let x = batch.context(0);
        let eps1 = y1 / 1.0 - env.mean_demand(1.0, &x);
        let eps2 = y2 / 2.0 - env.mean_demand(2.0, &x);
        assert!((eps1 - eps2).abs() < 1e-12);
        assert!(eps1.abs() < 0.05);
    }

    fn logged_history(seed: u64, theta: &RepresentationMatrix<f64>, sigma: f64, t: usize, l: usize) -> History<f64> {
        let env = BilinearEnv::new(theta.clone(), sigma, l, seed).unwrap();
        let mut rng = stream(seed, Purpose::InitAction, 0);
        let mut h = History::new();
        for round in 1..=t {
            let a = ActionVector::new(ball_point(&mut rng, theta.d_a())).unwrap();
            let (b, y) = env.sample_round(&a, round).unwrap();
            h.push(a, b, y).unwrap();
        }
        h
    }

    #[test]
    fn pseudo_ground_truth_noiseless() {
        let theta = make_lowrank_theta::<f64>(3, 4, 2, &[1.0, 0.6], 9).unwrap();
        let h = logged_history(9, &theta, 0.0, 60, 2);
        let (fit, sigma) = fit_pseudo_ground_truth(&h, 1e-6).unwrap();
        assert!(sigma <= 1e-4, "{sigma}");
        assert!((fit.entries() - theta.entries()).norm() <= 1e-3);
        assert!(fit_pseudo_ground_truth(&History::<f64>::new(), 0.1).is_err());
    }

    #[test]
    fn pseudo_ground_truth_noise_level() {
        let theta = make_lowrank_theta::<f64>(3, 4, 2, &[1.0, 0.6], 10).unwrap();
        let h = logged_history(10, &theta, 0.1, 2000, 2);
        let (fit, sigma) = fit_pseudo_ground_truth(&h, 1e-4).unwrap();
        assert!((0.09..=0.11).contains(&sigma), "{sigma}");
        // Two-pass oracle: collect residuals, then average their squares.
        let mut resid = Vec::new();
        for r in h.rounds() {
            for l in 0..2 {
                let x = r.batch.context(l);
                resid.push(r.rewards[l] - expected_reward(&fit, &r.action, &x).unwrap());
            }
        }
        let rms = (resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((rms - sigma).abs() <= 1e-12);
    }

    #[test]
    fn replay_env_uses_logged_contexts_and_range() {
        let theta = make_lowrank_theta::<f64>(3, 4, 1, &[1.0], 11).unwrap();
        let h = logged_history(11, &theta, 0.1, 10, 2);
        let env = ReplayEnv::new(&h, theta.clone(), 0.0, 1).unwrap();
        assert_eq!(env.horizon(), 10);
        assert_eq!(env.contexts(4), h.rounds()[3].batch);
        for r in h.rounds() {
            assert!(env.action_space().contains(&r.action, 0.0));
        }
        let y = env.rewards(&h.rounds()[0].action, &h.rounds()[0].batch);
        let mean = expected_reward(&theta, &h.rounds()[0].action, &h.rounds()[0].batch.context(0)).unwrap();
        assert!((y[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn constant_contexts() {
        let (theta, _) = reduce_multiarm(&[0.1, 0.5]).unwrap();
        let env = BilinearEnv::new(theta, 0.0, 1, 0)
            .unwrap()
            .with_contexts(ContextDistribution::Constant(dv(&[1.0])))
            .unwrap();
        assert_eq!(env.contexts(7).matrix()[(0, 0)], 1.0);
        let bad = BilinearEnv::new(RepresentationMatrix::<f64>::identity(2), 0.0, 1, 0).unwrap();
        assert!(bad.with_contexts(ContextDistribution::Constant(dv(&[1.0]))).is_err());
    }
}
