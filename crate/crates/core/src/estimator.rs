//! Nuclear-norm regularized least squares.
//!
//! Minimizes `F(Θ) = (1/2n) Σ_{i,ℓ} (a_iᵀ Θ x_{i,ℓ} − y_{i,ℓ})² + λ ‖Θ‖_*`
//! with `n = tL`, by accelerated proximal gradient. Momentum is dropped
//! whenever a step would raise `F`, so accepted iterates are monotone.
//!
//! The smooth part is evaluated either sample-by-sample or through its
//! Gram matrix `G = Σ (x⊗a)(x⊗a)ᵀ`, whichever is cheaper for the current
//! `(t, d_a, d_x, L)`. Both routes give the same function.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{shape_err, BanditError, Result};
use crate::model::{sorted_svd, History, RepresentationMatrix, Round};
use crate::rng::{normal, stream, Purpose};
use crate::scalar::Real;

/// Floor returned by [`bootstrap_lambda0`] when residuals vanish.
pub const LAMBDA0_FLOOR: f64 = 1e-8;

/// Fixed-point residual tolerance (relative to `max(1, ‖Θ̂‖_F)`) a solve must
/// reach before it reports `converged`.
pub const FIXED_POINT_TOL: f64 = 1e-6;

/// Largest `d_a·d_x` for which Gram statistics are kept.
pub const GRAM_MAX_PARAMS: usize = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `1/Λ̂` with `Λ̂` a power-iteration estimate of the Hessian's top
    /// eigenvalue; halving backtracking if the estimate proves too small.
    LipschitzPowerIter,
    /// Pure halving backtracking from a unit step.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub max_iters: usize,
    /// Relative objective change below which the fixed-point test is run.
    pub rel_tol: f64,
    pub step_rule: StepRule,
    pub accelerated: bool,
    /// Power iterations for a cold start.
    pub power_iters: usize,
    /// Power iterations when a previous top eigen-direction is supplied.
    pub power_iters_warm: usize,
    /// Convergence requires `‖Θ − prox(Θ − η∇L)‖_F ≤ tol · max(1, ‖Θ‖_F)`.
    pub fixed_point_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-8,
            step_rule: StepRule::LipschitzPowerIter,
            accelerated: true,
            power_iters: 30,
            power_iters_warm: 5,
            fixed_point_tol: FIXED_POINT_TOL,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(BanditError::Domain("max_iters must be ≥ 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(BanditError::Domain("rel_tol must be positive".into()));
        }
        if !(self.fixed_point_tol > 0.0 && self.fixed_point_tol.is_finite()) {
            return Err(BanditError::Domain("fixed_point_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EstimateReport<T: Real> {
    pub theta_hat: RepresentationMatrix<T>,
    pub lambda_t: T,
    pub iterations: usize,
    pub final_objective: T,
    pub converged: bool,
    /// Step size `η` of the last proximal step.
    pub step_size: T,
    /// `‖Θ̂ − svt(Θ̂ − η∇L(Θ̂), ηλ)‖_F` at the returned point.
    pub fixed_point_residual: T,
    /// Top eigen-direction of the loss Hessian, reusable by the next solve.
    pub curvature_direction: Option<DMatrix<T>>,
}

/// Singular value thresholding `U max(S − τ, 0) Vᵀ`.
pub fn svt<T: Real>(m: &DMatrix<T>, tau: T) -> Result<DMatrix<T>> {
    if !(tau >= T::zero()) || !tau.is_finite_value() {
        return Err(BanditError::Domain("threshold must be a finite non-negative number".into()));
    }
    if !m.iter().all(|v| v.is_finite_value()) {
        return Err(BanditError::NonFinite("svt input"));
    }
    Ok(shrink(m, tau).0)
}

/// SVT plus the nuclear norm of its output.
fn shrink<T: Real>(m: &DMatrix<T>, tau: T) -> (DMatrix<T>, T) {
    let svd = sorted_svd(m);
    let (rows, cols) = m.shape();
    let kept = svd.s.iter().take_while(|&&s| s > tau).count();
    if kept == 0 {
        return (DMatrix::zeros(rows, cols), T::zero());
    }
    let mut us = svd.u.columns(0, kept).into_owned();
    let mut nuc = T::zero();
    for j in 0..kept {
        let shrunk = svd.s[j] - tau;
        nuc += shrunk;
        us.column_mut(j).scale_mut(shrunk);
    }
    (us * svd.v.columns(0, kept).transpose(), nuc)
}

fn nuclear<T: Real>(m: &DMatrix<T>) -> T {
    sorted_svd(m).s.iter().fold(T::zero(), |acc, &s| acc + s)
}

/// `λ_t = λ_0 / √t`.
pub fn lambda_schedule<T: Real>(lambda0: T, t: usize) -> T {
    assert!(t >= 1, "rounds are counted from 1");
    lambda0 / T::from_usize_lossy(t).sqrt()
}

/// Sufficient data for the smooth loss, built from a set of rounds.
///
/// Samples are always stored; Gram statistics are optional and, when
/// present, used whenever they are the cheaper route.
#[derive(Debug, Clone)]
pub struct LeastSquares<T: Real> {
    d_a: usize,
    d_x: usize,
    targets: usize,
    rounds: usize,
    /// Column-major `d_a × t`.
    actions: Vec<T>,
    /// Column-major `d_x × tL`.
    contexts: Vec<T>,
    rewards: Vec<T>,
    gram: Option<GramStats<T>>,
}

#[derive(Debug, Clone)]
struct GramStats<T: Real> {
    gram: DMatrix<T>,
    cross: DVector<T>,
    sum_sq: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Samples,
    Gram,
}

impl<T: Real> LeastSquares<T> {
    pub fn new(d_a: usize, d_x: usize, targets: usize, keep_gram: bool) -> Self {
        let p = d_a * d_x;
        let gram = (keep_gram && p <= GRAM_MAX_PARAMS).then(|| GramStats {
            gram: DMatrix::zeros(p, p),
            cross: DVector::zeros(p),
            sum_sq: T::zero(),
        });
        Self {
            d_a,
            d_x,
            targets,
            rounds: 0,
            actions: Vec::new(),
            contexts: Vec::new(),
            rewards: Vec::new(),
            gram,
        }
    }

    /// Builds from a slice of rounds; Gram statistics are built when they
    /// would make the per-iteration cost at least 4× cheaper.
    pub fn from_rounds<'a>(rounds: impl IntoIterator<Item = &'a Round<T>> + Clone) -> Result<Self> {
        let mut it = rounds.clone().into_iter();
        let Some(first) = it.next() else {
            return Err(BanditError::InsufficientData("least squares needs at least one round".into()));
        };
        let (d_a, d_x, l) = (first.action.len(), first.batch.d_x(), first.batch.len());
        let t = 1 + it.count();
        let p = d_a * d_x;
        let keep_gram = p <= GRAM_MAX_PARAMS && 4 * p * p <= t * d_x * (d_a + l);
        let mut ls = Self::new(d_a, d_x, l, keep_gram);
        for r in rounds {
            ls.push(r)?;
        }
        Ok(ls)
    }

    pub fn from_history(history: &History<T>) -> Result<Self> {
        Self::from_rounds(history.rounds())
    }

    pub fn push(&mut self, round: &Round<T>) -> Result<()> {
        let a = round.action.values();
        let x = round.batch.matrix();
        let y = &round.rewards;
        if a.len() != self.d_a {
            return Err(shape_err("action", self.d_a, a.len()));
        }
        if x.nrows() != self.d_x {
            return Err(shape_err("context", self.d_x, x.nrows()));
        }
        if x.ncols() != self.targets || y.len() != self.targets {
            return Err(shape_err("targets per round", self.targets, x.ncols()));
        }
        self.actions.extend_from_slice(a.as_slice());
        self.contexts.extend_from_slice(x.as_slice());
        self.rewards.extend_from_slice(y.as_slice());
        self.rounds += 1;
        if let Some(g) = self.gram.as_mut() {
            // G += (X Xᵀ) ⊗ (a aᵀ), c += (X y) ⊗ a.
            let (d_a, d_x) = (self.d_a, self.d_x);
            let s = x * x.transpose();
            let p = d_a * d_x;
            let gram = g.gram.as_mut_slice();
            for k in 0..d_x {
                for m in 0..d_a {
                    let am = a[m];
                    if am == T::zero() {
                        continue;
                    }
                    let col = &mut gram[(k * d_a + m) * p..(k * d_a + m + 1) * p];
                    for j in 0..d_x {
                        let w = s[(j, k)] * am;
                        for (gi, &ai) in col[j * d_a..(j + 1) * d_a].iter_mut().zip(a.iter()) {
                            *gi += w * ai;
                        }
                    }
                }
            }
            let xy = x * y;
            for j in 0..d_x {
                for i in 0..d_a {
                    g.cross[j * d_a + i] += xy[j] * a[i];
                }
            }
            g.sum_sq += y.dot(y);
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn samples(&self) -> usize {
        self.rounds * self.targets
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d_a, self.d_x)
    }

    fn n(&self) -> T {
        T::from_usize_lossy(self.samples())
    }

    fn route(&self) -> Route {
        match &self.gram {
            Some(_) => {
                let p = self.d_a * self.d_x;
                let direct = 2 * self.rounds * self.d_x * (self.d_a + self.targets);
                if 2 * p * p <= direct {
                    Route::Gram
                } else {
                    Route::Samples
                }
            }
            None => Route::Samples,
        }
    }

    fn actions_view(&self) -> DMatrixView<'_, T> {
        DMatrixView::from_slice(&self.actions, self.d_a, self.rounds)
    }

    /// Predictions `a_iᵀ Θ x_{i,ℓ}` for every sample, in round-major order.
    pub fn predict(&self, theta: &DMatrix<T>) -> DVector<T> {
        let w = theta.tr_mul(&self.actions_view());
        let (d_x, l) = (self.d_x, self.targets);
        let mut out = DVector::zeros(self.samples());
        for i in 0..self.rounds {
            let wi = &w.as_slice()[i * d_x..(i + 1) * d_x];
            for k in 0..l {
                let s = i * l + k;
                let x = &self.contexts[s * d_x..(s + 1) * d_x];
                out[s] = dot(wi, x);
            }
        }
        out
    }

    /// Forward quantity for `route`: residuals, or `G vec(Θ)`.
    fn forward(&self, route: Route, theta: &DMatrix<T>) -> DVector<T> {
        match route {
            Route::Samples => {
                let mut r = self.predict(theta);
                for (ri, &yi) in r.iter_mut().zip(self.rewards.iter()) {
                    *ri -= yi;
                }
                r
            }
            Route::Gram => {
                let g = self.gram.as_ref().expect("gram route requires stats");
                let v = DVector::from_column_slice(theta.as_slice());
                &g.gram * v
            }
        }
    }

    fn loss_from(&self, route: Route, theta: &DMatrix<T>, fwd: &DVector<T>) -> T {
        let two_n = T::lit(2.0) * self.n();
        match route {
            Route::Samples => fwd.norm_squared() / two_n,
            Route::Gram => {
                let g = self.gram.as_ref().expect("gram route requires stats");
                let v = theta.as_slice();
                let quad = dot(v, fwd.as_slice());
                let lin = dot(v, g.cross.as_slice());
                let val = (quad - T::lit(2.0) * lin + g.sum_sq) / two_n;
                val.max(T::zero())
            }
        }
    }

    fn gradient_from(&self, route: Route, fwd: &DVector<T>) -> DMatrix<T> {
        let inv_n = T::one() / self.n();
        match route {
            Route::Samples => self.backprop(fwd) * inv_n,
            Route::Gram => {
                let g = self.gram.as_ref().expect("gram route requires stats");
                let v = (fwd - &g.cross) * inv_n;
                DMatrix::from_column_slice(self.d_a, self.d_x, v.as_slice())
            }
        }
    }

    /// `Σ_{i,ℓ} r_{i,ℓ} a_i x_{i,ℓ}ᵀ`.
    fn backprop(&self, r: &DVector<T>) -> DMatrix<T> {
        let (d_x, l) = (self.d_x, self.targets);
        // z_i = X_i r_i, stored as rows of a t × d_x matrix.
        let mut z = DMatrix::zeros(self.rounds, d_x);
        for i in 0..self.rounds {
            for k in 0..l {
                let s = i * l + k;
                let rs = r[s];
                if rs == T::zero() {
                    continue;
                }
                let x = &self.contexts[s * d_x..(s + 1) * d_x];
                for (j, &xj) in x.iter().enumerate() {
                    z[(i, j)] += rs * xj;
                }
            }
        }
        self.actions_view() * z
    }

    /// Hessian operator `Θ ↦ (1/n) Σ a_i a_iᵀ Θ x_{i,ℓ} x_{i,ℓ}ᵀ`.
    fn hessian_apply(&self, route: Route, theta: &DMatrix<T>) -> DMatrix<T> {
        let inv_n = T::one() / self.n();
        match route {
            Route::Samples => self.backprop(&self.predict(theta)) * inv_n,
            Route::Gram => {
                let g = self.gram.as_ref().expect("gram route requires stats");
                let v = &g.gram * DVector::from_column_slice(theta.as_slice()) * inv_n;
                DMatrix::from_column_slice(self.d_a, self.d_x, v.as_slice())
            }
        }
    }

    /// Smooth loss and its gradient, evaluated sample-by-sample.
    pub fn loss_and_gradient(&self, theta: &DMatrix<T>) -> (T, DMatrix<T>) {
        let r = self.forward(Route::Samples, theta);
        (
            self.loss_from(Route::Samples, theta, &r),
            self.gradient_from(Route::Samples, &r),
        )
    }

    /// Full objective `L(Θ) + λ‖Θ‖_*`.
    pub fn objective(&self, theta: &DMatrix<T>, lambda: T) -> T {
        let r = self.forward(Route::Samples, theta);
        self.loss_from(Route::Samples, theta, &r) + lambda * nuclear(theta)
    }

    /// Power-iteration estimate of the Hessian's largest eigenvalue.
    fn top_curvature(&self, route: Route, start: Option<&DMatrix<T>>, iters: usize) -> (T, DMatrix<T>) {
        let mut v = match start {
            Some(s) if s.shape() == (self.d_a, self.d_x) && s.norm() > T::zero() => s.clone(),
            _ => {
                let mut rng = stream(0x5eed, Purpose::Construction, (self.d_a * 7919 + self.d_x) as u64);
                DMatrix::from_fn(self.d_a, self.d_x, |_, _| normal::<T, _>(&mut rng))
            }
        };
        let norm = v.norm();
        v /= norm;
        let mut estimate = T::zero();
        for _ in 0..iters.max(1) {
            let hv = self.hessian_apply(route, &v);
            estimate = dot(v.as_slice(), hv.as_slice());
            let n = hv.norm();
            if n <= T::zero() {
                break;
            }
            v = hv / n;
        }
        (estimate, v)
    }

    /// Solves the regularized problem at `lambda`.
    pub fn solve(
        &self,
        lambda: T,
        warm_start: Option<&RepresentationMatrix<T>>,
        curvature_hint: Option<&DMatrix<T>>,
        settings: &SolverSettings,
    ) -> Result<EstimateReport<T>> {
        settings.validate()?;
        if self.rounds == 0 {
            return Err(BanditError::InsufficientData("empty history".into()));
        }
        if !(lambda > T::zero()) || !lambda.is_finite_value() {
            return Err(BanditError::Domain("lambda must be positive".into()));
        }
        let route = self.route();
        let mut x = match warm_start {
            Some(w) => {
                if w.shape() != (self.d_a, self.d_x) {
                    return Err(shape_err("warm start", format!("{:?}", (self.d_a, self.d_x)), format!("{:?}", w.shape())));
                }
                w.entries().clone()
            }
            None => DMatrix::zeros(self.d_a, self.d_x),
        };

        let mut curvature_direction = None;
        let mut eta = match settings.step_rule {
            StepRule::LipschitzPowerIter => {
                let iters = if curvature_hint.is_some() {
                    settings.power_iters_warm
                } else {
                    settings.power_iters
                };
                let (lip, dir) = self.top_curvature(route, curvature_hint, iters);
                curvature_direction = Some(dir);
                if lip > T::zero() {
                    T::one() / lip
                } else {
                    T::one()
                }
            }
            StepRule::Backtracking => T::one(),
        };

        let mut fwd_x = self.forward(route, &x);
        let mut fx = self.loss_from(route, &x, &fwd_x);
        let mut obj_x = fx + lambda * nuclear(&x);
        if !obj_x.is_finite_value() {
            return Err(BanditError::NonFiniteObjective { iteration: 0 });
        }
        let mut x_prev = x.clone();
        let mut fwd_prev = fwd_x.clone();
        let mut momentum = T::one();
        let mut converged = false;
        let mut residual = T::lit(f64::INFINITY);
        let mut iterations = 0;

        while iterations < settings.max_iters {
            iterations += 1;
            let next_momentum = (T::one() + (T::one() + T::lit(4.0) * momentum * momentum).sqrt()) / T::lit(2.0);
            let beta = if settings.accelerated {
                (momentum - T::one()) / next_momentum
            } else {
                T::zero()
            };
            let extrapolated = beta > T::zero();
            let (y, fwd_y) = if extrapolated {
                (
                    &x + (&x - &x_prev) * beta,
                    &fwd_x * (T::one() + beta) - &fwd_prev * beta,
                )
            } else {
                (x.clone(), fwd_x.clone())
            };
            let fy = if extrapolated { self.loss_from(route, &y, &fwd_y) } else { fx };
            let grad = self.gradient_from(route, &fwd_y);

            let (z, nuc_z, fwd_z, fz) = loop {
                let (z, nuc_z) = shrink(&(&y - &grad * eta), eta * lambda);
                let fwd_z = self.forward(route, &z);
                let fz = self.loss_from(route, &z, &fwd_z);
                if !fz.is_finite_value() {
                    return Err(BanditError::NonFiniteObjective { iteration: iterations });
                }
                let diff = &z - &y;
                let model = fy + dot(grad.as_slice(), diff.as_slice()) + diff.norm_squared() / (T::lit(2.0) * eta);
                let slack = T::lit(1e-12).max(T::default_epsilon() * T::lit(100.0)) * (T::one() + fy.abs());
                if fz <= model + slack {
                    break (z, nuc_z, fwd_z, fz);
                }
                eta /= T::lit(2.0);
                if eta < T::lit(1e-30) {
                    return Err(BanditError::NonFiniteObjective { iteration: iterations });
                }
            };
            let obj_z = fz + lambda * nuc_z;
            if !obj_z.is_finite_value() {
                return Err(BanditError::NonFiniteObjective { iteration: iterations });
            }

            if obj_z > obj_x {
                if extrapolated {
                    // Momentum overshot: restart from x.
                    momentum = T::one();
                    x_prev = x.clone();
                    fwd_prev = fwd_x.clone();
                    continue;
                }
                // A plain prox step cannot increase F beyond rounding.
                let (ok, res) = self.fixed_point_ok(route, &x, &fwd_x, eta, lambda, settings.fixed_point_tol);
                residual = res;
                if ok {
                    converged = true;
                    break;
                }
                eta /= T::lit(2.0);
                continue;
            }

            x_prev = std::mem::replace(&mut x, z);
            fwd_prev = std::mem::replace(&mut fwd_x, fwd_z);
            fx = fz;
            let change = (obj_x - obj_z).abs();
            obj_x = obj_z;
            momentum = next_momentum;

            if change <= T::lit(settings.rel_tol) * T::one().max(obj_x.abs()) {
                let (ok, res) = self.fixed_point_ok(route, &x, &fwd_x, eta, lambda, settings.fixed_point_tol);
                residual = res;
                if ok {
                    converged = true;
                    break;
                }
            }
        }

        if !converged {
            residual = self.fixed_point_ok(route, &x, &fwd_x, eta, lambda, settings.fixed_point_tol).1;
        }
        Ok(EstimateReport {
            theta_hat: RepresentationMatrix::from_trusted(x),
            lambda_t: lambda,
            iterations,
            final_objective: obj_x,
            converged,
            step_size: eta,
            fixed_point_residual: residual,
            curvature_direction,
        })
    }

    fn fixed_point_ok(&self, route: Route, x: &DMatrix<T>, fwd_x: &DVector<T>, eta: T, lambda: T, tol: f64) -> (bool, T) {
        let g = self.gradient_from(route, fwd_x);
        let (p, _) = shrink(&(x - g * eta), eta * lambda);
        let res = (x - p).norm();
        (res <= T::lit(tol) * T::one().max(x.norm()), res)
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `L_t(Θ)` and `∇L_t(Θ)` over the whole history.
pub fn loss_and_gradient<T: Real>(
    theta: &RepresentationMatrix<T>,
    history: &History<T>,
) -> Result<(T, DMatrix<T>)> {
    if history.is_empty() {
        return Err(BanditError::InsufficientData("empty history".into()));
    }
    let ls = LeastSquares::from_history(history)?;
    if theta.shape() != ls.shape() {
        return Err(shape_err("theta", format!("{:?}", ls.shape()), format!("{:?}", theta.shape())));
    }
    Ok(ls.loss_and_gradient(theta.entries()))
}

/// Nuclear-norm regularized least squares on `history` at `lambda`.
pub fn solve_nuclear_ls<T: Real>(
    history: &History<T>,
    lambda: T,
    warm_start: Option<&RepresentationMatrix<T>>,
    settings: &SolverSettings,
) -> Result<EstimateReport<T>> {
    if history.is_empty() {
        return Err(BanditError::InsufficientData("empty history".into()));
    }
    LeastSquares::from_history(history)?.solve(lambda, warm_start, None, settings)
}

/// `(2/(tL)) ‖ Σ_{i,ℓ} |a_iᵀ Θ x_{i,ℓ} − y_{i,ℓ}| x_{i,ℓ} a_iᵀ ‖_op`, floored
/// at [`LAMBDA0_FLOOR`].
pub fn lambda0_from_estimate<T: Real>(history: &History<T>, theta: &RepresentationMatrix<T>) -> Result<T> {
    let ls = LeastSquares::from_history(history)?;
    if theta.shape() != ls.shape() {
        return Err(shape_err("theta", format!("{:?}", ls.shape()), format!("{:?}", theta.shape())));
    }
    let mut r = ls.forward(Route::Samples, theta.entries());
    r.iter_mut().for_each(|v| *v = v.abs());
    // backprop gives Σ |r| a xᵀ, the transpose of the matrix in the formula;
    // the operator norm is the same.
    let weighted = ls.backprop(&r);
    let op = sorted_svd(&weighted).s.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let value = T::lit(2.0) * op / ls.n();
    Ok(value.max(T::lit(LAMBDA0_FLOOR)))
}

/// Noise scale and regularization used for the bootstrap estimate
/// `Θ̂_{t_init}`: `σ̂` is the RMS residual of a near-unregularized ridge fit
/// on `vec(Θ)`, and `λ_boot = σ̂ √(d_x / (tL))` (or `1e-6` if `σ̂ = 0`).
pub fn bootstrap_regularization<T: Real>(history: &History<T>) -> Result<(T, T)> {
    let Some((d_a, d_x, l)) = history.dims() else {
        return Err(BanditError::InsufficientData("empty history".into()));
    };
    let p = d_a * d_x;
    let n = history.len() * l;
    let rss = if n >= p && p <= GRAM_MAX_PARAMS {
        // Primal ridge straight from the Gram statistics: G = ZᵀZ, c = Zᵀy.
        let mut ls = LeastSquares::new(d_a, d_x, l, true);
        for r in history.rounds() {
            ls.push(r)?;
        }
        let g = ls.gram.expect("gram requested");
        let ridge = T::lit(1e-6) * g.gram.trace().sqrt();
        let mut normal = g.gram.clone();
        for i in 0..p {
            normal[(i, i)] += ridge;
        }
        let coef = solve_spd(normal, g.cross.clone())?;
        let quad = coef.dot(&(&g.gram * &coef));
        (g.sum_sq - T::lit(2.0) * coef.dot(&g.cross) + quad).max(T::zero())
    } else {
        ridge_rss_from_design(history, d_a, d_x, l)?
    };
    let sigma = (rss / T::from_usize_lossy(n)).sqrt();
    let lambda_boot = if sigma > T::zero() {
        sigma * (T::from_usize_lossy(d_x) / T::from_usize_lossy(n)).sqrt()
    } else {
        T::lit(1e-6)
    };
    Ok((sigma, lambda_boot))
}

fn ridge_rss_from_design<T: Real>(history: &History<T>, d_a: usize, d_x: usize, l: usize) -> Result<T> {
    let p = d_a * d_x;
    let n = history.len() * l;
    // Design rows z = vec(a xᵀ) (column-major, x ⊗ a).
    let mut design = DMatrix::<T>::zeros(n, p);
    let mut y = DVector::<T>::zeros(n);
    let mut row = 0;
    for r in history.rounds() {
        let a = r.action.values();
        for k in 0..l {
            let x = r.batch.matrix().column(k);
            for j in 0..d_x {
                for i in 0..d_a {
                    design[(row, j * d_a + i)] = x[j] * a[i];
                }
            }
            y[row] = r.rewards[k];
            row += 1;
        }
    }
    let ridge = T::lit(1e-6) * design.norm();
    let fitted = if n >= p {
        let mut normal = design.tr_mul(&design);
        for i in 0..p {
            normal[(i, i)] += ridge;
        }
        let rhs = design.tr_mul(&y);
        let coef = solve_spd(normal, rhs)?;
        &design * coef
    } else {
        let mut kernel = &design * design.transpose();
        for i in 0..n {
            kernel[(i, i)] += ridge;
        }
        let dual = solve_spd(kernel, y.clone())?;
        &design * (design.transpose() * dual)
    };
    Ok((&y - fitted).norm_squared())
}

fn solve_spd<T: Real>(m: DMatrix<T>, rhs: DVector<T>) -> Result<DVector<T>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    m.lu()
        .solve(&rhs)
        .ok_or_else(|| BanditError::Domain("singular ridge system".into()))
}

/// `λ_0` from the initialization rounds: fit `Θ̂_{t_init}` at the bootstrap
/// regularization, then apply [`lambda0_from_estimate`].
pub fn bootstrap_lambda0<T: Real>(history: &History<T>, settings: &SolverSettings) -> Result<T> {
    if history.is_empty() {
        return Err(BanditError::InsufficientData("empty history".into()));
    }
    let (_, lambda_boot) = bootstrap_regularization(history)?;
    let fit = solve_nuclear_ls(history, lambda_boot, None, settings)?;
    lambda0_from_estimate(history, &fit.theta_hat)
}
