//! Spectral reading of a fitted representation matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, BanditError, Result};
use crate::model::{sorted_svd, ActionVector, RepresentationMatrix};
use crate::scalar::Real;

/// Floor applied when `rel_tol = 0`: values at or below `1e-12 · s_1` are
/// numerical zeros.
pub const RANK_FLOOR: f64 = 1e-12;

/// `Θ̂ = Σ_j s_j u_j v_jᵀ` truncated at the effective rank.
///
/// `singular_values` holds the full non-increasing spectrum; `left` and
/// `right` hold only the `effective_rank` leading factors.
#[derive(Debug, Clone)]
pub struct SpectralReport<T: Real> {
    pub singular_values: DVector<T>,
    pub left: DMatrix<T>,
    pub right: DMatrix<T>,
    pub effective_rank: usize,
    pub action_labels: Option<Vec<String>>,
    pub context_labels: Option<Vec<String>>,
}

impl<T: Real> SpectralReport<T> {
    /// `Σ_{j < r} s_j u_j v_jᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let r = self.effective_rank;
        if r == 0 {
            return DMatrix::zeros(self.left.nrows(), self.right.nrows());
        }
        let s = DMatrix::from_diagonal(&self.singular_values.rows(0, r).into_owned());
        &self.left * s * self.right.transpose()
    }

    pub fn with_labels(mut self, actions: Option<Vec<String>>, contexts: Option<Vec<String>>) -> Result<Self> {
        if let Some(a) = &actions {
            if a.len() != self.left.nrows() {
                return Err(shape_err("action labels", self.left.nrows(), a.len()));
            }
        }
        if let Some(c) = &contexts {
            if c.len() != self.right.nrows() {
                return Err(shape_err("context labels", self.right.nrows(), c.len()));
            }
        }
        self.action_labels = actions;
        self.context_labels = contexts;
        Ok(self)
    }
}

/// Factors with `s_j > rel_tol · s_1` (or `> 1e-12 · s_1` when `rel_tol`
/// is zero) are kept. Signs follow the largest-magnitude entry of each
/// `u_j`, which is made non-negative.
pub fn spectral_decompose<T: Real>(theta: &RepresentationMatrix<T>, rel_tol: T) -> Result<SpectralReport<T>> {
    if !(rel_tol >= T::zero()) || !(rel_tol < T::one()) {
        return Err(BanditError::Domain("rel_tol must lie in [0, 1)".into()));
    }
    let svd = sorted_svd(theta.entries());
    let s1 = if svd.s.is_empty() { T::zero() } else { svd.s[0] };
    let cut = if rel_tol == T::zero() { T::lit(RANK_FLOOR) } else { rel_tol } * s1;
    let effective_rank = if s1 > T::zero() {
        svd.s.iter().filter(|&&s| s > cut).count()
    } else {
        0
    };
    Ok(SpectralReport {
        left: svd.u.columns(0, effective_rank).into_owned(),
        right: svd.v.columns(0, effective_rank).into_owned(),
        singular_values: svd.s,
        effective_rank,
        action_labels: None,
        context_labels: None,
    })
}

/// `ũ_j = s_j ⟨v_j, x̄⟩ u_j` for every retained factor, one per column, so
/// that `Σ_j ⟨ũ_j, a⟩ = aᵀ Θ̂ x̄` up to the discarded tail.
pub fn scaled_action_loadings<T: Real>(report: &SpectralReport<T>, x_bar: &DVector<T>) -> Result<DMatrix<T>> {
    if x_bar.len() != report.right.nrows() {
        return Err(shape_err("context", report.right.nrows(), x_bar.len()));
    }
    let mut out = report.left.clone();
    for j in 0..report.effective_rank {
        let w = report.singular_values[j] * report.right.column(j).dot(x_bar);
        out.column_mut(j).scale_mut(w);
    }
    Ok(out)
}

/// `Σ_j ⟨ũ_j, a⟩`.
pub fn loading_score<T: Real>(loadings: &DMatrix<T>, a: &ActionVector<T>) -> Result<T> {
    if a.len() != loadings.nrows() {
        return Err(shape_err("action", loadings.nrows(), a.len()));
    }
    Ok(loadings.tr_mul(a.values()).sum())
}

/// Divides by the largest absolute entry. Errors on an all-zero input.
pub fn normalize_loadings<T: Real>(v: &DVector<T>) -> Result<DVector<T>> {
    let m = v.amax();
    if m == T::zero() {
        return Err(BanditError::DegenerateInput("all loadings are zero"));
    }
    Ok(v / m)
}
