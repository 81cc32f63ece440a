//! Variance filter with normalized derivative recursions.
//!
//! The state carries `ℓ = log σ̄²` and the ratios `(∂σ̄²/∂θ)/σ̄²`, which stay
//! bounded even when σ̄² itself diverges. Inputs enter as `log y²`, so a
//! return of exactly zero is handled as `-∞`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};
use crate::garch::GarchParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolFilterState<T> {
    pub log_sigma2: T,
    pub d_omega: T,
    pub d_alpha: T,
    pub d_beta: T,
    pub last_y2_over_sigma2: T,
}

impl<T: Scalar> VolFilterState<T> {
    /// Start from `σ̄²_0 = sigma2_0` with zero derivatives.
    pub fn initial(sigma2_0: T) -> Result<Self> {
        if !sigma2_0.is_finite() || sigma2_0 <= T::zero() {
            return Err(VolError::NonFinite(format!("initial variance {sigma2_0}")));
        }
        Ok(Self {
            log_sigma2: sigma2_0.ln(),
            d_omega: T::zero(),
            d_alpha: T::zero(),
            d_beta: T::zero(),
            last_y2_over_sigma2: T::zero(),
        })
    }

    pub fn sigma2(&self) -> T {
        self.log_sigma2.exp()
    }

    pub fn cast<U: Scalar>(&self) -> VolFilterState<U> {
        VolFilterState {
            log_sigma2: U::lit(self.log_sigma2.to_f64_lossy()),
            d_omega: U::lit(self.d_omega.to_f64_lossy()),
            d_alpha: U::lit(self.d_alpha.to_f64_lossy()),
            d_beta: U::lit(self.d_beta.to_f64_lossy()),
            last_y2_over_sigma2: U::lit(self.last_y2_over_sigma2.to_f64_lossy()),
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.log_sigma2.is_finite()
            && self.d_omega.is_finite()
            && self.d_alpha.is_finite()
            && self.d_beta.is_finite()
    }
}

/// `(∂ℓ̄/∂α, ∂ℓ̄/∂β)` for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScorePair<T> {
    pub s_alpha: T,
    pub s_beta: T,
}

impl<T: Scalar> ScorePair<T> {
    pub fn new(s_alpha: T, s_beta: T) -> Self {
        Self { s_alpha, s_beta }
    }

    pub fn as_array(&self) -> [T; 2] {
        [self.s_alpha, self.s_beta]
    }
}

/// Output of one filter step, including the ω-component of the gradient
/// which the estimator needs but the monitor does not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput<T> {
    pub state: VolFilterState<T>,
    pub score: ScorePair<T>,
    pub s_omega: T,
    pub loglik: T,
}

/// `log y²` computed as `2 log|y|` so that huge returns do not overflow.
#[inline]
pub fn log_square<T: Scalar>(y: T) -> T {
    T::lit(2.0) * y.abs().ln()
}

/// One step of the filter in log inputs. Callers guarantee finiteness of
/// the state; `log_y2_*` may be `-∞`.
#[inline]
pub(crate) fn step_log<T: Scalar>(
    state: &VolFilterState<T>,
    theta: &GarchParams<T>,
    log_y2_prev: T,
    log_y2_curr: T,
) -> StepOutput<T> {
    let l_prev = state.log_sigma2;
    let w = (theta.omega.ln() - l_prev).exp();
    let a = (log_y2_prev - l_prev).exp();
    let l_new = l_prev + (theta.beta + theta.alpha * a + w).ln();
    let ratio = (l_prev - l_new).exp();
    let beta_ratio = theta.beta * ratio;

    let d_alpha = (log_y2_prev - l_new).exp() + beta_ratio * state.d_alpha;
    let d_beta = ratio * (T::one() + theta.beta * state.d_beta);
    let d_omega = (-l_new).exp() + beta_ratio * state.d_omega;

    let q = (log_y2_curr - l_new).exp();
    let factor = T::one() - q;
    StepOutput {
        state: VolFilterState {
            log_sigma2: l_new,
            d_omega,
            d_alpha,
            d_beta,
            last_y2_over_sigma2: q,
        },
        score: ScorePair { s_alpha: factor * d_alpha, s_beta: factor * d_beta },
        s_omega: factor * d_omega,
        loglik: l_new + q,
    }
}

/// Advances the filter by one observation at `theta`.
///
/// Returns the new state, the `(α, β)` score of `y_curr` and its
/// contribution `log σ̄² + y²/σ̄²` to the objective.
pub fn filter_step<T: Scalar>(
    state: &VolFilterState<T>,
    theta: &GarchParams<T>,
    y_prev: T,
    y_curr: T,
) -> Result<(VolFilterState<T>, ScorePair<T>, T)> {
    if !y_prev.is_finite() || !y_curr.is_finite() {
        return Err(VolError::NonFinite(format!("returns ({y_prev}, {y_curr})")));
    }
    if !state.is_finite() {
        return Err(VolError::NonFinite("filter state".into()));
    }
    let out = step_log(state, theta, log_square(y_prev), log_square(y_curr));
    if !out.state.is_finite() {
        return Err(VolError::NonFinite("filter state after step".into()));
    }
    Ok((out.state, out.score, out.loglik))
}

/// Runs the filter over `y` starting from `y_0² = σ̄²_0 = init_sigma2`.
///
/// Returns the summed objective, its gradient in `(ω, α, β)`, the scores
/// and the terminal state.
pub fn run_filter<T: Scalar>(
    y: &[T],
    theta: &GarchParams<T>,
    init_sigma2: T,
    keep_scores: bool,
) -> Result<FilterPass<T>> {
    let mut state = VolFilterState::initial(init_sigma2)?;
    let mut log_prev = init_sigma2.ln();
    let mut objective = T::zero();
    let mut grad = [T::zero(); 3];
    let mut scores = Vec::with_capacity(if keep_scores { y.len() } else { 0 });
    for &yi in y {
        if !yi.is_finite() {
            return Err(VolError::NonFinite("return".into()));
        }
        let log_curr = log_square(yi);
        let out = step_log(&state, theta, log_prev, log_curr);
        objective += out.loglik;
        grad[0] += out.s_omega;
        grad[1] += out.score.s_alpha;
        grad[2] += out.score.s_beta;
        if keep_scores {
            scores.push(out.score);
        }
        state = out.state;
        log_prev = log_curr;
    }
    if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(VolError::NonFinite("objective".into()));
    }
    Ok(FilterPass { objective, grad, scores, state })
}

#[derive(Debug, Clone)]
pub struct FilterPass<T> {
    pub objective: T,
    /// Gradient with respect to `(ω, α, β)`.
    pub grad: [T; 3],
    pub scores: Vec<ScorePair<T>>,
    pub state: VolFilterState<T>,
}
