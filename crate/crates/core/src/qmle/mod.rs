//! Quasi-maximum-likelihood estimation of `(ω, α, β)` on a training sample.
//!
//! The estimator minimizes `Σ (log σ̄²_i + y_i²/σ̄²_i)` over a compact box.

pub mod covariance;
pub mod filter;
pub mod optimizer;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, VolError};
use crate::garch::GarchParams;
use crate::rng::rng_from_seed;
pub use covariance::{compute_d_hat, ScoreCovariance, RANK_TOLERANCE};
pub use filter::{filter_step, log_square, run_filter, FilterPass, ScorePair, VolFilterState};
use optimizer::{minimize_box, BfgsOptions};

/// Minimum training length accepted by [`fit_qmle`].
pub const MIN_TRAINING: usize = 100;

/// Number of leading observations averaged for the default `σ̄²_0`.
pub const INIT_WINDOW: usize = 50;

/// Compact parameter box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSpace {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl Default for ThetaSpace {
    fn default() -> Self {
        Self { omega_lo: 1e-6, omega_hi: 10.0, alpha_lo: 1e-4, alpha_hi: 2.0, beta_lo: 1e-4, beta_hi: 1.2 }
    }
}

impl ThetaSpace {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("omega", self.omega_lo, self.omega_hi),
            ("alpha", self.alpha_lo, self.alpha_hi),
            ("beta", self.beta_lo, self.beta_hi),
        ];
        for (name, lo, hi) in pairs {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return invalid(format!("{name} bounds must satisfy 0 < lo <= hi < inf, got [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &GarchParams<f64>) -> bool {
        (self.omega_lo..=self.omega_hi).contains(&p.omega)
            && (self.alpha_lo..=self.alpha_hi).contains(&p.alpha)
            && (self.beta_lo..=self.beta_hi).contains(&p.beta)
    }

    /// Unit-box coordinates to parameters: `ω` geometric, `α`, `β` linear.
    pub fn from_unit(&self, x: &[f64; 3]) -> GarchParams<f64> {
        let (llo, lhi) = (self.omega_lo.ln(), self.omega_hi.ln());
        GarchParams {
            omega: (llo + x[0] * (lhi - llo)).exp().clamp(self.omega_lo, self.omega_hi),
            alpha: self.alpha_lo + x[1] * (self.alpha_hi - self.alpha_lo),
            beta: self.beta_lo + x[2] * (self.beta_hi - self.beta_lo),
        }
    }

    pub fn to_unit(&self, p: &GarchParams<f64>) -> [f64; 3] {
        let unit = |v: f64, lo: f64, hi: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        [
            unit(p.omega.ln(), self.omega_lo.ln(), self.omega_hi.ln()),
            unit(p.alpha, self.alpha_lo, self.alpha_hi),
            unit(p.beta, self.beta_lo, self.beta_hi),
        ]
    }

    /// `d(ω, α, β)/dx` for the unit-box map.
    fn jacobian(&self, p: &GarchParams<f64>) -> [f64; 3] {
        [
            p.omega * (self.omega_hi.ln() - self.omega_lo.ln()),
            self.alpha_hi - self.alpha_lo,
            self.beta_hi - self.beta_lo,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmleOptions {
    /// `y_0² = σ̄²_0`. Defaults to the mean of `y²` over the first
    /// [`INIT_WINDOW`] training observations.
    pub init_sigma2: Option<f64>,
    /// Random starts in addition to the lattice starts.
    pub restarts: usize,
    /// How many of the best 3×3×3 lattice points are optimized.
    pub lattice_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for QmleOptions {
    fn default() -> Self {
        Self { init_sigma2: None, restarts: 2, lattice_starts: 1, seed: 0, max_iter: 400 }
    }
}

/// Which coordinates of `θ̂` ended on a face of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundaryContact {
    pub omega: bool,
    pub alpha: bool,
    pub beta: bool,
}

impl BoundaryContact {
    pub fn any(&self) -> bool {
        self.omega || self.alpha || self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmleFit {
    pub theta_hat: GarchParams<f64>,
    /// `Σ (log σ̄²_i + y_i²/σ̄²_i)` at `θ̂`.
    pub neg_quasi_loglik: f64,
    pub d_hat: ScoreCovariance<f64>,
    /// Filter state after the last training observation.
    pub final_filter: VolFilterState<f64>,
    /// Last training return, the `y_prev` of the first monitoring step.
    pub last_y: f64,
    pub init_sigma2: f64,
    pub m: usize,
    pub converged: bool,
    pub boundary_contact: BoundaryContact,
    pub n_restarts_used: usize,
}

/// Default `σ̄²_0` for a training sample.
pub fn default_init_sigma2(y: &[f64]) -> Result<f64> {
    let n = y.len().min(INIT_WINDOW);
    if n == 0 {
        return invalid("empty training sample");
    }
    let v = y[..n].iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(v.is_finite() && v > 0.0) {
        return Err(VolError::Estimation(format!("initial variance {v} from leading observations")));
    }
    Ok(v)
}

fn check_training(y: &[f64]) -> Result<()> {
    if y.len() < MIN_TRAINING {
        return invalid(format!("training sample needs at least {MIN_TRAINING} observations, got {}", y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(VolError::NonFinite("training return".into()));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(VolError::Estimation("training sample is constant".into()));
    }
    Ok(())
}

impl QmleFit {
    /// Builds the fit record at a given `θ` without optimizing. Used to
    /// monitor with known parameters and by the theory estimators.
    pub fn at_fixed(y_train: &[f64], theta: GarchParams<f64>, init_sigma2: Option<f64>) -> Result<Self> {
        theta.validate()?;
        check_training(y_train)?;
        let init = match init_sigma2 {
            Some(v) => v,
            None => default_init_sigma2(y_train)?,
        };
        Self::assemble(y_train, theta, init, true, BoundaryContact::default(), 0)
    }

    fn assemble(
        y_train: &[f64],
        theta: GarchParams<f64>,
        init: f64,
        converged: bool,
        boundary_contact: BoundaryContact,
        n_restarts_used: usize,
    ) -> Result<Self> {
        let pass = run_filter(y_train, &theta, init, true)?;
        let d_hat = compute_d_hat(&pass.scores)?;
        Ok(QmleFit {
            theta_hat: theta,
            neg_quasi_loglik: pass.objective,
            d_hat,
            final_filter: pass.state,
            last_y: *y_train.last().expect("non-empty training sample"),
            init_sigma2: init,
            m: y_train.len(),
            converged,
            boundary_contact,
            n_restarts_used,
        })
    }

    /// `y_i / σ̄_i(θ̂)` over the training sample.
    pub fn standardized_residuals(&self, y_train: &[f64]) -> Result<Vec<f64>> {
        standardized_residuals(y_train, &self.theta_hat, self.init_sigma2)
    }
}

pub fn standardized_residuals(y: &[f64], theta: &GarchParams<f64>, init_sigma2: f64) -> Result<Vec<f64>> {
    let mut state = VolFilterState::initial(init_sigma2)?;
    let mut y_prev = init_sigma2.sqrt();
    let mut out = Vec::with_capacity(y.len());
    for &yi in y {
        let (next, _, _) = filter_step(&state, theta, y_prev, yi)?;
        out.push(yi * (-0.5 * next.log_sigma2).exp());
        state = next;
        y_prev = yi;
    }
    Ok(out)
}

/// Mean objective and its gradient in unit-box coordinates.
fn unit_objective(y: &[f64], space: &ThetaSpace, init: f64, x: &[f64; 3]) -> Option<(f64, [f64; 3])> {
    let theta = space.from_unit(x);
    let pass = run_filter(y, &theta, init, false).ok()?;
    let jac = space.jacobian(&theta);
    let m = y.len() as f64;
    Some((pass.objective / m, std::array::from_fn(|i| pass.grad[i] * jac[i] / m)))
}

const LATTICE: [f64; 3] = [1.0 / 6.0, 0.5, 5.0 / 6.0];

/// Box-constrained QMLE with multi-start.
///
/// All 27 lattice points are evaluated; the best `lattice_starts` of them
/// and `restarts` uniform random points are refined by projected BFGS.
pub fn fit_qmle(y_train: &[f64], space: &ThetaSpace, opts: &QmleOptions) -> Result<QmleFit> {
    space.validate()?;
    check_training(y_train)?;
    let init = match opts.init_sigma2 {
        Some(v) if v.is_finite() && v > 0.0 => v,
        Some(v) => return Err(VolError::NonFinite(format!("initial variance {v}"))),
        None => default_init_sigma2(y_train)?,
    };

    let mut lattice: Vec<([f64; 3], f64)> = Vec::with_capacity(27);
    for &a in &LATTICE {
        for &b in &LATTICE {
            for &c in &LATTICE {
                let x = [a, b, c];
                if let Some((f, _)) = unit_objective(y_train, space, init, &x) {
                    lattice.push((x, f));
                }
            }
        }
    }
    lattice.sort_by(|l, r| l.1.total_cmp(&r.1));

    let mut starts: Vec<[f64; 3]> = lattice.iter().take(opts.lattice_starts.max(1)).map(|p| p.0).collect();
    let mut rng = rng_from_seed(opts.seed);
    for _ in 0..opts.restarts {
        starts.push([rng.random(), rng.random(), rng.random()]);
    }

    let bfgs = BfgsOptions { max_iter: opts.max_iter, ..BfgsOptions::default() };
    let results: Vec<_> = starts
        .par_iter()
        .map(|x0| minimize_box(|x: &[f64; 3]| unit_objective(y_train, space, init, x), *x0, &bfgs))
        .collect();

    let mut best: Option<optimizer::BoxMinimum<3>> = None;
    for r in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| VolError::Estimation("no start produced a finite objective".into()))?;

    let theta = space.from_unit(&best.x);
    let tol = 1e-9;
    let edge = |v: f64| v <= tol || v >= 1.0 - tol;
    let contact = BoundaryContact { omega: edge(best.x[0]), alpha: edge(best.x[1]), beta: edge(best.x[2]) };
    QmleFit::assemble(y_train, theta, init, best.converged, contact, starts.len())
}
