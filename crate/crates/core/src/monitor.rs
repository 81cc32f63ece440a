//! Sequential score-CUSUM monitor with weighted, Rényi and Darling–Erdős
//! boundaries over a closed-ended horizon.
//!
//! After training on `m` observations the monitor consumes `y_{m+1}, …`
//! one at a time. At step `k` it adds the score of `y_{m+k}` at `θ̂` to the
//! running sum `r_k` and compares `D(k) = r_kᵀ D̂⁻¹ r_k` with the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, VolError};
use crate::garch::GarchParams;
use crate::qmle::filter::{log_square, step_log, ScorePair, VolFilterState};
use crate::qmle::{QmleFit, ScoreCovariance};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind<T> {
    /// `g(k) = c 𝓃 (k/𝓃)^η`, `0 ≤ η < 1`.
    Weighted { eta: T },
    /// `ḡ(k) = c r (k/r)^η`, `η > 1`, scanned from `k = r`.
    Renyi { eta: T, r: usize },
    /// `η = 1` boundary `k ((c + b₂(log N))/a(log N))²` with `N = 𝓃`, or
    /// `N = 𝓃/r` and scanning from `r` when `r` is given.
    DarlingErdos { r: Option<usize> },
}

impl<T: Scalar> SchemeKind<T> {
    pub fn eta(&self) -> T {
        match *self {
            SchemeKind::Weighted { eta } | SchemeKind::Renyi { eta, .. } => eta,
            SchemeKind::DarlingErdos { .. } => T::one(),
        }
    }

    pub fn trimming(&self) -> Option<usize> {
        match *self {
            SchemeKind::Weighted { .. } | SchemeKind::DarlingErdos { r: None } => None,
            SchemeKind::Renyi { r, .. } | SchemeKind::DarlingErdos { r: Some(r) } => Some(r),
        }
    }

    /// Short name used in tables: `weighted`, `renyi` or `de`.
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Weighted { .. } => "weighted",
            SchemeKind::Renyi { .. } => "renyi",
            SchemeKind::DarlingErdos { .. } => "de",
        }
    }

    pub fn cast<U: Scalar>(&self) -> SchemeKind<U> {
        match *self {
            SchemeKind::Weighted { eta } => SchemeKind::Weighted { eta: U::lit(eta.to_f64_lossy()) },
            SchemeKind::Renyi { eta, r } => SchemeKind::Renyi { eta: U::lit(eta.to_f64_lossy()), r },
            SchemeKind::DarlingErdos { r } => SchemeKind::DarlingErdos { r },
        }
    }
}

/// Default Rényi trimming `r = ⌊√𝓃⌋`.
pub fn default_trimming(horizon_n: usize) -> usize {
    ((horizon_n as f64).sqrt().floor() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig<T> {
    pub scheme: SchemeKind<T>,
    pub c: T,
    pub horizon_n: usize,
    pub m: usize,
    pub tuned: bool,
}

/// `a(x) = (2 log x)^{1/2}`.
pub fn de_a<T: Scalar>(x: T) -> T {
    (T::lit(2.0) * x.ln()).sqrt()
}

/// `b₂(x) = 2 log x + log log x`.
pub fn de_b2<T: Scalar>(x: T) -> T {
    T::lit(2.0) * x.ln() + x.ln().ln()
}

impl<T: Scalar> MonitorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_n < 2 {
            return invalid(format!("horizon must be at least 2, got {}", self.horizon_n));
        }
        if self.m == 0 {
            return invalid("training length must be positive");
        }
        if !self.c.is_finite() {
            return Err(VolError::NonFinite(format!("critical value {}", self.c)));
        }
        let n = self.horizon_n;
        match self.scheme {
            SchemeKind::Weighted { eta } => {
                if !(eta >= T::zero() && eta < T::one()) {
                    return invalid(format!("weighted scheme needs 0 <= eta < 1, got {eta}"));
                }
            }
            SchemeKind::Renyi { eta, r } => {
                if !(eta > T::one() && eta.is_finite()) {
                    return invalid(format!("Renyi scheme needs eta > 1, got {eta}"));
                }
                if r < 1 || r >= n {
                    return invalid(format!("trimming r must satisfy 1 <= r < n, got r = {r}, n = {n}"));
                }
            }
            SchemeKind::DarlingErdos { r } => {
                if n < 16 {
                    return invalid(format!("Darling-Erdos boundary needs n >= 16, got {n}"));
                }
                if let Some(r) = r {
                    if r < 1 || r >= n || (n as f64) / (r as f64) < 16.0 {
                        return invalid(format!("Darling-Erdos trimming needs n/r >= 16, got n = {n}, r = {r}"));
                    }
                }
            }
        }
        if !matches!(self.scheme, SchemeKind::DarlingErdos { .. }) && self.c <= T::zero() {
            return invalid(format!("critical value must be positive, got {}", self.c));
        }
        Ok(())
    }

    /// First `k` at which crossings are checked.
    pub fn scan_start(&self) -> usize {
        self.scheme.trimming().unwrap_or(1)
    }

    /// Last `k` at which crossings are checked.
    pub fn scan_end(&self) -> usize {
        self.horizon_n - 1
    }

    /// `(1 + 1/log m)² (1 + k/m)²`.
    pub fn tuning_factor(&self, k: usize) -> T {
        let m = T::lit(self.m as f64);
        let a = T::one() + T::one() / m.ln();
        let b = T::one() + T::lit(k as f64) / m;
        a * a * b * b
    }

    /// Boundary at `k`, defined for `scan_start() ≤ k ≤ 𝓃`.
    pub fn boundary_value(&self, k: usize) -> Result<T> {
        let lo = self.scan_start();
        if k < lo || k > self.horizon_n {
            return Err(VolError::OutOfRange { k, lo, hi: self.horizon_n });
        }
        let kf = T::lit(k as f64);
        let n = T::lit(self.horizon_n as f64);
        let plain = match self.scheme {
            SchemeKind::Weighted { eta } => self.c * n * (kf / n).powf(eta),
            SchemeKind::Renyi { eta, r } => {
                let r = T::lit(r as f64);
                self.c * r * (kf / r).powf(eta)
            }
            SchemeKind::DarlingErdos { r } => {
                let big = match r {
                    Some(r) => n / T::lit(r as f64),
                    None => n,
                };
                let x = big.ln();
                let q = (self.c + de_b2(x)) / de_a(x);
                return Ok(kf * q * q);
            }
        };
        Ok(if self.tuned { plain * self.tuning_factor(k) } else { plain })
    }
}

/// Free-function form of [`MonitorConfig::boundary_value`].
pub fn boundary_value<T: Scalar>(config: &MonitorConfig<T>, k: usize) -> Result<T> {
    config.boundary_value(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingOutcome<T> {
    Detected { k: usize, detector_value: T },
    NoChange { horizon_n: usize },
}

impl<T> StoppingOutcome<T> {
    pub fn detected_at(&self) -> Option<usize> {
        match self {
            StoppingOutcome::Detected { k, .. } => Some(*k),
            StoppingOutcome::NoChange { .. } => None,
        }
    }

    /// `τ`: the detection index or `𝓃`.
    pub fn stopping_time(&self) -> usize {
        match self {
            StoppingOutcome::Detected { k, .. } => *k,
            StoppingOutcome::NoChange { horizon_n } => *horizon_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorState<T> {
    pub k: usize,
    pub cusum: [T; 2],
    pub filter: VolFilterState<T>,
    /// Most recent observation, `y_{m+k}`.
    pub y_prev: T,
    pub detector: T,
    /// Boundary at `k`; `+∞` where crossings are not checked.
    pub boundary: T,
    pub stopped: bool,
}

impl<T: Scalar> MonitorState<T> {
    /// State at `k = 0`, continuing from the end of a training pass.
    pub fn start(filter: VolFilterState<T>, y_last_train: T) -> Self {
        Self {
            k: 0,
            cusum: [T::zero(); 2],
            filter,
            y_prev: y_last_train,
            detector: T::zero(),
            boundary: T::infinity(),
            stopped: false,
        }
    }
}

/// Adds an externally computed score to the CUSUM and checks the boundary.
pub fn advance_with_score<T: Scalar>(
    state: &MonitorState<T>,
    config: &MonitorConfig<T>,
    d_hat_inv: &ScoreCovariance<T>,
    score: ScorePair<T>,
) -> Result<(MonitorState<T>, Option<StoppingOutcome<T>>)> {
    if state.stopped {
        return Err(VolError::Stopped(state.k));
    }
    let k = state.k + 1;
    if k > config.scan_end() {
        return Err(VolError::OutOfRange { k, lo: 1, hi: config.scan_end() });
    }
    if !score.s_alpha.is_finite() || !score.s_beta.is_finite() {
        return Err(VolError::NonFinite(format!("score at k = {k}")));
    }
    let cusum = [state.cusum[0] + score.s_alpha, state.cusum[1] + score.s_beta];
    let detector = d_hat_inv.quad_form(cusum).max(T::zero());
    let mut next = MonitorState { k, cusum, detector, boundary: T::infinity(), ..*state };

    let mut outcome = None;
    if k >= config.scan_start() {
        next.boundary = config.boundary_value(k)?;
        if detector >= next.boundary {
            outcome = Some(StoppingOutcome::Detected { k, detector_value: detector });
        }
    }
    if outcome.is_none() && k == config.scan_end() {
        outcome = Some(StoppingOutcome::NoChange { horizon_n: config.horizon_n });
    }
    next.stopped = outcome.is_some();
    Ok((next, outcome))
}

/// Filters `y_new` at `θ̂`, adds its score and checks the boundary.
///
/// Returns `Some` once the procedure stops, either with a detection or with
/// `NoChange` after step `𝓃 − 1`.
pub fn step<T: Scalar>(
    state: &MonitorState<T>,
    config: &MonitorConfig<T>,
    d_hat_inv: &ScoreCovariance<T>,
    theta_hat: &GarchParams<T>,
    y_new: T,
) -> Result<(MonitorState<T>, Option<StoppingOutcome<T>>)> {
    if state.stopped {
        return Err(VolError::Stopped(state.k));
    }
    if !y_new.is_finite() {
        return Err(VolError::NonFinite(format!("observation at k = {}", state.k + 1)));
    }
    let out = step_log(&state.filter, theta_hat, log_square(state.y_prev), log_square(y_new));
    if !out.state.log_sigma2.is_finite() {
        return Err(VolError::NonFinite(format!("filter at k = {}", state.k + 1)));
    }
    let with_filter = MonitorState { filter: out.state, y_prev: y_new, ..*state };
    advance_with_score(&with_filter, config, d_hat_inv, out.score)
}

/// One row of the detector/boundary trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k: usize,
    pub detector: f64,
    pub boundary: f64,
}

/// Streaming monitor bound to a fitted model.
#[derive(Debug, Clone)]
pub struct Monitor<T> {
    config: MonitorConfig<T>,
    theta: GarchParams<T>,
    d_inv: ScoreCovariance<T>,
    state: MonitorState<T>,
    outcome: Option<StoppingOutcome<T>>,
}

impl<T: Scalar> Monitor<T> {
    pub fn new(
        config: MonitorConfig<T>,
        theta: GarchParams<T>,
        d_hat: &ScoreCovariance<T>,
        filter: VolFilterState<T>,
        y_last_train: T,
    ) -> Result<Self> {
        config.validate()?;
        theta.validate()?;
        let d_inv = d_hat.inverse()?;
        Ok(Self { config, theta, d_inv, state: MonitorState::start(filter, y_last_train), outcome: None })
    }

    /// Hands the terminal training filter state over to the monitor.
    pub fn from_fit(config: MonitorConfig<T>, fit: &QmleFit) -> Result<Self> {
        Self::new(
            config,
            fit.theta_hat.cast(),
            &fit.d_hat.cast(),
            fit.final_filter.cast(),
            T::lit(fit.last_y),
        )
    }

    pub fn push(&mut self, y: T) -> Result<Option<StoppingOutcome<T>>> {
        let (next, outcome) = step(&self.state, &self.config, &self.d_inv, &self.theta, y)?;
        self.state = next;
        if outcome.is_some() {
            self.outcome = outcome;
        }
        Ok(outcome)
    }

    pub fn push_score(&mut self, score: ScorePair<T>) -> Result<Option<StoppingOutcome<T>>> {
        let (next, outcome) = advance_with_score(&self.state, &self.config, &self.d_inv, score)?;
        self.state = next;
        if outcome.is_some() {
            self.outcome = outcome;
        }
        Ok(outcome)
    }

    pub fn state(&self) -> &MonitorState<T> {
        &self.state
    }

    pub fn config(&self) -> &MonitorConfig<T> {
        &self.config
    }

    pub fn outcome(&self) -> Option<StoppingOutcome<T>> {
        self.outcome
    }
}

/// Monitors `y_post` (the observations after training) to the horizon.
pub fn run_closed_ended(y_post: &[f64], config: &MonitorConfig<f64>, fit: &QmleFit) -> Result<StoppingOutcome<f64>> {
    run_inner(y_post, config, fit, None)
}

/// As [`run_closed_ended`], also recording `(k, D(k), g(k))` for every
/// checked `k` up to the stopping time.
pub fn run_closed_ended_traced(
    y_post: &[f64],
    config: &MonitorConfig<f64>,
    fit: &QmleFit,
) -> Result<(StoppingOutcome<f64>, Vec<TracePoint>)> {
    let mut trace = Vec::new();
    let outcome = run_inner(y_post, config, fit, Some(&mut trace))?;
    Ok((outcome, trace))
}

fn run_inner(
    y_post: &[f64],
    config: &MonitorConfig<f64>,
    fit: &QmleFit,
    mut trace: Option<&mut Vec<TracePoint>>,
) -> Result<StoppingOutcome<f64>> {
    config.validate()?;
    if y_post.len() < config.horizon_n {
        return invalid(format!(
            "monitoring needs {} observations after training, got {}",
            config.horizon_n,
            y_post.len()
        ));
    }
    let mut mon = Monitor::from_fit(*config, fit)?;
    for &y in y_post {
        let outcome = mon.push(y)?;
        let st = mon.state();
        if let Some(t) = trace.as_deref_mut() {
            if st.k >= config.scan_start() {
                t.push(TracePoint { k: st.k, detector: st.detector, boundary: st.boundary });
            }
        }
        if let Some(o) = outcome {
            return Ok(o);
        }
    }
    unreachable!("the monitor stops at k = n - 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scheme: SchemeKind<f64>, c: f64, n: usize, m: usize, tuned: bool) -> MonitorConfig<f64> {
        MonitorConfig { scheme, c, horizon_n: n, m, tuned }
    }

    #[test]
    fn weighted_boundary_at_horizon() {
        let c = cfg(SchemeKind::Weighted { eta: 0.5 }, 1.0, 100, 1000, false);
        assert_eq!(c.boundary_value(100).unwrap(), 100.0);
    }

    #[test]
    fn renyi_boundary_at_trimming() {
        let c = cfg(SchemeKind::Renyi { eta: 1.5, r: 25 }, 2.0, 625, 1000, false);
        assert_eq!(c.boundary_value(25).unwrap(), 50.0);
        assert!(matches!(c.boundary_value(24), Err(VolError::OutOfRange { .. })));
    }

    #[test]
    fn forced_scores_cross_at_ten() {
        let config = cfg(SchemeKind::Weighted { eta: 0.0 }, 1.0, 100, 1000, false);
        let filter = VolFilterState::initial(1.0).unwrap();
        let mut state = MonitorState::start(filter, 0.0);
        let id = ScoreCovariance::identity();
        let mut hit = None;
        for _ in 0..99 {
            let (next, out) = advance_with_score(&state, &config, &id, ScorePair::new(1.0, 0.0)).unwrap();
            assert_eq!(next.detector, (next.k * next.k) as f64);
            state = next;
            if out.is_some() {
                hit = out;
                break;
            }
        }
        assert_eq!(hit, Some(StoppingOutcome::Detected { k: 10, detector_value: 100.0 }));
        assert!(matches!(
            advance_with_score(&state, &config, &id, ScorePair::new(1.0, 0.0)),
            Err(VolError::Stopped(10))
        ));
    }

    #[test]
    fn single_precision_monitor() {
        let config = MonitorConfig::<f32> {
            scheme: SchemeKind::Weighted { eta: 0.0 },
            c: 1.0,
            horizon_n: 100,
            m: 1000,
            tuned: false,
        };
        let mut mon = Monitor::new(
            config,
            GarchParams::new(0.1f32, 0.18, 0.8).unwrap(),
            &ScoreCovariance::identity(),
            VolFilterState::initial(1.0f32).unwrap(),
            0.0,
        )
        .unwrap();
        let mut out = None;
        while out.is_none() {
            out = mon.push_score(ScorePair::new(0.0, 1.0)).unwrap();
        }
        assert_eq!(out.unwrap().detected_at(), Some(10));
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(SchemeKind::Weighted { eta: 1.0 }, 1.0, 100, 100, true).validate().is_err());
        assert!(cfg(SchemeKind::Renyi { eta: 1.0, r: 10 }, 1.0, 100, 100, true).validate().is_err());
        assert!(cfg(SchemeKind::Renyi { eta: 1.5, r: 100 }, 1.0, 100, 100, true).validate().is_err());
        assert!(cfg(SchemeKind::DarlingErdos { r: None }, 1.0, 15, 100, false).validate().is_err());
        assert!(cfg(SchemeKind::DarlingErdos { r: Some(10) }, 1.0, 100, 100, false).validate().is_err());
        assert!(cfg(SchemeKind::DarlingErdos { r: None }, -0.5, 100, 100, false).validate().is_ok());
        assert!(cfg(SchemeKind::Weighted { eta: 0.0 }, 0.0, 100, 100, false).validate().is_err());
    }
}
