//! GARCH(1,1) model: parameters, innovations, path simulation and the
//! Lyapunov-exponent regime classifier.
//!
//! Paths are generated in log-variance form. With `ℓ_i = log σ²_i` and
//! `y_{i-1}² = σ²_{i-1} ε²_{i-1}` the recursion
//! `σ²_i = ω + α y²_{i-1} + β σ²_{i-1}` becomes
//!
//! ```text
//! ℓ_i = ℓ_{i-1} + log(β + α ε²_{i-1} + ω e^{-ℓ_{i-1}})
//! ```
//!
//! which never forms σ² itself, so explosive regimes do not overflow.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, VolError};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// `(ω, α, β)` of a GARCH(1,1) recursion.
///
/// `ω > 0` always. `α` and `β` may be zero so degenerate recursions can be
/// expressed; estimation and change specifications require them positive
/// (see [`GarchParams::is_strictly_positive`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams<T> {
    pub omega: T,
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> GarchParams<T> {
    pub fn new(omega: T, alpha: T, beta: T) -> Result<Self> {
        let p = Self { omega, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.omega.is_finite() && self.alpha.is_finite() && self.beta.is_finite();
        if !all_finite {
            return Err(VolError::NonFinite(format!("GARCH parameters {self:?}")));
        }
        if self.omega <= T::zero() {
            return invalid(format!("omega must be > 0, got {}", self.omega));
        }
        if self.alpha < T::zero() || self.beta < T::zero() {
            return invalid(format!(
                "alpha and beta must be >= 0, got ({}, {})",
                self.alpha, self.beta
            ));
        }
        Ok(())
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.omega > T::zero() && self.alpha > T::zero() && self.beta > T::zero()
    }

    /// `ω/(1-α-β)` when second-order stationary, `ω` otherwise.
    pub fn default_init_sigma2(&self) -> T {
        let persistence = self.alpha + self.beta;
        if persistence < T::one() {
            self.omega / (T::one() - persistence)
        } else {
            self.omega
        }
    }

    /// One step of the log-variance recursion given the previous
    /// standardized innovation.
    #[inline]
    pub fn next_log_sigma2(&self, log_sigma2_prev: T, eps_prev: T) -> T {
        log_sigma2_prev
            + (self.beta + self.alpha * eps_prev * eps_prev + self.omega * (-log_sigma2_prev).exp())
                .ln()
    }

    pub fn cast<U: Scalar>(&self) -> GarchParams<U> {
        GarchParams {
            omega: U::lit(self.omega.to_f64_lossy()),
            alpha: U::lit(self.alpha.to_f64_lossy()),
            beta: U::lit(self.beta.to_f64_lossy()),
        }
    }
}

/// Innovation law with zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnovationDist {
    StandardNormal,
    /// Student-t with `df` degrees of freedom rescaled by `sqrt((df-2)/df)`.
    ScaledStudentT { df: u32 },
}

impl InnovationDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InnovationDist::StandardNormal => Ok(()),
            InnovationDist::ScaledStudentT { df } if df >= 5 => Ok(()),
            InnovationDist::ScaledStudentT { df } => {
                invalid(format!("Student-t innovations need df >= 5, got {df}"))
            }
        }
    }

    pub fn sampler(&self) -> Result<InnovationSampler> {
        self.validate()?;
        Ok(match *self {
            InnovationDist::StandardNormal => InnovationSampler::Normal,
            InnovationDist::ScaledStudentT { df } => {
                let df = f64::from(df);
                let t = StudentT::new(df).map_err(|e| VolError::InvalidParameter(e.to_string()))?;
                InnovationSampler::T { t, scale: ((df - 2.0) / df).sqrt() }
            }
        })
    }

    /// Parses `normal`, `gaussian`, `t7`, `t:7` or `student-t:7`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "normal" || s == "gaussian" || s == "n" {
            return Ok(InnovationDist::StandardNormal);
        }
        let digits = s
            .trim_start_matches("student-t")
            .trim_start_matches("student")
            .trim_start_matches('t')
            .trim_start_matches([':', '-', '_']);
        let df: u32 = digits
            .parse()
            .map_err(|_| VolError::InvalidParameter(format!("unknown innovation law '{s}'")))?;
        let d = InnovationDist::ScaledStudentT { df };
        d.validate()?;
        Ok(d)
    }
}

impl std::fmt::Display for InnovationDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InnovationDist::StandardNormal => write!(f, "normal"),
            InnovationDist::ScaledStudentT { df } => write!(f, "t{df}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum InnovationSampler {
    Normal,
    T { t: StudentT<f64>, scale: f64 },
}

impl InnovationSampler {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InnovationSampler::Normal => StandardNormal.sample(rng),
            InnovationSampler::T { t, scale } => t.sample(rng) * scale,
        }
    }
}

/// Simulated returns with their log conditional variances and innovations.
///
/// Entry `i` (0-based) is observation `i + 1` of the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub y: Vec<f64>,
    pub log_sigma2: Vec<f64>,
    pub eps: Vec<f64>,
    /// First (1-based) observation governed by the post-change parameters.
    pub change_index: Option<usize>,
}

impl SimulatedPath {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Regime change applied from observation `at` (1-based) onwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSwitch {
    pub params: GarchParams<f64>,
    pub at: usize,
}

/// Simulates `length` observations. `init_sigma2` defaults to
/// [`GarchParams::default_init_sigma2`] of the starting regime; the
/// pre-sample return is `y_0 = σ_0 ε_0` with its own innovation draw.
pub fn simulate_path(
    before: &GarchParams<f64>,
    switch: Option<RegimeSwitch>,
    length: usize,
    dist: InnovationDist,
    seed: u64,
    init_sigma2: Option<f64>,
) -> Result<SimulatedPath> {
    before.validate()?;
    if length == 0 {
        return invalid("path length must be positive");
    }
    if let Some(sw) = &switch {
        sw.params.validate()?;
        if sw.at < 1 || sw.at > length {
            return invalid(format!("change index {} outside [1, {length}]", sw.at));
        }
    }
    let init = init_sigma2.unwrap_or_else(|| before.default_init_sigma2());
    if !init.is_finite() || init <= 0.0 {
        return Err(VolError::NonFinite(format!("initial variance {init}")));
    }
    let sampler = dist.sampler()?;
    let mut rng = rng_from_seed(seed);

    let mut y = Vec::with_capacity(length);
    let mut log_sigma2 = Vec::with_capacity(length);
    let mut eps = Vec::with_capacity(length);

    let mut ell = init.ln();
    let mut eps_prev = sampler.draw(&mut rng);
    for i in 1..=length {
        let params = match &switch {
            Some(sw) if i >= sw.at => &sw.params,
            _ => before,
        };
        ell = params.next_log_sigma2(ell, eps_prev);
        let e = sampler.draw(&mut rng);
        y.push((0.5 * ell).exp() * e);
        log_sigma2.push(ell);
        eps.push(e);
        eps_prev = e;
    }
    Ok(SimulatedPath { y, log_sigma2, eps, change_index: switch.map(|s| s.at) })
}

/// Log squared returns `log y_i²` of a path with no change, generated
/// without ever leaving log space. Used for long explosive paths where
/// `y_i` itself would overflow.
pub(crate) fn simulate_log_squares<R: Rng + ?Sized>(
    params: &GarchParams<f64>,
    sampler: &InnovationSampler,
    length: usize,
    init_log_sigma2: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(length);
    let mut ell = init_log_sigma2;
    let mut eps_prev = sampler.draw(rng);
    for _ in 0..length {
        ell = params.next_log_sigma2(ell, eps_prev);
        let e = sampler.draw(rng);
        out.push(ell + (e * e).ln());
        eps_prev = e;
    }
    out
}

/// Running mean and variance (Welford). A constant input yields its value
/// exactly as the mean.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_var(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sample_var() / self.n as f64).sqrt()
        }
    }
}

/// Monte Carlo estimate of `E log(α ε² + β)` and its standard error.
pub fn lyapunov_exponent(
    params: &GarchParams<f64>,
    dist: InnovationDist,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    params.validate()?;
    if n_draws < 1000 {
        return invalid(format!("need at least 1000 draws, got {n_draws}"));
    }
    if params.alpha == 0.0 && params.beta == 0.0 {
        return invalid("alpha = beta = 0 gives log 0");
    }
    let sampler = dist.sampler()?;
    let mut rng = rng_from_seed(seed);
    let mut acc = Welford::default();
    for _ in 0..n_draws {
        let e = sampler.draw(&mut rng);
        acc.push((params.alpha * e * e + params.beta).ln());
    }
    Ok((acc.mean(), acc.std_error()))
}

/// Plug-in `E log(α ε² + β)` over a sample of standardized residuals.
pub fn lyapunov_from_residuals(params: &GarchParams<f64>, residuals: &[f64]) -> Result<(f64, f64)> {
    params.validate()?;
    if residuals.len() < 2 {
        return invalid("need at least two residuals");
    }
    let mut acc = Welford::default();
    for &e in residuals {
        if !e.is_finite() {
            return Err(VolError::NonFinite("residual".into()));
        }
        acc.push((params.alpha * e * e + params.beta).ln());
    }
    Ok((acc.mean(), acc.std_error()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Stationary,
    Explosive,
    NearBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeClass {
    pub value: Regime,
    pub lyapunov: f64,
    pub std_error: f64,
}

impl RegimeClass {
    /// Three-standard-error rule around zero.
    pub fn from_estimate(lyapunov: f64, std_error: f64) -> Self {
        let value = if lyapunov + 3.0 * std_error < 0.0 {
            Regime::Stationary
        } else if lyapunov - 3.0 * std_error > 0.0 {
            Regime::Explosive
        } else {
            Regime::NearBoundary
        };
        RegimeClass { value, lyapunov, std_error }
    }
}

pub fn classify_regime(
    params: &GarchParams<f64>,
    dist: InnovationDist,
    n_draws: usize,
    seed: u64,
) -> Result<RegimeClass> {
    let (est, se) = lyapunov_exponent(params, dist, n_draws, seed)?;
    Ok(RegimeClass::from_estimate(est, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(omega: f64, alpha: f64, beta: f64) -> GarchParams<f64> {
        GarchParams::new(omega, alpha, beta).unwrap()
    }

    #[test]
    fn degenerate_recursion_is_constant() {
        let path =
            simulate_path(&p(0.5, 0.0, 0.0), None, 200, InnovationDist::StandardNormal, 1, None)
                .unwrap();
        for &l in &path.log_sigma2 {
            assert!((l - 0.5f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn explosive_drift_is_positive() {
        let path =
            simulate_path(&p(0.10, 0.30, 0.80), None, 10_000, InnovationDist::StandardNormal, 11, None)
                .unwrap();
        let tail = &path.log_sigma2[5_000..];
        let drift = (tail[tail.len() - 1] - tail[0]) / (tail.len() - 1) as f64;
        assert!(drift > 0.0, "drift {drift}");
        // Matches the Lyapunov exponent within Monte Carlo noise.
        let (lyap, _) =
            lyapunov_exponent(&p(0.10, 0.30, 0.80), InnovationDist::StandardNormal, 1_000_000, 3)
                .unwrap();
        assert!((drift - lyap).abs() < 0.02, "drift {drift} vs {lyap}");
    }

    #[test]
    fn paths_are_deterministic() {
        let sw = RegimeSwitch { params: p(0.1, 0.18, 0.9), at: 40 };
        let a = simulate_path(&p(0.1, 0.18, 0.8), Some(sw), 300, InnovationDist::ScaledStudentT { df: 7 }, 5, None)
            .unwrap();
        let b = simulate_path(&p(0.1, 0.18, 0.8), Some(sw), 300, InnovationDist::ScaledStudentT { df: 7 }, 5, None)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.change_index, Some(40));
    }

    #[test]
    fn returns_match_variance_and_innovation() {
        let path =
            simulate_path(&p(0.1, 0.18, 0.8), None, 1_000, InnovationDist::StandardNormal, 2, None)
                .unwrap();
        for i in 0..path.len() {
            let expect = (0.5 * path.log_sigma2[i]).exp() * path.eps[i];
            assert!((path.y[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            assert!(path.log_sigma2[i] >= 0.1f64.ln() - 1e-12);
        }
    }

    #[test]
    fn switch_happens_at_change_index() {
        // After the switch to α = β = 0 the variance is exactly ω_A.
        let sw = RegimeSwitch { params: p(2.0, 0.0, 0.0), at: 25 };
        let path =
            simulate_path(&p(0.1, 0.18, 0.8), Some(sw), 50, InnovationDist::StandardNormal, 9, None)
                .unwrap();
        assert!((path.log_sigma2[23] - 2f64.ln()).abs() > 1e-6);
        for l in &path.log_sigma2[24..] {
            assert!((l - 2f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let sw = RegimeSwitch { params: p(0.1, 0.18, 0.9), at: 0 };
        assert!(simulate_path(&p(0.1, 0.1, 0.8), Some(sw), 10, InnovationDist::StandardNormal, 0, None).is_err());
        let sw = RegimeSwitch { params: p(0.1, 0.18, 0.9), at: 11 };
        assert!(simulate_path(&p(0.1, 0.1, 0.8), Some(sw), 10, InnovationDist::StandardNormal, 0, None).is_err());
        assert!(simulate_path(&p(0.1, 0.1, 0.8), None, 10, InnovationDist::StandardNormal, 0, Some(f64::NAN)).is_err());
        assert!(GarchParams::new(0.0, 0.1, 0.8).is_err());
        assert!(GarchParams::new(0.1, f64::INFINITY, 0.8).is_err());
        assert!(InnovationDist::ScaledStudentT { df: 4 }.validate().is_err());
    }

    #[test]
    fn scaled_student_t_has_unit_variance() {
        let sampler = InnovationDist::ScaledStudentT { df: 7 }.sampler().unwrap();
        let mut rng = rng_from_seed(42);
        let mut acc = Welford::default();
        for _ in 0..1_000_000 {
            acc.push(sampler.draw(&mut rng));
        }
        let v = acc.sample_var();
        assert!((0.99..=1.01).contains(&v), "variance {v}");
        assert!(acc.mean().abs() < 0.005);
    }

    #[test]
    fn lyapunov_of_pure_beta_is_exact() {
        let (est, se) = lyapunov_exponent(&p(0.1, 0.0, 0.8), InnovationDist::StandardNormal, 5_000, 1).unwrap();
        assert_eq!(est, 0.8f64.ln());
        assert_eq!(se, 0.0);
        assert!((est - (-0.22314)).abs() < 1e-5);
    }

    #[test]
    fn regimes_of_reference_parameters() {
        let stat = classify_regime(&p(0.1, 0.18, 0.80), InnovationDist::StandardNormal, 200_000, 1).unwrap();
        assert_eq!(stat.value, Regime::Stationary);
        assert!(stat.lyapunov < 0.0);
        let expl = classify_regime(&p(0.1, 0.30, 0.80), InnovationDist::StandardNormal, 200_000, 1).unwrap();
        assert_eq!(expl.value, Regime::Explosive);
        assert!(expl.lyapunov > 0.0);
    }

    #[test]
    fn near_boundary_pair_found_by_bisection() {
        // Bisect β at α = 0.18 until the estimate sits inside its 3·SE band.
        let n = 20_000;
        let seed = 77;
        let (mut lo, mut hi) = (0.5, 1.0);
        let mut found = None;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let c = classify_regime(&p(0.1, 0.18, mid), InnovationDist::StandardNormal, n, seed).unwrap();
            match c.value {
                Regime::NearBoundary => {
                    found = Some(c);
                    break;
                }
                Regime::Stationary => lo = mid,
                Regime::Explosive => hi = mid,
            }
        }
        let c = found.expect("bisection reaches the boundary band");
        assert!(c.lyapunov.abs() < 3.0 * c.std_error);
    }

    #[test]
    fn parses_innovation_laws() {
        assert_eq!(InnovationDist::parse("normal").unwrap(), InnovationDist::StandardNormal);
        assert_eq!(InnovationDist::parse("t7").unwrap(), InnovationDist::ScaledStudentT { df: 7 });
        assert_eq!(InnovationDist::parse("t:9").unwrap(), InnovationDist::ScaledStudentT { df: 9 });
        assert!(InnovationDist::parse("t3").is_err());
        assert!(InnovationDist::parse("cauchy").is_err());
    }
}
