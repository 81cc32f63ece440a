//! Detection-delay theory: drift of the scores after a change, the
//! associated covariances, and the centering and scaling sequences of the
//! limiting delay laws.
//!
//! After a change to a stationary regime the scores at `θ₀` have mean `Δ`
//! and covariance `Σ₁`. After a change to an explosive regime the scores
//! have long-run mean `Υ`, and their fluctuations are described by `Σ₂`,
//! built from the `𝓋` sequences
//!
//! ```text
//! 𝓋₁ = Σ_j ε²_{i−j} β_A⁻¹ P_j,   𝓋₂ = Σ_j β_A⁻¹ P_j,   P_j = Π_{k≤j} β_A/(α_A ε²_{i−k} + β_A).
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, VolError};
use crate::garch::{
    lyapunov_exponent, simulate_log_squares, GarchParams, InnovationDist, Regime, RegimeClass, Welford,
};
use crate::monitor::{MonitorConfig, SchemeKind};
use crate::qmle::filter::{step_log, ScorePair, VolFilterState};
use crate::qmle::ScoreCovariance;
use crate::rng::{derive_seed, rng_from_seed};

/// Independent chains used by the path-based drift estimators.
pub const DRIFT_CHAINS: usize = 16;

/// Running product below which a `𝓋` series is cut off.
pub const PRODUCT_CUTOFF: f64 = 1e-12;

/// A change from `θ₀` to `θ_A` after `k*` monitoring steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub theta0: GarchParams<f64>,
    pub theta_a: GarchParams<f64>,
    pub k_star: usize,
    pub dist: InnovationDist,
    pub post_regime: RegimeClass,
}

impl ChangeSpec {
    /// Classifies the post-change regime with `lyap_draws` Monte Carlo draws.
    pub fn new(
        theta0: GarchParams<f64>,
        theta_a: GarchParams<f64>,
        k_star: usize,
        dist: InnovationDist,
        lyap_draws: usize,
        seed: u64,
    ) -> Result<Self> {
        theta0.validate()?;
        theta_a.validate()?;
        let (l, se) = lyapunov_exponent(&theta_a, dist, lyap_draws, seed)?;
        Ok(Self { theta0, theta_a, k_star, dist, post_regime: RegimeClass::from_estimate(l, se) })
    }

    /// The change must move `(α, β)`.
    pub fn validate_alternative(&self) -> Result<()> {
        if self.theta0.alpha == self.theta_a.alpha && self.theta0.beta == self.theta_a.beta {
            return invalid("(alpha, beta) unchanged: no alternative to detect");
        }
        Ok(())
    }

    fn require(&self, want: Regime) -> Result<()> {
        if self.post_regime.value != want {
            return Err(VolError::Regime(format!(
                "estimator needs a {:?} post-change regime, classified {:?} (Lyapunov {:.5} ± {:.5})",
                want, self.post_regime.value, self.post_regime.lyapunov, self.post_regime.std_error
            )));
        }
        Ok(())
    }
}

/// Mean of a 2-vector with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub mean: [f64; 2],
    pub std_error: [f64; 2],
}

impl DriftEstimate {
    /// Largest `|mean|/se` over the two coordinates.
    pub fn max_z(&self) -> f64 {
        (0..2).map(|i| self.mean[i].abs() / self.std_error[i].max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    }
}

/// Scores at `θ₀` along a path generated under `θ_A`, after discarding
/// `burn_in` observations. Runs entirely in log space.
pub fn post_change_scores(spec: &ChangeSpec, length: usize, burn_in: usize, seed: u64) -> Result<Vec<ScorePair<f64>>> {
    let sampler = spec.dist.sampler()?;
    let mut rng = rng_from_seed(seed);
    let init = spec.theta_a.default_init_sigma2().ln();
    let logs = simulate_log_squares(&spec.theta_a, &sampler, burn_in + length, init, &mut rng);
    let mut state = VolFilterState { log_sigma2: init, ..VolFilterState::initial(1.0)? };
    let mut log_prev = init;
    let mut out = Vec::with_capacity(length);
    for (i, &l) in logs.iter().enumerate() {
        let step = step_log(&state, &spec.theta0, log_prev, l);
        if i >= burn_in {
            out.push(step.score);
        }
        state = step.state;
        log_prev = l;
    }
    if out.iter().any(|s| !s.s_alpha.is_finite() || !s.s_beta.is_finite()) {
        return Err(VolError::NonFinite("post-change score".into()));
    }
    Ok(out)
}

fn chain_means(spec: &ChangeSpec, n_mc: usize, burn_in: usize, seed: u64) -> Result<(DriftEstimate, Vec<Vec<ScorePair<f64>>>)> {
    if n_mc < DRIFT_CHAINS * 10 {
        return invalid(format!("n_mc must be at least {}", DRIFT_CHAINS * 10));
    }
    let len = n_mc.div_ceil(DRIFT_CHAINS);
    let chains: Vec<Vec<ScorePair<f64>>> = (0..DRIFT_CHAINS as u64)
        .into_par_iter()
        .map(|c| post_change_scores(spec, len, burn_in, derive_seed(seed, c)))
        .collect::<Result<_>>()?;
    let mut acc = [Welford::default(), Welford::default()];
    for ch in &chains {
        let n = ch.len() as f64;
        acc[0].push(ch.iter().map(|s| s.s_alpha).sum::<f64>() / n);
        acc[1].push(ch.iter().map(|s| s.s_beta).sum::<f64>() / n);
    }
    let est = DriftEstimate {
        mean: [acc[0].mean(), acc[1].mean()],
        std_error: [acc[0].std_error(), acc[1].std_error()],
    };
    Ok((est, chains))
}

/// `Δ`: mean score at `θ₀` under the stationary post-change law.
pub fn estimate_delta(spec: &ChangeSpec, n_mc: usize, burn_in: usize, seed: u64) -> Result<DriftEstimate> {
    spec.require(Regime::Stationary)?;
    Ok(chain_means(spec, n_mc, burn_in, seed)?.0)
}

/// `Σ₁`: covariance of the scores at `θ₀` under the stationary post-change
/// law.
pub fn estimate_sigma1(spec: &ChangeSpec, n_mc: usize, burn_in: usize, seed: u64) -> Result<ScoreCovariance<f64>> {
    spec.require(Regime::Stationary)?;
    let (est, chains) = chain_means(spec, n_mc, burn_in, seed)?;
    let [d1, d2] = est.mean;
    Ok(ScoreCovariance::mean_outer(chains.iter().flatten().map(|s| [s.s_alpha - d1, s.s_beta - d2])))
}

/// `Υ`: long-run mean score at `θ₀` along explosive post-change paths.
pub fn estimate_upsilon(spec: &ChangeSpec, n_mc: usize, burn_in: usize, seed: u64) -> Result<DriftEstimate> {
    spec.require(Regime::Explosive)?;
    Ok(chain_means(spec, n_mc, burn_in, seed)?.0)
}

/// Inner operator of the `𝓋` sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VSeqForm {
    /// `Π_{k≤j} β_A/(α_A ε² + β_A)`; terms decay geometrically.
    #[default]
    Product,
    /// `Σ_{k≤j} β_A/(α_A ε² + β_A)` as printed; grows with `j`, so the
    /// result depends on the truncation.
    LiteralSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub sigma2: ScoreCovariance<f64>,
    /// `E(1 − ε²)²` and its standard error.
    pub kappa: f64,
    pub kappa_se: f64,
    /// `E 𝓋 𝓋ᵀ`.
    pub vv: ScoreCovariance<f64>,
}

/// `Σ₂ = E(1 − ε²)² · E 𝓋𝓋ᵀ` with the `j`-series truncated at `J` (and
/// earlier once the running product drops below [`PRODUCT_CUTOFF`]).
pub fn estimate_sigma2(
    spec: &ChangeSpec,
    n_mc: usize,
    truncation_j: usize,
    form: VSeqForm,
    seed: u64,
) -> Result<Sigma2Estimate> {
    spec.require(Regime::Explosive)?;
    if truncation_j < 50 {
        return invalid(format!("truncation J must be at least 50, got {truncation_j}"));
    }
    if n_mc < 100 {
        return invalid("n_mc must be at least 100");
    }
    let sampler = spec.dist.sampler()?;
    let (a, b) = (spec.theta_a.alpha, spec.theta_a.beta);
    let draws: Vec<(f64, [f64; 2])> = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i));
            let e0 = sampler.draw(&mut rng);
            let k = (1.0 - e0 * e0).powi(2);
            let (mut v1, mut v2) = (0.0, 0.0);
            let mut inner = match form {
                VSeqForm::Product => 1.0,
                VSeqForm::LiteralSum => 0.0,
            };
            for _ in 0..truncation_j {
                let e = sampler.draw(&mut rng);
                let e2 = e * e;
                let factor = b / (a * e2 + b);
                match form {
                    VSeqForm::Product => inner *= factor,
                    VSeqForm::LiteralSum => inner += factor,
                }
                v1 += e2 * inner / b;
                v2 += inner / b;
                if form == VSeqForm::Product && inner < PRODUCT_CUTOFF {
                    break;
                }
            }
            (k, [v1, v2])
        })
        .collect();
    let mut kacc = Welford::default();
    for (k, _) in &draws {
        kacc.push(*k);
    }
    let vv = ScoreCovariance::mean_outer(draws.iter().map(|d| d.1));
    let kappa = kacc.mean();
    Ok(Sigma2Estimate {
        sigma2: ScoreCovariance::new(kappa * vv.a11, kappa * vv.a12, kappa * vv.a22),
        kappa,
        kappa_se: kacc.std_error(),
        vv,
    })
}

/// Positive root of `u = (u + t)^{η/2}` by bisection.
pub fn solve_u_star(t_star: f64, eta: f64) -> Result<f64> {
    if !(t_star >= 0.0 && t_star.is_finite()) {
        return invalid(format!("t* must be finite and nonnegative, got {t_star}"));
    }
    if !(0.0..2.0).contains(&eta) {
        return invalid(format!("eta must lie in [0, 2), got {eta}"));
    }
    let f = |u: f64| u - (u + t_star).powf(eta / 2.0);
    let mut lo = 1e-8;
    let mut hi = 2.0f64.max((2.0 * t_star).powf(eta / (2.0 - eta)) + 2.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    if f(lo) >= 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let u = 0.5 * (lo + hi);
    debug_assert!(f(u).abs() < 1e-10);
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayCase {
    /// `k*` small relative to `𝓃^{(1−η)/(2−η)}`: centering `v₁`, scaling `v₂`.
    VeryEarly,
    /// Larger `k*` with `k*/𝓃` small: centering `v₃`, scaling `v₄`.
    Early,
    /// `k*/𝓃` bounded away from zero.
    Late,
    /// Rényi scheme, `k* ≤ r`: detection at `r` when `k*/r` is small.
    RenyiPreR,
    /// Rényi scheme, `r < k*` with `k*/r` moderate.
    RenyiEarly,
    /// Rényi scheme, `k*/r` large: centering `v₅`, scaling `v₆`.
    RenyiLate,
}

/// `t* ≤` this selects [`DelayCase::VeryEarly`].
pub const VERY_EARLY_T: f64 = 1.0;
/// `k*/𝓃 ≥` this selects [`DelayCase::Late`].
pub const LATE_FRACTION: f64 = 0.2;
/// `k*/r >` this selects [`DelayCase::RenyiLate`].
pub const RENYI_LATE_RATIO: f64 = 10.0;

/// Plug-in delay quantities for one configuration. Sequences are in units
/// of observations; fields not defined for the scheme are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayPrediction {
    pub case: DelayCase,
    /// `A = driftᵀ D̂⁻¹ drift` (`A_m` or `B_m`).
    pub a_m: f64,
    /// `(𝓃^{1−η} c / A)^{1/(2−η)}`.
    pub scale: Option<f64>,
    pub t_star: Option<f64>,
    pub u_star: Option<f64>,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
    pub v3: Option<f64>,
    pub v4: Option<f64>,
    /// `(c/A · r^{1−η} (k*)^η)^{1/2}`, from the crossing condition of the
    /// Rényi boundary.
    pub v5: Option<f64>,
    /// `(c/A · (k*)^η / r^{1−η})^{1/2}`, the alternative arrangement of the
    /// powers of `r`.
    pub v5_alt: Option<f64>,
    pub v6: Option<f64>,
    pub s1_sq: Option<f64>,
    pub s2_sq: f64,
    /// `k*/𝓃`.
    pub late_fraction: f64,
    /// `k*/r` for trimmed schemes.
    pub trim_ratio: Option<f64>,
}

/// Fills the delay quantities for `spec` monitored under `config`.
///
/// `drift` is `Δ` (stationary post-change regime) or `Υ` (explosive),
/// `sigma` the matching `Σ₁` or `Σ₂`, and `d_hat` the score covariance used
/// by the detector.
pub fn predict_delay(
    spec: &ChangeSpec,
    config: &MonitorConfig<f64>,
    d_hat: &ScoreCovariance<f64>,
    drift: [f64; 2],
    sigma: &ScoreCovariance<f64>,
) -> Result<DelayPrediction> {
    config.validate()?;
    spec.validate_alternative()?;
    if spec.post_regime.value == Regime::NearBoundary {
        return Err(VolError::Regime("post-change regime is too close to the stationarity boundary".into()));
    }
    let d_inv = d_hat.inverse()?;
    let a = d_inv.quad_form(drift);
    if !(a > 0.0) {
        return invalid("drift is zero in the detector metric");
    }
    let c = config.c;
    let n = config.horizon_n as f64;
    let k = spec.k_star as f64;
    // Δᵀ D⁻¹ Σ D⁻¹ Δ with w = D⁻¹ Δ.
    let w = [d_inv.a11 * drift[0] + d_inv.a12 * drift[1], d_inv.a12 * drift[0] + d_inv.a22 * drift[1]];
    let noise = sigma.quad_form(w);

    let mut p = DelayPrediction {
        case: DelayCase::Early,
        a_m: a,
        scale: None,
        t_star: None,
        u_star: None,
        v1: None,
        v2: None,
        v3: None,
        v4: None,
        v5: None,
        v5_alt: None,
        v6: None,
        s1_sq: None,
        s2_sq: a,
        late_fraction: k / n,
        trim_ratio: None,
    };
    match config.scheme {
        SchemeKind::Weighted { eta } => {
            let scale = (n.powf(1.0 - eta) * c / a).powf(1.0 / (2.0 - eta));
            let t = k / scale;
            let u = solve_u_star(t, eta)?;
            let s1_sq = t * a + (1.0 - if t + u > 0.0 { t / (t + u) } else { 0.0 }) * noise;
            p.scale = Some(scale);
            p.t_star = Some(t);
            p.u_star = Some(u);
            p.s1_sq = Some(s1_sq);
            p.v1 = Some(u * scale);
            p.v2 = Some(s1_sq.sqrt() * (t + u).powf(1.5) * scale.sqrt());
            p.v3 = Some((c / a * n.powf(1.0 - eta) * k.powf(eta)).sqrt());
            p.v4 = Some(a.sqrt() / a * k.sqrt());
            p.case = if k / n >= LATE_FRACTION {
                DelayCase::Late
            } else if t <= VERY_EARLY_T {
                DelayCase::VeryEarly
            } else {
                DelayCase::Early
            };
        }
        SchemeKind::Renyi { eta, r } => {
            let rf = r as f64;
            p.trim_ratio = Some(k / rf);
            p.v5 = Some((c / a * rf.powf(1.0 - eta) * k.powf(eta)).sqrt());
            p.v5_alt = Some((c / a * k.powf(eta) / rf.powf(1.0 - eta)).sqrt());
            p.v6 = Some(k.sqrt());
            p.case = if spec.k_star <= r {
                DelayCase::RenyiPreR
            } else if k / rf <= RENYI_LATE_RATIO {
                DelayCase::RenyiEarly
            } else {
                DelayCase::RenyiLate
            };
        }
        SchemeKind::DarlingErdos { .. } => {
            return invalid("no delay theory for the Darling-Erdos boundary");
        }
    }
    Ok(p)
}
