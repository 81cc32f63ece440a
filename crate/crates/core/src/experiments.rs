//! Seeded Monte Carlo harness for size, power and detection-delay studies.
//!
//! Each replication simulates `m + 𝓃` observations (switching regime at
//! `m + k*` under an alternative), fits the QMLE on the first `m`, and
//! monitors the remaining `𝓃` with every requested scheme. Replication `i`
//! draws from the stream `derive_seed(seed, i)`, so results do not depend on
//! scheduling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critical_values::{build_cv_table, cv_darling_erdos, CvRequest, CvScheme, RenyiMethod};
use crate::error::{invalid, Result, VolError};
use crate::garch::{simulate_path, GarchParams, InnovationDist, RegimeSwitch};
use crate::monitor::{advance_with_score, default_trimming, MonitorConfig, MonitorState, SchemeKind};
use crate::qmle::{filter_step, fit_qmle, QmleOptions, ThetaSpace, MIN_TRAINING};
use crate::rng::derive_seed;

/// Largest tolerated share of replications whose QMLE fit fails.
pub const MAX_FIT_FAILURE_RATE: f64 = 0.05;

pub const RESULTS_CSV_HEADER: &str = "scheme,eta,reps,rejections,rate,half_width";
pub const DELAYS_CSV_HEADER: &str = "scheme,eta,rep,k,delay";

/// Post-change regime and change time. `k_star` counts monitoring steps,
/// so the first post-change observation is `y_{m+k*}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedChange {
    pub theta_a: GarchParams<f64>,
    pub k_star: usize,
}

/// A scheme as written in a plan. Missing critical values are looked up or
/// simulated; a missing Rényi trimming defaults to `⌊√𝓃⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeChoice {
    Weighted {
        eta: f64,
        #[serde(default)]
        c: Option<f64>,
    },
    Renyi {
        eta: f64,
        #[serde(default)]
        r: Option<usize>,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default = "default_renyi_method")]
        method: RenyiMethod,
    },
    #[serde(rename = "de")]
    DarlingErdos {
        #[serde(default)]
        r: Option<usize>,
        #[serde(default)]
        c: Option<f64>,
    },
}

fn default_renyi_method() -> RenyiMethod {
    RenyiMethod::TimeInversion
}

impl SchemeChoice {
    pub fn weighted(eta: f64) -> Self {
        Self::Weighted { eta, c: None }
    }

    pub fn renyi(eta: f64, method: RenyiMethod) -> Self {
        Self::Renyi { eta, r: None, c: None, method }
    }

    pub fn with_c(self, value: f64) -> Self {
        match self {
            Self::Weighted { eta, .. } => Self::Weighted { eta, c: Some(value) },
            Self::Renyi { eta, r, method, .. } => Self::Renyi { eta, r, c: Some(value), method },
            Self::DarlingErdos { r, .. } => Self::DarlingErdos { r, c: Some(value) },
        }
    }

    pub fn explicit_c(&self) -> Option<f64> {
        match *self {
            Self::Weighted { c, .. } | Self::Renyi { c, .. } | Self::DarlingErdos { c, .. } => c,
        }
    }

    pub fn resolve(&self, horizon_n: usize) -> SchemeKind<f64> {
        match *self {
            Self::Weighted { eta, .. } => SchemeKind::Weighted { eta },
            Self::Renyi { eta, r, .. } => SchemeKind::Renyi { eta, r: r.unwrap_or_else(|| default_trimming(horizon_n)) },
            Self::DarlingErdos { r, .. } => SchemeKind::DarlingErdos { r },
        }
    }

    /// Table the critical value comes from when none is given.
    pub fn cv_scheme(&self) -> CvScheme {
        match *self {
            Self::Weighted { .. } => CvScheme::Weighted,
            Self::Renyi { method, .. } => CvScheme::Renyi(method),
            Self::DarlingErdos { .. } => CvScheme::DarlingErdos,
        }
    }

    /// `weighted`, `renyi`, `renyi_inverted`, `renyi_printed` or `de`.
    pub fn label(&self) -> &'static str {
        self.cv_scheme().name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub theta0: GarchParams<f64>,
    #[serde(default = "default_dist")]
    pub dist: InnovationDist,
    /// `None` simulates under the null.
    #[serde(default)]
    pub change: Option<PlannedChange>,
    pub m: usize,
    pub n: usize,
    pub schemes: Vec<SchemeChoice>,
    pub level: f64,
    pub reps: usize,
    #[serde(default)]
    pub tuned: bool,
    pub seed: u64,
    /// Box for the per-replication QMLE.
    #[serde(default)]
    pub space: ThetaSpace,
}

fn default_dist() -> InnovationDist {
    InnovationDist::StandardNormal
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.theta0.validate()?;
        self.dist.validate()?;
        self.space.validate()?;
        if self.reps < 100 {
            return invalid(format!("reps must be at least 100, got {}", self.reps));
        }
        if self.schemes.is_empty() {
            return invalid("plan lists no schemes");
        }
        if self.m < MIN_TRAINING {
            return invalid(format!("training size m must be at least {MIN_TRAINING}, got {}", self.m));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return invalid(format!("level must lie in (0, 1), got {}", self.level));
        }
        if let Some(ch) = &self.change {
            ch.theta_a.validate()?;
            if ch.k_star < 1 || ch.k_star > self.n {
                return invalid(format!("k* = {} outside [1, {}]", ch.k_star, self.n));
            }
        }
        for s in &self.schemes {
            self.config(s, 1.0).validate()?;
            if let Some(c) = s.explicit_c() {
                if !c.is_finite() {
                    return invalid("explicit critical value must be finite");
                }
            }
        }
        Ok(())
    }

    fn config(&self, s: &SchemeChoice, c: f64) -> MonitorConfig<f64> {
        MonitorConfig { scheme: s.resolve(self.n), c, horizon_n: self.n, m: self.m, tuned: self.tuned }
    }

    /// SHA-256 of the plan's JSON encoding together with the critical values.
    pub fn config_hash(&self, critical_values: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("plan serializes"));
        for c in critical_values {
            h.update(c.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Where missing critical values come from.
#[derive(Debug, Clone, Default)]
pub struct CvSource {
    pub request: CvRequest,
    pub cache: Option<PathBuf>,
}

/// One critical value per scheme of `plan`, in order.
pub fn resolve_critical_values(plan: &ExperimentPlan, src: &CvSource) -> Result<Vec<f64>> {
    plan.schemes
        .iter()
        .map(|s| match (s.explicit_c(), s) {
            (Some(c), _) => Ok(c),
            (None, SchemeChoice::DarlingErdos { .. }) => cv_darling_erdos(plan.level),
            (None, s) => {
                let eta = s.resolve(plan.n).eta();
                let table = build_cv_table(s.cv_scheme(), &[eta], &[plan.level], &src.request, src.cache.as_deref())?;
                Ok(table.entries()[0].c)
            }
        })
        .collect()
}

/// Aggregate for one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub label: String,
    pub scheme: SchemeKind<f64>,
    pub c: f64,
    /// Replications with a usable fit.
    pub reps: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Binomial 95% half-width `1.96 (p̂(1−p̂)/reps)^{1/2}`.
    pub mc_half_width: f64,
    /// `(rep, k)` for each detection, in replication order.
    pub detections: Vec<(usize, usize)>,
    /// `k − k*` for each detection under an alternative.
    pub delays: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub plan: ExperimentPlan,
    pub critical_values: Vec<f64>,
    pub schemes: Vec<SchemeResult>,
    pub fit_failures: Vec<FitFailure>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub rep: usize,
    pub reason: String,
}

pub fn binomial_half_width(p: f64, reps: usize) -> f64 {
    if reps == 0 {
        return f64::NAN;
    }
    1.96 * (p * (1.0 - p) / reps as f64).sqrt()
}

/// Per-scheme detection index of one replication.
fn run_replication(plan: &ExperimentPlan, configs: &[MonitorConfig<f64>], rep: usize) -> Result<Vec<Option<usize>>> {
    let seed = derive_seed(plan.seed, rep as u64);
    let switch = plan.change.map(|c| RegimeSwitch { params: c.theta_a, at: plan.m + c.k_star });
    let path = simulate_path(&plan.theta0, switch, plan.m + plan.n, plan.dist, derive_seed(seed, 0), None)?;
    let (train, post) = path.y.split_at(plan.m);
    let opts = QmleOptions { seed: derive_seed(seed, 1), ..QmleOptions::default() };
    let fit = fit_qmle(train, &plan.space, &opts)?;
    let d_inv = fit.d_hat.inverse()?;

    let mut states: Vec<MonitorState<f64>> =
        configs.iter().map(|_| MonitorState::start(fit.final_filter, fit.last_y)).collect();
    let mut found: Vec<Option<usize>> = vec![None; configs.len()];
    let mut live = configs.len();
    let mut filter = fit.final_filter;
    let mut y_prev = fit.last_y;
    for &y in post.iter().take(plan.n - 1) {
        let (next, score, _) = filter_step(&filter, &fit.theta_hat, y_prev, y)?;
        filter = next;
        y_prev = y;
        for (j, cfg) in configs.iter().enumerate() {
            if states[j].stopped {
                continue;
            }
            let (next, out) = advance_with_score(&states[j], cfg, &d_inv, score)?;
            states[j] = next;
            if let Some(out) = out {
                found[j] = out.detected_at();
                live -= 1;
            }
        }
        if live == 0 {
            break;
        }
    }
    Ok(found)
}

/// Runs every replication of `plan` with the given critical values (one per
/// scheme).
pub fn run_experiment(plan: &ExperimentPlan, critical_values: &[f64]) -> Result<ExperimentResult> {
    plan.validate()?;
    if critical_values.len() != plan.schemes.len() {
        return invalid(format!(
            "{} critical values for {} schemes",
            critical_values.len(),
            plan.schemes.len()
        ));
    }
    let configs: Vec<MonitorConfig<f64>> =
        plan.schemes.iter().zip(critical_values).map(|(s, &c)| plan.config(s, c)).collect();
    for cfg in &configs {
        cfg.validate()?;
    }

    let outcomes: Vec<Result<Vec<Option<usize>>>> =
        (0..plan.reps).into_par_iter().map(|rep| run_replication(plan, &configs, rep)).collect();

    let mut fit_failures = Vec::new();
    let mut ok: Vec<(usize, Vec<Option<usize>>)> = Vec::with_capacity(plan.reps);
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => ok.push((rep, v)),
            Err(e) => fit_failures.push(FitFailure { rep, reason: e.to_string() }),
        }
    }
    let fail_rate = fit_failures.len() as f64 / plan.reps as f64;
    if fail_rate > MAX_FIT_FAILURE_RATE {
        let first = fit_failures.first().map(|f| f.reason.as_str()).unwrap_or("");
        return Err(VolError::Estimation(format!(
            "{} of {} replications failed to fit ({:.1}%); first failure: {first}",
            fit_failures.len(),
            plan.reps,
            100.0 * fail_rate
        )));
    }

    let k_star = plan.change.map(|c| c.k_star as i64);
    let schemes = configs
        .iter()
        .enumerate()
        .map(|(j, cfg)| {
            let detections: Vec<(usize, usize)> =
                ok.iter().filter_map(|(rep, v)| v[j].map(|k| (*rep, k))).collect();
            let reps = ok.len();
            let rate = detections.len() as f64 / reps as f64;
            SchemeResult {
                label: plan.schemes[j].label().to_string(),
                scheme: cfg.scheme,
                c: cfg.c,
                reps,
                rejections: detections.len(),
                rejection_rate: rate,
                mc_half_width: binomial_half_width(rate, reps),
                delays: match k_star {
                    Some(ks) => detections.iter().map(|&(_, k)| k as i64 - ks).collect(),
                    None => Vec::new(),
                },
                detections,
            }
        })
        .collect();
    Ok(ExperimentResult {
        plan: plan.clone(),
        critical_values: critical_values.to_vec(),
        schemes,
        fit_failures,
        config_hash: plan.config_hash(critical_values),
    })
}

/// Quartiles of the detection delays of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub label: String,
    pub eta: f64,
    pub detected: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(v: &[i64], p: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] as f64 + (h - lo as f64) * (v[hi] - v[lo]) as f64)
}

pub fn summarize_delays(result: &ExperimentResult) -> Vec<DelaySummary> {
    result
        .schemes
        .iter()
        .map(|s| {
            let mut d = s.delays.clone();
            d.sort_unstable();
            DelaySummary {
                label: s.label.clone(),
                eta: s.scheme.eta(),
                detected: d.len(),
                min: quantile_sorted(&d, 0.0),
                q1: quantile_sorted(&d, 0.25),
                median: quantile_sorted(&d, 0.5),
                q3: quantile_sorted(&d, 0.75),
                max: quantile_sorted(&d, 1.0),
            }
        })
        .collect()
}

/// Runs an alternative plan and summarizes the delays per scheme.
pub fn run_delay_study(plan: &ExperimentPlan, critical_values: &[f64]) -> Result<(ExperimentResult, Vec<DelaySummary>)> {
    if plan.change.is_none() {
        return invalid("a delay study needs a change");
    }
    let result = run_experiment(plan, critical_values)?;
    let summary = summarize_delays(&result);
    Ok((result, summary))
}

/// CSV `eta` column; empty for Darling-Erdős, which has no weight exponent.
fn eta_field(scheme: &SchemeKind<f64>) -> String {
    match scheme {
        SchemeKind::DarlingErdos { .. } => String::new(),
        s => s.eta().to_string(),
    }
}

impl ExperimentResult {
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_CSV_HEADER);
        out.push('\n');
        for s in &self.schemes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.label,
                eta_field(&s.scheme),
                s.reps,
                s.rejections,
                s.rejection_rate,
                s.mc_half_width
            );
        }
        out
    }

    pub fn delays_csv(&self) -> String {
        let mut out = String::from(DELAYS_CSV_HEADER);
        out.push('\n');
        let k_star = self.plan.change.map(|c| c.k_star as i64);
        for s in &self.schemes {
            for &(rep, k) in &s.detections {
                let delay = k_star.map(|ks| (k as i64 - ks).to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{},{}", s.label, eta_field(&s.scheme), rep, k, delay);
            }
        }
        out
    }

    /// JSON manifest: plan, seeds, critical values, config hash, failures
    /// and per-scheme aggregates (detections omitted).
    pub fn manifest_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            label: &'a str,
            scheme: &'a SchemeKind<f64>,
            c: f64,
            reps: usize,
            rejections: usize,
            rejection_rate: f64,
            mc_half_width: f64,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            version: &'a str,
            config_hash: &'a str,
            plan: &'a ExperimentPlan,
            critical_values: &'a [f64],
            fit_failures: &'a [FitFailure],
            results: Vec<Row<'a>>,
        }
        let m = Manifest {
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.config_hash,
            plan: &self.plan,
            critical_values: &self.critical_values,
            fit_failures: &self.fit_failures,
            results: self
                .schemes
                .iter()
                .map(|s| Row {
                    label: &s.label,
                    scheme: &s.scheme,
                    c: s.c,
                    reps: s.reps,
                    rejections: s.rejections,
                    rejection_rate: s.rejection_rate,
                    mc_half_width: s.mc_half_width,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }

    /// Writes `results.csv`, `delays.csv` and `manifest.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        fs::create_dir_all(dir)?;
        let paths = [dir.join("results.csv"), dir.join("delays.csv"), dir.join("manifest.json")];
        fs::write(&paths[0], self.results_csv())?;
        fs::write(&paths[1], self.delays_csv())?;
        fs::write(&paths[2], self.manifest_json())?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> ExperimentPlan {
        ExperimentPlan {
            theta0: GarchParams::new(0.1, 0.18, 0.8).unwrap(),
            dist: InnovationDist::StandardNormal,
            change: None,
            m: 300,
            n: 100,
            schemes: vec![SchemeChoice::weighted(0.0).with_c(1e30)],
            level: 0.05,
            reps: 100,
            tuned: false,
            seed: 5,
            space: ThetaSpace::default(),
        }
    }

    #[test]
    fn huge_boundary_never_rejects() {
        let p = plan();
        let r = run_experiment(&p, &[1e30]).unwrap();
        assert_eq!(r.schemes[0].rejections, 0);
        assert!(r.schemes[0].delays.is_empty());
        assert_eq!(r.schemes[0].mc_half_width, 0.0);
    }

    #[test]
    fn plan_validation() {
        let mut p = plan();
        p.reps = 0;
        assert!(p.validate().is_err());
        let mut p = plan();
        p.schemes.clear();
        assert!(p.validate().is_err());
        let mut p = plan();
        p.change = Some(PlannedChange { theta_a: p.theta0, k_star: 0 });
        assert!(p.validate().is_err());
        assert!(run_experiment(&plan(), &[]).is_err());
    }

    #[test]
    fn plan_json_round_trip_and_defaults() {
        let text = r#"{"theta0":{"omega":0.1,"alpha":0.18,"beta":0.8},"m":300,"n":100,
            "schemes":[{"kind":"weighted","eta":0.5},{"kind":"renyi","eta":1.5},{"kind":"de"}],
            "level":0.05,"reps":100,"seed":1}"#;
        let p: ExperimentPlan = serde_json::from_str(text).unwrap();
        assert_eq!(p.dist, InnovationDist::StandardNormal);
        assert!(!p.tuned);
        assert_eq!(p.schemes[1].resolve(100), SchemeKind::Renyi { eta: 1.5, r: 10 });
        let back: ExperimentPlan = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<ExperimentPlan>(r#"{"theta0":1}"#).is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1, 2, 3, 4];
        assert_eq!(quantile_sorted(&v, 0.5), Some(2.5));
        assert_eq!(quantile_sorted(&v, 0.0), Some(1.0));
        assert_eq!(quantile_sorted(&[], 0.5), None);
        assert!((binomial_half_width(0.5, 100) - 0.098).abs() < 1e-12);
    }
}
