//! Fit-and-monitor runs over a returns file, serialized as a report.

use serde::{Deserialize, Serialize};

use crate::data::ReturnsFile;
use crate::error::{invalid, Result};
use crate::garch::{lyapunov_from_residuals, GarchParams, RegimeClass};
use crate::monitor::{run_closed_ended_traced, MonitorConfig, SchemeKind, StoppingOutcome, TracePoint};
use crate::qmle::{fit_qmle, BoundaryContact, QmleOptions, ScoreCovariance, ThetaSpace};

/// Settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub scheme: SchemeKind<f64>,
    pub c: f64,
    /// Nominal level the critical value belongs to, if it came from a table.
    pub level: Option<f64>,
    /// Where `c` came from, e.g. `explicit`, `table` or `closed_form`.
    pub c_source: String,
    pub m: usize,
    pub n: usize,
    pub tuned: bool,
    pub qmle_seed: u64,
    pub data_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportOutcome {
    /// `k` counts monitoring steps; `index` is the 1-based row of the
    /// returns file where the boundary was crossed.
    Detected { k: usize, index: usize, date: Option<String>, detector_value: f64 },
    NoChange { horizon_n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ReportConfig,
    pub theta_hat: GarchParams<f64>,
    pub d_hat: ScoreCovariance<f64>,
    pub qmle_converged: bool,
    pub boundary_contact: BoundaryContact,
    /// Plug-in Lyapunov exponent of the training fit over its standardized
    /// residuals. A heuristic regime label, not a formal test.
    pub training_regime: RegimeClass,
    pub outcome: ReportOutcome,
    /// `(k, D(k), g(k))` for every checked `k` up to the stopping time.
    pub trace: Vec<TracePoint>,
}

/// Expected trace length for a run stopping at `tau` (`𝓃` when nothing is
/// detected).
pub fn expected_trace_len(config: &MonitorConfig<f64>, tau: usize) -> usize {
    (tau.min(config.horizon_n - 1) + 1).saturating_sub(config.scan_start())
}

/// Fits on the first `m` rows and monitors the next `𝓃`.
pub fn monitor_returns(
    data: &ReturnsFile,
    config: &MonitorConfig<f64>,
    level: Option<f64>,
    c_source: &str,
    opts: &QmleOptions,
) -> Result<RunReport> {
    config.validate()?;
    let (m, n) = (config.m, config.horizon_n);
    if data.len() < m + n {
        return invalid(format!("need m + n = {} rows, file has {}", m + n, data.len()));
    }
    let y = data.values();
    let (train, post) = y.split_at(m);
    let fit = fit_qmle(train, &ThetaSpace::default(), opts)?;
    let residuals = fit.standardized_residuals(train)?;
    let (lyap, se) = lyapunov_from_residuals(&fit.theta_hat, &residuals)?;
    let (outcome, trace) = run_closed_ended_traced(&post[..n], config, &fit)?;
    let outcome = match outcome {
        StoppingOutcome::Detected { k, detector_value } => ReportOutcome::Detected {
            k,
            index: m + k,
            date: data.rows[m + k - 1].date.clone(),
            detector_value,
        },
        StoppingOutcome::NoChange { horizon_n } => ReportOutcome::NoChange { horizon_n },
    };
    Ok(RunReport {
        config: ReportConfig {
            scheme: config.scheme,
            c: config.c,
            level,
            c_source: c_source.to_string(),
            m,
            n,
            tuned: config.tuned,
            qmle_seed: opts.seed,
            data_rows: data.len(),
        },
        theta_hat: fit.theta_hat,
        d_hat: fit.d_hat,
        qmle_converged: fit.converged,
        boundary_contact: fit.boundary_contact,
        training_regime: RegimeClass::from_estimate(lyap, se),
        outcome,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::{simulate_path, InnovationDist, RegimeSwitch};

    fn config(scheme: SchemeKind<f64>, c: f64) -> MonitorConfig<f64> {
        MonitorConfig { scheme, c, horizon_n: 300, m: 1000, tuned: true }
    }

    #[test]
    fn detects_explosive_switch_and_round_trips() {
        let before = GarchParams::new(0.1, 0.18, 0.8).unwrap();
        let after = GarchParams::new(0.1, 0.18, 1.0).unwrap();
        let path = simulate_path(
            &before,
            Some(RegimeSwitch { params: after, at: 1020 }),
            1300,
            InnovationDist::StandardNormal,
            4,
            None,
        )
        .unwrap();
        let mut data = ReturnsFile::from_values(&path.y);
        for (i, r) in data.rows.iter_mut().enumerate() {
            r.date = Some(format!("day{i}"));
        }
        let cfg = config(SchemeKind::Weighted { eta: 0.0 }, 7.215);
        let rep = monitor_returns(&data, &cfg, Some(0.05), "explicit", &QmleOptions::default()).unwrap();
        let ReportOutcome::Detected { k, index, date, .. } = &rep.outcome else { panic!("no detection") };
        assert!(*k > 20);
        assert_eq!(*index, 1000 + k);
        assert_eq!(date.as_deref(), Some(format!("day{}", index - 1).as_str()));
        assert_eq!(rep.trace.len(), expected_trace_len(&cfg, *k));
        let text = serde_json::to_string(&rep).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn renyi_trace_starts_at_trimming() {
        let p = GarchParams::new(0.1, 0.18, 0.8).unwrap();
        let path = simulate_path(&p, None, 1300, InnovationDist::StandardNormal, 8, None).unwrap();
        let data = ReturnsFile::from_values(&path.y);
        let cfg = config(SchemeKind::Renyi { eta: 1.5, r: 17 }, 1e30);
        let rep = monitor_returns(&data, &cfg, None, "explicit", &QmleOptions::default()).unwrap();
        assert_eq!(rep.outcome, ReportOutcome::NoChange { horizon_n: 300 });
        assert_eq!(rep.trace.len(), 299 - 17 + 1);
        assert_eq!(rep.trace[0].k, 17);
    }

    #[test]
    fn short_file_is_rejected() {
        let data = ReturnsFile::from_values(&[0.1; 500]);
        let cfg = config(SchemeKind::Weighted { eta: 0.0 }, 7.0);
        assert!(monitor_returns(&data, &cfg, None, "explicit", &QmleOptions::default()).is_err());
    }
}
