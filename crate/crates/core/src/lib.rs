//! Sequential detection of parameter changes in GARCH(1,1) volatility,
//! including transitions between stationary and explosive regimes.
//!
//! The numerical kernels (variance filter, scores, score covariance,
//! boundaries and the monitor) are generic over [`Scalar`]; simulation,
//! estimation and the Monte Carlo harness run in `f64`. The aliases below
//! fix the `f64` instantiation.

pub mod critical_values;
pub mod data;
pub mod delay;
pub mod error;
pub mod experiments;
pub mod garch;
pub mod monitor;
pub mod qmle;
pub mod report;
pub mod rng;
pub mod scalar;

pub use data::ReturnsFile;
pub use delay::{predict_delay, solve_u_star, ChangeSpec, DelayCase, DelayPrediction};
pub use error::{Result, VolError};
pub use experiments::{run_delay_study, run_experiment, ExperimentPlan, ExperimentResult, SchemeChoice};
pub use garch::{
    classify_regime, lyapunov_exponent, simulate_path, InnovationDist, Regime, RegimeClass, RegimeSwitch,
    SimulatedPath,
};
pub use monitor::{run_closed_ended, run_closed_ended_traced, StoppingOutcome, TracePoint};
pub use report::{monitor_returns, RunReport};
pub use qmle::{compute_d_hat, filter_step, fit_qmle, QmleFit, QmleOptions, ThetaSpace};
pub use scalar::Scalar;

pub type GarchParams = garch::GarchParams<f64>;
pub type VolFilterState = qmle::VolFilterState<f64>;
pub type ScorePair = qmle::ScorePair<f64>;
pub type ScoreCovariance = qmle::ScoreCovariance<f64>;
pub type SchemeKind = monitor::SchemeKind<f64>;
pub type MonitorConfig = monitor::MonitorConfig<f64>;
pub type MonitorState = monitor::MonitorState<f64>;
pub type Monitor = monitor::Monitor<f64>;
