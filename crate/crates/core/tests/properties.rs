use proptest::prelude::*;
use volwatch::garch::{simulate_path, GarchParams, InnovationDist};
use volwatch::monitor::{run_closed_ended, run_closed_ended_traced, Monitor, MonitorConfig, SchemeKind};
use volwatch::qmle::{compute_d_hat, run_filter, QmleFit, ScoreCovariance};
use volwatch::solve_u_star;

fn stationary_path(theta: &GarchParams<f64>, len: usize, seed: u64) -> Vec<f64> {
    simulate_path(theta, None, len, InnovationDist::StandardNormal, seed, None).unwrap().y
}

fn theta_strategy() -> impl Strategy<Value = GarchParams<f64>> {
    (0.01f64..1.0, 0.01f64..0.4, 0.3f64..0.95).prop_map(|(o, a, b)| GarchParams::new(o, a, b).unwrap())
}

/// σ² recursion and its derivatives in levels, without logs.
struct DirectFilter {
    log_sigma2: Vec<f64>,
    scores: Vec<[f64; 2]>,
    objective: f64,
}

fn direct_filter(y: &[f64], t: &GarchParams<f64>, init: f64) -> DirectFilter {
    let (mut s2, mut y2_prev) = (init, init);
    let (mut ds_a, mut ds_b) = (0.0, 0.0);
    let mut out = DirectFilter { log_sigma2: vec![], scores: vec![], objective: 0.0 };
    for &yi in y {
        let s2_new = t.omega + t.alpha * y2_prev + t.beta * s2;
        ds_a = y2_prev + t.beta * ds_a;
        ds_b = s2 + t.beta * ds_b;
        s2 = s2_new;
        let y2 = yi * yi;
        let w = (1.0 - y2 / s2) / s2;
        out.scores.push([w * ds_a, w * ds_b]);
        out.log_sigma2.push(s2.ln());
        out.objective += s2.ln() + y2 / s2;
        y2_prev = y2;
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn gradient_matches_central_differences(t in theta_strategy(), true_t in theta_strategy(), seed in 0u64..1000) {
        let y = stationary_path(&true_t, 300, seed);
        let init = 0.7;
        let pass = run_filter(&y, &t, init, false).unwrap();
        let x = [t.omega, t.alpha, t.beta];
        for j in 0..3 {
            let h = 1e-6 * x[j].abs().max(1e-3);
            let mut up = x;
            let mut dn = x;
            up[j] += h;
            dn[j] -= h;
            let f = |v: [f64; 3]| run_filter(&y, &GarchParams::new(v[0], v[1], v[2]).unwrap(), init, false).unwrap().objective;
            let fd = (f(up) - f(dn)) / (2.0 * h);
            prop_assert!(rel(pass.grad[j], fd) < 1e-5, "coord {} analytic {} fd {}", j, pass.grad[j], fd);
        }
    }

    #[test]
    fn log_space_filter_matches_levels(t in theta_strategy(), seed in 0u64..1000) {
        let y = stationary_path(&t, 500, seed);
        let init = 0.5;
        let pass = run_filter(&y, &t, init, true).unwrap();
        let direct = direct_filter(&y, &t, init);
        prop_assert!(rel(pass.objective, direct.objective) < 1e-10);
        prop_assert!(rel(pass.state.log_sigma2, *direct.log_sigma2.last().unwrap()) < 1e-10);
        for (s, d) in pass.scores.iter().zip(&direct.scores) {
            prop_assert!(rel(s.s_alpha, d[0]) < 1e-10, "{} vs {}", s.s_alpha, d[0]);
            prop_assert!(rel(s.s_beta, d[1]) < 1e-10, "{} vs {}", s.s_beta, d[1]);
        }
    }

    #[test]
    fn d_hat_is_symmetric_psd(t in theta_strategy(), seed in 0u64..1000) {
        let y = stationary_path(&t, 400, seed);
        let pass = run_filter(&y, &t, 0.5, true).unwrap();
        let d = compute_d_hat(&pass.scores).unwrap();
        let rows = d.as_rows();
        prop_assert_eq!(rows[0][1], rows[1][0]);
        let (lo, hi) = d.eigenvalues();
        prop_assert!(lo >= -1e-12 * hi.abs());
    }

    #[test]
    fn boundaries_are_monotone_and_tuning_inflates(
        eta_w in 0.0f64..0.99,
        eta_r in 1.01f64..3.0,
        c in 0.5f64..20.0,
        n in 50usize..2000,
        m in 100usize..5000,
    ) {
        let r = (n as f64).sqrt() as usize;
        for scheme in [SchemeKind::Weighted { eta: eta_w }, SchemeKind::Renyi { eta: eta_r, r }] {
            let plain = MonitorConfig { scheme, c, horizon_n: n, m, tuned: false };
            let tuned = MonitorConfig { tuned: true, ..plain };
            let mut prev = 0.0;
            for k in plain.scan_start()..=n {
                let g = plain.boundary_value(k).unwrap();
                prop_assert!(g >= prev);
                prop_assert!(tuned.boundary_value(k).unwrap() > g);
                prev = g;
            }
        }
        let de = MonitorConfig { scheme: SchemeKind::DarlingErdos { r: None }, c, horizon_n: n, m, tuned: false };
        let mut prev = 0.0;
        for k in 1..=n {
            let g = de.boundary_value(k).unwrap();
            prop_assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn stopping_time_is_first_crossing(c in 0.05f64..3.0, eta in 0.0f64..0.9, seed in 0u64..1000) {
        let t = GarchParams::new(0.1, 0.18, 0.8).unwrap();
        let y = stationary_path(&t, 700, seed);
        let fit = QmleFit::at_fixed(&y[..500], t, None).unwrap();
        let config = MonitorConfig { scheme: SchemeKind::Weighted { eta }, c, horizon_n: 200, m: 500, tuned: false };
        let (outcome, trace) = run_closed_ended_traced(&y[500..], &config, &fit).unwrap();
        let tau = outcome.stopping_time();
        prop_assert_eq!(trace.len(), tau.min(199));
        for p in &trace[..trace.len() - 1] {
            prop_assert!(p.detector < p.boundary);
        }
        if let Some(k) = outcome.detected_at() {
            let last = trace.last().unwrap();
            prop_assert_eq!(last.k, k);
            prop_assert!(last.detector >= last.boundary);
        }
    }

    #[test]
    fn monitor_continues_training_filter(seed in 0u64..1000) {
        let t = GarchParams::new(0.1, 0.18, 0.8).unwrap();
        let y = stationary_path(&t, 600, seed);
        let init = 0.4;
        let fit = QmleFit::at_fixed(&y[..400], t, Some(init)).unwrap();
        let whole = run_filter(&y, &t, init, true).unwrap();
        let config = MonitorConfig { scheme: SchemeKind::Weighted { eta: 0.0 }, c: 1e30, horizon_n: 200, m: 400, tuned: false };
        let mut mon = Monitor::new(config, t, &fit.d_hat, fit.final_filter, fit.last_y).unwrap();
        let mut cusum = [0.0, 0.0];
        for (k, &yk) in y[400..599].iter().enumerate() {
            mon.push(yk).unwrap();
            let s = whole.scores[400 + k];
            cusum[0] += s.s_alpha;
            cusum[1] += s.s_beta;
            let got = mon.state().cusum;
            prop_assert!(rel(got[0], cusum[0]) < 1e-10 && rel(got[1], cusum[1]) < 1e-10);
        }
        prop_assert!(mon.outcome().is_some());
        prop_assert_eq!(run_closed_ended(&y[400..], &config, &fit).unwrap(), mon.outcome().unwrap());
    }

    #[test]
    fn u_star_residual(t in 0.0f64..1e4, eta in 0.0f64..0.999) {
        let u = solve_u_star(t, eta).unwrap();
        prop_assert!(u > 0.0);
        prop_assert!((u - (u + t).powf(eta / 2.0)).abs() < 1e-10);
        prop_assert!(u >= 1.0 - 1e-12);
    }

    #[test]
    fn u_n_tends_to_u_star(t_star in 0.1f64..50.0, eta in 0.05f64..0.95) {
        // u_𝓃 solves u² = (u + k*/S_𝓃)^η with k* = ⌊t* S_𝓃⌋; the ratio tends to t*.
        let target = solve_u_star(t_star, eta).unwrap();
        let mut prev_err = f64::INFINITY;
        for scale in [1e2, 1e4, 1e6] {
            let k = (t_star * scale).floor();
            let u_n = solve_u_star(k / scale, eta).unwrap();
            let err = (u_n - target).abs();
            prop_assert!(err <= prev_err + 1e-12);
            prev_err = err;
        }
        prop_assert!(prev_err < 1e-5);
    }
}

#[test]
fn u_star_is_one_at_zero() {
    for eta in [0.0, 0.1, 0.5, 0.9] {
        assert!((solve_u_star(0.0, eta).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn covariance_inverse_is_two_sided() {
    let d = ScoreCovariance::<f64>::new(38.9, 46.6, 64.5);
    let inv = d.inverse().unwrap();
    let v = [0.3, -1.7];
    let w = [d.a11 * v[0] + d.a12 * v[1], d.a12 * v[0] + d.a22 * v[1]];
    assert!((inv.quad_form(w) - d.quad_form(v)).abs() < 1e-10 * d.quad_form(v));
}
