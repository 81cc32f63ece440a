//! Projected BFGS on the unit box `[0, 1]^N`.
//!
//! Variables sitting on a bound with the gradient pushing outward are held
//! fixed for the iteration; the quasi-Newton step is taken in the remaining
//! coordinates and projected back onto the box during the Armijo search.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Tolerance on the infinity norm of the projected gradient step.
    pub pg_tol: f64,
    /// Stop when the relative objective decrease stays below this for three
    /// consecutive iterations.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 400, pg_tol: 1e-8, f_tol: 1e-13 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoxMinimum<const N: usize> {
    pub x: [f64; N],
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project<const N: usize>(x: [f64; N]) -> [f64; N] {
    x.map(|v| v.clamp(0.0, 1.0))
}

fn projected_gradient_norm<const N: usize>(x: &[f64; N], g: &[f64; N]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..N {
        m = m.max(((x[i] - g[i]).clamp(0.0, 1.0) - x[i]).abs());
    }
    m
}

fn identity<const N: usize>() -> [[f64; N]; N] {
    let mut h = [[0.0; N]; N];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    h
}

/// Minimizes `f` over `[0,1]^N` from `x0`. `f` returns the value and the
/// gradient, or `None` where it cannot be evaluated; such points are
/// treated as infinitely bad by the line search.
pub fn minimize_box<const N: usize, F>(mut f: F, x0: [f64; N], opts: &BfgsOptions) -> Option<BoxMinimum<N>>
where
    F: FnMut(&[f64; N]) -> Option<(f64, [f64; N])>,
{
    const BOUND_EPS: f64 = 1e-12;
    let mut x = project(x0);
    let (mut fx, mut g) = f(&x)?;
    let mut h = identity::<N>();
    let mut first_step = true;
    let mut small_steps = 0;

    for iter in 0..opts.max_iter {
        if projected_gradient_norm(&x, &g) < opts.pg_tol {
            return Some(BoxMinimum { x, f: fx, iterations: iter, converged: true });
        }
        let free: [bool; N] = std::array::from_fn(|i| {
            !((x[i] <= BOUND_EPS && g[i] > 0.0) || (x[i] >= 1.0 - BOUND_EPS && g[i] < 0.0))
        });

        let mut d = [0.0; N];
        for i in 0..N {
            if free[i] {
                d[i] = -(0..N).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>();
            }
        }
        let mut slope: f64 = (0..N).map(|i| d[i] * g[i]).sum();
        if !(slope < 0.0) {
            h = identity();
            for i in 0..N {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = (0..N).map(|i| d[i] * g[i]).sum();
            if !(slope < 0.0) {
                return Some(BoxMinimum { x, f: fx, iterations: iter, converged: true });
            }
        }
        if first_step {
            // Keep the first trial step inside a box of width 0.1.
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 0.1 {
                let s = 0.1 / dmax;
                d = d.map(|v| v * s);
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xt = project(std::array::from_fn(|i| x[i] + t * d[i]));
            let decrease: f64 = (0..N).map(|i| g[i] * (xt[i] - x[i])).sum();
            if let Some((ft, gt)) = f(&xt) {
                if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            let converged = projected_gradient_norm(&x, &g) < opts.pg_tol.sqrt();
            return Some(BoxMinimum { x, f: fx, iterations: iter, converged });
        };

        let s: [f64; N] = std::array::from_fn(|i| xn[i] - x[i]);
        let y: [f64; N] = std::array::from_fn(|i| gn[i] - g[i]);
        let sy: f64 = (0..N).map(|i| s[i] * y[i]).sum();
        if sy > 1e-12 * (0..N).map(|i| s[i] * s[i]).sum::<f64>().sqrt().max(1e-300) {
            if first_step {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h = identity();
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            let hy: [f64; N] = std::array::from_fn(|i| (0..N).map(|j| h[i][j] * y[j]).sum());
            let yhy: f64 = (0..N).map(|i| y[i] * hy[i]).sum();
            let rho = 1.0 / sy;
            for i in 0..N {
                for j in 0..N {
                    h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            first_step = false;
        }

        let rel = (fx - fnew).abs() / fx.abs().max(1.0);
        small_steps = if rel < opts.f_tol { small_steps + 1 } else { 0 };
        x = xn;
        fx = fnew;
        g = gn;
        if small_steps >= 3 {
            let converged = projected_gradient_norm(&x, &g) < opts.pg_tol.sqrt();
            return Some(BoxMinimum { x, f: fx, iterations: iter + 1, converged });
        }
    }
    let converged = projected_gradient_norm(&x, &g) < opts.pg_tol;
    Some(BoxMinimum { x, f: fx, iterations: opts.max_iter, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_quadratic() {
        let c = [0.3, 0.7];
        let r = minimize_box(
            |x: &[f64; 2]| {
                let d0 = x[0] - c[0];
                let d1 = x[1] - c[1];
                Some((d0 * d0 + 10.0 * d1 * d1 + d0 * d1, [2.0 * d0 + d1, 20.0 * d1 + d0]))
            },
            [0.9, 0.1],
            &BfgsOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-6 && (r.x[1] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn active_bounds() {
        // Minimum at (1.5, -0.2) outside the box; solution is the corner (1, 0).
        let r = minimize_box(
            |x: &[f64; 2]| {
                let d0 = x[0] - 1.5;
                let d1 = x[1] + 0.2;
                Some((d0 * d0 + d1 * d1, [2.0 * d0, 2.0 * d1]))
            },
            [0.5, 0.5],
            &BfgsOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.x, [1.0, 0.0]);
    }

    #[test]
    fn rosenbrock_in_box() {
        // Scaled into the box; minimum at (0.5, 0.5).
        let r = minimize_box(
            |x: &[f64; 2]| {
                let a = 4.0 * x[0] - 1.0;
                let b = 4.0 * x[1] - 1.0;
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let da = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                let db = 200.0 * (b - a * a);
                Some((f, [4.0 * da, 4.0 * db]))
            },
            [0.1, 0.9],
            &BfgsOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-4 && (r.x[1] - 0.5).abs() < 1e-4, "{:?}", r.x);
    }
}
