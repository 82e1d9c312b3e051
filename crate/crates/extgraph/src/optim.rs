//! Deterministic derivative-free minimization (Nelder-Mead with adaptive
//! coefficients and a fixed restart schedule).
//!
//! Objectives may return `f64::INFINITY` (or NaN, treated the same) to mark
//! infeasible points, which is how box constraints are enforced throughout
//! the crate. The returned minimum never exceeds the objective at the
//! starting point: the start is a simplex vertex and the best vertex is
//! never discarded.

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    /// Stop when the spread of simplex function values falls below this.
    pub ftol: f64,
    /// Stop when the max coordinate spread of the simplex falls below this.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            ftol: 1e-12,
            xtol: 1e-10,
            max_iter: 2000,
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Single Nelder-Mead run from `x0` with initial per-coordinate steps `steps`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &NmOptions,
) -> NmResult {
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step size per coordinate");
    assert!(n >= 1);

    // Adaptive coefficients (Gao & Han): behave like the classic choices at
    // n = 2 and stay robust as the dimension grows.
    let nf = n as f64;
    let refl = 1.0;
    let expa = 1.0 + 2.0 / nf;
    let contr = 0.75 - 1.0 / (2.0 * nf);
    let shrink = 1.0 - 1.0 / nf;

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let h = if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        v[i] += h;
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();

    let mut iters = 0usize;
    let mut converged = false;
    while iters < opts.max_iter {
        iters += 1;
        // Order vertices best..worst; stable sort keeps ties deterministic.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let ordered: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let ordered_f: Vec<f64> = idx.iter().map(|&i| fvals[i]).collect();
        simplex = ordered;
        fvals = ordered_f;

        let fspread = fvals[n] - fvals[0];
        let xspread = (0..n)
            .map(|j| {
                let col: Vec<f64> = simplex.iter().map(|v| v[j]).collect();
                let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mn = col.iter().cloned().fold(f64::INFINITY, f64::min);
                mx - mn
            })
            .fold(0.0, f64::max);
        if fspread.is_finite() && fspread <= opts.ftol && xspread <= opts.xtol {
            converged = true;
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for j in 0..n {
                centroid[j] += v[j] / nf;
            }
        }
        let worst = simplex[n].clone();
        let point = |coef: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + coef * (centroid[j] - worst[j]))
                .collect()
        };

        let xr = point(refl);
        let fr = sanitize(f(&xr));
        if fr < fvals[0] {
            let xe = point(expa);
            let fe = sanitize(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
        } else if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
        } else {
            let (xc, fc) = if fr < fvals[n] {
                let xc = point(contr);
                let fc = sanitize(f(&xc));
                (xc, fc)
            } else {
                let xc: Vec<f64> = (0..n)
                    .map(|j| centroid[j] - contr * (centroid[j] - worst[j]))
                    .collect();
                let fc = sanitize(f(&xc));
                (xc, fc)
            };
            if fc < fvals[n].min(fr) {
                simplex[n] = xc;
                fvals[n] = fc;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].clone();
                for k in 1..=n {
                    for j in 0..n {
                        simplex[k][j] = best[j] + shrink * (simplex[k][j] - best[j]);
                    }
                    fvals[k] = sanitize(f(&simplex[k]));
                }
            }
        }
    }

    let mut best = 0usize;
    for k in 1..=n {
        if fvals[k] < fvals[best] {
            best = k;
        }
    }
    NmResult {
        x: simplex[best].clone(),
        fmin: fvals[best],
        iters,
        converged,
    }
}

/// Nelder-Mead with a fixed restart schedule: each restart re-runs from the
/// incumbent best point with the initial steps halved. Fully deterministic.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    restarts: usize,
    opts: &NmOptions,
) -> NmResult {
    let mut best = nelder_mead(&mut f, x0, steps, opts);
    let mut scale = 1.0;
    let mut total_iters = best.iters;
    for _ in 0..restarts {
        scale *= 0.5;
        let h: Vec<f64> = steps.iter().map(|s| s * scale).collect();
        let run = nelder_mead(&mut f, &best.x, &h, opts);
        total_iters += run.iters;
        if run.fmin < best.fmin {
            best = run;
        }
    }
    best.iters = total_iters;
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rosenbrock(v: &[f64]) -> f64 {
        let (x, y) = (v[0], v[1]);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &[0.5, 0.5], 3, &NmOptions::default());
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn respects_infeasible_regions() {
        // Quadratic with minimum outside the box; infeasible points return inf.
        let f = |v: &[f64]| {
            if v[0] > 1.0 {
                f64::INFINITY
            } else {
                (v[0] - 3.0).powi(2)
            }
        };
        let r = minimize(f, &[0.0], &[0.2], 3, &NmOptions::default());
        assert!(r.x[0] <= 1.0);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn never_worse_than_start() {
        // Even with a single iteration budget the start value is preserved.
        let opts = NmOptions {
            max_iter: 1,
            ..NmOptions::default()
        };
        let start = [0.7, -0.3];
        let r = nelder_mead(rosenbrock, &start, &[0.1, 0.1], &opts);
        assert!(r.fmin <= rosenbrock(&start));
    }

    #[test]
    fn deterministic_across_runs() {
        let a = minimize(rosenbrock, &[0.0, 0.0], &[0.3, 0.3], 2, &NmOptions::default());
        let b = minimize(rosenbrock, &[0.0, 0.0], &[0.3, 0.3], 2, &NmOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.fmin, b.fmin);
    }
}
