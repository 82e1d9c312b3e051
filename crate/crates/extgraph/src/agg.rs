//! Asymmetric generalised Gaussian (AGG) distribution and its multivariate
//! extension through a Gaussian copula (MVAGG).
//!
//! The AGG density with location `nu`, scales `kappa1`/`kappa2` on either
//! side, and shape `delta` is
//!
//! ```text
//! f(z) = delta / ((kappa1 + kappa2) Gamma(1/delta)) *
//!        exp{ -((nu - z)/kappa1)^delta }   for z <  nu
//!        exp{ -((z - nu)/kappa2)^delta }   for z >= nu
//! ```
//!
//! `kappa1 = kappa2` recovers the generalised Gaussian; `(nu, k, k, 1)` is an
//! asymmetric Laplace and `(nu, s*sqrt(2), s*sqrt(2), 2)` is N(nu, s^2).
//! The MVAGG couples AGG margins through a zero-mean Gaussian copula whose
//! correlation matrix is given by its inverse, the precision matrix, so a
//! sparse precision encodes conditional independence between residuals.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, NmOptions};
use crate::special::{
    gamma_p, gamma_q, inv_gamma_p, inv_gamma_q, std_normal_cdf, std_normal_logpdf,
    std_normal_quantile, LN_SQRT_2PI,
};
use crate::util::mean;

/// Univariate AGG parameters (location, left scale, right scale, shape).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggParams {
    pub nu: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta: f64,
}

/// Shape search box for maximum likelihood: outside it the likelihood is
/// flat in `delta` and `Gamma(1/delta)` overflows.
pub const DELTA_MIN: f64 = 0.3;
pub const DELTA_MAX: f64 = 10.0;

/// Copula transforms clamp `|Phi^-1(F(z))|` here; beyond it the normal
/// quantile saturates in double precision.
pub const W_CLAMP: f64 = 8.0;

impl AggParams {
    pub fn new(nu: f64, kappa1: f64, kappa2: f64, delta: f64) -> Result<Self> {
        let p = AggParams {
            nu,
            kappa1,
            kappa2,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.nu.is_finite() {
            return Err(Error::DomainError {
                value: self.nu,
                domain: "nu finite",
            });
        }
        for (v, name) in [
            (self.kappa1, "kappa1 > 0"),
            (self.kappa2, "kappa2 > 0"),
            (self.delta, "delta > 0"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::DomainError {
                    value: v,
                    domain: name,
                });
            }
        }
        Ok(())
    }

    /// Probability mass to the left of the mode, `kappa1/(kappa1+kappa2)`.
    pub fn left_mass(&self) -> f64 {
        self.kappa1 / (self.kappa1 + self.kappa2)
    }
}

/// Log of the AGG normalizing constant `delta / ((k1 + k2) Gamma(1/delta))`.
fn ln_norm_const(p: &AggParams) -> f64 {
    p.delta.ln()
        - (p.kappa1 + p.kappa2).ln()
        - statrs::function::gamma::ln_gamma(1.0 / p.delta)
}

/// AGG log-density.
pub fn agg_logpdf(z: f64, p: &AggParams) -> f64 {
    let core = if z < p.nu {
        ((p.nu - z) / p.kappa1).powf(p.delta)
    } else {
        ((z - p.nu) / p.kappa2).powf(p.delta)
    };
    ln_norm_const(p) - core
}

/// AGG density.
pub fn agg_pdf(z: f64, p: &AggParams) -> f64 {
    agg_logpdf(z, p).exp()
}

/// AGG distribution function, in terms of the regularized incomplete gamma:
/// left branch uses the upper tail Q, right branch the lower tail P.
pub fn agg_cdf(z: f64, p: &AggParams) -> f64 {
    let a = 1.0 / p.delta;
    let c = p.left_mass();
    if z < p.nu {
        let t = ((p.nu - z) / p.kappa1).powf(p.delta);
        c * gamma_q(a, t)
    } else {
        let s = ((z - p.nu) / p.kappa2).powf(p.delta);
        c + (1.0 - c) * gamma_p(a, s)
    }
}

/// AGG quantile function (analytic inversion through the inverse regularized
/// incomplete gamma).
pub fn agg_quantile(u: f64, p: &AggParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::DomainError {
            value: u,
            domain: "(0, 1)",
        });
    }
    let a = 1.0 / p.delta;
    let c = p.left_mass();
    if u < c {
        let t = inv_gamma_q(a, u / c);
        Ok(p.nu - p.kappa1 * t.powf(a))
    } else {
        let s = inv_gamma_p(a, (u - c) / (1.0 - c));
        Ok(p.nu + p.kappa2 * s.powf(a))
    }
}

/// i.i.d. AGG draws by quantile transform of uniforms; deterministic given
/// the seed.
pub fn agg_sample(p: &AggParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(rand::distributions::Open01);
            agg_quantile(u, p).expect("u in (0,1)")
        })
        .collect()
}

/// Sum of AGG log-densities; -inf for invalid parameters keeps the
/// optimizer inside the box.
fn agg_loglik(z: &[f64], p: &AggParams) -> f64 {
    if p.validate().is_err() || p.delta < DELTA_MIN || p.delta > DELTA_MAX {
        return f64::NEG_INFINITY;
    }
    z.iter().map(|&zi| agg_logpdf(zi, p)).sum()
}

fn unpack_agg(x: &[f64]) -> AggParams {
    AggParams {
        nu: x[0],
        kappa1: x[1].exp(),
        kappa2: x[2].exp(),
        delta: x[3].exp(),
    }
}

/// Maximum likelihood fit of all four AGG parameters.
///
/// Nelder-Mead on `(nu, ln kappa1, ln kappa2, ln delta)` from a moment-based
/// start (median, mean absolute deviation for both scales, delta = 1.5); the
/// returned likelihood never falls below the initializer's.
pub fn agg_fit(z: &[f64]) -> Result<AggParams> {
    if z.len() < 50 {
        return Err(Error::TooFewObservations {
            got: z.len(),
            need: 50,
        });
    }
    let med = crate::util::quantile(z, 0.5);
    let mad = mean(&z.iter().map(|&v| (v - med).abs()).collect::<Vec<_>>());
    if !(mad > 0.0) {
        return Err(Error::DegenerateInput(
            "zero spread: all observations equal".into(),
        ));
    }
    let x0 = [med, mad.ln(), mad.ln(), 1.5f64.ln()];
    let steps = [0.25 * mad, 0.4, 0.4, 0.3];
    let obj = |x: &[f64]| -agg_loglik(z, &unpack_agg(x));
    let opts = NmOptions {
        ftol: 1e-10,
        xtol: 1e-8,
        max_iter: 4000,
    };
    let mut best = minimize(obj, &x0, &steps, 3, &opts);
    if !best.converged {
        // One more round of halved-step restarts before giving up.
        best = minimize(obj, &best.x, &[0.05 * mad, 0.1, 0.1, 0.1], 3, &opts);
    }
    if !best.fmin.is_finite() {
        return Err(Error::NonConvergence(
            "AGG likelihood unbounded or invalid at optimum".into(),
        ));
    }
    if !best.converged {
        return Err(Error::NonConvergence(format!(
            "AGG fit not converged after restart schedule ({} iterations)",
            best.iters
        )));
    }
    Ok(unpack_agg(&best.x))
}

/// MVAGG parameters: AGG margins plus the copula precision matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MvaggParams {
    pub margins: Vec<AggParams>,
    #[serde(with = "crate::util::mat_serde")]
    pub precision: DMatrix<f64>,
}

impl MvaggParams {
    pub fn new(margins: Vec<AggParams>, precision: DMatrix<f64>) -> Result<Self> {
        let p = MvaggParams { margins, precision };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.margins.len()
    }

    /// Checks margins, symmetry (1e-10), positive definiteness, and that the
    /// implied covariance is a correlation matrix (unit diagonal to 1e-6).
    pub fn validate(&self) -> Result<()> {
        for m in &self.margins {
            m.validate()?;
        }
        let d = self.margins.len();
        if self.precision.nrows() != d || self.precision.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} margins but {}x{} precision",
                d,
                self.precision.nrows(),
                self.precision.ncols()
            )));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.precision[(i, j)] - self.precision[(j, i)]).abs() > 1e-10 {
                    return Err(Error::DegenerateInput(format!(
                        "precision not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = nalgebra::Cholesky::new(self.precision.clone())
            .ok_or(Error::NotPositiveDefinite)?;
        let sigma = chol.inverse();
        for i in 0..d {
            if (sigma[(i, i)] - 1.0).abs() > 1e-6 {
                return Err(Error::DegenerateInput(format!(
                    "implied covariance diagonal at {i} is {}, not 1",
                    sigma[(i, i)]
                )));
            }
        }
        Ok(())
    }
}

/// One row's copula transform: `w = Phi^-1(F_AGG(z))` clamped to
/// [-W_CLAMP, W_CLAMP]; the flag reports whether clamping occurred.
pub(crate) fn copula_w(z: f64, p: &AggParams) -> (f64, bool) {
    let u = agg_cdf(z, p);
    let lo = std_normal_cdf(-W_CLAMP);
    let hi = 1.0 - lo;
    let clamped = !(lo..=hi).contains(&u);
    let w = std_normal_quantile(u.clamp(lo, hi));
    (w, clamped)
}

/// MVAGG log-densities for every row of `z` (rows are observations), with a
/// flag marking rows where the copula tail clamp fired.
///
/// Factorizes the precision once, so this is the form to use inside
/// likelihood loops.
pub fn mvagg_logdensity_many(z: &DMatrix<f64>, p: &MvaggParams) -> Result<Vec<(f64, bool)>> {
    let d = p.dim();
    if z.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} data columns vs {} margins",
            z.ncols(),
            d
        )));
    }
    let chol = nalgebra::Cholesky::new(p.precision.clone()).ok_or(Error::NotPositiveDefinite)?;
    // ln det(Gamma) from the Cholesky factor diagonal.
    let ln_det_prec: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    let mvn_const = 0.5 * ln_det_prec - d as f64 * LN_SQRT_2PI;

    let out = crate::parallel::map_indexed(z.nrows(), |r| {
        let mut w = nalgebra::DVector::zeros(d);
        let mut any_clamped = false;
        let mut marg_sum = 0.0;
        for j in 0..d {
            let (wj, cl) = copula_w(z[(r, j)], &p.margins[j]);
            any_clamped |= cl;
            w[j] = wj;
            marg_sum += agg_logpdf(z[(r, j)], &p.margins[j]) - std_normal_logpdf(wj);
        }
        let quad = (p.precision.clone() * &w).dot(&w);
        (mvn_const - 0.5 * quad + marg_sum, any_clamped)
    });
    Ok(out)
}

/// MVAGG log-density of a single residual vector.
pub fn mvagg_logdensity(z: &[f64], p: &MvaggParams) -> Result<f64> {
    let m = DMatrix::from_row_slice(1, z.len(), z);
    Ok(mvagg_logdensity_many(&m, p)?[0].0)
}

/// Lower Cholesky factor of the copula correlation implied by a precision
/// matrix. Retries once with a 1e-8 diagonal jitter when rounding in the
/// inverse pushes it marginally off positive definite.
pub fn copula_cholesky(p: &MvaggParams) -> Result<DMatrix<f64>> {
    let chol_prec =
        nalgebra::Cholesky::new(p.precision.clone()).ok_or(Error::NotPositiveDefinite)?;
    let sigma = chol_prec.inverse();
    if let Some(c) = nalgebra::Cholesky::new(sigma.clone()) {
        return Ok(c.l());
    }
    let d = p.dim();
    let jittered = sigma + DMatrix::identity(d, d) * 1e-8;
    nalgebra::Cholesky::new(jittered)
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

/// One MVAGG draw through a precomputed copula Cholesky factor, using the
/// caller's RNG stream.
pub fn mvagg_sample_row<R: Rng>(
    margins: &[AggParams],
    l: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = margins.len();
    let normal = rand_distr::StandardNormal;
    let e = nalgebra::DVector::from_fn(d, |_, _| rng.sample::<f64, _>(normal));
    let w = l * e;
    (0..d)
        .map(|j| {
            let u = std_normal_cdf(w[j]).clamp(1e-16, 1.0 - 1e-16);
            agg_quantile(u, &margins[j])
        })
        .collect()
}

/// Draws from the MVAGG: Gaussian copula samples pushed through the AGG
/// quantile margins. Returns an n x d matrix; deterministic given the seed.
pub fn mvagg_sample(p: &MvaggParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = p.dim();
    let l = copula_cholesky(p)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, d);
    for r in 0..n {
        let row = mvagg_sample_row(&p.margins, &l, &mut rng)?;
        for j in 0..d {
            out[(r, j)] = row[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gauss() -> AggParams {
        AggParams::new(0.0, std::f64::consts::SQRT_2, std::f64::consts::SQRT_2, 2.0).unwrap()
    }

    fn laplace() -> AggParams {
        AggParams::new(0.0, 1.0, 1.0, 1.0).unwrap()
    }

    /// Adaptive Simpson quadrature (test oracle).
    fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
        fn s<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = s(f, a, m);
            let right = s(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, left, tol / 2.0, depth - 1) + rec(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        let whole = s(&f, a, b);
        rec(&f, a, b, whole, tol, 50)
    }

    #[test]
    fn pdf_laplace_and_gaussian_pins() {
        assert_abs_diff_eq!(agg_pdf(0.0, &laplace()), 0.5, epsilon = 1e-12);
        // Standard normal density at 0 = 1/sqrt(2*pi).
        assert_abs_diff_eq!(
            agg_pdf(0.0, &gauss()),
            (2.0 * std::f64::consts::PI).sqrt().recip(),
            epsilon = 1e-9
        );
        // Full Gaussian curve, not just the center.
        for &z in &[-2.5f64, -1.0, -0.2, 0.4, 1.7, 3.0] {
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert_abs_diff_eq!(agg_pdf(z, &gauss()), phi, epsilon = 1e-12);
        }
    }

    #[test]
    fn pdf_integrates_to_one_random_params() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = AggParams {
                nu: rng.gen_range(-3.0..3.0),
                kappa1: rng.gen_range(0.3..3.0),
                kappa2: rng.gen_range(0.3..3.0),
                delta: rng.gen_range(0.5..4.0),
            };
            let lo = agg_quantile(1e-12, &p).unwrap();
            let hi = agg_quantile(1.0 - 1e-12, &p).unwrap();
            // Split at the mode: the density kinks there.
            let mass = simpson(|z| agg_pdf(z, &p), lo, p.nu, 1e-11)
                + simpson(|z| agg_pdf(z, &p), p.nu, hi, 1e-11);
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn pdf_continuous_at_mode() {
        let p = AggParams::new(1.3, 0.7, 2.1, 1.7).unwrap();
        let eps = 1e-9;
        assert_abs_diff_eq!(agg_pdf(p.nu - eps, &p), agg_pdf(p.nu + eps, &p), epsilon = 1e-9);
    }

    #[test]
    fn cdf_pins() {
        let p = AggParams::new(0.4, 0.8, 1.9, 1.2).unwrap();
        assert_abs_diff_eq!(agg_cdf(p.nu, &p), p.left_mass(), epsilon = 1e-14);
        // Gaussian special case at z = 1: Phi(1).
        assert_abs_diff_eq!(agg_cdf(1.0, &gauss()), 0.8413447460685429, epsilon = 1e-9);
    }

    #[test]
    fn cdf_matches_integrated_pdf() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = AggParams {
                nu: rng.gen_range(-2.0..2.0),
                kappa1: rng.gen_range(0.4..2.5),
                kappa2: rng.gen_range(0.4..2.5),
                delta: rng.gen_range(0.5..4.0),
            };
            let z = rng.gen_range(-4.0..4.0);
            let lo = agg_quantile(1e-13, &p).unwrap().min(z - 1.0);
            let integral = if z < p.nu {
                simpson(|t| agg_pdf(t, &p), lo, z, 1e-11)
            } else {
                simpson(|t| agg_pdf(t, &p), lo, p.nu, 1e-11)
                    + simpson(|t| agg_pdf(t, &p), p.nu, z, 1e-11)
            };
            assert_abs_diff_eq!(agg_cdf(z, &p), integral, epsilon = 1e-8);
        }
    }

    #[test]
    fn cdf_monotone_and_matches_pdf_derivative() {
        let p = AggParams::new(-0.7, 1.4, 0.6, 2.8).unwrap();
        let grid: Vec<f64> = (0..400).map(|i| -6.0 + i as f64 * 0.03).collect();
        let mut prev = 0.0;
        for &z in &grid {
            let c = agg_cdf(z, &p);
            assert!(c >= prev, "cdf decreased at {z}");
            prev = c;
            // h balances truncation against cancellation in the CDF
            // difference; skip the kink and the far tails where the
            // finite-difference oracle itself loses precision.
            if (z - p.nu).abs() > 0.05 && c > 1e-6 && c < 1.0 - 1e-6 {
                let h = 1e-4;
                let fd = (agg_cdf(z + h, &p) - agg_cdf(z - h, &p)) / (2.0 * h);
                let f = agg_pdf(z, &p);
                assert!((fd - f).abs() / f < 1e-5, "derivative mismatch at {z}");
            }
        }
    }

    #[test]
    fn quantile_pins_and_round_trip() {
        let p = AggParams::new(0.9, 1.1, 0.5, 3.0).unwrap();
        assert_abs_diff_eq!(agg_quantile(p.left_mass(), &p).unwrap(), p.nu, epsilon = 1e-12);
        assert_abs_diff_eq!(
            agg_quantile(0.9, &laplace()).unwrap(),
            -(0.2f64.ln()),
            epsilon = 1e-12
        );
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            let z = agg_quantile(u, &p).unwrap();
            assert!((agg_cdf(z, &p) - u).abs() < 1e-10, "round trip at {u}");
        }
        assert!(agg_quantile(0.0, &p).is_err());
        assert!(agg_quantile(1.0, &p).is_err());
    }

    #[test]
    fn quantile_round_trip_extreme_tails() {
        // The acceptance-level grid reaches 1e-8 from both ends.
        let cases = [
            AggParams::new(0.0, 1.0, 1.0, 1.0).unwrap(),
            AggParams::new(-2.0, 0.5, 2.8, 0.6).unwrap(),
            AggParams::new(3.0, 2.0, 0.4, 2.5).unwrap(),
        ];
        for p in &cases {
            let mut u = 1e-8;
            while u < 1.0 {
                let z = agg_quantile(u, p).unwrap();
                assert!(
                    (agg_cdf(z, p) - u).abs() < 1e-10,
                    "round trip at u={u} for {p:?}"
                );
                u *= 10.0;
            }
            for &u in &[1.0 - 1e-4, 1.0 - 1e-6, 1.0 - 1e-8] {
                let z = agg_quantile(u, p).unwrap();
                assert!((agg_cdf(z, p) - u).abs() < 1e-10, "upper round trip at {u}");
            }
        }
    }

    #[test]
    fn symmetric_scales_give_symmetric_density() {
        let p = AggParams::new(0.8, 1.3, 1.3, 2.2).unwrap();
        for &t in &[0.1, 0.5, 1.0, 2.0, 4.0] {
            assert_abs_diff_eq!(
                agg_pdf(p.nu + t, &p),
                agg_pdf(p.nu - t, &p),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let p = laplace();
        let x = agg_sample(&p, 1_000_000, 99);
        assert!((mean(&x)).abs() < 0.005, "mean {}", mean(&x));
        let below = x.iter().filter(|&&v| v < p.nu).count() as f64 / x.len() as f64;
        assert!((below - p.left_mass()).abs() < 0.002, "below fraction {below}");
        let again = agg_sample(&p, 1_000_000, 99);
        assert_eq!(x, again);
    }

    #[test]
    fn sample_passes_ks_against_cdf() {
        let p = AggParams::new(1.0, 0.6, 1.7, 1.4).unwrap();
        let x = agg_sample(&p, 20_000, 5);
        let d = crate::util::ks_statistic(&x, |z| agg_cdf(z, &p));
        assert!(d < crate::util::ks_crit_1pct(x.len()), "ks = {d}");
    }

    #[test]
    fn fit_recovers_generating_parameters() {
        // Median parameter error over replicates stays within the tolerance.
        let truth = AggParams::new(0.0, 1.0, 2.0, 1.5).unwrap();
        let mut errs: Vec<[f64; 4]> = Vec::new();
        for rep in 0..50 {
            let z = agg_sample(&truth, 5000, 1000 + rep);
            let f = agg_fit(&z).unwrap();
            errs.push([
                (f.nu - truth.nu).abs(),
                (f.kappa1 - truth.kappa1).abs(),
                (f.kappa2 - truth.kappa2).abs(),
                (f.delta - truth.delta).abs(),
            ]);
        }
        for k in 0..4 {
            let mut e: Vec<f64> = errs.iter().map(|r| r[k]).collect();
            e.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = e[e.len() / 2];
            assert!(med < 0.15, "param {k} median error {med}");
        }
    }

    #[test]
    fn fit_gaussian_data_recovers_gaussian_shape() {
        // N(3, 1) corresponds to (3, sqrt2, sqrt2, 2).
        let truth = AggParams::new(3.0, std::f64::consts::SQRT_2, std::f64::consts::SQRT_2, 2.0)
            .unwrap();
        let z = agg_sample(&truth, 5000, 77);
        let f = agg_fit(&z).unwrap();
        assert!((f.nu - 3.0).abs() < 0.1, "nu {}", f.nu);
        assert!((f.delta - 2.0).abs() < 0.3, "delta {}", f.delta);
        assert!(
            (f.kappa1 - f.kappa2).abs() / f.kappa1.max(f.kappa2) < 0.15,
            "kappas {} {}",
            f.kappa1,
            f.kappa2
        );
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let z = vec![2.0; 200];
        assert!(matches!(agg_fit(&z), Err(Error::DegenerateInput(_))));
        let short = vec![1.0; 10];
        assert!(matches!(
            agg_fit(&short),
            Err(Error::TooFewObservations { got: 10, need: 50 })
        ));
    }

    #[test]
    fn fit_beats_moment_initializer() {
        let truth = AggParams::new(-1.0, 0.8, 1.2, 0.9).unwrap();
        let z = agg_sample(&truth, 2000, 3);
        let f = agg_fit(&z).unwrap();
        let med = crate::util::quantile(&z, 0.5);
        let mad = mean(&z.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
        let init = AggParams::new(med, mad, mad, 1.5).unwrap();
        assert!(agg_loglik(&z, &f) >= agg_loglik(&z, &init));
    }

    fn demo_mvagg() -> MvaggParams {
        // 3-D with an exact conditional independence (zero) in the precision.
        let prec: DMatrix<f64> = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.5625, -0.9375, 0.0, //
                -0.9375, 2.125, -0.9375, //
                0.0, -0.9375, 1.5625,
            ],
        );
        // Rescale so the implied covariance is a correlation matrix.
        let sigma = prec.clone().try_inverse().unwrap();
        let mut prec_corr = prec;
        for i in 0..3 {
            for j in 0..3 {
                prec_corr[(i, j)] *= (sigma[(i, i)] * sigma[(j, j)]).sqrt();
            }
        }
        MvaggParams::new(
            vec![
                AggParams::new(0.3, 1.0, 1.5, 1.2).unwrap(),
                AggParams::new(-0.5, 0.7, 0.7, 2.0).unwrap(),
                AggParams::new(1.0, 2.0, 0.9, 0.8).unwrap(),
            ],
            prec_corr,
        )
        .unwrap()
    }

    #[test]
    fn mvagg_one_dimensional_reduces_to_agg() {
        let p = MvaggParams::new(
            vec![AggParams::new(0.5, 1.2, 0.9, 1.8).unwrap()],
            DMatrix::identity(1, 1),
        )
        .unwrap();
        for &z in &[-2.0, 0.0, 0.5, 3.0] {
            assert_abs_diff_eq!(
                mvagg_logdensity(&[z], &p).unwrap(),
                agg_logpdf(z, &p.margins[0]),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mvagg_identity_precision_is_independence() {
        let margins = vec![
            AggParams::new(0.0, 1.0, 2.0, 1.5).unwrap(),
            AggParams::new(1.0, 0.5, 0.5, 2.5).unwrap(),
            AggParams::new(-1.0, 1.5, 1.0, 0.9).unwrap(),
        ];
        let p = MvaggParams::new(margins.clone(), DMatrix::identity(3, 3)).unwrap();
        let z = [0.4, 1.2, -2.0];
        let expect: f64 = z
            .iter()
            .zip(&margins)
            .map(|(&zi, m)| agg_logpdf(zi, m))
            .sum();
        assert_abs_diff_eq!(mvagg_logdensity(&z, &p).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn mvagg_matches_change_of_variables_oracle() {
        // Brute-force density: phi_Sigma(w(z)) * prod_j dw_j/dz_j with the
        // Jacobian entries from central finite differences.
        let p = demo_mvagg();
        let sigma = p.precision.clone().try_inverse().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..25 {
            // Draw on the probability scale and stay in the body: deep in a
            // tail the finite-difference Jacobian cancels catastrophically
            // (u is pinned against 1 in double precision) while the analytic
            // path stays accurate.
            let z: Vec<f64> = p
                .margins
                .iter()
                .map(|m| agg_quantile(rng.gen_range(0.02..0.98), m).unwrap())
                .collect();
            let w: Vec<f64> = z
                .iter()
                .zip(&p.margins)
                .map(|(&zi, m)| std_normal_quantile(agg_cdf(zi, m)))
                .collect();
            let h = 1e-6;
            let mut ln_jac = 0.0;
            for j in 0..3 {
                let wp = std_normal_quantile(agg_cdf(z[j] + h, &p.margins[j]));
                let wm = std_normal_quantile(agg_cdf(z[j] - h, &p.margins[j]));
                ln_jac += ((wp - wm) / (2.0 * h)).ln();
            }
            let wv = nalgebra::DVector::from_column_slice(&w);
            let quad = (sigma.clone().try_inverse().unwrap() * &wv).dot(&wv);
            let ln_det_sigma = sigma.determinant().ln();
            let mvn = -0.5 * quad - 0.5 * ln_det_sigma - 3.0 * LN_SQRT_2PI;
            let oracle = mvn + ln_jac;
            let got = mvagg_logdensity(&z, &p).unwrap();
            assert!((got - oracle).abs() < 1e-6, "z={z:?} got={got} oracle={oracle}");
        }
    }

    #[test]
    fn mvagg_2d_density_integrates_to_one() {
        let prec = DMatrix::from_row_slice(
            2,
            2,
            &[1.0 / (1.0 - 0.36), 0.6 / (1.0 - 0.36), 0.6 / (1.0 - 0.36), 1.0 / (1.0 - 0.36)],
        );
        let p = MvaggParams::new(
            vec![
                AggParams::new(0.0, 1.0, 1.5, 1.3).unwrap(),
                AggParams::new(0.5, 0.8, 0.8, 2.0).unwrap(),
            ],
            prec,
        )
        .unwrap();
        // Tensor Simpson over a quantile box holding all but ~4e-9 mass,
        // split at each margin's mode so the density kinks sit on panel
        // boundaries (Simpson assumes smoothness inside a panel).
        let n = 120;
        let weight = |i: usize| -> f64 {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let simpson2 = |x0: f64, x1: f64, y0: f64, y1: f64| -> f64 {
            let hx = (x1 - x0) / n as f64;
            let hy = (y1 - y0) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let zi = x0 + i as f64 * hx;
                for j in 0..=n {
                    let zj = y0 + j as f64 * hy;
                    let ld = mvagg_logdensity(&[zi, zj], &p).unwrap();
                    acc += weight(i) * weight(j) * ld.exp();
                }
            }
            acc * hx * hy / 9.0
        };
        let mut edges = Vec::new();
        for m in &p.margins {
            let lo = agg_quantile(1e-9, m).unwrap();
            let hi = agg_quantile(1.0 - 1e-9, m).unwrap();
            edges.push([lo, m.nu, hi]);
        }
        let mut total = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                total += simpson2(
                    edges[0][a],
                    edges[0][a + 1],
                    edges[1][b],
                    edges[1][b + 1],
                );
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn mvagg_validation_catches_bad_inputs() {
        let margins = vec![
            AggParams::new(0.0, 1.0, 1.0, 1.0).unwrap(),
            AggParams::new(0.0, 1.0, 1.0, 1.0).unwrap(),
        ];
        // Asymmetric precision.
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.2, 1.0]);
        assert!(MvaggParams::new(margins.clone(), bad).is_err());
        // Not positive definite.
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MvaggParams::new(margins.clone(), bad).is_err());
        // PD but implied covariance not a correlation matrix.
        let bad = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        assert!(MvaggParams::new(margins, bad).is_err());
    }

    #[test]
    fn mvagg_clamp_flags_extreme_rows() {
        let p = demo_mvagg();
        let z = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 60.0, 0.0, 0.0]);
        let out = mvagg_logdensity_many(&z, &p).unwrap();
        assert!(!out[0].1);
        assert!(out[1].1);
        assert!(out[1].0.is_finite());
    }

    #[test]
    fn mvagg_sample_matches_margins_and_correlation() {
        let p = demo_mvagg();
        let x = mvagg_sample(&p, 40_000, 13).unwrap();
        // Margins via KS.
        for j in 0..3 {
            let col: Vec<f64> = (0..x.nrows()).map(|r| x[(r, j)]).collect();
            let d = crate::util::ks_statistic(&col, |z| agg_cdf(z, &p.margins[j]));
            assert!(d < crate::util::ks_crit_1pct(col.len()), "margin {j} ks {d}");
        }
        // Copula correlation: transform back to w scale and compare.
        let sigma = p.precision.clone().try_inverse().unwrap();
        let mut w01 = 0.0;
        let mut w02 = 0.0;
        for r in 0..x.nrows() {
            let w: Vec<f64> = (0..3)
                .map(|j| std_normal_quantile(agg_cdf(x[(r, j)], &p.margins[j])))
                .collect();
            w01 += w[0] * w[1];
            w02 += w[0] * w[2];
        }
        w01 /= x.nrows() as f64;
        w02 /= x.nrows() as f64;
        assert!((w01 - sigma[(0, 1)]).abs() < 0.02, "w01 {w01} vs {}", sigma[(0, 1)]);
        assert!((w02 - sigma[(0, 2)]).abs() < 0.02, "w02 {w02} vs {}", sigma[(0, 2)]);
    }

    #[test]
    fn params_serialize_round_trip() {
        let p = demo_mvagg();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"dim\":[3,3]"));
        let back: MvaggParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back.margins, p.margins);
        assert_eq!(back.precision, p.precision);
    }
}
