//! Conditional-extremes dependence fitting on standard Laplace margins.
//!
//! Given exceedances of a conditioning component, `Y_j = alpha_j y_i +
//! y_i^beta_j Z_j` describes the remaining components; the residual vector
//! `Z` carries AGG margins coupled by a Gaussian copula with a (possibly
//! sparse) precision matrix. Estimation is stepwise: a working fit with
//! independent Gaussian residuals pins down `(alpha, beta)`, after which the
//! residual distribution is estimated either jointly (one-step), by
//! alternating margin/precision updates on fixed residuals (two-step), or in
//! a single pass (three-step).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agg::{
    agg_fit, agg_logpdf, copula_w, mvagg_logdensity_many, AggParams, MvaggParams, DELTA_MAX,
    DELTA_MIN,
};
use crate::error::{Error, Result};
use crate::glasso::{estimate_precision, Structure};
use crate::margins::{fit_margins, to_laplace, to_laplace_matrix, LaplaceMatrix, MarginalModel};
use crate::optim::{minimize, NmOptions};
use crate::parallel;
use crate::util::mean;

/// Optimizer box for the normalising exponent; values below −5 are
/// numerically indistinguishable in `y^beta` over observed exceedances.
pub const BETA_MIN: f64 = -5.0;
pub const BETA_MAX: f64 = 1.0;
/// Outer-loop convergence: max absolute parameter change.
pub const FIT_TOL: f64 = 1e-4;
const MAX_OUTER: usize = 50;
const BLOCK_SWEEPS: usize = 3;

/// Normalising parameters `(alpha, beta)` per dependent component, plus the
/// Gaussian working-residual moments from the first estimation stage.
///
/// Entry `j` refers to the j-th dependent column: original columns in
/// ascending order with the conditioning column removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub working_mu: Vec<f64>,
    pub working_sigma: Vec<f64>,
    /// Per-component flag: some parameter sat on an optimizer bound
    /// (|alpha| = 1, beta at the box edge, or degenerate residual spread),
    /// in which case beta is not identifiable from the data.
    pub boundary: Vec<bool>,
}

impl DependenceParams {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.alpha.len();
        if self.beta.len() != m
            || self.working_mu.len() != m
            || self.working_sigma.len() != m
            || self.boundary.len() != m
        {
            return Err(Error::DimensionMismatch(
                "dependence parameter vectors differ in length".into(),
            ));
        }
        for j in 0..m {
            if !(-1.0..=1.0).contains(&self.alpha[j]) {
                return Err(Error::DomainError {
                    value: self.alpha[j],
                    domain: "alpha in [-1, 1]",
                });
            }
            if self.beta[j] > BETA_MAX {
                return Err(Error::DomainError {
                    value: self.beta[j],
                    domain: "beta <= 1",
                });
            }
            if !(self.working_sigma[j] > 0.0) {
                return Err(Error::DomainError {
                    value: self.working_sigma[j],
                    domain: "working_sigma > 0",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    OneStep,
    TwoStep,
    ThreeStep,
}

/// Fitted conditional model for one conditioning site (1-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalFit {
    pub site: usize,
    /// Dependence threshold on the Laplace scale.
    pub threshold: f64,
    pub dep: DependenceParams,
    pub residual: MvaggParams,
    pub n_excesses: usize,
    pub loglik: f64,
    pub method: FitMethod,
    /// False when the outer loop hit its iteration cap (best iterate kept).
    pub converged: bool,
    pub outer_iters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteFailure {
    pub site: usize,
    pub message: String,
}

/// Full-model fitting configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub marginal_quantile: f64,
    pub dependence_quantile: f64,
    /// Optional per-site dependence quantiles overriding the common one.
    pub site_quantiles: Option<Vec<f64>>,
    pub structure: Structure,
    pub method: FitMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            marginal_quantile: 0.95,
            dependence_quantile: 0.80,
            site_quantiles: None,
            structure: Structure::Saturated,
            method: FitMethod::ThreeStep,
        }
    }
}

/// Fitted model: margins, Laplace-scale data, and one conditional fit per
/// site (minus any that failed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmevmModel {
    pub schema: String,
    pub structure: Structure,
    pub margins: Vec<MarginalModel>,
    pub fits: Vec<ConditionalFit>,
    pub failures: Vec<SiteFailure>,
    pub partial: bool,
    pub laplace_data: LaplaceMatrix,
}

pub const MODEL_SCHEMA: &str = "scmevm-v1";

impl ScmevmModel {
    pub fn dim(&self) -> usize {
        self.margins.len()
    }

    pub fn fit_for(&self, site: usize) -> Option<&ConditionalFit> {
        self.fits.iter().find(|f| f.site == site)
    }

    /// Largest per-site dependence threshold.
    pub fn max_threshold(&self) -> f64 {
        self.fits.iter().fold(f64::NEG_INFINITY, |a, f| a.max(f.threshold))
    }
}

/// Indices of rows whose conditioning column exceeds `u`.
pub fn excess_rows(y: &LaplaceMatrix, i: usize, u: f64) -> Result<Vec<usize>> {
    let d = y.values.ncols();
    if i == 0 || i > d {
        return Err(Error::InvalidNode { node: i, n_nodes: d });
    }
    Ok((0..y.values.nrows())
        .filter(|&r| y.values[(r, i - 1)] > u)
        .collect())
}

/// Dependent-column original indices (0-based), ascending, skipping site i.
fn dependent_cols(d: usize, i: usize) -> Vec<usize> {
    (0..d).filter(|&c| c != i - 1).collect()
}

fn check_threshold(u: f64) -> Result<()> {
    if !(u > 0.0) {
        return Err(Error::DomainError {
            value: u,
            domain: "dependence threshold > 0",
        });
    }
    Ok(())
}

const SIGMA_FLOOR: f64 = 1e-8;

/// For fixed beta the Gaussian working likelihood is maximized in closed
/// form: `z_k(alpha) = p_k - alpha q_k` with `p = y_j y_i^-beta`,
/// `q = y_i^(1-beta)`, so the optimal alpha is the least-squares slope
/// (clamped to [-1, 1]), mu the residual mean, and sigma^2 the residual
/// variance. Returns `(alpha, mu, sigma, nll)` with sigma floored so
/// degenerate (perfectly dependent) data stays finite.
fn ht_profile(yi: &[f64], lnyi: &[f64], yj: &[f64], b: f64) -> (f64, f64, f64, f64) {
    let n = yi.len() as f64;
    let mut p = Vec::with_capacity(yi.len());
    let mut q = Vec::with_capacity(yi.len());
    for k in 0..yi.len() {
        let t = yi[k].powf(-b);
        p.push(yj[k] * t);
        q.push(yi[k] * t);
    }
    let (pm, qm) = (mean(&p), mean(&q));
    let mut sqq = 0.0;
    let mut spq = 0.0;
    for k in 0..p.len() {
        sqq += (q[k] - qm) * (q[k] - qm);
        spq += (p[k] - pm) * (q[k] - qm);
    }
    let a = if sqq > 0.0 {
        (spq / sqq).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let mu = pm - a * qm;
    let mut ssr = 0.0;
    for k in 0..p.len() {
        let e = p[k] - a * q[k] - mu;
        ssr += e * e;
    }
    let sigma = (ssr / n).sqrt().max(SIGMA_FLOOR);
    let lnyi_sum: f64 = lnyi.iter().sum();
    let nll = n * (sigma.ln() + crate::special::LN_SQRT_2PI) + 0.5 * ssr / (sigma * sigma)
        + b * lnyi_sum;
    (a, mu, sigma, nll)
}

/// First-stage dependence fit: maximizes the working likelihood with
/// independent Gaussian residuals. Under a diagonal working covariance the
/// likelihood factorizes over components, so each `(alpha_j, beta_j, mu_j,
/// sigma_j)` is a separate four-parameter problem.
pub fn ht_fit(y: &LaplaceMatrix, i: usize, u: f64) -> Result<DependenceParams> {
    check_threshold(u)?;
    let d = y.values.ncols();
    let rows = excess_rows(y, i, u)?;
    let need = 30.max(d);
    if rows.len() < need {
        return Err(Error::TooFewExcesses {
            got: rows.len(),
            need,
        });
    }
    let yi: Vec<f64> = rows.iter().map(|&r| y.values[(r, i - 1)]).collect();
    let lnyi: Vec<f64> = yi.iter().map(|v| v.ln()).collect();

    let cols = dependent_cols(d, i);
    let mut out = DependenceParams {
        alpha: Vec::with_capacity(cols.len()),
        beta: Vec::with_capacity(cols.len()),
        working_mu: Vec::with_capacity(cols.len()),
        working_sigma: Vec::with_capacity(cols.len()),
        boundary: Vec::with_capacity(cols.len()),
    };
    for &c in &cols {
        let yj: Vec<f64> = rows.iter().map(|&r| y.values[(r, c)]).collect();
        // Profile likelihood over beta: coarse grid for a start, then a 1-D
        // simplex search, with (alpha, mu, sigma) closed-form at each beta.
        let profile = |x: &[f64]| -> f64 {
            if !(BETA_MIN..=BETA_MAX).contains(&x[0]) {
                return f64::INFINITY;
            }
            ht_profile(&yi, &lnyi, &yj, x[0]).3
        };
        let mut b0 = 0.1;
        let mut best = f64::INFINITY;
        let mut grid = -5.0;
        while grid <= 1.0 + 1e-12 {
            let v = profile(&[grid]);
            if v < best {
                best = v;
                b0 = grid;
            }
            grid += 0.25;
        }
        let r = minimize(profile, &[b0], &[0.2], 3, &NmOptions::default());
        if !r.fmin.is_finite() {
            return Err(Error::NonConvergence(format!(
                "working fit for pair ({i}, {}) found no finite likelihood",
                c + 1
            )));
        }
        let b = r.x[0];
        let (a, mu, sigma, _) = ht_profile(&yi, &lnyi, &yj, b);
        let boundary =
            a.abs() >= 1.0 - 1e-8 || b <= BETA_MIN + 1e-6 || sigma <= SIGMA_FLOOR * (1.0 + 1e-9);
        out.alpha.push(a);
        out.beta.push(b);
        out.working_mu.push(mu);
        out.working_sigma.push(sigma);
        out.boundary.push(boundary);
    }
    Ok(out)
}

/// Residuals `z_j = (y_j - alpha_j y_i) / y_i^beta_j` over excess rows;
/// one row per exceedance, columns ordered as in [`DependenceParams`].
pub fn residuals(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    dep: &DependenceParams,
) -> Result<DMatrix<f64>> {
    check_threshold(u)?;
    let d = y.values.ncols();
    let rows = excess_rows(y, i, u)?;
    let cols = dependent_cols(d, i);
    if dep.alpha.len() != cols.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} dependence parameters for {} dependent columns",
            dep.alpha.len(),
            cols.len()
        )));
    }
    let mut z = DMatrix::zeros(rows.len(), cols.len());
    for (k, &r) in rows.iter().enumerate() {
        let yi = y.values[(r, i - 1)];
        for (j, &c) in cols.iter().enumerate() {
            z[(k, j)] = (y.values[(r, c)] - dep.alpha[j] * yi) * yi.powf(-dep.beta[j]);
        }
    }
    Ok(z)
}

/// Log-likelihood of the full conditional model: MVAGG residual density plus
/// the normalisation Jacobian `-sum_j beta_j log y_i` per excess row.
pub fn scmevm_loglik(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    dep: &DependenceParams,
    residual: &MvaggParams,
) -> Result<f64> {
    let z = residuals(y, i, u, dep)?;
    let dens = mvagg_logdensity_many(&z, residual)?;
    let rows = excess_rows(y, i, u)?;
    let sum_lnyi: f64 = rows.iter().map(|&r| y.values[(r, i - 1)].ln()).sum();
    let beta_sum: f64 = dep.beta.iter().sum();
    Ok(dens.iter().map(|(v, _)| v).sum::<f64>() - beta_sum * sum_lnyi)
}

/// The structure a site's residual precision lives under: deleting the
/// conditioning node from a graphical structure, passing the others through.
pub fn site_structure(structure: &Structure, i: usize, d: usize) -> Result<Structure> {
    Ok(match structure {
        Structure::Independent => Structure::Independent,
        Structure::Saturated => Structure::Saturated,
        Structure::Graphical(g) => {
            if g.n_nodes() != d {
                return Err(Error::DimensionMismatch(format!(
                    "graph on {} nodes for {d}-column data",
                    g.n_nodes()
                )));
            }
            Structure::Graphical(g.remove_node(i)?)
        }
    })
}

/// Transform residuals to Gaussian scale through their fitted AGG margins.
pub(crate) fn gaussianize(z: &DMatrix<f64>, margins: &[AggParams]) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), z.ncols(), |r, j| copula_w(z[(r, j)], &margins[j]).0)
}

/// Independent AGG fit per residual column.
pub(crate) fn fit_agg_margins(z: &DMatrix<f64>) -> Result<Vec<AggParams>> {
    (0..z.ncols())
        .map(|j| {
            let col: Vec<f64> = z.column(j).iter().cloned().collect();
            agg_fit(&col)
        })
        .collect()
}

fn agg_to_x(p: &AggParams) -> [f64; 4] {
    [p.nu, p.kappa1.ln(), p.kappa2.ln(), p.delta.ln()]
}

fn agg_from_x(x: &[f64]) -> Result<AggParams> {
    AggParams::new(x[0], x[1].exp(), x[2].exp(), x[3].exp())
}

fn agg_x_feasible(x: &[f64]) -> bool {
    x[0].abs() <= 1e3
        && (-10.0..=10.0).contains(&x[1])
        && (-10.0..=10.0).contains(&x[2])
        && (DELTA_MIN.ln()..=DELTA_MAX.ln()).contains(&x[3])
}

fn block_options() -> NmOptions {
    NmOptions {
        ftol: 1e-10,
        xtol: 1e-8,
        max_iter: 600,
    }
}

/// One round of block-coordinate updates of the AGG margins holding the
/// precision fixed: maximizes the MVAGG log-density of the fixed residuals.
fn optimize_margins_given_precision(
    z: &DMatrix<f64>,
    margins: &[AggParams],
    precision: &DMatrix<f64>,
) -> Result<Vec<AggParams>> {
    let m = margins.len();
    let mut current = margins.to_vec();
    for _sweep in 0..BLOCK_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..m {
            let x0 = agg_to_x(&current[j]);
            let kbar = 0.5 * (current[j].kappa1 + current[j].kappa2);
            let steps = [0.1 * kbar.max(0.05), 0.15, 0.15, 0.1];
            let objective = |x: &[f64]| -> f64 {
                if !agg_x_feasible(x) {
                    return f64::INFINITY;
                }
                let cand = match agg_from_x(x) {
                    Ok(p) => p,
                    Err(_) => return f64::INFINITY,
                };
                let mut trial = current.clone();
                trial[j] = cand;
                let params = match MvaggParams::new(trial, precision.clone()) {
                    Ok(p) => p,
                    Err(_) => return f64::INFINITY,
                };
                match mvagg_logdensity_many(z, &params) {
                    Ok(dens) => -dens.iter().map(|(v, _)| v).sum::<f64>(),
                    Err(_) => f64::INFINITY,
                }
            };
            let r = minimize(objective, &x0, &steps, 1, &block_options());
            if r.fmin.is_finite() {
                let updated = agg_from_x(&r.x)?;
                for (a, b) in agg_to_x(&updated).iter().zip(x0.iter()) {
                    max_change = max_change.max((a - b).abs());
                }
                current[j] = updated;
            }
        }
        if max_change < FIT_TOL {
            break;
        }
    }
    Ok(current)
}

fn max_margin_change(a: &[AggParams], b: &[AggParams]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| {
            agg_to_x(p)
                .iter()
                .zip(agg_to_x(q).iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        })
        .fold(0.0f64, f64::max)
}

fn finish_fit(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    dep: DependenceParams,
    residual: MvaggParams,
    n_excesses: usize,
    method: FitMethod,
    converged: bool,
    outer_iters: usize,
) -> Result<ConditionalFit> {
    let loglik = scmevm_loglik(y, i, u, &dep, &residual)?;
    if !loglik.is_finite() {
        return Err(Error::NonConvergence(format!(
            "site {i}: non-finite log-likelihood at the fitted parameters"
        )));
    }
    Ok(ConditionalFit {
        site: i,
        threshold: u,
        dep,
        residual,
        n_excesses,
        loglik,
        method,
        converged,
        outer_iters,
    })
}

/// Three-step fit: working dependence fit, independent AGG margins on the
/// fixed residuals, then a single precision estimation. No outer loop.
pub fn fit_three_step(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    structure: &Structure,
) -> Result<ConditionalFit> {
    let d = y.values.ncols();
    let sub = site_structure(structure, i, d)?;
    let dep = ht_fit(y, i, u)?;
    let z = residuals(y, i, u, &dep)?;
    let margins = fit_agg_margins(&z)?;
    let w = gaussianize(&z, &margins);
    let est = estimate_precision(&w, &sub)?;
    let residual = MvaggParams::new(margins, est.matrix)?;
    finish_fit(y, i, u, dep, residual, z.nrows(), FitMethod::ThreeStep, true, 1)
}

/// Two-step fit: working dependence fit, then alternate precision
/// estimation and joint AGG-margin maximization on the fixed residuals
/// until the margin parameters stabilise.
pub fn fit_two_step(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    structure: &Structure,
) -> Result<ConditionalFit> {
    let d = y.values.ncols();
    let sub = site_structure(structure, i, d)?;
    let dep = ht_fit(y, i, u)?;
    let z = residuals(y, i, u, &dep)?;
    let mut theta = fit_agg_margins(&z)?;
    let mut est = estimate_precision(&gaussianize(&z, &theta), &sub)?;
    let mut converged = false;
    let mut iters = 0;
    while iters < MAX_OUTER {
        iters += 1;
        est = estimate_precision(&gaussianize(&z, &theta), &sub)?;
        let new_theta = optimize_margins_given_precision(&z, &theta, &est.matrix)?;
        let delta = max_margin_change(&theta, &new_theta);
        theta = new_theta;
        if delta < FIT_TOL {
            converged = true;
            break;
        }
    }
    let residual = MvaggParams::new(theta, est.matrix)?;
    finish_fit(y, i, u, dep, residual, z.nrows(), FitMethod::TwoStep, converged, iters)
}

/// One round of block-coordinate updates over `(alpha_j, beta_j, AGG_j)`
/// jointly, holding the precision fixed; residual columns are recomputed as
/// the dependence parameters move.
#[allow(clippy::too_many_arguments)]
fn optimize_joint_blocks(
    yi: &[f64],
    lnyi: &[f64],
    ycols: &[Vec<f64>],
    dep: &DependenceParams,
    theta: &[AggParams],
    precision: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<(DependenceParams, Vec<AggParams>, DMatrix<f64>)> {
    let m = theta.len();
    let mut cur_dep = dep.clone();
    let mut cur_theta = theta.to_vec();
    let mut cur_z = z.clone();
    for _sweep in 0..BLOCK_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..m {
            let ax = agg_to_x(&cur_theta[j]);
            let x0 = [
                cur_dep.alpha[j],
                cur_dep.beta[j],
                ax[0],
                ax[1],
                ax[2],
                ax[3],
            ];
            let kbar = 0.5 * (cur_theta[j].kappa1 + cur_theta[j].kappa2);
            let steps = [0.1, 0.1, 0.1 * kbar.max(0.05), 0.15, 0.15, 0.1];
            let objective = |x: &[f64]| -> f64 {
                let (a, b) = (x[0], x[1]);
                if !(-1.0..=1.0).contains(&a) || !(BETA_MIN..=BETA_MAX).contains(&b) {
                    return f64::INFINITY;
                }
                if !agg_x_feasible(&x[2..]) {
                    return f64::INFINITY;
                }
                let cand = match agg_from_x(&x[2..]) {
                    Ok(p) => p,
                    Err(_) => return f64::INFINITY,
                };
                let mut trial_theta = cur_theta.clone();
                trial_theta[j] = cand;
                let params = match MvaggParams::new(trial_theta, precision.clone()) {
                    Ok(p) => p,
                    Err(_) => return f64::INFINITY,
                };
                let mut trial_z = cur_z.clone();
                for k in 0..yi.len() {
                    trial_z[(k, j)] = (ycols[j][k] - a * yi[k]) * yi[k].powf(-b);
                }
                let dens = match mvagg_logdensity_many(&trial_z, &params) {
                    Ok(d) => d,
                    Err(_) => return f64::INFINITY,
                };
                // Jacobian: only component j's beta varies in this block.
                let lnyi_sum: f64 = lnyi.iter().sum();
                -(dens.iter().map(|(v, _)| v).sum::<f64>() - b * lnyi_sum)
            };
            let r = minimize(objective, &x0, &steps, 1, &block_options());
            if r.fmin.is_finite() {
                for (a, b) in r.x.iter().zip(x0.iter()) {
                    max_change = max_change.max((a - b).abs());
                }
                cur_dep.alpha[j] = r.x[0];
                cur_dep.beta[j] = r.x[1];
                cur_theta[j] = agg_from_x(&r.x[2..])?;
                for k in 0..yi.len() {
                    cur_z[(k, j)] = (ycols[j][k] - r.x[0] * yi[k]) * yi[k].powf(-r.x[1]);
                }
            }
        }
        if max_change < FIT_TOL {
            break;
        }
    }
    Ok((cur_dep, cur_theta, cur_z))
}

/// One-step fit: alternates precision estimation with joint maximization
/// over the dependence and AGG-margin parameters. The best iterate by
/// log-likelihood is kept, so the returned fit is never worse than its
/// initializer; `converged = false` if the iteration cap was hit first.
pub fn fit_one_step(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    structure: &Structure,
) -> Result<ConditionalFit> {
    let dep0 = ht_fit(y, i, u)?;
    let z0 = residuals(y, i, u, &dep0)?;
    let theta0 = fit_agg_margins(&z0)?;
    let d = y.values.ncols();
    if matches!(site_structure(structure, i, d)?, Structure::Independent) {
        return fit_one_step_independent(y, i, u, dep0, theta0);
    }
    fit_one_step_from(y, i, u, structure, dep0, theta0)
}

/// Joint likelihood of one dependent component under independent residuals:
/// `-sum_k log agg(z_k) + beta sum_k log y_k` with `z_k = (y_jk - alpha
/// y_k) y_k^-beta`. Minimized over `(alpha, beta, nu, kappa1, kappa2,
/// delta)` from the working-fit start.
fn optimize_component_joint(
    yi: &[f64],
    lnyi_sum: f64,
    yj: &[f64],
    a0: f64,
    b0: f64,
    agg0: &AggParams,
) -> Result<(f64, f64, AggParams)> {
    let ax = agg_to_x(agg0);
    let x0 = [a0, b0, ax[0], ax[1], ax[2], ax[3]];
    let kbar = 0.5 * (agg0.kappa1 + agg0.kappa2);
    let steps = [0.1, 0.1, 0.1 * kbar.max(0.05), 0.15, 0.15, 0.1];
    let objective = |x: &[f64]| -> f64 {
        let (a, b) = (x[0], x[1]);
        if !(-1.0..=1.0).contains(&a) || !(BETA_MIN..=BETA_MAX).contains(&b) {
            return f64::INFINITY;
        }
        if !agg_x_feasible(&x[2..]) {
            return f64::INFINITY;
        }
        let Ok(cand) = agg_from_x(&x[2..]) else {
            return f64::INFINITY;
        };
        let mut nll = b * lnyi_sum;
        for k in 0..yi.len() {
            let z = (yj[k] - a * yi[k]) * yi[k].powf(-b);
            let lp = agg_logpdf(z, &cand);
            if !lp.is_finite() {
                return f64::INFINITY;
            }
            nll -= lp;
        }
        nll
    };
    let r = minimize(objective, &x0, &steps, 2, &block_options());
    if !r.fmin.is_finite() {
        return Err(Error::NonConvergence(
            "joint component fit found no finite likelihood".into(),
        ));
    }
    Ok((r.x[0], r.x[1], agg_from_x(&r.x[2..])?))
}

/// One-step fit specialised to independent residuals. With identity
/// precision the MVAGG likelihood separates over components, so each
/// `(alpha_j, beta_j, AGG_j)` block is a standalone six-parameter problem
/// solved once to convergence instead of by outer sweeps.
fn fit_one_step_independent(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    dep0: DependenceParams,
    theta0: Vec<AggParams>,
) -> Result<ConditionalFit> {
    let d = y.values.ncols();
    let rows = excess_rows(y, i, u)?;
    let yi: Vec<f64> = rows.iter().map(|&r| y.values[(r, i - 1)]).collect();
    let lnyi_sum: f64 = yi.iter().map(|v| v.ln()).sum();
    let cols = dependent_cols(d, i);

    let mut dep = dep0;
    let mut theta = theta0;
    for (j, &c) in cols.iter().enumerate() {
        let yj: Vec<f64> = rows.iter().map(|&r| y.values[(r, c)]).collect();
        let (a, b, agg) =
            optimize_component_joint(&yi, lnyi_sum, &yj, dep.alpha[j], dep.beta[j], &theta[j])?;
        dep.alpha[j] = a;
        dep.beta[j] = b;
        dep.boundary[j] = a.abs() >= 1.0 - 1e-8 || b <= BETA_MIN + 1e-6;
        theta[j] = agg;
    }
    let residual = MvaggParams::new(theta, DMatrix::identity(d - 1, d - 1))?;
    finish_fit(y, i, u, dep, residual, yi.len(), FitMethod::OneStep, true, 1)
}

/// One-step fit from explicit starting values (exposed so a fit can be
/// resumed or verified to be a fixed point).
pub fn fit_one_step_from(
    y: &LaplaceMatrix,
    i: usize,
    u: f64,
    structure: &Structure,
    dep0: DependenceParams,
    theta0: Vec<AggParams>,
) -> Result<ConditionalFit> {
    let d = y.values.ncols();
    let sub = site_structure(structure, i, d)?;
    dep0.validate()?;
    let rows = excess_rows(y, i, u)?;
    let yi: Vec<f64> = rows.iter().map(|&r| y.values[(r, i - 1)]).collect();
    let lnyi: Vec<f64> = yi.iter().map(|v| v.ln()).collect();
    let cols = dependent_cols(d, i);
    let ycols: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| rows.iter().map(|&r| y.values[(r, c)]).collect())
        .collect();

    let mut dep = dep0;
    let mut theta = theta0;
    let mut z = residuals(y, i, u, &dep)?;
    let mut best: Option<(f64, DependenceParams, MvaggParams)> = None;
    let mut converged = false;
    let mut iters = 0;
    while iters < MAX_OUTER {
        iters += 1;
        let est = estimate_precision(&gaussianize(&z, &theta), &sub)?;
        let residual = MvaggParams::new(theta.clone(), est.matrix.clone())?;
        let ll = scmevm_loglik(y, i, u, &dep, &residual)?;
        if best.as_ref().map_or(true, |(b, _, _)| ll > *b) {
            best = Some((ll, dep.clone(), residual));
        }
        let (new_dep, new_theta, new_z) =
            optimize_joint_blocks(&yi, &lnyi, &ycols, &dep, &theta, &est.matrix, &z)?;
        let delta = new_dep
            .alpha
            .iter()
            .zip(dep.alpha.iter())
            .chain(new_dep.beta.iter().zip(dep.beta.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(max_margin_change(&theta, &new_theta), f64::max);
        dep = new_dep;
        theta = new_theta;
        z = new_z;
        let residual = MvaggParams::new(theta.clone(), est.matrix)?;
        let ll = scmevm_loglik(y, i, u, &dep, &residual)?;
        if best.as_ref().map_or(true, |(b, _, _)| ll > *b) {
            best = Some((ll, dep.clone(), residual));
        }
        if delta < FIT_TOL {
            converged = true;
            break;
        }
    }
    let (_, dep, residual) = best.expect("at least one iterate evaluated");
    finish_fit(y, i, u, dep, residual, z.nrows(), FitMethod::OneStep, converged, iters)
}

/// Fit margins, transform to Laplace scale, and fit every conditional model
/// (in parallel across sites). Site failures are collected rather than
/// aborting; the model is marked partial if any site failed, and fitting
/// errors out only if every site failed.
pub fn fit_model(
    data: &DMatrix<f64>,
    column_ids: &[String],
    cfg: &FitConfig,
) -> Result<ScmevmModel> {
    let d = data.ncols();
    for q in [cfg.marginal_quantile, cfg.dependence_quantile] {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::InvalidConfig(format!("quantile {q} outside (0, 1)")));
        }
    }
    if let Some(sq) = &cfg.site_quantiles {
        if sq.len() != d {
            return Err(Error::InvalidConfig(format!(
                "{} site quantiles for {d} columns",
                sq.len()
            )));
        }
        if let Some(&q) = sq.iter().find(|q| !(0.0 < **q && **q < 1.0)) {
            return Err(Error::InvalidConfig(format!("site quantile {q} outside (0, 1)")));
        }
    }
    if let Structure::Graphical(g) = &cfg.structure {
        if g.n_nodes() != d {
            return Err(Error::DimensionMismatch(format!(
                "graph on {} nodes for {d}-column data",
                g.n_nodes()
            )));
        }
    }
    let margins = fit_margins(data, cfg.marginal_quantile)?;
    let y = to_laplace_matrix(data, column_ids, &margins)?;

    let results: Vec<Result<ConditionalFit>> = parallel::map_indexed(d, |idx| {
        let i = idx + 1;
        let q = cfg
            .site_quantiles
            .as_ref()
            .map_or(cfg.dependence_quantile, |sq| sq[idx]);
        let u = to_laplace(q)?;
        match cfg.method {
            FitMethod::OneStep => fit_one_step(&y, i, u, &cfg.structure),
            FitMethod::TwoStep => fit_two_step(&y, i, u, &cfg.structure),
            FitMethod::ThreeStep => fit_three_step(&y, i, u, &cfg.structure),
        }
    });
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (idx, res) in results.into_iter().enumerate() {
        match res {
            Ok(f) => fits.push(f),
            Err(e) => failures.push(SiteFailure {
                site: idx + 1,
                message: e.to_string(),
            }),
        }
    }
    if fits.is_empty() {
        return Err(Error::PartialModel(format!(
            "all {d} sites failed; first: {}",
            failures[0].message
        )));
    }
    let partial = !failures.is_empty();
    Ok(ScmevmModel {
        schema: MODEL_SCHEMA.to_string(),
        structure: cfg.structure.clone(),
        margins,
        fits,
        failures,
        partial,
        laplace_data: y,
    })
}
