//! Semi-parametric marginal models and transforms between original, uniform,
//! and standard Laplace scales.
//!
//! Below a high threshold the distribution function is the empirical CDF
//! (midranks over n + 1, linearly interpolated); above it a generalised
//! Pareto tail is glued on at the empirical exceedance probability, so the
//! composite CDF is continuous and monotone by construction. A double
//! probability integral transform then maps to standard Laplace margins.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, NmOptions};
use crate::parallel;
use crate::util::quantile;

/// Marginal distribution: empirical body plus GPD tail.
///
/// `sorted_sample` holds the full training column in nondecreasing order
/// (every empirical quantile, which is what the body CDF interpolates);
/// `tail_prob` is the empirical probability of exceeding `gpd_threshold`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalModel {
    #[serde(rename = "sample_quantiles")]
    pub sorted_sample: Vec<f64>,
    #[serde(rename = "threshold")]
    pub gpd_threshold: f64,
    #[serde(rename = "scale")]
    pub gpd_scale: f64,
    #[serde(rename = "shape")]
    pub gpd_shape: f64,
    pub tail_prob: f64,
}

/// Data on standard Laplace margins; rows are observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceMatrix {
    #[serde(with = "crate::util::mat_serde")]
    pub values: DMatrix<f64>,
    pub column_ids: Vec<String>,
}

/// CDF clamp keeping transformed values strictly inside (0, 1).
const CDF_EPS: f64 = 1e-10;

/// Maximum likelihood GPD fit to positive excesses, returning (scale, shape).
///
/// One-dimensional profile likelihood over eta = shape/scale: for fixed eta
/// the shape has the closed form mean(log(1 + eta * x)), leaving a 1-D
/// search that is restarted from a fixed shape grid. The shape is
/// constrained to (-1, inf), where the density is bounded.
pub fn gpd_fit(excesses: &[f64]) -> Result<(f64, f64)> {
    let n = excesses.len();
    if n < 2 {
        return Err(Error::TooFewObservations { got: n, need: 2 });
    }
    if excesses.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::DegenerateInput(
            "excesses must be positive and finite".into(),
        ));
    }
    let max_x = excesses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean_x = excesses.iter().sum::<f64>() / n as f64;
    let eta_min = -1.0 / max_x;
    let nf = n as f64;

    // Profile log-likelihood in eta; -inf outside the feasible region.
    let profile = |eta: f64| -> f64 {
        if eta <= eta_min {
            return f64::NEG_INFINITY;
        }
        if eta.abs() < 1e-11 {
            // Exponential limit (shape -> 0).
            return -nf * (mean_x.ln() + 1.0);
        }
        let xi = excesses.iter().map(|&x| (1.0 + eta * x).ln()).sum::<f64>() / nf;
        if xi <= -1.0 + 1e-9 {
            return f64::NEG_INFINITY;
        }
        -nf * ((xi / eta).ln() + xi + 1.0)
    };

    // eta = eta_min + exp(tau) maps the feasible half-line to all of R.
    let obj = |t: &[f64]| -profile(eta_min + t[0].exp());
    let opts = NmOptions {
        ftol: 1e-12,
        xtol: 1e-10,
        max_iter: 500,
    };
    let mut best: Option<(f64, f64)> = None; // (negloglik, eta)
    for k in 0..7 {
        let xi0 = -0.4 + 0.2 * k as f64;
        let eta0 = if xi0 == 0.0 { 1e-6 } else { xi0 / mean_x };
        let eta0 = if eta0 > eta_min {
            eta0
        } else {
            eta_min + 0.05 * eta_min.abs()
        };
        let tau0 = (eta0 - eta_min).ln();
        let r = minimize(obj, &[tau0], &[0.5], 2, &opts);
        let eta = eta_min + r.x[0].exp();
        if r.fmin.is_finite() && best.map_or(true, |(f, _)| r.fmin < f) {
            best = Some((r.fmin, eta));
        }
    }
    let (_, eta) = best.ok_or_else(|| {
        Error::GpdNonConvergence("profile likelihood infeasible from every start".into())
    })?;
    let (scale, shape) = if eta.abs() < 1e-11 {
        (mean_x, 0.0)
    } else {
        let xi = excesses.iter().map(|&x| (1.0 + eta * x).ln()).sum::<f64>() / nf;
        (xi / eta, xi)
    };
    if !(scale > 0.0) || !scale.is_finite() || !shape.is_finite() {
        return Err(Error::GpdNonConvergence(format!(
            "degenerate optimum: scale {scale}, shape {shape}"
        )));
    }
    if shape <= -1.0 {
        return Err(Error::GpdNonConvergence(format!("shape {shape} <= -1")));
    }
    Ok((scale, shape))
}

/// GPD survival function at excess x >= 0.
fn gpd_survival(x: f64, scale: f64, shape: f64) -> f64 {
    if shape.abs() < 1e-12 {
        (-x / scale).exp()
    } else {
        let t = 1.0 + shape * x / scale;
        if t <= 0.0 {
            0.0 // beyond the upper endpoint (shape < 0)
        } else {
            t.powf(-1.0 / shape)
        }
    }
}

/// GPD quantile for lower-tail probability p in [0, 1).
fn gpd_quantile(p: f64, scale: f64, shape: f64) -> f64 {
    if shape.abs() < 1e-12 {
        -scale * (1.0 - p).ln()
    } else {
        scale / shape * ((1.0 - p).powf(-shape) - 1.0)
    }
}

/// Fit a [`MarginalModel`]: empirical threshold at `threshold_quantile`,
/// GPD maximum likelihood on the exceedances.
pub fn fit_marginal(column: &[f64], threshold_quantile: f64) -> Result<MarginalModel> {
    if !(threshold_quantile > 0.0 && threshold_quantile < 1.0) {
        return Err(Error::DomainError {
            value: threshold_quantile,
            domain: "threshold_quantile in (0,1)",
        });
    }
    if column.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateInput("non-finite observation".into()));
    }
    let n = column.len();
    let threshold = if n == 0 {
        return Err(Error::TooFewExceedances { got: 0, need: 20 });
    } else {
        quantile(column, threshold_quantile)
    };
    let excesses: Vec<f64> = column
        .iter()
        .filter(|&&x| x > threshold)
        .map(|&x| x - threshold)
        .collect();
    if excesses.len() < 20 {
        return Err(Error::TooFewExceedances {
            got: excesses.len(),
            need: 20,
        });
    }
    if n < 50 {
        return Err(Error::TooFewObservations { got: n, need: 50 });
    }
    let (scale, shape) = gpd_fit(&excesses)?;
    let mut sorted = column.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(MarginalModel {
        sorted_sample: sorted,
        gpd_threshold: threshold,
        gpd_scale: scale,
        gpd_shape: shape,
        tail_prob: excesses.len() as f64 / n as f64,
    })
}

impl MarginalModel {
    fn n(&self) -> usize {
        self.sorted_sample.len()
    }

    /// Midrank/(n+1) probability of the sample value at sorted index `k`
    /// (all members of a tie group share it).
    fn atom_prob(&self, k: usize) -> f64 {
        let s = &self.sorted_sample;
        let v = s[k];
        let lt = s.partition_point(|&x| x < v);
        let le = s.partition_point(|&x| x <= v);
        // Tied ranks lt+1 ..= le average to (lt + le + 1)/2.
        (lt + le + 1) as f64 / 2.0 / (self.n() as f64 + 1.0)
    }

    /// Number of leading sample values strictly below the GPD threshold.
    fn body_len(&self) -> usize {
        self.sorted_sample
            .partition_point(|&x| x < self.gpd_threshold)
    }
}

/// Composite marginal CDF: interpolated empirical body glued to the GPD tail
/// at (threshold, 1 - tail_prob). Output is clamped inside (0, 1).
pub fn marginal_cdf(m: &MarginalModel, x: f64) -> f64 {
    let glue = 1.0 - m.tail_prob;
    let p = if x > m.gpd_threshold {
        1.0 - m.tail_prob * gpd_survival(x - m.gpd_threshold, m.gpd_scale, m.gpd_shape)
    } else if x == m.gpd_threshold {
        glue
    } else {
        let b = m.body_len();
        let s = &m.sorted_sample;
        if b == 0 || x < s[0] {
            CDF_EPS
        } else {
            let lt = s[..b].partition_point(|&v| v < x);
            let le = s[..b].partition_point(|&v| v <= x);
            if lt < le {
                m.atom_prob(lt) // x is a sample value
            } else {
                // Between atoms: interpolate to the next body atom, or to
                // the glue point when x lies beyond the last body value.
                let (x0, p0) = (s[lt - 1], m.atom_prob(lt - 1));
                let (x1, p1) = if lt < b {
                    (s[lt], m.atom_prob(lt))
                } else {
                    (m.gpd_threshold, glue)
                };
                p0 + (x - x0) / (x1 - x0) * (p1 - p0)
            }
        }
    };
    p.clamp(CDF_EPS, 1.0 - CDF_EPS)
}

/// Standard Laplace quantile of u: the double-PIT transform to Laplace scale.
pub fn to_laplace(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::DomainError {
            value: u,
            domain: "(0, 1)",
        });
    }
    Ok(if u <= 0.5 {
        (2.0 * u).ln()
    } else {
        -(2.0 * (1.0 - u)).ln()
    })
}

/// Inverse transform: Laplace-scale value back to original units.
///
/// Tail values invert the GPD analytically; body values invert the
/// interpolated empirical CDF. Values beyond the smallest sample atom clamp
/// to it.
pub fn from_laplace(y: f64, m: &MarginalModel) -> f64 {
    // Laplace survival of y, computed without cancellation for large y.
    let survival = if y <= 0.0 {
        1.0 - 0.5 * y.exp()
    } else {
        0.5 * (-y).exp()
    };
    if survival <= m.tail_prob {
        // Tail: tail_prob * gpd_sf(x - thr) = survival.
        let p_in_tail = 1.0 - survival / m.tail_prob;
        return m.gpd_threshold + gpd_quantile(p_in_tail, m.gpd_scale, m.gpd_shape);
    }
    let u = 1.0 - survival;
    let b = m.body_len();
    if b == 0 {
        return m.gpd_threshold;
    }
    if u <= m.atom_prob(0) {
        return m.sorted_sample[0];
    }
    // Largest body index whose atom probability is <= u (atom probs are
    // nondecreasing in the index).
    let (mut lo, mut hi) = (0usize, b - 1);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if m.atom_prob(mid) <= u {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let (x0, p0) = (m.sorted_sample[lo], m.atom_prob(lo));
    // Skip past the tie group to the next distinct atom (or the glue point).
    let next = m.sorted_sample[..b].partition_point(|&v| v <= x0);
    let (x1, p1) = if next < b {
        (m.sorted_sample[next], m.atom_prob(next))
    } else {
        (m.gpd_threshold, 1.0 - m.tail_prob)
    };
    if p1 <= p0 {
        return x0;
    }
    x0 + (u - p0) / (p1 - p0) * (x1 - x0)
}

/// Fit one marginal model per column (in parallel).
pub fn fit_margins(data: &DMatrix<f64>, threshold_quantile: f64) -> Result<Vec<MarginalModel>> {
    parallel::try_map_indexed(data.ncols(), |j| {
        let col: Vec<f64> = data.column(j).iter().cloned().collect();
        fit_marginal(&col, threshold_quantile)
    })
}

/// Transform a data matrix to standard Laplace margins.
pub fn to_laplace_matrix(
    data: &DMatrix<f64>,
    column_ids: &[String],
    models: &[MarginalModel],
) -> Result<LaplaceMatrix> {
    if models.len() != data.ncols() || column_ids.len() != data.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns vs {} models / {} ids",
            data.ncols(),
            models.len(),
            column_ids.len()
        )));
    }
    let cols: Vec<Vec<f64>> = parallel::try_map_indexed(data.ncols(), |j| {
        data.column(j)
            .iter()
            .map(|&x| to_laplace(marginal_cdf(&models[j], x)))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut values = DMatrix::zeros(data.nrows(), data.ncols());
    for (j, col) in cols.iter().enumerate() {
        for (i, &y) in col.iter().enumerate() {
            values[(i, j)] = y;
        }
    }
    Ok(LaplaceMatrix {
        values,
        column_ids: column_ids.to_vec(),
    })
}
