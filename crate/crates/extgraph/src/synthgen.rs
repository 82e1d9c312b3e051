//! Synthetic data generators with known truth, for calibration and
//! structure-recovery studies: the conditional model's own generative form
//! (Laplace conditioning variable plus MVAGG residuals) and elliptical
//! families (Gaussian, symmetric Laplace, Student-t) whose precision matrix
//! carries a prescribed graph.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agg::{mvagg_sample, AggParams, MvaggParams};
use crate::error::{Error, Result};
use crate::glasso::rescale_to_correlation;
use crate::graph::Graph;
use crate::margins::LaplaceMatrix;
use crate::util::subseed;

/// Default dependence threshold: the 0.80-quantile of the standard Laplace
/// distribution, `-log(0.4)`.
pub fn default_threshold() -> f64 {
    -(0.4f64).ln()
}

/// Minimum eigenvalue enforced on drawn precision matrices before the
/// unit-diagonal rescale.
pub const MIN_PRECISION_EIGENVALUE: f64 = 0.05;

/// Distribution family a generator draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    /// The conditional model's own generative form, one dataset per site.
    ScmevmTrue,
    Gaussian,
    Laplace,
    StudentT,
}

/// Kind-specific tuning for the generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    /// Partial-correlation magnitude range for drawn precision structures.
    pub partial_low: f64,
    pub partial_high: f64,
    /// Degrees of freedom for the Student-t family.
    pub df: f64,
    /// Dependence threshold for the conditional generator.
    pub threshold: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            partial_low: 0.1,
            partial_high: 0.4,
            df: 5.0,
            threshold: default_threshold(),
        }
    }
}

/// Full description of a synthetic dataset to generate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GenKind,
    pub d: usize,
    pub graph: Graph,
    pub n: usize,
    pub seed: u64,
    pub params: GenParams,
}

impl GeneratorSpec {
    pub fn new(kind: GenKind, graph: Graph, n: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind,
            d: graph.n_nodes(),
            graph,
            n,
            seed,
            params: GenParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidConfig("need at least 2 columns".into()));
        }
        if self.graph.n_nodes() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "graph on {} nodes for d = {}",
                self.graph.n_nodes(),
                self.d
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let p = &self.params;
        if !(p.partial_low > 0.0 && p.partial_low <= p.partial_high && p.partial_high < 1.0) {
            return Err(Error::InvalidConfig(
                "partial correlation range must satisfy 0 < low <= high < 1".into(),
            ));
        }
        if !(p.df > 2.0) {
            return Err(Error::DomainError {
                value: p.df,
                domain: "degrees of freedom > 2",
            });
        }
        if !(p.threshold > 0.0) {
            return Err(Error::DomainError {
                value: p.threshold,
                domain: "positive Laplace threshold",
            });
        }
        Ok(())
    }
}

/// True parameters of one site's conditional model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueSiteParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub residual: MvaggParams,
}

/// A full synthetic conditional model: graph, threshold, and per-site
/// dependence/residual parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmevmTruth {
    pub d: usize,
    pub graph: Graph,
    pub threshold: f64,
    /// Indexed by site - 1.
    pub sites: Vec<TrueSiteParams>,
}

/// Draw a precision matrix with the graph's zero pattern: uniform partial
/// correlations on the edges, a diagonal ridge up to the minimum-eigenvalue
/// floor, then a rescale so the implied covariance is a correlation matrix.
fn structured_precision_with<R: Rng>(
    graph: &Graph,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = graph.n_nodes();
    let mut gamma = DMatrix::identity(p, p);
    for (j, k) in graph.edges() {
        let r = low + (high - low) * rng.gen::<f64>();
        gamma[(j - 1, k - 1)] = -r;
        gamma[(k - 1, j - 1)] = -r;
    }
    let eig = gamma.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if !min_eig.is_finite() {
        return Err(Error::PdProjectionFailed(
            "eigenvalue computation failed".into(),
        ));
    }
    if min_eig < MIN_PRECISION_EIGENVALUE {
        for j in 0..p {
            gamma[(j, j)] += MIN_PRECISION_EIGENVALUE - min_eig;
        }
    }
    rescale_to_correlation(&gamma)
        .map_err(|e| Error::PdProjectionFailed(format!("rescale failed: {e}")))
}

/// Seeded wrapper around the structured precision draw.
pub fn draw_structured_precision(
    graph: &Graph,
    low: f64,
    high: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    structured_precision_with(graph, low, high, &mut rng)
}

// Per-component parameter ranges for the drawn conditional models.
const ALPHA_RANGE: (f64, f64) = (0.1, 0.5);
const BETA_RANGE: (f64, f64) = (0.1, 0.3);
const NU_RANGE: (f64, f64) = (-5.0, 5.0);
const KAPPA1_RANGE: (f64, f64) = (0.5, 2.0);
const KAPPA2_RANGE: (f64, f64) = (1.5, 3.0);
const DELTA_RANGE: (f64, f64) = (0.8, 2.5);

fn unif<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
    range.0 + (range.1 - range.0) * rng.gen::<f64>()
}

/// Draw a complete set of true conditional-model parameters: per dependent
/// component alpha ~ U(0.1,0.5), beta ~ U(0.1,0.3), AGG location ~ U(-5,5),
/// scales ~ U(0.5,2) and U(1.5,3), shape ~ U(0.8,2.5); per site a precision
/// matrix with the pattern of the graph minus the conditioning node.
pub fn draw_params(d: usize, graph: &Graph, seed: u64, params: &GenParams) -> Result<ScmevmTruth> {
    if graph.n_nodes() != d {
        return Err(Error::DimensionMismatch(format!(
            "graph on {} nodes for d = {d}",
            graph.n_nodes()
        )));
    }
    if d < 2 {
        return Err(Error::InvalidConfig("need at least 2 nodes".into()));
    }
    let sites = (1..=d)
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(subseed(seed, i as u64));
            let m = d - 1;
            let alpha: Vec<f64> = (0..m).map(|_| unif(ALPHA_RANGE, &mut rng)).collect();
            let beta: Vec<f64> = (0..m).map(|_| unif(BETA_RANGE, &mut rng)).collect();
            let margins: Vec<AggParams> = (0..m)
                .map(|_| {
                    AggParams::new(
                        unif(NU_RANGE, &mut rng),
                        unif(KAPPA1_RANGE, &mut rng),
                        unif(KAPPA2_RANGE, &mut rng),
                        unif(DELTA_RANGE, &mut rng),
                    )
                })
                .collect::<Result<_>>()?;
            let sub = graph.remove_node(i)?;
            let gamma =
                structured_precision_with(&sub, params.partial_low, params.partial_high, &mut rng)?;
            Ok(TrueSiteParams {
                alpha,
                beta,
                residual: MvaggParams::new(margins, gamma)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScmevmTruth {
        d,
        graph: graph.clone(),
        threshold: params.threshold,
        sites,
    })
}

fn column_ids(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Generate one site's conditional excess dataset on Laplace margins:
/// `y_i = u + Exp(1)`, residuals from the site's MVAGG, and the remaining
/// components assembled as `alpha_j y_i + y_i^{beta_j} z_j`.
pub fn gen_scmevm_site(
    truth: &ScmevmTruth,
    i: usize,
    n: usize,
    seed: u64,
) -> Result<LaplaceMatrix> {
    let d = truth.d;
    if i == 0 || i > d {
        return Err(Error::InvalidNode { node: i, n_nodes: d });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let site = &truth.sites[i - 1];
    let mut rng = ChaCha20Rng::seed_from_u64(subseed(seed, 0));
    let z = mvagg_sample(&site.residual, n, subseed(seed, 1))?;
    let dep_cols: Vec<usize> = (0..d).filter(|&c| c != i - 1).collect();
    let mut vals = DMatrix::zeros(n, d);
    for r in 0..n {
        let yi = truth.threshold + rng.sample::<f64, _>(Exp1);
        vals[(r, i - 1)] = yi;
        for (k, &c) in dep_cols.iter().enumerate() {
            vals[(r, c)] = site.alpha[k] * yi + yi.powf(site.beta[k]) * z[(r, k)];
        }
    }
    Ok(LaplaceMatrix {
        values: vals,
        column_ids: column_ids(d),
    })
}

/// Generate the conditional excess dataset for every site.
pub fn gen_scmevm(truth: &ScmevmTruth, n: usize, seed: u64) -> Result<Vec<LaplaceMatrix>> {
    (1..=truth.d)
        .map(|i| gen_scmevm_site(truth, i, n, subseed(seed, i as u64)))
        .collect()
}

/// An elliptical sample together with its generating parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticalSample {
    /// n x d data on original margins.
    #[serde(with = "crate::util::mat_serde")]
    pub data: DMatrix<f64>,
    pub mu: Vec<f64>,
    /// Correlation matrix (inverse of `precision`).
    #[serde(with = "crate::util::mat_serde")]
    pub sigma: DMatrix<f64>,
    /// Graph-structured precision matrix.
    #[serde(with = "crate::util::mat_serde")]
    pub precision: DMatrix<f64>,
}

/// Generate from an elliptical family whose precision matrix carries the
/// spec's graph: Gaussian (means ~ U(-5,5)), symmetric multivariate Laplace
/// (Gaussian scaled by sqrt(Exp(1))), or Student-t (scaled by
/// sqrt(df / chi-squared_df)); the latter two are centred.
pub fn gen_elliptical(spec: &GeneratorSpec) -> Result<EllipticalSample> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = ChaCha20Rng::seed_from_u64(subseed(spec.seed, 0));
    let gamma = structured_precision_with(
        &spec.graph,
        spec.params.partial_low,
        spec.params.partial_high,
        &mut rng,
    )?;
    let sigma = nalgebra::Cholesky::new(gamma.clone())
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let mu: Vec<f64> = match spec.kind {
        GenKind::Gaussian => (0..d).map(|_| unif((-5.0, 5.0), &mut rng)).collect(),
        GenKind::Laplace | GenKind::StudentT => vec![0.0; d],
        GenKind::ScmevmTrue => {
            return Err(Error::InvalidConfig(
                "conditional-model generation goes through gen_scmevm".into(),
            ))
        }
    };
    let mut data =
        elliptical_rows(spec.kind, &sigma, spec.params.df, spec.n, subseed(spec.seed, 1))?;
    for r in 0..spec.n {
        for j in 0..d {
            data[(r, j)] = mu[j] + data[(r, j)];
        }
    }
    Ok(EllipticalSample {
        data,
        mu,
        sigma,
        precision: gamma,
    })
}

/// Draw `n` centred rows from an elliptical family with a fixed covariance:
/// per row a mixing scalar first (1 for Gaussian, sqrt(Exp(1)) for Laplace,
/// sqrt(df/chi-squared_df) for Student-t), then the Gaussian vector. Lets
/// replicate studies redraw data under one dependence structure.
pub fn elliptical_rows(
    kind: GenKind,
    sigma: &DMatrix<f64>,
    df: f64,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if kind == GenKind::ScmevmTrue {
        return Err(Error::InvalidConfig(
            "conditional-model generation goes through gen_scmevm".into(),
        ));
    }
    let l = nalgebra::Cholesky::new(sigma.clone())
        .ok_or(Error::NotPositiveDefinite)?
        .l();
    let chi2 = Gamma::new(df / 2.0, 2.0)
        .map_err(|e| Error::InvalidConfig(format!("bad degrees of freedom: {e}")))?;

    let mut data = DMatrix::zeros(n, d);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for r in 0..n {
        let scale = match kind {
            GenKind::Gaussian => 1.0,
            GenKind::Laplace => rng.sample::<f64, _>(Exp1).sqrt(),
            GenKind::StudentT => (df / rng.sample::<f64, _>(chi2)).sqrt(),
            GenKind::ScmevmTrue => unreachable!(),
        };
        let e = nalgebra::DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &l * e;
        for j in 0..d {
            data[(r, j)] = scale * x[j];
        }
    }
    Ok(data)
}

/// The 5-node demonstration graph used across the calibration studies:
/// edges {1,2}, {1,3}, {2,3}, {3,4}, {3,5}, {4,5}.
pub fn demo_graph_5() -> Graph {
    Graph::with_edges(5, &[(1, 2), (1, 3), (2, 3), (3, 4), (3, 5), (4, 5)]).unwrap()
}

/// 16-node, 18-edge benchmark graph for structure-recovery studies: a
/// spanning tree plus three cycle-closing edges, with degrees from 1 to 4.
pub fn benchmark_graph_16() -> Graph {
    Graph::with_edges(
        16,
        &[
            // trunk
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 5),
            (5, 6),
            (6, 7),
            (7, 8),
            // branches
            (2, 9),
            (3, 10),
            (4, 11),
            (5, 12),
            (6, 13),
            (7, 14),
            (9, 15),
            (11, 16),
            // cycle closers
            (1, 3),
            (4, 12),
            (13, 14),
        ],
    )
    .unwrap()
}

/// Weak-negative 5x5 correlation fixture from the conditional-model
/// calibration studies.
pub fn sigma_weak_negative_5() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.000, -0.308, -0.134, 0.034, 0.019, //
            -0.308, 1.000, -0.160, 0.041, 0.023, //
            -0.134, -0.160, 1.000, -0.254, -0.141, //
            0.034, 0.041, -0.254, 1.000, -0.209, //
            0.019, 0.023, -0.141, -0.209, 1.000,
        ],
    )
}

/// Negative-association 5x5 correlation fixture from the Gaussian studies.
pub fn sigma_negative_gaussian_5() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.000, -0.468, -0.370, -0.136, 0.134, //
            -0.468, 1.000, 0.390, 0.144, -0.141, //
            -0.370, 0.390, 1.000, 0.369, -0.362, //
            -0.136, 0.144, 0.369, 1.000, -0.346, //
            0.134, -0.141, -0.362, -0.346, 1.000,
        ],
    )
}

/// Negative-association 5x5 correlation fixture from the Laplace studies.
pub fn sigma_negative_laplace_5() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.000, -0.200, -0.139, 0.026, 0.022, //
            -0.200, 1.000, -0.243, 0.045, 0.038, //
            -0.139, -0.243, 1.000, -0.185, -0.158, //
            0.026, 0.045, -0.185, 1.000, -0.276, //
            0.022, 0.038, -0.158, -0.276, 1.000,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glasso::{glasso, sample_correlation, Structure};
    use crate::graphsel::precision_graph;
    use crate::scmevm::{fit_three_step, ht_fit};
    use crate::util::{ks_crit_1pct, ks_statistic, mean, quantile};
    use approx::assert_abs_diff_eq;

    #[test]
    fn drawn_parameters_respect_ranges() {
        let g = demo_graph_5();
        let p = GenParams::default();
        let mut alphas = vec![];
        let mut betas = vec![];
        let mut nus = vec![];
        let mut k1s = vec![];
        let mut k2s = vec![];
        let mut deltas = vec![];
        for seed in 0..500 {
            let t = draw_params(5, &g, seed, &p).unwrap();
            for s in &t.sites {
                alphas.extend(&s.alpha);
                betas.extend(&s.beta);
                for m in &s.residual.margins {
                    nus.push(m.nu);
                    k1s.push(m.kappa1);
                    k2s.push(m.kappa2);
                    deltas.push(m.delta);
                }
            }
        }
        assert_eq!(alphas.len(), 10_000);
        let cover = |v: &[f64], lo: f64, hi: f64| {
            let (mn, mx) = v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            assert!(mn > lo && mx < hi, "range ({mn}, {mx}) not in ({lo}, {hi})");
            // Draws spread over most of the interval.
            let w = hi - lo;
            assert!(mn < lo + 0.1 * w && mx > hi - 0.1 * w);
        };
        cover(&alphas, 0.1, 0.5);
        cover(&betas, 0.1, 0.3);
        cover(&nus, -5.0, 5.0);
        cover(&k1s, 0.5, 2.0);
        cover(&k2s, 1.5, 3.0);
        cover(&deltas, 0.8, 2.5);
    }

    #[test]
    fn empty_graph_gives_identity_precision() {
        let g = Graph::new(4);
        let gamma = draw_structured_precision(&g, 0.1, 0.4, 7).unwrap();
        assert_eq!(gamma, DMatrix::identity(4, 4));
    }

    #[test]
    fn drawn_precision_matches_site_subgraph_pattern() {
        let g = demo_graph_5();
        let t = draw_params(5, &g, 11, &GenParams::default()).unwrap();
        for i in 1..=5 {
            let expect = g.remove_node(i).unwrap();
            let got = precision_graph(&t.sites[i - 1].residual.precision);
            assert_eq!(got, expect, "site {i}");
        }
    }

    #[test]
    fn drawn_precisions_are_well_conditioned() {
        for seed in 0..20 {
            let gamma = draw_structured_precision(&benchmark_graph_16(), 0.1, 0.4, seed).unwrap();
            let eig = gamma.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() > 1e-6);
            // Implied covariance is a correlation matrix.
            let sigma = nalgebra::Cholesky::new(gamma).unwrap().inverse();
            for j in 0..16 {
                assert_abs_diff_eq!(sigma[(j, j)], 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn conditioning_excess_is_unit_exponential() {
        let g = demo_graph_5();
        let t = draw_params(5, &g, 3, &GenParams::default()).unwrap();
        let y = gen_scmevm_site(&t, 2, 100_000, 17).unwrap();
        let excesses: Vec<f64> = y
            .values
            .column(1)
            .iter()
            .map(|&v| v - t.threshold)
            .collect();
        assert!(excesses.iter().all(|&e| e > 0.0));
        let d = ks_statistic(&excesses, |x| 1.0 - (-x).exp());
        assert!(d < ks_crit_1pct(excesses.len()), "KS statistic {d}");
    }

    #[test]
    fn fitted_alpha_bias_is_small() {
        let g = demo_graph_5();
        let p = GenParams::default();
        let mut biases = vec![];
        for rep in 0..50 {
            let t = draw_params(5, &g, 1000 + rep, &p).unwrap();
            let y = gen_scmevm_site(&t, 1, 500, 2000 + rep).unwrap();
            let dep = ht_fit(&y, 1, t.threshold).unwrap();
            for k in 0..4 {
                biases.push(dep.alpha[k] - t.sites[0].alpha[k]);
            }
        }
        let med = quantile(&biases, 0.5);
        assert!(med.abs() < 0.05, "median alpha bias {med}");
    }

    #[test]
    fn three_step_fit_preserves_generating_pattern() {
        let g = demo_graph_5();
        let t = draw_params(5, &g, 23, &GenParams::default()).unwrap();
        let y = gen_scmevm_site(&t, 3, 4000, 29).unwrap();
        let fit = fit_three_step(&y, 3, t.threshold, &Structure::Graphical(g.clone())).unwrap();
        let got = precision_graph(&fit.residual.precision);
        assert_eq!(got, g.remove_node(3).unwrap());
    }

    #[test]
    fn gaussian_sample_recovers_graph_by_glasso() {
        let g = demo_graph_5();
        let spec = GeneratorSpec::new(GenKind::Gaussian, g.clone(), 100_000, 31);
        let s = gen_elliptical(&spec).unwrap();
        assert_eq!(precision_graph(&s.precision), g);
        // Column means match the drawn mu.
        for j in 0..5 {
            let m = mean(&s.data.column(j).iter().copied().collect::<Vec<_>>());
            assert_abs_diff_eq!(m, s.mu[j], epsilon = 0.05);
        }
        let corr = sample_correlation(&s.data).unwrap();
        let mut pen = DMatrix::from_element(5, 5, 0.12);
        pen.fill_diagonal(0.0);
        let gam = glasso(&corr, &pen).unwrap();
        assert_eq!(precision_graph(&gam), g);
    }

    #[test]
    fn student_t_has_heavier_joint_tail_than_gaussian() {
        let g = Graph::complete(2);
        let n = 200_000;
        let gauss = gen_elliptical(&GeneratorSpec::new(GenKind::Gaussian, g.clone(), n, 41))
            .unwrap();
        let t = gen_elliptical(&GeneratorSpec::new(GenKind::StudentT, g, n, 41)).unwrap();
        // Same seed stream, so both use the same correlation draw.
        assert_eq!(gauss.sigma, t.sigma);
        let eta_g = crate::measures::eta_u(&gauss.data, 0.95).unwrap();
        let eta_t = crate::measures::eta_u(&t.data, 0.95).unwrap();
        assert!(
            eta_t > eta_g + 0.05,
            "eta_t = {eta_t}, eta_g = {eta_g} (t not heavier)"
        );
    }

    #[test]
    fn laplace_margins_have_excess_kurtosis_three() {
        let g = demo_graph_5();
        let spec = GeneratorSpec::new(GenKind::Laplace, g, 1_000_000, 51);
        let s = gen_elliptical(&spec).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = s.data.column(j).iter().copied().collect();
            let m = mean(&col);
            let m2 = mean(&col.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>());
            let m4 = mean(&col.iter().map(|x| (x - m).powi(4)).collect::<Vec<_>>());
            let excess = m4 / (m2 * m2) - 3.0;
            assert_abs_diff_eq!(excess, 3.0, epsilon = 0.3);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let g = demo_graph_5();
        let t1 = draw_params(5, &g, 61, &GenParams::default()).unwrap();
        let t2 = draw_params(5, &g, 61, &GenParams::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&t1).unwrap(),
            serde_json::to_string(&t2).unwrap()
        );
        let y1 = gen_scmevm(&t1, 200, 62).unwrap();
        let y2 = gen_scmevm(&t2, 200, 62).unwrap();
        assert_eq!(y1.len(), 5);
        for (a, b) in y1.iter().zip(&y2) {
            assert_eq!(a.values, b.values);
        }
        let spec = GeneratorSpec::new(GenKind::StudentT, g, 500, 63);
        let e1 = gen_elliptical(&spec).unwrap();
        let e2 = gen_elliptical(&spec).unwrap();
        assert_eq!(e1.data, e2.data);
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let g = demo_graph_5();
        let mut spec = GeneratorSpec::new(GenKind::Gaussian, g.clone(), 100, 1);
        spec.d = 4;
        assert!(spec.validate().is_err());
        let mut spec = GeneratorSpec::new(GenKind::StudentT, g.clone(), 100, 1);
        spec.params.df = 2.0;
        assert!(spec.validate().is_err());
        let mut spec = GeneratorSpec::new(GenKind::Gaussian, g.clone(), 100, 1);
        spec.params.partial_low = 0.0;
        assert!(spec.validate().is_err());
        assert!(gen_elliptical(&GeneratorSpec::new(GenKind::ScmevmTrue, g, 100, 1)).is_err());
        // Degenerate residual scales are rejected at construction.
        assert!(AggParams::new(0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn shipped_fixtures_are_valid_correlations() {
        for (name, sigma) in [
            ("weak_negative", sigma_weak_negative_5()),
            ("negative_gaussian", sigma_negative_gaussian_5()),
            ("negative_laplace", sigma_negative_laplace_5()),
        ] {
            assert_eq!(sigma, sigma.transpose(), "{name} not symmetric");
            for j in 0..5 {
                assert_eq!(sigma[(j, j)], 1.0, "{name} diagonal");
            }
            let eig = sigma.symmetric_eigen();
            assert!(eig.eigenvalues.min() > 1e-6, "{name} not PD");
        }
        let g = benchmark_graph_16();
        assert_eq!(g.n_nodes(), 16);
        assert_eq!(g.n_edges(), 18);
    }
}
