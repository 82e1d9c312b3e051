//! Data-driven selection of the d-dimensional residual graph.
//!
//! For each conditioning site the residuals are fitted and transformed to
//! Gaussian scale, and a graphical lasso infers a subgraph on the remaining
//! sites; the d subgraphs vote on the full graph through a weighted
//! combination and a majority prune. The procedure runs over a grid of
//! penalties and a second, strict majority across penalties fixes the final
//! edge set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{glasso, sample_correlation};
use crate::graph::{combine_subgraphs, prune_majority, Graph, WeightedGraph};
use crate::margins::LaplaceMatrix;
use crate::parallel;
use crate::scmevm::{fit_agg_margins, gaussianize, ht_fit, residuals};

/// Dependence-threshold quantile used for graph selection when the caller
/// does not override it.
pub const SELECT_DEPENDENCE_QUANTILE: f64 = 0.70;

/// Default penalty grid: 0.10 to 0.30 in steps of 0.02.
pub fn default_rho_grid() -> Vec<f64> {
    (0..=10).map(|k| 0.10 + 0.02 * k as f64).collect()
}

/// Everything produced for one penalty value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoReport {
    pub rho: f64,
    /// Per-site inferred subgraphs on d-1 nodes, keyed by conditioning site.
    pub subgraphs: Vec<(usize, Graph)>,
    pub weighted: WeightedGraph,
    pub pruned: Graph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionFailure {
    pub site: usize,
    /// Penalty at which the failure occurred; absent for failures in the
    /// penalty-independent residual stage.
    pub rho: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSelectionReport {
    pub rho_grid: Vec<f64>,
    pub per_rho: Vec<RhoReport>,
    #[serde(rename = "final")]
    pub final_graph: Graph,
    pub failures: Vec<SelectionFailure>,
}

/// Graph read off the exact zero pattern of a precision matrix.
pub fn precision_graph(gamma: &DMatrix<f64>) -> Graph {
    let p = gamma.nrows();
    let mut g = Graph::new(p);
    for j in 1..=p {
        for k in (j + 1)..=p {
            if gamma[(j - 1, k - 1)] != 0.0 {
                g.add_edge(j, k).expect("indices in range");
            }
        }
    }
    g
}

/// Select the residual graph from Laplace-scale data: per-site residual
/// fits, a graphical lasso per (site, penalty), weighted subgraph
/// combination with a 50% prune per penalty, then a strict cross-penalty
/// majority. `u` holds one dependence threshold per site.
pub fn select_graph(
    y: &LaplaceMatrix,
    u: &[f64],
    rho_grid: &[f64],
) -> Result<GraphSelectionReport> {
    let d = y.values.ncols();
    if rho_grid.is_empty() {
        return Err(Error::InvalidConfig("empty penalty grid".into()));
    }
    if let Some(&r) = rho_grid.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidConfig(format!("penalty {r} not positive")));
    }
    if u.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds for {d} columns",
            u.len()
        )));
    }
    if d < 3 {
        return Err(Error::DegenerateInput(
            "graph selection needs at least 3 columns".into(),
        ));
    }

    // Stage 1 (penalty-independent): per-site Gaussian-scale residual
    // correlation matrices.
    let stage: Vec<Result<DMatrix<f64>>> = parallel::map_indexed(d, |idx| {
        let i = idx + 1;
        let dep = ht_fit(y, i, u[idx])?;
        let z = residuals(y, i, u[idx], &dep)?;
        let margins = fit_agg_margins(&z)?;
        sample_correlation(&gaussianize(&z, &margins))
    });
    let mut failures = Vec::new();
    let mut corrs: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(d);
    for (idx, res) in stage.into_iter().enumerate() {
        match res {
            Ok(c) => corrs.push(Some(c)),
            Err(e) => {
                failures.push(SelectionFailure {
                    site: idx + 1,
                    rho: None,
                    message: e.to_string(),
                });
                corrs.push(None);
            }
        }
    }
    let succeeded = corrs.iter().filter(|c| c.is_some()).count();
    if succeeded < d - 1 {
        return Err(Error::SelectionFailed {
            succeeded,
            total: d,
        });
    }

    // Stage 2: one lasso per (penalty, site); flattened for parallelism,
    // reduced in deterministic index order.
    let n_rho = rho_grid.len();
    let lasso: Vec<Option<Result<Graph>>> = parallel::map_indexed(n_rho * d, |flat| {
        let (ri, idx) = (flat / d, flat % d);
        corrs[idx].as_ref().map(|corr| {
            let p = corr.nrows();
            let mut pen = DMatrix::from_element(p, p, rho_grid[ri]);
            pen.fill_diagonal(0.0);
            glasso(corr, &pen).map(|g| precision_graph(&g))
        })
    });

    let mut per_rho = Vec::with_capacity(n_rho);
    for (ri, &rho) in rho_grid.iter().enumerate() {
        let mut subgraphs = Vec::new();
        for idx in 0..d {
            match &lasso[ri * d + idx] {
                Some(Ok(sub)) => subgraphs.push((idx + 1, sub.clone())),
                Some(Err(e)) => failures.push(SelectionFailure {
                    site: idx + 1,
                    rho: Some(rho),
                    message: e.to_string(),
                }),
                None => {}
            }
        }
        let weighted = combine_subgraphs(d, &subgraphs)?;
        let pruned = prune_majority(&weighted, 0.5);
        per_rho.push(RhoReport {
            rho,
            subgraphs,
            weighted,
            pruned,
        });
    }

    // Cross-penalty re-vote: keep an edge present in strictly more than
    // half of the pruned graphs.
    let mut final_graph = Graph::new(d);
    for j in 1..=d {
        for k in (j + 1)..=d {
            let votes = per_rho.iter().filter(|r| r.pruned.has_edge(j, k)).count();
            if 2 * votes > per_rho.len() {
                final_graph.add_edge(j, k)?;
            }
        }
    }
    Ok(GraphSelectionReport {
        rho_grid: rho_grid.to_vec(),
        per_rho,
        final_graph,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glasso::{rescale_to_correlation, sample_mvn};
    use crate::margins::to_laplace;
    use crate::special::std_normal_cdf;

    /// Laplace threshold at quantile q.
    fn uq(q: f64, d: usize) -> Vec<f64> {
        vec![to_laplace(q).unwrap(); d]
    }

    /// Gaussian data with a structured precision, transformed exactly to
    /// standard Laplace margins (margins are standard normal by design).
    fn laplace_from_mvg(gamma: &DMatrix<f64>, n: usize, seed: u64) -> LaplaceMatrix {
        let sigma = gamma.clone().try_inverse().unwrap();
        let x = sample_mvn(&sigma, n, seed).unwrap();
        let values = DMatrix::from_fn(n, x.ncols(), |r, c| {
            to_laplace(std_normal_cdf(x[(r, c)]).clamp(1e-12, 1.0 - 1e-12)).unwrap()
        });
        let ids = (0..x.ncols()).map(|c| format!("c{}", c + 1)).collect();
        LaplaceMatrix {
            values,
            column_ids: ids,
        }
    }

    fn demo_graph5() -> Graph {
        Graph::with_edges(5, &[(1, 2), (1, 3), (2, 3), (3, 4), (3, 5), (4, 5)]).unwrap()
    }

    /// Edge entries -r with a diagonally dominant diagonal, so the matrix
    /// is positive definite for any graph, then rescaled to correlation.
    fn structured_precision(g: &Graph, r: f64) -> DMatrix<f64> {
        let d = g.n_nodes();
        let mut gamma = DMatrix::zeros(d, d);
        for (j, k) in g.edges() {
            gamma[(j - 1, k - 1)] = -r;
            gamma[(k - 1, j - 1)] = -r;
        }
        for j in 0..d {
            let rowsum: f64 = (0..d).filter(|&k| k != j).map(|k| gamma[(j, k)].abs()).sum();
            gamma[(j, j)] = 1.0 + rowsum + 0.1;
        }
        rescale_to_correlation(&gamma).unwrap()
    }

    #[test]
    fn recovers_demo_graph_from_mvg_data() {
        let truth = demo_graph5();
        let gamma = structured_precision(&truth, 0.9);
        let y = laplace_from_mvg(&gamma, 6000, 42);
        let report = select_graph(&y, &uq(0.70, 5), &[0.08, 0.10, 0.12]).unwrap();
        assert_eq!(
            report.final_graph, truth,
            "selected {:?}",
            report.final_graph
        );
    }

    #[test]
    fn independent_columns_give_empty_graph() {
        let y = laplace_from_mvg(&DMatrix::identity(4, 4), 3000, 7);
        let report = select_graph(&y, &uq(0.70, 4), &[0.3, 0.35, 0.4]).unwrap();
        assert_eq!(report.final_graph.n_edges(), 0);
        for r in &report.per_rho {
            assert_eq!(r.pruned.n_edges(), 0);
        }
    }

    #[test]
    fn single_rho_final_equals_pruned() {
        let truth = demo_graph5();
        let gamma = structured_precision(&truth, 0.7);
        let y = laplace_from_mvg(&gamma, 1500, 9);
        let report = select_graph(&y, &uq(0.70, 5), &[0.15]).unwrap();
        assert_eq!(report.per_rho.len(), 1);
        assert_eq!(report.final_graph, report.per_rho[0].pruned);
    }

    #[test]
    fn subgraphs_have_reduced_dimension() {
        let gamma = structured_precision(&demo_graph5(), 0.7);
        let y = laplace_from_mvg(&gamma, 1200, 11);
        let report = select_graph(&y, &uq(0.70, 5), &[0.2]).unwrap();
        for (site, sub) in &report.per_rho[0].subgraphs {
            assert!((1..=5).contains(site));
            assert_eq!(sub.n_nodes(), 4);
        }
        assert_eq!(report.per_rho[0].subgraphs.len(), 5);
    }

    #[test]
    fn edge_count_trend_decreases_along_grid() {
        let gamma = structured_precision(&demo_graph5(), 0.8);
        let y = laplace_from_mvg(&gamma, 2500, 13);
        let report = select_graph(&y, &uq(0.70, 5), &[0.05, 0.45]).unwrap();
        let first = report.per_rho.first().unwrap().pruned.n_edges();
        let last = report.per_rho.last().unwrap().pruned.n_edges();
        assert!(
            last <= first + 2,
            "edge count rose along the grid: {first} -> {last}"
        );
    }

    #[test]
    fn deterministic_report() {
        let gamma = structured_precision(&demo_graph5(), 0.7);
        let y = laplace_from_mvg(&gamma, 1000, 17);
        let a = select_graph(&y, &uq(0.70, 5), &[0.1, 0.2]).unwrap();
        let b = select_graph(&y, &uq(0.70, 5), &[0.1, 0.2]).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn fails_when_too_few_sites_succeed() {
        // 40 rows: every site fails the 30-excess requirement.
        let y = laplace_from_mvg(&DMatrix::identity(3, 3), 40, 19);
        match select_graph(&y, &uq(0.70, 3), &[0.2]) {
            Err(Error::SelectionFailed { succeeded, total }) => {
                assert_eq!(succeeded, 0);
                assert_eq!(total, 3);
            }
            other => panic!("expected SelectionFailed, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let y = laplace_from_mvg(&DMatrix::identity(3, 3), 500, 23);
        assert!(matches!(
            select_graph(&y, &uq(0.7, 3), &[]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            select_graph(&y, &uq(0.7, 3), &[0.0]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            select_graph(&y, &uq(0.7, 2)[..].to_vec().as_slice(), &[0.1]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn default_grid_spans_expected_range() {
        let g = default_rho_grid();
        assert_eq!(g.len(), 11);
        assert!((g[0] - 0.10).abs() < 1e-12);
        assert!((g[10] - 0.30).abs() < 1e-12);
    }
}
