//! The six data commands: gen, fit, select-graph, simulate, measure,
//! bootstrap. Each writes its artifacts plus a `run_meta.json` sidecar and
//! returns the process exit code (0 ok, 2 with warnings).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use extgraph::agg::agg_quantile;
use extgraph::glasso::Structure;
use extgraph::graph::Graph;
use extgraph::graphsel::{default_rho_grid, select_graph, GraphSelectionReport};
use extgraph::margins::{fit_margins, to_laplace, to_laplace_matrix};
use extgraph::measures::{bootstrap_curves, chi_u, eta_u, uniform_ranks, TailMeasure};
use extgraph::scmevm::{fit_model, residuals, FitConfig, FitMethod, ScmevmModel, MODEL_SCHEMA};
use extgraph::simulate::{simulate_tail, simulate_unconditional, SimulationConfig};
use extgraph::synthgen::{draw_params, gen_elliptical, gen_scmevm, GenKind, GenParams, GeneratorSpec};
use extgraph::util::{quantile, subseed};

use crate::cfg::{resolve_graph, StructureChoice};
use crate::error::{CliError, Result};
use crate::io::{
    ensure_dir, fmt_float, read_json, read_matrix_csv, write_json, write_matrix_csv,
    write_sidecar, write_table_csv,
};

/// Output directory and root seed shared by every command.
pub struct Common {
    pub out: PathBuf,
    pub seed: u64,
}

/// Maximum number of QQ points per residual component.
const QQ_POINTS: usize = 200;

fn require_input(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(CliError::Io(format!("no such file: {}", path.display())));
    }
    Ok(())
}

/// Truth sidecar for elliptical generators: the sample's parameters without
/// the data matrix itself.
#[derive(Serialize)]
struct EllipticalTruth {
    kind: GenKind,
    d: usize,
    n: usize,
    mu: Vec<f64>,
    #[serde(with = "extgraph::util::mat_serde")]
    sigma: DMatrix<f64>,
    #[serde(with = "extgraph::util::mat_serde")]
    precision: DMatrix<f64>,
    graph: Graph,
}

pub fn cmd_gen(kind: GenKind, graph: Graph, n: usize, common: &Common) -> Result<i32> {
    ensure_dir(&common.out)?;
    let d = graph.n_nodes();
    match kind {
        GenKind::ScmevmTrue => {
            let truth = draw_params(d, &graph, subseed(common.seed, 1), &GenParams::default())?;
            let mats = gen_scmevm(&truth, n, subseed(common.seed, 2))?;
            write_json(&common.out.join("truth.json"), &truth)?;
            for (idx, m) in mats.iter().enumerate() {
                let name = format!("site_{}.csv", idx + 1);
                write_matrix_csv(&common.out.join(name), &m.column_ids, &m.values)?;
            }
        }
        _ => {
            let spec = GeneratorSpec::new(kind, graph.clone(), n, common.seed);
            let samp = gen_elliptical(&spec)?;
            let ids: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
            write_matrix_csv(&common.out.join("data.csv"), &ids, &samp.data)?;
            let truth = EllipticalTruth {
                kind,
                d,
                n,
                mu: samp.mu,
                sigma: samp.sigma,
                precision: samp.precision,
                graph,
            };
            write_json(&common.out.join("truth.json"), &truth)?;
        }
    }
    write_sidecar(
        &common.out,
        "gen",
        common.seed,
        serde_json::json!({ "kind": kind, "n": n, "d": d }),
    )?;
    Ok(0)
}

/// Parameters shared by `fit` after flag/config resolution.
pub struct FitArgs {
    pub input: PathBuf,
    pub marginal_quantile: f64,
    pub dependence_quantile: f64,
    pub structure: StructureChoice,
    pub method: FitMethod,
    pub rho_grid: Option<Vec<f64>>,
}

/// Run graph selection on the Laplace-transformed input; shared by
/// `fit --structure select` and `select-graph`.
fn run_selection(
    data: &DMatrix<f64>,
    ids: &[String],
    marginal_quantile: f64,
    dependence_quantile: f64,
    rho_grid: &[f64],
) -> Result<GraphSelectionReport> {
    let margins = fit_margins(data, marginal_quantile)?;
    let y = to_laplace_matrix(data, ids, &margins)?;
    let u = to_laplace(dependence_quantile)?;
    Ok(select_graph(&y, &vec![u; data.ncols()], rho_grid)?)
}

pub fn cmd_fit(args: &FitArgs, common: &Common) -> Result<i32> {
    require_input(&args.input)?;
    ensure_dir(&common.out)?;
    let (data, ids) = read_matrix_csv(&args.input)?;

    let structure = match &args.structure {
        StructureChoice::Independent => Structure::Independent,
        StructureChoice::Saturated => Structure::Saturated,
        StructureChoice::Graphical(name) => Structure::Graphical(resolve_graph(name)?),
        StructureChoice::Select => {
            let grid = args.rho_grid.clone().unwrap_or_else(default_rho_grid);
            let report = run_selection(
                &data,
                &ids,
                args.marginal_quantile,
                args.dependence_quantile,
                &grid,
            )?;
            write_json(&common.out.join("selection.json"), &report)?;
            Structure::Graphical(report.final_graph)
        }
    };

    let cfg = FitConfig {
        marginal_quantile: args.marginal_quantile,
        dependence_quantile: args.dependence_quantile,
        site_quantiles: None,
        structure,
        method: args.method,
    };
    let model = fit_model(&data, &ids, &cfg)?;
    write_json(&common.out.join("model.json"), &model)?;
    write_fit_report(&model, &common.out)?;
    write_residual_qq(&model, &common.out)?;
    write_sidecar(
        &common.out,
        "fit",
        common.seed,
        serde_json::json!({
            "input": args.input.display().to_string(),
            "marginal_quantile": args.marginal_quantile,
            "dependence_quantile": args.dependence_quantile,
            "method": args.method,
            "structure": format!("{:?}", args.structure),
        }),
    )?;

    let troubled = model.partial || model.fits.iter().any(|f| !f.converged);
    if model.partial {
        eprintln!(
            "warning: {} of {} sites failed to fit; model is partial",
            model.failures.len(),
            model.dim()
        );
    }
    Ok(if troubled { 2 } else { 0 })
}

/// Per-site convergence table.
fn write_fit_report(model: &ScmevmModel, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for f in &model.fits {
        let n_boundary = f.dep.boundary.iter().filter(|b| **b).count();
        rows.push(vec![
            f.site.to_string(),
            f.n_excesses.to_string(),
            fmt_float(f.threshold),
            fmt_float(f.loglik),
            f.converged.to_string(),
            f.outer_iters.to_string(),
            n_boundary.to_string(),
        ]);
    }
    for fail in &model.failures {
        rows.push(vec![
            fail.site.to_string(),
            "0".into(),
            "".into(),
            "".into(),
            "failed".into(),
            "0".into(),
            "0".into(),
        ]);
    }
    rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(usize::MAX));
    write_table_csv(
        &out.join("fit_report.csv"),
        &["site", "n_excesses", "threshold", "loglik", "converged", "outer_iters", "n_boundary"],
        &rows,
    )
}

/// Empirical residual quantiles against fitted AGG quantiles, per site and
/// component, at probability points (k - 1/2)/m.
fn write_residual_qq(model: &ScmevmModel, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for f in &model.fits {
        let z = residuals(&model.laplace_data, f.site, f.threshold, &f.dep)?;
        let m = z.nrows().min(QQ_POINTS);
        for c in 0..z.ncols() {
            let col: Vec<f64> = (0..z.nrows()).map(|r| z[(r, c)]).collect();
            let agg = &f.residual.margins[c];
            for k in 1..=m {
                let p = (k as f64 - 0.5) / m as f64;
                rows.push(vec![
                    f.site.to_string(),
                    (c + 1).to_string(),
                    fmt_float(p),
                    fmt_float(quantile(&col, p)),
                    fmt_float(agg_quantile(p, agg)?),
                ]);
            }
        }
    }
    write_table_csv(
        &out.join("residual_qq.csv"),
        &["site", "component", "p", "empirical", "model"],
        &rows,
    )
}

pub struct SelectArgs {
    pub input: PathBuf,
    pub marginal_quantile: f64,
    pub dependence_quantile: f64,
    pub rho_grid: Option<Vec<f64>>,
}

pub fn cmd_select_graph(args: &SelectArgs, common: &Common) -> Result<i32> {
    require_input(&args.input)?;
    ensure_dir(&common.out)?;
    let (data, ids) = read_matrix_csv(&args.input)?;
    let grid = args.rho_grid.clone().unwrap_or_else(default_rho_grid);
    let report = run_selection(
        &data,
        &ids,
        args.marginal_quantile,
        args.dependence_quantile,
        &grid,
    )?;
    write_json(&common.out.join("selection.json"), &report)?;
    write_json(&common.out.join("final_graph.json"), &report.final_graph)?;
    for (idx, per_rho) in report.per_rho.iter().enumerate() {
        let rows: Vec<Vec<String>> = per_rho
            .weighted
            .weighted_edges()
            .map(|((j, k), w)| vec![j.to_string(), k.to_string(), fmt_float(w)])
            .collect();
        let name = format!("weighted_{}.csv", idx + 1);
        write_table_csv(&common.out.join(name), &["j", "k", "weight"], &rows)?;
    }
    write_sidecar(
        &common.out,
        "select-graph",
        common.seed,
        serde_json::json!({
            "input": args.input.display().to_string(),
            "marginal_quantile": args.marginal_quantile,
            "dependence_quantile": args.dependence_quantile,
            "rho_grid": grid,
        }),
    )?;
    Ok(if report.failures.is_empty() { 0 } else { 2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Tail,
    Unconditional,
}

pub struct SimulateArgs {
    pub model: PathBuf,
    pub mode: SimMode,
    pub u: Option<f64>,
    pub n_out: usize,
    pub oversample: usize,
}

pub fn cmd_simulate(args: &SimulateArgs, common: &Common) -> Result<i32> {
    require_input(&args.model)?;
    ensure_dir(&common.out)?;
    let model: ScmevmModel = read_json(&args.model)?;
    if model.schema != MODEL_SCHEMA {
        return Err(CliError::Config(format!(
            "model schema '{}' unsupported (expected {MODEL_SCHEMA})",
            model.schema
        )));
    }
    let u = args.u.unwrap_or_else(|| model.max_threshold());
    let cfg = SimulationConfig {
        u,
        n_out: args.n_out,
        oversample: args.oversample,
        seed: common.seed,
    };
    let sample = match args.mode {
        SimMode::Tail => simulate_tail(&model, &cfg)?,
        SimMode::Unconditional => simulate_unconditional(&model, &cfg, &model.laplace_data)?,
    };
    let ids = &model.laplace_data.column_ids;
    write_matrix_csv(&common.out.join("sim.csv"), ids, &sample.rows)?;
    write_matrix_csv(&common.out.join("sim_laplace.csv"), ids, &sample.laplace_rows)?;
    write_json(
        &common.out.join("sim_meta.json"),
        &serde_json::json!({
            "mode": args.mode,
            "u": u,
            "n_out": args.n_out,
            "oversample": args.oversample,
            "seed": common.seed,
            "ess": sample.ess,
            "degenerate_weights": sample.degenerate_weights,
            "p_tail": sample.p_tail,
        }),
    )?;
    write_sidecar(
        &common.out,
        "simulate",
        common.seed,
        serde_json::json!({
            "model": args.model.display().to_string(),
            "mode": args.mode,
            "u": u,
            "n_out": args.n_out,
            "oversample": args.oversample,
        }),
    )?;
    if sample.degenerate_weights {
        eprintln!("warning: effective sample size below n_out/10; increase --oversample");
        return Ok(2);
    }
    Ok(0)
}

pub struct MeasureArgs {
    pub input: PathBuf,
    pub measure: TailMeasure,
    pub columns: Option<Vec<usize>>,
    pub u_grid: Vec<f64>,
    /// None for point estimates (`measure`), Some for `bootstrap`.
    pub n_boot: Option<usize>,
}

fn select_columns(data: &DMatrix<f64>, columns: &Option<Vec<usize>>) -> Result<DMatrix<f64>> {
    let Some(cols) = columns else {
        return Ok(data.clone());
    };
    if cols.is_empty() || cols.iter().any(|&c| c == 0 || c > data.ncols()) {
        return Err(CliError::Config(format!(
            "column selection must use 1..={}",
            data.ncols()
        )));
    }
    let picked: Vec<_> = cols.iter().map(|&c| data.column(c - 1).into_owned()).collect();
    Ok(DMatrix::from_columns(&picked))
}

pub fn cmd_measure(args: &MeasureArgs, common: &Common, command: &str) -> Result<i32> {
    require_input(&args.input)?;
    ensure_dir(&common.out)?;
    let (data, _) = read_matrix_csv(&args.input)?;
    let sub = select_columns(&data, &args.columns)?;

    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match args.n_boot {
        Some(n_boot) => {
            let curve = bootstrap_curves(&sub, args.measure, &args.u_grid, n_boot, common.seed)?;
            let rows = (0..curve.u_grid.len())
                .map(|k| {
                    vec![
                        fmt_float(curve.u_grid[k]),
                        fmt_float(curve.values[k]),
                        fmt_float(curve.stderr[k]),
                    ]
                })
                .collect();
            (vec!["u", "estimate", "stderr"], rows)
        }
        None => match args.measure {
            TailMeasure::Chi => {
                let unif = uniform_ranks(&sub);
                let mut rows = Vec::new();
                for &u in &args.u_grid {
                    let (est, empty) = chi_u(&unif, u)?;
                    rows.push(vec![fmt_float(u), fmt_float(est), (empty as u8).to_string()]);
                }
                (vec!["u", "estimate", "no_joint_exceedances"], rows)
            }
            TailMeasure::Eta => {
                let mut rows = Vec::new();
                for &u in &args.u_grid {
                    rows.push(vec![fmt_float(u), fmt_float(eta_u(&sub, u)?)]);
                }
                (vec!["u", "estimate"], rows)
            }
        },
    };
    write_table_csv(&common.out.join("curve.csv"), &header, &rows)?;
    write_sidecar(
        &common.out,
        command,
        common.seed,
        serde_json::json!({
            "input": args.input.display().to_string(),
            "measure": args.measure,
            "columns": args.columns,
            "u_grid": args.u_grid,
            "n_boot": args.n_boot,
        }),
    )?;
    Ok(0)
}
