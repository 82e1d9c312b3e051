//! Command-line surface for the conditional-extremes library: synthetic
//! data generation, model fitting, graph selection, tail simulation,
//! dependence measures, bootstrap bands, and desk-scale reproduction
//! studies. Options resolve as flag > config-file key > default; every
//! command derives all randomness from one root seed and writes a
//! `run_meta.json` sidecar recording it.

mod cfg;
mod commands;
mod error;
mod io;
mod studies;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfg::{
    parse_f64_list, parse_kind, parse_method, parse_structure, parse_usize_list, pick, pick_req,
    resolve_graph, FileCfg,
};
use commands::{
    cmd_fit, cmd_gen, cmd_measure, cmd_select_graph, cmd_simulate, Common, FitArgs, MeasureArgs,
    SelectArgs, SimMode, SimulateArgs,
};
use error::{CliError, Result};
use extgraph::measures::TailMeasure;
use studies::{run_study, StudyOpts};

#[derive(Parser)]
#[command(name = "extgraph", version, about = "Conditional multivariate extremes on networks")]
struct Cli {
    /// Flat TOML config file (key = value); command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: logical cores).
    /// Results are identical for any value.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Root seed; all randomness in a run derives from it.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with a known-truth sidecar.
    Gen {
        /// scmevm | gaussian | laplace | student-t
        #[arg(long)]
        kind: Option<String>,
        /// demo5 | bench16 | path to a graph JSON file
        #[arg(long)]
        graph: Option<String>,
        /// Rows (per conditioning site for kind=scmevm).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the conditional extremes model to a CSV dataset.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Marginal GPD threshold quantile in (0,1).
        #[arg(long)]
        marginal_quantile: Option<f64>,
        /// Dependence threshold quantile in (0,1).
        #[arg(long)]
        dependence_quantile: Option<f64>,
        /// independent | saturated | graphical:<path> | select
        #[arg(long)]
        structure: Option<String>,
        /// one | two | three
        #[arg(long)]
        method: Option<String>,
        /// Penalty grid for structure=select, e.g. "0.2,0.21,0.22".
        #[arg(long)]
        rho_grid: Option<String>,
    },
    /// Infer the residual dependence graph from a CSV dataset.
    SelectGraph {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        marginal_quantile: Option<f64>,
        #[arg(long)]
        dependence_quantile: Option<f64>,
        #[arg(long)]
        rho_grid: Option<String>,
    },
    /// Simulate from a fitted model file.
    Simulate {
        /// Path to a model.json produced by `fit`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// tail | unconditional
        #[arg(long)]
        mode: Option<String>,
        /// Laplace-scale tail threshold (default: largest fitted threshold).
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        n_out: Option<usize>,
        /// Proposal multiplier for importance resampling.
        #[arg(long)]
        oversample: Option<usize>,
    },
    /// Point estimates of a tail-dependence measure over a quantile grid.
    Measure {
        #[arg(long)]
        input: Option<PathBuf>,
        /// chi | eta
        #[arg(long)]
        measure: Option<String>,
        /// 1-based column subset, e.g. "1,3" (default: all columns).
        #[arg(long)]
        columns: Option<String>,
        /// Quantile grid, e.g. "0.8,0.9,0.95".
        #[arg(long)]
        u_grid: Option<String>,
    },
    /// Bootstrap median and standard error of a measure over a grid.
    Bootstrap {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        measure: Option<String>,
        #[arg(long)]
        columns: Option<String>,
        #[arg(long)]
        u_grid: Option<String>,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Re-run a named desk-scale study end to end.
    Reproduce {
        /// s41_bias | s42_graph | s43_mixture-lite | supp_mvg
        #[arg(long)]
        study: Option<String>,
        /// Override the study's replicate count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the per-replicate sample size.
        #[arg(long)]
        n: Option<usize>,
        /// Override the per-event simulation size.
        #[arg(long)]
        n_sim: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("{}", err.json());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let file = FileCfg::load(cli.config.as_deref())?;

    #[cfg(feature = "parallel")]
    if let Some(t) = cli.threads.or(file.usize("threads")?) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.threads;

    let common = Common {
        out: pick(cli.out, file.path("output_dir")?, PathBuf::from("out")),
        seed: pick(cli.seed, file.u64("seed")?, 0),
    };

    match cli.cmd {
        Cmd::Gen { kind, graph, n } => {
            let kind = parse_kind(&pick_req(kind, file.str("kind")?, "--kind")?)?;
            let graph = resolve_graph(&pick_req(graph, file.str("graph")?, "--graph")?)?;
            let n = pick_req(n, file.usize("n")?, "--n")?;
            cmd_gen(kind, graph, n, &common)
        }
        Cmd::Fit { input, marginal_quantile, dependence_quantile, structure, method, rho_grid } => {
            let args = FitArgs {
                input: pick_req(input, file.path("input_path")?, "--input")?,
                marginal_quantile: pick(marginal_quantile, file.f64("marginal_quantile")?, 0.95),
                dependence_quantile: pick(
                    dependence_quantile,
                    file.f64("dependence_quantile")?,
                    0.80,
                ),
                structure: parse_structure(&pick(
                    structure,
                    file.str("structure")?,
                    "saturated".into(),
                ))?,
                method: parse_method(&pick(method, file.str("method")?, "three".into()))?,
                rho_grid: match pick(rho_grid, file.str("rho_grid")?, String::new()) {
                    s if s.is_empty() => None,
                    s => Some(parse_f64_list(&s, "--rho-grid")?),
                },
            };
            cmd_fit(&args, &common)
        }
        Cmd::SelectGraph { input, marginal_quantile, dependence_quantile, rho_grid } => {
            let args = SelectArgs {
                input: pick_req(input, file.path("input_path")?, "--input")?,
                marginal_quantile: pick(marginal_quantile, file.f64("marginal_quantile")?, 0.95),
                dependence_quantile: pick(
                    dependence_quantile,
                    file.f64("dependence_quantile")?,
                    0.70,
                ),
                rho_grid: match pick(rho_grid, file.str("rho_grid")?, String::new()) {
                    s if s.is_empty() => None,
                    s => Some(parse_f64_list(&s, "--rho-grid")?),
                },
            };
            cmd_select_graph(&args, &common)
        }
        Cmd::Simulate { model, mode, u, n_out, oversample } => {
            let mode = match pick(mode, file.str("mode")?, "tail".into()).as_str() {
                "tail" => SimMode::Tail,
                "unconditional" => SimMode::Unconditional,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown mode '{other}' (tail|unconditional)"
                    )))
                }
            };
            let args = SimulateArgs {
                model: pick_req(model, file.path("input_path")?, "--model")?,
                mode,
                u: u.or(file.f64("u")?),
                n_out: pick(n_out, file.usize("n_out")?, 1000),
                oversample: pick(
                    oversample,
                    file.usize("oversample")?,
                    extgraph::simulate::DEFAULT_OVERSAMPLE,
                ),
            };
            cmd_simulate(&args, &common)
        }
        Cmd::Measure { input, measure, columns, u_grid } => {
            let args = measure_args(&file, input, measure, columns, u_grid, None)?;
            cmd_measure(&args, &common, "measure")
        }
        Cmd::Bootstrap { input, measure, columns, u_grid, n_boot } => {
            let n_boot = pick(n_boot, file.usize("n_boot")?, 200);
            let args = measure_args(&file, input, measure, columns, u_grid, Some(n_boot))?;
            cmd_measure(&args, &common, "bootstrap")
        }
        Cmd::Reproduce { study, reps, n, n_sim } => {
            let id = pick_req(study, file.str("study")?, "--study")?;
            let opts = StudyOpts {
                reps: reps.or(file.usize("reps")?),
                n: n.or(file.usize("n")?),
                n_sim: n_sim.or(file.usize("n_sim")?),
            };
            run_study(&id, opts, &common.out, common.seed)
        }
    }
}

fn measure_args(
    file: &FileCfg,
    input: Option<PathBuf>,
    measure: Option<String>,
    columns: Option<String>,
    u_grid: Option<String>,
    n_boot: Option<usize>,
) -> Result<MeasureArgs> {
    let measure = match pick_req(measure, file.str("measure")?, "--measure")?.as_str() {
        "chi" => TailMeasure::Chi,
        "eta" => TailMeasure::Eta,
        other => return Err(CliError::Config(format!("unknown measure '{other}' (chi|eta)"))),
    };
    Ok(MeasureArgs {
        input: pick_req(input, file.path("input_path")?, "--input")?,
        measure,
        columns: match pick(columns, file.str("columns")?, String::new()) {
            s if s.is_empty() => None,
            s => Some(parse_usize_list(&s, "--columns")?),
        },
        u_grid: {
            let text = pick(
                u_grid,
                file.str("u_grid")?,
                "0.8,0.85,0.9,0.95,0.99".into(),
            );
            parse_f64_list(&text, "--u-grid")?
        },
        n_boot,
    })
}
