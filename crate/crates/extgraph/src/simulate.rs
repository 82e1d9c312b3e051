//! Fully parametric simulation from a fitted conditional model.
//!
//! Joint-tail realisations come from an importance scheme: propose from a
//! uniformly chosen site's conditional model given that site exceeding the
//! common threshold, weight each proposal by the reciprocal fraction of
//! exceeding components (so regions reachable from several sites are not
//! over-counted), then resample proportional to the weights. Unconditional
//! realisations mix tail draws with empirical body rows according to the
//! observed tail fraction. Conditional tail probabilities are estimated by
//! direct Monte Carlo from one site's conditional model.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::agg::{copula_cholesky, mvagg_sample_row};
use crate::error::{Error, Result};
use crate::margins::{from_laplace, marginal_cdf, to_laplace, LaplaceMatrix};
use crate::parallel;
use crate::scmevm::{ConditionalFit, ScmevmModel};
use crate::util::subseed;

/// Default proposal multiplier: 20 proposals per requested realisation.
pub const DEFAULT_OVERSAMPLE: usize = 20;

/// Effective sample size below `n_out * ESS_WARN_FRACTION` sets the
/// degenerate-weights flag on the output (a warning, not an error).
pub const ESS_WARN_FRACTION: f64 = 0.1;

/// Minimum Monte Carlo sample size for a tail-probability estimate.
pub const MIN_QUALIFYING_ROWS: usize = 100;

/// Proposals per parallel work chunk.
const PROPOSAL_CHUNK: usize = 1024;

/// Tail-simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Laplace-scale threshold defining the joint tail; must be at least the
    /// largest fitted per-site dependence threshold.
    pub u: f64,
    /// Number of realisations to return.
    pub n_out: usize,
    /// Proposal multiplier (at least 2).
    pub oversample: usize,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(u: f64, n_out: usize, seed: u64) -> Self {
        SimulationConfig {
            u,
            n_out,
            oversample: DEFAULT_OVERSAMPLE,
            seed,
        }
    }
}

/// Raw importance proposals before resampling.
#[derive(Debug, Clone)]
pub struct TailProposals {
    /// One proposal per row, on Laplace margins.
    pub laplace_rows: DMatrix<f64>,
    /// Conditioning site (1-based) that generated each row.
    pub sites: Vec<usize>,
    /// Importance weights, each in [1, d].
    pub weights: Vec<f64>,
}

/// Simulated realisations on both margins, with weight diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedSample {
    /// Realisations on the original data margins.
    #[serde(with = "crate::util::mat_serde")]
    pub rows: DMatrix<f64>,
    /// The same realisations on Laplace margins.
    #[serde(with = "crate::util::mat_serde")]
    pub laplace_rows: DMatrix<f64>,
    /// Effective sample size `(sum w)^2 / sum w^2` of the tail proposals;
    /// absent when no tail draw was needed.
    pub ess: Option<f64>,
    /// True when the effective sample size fell below `n_out / 10`,
    /// suggesting a larger oversample factor.
    pub degenerate_weights: bool,
    /// Observed tail fraction used by the unconditional mixture.
    pub p_tail: Option<f64>,
}

/// A conditional tail event `P[X_A > v_A | X_site > cond_level]` with all
/// levels on original data margins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailEvent {
    /// Conditioning node, 1-based.
    pub site: usize,
    /// Threshold for the conditioning component.
    pub cond_level: f64,
    /// `(node, level)` pairs the remaining components must exceed.
    pub targets: Vec<(usize, f64)>,
}

fn require_complete(model: &ScmevmModel) -> Result<()> {
    if model.partial || model.fits.len() != model.dim() {
        return Err(Error::PartialModel(format!(
            "simulation needs all {} site fits, have {}",
            model.dim(),
            model.fits.len()
        )));
    }
    Ok(())
}

fn check_config(model: &ScmevmModel, cfg: &SimulationConfig) -> Result<()> {
    if cfg.n_out == 0 {
        return Err(Error::InvalidConfig("n_out must be at least 1".into()));
    }
    if cfg.oversample < 2 {
        return Err(Error::InvalidConfig(format!(
            "oversample must be at least 2, got {}",
            cfg.oversample
        )));
    }
    let umax = model.max_threshold();
    if !cfg.u.is_finite() || cfg.u < umax {
        return Err(Error::DomainError {
            value: cfg.u,
            domain: "simulation threshold at or above every fitted threshold",
        });
    }
    Ok(())
}

/// Per-site pieces needed to draw one conditional proposal.
struct SiteSampler<'a> {
    fit: &'a ConditionalFit,
    /// 0-based indices of the dependent columns, ascending.
    dep_cols: Vec<usize>,
    chol: DMatrix<f64>,
}

fn site_samplers(model: &ScmevmModel) -> Result<Vec<SiteSampler<'_>>> {
    let d = model.dim();
    (1..=d)
        .map(|i| {
            let fit = model
                .fit_for(i)
                .ok_or_else(|| Error::PartialModel(format!("no fit for site {i}")))?;
            Ok(SiteSampler {
                fit,
                dep_cols: (0..d).filter(|&c| c != i - 1).collect(),
                chol: copula_cholesky(&fit.residual)?,
            })
        })
        .collect()
}

/// Draw one proposal row on Laplace margins; returns (row, site, weight).
fn draw_proposal<R: Rng>(
    samplers: &[SiteSampler<'_>],
    u: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, usize, f64)> {
    let d = samplers.len();
    let s = &samplers[rng.gen_range(0..d)];
    let yi = u + rng.sample::<f64, _>(Exp1);
    let z = mvagg_sample_row(&s.fit.residual.margins, &s.chol, rng)?;
    let mut row = vec![0.0; d];
    row[s.fit.site - 1] = yi;
    for (k, &c) in s.dep_cols.iter().enumerate() {
        row[c] = s.fit.dep.alpha[k] * yi + yi.powf(s.fit.dep.beta[k]) * z[k];
    }
    let exceed = row.iter().filter(|&&v| v > u).count();
    let weight = d as f64 / exceed as f64;
    Ok((row, s.fit.site, weight))
}

/// Generate `oversample * n_out` importance proposals from the fitted model.
///
/// Each proposal gets its own counter-based RNG stream, so the output is
/// independent of thread scheduling and chunking.
pub fn simulate_proposals(model: &ScmevmModel, cfg: &SimulationConfig) -> Result<TailProposals> {
    require_complete(model)?;
    check_config(model, cfg)?;
    let d = model.dim();
    let samplers = site_samplers(model)?;
    let n_prop = cfg.oversample * cfg.n_out;
    let n_chunks = n_prop.div_ceil(PROPOSAL_CHUNK);

    let chunks: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> =
        parallel::try_map_indexed(n_chunks, |c| {
            let lo = c * PROPOSAL_CHUNK;
            let hi = (lo + PROPOSAL_CHUNK).min(n_prop);
            let mut flat = Vec::with_capacity((hi - lo) * d);
            let mut sites = Vec::with_capacity(hi - lo);
            let mut weights = Vec::with_capacity(hi - lo);
            for l in lo..hi {
                let mut rng = ChaCha20Rng::seed_from_u64(subseed(cfg.seed, l as u64));
                let (row, site, w) = draw_proposal(&samplers, cfg.u, &mut rng)?;
                flat.extend_from_slice(&row);
                sites.push(site);
                weights.push(w);
            }
            Ok((flat, sites, weights))
        })?;

    let mut laplace_rows = DMatrix::zeros(n_prop, d);
    let mut sites = Vec::with_capacity(n_prop);
    let mut weights = Vec::with_capacity(n_prop);
    let mut r = 0;
    for (flat, s, w) in chunks {
        for row in flat.chunks_exact(d) {
            for (j, &v) in row.iter().enumerate() {
                laplace_rows[(r, j)] = v;
            }
            r += 1;
        }
        sites.extend(s);
        weights.extend(w);
    }
    Ok(TailProposals {
        laplace_rows,
        sites,
        weights,
    })
}

fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    s * s / s2
}

/// Resample `n_out` row indices with replacement, proportional to weights.
fn resample_indices(weights: &[f64], n_out: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for &w in weights {
        total += w;
        cum.push(total);
    }
    (0..n_out)
        .map(|_| {
            let x = rng.gen::<f64>() * total;
            cum.partition_point(|&c| c <= x).min(weights.len() - 1)
        })
        .collect()
}

fn pit_back(model: &ScmevmModel, laplace_rows: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(laplace_rows.nrows(), laplace_rows.ncols(), |r, j| {
        from_laplace(laplace_rows[(r, j)], &model.margins[j])
    })
}

/// Simulate `n_out` realisations from the joint tail (max component above
/// `cfg.u` on the Laplace scale) via importance resampling.
pub fn simulate_tail(model: &ScmevmModel, cfg: &SimulationConfig) -> Result<SimulatedSample> {
    let proposals = simulate_proposals(model, cfg)?;
    let ess = effective_sample_size(&proposals.weights);
    let degenerate = ess < cfg.n_out as f64 * ESS_WARN_FRACTION;

    let n_prop = proposals.weights.len();
    let mut rng = ChaCha20Rng::seed_from_u64(subseed(cfg.seed, n_prop as u64));
    let picks = resample_indices(&proposals.weights, cfg.n_out, &mut rng);

    let d = model.dim();
    let mut laplace_rows = DMatrix::zeros(cfg.n_out, d);
    for (t, &p) in picks.iter().enumerate() {
        laplace_rows.row_mut(t).copy_from(&proposals.laplace_rows.row(p));
    }
    let rows = pit_back(model, &laplace_rows);
    Ok(SimulatedSample {
        rows,
        laplace_rows,
        ess: Some(ess),
        degenerate_weights: degenerate,
        p_tail: None,
    })
}

// Seed-stream tags for the unconditional mixture; far above any plausible
// proposal index so derived streams never collide.
const TAG_TAIL: u64 = u64::MAX - 1;
const TAG_MIX: u64 = u64::MAX - 2;
const TAG_BODY: u64 = u64::MAX - 3;

/// Simulate unconditionally: each output row is a fresh tail draw with
/// probability equal to the observed tail fraction, otherwise a resampled
/// body row from the fitting data.
pub fn simulate_unconditional(
    model: &ScmevmModel,
    cfg: &SimulationConfig,
    empirical_body: &LaplaceMatrix,
) -> Result<SimulatedSample> {
    require_complete(model)?;
    check_config(model, cfg)?;
    let d = model.dim();
    if empirical_body.values.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "body data has {} columns, model {}",
            empirical_body.values.ncols(),
            d
        )));
    }
    let n = empirical_body.values.nrows();
    if n == 0 {
        return Err(Error::DegenerateInput("empty body data".into()));
    }

    let body_rows: Vec<usize> = (0..n)
        .filter(|&r| empirical_body.values.row(r).max() <= cfg.u)
        .collect();
    let p_tail = 1.0 - body_rows.len() as f64 / n as f64;

    let mut mix_rng = ChaCha20Rng::seed_from_u64(subseed(cfg.seed, TAG_MIX));
    let take_tail: Vec<bool> = (0..cfg.n_out).map(|_| mix_rng.gen_bool(p_tail)).collect();
    let k_tail = take_tail.iter().filter(|&&b| b).count();

    let tail = if k_tail > 0 {
        let tail_cfg = SimulationConfig {
            n_out: k_tail,
            seed: subseed(cfg.seed, TAG_TAIL),
            ..cfg.clone()
        };
        Some(simulate_tail(model, &tail_cfg)?)
    } else {
        None
    };

    let mut body_rng = ChaCha20Rng::seed_from_u64(subseed(cfg.seed, TAG_BODY));
    let mut laplace_rows = DMatrix::zeros(cfg.n_out, d);
    let mut next_tail = 0;
    for (t, &is_tail) in take_tail.iter().enumerate() {
        if is_tail {
            let src = tail.as_ref().expect("tail sample exists when k_tail > 0");
            laplace_rows.row_mut(t).copy_from(&src.laplace_rows.row(next_tail));
            next_tail += 1;
        } else {
            let r = body_rows[body_rng.gen_range(0..body_rows.len())];
            laplace_rows.row_mut(t).copy_from(&empirical_body.values.row(r));
        }
    }
    let rows = pit_back(model, &laplace_rows);
    Ok(SimulatedSample {
        rows,
        laplace_rows,
        ess: tail.as_ref().and_then(|t| t.ess),
        degenerate_weights: tail.as_ref().map_or(false, |t| t.degenerate_weights),
        p_tail: Some(p_tail),
    })
}

/// Monte Carlo estimate of `P[X_A > v_A | X_site > cond_level]` with its
/// binomial standard error, by direct simulation from the site's
/// conditional model.
pub fn tail_probability(
    model: &ScmevmModel,
    event: &TailEvent,
    n_sim: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    require_complete(model)?;
    let d = model.dim();
    if event.site == 0 || event.site > d {
        return Err(Error::InvalidNode {
            node: event.site,
            n_nodes: d,
        });
    }
    for &(node, _) in &event.targets {
        if node == 0 || node > d || node == event.site {
            return Err(Error::InvalidNode { node, n_nodes: d });
        }
    }
    if event.targets.is_empty() {
        return Ok((1.0, 0.0));
    }
    if n_sim < MIN_QUALIFYING_ROWS {
        return Err(Error::InsufficientTailRows {
            got: n_sim,
            need: MIN_QUALIFYING_ROWS,
        });
    }

    let fit = model
        .fit_for(event.site)
        .ok_or_else(|| Error::PartialModel(format!("no fit for site {}", event.site)))?;
    let yu = to_laplace(marginal_cdf(&model.margins[event.site - 1], event.cond_level))?;
    if yu < fit.threshold {
        return Err(Error::DomainError {
            value: yu,
            domain: "conditioning level at or above the fitted dependence threshold",
        });
    }
    // Exceedance events are invariant under the monotone margin transform,
    // so everything runs on the Laplace scale.
    let dep_cols: Vec<usize> = (0..d).filter(|&c| c != event.site - 1).collect();
    let levels: Vec<(usize, f64)> = event
        .targets
        .iter()
        .map(|&(node, v)| {
            let k = dep_cols
                .iter()
                .position(|&c| c == node - 1)
                .expect("target is a dependent column");
            to_laplace(marginal_cdf(&model.margins[node - 1], v)).map(|y| (k, y))
        })
        .collect::<Result<_>>()?;

    let chol = copula_cholesky(&fit.residual)?;
    let n_chunks = n_sim.div_ceil(PROPOSAL_CHUNK);
    let hit_counts: Vec<usize> = parallel::try_map_indexed(n_chunks, |c| {
        let lo = c * PROPOSAL_CHUNK;
        let hi = (lo + PROPOSAL_CHUNK).min(n_sim);
        let mut hits = 0;
        for l in lo..hi {
            let mut rng = ChaCha20Rng::seed_from_u64(subseed(seed, l as u64));
            let yi = yu + rng.sample::<f64, _>(Exp1);
            let z = mvagg_sample_row(&fit.residual.margins, &chol, &mut rng)?;
            let ok = levels.iter().all(|&(k, level)| {
                fit.dep.alpha[k] * yi + yi.powf(fit.dep.beta[k]) * z[k] > level
            });
            if ok {
                hits += 1;
            }
        }
        Ok(hits)
    })?;
    let hits: usize = hit_counts.iter().sum();
    let p = hits as f64 / n_sim as f64;
    let se = (p * (1.0 - p) / n_sim as f64).sqrt();
    Ok((p, se))
}
