//! HMC, interleaved HMC, and the chain orchestration and diagnostics
//! shared by them.

mod ess;
mod hmc;
mod interleaved;

use ndarray::{s, Array3, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effect::LogJointFn;
use crate::error::{Error, Result};
use crate::reparam::ReparamBijection;
use crate::rng::chain_rng;

pub use ess::{ess, ess_1d, ess_multi};
pub use hmc::{adapt_step_size, hmc_step, leapfrog, ChainState};
pub use interleaved::{interleaved_hmc, interleaved_hmc_with, InterleavedInit};

/// Leapfrog grid searched when the number of steps is [`Leapfrog::Auto`].
pub const LEAPFROG_GRID: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

/// A differentiable log density over a flat vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl LogDensity for LogJointFn {
    fn dim(&self) -> usize {
        LogJointFn::dim(self)
    }

    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        LogJointFn::value_and_grad(self, z)
    }
}

/// A [`LogDensity`] from a closure returning value and gradient.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.f)(z)
    }
}

/// Number of leapfrog steps per transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leapfrog {
    Fixed(usize),
    /// Run every value in [`LEAPFROG_GRID`] and keep the most efficient.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub num_leapfrog: Leapfrog,
    pub target_accept: f64,
    pub adapt_rate: f64,
    pub warmup_steps: usize,
    pub adapt_steps: usize,
    pub samples: usize,
    pub chains: usize,
    pub seed: u64,
    pub initial_step_size: f64,
}

impl HmcConfig {
    /// Small runs for a single machine: 8 chains, 500 warmup steps of
    /// which 300 adapt, 2000 samples.
    pub fn desk(seed: u64) -> Self {
        Self {
            num_leapfrog: Leapfrog::Auto,
            target_accept: 0.75,
            adapt_rate: 0.02,
            warmup_steps: 500,
            adapt_steps: 300,
            samples: 2000,
            chains: 8,
            seed,
            initial_step_size: 0.5,
        }
    }

    /// 200 chains, 2000 warmup steps of which 1500 adapt, 10000 samples.
    pub fn full(seed: u64) -> Self {
        Self {
            warmup_steps: 2000,
            adapt_steps: 1500,
            samples: 10_000,
            chains: 200,
            ..Self::desk(seed)
        }
    }

    pub fn with_leapfrog(mut self, num_leapfrog: Leapfrog) -> Self {
        self.num_leapfrog = num_leapfrog;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.adapt_steps > self.warmup_steps {
            return fail(format!(
                "adapt_steps ({}) exceeds warmup_steps ({})",
                self.adapt_steps, self.warmup_steps
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail(format!("target_accept must be in (0, 1), got {}", self.target_accept));
        }
        if !(self.adapt_rate >= 0.0 && self.adapt_rate.is_finite()) {
            return fail(format!("adapt_rate must be non-negative, got {}", self.adapt_rate));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return fail(format!(
                "initial_step_size must be positive, got {}",
                self.initial_step_size
            ));
        }
        if self.chains == 0 {
            return fail("at least one chain is required".into());
        }
        if self.num_leapfrog == Leapfrog::Fixed(0) {
            return fail("num_leapfrog must be at least 1".into());
        }
        Ok(())
    }

    fn leapfrog_candidates(&self) -> Vec<usize> {
        match self.num_leapfrog {
            Leapfrog::Fixed(l) => vec![l],
            Leapfrog::Auto => LEAPFROG_GRID.to_vec(),
        }
    }
}

/// Efficiency summary of a set of chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub ess_per_variable: Vec<f64>,
    pub min_ess: f64,
    /// All gradient evaluations of the run, warmup included.
    pub grad_evals: u64,
    pub ess_per_1000_grads: f64,
    pub accept_rate: f64,
    /// Between-chain standard error of ESS per 1000 gradients.
    pub stderr: f64,
    pub num_leapfrog: usize,
}

impl ChainDiagnostics {
    /// Diagnostics for `chains × draws × variables` samples.
    pub fn from_draws(
        draws: &Array3<f64>,
        grads_per_chain: &[u64],
        accept_rate: f64,
        num_leapfrog: usize,
    ) -> Self {
        let ess_per_variable = ess_multi(draws.view());
        let min_ess = min_or_zero(&ess_per_variable);
        let grad_evals = grads_per_chain.iter().sum::<u64>();
        let per_chain: Vec<f64> = draws
            .axis_iter(Axis(0))
            .zip(grads_per_chain)
            .map(|(chain, &g)| per_1000(min_or_zero(&ess(chain)), g))
            .collect();
        Self {
            min_ess,
            ess_per_1000_grads: per_1000(min_ess, grad_evals),
            ess_per_variable,
            grad_evals,
            accept_rate,
            stderr: standard_error(&per_chain),
            num_leapfrog,
        }
    }
}

fn min_or_zero(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn per_1000(ess: f64, grads: u64) -> f64 {
    if grads == 0 {
        0.0
    } else {
        1000.0 * ess / grads as f64
    }
}

fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// One row of a leapfrog sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_leapfrog: usize,
    pub ess_per_1000_grads: f64,
    pub min_ess: f64,
    pub grad_evals: u64,
}

/// Samples and diagnostics of a run.
#[derive(Debug, Clone)]
pub struct HmcRun {
    /// `chains × samples × dim`.
    pub draws: Array3<f64>,
    pub diagnostics: ChainDiagnostics,
    /// Final step sizes; one per chain, or two per chain for interleaved
    /// runs (centred then non-centred).
    pub step_sizes: Vec<Vec<f64>>,
    /// Every leapfrog setting tried, in grid order.
    pub sweep: Vec<SweepRow>,
    pub grads_per_chain: Vec<u64>,
}

impl HmcRun {
    /// Maps every draw through `f` (auxiliary to original coordinates)
    /// and recomputes the diagnostics there.
    pub fn map_to_original(self, f: &ReparamBijection) -> Result<HmcRun> {
        let (chains, samples, _) = self.draws.dim();
        let dim = f.original_layout().dim();
        let mut out = Array3::zeros((chains, samples, dim));
        for c in 0..chains {
            for s in 0..samples {
                let aux: Vec<f64> = self.draws.slice(s![c, s, ..]).to_vec();
                let z = f.forward(&aux)?;
                out.slice_mut(s![c, s, ..]).assign(&ArrayView1::from(&z[..]));
            }
        }
        let d = &self.diagnostics;
        let diagnostics =
            ChainDiagnostics::from_draws(&out, &self.grads_per_chain, d.accept_rate, d.num_leapfrog);
        Ok(HmcRun {
            draws: out,
            diagnostics,
            ..self
        })
    }
}

pub(crate) struct ChainOutput {
    pub draws: Vec<f64>,
    pub grad_evals: u64,
    pub accept_sum: f64,
    pub step_sizes: Vec<f64>,
}

/// Worker threads for chains: `REPARAM_THREADS` if set, else rayon's
/// default.
pub fn worker_threads() -> usize {
    std::env::var("REPARAM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Evaluates `job(i)` for `i < n` on a pool bounded by
/// [`worker_threads`]; results come back in index order.
pub(crate) fn par_map<T, F>(n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let threads = worker_threads().min(n).max(1);
    if threads == 1 {
        return (0..n).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(job).collect())
}

pub(crate) fn assemble(
    outputs: Vec<ChainOutput>,
    samples: usize,
    dim: usize,
    num_leapfrog: usize,
    transitions_per_sample: usize,
) -> Result<HmcRun> {
    let chains = outputs.len();
    let mut flat = Vec::with_capacity(chains * samples * dim);
    let mut grads = Vec::with_capacity(chains);
    let mut accept = 0.0;
    let mut step_sizes = Vec::with_capacity(chains);
    for out in outputs {
        flat.extend_from_slice(&out.draws);
        grads.push(out.grad_evals);
        accept += out.accept_sum;
        step_sizes.push(out.step_sizes);
    }
    let draws = Array3::from_shape_vec((chains, samples, dim), flat)
        .map_err(|e| Error::InvalidConfig(format!("draw array: {e}")))?;
    let transitions = chains * samples * transitions_per_sample;
    let accept_rate = if transitions == 0 {
        0.0
    } else {
        accept / transitions as f64
    };
    let diagnostics = ChainDiagnostics::from_draws(&draws, &grads, accept_rate, num_leapfrog);
    Ok(HmcRun {
        draws,
        diagnostics,
        step_sizes,
        sweep: Vec::new(),
        grads_per_chain: grads,
    })
}

/// Runs every candidate leapfrog count and keeps the run with the highest
/// ESS per gradient.
pub(crate) fn sweep_leapfrog<F>(candidates: &[usize], run: F) -> Result<HmcRun>
where
    F: Fn(usize) -> Result<HmcRun>,
{
    let mut best: Option<HmcRun> = None;
    let mut rows = Vec::with_capacity(candidates.len());
    for &l in candidates {
        let r = run(l)?;
        rows.push(SweepRow {
            num_leapfrog: l,
            ess_per_1000_grads: r.diagnostics.ess_per_1000_grads,
            min_ess: r.diagnostics.min_ess,
            grad_evals: r.diagnostics.grad_evals,
        });
        let better = best.as_ref().is_none_or(|b| {
            r.diagnostics.ess_per_1000_grads > b.diagnostics.ess_per_1000_grads
        });
        if better {
            best = Some(r);
        }
    }
    let mut best = best.ok_or_else(|| Error::InvalidConfig("empty leapfrog grid".into()))?;
    best.sweep = rows;
    Ok(best)
}

/// Per-chain initial positions: either one shared vector or one per chain.
pub(crate) fn chain_init(inits: &[Vec<f64>], chains: usize, index: usize) -> Result<Vec<f64>> {
    match inits.len() {
        1 => Ok(inits[0].clone()),
        n if n == chains => Ok(inits[index].clone()),
        n => Err(Error::InvalidConfig(format!(
            "need 1 or {chains} initial positions, got {n}"
        ))),
    }
}

/// Samples `target` with HMC. `inits` holds one shared start or one per
/// chain. With [`Leapfrog::Auto`] every grid value is run and the most
/// efficient run is returned along with the sweep table.
pub fn run_hmc<D: LogDensity + ?Sized>(
    target: &D,
    cfg: &HmcConfig,
    inits: &[Vec<f64>],
    precond: &[f64],
) -> Result<HmcRun> {
    cfg.validate()?;
    chain_init(inits, cfg.chains, 0)?;
    sweep_leapfrog(&cfg.leapfrog_candidates(), |l| run_hmc_fixed(target, cfg, inits, precond, l))
}

/// [`run_hmc`] on a reparameterised target whose draws are mapped to the
/// original space through `f` before diagnostics, so the leapfrog sweep
/// compares runs where the samples are reported.
pub fn run_hmc_mapped<D: LogDensity + ?Sized>(
    target: &D,
    f: &ReparamBijection,
    cfg: &HmcConfig,
    inits: &[Vec<f64>],
    precond: &[f64],
) -> Result<HmcRun> {
    cfg.validate()?;
    chain_init(inits, cfg.chains, 0)?;
    sweep_leapfrog(&cfg.leapfrog_candidates(), |l| {
        run_hmc_fixed(target, cfg, inits, precond, l)?.map_to_original(f)
    })
}

fn run_hmc_fixed<D: LogDensity + ?Sized>(
    target: &D,
    cfg: &HmcConfig,
    inits: &[Vec<f64>],
    precond: &[f64],
    num_leapfrog: usize,
) -> Result<HmcRun> {
    let dim = target.dim();
    let outputs = par_map(cfg.chains, |c| {
        let mut state = ChainState::new(
            target,
            chain_init(inits, cfg.chains, c)?,
            cfg.initial_step_size,
            precond.to_vec(),
            chain_rng(cfg.seed, c),
        )?;
        for t in 0..cfg.warmup_steps {
            let alpha = hmc_step(target, &mut state, num_leapfrog)?;
            if t < cfg.adapt_steps {
                state.step_size =
                    adapt_step_size(state.step_size, alpha, cfg.target_accept, cfg.adapt_rate);
            }
        }
        let mut draws = Vec::with_capacity(cfg.samples * dim);
        let mut accept_sum = 0.0;
        for _ in 0..cfg.samples {
            accept_sum += hmc_step(target, &mut state, num_leapfrog)?;
            draws.extend_from_slice(&state.position);
        }
        Ok(ChainOutput {
            draws,
            grad_evals: state.grad_evals(),
            accept_sum,
            step_sizes: vec![state.step_size],
        })
    })?;
    assemble(outputs, cfg.samples, dim, num_leapfrog, 1)
}
