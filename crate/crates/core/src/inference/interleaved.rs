//! Interleaved HMC: each emitted sample is one centred transition followed
//! by one non-centred transition, with `f⁻¹` and `f` moving the state
//! between the two coordinate systems.
//!
//! Each iteration costs `2L` gradients plus one per accepted transition,
//! since an accepted move must re-evaluate the gradient in the other
//! coordinate system.

use crate::effect::{make_log_joint, ModelProgram};
use crate::error::Result;
use crate::reparam::{make_ncp, ReparamBijection};
use crate::rng::{chain_rng, keyed_rng};

use super::{
    adapt_step_size, assemble, chain_init, hmc::transition, par_map, sweep_leapfrog, ChainOutput,
    ChainState, HmcConfig, HmcRun, LogDensity,
};

/// Starting points and preconditioners for both kernels. Positions are
/// in the original (centred) space.
#[derive(Debug, Clone)]
pub struct InterleavedInit {
    pub inits: Vec<Vec<f64>>,
    pub precond_cp: Vec<f64>,
    pub precond_ncp: Vec<f64>,
}

/// Interleaved HMC on `model` and its non-centred version. Samples are
/// returned in the original space; the leapfrog count is shared by both
/// kernels and step sizes adapt separately.
pub fn interleaved_hmc(
    model: &ModelProgram,
    cfg: &HmcConfig,
    init: &InterleavedInit,
) -> Result<HmcRun> {
    let cp = make_log_joint(model)?;
    let (ncp_model, f) = make_ncp(model)?;
    let ncp = make_log_joint(&ncp_model)?;
    interleaved_hmc_with(&cp, &ncp, &f, cfg, init)
}

/// [`interleaved_hmc`] on explicit densities and bijection.
pub fn interleaved_hmc_with<C, N>(
    cp: &C,
    ncp: &N,
    f: &ReparamBijection,
    cfg: &HmcConfig,
    init: &InterleavedInit,
) -> Result<HmcRun>
where
    C: LogDensity + ?Sized,
    N: LogDensity + ?Sized,
{
    cfg.validate()?;
    chain_init(&init.inits, cfg.chains, 0)?;
    sweep_leapfrog(&cfg.leapfrog_candidates(), |l| {
        interleaved_fixed(cp, ncp, f, cfg, init, l)
    })
}

fn interleaved_fixed<C, N>(
    cp: &C,
    ncp: &N,
    f: &ReparamBijection,
    cfg: &HmcConfig,
    init: &InterleavedInit,
    num_leapfrog: usize,
) -> Result<HmcRun>
where
    C: LogDensity + ?Sized,
    N: LogDensity + ?Sized,
{
    let dim = cp.dim();
    let outputs = par_map(cfg.chains, |c| {
        let z0 = chain_init(&init.inits, cfg.chains, c)?;
        let aux0 = f.inverse(&z0)?;
        let mut centred = ChainState::new(
            cp,
            z0,
            cfg.initial_step_size,
            init.precond_cp.clone(),
            chain_rng(cfg.seed, c),
        )?;
        let mut noncentred = ChainState::new(
            ncp,
            aux0,
            cfg.initial_step_size,
            init.precond_ncp.clone(),
            keyed_rng(cfg.seed, &format!("chain/{c}/ncp")),
        )?;
        let mut synced = true;
        let mut draws = Vec::with_capacity(cfg.samples * dim);
        let mut accept_sum = 0.0;
        for t in 0..cfg.warmup_steps + cfg.samples {
            let (a_cp, a_ncp) = interleave(
                cp,
                ncp,
                f,
                &mut centred,
                &mut noncentred,
                &mut synced,
                num_leapfrog,
            )?;
            if t < cfg.adapt_steps {
                centred.step_size =
                    adapt_step_size(centred.step_size, a_cp, cfg.target_accept, cfg.adapt_rate);
                noncentred.step_size = adapt_step_size(
                    noncentred.step_size,
                    a_ncp,
                    cfg.target_accept,
                    cfg.adapt_rate,
                );
            }
            if t >= cfg.warmup_steps {
                accept_sum += a_cp + a_ncp;
                draws.extend_from_slice(&centred.position);
            }
        }
        Ok(ChainOutput {
            draws,
            grad_evals: centred.grad_evals() + noncentred.grad_evals(),
            accept_sum,
            step_sizes: vec![centred.step_size, noncentred.step_size],
        })
    })?;
    assemble(outputs, cfg.samples, dim, num_leapfrog, 2)
}

/// One centred then one non-centred step; the centred state ends at the
/// emitted sample. `synced` tracks whether the non-centred state sits at
/// `f⁻¹` of the centred one, in which case a rejected move needs no
/// coordinate change and no fresh gradient.
fn interleave<C, N>(
    cp: &C,
    ncp: &N,
    f: &ReparamBijection,
    centred: &mut ChainState,
    noncentred: &mut ChainState,
    synced: &mut bool,
    num_leapfrog: usize,
) -> Result<(f64, f64)>
where
    C: LogDensity + ?Sized,
    N: LogDensity + ?Sized,
{
    let (a_cp, moved) = transition(cp, centred, num_leapfrog)?;
    if moved || !*synced {
        let to_aux = f
            .inverse(&centred.position)
            .and_then(|aux| noncentred.reset_position(ncp, aux));
        match to_aux {
            Ok(()) => *synced = true,
            Err(e) if e.is_numerical() => {
                *synced = false;
                return Ok((a_cp, 0.0));
            }
            Err(e) => return Err(e),
        }
    }
    let (a_ncp, moved) = transition(ncp, noncentred, num_leapfrog)?;
    if moved {
        let to_original = f
            .forward(&noncentred.position)
            .and_then(|z| centred.reset_position(cp, z));
        match to_original {
            Ok(()) => {}
            Err(e) if e.is_numerical() => *synced = false,
            Err(e) => return Err(e),
        }
    }
    Ok((a_cp, a_ncp))
}
