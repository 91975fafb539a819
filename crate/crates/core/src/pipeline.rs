//! End-to-end runs of the four samplers: VI pre-processing for
//! initialisation and preconditioning, then HMC. Samples are always
//! reported in the original parameterisation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::effect::{make_log_joint, Layout, ModelProgram};
use crate::error::{Error, Result};
use crate::inference::{interleaved_hmc_with, run_hmc, run_hmc_mapped, HmcConfig, HmcRun, InterleavedInit};
use crate::reparam::{make_ncp, reparameterisable_sites, ParameterisationParams};
use crate::vi::{fit_mean_field, hmc_at_lambda, fit_vip, MeanFieldFit, ViConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cp,
    Ncp,
    Ihmc,
    Vip,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cp, Method::Ncp, Method::Ihmc, Method::Vip];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cp => "cp",
            Method::Ncp => "ncp",
            Method::Ihmc => "ihmc",
            Method::Vip => "vip",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// What the variational pre-processing produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViSummary {
    /// Highest final ELBO among the fits of this run.
    pub final_elbo: f64,
    /// Reverse sweeps spent on VI, over all fits and learning rates.
    pub grad_evals: u64,
    /// Fitted centring weights (VIP only).
    pub lambda: Option<ParameterisationParams>,
    /// λ* flattened in site order (VIP only).
    pub lambda_flat: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    /// Original-space latent layout of the draws.
    pub layout: Layout,
    pub run: HmcRun,
    pub vi: ViSummary,
}

fn summary(fits: &[&MeanFieldFit]) -> ViSummary {
    ViSummary {
        final_elbo: fits
            .iter()
            .map(|f| f.final_elbo)
            .fold(f64::NEG_INFINITY, f64::max),
        grad_evals: fits.iter().map(|f| f.grad_evals).sum(),
        lambda: None,
        lambda_flat: None,
    }
}

/// Runs one sampler on `model`.
pub fn run_method(
    model: &ModelProgram,
    method: Method,
    vi: &ViConfig,
    hmc: &HmcConfig,
) -> Result<MethodRun> {
    hmc.validate()?;
    vi.validate()?;
    let cp = make_log_joint(model)?;
    let layout = cp.layout().clone();
    let (run, vi_summary) = match method {
        Method::Cp => {
            let fit = fit_mean_field(model, vi)?;
            let inits = fit.params.draws(&fit.layout, hmc.chains, hmc.seed, "init")?;
            let precond = fit.params.flat_sigma(&fit.layout)?;
            (run_hmc(&cp, hmc, &inits, &precond)?, summary(&[&fit]))
        }
        Method::Ncp => {
            let (ncp_model, f) = make_ncp(model)?;
            let ncp = make_log_joint(&ncp_model)?;
            let fit = fit_mean_field(&ncp_model, vi)?;
            let inits = fit.params.draws(&fit.layout, hmc.chains, hmc.seed, "init")?;
            let precond = fit.params.flat_sigma(&fit.layout)?;
            let run = run_hmc_mapped(&ncp, &f, hmc, &inits, &precond)?;
            (run, summary(&[&fit]))
        }
        Method::Ihmc => {
            let (ncp_model, f) = make_ncp(model)?;
            let ncp = make_log_joint(&ncp_model)?;
            let fit_cp = fit_mean_field(model, vi)?;
            let fit_ncp = fit_mean_field(&ncp_model, vi)?;
            let init = InterleavedInit {
                inits: fit_cp
                    .params
                    .draws(&fit_cp.layout, hmc.chains, hmc.seed, "init")?,
                precond_cp: fit_cp.params.flat_sigma(&fit_cp.layout)?,
                precond_ncp: fit_ncp.params.flat_sigma(&fit_ncp.layout)?,
            };
            let run = interleaved_hmc_with(&cp, &ncp, &f, hmc, &init)?;
            (run, summary(&[&fit_cp, &fit_ncp]))
        }
        Method::Vip => {
            let fit = fit_vip(model, vi)?;
            let run = hmc_at_lambda(model, &fit.lambda_star, &fit.theta_star, hmc)?;
            let sites = reparameterisable_sites(model)?;
            let summary = ViSummary {
                final_elbo: fit.final_elbo,
                grad_evals: fit.grad_evals,
                lambda_flat: Some(fit.lambda_flat(&sites)),
                lambda: Some(fit.lambda_star),
            };
            (run, summary)
        }
    };
    Ok(MethodRun {
        method,
        layout,
        run,
        vi: vi_summary,
    })
}
