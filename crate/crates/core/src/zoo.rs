//! Benchmark models. Scale parameters are sampled on the log scale as
//! Normal latents; likelihood sites are conditioned on the dataset.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::{dot, Var};
use crate::data::DatasetBundle;
use crate::effect::{condition, Distribution, ModelProgram};
use crate::error::{Error, Result};
use crate::oracle::ConjugateModelSpec;

fn consts<'t>(xs: &[f64]) -> Vec<Var<'t>> {
    xs.iter().map(|&x| Var::constant(x)).collect()
}

fn observe(model: ModelProgram, site: &str, values: &[f64]) -> Result<ModelProgram> {
    condition(&model, &BTreeMap::from([(site.to_string(), values.to_vec())]))
}

/// `z ~ N(0, 3)`, `x ~ N(0, exp(z/2))`; nothing observed.
pub fn build_funnel() -> ModelProgram {
    ModelProgram::new("funnel", |ctx| {
        let z = ctx.sample("z", Distribution::normal(0.0, 3.0))?;
        ctx.sample("x", Distribution::normal(0.0, (z / 2.0).exp()))?;
        Ok(())
    })
}

/// `θ ~ N(0, 1)`, `μ ~ N(θ, σ_μ)`, `y_n ~ N(μ, σ)`, with `y` observed.
pub fn build_conjugate(spec: &ConjugateModelSpec, y: &[f64]) -> Result<ModelProgram> {
    if y.len() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            actual: y.len(),
        });
    }
    let (sigma_mu, sigma, n) = (spec.sigma_mu, spec.sigma, spec.n);
    let model = ModelProgram::new("conjugate", move |ctx| {
        let theta = ctx.sample("theta", Distribution::normal(0.0, 1.0))?;
        let mu = ctx.sample("mu", Distribution::normal(theta, sigma_mu))?;
        ctx.sample_vec("y", n, Distribution::normal(mu, sigma))?;
        Ok(())
    });
    observe(model, "y", y)
}

/// Eight schools: `μ ~ N(0, 5)`, `log τ ~ N(0, 5)`, `θ_i ~ N(μ, τ)`,
/// `y_i ~ N(θ_i, σ_i)`.
pub fn build_eight_schools(data: &DatasetBundle) -> Result<ModelProgram> {
    let y = data.column("y")?.to_vec();
    let sigma: Arc<[f64]> = data.column("sigma")?.into();
    let n = y.len();
    let model = ModelProgram::new("eight_schools", move |ctx| {
        let mu = ctx.sample("mu", Distribution::normal(0.0, 5.0))?;
        let log_tau = ctx.sample("log_tau", Distribution::normal(0.0, 5.0))?;
        let theta = ctx.sample_vec("theta", n, Distribution::normal(mu, log_tau.exp()))?;
        ctx.sample_vec("y", n, Distribution::normal_vec(theta, consts(&sigma)))?;
        Ok(())
    });
    observe(model, "y", &y)
}

/// Radon: `μ, a, b ~ N(0, 1)`, `log σ ~ N(0, 1)`,
/// `m_c ~ N(μ + a·u_c, 1)`, `log r_i ~ N(m_{c[i]} + b·x_i, σ)`.
pub fn build_radon(data: &DatasetBundle) -> Result<ModelProgram> {
    let uranium: Arc<[f64]> = data.per_group("uranium", "county_idx")?.into();
    let county: Arc<[usize]> = data.index("county_idx")?.into();
    let floor: Arc<[f64]> = data.column("floor")?.into();
    let log_radon = data.column("log_radon")?.to_vec();
    let (c, h) = (uranium.len(), county.len());
    let model = ModelProgram::new("radon", move |ctx| {
        let mu = ctx.sample("mu", Distribution::normal(0.0, 1.0))?;
        let a = ctx.sample("a", Distribution::normal(0.0, 1.0))?;
        let b = ctx.sample("b", Distribution::normal(0.0, 1.0))?;
        let log_sigma = ctx.sample("log_sigma", Distribution::normal(0.0, 1.0))?;
        let m_loc = uranium.iter().map(|&u| mu + a * u).collect();
        let m = ctx.sample_vec("m", c, Distribution::normal_vec(m_loc, vec![Var::constant(1.0)]))?;
        let loc = county
            .iter()
            .zip(floor.iter())
            .map(|(&ci, &x)| m[ci] + b * x)
            .collect();
        ctx.sample_vec(
            "log_radon",
            h,
            Distribution::normal_vec(loc, vec![log_sigma.exp()]),
        )?;
        Ok(())
    });
    observe(model, "log_radon", &log_radon)
}

/// German credit: `log τ₀ ~ N(0, 10)`, `log τ_d ~ N(log τ₀, 1)`,
/// `β_d ~ N(0, τ_d)`, `y ~ Bernoulli(sigmoid(Xβ))`.
pub fn build_german_credit(data: &DatasetBundle) -> Result<ModelProgram> {
    let x: Arc<[Vec<f64>]> = data.feature_rows()?.into();
    let label = data.column("label")?.to_vec();
    let (n, d) = (label.len(), data.features.len());
    let model = ModelProgram::new("german_credit", move |ctx| {
        let log_tau0 = ctx.sample("log_tau0", Distribution::normal(0.0, 10.0))?;
        let log_tau = ctx.sample_vec("log_tau", d, Distribution::normal(log_tau0, 1.0))?;
        let tau = log_tau.iter().map(|l| l.exp()).collect();
        let beta = ctx.sample_vec(
            "beta",
            d,
            Distribution::normal_vec(vec![Var::constant(0.0)], tau),
        )?;
        let logits = x.iter().map(|row| dot(&beta, row)).collect();
        ctx.sample_vec("label", n, Distribution::bernoulli_logits(logits))?;
        Ok(())
    });
    observe(model, "label", &label)
}

/// Election '88: `β_d ~ N(0, 100)`, `μ ~ N(0, 100)`, `log τ ~ N(0, 10)`,
/// `α_s ~ N(μ, τ)`, `y_i ~ Bernoulli(sigmoid(α_{s[i]} + βᵀx_i))`.
pub fn build_election88(data: &DatasetBundle) -> Result<ModelProgram> {
    let x: Arc<[Vec<f64>]> = data.feature_rows()?.into();
    let state: Arc<[usize]> = data.index("state_idx")?.into();
    let outcome = data.column("outcome")?.to_vec();
    let (n, d, s) = (outcome.len(), data.features.len(), data.groups("state_idx")?);
    let model = ModelProgram::new("election88", move |ctx| {
        let beta = ctx.sample_vec("beta", d, Distribution::normal(0.0, 100.0))?;
        let mu = ctx.sample("mu", Distribution::normal(0.0, 100.0))?;
        let log_tau = ctx.sample("log_tau", Distribution::normal(0.0, 10.0))?;
        let alpha = ctx.sample_vec("alpha", s, Distribution::normal(mu, log_tau.exp()))?;
        let logits = x
            .iter()
            .zip(state.iter())
            .map(|(row, &si)| alpha[si] + dot(&beta, row))
            .collect();
        ctx.sample_vec("outcome", n, Distribution::bernoulli_logits(logits))?;
        Ok(())
    });
    observe(model, "outcome", &outcome)
}

/// Electric Company: `μ_g ~ N(0, 1)`, `a_p ~ N(μ_{g[p]}, 1)`,
/// `b_g ~ N(0, 100)`, `log σ_g ~ N(0, 1)`,
/// `y_i ~ N(a_{p[i]} + b_{g[i]}·x_i, σ_{g[i]})`.
pub fn build_electric(data: &DatasetBundle) -> Result<ModelProgram> {
    let pair: Arc<[usize]> = data.index("pair_idx")?.into();
    let grade: Arc<[usize]> = data.index("grade_idx")?.into();
    let treated: Arc<[f64]> = data.column("treated")?.into();
    let score = data.column("score")?.to_vec();
    let (n, p, g) = (score.len(), data.groups("pair_idx")?, data.groups("grade_idx")?);
    let mut grade_of_pair = vec![0; p];
    for (&pi, &gi) in pair.iter().zip(grade.iter()) {
        grade_of_pair[pi] = gi;
    }
    let grade_of_pair: Arc<[usize]> = grade_of_pair.into();
    let model = ModelProgram::new("electric", move |ctx| {
        let mu = ctx.sample_vec("mu", g, Distribution::normal(0.0, 1.0))?;
        let a_loc = grade_of_pair.iter().map(|&gp| mu[gp]).collect();
        let a = ctx.sample_vec("a", p, Distribution::normal_vec(a_loc, vec![Var::constant(1.0)]))?;
        let b = ctx.sample_vec("b", g, Distribution::normal(0.0, 100.0))?;
        let log_sigma = ctx.sample_vec("log_sigma", g, Distribution::normal(0.0, 1.0))?;
        let sigma: Vec<Var> = log_sigma.iter().map(|l| l.exp()).collect();
        let mut loc = Vec::with_capacity(n);
        let mut scale = Vec::with_capacity(n);
        for i in 0..n {
            loc.push(a[pair[i]] + b[grade[i]] * treated[i]);
            scale.push(sigma[grade[i]]);
        }
        ctx.sample_vec("score", n, Distribution::normal_vec(loc, scale))?;
        Ok(())
    });
    observe(model, "score", &score)
}

fn conjugate_from(data: &DatasetBundle) -> Result<ModelProgram> {
    let y = data.column("y")?;
    build_conjugate(&ConjugateModelSpec::new(1.0, 1.0, y.len())?, y)
}

fn funnel_from(_: &DatasetBundle) -> Result<ModelProgram> {
    Ok(build_funnel())
}

/// A named benchmark model and the dataset it reads.
#[derive(Debug, Clone, Copy)]
pub struct ModelEntry {
    pub name: &'static str,
    /// Dataset schema name, see [`crate::data::load_dataset`].
    pub dataset: &'static str,
    /// Fixture file name, if the model reads data.
    pub file: Option<&'static str>,
    pub build: fn(&DatasetBundle) -> Result<ModelProgram>,
}

pub const MODELS: [ModelEntry; 7] = [
    ModelEntry {
        name: "funnel",
        dataset: "funnel",
        file: None,
        build: funnel_from,
    },
    ModelEntry {
        name: "conjugate",
        dataset: "conjugate",
        file: Some("conjugate.csv"),
        build: conjugate_from,
    },
    ModelEntry {
        name: "eight_schools",
        dataset: "eight_schools",
        file: Some("eight_schools.csv"),
        build: build_eight_schools,
    },
    ModelEntry {
        name: "radon",
        dataset: "radon",
        file: Some("radon.csv"),
        build: build_radon,
    },
    ModelEntry {
        name: "german_credit",
        dataset: "german_credit",
        file: Some("german_credit.csv"),
        build: build_german_credit,
    },
    ModelEntry {
        name: "election88",
        dataset: "election",
        file: Some("election.csv"),
        build: build_election88,
    },
    ModelEntry {
        name: "electric",
        dataset: "electric",
        file: Some("electric.csv"),
        build: build_electric,
    },
];

pub fn entry(name: &str) -> Result<&'static ModelEntry> {
    MODELS
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown model `{name}`")))
}
