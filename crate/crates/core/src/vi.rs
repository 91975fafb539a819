//! Mean-field variational inference with reparameterised ELBO gradients,
//! and the joint fit of variational and centring parameters (VIP).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{normal_log_density_sum, softplus, softplus_inverse, sum, Tape, Var};
use crate::effect::{
    handle, make_log_joint, run_forward, Distribution, Handler, Layout, LogJointFn, ModelProgram,
    Next, ParamBinding, SampleRequest,
};
use crate::error::{Error, Result};
use crate::inference::{par_map, run_hmc_mapped, HmcConfig, HmcRun};
use crate::reparam::{
    lambda_key, make_vip, make_vip_learnable, reparameterisable_sites, ParameterisationParams,
};
use crate::rng::keyed_rng;

/// Learning rates tried by the fits.
pub const LR_GRID: [f64; 5] = [0.02, 0.05, 0.1, 0.2, 0.4];

/// Steps averaged for the reported final ELBO.
pub const FINAL_ELBO_WINDOW: usize = 100;

/// Mean-field Gaussian parameters keyed by site; `σ = softplus(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: BTreeMap<String, Vec<f64>>,
    pub sigma_unconstrained: BTreeMap<String, Vec<f64>>,
}

impl VariationalParams {
    /// `μ = 0`, `σ = 1` for every site of `layout`.
    pub fn init(layout: &Layout) -> Self {
        let u1 = softplus_inverse(1.0);
        Self {
            mu: layout
                .slots()
                .iter()
                .map(|s| (s.name.clone(), vec![0.0; s.len]))
                .collect(),
            sigma_unconstrained: layout
                .slots()
                .iter()
                .map(|s| (s.name.clone(), vec![u1; s.len]))
                .collect(),
        }
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.mu.values().chain(self.sigma_unconstrained.values()).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(map: &BTreeMap<String, Vec<f64>>, layout: &Layout) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(layout.dim());
        for slot in layout.slots() {
            let v = map
                .get(&slot.name)
                .ok_or_else(|| Error::UnknownSite(slot.name.clone()))?;
            if v.len() != slot.len {
                return Err(Error::DimensionMismatch {
                    expected: slot.len,
                    actual: v.len(),
                });
            }
            out.extend_from_slice(v);
        }
        Ok(out)
    }

    /// Means in layout order.
    pub fn flat_mu(&self, layout: &Layout) -> Result<Vec<f64>> {
        Self::flat(&self.mu, layout)
    }

    /// Scales in layout order.
    pub fn flat_sigma(&self, layout: &Layout) -> Result<Vec<f64>> {
        Ok(Self::flat(&self.sigma_unconstrained, layout)?
            .into_iter()
            .map(softplus)
            .collect())
    }

    fn from_flat(layout: &Layout, mu: &[f64], u: &[f64]) -> Result<Self> {
        Ok(Self {
            mu: layout.split(mu)?,
            sigma_unconstrained: layout.split(u)?,
        })
    }

    /// `n` draws from q, each from its own stream under `(seed, label)`.
    pub fn draws(&self, layout: &Layout, n: usize, seed: u64, label: &str) -> Result<Vec<Vec<f64>>> {
        let mu = self.flat_mu(layout)?;
        let sigma = self.flat_sigma(layout)?;
        Ok((0..n)
            .map(|i| {
                let mut rng = keyed_rng(seed, &format!("{label}/{i}"));
                mu.iter()
                    .zip(&sigma)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect())
    }
}

/// Binding key of the variational mean of `site`.
pub fn q_loc_key(site: &str) -> String {
    format!("q_loc/{site}")
}

/// Binding key of the unconstrained variational scale of `site`.
pub fn q_scale_key(site: &str) -> String {
    format!("q_scale/{site}")
}

/// Replaces every latent site by an independent `N(μ, softplus(u))` and
/// drops observed sites. Parameters bound under [`q_loc_key`] and
/// [`q_scale_key`] take precedence over the stored ones.
#[derive(Debug, Clone)]
pub struct MeanField {
    params: VariationalParams,
}

impl MeanField {
    pub fn new(params: VariationalParams) -> Self {
        Self { params }
    }

    fn values<'t>(
        &self,
        next: &Next<'_, 't>,
        key: String,
        stored: &BTreeMap<String, Vec<f64>>,
        site: &str,
        len: usize,
    ) -> Result<Vec<Var<'t>>> {
        if let Some(v) = next.param(&key) {
            return Ok(v.to_vec());
        }
        let v = stored
            .get(site)
            .ok_or_else(|| Error::UnknownSite(site.to_string()))?;
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: v.len(),
            });
        }
        Ok(v.iter().map(|&x| Var::constant(x)).collect())
    }
}

impl Handler for MeanField {
    fn handle<'t>(&self, req: SampleRequest<'t>, next: &mut Next<'_, 't>) -> Result<Vec<Var<'t>>> {
        if let Some(obs) = &req.observed {
            return Ok(obs.iter().map(|&x| Var::constant(x)).collect());
        }
        if !matches!(req.dist, Distribution::Normal { .. }) {
            return Err(Error::InvalidDistribution {
                site: req.name.clone(),
                reason: "mean-field family covers Normal latents only".into(),
            });
        }
        let loc = self.values(next, q_loc_key(&req.name), &self.params.mu, &req.name, req.len)?;
        let scale = self
            .values(
                next,
                q_scale_key(&req.name),
                &self.params.sigma_unconstrained,
                &req.name,
                req.len,
            )?
            .into_iter()
            .map(Var::softplus)
            .collect();
        next.emit(SampleRequest {
            name: req.name,
            dist: Distribution::normal_vec(loc, scale),
            len: req.len,
            observed: None,
            inverse_hint: None,
        })
    }
}

/// The mean-field family over the latents of `model`, initialised at
/// `μ = 0`, `σ = 1`. The log joint of the returned program is `log q`.
pub fn make_variational(model: &ModelProgram) -> Result<(ModelProgram, VariationalParams)> {
    let layout = run_forward(model, 0)?.latent_layout();
    let params = VariationalParams::init(&layout);
    Ok((variational_model(model, &params), params))
}

/// The mean-field program of `model` at fixed `params`.
pub fn variational_model(model: &ModelProgram, params: &VariationalParams) -> ModelProgram {
    handle(model, &[Arc::new(MeanField::new(params.clone()))])
}

/// Adam with the step-dependent learning rate `α`, `α/5` after 1000 steps
/// and `α/20` after 2000. `step` minimises.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(n: usize, base_lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }

    /// Learning rate used by (1-based) step `t`.
    pub fn learning_rate(&self, t: u64) -> f64 {
        match t {
            0..=1000 => self.base_lr,
            1001..=2000 => self.base_lr / 5.0,
            _ => self.base_lr / 20.0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        self.t += 1;
        let lr = self.learning_rate(self.t);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// [`AdamState::step`] as a value-returning function.
pub fn adam_step(
    mut state: AdamState,
    mut params: Vec<f64>,
    grad: &[f64],
) -> Result<(AdamState, Vec<f64>)> {
    state.step(&mut params, grad)?;
    Ok((state, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViConfig {
    pub steps: usize,
    pub n_mc: usize,
    pub lr_grid: Vec<f64>,
    pub seed: u64,
}

impl ViConfig {
    /// 1500 steps with 64 Monte Carlo draws each.
    pub fn desk(seed: u64) -> Self {
        Self {
            steps: 1500,
            n_mc: 64,
            lr_grid: LR_GRID.to_vec(),
            seed,
        }
    }

    /// 3000 steps with 256 Monte Carlo draws each.
    pub fn full(seed: u64) -> Self {
        Self {
            steps: 3000,
            n_mc: 256,
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig(
                "VI needs at least one step and one Monte Carlo draw".into(),
            ));
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|lr| !(*lr > 0.0)) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive and non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// ELBO value and gradients from one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    pub grad_mu: Vec<f64>,
    pub grad_sigma_unconstrained: Vec<f64>,
    /// With respect to the unconstrained centring parameters, in the order
    /// of the reparameterisable sites.
    pub grad_lambda: Vec<f64>,
}

/// ELBO of q against a log joint whose handlers may read centring
/// parameters from the binding.
struct Objective {
    logp: LogJointFn,
    lambda_sites: Vec<(String, usize)>,
}

impl Objective {
    fn dim(&self) -> usize {
        self.logp.dim()
    }

    /// Flat parameters are `[μ, u, λ̃]`; `noise` holds `n_mc × dim`
    /// standard normals.
    fn value_and_grad(&self, flat: &[f64], noise: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        let n_mc = noise.len() / d.max(1);
        let tape = Tape::with_capacity(64 * n_mc * d.max(1));
        let vars = tape.vars(flat);
        let (mu, rest) = vars.split_at(d);
        let (u, lam) = rest.split_at(d);
        let sigma: Vec<Var> = u.iter().map(|v| v.softplus()).collect();
        let mut binding = ParamBinding::new();
        let mut off = 0;
        for (site, len) in &self.lambda_sites {
            binding.insert(lambda_key(site), lam[off..off + len].to_vec());
            off += len;
        }
        let mut terms = Vec::with_capacity(n_mc);
        for eps in noise.chunks(d) {
            let z: Vec<Var> = mu
                .iter()
                .zip(&sigma)
                .zip(eps)
                .map(|((m, s), e)| *m + *s * *e)
                .collect();
            let lp = self.logp.eval_on_tape(&tape, &z, binding.clone())?;
            let lq = normal_log_density_sum(&z, mu, &sigma);
            terms.push(lp - lq);
        }
        let elbo = sum(&terms) / n_mc as f64;
        let value = elbo.value();
        if !value.is_finite() {
            return Err(Error::NonFiniteEvaluation(format!("ELBO estimate {value}")));
        }
        let grad = tape.gradient(elbo).wrt_all(&vars);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteEvaluation("ELBO gradient".into()));
        }
        Ok((value, grad))
    }
}

fn noise(seed: u64, label: &str, n: usize) -> Vec<f64> {
    let mut rng = keyed_rng(seed, label);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Monte Carlo ELBO of `q` against `logp` with pathwise gradients.
/// `lambda` supplies unconstrained centring parameters when `logp` comes
/// from a learnable VIP model.
pub fn elbo_estimate(
    logp: &LogJointFn,
    q: &VariationalParams,
    lambda: Option<&ParameterisationParams>,
    n_mc: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
    }
    let layout = logp.layout();
    let d = layout.dim();
    let mut flat = q.flat_mu(layout)?;
    flat.extend(VariationalParams::flat(&q.sigma_unconstrained, layout)?);
    let mut lambda_sites = Vec::new();
    if let Some(p) = lambda {
        for (site, u) in &p.unconstrained {
            lambda_sites.push((site.clone(), u.len()));
            flat.extend_from_slice(u);
        }
    }
    let obj = Objective {
        logp: logp.clone(),
        lambda_sites,
    };
    let (value, grad) = obj.value_and_grad(&flat, &noise(seed, "elbo", n_mc * d))?;
    Ok(ElboEstimate {
        value,
        grad_mu: grad[..d].to_vec(),
        grad_sigma_unconstrained: grad[d..2 * d].to_vec(),
        grad_lambda: grad[2 * d..].to_vec(),
    })
}

/// Mean of the last [`FINAL_ELBO_WINDOW`] entries.
pub fn final_elbo(trace: &[f64]) -> f64 {
    let tail = &trace[trace.len().saturating_sub(FINAL_ELBO_WINDOW)..];
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

struct Optimised {
    flat: Vec<f64>,
    trace: Vec<f64>,
    lr: f64,
}

/// Adam ascent for every learning rate; the run with the highest final
/// ELBO wins. Runs that hit a non-finite value are discarded.
fn optimise(obj: &Objective, init: &[f64], cfg: &ViConfig) -> Result<Optimised> {
    cfg.validate()?;
    let n_noise = cfg.n_mc * obj.dim();
    let runs = par_map(cfg.lr_grid.len(), |k| {
        let lr = cfg.lr_grid[k];
        let mut x = init.to_vec();
        let mut adam = AdamState::new(x.len(), lr);
        let mut trace = Vec::with_capacity(cfg.steps);
        for t in 0..cfg.steps {
            let eps = noise(cfg.seed, &format!("vi/{t}"), n_noise);
            let (value, grad) = match obj.value_and_grad(&x, &eps) {
                Ok(r) => r,
                Err(e) if e.is_numerical() => return Ok(None),
                Err(e) => return Err(e),
            };
            trace.push(value);
            let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
            adam.step(&mut x, &descent)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(Optimised { flat: x, trace, lr }))
    })?;
    runs.into_iter()
        .flatten()
        .fold(None, |best: Option<Optimised>, r| match best {
            Some(b) if final_elbo(&b.trace) >= final_elbo(&r.trace) => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| {
            Error::OptimisationFailed("every learning rate produced a non-finite ELBO".into())
        })
}

/// A fitted mean-field approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldFit {
    pub params: VariationalParams,
    pub layout: Layout,
    pub elbo_trace: Vec<f64>,
    pub final_elbo: f64,
    pub learning_rate: f64,
    /// Reverse sweeps over all learning rates.
    pub grad_evals: u64,
}

/// Mean-field VI on `model` over its latent layout.
pub fn fit_mean_field(model: &ModelProgram, cfg: &ViConfig) -> Result<MeanFieldFit> {
    let logp = make_log_joint(model)?;
    let layout = logp.layout().clone();
    let obj = Objective {
        logp,
        lambda_sites: Vec::new(),
    };
    let init = initial_flat(&layout, 0);
    let best = optimise(&obj, &init, cfg)?;
    let d = layout.dim();
    Ok(MeanFieldFit {
        params: VariationalParams::from_flat(&layout, &best.flat[..d], &best.flat[d..2 * d])?,
        final_elbo: final_elbo(&best.trace),
        elbo_trace: best.trace,
        learning_rate: best.lr,
        grad_evals: (cfg.steps * cfg.lr_grid.len()) as u64,
        layout,
    })
}

fn initial_flat(layout: &Layout, n_lambda: usize) -> Vec<f64> {
    let d = layout.dim();
    let mut x = vec![0.0; d];
    x.extend(std::iter::repeat_n(softplus_inverse(1.0), d));
    x.extend(std::iter::repeat_n(0.0, n_lambda));
    x
}

/// Result of the joint VIP fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VipFitResult {
    pub lambda_star: ParameterisationParams,
    /// Over the auxiliary sites of the partially centred model.
    pub theta_star: VariationalParams,
    pub layout: Layout,
    pub elbo_trace: Vec<f64>,
    /// Mean of the last [`FINAL_ELBO_WINDOW`] estimates.
    pub final_elbo: f64,
    pub learning_rate: f64,
    pub grad_evals: u64,
}

impl VipFitResult {
    /// All λ* in site order.
    pub fn lambda_flat(&self, sites: &[(String, usize)]) -> Vec<f64> {
        self.lambda_star.flat_lambda(sites)
    }
}

/// Jointly fits q and the centring weights `λ = sigmoid(λ̃)` by ELBO
/// ascent on the partially centred model. Starts at `λ = 0.5`.
pub fn fit_vip(model: &ModelProgram, cfg: &ViConfig) -> Result<VipFitResult> {
    let sites = reparameterisable_sites(model)?;
    let vip = make_vip_learnable(model, &ParameterisationParams::uniform(&sites, 0.5))?;
    let logp = make_log_joint(&vip)?;
    let layout = logp.layout().clone();
    let n_lambda = sites.iter().map(|(_, n)| n).sum();
    let obj = Objective {
        logp,
        lambda_sites: sites.clone(),
    };
    let best = optimise(&obj, &initial_flat(&layout, n_lambda), cfg)?;
    let d = layout.dim();
    let mut off = 2 * d;
    let mut unconstrained = BTreeMap::new();
    for (site, len) in &sites {
        unconstrained.insert(site.clone(), best.flat[off..off + len].to_vec());
        off += len;
    }
    Ok(VipFitResult {
        lambda_star: ParameterisationParams::from_unconstrained(unconstrained),
        theta_star: VariationalParams::from_flat(&layout, &best.flat[..d], &best.flat[d..2 * d])?,
        final_elbo: final_elbo(&best.trace),
        elbo_trace: best.trace,
        learning_rate: best.lr,
        grad_evals: (cfg.steps * cfg.lr_grid.len()) as u64,
        layout,
    })
}

/// HMC on the model partially centred at a given λ, started from draws of
/// q and preconditioned by its scales. Samples are in the original space.
pub fn hmc_at_lambda(
    model: &ModelProgram,
    lambda: &ParameterisationParams,
    q: &VariationalParams,
    hmc: &HmcConfig,
) -> Result<HmcRun> {
    let (vip, f) = make_vip(model, lambda)?;
    let logp = make_log_joint(&vip)?;
    let layout = logp.layout();
    let inits = q.draws(layout, hmc.chains, hmc.seed, "init")?;
    let precond = q.flat_sigma(layout)?;
    run_hmc_mapped(&logp, &f, hmc, &inits, &precond)
}

/// VIP-HMC: fit λ* and q, freeze λ*, and sample the partially centred
/// model with HMC.
pub fn vip_hmc(model: &ModelProgram, vi: &ViConfig, hmc: &HmcConfig) -> Result<(HmcRun, VipFitResult)> {
    let fit = fit_vip(model, vi)?;
    let run = hmc_at_lambda(model, &fit.lambda_star, &fit.theta_star, hmc)?;
    Ok((run, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effect::Ctx;

    fn normal_target(m: f64, s: f64) -> ModelProgram {
        ModelProgram::new("normal", move |ctx: &mut Ctx<'_>| {
            ctx.sample("x", Distribution::normal(m, s))?;
            Ok(())
        })
    }

    fn funnel() -> ModelProgram {
        ModelProgram::new("funnel", |ctx| {
            let z = ctx.sample("z", Distribution::normal(0.0, 3.0))?;
            ctx.sample("x", Distribution::normal(0.0, (z / 2.0).exp()))?;
            Ok(())
        })
    }

    fn q_with(mu: f64, sigma: f64) -> VariationalParams {
        VariationalParams {
            mu: BTreeMap::from([("x".to_string(), vec![mu])]),
            sigma_unconstrained: BTreeMap::from([("x".to_string(), vec![softplus_inverse(sigma)])]),
        }
    }

    #[test]
    fn parameter_counts() {
        let (_, p) = make_variational(&funnel()).unwrap();
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn exact_q_gives_zero_elbo_every_draw() {
        let logp = make_log_joint(&normal_target(0.0, 1.0)).unwrap();
        for seed in 0..5 {
            let e = elbo_estimate(&logp, &q_with(0.0, 1.0), None, 3, seed).unwrap();
            assert!(e.value.abs() < 1e-12, "{}", e.value);
        }
    }

    #[test]
    fn elbo_matches_gaussian_kl() {
        let logp = make_log_joint(&normal_target(0.0, 1.0)).unwrap();
        let e = elbo_estimate(&logp, &q_with(0.0, 2.0), None, 4096, 11).unwrap();
        let exact = -(4.0 - 1.0 - 2.0 * 2f64.ln()) / 2.0;
        assert!((e.value - exact).abs() < 0.05, "{} vs {exact}", e.value);
    }

    #[test]
    fn elbo_mu_gradient_matches_finite_differences() {
        let logp = make_log_joint(&normal_target(0.0, 1.0)).unwrap();
        let e = elbo_estimate(&logp, &q_with(0.3, 2.0), None, 16, 5).unwrap();
        let h = 1e-5;
        let up = elbo_estimate(&logp, &q_with(0.3 + h, 2.0), None, 16, 5).unwrap().value;
        let dn = elbo_estimate(&logp, &q_with(0.3 - h, 2.0), None, 16, 5).unwrap().value;
        let fd = (up - dn) / (2.0 * h);
        assert!((e.grad_mu[0] - fd).abs() < 1e-5 * fd.abs().max(1.0));
    }

    #[test]
    fn adam_first_step_and_schedule() {
        let (s, p) = adam_step(AdamState::new(2, 0.1), vec![1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(s.t, 1);
        let (_, p) = adam_step(AdamState::new(1, 0.1), vec![0.0], &[3.0]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
        let a = AdamState::new(1, 0.1);
        assert_eq!(a.learning_rate(1000), 0.1);
        assert!((a.learning_rate(1001) - 0.02).abs() < 1e-15);
        assert!((a.learning_rate(2001) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn recovers_a_gaussian() {
        let cfg = ViConfig {
            steps: 800,
            n_mc: 16,
            lr_grid: vec![0.05, 0.1],
            seed: 1,
        };
        let fit = fit_mean_field(&normal_target(3.0, 2.0), &cfg).unwrap();
        let mu = fit.params.mu["x"][0];
        let sigma = softplus(fit.params.sigma_unconstrained["x"][0]);
        assert!((mu - 3.0).abs() < 0.1, "{mu}");
        assert!((sigma - 2.0).abs() < 0.2, "{sigma}");
    }

    #[test]
    fn concentrated_q_samples_sit_at_the_mean() {
        let p = VariationalParams {
            sigma_unconstrained: BTreeMap::from([("x".into(), vec![softplus_inverse(1e-4)])]),
            mu: BTreeMap::from([("x".into(), vec![1.5])]),
        };
        let q = variational_model(&normal_target(0.0, 1.0), &p);
        let xs: Vec<f64> = (0..2000)
            .map(|s| run_forward(&q, s).unwrap().get("x").unwrap().value[0])
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((m - 1.5).abs() < 1e-4 && sd < 1e-3, "{m} {sd}");
    }

    #[test]
    fn q_log_joint_is_log_q() {
        let (q, _) = make_variational(&funnel()).unwrap();
        let lq = make_log_joint(&q).unwrap();
        let v = lq.eval(&[0.5, -1.0]).unwrap();
        let expect = crate::autodiff::normal_log_density(0.5, 0.0, 1.0)
            + crate::autodiff::normal_log_density(-1.0, 0.0, 1.0);
        assert!((v - expect).abs() < 1e-12);
    }
}
