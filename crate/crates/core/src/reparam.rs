//! Non-centring and partial-centring (VIP) handlers.
//!
//! Both rewrite a latent `v ~ N(μ, σ)` into an auxiliary site and compute
//! `v` downstream. With weight `λ ∈ [0, 1]` the auxiliary site is
//! `ṽ ~ N(λμ, σ^λ)` and `v = μ + σ^{1−λ}(ṽ − λμ)`; `λ = 0` is the
//! non-centred `ṽ ~ N(0, 1)`, `v = μ + σṽ`, and `λ = 1` leaves the density
//! of `v` unchanged. Powers of σ are taken as `exp(λ·ln σ)`.
//!
//! Sites that are already `N(0, 1)` with constant parameters are not
//! rewritten: every parameterisation of them is the same.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{logit, sigmoid, Tape, Var};
use crate::effect::{
    handle, pick, run_forward, Distribution, Handler, Layout, ModelProgram, Next, ParamBinding,
    SampleRequest,
};
use crate::error::{Error, Result};

/// Whether a handler should rewrite this request.
pub fn is_reparameterisable(req: &SampleRequest<'_>) -> bool {
    req.is_latent()
        && matches!(req.dist, Distribution::Normal { .. })
        && !req.dist.is_standard_normal()
}

/// Sites (and lengths) that the reparameterising handlers rewrite, in
/// emission order.
pub fn reparameterisable_sites(model: &ModelProgram) -> Result<Vec<(String, usize)>> {
    let probe = handle(model, &[Arc::new(NonCentring)]);
    let tape = Tape::new();
    let exec = probe.execute_forward(&tape, 0, ParamBinding::new())?;
    Ok(exec
        .deterministic()
        .map(|(name, v)| (name.to_string(), v.len()))
        .collect())
}

/// Rewrites `v ~ N(μ, σ)` as `v_std ~ N(0, 1)`, `v = μ + σ·v_std`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NonCentring;

impl Handler for NonCentring {
    fn handle<'t>(&self, req: SampleRequest<'t>, next: &mut Next<'_, 't>) -> Result<Vec<Var<'t>>> {
        if !is_reparameterisable(&req) {
            return next.emit(req);
        }
        let Distribution::Normal { loc, scale } = &req.dist else {
            unreachable!()
        };
        let hint = next.original(&req.name).map(|z| {
            z.iter()
                .enumerate()
                .map(|(i, &zi)| (zi - *pick(loc, i)) / *pick(scale, i))
                .collect()
        });
        let std = next.emit(SampleRequest {
            name: format!("{}_std", req.name),
            dist: Distribution::standard_normal(),
            len: req.len,
            observed: None,
            inverse_hint: hint,
        })?;
        let v: Vec<Var<'t>> = std
            .iter()
            .enumerate()
            .map(|(i, &s)| *pick(loc, i) + *pick(scale, i) * s)
            .collect();
        next.record(&req.name, &v);
        Ok(v)
    }
}

/// Per-element centring weights λ, keyed by site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParameterisationParams {
    pub lambda: BTreeMap<String, Vec<f64>>,
    /// Pre-sigmoid values; `±inf` where λ was pinned to an endpoint.
    pub unconstrained: BTreeMap<String, Vec<f64>>,
}

impl ParameterisationParams {
    pub fn from_unconstrained(unconstrained: BTreeMap<String, Vec<f64>>) -> Self {
        let lambda = unconstrained
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|&u| sigmoid(u)).collect()))
            .collect();
        Self {
            lambda,
            unconstrained,
        }
    }

    /// Explicit λ values, endpoints allowed.
    pub fn from_lambda(lambda: BTreeMap<String, Vec<f64>>) -> Self {
        let unconstrained = lambda
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|&l| logit(l)).collect()))
            .collect();
        Self {
            lambda,
            unconstrained,
        }
    }

    /// The same λ for every element of every given site.
    pub fn uniform(sites: &[(String, usize)], lambda: f64) -> Self {
        Self::from_lambda(
            sites
                .iter()
                .map(|(k, n)| (k.clone(), vec![lambda; *n]))
                .collect(),
        )
    }

    /// λ for every reparameterisable site of `model`.
    pub fn uniform_for(model: &ModelProgram, lambda: f64) -> Result<Self> {
        Ok(Self::uniform(&reparameterisable_sites(model)?, lambda))
    }

    pub fn len(&self) -> usize {
        self.lambda.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All λ in emission order of `sites`.
    pub fn flat_lambda(&self, sites: &[(String, usize)]) -> Vec<f64> {
        sites
            .iter()
            .flat_map(|(k, _)| self.lambda.get(k).into_iter().flatten().copied())
            .collect()
    }

    fn validate(&self, sites: &[(String, usize)]) -> Result<()> {
        if self.lambda.len() != sites.len() {
            return Err(Error::InvalidParameterisation(format!(
                "expected λ for {} sites, got {}",
                sites.len(),
                self.lambda.len()
            )));
        }
        for (name, len) in sites {
            let lam = self.lambda.get(name).ok_or_else(|| {
                Error::InvalidParameterisation(format!("no λ for site `{name}`"))
            })?;
            if lam.len() != *len {
                return Err(Error::InvalidParameterisation(format!(
                    "site `{name}` has {len} elements but {} λ values",
                    lam.len()
                )));
            }
            if let Some(bad) = lam.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                return Err(Error::InvalidParameterisation(format!(
                    "λ = {bad} for site `{name}` is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Parameter-binding key holding the unconstrained λ of `site`.
pub fn lambda_key(site: &str) -> String {
    format!("lambda/{site}")
}

/// Rewrites `v ~ N(μ, σ)` as `v_vip ~ N(λμ, σ^λ)`,
/// `v = μ + σ^{1−λ}(v_vip − λμ)`.
#[derive(Debug, Clone)]
pub struct PartialCentring {
    params: ParameterisationParams,
    learnable: bool,
}

impl PartialCentring {
    /// Fixed λ.
    pub fn fixed(params: ParameterisationParams) -> Self {
        Self {
            params,
            learnable: false,
        }
    }

    /// λ = sigmoid of the tape values bound under [`lambda_key`], falling
    /// back to `init` when no binding is present.
    pub fn learnable(init: ParameterisationParams) -> Self {
        Self {
            params: init,
            learnable: true,
        }
    }

    fn lambda<'t>(&self, site: &str, len: usize, next: &Next<'_, 't>) -> Result<Vec<Var<'t>>> {
        if self.learnable {
            if let Some(u) = next.param(&lambda_key(site)) {
                return Ok(u.iter().map(|v| v.sigmoid()).collect());
            }
        }
        let lam = self.params.lambda.get(site).ok_or_else(|| {
            Error::InvalidParameterisation(format!("no λ for site `{site}`"))
        })?;
        if lam.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: lam.len(),
            });
        }
        Ok(lam.iter().map(|&l| Var::constant(l)).collect())
    }
}

impl Handler for PartialCentring {
    fn handle<'t>(&self, req: SampleRequest<'t>, next: &mut Next<'_, 't>) -> Result<Vec<Var<'t>>> {
        if !is_reparameterisable(&req) {
            return next.emit(req);
        }
        let Distribution::Normal { loc, scale } = &req.dist else {
            unreachable!()
        };
        let lam = self.lambda(&req.name, req.len, next)?;
        let n = req.len;
        let mut aux_loc = Vec::with_capacity(n);
        let mut aux_scale = Vec::with_capacity(n);
        let mut out_scale = Vec::with_capacity(n);
        for (i, &l) in lam.iter().enumerate() {
            let (m, s) = (*pick(loc, i), *pick(scale, i));
            let ln_s = s.ln();
            aux_loc.push(l * m);
            aux_scale.push((l * ln_s).exp());
            out_scale.push(((1.0 - l) * ln_s).exp());
        }
        let hint = next.original(&req.name).map(|z| {
            (0..n)
                .map(|i| aux_loc[i] + (z[i] - *pick(loc, i)) / out_scale[i])
                .collect()
        });
        let aux = next.emit(SampleRequest {
            name: format!("{}_vip", req.name),
            dist: Distribution::normal_vec(aux_loc.clone(), aux_scale),
            len: n,
            observed: None,
            inverse_hint: hint,
        })?;
        let v: Vec<Var<'t>> = (0..n)
            .map(|i| *pick(loc, i) + out_scale[i] * (aux[i] - aux_loc[i]))
            .collect();
        next.record(&req.name, &v);
        Ok(v)
    }
}

/// Maps auxiliary (standardised) coordinates to original coordinates and
/// back.
#[derive(Debug, Clone)]
pub struct ReparamBijection {
    original: Arc<Layout>,
    model: ModelProgram,
    layout: Arc<Layout>,
}

impl ReparamBijection {
    fn new(base: &ModelProgram, reparam: ModelProgram) -> Result<Self> {
        Ok(Self {
            original: Arc::new(run_forward(base, 0)?.latent_layout()),
            layout: Arc::new(run_forward(&reparam, 0)?.latent_layout()),
            model: reparam,
        })
    }

    pub fn original_layout(&self) -> &Layout {
        &self.original
    }

    pub fn auxiliary_layout(&self) -> &Layout {
        &self.layout
    }

    /// z = f(z̃)
    pub fn forward(&self, aux: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let inputs = tape.vars(aux);
        let exec = self.model.execute_replay(
            &tape,
            Arc::clone(&self.layout),
            inputs,
            ParamBinding::new(),
        )?;
        let mut out = Vec::with_capacity(self.original.dim());
        for slot in self.original.slots() {
            let v = exec
                .value_of(&slot.name)
                .ok_or_else(|| Error::UnknownSite(slot.name.clone()))?;
            out.extend(v.iter().map(Var::value));
        }
        Ok(out)
    }

    /// z̃ = f⁻¹(z)
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        let original = self.original.split(z)?;
        let tape = Tape::new();
        let trace = self.model.execute_inverse(&tape, original)?.trace();
        let aux = trace.latent_vector();
        self.layout.check(aux.len())?;
        Ok(aux)
    }
}

/// Non-centre every reparameterisable site.
pub fn make_ncp(model: &ModelProgram) -> Result<(ModelProgram, ReparamBijection)> {
    let ncp = handle(model, &[Arc::new(NonCentring)]);
    let bij = ReparamBijection::new(model, ncp.clone())?;
    Ok((ncp, bij))
}

/// Partially centre every reparameterisable site with fixed λ.
pub fn make_vip(
    model: &ModelProgram,
    params: &ParameterisationParams,
) -> Result<(ModelProgram, ReparamBijection)> {
    params.validate(&reparameterisable_sites(model)?)?;
    let vip = handle(model, &[Arc::new(PartialCentring::fixed(params.clone()))]);
    let bij = ReparamBijection::new(model, vip.clone())?;
    Ok((vip, bij))
}

/// Partially centre with λ read from the parameter binding (see
/// [`lambda_key`]); `init` supplies λ when nothing is bound.
pub fn make_vip_learnable(
    model: &ModelProgram,
    init: &ParameterisationParams,
) -> Result<ModelProgram> {
    init.validate(&reparameterisable_sites(model)?)?;
    Ok(handle(model, &[Arc::new(PartialCentring::learnable(init.clone()))]))
}

/// [`ReparamBijection::forward`]
pub fn vip_forward(bij: &ReparamBijection, aux: &[f64]) -> Result<Vec<f64>> {
    bij.forward(aux)
}

/// [`ReparamBijection::inverse`]
pub fn vip_inverse(bij: &ReparamBijection, z: &[f64]) -> Result<Vec<f64>> {
    bij.inverse(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effect::{condition, make_log_joint, run_forward, Role};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn funnel() -> ModelProgram {
        ModelProgram::new("funnel", |ctx| {
            let z = ctx.sample("z", Distribution::normal(0.0, 3.0))?;
            ctx.sample("x", Distribution::normal(0.0, (z / 2.0).exp()))?;
            Ok(())
        })
    }

    fn single(loc: f64, scale: f64) -> ModelProgram {
        ModelProgram::new("single", move |ctx| {
            ctx.sample("a", Distribution::normal(loc, scale))?;
            Ok(())
        })
    }

    fn grid(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.5..2.5)).collect())
            .collect()
    }

    #[test]
    fn ncp_funnel_log_joint_at_origin() {
        let (ncp, _) = make_ncp(&funnel()).unwrap();
        let lj = make_log_joint(&ncp).unwrap();
        assert_eq!(lj.layout().names().collect::<Vec<_>>(), vec!["z_std", "x_std"]);
        assert!((lj.eval(&[0.0, 0.0]).unwrap() - -1.837_877_1).abs() < 1e-7);
    }

    #[test]
    fn ncp_bijection_scales_z() {
        let (_, bij) = make_ncp(&funnel()).unwrap();
        let z = bij.forward(&[1.0, 0.0]).unwrap();
        assert!((z[0] - 3.0).abs() < 1e-15);
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn ncp_is_idempotent() {
        let (once, _) = make_ncp(&funnel()).unwrap();
        let (twice, _) = make_ncp(&once).unwrap();
        let a = make_log_joint(&once).unwrap();
        let b = make_log_joint(&twice).unwrap();
        for p in grid(&mut ChaCha8Rng::seed_from_u64(1), 25, 2) {
            assert_eq!(a.eval(&p).unwrap(), b.eval(&p).unwrap());
        }
    }

    #[test]
    fn standard_normal_site_is_untouched() {
        let m = single(0.0, 1.0);
        assert!(reparameterisable_sites(&m).unwrap().is_empty());
        let (ncp, _) = make_ncp(&m).unwrap();
        let cp = make_log_joint(&m).unwrap();
        let ncp = make_log_joint(&ncp).unwrap();
        for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert_eq!(cp.eval(&[x]).unwrap(), ncp.eval(&[x]).unwrap());
        }
    }

    #[test]
    fn vip_endpoints_collapse_to_cp_and_ncp() {
        let m = funnel();
        let cp = make_log_joint(&m).unwrap();
        let ncp = make_log_joint(&make_ncp(&m).unwrap().0).unwrap();
        let ones = make_log_joint(&make_vip(&m, &ParameterisationParams::uniform_for(&m, 1.0).unwrap()).unwrap().0).unwrap();
        let zeros = make_log_joint(&make_vip(&m, &ParameterisationParams::uniform_for(&m, 0.0).unwrap()).unwrap().0).unwrap();
        for p in grid(&mut ChaCha8Rng::seed_from_u64(2), 10, 2) {
            let (a, b) = (cp.eval(&p).unwrap(), ones.eval(&p).unwrap());
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
            let (a, b) = (ncp.eval(&p).unwrap(), zeros.eval(&p).unwrap());
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn vip_round_trip_at_half() {
        let m = funnel();
        let (_, bij) = make_vip(&m, &ParameterisationParams::uniform_for(&m, 0.5).unwrap()).unwrap();
        for p in grid(&mut ChaCha8Rng::seed_from_u64(3), 100, 2) {
            let back = bij.inverse(&bij.forward(&p).unwrap()).unwrap();
            for (a, b) in p.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn vip_forward_hand_values() {
        let m = single(2.0, 4.0);
        let (_, one) = make_vip(&m, &ParameterisationParams::uniform_for(&m, 1.0).unwrap()).unwrap();
        assert_eq!(vip_forward(&one, &[0.7]).unwrap(), vec![0.7]);
        let (_, zero) = make_vip(&m, &ParameterisationParams::uniform_for(&m, 0.0).unwrap()).unwrap();
        assert!((vip_forward(&zero, &[0.5]).unwrap()[0] - 4.0).abs() < 1e-14);
        let (_, half) = make_vip(&m, &ParameterisationParams::uniform_for(&m, 0.5).unwrap()).unwrap();
        assert!((vip_forward(&half, &[1.0]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert!((vip_inverse(&half, &[2.0]).unwrap()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        let m = funnel();
        let bad = ParameterisationParams::uniform_for(&m, 1.5).unwrap();
        assert!(matches!(make_vip(&m, &bad).unwrap_err(), Error::InvalidParameterisation(_)));
        let missing = ParameterisationParams::default();
        assert!(make_vip(&m, &missing).is_err());
    }

    #[test]
    fn observed_sites_are_never_rewritten() {
        let data = [("x".to_string(), vec![0.3])].into_iter().collect();
        let m = condition(&funnel(), &data).unwrap();
        for reparam in [
            make_ncp(&m).unwrap().0,
            make_vip(&m, &ParameterisationParams::uniform_for(&m, 0.3).unwrap()).unwrap().0,
        ] {
            let t = run_forward(&reparam, 0).unwrap();
            let x = t.get("x").unwrap();
            assert_eq!(x.role, Role::Observed);
            assert_eq!(x.value, vec![0.3]);
        }
    }

    #[test]
    fn unconstrained_params_map_through_sigmoid() {
        let p = ParameterisationParams::from_unconstrained(
            [("a".to_string(), vec![-3.0, 0.0, 3.0])].into_iter().collect(),
        );
        let l = &p.lambda["a"];
        assert!(l[0] > 0.0 && l[0] < l[1] && l[1] < l[2] && l[2] < 1.0);
        assert_eq!(l[1], 0.5);
    }
}
