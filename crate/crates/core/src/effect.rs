//! Models as handler-routed procedures.
//!
//! A [`ModelProgram`] is a closure that asks its [`Ctx`] for random
//! variables. Each request travels through the model's handler stack in
//! order (the first handler sees the raw request) and finally reaches the
//! interpreter, which decides the value: a prior draw, a slot of a flat
//! input vector, or a value reconstructed from original-space coordinates.
//! The interpreter also records the site's log-density, so one execution
//! both runs the program and accumulates its log joint.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    bernoulli_logit_log_mass_sum, normal_log_density_sum, sigmoid, sum, GradCounter, Tape, Var,
};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Named tape values a handler may read (learnable parameters).
pub type ParamBinding<'t> = BTreeMap<String, Vec<Var<'t>>>;

/// A site distribution. Parameter vectors have length 1 (broadcast over
/// the site) or the site length.
#[derive(Debug, Clone)]
pub enum Distribution<'t> {
    Normal {
        loc: Vec<Var<'t>>,
        scale: Vec<Var<'t>>,
    },
    Bernoulli {
        logits: Vec<Var<'t>>,
    },
}

impl<'t> Distribution<'t> {
    pub fn normal(loc: impl Into<Var<'t>>, scale: impl Into<Var<'t>>) -> Self {
        Distribution::Normal {
            loc: vec![loc.into()],
            scale: vec![scale.into()],
        }
    }

    pub fn normal_vec(loc: Vec<Var<'t>>, scale: Vec<Var<'t>>) -> Self {
        Distribution::Normal { loc, scale }
    }

    pub fn standard_normal() -> Self {
        Self::normal(0.0, 1.0)
    }

    pub fn bernoulli_logits(logits: Vec<Var<'t>>) -> Self {
        Distribution::Bernoulli { logits }
    }

    /// N(0, 1) with constant parameters. Non-centring leaves these alone.
    pub fn is_standard_normal(&self) -> bool {
        match self {
            Distribution::Normal { loc, scale } => {
                loc.iter().all(|m| m.is_constant_value(0.0))
                    && scale.iter().all(|s| s.is_constant_value(1.0))
            }
            Distribution::Bernoulli { .. } => false,
        }
    }

    fn param_len_ok(params: &[Var<'t>], len: usize) -> bool {
        params.len() == 1 || params.len() == len
    }

    fn validate(&self, site: &str, len: usize) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDistribution {
            site: site.to_string(),
            reason,
        };
        match self {
            Distribution::Normal { loc, scale } => {
                if !Self::param_len_ok(loc, len) || !Self::param_len_ok(scale, len) {
                    return Err(invalid(format!(
                        "parameter lengths ({}, {}) do not fit site length {len}",
                        loc.len(),
                        scale.len()
                    )));
                }
                if let Some(s) = scale.iter().find(|s| !(s.value() > 0.0 && s.value().is_finite())) {
                    return Err(invalid(format!("scale {} is not positive and finite", s.value())));
                }
                if let Some(m) = loc.iter().find(|m| !m.value().is_finite()) {
                    return Err(invalid(format!("loc {} is not finite", m.value())));
                }
            }
            Distribution::Bernoulli { logits } => {
                if !Self::param_len_ok(logits, len) {
                    return Err(invalid(format!(
                        "{} logits do not fit site length {len}",
                        logits.len()
                    )));
                }
                if let Some(l) = logits.iter().find(|l| l.value().is_nan()) {
                    return Err(invalid(format!("logit {}", l.value())));
                }
            }
        }
        Ok(())
    }

    fn log_density(&self, site: &str, values: &[Var<'t>]) -> Result<Var<'t>> {
        match self {
            Distribution::Normal { loc, scale } => Ok(normal_log_density_sum(values, loc, scale)),
            Distribution::Bernoulli { logits } => {
                if values.iter().any(|v| !v.is_constant()) {
                    return Err(Error::InvalidDistribution {
                        site: site.to_string(),
                        reason: "Bernoulli sites must be observed to enter a log joint".into(),
                    });
                }
                let y: Vec<f64> = values.iter().map(|v| v.value()).collect();
                if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidDistribution {
                        site: site.to_string(),
                        reason: format!("Bernoulli value {bad} is not 0 or 1"),
                    });
                }
                Ok(bernoulli_logit_log_mass_sum(&y, logits))
            }
        }
    }

    fn draw(&self, seed: u64, site: &str, len: usize) -> Vec<f64> {
        let mut rng = keyed_rng(seed, site);
        (0..len)
            .map(|i| match self {
                Distribution::Normal { loc, scale } => {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    pick(loc, i).value() + pick(scale, i).value() * eps
                }
                Distribution::Bernoulli { logits } => {
                    let u: f64 = rand::Rng::random(&mut rng);
                    if u < sigmoid(pick(logits, i).value()) {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }
}

/// Element `i` of a parameter vector, honouring length-1 broadcast.
pub fn pick<'a, 't>(params: &'a [Var<'t>], i: usize) -> &'a Var<'t> {
    if params.len() == 1 {
        &params[0]
    } else {
        &params[i]
    }
}

/// One `v ~ D(...)` statement in flight through the handler stack.
#[derive(Debug, Clone)]
pub struct SampleRequest<'t> {
    pub name: String,
    pub dist: Distribution<'t>,
    pub len: usize,
    pub observed: Option<Vec<f64>>,
    /// In inverse mode, the value this site takes given original-space
    /// coordinates. Set by reparameterising handlers.
    pub inverse_hint: Option<Vec<Var<'t>>>,
}

impl<'t> SampleRequest<'t> {
    pub fn is_latent(&self) -> bool {
        self.observed.is_none()
    }
}

/// An effect handler. It receives each request and either forwards it
/// unchanged, forwards a modified request, or answers it itself.
pub trait Handler: Send + Sync + fmt::Debug {
    fn handle<'t>(&self, req: SampleRequest<'t>, next: &mut Next<'_, 't>)
        -> Result<Vec<Var<'t>>>;
}

/// The remainder of the handler stack, as seen from one handler.
pub struct Next<'c, 't> {
    ctx: &'c mut Ctx<'t>,
    depth: usize,
}

impl<'c, 't> Next<'c, 't> {
    /// Pass a request to the inner handlers and the interpreter.
    pub fn emit(&mut self, req: SampleRequest<'t>) -> Result<Vec<Var<'t>>> {
        self.ctx.dispatch(self.depth, req)
    }

    pub fn tape(&self) -> &'t Tape {
        self.ctx.tape
    }

    pub fn param(&self, key: &str) -> Option<&[Var<'t>]> {
        self.ctx.params.get(key).map(Vec::as_slice)
    }

    /// Original-space value of `site`, available only in inverse mode.
    pub fn original(&self, site: &str) -> Option<&[f64]> {
        match &self.ctx.mode {
            Mode::Inverse { original } => original.get(site).map(Vec::as_slice),
            _ => None,
        }
    }

    /// Record a deterministic value (e.g. the original-space value of a
    /// rewritten site).
    pub fn record(&mut self, name: &str, values: &[Var<'t>]) {
        self.ctx
            .deterministic
            .push((name.to_string(), values.to_vec()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Latent,
    Observed,
}

/// Position of one latent site inside a flat latent vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered site → slice map for flat latent vectors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    slots: Vec<SiteSlot>,
    dim: usize,
}

impl Layout {
    pub fn from_sites<'a>(sites: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut layout = Layout::default();
        for (name, len) in sites {
            layout.slots.push(SiteSlot {
                name: name.to_string(),
                offset: layout.dim,
                len,
            });
            layout.dim += len;
        }
        layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> &[SiteSlot] {
        &self.slots
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn slot(&self, name: &str) -> Option<&SiteSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Split a flat vector into a site-keyed map.
    pub fn split(&self, flat: &[f64]) -> Result<BTreeMap<String, Vec<f64>>> {
        self.check(flat.len())?;
        Ok(self
            .slots
            .iter()
            .map(|s| (s.name.clone(), flat[s.offset..s.offset + s.len].to_vec()))
            .collect())
    }

    /// One label per scalar coordinate, e.g. `theta[3]`.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        for s in &self.slots {
            if s.len == 1 {
                out.push(s.name.clone());
            } else {
                out.extend((0..s.len).map(|i| format!("{}[{i}]", s.name)));
            }
        }
        out
    }

    pub fn check(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    pub role: Role,
    pub value: Vec<f64>,
    pub log_prob: f64,
}

/// Sites in emission order with their values and log-density terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn log_joint(&self) -> f64 {
        self.entries.iter().map(|e| e.log_prob).sum()
    }

    pub fn latent_layout(&self) -> Layout {
        Layout::from_sites(
            self.entries
                .iter()
                .filter(|e| e.role == Role::Latent)
                .map(|e| (e.name.as_str(), e.value.len())),
        )
    }

    /// Latent values concatenated in layout order.
    pub fn latent_vector(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.role == Role::Latent)
            .flat_map(|e| e.value.iter().copied())
            .collect()
    }
}

enum Mode<'t> {
    Forward {
        seed: u64,
    },
    Replay {
        inputs: Vec<Var<'t>>,
        layout: Arc<Layout>,
        cursor: usize,
    },
    Inverse {
        original: BTreeMap<String, Vec<f64>>,
    },
}

struct RawEntry<'t> {
    name: String,
    role: Role,
    values: Vec<Var<'t>>,
    log_prob: Var<'t>,
}

/// Execution context handed to model bodies.
pub struct Ctx<'t> {
    tape: &'t Tape,
    mode: Mode<'t>,
    stack: Arc<[Arc<dyn Handler>]>,
    observed: Arc<BTreeMap<String, Vec<f64>>>,
    params: ParamBinding<'t>,
    entries: Vec<RawEntry<'t>>,
    names: HashSet<String>,
    deterministic: Vec<(String, Vec<Var<'t>>)>,
    raw_sites: Vec<String>,
}

impl<'t> Ctx<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// `name ~ dist` for a scalar site.
    pub fn sample(&mut self, name: &str, dist: Distribution<'t>) -> Result<Var<'t>> {
        Ok(self.sample_vec(name, 1, dist)?[0])
    }

    /// `name ~ dist` for a vector site of `len` independent elements.
    pub fn sample_vec(
        &mut self,
        name: &str,
        len: usize,
        dist: Distribution<'t>,
    ) -> Result<Vec<Var<'t>>> {
        self.raw_sites.push(name.to_string());
        let req = SampleRequest {
            name: name.to_string(),
            dist,
            len,
            observed: self.observed.get(name).cloned(),
            inverse_hint: None,
        };
        self.dispatch(0, req)
    }

    fn dispatch(&mut self, depth: usize, req: SampleRequest<'t>) -> Result<Vec<Var<'t>>> {
        if depth < self.stack.len() {
            let handler = Arc::clone(&self.stack[depth]);
            let mut next = Next {
                ctx: self,
                depth: depth + 1,
            };
            handler.handle(req, &mut next)
        } else {
            self.interpret(req)
        }
    }

    fn interpret(&mut self, req: SampleRequest<'t>) -> Result<Vec<Var<'t>>> {
        if !self.names.insert(req.name.clone()) {
            return Err(Error::DuplicateSite(req.name));
        }
        req.dist.validate(&req.name, req.len)?;
        let (role, values) = match &req.observed {
            Some(obs) => {
                if obs.len() != req.len {
                    return Err(Error::DimensionMismatch {
                        expected: req.len,
                        actual: obs.len(),
                    });
                }
                (Role::Observed, obs.iter().map(|&v| Var::constant(v)).collect())
            }
            None => (Role::Latent, self.latent_value(&req)?),
        };
        let log_prob = req.dist.log_density(&req.name, &values)?;
        self.entries.push(RawEntry {
            name: req.name,
            role,
            values: values.clone(),
            log_prob,
        });
        Ok(values)
    }

    fn latent_value(&mut self, req: &SampleRequest<'t>) -> Result<Vec<Var<'t>>> {
        let tape = self.tape;
        match &mut self.mode {
            Mode::Forward { seed } => {
                let draw = req.dist.draw(*seed, &req.name, req.len);
                Ok(match req.dist {
                    // Discrete draws carry no gradient.
                    Distribution::Bernoulli { .. } => draw.into_iter().map(Var::constant).collect(),
                    Distribution::Normal { .. } => tape.vars(&draw),
                })
            }
            Mode::Replay {
                inputs,
                layout,
                cursor,
            } => {
                let slot = layout.slots.get(*cursor).ok_or_else(|| {
                    Error::StructureMismatch(format!("unexpected latent site `{}`", req.name))
                })?;
                if slot.name != req.name || slot.len != req.len {
                    return Err(Error::StructureMismatch(format!(
                        "expected site `{}` (len {}), found `{}` (len {})",
                        slot.name, slot.len, req.name, req.len
                    )));
                }
                *cursor += 1;
                Ok(inputs[slot.offset..slot.offset + slot.len].to_vec())
            }
            Mode::Inverse { original } => {
                if let Some(hint) = &req.inverse_hint {
                    return Ok(tape.vars(&hint.iter().map(|v| v.value()).collect::<Vec<_>>()));
                }
                let v = original
                    .get(&req.name)
                    .ok_or_else(|| Error::UnknownSite(req.name.clone()))?;
                if v.len() != req.len {
                    return Err(Error::DimensionMismatch {
                        expected: req.len,
                        actual: v.len(),
                    });
                }
                Ok(tape.vars(v))
            }
        }
    }
}

type ModelBody = dyn for<'t> Fn(&mut Ctx<'t>) -> Result<()> + Send + Sync;

/// A generative model: a body that registers sample sites, the data it is
/// conditioned on, and the handlers its requests pass through.
#[derive(Clone)]
pub struct ModelProgram {
    name: Arc<str>,
    body: Arc<ModelBody>,
    observed: Arc<BTreeMap<String, Vec<f64>>>,
    stack: Vec<Arc<dyn Handler>>,
}

impl fmt::Debug for ModelProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelProgram")
            .field("name", &self.name)
            .field("observed", &self.observed.keys().collect::<Vec<_>>())
            .field("stack", &self.stack)
            .finish()
    }
}

/// Everything one execution produced, still on the tape.
pub struct Execution<'t> {
    entries: Vec<RawEntry<'t>>,
    deterministic: Vec<(String, Vec<Var<'t>>)>,
    raw_sites: Vec<String>,
}

impl<'t> Execution<'t> {
    pub fn log_joint(&self) -> Var<'t> {
        let terms: Vec<Var<'t>> = self.entries.iter().map(|e| e.log_prob).collect();
        sum(&terms)
    }

    pub fn trace(&self) -> Trace {
        Trace {
            entries: self
                .entries
                .iter()
                .map(|e| TraceEntry {
                    name: e.name.clone(),
                    role: e.role,
                    value: e.values.iter().map(Var::value).collect(),
                    log_prob: e.log_prob.value(),
                })
                .collect(),
        }
    }

    /// Value of `name`: a recorded deterministic value if the site was
    /// rewritten, otherwise the site's own value.
    pub fn value_of(&self, name: &str) -> Option<&[Var<'t>]> {
        self.deterministic
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .or_else(|| {
                self.entries
                    .iter()
                    .find(|e| e.name == name)
                    .map(|e| e.values.as_slice())
            })
    }

    /// Names the model body itself emitted, before any handler.
    pub fn raw_sites(&self) -> &[String] {
        &self.raw_sites
    }

    /// Deterministic values recorded by handlers, in recording order.
    pub fn deterministic(&self) -> impl Iterator<Item = (&str, &[Var<'t>])> {
        self.deterministic
            .iter()
            .map(|(n, v)| (n.as_str(), v.as_slice()))
    }
}

impl ModelProgram {
    pub fn new<F>(name: &str, body: F) -> Self
    where
        F: for<'t> Fn(&mut Ctx<'t>) -> Result<()> + Send + Sync + 'static,
    {
        ModelProgram {
            name: name.into(),
            body: Arc::new(body),
            observed: Arc::new(BTreeMap::new()),
            stack: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn observed(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.observed
    }

    pub fn handlers(&self) -> &[Arc<dyn Handler>] {
        &self.stack
    }

    fn execute<'t>(
        &self,
        tape: &'t Tape,
        mode: Mode<'t>,
        params: ParamBinding<'t>,
    ) -> Result<Execution<'t>> {
        let mut ctx = Ctx {
            tape,
            mode,
            stack: self.stack.clone().into(),
            observed: Arc::clone(&self.observed),
            params,
            entries: Vec::new(),
            names: HashSet::new(),
            deterministic: Vec::new(),
            raw_sites: Vec::new(),
        };
        (self.body)(&mut ctx)?;
        if let Mode::Replay { layout, cursor, .. } = &ctx.mode {
            if *cursor != layout.slots.len() {
                return Err(Error::StructureMismatch(format!(
                    "model emitted {cursor} latent sites, layout has {}",
                    layout.slots.len()
                )));
            }
        }
        Ok(Execution {
            entries: ctx.entries,
            deterministic: ctx.deterministic,
            raw_sites: ctx.raw_sites,
        })
    }

    /// Prior draw with the given parameter binding.
    pub fn execute_forward<'t>(
        &self,
        tape: &'t Tape,
        seed: u64,
        params: ParamBinding<'t>,
    ) -> Result<Execution<'t>> {
        self.execute(tape, Mode::Forward { seed }, params)
    }

    /// Execution with latent values read from `inputs` in `layout` order.
    pub fn execute_replay<'t>(
        &self,
        tape: &'t Tape,
        layout: Arc<Layout>,
        inputs: Vec<Var<'t>>,
        params: ParamBinding<'t>,
    ) -> Result<Execution<'t>> {
        layout.check(inputs.len())?;
        self.execute(
            tape,
            Mode::Replay {
                inputs,
                layout,
                cursor: 0,
            },
            params,
        )
    }

    /// Execution where latent values derive from original-space site
    /// values (reparameterising handlers supply the inverse map).
    pub fn execute_inverse<'t>(
        &self,
        tape: &'t Tape,
        original: BTreeMap<String, Vec<f64>>,
    ) -> Result<Execution<'t>> {
        self.execute(tape, Mode::Inverse { original }, ParamBinding::new())
    }
}

/// Run the program forward, drawing every latent site from its prior.
pub fn run_forward(model: &ModelProgram, seed: u64) -> Result<Trace> {
    let tape = Tape::new();
    Ok(model
        .execute_forward(&tape, seed, ParamBinding::new())?
        .trace())
}

/// Names the body emits (before any handler rewrites them).
pub fn raw_site_names(model: &ModelProgram) -> Result<Vec<String>> {
    let tape = Tape::new();
    Ok(model
        .execute_forward(&tape, 0, ParamBinding::new())?
        .raw_sites()
        .to_vec())
}

/// Mark sites as observed with the given values.
pub fn condition(model: &ModelProgram, data: &BTreeMap<String, Vec<f64>>) -> Result<ModelProgram> {
    if data.is_empty() {
        return Ok(model.clone());
    }
    let known = raw_site_names(model)?;
    if let Some(unknown) = data.keys().find(|k| !known.contains(k)) {
        return Err(Error::UnknownSite(unknown.clone()));
    }
    let mut observed = (*model.observed).clone();
    observed.extend(data.iter().map(|(k, v)| (k.clone(), v.clone())));
    let conditioned = ModelProgram {
        observed: Arc::new(observed),
        ..model.clone()
    };
    // Surface length mismatches now rather than at first evaluation.
    run_forward(&conditioned, 0)?;
    Ok(conditioned)
}

/// Route the model's requests through `stack`, after any handlers it
/// already has.
pub fn handle(model: &ModelProgram, stack: &[Arc<dyn Handler>]) -> ModelProgram {
    let mut out = model.clone();
    out.stack.extend(stack.iter().cloned());
    out
}

/// Answers each site it knows with a fixed value.
#[derive(Debug, Clone, Default)]
pub struct Substitute {
    pub values: BTreeMap<String, Vec<f64>>,
}

impl Handler for Substitute {
    fn handle<'t>(
        &self,
        mut req: SampleRequest<'t>,
        next: &mut Next<'_, 't>,
    ) -> Result<Vec<Var<'t>>> {
        if let Some(v) = self.values.get(&req.name) {
            req.observed = Some(v.clone());
        }
        next.emit(req)
    }
}

/// Sets every variable to 0 and records its log-density there.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogProbAtZero;

impl Handler for LogProbAtZero {
    fn handle<'t>(
        &self,
        mut req: SampleRequest<'t>,
        next: &mut Next<'_, 't>,
    ) -> Result<Vec<Var<'t>>> {
        req.observed = Some(vec![0.0; req.len]);
        next.emit(req)
    }
}

/// `z ↦ log p(z, x)` for a model, with a fixed latent layout.
#[derive(Debug, Clone)]
pub struct LogJointFn {
    model: ModelProgram,
    layout: Arc<Layout>,
    counter: GradCounter,
}

impl LogJointFn {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn model(&self) -> &ModelProgram {
        &self.model
    }

    pub fn counter(&self) -> &GradCounter {
        &self.counter
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.layout.check(z.len())?;
        let tape = Tape::new();
        let inputs = tape.vars(z);
        let lp = self
            .model
            .execute_replay(&tape, Arc::clone(&self.layout), inputs, ParamBinding::new())?
            .log_joint()
            .value();
        Ok(lp)
    }

    /// Log joint and its gradient. Counts one gradient evaluation.
    pub fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.layout.check(z.len())?;
        self.counter.grad(
            |tape, x| {
                Ok(self
                    .model
                    .execute_replay(tape, Arc::clone(&self.layout), x.to_vec(), ParamBinding::new())?
                    .log_joint())
            },
            z,
        )
    }

    /// Evaluate on a caller-owned tape, so gradients can flow into `z`
    /// and into handler parameters in `params`.
    pub fn eval_on_tape<'t>(
        &self,
        tape: &'t Tape,
        z: &[Var<'t>],
        params: ParamBinding<'t>,
    ) -> Result<Var<'t>> {
        Ok(self
            .model
            .execute_replay(tape, Arc::clone(&self.layout), z.to_vec(), params)?
            .log_joint())
    }

    /// Trace of a replay at `z`.
    pub fn trace_at(&self, z: &[f64]) -> Result<Trace> {
        self.layout.check(z.len())?;
        let tape = Tape::new();
        let inputs = tape.vars(z);
        Ok(self
            .model
            .execute_replay(&tape, Arc::clone(&self.layout), inputs, ParamBinding::new())?
            .trace())
    }
}

/// Build the log joint function of a model.
pub fn make_log_joint(model: &ModelProgram) -> Result<LogJointFn> {
    let layout = run_forward(model, 0)?.latent_layout();
    if layout.dim() == 0 {
        return Err(Error::InvalidConfig(format!(
            "model `{}` has no latent sites",
            model.name()
        )));
    }
    Ok(LogJointFn {
        model: model.clone(),
        layout: Arc::new(layout),
        counter: GradCounter::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::normal_log_density;

    fn funnel() -> ModelProgram {
        ModelProgram::new("funnel", |ctx| {
            let z = ctx.sample("z", Distribution::normal(0.0, 3.0))?;
            ctx.sample("x", Distribution::normal(0.0, (z / 2.0).exp()))?;
            Ok(())
        })
    }

    fn data(pairs: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect()
    }

    #[test]
    fn forward_trace_has_sites_in_emission_order() {
        let t = run_forward(&funnel(), 11).unwrap();
        assert_eq!(t.names(), vec!["z", "x"]);
        assert!(t.entries.iter().all(|e| e.role == Role::Latent));
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let a = run_forward(&funnel(), 5).unwrap();
        let b = run_forward(&funnel(), 5).unwrap();
        let c = run_forward(&funnel(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fully_observed_trace_returns_observed_values() {
        let m = condition(&funnel(), &data(&[("z", &[0.25]), ("x", &[-1.5])])).unwrap();
        let t = run_forward(&m, 3).unwrap();
        assert_eq!(t.get("z").unwrap().value, vec![0.25]);
        assert_eq!(t.get("x").unwrap().value, vec![-1.5]);
        assert!(t.entries.iter().all(|e| e.role == Role::Observed));
        assert!(make_log_joint(&m).is_err());
    }

    #[test]
    fn log_joint_at_origin() {
        let lj = make_log_joint(&funnel()).unwrap();
        let expected = normal_log_density(0.0, 0.0, 3.0) + normal_log_density(0.0, 0.0, 1.0);
        assert!((expected - -2.936_489_4).abs() < 1e-7);
        assert!((lj.eval(&[0.0, 0.0]).unwrap() - expected).abs() < 1e-14);

        let cond = condition(&funnel(), &data(&[("x", &[0.0])])).unwrap();
        let lj = make_log_joint(&cond).unwrap();
        assert_eq!(lj.layout().names().collect::<Vec<_>>(), vec!["z"]);
        assert!((lj.eval(&[0.0]).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn conditioning_on_nothing_is_identity() {
        let m = condition(&funnel(), &BTreeMap::new()).unwrap();
        assert_eq!(run_forward(&m, 9).unwrap(), run_forward(&funnel(), 9).unwrap());
    }

    #[test]
    fn conditioning_on_unknown_site_fails() {
        let err = condition(&funnel(), &data(&[("y", &[1.0])])).unwrap_err();
        assert_eq!(err, Error::UnknownSite("y".into()));
    }

    #[test]
    fn duplicate_site_is_rejected() {
        let m = ModelProgram::new("dup", |ctx| {
            ctx.sample("a", Distribution::standard_normal())?;
            ctx.sample("a", Distribution::standard_normal())?;
            Ok(())
        });
        assert_eq!(run_forward(&m, 0).unwrap_err(), Error::DuplicateSite("a".into()));
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let m = ModelProgram::new("bad", |ctx| {
            ctx.sample("a", Distribution::normal(0.0, -1.0))?;
            Ok(())
        });
        assert!(matches!(
            run_forward(&m, 0).unwrap_err(),
            Error::InvalidDistribution { .. }
        ));
    }

    #[test]
    fn log_prob_at_zero_matches_closed_form() {
        let handled = handle(&funnel(), &[Arc::new(LogProbAtZero)]);
        let t = run_forward(&handled, 0).unwrap();
        assert_eq!(t.get("z").unwrap().value, vec![0.0]);
        assert_eq!(t.get("x").unwrap().value, vec![0.0]);
        assert!((t.entries[0].log_prob - -2.017_550_8).abs() < 1e-7);
        assert!((t.entries[1].log_prob - -0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn empty_stack_is_identity() {
        let handled = handle(&funnel(), &[]);
        assert_eq!(run_forward(&handled, 4).unwrap(), run_forward(&funnel(), 4).unwrap());
    }

    #[test]
    fn wrong_input_length_is_dimension_mismatch() {
        let lj = make_log_joint(&funnel()).unwrap();
        assert_eq!(
            lj.eval(&[0.0]).unwrap_err(),
            Error::DimensionMismatch {
                expected: 2,
                actual: 1
            }
        );
    }

    #[test]
    fn replay_matches_forward_trace() {
        let lj = make_log_joint(&funnel()).unwrap();
        for seed in 0..20 {
            let t = run_forward(&funnel(), seed).unwrap();
            let lp = lj.eval(&t.latent_vector()).unwrap();
            let expected = t.log_joint();
            assert!((lp - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn bernoulli_sites_must_be_binary() {
        let m = ModelProgram::new("coin", |ctx| {
            let l = ctx.sample("l", Distribution::standard_normal())?;
            ctx.sample_vec("y", 3, Distribution::bernoulli_logits(vec![l]))?;
            Ok(())
        });
        let good = condition(&m, &data(&[("y", &[1.0, 0.0, 1.0])])).unwrap();
        let lj = make_log_joint(&good).unwrap();
        let expected = normal_log_density(0.5, 0.0, 1.0)
            + 2.0 * sigmoid(0.5).ln()
            + sigmoid(-0.5).ln();
        assert!((lj.eval(&[0.5]).unwrap() - expected).abs() < 1e-12);
        assert!(condition(&m, &data(&[("y", &[1.0, 0.5, 1.0])])).is_err());
    }
}
