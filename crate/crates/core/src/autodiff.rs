//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every non-constant operation as a node holding the
//! partial derivatives with respect to its parents. Nodes are appended in
//! evaluation order, so the tape is topologically sorted and one reverse
//! sweep from an output yields the adjoints of every node.
//!
//! [`Var`] is a cheap `Copy` handle. Constants carry no tape node at all;
//! operations whose inputs are all constant fold to constants, which keeps
//! data-only arithmetic off the tape. Plate-sized reductions (sums, dot
//! products, Gaussian and Bernoulli log-densities over a vector) are fused
//! into single n-ary nodes.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

const CONSTANT: u32 = u32::MAX;

/// ½·ln(2π)
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug)]
struct Edge {
    parent: u32,
    partial: f64,
}

/// Append-only record of operations for one evaluation.
#[derive(Default)]
pub struct Tape {
    // `ends[i]` is one past the last edge of node `i`.
    ends: RefCell<Vec<u32>>,
    edges: RefCell<Vec<Edge>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.ends.borrow().len())
            .field("edges", &self.edges.borrow().len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            ends: RefCell::new(Vec::with_capacity(nodes)),
            edges: RefCell::new(Vec::with_capacity(2 * nodes)),
        }
    }

    /// A fresh independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut ends = self.ends.borrow_mut();
        let index = ends.len() as u32;
        let end = self.edges.borrow().len() as u32;
        ends.push(end);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.ends.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push<'t>(&'t self, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'t> {
        let mut all = self.edges.borrow_mut();
        all.extend(
            edges
                .into_iter()
                .map(|(parent, partial)| Edge { parent, partial }),
        );
        let end = all.len() as u32;
        drop(all);
        let mut ends = self.ends.borrow_mut();
        let index = ends.len() as u32;
        ends.push(end);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// Reverse sweep from `output`, returning the adjoint of every node.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        let ends = self.ends.borrow();
        let edges = self.edges.borrow();
        let mut adjoints = vec![0.0; ends.len()];
        if output.index == CONSTANT {
            return Gradients { adjoints };
        }
        adjoints[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let start = if i == 0 { 0 } else { ends[i - 1] as usize };
            for e in &edges[start..ends[i] as usize] {
                adjoints[e.parent as usize] += a * e.partial;
            }
        }
        Gradients { adjoints }
    }
}

/// Adjoints from one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        if v.index == CONSTANT {
            0.0
        } else {
            self.adjoints[v.index as usize]
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(v)).collect()
    }
}

/// A scalar on a tape, or a constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            write!(f, "Const({})", self.value)
        } else {
            write!(f, "Var#{}({})", self.index, self.value)
        }
    }
}

impl From<f64> for Var<'_> {
    fn from(value: f64) -> Self {
        Var::constant(value)
    }
}

impl<'t> Var<'t> {
    pub const fn constant(value: f64) -> Self {
        Var {
            tape: None,
            index: CONSTANT,
            value,
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn is_constant(&self) -> bool {
        self.index == CONSTANT
    }

    /// True if this is the constant `c` (structural, not a value test).
    pub fn is_constant_value(&self, c: f64) -> bool {
        self.is_constant() && self.value == c
    }

    #[inline]
    fn unary(self, value: f64, partial: f64) -> Var<'t> {
        match self.tape {
            Some(t) => t.push(value, [(self.index, partial)]),
            None => Var::constant(value),
        }
    }

    #[inline]
    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        match (self.tape, other.tape) {
            (Some(t), Some(_)) => t.push(value, [(self.index, da), (other.index, db)]),
            (Some(t), None) => t.push(value, [(self.index, da)]),
            (None, Some(t)) => t.push(value, [(other.index, db)]),
            (None, None) => Var::constant(value),
        }
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.unary(v, v)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    pub fn sqr(self) -> Var<'t> {
        self.unary(self.value * self.value, 2.0 * self.value)
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.value.sqrt();
        self.unary(v, 0.5 / v)
    }

    /// `self^exponent` for positive `self`, via `exp(exponent · ln self)`.
    pub fn pow(self, exponent: Var<'t>) -> Var<'t> {
        (exponent * self.ln()).exp()
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = sigmoid(self.value);
        self.unary(s, s * (1.0 - s))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus(self.value), sigmoid(self.value))
    }

    /// `ln σ(self)`, stable for large |self|.
    pub fn log_sigmoid(self) -> Var<'t> {
        self.unary(-softplus(-self.value), sigmoid(-self.value))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn tape_of<'t>(vars: &[Var<'t>]) -> Option<&'t Tape> {
    vars.iter().find_map(|v| v.tape)
}

/// Σ terms, as one node.
pub fn sum<'t>(terms: &[Var<'t>]) -> Var<'t> {
    let value = terms.iter().map(|v| v.value).sum();
    match tape_of(terms) {
        Some(t) => t.push(
            value,
            terms
                .iter()
                .filter(|v| !v.is_constant())
                .map(|v| (v.index, 1.0)),
        ),
        None => Var::constant(value),
    }
}

/// Σ coeffs[i]·vars[i] with constant coefficients, as one node.
pub fn dot<'t>(vars: &[Var<'t>], coeffs: &[f64]) -> Var<'t> {
    debug_assert_eq!(vars.len(), coeffs.len());
    let value = vars.iter().zip(coeffs).map(|(v, c)| v.value * c).sum();
    match tape_of(vars) {
        Some(t) => t.push(
            value,
            vars.iter()
                .zip(coeffs)
                .filter(|(v, _)| !v.is_constant())
                .map(|(v, &c)| (v.index, c)),
        ),
        None => Var::constant(value),
    }
}

#[inline]
fn at<'a, 't>(xs: &'a [Var<'t>], i: usize) -> &'a Var<'t> {
    if xs.len() == 1 {
        &xs[0]
    } else {
        &xs[i]
    }
}

/// Σᵢ log N(xᵢ | locᵢ, scaleᵢ), as one node. `loc` and `scale` may have
/// length 1 (broadcast) or `x.len()`. Scales must be positive; the caller
/// validates them.
pub fn normal_log_density_sum<'t>(x: &[Var<'t>], loc: &[Var<'t>], scale: &[Var<'t>]) -> Var<'t> {
    let n = x.len();
    let mut value = 0.0;
    let tape = tape_of(x).or_else(|| tape_of(loc)).or_else(|| tape_of(scale));
    let Some(tape) = tape else {
        for i in 0..n {
            value += normal_log_density(x[i].value, at(loc, i).value, at(scale, i).value);
        }
        return Var::constant(value);
    };
    let mut edges: Vec<(u32, f64)> = Vec::with_capacity(3 * n);
    let (mut d_loc_shared, mut d_scale_shared) = (0.0, 0.0);
    for i in 0..n {
        let (xi, mi, si) = (&x[i], at(loc, i), at(scale, i));
        let inv = 1.0 / si.value;
        let r = (xi.value - mi.value) * inv;
        value += -0.5 * r * r - si.value.ln() - HALF_LN_2PI;
        let dx = -r * inv;
        let ds = (r * r - 1.0) * inv;
        if !xi.is_constant() {
            edges.push((xi.index, dx));
        }
        if !mi.is_constant() {
            if loc.len() == 1 {
                d_loc_shared -= dx;
            } else {
                edges.push((mi.index, -dx));
            }
        }
        if !si.is_constant() {
            if scale.len() == 1 {
                d_scale_shared += ds;
            } else {
                edges.push((si.index, ds));
            }
        }
    }
    if loc.len() == 1 && !loc[0].is_constant() {
        edges.push((loc[0].index, d_loc_shared));
    }
    if scale.len() == 1 && !scale[0].is_constant() {
        edges.push((scale[0].index, d_scale_shared));
    }
    tape.push(value, edges)
}

/// Σᵢ log Bernoulli(yᵢ | σ(logitᵢ)) with the stable form
/// `y·ln σ(l) + (1−y)·ln σ(−l)`, as one node.
pub fn bernoulli_logit_log_mass_sum<'t>(y: &[f64], logits: &[Var<'t>]) -> Var<'t> {
    let mut value = 0.0;
    let mut edges = Vec::with_capacity(y.len());
    for (i, &yi) in y.iter().enumerate() {
        let l = at(logits, i);
        value += if yi > 0.5 {
            -softplus(-l.value)
        } else {
            -softplus(l.value)
        };
        if !l.is_constant() {
            edges.push((l.index, yi - sigmoid(l.value)));
        }
    }
    match tape_of(logits) {
        Some(t) => t.push(value, edges),
        None => Var::constant(value),
    }
}

/// log N(x | loc, scale) on plain floats.
pub fn normal_log_density(x: f64, loc: f64, scale: f64) -> f64 {
    let r = (x - loc) / scale;
    -0.5 * r * r - scale.ln() - HALF_LN_2PI
}

macro_rules! impl_binary {
    ($trait:ident, $method:ident, |$a:ident, $b:ident| $value:expr, $da:expr, $db:expr) => {
        impl<'t> $trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            #[inline]
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let ($a, $b) = (self.value, rhs.value);
                self.binary(rhs, $value, $da, $db)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            #[inline]
            fn $method(self, rhs: f64) -> Var<'t> {
                self.$method(Var::constant(rhs))
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            #[inline]
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                Var::constant(self).$method(rhs)
            }
        }
    };
}

impl_binary!(Add, add, |a, b| a + b, 1.0, 1.0);
impl_binary!(Sub, sub, |a, b| a - b, 1.0, -1.0);
impl_binary!(Mul, mul, |a, b| a * b, b, a);
impl_binary!(Div, div, |a, b| a / b, 1.0 / b, -a / (b * b));

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

/// Value and gradient of `f` at `x`.
pub fn grad<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let inputs = tape.vars(x);
    let out = f(&tape, &inputs)?;
    let value = out.value();
    if !value.is_finite() {
        return Err(Error::NonFiniteEvaluation(format!("value {value}")));
    }
    let g = tape.gradient(out).wrt_all(&inputs);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEvaluation("gradient".into()));
    }
    Ok((value, g))
}

/// Shared monotone count of gradient evaluations.
#[derive(Debug, Clone, Default)]
pub struct GradCounter(Arc<AtomicU64>);

impl GradCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }

    /// [`grad`], counted.
    pub fn grad<F>(&self, f: F, x: &[f64]) -> Result<(f64, Vec<f64>)>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        self.add(1);
        grad(f, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i] += h;
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn square() {
        let (v, g) = grad(|_, x| Ok(x[0] * x[0]), &[3.0]).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn standard_normal_log_density_gradient() {
        let (v, g) = grad(
            |_, x| Ok(normal_log_density_sum(x, &[0.0.into()], &[1.0.into()])),
            &[1.5],
        )
        .unwrap();
        assert!((v - normal_log_density(1.5, 0.0, 1.0)).abs() < 1e-15);
        assert!((g[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        fn f<'t>(_: &Tape, x: &[Var<'t>]) -> Var<'t> {
            let a = x[0] * x[1] - x[2] / (x[0] + 3.0);
            let b = x[1].exp().ln() + x[2].sigmoid() * x[0].softplus();
            let c = (x[0].sqr() + 1.0).pow(x[2].sigmoid()) + (-x[1]).log_sigmoid();
            a + b * c + x[0].sqr().sqrt()
        }
        let pt = [0.7, -1.3, 0.4];
        let (_, g) = grad(|t, x| Ok(f(t, x)), &pt).unwrap();
        let fd = finite_diff(
            |x| {
                let t = Tape::new();
                let v = t.vars(x);
                f(&t, &v).value()
            },
            &pt,
            1e-5,
        );
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn fused_reductions_match_unfused() {
        let pt = [0.3, -0.8, 1.7, 0.2];
        let fused = grad(
            |_, x| {
                let lp = normal_log_density_sum(&x[..2], &[x[2]], &[x[3].exp()]);
                let bl = bernoulli_logit_log_mass_sum(&[1.0, 0.0], &[x[0], x[1]]);
                Ok(lp + bl + dot(x, &[1.0, 2.0, 3.0, 4.0]) + sum(x))
            },
            &pt,
        )
        .unwrap();
        let unfused = grad(
            |_, x| {
                let s = x[3].exp();
                let mut acc = Var::constant(0.0);
                for xi in &x[..2] {
                    let r = (*xi - x[2]) / s;
                    acc = acc + (-0.5 * r.sqr() - s.ln() - HALF_LN_2PI);
                }
                acc = acc + x[0].log_sigmoid() + (-x[1]).log_sigmoid();
                for (i, xi) in x.iter().enumerate() {
                    acc = acc + *xi * (i as f64 + 1.0) + *xi;
                }
                Ok(acc)
            },
            &pt,
        )
        .unwrap();
        assert!((fused.0 - unfused.0).abs() < 1e-12);
        for (a, b) in fused.1.iter().zip(&unfused.1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_stay_off_the_tape() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let c = Var::constant(3.0) * 4.0 + Var::constant(1.0).exp();
        assert!(c.is_constant());
        let before = tape.len();
        let _ = x * c;
        assert_eq!(tape.len(), before + 1);
    }

    #[test]
    fn non_finite_is_an_error() {
        let err = grad(|_, x| Ok(x[0].ln()), &[-1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteEvaluation(_)));
    }

    #[test]
    fn counter_counts_grad_calls() {
        let c = GradCounter::new();
        assert_eq!(c.count(), 0);
        for _ in 0..3 {
            c.grad(|_, x| Ok(x[0] * 2.0), &[1.0]).unwrap();
        }
        assert_eq!(c.count(), 3);
        c.reset();
        assert_eq!(c.count(), 0);
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 0.3, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

}
