//! Leapfrog integration, the Metropolis-corrected HMC transition, and
//! step-size adaptation.
//!
//! The mass matrix is `diag(precond)⁻²`: momenta are drawn as
//! `N(0, 1) / precond` and the drift is `q += ε·precond²·p`, so a
//! preconditioner equal to the posterior scales whitens the target.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::LogDensity;

/// Position, cached density and gradient, and tuning state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub step_size: f64,
    pub preconditioner: Vec<f64>,
    pub rng: ChaCha8Rng,
    log_density: f64,
    gradient: Vec<f64>,
    grad_evals: u64,
}

impl ChainState {
    /// Evaluates and caches the gradient at `position` (one gradient
    /// evaluation).
    pub fn new<D: LogDensity + ?Sized>(
        target: &D,
        position: Vec<f64>,
        step_size: f64,
        preconditioner: Vec<f64>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if position.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                actual: position.len(),
            });
        }
        if preconditioner.len() != position.len() {
            return Err(Error::DimensionMismatch {
                expected: position.len(),
                actual: preconditioner.len(),
            });
        }
        if let Some(bad) = preconditioner.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "preconditioner entries must be positive, got {bad}"
            )));
        }
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        let mut state = Self {
            position,
            step_size,
            preconditioner,
            rng,
            log_density: f64::NAN,
            gradient: Vec::new(),
            grad_evals: 0,
        };
        state.refresh(target)?;
        Ok(state)
    }

    /// Moves to `position` and re-caches the gradient there. On error the
    /// state is left unchanged apart from the evaluation count.
    pub fn reset_position<D: LogDensity + ?Sized>(
        &mut self,
        target: &D,
        position: Vec<f64>,
    ) -> Result<()> {
        self.grad_evals += 1;
        let (lp, g) = target.value_and_grad(&position)?;
        self.position = position;
        self.log_density = lp;
        self.gradient = g;
        Ok(())
    }

    fn refresh<D: LogDensity + ?Sized>(&mut self, target: &D) -> Result<()> {
        self.grad_evals += 1;
        let (lp, g) = target.value_and_grad(&self.position)?;
        self.log_density = lp;
        self.gradient = g;
        Ok(())
    }

    pub fn log_density(&self) -> f64 {
        self.log_density
    }

    /// Gradient evaluations made on behalf of this chain so far.
    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }
}

fn kinetic(p: &[f64], precond: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(precond)
        .map(|(pi, di)| (pi * di) * (pi * di))
        .sum::<f64>()
}

struct Endpoint {
    q: Vec<f64>,
    p: Vec<f64>,
    log_density: f64,
    gradient: Vec<f64>,
}

/// Leapfrog from a cached gradient. `evals` counts gradient calls made,
/// including a failing one.
#[allow(clippy::too_many_arguments)]
fn integrate<D: LogDensity + ?Sized>(
    target: &D,
    mut q: Vec<f64>,
    mut p: Vec<f64>,
    mut log_density: f64,
    mut gradient: Vec<f64>,
    eps: f64,
    steps: usize,
    precond: &[f64],
    evals: &mut u64,
) -> Result<Endpoint> {
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&gradient) {
            *pi += 0.5 * eps * gi;
        }
        for ((qi, pi), di) in q.iter_mut().zip(&p).zip(precond) {
            *qi += eps * di * di * pi;
        }
        *evals += 1;
        let (lp, g) = target.value_and_grad(&q)?;
        log_density = lp;
        gradient = g;
        for (pi, gi) in p.iter_mut().zip(&gradient) {
            *pi += 0.5 * eps * gi;
        }
    }
    Ok(Endpoint {
        q,
        p,
        log_density,
        gradient,
    })
}

/// `steps` leapfrog steps of size `eps` on `U = −log p` with mass matrix
/// `diag(precond)⁻²`.
pub fn leapfrog<D: LogDensity + ?Sized>(
    target: &D,
    q: &[f64],
    p: &[f64],
    eps: f64,
    steps: usize,
    precond: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if steps == 0 || !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "leapfrog needs steps ≥ 1 and eps > 0, got {steps} and {eps}"
        )));
    }
    for len in [p.len(), precond.len()] {
        if len != q.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                actual: len,
            });
        }
    }
    let (lp, g) = target.value_and_grad(q)?;
    let mut evals = 0;
    let end = integrate(
        target,
        q.to_vec(),
        p.to_vec(),
        lp,
        g,
        eps,
        steps,
        precond,
        &mut evals,
    )?;
    Ok((end.q, end.p))
}

/// One HMC transition with fresh momentum. Returns the acceptance
/// probability; non-finite trajectories are rejected with probability 0.
pub fn hmc_step<D: LogDensity + ?Sized>(
    target: &D,
    state: &mut ChainState,
    num_leapfrog: usize,
) -> Result<f64> {
    Ok(transition(target, state, num_leapfrog)?.0)
}

/// [`hmc_step`], also reporting whether the proposal was accepted.
pub(crate) fn transition<D: LogDensity + ?Sized>(
    target: &D,
    state: &mut ChainState,
    num_leapfrog: usize,
) -> Result<(f64, bool)> {
    let p0: Vec<f64> = state
        .preconditioner
        .iter()
        .map(|d| state.rng.sample::<f64, _>(StandardNormal) / d)
        .collect();
    let h0 = -state.log_density + kinetic(&p0, &state.preconditioner);
    let u: f64 = state.rng.random();
    let result = integrate(
        target,
        state.position.clone(),
        p0,
        state.log_density,
        state.gradient.clone(),
        state.step_size,
        num_leapfrog,
        &state.preconditioner,
        &mut state.grad_evals,
    );
    let end = match result {
        Ok(end) => end,
        Err(e) if e.is_numerical() => return Ok((0.0, false)),
        Err(e) => return Err(e),
    };
    let h1 = -end.log_density + kinetic(&end.p, &state.preconditioner);
    let alpha = if h1.is_finite() {
        (h0 - h1).exp().min(1.0)
    } else {
        0.0
    };
    let accepted = u < alpha;
    if accepted {
        state.position = end.q;
        state.log_density = end.log_density;
        state.gradient = end.gradient;
    }
    Ok((alpha, accepted))
}

/// `log s ← log s ± rate` according to the sign of `alpha − target`.
pub fn adapt_step_size(s: f64, alpha: f64, target: f64, rate: f64) -> f64 {
    if alpha > target {
        s * rate.exp()
    } else if alpha < target {
        s * (-rate).exp()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::FnDensity;
    use rand::SeedableRng;

    fn std_normal() -> FnDensity<impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync> {
        FnDensity::new(1, |x: &[f64]| Ok((-0.5 * x[0] * x[0], vec![-x[0]])))
    }

    #[test]
    fn leapfrog_hand_example() {
        let (q, p) = leapfrog(&std_normal(), &[1.0], &[0.0], 1.0, 1, &[1.0]).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-15);
        assert!((p[0] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn leapfrog_zero_step_limit() {
        let (q, _) = leapfrog(&std_normal(), &[0.3], &[1.2], 1e-6, 1, &[1.0]).unwrap();
        assert!((q[0] - 0.3).abs() < 1e-5);
    }

    #[test]
    fn adaptation_examples() {
        assert!((adapt_step_size(0.1, 0.9, 0.75, 0.02) - 0.10202013400267558).abs() < 1e-15);
        assert_eq!(adapt_step_size(0.1, 0.75, 0.75, 0.02), 0.1);
        assert!((adapt_step_size(0.1, 0.5, 0.75, 0.02) - 0.09801986733067553).abs() < 1e-15);
    }

    #[test]
    fn step_counts_gradients() {
        let target = std_normal();
        let mut st =
            ChainState::new(&target, vec![0.2], 0.3, vec![1.0], ChaCha8Rng::seed_from_u64(1))
                .unwrap();
        assert_eq!(st.grad_evals(), 1);
        hmc_step(&target, &mut st, 7).unwrap();
        assert_eq!(st.grad_evals(), 8);
    }

    #[test]
    fn tiny_step_is_nearly_always_accepted() {
        let target = std_normal();
        let mut st =
            ChainState::new(&target, vec![0.7], 1e-6, vec![1.0], ChaCha8Rng::seed_from_u64(2))
                .unwrap();
        for _ in 0..20 {
            assert!(hmc_step(&target, &mut st, 1).unwrap() > 0.9999);
        }
    }

    #[test]
    fn non_finite_trajectory_is_rejected() {
        let target = FnDensity::new(1, |x: &[f64]| {
            if x[0] > 1.0 {
                Err(Error::NonFiniteEvaluation("boom".into()))
            } else {
                Ok((-0.5 * x[0] * x[0], vec![-x[0]]))
            }
        });
        let mut st =
            ChainState::new(&target, vec![0.9], 5.0, vec![1.0], ChaCha8Rng::seed_from_u64(3))
                .unwrap();
        let mut saw_reject = false;
        for _ in 0..20 {
            let a = hmc_step(&target, &mut st, 3).unwrap();
            saw_reject |= a == 0.0;
            assert!(st.position[0] <= 1.0);
        }
        assert!(saw_reject);
    }
}
