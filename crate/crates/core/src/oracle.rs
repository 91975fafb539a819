//! Closed-form posterior geometry of the two-level conjugate model
//!
//! ```text
//! θ ~ N(0, 1),  μ ~ N(θ, σ_μ),  y_n ~ N(μ, σ)  (n = 1..N)
//! ```
//!
//! and its non-centred form (`μ = θ + σ_μ·μ̃`, `μ̃ ~ N(0, 1)`). With data
//! strength `q = N/σ²`, both posteriors are Gaussian; matrices here are
//! ordered `(μ, θ)` for the centred and `(μ̃, θ)` for the non-centred form.
//!
//! Condition numbers are the eigenvalue ratio of `DᵀVD` with
//! `D = diag(d*, 1)` and `d*` the best diagonal preconditioner, computed
//! numerically from the 2×2 eigenvalues.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterisation {
    Cp,
    Ncp,
}

/// Model constants `(σ_μ, σ, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateModelSpec {
    pub sigma_mu: f64,
    pub sigma: f64,
    pub n: usize,
}

impl ConjugateModelSpec {
    pub fn new(sigma_mu: f64, sigma: f64, n: usize) -> Result<Self> {
        if !(sigma_mu > 0.0 && sigma > 0.0 && sigma_mu.is_finite() && sigma.is_finite()) || n == 0
        {
            return Err(Error::InvalidConfig(format!(
                "conjugate model needs positive scales and N ≥ 1 (σ_μ={sigma_mu}, σ={sigma}, N={n})"
            )));
        }
        Ok(Self { sigma_mu, sigma, n })
    }

    /// `q = N / σ²`
    pub fn q(&self) -> f64 {
        self.n as f64 / (self.sigma * self.sigma)
    }

    pub fn strength(&self) -> DataStrength {
        DataStrength {
            sigma_mu: self.sigma_mu,
            q: self.q(),
        }
    }
}

/// The two numbers the posterior geometry depends on. `q = 0` is the
/// no-data limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataStrength {
    pub sigma_mu: f64,
    pub q: f64,
}

impl DataStrength {
    pub fn new(sigma_mu: f64, q: f64) -> Self {
        Self { sigma_mu, q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGeometry {
    pub v: Mat2,
    pub d_star: f64,
    pub kappa: f64,
    pub parameterisation: Parameterisation,
}

/// Posterior precision `A = V⁻¹`.
pub fn posterior_precision(s: DataStrength, p: Parameterisation) -> Mat2 {
    let (sm, q) = (s.sigma_mu, s.q);
    match p {
        Parameterisation::Cp => {
            let a = 1.0 / (sm * sm);
            [[a + q, -a], [-a, a + 1.0]]
        }
        Parameterisation::Ncp => [[sm * sm * q + 1.0, sm * q], [sm * q, q + 1.0]],
    }
}

pub fn posterior_cov(s: DataStrength, p: Parameterisation) -> Mat2 {
    let (sm, q) = (s.sigma_mu, s.q);
    let c = 1.0 / (sm * sm * q + q + 1.0);
    match p {
        Parameterisation::Cp => [
            [c * (1.0 + sm * sm), c],
            [c, c * (q * sm * sm + 1.0)],
        ],
        Parameterisation::Ncp => [
            [c * (q + 1.0), -c * sm * q],
            [-c * sm * q, c * (sm * sm * q + 1.0)],
        ],
    }
}

/// Posterior mean `A⁻¹b` given the sum of observations.
pub fn posterior_mean(spec: &ConjugateModelSpec, p: Parameterisation, sum_y: f64) -> [f64; 2] {
    let s = spec.strength();
    let t = sum_y / (spec.sigma * spec.sigma);
    let b = match p {
        Parameterisation::Cp => [t, 0.0],
        Parameterisation::Ncp => [spec.sigma_mu * t, t],
    };
    mat_vec(&posterior_cov(s, p), &b)
}

pub fn mat_vec(m: &Mat2, v: &[f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// Eigenvalues `(small, large)` of a symmetric 2×2 matrix.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let disc = (half_diff * half_diff + m[0][1] * m[1][0]).max(0.0).sqrt();
    let large = half_tr + disc;
    // det / large avoids cancellation in `half_tr - disc`.
    let small = if large != 0.0 { det / large } else { half_tr - disc };
    (small, large)
}

/// `diag(d, 1) · V · diag(d, 1)`
pub fn precondition(v: &Mat2, d: f64) -> Mat2 {
    [[d * d * v[0][0], d * v[0][1]], [d * v[1][0], v[1][1]]]
}

pub fn eigen_ratio(m: &Mat2) -> f64 {
    let (small, large) = sym_eigenvalues(m);
    large / small
}

/// Best `d` in `diag(d, 1)` for minimising the condition number.
pub fn best_diag_precond(s: DataStrength, p: Parameterisation) -> f64 {
    let (sm, q) = (s.sigma_mu, s.q);
    match p {
        Parameterisation::Cp => ((sm * sm * q + 1.0) / (sm * sm + 1.0)).sqrt(),
        Parameterisation::Ncp => ((sm * sm * q + 1.0) / (q + 1.0)).sqrt(),
    }
}

pub fn condition_number(s: DataStrength, p: Parameterisation) -> f64 {
    let v = posterior_cov(s, p);
    eigen_ratio(&precondition(&v, best_diag_precond(s, p)))
}

pub fn geometry(s: DataStrength, p: Parameterisation) -> PosteriorGeometry {
    PosteriorGeometry {
        v: posterior_cov(s, p),
        d_star: best_diag_precond(s, p),
        kappa: condition_number(s, p),
        parameterisation: p,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverRow {
    pub q: f64,
    pub kappa_cp: f64,
    pub kappa_ncp: f64,
}

/// κ_cp and κ_ncp along a grid of data strengths.
pub fn crossover_curve(sigma_mu: f64, q_grid: &[f64]) -> Result<Vec<CrossoverRow>> {
    if q_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("q grid must be sorted ascending".into()));
    }
    Ok(q_grid
        .iter()
        .map(|&q| {
            let s = DataStrength::new(sigma_mu, q);
            CrossoverRow {
                q,
                kappa_cp: condition_number(s, Parameterisation::Cp),
                kappa_ncp: condition_number(s, Parameterisation::Ncp),
            }
        })
        .collect())
}

/// `points` values from `lo` to `hi`, evenly spaced in log10.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|i| {
            let e = a + (b - a) * i as f64 / (points - 1) as f64;
            // Snap to exact decades so grids that cross them hit e.g. q = 1.
            if (e - e.round()).abs() < 1e-12 {
                10f64.powi(e.round() as i32)
            } else {
                10f64.powf(e)
            }
        })
        .collect()
}

/// Number of sign changes of `κ_cp − κ_ncp` along the curve (exact ties
/// are skipped).
pub fn crossings(rows: &[CrossoverRow]) -> usize {
    let signs: Vec<f64> = rows
        .iter()
        .map(|r| r.kappa_cp - r.kappa_ncp)
        .filter(|d| *d != 0.0)
        .map(f64::signum)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// `log p(y)` by conjugacy: `y ~ N(0, σ²I + (1 + σ_μ²)·11ᵀ)`.
pub fn log_evidence(spec: &ConjugateModelSpec, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let s2 = spec.sigma * spec.sigma;
    let c = 1.0 + spec.sigma_mu * spec.sigma_mu;
    let sum: f64 = y.iter().sum();
    let sum_sq: f64 = y.iter().map(|v| v * v).sum();
    let log_det = (n - 1.0) * s2.ln() + (s2 + n * c).ln();
    let quad = (sum_sq - c / (s2 + n * c) * sum * sum) / s2;
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * quad
}

#[cfg(test)]
mod tests {
    use super::*;
    use Parameterisation::{Cp, Ncp};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn covariances_at_unit_strength() {
        let s = DataStrength::new(1.0, 1.0);
        let cp = posterior_cov(s, Cp);
        let ncp = posterior_cov(s, Ncp);
        let third = 1.0 / 3.0;
        assert_eq!(cp, [[2.0 * third, third], [third, 2.0 * third]]);
        assert_eq!(ncp, [[2.0 * third, -third], [-third, 2.0 * third]]);
    }

    #[test]
    fn no_data_ncp_is_identity() {
        assert_eq!(posterior_cov(DataStrength::new(1.7, 0.0), Ncp), [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(condition_number(DataStrength::new(1.0, 0.0), Ncp), 1.0);
    }

    #[test]
    fn covariance_inverts_precision() {
        for &(sm, q) in &[(0.3, 0.01), (1.0, 1.0), (2.5, 40.0)] {
            for p in [Cp, Ncp] {
                let s = DataStrength::new(sm, q);
                let (a, v) = (posterior_precision(s, p), posterior_cov(s, p));
                for i in 0..2 {
                    for j in 0..2 {
                        let e = a[i][0] * v[0][j] + a[i][1] * v[1][j];
                        assert!(close(e, if i == j { 1.0 } else { 0.0 }, 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn parameterisations_related_by_affine_map() {
        // μ = θ + σ_μ μ̃ maps (μ̃, θ) to (μ, θ) with J = [[σ_μ, 1], [0, 1]].
        for &(sm, q) in &[(0.5, 0.2), (1.0, 3.0), (3.0, 100.0)] {
            let s = DataStrength::new(sm, q);
            let ncp = posterior_cov(s, Ncp);
            let cp = posterior_cov(s, Cp);
            let j = [[sm, 1.0], [0.0, 1.0]];
            let mut jv = [[0.0; 2]; 2];
            for i in 0..2 {
                for k in 0..2 {
                    jv[i][k] = j[i][0] * ncp[0][k] + j[i][1] * ncp[1][k];
                }
            }
            for i in 0..2 {
                for k in 0..2 {
                    let e = jv[i][0] * j[k][0] + jv[i][1] * j[k][1];
                    assert!((e - cp[i][k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn preconditioner_spot_values() {
        let one = DataStrength::new(1.0, 1.0);
        assert_eq!(best_diag_precond(one, Cp), 1.0);
        assert_eq!(best_diag_precond(one, Ncp), 1.0);
        let zero = DataStrength::new(1.0, 0.0);
        assert!(close(best_diag_precond(zero, Cp), 0.5f64.sqrt(), 1e-15));
    }

    #[test]
    fn condition_number_spot_values() {
        let one = DataStrength::new(1.0, 1.0);
        assert!(close(condition_number(one, Cp), 3.0, 1e-12));
        assert!(close(condition_number(one, Ncp), 3.0, 1e-12));
        let zero = DataStrength::new(1.0, 0.0);
        // eigenvalues of [[1, 1/√2], [1/√2, 1]] are 1 ± 1/√2
        let expected = (1.0 + 0.5f64.sqrt()) / (1.0 - 0.5f64.sqrt());
        assert!(close(condition_number(zero, Cp), expected, 1e-12));
        assert!((expected - 5.828_427).abs() < 1e-6);
        let strong = DataStrength::new(1.0, 1e4);
        assert!(condition_number(strong, Cp) < condition_number(strong, Ncp));
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let (a, b) = sym_eigenvalues(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!(close(a, 1.0, 1e-15) && close(b, 3.0, 1e-15));
    }

    #[test]
    fn crossover_has_one_sign_change() {
        let rows = crossover_curve(1.0, &log_grid(1e-3, 1e3, 61)).unwrap();
        assert_eq!(rows.len(), 61);
        assert_eq!(crossings(&rows), 1);
        let at_one = rows.iter().find(|r| r.q == 1.0).unwrap();
        assert!(close(at_one.kappa_cp, 3.0, 1e-12) && close(at_one.kappa_ncp, 3.0, 1e-12));
        for w in rows.windows(2) {
            assert!(w[1].kappa_ncp >= w[0].kappa_ncp - 1e-9);
            assert!(w[1].kappa_cp <= w[0].kappa_cp + 1e-9);
        }
        assert!(crossover_curve(1.0, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn evidence_matches_direct_gaussian() {
        // N = 1: y ~ N(0, σ² + 1 + σ_μ²)
        let spec = ConjugateModelSpec::new(1.5, 0.7, 1).unwrap();
        let var: f64 = 0.49 + 1.0 + 2.25;
        let y = 0.8;
        let direct = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * y * y / var;
        assert!(close(log_evidence(&spec, &[y]), direct, 1e-13));
    }
}
