mod common;

use autoreparam::inference::{
    ess_1d, leapfrog, run_hmc, FnDensity, HmcConfig, Leapfrog, LogDensity,
};
use autoreparam::pipeline::{run_method, Method};
use autoreparam::vi::ViConfig;
use ndarray::Axis;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Correlated Gaussian with precision `[[2, -1.2], [-1.2, 1.5]]`.
fn gaussian() -> impl LogDensity {
    FnDensity::new(2, |z: &[f64]| {
        let (a, b, c) = (2.0, -1.2, 1.5);
        let (x, y) = (z[0], z[1]);
        let lp = -0.5 * (a * x * x + 2.0 * b * x * y + c * y * y);
        Ok((lp, vec![-(a * x + b * y), -(b * x + c * y)]))
    })
}

fn short(seed: u64) -> HmcConfig {
    HmcConfig {
        warmup_steps: 300,
        adapt_steps: 200,
        samples: 4000,
        chains: 4,
        ..HmcConfig::desk(seed)
    }
    .with_leapfrog(Leapfrog::Fixed(4))
}

#[test]
fn draws_pass_kolmogorov_smirnov() {
    let target = FnDensity::new(1, |z: &[f64]| Ok((-0.5 * z[0] * z[0], vec![-z[0]])));
    let run = run_hmc(&target, &short(3), &[vec![2.0]], &[1.0]).unwrap();
    // Thin to roughly independent draws.
    let mut xs: Vec<f64> = run
        .draws
        .axis_iter(Axis(0))
        .flat_map(|c| c.column(0).iter().step_by(10).copied().collect::<Vec<_>>())
        .collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let cdf = Normal::new(0.0, 1.0).unwrap();
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value.
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d} with n = {n}");
}

#[test]
fn moments_of_correlated_gaussian() {
    let target = gaussian();
    // A fixed step well inside the stability limit. Adapted steps here land
    // near `2/√λ_max`, where a fixed trajectory length nearly resonates and
    // variance estimates converge slowly.
    let cfg = HmcConfig {
        adapt_rate: 0.0,
        initial_step_size: 0.3,
        ..short(9)
    };
    let run = run_hmc(&target, &cfg, &[vec![0.0, 0.0]], &[1.0, 1.0]).unwrap();
    let flat = run.draws.view().into_shape_with_order((4 * 4000, 2)).unwrap();
    let mean = flat.mean_axis(Axis(0)).unwrap();
    // Exact covariance is the inverse precision.
    let det = 2.0 * 1.5 - 1.2 * 1.2;
    let cov = [[1.5 / det, 1.2 / det], [1.2 / det, 2.0 / det]];
    for i in 0..2 {
        let col: Vec<f64> = flat.column(i).to_vec();
        let ess = ess_1d(&col);
        let se = (cov[i][i] / ess).sqrt();
        assert!(mean[i].abs() < 4.0 * se, "mean[{i}] = {} (se {se})", mean[i]);
        let var = col.iter().map(|x| (x - mean[i]).powi(2)).sum::<f64>() / col.len() as f64;
        assert!((var - cov[i][i]).abs() < 0.05 * cov[i][i], "var[{i}] = {var}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Negating the momentum and integrating again returns to the start.
    #[test]
    fn leapfrog_is_reversible(
        q in prop::array::uniform2(-2.0f64..2.0),
        p in prop::array::uniform2(-2.0f64..2.0),
        eps in 0.01f64..0.3,
        steps in 1usize..20,
        d in prop::array::uniform2(0.3f64..2.0),
    ) {
        let target = gaussian();
        let (q1, p1) = leapfrog(&target, &q, &p, eps, steps, &d).unwrap();
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (q2, p2) = leapfrog(&target, &q1, &back, eps, steps, &d).unwrap();
        for i in 0..2 {
            prop_assert!((q2[i] - q[i]).abs() < 1e-9);
            prop_assert!((p2[i] + p[i]).abs() < 1e-9);
        }
    }

    /// The leapfrog map has unit Jacobian determinant.
    #[test]
    fn leapfrog_preserves_volume(
        q in prop::array::uniform2(-2.0f64..2.0),
        p in prop::array::uniform2(-2.0f64..2.0),
        eps in 0.01f64..0.3,
        steps in 1usize..10,
    ) {
        let target = FnDensity::new(2, |z: &[f64]| {
            // Non-quadratic so the map is non-linear.
            let lp = -0.25 * z[0].powi(4) - 0.5 * z[1] * z[1] - 0.3 * z[0] * z[1];
            Ok((lp, vec![-z[0].powi(3) - 0.3 * z[1], -z[1] - 0.3 * z[0]]))
        });
        let map = |x: &[f64; 4]| -> [f64; 4] {
            let (a, b) = leapfrog(&target, &x[..2], &x[2..], eps, steps, &[1.0, 1.0]).unwrap();
            [a[0], a[1], b[0], b[1]]
        };
        let x0 = [q[0], q[1], p[0], p[1]];
        let h = 1e-6;
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let (mut up, mut down) = (x0, x0);
            up[j] += h;
            down[j] -= h;
            let (fu, fd) = (map(&up), map(&down));
            for i in 0..4 {
                jac[i][j] = (fu[i] - fd[i]) / (2.0 * h);
            }
        }
        prop_assert!((det4(jac) - 1.0).abs() < 1e-5, "det = {}", det4(jac));
    }

    #[test]
    fn ess_is_positive_and_bounded(xs in prop::collection::vec(-10.0f64..10.0, 20..400)) {
        let e = ess_1d(&xs);
        prop_assert!(e > 0.0 && e.is_finite());
        prop_assert!(e <= xs.len() as f64 * xs.len() as f64);
    }
}

fn det4(m: [[f64; 4]; 4]) -> f64 {
    let mut a = m;
    let mut det = 1.0;
    for c in 0..4 {
        let pivot = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if pivot != c {
            a.swap(pivot, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

#[test]
fn every_model_runs_under_every_method() {
    let vi = ViConfig {
        steps: 40,
        n_mc: 4,
        ..ViConfig::desk(1)
    };
    let hmc = HmcConfig {
        warmup_steps: 20,
        adapt_steps: 10,
        samples: 20,
        chains: 2,
        ..HmcConfig::desk(1)
    }
    .with_leapfrog(Leapfrog::Fixed(2));
    for (name, model) in common::zoo_models() {
        for method in Method::ALL {
            let run = run_method(&model, method, &vi, &hmc)
                .unwrap_or_else(|e| panic!("{name}/{method}: {e}"));
            assert_eq!(run.run.draws.dim(), (2, 20, run.layout.dim()), "{name}/{method}");
            assert!(run.run.draws.iter().all(|v| v.is_finite()), "{name}/{method}");
        }
    }
}
