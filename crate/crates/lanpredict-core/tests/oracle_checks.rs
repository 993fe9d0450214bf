//! Cross-checks of the closed-form calculus against independent oracles:
//! a Taylor-series matrix exponential and direct Monte Carlo averages.

mod common;

use common::{expm_taylor, rel_frob};
use lanpredict_core::estimate::{hessian, mle_newton, score, score_shape_reference, SufficientStats};
use lanpredict_core::model::{
    efficiency_bound, fisher_info, mvm_moment, qer_limit, stationary_cov, transition,
};
use lanpredict_core::risk::run_batch;
use lanpredict_core::simulate::{sample_stationary_init, simulate_exact, PathGrid};
use lanpredict_core::{Estimator, ExperimentConfig, Horizon, Mat2, RngStream, SRule, Theta, Vec2};

fn theta_ref() -> Theta {
    Theta::new(1.0, 0.5).unwrap()
}

#[test]
fn spectral_exponential_agrees_with_taylor_expm() {
    // Sweep the domain, including near-degenerate and stiff corners.
    let cases = [
        (1.0, 0.5),
        (1.0, 0.0),
        (1.0, 0.999),
        (0.05, 0.01),
        (8.0, -7.5),
        (3.0, 2.0),
        (0.7, -0.69),
    ];
    for (alpha, beta) in cases {
        let theta = Theta::new(alpha, beta).unwrap();
        for h in [0.1, 1.0, 2.5] {
            let got = theta.matrix_fn(|l| (-h * l).exp());
            let want = expm_taylor(theta.drift_matrix().scale(-h));
            let rel = rel_frob(got, want);
            assert!(
                rel < 1e-12,
                "exp(-hQ) mismatch at alpha={alpha} beta={beta} h={h}: rel {rel:e}"
            );
        }
    }
}

#[test]
fn efficiency_bound_agrees_with_taylor_expm() {
    for (alpha, beta) in [(1.0, 0.5), (2.0, -1.2), (0.3, 0.25)] {
        let theta = Theta::new(alpha, beta).unwrap();
        let h = Horizon::new(1.0).unwrap();
        let got = efficiency_bound(theta, h);
        let e = expm_taylor(theta.drift_matrix().scale(-2.0 * h.value()));
        let rel = rel_frob(got, e);
        assert!(rel < 1e-12, "bound mismatch at ({alpha},{beta}): rel {rel:e}");
    }
}

#[test]
fn stationary_sampler_covariance_oracle() {
    let theta = theta_ref();
    let mut rng = RngStream::new(2024, 0).rng();
    let n = 200_000;
    let mut cov = Mat2::zero();
    for _ in 0..n {
        cov = cov + sample_stationary_init(theta, &mut rng).outer_sq();
    }
    cov = cov.scale(1.0 / n as f64);
    let want = stationary_cov(theta);
    // Entry SEs are of order sqrt(2) * var / sqrt(n) ~ 2e-3.
    let band = 4.0 * 2.0f64.sqrt() * want.a11 / (n as f64).sqrt();
    assert!((cov.a11 - want.a11).abs() < band, "var(X1) {} vs {}", cov.a11, want.a11);
    assert!((cov.a22 - want.a22).abs() < band, "var(X2) {} vs {}", cov.a22, want.a22);
    assert!((cov.a12 - want.a12).abs() < band, "cov {} vs {}", cov.a12, want.a12);
}

#[test]
fn mvm_moment_monte_carlo_oracle() {
    // E[M(X) V M(X)'] under the stationary law for asymmetric-free V.
    let theta = theta_ref();
    let cases = [
        fisher_info(theta),
        Mat2::identity(),
        Mat2::new(2.0, 0.3, 0.3, 0.5),
    ];
    let n = 400_000;
    for (k, v) in cases.into_iter().enumerate() {
        let want = mvm_moment(theta, v);
        let mut acc = Mat2::zero();
        let mut rng = RngStream::new(555, k as u64).rng();
        let mut sq = Mat2::zero();
        for _ in 0..n {
            let x = sample_stationary_init(theta, &mut rng);
            let m = Mat2::coeff_matrix(x);
            let term = m.sandwich(v);
            acc = acc + term;
            sq = sq + Mat2::new(
                term.a11 * term.a11,
                term.a12 * term.a12,
                term.a21 * term.a21,
                term.a22 * term.a22,
            );
        }
        let mean = acc.scale(1.0 / n as f64);
        let entry_se = |m: f64, s: f64| ((s / n as f64 - m * m) / n as f64).sqrt();
        for (got, want_e, sq_e) in [
            (mean.a11, want.a11, sq.a11),
            (mean.a12, want.a12, sq.a12),
            (mean.a22, want.a22, sq.a22),
        ] {
            let se = entry_se(got, sq_e);
            assert!(
                (got - want_e).abs() < 4.0 * se,
                "moment entry {got} vs {want_e} (se {se:e}) for V={v}"
            );
        }
    }
}

#[test]
fn qer_limit_monte_carlo_oracle() {
    // h^2 E[(exp(-hQ) M(X)) V (exp(-hQ) M(X))'] matches the closed form.
    let theta = theta_ref();
    let h = Horizon::new(1.0).unwrap();
    let v = fisher_info(theta);
    let want = qer_limit(theta, h, v);
    let e = theta.matrix_fn(|l| (-h.value() * l).exp());
    let mut rng = RngStream::new(808, 0).rng();
    let n = 300_000;
    let mut acc = Mat2::zero();
    for _ in 0..n {
        let x = sample_stationary_init(theta, &mut rng);
        let b = e * Mat2::coeff_matrix(x);
        acc = acc + b.sandwich(v);
    }
    let mean = acc.scale(h.value() * h.value() / n as f64);
    let rel = rel_frob(mean, want);
    assert!(rel < 0.02, "qer limit MC off by {rel:.4}: {mean} vs {want}");
}

#[test]
fn observed_information_converges_to_fisher_info() {
    // -E[hessian]/T -> I(theta) = Q^-1.
    let theta = theta_ref();
    let t = 50.0;
    let grid = PathGrid::for_horizon(t, 0.01).unwrap();
    let n_rep = 200u64;
    let mut acc = Mat2::zero();
    for rep in 0..n_rep {
        let p = simulate_exact(theta, grid, RngStream::new(99, rep));
        let st = SufficientStats::from_path(&p);
        acc = acc + hessian(theta, &st).scale(-1.0 / t);
    }
    let mean = acc.scale(1.0 / n_rep as f64);
    let want = fisher_info(theta);
    let rel = rel_frob(mean, want);
    assert!(rel < 0.05, "observed information off by {rel:.4}: {mean} vs {want}");
}

#[test]
fn newton_mle_is_root_n_consistent() {
    // ||theta_hat - theta|| < 3/sqrt(T) on at least 95% of replications.
    let theta = theta_ref();
    let t = 50.0;
    let grid = PathGrid::for_horizon(t, 0.01).unwrap();
    let n_rep = 200u64;
    let mut close = 0usize;
    for rep in 0..n_rep {
        let p = simulate_exact(theta, grid, RngStream::new(314, rep));
        let st = SufficientStats::from_path(&p);
        let fit = mle_newton(&st, theta, 1e-10, 50).unwrap();
        assert!(fit.converged);
        if (fit.theta_hat.as_vec() - theta.as_vec()).norm() < 3.0 / t.sqrt() {
            close += 1;
        }
    }
    assert!(
        close as f64 >= 0.95 * n_rep as f64,
        "only {close}/{n_rep} replications within 3/sqrt(T)"
    );
}

#[test]
fn score_at_truth_is_centered() {
    // E[score(theta_0)] = 0 under stationary exact simulation.
    let theta = theta_ref();
    let t = 20.0;
    let grid = PathGrid::for_horizon(t, 0.01).unwrap();
    let n_rep = 600u64;
    let mut sum = Vec2::ZERO;
    let mut sum_sq = Vec2::ZERO;
    for rep in 0..n_rep {
        let p = simulate_exact(theta, grid, RngStream::new(2718, rep));
        let st = SufficientStats::from_path(&p);
        let g = score(theta, &st);
        sum = sum + g;
        sum_sq = sum_sq + Vec2::new(g.x * g.x, g.y * g.y);
    }
    let n = n_rep as f64;
    let mean = sum.scale(1.0 / n);
    for (label, m, sq) in [("alpha", mean.x, sum_sq.x), ("beta", mean.y, sum_sq.y)] {
        let se = ((sq / n - m * m) / n).sqrt();
        assert!(
            m.abs() < 4.0 * se,
            "score component {label} biased: mean {m} vs SE {se}"
        );
    }
}

#[test]
fn transition_drift_agrees_with_taylor_expm() {
    for (alpha, beta, dt) in [(1.0, 0.5, 0.01), (2.0, 1.5, 0.37), (0.4, -0.3, 1.0)] {
        let theta = Theta::new(alpha, beta).unwrap();
        let tr = transition(theta, dt).unwrap();
        let want = expm_taylor(theta.drift_matrix().scale(-dt));
        assert!(rel_frob(tr.drift, want) < 1e-12);
    }
}

#[test]
fn score_shape_closed_form_matches_monte_carlo() {
    // The finite-horizon skewness and excess kurtosis of the score are far
    // from their Gaussian limits at moderate T; check the closed form
    // against a direct replication experiment.
    let cfg = ExperimentConfig {
        theta: theta_ref(),
        h: Horizon::new(1.0).unwrap(),
        t_grid: vec![50.0],
        dt: 0.02,
        n_rep: 4000,
        master_seed: 31,
        estimator: Estimator::Oracle,
        s_rule: SRule::TMinusSqrtT,
        threads: 0,
    };
    let batch = run_batch(&cfg, 50.0).unwrap();
    let shape = score_shape_reference(theta_ref(), 50.0);
    for (label, got, want, tol) in [
        ("skew 1", batch.score_skewness.x, shape.skewness.x, 0.15),
        ("skew 2", batch.score_skewness.y, shape.skewness.y, 0.15),
        ("ex kurtosis 1", batch.score_ex_kurtosis.x, shape.ex_kurtosis.x, 0.35),
        ("ex kurtosis 2", batch.score_ex_kurtosis.y, shape.ex_kurtosis.y, 0.35),
    ] {
        assert!(
            (got - want).abs() < tol,
            "{label}: MC {got:.4} vs closed form {want:.4}"
        );
    }
}
