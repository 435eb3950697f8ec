mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use ipsim_core::engine::{run_trajectory_with, sample_product_initial, InitialDistribution};
use ipsim_core::fluctuation::{
    build_diffusion_matrix, build_drift_matrix, extract_fluctuations, multinomial_covariance, psd_sqrt,
    relative_frobenius, sample_covariance, solve_fluctuation_covariance, SdeGrid,
};
use ipsim_core::limit::solve_limit_finite;
use ipsim_core::measure::TestFunction;
use ipsim_core::model::{opinion_model, two_state_model, Model};
use ipsim_core::rng::{stream, Purpose};

#[test]
fn psd_sqrt_reconstructs_random_psd_matrices() {
    let mut rng = stream(1, 0, Purpose::Auxiliary);
    for rank in [6, 3] {
        let b = DMatrix::from_fn(6, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = &b * b.transpose();
        let s = psd_sqrt(&g).unwrap();
        assert!(relative_frobenius(&(&s * &s), &g) <= 1e-10);
        assert!((&s - s.transpose()).abs().max() <= 1e-12);
    }
}

#[test]
fn indicator_fluctuation_at_time_zero_has_binomial_variance() {
    let model = two_state_model(1.0, 1.0, 0.0).unwrap();
    let p = 0.3;
    let law = InitialDistribution::Discrete { weights: vec![p, 1.0 - p] };
    let limit = solve_limit_finite(&model, &[p, 1.0 - p], 0.0, 0.1).unwrap();
    let phi = [TestFunction::indicator_label(0), TestFunction::constant(1.0)];
    let xs: Vec<f64> = (0..10_000u64)
        .map(|r| {
            let init = sample_product_initial(Model::space(&model), &law, 400, &mut stream(2, r, Purpose::Initial)).unwrap();
            let traj = run_trajectory_with(&model, &init, 0.0, stream(2, r, Purpose::Dynamics)).unwrap();
            let f = extract_fluctuations(&traj, &limit, &phi, &[0.0], r).unwrap();
            assert_eq!(f.values[0][1], 0.0);
            f.values[0][0]
        })
        .collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let want = p * (1.0 - p);
    assert!((var - want).abs() <= 0.1 * want, "{var} vs {want}");
}

#[test]
fn lyapunov_agrees_with_monte_carlo_sde() {
    let op = opinion_model(1.0, 1.0, common::opinion_p(), common::opinion_q(), 1).unwrap();
    let kern = op.linear_kernels().unwrap();
    let nu0 = [0.5, 0.3, 0.2];
    let dt = 2e-3;
    let limit = solve_limit_finite(&op, &nu0, 1.0, dt).unwrap();
    let a = build_drift_matrix(kern, &limit).unwrap();
    let g = build_diffusion_matrix(kern, &limit).unwrap();
    let sigma0 = multinomial_covariance(&nu0);
    let lyap = solve_fluctuation_covariance(|t| a.at(t), |t| g.at(t), &sigma0, 1.0, dt).unwrap();
    let grid = SdeGrid::new(|t| a.at(t), |t| g.at(t), 1.0, dt).unwrap();
    let samples = grid.terminal_samples(&sigma0, 100_000, &mut stream(3, 0, Purpose::Sde)).unwrap();
    let err = relative_frobenius(&sample_covariance(&samples), lyap.final_cov());
    assert!(err <= 0.03, "relative Frobenius error {err}");
    // the component sum of every path stays at zero
    let worst = samples.iter().map(|s| s.sum().abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn constant_coefficients_integrate_in_closed_form() {
    let g = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
    let s0 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25]));
    let path = solve_fluctuation_covariance(|_| DMatrix::zeros(2, 2), |_| g.clone(), &s0, 1.5, 0.1).unwrap();
    assert!((path.final_cov() - (&s0 + &g * 1.5)).abs().max() <= 1e-12);

    // scalar Ornstein–Uhlenbeck: Σ(t) = e^{-2t}Σ₀ + (1 − e^{-2t})·g/2
    let path = solve_fluctuation_covariance(
        |_| DMatrix::from_element(1, 1, -1.0),
        |_| DMatrix::from_element(1, 1, 3.0),
        &DMatrix::from_element(1, 1, 0.2),
        2.0,
        1e-3,
    )
    .unwrap();
    let e = (-4.0f64).exp();
    let want = e * 0.2 + (1.0 - e) * 1.5;
    assert!((path.final_cov()[(0, 0)] - want).abs() <= 1e-10);
}

#[test]
fn zero_kernel_model_has_constant_covariance() {
    let m = two_state_model(0.0, 0.0, 0.0).unwrap();
    let kern = m.linear_kernels().unwrap();
    let nu0 = [0.4, 0.6];
    let limit = solve_limit_finite(&m, &nu0, 1.0, 0.1).unwrap();
    let a = build_drift_matrix(kern, &limit).unwrap();
    let g = build_diffusion_matrix(kern, &limit).unwrap();
    let s0 = multinomial_covariance(&nu0);
    let path = solve_fluctuation_covariance(|t| a.at(t), |t| g.at(t), &s0, 1.0, 0.1).unwrap();
    for s in &path.mats {
        assert_eq!(s, &s0);
    }
}
