mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ipsim_core::fluctuation::{diffusion_matrix_at, drift_matrix_at};
use ipsim_core::limit::finite_field;
use ipsim_core::model::{fleming_viot_model, opinion_model, otc_model, Model};

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central difference of the limit field in direction `s`; exact up to
/// rounding for fields that are quadratic in `u`.
fn directional_derivative(model: &dyn Model, u: &[f64], s: &[f64]) -> Vec<f64> {
    let h = 1e-4;
    let k = u.len();
    let plus: Vec<f64> = (0..k).map(|i| u[i] + h * s[i]).collect();
    let minus: Vec<f64> = (0..k).map(|i| u[i] - h * s[i]).collect();
    let (mut fp, mut fm) = (vec![0.0; k], vec![0.0; k]);
    finite_field(model, &plus, &mut fp);
    finite_field(model, &minus, &mut fm);
    (0..k).map(|i| (fp[i] - fm[i]) / (2.0 * h)).collect()
}

proptest! {
    #[test]
    fn otc_field_matches_four_equation_system(
        raw in prop::collection::vec(0.01f64..1.0, 4),
        lu in 0.0f64..3.0, ld in 0.0f64..3.0, beta in 0.0f64..3.0, rho in 0.0f64..3.0,
    ) {
        let u = simplex(&raw);
        let m = otc_model(lu, ld, beta, rho).unwrap();
        let mut f = [0.0; 4];
        finite_field(&m, &u, &mut f);
        prop_assert!(max_abs(&f, &common::otc_field(lu, ld, beta, rho, &u)) <= 1e-12);
        prop_assert!(max_abs(&m.limit_field(&u), &f) <= 1e-12);
    }

    #[test]
    fn opinion_drift_and_diffusion_match_tables(
        raw in prop::collection::vec(0.01f64..1.0, 3),
        s in prop::collection::vec(-1.0f64..1.0, 3),
        alpha in 0.0f64..2.0, beta in 0.0f64..2.0,
    ) {
        let u = simplex(&raw);
        let (p, q) = (common::opinion_p(), common::opinion_q());
        let m = opinion_model(alpha, beta, p.clone(), q.clone(), 1).unwrap();
        let kern = m.linear_kernels().unwrap();
        let a = drift_matrix_at(kern, &u).unwrap();
        let got = &a * DVector::from_column_slice(&s);
        prop_assert!(max_abs(got.as_slice(), &common::opinion_drift(alpha, beta, &p, &q, &u, &s)) <= 1e-12);
        let g = diffusion_matrix_at(kern, &u).unwrap();
        prop_assert!((&g - common::opinion_diffusion(alpha, beta, &p, &q, &u)).abs().max() <= 1e-12);
    }

    #[test]
    fn fleming_viot_drift_matches_sde_on_zero_sum_directions(
        raw in prop::collection::vec(0.01f64..1.0, 3),
        s in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let u = simplex(&raw);
        let mean = s.iter().sum::<f64>() / 3.0;
        let s: Vec<f64> = s.iter().map(|x| x - mean).collect();
        let q = common::fv_q();
        let m = fleming_viot_model(q.clone(), 10.0).unwrap();
        let a = drift_matrix_at(m.linear_kernels().unwrap(), &u).unwrap();
        let got = &a * DVector::from_column_slice(&s);
        prop_assert!(max_abs(got.as_slice(), &common::fv_drift(&q, &u, &s)) <= 1e-12);
    }

    #[test]
    fn fleming_viot_diffusion_matches_table(raw in prop::collection::vec(0.01f64..1.0, 3)) {
        let u = simplex(&raw);
        let q = common::fv_q();
        let m = fleming_viot_model(q.clone(), 10.0).unwrap();
        let v = diffusion_matrix_at(m.linear_kernels().unwrap(), &u).unwrap();
        let naive = common::fv_diffusion_naive(&q, &u);
        let corrected = common::fv_diffusion_corrected(&q, &u);
        prop_assert!((&v - &corrected).abs().max() <= 1e-12);
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                prop_assert!((v[(i, j)] - naive[(i, j)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn drift_is_the_jacobian_of_the_limit_field(
        raw in prop::collection::vec(0.01f64..1.0, 3),
        s in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let u = simplex(&raw);
        let m = opinion_model(1.0, 1.0, common::opinion_p(), common::opinion_q(), 1).unwrap();
        let a = drift_matrix_at(m.linear_kernels().unwrap(), &u).unwrap();
        let got = &a * DVector::from_column_slice(&s);
        prop_assert!(max_abs(got.as_slice(), &directional_derivative(&m, &u, &s)) <= 1e-8);

        let mean = s.iter().sum::<f64>() / 3.0;
        let s0: Vec<f64> = s.iter().map(|x| x - mean).collect();
        let fv = fleming_viot_model(common::fv_q(), 10.0).unwrap();
        let a = drift_matrix_at(fv.linear_kernels().unwrap(), &u).unwrap();
        let got = &a * DVector::from_column_slice(&s0);
        prop_assert!(max_abs(got.as_slice(), &directional_derivative(&fv, &u, &s0)) <= 1e-8);
    }

    #[test]
    fn drift_columns_and_diffusion_rows_sum_to_zero(raw in prop::collection::vec(0.01f64..1.0, 3)) {
        let u = simplex(&raw);
        let op = opinion_model(1.0, 0.5, common::opinion_p(), common::opinion_q(), 1).unwrap();
        let fv = fleming_viot_model(common::fv_q(), 10.0).unwrap();
        for kern in [op.linear_kernels().unwrap(), fv.linear_kernels().unwrap()] {
            let a = drift_matrix_at(kern, &u).unwrap();
            let g = diffusion_matrix_at(kern, &u).unwrap();
            for j in 0..3 {
                prop_assert!(a.column(j).sum().abs() <= 1e-12);
                prop_assert!(g.row(j).sum().abs() <= 1e-12);
            }
            prop_assert!(g.symmetric_eigenvalues().min() >= -1e-12);
        }
    }
}

#[test]
fn naive_fleming_viot_diagonal_breaks_row_sums() {
    // With q(i,i) the full diagonal of a conservative generator, the naive
    // diagonal does not give zero row sums; the q(i,0) terms of the
    // corrected one do, as the covariance of a zero-mass fluctuation must.
    let q = common::fv_q();
    let u = [0.5, 0.3, 0.2];
    let naive = common::fv_diffusion_naive(&q, &u);
    let corrected = common::fv_diffusion_corrected(&q, &u);
    let rows = |m: &DMatrix<f64>| (0..3).map(|i| m.row(i).sum().abs()).fold(0.0, f64::max);
    assert!(rows(&corrected) <= 1e-14);
    assert!(rows(&naive) > 0.1);
}
