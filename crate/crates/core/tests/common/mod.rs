//! Closed-form fields and fluctuation matrices of the built-in models, written
//! out by hand and used as independent oracles for the generic machinery.
#![allow(dead_code)]

use nalgebra::DMatrix;

pub fn opinion_p() -> Vec<Vec<f64>> {
    vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5], vec![0.0, 1.0, 0.0]]
}

pub fn opinion_q() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.7, 0.3], vec![0.4, 0.0, 0.6], vec![0.5, 0.5, 0.0]]
}

/// Fleming–Viot rate matrix on `{0, 1, 2, 3}`, `0` absorbing.
pub fn fv_q() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.5, -1.5, 1.0, 0.0],
        vec![0.2, 0.3, -1.0, 0.5],
        vec![1.0, 0.0, 0.4, -1.4],
    ]
}

/// OTC limit field, component order `ho, hn, lo, ln`.
pub fn otc_field(lu: f64, ld: f64, beta: f64, rho: f64, u: &[f64]) -> [f64; 4] {
    let (ho, hn, lo, ln) = (u[0], u[1], u[2], u[3]);
    let trade = 2.0 * beta * hn * lo + rho * hn.min(lo);
    [
        trade + lu * lo - ld * ho,
        -trade + lu * ln - ld * hn,
        -trade - lu * lo + ld * ho,
        trade - lu * ln + ld * hn,
    ]
}

/// Opinion dynamics fluctuation drift `F(σ)`.
pub fn opinion_drift(alpha: f64, beta: f64, p: &[Vec<f64>], q: &[Vec<f64>], u: &[f64], s: &[f64]) -> Vec<f64> {
    let k = u.len();
    (0..k)
        .map(|i| {
            let mut f = -2.0 * alpha * u[i] * s[i];
            for j in 0..k {
                f += 2.0 * alpha * p[j][i] * u[j] * s[j];
                f += beta * (q[j][i] - q[i][j]) * (u[i] * s[j] + u[j] * s[i]);
            }
            f
        })
        .collect()
}

/// Opinion dynamics diffusion matrix `G(t)`.
pub fn opinion_diffusion(alpha: f64, beta: f64, p: &[Vec<f64>], q: &[Vec<f64>], u: &[f64]) -> DMatrix<f64> {
    let k = u.len();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            let mut g = alpha * u[i] * u[i];
            for kk in (0..k).filter(|&kk| kk != i) {
                g += alpha * p[kk][i] * u[kk] * u[kk] + beta * (q[kk][i] + q[i][kk]) * u[i] * u[kk];
            }
            g
        } else {
            -alpha * (p[j][i] * u[j] * u[j] + p[i][j] * u[i] * u[i]) - beta * (q[j][i] + q[i][j]) * u[i] * u[j]
        }
    })
}

/// Fleming–Viot fluctuation drift `Qᵀσ + (Σ_k q(k,0)σ_k) u + (Σ_k q(k,0)u_k) σ`
/// over the sites `1..=K` (vector index `i` is site `i + 1`).
pub fn fv_drift(q: &[Vec<f64>], u: &[f64], s: &[f64]) -> Vec<f64> {
    let k = u.len();
    let kill_s: f64 = (0..k).map(|j| q[j + 1][0] * s[j]).sum();
    let kill_u: f64 = (0..k).map(|j| q[j + 1][0] * u[j]).sum();
    (0..k)
        .map(|i| {
            let qt: f64 = (0..k).map(|j| q[j + 1][i + 1] * s[j]).sum();
            qt + kill_s * u[i] + kill_u * s[i]
        })
        .collect()
}

/// Fleming–Viot `V_t` with the diagonal `… − (q(i,i) − q(i,0))u_i + q(i,0)u_i²`,
/// a tempting but wrong simplification of the one below.
pub fn fv_diffusion_naive(q: &[Vec<f64>], u: &[f64]) -> DMatrix<f64> {
    let k = u.len();
    let qq = |a: usize, b: usize| q[a][b];
    DMatrix::from_fn(k, k, |i, j| {
        let (si, sj) = (i + 1, j + 1);
        if i == j {
            let mut v = 0.0;
            for kk in (0..k).filter(|&kk| kk != i) {
                v += (qq(kk + 1, si) + qq(kk + 1, 0) * u[i]) * u[kk];
            }
            v - (qq(si, si) - qq(si, 0)) * u[i] + qq(si, 0) * u[i] * u[i]
        } else {
            -qq(si, sj) * u[i] - qq(sj, si) * u[j] - (qq(si, 0) + qq(sj, 0)) * u[i] * u[j]
        }
    })
}

/// Fleming–Viot `V_t` with the diagonal that makes rows sum to zero:
/// `Σ_{k≠i}[q(k,i) + q(k,0)u_i]u_k − q(i,i)u_i − q(i,0)u_i²`. Off-diagonal
/// entries agree with the naive form.
pub fn fv_diffusion_corrected(q: &[Vec<f64>], u: &[f64]) -> DMatrix<f64> {
    let k = u.len();
    let mut v = fv_diffusion_naive(q, u);
    for i in 0..k {
        let si = i + 1;
        let mut d = 0.0;
        for kk in (0..k).filter(|&kk| kk != i) {
            d += (q[kk + 1][si] + q[kk + 1][0] * u[i]) * u[kk];
        }
        v[(i, i)] = d - q[si][si] * u[i] - q[si][0] * u[i] * u[i];
    }
    v
}
