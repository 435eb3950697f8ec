//! Fluctuations around the limit: `σ^N_t = √N (ν^N_t − ν_t)`.
//!
//! For finite `W` the limit fluctuations solve the linear SDE
//! `dσ = A(t) σ dt + G(t)^{1/2} dB`, with `A_ij = (J_t 1_{w_i})(w_j)` and
//! `G_ij = C_t^{1_i, 1_j}`. Its covariance solves the Lyapunov equation
//! `Σ′ = AΣ + ΣAᵀ + G`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::limit::{interpolate_limit, LimitKind, LimitTrajectory};
use crate::measure::{pair, EmpiricalMeasure, TestFunction, TypeValue};
use crate::model::{LinearKernels, Model};
use crate::rng::SimRng;

const PSD_TOL: f64 = 1e-8;

/// `σ^N_t(φ_m)` for a family of test functions at a list of times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationSample {
    pub n: usize,
    pub replica: u64,
    pub times: Vec<f64>,
    /// `values[t][m]`
    pub values: Vec<Vec<f64>>,
}

/// `⟨ν_t, φ⟩` for a limit state.
pub fn pair_limit(kind: &LimitKind, state: &[f64], phi: &TestFunction) -> f64 {
    if let Some(c) = phi.is_constant() {
        return c;
    }
    match kind {
        LimitKind::Finite => state
            .iter()
            .enumerate()
            .map(|(i, u)| u * phi.eval(&TypeValue::Label(i)))
            .sum(),
        LimitKind::Density { lo, dx, .. } => {
            state
                .iter()
                .enumerate()
                .map(|(k, g)| g * phi.eval(&TypeValue::Real(lo + k as f64 * dx)))
                .sum::<f64>()
                * dx
        }
    }
}

pub fn extract_fluctuations(
    traj: &Trajectory,
    limit: &LimitTrajectory,
    family: &[TestFunction],
    times: &[f64],
    replica: u64,
) -> Result<FluctuationSample> {
    let measures = traj.measures_at(times)?;
    let root_n = (traj.n() as f64).sqrt();
    let mut values = Vec::with_capacity(times.len());
    for (&t, m) in times.iter().zip(&measures) {
        let state = interpolate_limit(limit, t)?;
        values.push(
            family
                .iter()
                .map(|phi| root_n * (pair(m, phi) - pair_limit(&limit.kind, &state, phi)))
                .collect(),
        );
    }
    Ok(FluctuationSample {
        n: traj.n(),
        replica,
        times: times.to_vec(),
        values,
    })
}

/// `Γφ(w; z) = ∫ (φ(w′) − φ(w)) Γ(w, z, dw′)`
fn gamma_phi(k: &dyn LinearKernels, phi: &dyn Fn(&TypeValue) -> f64, w: &TypeValue, z: &TypeValue) -> f64 {
    let pw = phi(w);
    k.gamma_measure(w, z).integrate(|t| phi(t) - pw)
}

/// `Λφ(w1, w2; z) = ∫ (φ(w1′) + φ(w2′) − φ(w1) − φ(w2)) Λ(w1, w2, z, dw1′ dw2′)`
fn lambda_phi(k: &dyn LinearKernels, phi: &dyn Fn(&TypeValue) -> f64, w1: &TypeValue, w2: &TypeValue, z: &TypeValue) -> f64 {
    let base = phi(w1) + phi(w2);
    k.lambda_measure(w1, w2, z).integrate(|(a, b)| phi(a) + phi(b) - base)
}

/// `J φ(z)` at each of `points`, for a discrete measure `nu` given as weighted atoms.
pub fn apply_drift_operator(
    kernels: &dyn LinearKernels,
    nu: &[(TypeValue, f64)],
    phi: &dyn Fn(&TypeValue) -> f64,
    points: &[TypeValue],
) -> Vec<f64> {
    points
        .iter()
        .map(|z| {
            let mut s = 0.0;
            if kernels.has_gamma() {
                for (w, uw) in nu {
                    s += uw * (gamma_phi(kernels, phi, w, z) + gamma_phi(kernels, phi, z, w));
                }
            }
            if kernels.has_lambda() {
                for (w1, u1) in nu {
                    for (w2, u2) in nu {
                        let uu = u1 * u2;
                        // Λφ(w1,w2;z) + Λφ(z,w1;w2) + Λφ(w1,z;w2)
                        s += uu
                            * (lambda_phi(kernels, phi, w1, w2, z)
                                + lambda_phi(kernels, phi, z, w1, w2)
                                + lambda_phi(kernels, phi, w1, z, w2));
                    }
                }
            }
            s
        })
        .collect()
}

/// `C^{φ1,φ2}` at the discrete measure `nu`.
pub fn diffusion_entry(
    kernels: &dyn LinearKernels,
    nu: &[(TypeValue, f64)],
    phi1: &dyn Fn(&TypeValue) -> f64,
    phi2: &dyn Fn(&TypeValue) -> f64,
) -> f64 {
    let mut s = 0.0;
    for (z, uz) in nu {
        if kernels.has_gamma() {
            for (w, uw) in nu {
                let (a, b) = (phi1(w), phi2(w));
                s += uz * uw * kernels.gamma_measure(w, z).integrate(|t| (phi1(t) - a) * (phi2(t) - b));
            }
        }
        if kernels.has_lambda() {
            for (w1, u1) in nu {
                for (w2, u2) in nu {
                    let (a, b) = (phi1(w1) + phi1(w2), phi2(w1) + phi2(w2));
                    s += uz
                        * u1
                        * u2
                        * kernels
                            .lambda_measure(w1, w2, z)
                            .integrate(|(x, y)| (phi1(x) + phi1(y) - a) * (phi2(x) + phi2(y) - b));
                }
            }
        }
    }
    s
}

fn label_atoms(u: &[f64]) -> Vec<(TypeValue, f64)> {
    u.iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(i, &x)| (TypeValue::Label(i), x))
        .collect()
}

fn finite_size(kernels: &dyn LinearKernels) -> Result<usize> {
    kernels
        .space()
        .size()
        .ok_or(Error::Unsupported("drift and diffusion matrices need a finite type space"))
}

/// `A_ij = (J 1_{w_i})(w_j)` at the state `u`.
pub fn drift_matrix_at(kernels: &dyn LinearKernels, u: &[f64]) -> Result<DMatrix<f64>> {
    let k = finite_size(kernels)?;
    let nu = label_atoms(u);
    let points: Vec<TypeValue> = (0..k).map(TypeValue::Label).collect();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let ind = move |w: &TypeValue| if w.label() == Some(i) { 1.0 } else { 0.0 };
        for (j, v) in apply_drift_operator(kernels, &nu, &ind, &points).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    Ok(a)
}

/// `G_ij = C^{1_i, 1_j}` at the state `u`.
pub fn diffusion_matrix_at(kernels: &dyn LinearKernels, u: &[f64]) -> Result<DMatrix<f64>> {
    let k = finite_size(kernels)?;
    let nu = label_atoms(u);
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let pi = move |w: &TypeValue| if w.label() == Some(i) { 1.0 } else { 0.0 };
            let pj = move |w: &TypeValue| if w.label() == Some(j) { 1.0 } else { 0.0 };
            let v = diffusion_entry(kernels, &nu, &pi, &pj);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// A matrix-valued function sampled on a time grid, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    pub times: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return self.mats[0].clone();
        }
        if i == self.times.len() || self.times[i - 1] == t {
            return self.mats[i - 1].clone();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let th = (t - t0) / (t1 - t0);
        &self.mats[i - 1] * (1.0 - th) + &self.mats[i] * th
    }
}

fn finite_limit(limit: &LimitTrajectory) -> Result<()> {
    match limit.kind {
        LimitKind::Finite => Ok(()),
        _ => Err(Error::Unsupported("drift and diffusion matrices need a finite limit")),
    }
}

pub fn build_drift_matrix(kernels: &dyn LinearKernels, limit: &LimitTrajectory) -> Result<MatrixPath> {
    finite_limit(limit)?;
    let mats = limit.states.iter().map(|u| drift_matrix_at(kernels, u)).collect::<Result<_>>()?;
    Ok(MatrixPath {
        times: limit.times.clone(),
        mats,
    })
}

pub fn build_diffusion_matrix(kernels: &dyn LinearKernels, limit: &LimitTrajectory) -> Result<MatrixPath> {
    finite_limit(limit)?;
    let mats = limit.states.iter().map(|u| diffusion_matrix_at(kernels, u)).collect::<Result<_>>()?;
    Ok(MatrixPath {
        times: limit.times.clone(),
        mats,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root. Eigenvalues in `[−1e-8, 0)` are treated as zero.
pub fn psd_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !g.is_square() {
        return Err(Error::SpaceMismatch {
            left: g.nrows(),
            right: g.ncols(),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(g));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `diag(u) − u uᵀ`: the covariance of `√N(ν^N_0 − ν_0)` under product initials.
pub fn multinomial_covariance(u: &[f64]) -> DMatrix<f64> {
    let v = DVector::from_column_slice(u);
    DMatrix::from_diagonal(&v) - &v * v.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePath {
    pub times: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
}

impl CovariancePath {
    pub fn final_cov(&self) -> &DMatrix<f64> {
        self.mats.last().unwrap()
    }
}

/// RK4 on `Σ′ = A(t)Σ + ΣA(t)ᵀ + G(t)`; every node is checked to be PSD.
pub fn solve_fluctuation_covariance(
    a: impl Fn(f64) -> DMatrix<f64>,
    g: impl Fn(f64) -> DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    t_end: f64,
    dt: f64,
) -> Result<CovariancePath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::config("t_end", format!("must be finite and >= 0, got {t_end}")));
    }
    psd_sqrt(sigma0)?;
    let f = |t: f64, s: &DMatrix<f64>| {
        let at = a(t);
        &at * s + s * at.transpose() + g(t)
    };
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if n == 0 { dt } else { t_end / n as f64 };
    let mut times = vec![0.0];
    let mut mats = vec![symmetrize(sigma0)];
    for s in 0..n {
        let t = s as f64 * h;
        let y = mats.last().unwrap();
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(y + &k3 * h));
        let next = symmetrize(&(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)));
        let tn = if s + 1 == n { t_end } else { (s + 1) as f64 * h };
        let min = SymmetricEigen::new(next.clone()).eigenvalues.min();
        if min < -PSD_TOL * next.norm().max(1.0) {
            return Err(Error::StepSize(format!(
                "covariance lost positive semidefiniteness (eigenvalue {min:e}) at t = {tn}; reduce dt"
            )));
        }
        times.push(tn);
        mats.push(next);
    }
    Ok(CovariancePath { times, mats })
}

/// Euler–Maruyama coefficients `A(t_n)` and `G(t_n)^{1/2}` precomputed on the step grid.
#[derive(Debug, Clone)]
pub struct SdeGrid {
    pub times: Vec<f64>,
    drift: Vec<DMatrix<f64>>,
    noise: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSdePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl SdeGrid {
    pub fn new(a: impl Fn(f64) -> DMatrix<f64>, g: impl Fn(f64) -> DMatrix<f64>, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::config("dt", format!("need dt > 0 and T >= 0, got {dt}, {t_end}")));
        }
        let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        let h = if n == 0 { dt } else { t_end / n as f64 };
        let times: Vec<f64> = (0..=n).map(|s| if s == n { t_end } else { s as f64 * h }).collect();
        let mut drift = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        for &t in &times[..n] {
            drift.push(a(t) * h);
            noise.push(psd_sqrt(&g(t))? * h.sqrt());
        }
        Ok(SdeGrid { times, drift, noise })
    }

    pub fn dim(&self) -> usize {
        self.drift.first().map_or(0, |m| m.nrows())
    }

    fn step(&self, s: usize, x: &mut DVector<f64>, xi: &mut DVector<f64>, scratch: &mut DVector<f64>, rng: &mut SimRng) {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // x ← x + A h x + S √h ξ
        scratch.gemv(1.0, &self.drift[s], x, 0.0);
        scratch.gemv(1.0, &self.noise[s], xi, 1.0);
        *x += &*scratch;
    }

    pub fn simulate(&self, sigma0: &[f64], rng: &mut SimRng) -> LimitSdePath {
        let k = sigma0.len();
        let mut x = DVector::from_column_slice(sigma0);
        let mut xi = DVector::zeros(k);
        let mut scratch = DVector::zeros(k);
        let mut states = vec![sigma0.to_vec()];
        for s in 0..self.drift.len() {
            self.step(s, &mut x, &mut xi, &mut scratch, rng);
            states.push(x.iter().copied().collect());
        }
        LimitSdePath {
            times: self.times.clone(),
            states,
        }
    }

    /// Terminal values of `paths` independent paths started from `N(0, init_cov)`.
    pub fn terminal_samples(&self, init_cov: &DMatrix<f64>, paths: usize, rng: &mut SimRng) -> Result<Vec<DVector<f64>>> {
        let k = init_cov.nrows();
        let s0 = psd_sqrt(init_cov)?;
        let mut xi = DVector::zeros(k);
        let mut scratch = DVector::zeros(k);
        let mut out = Vec::with_capacity(paths);
        for _ in 0..paths {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let mut x = &s0 * &xi;
            for s in 0..self.drift.len() {
                self.step(s, &mut x, &mut xi, &mut scratch, rng);
            }
            out.push(x);
        }
        Ok(out)
    }
}

pub fn simulate_limit_sde(
    a: impl Fn(f64) -> DMatrix<f64>,
    g: impl Fn(f64) -> DMatrix<f64>,
    sigma0: &[f64],
    t_end: f64,
    dt: f64,
    rng: &mut SimRng,
) -> Result<LimitSdePath> {
    Ok(SdeGrid::new(a, g, t_end, dt)?.simulate(sigma0, rng))
}

/// Sample covariance (divisor `n − 1`) of a set of vectors.
pub fn sample_covariance(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs.len();
    let k = xs.first().map_or(0, |x| x.len());
    let mut mean = DVector::zeros(k);
    for x in xs {
        mean += x;
    }
    mean /= n as f64;
    let mut c = DMatrix::zeros(k, k);
    for x in xs {
        let d = x - &mean;
        c.ger(1.0, &d, &d, 1.0);
    }
    c / (n as f64 - 1.0)
}

/// The compensated process `M^{N,φ}` along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleResidual {
    /// `0`, each event time, then `T`.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `Σ (ΔM)²`
    pub realized_qv: f64,
    /// `∫ d⟨M⟩` with the `1/N` prefactor.
    pub predictable_qv: f64,
}

/// Drift and predictable-QV integrands of `⟨ν^N, φ⟩` at the measure `nu`,
/// matching the engine (ordered pairs of distinct agents, so same-type pairs
/// carry weight `ν(w)(ν(w) − 1/N)`).
fn compensator_rates(model: &dyn Model, nu: &EmpiricalMeasure, phi: &TestFunction) -> (f64, f64) {
    let nf = nu.n() as f64;
    let atoms = nu.atoms();
    let mut drift = 0.0;
    let mut qv = 0.0;
    for (w, c) in &atoms {
        let uw = *c as f64 / nf;
        let g = model.gamma(w, nu);
        if g == 0.0 {
            continue;
        }
        let pw = phi.eval(w);
        let a = model.jump_kernel(w, nu).normalized();
        drift += uw * g * a.integrate(|t| phi.eval(t) - pw);
        qv += uw * g * a.integrate(|t| (phi.eval(t) - pw).powi(2));
    }
    if model.lambda_bar() > 0.0 {
        for (w1, c1) in &atoms {
            for (w2, c2) in &atoms {
                let weight = (*c1 as f64 / nf) * ((*c2 - u64::from(w1 == w2)) as f64 / nf);
                if weight == 0.0 {
                    continue;
                }
                let l = model.lambda(w1, w2, nu);
                if l == 0.0 {
                    continue;
                }
                let base = phi.eval(w1) + phi.eval(w2);
                let b = model.pair_kernel(w1, w2, nu).normalized();
                drift += weight * l * b.integrate(|(x, y)| phi.eval(x) + phi.eval(y) - base);
                qv += weight * l * b.integrate(|(x, y)| (phi.eval(x) + phi.eval(y) - base).powi(2));
            }
        }
    }
    for ch in model.channels() {
        let mut intensity = ch.intensity(nu);
        if intensity == 0.0 {
            continue;
        }
        let (pa, pb) = ch.participants();
        if pa == pb {
            let c = nu.label_count(pa) as f64;
            intensity *= (c - 1.0).max(0.0) / c;
        }
        let base = phi.eval(&TypeValue::Label(pa)) + phi.eval(&TypeValue::Label(pb));
        let o = ch.outcome(nu).normalized();
        drift += intensity * o.integrate(|(x, y)| phi.eval(x) + phi.eval(y) - base);
        qv += intensity * o.integrate(|(x, y)| (phi.eval(x) + phi.eval(y) - base).powi(2));
    }
    (drift, qv / nf)
}

/// `M_t = ⟨ν^N_t, φ⟩ − ⟨ν^N_0, φ⟩ − ∫₀ᵗ drift(ν^N_s) ds`, integrated exactly over
/// the piecewise-constant segments between events.
pub fn martingale_residual(traj: &Trajectory, model: &dyn Model, phi: &TestFunction) -> MartingaleResidual {
    let mut times = Vec::with_capacity(traj.events().len() + 2);
    let mut values = Vec::with_capacity(traj.events().len() + 2);
    let mut compensator = 0.0;
    let mut predictable = 0.0;
    let mut realized = 0.0;
    let mut start = 0.0;
    let mut last_t = 0.0;
    let mut rates = (0.0, 0.0);
    let mut value = 0.0;
    traj.for_each_state(|t, m, ev| {
        let p = pair(m, phi);
        if ev.is_none() {
            start = p;
        } else {
            compensator += rates.0 * (t - last_t);
            predictable += rates.1 * (t - last_t);
            realized += (p - value).powi(2);
        }
        value = p;
        last_t = t;
        rates = compensator_rates(model, m, phi);
        times.push(t);
        values.push(p - start - compensator);
    });
    let t_end = traj.t_end();
    compensator += rates.0 * (t_end - last_t);
    predictable += rates.1 * (t_end - last_t);
    if *times.last().unwrap() < t_end {
        times.push(t_end);
        values.push(value - start - compensator);
    } else {
        *values.last_mut().unwrap() = value - start - compensator;
    }
    MartingaleResidual {
        times,
        values,
        realized_qv: realized,
        predictable_qv: predictable,
    }
}

/// Matrix as nested rows, for reports.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
