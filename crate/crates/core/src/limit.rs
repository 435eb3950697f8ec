//! Deterministic limit equations.
//!
//! For finite `W` the limit `u_t = ν_t` solves, atom by atom,
//!
//! ```text
//! u̇(A) = Σ_w u(w) γ(w,u) [a(w,u,A) − 1{w=A}]
//!      + Σ_{w1,w2} u(w1) u(w2) λ(w1,w2,u) [b₁(A) + b₂(A) − 1{w1=A} − 1{w2=A}]
//!      + Σ_c I_c(u) [outcome₁(A) + outcome₂(A) − 1{p₁=A} − 1{p₂=A}]
//! ```
//!
//! where `b₁, b₂` are the marginals of `b(w1,w2,u)`. For information
//! percolation the density solves `ġ = −2λg + 2λ(g∗g)` on a uniform grid.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{ProbVector, TypeValue};
use crate::model::Model;

const NEGATIVE_TOL: f64 = 1e-10;
const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitKind {
    /// Probability vectors indexed by label.
    Finite,
    /// Density samples at `x_k = lo + k·dx`.
    Density { lo: f64, dx: f64, lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitTrajectory {
    pub kind: LimitKind,
    pub times: Vec<f64>,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    /// `|1 − ∫g_T|` for density solutions.
    pub mass_leakage: Option<f64>,
    /// Numerical caveats, e.g. crossings of a non-smooth set of the field.
    pub notes: Vec<String>,
}

impl LimitTrajectory {
    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Grid point `k` of a density solution.
    pub fn x(&self, k: usize) -> Option<f64> {
        match self.kind {
            LimitKind::Density { lo, dx, .. } => Some(lo + k as f64 * dx),
            LimitKind::Finite => None,
        }
    }

    /// `(time, index, value)` export rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, usize, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.states)
            .flat_map(|(&t, s)| s.iter().enumerate().map(move |(i, &v)| (t, i, v)))
    }
}

/// Right side of the finite limit system at the probability vector `u`.
pub fn finite_field(model: &dyn Model, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let view = ProbVector(u);
    let k = u.len();
    let label = |v: &TypeValue| v.label().expect("finite label");
    for w in 0..k {
        if u[w] == 0.0 {
            continue;
        }
        let tw = TypeValue::Label(w);
        let g = model.gamma(&tw, &view);
        if g == 0.0 {
            continue;
        }
        let flow = u[w] * g;
        for (to, p) in model.jump_kernel(&tw, &view).normalized().atoms() {
            out[label(to)] += flow * p;
        }
        out[w] -= flow;
    }
    if model.lambda_bar() > 0.0 {
        for w1 in 0..k {
            for w2 in 0..k {
                let weight = u[w1] * u[w2];
                if weight == 0.0 {
                    continue;
                }
                let (t1, t2) = (TypeValue::Label(w1), TypeValue::Label(w2));
                let l = model.lambda(&t1, &t2, &view);
                if l == 0.0 {
                    continue;
                }
                let flow = weight * l;
                for ((a, b), p) in model.pair_kernel(&t1, &t2, &view).normalized().atoms() {
                    out[label(a)] += flow * p;
                    out[label(b)] += flow * p;
                }
                out[w1] -= flow;
                out[w2] -= flow;
            }
        }
    }
    for ch in model.channels() {
        let flow = ch.intensity(&view);
        if flow == 0.0 {
            continue;
        }
        let (pa, pb) = ch.participants();
        for ((a, b), p) in ch.outcome(&view).normalized().atoms() {
            out[label(a)] += flow * p;
            out[label(b)] += flow * p;
        }
        out[pa] -= flow;
        out[pb] -= flow;
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::config("t_end", format!("must be finite and >= 0, got {t_end}")));
    }
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if n == 0 { dt } else { t_end / n as f64 };
    Ok((n, h))
}

/// One classical RK4 step of `y′ = f(y)`.
fn rk4_step(f: &mut impl FnMut(&[f64], &mut [f64]), y: &[f64], h: f64, scratch: &mut [Vec<f64>; 5], out: &mut [f64]) {
    let [k1, k2, k3, k4, tmp] = scratch;
    f(y, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(tmp, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(tmp, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + h * k3[i];
    }
    f(tmp, k4);
    for i in 0..y.len() {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Generic fixed-step RK4 over `[0, t_end]` recording every node.
pub fn rk4(
    y0: &[f64],
    t_end: f64,
    dt: f64,
    mut f: impl FnMut(&[f64], &mut [f64]),
    mut post: impl FnMut(f64, &mut [f64]) -> Result<()>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let (n, h) = step_count(t_end, dt)?;
    let d = y0.len();
    let mut scratch = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(y0.to_vec());
    for s in 0..n {
        let mut next = vec![0.0; d];
        rk4_step(&mut f, states.last().unwrap(), h, &mut scratch, &mut next);
        let t = if s + 1 == n { t_end } else { (s + 1) as f64 * h };
        post(t, &mut next)?;
        times.push(t);
        states.push(next);
    }
    Ok((times, states, h))
}

fn check_probability(u: &[f64]) -> Result<()> {
    if u.is_empty() || u.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config("initial", "limit initial state must be a nonnegative vector"));
    }
    let s: f64 = u.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::config("initial", format!("limit initial state sums to {s}")));
    }
    Ok(())
}

/// RK4 on the finite limit system. Entries that dip below zero by at most
/// `1e-10` are clamped and the vector renormalized; anything worse is a
/// step-size error.
pub fn solve_limit_finite(model: &dyn Model, nu0: &[f64], t_end: f64, dt: f64) -> Result<LimitTrajectory> {
    let k = model
        .space()
        .size()
        .ok_or(Error::Unsupported("finite limit solver on an infinite type space"))?;
    if nu0.len() != k {
        return Err(Error::SpaceMismatch { left: nu0.len(), right: k });
    }
    check_probability(nu0)?;
    let mut notes = Vec::new();
    let mut kink = model.kink_indicator(nu0);
    let (times, states, h) = rk4(
        nu0,
        t_end,
        dt,
        |u, out| finite_field(model, u, out),
        |t, u| {
            if let Some(x) = u.iter().copied().find(|x| *x < -NEGATIVE_TOL) {
                return Err(Error::StepSize(format!("limit state entry {x:e} at t = {t}; reduce dt")));
            }
            u.iter_mut().for_each(|x| *x = x.max(0.0));
            let s: f64 = u.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                u.iter_mut().for_each(|x| *x /= s);
            }
            if let (Some(before), Some(now)) = (kink, model.kink_indicator(u)) {
                if before != 0.0 && now != 0.0 && before.signum() != now.signum() {
                    notes.push(format!(
                        "vector field is not smooth here: trajectory crosses the kink near t = {t:.6}"
                    ));
                }
                kink = Some(now);
            }
            Ok(())
        },
    )?;
    Ok(LimitTrajectory {
        kind: LimitKind::Finite,
        times,
        dt: h,
        states,
        mass_leakage: None,
        notes,
    })
}

/// Density samples on the uniform grid `x_k = lo + k·dx`, `k < n`, where
/// `dx = (hi − lo)/(n − 1)`. The grid must contain `0` so that differences
/// of grid points are grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 || !(lo < hi) {
            return Err(Error::config("grid", "need lo < hi and at least 2 points"));
        }
        let dx = (hi - lo) / (n - 1) as f64;
        let values = (0..n).map(|k| f(lo + k as f64 * dx)).collect();
        let g = DensityGrid { lo, hi, values };
        g.zero_index()?;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n() - 1) as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.dx()
    }

    fn zero_index(&self) -> Result<usize> {
        let z = -self.lo / self.dx();
        let zr = z.round();
        if !(self.lo <= 0.0 && self.hi >= 0.0) || (z - zr).abs() > 1e-6 {
            return Err(Error::config("grid", "0 must be a grid point (lo/dx an integer, lo <= 0 <= hi)"));
        }
        Ok(zr as usize)
    }

    /// Trapezoidal integral.
    pub fn trapezoid_mass(&self) -> f64 {
        trapezoid(&self.values, self.dx())
    }
}

pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

/// `Σ_k x_k g_k dx` on the grid.
pub fn density_mean(values: &[f64], lo: f64, dx: f64) -> f64 {
    values.iter().enumerate().map(|(k, g)| (lo + k as f64 * dx) * g).sum::<f64>() * dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMethod {
    #[default]
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub method: ConvolutionMethod,
    pub leakage_bound: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            method: ConvolutionMethod::Direct,
            leakage_bound: 1e-3,
        }
    }
}

/// `(g∗g)(x_k) = Σ_j g(x_j) g(x_k − x_j) dx`, truncated to the grid.
/// `z` is the index of `x = 0`.
pub fn self_convolution_direct(g: &[f64], z: usize, dx: f64, out: &mut [f64]) {
    let n = g.len();
    for (k, o) in out.iter_mut().enumerate() {
        // partner index m = k − j + z must lie in [0, n)
        let j_lo = (k + z + 1).saturating_sub(n);
        let j_hi = (k + z).min(n - 1);
        let mut s = 0.0;
        if j_lo <= j_hi {
            for j in j_lo..=j_hi {
                s += g[j] * g[k + z - j];
            }
        }
        *o = s * dx;
    }
}

/// Same sum through a zero-padded FFT.
pub struct FftConvolver {
    n: usize,
    size: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl FftConvolver {
    pub fn new(n: usize) -> Self {
        let size = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        FftConvolver {
            n,
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
            buf: vec![Complex::new(0.0, 0.0); size],
        }
    }

    pub fn convolve(&mut self, g: &[f64], z: usize, dx: f64, out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.n);
        for (b, &x) in self.buf.iter_mut().zip(g.iter().chain(std::iter::repeat(&0.0))) {
            *b = Complex::new(x, 0.0);
        }
        self.forward.process(&mut self.buf);
        for b in &mut self.buf {
            *b = *b * *b;
        }
        self.inverse.process(&mut self.buf);
        let scale = dx / self.size as f64;
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.buf[k + z].re * scale;
        }
    }
}

/// RK4 on `ġ = −2λg + 2λ(g∗g)`. Fails if `|1 − ∫g_T|` exceeds the
/// configured leakage bound, which means the grid is too narrow.
pub fn solve_percolation_density(
    g0: &DensityGrid,
    lambda: f64,
    t_end: f64,
    dt: f64,
    options: DensityOptions,
) -> Result<LimitTrajectory> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda", format!("must be >= 0, got {lambda}")));
    }
    let z = g0.zero_index()?;
    let dx = g0.dx();
    let mass0 = g0.trapezoid_mass();
    if (mass0 - 1.0).abs() > 1e-6 {
        return Err(Error::config("grid", format!("initial density integrates to {mass0}, expected 1")));
    }
    let n = g0.n();
    let mut fft = (options.method == ConvolutionMethod::Fft).then(|| FftConvolver::new(n));
    let mut conv = vec![0.0; n];
    let (times, states, h) = rk4(
        &g0.values,
        t_end,
        dt,
        |g, out| {
            match &mut fft {
                Some(f) => f.convolve(g, z, dx, &mut conv),
                None => self_convolution_direct(g, z, dx, &mut conv),
            }
            for k in 0..n {
                out[k] = 2.0 * lambda * (conv[k] - g[k]);
            }
        },
        |_, g| {
            // round-off in the convolution can leave tiny negative tails
            g.iter_mut().for_each(|x| *x = x.max(0.0));
            Ok(())
        },
    )?;
    let leakage = (1.0 - trapezoid(states.last().unwrap(), dx)).abs();
    if leakage > options.leakage_bound {
        return Err(Error::MassLeakage {
            leakage,
            bound: options.leakage_bound,
        });
    }
    Ok(LimitTrajectory {
        kind: LimitKind::Density { lo: g0.lo, dx, lambda },
        times,
        dt: h,
        states,
        mass_leakage: Some(leakage),
        notes: Vec::new(),
    })
}

/// Linear interpolation between the bracketing grid states; exact at nodes.
pub fn interpolate_limit(traj: &LimitTrajectory, t: f64) -> Result<Vec<f64>> {
    let t_end = traj.t_end();
    if !(0.0..=t_end).contains(&t) {
        return Err(Error::TimeOutOfRange { t, t_end });
    }
    let i = traj.times.partition_point(|&s| s <= t);
    if i == 0 {
        return Ok(traj.states[0].clone());
    }
    let lo = i - 1;
    if traj.times[lo] == t || lo + 1 == traj.times.len() {
        return Ok(traj.states[lo].clone());
    }
    let (t0, t1) = (traj.times[lo], traj.times[lo + 1]);
    let theta = (t - t0) / (t1 - t0);
    Ok(traj.states[lo]
        .iter()
        .zip(&traj.states[lo + 1])
        .map(|(a, b)| (1.0 - theta) * a + theta * b)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{otc_model, two_state_model};

    #[test]
    fn zero_field_keeps_initial_state() {
        let m = two_state_model(0.0, 0.0, 0.0).unwrap();
        let tr = solve_limit_finite(&m, &[0.3, 0.7], 1.0, 0.1).unwrap();
        for s in &tr.states {
            assert_eq!(s, &vec![0.3, 0.7]);
        }
    }

    #[test]
    fn otc_field_matches_hand_coded_system() {
        let m = otc_model(0.7, 1.3, 0.9, 0.4).unwrap();
        for u in [[0.1, 0.2, 0.3, 0.4], [0.25; 4], [0.4, 0.05, 0.15, 0.4], [0.0, 0.5, 0.0, 0.5]] {
            let mut out = [0.0; 4];
            finite_field(&m, &u, &mut out);
            let expected = m.limit_field(&u);
            for i in 0..4 {
                assert!((out[i] - expected[i]).abs() < 1e-12, "{u:?}: {out:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn otc_without_trading_follows_two_state_chain() {
        let (lu, ld) = (0.8, 1.7);
        let m = otc_model(lu, ld, 0.0, 0.0).unwrap();
        let u0 = [0.1, 0.2, 0.3, 0.4];
        let tr = solve_limit_finite(&m, &u0, 3.0, 1e-2).unwrap();
        let h0 = u0[0] + u0[1];
        let eq = lu / (lu + ld);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let h = eq + (h0 - eq) * (-(lu + ld) * t).exp();
            assert!((s[0] + s[1] - h).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn stays_on_simplex() {
        let m = otc_model(1.0, 1.0, 1.0, 1.0).unwrap();
        let tr = solve_limit_finite(&m, &[0.25; 4], 2.0, 1e-3).unwrap();
        for s in &tr.states {
            assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(s.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn convolution_paths_agree() {
        let g = DensityGrid::from_fn(-5.0, 5.0, 201, |x| (-(x - 0.3) * (x - 0.3)).exp() / std::f64::consts::PI.sqrt())
            .unwrap();
        let z = g.zero_index().unwrap();
        let mut a = vec![0.0; g.n()];
        let mut b = vec![0.0; g.n()];
        self_convolution_direct(&g.values, z, g.dx(), &mut a);
        FftConvolver::new(g.n()).convolve(&g.values, z, g.dx(), &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // Gaussian self-convolution: N(0.6, 1)
        let k = g.values.len() / 2 + 6;
        let x = g.x(k);
        let exact = (-(x - 0.6).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((a[k] - exact).abs() < 1e-6);
    }

    #[test]
    fn grid_without_origin_is_rejected() {
        assert!(DensityGrid::from_fn(-1.05, 1.0, 3, |_| 0.5).is_err());
    }

    #[test]
    fn zero_rate_density_is_constant() {
        let g = DensityGrid::from_fn(-8.0, 8.0, 321, |x| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .unwrap();
        let tr = solve_percolation_density(&g, 0.0, 1.0, 0.1, DensityOptions::default()).unwrap();
        assert_eq!(tr.final_state(), &g.values[..]);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_linear_between() {
        let tr = LimitTrajectory {
            kind: LimitKind::Finite,
            times: vec![0.0, 1.0, 2.0],
            dt: 1.0,
            states: vec![vec![1.0, 0.0], vec![0.2, 0.8], vec![0.6, 0.4]],
            mass_leakage: None,
            notes: vec![],
        };
        assert_eq!(interpolate_limit(&tr, 1.0).unwrap(), vec![0.2, 0.8]);
        let mid = interpolate_limit(&tr, 1.5).unwrap();
        assert!((mid[0] - 0.4).abs() < 1e-15 && (mid[1] - 0.6).abs() < 1e-15);
        assert!(interpolate_limit(&tr, 2.5).is_err());
    }
}
