//! Model definitions: rate functions, jump kernels and their linear
//! (per-partner) decompositions.

use std::fmt;

use smallvec::SmallVec;

use crate::measure::{MeasureView, ProbVector, TypeSpace, TypeValue};

mod fleming_viot;
mod opinion;
mod otc;
mod percolation;
mod table;

pub use fleming_viot::{fleming_viot_model, FlemingViotModel};
pub use opinion::{opinion_model, OpinionModel};
pub use otc::{otc_model, MarketmakerChannel, OtcModel, OTC_LABELS};
pub use percolation::{info_percolation_model, InfoPercolationModel};
pub use table::{two_state_model, TableModel};

/// A finite discrete measure, sampled by inverse CDF from a single uniform.
///
/// Weights need not sum to one; `mass` is their total and `sample`
/// draws from the normalized measure. This is the discrete form of a
/// Blackwell–Dubins representation: the outcome is a deterministic function
/// of the supplied uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T> {
    atoms: SmallVec<[(T, f64); 4]>,
}

impl<T> Default for Kernel<T> {
    fn default() -> Self {
        Kernel {
            atoms: SmallVec::new(),
        }
    }
}

impl<T> Kernel<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn point(t: T) -> Self {
        Self::weighted(t, 1.0)
    }

    pub fn weighted(t: T, w: f64) -> Self {
        let mut k = Self::default();
        k.push(t, w);
        k
    }

    /// Adds an atom; zero weights are dropped.
    pub fn push(&mut self, t: T, w: f64) {
        debug_assert!(w >= 0.0 && w.is_finite(), "kernel weight {w}");
        if w > 0.0 {
            self.atoms.push((t, w));
        }
    }

    pub fn atoms(&self) -> &[(T, f64)] {
        &self.atoms
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn scaled(mut self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero();
        }
        for (_, w) in &mut self.atoms {
            *w *= c;
        }
        self
    }

    pub fn normalized(self) -> Self {
        let m = self.mass();
        if m > 0.0 {
            self.scaled(1.0 / m)
        } else {
            self
        }
    }

    /// Outcome for a uniform `u ∈ [0, 1)`; `None` for the zero measure.
    pub fn sample(&self, u: f64) -> Option<&T> {
        let total = self.mass();
        if total <= 0.0 {
            return None;
        }
        let target = u * total;
        let mut acc = 0.0;
        for (t, w) in &self.atoms {
            acc += w;
            if target < acc {
                return Some(t);
            }
        }
        self.atoms.last().map(|(t, _)| t)
    }

    /// `∫ f dκ`
    pub fn integrate(&self, mut f: impl FnMut(&T) -> f64) -> f64 {
        self.atoms.iter().map(|(t, w)| w * f(t)).sum()
    }
}

pub type PairKernel = Kernel<(TypeValue, TypeValue)>;

/// A global Poisson clock whose rate `N · intensity(ν)` is state dependent.
///
/// Used for interactions whose per-pair rate is unbounded but whose total
/// rate is finite (the OTC marketmaker term). On each event one agent of
/// each participant label is drawn uniformly and the outcome kernel applied.
pub trait AggregateChannel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Event rate divided by `N`.
    fn intensity(&self, nu: &dyn MeasureView) -> f64;

    /// Upper bound of `intensity` over all distributions.
    fn intensity_bound(&self) -> f64;

    /// Labels of the first and second participant.
    fn participants(&self) -> (usize, usize);

    fn outcome(&self, nu: &dyn MeasureView) -> PairKernel;
}

/// Rates `(γ, a, λ, b)` of an N-agent model.
///
/// `gamma` is the rate at which one agent changes type, `jump_kernel` is the
/// probability law `a` of its new type. `lambda` is the per-ordered-pair
/// contact rate scale; an ordered pair of distinct agents interacts at rate
/// `λ/N`, and `pair_kernel` is the law `b` of their new types.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn space(&self) -> &TypeSpace;

    fn gamma_bar(&self) -> f64;
    fn lambda_bar(&self) -> f64;

    fn gamma(&self, w: &TypeValue, nu: &dyn MeasureView) -> f64;
    fn jump_kernel(&self, w: &TypeValue, nu: &dyn MeasureView) -> Kernel<TypeValue>;

    fn lambda(&self, w1: &TypeValue, w2: &TypeValue, nu: &dyn MeasureView) -> f64;
    fn pair_kernel(&self, w1: &TypeValue, w2: &TypeValue, nu: &dyn MeasureView) -> PairKernel;

    fn channels(&self) -> &[Box<dyn AggregateChannel>] {
        &[]
    }

    /// Linear decomposition `(Γ, Λ)`, when the rates admit one.
    fn linear_kernels(&self) -> Option<&dyn LinearKernels> {
        None
    }

    /// Parameter block recorded in report provenance.
    fn parameters(&self) -> serde_json::Value;

    /// A scalar whose sign change marks a kink of the limit vector field.
    fn kink_indicator(&self, _u: &[f64]) -> Option<f64> {
        None
    }
}

/// `Γ(w, z, dw')` and `Λ(w₁, w₂, z, dw₁' ⊗ dw₂')`: the effect a type-`z`
/// agent has on the jump rates of others. Averaging over `z ~ ν` gives
/// `γ·a` and `λ·b`.
pub trait LinearKernels: Send + Sync {
    fn space(&self) -> &TypeSpace;
    fn gamma_measure(&self, w: &TypeValue, z: &TypeValue) -> Kernel<TypeValue>;
    fn lambda_measure(&self, w1: &TypeValue, w2: &TypeValue, z: &TypeValue) -> PairKernel;

    fn has_gamma(&self) -> bool {
        true
    }

    fn has_lambda(&self) -> bool {
        true
    }
}

/// Worst discrepancy, over atoms, between the model rates and the
/// `ν`-average of its linear kernels at the probability vector `nu`:
/// `|γ(w,ν)a(w,ν,{w'}) − Σ_z ν(z)Γ(w,z,{w'})|` and the analogous pair term.
pub fn linear_consistency_error(model: &dyn Model, kernels: &dyn LinearKernels, nu: &[f64]) -> f64 {
    let view = ProbVector(nu);
    let k = nu.len();
    let label = TypeValue::Label;
    let mut worst: f64 = 0.0;
    for w in 0..k {
        let g = model.gamma(&label(w), &view);
        let a = model.jump_kernel(&label(w), &view);
        let mut direct = vec![0.0; k];
        for (t, p) in a.atoms() {
            direct[t.label().expect("finite model")] += g * p;
        }
        let mut averaged = vec![0.0; k];
        for (z, &nz) in nu.iter().enumerate() {
            for (t, m) in kernels.gamma_measure(&label(w), &label(z)).atoms() {
                averaged[t.label().expect("finite model")] += nz * m;
            }
        }
        for (d, a) in direct.iter().zip(&averaged) {
            worst = worst.max((d - a).abs());
        }

        for w2 in 0..k {
            let l = model.lambda(&label(w), &label(w2), &view);
            let b = model.pair_kernel(&label(w), &label(w2), &view);
            let mut direct = vec![0.0; k * k];
            for ((x, y), p) in b.atoms() {
                direct[x.label().unwrap() * k + y.label().unwrap()] += l * p;
            }
            let mut averaged = vec![0.0; k * k];
            for (z, &nz) in nu.iter().enumerate() {
                for ((x, y), m) in kernels.lambda_measure(&label(w), &label(w2), &label(z)).atoms() {
                    averaged[x.label().unwrap() * k + y.label().unwrap()] += nz * m;
                }
            }
            for (d, a) in direct.iter().zip(&averaged) {
                worst = worst.max((d - a).abs());
            }
        }
    }
    worst
}

/// Row-stochastic check used by several built-ins.
pub(crate) fn check_square(name: &str, m: &[Vec<f64>], k: usize) -> crate::Result<()> {
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(crate::Error::config(name, format!("must be a {k}x{k} matrix")));
    }
    if m.iter().flatten().any(|x| !x.is_finite()) {
        return Err(crate::Error::config(name, "entries must be finite"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sampling_follows_cumulative_weights() {
        let mut k = Kernel::zero();
        k.push('a', 1.0);
        k.push('b', 3.0);
        assert_eq!(k.mass(), 4.0);
        assert_eq!(k.sample(0.0), Some(&'a'));
        assert_eq!(k.sample(0.2499), Some(&'a'));
        assert_eq!(k.sample(0.25), Some(&'b'));
        assert_eq!(k.sample(0.999_999), Some(&'b'));
        assert_eq!(Kernel::<char>::zero().sample(0.5), None);
        let n = k.clone().normalized();
        assert!((n.mass() - 1.0).abs() < 1e-15);
        assert!(Kernel::weighted('x', 0.0).is_zero());
    }
}
