//! Finite-type models given by dense kernel tables.
//!
//! `gamma[w][z][w']` is `Γ(w, z, {w'})` and `lambda[w1][w2][z][w1'][w2']`
//! is `Λ(w1, w2, z, {(w1', w2')})`. The rates `γ, a, λ, b` are obtained by
//! averaging over the partner type `z ~ ν`.

use serde_json::json;

use super::{Kernel, LinearKernels, Model, PairKernel};
use crate::error::{Error, Result};
use crate::measure::{MeasureView, TypeSpace, TypeValue};

#[derive(Debug, Clone)]
pub struct TableModel {
    name: String,
    space: TypeSpace,
    k: usize,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
    gamma_bar: f64,
    lambda_bar: f64,
    has_gamma: bool,
    has_lambda: bool,
}

impl TableModel {
    /// Tables are flattened row-major: `gamma.len() == k³`, `lambda.len() == k⁵`.
    /// An empty `lambda` means `Λ ≡ 0`.
    pub fn new(name: impl Into<String>, labels: Vec<String>, gamma: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let space = TypeSpace::finite(labels).map_err(|e| Error::config("labels", e.to_string()))?;
        let k = space.size().unwrap();
        let gamma = if gamma.is_empty() { vec![0.0; k.pow(3)] } else { gamma };
        let lambda = if lambda.is_empty() { vec![0.0; k.pow(5)] } else { lambda };
        if gamma.len() != k.pow(3) {
            return Err(Error::config("gamma", format!("expected {} entries, got {}", k.pow(3), gamma.len())));
        }
        if lambda.len() != k.pow(5) {
            return Err(Error::config("lambda", format!("expected {} entries, got {}", k.pow(5), lambda.len())));
        }
        for (field, t) in [("gamma", &gamma), ("lambda", &lambda)] {
            if let Some(x) = t.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::config(field, format!("entries must be finite and >= 0, found {x}")));
            }
        }
        let gamma_bar = gamma.chunks(k).map(|c| c.iter().sum::<f64>()).fold(0.0, f64::max);
        let lambda_bar = lambda.chunks(k * k).map(|c| c.iter().sum::<f64>()).fold(0.0, f64::max);
        Ok(TableModel {
            name: name.into(),
            space,
            k,
            has_gamma: gamma_bar > 0.0,
            has_lambda: lambda_bar > 0.0,
            gamma,
            lambda,
            gamma_bar,
            lambda_bar,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn g(&self, w: usize, z: usize, to: usize) -> f64 {
        self.gamma[(w * self.k + z) * self.k + to]
    }

    fn l(&self, w1: usize, w2: usize, z: usize, t1: usize, t2: usize) -> f64 {
        let k = self.k;
        self.lambda[(((w1 * k + w2) * k + z) * k + t1) * k + t2]
    }
}

/// Two-state chain `1 → 2` at rate `up` and `2 → 1` at rate `down`, with an
/// optional contagion term: a state-1 agent meeting a state-2 agent (in that
/// order) becomes state 2 at per-pair rate `contagion`.
pub fn two_state_model(up: f64, down: f64, contagion: f64) -> Result<TableModel> {
    for (name, v) in [("up", up), ("down", down), ("contagion", contagion)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(name, format!("must be >= 0, got {v}")));
        }
    }
    let k = 2;
    let mut gamma = vec![0.0; 8];
    for z in 0..k {
        gamma[z * k + 1] = up;
        gamma[(k + z) * k] = down;
    }
    let mut lambda = vec![0.0; 32];
    if contagion > 0.0 {
        for z in 0..k {
            // (w1, w2) = (0, 1) -> (1, 1)
            lambda[((k + z) * k + 1) * k + 1] = contagion;
        }
    }
    TableModel::new("two_state", vec!["1".into(), "2".into()], gamma, lambda)
}

impl Model for TableModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    fn gamma(&self, w: &TypeValue, nu: &dyn MeasureView) -> f64 {
        if !self.has_gamma {
            return 0.0;
        }
        let w = w.label().expect("table label");
        let mut total = 0.0;
        for z in 0..self.k {
            let nz = nu.label_mass(z);
            if nz > 0.0 {
                total += nz * (0..self.k).map(|t| self.g(w, z, t)).sum::<f64>();
            }
        }
        total
    }

    fn jump_kernel(&self, w: &TypeValue, nu: &dyn MeasureView) -> Kernel<TypeValue> {
        let w = w.label().expect("table label");
        let mut out = Kernel::zero();
        for t in 0..self.k {
            let weight: f64 = (0..self.k).map(|z| nu.label_mass(z) * self.g(w, z, t)).sum();
            out.push(TypeValue::Label(t), weight);
        }
        out.normalized()
    }

    fn lambda(&self, w1: &TypeValue, w2: &TypeValue, nu: &dyn MeasureView) -> f64 {
        if !self.has_lambda {
            return 0.0;
        }
        let (a, b) = (w1.label().unwrap(), w2.label().unwrap());
        let mut total = 0.0;
        for z in 0..self.k {
            let nz = nu.label_mass(z);
            if nz > 0.0 {
                for t1 in 0..self.k {
                    for t2 in 0..self.k {
                        total += nz * self.l(a, b, z, t1, t2);
                    }
                }
            }
        }
        total
    }

    fn pair_kernel(&self, w1: &TypeValue, w2: &TypeValue, nu: &dyn MeasureView) -> PairKernel {
        let (a, b) = (w1.label().unwrap(), w2.label().unwrap());
        let mut out = Kernel::zero();
        for t1 in 0..self.k {
            for t2 in 0..self.k {
                let weight: f64 = (0..self.k).map(|z| nu.label_mass(z) * self.l(a, b, z, t1, t2)).sum();
                out.push((TypeValue::Label(t1), TypeValue::Label(t2)), weight);
            }
        }
        out.normalized()
    }

    fn linear_kernels(&self) -> Option<&dyn LinearKernels> {
        Some(self)
    }

    fn parameters(&self) -> serde_json::Value {
        json!({ "labels": self.space.labels(), "gamma": self.gamma, "lambda": self.lambda })
    }
}

impl LinearKernels for TableModel {
    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_measure(&self, w: &TypeValue, z: &TypeValue) -> Kernel<TypeValue> {
        let (w, z) = (w.label().unwrap(), z.label().unwrap());
        let mut out = Kernel::zero();
        for t in 0..self.k {
            out.push(TypeValue::Label(t), self.g(w, z, t));
        }
        out
    }

    fn lambda_measure(&self, w1: &TypeValue, w2: &TypeValue, z: &TypeValue) -> PairKernel {
        let (a, b, z) = (w1.label().unwrap(), w2.label().unwrap(), z.label().unwrap());
        let mut out = Kernel::zero();
        for t1 in 0..self.k {
            for t2 in 0..self.k {
                out.push((TypeValue::Label(t1), TypeValue::Label(t2)), self.l(a, b, z, t1, t2));
            }
        }
        out
    }

    fn has_gamma(&self) -> bool {
        self.has_gamma
    }

    fn has_lambda(&self) -> bool {
        self.has_lambda
    }
}
