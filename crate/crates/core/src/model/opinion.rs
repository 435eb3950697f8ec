//! Opinion dynamics on `{-m, …, m}`.
//!
//! An agent at `i` moves to `j` at rate `α p_ij ν(i)` (leaving a crowded
//! position) plus `β q_ij ν(j)` (attraction to popular positions).

use serde_json::json;

use super::{check_square, Kernel, LinearKernels, Model, PairKernel};
use crate::error::{Error, Result};
use crate::measure::{MeasureView, TypeSpace, TypeValue};

#[derive(Debug)]
pub struct OpinionModel {
    space: TypeSpace,
    pub alpha: f64,
    pub beta: f64,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub m: usize,
    gamma_bar: f64,
}

pub fn opinion_model(
    alpha: f64,
    beta: f64,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    m: usize,
) -> Result<OpinionModel> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(name, format!("must be a finite number >= 0, got {v}")));
        }
    }
    let k = 2 * m + 1;
    for (name, mat) in [("p", &p), ("q", &q)] {
        check_square(name, mat, k)?;
        for (i, row) in mat.iter().enumerate() {
            if row.iter().any(|&x| x < 0.0) {
                return Err(Error::config(name, format!("row {i} has a negative entry")));
            }
            if row[i] != 0.0 {
                return Err(Error::config(name, format!("diagonal entry {i} must be zero")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::config(name, format!("row {i} sums to {s}, expected 1")));
            }
        }
    }
    let labels: Vec<String> = (0..k).map(|i| (i as i64 - m as i64).to_string()).collect();
    let q_max = q.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    Ok(OpinionModel {
        space: TypeSpace::finite(labels)?,
        alpha,
        beta,
        p,
        q,
        m,
        gamma_bar: alpha.max(beta * q_max),
    })
}

impl OpinionModel {
    pub fn k(&self) -> usize {
        2 * self.m + 1
    }

    /// `Γ(i, k, {j})`
    pub fn gamma_entry(&self, i: usize, k: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let mut v = 0.0;
        if k == i {
            v += self.alpha * self.p[i][j];
        }
        if k == j {
            v += self.beta * self.q[i][j];
        }
        v
    }
}

impl Model for OpinionModel {
    fn name(&self) -> &str {
        "opinion"
    }

    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    fn lambda_bar(&self) -> f64 {
        0.0
    }

    fn gamma(&self, w: &TypeValue, nu: &dyn MeasureView) -> f64 {
        let i = w.label().expect("opinion label");
        let p_row: f64 = self.p[i].iter().sum();
        let attraction: f64 = self.q[i]
            .iter()
            .enumerate()
            .map(|(j, q)| q * nu.label_mass(j))
            .sum();
        self.alpha * nu.label_mass(i) * p_row + self.beta * attraction
    }

    fn jump_kernel(&self, w: &TypeValue, nu: &dyn MeasureView) -> Kernel<TypeValue> {
        let i = w.label().expect("opinion label");
        let ui = nu.label_mass(i);
        let mut k = Kernel::zero();
        for j in 0..self.k() {
            let rate = self.alpha * ui * self.p[i][j] + self.beta * self.q[i][j] * nu.label_mass(j);
            k.push(TypeValue::Label(j), rate);
        }
        k.normalized()
    }

    fn lambda(&self, _w1: &TypeValue, _w2: &TypeValue, _nu: &dyn MeasureView) -> f64 {
        0.0
    }

    fn pair_kernel(&self, _w1: &TypeValue, _w2: &TypeValue, _nu: &dyn MeasureView) -> PairKernel {
        Kernel::zero()
    }

    fn linear_kernels(&self) -> Option<&dyn LinearKernels> {
        Some(self)
    }

    fn parameters(&self) -> serde_json::Value {
        json!({ "alpha": self.alpha, "beta": self.beta, "m": self.m, "p": self.p, "q": self.q })
    }
}

impl LinearKernels for OpinionModel {
    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_measure(&self, w: &TypeValue, z: &TypeValue) -> Kernel<TypeValue> {
        let (i, k) = (w.label().unwrap(), z.label().unwrap());
        let mut out = Kernel::zero();
        for j in 0..self.k() {
            out.push(TypeValue::Label(j), self.gamma_entry(i, k, j));
        }
        out
    }

    fn lambda_measure(&self, _w1: &TypeValue, _w2: &TypeValue, _z: &TypeValue) -> PairKernel {
        Kernel::zero()
    }

    fn has_lambda(&self) -> bool {
        false
    }
}
