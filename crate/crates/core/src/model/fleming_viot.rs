//! Fleming–Viot particle system on the sites `{1, …, K}`.
//!
//! Each particle follows a conservative rate matrix `Q` on `{0, 1, …, K}`
//! where `0` is absorbing. On absorption the particle jumps at once to the
//! position of a uniformly chosen member of the population, so the agent
//! never occupies `0`: absorption and redraw form one composite jump.

use serde_json::json;

use super::{check_square, Kernel, LinearKernels, Model, PairKernel};
use crate::error::{Error, Result};
use crate::measure::{MeasureView, TypeSpace, TypeValue};

#[derive(Debug)]
pub struct FlemingViotModel {
    space: TypeSpace,
    /// Full `(K+1)×(K+1)` rate matrix, index 0 is the absorbing state.
    pub q: Vec<Vec<f64>>,
    pub sites: usize,
    exit_bar: f64,
}

/// `q` is indexed by `{0, 1, …, K}`; sites are reported as labels `"1"…"K"`.
/// `exit_cap` is the largest exit rate accepted from any site.
pub fn fleming_viot_model(q: Vec<Vec<f64>>, exit_cap: f64) -> Result<FlemingViotModel> {
    let n = q.len();
    if n < 2 {
        return Err(Error::config("q", "needs the absorbing state and at least one site"));
    }
    check_square("q", &q, n)?;
    if q[0].iter().any(|&x| x != 0.0) {
        return Err(Error::config("q", "row 0 must be zero (0 is absorbing)"));
    }
    let mut exit_bar: f64 = 0.0;
    for (i, row) in q.iter().enumerate().skip(1) {
        for (j, &x) in row.iter().enumerate() {
            if j != i && x < 0.0 {
                return Err(Error::config("q", format!("negative rate q({i},{j})")));
            }
        }
        let exit: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x).sum();
        if (row[i] + exit).abs() > 1e-9 * (1.0 + exit) {
            return Err(Error::config(
                "q",
                format!("row {i} is not conservative: q({i},{i}) = {} but exit rate is {exit}", row[i]),
            ));
        }
        exit_bar = exit_bar.max(exit);
    }
    if exit_bar > exit_cap {
        return Err(Error::config(
            "q",
            format!("exit rate {exit_bar} exceeds the configured cap {exit_cap}"),
        ));
    }
    let labels: Vec<String> = (1..n).map(|s| s.to_string()).collect();
    Ok(FlemingViotModel {
        space: TypeSpace::finite(labels)?,
        q,
        sites: n - 1,
        exit_bar,
    })
}

impl FlemingViotModel {
    /// `q` between two sites given by label index (`label i` is site `i+1`).
    fn rate(&self, from: usize, to: usize) -> f64 {
        self.q[from + 1][to + 1]
    }

    fn kill(&self, from: usize) -> f64 {
        self.q[from + 1][0]
    }

    /// `Γ(i, k, {j})` on label indices.
    pub fn gamma_entry(&self, i: usize, k: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else if k == j {
            self.rate(i, j) + self.kill(i)
        } else {
            self.rate(i, j)
        }
    }

    /// Total rate at which a particle at `i` jumps to `j ≠ i` under `ν`.
    pub fn effective_rate(&self, i: usize, j: usize, nu: &dyn MeasureView) -> f64 {
        if i == j {
            0.0
        } else {
            self.rate(i, j) + self.kill(i) * nu.label_mass(j)
        }
    }
}

impl Model for FlemingViotModel {
    fn name(&self) -> &str {
        "fleming_viot"
    }

    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_bar(&self) -> f64 {
        self.exit_bar
    }

    fn lambda_bar(&self) -> f64 {
        0.0
    }

    fn gamma(&self, w: &TypeValue, nu: &dyn MeasureView) -> f64 {
        let i = w.label().expect("site label");
        (0..self.sites).map(|j| self.effective_rate(i, j, nu)).sum()
    }

    fn jump_kernel(&self, w: &TypeValue, nu: &dyn MeasureView) -> Kernel<TypeValue> {
        let i = w.label().expect("site label");
        let mut k = Kernel::zero();
        for j in 0..self.sites {
            k.push(TypeValue::Label(j), self.effective_rate(i, j, nu));
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
        json!({ "q": self.q, "sites": self.sites })
    }
}

impl LinearKernels for FlemingViotModel {
    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_measure(&self, w: &TypeValue, z: &TypeValue) -> Kernel<TypeValue> {
        let (i, k) = (w.label().unwrap(), z.label().unwrap());
        let mut out = Kernel::zero();
        for j in 0..self.sites {
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
