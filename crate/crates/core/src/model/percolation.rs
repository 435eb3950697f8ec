//! Information percolation: agents meet at a constant rate and both leave
//! the meeting holding the sum of their sufficient statistics.

use serde_json::json;

use super::{Kernel, LinearKernels, Model, PairKernel};
use crate::error::{Error, Result};
use crate::measure::{MeasureView, TypeSpace, TypeValue};

#[derive(Debug)]
pub struct InfoPercolationModel {
    space: TypeSpace,
    pub lambda: f64,
}

pub fn info_percolation_model(lambda: f64) -> Result<InfoPercolationModel> {
    InfoPercolationModel::new(lambda, 100.0)
}

impl InfoPercolationModel {
    /// `bound` only sets the diagnostic truncation of the real line.
    pub fn new(lambda: f64, bound: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be > 0, got {lambda}")));
        }
        let space = TypeSpace::real_line(bound).map_err(|e| Error::config("bound", e.to_string()))?;
        Ok(InfoPercolationModel { space, lambda })
    }

    fn merged(w1: &TypeValue, w2: &TypeValue) -> PairKernel {
        let s = w1.coordinate(0) + w2.coordinate(0);
        let s = TypeValue::Real(if s == 0.0 { 0.0 } else { s });
        Kernel::point((s.clone(), s))
    }
}

impl Model for InfoPercolationModel {
    fn name(&self) -> &str {
        "info_percolation"
    }

    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_bar(&self) -> f64 {
        0.0
    }

    fn lambda_bar(&self) -> f64 {
        self.lambda
    }

    fn gamma(&self, _w: &TypeValue, _nu: &dyn MeasureView) -> f64 {
        0.0
    }

    fn jump_kernel(&self, _w: &TypeValue, _nu: &dyn MeasureView) -> Kernel<TypeValue> {
        Kernel::zero()
    }

    fn lambda(&self, _w1: &TypeValue, _w2: &TypeValue, _nu: &dyn MeasureView) -> f64 {
        self.lambda
    }

    fn pair_kernel(&self, w1: &TypeValue, w2: &TypeValue, _nu: &dyn MeasureView) -> PairKernel {
        Self::merged(w1, w2)
    }

    fn linear_kernels(&self) -> Option<&dyn LinearKernels> {
        Some(self)
    }

    fn parameters(&self) -> serde_json::Value {
        json!({ "lambda": self.lambda })
    }
}

impl LinearKernels for InfoPercolationModel {
    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_measure(&self, _w: &TypeValue, _z: &TypeValue) -> Kernel<TypeValue> {
        Kernel::zero()
    }

    fn lambda_measure(&self, w1: &TypeValue, w2: &TypeValue, _z: &TypeValue) -> PairKernel {
        Self::merged(w1, w2).scaled(self.lambda)
    }

    fn has_gamma(&self) -> bool {
        false
    }
}
