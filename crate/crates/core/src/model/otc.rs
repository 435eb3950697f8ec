//! Over-the-counter market with search and marketmakers.
//!
//! Types are `ho, hn, lo, ln`: high/low intrinsic valuation, owner/non-owner
//! of the asset. Investors switch valuation at rates `λu` (low → high) and
//! `λd` (high → low). An `hn` and an `lo` investor trade when they meet,
//! either directly (contact rate `β`) or through a marketmaker, whose total
//! rate `N·ρ·min(ν(hn), ν(lo))` is simulated as an aggregate channel.

use serde_json::json;

use super::{AggregateChannel, Kernel, LinearKernels, Model, PairKernel};
use crate::error::{Error, Result};
use crate::measure::{MeasureView, TypeSpace, TypeValue};

pub const OTC_LABELS: [&str; 4] = ["ho", "hn", "lo", "ln"];

const HO: usize = 0;
const HN: usize = 1;
const LO: usize = 2;
const LN: usize = 3;

#[derive(Debug)]
pub struct OtcModel {
    space: TypeSpace,
    pub lambda_u: f64,
    pub lambda_d: f64,
    pub beta: f64,
    pub rho: f64,
    channels: Vec<Box<dyn AggregateChannel>>,
}

#[derive(Debug)]
pub struct MarketmakerChannel {
    rho: f64,
}

impl AggregateChannel for MarketmakerChannel {
    fn name(&self) -> &str {
        "marketmaker"
    }

    fn intensity(&self, nu: &dyn MeasureView) -> f64 {
        self.rho * nu.label_mass(HN).min(nu.label_mass(LO))
    }

    fn intensity_bound(&self) -> f64 {
        // min(x, y) <= 1/2 when x + y <= 1
        0.5 * self.rho
    }

    fn participants(&self) -> (usize, usize) {
        (HN, LO)
    }

    fn outcome(&self, _nu: &dyn MeasureView) -> PairKernel {
        Kernel::point((TypeValue::Label(HO), TypeValue::Label(LN)))
    }
}

pub fn otc_model(lambda_u: f64, lambda_d: f64, beta: f64, rho: f64) -> Result<OtcModel> {
    for (name, v) in [
        ("lambda_u", lambda_u),
        ("lambda_d", lambda_d),
        ("beta", beta),
        ("rho", rho),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(name, format!("must be a finite number >= 0, got {v}")));
        }
    }
    let mut channels: Vec<Box<dyn AggregateChannel>> = Vec::new();
    if rho > 0.0 {
        channels.push(Box::new(MarketmakerChannel { rho }));
    }
    Ok(OtcModel {
        space: TypeSpace::finite(OTC_LABELS).expect("static labels"),
        lambda_u,
        lambda_d,
        beta,
        rho,
        channels,
    })
}

impl OtcModel {
    /// The full per-pair contact rate including the marketmaker term,
    /// `β + (ρ/2)·min(ν(hn),ν(lo)) / (ν(hn)ν(lo))` for the trading pairs.
    /// Unbounded as either mass vanishes; the simulator never evaluates it.
    pub fn full_pair_rate(&self, w1: &TypeValue, w2: &TypeValue, nu: &dyn MeasureView) -> f64 {
        if !is_trading_pair(w1, w2) {
            return 0.0;
        }
        let (h, l) = (nu.label_mass(HN), nu.label_mass(LO));
        if h * l > 0.0 {
            self.beta + 0.5 * self.rho * h.min(l) / (h * l)
        } else {
            self.beta
        }
    }

    /// Right side of the four-equation limit system, written out by hand.
    pub fn limit_field(&self, u: &[f64]) -> [f64; 4] {
        let (lu, ld, b, r) = (self.lambda_u, self.lambda_d, self.beta, self.rho);
        let trade = 2.0 * b * u[HN] * u[LO] + r * u[HN].min(u[LO]);
        [
            lu * u[LO] - ld * u[HO] + trade,
            lu * u[LN] - ld * u[HN] - trade,
            ld * u[HO] - lu * u[LO] - trade,
            ld * u[HN] - lu * u[LN] + trade,
        ]
    }
}

fn is_trading_pair(w1: &TypeValue, w2: &TypeValue) -> bool {
    matches!(
        (w1.label(), w2.label()),
        (Some(HN), Some(LO)) | (Some(LO), Some(HN))
    )
}

fn switch_target(w: usize) -> usize {
    match w {
        HO => LO,
        HN => LN,
        LO => HO,
        _ => HN,
    }
}

impl Model for OtcModel {
    fn name(&self) -> &str {
        "otc"
    }

    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_bar(&self) -> f64 {
        self.lambda_u.max(self.lambda_d)
    }

    fn lambda_bar(&self) -> f64 {
        self.beta
    }

    fn gamma(&self, w: &TypeValue, _nu: &dyn MeasureView) -> f64 {
        match w.label() {
            Some(HO) | Some(HN) => self.lambda_d,
            _ => self.lambda_u,
        }
    }

    fn jump_kernel(&self, w: &TypeValue, _nu: &dyn MeasureView) -> Kernel<TypeValue> {
        Kernel::point(TypeValue::Label(switch_target(w.label().unwrap_or(LN))))
    }

    /// Direct-contact part `β` of the pair rate; the marketmaker part runs
    /// through the aggregate channel.
    fn lambda(&self, w1: &TypeValue, w2: &TypeValue, _nu: &dyn MeasureView) -> f64 {
        if is_trading_pair(w1, w2) {
            self.beta
        } else {
            0.0
        }
    }

    fn pair_kernel(&self, w1: &TypeValue, w2: &TypeValue, _nu: &dyn MeasureView) -> PairKernel {
        match (w1.label(), w2.label()) {
            (Some(HN), Some(LO)) => Kernel::point((TypeValue::Label(HO), TypeValue::Label(LN))),
            (Some(LO), Some(HN)) => Kernel::point((TypeValue::Label(LN), TypeValue::Label(HO))),
            _ => Kernel::zero(),
        }
    }

    fn channels(&self) -> &[Box<dyn AggregateChannel>] {
        &self.channels
    }

    /// Only without marketmakers: the marketmaker rate is not linear in `ν`.
    fn linear_kernels(&self) -> Option<&dyn LinearKernels> {
        (self.rho == 0.0).then_some(self as &dyn LinearKernels)
    }

    fn parameters(&self) -> serde_json::Value {
        json!({
            "lambda_u": self.lambda_u,
            "lambda_d": self.lambda_d,
            "beta": self.beta,
            "rho": self.rho,
        })
    }

    fn kink_indicator(&self, u: &[f64]) -> Option<f64> {
        (self.rho > 0.0).then(|| u[HN] - u[LO])
    }
}

impl LinearKernels for OtcModel {
    fn space(&self) -> &TypeSpace {
        &self.space
    }

    fn gamma_measure(&self, w: &TypeValue, z: &TypeValue) -> Kernel<TypeValue> {
        let _ = z;
        let rate = match w.label() {
            Some(HO) | Some(HN) => self.lambda_d,
            _ => self.lambda_u,
        };
        Kernel::weighted(TypeValue::Label(switch_target(w.label().unwrap_or(LN))), rate)
    }

    fn lambda_measure(&self, w1: &TypeValue, w2: &TypeValue, _z: &TypeValue) -> PairKernel {
        Model::pair_kernel(self, w1, w2, &crate::measure::ProbVector(&[])).scaled(self.beta)
    }
}
