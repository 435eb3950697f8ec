use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{AgentConfiguration, TypeSpace, TypeValue};
use crate::rng::SimRng;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Initial law `ν₀`; agents are drawn as `N` independent copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDistribution {
    /// Probability vector over the labels of a finite space.
    Discrete { weights: Vec<f64> },
    /// Finitely many atoms of any space.
    Atoms { values: Vec<TypeValue>, weights: Vec<f64> },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::config("initial.weights", "must not be empty"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::config("initial.weights", format!("entries must be >= 0, found {w}")));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::config("initial.weights", format!("must sum to 1, got {s}")));
    }
    Ok(())
}

impl InitialDistribution {
    pub fn validate(&self, space: &TypeSpace) -> Result<()> {
        match self {
            InitialDistribution::Discrete { weights } => {
                let k = space
                    .size()
                    .ok_or_else(|| Error::config("initial", "discrete weights need a finite type space"))?;
                if weights.len() != k {
                    return Err(Error::config(
                        "initial.weights",
                        format!("expected {k} weights, got {}", weights.len()),
                    ));
                }
                check_weights(weights)
            }
            InitialDistribution::Atoms { values, weights } => {
                if values.len() != weights.len() {
                    return Err(Error::config("initial.values", "values and weights differ in length"));
                }
                if let Some(v) = values.iter().find(|v| !space.contains(v)) {
                    return Err(Error::config("initial.values", format!("{v} is not in the type space")));
                }
                check_weights(weights)
            }
            InitialDistribution::Normal { mean, sd } => {
                if !matches!(space, TypeSpace::RealLine { .. }) {
                    return Err(Error::config("initial", "normal initial law needs a real type space"));
                }
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return Err(Error::config("initial.sd", format!("need finite mean and sd > 0, got {mean}, {sd}")));
                }
                Ok(())
            }
            InitialDistribution::Uniform { lo, hi } => {
                if !matches!(space, TypeSpace::RealLine { .. }) {
                    return Err(Error::config("initial", "uniform initial law needs a real type space"));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::config("initial.hi", format!("need lo < hi, got {lo}, {hi}")));
                }
                Ok(())
            }
        }
    }

    /// The probability vector of a discrete law on a finite space.
    pub fn probabilities(&self, space: &TypeSpace) -> Option<Vec<f64>> {
        let k = space.size()?;
        match self {
            InitialDistribution::Discrete { weights } => Some(weights.clone()),
            InitialDistribution::Atoms { values, weights } => {
                let mut p = vec![0.0; k];
                for (v, w) in values.iter().zip(weights) {
                    p[v.label()?] += w;
                }
                Some(p)
            }
            _ => None,
        }
    }

    /// Mean of a law on the real line.
    pub fn mean(&self) -> Option<f64> {
        match self {
            InitialDistribution::Normal { mean, .. } => Some(*mean),
            InitialDistribution::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            InitialDistribution::Atoms { values, weights } => values
                .iter()
                .zip(weights)
                .map(|(v, w)| v.as_real().map(|x| x * w))
                .sum(),
            InitialDistribution::Discrete { .. } => None,
        }
    }

    /// Density of a law on the real line.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            InitialDistribution::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                Some((-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            }
            InitialDistribution::Uniform { lo, hi } => Some(if (*lo..*hi).contains(&x) { 1.0 / (hi - lo) } else { 0.0 }),
            _ => None,
        }
    }
}

/// `N` independent draws from `ν₀`.
pub fn sample_product_initial(
    space: &TypeSpace,
    dist: &InitialDistribution,
    n: usize,
    rng: &mut SimRng,
) -> Result<AgentConfiguration> {
    dist.validate(space)?;
    if n == 0 {
        return Err(Error::config("n", "need at least one agent"));
    }
    let types: Vec<TypeValue> = match dist {
        InitialDistribution::Discrete { weights } => {
            let ix = WeightedIndex::new(weights).map_err(|e| Error::config("initial.weights", e.to_string()))?;
            (0..n).map(|_| TypeValue::Label(ix.sample(rng))).collect()
        }
        InitialDistribution::Atoms { values, weights } => {
            let ix = WeightedIndex::new(weights).map_err(|e| Error::config("initial.weights", e.to_string()))?;
            (0..n).map(|_| values[ix.sample(rng)].clone()).collect()
        }
        InitialDistribution::Normal { mean, sd } => {
            let d = Normal::new(*mean, *sd).map_err(|e| Error::config("initial.sd", e.to_string()))?;
            (0..n).map(|_| TypeValue::real(d.sample(rng))).collect::<Result<_>>()?
        }
        InitialDistribution::Uniform { lo, hi } => {
            let d = rand::distr::Uniform::new(*lo, *hi).map_err(|e| Error::config("initial.hi", e.to_string()))?;
            (0..n).map(|_| TypeValue::real(d.sample(rng))).collect::<Result<_>>()?
        }
    };
    AgentConfiguration::new(space, types)
}

/// Configuration with exactly `counts[i]` agents of label `i`, in label order.
pub fn deterministic_initial(space: &TypeSpace, counts: &[usize]) -> Result<AgentConfiguration> {
    let k = space
        .size()
        .ok_or_else(|| Error::config("initial.counts", "counts need a finite type space"))?;
    if counts.len() != k {
        return Err(Error::config("initial.counts", format!("expected {k} counts, got {}", counts.len())));
    }
    let types = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(TypeValue::Label(i), c))
        .collect();
    AgentConfiguration::new(space, types)
}

/// How a replica's initial configuration is produced for a given `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitialSpec {
    /// `N` independent draws from a law.
    Product { law: InitialDistribution },
    /// Exactly `p_i · N` agents of label `i`; `p_i · N` must be whole.
    Proportions { proportions: Vec<f64> },
}

impl InitialSpec {
    pub fn validate(&self, space: &TypeSpace) -> Result<()> {
        match self {
            InitialSpec::Product { law } => law.validate(space),
            InitialSpec::Proportions { proportions } => {
                InitialDistribution::Discrete {
                    weights: proportions.clone(),
                }
                .validate(space)
            }
        }
    }

    pub fn realize(&self, space: &TypeSpace, n: usize, rng: &mut SimRng) -> Result<AgentConfiguration> {
        match self {
            InitialSpec::Product { law } => sample_product_initial(space, law, n, rng),
            InitialSpec::Proportions { proportions } => {
                self.validate(space)?;
                let mut counts = Vec::with_capacity(proportions.len());
                for p in proportions {
                    let c = p * n as f64;
                    if (c - c.round()).abs() > 1e-6 {
                        return Err(Error::config(
                            "initial.proportions",
                            format!("{p} of {n} agents is not a whole number"),
                        ));
                    }
                    counts.push(c.round() as usize);
                }
                deterministic_initial(space, &counts)
            }
        }
    }

    /// The limit initial state `ν₀` on a finite space.
    pub fn probabilities(&self, space: &TypeSpace) -> Option<Vec<f64>> {
        match self {
            InitialSpec::Product { law } => law.probabilities(space),
            InitialSpec::Proportions { proportions } => Some(proportions.clone()),
        }
    }

    /// Whether the initial empirical measure is random.
    pub fn is_random(&self) -> bool {
        matches!(self, InitialSpec::Product { .. })
    }
}
