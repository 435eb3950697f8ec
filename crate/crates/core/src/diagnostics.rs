//! Statistical verdicts on simulated output.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::{simulate_final, simulate_sampled, InitialSpec};
use crate::error::{Error, Result};
use crate::fluctuation::{
    build_diffusion_matrix, build_drift_matrix, matrix_rows, multinomial_covariance, relative_frobenius,
    sample_covariance, solve_fluctuation_covariance,
};
use crate::limit::{interpolate_limit, solve_limit_finite, LimitKind, LimitTrajectory};
use crate::measure::{ks_distance, tv_distance_empirical, EmpiricalMeasure};
use crate::model::Model;
use crate::rng::{stream, Purpose};

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub model: String,
    pub parameters: serde_json::Value,
    pub n: Vec<usize>,
    pub replicas: usize,
    pub t_end: f64,
    pub dt: f64,
}

/// Replica id for replica `r` of the `level`-th population size.
pub fn replica_id(level: usize, r: usize) -> u64 {
    ((level as u64) << 32) | r as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Total variation, finite `W`.
    Tv,
    /// Kolmogorov–Smirnov against a density, real `W`.
    Ks,
}

/// Distance between an empirical measure and a limit state.
pub fn limit_distance(metric: Metric, m: &EmpiricalMeasure, kind: &LimitKind, state: &[f64]) -> Result<f64> {
    match (metric, kind) {
        (Metric::Tv, LimitKind::Finite) => tv_distance_empirical(m, state),
        (Metric::Ks, LimitKind::Density { lo, dx, .. }) => {
            let xs = m
                .real_samples()
                .ok_or(Error::Unsupported("KS distance needs real-valued types"))?;
            ks_distance(&xs, *lo, *dx, state)
        }
        (Metric::Tv, _) => Err(Error::Unsupported("TV distance needs a finite limit")),
        (Metric::Ks, _) => Err(Error::Unsupported("KS distance needs a density limit")),
    }
}

/// `n` equally spaced points on `[0, t_end]`, both ends included.
pub fn time_grid(t_end: f64, n: usize) -> Vec<f64> {
    if n < 2 || t_end == 0.0 {
        return vec![t_end];
    }
    (0..n)
        .map(|i| if i + 1 == n { t_end } else { t_end * i as f64 / (n - 1) as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnRow {
    pub n: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnReport {
    pub provenance: Provenance,
    pub metric: Metric,
    pub sample_times: Vec<f64>,
    pub rows: Vec<LlnRow>,
    /// `None` when every error is zero and the slope is undefined.
    pub fit: Option<SlopeFit>,
    pub degenerate: bool,
}

impl LlnReport {
    pub fn slope_within(&self, lo: f64, hi: f64) -> bool {
        self.fit.is_some_and(|f| (lo..=hi).contains(&f.slope))
    }
}

const Z95: f64 = 1.959_963_984_540_054;

/// OLS slope of `log(mean)` on `log(n)`. The standard error propagates the
/// per-level standard errors through the delta method `sd(log m) ≈ se/m`,
/// so it shrinks like `1/√replicas`.
pub fn fit_loglog_slope(ns: &[usize], means: &[f64], ses: &[f64]) -> Option<SlopeFit> {
    if ns.len() < 2 || means.iter().any(|&m| !(m > 0.0)) {
        return None;
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let k = x.len() as f64;
    let xm = x.iter().sum::<f64>() / k;
    let ym = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
    let slope = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / sxx;
    let var: f64 = x
        .iter()
        .zip(means.iter().zip(ses))
        .map(|(a, (m, s))| ((a - xm) / sxx).powi(2) * (s / m).powi(2))
        .sum();
    let se = var.sqrt();
    Some(SlopeFit {
        slope,
        std_error: se,
        ci_low: slope - Z95 * se,
        ci_high: slope + Z95 * se,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnOptions {
    pub sample_points: usize,
    pub seed: u64,
}

impl Default for LlnOptions {
    fn default() -> Self {
        LlnOptions {
            sample_points: 50,
            seed: 0,
        }
    }
}

/// For each `N`: mean over replicas of `sup_t d(ν^N_t, ν_t)` on a fixed
/// time grid, then a log-log slope fit.
pub fn lln_convergence_report(
    model: &dyn Model,
    initial: &InitialSpec,
    limit: &LimitTrajectory,
    n_list: &[usize],
    replicas: usize,
    metric: Metric,
    options: &LlnOptions,
) -> Result<LlnReport> {
    if n_list.len() < 3 {
        return Err(Error::config("n_list", format!("needs at least 3 population sizes, got {}", n_list.len())));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::config("n_list", "population sizes must be positive and strictly increasing"));
    }
    if replicas == 0 {
        return Err(Error::config("replicas", "must be >= 1"));
    }
    initial.validate(model.space())?;
    let t_end = limit.t_end();
    let times = time_grid(t_end, options.sample_points);
    let states: Vec<Vec<f64>> = times.iter().map(|&t| interpolate_limit(limit, t)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n_list.len());
    for (level, &n) in n_list.iter().enumerate() {
        let errors: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let id = replica_id(level, r);
                let init = initial.realize(model.space(), n, &mut stream(options.seed, id, Purpose::Initial))?;
                let mut worst: f64 = 0.0;
                let mut failure = None;
                simulate_sampled(model, &init, &times, stream(options.seed, id, Purpose::Dynamics), |k, _, m| {
                    match limit_distance(metric, m, &limit.kind, &states[k]) {
                        Ok(d) => worst = worst.max(d),
                        Err(e) => failure = Some(e),
                    }
                })?;
                failure.map_or(Ok(worst), Err)
            })
            .collect::<Result<_>>()?;
        let (mean_error, std_error) = mean_and_se(&errors);
        rows.push(LlnRow {
            n,
            mean_error,
            std_error,
            errors,
        });
    }
    let degenerate = rows.iter().all(|r| r.mean_error == 0.0);
    let fit = if degenerate {
        None
    } else {
        let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
        let means: Vec<f64> = rows.iter().map(|r| r.mean_error).collect();
        let ses: Vec<f64> = rows.iter().map(|r| r.std_error).collect();
        fit_loglog_slope(&ns, &means, &ses)
    };
    Ok(LlnReport {
        provenance: Provenance {
            seed: options.seed,
            model: model.name().to_string(),
            parameters: model.parameters(),
            n: n_list.to_vec(),
            replicas,
            t_end,
            dt: limit.dt,
        },
        metric,
        sample_times: times,
        rows,
        fit,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub samples: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub z_skewness: f64,
    pub z_kurtosis: f64,
    pub verdict: Verdict,
}

/// Threshold on `|z|` for the skewness and kurtosis tests.
pub const NORMALITY_Z: f64 = 4.0;

/// Skewness and excess-kurtosis z-tests under the normal null, with the
/// exact small-sample standard errors of the bias-corrected estimators.
pub fn normality_check(samples: &[f64]) -> Result<NormalityReport> {
    let n = samples.len();
    if n < 500 {
        return Err(Error::Insufficient(format!("normality check needs >= 500 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    // constant samples, up to rounding in the mean
    if m2.sqrt() <= 1e-12 * mean.abs() || m2 == 0.0 {
        return Ok(NormalityReport {
            samples: n,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            z_skewness: 0.0,
            z_kurtosis: 0.0,
            verdict: Verdict::Degenerate,
        });
    }
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    let skew = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let kurt = ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));
    let se_skew = (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt();
    let se_kurt = 2.0 * se_skew * ((nf * nf - 1.0) / ((nf - 3.0) * (nf + 5.0))).sqrt();
    let (zs, zk) = (skew / se_skew, kurt / se_kurt);
    let verdict = if zs.abs() > NORMALITY_Z || zk.abs() > NORMALITY_Z {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    Ok(NormalityReport {
        samples: n,
        skewness: skew,
        excess_kurtosis: kurt,
        z_skewness: zs,
        z_kurtosis: zk,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Cells after pooling.
    pub cells: usize,
}

/// Two-sample chi-square test of homogeneity. Cells with an expected count
/// below 5 in either sample are pooled together; if the pool is still too
/// small it is merged into the smallest remaining cell.
pub fn chi_square_equality(a: &[u64], b: &[u64]) -> Result<ChiSquareResult> {
    if a.len() != b.len() {
        return Err(Error::SpaceMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Insufficient("a sample has no observations".into()));
    }
    let total = na + nb;
    let expected_min = |ca: f64, cb: f64| (ca + cb) * na.min(nb) / total;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        if x + y == 0.0 {
            continue;
        }
        if expected_min(x, y) < 5.0 {
            pool.0 += x;
            pool.1 += y;
        } else {
            cells.push((x, y));
        }
    }
    if pool.0 + pool.1 > 0.0 {
        if expected_min(pool.0, pool.1) >= 5.0 || cells.is_empty() {
            cells.push(pool);
        } else {
            let smallest = cells
                .iter_mut()
                .min_by(|p, q| (p.0 + p.1).total_cmp(&(q.0 + q.1)))
                .unwrap();
            smallest.0 += pool.0;
            smallest.1 += pool.1;
        }
    }
    if cells.len() < 2 || cells.iter().any(|&(x, y)| expected_min(x, y) < 5.0) {
        return Err(Error::Insufficient(
            "fewer than two cells with expected count >= 5 after pooling".into(),
        ));
    }
    let mut stat = 0.0;
    for &(x, y) in &cells {
        let col = x + y;
        let (ea, eb) = (col * na / total, col * nb / total);
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Insufficient(e.to_string()))?;
    let p_value = if stat == 0.0 { 1.0 } else { dist.sf(stat) };
    Ok(ChiSquareResult {
        statistic: stat,
        dof,
        p_value,
        cells: cells.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub provenance: Provenance,
    pub empirical_covariance: Vec<Vec<f64>>,
    pub predicted_covariance: Vec<Vec<f64>>,
    pub relative_frobenius_error: f64,
    pub tolerance: f64,
    pub covariance_verdict: Verdict,
    pub normality: Vec<NormalityReport>,
    pub normality_verdict: Verdict,
    /// `σ^N_T` per replica, one entry per atom.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltOptions {
    pub dt_limit: f64,
    pub dt_covariance: f64,
    pub seed: u64,
}

impl Default for CltOptions {
    fn default() -> Self {
        CltOptions {
            dt_limit: 1e-3,
            dt_covariance: 1e-3,
            seed: 0,
        }
    }
}

/// Minimum replica count for a covariance estimate.
pub const MIN_CLT_REPLICAS: usize = 100;

/// Empirical covariance of `σ^N_T` over replicas against the Lyapunov
/// prediction started from the multinomial covariance of product initials.
pub fn clt_covariance_check(
    model: &dyn Model,
    nu0: &[f64],
    n: usize,
    replicas: usize,
    t_end: f64,
    tolerance: f64,
    options: &CltOptions,
) -> Result<CltReport> {
    if replicas < MIN_CLT_REPLICAS {
        return Err(Error::Insufficient(format!(
            "CLT covariance check needs >= {MIN_CLT_REPLICAS} replicas, got {replicas}"
        )));
    }
    let kernels = model
        .linear_kernels()
        .ok_or(Error::Unsupported("CLT check needs linear kernels"))?;
    let k = model
        .space()
        .size()
        .ok_or(Error::Unsupported("CLT covariance check needs a finite type space"))?;
    let limit = solve_limit_finite(model, nu0, t_end, options.dt_limit)?;
    let a = build_drift_matrix(kernels, &limit)?;
    let g = build_diffusion_matrix(kernels, &limit)?;
    let sigma0 = multinomial_covariance(nu0);
    let predicted = solve_fluctuation_covariance(|t| a.at(t), |t| g.at(t), &sigma0, t_end, options.dt_covariance)?
        .final_cov()
        .clone();
    let u_t = limit.final_state().to_vec();
    let initial = InitialSpec::Product {
        law: crate::engine::InitialDistribution::Discrete { weights: nu0.to_vec() },
    };
    let root_n = (n as f64).sqrt();
    let samples: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let id = r as u64;
            let init = initial.realize(model.space(), n, &mut stream(options.seed, id, Purpose::Initial))?;
            let m = simulate_final(model, &init, t_end, stream(options.seed, id, Purpose::Dynamics))?;
            Ok((0..k).map(|i| root_n * (m.label_count(i) as f64 / n as f64 - u_t[i])).collect())
        })
        .collect::<Result<_>>()?;
    let vecs: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_column_slice(s)).collect();
    let empirical = sample_covariance(&vecs);
    let err = relative_frobenius(&empirical, &predicted);
    let normality: Vec<NormalityReport> = (0..k)
        .map(|i| {
            let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            normality_check(&xs)
        })
        .collect::<Result<_>>()
        .or_else(|e| match e {
            // fewer than 500 replicas: report covariance only
            Error::Insufficient(_) => Ok(Vec::new()),
            e => Err(e),
        })?;
    let normality_verdict = if normality.is_empty() {
        Verdict::Degenerate
    } else if normality.iter().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    Ok(CltReport {
        provenance: Provenance {
            seed: options.seed,
            model: model.name().to_string(),
            parameters: model.parameters(),
            n: vec![n],
            replicas,
            t_end,
            dt: options.dt_covariance,
        },
        empirical_covariance: matrix_rows(&empirical),
        predicted_covariance: matrix_rows(&predicted),
        relative_frobenius_error: err,
        tolerance,
        covariance_verdict: if err <= tolerance { Verdict::Pass } else { Verdict::Fail },
        normality,
        normality_verdict,
        samples,
    })
}
