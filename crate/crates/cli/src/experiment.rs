//! The four subcommands on a validated config.

use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use ipsim_core::diagnostics::{
    clt_covariance_check, lln_convergence_report, replica_id, time_grid, CltOptions, LlnOptions, Provenance, Verdict,
};
use ipsim_core::engine::{run_trajectory_with, InitialDistribution, InitialSpec, Trajectory};
use ipsim_core::fluctuation::{diffusion_matrix_at, drift_matrix_at, pair_limit};
use ipsim_core::limit::{
    interpolate_limit, solve_limit_finite, solve_percolation_density, DensityGrid, DensityOptions, LimitKind,
    LimitTrajectory,
};
use ipsim_core::measure::{pair, ProbVector, TypeValue};
use ipsim_core::model::linear_consistency_error;
use ipsim_core::rng::{stream, stream_id, Purpose};

use crate::config::{ModelBlock, Validated};
use crate::output::{OutputDir, ReplicaSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Lln,
    Clt,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Lln => "lln",
            Command::Clt => "clt",
            Command::Validate => "validate",
        }
    }
}

pub struct Outcome {
    pub passed: bool,
    pub summary: String,
    pub replica_seeds: Vec<ReplicaSeed>,
    pub limit_seconds: f64,
    pub simulation_seconds: f64,
}

fn seeds_for(n: usize, level: usize, replicas: usize, lln: bool) -> Vec<ReplicaSeed> {
    (0..replicas)
        .map(|r| {
            let id = if lln { replica_id(level, r) } else { r as u64 };
            ReplicaSeed {
                n,
                replica: r,
                replica_id: id,
                initial_stream: stream_id(id, Purpose::Initial),
                dynamics_stream: stream_id(id, Purpose::Dynamics),
            }
        })
        .collect()
}

fn provenance(v: &Validated, n: Vec<usize>, dt: f64) -> Provenance {
    let r = v.run();
    Provenance {
        seed: r.seed,
        model: v.model.name().to_string(),
        parameters: v.model.parameters(),
        n,
        replicas: r.replicas,
        t_end: r.t_end,
        dt,
    }
}

pub fn solve_limit(v: &Validated) -> Result<LimitTrajectory> {
    let run = v.run();
    let space = v.model.space();
    if space.size().is_some() {
        let nu0 = v
            .initial()
            .probabilities(space)
            .ok_or_else(|| anyhow!("initial law has no probability vector on this space"))?;
        return Ok(solve_limit_finite(v.model.as_ref(), &nu0, run.t_end, run.dt_limit)?);
    }
    let Some(ModelBlock::InfoPercolation { lambda }) = &v.config.model else {
        bail!("no density limit solver for model {}", v.model.name());
    };
    let grid = run.grid.as_ref().ok_or_else(|| anyhow!("run.grid is required"))?;
    let InitialSpec::Product { law } = v.initial() else {
        bail!("the density limit needs a product initial law");
    };
    let g0 = DensityGrid::from_fn(grid.lo, grid.hi, grid.points, |x| law.density(x).unwrap_or(0.0))?;
    let opts = DensityOptions {
        method: grid.method,
        leakage_bound: grid.leakage_bound,
    };
    Ok(solve_percolation_density(&g0, *lambda, run.t_end, run.dt_limit, opts)?)
}

fn limit_comments(kind: &LimitKind) -> Vec<&'static str> {
    match kind {
        LimitKind::Finite => vec![
            "quantity: mean-field limit nu_t, mass of each type",
            "units: t in model time; index = type label index; value = probability mass (dimensionless)",
        ],
        LimitKind::Density { .. } => vec![
            "quantity: mean-field limit density g_t on the real line",
            "units: t in model time; index = grid point k at x = lo + k*dx; value = density per unit x",
        ],
    }
}

#[derive(Serialize)]
struct ObservableRow {
    replica: usize,
    t: f64,
    phi: usize,
    empirical: f64,
    limit: f64,
    fluctuation: f64,
}

#[derive(Serialize)]
struct MassRow<'a> {
    replica: usize,
    t: f64,
    label: &'a str,
    count: u64,
    mass: f64,
}

fn run(v: &Validated, out: &mut OutputDir) -> Result<Outcome> {
    let r = v.run();
    let n = r.n.ok_or_else(|| anyhow!("run needs run.n"))?;
    let model = v.model.as_ref();
    let space = model.space();

    let t0 = Instant::now();
    let limit = solve_limit(v)?;
    let limit_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let trajectories: Vec<Trajectory> = (0..r.replicas)
        .into_par_iter()
        .map(|i| {
            let id = i as u64;
            let init = v.initial().realize(space, n, &mut stream(r.seed, id, Purpose::Initial))?;
            run_trajectory_with(model, &init, r.t_end, stream(r.seed, id, Purpose::Dynamics))
        })
        .collect::<ipsim_core::Result<_>>()?;
    let simulation_seconds = t1.elapsed().as_secs_f64();

    let times = time_grid(r.t_end, r.sample_points);
    let family = &v.config.analysis.test_functions;
    let root_n = (n as f64).sqrt();
    let limit_states: Vec<Vec<f64>> = times.iter().map(|&t| interpolate_limit(&limit, t)).collect::<Result<_, _>>()?;

    if v.config.output.csv() {
        out.csv("limit.csv", &limit_comments(&limit.kind), &["t", "index", "value"], limit.rows())?;
        for (i, traj) in trajectories.iter().enumerate() {
            out.csv(
                &format!("trajectories/replica_{i:04}.csv"),
                &[
                    "quantity: accepted events of one replica",
                    "units: time in model time; agent ids are 0-based; types as labels or real values",
                ],
                &["event_index", "time", "event_kind", "moved_agent_ids", "type_before", "type_after"],
                traj.event_rows(),
            )?;
        }
        if let Some(labels) = space.labels() {
            let mut rows = Vec::new();
            for (i, traj) in trajectories.iter().enumerate() {
                for (m, &t) in traj.measures_at(&times)?.iter().zip(&times) {
                    for (k, label) in labels.iter().enumerate() {
                        let c = m.label_count(k);
                        rows.push(MassRow {
                            replica: i,
                            t,
                            label,
                            count: c,
                            mass: c as f64 / n as f64,
                        });
                    }
                }
            }
            out.csv(
                "snapshots.csv",
                &[
                    "quantity: empirical measure nu^N_t at the sample times",
                    "units: t in model time; count = agents of the type; mass = count/N",
                ],
                &["replica", "t", "label", "count", "mass"],
                rows,
            )?;
        }
        if !family.is_empty() {
            let mut rows = Vec::new();
            for (i, traj) in trajectories.iter().enumerate() {
                for ((m, &t), state) in traj.measures_at(&times)?.iter().zip(&times).zip(&limit_states) {
                    for (j, phi) in family.iter().enumerate() {
                        let e = pair(m, phi);
                        let l = pair_limit(&limit.kind, state, phi);
                        rows.push(ObservableRow {
                            replica: i,
                            t,
                            phi: j,
                            empirical: e,
                            limit: l,
                            fluctuation: root_n * (e - l),
                        });
                    }
                }
            }
            out.csv(
                "observables.csv",
                &[
                    "quantity: <nu^N_t, phi>, <nu_t, phi> and the fluctuation sqrt(N)(<nu^N_t, phi> - <nu_t, phi>)",
                    "units: t in model time; phi indexes analysis.test_functions; values in the units of phi",
                ],
                &["replica", "t", "phi", "empirical", "limit", "fluctuation"],
                rows,
            )?;
        }
    }
    let report = json!({
        "provenance": provenance(v, vec![n], limit.dt),
        "sample_times": times,
        "events": trajectories.iter().map(|t| t.events().len()).collect::<Vec<_>>(),
        "candidates": trajectories.iter().map(|t| t.candidate_count()).collect::<Vec<_>>(),
        "limit_notes": limit.notes,
        "mass_leakage": limit.mass_leakage,
    });
    if v.config.output.json() {
        out.json("run_report.json", &report)?;
    }
    let events: usize = trajectories.iter().map(|t| t.events().len()).sum();
    Ok(Outcome {
        passed: true,
        summary: format!("run: {} replica(s) of N = {n}, {events} accepted events", r.replicas),
        replica_seeds: seeds_for(n, 0, r.replicas, false),
        limit_seconds,
        simulation_seconds,
    })
}

#[derive(Serialize)]
struct ErrorRow {
    n: usize,
    replica: usize,
    sup_distance: f64,
}

fn lln(v: &Validated, out: &mut OutputDir) -> Result<Outcome> {
    let r = v.run();
    let n_list = r.n_list.as_ref().ok_or_else(|| anyhow!("lln needs run.n_list"))?;
    if n_list.len() < 3 {
        bail!("lln needs at least 3 population sizes in run.n_list, got {}", n_list.len());
    }
    let t0 = Instant::now();
    let limit = solve_limit(v)?;
    let limit_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let opts = LlnOptions {
        sample_points: r.sample_points,
        seed: r.seed,
    };
    let metric = v.config.analysis.metric;
    let report = lln_convergence_report(v.model.as_ref(), v.initial(), &limit, n_list, r.replicas, metric, &opts)?;
    let simulation_seconds = t1.elapsed().as_secs_f64();
    if v.config.output.json() {
        out.json("lln_report.json", &report)?;
    }
    if v.config.output.csv() {
        let rows = report.rows.iter().flat_map(|row| {
            row.errors.iter().enumerate().map(|(i, &e)| ErrorRow {
                n: row.n,
                replica: i,
                sup_distance: e,
            })
        });
        let unit = match metric {
            ipsim_core::diagnostics::Metric::Tv => "total variation distance (dimensionless, in [0, 1])",
            ipsim_core::diagnostics::Metric::Ks => "Kolmogorov-Smirnov distance (dimensionless, in [0, 1])",
        };
        let unit_line = format!("units: sup_distance is a {unit}; sup over the report's sample_times");
        out.csv(
            "lln_errors.csv",
            &["quantity: sup over sample times of d(nu^N_t, nu_t), one row per replica", &unit_line],
            &["n", "replica", "sup_distance"],
            rows,
        )?;
    }
    let [lo, hi] = v.config.analysis.slope_band;
    let (passed, summary) = match (&report.fit, report.degenerate) {
        (_, true) => (true, "lln: all errors are zero; slope undefined (degenerate)".to_string()),
        (Some(f), false) => (
            report.slope_within(lo, hi),
            format!(
                "lln: slope {:.4} (95% CI [{:.4}, {:.4}]), band [{lo}, {hi}]",
                f.slope, f.ci_low, f.ci_high
            ),
        ),
        (None, false) => (false, "lln: slope fit failed".to_string()),
    };
    let replica_seeds = n_list
        .iter()
        .enumerate()
        .flat_map(|(level, &n)| seeds_for(n, level, r.replicas, true))
        .collect();
    Ok(Outcome {
        passed,
        summary,
        replica_seeds,
        limit_seconds,
        simulation_seconds,
    })
}

#[derive(Serialize)]
struct SampleRow {
    replica: usize,
    component: usize,
    sigma: f64,
}

fn clt(v: &Validated, out: &mut OutputDir) -> Result<Outcome> {
    let r = v.run();
    let n = r.n.ok_or_else(|| anyhow!("clt needs run.n"))?;
    let InitialSpec::Product {
        law: InitialDistribution::Discrete { weights },
    } = v.initial()
    else {
        bail!("clt needs a product initial condition with a discrete law");
    };
    let opts = CltOptions {
        dt_limit: r.dt_limit,
        dt_covariance: r.dt_covariance,
        seed: r.seed,
    };
    let t1 = Instant::now();
    let tol = v.config.analysis.clt_tolerance;
    let report = clt_covariance_check(v.model.as_ref(), weights, n, r.replicas, r.t_end, tol, &opts)?;
    let simulation_seconds = t1.elapsed().as_secs_f64();
    if v.config.output.json() {
        out.json("clt_report.json", &report)?;
    }
    if v.config.output.csv() {
        let rows = report.samples.iter().enumerate().flat_map(|(i, s)| {
            s.iter().enumerate().map(move |(k, &x)| SampleRow {
                replica: i,
                component: k,
                sigma: x,
            })
        });
        out.csv(
            "clt_samples.csv",
            &[
                "quantity: fluctuation sigma^N_T = sqrt(N)(nu^N_T - nu_T) on each type, one row per replica and component",
                "units: dimensionless (mass difference scaled by sqrt(N)); component = type label index",
            ],
            &["replica", "component", "sigma"],
            rows,
        )?;
    }
    let passed = report.covariance_verdict == Verdict::Pass && report.normality_verdict != Verdict::Fail;
    let summary = format!(
        "clt: relative Frobenius error {:.4} (tolerance {tol}); normality {:?}",
        report.relative_frobenius_error, report.normality_verdict
    );
    Ok(Outcome {
        passed,
        summary,
        replica_seeds: seeds_for(n, 0, r.replicas, false),
        limit_seconds: 0.0,
        simulation_seconds,
    })
}

#[derive(Serialize)]
struct CheckResult {
    name: &'static str,
    worst: f64,
    tolerance: f64,
    pass: bool,
}

fn check(name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        worst,
        tolerance,
        pass: worst <= tolerance,
    }
}

const STATE_SAMPLES: usize = 64;

/// Kernel-consistency checks of the model at random states.
fn validate_model(v: &Validated, out: &mut OutputDir) -> Result<Outcome> {
    let model = v.model.as_ref();
    let space = model.space();
    let seed = v.run().seed;
    let mut rng = stream(seed, 0, Purpose::Auxiliary);
    let mut checks = Vec::new();
    if let Some(k) = space.size() {
        let mut states: Vec<Vec<f64>> = v.initial().probabilities(space).into_iter().collect();
        while states.len() < STATE_SAMPLES {
            let x: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
            let s: f64 = x.iter().sum();
            states.push(x.into_iter().map(|e| e / s).collect());
        }
        let labels: Vec<TypeValue> = (0..k).map(TypeValue::Label).collect();
        let (mut gamma_excess, mut lambda_excess, mut kernel_mass) = (0.0f64, 0.0f64, 0.0f64);
        for u in &states {
            let view = ProbVector(u);
            for w in &labels {
                let g = model.gamma(w, &view);
                gamma_excess = gamma_excess.max(g - model.gamma_bar());
                if g > 0.0 {
                    kernel_mass = kernel_mass.max((model.jump_kernel(w, &view).normalized().mass() - 1.0).abs());
                }
                for w2 in &labels {
                    let l = model.lambda(w, w2, &view);
                    lambda_excess = lambda_excess.max(l - model.lambda_bar());
                    if l > 0.0 {
                        kernel_mass = kernel_mass.max((model.pair_kernel(w, w2, &view).normalized().mass() - 1.0).abs());
                    }
                }
            }
        }
        let slack = 1e-12 * (1.0 + model.gamma_bar().max(model.lambda_bar()));
        checks.push(check("gamma_within_bound", gamma_excess, slack));
        checks.push(check("lambda_within_bound", lambda_excess, slack));
        checks.push(check("kernels_are_probabilities", kernel_mass, 1e-12));
        if let Some(kern) = model.linear_kernels() {
            let (mut lin, mut cols, mut rows, mut eig) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for u in &states {
                lin = lin.max(linear_consistency_error(model, kern, u));
                let a = drift_matrix_at(kern, u)?;
                let g = diffusion_matrix_at(kern, u)?;
                cols = cols.max((0..k).map(|j| a.column(j).sum().abs()).fold(0.0, f64::max));
                rows = rows.max((0..k).map(|i| g.row(i).sum().abs()).fold(0.0, f64::max));
                eig = eig.max(-g.symmetric_eigenvalues().min());
            }
            checks.push(check("linear_kernels_reproduce_rates", lin, 1e-10));
            checks.push(check("drift_columns_sum_to_zero", cols, 1e-10));
            checks.push(check("diffusion_rows_sum_to_zero", rows, 1e-10));
            checks.push(check("diffusion_is_psd", eig, 1e-10));
        }
    } else {
        // real types: rates and kernels at pairs of draws from the initial law
        let init = v.initial().realize(space, STATE_SAMPLES, &mut rng)?;
        let m = ipsim_core::measure::EmpiricalMeasure::from_config(space, &init);
        let (mut excess, mut mass) = (0.0f64, 0.0f64);
        for w1 in init.types() {
            excess = excess.max(model.gamma(w1, &m) - model.gamma_bar());
            for w2 in init.types() {
                let l = model.lambda(w1, w2, &m);
                excess = excess.max(l - model.lambda_bar());
                if l > 0.0 {
                    mass = mass.max((model.pair_kernel(w1, w2, &m).normalized().mass() - 1.0).abs());
                }
            }
        }
        checks.push(check("rates_within_bounds", excess, 1e-12));
        checks.push(check("kernels_are_probabilities", mass, 1e-12));
    }
    let passed = checks.iter().all(|c| c.pass);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if v.config.output.json() {
        out.json(
            "validate_report.json",
            &json!({
                "model": model.name(),
                "parameters": model.parameters(),
                "seed": seed,
                "checks": checks,
                "passed": passed,
            }),
        )?;
    }
    let summary = if passed {
        format!("validate: config valid; {} model checks passed", checks.len())
    } else {
        format!("validate: config valid; model checks failed: {}", failed.join(", "))
    };
    Ok(Outcome {
        passed,
        summary,
        replica_seeds: Vec::new(),
        limit_seconds: 0.0,
        simulation_seconds: 0.0,
    })
}

pub fn execute(cmd: Command, v: &Validated, out: &mut OutputDir) -> Result<Outcome> {
    match cmd {
        Command::Run => run(v, out),
        Command::Lln => lln(v, out),
        Command::Clt => clt(v, out),
        Command::Validate => validate_model(v, out),
    }
}
