//! Experiment configuration: one JSON document per experiment.
//!
//! Parsing runs in phases so that a broken file reports as much as possible
//! at once: JSON syntax (with line and column), unknown keys anywhere in the
//! document, field types (with the offending path), then value ranges and
//! cross-field rules.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ipsim_core::diagnostics::Metric;
use ipsim_core::engine::{InitialDistribution, InitialSpec};
use ipsim_core::limit::ConvolutionMethod;
use ipsim_core::measure::TestFunction;
use ipsim_core::model::{
    fleming_viot_model, info_percolation_model, opinion_model, otc_model, two_state_model, Model, TableModel,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{} violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

#[cfg(test)]
impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: Option<u32>,
    pub model: Option<ModelBlock>,
    pub initial: Option<InitialSpec>,
    pub run: Option<RunBlock>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", content = "parameters", rename_all = "snake_case")]
pub enum ModelBlock {
    Otc {
        lambda_u: f64,
        lambda_d: f64,
        beta: f64,
        rho: f64,
    },
    Opinion {
        alpha: f64,
        beta: f64,
        m: usize,
        p: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
    },
    FlemingViot {
        q: Vec<Vec<f64>>,
        #[serde(default = "default_exit_cap")]
        exit_cap: f64,
    },
    InfoPercolation {
        lambda: f64,
    },
    TwoState {
        up: f64,
        down: f64,
        #[serde(default)]
        contagion: f64,
    },
    /// Custom finite-type model from flattened kernel tables.
    Table {
        labels: Vec<String>,
        #[serde(default)]
        gamma: Vec<f64>,
        #[serde(default)]
        lambda: Vec<f64>,
    },
}

fn default_exit_cap() -> f64 {
    1e6
}

impl ModelBlock {
    pub fn build(&self) -> ipsim_core::Result<Box<dyn Model>> {
        Ok(match self {
            ModelBlock::Otc {
                lambda_u,
                lambda_d,
                beta,
                rho,
            } => Box::new(otc_model(*lambda_u, *lambda_d, *beta, *rho)?),
            ModelBlock::Opinion { alpha, beta, m, p, q } => Box::new(opinion_model(*alpha, *beta, p.clone(), q.clone(), *m)?),
            ModelBlock::FlemingViot { q, exit_cap } => Box::new(fleming_viot_model(q.clone(), *exit_cap)?),
            ModelBlock::InfoPercolation { lambda } => Box::new(info_percolation_model(*lambda)?),
            ModelBlock::TwoState { up, down, contagion } => Box::new(two_state_model(*up, *down, *contagion)?),
            ModelBlock::Table { labels, gamma, lambda } => {
                Box::new(TableModel::new("table", labels.clone(), gamma.clone(), lambda.clone())?)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunBlock {
    pub t_end: f64,
    pub n: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt_limit: f64,
    #[serde(default = "default_dt")]
    pub dt_covariance: f64,
    #[serde(default = "default_sample_points")]
    pub sample_points: usize,
    /// Grid for the density limit on the real line.
    pub grid: Option<GridBlock>,
}

fn default_replicas() -> usize {
    1
}

fn default_dt() -> f64 {
    1e-3
}

fn default_sample_points() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridBlock {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    #[serde(default)]
    pub method: ConvolutionMethod,
    #[serde(default = "default_leakage")]
    pub leakage_bound: f64,
}

fn default_leakage() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisBlock {
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    #[serde(default = "default_band")]
    pub slope_band: [f64; 2],
    #[serde(default = "default_clt_tolerance")]
    pub clt_tolerance: f64,
}

fn default_metric() -> Metric {
    Metric::Tv
}

fn default_band() -> [f64; 2] {
    [-0.65, -0.35]
}

fn default_clt_tolerance() -> f64 {
    0.15
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        AnalysisBlock {
            metric: default_metric(),
            test_functions: Vec::new(),
            slope_band: default_band(),
            clt_tolerance: default_clt_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl OutputBlock {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

/// A config that passed every phase; the blocks that are optional in the
/// file are guaranteed present.
#[derive(Debug)]
pub struct Validated {
    pub raw: Vec<u8>,
    pub config: ExperimentConfig,
    pub model: Box<dyn Model>,
}

impl Validated {
    pub fn initial(&self) -> &InitialSpec {
        self.config.initial.as_ref().unwrap()
    }

    pub fn run(&self) -> &RunBlock {
        self.config.run.as_ref().unwrap()
    }

    pub fn run_mut(&mut self) -> &mut RunBlock {
        self.config.run.as_mut().unwrap()
    }
}

pub fn load(path: &Path) -> Result<Validated, ConfigError> {
    let raw = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&raw)
}

pub fn parse(raw: &[u8]) -> Result<Validated, ConfigError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut violations = Vec::new();
    unknown_keys(&value, &mut violations);
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    let config: ExperimentConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Invalid(vec![Violation::new(path, e.into_inner().to_string())])
    })?;
    let model = semantic(&config, &mut violations);
    match model {
        Some(model) if violations.is_empty() => Ok(Validated {
            raw: raw.to_vec(),
            config,
            model,
        }),
        _ => Err(ConfigError::Invalid(violations)),
    }
}

const TOP_KEYS: &[&str] = &["version", "model", "initial", "run", "analysis", "output"];
const RUN_KEYS: &[&str] = &[
    "t_end",
    "n",
    "n_list",
    "replicas",
    "seed",
    "dt_limit",
    "dt_covariance",
    "sample_points",
    "grid",
];
const GRID_KEYS: &[&str] = &["lo", "hi", "points", "method", "leakage_bound"];
const ANALYSIS_KEYS: &[&str] = &["metric", "test_functions", "slope_band", "clt_tolerance"];
const OUTPUT_KEYS: &[&str] = &["directory", "formats"];

fn model_keys(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "otc" => &["lambda_u", "lambda_d", "beta", "rho"],
        "opinion" => &["alpha", "beta", "m", "p", "q"],
        "fleming_viot" => &["q", "exit_cap"],
        "info_percolation" => &["lambda"],
        "two_state" => &["up", "down", "contagion"],
        "table" => &["labels", "gamma", "lambda"],
        _ => return None,
    })
}

fn law_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "discrete" => &["kind", "weights"],
        "atoms" => &["kind", "values", "weights"],
        "normal" => &["kind", "mean", "sd"],
        "uniform" => &["kind", "lo", "hi"],
        _ => return None,
    })
}

fn test_function_keys(kind: &str, set: Option<&str>) -> Option<&'static [&'static str]> {
    Some(match (kind, set) {
        ("indicator", Some("labels")) => &["kind", "set", "labels"],
        ("indicator", Some("point")) => &["kind", "set", "value"],
        ("indicator", Some("interval")) => &["kind", "set", "lo", "hi"],
        ("monomial", _) => &["kind", "power", "center", "axis"],
        ("bounded_smooth", _) => &["kind", "family", "a", "b"],
        ("constant", _) => &["kind", "c"],
        _ => return None,
    })
}

fn check_keys(v: &Value, path: &str, allowed: &[&str], out: &mut Vec<Violation>) {
    if let Some(obj) = v.as_object() {
        for k in obj.keys().filter(|k| !allowed.contains(&k.as_str())) {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            out.push(Violation::new(p, "unknown key"));
        }
    }
}

/// Every key not in the schema, anywhere in the document. Discriminators
/// that are themselves unknown are left to the typed phase to report.
fn unknown_keys(v: &Value, out: &mut Vec<Violation>) {
    check_keys(v, "", TOP_KEYS, out);
    if let Some(m) = v.get("model") {
        check_keys(m, "model", &["name", "parameters"], out);
        if let (Some(keys), Some(p)) = (m.get("name").and_then(Value::as_str).and_then(model_keys), m.get("parameters")) {
            check_keys(p, "model.parameters", keys, out);
        }
    }
    if let Some(i) = v.get("initial") {
        match i.get("mode").and_then(Value::as_str) {
            Some("product") => {
                check_keys(i, "initial", &["mode", "law"], out);
                if let Some(law) = i.get("law") {
                    if let Some(keys) = law.get("kind").and_then(Value::as_str).and_then(law_keys) {
                        check_keys(law, "initial.law", keys, out);
                    }
                }
            }
            Some("proportions") => check_keys(i, "initial", &["mode", "proportions"], out),
            _ => {}
        }
    }
    if let Some(r) = v.get("run") {
        check_keys(r, "run", RUN_KEYS, out);
        if let Some(g) = r.get("grid") {
            check_keys(g, "run.grid", GRID_KEYS, out);
        }
    }
    if let Some(a) = v.get("analysis") {
        check_keys(a, "analysis", ANALYSIS_KEYS, out);
        if let Some(fs) = a.get("test_functions").and_then(Value::as_array) {
            for (i, f) in fs.iter().enumerate() {
                let kind = f.get("kind").and_then(Value::as_str).unwrap_or("");
                let set = f.get("set").and_then(Value::as_str);
                if let Some(keys) = test_function_keys(kind, set) {
                    check_keys(f, &format!("analysis.test_functions[{i}]"), keys, out);
                }
            }
        }
    }
    if let Some(o) = v.get("output") {
        check_keys(o, "output", OUTPUT_KEYS, out);
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Range and cross-field rules. Returns the built model when the model block
/// is usable, even if other blocks have violations.
fn semantic(c: &ExperimentConfig, out: &mut Vec<Violation>) -> Option<Box<dyn Model>> {
    match c.version {
        None => out.push(Violation::new("version", "version required")),
        Some(SCHEMA_VERSION) => {}
        Some(v) => out.push(Violation::new("version", format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"))),
    }
    let model = match &c.model {
        None => {
            out.push(Violation::new("model", "model required"));
            None
        }
        Some(block) => match block.build() {
            Ok(m) => Some(m),
            Err(ipsim_core::Error::Config { field, reason }) => {
                out.push(Violation::new(format!("model.parameters.{field}"), reason));
                None
            }
            Err(e) => {
                out.push(Violation::new("model", e.to_string()));
                None
            }
        },
    };
    match (&c.initial, &model) {
        (None, _) => out.push(Violation::new("initial", "initial required")),
        (Some(init), Some(m)) => {
            if let Err(e) = init.validate(m.space()) {
                out.push(match e {
                    ipsim_core::Error::Config { field, reason } => Violation::new(field, reason),
                    e => Violation::new("initial", e.to_string()),
                });
            }
        }
        _ => {}
    }
    match &c.run {
        None => out.push(Violation::new("run", "run required")),
        Some(r) => {
            if !(r.t_end >= 0.0 && r.t_end.is_finite()) {
                out.push(Violation::new("run.t_end", format!("must be finite and >= 0, got {}", r.t_end)));
            }
            if r.n == Some(0) {
                out.push(Violation::new("run.n", "must be >= 1"));
            }
            if let Some(ns) = &r.n_list {
                if ns.first() == Some(&0) || ns.windows(2).any(|w| w[0] >= w[1]) {
                    out.push(Violation::new("run.n_list", "must be positive and strictly increasing"));
                }
            }
            if r.n.is_none() && r.n_list.is_none() {
                out.push(Violation::new("run", "one of n or n_list is required"));
            }
            if r.replicas == 0 {
                out.push(Violation::new("run.replicas", "must be >= 1"));
            }
            for (name, v) in [("run.dt_limit", r.dt_limit), ("run.dt_covariance", r.dt_covariance)] {
                if !positive(v) {
                    out.push(Violation::new(name, format!("must be > 0, got {v}")));
                }
            }
            if r.sample_points < 2 {
                out.push(Violation::new("run.sample_points", "must be >= 2"));
            }
            if let Some(g) = &r.grid {
                if !(g.lo < 0.0 && g.hi > 0.0 && g.lo.is_finite() && g.hi.is_finite()) {
                    out.push(Violation::new("run.grid", "need lo < 0 < hi"));
                }
                if g.points < 3 {
                    out.push(Violation::new("run.grid.points", "must be >= 3"));
                }
                if !positive(g.leakage_bound) {
                    out.push(Violation::new("run.grid.leakage_bound", "must be > 0"));
                }
            }
        }
    }
    if let (Some(m), Some(run)) = (&model, &c.run) {
        let real = m.space().size().is_none();
        if real && run.grid.is_none() {
            out.push(Violation::new("run.grid", "a real type space needs a density grid for the limit"));
        }
        if real {
            if let Some(InitialSpec::Product { law }) = &c.initial {
                if !matches!(law, InitialDistribution::Normal { .. } | InitialDistribution::Uniform { .. }) {
                    out.push(Violation::new("initial.law", "the density limit needs a normal or uniform initial law"));
                }
            }
            if c.analysis.metric == Metric::Tv {
                out.push(Violation::new("analysis.metric", "tv needs a finite type space; use ks"));
            }
        } else if c.analysis.metric == Metric::Ks {
            out.push(Violation::new("analysis.metric", "ks needs a real type space; use tv"));
        }
        if let Some(k) = m.space().size() {
            for (i, f) in c.analysis.test_functions.iter().enumerate() {
                if let TestFunction::Indicator(ipsim_core::measure::IndicatorSet::Labels { labels }) = f {
                    if labels.iter().any(|&l| l >= k) {
                        out.push(Violation::new(format!("analysis.test_functions[{i}]"), format!("label out of range 0..{k}")));
                    }
                }
            }
        }
    }
    let [lo, hi] = c.analysis.slope_band;
    if !(lo < hi) {
        out.push(Violation::new("analysis.slope_band", format!("need lo < hi, got [{lo}, {hi}]")));
    }
    if !positive(c.analysis.clt_tolerance) {
        out.push(Violation::new("analysis.clt_tolerance", "must be > 0"));
    }
    if c.output.formats.is_empty() {
        out.push(Violation::new("output.formats", "need at least one format"));
    }
    if c.output.directory.is_empty() {
        out.push(Violation::new("output.directory", "must not be empty"));
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    fn otc(beta: &str) -> String {
        format!(
            r#"{{"version": 1,
                "model": {{"name": "otc", "parameters": {{"lambda_u": 1, "lambda_d": 1, "beta": {beta}, "rho": 1}}}},
                "initial": {{"mode": "product", "law": {{"kind": "discrete", "weights": [0.25, 0.25, 0.25, 0.25]}}}},
                "run": {{"t_end": 1, "n": 100}}}}"#
        )
    }

    #[test]
    fn valid_config_parses() {
        let v = parse(otc("1").as_bytes()).unwrap();
        assert_eq!(v.model.name(), "otc");
        assert_eq!(v.run().replicas, 1);
        assert!(v.config.output.csv() && v.config.output.json());
    }

    #[test]
    fn negative_beta_is_one_violation_naming_the_field() {
        let e = parse(otc("-1").as_bytes()).unwrap_err();
        let v = e.violations();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].path, "model.parameters.beta");
    }

    #[test]
    fn missing_model_is_reported() {
        let e = parse(br#"{"version": 1, "run": {"t_end": 1, "n": 10}, "initial": {"mode": "proportions", "proportions": [1]}}"#)
            .unwrap_err();
        assert!(e.violations().iter().any(|v| v.path == "model" && v.message == "model required"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse(b"{\n  \"version\": 1,\n  \"model\": }") {
            Err(ConfigError::Syntax { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_unknown_keys_are_listed() {
        let s = otc("1").replacen("\"version\": 1,", "\"version\": 1, \"colour\": 2,", 1).replacen(
            "\"rho\": 1",
            "\"rho\": 1, \"gamma\": 3",
            1,
        );
        let e = parse(s.as_bytes()).unwrap_err();
        let paths: Vec<&str> = e.violations().iter().map(|v| v.path.as_str()).collect();
        assert_eq!(paths, ["colour", "model.parameters.gamma"]);
    }

    #[test]
    fn type_errors_name_the_path() {
        let s = otc("1").replace("\"t_end\": 1", "\"t_end\": \"soon\"");
        let e = parse(s.as_bytes()).unwrap_err();
        assert_eq!(e.violations()[0].path, "run.t_end");
    }

    #[test]
    fn several_range_violations_are_collected() {
        let s = otc("1").replace("\"t_end\": 1, \"n\": 100", "\"t_end\": -1, \"n\": 0, \"replicas\": 0");
        let e = parse(s.as_bytes()).unwrap_err();
        let paths: Vec<&str> = e.violations().iter().map(|v| v.path.as_str()).collect();
        assert_eq!(paths, ["run.t_end", "run.n", "run.replicas"]);
    }
}
