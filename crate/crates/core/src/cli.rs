//! Command-line pipeline: ingest vectors, solve the relaxation, build the
//! measure, run the selected rounding methods and write a JSON report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::oracle::{brute_force_opt_with_budget, enumerate_mu_prime_with_budget, expected_objective, ENUM_BUDGET};
use crate::relaxation::{solve_relaxation, DesignInstance};
use crate::ridge::effective_dimension;
use crate::sampler::{baseline_reg_volume_sample, measure_from_fractional, Mode, SubsetSelection, VolumeSampler};
use crate::symfun::{aopt_objective, GenRatioParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Parses one vector per line, entries separated by commas and/or whitespace.
/// Blank lines and lines starting with `#` are skipped. Returns `V` as `d x n`.
pub fn parse_vectors(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = lineno + 1;
        let mut vals = Vec::new();
        for (c, tok) in line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|t| !t.is_empty()).enumerate() {
            let col = c + 1;
            let x: f64 = tok
                .parse()
                .map_err(|_| DesignError::Parse { row, col, msg: format!("cannot parse {tok:?} as a number") })?;
            if !x.is_finite() {
                return Err(DesignError::Parse { row, col, msg: format!("non-finite value {tok:?}") });
            }
            vals.push(x);
        }
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(DesignError::DimensionMismatch(format!(
                    "row {row} has {} entries, expected {}",
                    vals.len(),
                    first.len()
                )));
            }
        }
        rows.push(vals);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(DesignError::DimensionMismatch("input contains no vectors".into()));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(d, n, |r, c| rows[c][r]))
}

pub fn ingest(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| DesignError::Io(format!("{}: {e}", path.display())))?;
    parse_vectors(&text)
}

/// Writes `V` (`d x n`) one vector per line with 17 significant digits, which
/// reads back to the same bits.
pub fn emit_vectors(v: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for c in 0..v.ncols() {
        let row: Vec<String> = (0..v.nrows()).map(|r| format!("{:.16e}", v[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sample,
    Derandomize,
    Baseline,
    All,
}

/// Values from an optional TOML config file; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub mode: Option<String>,
    pub method: Option<Method>,
    pub l: Option<usize>,
    pub lprime: Option<usize>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub report: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub oracle_budget: Option<u128>,
    pub require_oracle: Option<bool>,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "regdesign", version, about = "Regularized A-optimal subset selection by relaxation and volume sampling")]
pub struct Args {
    /// Vector file: one vector per row, comma or whitespace separated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of vectors to select.
    #[arg(long)]
    pub k: Option<usize>,
    /// Ridge regularizer, >= 0.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Accuracy parameter in (0, 1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// exact (|S| = k) or at-most (|S| <= k, then padded).
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Upper index of the spectral ratio (default d).
    #[arg(long)]
    pub l: Option<usize>,
    /// Lower index of the spectral ratio (default l - 1).
    #[arg(long)]
    pub lprime: Option<usize>,
    /// Base seed; repetition r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repetitions for the randomized methods.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-repetition CSV table path.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Stationarity tolerance of the relaxation solver.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap of the relaxation solver.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Largest number of subsets the oracle may enumerate.
    #[arg(long)]
    pub oracle_budget: Option<u128>,
    /// Fail with exit code 4 instead of skipping the oracle when over budget.
    #[arg(long)]
    pub require_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub k: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub mode: Mode,
    pub method: Method,
    pub l: Option<usize>,
    pub lprime: Option<usize>,
    pub seed: u64,
    pub reps: usize,
    #[serde(skip)]
    pub report: Option<PathBuf>,
    #[serde(skip)]
    pub table: Option<PathBuf>,
    pub tol: f64,
    pub max_iters: usize,
    pub oracle_budget: u128,
    pub require_oracle: bool,
}

impl RunConfig {
    pub fn new(input: PathBuf, k: usize, lambda: f64) -> Self {
        Self {
            input,
            k,
            lambda,
            epsilon: 1.0,
            mode: Mode::AtMost,
            method: Method::All,
            l: None,
            lprime: None,
            seed: 0,
            reps: 100,
            report: None,
            table: None,
            tol: 1e-8,
            max_iters: 10_000,
            oracle_budget: ENUM_BUDGET,
            require_oracle: false,
        }
    }

    /// Merges flags over the config file over defaults.
    pub fn resolve(args: &Args) -> Result<Self> {
        let file = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| DesignError::Io(format!("{}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| DesignError::InvalidParams(format!("config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let input = args
            .input
            .clone()
            .or(file.input)
            .ok_or_else(|| DesignError::InvalidParams("--input is required".into()))?;
        let k = args.k.or(file.k).ok_or_else(|| DesignError::InvalidParams("--k is required".into()))?;
        let lambda = args.lambda.or(file.lambda).unwrap_or(0.0);
        let mut cfg = Self::new(input, k, lambda);
        if let Some(e) = args.epsilon.or(file.epsilon) {
            cfg.epsilon = e;
        }
        if let Some(m) = args.mode.clone().or(file.mode) {
            cfg.mode = m.parse()?;
        }
        cfg.method = args.method.or(file.method).unwrap_or(cfg.method);
        cfg.l = args.l.or(file.l);
        cfg.lprime = args.lprime.or(file.lprime);
        cfg.seed = args.seed.or(file.seed).unwrap_or(cfg.seed);
        cfg.reps = args.reps.or(file.reps).unwrap_or(cfg.reps);
        cfg.report = args.report.clone().or(file.report);
        cfg.table = args.table.clone().or(file.table);
        cfg.tol = args.tol.or(file.tol).unwrap_or(cfg.tol);
        cfg.max_iters = args.max_iters.or(file.max_iters).unwrap_or(cfg.max_iters);
        cfg.oracle_budget = args.oracle_budget.or(file.oracle_budget).unwrap_or(cfg.oracle_budget);
        cfg.require_oracle = args.require_oracle || file.require_oracle.unwrap_or(false);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(DesignError::InvalidParams(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if self.reps == 0 {
            return Err(DesignError::InvalidParams("--reps must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(DesignError::InvalidParams("--tol must be positive".into()));
        }
        Ok(())
    }

    fn params(&self, d: usize) -> Result<GenRatioParams> {
        let l = self.l.unwrap_or(d);
        let lprime = match self.lprime {
            Some(lp) => lp,
            None => l.checked_sub(1).ok_or_else(|| DesignError::InvalidParams("l must be at least 1".into()))?,
        };
        GenRatioParams::new(lprime, l, d)
    }
}

/// A module error tagged with the pipeline stage that raised it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: &'static str,
    pub error: DesignError,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// 2 for input and configuration errors, 3 for numerical failures,
    /// 4 when the oracle budget is exceeded.
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

pub fn exit_code(e: &DesignError) -> i32 {
    use DesignError::*;
    match e {
        Parse { .. } | DimensionMismatch(_) | Io(_) | InvalidParams(_) | InvalidInstance(_) | Infeasible(_)
        | InvalidAnchors(_) => 2,
        TooLarge { .. } => 4,
        NotSymmetric { .. }
        | NotPsd { .. }
        | SingularMatrix
        | DegenerateSpectrum { .. }
        | DegenerateFractional
        | ZeroProbabilityCondition
        | DegenerateMeasure
        | NumericalInstability(_)
        | ZeroSupport(_) => 3,
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputSummary {
    pub path: String,
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxationSummary {
    pub value: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureSummary {
    pub lambda_prime: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheorySummary {
    /// `1 + eps / sqrt(1 + lambda')`.
    pub ratio: f64,
    /// `10 d / eps + (60 / eps^2) log(4 / eps)`.
    pub k_threshold: f64,
    pub k_condition_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatedSummary {
    pub reps: usize,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub objective_stderr: f64,
    pub objective_min: f64,
    pub objective_max: f64,
    /// `objective_mean / relaxation value`.
    pub ratio: f64,
    /// Fraction of repetitions that needed padding.
    pub padded_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleSummary {
    pub indices: Vec<usize>,
    pub objective: f64,
    pub ratio: f64,
    pub padded: bool,
    pub unpadded_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MethodResults {
    pub sample: Option<RepeatedSummary>,
    pub derandomize: Option<SingleSummary>,
    pub baseline: Option<RepeatedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub status: String,
    pub opt_indices: Option<Vec<usize>>,
    pub opt_objective: Option<f64>,
    /// Exact `E[objective]` over the sampling distribution, before padding.
    pub expected_objective_unpadded: Option<f64>,
    /// Same, after each set is padded to size `k`.
    pub expected_objective_padded: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineComparison {
    pub d_lambda: f64,
    /// `sigma^2 n tr((V V^T + lambda I)^{-1}) / (k - d_lambda + 1)` at `sigma^2 = 1`.
    pub reference_per_unit_sigma2: f64,
    /// `1 + c (d - 1) / ((k - d + 1) sqrt(1 + lambda'))`.
    pub ratio_bound: f64,
    pub ratio_bound_constant: f64,
    pub ours_mean: Option<f64>,
    pub baseline_mean: Option<f64>,
    pub opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub input: InputSummary,
    pub config: RunConfig,
    pub objective: GenRatioParams,
    pub warnings: Vec<String>,
    pub relaxation: RelaxationSummary,
    pub measure: MeasureSummary,
    pub theory: TheorySummary,
    pub methods: MethodResults,
    pub oracle: Option<OracleSummary>,
    pub comparison: Option<BaselineComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub relaxation_ms: f64,
    pub methods_ms: f64,
    pub oracle_ms: f64,
    pub total_ms: f64,
}

/// One row of the per-repetition table.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRow {
    pub method: &'static str,
    pub rep: usize,
    pub seed: u64,
    pub selection: SubsetSelection,
}

pub struct RunOutput {
    pub report: RunReport,
    pub timings: Timings,
    pub rows: Vec<RepRow>,
}

fn summarize(objectives: &[f64], padded: usize, relax: f64) -> RepeatedSummary {
    let n = objectives.len() as f64;
    let mean = objectives.iter().sum::<f64>() / n;
    let std = if objectives.len() > 1 {
        (objectives.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    RepeatedSummary {
        reps: objectives.len(),
        objective_mean: mean,
        objective_std: std,
        objective_stderr: std / n.sqrt(),
        objective_min: objectives.iter().copied().fold(f64::INFINITY, f64::min),
        objective_max: objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ratio: mean / relax,
        padded_fraction: padded as f64 / n,
    }
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs relaxation, measure construction, the configured methods, the oracle
/// when enumerable, and the baseline comparison.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<RunOutput, StageError> {
    let start = Instant::now();
    cfg.validate().stage("config")?;
    let v = ingest(&cfg.input).stage("ingest")?;
    let (d, n) = v.shape();
    let inst = DesignInstance::new(v, cfg.k, cfg.lambda).stage("instance")?;
    let params = cfg.params(d).stage("config")?;
    let mut warnings = Vec::new();
    if cfg.epsilon == 1.0 {
        warnings.push("epsilon = 1 is the boundary of the guarantee's range (0, 1)".to_string());
    }

    let t = Instant::now();
    let sol = solve_relaxation(&inst, cfg.tol, cfg.max_iters).stage("relaxation")?;
    let relaxation_ms = ms(t);
    if !sol.converged {
        warnings.push(format!("relaxation stopped at stationarity {:e} above tolerance", sol.stationarity));
    }
    let relax = sol.objective;
    let measure = measure_from_fractional(&sol.x, cfg.epsilon, &inst, cfg.mode).stage("sampler")?;

    let eps = cfg.epsilon;
    let k_threshold = 10.0 * d as f64 / eps + 60.0 / (eps * eps) * (4.0 / eps).ln();
    let theory = TheorySummary {
        ratio: 1.0 + eps / (1.0 + measure.lambda_prime).sqrt(),
        k_threshold,
        k_condition_holds: cfg.k as f64 >= k_threshold,
    };
    if !theory.k_condition_holds {
        warnings.push(format!("k = {} is below the guarantee's threshold {k_threshold:.2}", cfg.k));
    }

    let t = Instant::now();
    let mut methods = MethodResults::default();
    let mut rows = Vec::new();
    let run_sample = matches!(cfg.method, Method::Sample | Method::All);
    let run_derand = matches!(cfg.method, Method::Derandomize | Method::All);
    let run_baseline = matches!(cfg.method, Method::Baseline | Method::All);
    if run_sample {
        let sampler = VolumeSampler::new(&inst, &measure, params).stage("sampler")?;
        let mut objs = Vec::with_capacity(cfg.reps);
        let mut padded = 0;
        for rep in 0..cfg.reps {
            let seed = rep_seed(cfg.seed, rep);
            let s = sampler.sample_seeded(seed).stage("sampler")?;
            objs.push(s.objective);
            padded += s.padded as usize;
            rows.push(RepRow { method: "sample", rep, seed, selection: s });
        }
        methods.sample = Some(summarize(&objs, padded, relax));
    }
    if run_derand {
        let s = VolumeSampler::new(&inst, &measure, params).and_then(|v| v.derandomize()).stage("derandomize")?;
        methods.derandomize = Some(SingleSummary {
            ratio: s.objective / relax,
            objective: s.objective,
            padded: s.padded,
            unpadded_objective: s.sampled_objective,
            indices: s.indices.clone(),
        });
        rows.push(RepRow { method: "derandomize", rep: 0, seed: 0, selection: s });
    }
    if run_baseline {
        let baseline_params = GenRatioParams::a_optimal(d);
        let mut objs = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            let seed = rep_seed(cfg.seed, rep);
            let mut s = baseline_reg_volume_sample(&inst, seed).stage("baseline")?;
            if params != baseline_params {
                s.objective = crate::symfun::gen_ratio_objective(&inst.subset_gram(&s.indices), inst.lambda, params)
                    .stage("baseline")?;
            }
            objs.push(s.objective);
            rows.push(RepRow { method: "baseline", rep, seed, selection: s });
        }
        methods.baseline = Some(summarize(&objs, 0, relax));
    }
    let methods_ms = ms(t);

    let t = Instant::now();
    let oracle = Some(run_oracle(cfg, &inst, &measure, params)?);
    let mut comparison = None;
    if cfg.method == Method::All {
        let full = inst.v.clone() * inst.v.transpose();
        let d_lambda = effective_dimension(&inst.v, cfg.lambda);
        let trace = aopt_objective(&full, cfg.lambda).stage("comparison")?;
        let c = 1.0;
        comparison = Some(BaselineComparison {
            d_lambda,
            reference_per_unit_sigma2: n as f64 * trace / (cfg.k as f64 - d_lambda + 1.0),
            ratio_bound: 1.0 + c * (d as f64 - 1.0) / ((cfg.k + 1 - d) as f64 * (1.0 + measure.lambda_prime).sqrt()),
            ratio_bound_constant: c,
            ours_mean: methods.sample.as_ref().map(|s| s.objective_mean),
            baseline_mean: methods.baseline.as_ref().map(|s| s.objective_mean),
            opt: oracle.as_ref().and_then(|o| o.opt_objective),
        });
    }
    let oracle_ms = ms(t);

    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        input: InputSummary { path: cfg.input.display().to_string(), n, d },
        config: cfg.clone(),
        objective: params,
        warnings,
        relaxation: RelaxationSummary {
            value: relax,
            stationarity: sol.stationarity,
            iterations: sol.iterations,
            converged: sol.converged,
        },
        measure: MeasureSummary {
            lambda_prime: measure.lambda_prime,
            beta: measure.beta,
            epsilon: measure.epsilon,
            mode: measure.mode,
        },
        theory,
        methods,
        oracle,
        comparison,
    };
    Ok(RunOutput { report, timings: Timings { relaxation_ms, methods_ms, oracle_ms, total_ms: ms(start) }, rows })
}

fn run_oracle(
    cfg: &RunConfig,
    inst: &DesignInstance,
    measure: &crate::sampler::HardCoreMeasure,
    params: GenRatioParams,
) -> std::result::Result<OracleSummary, StageError> {
    let opt = brute_force_opt_with_budget(inst, params, cfg.oracle_budget);
    let dist = enumerate_mu_prime_with_budget(measure, inst, params, cfg.oracle_budget);
    let too_large = |e: Option<&DesignError>| matches!(e, Some(DesignError::TooLarge { .. }));
    if too_large(opt.as_ref().err()) || too_large(dist.as_ref().err()) {
        if cfg.require_oracle {
            let err = opt.err().or(dist.err()).expect("one enumeration failed");
            return Err(StageError { stage: "oracle", error: err });
        }
        return Ok(OracleSummary {
            status: "skipped: enumeration exceeds the oracle budget".into(),
            opt_indices: None,
            opt_objective: None,
            expected_objective_unpadded: None,
            expected_objective_padded: None,
        });
    }
    let opt = opt.stage("oracle")?;
    let dist = dist.stage("oracle")?;
    Ok(OracleSummary {
        status: "computed".into(),
        opt_indices: Some(opt.indices),
        opt_objective: Some(opt.objective),
        expected_objective_unpadded: Some(expected_objective(&dist, inst, params, false).stage("oracle")?),
        expected_objective_padded: Some(expected_objective(&dist, inst, params, true).stage("oracle")?),
    })
}

/// The report without timings, as pretty-printed JSON.
pub fn report_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// The report with a top-level `timings` object appended.
pub fn report_json_with_timings(report: &RunReport, timings: &Timings) -> String {
    let mut value = serde_json::to_value(report).expect("report serializes");
    value["timings"] = serde_json::to_value(timings).expect("timings serialize");
    serde_json::to_string_pretty(&value).expect("report serializes")
}

pub fn rows_csv(rows: &[RepRow]) -> String {
    let mut out = String::from("method,rep,seed,objective,padded,sampled_size,indices\n");
    for r in rows {
        let idx: Vec<String> = r.selection.indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{},{},{}",
            r.method,
            r.rep,
            r.seed,
            r.selection.objective,
            r.selection.padded,
            r.selection.sampled.len(),
            idx.join(" ")
        );
    }
    out
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args(args: Args) -> i32 {
    let cfg = match RunConfig::resolve(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config: {e}");
            return exit_code(&e);
        }
    };
    let out = match run_pipeline(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    let text = report_json_with_timings(&out.report, &out.timings);
    let written = match &cfg.report {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| DesignError::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    };
    let written = written.and_then(|_| match &cfg.table {
        Some(p) => std::fs::write(p, rows_csv(&out.rows)).map_err(|e| DesignError::Io(format!("{}: {e}", p.display()))),
        None => Ok(()),
    });
    if let Err(e) = written {
        eprintln!("error: report: {e}");
        return exit_code(&e);
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_shapes_and_errors() {
        let v = parse_vectors("1, 2\n3 4\n\n# note\n5,\t6\n").unwrap();
        assert_eq!(v.shape(), (2, 3));
        assert_eq!(v[(1, 2)], 6.0);
        let err = parse_vectors("1,2\n3,NaN\n").unwrap_err();
        assert_eq!(err, DesignError::Parse { row: 2, col: 2, msg: "non-finite value \"NaN\"".into() });
        assert!(matches!(parse_vectors("1,2\n3\n"), Err(DesignError::DimensionMismatch(_))));
        assert!(matches!(parse_vectors("1,x\n"), Err(DesignError::Parse { row: 1, col: 2, .. })));
        assert!(matches!(parse_vectors(""), Err(DesignError::DimensionMismatch(_))));
    }

    #[test]
    fn emit_round_trips_bits() {
        let v = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 123456.789, f64::MIN_POSITIVE, -0.0]);
        let back = parse_vectors(&emit_vectors(&v)).unwrap();
        for (a, b) in v.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&DesignError::Parse { row: 1, col: 1, msg: String::new() }), 2);
        assert_eq!(exit_code(&DesignError::SingularMatrix), 3);
        assert_eq!(exit_code(&DesignError::TooLarge { count: 10, budget: 1 }), 4);
    }

    #[test]
    fn default_ratio_pair() {
        let cfg = RunConfig::new(PathBuf::from("x"), 3, 1.0);
        assert_eq!(cfg.params(4).unwrap(), GenRatioParams { l_lo: 3, l_hi: 4 });
        let cfg = RunConfig { l: Some(2), lprime: Some(0), ..cfg };
        assert_eq!(cfg.params(4).unwrap(), GenRatioParams { l_lo: 0, l_hi: 2 });
    }
}
