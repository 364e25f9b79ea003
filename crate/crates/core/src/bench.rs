//! Repetition studies.
//!
//! An [`ExperimentSpec`] names a data source, a set of methods and subsample
//! sizes. [`run_experiment`] repeats every `(method, size)` cell `reps` times
//! and aggregates the estimates into an [`ExperimentReport`].
//!
//! Random streams: the dataset is drawn from domain [`DATA_DOMAIN`] (stream
//! 0 in conditional mode, stream `s + 1` for repetition `s` in unconditional
//! mode). Cell `c` of repetition `s` subsamples with domain
//! `CELL_DOMAIN_BASE + c` and stream `s`, so any single repetition can be
//! replayed alone and results do not depend on the number of threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OsmacError, Result};
use crate::glm::{self, SolverConfig};
use crate::io::{self, ColumnRef};
use crate::linalg::SpdFactor;
use crate::metrics;
use crate::osmac::{self, Criterion, MxSource, PilotScheme, TwoStepConfig};
use crate::par;
use crate::sampler::Rng;
use crate::ssp;
use crate::synth::{self, Scenario, ScenarioKind};

pub const DATA_DOMAIN: u64 = 0;
pub const VALIDATION_DOMAIN: u64 = 1;
pub const SPLIT_DOMAIN: u64 = 2;
pub const CELL_DOMAIN_BASE: u64 = 16;

/// Normal quantile for the 95% intervals.
pub const Z_975: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Scenario {
        scenario: ScenarioKind,
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta_true: Option<Vec<f64>>,
    },
    Csv {
        csv: PathBuf,
        #[serde(default = "default_response")]
        response: String,
        #[serde(default)]
        intercept: bool,
        /// Standardize covariates with training-set moments.
        #[serde(default)]
        standardize: bool,
    },
}

fn default_response() -> String {
    "y".into()
}

impl Source {
    fn describe(&self) -> String {
        match self {
            Source::Scenario { scenario, n, .. } => format!("{scenario} (n = {n})"),
            Source::Csv { csv, .. } => csv.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uniform,
    Mmse,
    Mvc,
    Lcc,
    Full,
    BootstrapFull,
}

impl Method {
    fn is_whole_data(self) -> bool {
        matches!(self, Method::Full | Method::BootstrapFull)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    EstMse,
    Coverage,
    Accuracy,
    Auc,
    Timing,
}

/// Where accuracy and AUC are evaluated. Without one, on the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// Hold out this fraction of the rows.
    Split(f64),
    /// A separate CSV with the same columns as the source.
    Csv(PathBuf),
    /// A fresh draw of this many rows from the source scenario.
    Generate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One dataset; errors measured against its full-data MLE.
    #[default]
    Conditional,
    /// A new dataset per repetition; errors measured against `β_true`.
    Unconditional,
}

/// What the coverage interval is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageTarget {
    Truth,
    FullMle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: Source,
    pub methods: Vec<Method>,
    pub r0: usize,
    #[serde(default)]
    pub r_grid: Vec<usize>,
    /// Pilot fractions `r0 / (r0 + r)` at total size `allocation_total`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation_total: Option<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Validation>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub pilot: PilotScheme,
    #[serde(default)]
    pub mx_source: MxSource,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Coefficient whose interval coverage is reported.
    #[serde(default)]
    pub coverage_coef: usize,
    /// Defaults to `truth` for scenarios and `full_mle` for CSV sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_target: Option<CoverageTarget>,
    /// Scale LCC acceptance so its expected size equals `r`.
    #[serde(default = "default_true")]
    pub lcc_match_size: bool,
    /// Keep every successful estimate in the report.
    #[serde(default)]
    pub keep_estimates: bool,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Mse]
}

fn default_threshold() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn spec_err(msg: impl Into<String>) -> OsmacError {
    OsmacError::InvalidSpec(msg.into())
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| spec_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OsmacError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(spec_err("reps must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(spec_err("methods must be nonempty"));
        }
        let subsampled = self.methods.iter().any(|m| !m.is_whole_data());
        if subsampled {
            if self.r0 == 0 {
                return Err(spec_err("r0 must be >= 1"));
            }
            if self.r_grid.is_empty() && self.allocation_grid.is_none() {
                return Err(spec_err("r_grid or allocation_grid is required"));
            }
        }
        if self.r_grid.contains(&0) {
            return Err(spec_err("r_grid entries must be >= 1"));
        }
        if let Some(grid) = &self.allocation_grid {
            if grid.is_empty() {
                return Err(spec_err("allocation_grid must be nonempty"));
            }
            if let Some(f) = grid.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
                return Err(spec_err(format!("allocation fraction {f} outside (0, 1)")));
            }
            match self.allocation_total {
                Some(t) if t >= 2 => {}
                _ => return Err(spec_err("allocation_grid needs allocation_total >= 2")),
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(spec_err("threshold must lie in (0, 1)"));
        }
        if let Some(Validation::Split(f)) = self.validation {
            if !(f > 0.0 && f < 1.0) {
                return Err(spec_err("validation split must lie in (0, 1)"));
            }
        }
        match &self.source {
            Source::Scenario { scenario, n, beta_true } => {
                if *n == 0 {
                    return Err(spec_err("scenario n must be >= 1"));
                }
                if let Some(b) = beta_true {
                    if b.len() != scenario.dim() {
                        return Err(spec_err(format!(
                            "beta_true has {} entries, scenario needs {}",
                            b.len(),
                            scenario.dim()
                        )));
                    }
                }
            }
            Source::Csv { .. } => {
                if self.mode == Mode::Unconditional {
                    return Err(spec_err("unconditional mode needs a scenario source"));
                }
                if matches!(self.validation, Some(Validation::Generate(_))) {
                    return Err(spec_err("generated validation needs a scenario source"));
                }
                if self.coverage_target == Some(CoverageTarget::Truth) {
                    return Err(spec_err("coverage against the truth needs a scenario source"));
                }
            }
        }
        if let Some(eps) = self.floor {
            if !(0.0..=1.0).contains(&eps) {
                return Err(spec_err("floor must lie in [0, 1]"));
            }
        }
        self.solver.validate()
    }

    fn coverage_target(&self) -> CoverageTarget {
        self.coverage_target.unwrap_or(match self.source {
            Source::Scenario { .. } => CoverageTarget::Truth,
            Source::Csv { .. } => CoverageTarget::FullMle,
        })
    }

    fn scenario(&self) -> Option<Scenario> {
        match &self.source {
            Source::Scenario { scenario, n, beta_true } => {
                let mut s = Scenario::new(*scenario, *n);
                if let Some(b) = beta_true {
                    s.beta_true = b.clone();
                }
                Some(s)
            }
            Source::Csv { .. } => None,
        }
    }

    /// The `(method, r0, r, fraction)` cells in report order.
    fn cells(&self, n: usize) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            if method.is_whole_data() {
                cells.push(Cell {
                    method,
                    r0: 0,
                    r: n,
                    fraction: None,
                });
                continue;
            }
            for &r in &self.r_grid {
                cells.push(Cell {
                    method,
                    r0: self.r0,
                    r,
                    fraction: None,
                });
            }
            if let (Some(grid), Some(total)) = (&self.allocation_grid, self.allocation_total) {
                for &f in grid {
                    let r0 = ((f * total as f64).round() as usize).clamp(1, total - 1);
                    cells.push(Cell {
                        method,
                        r0,
                        r: total - r0,
                        fraction: Some(f),
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    method: Method,
    r0: usize,
    r: usize,
    fraction: Option<f64>,
}

/// Train and optional validation data for one repetition.
struct Replicate {
    train: Dataset,
    valid: Option<Dataset>,
    mle: Option<Vec<f64>>,
    truth: Option<Vec<f64>>,
}

fn prepare_csv(spec: &ExperimentSpec) -> Result<(Dataset, Option<Dataset>)> {
    let Source::Csv {
        csv,
        response,
        intercept,
        standardize,
    } = &spec.source
    else {
        unreachable!("csv source expected")
    };
    let col = ColumnRef::from(response.as_str());
    let mut train = io::load_csv(csv, &col, false)?;
    let mut valid = match &spec.validation {
        Some(Validation::Csv(p)) => Some(io::load_csv(p, &col, false)?),
        _ => None,
    };
    if let Some(Validation::Split(f)) = spec.validation {
        let (t, v) = split(&train, f, spec.seed)?;
        train = t;
        valid = Some(v);
    }
    if *standardize {
        let (mean, sd) = train.column_moments();
        train = train.standardized_with(&mean, &sd, &[])?;
        if let Some(v) = valid.as_mut() {
            *v = v.standardized_with(&mean, &sd, &[])?;
        }
    }
    if *intercept {
        train = train.with_intercept();
        valid = valid.map(|v| v.with_intercept());
    }
    Ok((train, valid))
}

fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut Rng::with_domain(seed, SPLIT_DOMAIN, 0));
    let m = ((fraction * data.n() as f64).round() as usize).clamp(1, data.n() - 1);
    let (v, t) = idx.split_at(m);
    let (mut t, mut v) = (t.to_vec(), v.to_vec());
    t.sort_unstable();
    v.sort_unstable();
    Ok((data.select(&t)?, data.select(&v)?))
}

fn replicate(spec: &ExperimentSpec, stream: u64) -> Result<Replicate> {
    match spec.scenario() {
        Some(scn) => {
            let mut train = synth::generate(&scn, &mut Rng::with_domain(spec.seed, DATA_DOMAIN, stream))?;
            let valid = match &spec.validation {
                Some(Validation::Generate(m)) => {
                    let mut vs = scn.clone();
                    vs.n = *m;
                    Some(synth::generate(
                        &vs,
                        &mut Rng::with_domain(spec.seed, VALIDATION_DOMAIN, stream),
                    )?)
                }
                Some(Validation::Split(f)) => {
                    let (t, v) = split(&train, *f, spec.seed ^ stream)?;
                    train = t;
                    Some(v)
                }
                Some(Validation::Csv(p)) => Some(io::load_csv(p, &ColumnRef::from("y"), false)?),
                None => None,
            };
            Ok(Replicate {
                train,
                valid,
                mle: None,
                truth: Some(scn.beta_true),
            })
        }
        None => {
            let (train, valid) = prepare_csv(spec)?;
            Ok(Replicate {
                train,
                valid,
                mle: None,
                truth: None,
            })
        }
    }
}

/// Full-data fit with `(n M_X)^{-1}` as its covariance.
pub fn reference_fit(data: &Dataset, solver: &SolverConfig) -> Result<glm::FitResult> {
    let fit = glm::fit_full(data, solver)?;
    let mx = ssp::compute_mx(data, &fit.beta)?;
    let mut vcov = SpdFactor::new(mx.matrix())
        .ok_or(OsmacError::SingularMx)?
        .inverse();
    vcov /= data.n() as f64;
    Ok(fit.with_vcov(vcov))
}

#[derive(Debug, Clone, Default)]
struct Estimate {
    beta: Vec<f64>,
    trace: Option<f64>,
    se: Option<Vec<f64>>,
    accuracy: Option<f64>,
    auc: Option<f64>,
    time: f64,
    ssp_time: Option<f64>,
    solve_time: Option<f64>,
}

enum Outcome {
    Ok(Estimate, Vec<f64>),
    Failed,
}

fn run_cell(spec: &ExperimentSpec, cell: &Cell, rep: &Replicate, rng: &mut Rng) -> Result<Option<Estimate>> {
    let data = &rep.train;
    let solver = &spec.solver;
    let start = Instant::now();
    let mut est = Estimate::default();
    let result: Result<()> = (|| {
        match cell.method {
            Method::Uniform => {
                let plan = ssp::ssp_uniform(data.n())?;
                let (fit, sub) = osmac::algorithm1_estimate(data, &plan, cell.r0 + cell.r, rng, solver)?;
                let v = osmac::estimate_variance(&sub, data, &fit.beta)?;
                est.trace = Some(v.trace());
                est.se = Some(v.se());
                est.beta = fit.beta;
            }
            Method::Mmse | Method::Mvc => {
                let criterion = if cell.method == Method::Mmse {
                    Criterion::Mmse
                } else {
                    Criterion::Mvc
                };
                let cfg = TwoStepConfig {
                    r0: cell.r0,
                    r: cell.r,
                    pilot_scheme: spec.pilot,
                    criterion,
                    mx_source: spec.mx_source,
                    solver: *solver,
                    floor: spec.floor,
                };
                let out = osmac::two_step_estimate(data, &cfg, rng)?;
                est.trace = Some(out.variance.trace());
                est.se = Some(out.variance.se());
                est.ssp_time = Some(out.timing.ssp.as_secs_f64());
                est.solve_time = Some(out.timing.solve.as_secs_f64());
                est.beta = out.fit.beta;
            }
            Method::Lcc => {
                let target = spec.lcc_match_size.then_some(cell.r);
                est.beta = osmac::lcc_estimate(data, cell.r0, target, rng, solver)?.fit.beta;
            }
            Method::Full => {
                est.beta = match &rep.mle {
                    Some(b) if spec.mode == Mode::Conditional => b.clone(),
                    _ => glm::fit_full(data, solver)?.beta,
                };
            }
            Method::BootstrapFull => {
                let plan = ssp::ssp_uniform(data.n())?;
                est.beta = osmac::algorithm1_estimate(data, &plan, data.n(), rng, solver)?.0.beta;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => {}
        Err(e) if e.is_estimation_failure() => return Ok(None),
        Err(e) => return Err(e),
    }
    est.time = start.elapsed().as_secs_f64();
    let eval = rep.valid.as_ref().unwrap_or(data);
    if spec.wants(Metric::Accuracy) {
        est.accuracy = Some(metrics::classify(&est.beta, eval, spec.threshold)?.accuracy);
    }
    if spec.wants(Metric::Auc) {
        est.auc = Some(metrics::auc(&est.beta, eval)?);
    }
    Ok(Some(est))
}

/// Summary of one `(method, size)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub r0: usize,
    pub r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub reps: usize,
    pub successes: usize,
    /// Repetitions where the MLE was not found.
    pub failure_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    /// Mean of `tr(V̆)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub mean_beta: Vec<f64>,
    /// Standard deviation of the estimates across repetitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical_se: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_estimated_se: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<Vec<f64>>>,
}

/// Wall-clock seconds per repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssp_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub ones_fraction: f64,
    pub reps: usize,
    pub seed: u64,
    pub mode: Mode,
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_true: Option<Vec<f64>>,
    /// Full-data fit of the (conditional) dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceFit>,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    /// Structural checks: requested metrics are present wherever they can
    /// be computed and counts are consistent.
    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            let tag = format!("{:?} r0 = {} r = {}", c.method, c.r0, c.r);
            if c.failure_count > c.reps || c.successes + c.failure_count != c.reps {
                return Err(spec_err(format!("{tag}: inconsistent counts")));
            }
            if c.successes == 0 {
                continue;
            }
            let has_trace = matches!(c.method, Method::Uniform | Method::Mmse | Method::Mvc);
            let checks = [
                (Metric::Mse, c.mse.is_some()),
                (Metric::EstMse, c.est_mse.is_some() || !has_trace),
                (Metric::Coverage, c.coverage.is_some() || !has_trace),
                (Metric::Accuracy, c.accuracy.is_some()),
                (Metric::Auc, c.auc.is_some()),
                (Metric::Timing, c.timing.is_some()),
            ];
            for (m, ok) in checks {
                if self.metrics.contains(&m) && !ok {
                    return Err(spec_err(format!("{tag}: missing {m:?}")));
                }
            }
            if c.mean_beta.len() != self.d {
                return Err(spec_err(format!("{tag}: mean_beta has wrong length")));
            }
        }
        Ok(())
    }

    pub fn cell(&self, method: Method, r: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.r == r && c.fraction.is_none())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,r0,r,fraction,reps,successes,failure_count,mse,est_mse,coverage,accuracy,auc,time_mean,time_sd,ssp_time_mean,solve_time_mean\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for c in &self.cells {
            let t = c.timing.as_ref();
            let method = serde_json::to_value(c.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                method,
                c.r0,
                c.r,
                opt(c.fraction),
                c.reps,
                c.successes,
                c.failure_count,
                opt(c.mse),
                opt(c.est_mse),
                opt(c.coverage),
                opt(c.accuracy),
                opt(c.auc),
                opt(t.map(|t| t.mean)),
                opt(t.and_then(|t| t.sd)),
                opt(t.and_then(|t| t.ssp_mean)),
                opt(t.and_then(|t| t.solve_mean)),
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// From a file extension; anything but `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => report.to_json()? + "\n",
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, text).map_err(|e| OsmacError::io(path, e))
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut k) = (0.0, 0usize);
    for x in v {
        s += x;
        k += 1;
    }
    (k > 0).then(|| s / k as f64)
}

fn sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn aggregate(spec: &ExperimentSpec, cell: &Cell, outcomes: &[&Outcome], d: usize) -> CellReport {
    let ok: Vec<(&Estimate, &Vec<f64>)> = outcomes
        .iter()
        .filter_map(|o| match o {
            Outcome::Ok(e, t) => Some((e, t)),
            Outcome::Failed => None,
        })
        .collect();
    let k = spec.coverage_coef;
    let want = |m| spec.wants(m);
    let sq_err = |e: &Estimate, t: &[f64]| -> f64 {
        e.beta.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let mut mean_beta = vec![0.0; d];
    for (e, _) in &ok {
        for (m, b) in mean_beta.iter_mut().zip(&e.beta) {
            *m += b;
        }
    }
    if !ok.is_empty() {
        mean_beta.iter_mut().for_each(|m| *m /= ok.len() as f64);
    }
    let empirical_se = (ok.len() >= 2).then(|| {
        (0..d)
            .map(|j| sd(&ok.iter().map(|(e, _)| e.beta[j]).collect::<Vec<_>>()).unwrap_or(0.0))
            .collect()
    });
    let with_se: Vec<&Vec<f64>> = ok.iter().filter_map(|(e, _)| e.se.as_ref()).collect();
    let mean_estimated_se = (!with_se.is_empty()).then(|| {
        (0..d)
            .map(|j| with_se.iter().map(|s| s[j]).sum::<f64>() / with_se.len() as f64)
            .collect()
    });
    let coverage_target = spec.coverage_target();
    let timing = want(Metric::Timing)
        .then(|| {
            let times: Vec<f64> = ok.iter().map(|(e, _)| e.time).collect();
            mean(times.iter().copied()).map(|m| TimingStats {
                mean: m,
                sd: sd(&times),
                ssp_mean: mean(ok.iter().filter_map(|(e, _)| e.ssp_time)),
                solve_mean: mean(ok.iter().filter_map(|(e, _)| e.solve_time)),
            })
        })
        .flatten();
    CellReport {
        method: cell.method,
        r0: cell.r0,
        r: cell.r,
        fraction: cell.fraction,
        reps: outcomes.len(),
        successes: ok.len(),
        failure_count: outcomes.len() - ok.len(),
        mse: want(Metric::Mse)
            .then(|| mean(ok.iter().map(|(e, t)| sq_err(e, t))))
            .flatten(),
        est_mse: want(Metric::EstMse)
            .then(|| mean(ok.iter().filter_map(|(e, _)| e.trace)))
            .flatten(),
        coverage: want(Metric::Coverage)
            .then(|| {
                mean(ok.iter().filter_map(|(e, t)| {
                    let se = e.se.as_ref()?;
                    let target = match coverage_target {
                        CoverageTarget::Truth => t.get(d..)?.get(k)?,
                        CoverageTarget::FullMle => t.get(..d)?.get(k)?,
                    };
                    Some(((e.beta[k] - target).abs() <= Z_975 * se[k]) as u8 as f64)
                }))
            })
            .flatten(),
        accuracy: want(Metric::Accuracy)
            .then(|| mean(ok.iter().filter_map(|(e, _)| e.accuracy)))
            .flatten(),
        auc: want(Metric::Auc)
            .then(|| mean(ok.iter().filter_map(|(e, _)| e.auc)))
            .flatten(),
        mean_beta,
        empirical_se,
        mean_estimated_se,
        timing,
        estimates: spec
            .keep_estimates
            .then(|| ok.iter().map(|(e, _)| e.beta.clone()).collect()),
    }
}

/// Runs every cell of `spec` for `spec.reps` repetitions.
///
/// Estimation failures are counted per cell; any other error aborts.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let conditional = spec.mode == Mode::Conditional;
    let k = spec.coverage_coef;

    let base = if conditional {
        let mut rep = replicate(spec, 0)?;
        let t = Instant::now();
        let fit = reference_fit(&rep.train, &spec.solver)?;
        let elapsed = t.elapsed().as_secs_f64();
        rep.mle = Some(fit.beta.clone());
        Some((rep, fit, elapsed))
    } else {
        None
    };
    let shape = match &base {
        Some((rep, ..)) => (rep.train.n(), rep.train.d()),
        None => {
            let s = spec.scenario().expect("validated: unconditional needs a scenario");
            (s.n, s.d())
        }
    };
    let (n, d) = shape;
    if k >= d {
        return Err(spec_err(format!("coverage_coef {k} out of range for d = {d}")));
    }
    let cells = spec.cells(n);

    // targets: the first d entries are the MSE target, the next d the truth
    let run_rep = |s: usize| -> Result<Vec<Outcome>> {
        let own;
        let rep = match &base {
            Some((rep, ..)) => rep,
            None => {
                own = replicate(spec, s as u64 + 1)?;
                &own
            }
        };
        let mut target = match (&rep.mle, &rep.truth) {
            (Some(mle), _) => mle.clone(),
            (None, Some(truth)) => truth.clone(),
            (None, None) => unreachable!("csv sources are conditional"),
        };
        let coverage_ref = match spec.coverage_target() {
            CoverageTarget::Truth => rep.truth.clone().expect("validated"),
            CoverageTarget::FullMle => match &rep.mle {
                Some(m) => m.clone(),
                None if spec.wants(Metric::Coverage) => match glm::fit_full(&rep.train, &spec.solver) {
                    Ok(f) => f.beta,
                    Err(e) if e.is_estimation_failure() => vec![f64::NAN; d],
                    Err(e) => return Err(e),
                },
                None => vec![f64::NAN; d],
            },
        };
        target.extend(coverage_ref);
        cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let mut rng = Rng::with_domain(spec.seed, CELL_DOMAIN_BASE + c as u64, s as u64);
                Ok(match run_cell(spec, cell, rep, &mut rng)? {
                    Some(e) => Outcome::Ok(e, target.clone()),
                    None => Outcome::Failed,
                })
            })
            .collect()
    };
    let per_rep: Vec<Vec<Outcome>> = par::map_indexed(spec.reps, run_rep)
        .into_iter()
        .collect::<Result<_>>()?;

    let cell_reports = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let column: Vec<&Outcome> = per_rep.iter().map(|r| &r[c]).collect();
            aggregate(spec, cell, &column, d)
        })
        .collect();

    let reference = match &base {
        Some((rep, fit, elapsed)) => {
            let eval = rep.valid.as_ref().unwrap_or(&rep.train);
            Some(ReferenceFit {
                beta: fit.beta.clone(),
                se: fit.se.clone().unwrap_or_default(),
                iterations: fit.iterations,
                accuracy: spec
                    .wants(Metric::Accuracy)
                    .then(|| metrics::classify(&fit.beta, eval, spec.threshold).map(|c| c.accuracy))
                    .transpose()?,
                auc: spec
                    .wants(Metric::Auc)
                    .then(|| metrics::auc(&fit.beta, eval))
                    .transpose()?,
                time: spec.wants(Metric::Timing).then_some(*elapsed),
            })
        }
        None => None,
    };
    let ones_fraction = match &base {
        Some((rep, ..)) => rep.train.class_counts().1 as f64 / n as f64,
        None => {
            let rep = replicate(spec, 1)?;
            rep.train.class_counts().1 as f64 / n as f64
        }
    };
    let report = ExperimentReport {
        source: spec.source.describe(),
        n,
        d,
        ones_fraction,
        reps: spec.reps,
        seed: spec.seed,
        mode: spec.mode,
        metrics: spec.metrics.clone(),
        beta_true: spec.scenario().map(|s| s.beta_true),
        reference,
        cells: cell_reports,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub reps: usize,
    pub failure_count: usize,
    /// Mean `‖β* - target‖²` over successful resamples.
    pub mse: Option<f64>,
}

/// Nonparametric bootstrap of the full-data MLE: uniform subsampling with
/// `r = n`, repetition `s` on stream `s`.
pub fn run_bootstrap_full(
    data: &Dataset,
    reps: usize,
    target: &[f64],
    seed: u64,
    solver: &SolverConfig,
) -> Result<BootstrapSummary> {
    if reps == 0 {
        return Err(spec_err("reps must be >= 1"));
    }
    if target.len() != data.d() {
        return Err(OsmacError::DimensionMismatch {
            expected: data.d(),
            got: target.len(),
        });
    }
    let plan = ssp::ssp_uniform(data.n())?;
    let results: Vec<Result<Option<f64>>> = par::map_indexed(reps, |s| {
        let mut rng = Rng::with_domain(seed, CELL_DOMAIN_BASE, s as u64);
        match osmac::algorithm1_estimate(data, &plan, data.n(), &mut rng, solver) {
            Ok((fit, _)) => Ok(Some(
                fit.beta.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum(),
            )),
            Err(e) if e.is_estimation_failure() => Ok(None),
            Err(e) => Err(e),
        }
    });
    let errs: Vec<Option<f64>> = results.into_iter().collect::<Result<_>>()?;
    Ok(BootstrapSummary {
        reps,
        failure_count: errs.iter().filter(|e| e.is_none()).count(),
        mse: mean(errs.iter().flatten().copied()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec::from_json(
            r#"{
                "source": {"scenario": "mzNormal", "n": 2000},
                "methods": ["uniform", "mmse", "mvc", "lcc", "full"],
                "r0": 100,
                "r_grid": [200, 400],
                "reps": 4,
                "seed": 3,
                "metrics": ["mse", "est_mse", "coverage", "accuracy", "auc"]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let bad = [
            r#"{"source": {"scenario": "mzNormal", "n": 10}, "methods": ["mvc"], "r0": 10, "r_grid": [5], "reps": 0}"#,
            r#"{"source": {"scenario": "mzNormal", "n": 10}, "methods": [], "r0": 10, "r_grid": [5], "reps": 1}"#,
            r#"{"source": {"scenario": "mzNormal", "n": 10}, "methods": ["mvc"], "r0": 10, "reps": 1}"#,
            r#"{"source": {"scenario": "mzNormal", "n": 10}, "methods": ["mvc"], "r0": 10, "r_grid": [5], "allocation_grid": [0.0], "allocation_total": 10, "reps": 1}"#,
            r#"{"source": {"scenario": "mzNormal", "n": 10}, "methods": ["mvc"], "r0": 10, "allocation_grid": [0.5], "reps": 1}"#,
            r#"{"source": {"scenario": "wat", "n": 10}, "methods": ["mvc"], "r0": 10, "r_grid": [5], "reps": 1}"#,
            r#"{"source": {"csv": "x.csv"}, "methods": ["mvc"], "r0": 10, "r_grid": [5], "reps": 1, "mode": "unconditional"}"#,
            r#"{"source": {"scenario": "mzNormal", "n": 10, "beta_true": [1]}, "methods": ["mvc"], "r0": 10, "r_grid": [5], "reps": 1}"#,
        ];
        for b in bad {
            assert!(matches!(ExperimentSpec::from_json(b), Err(OsmacError::InvalidSpec(_))), "{b}");
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let spec = small_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        // 4 subsampling methods x 2 sizes + full
        assert_eq!(a.cells.len(), 9);
        let back = ExperimentReport::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.to_csv().lines().count(), 1 + a.cells.len());
        let full = a.cells.iter().find(|c| c.method == Method::Full).unwrap();
        assert_eq!(full.mse, Some(0.0));
        let mmse = a.cell(Method::Mmse, 400).unwrap();
        assert!(mmse.est_mse.is_some() && mmse.coverage.is_some());
        assert!(a.cell(Method::Lcc, 400).unwrap().est_mse.is_none());
        assert!(a.cells.iter().all(|c| c.timing.is_none()));
    }

    #[test]
    fn single_rep_has_no_spread() {
        let mut spec = small_spec();
        spec.reps = 1;
        spec.keep_estimates = true;
        let rep = run_experiment(&spec).unwrap();
        for c in &rep.cells {
            assert_eq!(c.estimates.as_ref().unwrap().len(), c.successes);
            assert!(c.empirical_se.is_none());
        }
    }

    #[test]
    fn allocation_cells() {
        let mut spec = small_spec();
        spec.methods = vec![Method::Mvc];
        spec.r_grid.clear();
        spec.allocation_grid = Some(vec![0.1, 0.5]);
        spec.allocation_total = Some(600);
        spec.validate().unwrap();
        let rep = run_experiment(&spec).unwrap();
        let sizes: Vec<(usize, usize)> = rep.cells.iter().map(|c| (c.r0, c.r)).collect();
        assert_eq!(sizes, vec![(60, 540), (300, 300)]);
    }

    #[test]
    fn unconditional_mode_runs() {
        let mut spec = small_spec();
        spec.mode = Mode::Unconditional;
        spec.methods = vec![Method::Uniform, Method::Mvc];
        let rep = run_experiment(&spec).unwrap();
        assert!(rep.reference.is_none());
        assert!(rep.cells.iter().all(|c| c.mse.is_some()));
    }

    #[test]
    fn bootstrap_counts() {
        let data = synth::generate(
            &Scenario::new(ScenarioKind::MzNormal, 500),
            &mut Rng::new(1, 0),
        )
        .unwrap();
        let full = glm::fit_full(&data, &SolverConfig::default()).unwrap();
        let a = run_bootstrap_full(&data, 10, &full.beta, 5, &SolverConfig::default()).unwrap();
        let b = run_bootstrap_full(&data, 10, &full.beta, 5, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.failure_count, 0);
        assert!(a.mse.unwrap() > 0.0);
    }
}
