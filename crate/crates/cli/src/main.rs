//! `osmac`: optimal subsampling for logistic regression from the command line.
//!
//! Exit codes: 0 on success, 2 for invalid input (arguments, specs, data
//! files), 3 when a single fit fails to find the MLE.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use osmac::bench::{self, ExperimentSpec, ReportFormat};
use osmac::glm::{self, SolverConfig};
use osmac::io::{self, ColumnRef};
use osmac::osmac::{Criterion, MxSource, PilotScheme, TwoStepConfig};
use osmac::synth::{self, Scenario, ScenarioKind};
use osmac::{ssp, Dataset, OsmacError, Rng, SamplingPlan};

#[derive(Parser)]
#[command(name = "osmac", version, about = "Optimal subsampling for large-sample logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a repetition study described by a JSON spec.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Report path; `.csv` writes one row per cell, anything else JSON.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit one subsample estimator to a CSV file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: FitMethod,
        #[arg(long, default_value_t = 200)]
        r0: usize,
        #[arg(long, default_value_t = 1000)]
        r: usize,
        /// Response column, by name or 0-based position.
        #[arg(long, default_value = "y")]
        response: String,
        /// Prepend an intercept column.
        #[arg(long)]
        intercept: bool,
        #[arg(long, value_enum, default_value_t = Pilot::Uniform)]
        pilot: Pilot,
        /// Estimate M_X from the pilot subsample instead of the full data.
        #[arg(long)]
        mx_from_pilot: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the subsampling probabilities as `index,pi` CSV.
        #[arg(long)]
        dump_ssp: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a simulated dataset.
    Gen {
        /// mzNormal, nzNormal, ueNormal, mixNormal, T3, EXP,
        /// rareNormalMean(MU) or rareUnivariate(BETA0).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        /// `.bin` writes the binary format, anything else CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Uniform,
    Mmse,
    Mvc,
    Lcc,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pilot {
    Uniform,
    CaseControl,
}

enum Failure {
    Input(String),
    Estimation(String),
}

impl From<OsmacError> for Failure {
    fn from(e: OsmacError) -> Self {
        if e.is_estimation_failure() {
            Failure::Estimation(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench {
            spec,
            out,
            seed,
            threads,
        } => run_bench(&spec, &out, seed, threads),
        Command::Fit {
            data,
            method,
            r0,
            r,
            response,
            intercept,
            pilot,
            mx_from_pilot,
            seed,
            dump_ssp,
            json,
            threads,
        } => set_threads(threads).and_then(|_| {
            let opts = FitOptions {
                method,
                r0,
                r,
                pilot,
                mx_from_pilot,
                seed,
                dump_ssp,
                json,
            };
            let data = io::load_csv(&data, &ColumnRef::from(response.as_str()), intercept)?;
            run_fit(&data, &opts)
        }),
        Command::Gen {
            scenario,
            n,
            out,
            seed,
            stream,
        } => run_gen(&scenario, n, &out, seed, stream),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(msg)) => {
            eprintln!("estimation failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    match threads {
        Some(0) => Err(Failure::Input("--threads must be >= 1".into())),
        Some(t) => osmac::par::init_threads(t).map_err(Failure::Input),
        None => Ok(()),
    }
}

fn run_bench(spec: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<(), Failure> {
    set_threads(threads)?;
    let mut spec = ExperimentSpec::load(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let report = bench::run_experiment(&spec)?;
    bench::emit_report(&report, ReportFormat::from_path(out), out)?;
    Ok(())
}

struct FitOptions {
    method: FitMethod,
    r0: usize,
    r: usize,
    pilot: Pilot,
    mx_from_pilot: bool,
    seed: u64,
    dump_ssp: Option<PathBuf>,
    json: bool,
}

fn run_fit(data: &Dataset, opts: &FitOptions) -> Result<(), Failure> {
    let solver = SolverConfig::default();
    let mut rng = Rng::with_domain(opts.seed, bench::CELL_DOMAIN_BASE, 0);
    let mut plan: Option<SamplingPlan> = None;
    let (beta, se, size) = match opts.method {
        FitMethod::Full => {
            if opts.dump_ssp.is_some() {
                return Err(Failure::Input("--dump-ssp needs a subsampling method".into()));
            }
            let fit = bench::reference_fit(data, &solver)?;
            (fit.beta, fit.se, data.n())
        }
        FitMethod::Uniform => {
            let p = ssp::ssp_uniform(data.n())?;
            let total = opts.r0 + opts.r;
            let (fit, sub) = osmac::osmac::algorithm1_estimate(data, &p, total, &mut rng, &solver)?;
            let v = osmac::osmac::estimate_variance(&sub, data, &fit.beta)?;
            plan = Some(p);
            (fit.beta, Some(v.se()), total)
        }
        FitMethod::Mmse | FitMethod::Mvc => {
            let criterion = match opts.method {
                FitMethod::Mmse => Criterion::Mmse,
                _ => Criterion::Mvc,
            };
            let mut cfg = TwoStepConfig::new(opts.r0, opts.r, criterion);
            cfg.pilot_scheme = match opts.pilot {
                Pilot::Uniform => PilotScheme::Uniform,
                Pilot::CaseControl => PilotScheme::CaseControl,
            };
            if opts.mx_from_pilot {
                cfg.mx_source = MxSource::PilotSubsample;
            }
            let out = osmac::osmac::two_step_estimate(data, &cfg, &mut rng)?;
            plan = Some(out.plan);
            (out.fit.beta, out.fit.se, opts.r0 + opts.r)
        }
        FitMethod::Lcc => {
            let out = osmac::osmac::lcc_estimate(data, opts.r0, Some(opts.r), &mut rng, &solver)?;
            let size = out.accepted.len();
            let acc = ssp::ssp_lcc_acceptance(data, &out.pilot)?;
            let scaled = acc.probs().iter().map(|a| a * out.scale).collect();
            plan = Some(SamplingPlan::new(scaled, acc.scheme(), Some(out.pilot))?);
            (out.fit.beta, None, size)
        }
    };
    if let (Some(path), Some(plan)) = (&opts.dump_ssp, &plan) {
        std::fs::write(path, plan.to_csv_string())
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    let loglik = glm::loglik(&glm::WeightedSample::full(data), &beta)?;
    if opts.json {
        let v = json!({
            "n": data.n(),
            "d": data.d(),
            "subsample_size": size,
            "beta": beta,
            "se": se,
            "full_data_loglik": loglik,
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
    } else {
        println!("n = {}, d = {}, subsample size = {size}", data.n(), data.d());
        println!("{:>6} {:>14} {:>14}", "coef", "estimate", "std.err");
        for (j, b) in beta.iter().enumerate() {
            let s = se.as_ref().map_or("-".to_string(), |s| format!("{:.6}", s[j]));
            println!("{:>6} {:>14.6} {:>14}", j, b, s);
        }
        println!("full-data log-likelihood at estimate: {loglik:.4}");
    }
    Ok(())
}

fn run_gen(scenario: &str, n: usize, out: &Path, seed: u64, stream: u64) -> Result<(), Failure> {
    let kind: ScenarioKind = scenario.parse()?;
    let scn = Scenario::new(kind, n);
    let data = synth::generate(&scn, &mut Rng::with_domain(seed, bench::DATA_DOMAIN, stream))?;
    match out.extension().and_then(|e| e.to_str()) {
        Some("bin") => io::save_binary(&data, out)?,
        _ => io::save_csv(&data, out)?,
    }
    Ok(())
}
