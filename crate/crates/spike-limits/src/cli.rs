//! The `spike-limits` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use spiked_core::limits::{
    eigenvalue_clt_block, eigvec_limit, eigvec_variance, normalization_effect, plugin_point,
};
use spiked_core::{Error as CoreError, MatrixKind, PopulationModel, SourceDistribution};

use crate::config::{hash_json, read_json, DistDoc, ExperimentConfig, ModelDoc, ProjectionDoc};
use crate::error::{HarnessError, Result};
use crate::harness::{compare_normalization, run, summarize, VERSION};
use crate::output::{
    plot_csv, records_csv, to_json_bytes, write_atomic, PLOT_FILE, RECORDS_FILE, REPORT_FILE,
};

/// Exit code when a verification run completes but some checks fail.
pub const EXIT_CHECKS_FAILED: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "spike-limits",
    version,
    about = "Spiked-model PCA limits and their Monte Carlo verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Covariance,
    Correlation,
}

impl From<KindArg> for MatrixKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Covariance => MatrixKind::Covariance,
            KindArg::Correlation => MatrixKind::Correlation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Gaussian,
    Rademacher,
    Uniform,
    Laplace,
}

impl From<DistArg> for DistDoc {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gaussian => DistDoc::Gaussian,
            DistArg::Rademacher => DistDoc::Rademacher,
            DistArg::Uniform => DistDoc::Uniform,
            DistArg::Laplace => DistDoc::Laplace,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// First-order limits and RMT quantities for every spike.
    Limits {
        /// Model document (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        /// 1-based spike index; all spikes when omitted.
        #[arg(long)]
        spike: Option<usize>,
        #[arg(long, value_enum, default_value = "covariance")]
        kind: KindArg,
    },
    /// Limiting variances with the labeled eigenvector breakdown.
    Variance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "covariance")]
        kind: KindArg,
        /// `Vk`, `ek` or `orthogonal`.
        #[arg(long, default_value = "V1")]
        projection: String,
        #[arg(long, default_value_t = 1)]
        spike: usize,
        #[arg(long, value_enum, default_value = "gaussian")]
        dist: DistArg,
    },
    /// Run the Monte Carlo replications and write the records CSV.
    Simulate(RunArgs),
    /// Simulate, compare with theory and write records, report and plot data.
    Verify(RunArgs),
    /// Sign and size of the normalization effect on the leading eigenvalue.
    NormalizeEffect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "gaussian")]
        dist: DistArg,
        /// Optional experiment configuration for a paired Monte Carlo run.
        #[arg(long)]
        experiment: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    let started = Instant::now();
    let code = match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    };
    let _ = writeln!(stderr, "elapsed: {:.3}s", started.elapsed().as_secs_f64());
    code
}

fn print_json<T: Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    stdout
        .write_all(&to_json_bytes(value))
        .map_err(|source| HarnessError::Io {
            path: "<stdout>".to_string(),
            source,
        })
}

fn load_model(path: &Path) -> Result<(ModelDoc, PopulationModel)> {
    let doc: ModelDoc = read_json(path)?;
    let model = doc.build()?;
    Ok((doc, model))
}

fn spike_range(model: &PopulationModel, spike: Option<usize>) -> Result<std::ops::Range<usize>> {
    let count = model.spikes().len();
    match spike {
        None => Ok(0..count),
        Some(k) if k >= 1 && k <= count => Ok(k - 1..k),
        Some(k) => Err(HarnessError::Input(format!(
            "--spike {k} out of range 1..={count}"
        ))),
    }
}

fn name_spike(k: usize, e: CoreError) -> HarnessError {
    match e {
        CoreError::BelowPhaseTransition { alpha, phi1 } => {
            HarnessError::Core(CoreError::Domain(format!(
                "spike {} (alpha = {alpha}) is below the phase transition (phi' = {phi1:e})",
                k + 1
            )))
        }
        other => HarnessError::Core(other),
    }
}

fn load_experiment(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    Ok(cfg)
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Limits {
            config,
            n,
            spike,
            kind,
        } => {
            let (doc, base) = load_model(&config)?;
            let kind: MatrixKind = kind.into();
            let model = base.view(kind)?;
            let mut spikes = Vec::new();
            for k in spike_range(&model, spike)? {
                let pt = plugin_point(&model, n, k).map_err(|e| name_spike(k, e))?;
                let first = model.spikes().index_set(k).start;
                let vk = model.v().column(first).into_owned();
                spikes.push(json!({
                    "spike": k + 1,
                    "alpha": pt.alpha,
                    "mult": model.spikes().mult(k),
                    "phi": pt.phi,
                    "phi1": pt.phi1,
                    "phi2": pt.phi2,
                    "phi3": pt.phi3,
                    "psi": pt.psi,
                    "psi1": pt.psi1,
                    "s_under": pt.s_under,
                    "l0": pt.l0,
                    "l0p": pt.l0p,
                    "l1": pt.l1,
                    "l2": pt.l2,
                    "eigenvalue_limit": pt.phi,
                    "eigvec_limit": eigvec_limit(&model, n, &vk, k)?,
                }));
            }
            print_json(
                stdout,
                &json!({
                    "version": VERSION,
                    "config_hash": hash_json(&doc),
                    "kind": kind.label(),
                    "n": n,
                    "y": model.p() as f64 / n as f64,
                    "spikes": spikes,
                }),
            )?;
            Ok(0)
        }
        Command::Variance {
            config,
            n,
            kind,
            projection,
            spike,
            dist,
        } => {
            let (doc, base) = load_model(&config)?;
            let kind: MatrixKind = kind.into();
            let model = base.view(kind)?;
            let k = spike_range(&model, Some(spike))?.start;
            let nu4 = SourceDistribution::from(DistDoc::from(dist)).nu4();
            let p = ProjectionDoc::Symbolic(projection.clone()).resolve(&base)?;
            let block =
                eigenvalue_clt_block(&model, n, k, kind, nu4).map_err(|e| name_spike(k, e))?;
            let var = eigvec_variance(&model, n, &p, k, kind, nu4)?;
            let terms: Map<String, Value> = var
                .terms
                .iter()
                .map(|(l, v)| (l.to_string(), json!(v + 0.0)))
                .collect();
            print_json(
                stdout,
                &json!({
                    "version": VERSION,
                    "config_hash": hash_json(&doc),
                    "kind": kind.label(),
                    "spike_k": k + 1,
                    "projection": projection,
                    "n": n,
                    "nu4": nu4,
                    "limit": eigvec_limit(&model, n, &p, k)?,
                    "sigma2": var.sigma2,
                    "terms": terms,
                    "eigenvalue_variance": if block.mult == 1 { block.diagonal_variance(0) } else { block.trace_variance() },
                }),
            )?;
            Ok(0)
        }
        Command::Simulate(args) => {
            let cfg = load_experiment(&args)?;
            let (prep, records) = run(&cfg)?;
            let path = args.out.join(RECORDS_FILE);
            write_atomic(&path, &records_csv(&prep, &records))?;
            let _ = writeln!(stdout, "{}", path.display());
            Ok(0)
        }
        Command::Verify(args) => {
            let cfg = load_experiment(&args)?;
            let (prep, records) = run(&cfg)?;
            let report = summarize(&prep, &records)?;
            write_atomic(&args.out.join(RECORDS_FILE), &records_csv(&prep, &records))?;
            write_atomic(&args.out.join(REPORT_FILE), &to_json_bytes(&report))?;
            write_atomic(&args.out.join(PLOT_FILE), &plot_csv(&prep, &records))?;
            let _ = writeln!(stdout, "{}", args.out.join(REPORT_FILE).display());
            if report.passed {
                Ok(0)
            } else {
                for f in report.failures() {
                    let _ = writeln!(stderr, "FAIL {f}");
                }
                Ok(EXIT_CHECKS_FAILED)
            }
        }
        Command::NormalizeEffect {
            config,
            n,
            dist,
            experiment,
            out,
        } => {
            let (doc, model) = load_model(&config)?;
            let nu4 = SourceDistribution::from(DistDoc::from(dist)).nu4();
            let experiment: Option<ExperimentConfig> =
                experiment.map(|path| read_json(&path)).transpose()?;
            let n = n.or(experiment.as_ref().map(|e| e.n));
            // The effective term does not depend on n; any admissible n evaluates it.
            let effect = normalization_effect(&model, n.unwrap_or(model.p()), nu4)
                .map_err(|e| name_spike(0, e))?;
            let sign = if effect.effective_term < 0.0 {
                "negative"
            } else if effect.effective_term > 0.0 {
                "positive"
            } else {
                "zero"
            };
            let mut body = json!({
                "version": VERSION,
                "config_hash": hash_json(&doc),
                "nu4": nu4,
                "effective_term": effect.effective_term,
                "sign": sign,
            });
            if let Some(n) = n {
                body["n"] = json!(n);
                body["full_delta"] = json!(effect.full_delta);
                body["covariance_variance"] = json!(effect.covariance_variance);
                body["correlation_variance"] = json!(effect.correlation_variance);
            }
            let mut code = 0;
            if let Some(mut cfg) = experiment {
                cfg.model = doc.clone();
                if let Some(n) = n {
                    cfg.n = n;
                }
                let cmp = compare_normalization(&cfg)?;
                if cmp.verdict.failed() {
                    code = EXIT_CHECKS_FAILED;
                }
                body["empirical"] = serde_json::to_value(&cmp).expect("comparison serializes");
            }
            if let Some(dir) = out {
                write_atomic(&dir.join("normalize_effect.json"), &to_json_bytes(&body))?;
            }
            print_json(stdout, &body)?;
            Ok(code)
        }
    }
}
