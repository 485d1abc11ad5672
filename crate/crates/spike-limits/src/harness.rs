//! Monte Carlo experiments against the theoretical limits.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use spiked_core::limits::{
    eigenvalue_clt_block, eigvec_limit, eigvec_variance, normalization_effect, plugin_point,
    CltBlock,
};
use spiked_core::model::{validate, DEFAULT_SEPARATION};
use spiked_core::sim::{
    derive_seed, draw_source, eig_stat, extract_spiked, observe, sample_corr, sample_cov, vec_stat,
    ReplicationRecord,
};
use spiked_core::{MatrixKind, Mode, PopulationModel, SourceDistribution};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::summary::{
    first_order, summarize_values, FirstOrderSummary, StatSummary, Verdict, Welford,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SPIKE_LIMITS_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTheory {
    pub k: usize,
    pub alpha: f64,
    pub mult: usize,
    pub phi: f64,
    pub l0: f64,
    /// Variance of `θ_k` for a simple spike, of `Σ_{j∈I_k} θ_j` otherwise.
    pub variance: f64,
    pub block: CltBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTheory {
    pub name: String,
    pub k: usize,
    pub limit: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindTheory {
    pub kind: MatrixKind,
    pub spikes: Vec<SpikeTheory>,
    pub projections: Vec<ProjectionTheory>,
}

impl KindTheory {
    pub fn projection(&self, name: &str, k: usize) -> Option<&ProjectionTheory> {
        self.projections.iter().find(|p| p.name == name && p.k == k)
    }
}

/// The model seen through one matrix kind, with its theory.
#[derive(Debug, Clone)]
pub struct KindView {
    pub kind: MatrixKind,
    pub model: PopulationModel,
    pub theory: KindTheory,
}

/// A validated experiment ready to simulate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub base: PopulationModel,
    pub dist: SourceDistribution,
    pub views: Vec<KindView>,
    pub projections: Vec<(String, DVector<f64>)>,
}

impl Prepared {
    pub fn view(&self, kind: MatrixKind) -> Option<&KindView> {
        self.views.iter().find(|v| v.kind == kind)
    }

    pub fn spiked_total(&self) -> usize {
        self.base.spikes().total()
    }
}

/// Limits for every spike and projection of `model` seen as `kind`.
pub fn kind_theory(
    model: &PopulationModel,
    kind: MatrixKind,
    n: usize,
    nu4: f64,
    projections: &[(String, DVector<f64>)],
) -> Result<KindTheory> {
    let spikes = model.spikes();
    let mut spike_theory = Vec::with_capacity(spikes.len());
    let mut proj_theory = Vec::new();
    for k in 0..spikes.len() {
        let pt = plugin_point(model, n, k)?;
        let block = eigenvalue_clt_block(model, n, k, kind, nu4)?;
        let variance = if block.mult == 1 {
            block.diagonal_variance(0)
        } else {
            block.trace_variance()
        };
        spike_theory.push(SpikeTheory {
            k,
            alpha: pt.alpha,
            mult: block.mult,
            phi: pt.phi,
            l0: pt.l0,
            variance,
            block,
        });
    }
    for (name, p) in projections {
        for k in 0..spikes.len() {
            proj_theory.push(ProjectionTheory {
                name: name.clone(),
                k,
                limit: eigvec_limit(model, n, p, k)?,
                sigma2: eigvec_variance(model, n, p, k, kind, nu4)?.sigma2,
            });
        }
    }
    Ok(KindTheory {
        kind,
        spikes: spike_theory,
        projections: proj_theory,
    })
}

/// Validates `config`, builds the per-kind views and evaluates the theory.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.check()?;
    let base = config.model.build()?;
    let dist: SourceDistribution = config.dist.into();
    let projections = config
        .projections
        .iter()
        .map(|q| Ok((q.name().to_string(), q.resolve(&base)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut views = Vec::with_capacity(config.kinds.len());
    for &k in &config.kinds {
        let kind: MatrixKind = k.into();
        let model = base.view(kind)?.into_owned();
        let report = validate(&model, config.n, DEFAULT_SEPARATION);
        if !report.passed() {
            return Err(HarnessError::Validation {
                kind: kind.label(),
                report,
            });
        }
        if model.spikes().len() != base.spikes().len() {
            return Err(HarnessError::Input(format!(
                "the {} view regroups the spikes ({} groups instead of {})",
                kind.label(),
                model.spikes().len(),
                base.spikes().len()
            )));
        }
        let theory = kind_theory(&model, kind, config.n, dist.nu4(), &projections)?;
        views.push(KindView {
            kind,
            model,
            theory,
        });
    }
    Ok(Prepared {
        config: config.clone(),
        config_hash: config.hash(),
        base,
        dist,
        views,
        projections,
    })
}

fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn replicate(prep: &Prepared, rep: usize) -> Result<Vec<ReplicationRecord>> {
    let cfg = &prep.config;
    let seed = derive_seed(cfg.master_seed, rep as u64);
    let x = draw_source(prep.base.p(), cfg.n, prep.dist, seed);
    let s = sample_cov(&observe(&prep.base, &x)?)?;
    let m = prep.spiked_total();
    let mut out = Vec::with_capacity(prep.views.len());
    for view in &prep.views {
        let eig = match view.kind {
            MatrixKind::Covariance => extract_spiked(&s, m)?,
            MatrixKind::Correlation => extract_spiked(&sample_corr(&s)?, m)?,
        };
        let spikes = view.model.spikes();
        let theta = (0..m)
            .map(|j| {
                eig_stat(
                    eig.values[j],
                    view.theory.spikes[spikes.group_of(j)].phi,
                    cfg.n,
                )
            })
            .collect();
        let proj = prep
            .projections
            .iter()
            .map(|(_, p)| {
                (0..spikes.len())
                    .map(|k| vec_stat(&eig.vectors, spikes.index_set(k), p))
                    .collect()
            })
            .collect();
        out.push(ReplicationRecord {
            rep_index: rep,
            kind: view.kind,
            lambda: eig.values,
            theta,
            proj,
            seed_used: seed,
        });
    }
    Ok(out)
}

/// Runs every replication; records are ordered by replication, then kind.
pub fn simulate(prep: &Prepared) -> Result<Vec<ReplicationRecord>> {
    let per_rep: Vec<Vec<ReplicationRecord>> = thread_pool().install(|| {
        (0..prep.config.reps)
            .into_par_iter()
            .map(|r| replicate(prep, r))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// [`prepare`] followed by [`simulate`]. Aborts before simulating if any
/// requested view of the model fails validation.
pub fn run(config: &ExperimentConfig) -> Result<(Prepared, Vec<ReplicationRecord>)> {
    let prep = prepare(config)?;
    let records = simulate(&prep)?;
    Ok((prep, records))
}

/// Values of one named statistic, in replication order, with its target law.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub statistic: String,
    pub kind: MatrixKind,
    pub values: Vec<f64>,
    pub theory_mean: f64,
    pub theory_variance: f64,
}

/// Column names `proj_{name}_{k}` (or `proj_{k}` with a single direction).
pub fn projection_label(prep: &Prepared, q: usize, k: usize) -> String {
    if prep.projections.len() == 1 {
        format!("proj_{}", k + 1)
    } else {
        format!("proj_{}_{}", prep.projections[q].0, k + 1)
    }
}

/// The second-order statistics compared by [`summarize`]: `theta_k` for
/// simple spikes, `theta_sum_k` for multiple ones, and the `√n`-scaled
/// projection statistics.
pub fn series(prep: &Prepared, records: &[ReplicationRecord]) -> Vec<Series> {
    let n = prep.config.n as f64;
    let mut out = Vec::new();
    for view in &prep.views {
        let recs: Vec<&ReplicationRecord> =
            records.iter().filter(|r| r.kind == view.kind).collect();
        let spikes = view.model.spikes();
        for st in &view.theory.spikes {
            let range = spikes.index_set(st.k);
            let (statistic, values) = if st.mult == 1 {
                (
                    format!("theta_{}", st.k + 1),
                    recs.iter().map(|r| r.theta[range.start]).collect(),
                )
            } else {
                (
                    format!("theta_sum_{}", st.k + 1),
                    recs.iter()
                        .map(|r| r.theta[range.clone()].iter().sum())
                        .collect(),
                )
            };
            out.push(Series {
                statistic,
                kind: view.kind,
                values,
                theory_mean: 0.0,
                theory_variance: st.variance,
            });
        }
        for (q, (name, _)) in prep.projections.iter().enumerate() {
            for k in 0..spikes.len() {
                let th = view.theory.projection(name, k).expect("projection theory");
                let values = recs
                    .iter()
                    .map(|r| n.sqrt() * (r.proj[q][k] - th.limit))
                    .collect();
                out.push(Series {
                    statistic: projection_label(prep, q, k),
                    kind: view.kind,
                    values,
                    theory_mean: 0.0,
                    theory_variance: th.sigma2,
                });
            }
        }
    }
    out
}

fn first_order_checks(prep: &Prepared, records: &[ReplicationRecord]) -> Vec<FirstOrderSummary> {
    let mut out = Vec::new();
    for view in &prep.views {
        let recs: Vec<&ReplicationRecord> =
            records.iter().filter(|r| r.kind == view.kind).collect();
        let spikes = view.model.spikes();
        for st in &view.theory.spikes {
            let range = spikes.index_set(st.k);
            let values: Vec<f64> = recs
                .iter()
                .map(|r| r.lambda[range.clone()].iter().sum::<f64>() / st.mult as f64)
                .collect();
            out.push(first_order(
                &format!("lambda_{}", st.k + 1),
                view.kind.label(),
                &values,
                st.phi,
            ));
        }
        for (q, (name, _)) in prep.projections.iter().enumerate() {
            for k in 0..spikes.len() {
                let th = view.theory.projection(name, k).expect("projection theory");
                let values: Vec<f64> = recs.iter().map(|r| r.proj[q][k]).collect();
                out.push(first_order(
                    &projection_label(prep, q, k),
                    view.kind.label(),
                    &values,
                    th.limit,
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub version: String,
    pub config_hash: String,
    pub n: usize,
    pub reps: usize,
    pub dist: String,
    pub nu4: f64,
    pub master_seed: u64,
    pub statistics: Vec<StatSummary>,
    pub first_order: Vec<FirstOrderSummary>,
    pub passed: bool,
}

impl SummaryReport {
    /// Human-readable descriptions of every failed check.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.statistics {
            let tag = format!("{}/{}", s.kind, s.statistic);
            if s.mean_check.failed() {
                out.push(format!(
                    "{tag}: mean {:.6} vs {:.6} (z = {:.2})",
                    s.mean, s.theory_mean, s.z_score
                ));
            }
            if s.variance_check.failed() {
                out.push(format!(
                    "{tag}: variance {:.6} vs {:.6} (ratio {:.3})",
                    s.variance,
                    s.theory_variance,
                    s.variance_ratio.unwrap_or(f64::NAN)
                ));
            }
            if s.ks_check.failed() {
                out.push(format!(
                    "{tag}: KS {:.4} > {:.4}",
                    s.ks.unwrap_or(f64::NAN),
                    s.ks_critical
                ));
            }
        }
        for f in &self.first_order {
            if f.check.failed() {
                out.push(format!(
                    "{}/{}: mean {:.6} vs limit {:.6} (relative error {:.4})",
                    f.kind,
                    f.statistic,
                    f.mean,
                    f.limit,
                    f.relative_error.unwrap_or(f64::NAN)
                ));
            }
        }
        out
    }

    pub fn statistic(&self, kind: MatrixKind, statistic: &str) -> Option<&StatSummary> {
        self.statistics
            .iter()
            .find(|s| s.kind == kind.label() && s.statistic == statistic)
    }

    pub fn first_order(&self, kind: MatrixKind, statistic: &str) -> Option<&FirstOrderSummary> {
        self.first_order
            .iter()
            .find(|s| s.kind == kind.label() && s.statistic == statistic)
    }
}

/// Compares the records of a run with the theory in `prep`.
pub fn summarize(prep: &Prepared, records: &[ReplicationRecord]) -> Result<SummaryReport> {
    let statistics = series(prep, records)
        .iter()
        .map(|s| {
            summarize_values(
                &s.statistic,
                s.kind.label(),
                &s.values,
                s.theory_mean,
                s.theory_variance,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let first_order = first_order_checks(prep, records);
    let passed =
        statistics.iter().all(|s| s.passed) && first_order.iter().all(|f| !f.check.failed());
    Ok(SummaryReport {
        version: VERSION.to_string(),
        config_hash: prep.config_hash.clone(),
        n: prep.config.n,
        reps: prep.config.reps,
        dist: prep.dist.label().to_string(),
        nu4: prep.dist.nu4(),
        master_seed: prep.config.master_seed,
        statistics,
        first_order,
        passed,
    })
}

/// Paired covariance-versus-correlation comparison of the leading eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationComparison {
    pub version: String,
    pub config_hash: String,
    pub effective_term: f64,
    pub full_delta: f64,
    pub limit_covariance: f64,
    pub limit_correlation: f64,
    pub limits_equal: bool,
    pub theory_variance_covariance: f64,
    pub theory_variance_correlation: f64,
    pub empirical_variance_covariance: f64,
    pub empirical_variance_correlation: f64,
    pub empirical_difference: f64,
    /// Standard error of the paired variance difference.
    pub difference_stderr: f64,
    pub sign_agrees: bool,
    pub verdict: Verdict,
}

/// Runs `config` with both kinds on the same data and compares the
/// variance of `θ₁` with the predicted normalization effect.
pub fn compare_normalization(config: &ExperimentConfig) -> Result<NormalizationComparison> {
    let model = config.model.build()?;
    if model.mode() != Mode::Correlation {
        return Err(HarnessError::Input(
            "normalization comparison needs a correlation-mode model".to_string(),
        ));
    }
    if model.spikes().total() != 1 {
        return Err(HarnessError::Input(
            "normalization comparison needs a single simple spike".to_string(),
        ));
    }
    let mut cfg = config.clone();
    for kind in [
        crate::config::KindDoc::Covariance,
        crate::config::KindDoc::Correlation,
    ] {
        if !cfg.kinds.contains(&kind) {
            return Err(HarnessError::Input(
                "normalization comparison needs both matrix kinds".to_string(),
            ));
        }
    }
    cfg.kinds = vec![
        crate::config::KindDoc::Covariance,
        crate::config::KindDoc::Correlation,
    ];
    let effect = normalization_effect(&model, cfg.n, cfg.dist_nu4())?;
    let (prep, records) = run(&cfg)?;
    let theta = |kind: MatrixKind| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.theta[0])
            .collect()
    };
    let a = theta(MatrixKind::Covariance);
    let b = theta(MatrixKind::Correlation);
    let wa: Welford = a.iter().copied().collect();
    let wb: Welford = b.iter().copied().collect();
    let diffs: Welford = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (y - wb.mean()).powi(2) - (x - wa.mean()).powi(2))
        .collect();
    let empirical_difference = wb.variance() - wa.variance();
    let difference_stderr = (diffs.variance() / diffs.count() as f64).sqrt();
    let cov_view = prep.view(MatrixKind::Covariance).expect("covariance view");
    let corr_view = prep
        .view(MatrixKind::Correlation)
        .expect("correlation view");
    let limit_covariance = cov_view.theory.spikes[0].phi;
    let limit_correlation = corr_view.theory.spikes[0].phi;
    let sign_agrees = empirical_difference.signum() == effect.full_delta.signum();
    Ok(NormalizationComparison {
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        effective_term: effect.effective_term,
        full_delta: effect.full_delta,
        limit_covariance,
        limit_correlation,
        limits_equal: limit_covariance == limit_correlation,
        theory_variance_covariance: effect.covariance_variance,
        theory_variance_correlation: effect.correlation_variance,
        empirical_variance_covariance: wa.variance(),
        empirical_variance_correlation: wb.variance(),
        empirical_difference,
        difference_stderr,
        sign_agrees,
        verdict: if sign_agrees {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    })
}
