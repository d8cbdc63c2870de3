//! Replicated experiments for the consistency law, the simple-spike CLT and
//! the multiplicity-block law.
//!
//! Replication `r` draws its data from a seed derived from
//! `(master_seed, r)` alone, and results are folded in index order, so the
//! summary does not depend on how many worker threads ran.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_law::{
    nu_for, sigma_sq, solve_theta, BlockSampler, MultiSpikeParams, NuEstimate, ThetaSolution,
};
use crate::model::{check_assumptions, kappa, AssumptionReport, Regime, SpikeBlock, SpikeModel};
use crate::sampling::{draw_samples, form_covariances, replication_seed};
use crate::spectra::fisher_eigenvalues;
use crate::stats::{ks_normal, ks_two_sample, qq_pairs, Moments};

/// Largest tolerated share of failed replications.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Consistency,
    CltSimple,
    CltBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub model: SpikeModel,
    pub replications: usize,
    pub master_seed: u64,
    /// 1-based spike indices.
    pub targets: Vec<usize>,
    pub mode: Mode,
}

impl ExperimentConfig {
    /// Validates the configuration. `targets = None` tracks every spike.
    pub fn new(
        regime: Regime,
        model: SpikeModel,
        replications: usize,
        master_seed: u64,
        targets: Option<Vec<usize>>,
        mode: Mode,
    ) -> Result<Self> {
        if model.q() != regime.q() {
            return Err(Error::config(
                "spikes",
                format!("{} spikes given but q = {}", model.q(), regime.q()),
            ));
        }
        if replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        let q = model.q();
        let targets = targets.unwrap_or_else(|| (1..=q).collect());
        if let Some(bad) = targets.iter().find(|&&t| t == 0 || t > q) {
            return Err(Error::config(
                "targets",
                format!("spike {bad} is not in 1..={q}"),
            ));
        }
        let mut seen = targets.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != targets.len() {
            return Err(Error::config("targets", "duplicate spike index"));
        }
        if mode == Mode::CltBlock && !model.multiplicities().iter().any(|&m| m >= 2) {
            return Err(Error::config(
                "mode",
                "clt_block needs a multiplicity block of size at least 2",
            ));
        }
        Ok(Self {
            regime,
            model,
            replications,
            master_seed,
            targets,
            mode,
        })
    }
}

/// Per-spike constants shared by all replications.
#[derive(Debug, Clone)]
struct TargetPlan {
    spike: usize,
    lambda: f64,
    theta: std::result::Result<ThetaSolution, String>,
    nu: NuEstimate,
    sigma: f64,
}

/// Observation of one tracked spike in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpikeRecord {
    pub spike: usize,
    pub lambda_hat: f64,
    pub delta: f64,
    /// `sqrt(p) delta / sigma`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub spikes: Vec<SpikeRecord>,
    /// Largest non-spiked eigenvalue `lambda_hat_{q+1}`.
    pub bulk_top: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedReplication {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

/// A configuration with its centering parameters and CLT scalings resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    plans: Vec<TargetPlan>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let regime = config.regime;
        let (y, c) = (regime.y_p().value(), regime.c_p().value());
        let (c_tilde, y_tilde) = (regime.c_tilde().value(), regime.y_tilde().value());
        let plans = config
            .targets
            .iter()
            .map(|&spike| {
                let lambda = config.model.spikes()[spike - 1];
                let nu = nu_for(
                    config.model.dist(),
                    config.model.rotation(),
                    spike - 1,
                    None,
                    Some(config.master_seed),
                )?;
                Ok(TargetPlan {
                    spike,
                    lambda,
                    theta: solve_theta(lambda, c_tilde, y_tilde).map_err(|e| e.to_string()),
                    sigma: sigma_sq(y, c, nu.value)?.sqrt(),
                    nu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, plans })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Runs replication `r`; failures carry the error text and are never dropped.
    pub fn run_replication(
        &self,
        r: usize,
    ) -> std::result::Result<ReplicationRecord, FailedReplication> {
        let seed = replication_seed(self.config.master_seed, r as u64);
        let fail = |error: String| FailedReplication {
            index: r,
            seed,
            error,
        };
        if r >= self.config.replications {
            return Err(fail(format!(
                "replication {r} out of range 0..{}",
                self.config.replications
            )));
        }
        let regime = &self.config.regime;
        let eigs = draw_samples(&self.config.model, regime, seed)
            .and_then(|s| form_covariances(&s))
            .and_then(|cov| fisher_eigenvalues(&cov))
            .map_err(|e| fail(e.to_string()))?;

        let sqrt_p = (regime.p() as f64).sqrt();
        let spikes = self
            .plans
            .iter()
            .map(|plan| {
                let theta = plan.theta.as_ref().map_err(|e| fail(e.clone()))?;
                let lambda_hat = eigs[plan.spike - 1];
                let delta = theta.delta_for(lambda_hat);
                Ok(SpikeRecord {
                    spike: plan.spike,
                    lambda_hat,
                    delta,
                    normalized: sqrt_p * delta / plan.sigma,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(ReplicationRecord {
            index: r,
            seed,
            spikes,
            bulk_top: eigs[regime.q()],
        })
    }

    /// Runs all replications on `threads` workers (`None`: rayon's default).
    pub fn run(&self, threads: Option<usize>) -> Result<ExperimentSummary> {
        let run_all = || {
            (0..self.config.replications)
                .into_par_iter()
                .map(|r| self.run_replication(r))
                .collect::<Vec<_>>()
        };
        let outcomes = match threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?
                .install(run_all),
            None => run_all(),
        };
        self.summarize(outcomes)
    }

    fn summarize(
        &self,
        outcomes: Vec<std::result::Result<ReplicationRecord, FailedReplication>>,
    ) -> Result<ExperimentSummary> {
        let total = outcomes.len();
        let (records, failed): (Vec<_>, Vec<_>) = outcomes.into_iter().partition(|o| o.is_ok());
        let records: Vec<ReplicationRecord> = records.into_iter().map(|o| o.unwrap()).collect();
        let failed: Vec<FailedReplication> = failed.into_iter().map(|o| o.unwrap_err()).collect();
        if failed.len() as f64 > MAX_FAILED_FRACTION * total as f64 {
            return Err(Error::ExperimentDegenerate {
                failed: failed.len(),
                total,
                first: failed[0].error.clone(),
            });
        }

        let regime = self.config.regime;
        let y_p = regime.y_p().value();
        let ratio_limit = 1.0 / (1.0 - y_p);
        let spikes: Vec<SpikeSummary> = self
            .plans
            .iter()
            .enumerate()
            .map(|(k, plan)| {
                let theta = plan
                    .theta
                    .as_ref()
                    .expect("failed plans fail every replication");
                let column = |f: fn(&SpikeRecord) -> f64| -> Vec<f64> {
                    records.iter().map(|r| f(&r.spikes[k])).collect()
                };
                let lambda_hat = column(|s| s.lambda_hat);
                let ratios: Vec<f64> = lambda_hat.iter().map(|l| l / plan.lambda).collect();
                let ratio_mean = Moments::of(&ratios).mean;
                let normalized = column(|s| s.normalized);
                SpikeSummary {
                    spike: plan.spike,
                    lambda: plan.lambda,
                    theta: theta.theta,
                    theta_residual: theta.residual,
                    nu: plan.nu,
                    sigma: plan.sigma,
                    replication: records.iter().map(|r| r.index).collect(),
                    delta: column(|s| s.delta),
                    lambda_hat,
                    fluctuation: FluctuationStats::of(&normalized),
                    normalized,
                    ratio_mean,
                    ratio_limit,
                    ratio_gap: ratio_mean.map(|m| (m - ratio_limit).abs()),
                }
            })
            .collect();

        let blocks = if self.config.mode == Mode::CltBlock {
            self.compare_blocks(&records)?
        } else {
            Vec::new()
        };

        let bulk: Vec<f64> = records.iter().map(|r| r.bulk_top).collect();
        Ok(ExperimentSummary {
            mode: self.config.mode,
            replications: total,
            successful: records.len(),
            failed,
            y_p,
            c_p: regime.c_p().value(),
            y_tilde: regime.y_tilde().value(),
            c_tilde: regime.c_tilde().value(),
            assumptions: check_assumptions(&self.config.model, &regime)?,
            bulk_top: Moments::of(&bulk),
            spikes,
            blocks,
        })
    }

    /// Blocks whose every spike is tracked.
    fn tracked_blocks(&self) -> Vec<(usize, SpikeBlock)> {
        self.config
            .model
            .blocks()
            .into_iter()
            .enumerate()
            .filter(|(_, b)| {
                (b.start + 1..=b.start + b.len).all(|s| self.config.targets.contains(&s))
            })
            .collect()
    }

    fn compare_blocks(&self, records: &[ReplicationRecord]) -> Result<Vec<BlockComparison>> {
        let regime = self.config.regime;
        let (y, c) = (regime.y_p().value(), regime.c_p().value());
        let sqrt_p = (regime.p() as f64).sqrt();
        self.tracked_blocks()
            .into_iter()
            .map(|(index, block)| {
                let slots: Vec<usize> = (block.start + 1..=block.start + block.len)
                    .map(|s| self.config.targets.iter().position(|&t| t == s).unwrap())
                    .collect();
                let empirical: Vec<Vec<f64>> = records
                    .iter()
                    .map(|r| {
                        let mut v: Vec<f64> =
                            slots.iter().map(|&k| sqrt_p * r.spikes[k].delta).collect();
                        v.sort_by(|a, b| b.total_cmp(a));
                        v
                    })
                    .collect();
                let params = MultiSpikeParams::for_block(&self.config.model, index, y, c)?;
                let reference_seed =
                    replication_seed(self.config.master_seed ^ 0x7265_6665, index as u64);
                let reference =
                    BlockSampler::new(&params)?.eigenvalue_tuples(empirical.len(), reference_seed);
                let ks = (0..block.len)
                    .map(|j| {
                        let a: Vec<f64> = empirical.iter().map(|t| t[j]).collect();
                        let b: Vec<f64> = reference.iter().map(|t| t[j]).collect();
                        ks_two_sample(&a, &b)
                    })
                    .collect();
                Ok(BlockComparison {
                    block: index + 1,
                    spikes: (block.start + 1..=block.start + block.len).collect(),
                    lambda: block.value,
                    empirical,
                    reference,
                    ks,
                })
            })
            .collect()
    }
}

/// Moments, KS distance to `N(0,1)` and qq pairs of a normalized sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationStats {
    pub moments: Moments,
    pub ks: Option<f64>,
    /// `(normal_quantile, sample_quantile)`, both ascending.
    pub qq: Vec<(f64, f64)>,
}

impl FluctuationStats {
    pub fn of(normalized: &[f64]) -> Self {
        Self {
            moments: Moments::of(normalized),
            ks: (!normalized.is_empty()).then(|| ks_normal(normalized)),
            qq: qq_pairs(normalized),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeSummary {
    pub spike: usize,
    pub lambda: f64,
    pub theta: f64,
    pub theta_residual: f64,
    pub nu: NuEstimate,
    pub sigma: f64,
    /// Indices of the successful replications, aligned with the samples.
    pub replication: Vec<usize>,
    pub lambda_hat: Vec<f64>,
    pub delta: Vec<f64>,
    pub normalized: Vec<f64>,
    pub fluctuation: FluctuationStats,
    /// Mean of `lambda_hat / lambda`.
    pub ratio_mean: Option<f64>,
    /// `1 / (1 - y_p)`.
    pub ratio_limit: f64,
    pub ratio_gap: Option<f64>,
}

/// Sorted `sqrt(p) phi` tuples of one block against reference draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockComparison {
    /// 1-based block index.
    pub block: usize,
    pub spikes: Vec<usize>,
    pub lambda: f64,
    pub empirical: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    /// Two-sample KS statistic per order statistic (largest first).
    pub ks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub mode: Mode,
    pub replications: usize,
    pub successful: usize,
    pub failed: Vec<FailedReplication>,
    pub y_p: f64,
    pub c_p: f64,
    pub y_tilde: f64,
    pub c_tilde: f64,
    pub assumptions: AssumptionReport,
    pub bulk_top: Moments,
    pub spikes: Vec<SpikeSummary>,
    pub blocks: Vec<BlockComparison>,
}

impl ExperimentSummary {
    pub fn spike(&self, spike: usize) -> Option<&SpikeSummary> {
        self.spikes.iter().find(|s| s.spike == spike)
    }
}

pub fn run_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentSummary> {
    Experiment::new(config.clone())?.run(threads)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub spike: usize,
    pub lambda: f64,
    pub mean_ratio: f64,
    pub limit: f64,
    pub gap: f64,
    pub kappa: f64,
    /// `kappa q (n^{-1/2} + lambda^{-1})`.
    pub diagnostic: f64,
    pub gap_over_diagnostic: f64,
}

/// Mean of `lambda_hat / lambda` against `1 / (1 - y_p)` per spike, sorted by
/// spike index.
pub fn consistency_table(
    config: &ExperimentConfig,
    summary: &ExperimentSummary,
) -> Result<Vec<ConsistencyRow>> {
    if config.mode != Mode::Consistency {
        return Err(Error::config(
            "mode",
            "consistency table needs mode = consistency",
        ));
    }
    let n = config.regime.n() as f64;
    let q = config.model.q() as f64;
    let mut rows: Vec<ConsistencyRow> = summary
        .spikes
        .iter()
        .filter_map(|s| {
            let mean_ratio = s.ratio_mean?;
            let k = kappa(config.model.spikes(), s.spike - 1).kappa;
            let diagnostic = k * q * (n.sqrt().recip() + s.lambda.recip());
            let gap = (mean_ratio - s.ratio_limit).abs();
            Some(ConsistencyRow {
                spike: s.spike,
                lambda: s.lambda,
                mean_ratio,
                limit: s.ratio_limit,
                gap,
                kappa: k,
                diagnostic,
                gap_over_diagnostic: gap / diagnostic,
            })
        })
        .collect();
    rows.sort_by_key(|r| r.spike);
    Ok(rows)
}

/// Runs a block-mode experiment and returns the per-block comparisons.
pub fn block_law_check(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Vec<BlockComparison>> {
    if config.mode != Mode::CltBlock {
        return Err(Error::config(
            "mode",
            "block law check needs mode = clt_block",
        ));
    }
    Ok(run_experiment(config, threads)?.blocks)
}

/// Reference draws for a block of `model` without running an experiment.
pub fn block_reference(
    model: &SpikeModel,
    block: usize,
    y: f64,
    c: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let params = MultiSpikeParams::for_block(model, block, y, c)?;
    Ok(BlockSampler::new(&params)?.eigenvalue_tuples(count, seed))
}
