//! Validation suites run by `sfl verify`.
//!
//! Full runs use the replication counts below. Quick runs use a fifth of
//! them and widen every statistical tolerance by `sqrt(5)`, the growth of the
//! Monte Carlo standard error.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{benchmark_spike_schedule, build_spike_model, EntryDist, Regime};
use crate::montecarlo::{consistency_table, run_experiment, ExperimentConfig, Mode};
use crate::report::samples_csv;

/// Sizes of the benchmark configuration.
pub const BENCH_P: usize = 200;
pub const BENCH_N: usize = 1000;
pub const BENCH_T: usize = 600;
pub const BENCH_SEED: u64 = 20_240_601;

pub const CLT_REPLICATIONS: usize = 1000;
pub const CLT_MEAN_MAX: f64 = 0.15;
pub const CLT_VAR_RANGE: (f64, f64) = (0.80, 1.25);
pub const CLT_KS_MAX: f64 = 0.065;
pub const RADEMACHER_VAR_RANGE: (f64, f64) = (0.80, 1.30);

pub const CONSISTENCY_REPLICATIONS: usize = 200;
pub const CONSISTENCY_REL_TOL: f64 = 0.05;
pub const CONSISTENCY_SIZES: [(usize, usize, usize); 3] =
    [(100, 500, 300), (200, 1000, 600), (400, 2000, 1200)];

pub const BLOCK_REPLICATIONS: usize = 500;
pub const BLOCK_VALUE: f64 = 200.0;
pub const BLOCK_KS_MAX: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Consistency,
    Clt,
    Block,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" => Ok(Suite::Consistency),
            "clt" => Ok(Suite::Clt),
            "block" => Ok(Suite::Block),
            "all" => Ok(Suite::All),
            other => Err(Error::config("suite", format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    Quick,
}

impl Scale {
    fn reps(self, full: usize) -> usize {
        match self {
            Scale::Full => full,
            Scale::Quick => full / 5,
        }
    }

    /// Multiplier on statistical tolerances.
    pub fn widen(self) -> f64 {
        match self {
            Scale::Full => 1.0,
            Scale::Quick => 5f64.sqrt(),
        }
    }

    /// Widens `[lo, hi]` about 1.
    fn range(self, (lo, hi): (f64, f64)) -> (f64, f64) {
        let w = self.widen();
        (1.0 - (1.0 - lo) * w, 1.0 + (hi - 1.0) * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {}", self.id, self.name, self.detail)
    }
}

fn outcome(id: u8, name: &str, passed: bool, detail: String) -> CriterionOutcome {
    CriterionOutcome {
        id,
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Benchmark configuration at `(p, n, T)` with the schedule's spikes.
pub fn benchmark_config(
    (p, n, t): (usize, usize, usize),
    dist: EntryDist,
    mode: Mode,
    replications: usize,
    targets: Option<Vec<usize>>,
) -> Result<ExperimentConfig> {
    let (q, spikes) = benchmark_spike_schedule(p)?;
    let model = build_spike_model(&spikes, None, None, dist)?;
    ExperimentConfig::new(
        Regime::new(p, n, t, q)?,
        model,
        replications,
        BENCH_SEED,
        targets,
        mode,
    )
}

/// Benchmark schedule with the third spike replaced by a double spike at
/// [`BLOCK_VALUE`].
pub fn block_config(replications: usize) -> Result<ExperimentConfig> {
    let (_, schedule) = benchmark_spike_schedule(BENCH_P)?;
    let mut spikes = schedule[..2].to_vec();
    spikes.extend([BLOCK_VALUE, BLOCK_VALUE]);
    spikes.extend_from_slice(&schedule[3..]);
    let model = build_spike_model(&spikes, None, None, EntryDist::Gaussian)?;
    let regime = Regime::new(BENCH_P, BENCH_N, BENCH_T, spikes.len())?;
    ExperimentConfig::new(
        regime,
        model,
        replications,
        BENCH_SEED,
        None,
        Mode::CltBlock,
    )
}

fn clt_config(dist: EntryDist, reps: usize) -> Result<ExperimentConfig> {
    let q = benchmark_spike_schedule(BENCH_P)?.0;
    benchmark_config(
        (BENCH_P, BENCH_N, BENCH_T),
        dist,
        Mode::CltSimple,
        reps,
        Some(vec![1, q]),
    )
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.4}"))
}

pub fn clt_suite(scale: Scale, threads: Option<usize>) -> Result<Vec<CriterionOutcome>> {
    let reps = scale.reps(CLT_REPLICATIONS);
    let w = scale.widen();
    let (vlo, vhi) = scale.range(CLT_VAR_RANGE);
    let mut out = Vec::new();

    let config = clt_config(EntryDist::Gaussian, reps)?;
    let summary = run_experiment(&config, threads)?;
    let mut passed = true;
    let mut detail = Vec::new();
    for s in &summary.spikes {
        let m = &s.fluctuation.moments;
        let ok = m.mean.is_some_and(|v| v.abs() <= CLT_MEAN_MAX * w)
            && m.variance.is_some_and(|v| (vlo..=vhi).contains(&v))
            && s.fluctuation.ks.is_some_and(|v| v <= CLT_KS_MAX * w);
        passed &= ok;
        detail.push(format!(
            "spike {} mean {} var {} ks {}",
            s.spike,
            fmt_opt(m.mean),
            fmt_opt(m.variance),
            fmt_opt(s.fluctuation.ks)
        ));
    }
    out.push(outcome(
        1,
        "gaussian fluctuations",
        passed,
        detail.join("; "),
    ));

    let single = threads.is_none_or(|t| t == 1);
    let other = if single { 8 } else { 1 };
    let repeat = run_experiment(&config, Some(other))?;
    let same = summary
        .spikes
        .iter()
        .zip(&repeat.spikes)
        .all(|(a, b)| samples_csv(a) == samples_csv(b));
    out.push(outcome(
        8,
        "thread-count determinism",
        same,
        format!(
            "samples CSVs identical across {:?} and {other} threads: {same}",
            threads
        ),
    ));

    let config = clt_config(EntryDist::Rademacher, reps)?;
    let summary = run_experiment(&config, threads)?;
    let mut passed = true;
    let mut detail = Vec::new();
    for s in &summary.spikes {
        let (lo, hi) = scale.range(RADEMACHER_VAR_RANGE);
        let var = s.fluctuation.moments.variance;
        passed &= var.is_some_and(|v| (lo..=hi).contains(&v));
        detail.push(format!(
            "spike {} nu {} var {}",
            s.spike,
            s.nu.value,
            fmt_opt(var)
        ));
    }
    out.push(outcome(2, "rademacher variance", passed, detail.join("; ")));
    Ok(out)
}

pub fn consistency_suite(scale: Scale, threads: Option<usize>) -> Result<Vec<CriterionOutcome>> {
    let reps = scale.reps(CONSISTENCY_REPLICATIONS);
    let mut worst_gaps = Vec::new();
    let mut bench_ok = true;
    let mut bench_detail = String::new();
    for &size in &CONSISTENCY_SIZES {
        let config = benchmark_config(size, EntryDist::Gaussian, Mode::Consistency, reps, None)?;
        let summary = run_experiment(&config, threads)?;
        let table = consistency_table(&config, &summary)?;
        let worst = table.iter().map(|r| r.gap).fold(0.0, f64::max);
        worst_gaps.push(worst);
        if size.0 == BENCH_P {
            let failing: Vec<String> = table
                .iter()
                .filter(|r| r.gap > CONSISTENCY_REL_TOL * r.limit + r.diagnostic)
                .map(|r| format!("spike {} gap {:.4}", r.spike, r.gap))
                .collect();
            bench_ok = failing.is_empty();
            bench_detail = format!(
                "p={} max gap {:.4} (limit {:.4}); failing: [{}]",
                size.0,
                worst,
                table.first().map_or(f64::NAN, |r| r.limit),
                failing.join(", ")
            );
        }
    }
    let monotone = worst_gaps.windows(2).all(|w| w[1] < w[0]);
    let gaps: Vec<String> = worst_gaps.iter().map(|g| format!("{g:.4}")).collect();
    Ok(vec![outcome(
        3,
        "consistency",
        bench_ok && monotone,
        format!(
            "{bench_detail}; max gap by size [{}] shrinking: {monotone}",
            gaps.join(", ")
        ),
    )])
}

pub fn block_suite(scale: Scale, threads: Option<usize>) -> Result<Vec<CriterionOutcome>> {
    let config = block_config(scale.reps(BLOCK_REPLICATIONS))?;
    let summary = run_experiment(&config, threads)?;
    let block = summary
        .blocks
        .iter()
        .find(|b| b.spikes.len() == 2)
        .ok_or_else(|| Error::config("mode", "no double block tracked"))?;
    let limit = BLOCK_KS_MAX * scale.widen();
    let passed = block.ks.iter().all(|&d| d <= limit);
    let ks: Vec<String> = block.ks.iter().map(|d| format!("{d:.4}")).collect();
    Ok(vec![outcome(
        7,
        "double-spike block law",
        passed,
        format!("order-statistic KS [{}] vs limit {limit:.4}", ks.join(", ")),
    )])
}

pub fn run_suite(
    suite: Suite,
    scale: Scale,
    threads: Option<usize>,
) -> Result<Vec<CriterionOutcome>> {
    Ok(match suite {
        Suite::Consistency => consistency_suite(scale, threads)?,
        Suite::Clt => clt_suite(scale, threads)?,
        Suite::Block => block_suite(scale, threads)?,
        Suite::All => {
            let mut all = consistency_suite(scale, threads)?;
            all.extend(clt_suite(scale, threads)?);
            all.extend(block_suite(scale, threads)?);
            all
        }
    })
}
