//! Dimension regime, spike configuration and the finite-n assumption report.
//!
//! The population pair is reduced to `Sigma2 = I_p` and
//! `Sigma1 = blockdiag(U^T Lambda1 U, I_{p-q})`, so a [`SpikeModel`] together
//! with a [`Regime`] fully determines the data-generating process.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max-abs deviation of `U^T U` from the identity tolerated for a rotation.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Exact non-negative rational `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Dimension `p`, sample sizes `n` (for `S2`) and `T` (for `S1`), spike count `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regime {
    p: usize,
    n: usize,
    t: usize,
    q: usize,
}

impl Regime {
    /// Validates `0 < p`, `q < p`, `n > p` and `T >= 1`.
    ///
    /// `q = 0` is accepted for null-model experiments.
    pub fn new(p: usize, n: usize, t: usize, q: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Dimension("p must be positive".into()));
        }
        if q >= p {
            return Err(Error::Dimension(format!("q = {q} must be below p = {p}")));
        }
        if n <= p {
            return Err(Error::Dimension(format!(
                "n = {n} must exceed p = {p} so that S2 is invertible"
            )));
        }
        if t == 0 {
            return Err(Error::Dimension("T must be at least 1".into()));
        }
        Ok(Self { p, n, t, q })
    }

    pub fn p(&self) -> usize {
        self.p
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn q(&self) -> usize {
        self.q
    }

    /// `y_p = p / n`.
    pub fn y_p(&self) -> Ratio {
        Ratio {
            num: self.p,
            den: self.n,
        }
    }
    /// `c_p = p / T`.
    pub fn c_p(&self) -> Ratio {
        Ratio {
            num: self.p,
            den: self.t,
        }
    }
    /// `(p - q) / n`, the ratio seen by the non-spiked block.
    pub fn y_tilde(&self) -> Ratio {
        Ratio {
            num: self.p - self.q,
            den: self.n,
        }
    }
    /// `(p - q) / T`.
    pub fn c_tilde(&self) -> Ratio {
        Ratio {
            num: self.p - self.q,
            den: self.t,
        }
    }
}

/// Distribution of the iid entries of `Y` and `Z`; all have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryDist {
    Gaussian,
    Rademacher,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    UniformSym,
}

impl EntryDist {
    /// `E z^4`.
    pub fn fourth_moment(self) -> f64 {
        match self {
            EntryDist::Gaussian => 3.0,
            EntryDist::Rademacher => 1.0,
            EntryDist::UniformSym => 9.0 / 5.0,
        }
    }

    /// Fourth cumulant `E z^4 - 3`.
    pub fn excess_kurtosis(self) -> f64 {
        self.fourth_moment() - 3.0
    }
}

/// Contiguous run of equal spikes, `J_i = {start, .., start + len - 1}` (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeBlock {
    pub start: usize,
    pub len: usize,
    pub value: f64,
}

/// Validated spike configuration. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeModel {
    spikes: Vec<f64>,
    multiplicities: Vec<usize>,
    cumulative: Vec<usize>,
    rotation: DMatrix<f64>,
    dist: EntryDist,
}

/// Builds a [`SpikeModel`] from the full (expanded) spike list.
///
/// `multiplicities` gives the block sizes `n_1, .., n_l`; when `None`, runs of
/// equal values are grouped. The rotation defaults to the identity.
pub fn build_spike_model(
    spikes: &[f64],
    multiplicities: Option<&[usize]>,
    rotation: Option<DMatrix<f64>>,
    dist: EntryDist,
) -> Result<SpikeModel> {
    if let Some(&bad) = spikes.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSpectrum(format!("non-finite spike {bad}")));
    }
    if let Some(&low) = spikes.iter().find(|&&v| v <= 1.0) {
        return Err(Error::SubcriticalSpike { value: low });
    }
    let q = spikes.len();

    let multiplicities = match multiplicities {
        Some(m) => {
            if m.contains(&0) {
                return Err(Error::InvalidSpectrum("multiplicities must be >= 1".into()));
            }
            let total: usize = m.iter().sum();
            if total != q {
                return Err(Error::InvalidSpectrum(format!(
                    "multiplicities sum to {total}, expected q = {q}"
                )));
            }
            m.to_vec()
        }
        None => group_runs(spikes),
    };

    let cumulative: Vec<usize> = multiplicities
        .iter()
        .scan(0, |acc, &k| {
            *acc += k;
            Some(*acc)
        })
        .collect();

    let mut previous: Option<f64> = None;
    let mut start = 0;
    for &len in &multiplicities {
        let block = &spikes[start..start + len];
        let value = block[0];
        if block.iter().any(|&v| v != value) {
            return Err(Error::InvalidSpectrum(format!(
                "block starting at index {start} is not constant"
            )));
        }
        if let Some(prev) = previous {
            if value >= prev {
                return Err(Error::InvalidSpectrum(format!(
                    "spikes must strictly decrease across blocks ({prev} then {value})"
                )));
            }
        }
        previous = Some(value);
        start += len;
    }

    let rotation = match rotation {
        None => DMatrix::identity(q, q),
        Some(u) => {
            if u.nrows() != q || u.ncols() != q {
                return Err(Error::Dimension(format!(
                    "rotation is {}x{}, expected {q}x{q}",
                    u.nrows(),
                    u.ncols()
                )));
            }
            let deviation = orthogonality_deviation(&u);
            if !(deviation <= ORTHOGONALITY_TOL) {
                return Err(Error::InvalidRotation { deviation });
            }
            u
        }
    };

    Ok(SpikeModel {
        spikes: spikes.to_vec(),
        multiplicities,
        cumulative,
        rotation,
        dist,
    })
}

fn group_runs(spikes: &[f64]) -> Vec<usize> {
    let mut runs: Vec<usize> = Vec::new();
    for (i, &v) in spikes.iter().enumerate() {
        if i > 0 && spikes[i - 1] == v {
            *runs.last_mut().unwrap() += 1;
        } else {
            runs.push(1);
        }
    }
    runs
}

/// `max |U^T U - I|` over all entries.
pub fn orthogonality_deviation(u: &DMatrix<f64>) -> f64 {
    let gram = u.transpose() * u;
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = (gram[(i, j)] - target).abs();
            // NaN must surface as a failure
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
    }
    worst
}

impl SpikeModel {
    pub fn q(&self) -> usize {
        self.spikes.len()
    }

    /// Number of multiplicity blocks `l`.
    pub fn ell(&self) -> usize {
        self.multiplicities.len()
    }

    /// Expanded spike list `lambda_1 >= .. >= lambda_q`.
    pub fn spikes(&self) -> &[f64] {
        &self.spikes
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// Cumulative block ends `N_1, .., N_l`.
    pub fn cumulative(&self) -> &[usize] {
        &self.cumulative
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn dist(&self) -> EntryDist {
        self.dist
    }

    pub fn blocks(&self) -> Vec<SpikeBlock> {
        let mut start = 0;
        self.multiplicities
            .iter()
            .map(|&len| {
                let block = SpikeBlock {
                    start,
                    len,
                    value: self.spikes[start],
                };
                start += len;
                block
            })
            .collect()
    }

    /// Block containing the (0-based) spike index.
    pub fn block_of(&self, index: usize) -> Option<SpikeBlock> {
        self.blocks()
            .into_iter()
            .find(|b| (b.start..b.start + b.len).contains(&index))
    }

    pub fn is_identity_rotation(&self) -> bool {
        let q = self.q();
        (0..q).all(|i| {
            (0..q).all(|j| {
                let target = if i == j { 1.0 } else { 0.0 };
                (self.rotation[(i, j)] - target).abs() <= ORTHOGONALITY_TOL
            })
        })
    }

    /// `Sigma11 = U^T Lambda1 U`.
    pub fn sigma11(&self) -> DMatrix<f64> {
        self.rotated_diag(|v| v)
    }

    /// `Sigma11^{1/2} = U^T diag(sqrt(lambda)) U`.
    pub fn sigma11_sqrt(&self) -> DMatrix<f64> {
        self.rotated_diag(f64::sqrt)
    }

    fn rotated_diag(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let u = &self.rotation;
        let mut scaled = u.clone();
        for (i, &v) in self.spikes.iter().enumerate() {
            let s = f(v);
            scaled.row_mut(i).scale_mut(s);
        }
        u.transpose() * scaled
    }
}

/// Spike schedule used for the reference simulation: `q = ceil(2 ln p)` and
/// `lambda_i = (3/2)^{q+1-i} (ln p / 3)^3`, largest first.
pub fn benchmark_spike_schedule(p: usize) -> Result<(usize, Vec<f64>)> {
    if p < 2 {
        return Err(Error::Dimension(format!("schedule needs p >= 2, got {p}")));
    }
    let ln_p = (p as f64).ln();
    let q = (2.0 * ln_p).ceil() as usize;
    let base = (ln_p / 3.0).powi(3);
    let spikes = (1..=q)
        .map(|i| 1.5f64.powi((q + 1 - i) as i32) * base)
        .collect();
    Ok((q, spikes))
}

/// The error-term constants `kappa_1`, `kappa_2` and `kappa = min` for spike `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa: f64,
}

pub fn kappa(spikes: &[f64], index: usize) -> Kappa {
    let q = spikes.len() as f64;
    let lambda = spikes[index];
    let sum: f64 = spikes.iter().sum();
    let inv_sum: f64 = spikes.iter().map(|v| v.recip()).sum();
    let kappa1 = q + sum / lambda;
    let kappa2 = q + lambda * inv_sum;
    Kappa {
        kappa1,
        kappa2,
        kappa: kappa1.min(kappa2),
    }
}

/// Finite-n proxies for the asymptotic model assumptions. Advisory only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// `q / n^{1/6}`.
    pub a1_q_rate: f64,
    pub a1_ok: bool,
    /// `max_i lambda_i^{-1} sum_j lambda_j * q^{1/2} n^{-1/4}`.
    pub a2a_scale: f64,
    /// `max_i lambda_i sum_j lambda_j^{-1} * q^{1/2} n^{-1/4}`.
    pub a2b_scale: f64,
    /// `q^2 / lambda_q`.
    pub a2_qsq_over_lambda: f64,
    pub a2_ok: bool,
    /// Entry distributions all carry a finite fourth moment.
    pub a3_ok: bool,
    /// `min_i lambda_{N_i} / lambda_{N_{i+1}}`; `None` with a single block.
    pub a4_gap: Option<f64>,
    pub a4_ok: bool,
    pub a5_max_mult: usize,
    pub a5_ok: bool,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.a1_ok && self.a2_ok && self.a3_ok && self.a4_ok && self.a5_ok
    }
}

pub const A1_FACTOR: f64 = 2.0;
pub const A2_SCALE_MAX: f64 = 1.0;
pub const A2_QSQ_MAX: f64 = 1.0;
pub const A4_GAP_MIN: f64 = 1.2;
pub const A5_MULT_MAX: usize = 4;

pub fn check_assumptions(model: &SpikeModel, regime: &Regime) -> Result<AssumptionReport> {
    let q = model.q();
    if q != regime.q() {
        return Err(Error::Dimension(format!(
            "model has {q} spikes but regime q = {}",
            regime.q()
        )));
    }
    if q >= regime.p() {
        return Err(Error::Dimension(format!("q = {q} >= p = {}", regime.p())));
    }
    let n = regime.n() as f64;
    let qf = q as f64;
    let spikes = model.spikes();

    let a1_q_rate = qf / n.powf(1.0 / 6.0);
    let scale = qf.sqrt() * n.powf(-0.25);
    let sum: f64 = spikes.iter().sum();
    let inv_sum: f64 = spikes.iter().map(|v| v.recip()).sum();
    let a2a_scale = spikes.iter().map(|v| sum / v).fold(0.0, f64::max) * scale;
    let a2b_scale = spikes.iter().map(|v| v * inv_sum).fold(0.0, f64::max) * scale;
    let a2_qsq_over_lambda = spikes.last().map_or(0.0, |&low| qf * qf / low);

    let blocks = model.blocks();
    let a4_gap = blocks
        .windows(2)
        .map(|w| w[0].value / w[1].value)
        .reduce(f64::min);
    let a5_max_mult = model.multiplicities().iter().copied().max().unwrap_or(0);

    Ok(AssumptionReport {
        a1_q_rate,
        a1_ok: qf <= A1_FACTOR * n.powf(1.0 / 6.0),
        a2a_scale,
        a2b_scale,
        a2_qsq_over_lambda,
        a2_ok: a2a_scale.min(a2b_scale) <= A2_SCALE_MAX && a2_qsq_over_lambda <= A2_QSQ_MAX,
        a3_ok: true,
        a4_gap,
        a4_ok: a4_gap.is_none_or(|g| g >= A4_GAP_MIN),
        a5_max_mult,
        a5_ok: a5_max_mult <= A5_MULT_MAX,
    })
}
