//! Closed-form limiting quantities for spiked Fisher matrices.
//!
//! The non-spiked bulk follows the Wachter law `F_{c,y}` on `[a, b]`. A spike
//! `lambda` is centred at the root `theta` of
//!
//! ```text
//! 1 + y theta S(theta) = (lambda / theta) (1 - c - c theta S(theta))
//! ```
//!
//! with `S` the Stieltjes transform of `F_{c,y}` evaluated at the ratios of
//! the non-spiked block. The relative fluctuation `delta = (l - theta)/theta`
//! scaled by `sqrt(p)` is asymptotically `N(0, sigma^2)` for simple spikes,
//! and for a multiplicity block the scaled fluctuations behave like the
//! eigenvalues of a symmetric Gaussian matrix whose entry covariances are
//! given by [`MultiSpikeParams::cov`].

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{EntryDist, SpikeModel, ORTHOGONALITY_TOL};
use crate::sampling::{draw_entry, stream_rng};

fn check_ratios(c: f64, y: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("c = {c} must be positive")));
    }
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::Domain(format!("y = {y} must lie in (0, 1)")));
    }
    Ok(())
}

/// Wachter law parameters and support endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WachterParams {
    pub c: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
}

impl WachterParams {
    pub fn new(c: f64, y: f64) -> Result<Self> {
        check_ratios(c, y)?;
        let h = (c + y - c * y).sqrt();
        let scale = (1.0 - y).powi(-2);
        Ok(Self {
            c,
            y,
            a: (1.0 - h).powi(2) * scale,
            b: (1.0 + h).powi(2) * scale,
        })
    }

    /// Stieltjes transform `S(z) = int (x - z)^{-1} dF_{c,y}(x)` for `z > b`.
    ///
    /// Uses `A - sqrt(A^2 - 4z) = 4z / (A + sqrt(A^2 - 4z))` with
    /// `A = z(1-y) + 1 - c > 0` right of the support, which avoids the
    /// cancellation of the textbook form at large `z`.
    pub fn stieltjes(&self, z: f64) -> Result<f64> {
        let (c, y) = (self.c, self.y);
        if z == 0.0 {
            return Err(Error::Pole {
                at: z,
                reason: "z = 0",
            });
        }
        if c + z * y == 0.0 {
            return Err(Error::Pole {
                at: z,
                reason: "c + z y = 0",
            });
        }
        if z >= self.a && z <= self.b {
            return Err(Error::InsideSupport {
                z,
                a: self.a,
                b: self.b,
            });
        }
        if z < self.a {
            return Err(Error::Domain(format!(
                "z = {z} lies left of the support; only z > b is supported"
            )));
        }
        let big_a = z * (1.0 - y) + 1.0 - c;
        let disc = (big_a * big_a - 4.0 * z).max(0.0);
        let tail = 4.0 * c / (big_a + disc.sqrt()) + 2.0 * y;
        Ok((1.0 - c) / (z * c) - tail / (2.0 * c * (c + z * y)))
    }
}

/// Support endpoints `(a, b)` of `F_{c,y}`.
pub fn wachter_support(c: f64, y: f64) -> Result<(f64, f64)> {
    let w = WachterParams::new(c, y)?;
    Ok((w.a, w.b))
}

pub fn wachter_stieltjes(z: f64, c: f64, y: f64) -> Result<f64> {
    WachterParams::new(c, y)?.stieltjes(z)
}

/// Centering parameter for one spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSolution {
    pub lambda: f64,
    pub theta: f64,
    /// LHS - RHS of the defining equation at `theta`.
    pub residual: f64,
    pub delta: Option<f64>,
    pub sigma: Option<f64>,
}

impl ThetaSolution {
    /// `(lambda_hat - theta) / theta`.
    pub fn delta_for(&self, lambda_hat: f64) -> f64 {
        (lambda_hat - self.theta) / self.theta
    }

    pub fn with_observation(mut self, lambda_hat: f64) -> Self {
        self.delta = Some(self.delta_for(lambda_hat));
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }
}

/// `1 + y theta S(theta) - (lambda / theta)(1 - c - c theta S(theta))`.
pub fn theta_equation_residual(theta: f64, lambda: f64, w: &WachterParams) -> Result<f64> {
    let ts = theta * w.stieltjes(theta)?;
    Ok(1.0 + w.y * ts - lambda / theta * (1.0 - w.c - w.c * ts))
}

/// Bisection on a sign-changing bracket, run until the midpoint is no longer
/// representable between the endpoints.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    debug_assert!(f_lo.signum() != f_hi.signum());
    let mut best = if f_lo.abs() < f_hi.abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    for _ in 0..2000 {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    best.0
}

/// Solves for the centering parameter of spike `lambda` at the non-spiked
/// ratios `(c_tilde, y_tilde)`.
pub fn solve_theta(lambda: f64, c_tilde: f64, y_tilde: f64) -> Result<ThetaSolution> {
    let w = WachterParams::new(c_tilde, y_tilde)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda = {lambda} must be positive")));
    }
    let g = |theta: f64| theta_equation_residual(theta, lambda, &w).map(|r| r * theta);
    let floor = w.b * (1.0 + 1e-6);
    let ceiling = 1e3 * lambda;
    let no_root = || Error::NoSupercriticalRoot {
        lambda,
        c: c_tilde,
        y: y_tilde,
    };

    let mut lo = floor.max(0.25 * lambda / (1.0 - y_tilde));
    let mut hi = (4.0 * lambda / (1.0 - y_tilde)).max(lo * 2.0);
    if g(lo)? >= 0.0 {
        lo = floor;
        if g(lo)? >= 0.0 {
            return Err(no_root());
        }
    }
    while g(hi)? <= 0.0 {
        if hi >= ceiling {
            return Err(no_root());
        }
        hi = (hi * 2.0).min(ceiling);
    }

    // g is evaluated only on (b, inf), where S is defined
    let theta = bisect(|t| g(t).unwrap_or(f64::NAN), lo, hi);
    let residual = theta_equation_residual(theta, lambda, &w)?;
    Ok(ThetaSolution {
        lambda,
        theta,
        residual,
        delta: None,
        sigma: None,
    })
}

/// Almost-sure limit `lambda (lambda + c - 1) / (lambda - lambda y - 1)` of a
/// bounded spike with a fixed number of spikes.
pub fn classical_limit(lambda: f64, c: f64, y: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&y) || c < 0.0 {
        return Err(Error::Domain(format!("invalid ratios c = {c}, y = {y}")));
    }
    let den = lambda - lambda * y - 1.0;
    if !(den > 0.0) {
        return Err(Error::SubcriticalSpike { value: lambda });
    }
    Ok(lambda * (lambda + c - 1.0) / den)
}

/// `sigma^2 = (y + c) nu - c - y (1 - 3y) / (1 - y)`.
pub fn sigma_sq(y: f64, c: f64, nu: f64) -> Result<f64> {
    check_ratios(c, y)?;
    if !(nu >= 1.0) {
        return Err(Error::Domain(format!("nu = {nu} must be at least 1")));
    }
    let value = (y + c) * nu - c - y * (1.0 - 3.0 * y) / (1.0 - y);
    if !(value > 0.0) {
        return Err(Error::NonpositiveVariance { value, nu });
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NuMethod {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NuEstimate {
    pub value: f64,
    pub std_error: Option<f64>,
    pub method: NuMethod,
}

pub const DEFAULT_NU_BUDGET: usize = 100_000;

fn is_signed_basis_vector(u: &[f64]) -> bool {
    let big = u
        .iter()
        .filter(|v| (v.abs() - 1.0).abs() <= ORTHOGONALITY_TOL)
        .count();
    let small = u.iter().filter(|v| v.abs() <= ORTHOGONALITY_TOL).count();
    big == 1 && big + small == u.len()
}

/// `nu_i = E (u_i^T z)^4` where `u_i` is row `i` (0-based) of `U`.
///
/// Closed form for Gaussian entries (any rotation) and for rows of `U` that
/// are signed basis vectors; Monte Carlo over `mc_budget` draws otherwise.
pub fn nu_for(
    dist: EntryDist,
    rotation: &DMatrix<f64>,
    i: usize,
    mc_budget: Option<usize>,
    seed: Option<u64>,
) -> Result<NuEstimate> {
    let q = rotation.nrows();
    if i >= q {
        return Err(Error::Index { index: i, size: q });
    }
    let deviation = crate::model::orthogonality_deviation(rotation);
    if !rotation.is_square() || !(deviation <= ORTHOGONALITY_TOL) {
        return Err(Error::InvalidRotation { deviation });
    }
    let u: Vec<f64> = rotation.row(i).iter().copied().collect();
    if dist == EntryDist::Gaussian || is_signed_basis_vector(&u) {
        return Ok(NuEstimate {
            value: dist.fourth_moment(),
            std_error: None,
            method: NuMethod::Analytic,
        });
    }

    let budget = mc_budget.unwrap_or(DEFAULT_NU_BUDGET).max(2);
    let mut rng = stream_rng(seed.unwrap_or(0), 0x6e75 + i as u64);
    let draws: Vec<f64> = (0..budget)
        .map(|_| {
            let proj: f64 = u.iter().map(|&uk| uk * draw_entry(dist, &mut rng)).sum();
            proj.powi(4)
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / budget as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (budget - 1) as f64;
    Ok(NuEstimate {
        value: mean,
        std_error: Some((var / budget as f64).sqrt()),
        method: NuMethod::MonteCarlo,
    })
}

/// Entry-covariance ingredients for one multiplicity block of size `n_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSpikeParams {
    pub y: f64,
    pub c: f64,
    pub omega: f64,
    pub beta: f64,
    size: usize,
    second: DMatrix<f64>,
    fourth: Vec<f64>,
}

impl MultiSpikeParams {
    /// `second` is `n x n` (`M_{h,k}`), `fourth` is the row-major `n^4` tensor
    /// `M_{h1,k1,h2,k2}`.
    pub fn new(y: f64, c: f64, second: DMatrix<f64>, fourth: Vec<f64>) -> Result<Self> {
        check_ratios(c, y)?;
        let size = second.nrows();
        if !second.is_square() || fourth.len() != size.pow(4) {
            return Err(Error::Dimension(
                "moment tensors have inconsistent sizes".into(),
            ));
        }
        Ok(Self {
            y,
            c,
            omega: (y + c) * (1.0 - y).powi(2),
            beta: y * (1.0 - y) + c * (1.0 - y).powi(2),
            size,
            second,
            fourth,
        })
    }

    /// Moments of the rows `u_h` of one block for iid entries with unit
    /// variance and fourth cumulant `k4`:
    /// `E[(a.z)(b.z)(c.z)(d.z)] = (a.b)(c.d) + (a.c)(b.d) + (a.d)(b.c) + k4 sum_k a_k b_k c_k d_k`.
    pub fn from_rows(y: f64, c: f64, rows: &DMatrix<f64>, dist: EntryDist) -> Result<Self> {
        let n = rows.nrows();
        let k4 = dist.excess_kurtosis();
        let second = rows * rows.transpose();
        let mut fourth = vec![0.0; n.pow(4)];
        for h1 in 0..n {
            for k1 in 0..n {
                for h2 in 0..n {
                    for k2 in 0..n {
                        let joint: f64 = (0..rows.ncols())
                            .map(|k| rows[(h1, k)] * rows[(k1, k)] * rows[(h2, k)] * rows[(k2, k)])
                            .sum();
                        fourth[((h1 * n + k1) * n + h2) * n + k2] = second[(h1, k1)]
                            * second[(h2, k2)]
                            + second[(h1, h2)] * second[(k1, k2)]
                            + second[(h1, k2)] * second[(k1, h2)]
                            + k4 * joint;
                    }
                }
            }
        }
        Self::new(y, c, second, fourth)
    }

    /// Parameters of block `block` (0-based) of `model`.
    pub fn for_block(model: &SpikeModel, block: usize, y: f64, c: f64) -> Result<Self> {
        let blocks = model.blocks();
        let b = blocks.get(block).ok_or(Error::Index {
            index: block,
            size: blocks.len(),
        })?;
        let rows = model.rotation().rows(b.start, b.len).into_owned();
        Self::from_rows(y, c, &rows, model.dist())
    }

    /// Gaussian entries with identity rotation (Isserlis moments).
    pub fn gaussian_identity(y: f64, c: f64, size: usize) -> Result<Self> {
        Self::from_rows(y, c, &DMatrix::identity(size, size), EntryDist::Gaussian)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn second_moment(&self, h: usize, k: usize) -> f64 {
        self.second[(h, k)]
    }

    pub fn fourth_moment(&self, h1: usize, k1: usize, h2: usize, k2: usize) -> f64 {
        let n = self.size;
        self.fourth[((h1 * n + k1) * n + h2) * n + k2]
    }

    /// `cov(R_{h1,k1}, R_{h2,k2})` (0-based indices).
    pub fn cov(&self, h1: usize, k1: usize, h2: usize, k2: usize) -> Result<f64> {
        if let Some(&bad) = [h1, k1, h2, k2].iter().find(|&&i| i >= self.size) {
            return Err(Error::Index {
                index: bad,
                size: self.size,
            });
        }
        let m2 = |h, k| self.second_moment(h, k);
        let scale = (1.0 - self.y).powi(-2);
        Ok(
            scale * self.omega * (self.fourth_moment(h1, k1, h2, k2) - m2(h1, k1) * m2(h2, k2))
                + scale
                    * (self.beta - self.omega)
                    * (m2(h1, k2) * m2(h2, k1) + m2(h1, h2) * m2(k1, k2)),
        )
    }
}

pub fn multi_spike_cov(
    h1: usize,
    k1: usize,
    h2: usize,
    k2: usize,
    params: &MultiSpikeParams,
) -> Result<f64> {
    params.cov(h1, k1, h2, k2)
}

/// Floor below which the upper-triangle covariance is rejected as not PSD.
pub const PSD_FLOOR: f64 = -1e-8;

/// Draws symmetric Gaussian matrices whose upper-triangle entries have the
/// block's covariance structure.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    size: usize,
    entries: Vec<(usize, usize)>,
    factor: DMatrix<f64>,
}

impl BlockSampler {
    pub fn new(params: &MultiSpikeParams) -> Result<Self> {
        let size = params.size();
        let entries: Vec<(usize, usize)> = (0..size)
            .flat_map(|h| (h..size).map(move |k| (h, k)))
            .collect();
        let m = entries.len();
        let mut cov = DMatrix::zeros(m, m);
        for (a, &(h1, k1)) in entries.iter().enumerate() {
            for (b, &(h2, k2)) in entries.iter().enumerate() {
                cov[(a, b)] = params.cov(h1, k1, h2, k2)?;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let min_eig = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if m > 0 && !(min_eig >= PSD_FLOOR) {
            return Err(Error::InvalidCovariance { min_eig });
        }
        let mut factor = eig.eigenvectors.clone();
        for (j, &d) in eig.eigenvalues.iter().enumerate() {
            factor.column_mut(j).scale_mut(d.max(0.0).sqrt());
        }
        Ok(Self {
            size,
            entries,
            factor,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let g = nalgebra::DVector::from_fn(self.entries.len(), |_, _| rng.sample(StandardNormal));
        let values = &self.factor * g;
        let mut r = DMatrix::zeros(self.size, self.size);
        for (&(h, k), &v) in self.entries.iter().zip(values.iter()) {
            r[(h, k)] = v;
            r[(k, h)] = v;
        }
        r
    }

    /// Eigenvalues of `count` independent draws, each sorted descending.
    pub fn eigenvalue_tuples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 0x626c6b);
        (0..count)
            .map(|_| {
                let mut e: Vec<f64> = self
                    .draw(&mut rng)
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .collect();
                e.sort_by(|a, b| b.total_cmp(a));
                e
            })
            .collect()
    }
}

pub fn sample_block_matrix(params: &MultiSpikeParams, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = BlockSampler::new(params)?;
    Ok(sampler.draw(&mut stream_rng(seed, 0x626c6b)))
}
