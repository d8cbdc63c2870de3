//! Data matrices `Y` (p x T), `Z` (p x n), `X = Sigma1^{1/2} Y` and the two
//! sample covariance matrices.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{EntryDist, Regime, SpikeModel};

/// Condition-number ceiling above which `S2` is treated as singular.
pub const S2_CONDITION_MAX: f64 = 1e12;

const Y_STREAM: u64 = 0;
const Z_STREAM: u64 = 1;

/// Seed of replication `r`, drawn from stream `r` of a ChaCha generator keyed
/// by `master`. No replication depends on any other.
pub fn replication_seed(master: u64, r: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r);
    rng.next_u64()
}

/// Generator for an independent stream keyed by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn draw_entry<R: Rng + ?Sized>(dist: EntryDist, rng: &mut R) -> f64 {
    match dist {
        EntryDist::Gaussian => rng.sample(StandardNormal),
        EntryDist::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        EntryDist::UniformSym => {
            let h = 3f64.sqrt();
            rng.random_range(-h..h)
        }
    }
}

fn random_matrix(rows: usize, cols: usize, dist: EntryDist, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| draw_entry(dist, rng))
}

/// One draw of the two data arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrices {
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub seed: u64,
    q: usize,
}

impl SampleMatrices {
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn y1(&self) -> DMatrixView<'_, f64> {
        self.y.rows(0, self.q)
    }
    pub fn y2(&self) -> DMatrixView<'_, f64> {
        self.y.rows(self.q, self.y.nrows() - self.q)
    }
    pub fn z1(&self) -> DMatrixView<'_, f64> {
        self.z.rows(0, self.q)
    }
    pub fn z2(&self) -> DMatrixView<'_, f64> {
        self.z.rows(self.q, self.z.nrows() - self.q)
    }
    pub fn x1(&self) -> DMatrixView<'_, f64> {
        self.x.rows(0, self.q)
    }
    pub fn x2(&self) -> DMatrixView<'_, f64> {
        self.x.rows(self.q, self.x.nrows() - self.q)
    }
}

/// Draws `Y` and `Z` with iid entries from the model's distribution.
///
/// `Y` and `Z` come from separate streams of a generator keyed by `seed`, so
/// the result is a pure function of `(model, regime, seed)`.
pub fn draw_samples(model: &SpikeModel, regime: &Regime, seed: u64) -> Result<SampleMatrices> {
    if model.q() != regime.q() {
        return Err(Error::Dimension(format!(
            "model has {} spikes but regime q = {}",
            model.q(),
            regime.q()
        )));
    }
    let (p, n, t, q) = (regime.p(), regime.n(), regime.t(), regime.q());
    let y = random_matrix(p, t, model.dist(), &mut stream_rng(seed, Y_STREAM));
    let z = random_matrix(p, n, model.dist(), &mut stream_rng(seed, Z_STREAM));

    let mut x = y.clone();
    if q > 0 {
        let x1 = model.sigma11_sqrt() * y.rows(0, q);
        x.rows_mut(0, q).copy_from(&x1);
    }
    Ok(SampleMatrices { y, z, x, seed, q })
}

/// `S1 = X X^T / T` and `S2 = Z Z^T / n`, both symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
}

/// `m m^T / scale`, symmetrized as `(M + M^T) / 2`.
pub fn gram(m: &DMatrixView<'_, f64>, scale: f64) -> DMatrix<f64> {
    let mut g = m * m.transpose();
    g /= scale;
    symmetrize(&mut g);
    g
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cheap condition estimate from the Cholesky factor: `(max L_ii / min L_ii)^2`.
///
/// Returns `None` when the factorization fails.
pub fn cholesky_condition_estimate(m: &DMatrix<f64>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let diag = (0..m.nrows()).map(|i| l[(i, i)]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(d), hi.max(d))
    });
    Some((hi / lo).powi(2))
}

pub fn form_covariances(s: &SampleMatrices) -> Result<CovariancePair> {
    let t = s.x.ncols() as f64;
    let n = s.z.ncols() as f64;
    let s1 = gram(&s.x.as_view(), t);
    let s2 = gram(&s.z.as_view(), n);
    match cholesky_condition_estimate(&s2) {
        Some(cond) if cond <= S2_CONDITION_MAX => Ok(CovariancePair { s1, s2 }),
        Some(cond) => Err(Error::SingularS2 { condition: cond }),
        None => Err(Error::SingularS2 {
            condition: f64::INFINITY,
        }),
    }
}

const MATRIX_MAGIC: &[u8; 4] = b"SFLM";

/// Writes `"SFLM"`, `u32` rows, `u32` cols (little endian), then row-major `f64`s.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows())
        .map_err(|_| Error::Dimension("matrix too large for dump".into()))?;
    let cols = u32::try_from(m.ncols())
        .map_err(|_| Error::Dimension("matrix too large for dump".into()))?;
    let mut buf = Vec::with_capacity(12 + 8 * m.len());
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()),
        )
    };
    if buf.len() < 12 || &buf[0..4] != MATRIX_MAGIC {
        return Err(bad("missing SFLM header"));
    }
    let rows = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() != 12 + 8 * rows * cols {
        return Err(bad("payload length does not match header"));
    }
    let values: Vec<f64> = buf[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}
