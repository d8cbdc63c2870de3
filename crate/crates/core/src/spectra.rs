//! Fisher-matrix spectra via the symmetric similarity transform
//! `S2^{-1/2} S1 S2^{-1/2}`, the non-spiked sub-spectrum and the empirical
//! quantities built on it.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::Regime;
use crate::sampling::{gram, symmetrize, CovariancePair, SampleMatrices, S2_CONDITION_MAX};

/// Tolerated backward error `|S1 v - l S2 v| / (|S1| |v|)`.
pub const BACKWARD_ERROR_TOL: f64 = 1e-8;

/// `S2^{-1/2}` from the eigendecomposition of `S2`.
fn inverse_sqrt(s2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s2.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) || hi / lo > S2_CONDITION_MAX {
        return Err(Error::SingularS2 {
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &d) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(d.sqrt().recip());
    }
    let mut w = scaled * eig.eigenvectors.transpose();
    symmetrize(&mut w);
    Ok(w)
}

fn whitened(cov: &CovariancePair) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if cov.s1.shape() != cov.s2.shape() || !cov.s1.is_square() {
        return Err(Error::Dimension(
            "S1 and S2 must be square and equal-sized".into(),
        ));
    }
    let w = inverse_sqrt(&cov.s2)?;
    let mut a = &w * &cov.s1 * &w;
    symmetrize(&mut a);
    Ok((w, a))
}

fn descending_clamped(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().map(|x| x.max(0.0)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Eigenvalues of `S2^{-1} S1`, descending.
pub fn fisher_eigenvalues(cov: &CovariancePair) -> Result<Vec<f64>> {
    let (_, a) = whitened(cov)?;
    Ok(descending_clamped(
        a.symmetric_eigenvalues().iter().copied(),
    ))
}

/// Generalized eigenpairs of the pencil `(S1, S2)`, descending.
#[derive(Debug, Clone)]
pub struct FisherEigen {
    pub values: Vec<f64>,
    /// Column `j` solves `S1 v = values[j] S2 v`.
    pub vectors: DMatrix<f64>,
}

pub fn fisher_eigen(cov: &CovariancePair) -> Result<FisherEigen> {
    let (w, a) = whitened(cov)?;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let dim = eig.eigenvectors.nrows();
    let sorted = DMatrix::from_fn(dim, order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(FisherEigen {
        values,
        vectors: w * sorted,
    })
}

impl FisherEigen {
    /// `max_j |S1 v_j - l_j S2 v_j| / (|S1| |v_j|)` with spectral norms.
    pub fn backward_error(&self, cov: &CovariancePair) -> f64 {
        let s1_norm = cov.s1.symmetric_eigenvalues().amax();
        let s1v = &cov.s1 * &self.vectors;
        let s2v = &cov.s2 * &self.vectors;
        let scale = if s1_norm > 0.0 { s1_norm } else { 1.0 };
        (0..self.values.len())
            .map(|j| {
                let r = s1v.column(j) - s2v.column(j) * self.values[j];
                r.norm() / (scale * self.vectors.column(j).norm())
            })
            .fold(0.0, f64::max)
    }
}

/// Eigenvalues of `F0 = (Z2 Z2^T / n)^{-1} (X2 X2^T / T)`, descending.
pub fn f0_eigenvalues(s: &SampleMatrices, regime: &Regime) -> Result<Vec<f64>> {
    if regime.q() != s.q() {
        return Err(Error::Dimension(
            "sample blocks do not match regime q".into(),
        ));
    }
    let cov = CovariancePair {
        s1: gram(&s.x2(), regime.t() as f64),
        s2: gram(&s.z2(), regime.n() as f64),
    };
    fisher_eigenvalues(&cov)
}

/// Full spectrum, non-spiked sub-spectrum and the eigensolver's backward error.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub fisher_eigs: Vec<f64>,
    pub f0_eigs: Vec<f64>,
    pub residual: f64,
}

pub fn spectral_result(
    s: &SampleMatrices,
    cov: &CovariancePair,
    regime: &Regime,
) -> Result<SpectralResult> {
    let eig = fisher_eigen(cov)?;
    let residual = eig.backward_error(cov);
    Ok(SpectralResult {
        fisher_eigs: eig.values,
        f0_eigs: f0_eigenvalues(s, regime)?,
        residual,
    })
}

/// Empirical spectral distribution `F(x) = #{mu_j <= x} / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Esd {
    points: Vec<f64>,
}

impl Esd {
    pub fn new(eigs: &[f64]) -> Self {
        let mut points = eigs.to_vec();
        points.sort_by(f64::total_cmp);
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ascending support points.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.partition_point(|&p| p <= x) as f64 / self.points.len() as f64
    }

    /// `(1/m) sum_j (mu_j - z)^{-1}`.
    pub fn stieltjes(&self, z: f64) -> f64 {
        self.points.iter().map(|&mu| (mu - z).recip()).sum::<f64>() / self.points.len() as f64
    }
}

/// `(1/(p-q)) tr(I - F0 / theta)^{-1} = mean_j 1 / (1 - mu_j / theta)`.
pub fn empirical_m_tilde(f0_eigs: &[f64], theta: f64) -> Result<f64> {
    if f0_eigs.is_empty() {
        return Err(Error::Domain("empty spectrum".into()));
    }
    let top = f0_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(theta > top) {
        return Err(Error::Pole {
            at: theta,
            reason: "theta must exceed the largest F0 eigenvalue",
        });
    }
    let sum: f64 = f0_eigs.iter().map(|&mu| (1.0 - mu / theta).recip()).sum();
    Ok(sum / f0_eigs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pair(s1: DMatrix<f64>, s2: DMatrix<f64>) -> CovariancePair {
        CovariancePair { s1, s2 }
    }

    #[test]
    fn identity_pair() {
        let i = DMatrix::<f64>::identity(5, 5);
        let eigs = fisher_eigenvalues(&pair(i.clone(), i)).unwrap();
        assert!(eigs.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn diagonal_top_eigenvalue() {
        let mut s1 = DMatrix::<f64>::identity(6, 6);
        s1[(0, 0)] = 4.0;
        let eigs = fisher_eigenvalues(&pair(s1, DMatrix::identity(6, 6))).unwrap();
        assert_relative_eq!(eigs[0], 4.0, max_relative = 1e-14);
        assert_relative_eq!(eigs[1], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn singular_s2_rejected() {
        let mut s2 = DMatrix::<f64>::identity(3, 3);
        s2[(2, 2)] = 0.0;
        assert!(matches!(
            fisher_eigenvalues(&pair(DMatrix::identity(3, 3), s2)),
            Err(Error::SingularS2 { .. })
        ));
    }

    #[test]
    fn eigenvectors_satisfy_pencil() {
        let s1 = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s2 = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let cov = pair(s1, s2);
        let eig = fisher_eigen(&cov).unwrap();
        assert!(eig.backward_error(&cov) < BACKWARD_ERROR_TOL);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        let det_sum: f64 = eig.values.iter().sum();
        let trace = (cov.s2.clone().try_inverse().unwrap() * &cov.s1).trace();
        assert_relative_eq!(det_sum, trace, max_relative = 1e-12);
    }

    #[test]
    fn esd_step_function() {
        let esd = Esd::new(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(esd.cdf(0.5), 0.0);
        assert_eq!(esd.cdf(1.0), 0.25);
        assert_eq!(esd.cdf(2.0), 0.75);
        assert_eq!(esd.cdf(10.0), 1.0);
        assert_relative_eq!(esd.stieltjes(4.0), (-1.0 / 3.0 - 0.5 - 0.5 - 1.0) / 4.0);
    }

    #[test]
    fn m_tilde_single_term() {
        assert_relative_eq!(empirical_m_tilde(&[2.0], 4.0).unwrap(), 2.0);
    }

    #[test]
    fn m_tilde_pole() {
        assert!(matches!(
            empirical_m_tilde(&[2.0, 1.0], 2.0),
            Err(Error::Pole { .. })
        ));
        assert!(empirical_m_tilde(&[], 2.0).is_err());
    }

    #[test]
    fn m_tilde_large_theta_limit() {
        let mu = [3.0, 2.0, 1.0, 0.5];
        let mean = mu.iter().sum::<f64>() / 4.0;
        let theta = 1e6 * 3.0;
        let v = empirical_m_tilde(&mu, theta).unwrap();
        assert!((v - 1.0).abs() < 10.0 * mean / theta);
    }
}
