use nalgebra::DMatrix;
use proptest::prelude::*;
use spiked_fisher::limit_law::{solve_theta, wachter_stieltjes, wachter_support, MultiSpikeParams};
use spiked_fisher::model::{build_spike_model, EntryDist};
use spiked_fisher::spectra::empirical_m_tilde;

/// Orthogonal factor of a QR decomposition of the given entries.
fn orthogonal(q: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(q, q, &entries[..q * q]) + DMatrix::identity(q, q) * 0.1;
    let mut u = a.qr().q();
    // re-orthogonalize once to push the deviation well below 1e-12
    u = (&u * 1.5 - &u * u.transpose() * &u * 0.5).into_owned();
    u
}

/// Wachter density integrated with `x = a + (b - a)(1 - cos t)/2`, which
/// removes the square-root endpoint behaviour.
fn stieltjes_by_quadrature(z: f64, c: f64, y: f64) -> f64 {
    let (a, b) = wachter_support(c, y).unwrap();
    let steps = 20_000;
    let h = std::f64::consts::PI / steps as f64;
    let mut sum = 0.0;
    for k in 0..steps {
        let t = (k as f64 + 0.5) * h;
        let x = a + (b - a) * (1.0 - t.cos()) / 2.0;
        let dx = (b - a) * t.sin() / 2.0;
        let density = (1.0 - y) * ((b - x) * (x - a)).max(0.0).sqrt()
            / (2.0 * std::f64::consts::PI * x * (c + x * y));
        sum += density / (x - z) * dx * h;
    }
    sum
}

#[test]
fn closed_form_transform_matches_density_integral() {
    for &(c, y) in &[(1.0 / 3.0, 0.2), (0.5, 0.1), (0.2, 0.6), (0.9, 0.3)] {
        let (_, b) = wachter_support(c, y).unwrap();
        for z in [b + 0.01, b + 0.5, 2.0 * b, 10.0 * b] {
            let closed = wachter_stieltjes(z, c, y).unwrap();
            let numeric = stieltjes_by_quadrature(z, c, y);
            assert!(
                (closed - numeric).abs() <= 1e-6 * closed.abs(),
                "c={c} y={y} z={z}: {closed} vs {numeric}"
            );
        }
    }
}

#[test]
fn density_integrates_to_one() {
    let (a, b) = wachter_support(1.0 / 3.0, 0.2).unwrap();
    // z S(z) -> -1 as z -> infinity
    let z = 1e7 * b;
    assert!((z * stieltjes_by_quadrature(z, 1.0 / 3.0, 0.2) + 1.0).abs() < 1e-6);
    assert!(a > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma11_reconstruction(
        q in 1usize..6,
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        raw in prop::collection::vec(1.5f64..500.0, 6),
    ) {
        let mut spikes = raw[..q].to_vec();
        spikes.sort_by(|a, b| b.total_cmp(a));
        spikes.dedup();
        prop_assume!(spikes.len() == q);
        let u = orthogonal(q, &entries);
        let model = build_spike_model(&spikes, None, Some(u.clone()), EntryDist::Gaussian).unwrap();
        let expected = u.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spikes.clone())) * &u;
        let s = model.sigma11();
        let scale = spikes[0];
        prop_assert!((&s - &expected).amax() <= 1e-10 * scale);
        let root = model.sigma11_sqrt();
        prop_assert!((&root * &root - &s).amax() <= 1e-10 * scale);
    }

    #[test]
    fn m_tilde_decreases_in_theta(
        eigs in prop::collection::vec(0.01f64..5.0, 1..40),
        offset in 0.01f64..10.0,
        step in 0.01f64..10.0,
    ) {
        let top = eigs.iter().copied().fold(0.0, f64::max);
        let near = empirical_m_tilde(&eigs, top + offset).unwrap();
        let far = empirical_m_tilde(&eigs, top + offset + step).unwrap();
        prop_assert!(far < near);
        prop_assert!(far > 1.0);
    }

    #[test]
    fn theta_increases_with_lambda(lambda in 3.0f64..1e4, factor in 1.01f64..3.0) {
        let lo = solve_theta(lambda, 1.0 / 3.0, 0.2).unwrap().theta;
        let hi = solve_theta(lambda * factor, 1.0 / 3.0, 0.2).unwrap().theta;
        prop_assert!(hi > lo);
        prop_assert!(lo > lambda);
    }

    #[test]
    fn block_covariance_is_symmetric(
        n in 1usize..4,
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        dist in prop_oneof![Just(EntryDist::Gaussian), Just(EntryDist::Rademacher), Just(EntryDist::UniformSym)],
        idx in prop::collection::vec(0usize..3, 4),
    ) {
        let u = orthogonal(n + 1, &entries);
        let rows = u.rows(0, n).into_owned();
        let params = MultiSpikeParams::from_rows(0.2, 1.0 / 3.0, &rows, dist).unwrap();
        let [h1, k1, h2, k2] = [idx[0] % n, idx[1] % n, idx[2] % n, idx[3] % n];
        let v = params.cov(h1, k1, h2, k2).unwrap();
        let tol = 1e-12 * v.abs().max(1.0);
        prop_assert!((v - params.cov(h2, k2, h1, k1).unwrap()).abs() <= tol);
        prop_assert!((v - params.cov(k1, h1, h2, k2).unwrap()).abs() <= tol);
        prop_assert!((v - params.cov(h1, k1, k2, h2).unwrap()).abs() <= tol);
    }
}
