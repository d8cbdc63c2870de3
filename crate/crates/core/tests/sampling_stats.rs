//! Statistical sanity checks on generated data and the resulting spectra.

use spiked_fisher::limit_law::wachter_support;
use spiked_fisher::model::{benchmark_spike_schedule, build_spike_model, EntryDist, Regime};
use spiked_fisher::montecarlo::{Experiment, ExperimentConfig, Mode};
use spiked_fisher::sampling::{draw_samples, form_covariances};
use spiked_fisher::spectra::{f0_eigenvalues, fisher_eigenvalues};

fn benchmark(dist: EntryDist) -> (spiked_fisher::model::SpikeModel, Regime) {
    let (q, spikes) = benchmark_spike_schedule(200).unwrap();
    let model = build_spike_model(&spikes, None, None, dist).unwrap();
    (model, Regime::new(200, 1000, 600, q).unwrap())
}

#[test]
fn entries_are_standardized() {
    for dist in [
        EntryDist::Gaussian,
        EntryDist::Rademacher,
        EntryDist::UniformSym,
    ] {
        let model = build_spike_model(&[], None, None, dist).unwrap();
        let regime = Regime::new(100, 400, 300, 0).unwrap();
        let s = draw_samples(&model, &regime, 8).unwrap();
        let count = s.z.len() as f64;
        let mean = s.z.iter().sum::<f64>() / count;
        let second = s.z.iter().map(|v| v * v).sum::<f64>() / count;
        let fourth = s.z.iter().map(|v| v.powi(4)).sum::<f64>() / count;
        assert!(mean.abs() < 5.0 / count.sqrt(), "{dist:?} mean {mean}");
        assert!((second - 1.0).abs() < 0.02, "{dist:?} second {second}");
        assert!(
            (fourth - dist.fourth_moment()).abs() < 0.1,
            "{dist:?} fourth {fourth}"
        );
    }
}

#[test]
fn noise_covariance_edge_and_trace() {
    let (model, regime) = benchmark(EntryDist::Gaussian);
    let cov = form_covariances(&draw_samples(&model, &regime, 21).unwrap()).unwrap();
    let top = cov.s2.symmetric_eigenvalues().max();
    let edge = (1.0 + 0.2f64.sqrt()).powi(2);
    assert!((top - edge).abs() < 0.1, "{top} vs {edge}");
    let trace = cov.s2.trace() / 200.0;
    assert!((trace - 1.0).abs() < 0.01, "{trace}");
}

#[test]
fn spiked_rows_carry_the_spike_covariance() {
    let (model, regime) = benchmark(EntryDist::Gaussian);
    let s = draw_samples(&model, &regime, 3).unwrap();
    let q = regime.q();
    let expected = model.sigma11_sqrt() * s.y.rows(0, q);
    assert!((s.x.rows(0, q) - expected).amax() < 1e-12);
    assert_eq!(s.x.rows(q, 200 - q), s.y.rows(q, 200 - q));
    let t = regime.t() as f64;
    let var1 = s.x.row(0).iter().map(|v| v * v).sum::<f64>() / t;
    let lambda1 = model.spikes()[0];
    assert!((var1 / lambda1 - 1.0).abs() < 0.2, "{var1}");
}

#[test]
fn bulk_top_sits_near_the_support_edge() {
    let (model, regime) = benchmark(EntryDist::Gaussian);
    let s = draw_samples(&model, &regime, 4).unwrap();
    let mu = f0_eigenvalues(&s, &regime).unwrap();
    let (_, b) = wachter_support(regime.c_tilde().value(), regime.y_tilde().value()).unwrap();
    assert!((mu[0] - b).abs() < 0.35, "{} vs {b}", mu[0]);
    assert_eq!(mu.len(), 200 - regime.q());
}

#[test]
fn largest_sample_spike_is_inflated() {
    let (model, regime) = benchmark(EntryDist::Gaussian);
    let cov = form_covariances(&draw_samples(&model, &regime, 5).unwrap()).unwrap();
    let eigs = fisher_eigenvalues(&cov).unwrap();
    let ratio = eigs[0] / model.spikes()[0];
    assert!(ratio > 1.0 && ratio < 1.6, "{ratio}");
}

#[test]
fn replication_records_are_reproducible() {
    let (model, regime) = benchmark(EntryDist::Rademacher);
    let config =
        ExperimentConfig::new(regime, model, 3, 11, Some(vec![1, 11]), Mode::CltSimple).unwrap();
    let a = Experiment::new(config.clone()).unwrap();
    let b = Experiment::new(config).unwrap();
    for r in 0..3 {
        assert_eq!(a.run_replication(r), b.run_replication(r));
    }
}
