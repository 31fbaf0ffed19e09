use std::sync::Arc;

use steincc::cond_model::TrainConfig;
use steincc::gof::*;
use steincc::kernels::Kernel1D;
use steincc::rng::seeded;
use steincc::stats::{ks_uniform, mean};
use steincc::stein::CoordinateKernels;
use steincc::targets::{CorrelatedGaussian, DataSource, LaplaceProduct};

fn rbf() -> CoordinateKernels {
    Kernel1D::rbf(1.0).unwrap().into()
}

#[test]
fn bootstrap_replicates_are_centred() {
    let p = CorrelatedGaussian::standard(3);
    let x = LaplaceProduct::unit_variance(3).sample(400, &mut seeded(1));
    let h = compute_h(x.view(), &p, AuxSource::Conditional(&LaplaceProduct::unit_variance(3)), &rbf(), 5, &mut seeded(2)).unwrap();
    let reps = wild_bootstrap(&h, 4000, &mut seeded(3)).unwrap();
    let second: f64 = h.values().iter().map(|v| v * v).sum::<f64>() / (h.len() as f64).powi(2);
    // Each replicate has variance E[h²]/n; the mean of L of them has variance that over L.
    assert!(mean(&reps).abs() <= 4.0 * (second / 4000.0).sqrt());
    let var = reps.iter().map(|r| r * r).sum::<f64>() / 4000.0;
    assert!((var / second - 1.0).abs() < 0.1);
}

#[test]
fn exact_test_p_values_are_uniform_under_null() {
    let p = Arc::new(CorrelatedGaussian::equicorrelated(3, 0.5, 1.0).unwrap());
    let sc = GofScenario {
        source: p.clone(),
        target: p.clone(),
        method: TestMethod::KccsdExact { sampler: p.clone(), kernels: rbf(), n_y: 5 },
    };
    let est = estimate_power(&sc, 200, 200, 0.05, 300, &mut seeded(4)).unwrap();
    assert!(ks_uniform(&est.p_values).p_value > 0.01);
    assert!(est.power <= 0.1);
}

#[test]
fn approximate_test_holds_level_under_null() {
    let p = Arc::new(CorrelatedGaussian::equicorrelated(3, 0.5, 1.0).unwrap());
    let sc = GofScenario {
        source: p.clone(),
        target: p.clone(),
        method: TestMethod::KccsdApprox { cfg: TrainConfig::default(), kernels: rbf(), n_y: 5 },
    };
    let est = estimate_power(&sc, 300, 60, 0.05, 300, &mut seeded(5)).unwrap();
    // Binomial(60, 0.05) exceeds 9 with probability below 0.2%.
    assert!(est.power <= 9.0 / 60.0, "{}", est.power);
}

#[test]
fn exact_and_approximate_tests_detect_laplace_data() {
    let d = 5;
    let target = Arc::new(CorrelatedGaussian::standard(d));
    let q = Arc::new(LaplaceProduct::unit_variance(d));
    for method in [
        TestMethod::KccsdExact { sampler: q.clone(), kernels: rbf(), n_y: 5 },
        TestMethod::KccsdApprox { cfg: TrainConfig::default(), kernels: rbf(), n_y: 5 },
    ] {
        let sc = GofScenario { source: q.clone(), target: target.clone(), method };
        let est = estimate_power(&sc, 1000, 10, 0.05, 300, &mut seeded(6)).unwrap();
        assert!(est.power >= 0.9);
    }
}

#[test]
fn ksd_test_detects_low_dimensional_laplace_data() {
    let target = Arc::new(CorrelatedGaussian::standard(2));
    let q = Arc::new(LaplaceProduct::unit_variance(2));
    let sc = GofScenario { source: q, target, method: TestMethod::Ksd(KsdKernelRule::MedianRbf) };
    let est = estimate_power(&sc, 500, 10, 0.05, 300, &mut seeded(7)).unwrap();
    assert!(est.power >= 0.9);
}

#[test]
fn power_is_reproducible() {
    let p = Arc::new(CorrelatedGaussian::standard(2));
    let sc = GofScenario {
        source: p.clone(),
        target: p.clone(),
        method: TestMethod::KccsdExact { sampler: p.clone(), kernels: rbf(), n_y: 2 },
    };
    let a = estimate_power(&sc, 50, 8, 0.05, 100, &mut seeded(8)).unwrap();
    let b = estimate_power(&sc, 50, 8, 0.05, 100, &mut seeded(8)).unwrap();
    assert_eq!(a, b);
}
