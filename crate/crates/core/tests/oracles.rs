use ergodic::chain::{chain_rng, InitialDistParams};
use ergodic::eval::expected_log_target;
use ergodic::oracles::{
    ais_estimate, ess_weights, exact_gaussian_sample, log_mean_exp, rejection_sample, AisConfig,
};
use ergodic::targets::{make_target, BenchmarkId, TargetDensity};
use rand::Rng;
use rand_distr::StandardNormal;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

fn wide_p0() -> InitialDistParams {
    InitialDistParams::isotropic(2, 4.0)
}

#[test]
fn rejection_recovers_corr_gauss() {
    let t = make_target(BenchmarkId::CorrGauss);
    let b = rejection_sample(&t, 100_000, 1).unwrap().batch;
    let c = b.covariance();
    let (_, cov) = t.gaussian_moments().unwrap();
    for k in 0..4 {
        assert!((c[k] - cov[k]).abs() < 0.05, "{c:?}");
    }
    let (e, _) = expected_log_target(&b, &t).unwrap();
    assert!((e + 1.0).abs() < 0.02, "{e}");
}

#[test]
fn exact_sampler_expectation() {
    let t = make_target(BenchmarkId::CorrGauss);
    let b = exact_gaussian_sample(&t, 100_000, 2).unwrap();
    let (e, se) = expected_log_target(&b, &t).unwrap();
    assert!((e + 1.0).abs() < 3.0 * se, "{e} +- {se}");
}

#[test]
fn ais_normalizer_of_standard_gaussian() {
    let cfg = AisConfig {
        n_temps: 100,
        n_chains: 64,
        ..AisConfig::default()
    };
    let (log_z, w) =
        ais_estimate(&TargetDensity::standard_gaussian(2), &wide_p0(), &cfg, 3).unwrap();
    assert!((log_z - LOG_2PI).abs() < 0.05, "{log_z}");
    let ess = ess_weights(&w);
    assert!((1.0..=64.0).contains(&ess));
}

#[test]
fn two_temperatures_is_importance_sampling() {
    let t = make_target(BenchmarkId::CorrGauss);
    let p0 = wide_p0();
    let cfg = AisConfig {
        n_temps: 2,
        n_chains: 500,
        ..AisConfig::default()
    };
    let (log_z, _) = ais_estimate(&t, &p0, &cfg, 4).unwrap();
    let direct: Vec<f64> = (0..cfg.n_chains)
        .map(|c| {
            let mut rng = chain_rng(4, c);
            let eps: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let x: Vec<f64> = eps.iter().map(|e| 2.0 * e).collect();
            let log_q = -0.5 * x.iter().map(|v| v * v).sum::<f64>() / 4.0
                - (2.0 * std::f64::consts::PI * 4.0).ln();
            t.log_density(&x) - log_q
        })
        .collect();
    assert!((log_z - log_mean_exp(&direct)).abs() < 1e-12);
}

#[test]
fn ais_self_normalized_expectation_on_corr_gauss() {
    let t = make_target(BenchmarkId::CorrGauss);
    let cfg = AisConfig {
        n_temps: 100,
        n_chains: 4096,
        ..AisConfig::default()
    };
    let (_, w) = ais_estimate(&t, &wide_p0(), &cfg, 5).unwrap();
    let e = w.expectation(|x| t.log_density(x));
    assert!((e + 1.0).abs() < 0.05, "{e}");
}

#[test]
fn ais_under_target_scaling() {
    let t = make_target(BenchmarkId::BenchA);
    let c: f64 = 3.5;
    let cfg = AisConfig {
        n_temps: 50,
        n_chains: 32,
        ..AisConfig::default()
    };
    let (za, wa) = ais_estimate(&t, &wide_p0(), &cfg, 6).unwrap();
    let (zb, wb) = ais_estimate(&t.scaled(c), &wide_p0(), &cfg, 6).unwrap();
    assert!((zb - za - c.ln()).abs() < 1e-9);
    let f = |x: &[f64]| x[0] * x[0] + x[1];
    assert!((wa.expectation(f) - wb.expectation(f)).abs() < 1e-12);
    assert_eq!(wa.points, wb.points);
}

#[test]
fn more_temperatures_reduce_variance() {
    let t = make_target(BenchmarkId::CorrGauss);
    let var = |n_temps: usize| {
        let cfg = AisConfig {
            n_temps,
            n_chains: 64,
            ..AisConfig::default()
        };
        let z: Vec<f64> = (0..20)
            .map(|s| ais_estimate(&t, &wide_p0(), &cfg, 100 + s).unwrap().0)
            .collect();
        let m = z.iter().sum::<f64>() / 20.0;
        z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 19.0
    };
    let (few, many) = (var(10), var(200));
    assert!(many < few, "{many} !< {few}");
}
