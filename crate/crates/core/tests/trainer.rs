use ergodic::chain::{
    flat_params, pathwise_gradient, set_flat_params, ChainNoise, ChainSpec, InitialDistParams,
};
use ergodic::targets::{make_target, BenchmarkId, TargetDensity};
use ergodic::trainer::{
    batch_estimate, emlbo_estimate, grad_chain_params, grad_elbo_p0, train, AdamConfig, TrainConfig,
};

mod common;
use common::finite_difference;

const H_CORR: f64 = 2.812_23;

fn corr_spec(t: usize, steps: (f64, f64), seed: u64) -> ChainSpec {
    ChainSpec::with_random_steps(
        make_target(BenchmarkId::CorrGauss),
        InitialDistParams::isotropic(2, 3.0),
        t,
        5,
        steps,
        f64::NEG_INFINITY,
        seed,
    )
    .unwrap()
}

fn assert_relative(a: f64, b: f64, rel: f64, what: &str) {
    let scale = a.abs().max(b.abs()).max(1e-6);
    assert!((a - b).abs() <= rel * scale, "{what}: {a} vs {b}");
}

#[test]
fn elbo_at_exact_target_is_log_normalizer() {
    let target = TargetDensity::standard_gaussian(2);
    let spec = ChainSpec::new(
        target,
        InitialDistParams::isotropic(2, 1.0),
        vec![],
        f64::NEG_INFINITY,
    )
    .unwrap();
    let e = emlbo_estimate(&spec, 100_000, 1).unwrap();
    let log_2pi = (2.0 * std::f64::consts::PI).ln();
    assert!((e.elbo_p0 - log_2pi).abs() < 0.02, "{e:?}");
    assert!((e.total - (log_2pi - 1.0)).abs() < 0.03, "{e:?}");
}

#[test]
fn corr_gauss_elbo_of_wide_initial() {
    let spec = corr_spec(0, (0.01, 0.025), 0);
    // per-sample sd of log pi* under this P0 is about 7.4; 10^6 draws put the
    // tolerance at 4 standard errors
    let e = emlbo_estimate(&spec, 1_000_000, 2).unwrap();
    assert!((e.elbo_p0 - (-1.747_72)).abs() < 0.03, "{e:?}");
}

#[test]
fn elbo_gradient_vanishes_at_target() {
    let spec = ChainSpec::new(
        TargetDensity::standard_gaussian(2),
        InitialDistParams::isotropic(2, 1.0),
        vec![],
        f64::NEG_INFINITY,
    )
    .unwrap();
    let n = 4096;
    let (gm, _) = grad_elbo_p0(&spec, n, 3).unwrap();
    for g in gm {
        assert!(g.abs() < 3.0 / (n as f64).sqrt(), "{g}");
    }
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let spec = corr_spec(0, (0.01, 0.025), 0);
    let (n, seed, h) = (64, 5, 1e-5);
    let (gm, gs) = grad_elbo_p0(&spec, n, seed).unwrap();
    let analytic: Vec<f64> = gm.into_iter().chain(gs).collect();
    let base = flat_params(&spec);
    for k in 0..4 {
        let eval = |delta: f64| {
            let mut s = spec.clone();
            let mut p = base.clone();
            p[k] += delta;
            set_flat_params(&mut s, &p);
            emlbo_estimate(&s, n, seed).unwrap().elbo_p0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert_relative(analytic[k], fd, 1e-4, &format!("coordinate {k}"));
    }
}

#[test]
fn chain_gradient_matches_finite_differences() {
    let mut checked = 0;
    let mut skipped = 0;
    for t in 1..=3 {
        let spec = corr_spec(t, (0.1, 0.5), t as u64);
        for c in 0..20 {
            let noise = ChainNoise::draw(17, c, 2, t);
            let g = pathwise_gradient(&spec, &noise, false)
                .unwrap()
                .gradient
                .to_flat();
            for (k, fd) in finite_difference(&spec, &noise, 1e-6)
                .into_iter()
                .enumerate()
            {
                match fd {
                    Some(fd) => {
                        assert_relative(g[k], fd, 1e-4, &format!("T={t} chain {c} coord {k}"));
                        checked += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    assert!(
        checked > 10 * skipped.max(1),
        "{checked} checked, {skipped} skipped"
    );
}

#[test]
fn rejected_transition_has_no_step_gradient() {
    let spec = corr_spec(1, (0.1, 0.5), 1);
    for c in 0..10 {
        let mut noise = ChainNoise::draw(3, c, 2, 1);
        noise.steps[0].u = 1.0;
        let g = pathwise_gradient(&spec, &noise, false).unwrap().gradient;
        assert_eq!(g.log_step_size[0], 0.0);
        assert!(g.log_momentum_variance[0].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn stop_gradient_is_exact_for_one_transition() {
    let spec = corr_spec(1, (0.1, 0.5), 2);
    let full = grad_chain_params(&spec, 32, 4, false).unwrap();
    let sg = grad_chain_params(&spec, 32, 4, true).unwrap();
    assert_relative(full.log_step_size[0], sg.log_step_size[0], 1e-10, "step");
    for (a, b) in full.log_momentum_variance[0]
        .iter()
        .zip(&sg.log_momentum_variance[0])
    {
        assert_relative(*a, *b, 1e-10, "momentum variance");
    }
}

#[test]
fn scaling_target_shifts_objective_and_keeps_gradients() {
    let spec = corr_spec(3, (0.1, 0.5), 3);
    let mut scaled = spec.clone();
    let c: f64 = 7.0;
    scaled.target = spec.target.scaled(c);
    let a = batch_estimate(&spec, 16, 9, false, true).unwrap();
    let b = batch_estimate(&scaled, 16, 9, false, true).unwrap();
    // both expectations in the objective carry log pi*
    let shift = (b.e_log_target_final + b.e_log_target_initial)
        - (a.e_log_target_final + a.e_log_target_initial);
    assert!((shift - 2.0 * c.ln()).abs() < 1e-10);
    for (x, y) in a
        .chain_gradient
        .to_flat()
        .iter()
        .zip(b.chain_gradient.to_flat())
    {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn guard_keeps_entropy_above_floor() {
    let spec = ChainSpec::with_random_steps(
        make_target(BenchmarkId::CorrGauss),
        InitialDistParams::isotropic(2, 3.0),
        3,
        5,
        (0.01, 0.025),
        3.9,
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        iterations: 30,
        batch_size: 32,
        entropy_floor: 3.9,
        adam: AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let (trained, report) = train(&spec, &cfg).unwrap();
    assert!(report.guard_events() > 0);
    assert!(report.records.iter().all(|r| r.entropy_p0 > 3.9));
    assert!(trained.p0.entropy() > 3.9);
}

#[test]
fn training_does_not_lose_objective() {
    let spec = ChainSpec::with_random_steps(
        make_target(BenchmarkId::CorrGauss),
        InitialDistParams::isotropic(2, 3.0),
        9,
        5,
        (0.01, 0.025),
        H_CORR,
        4,
    )
    .unwrap();
    let cfg = TrainConfig {
        entropy_floor: H_CORR,
        seed: 4,
        ..TrainConfig::default()
    };
    let (_, report) = train(&spec, &cfg).unwrap();
    assert_eq!(report.guard_events(), 0);
    let r = &report.records;
    let window = 10;
    let trailing: Vec<(f64, f64)> = (window..=r.len())
        .map(|end| {
            let w = &r[end - window..end];
            let m = w.iter().map(|x| x.emlbo).sum::<f64>() / window as f64;
            let se =
                (w.iter().map(|x| x.emlbo_std_error.powi(2)).sum::<f64>()).sqrt() / window as f64;
            (m, se)
        })
        .collect();
    for pair in trailing.windows(2) {
        let ((m0, s0), (m1, s1)) = (pair[0], pair[1]);
        assert!(m1 >= m0 - 2.0 * (s0 * s0 + s1 * s1).sqrt(), "{m0} -> {m1}");
    }
}

#[test]
fn training_is_thread_count_independent() {
    let spec = corr_spec(4, (0.05, 0.2), 5);
    let cfg = TrainConfig {
        iterations: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let a = train(&spec, &cfg).unwrap().0;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = pool.install(|| train(&spec, &cfg).unwrap().0);
    assert_eq!(a, b);
}
