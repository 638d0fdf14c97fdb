//! EMLBO estimation and constrained Adam training of the chain parameters.
//!
//! The objective is `E_{p_T}[log pi*] + E_{p_0}[log pi*] + H(P0)`. The
//! initial-distribution block is driven by the reparameterized ELBO(P0)
//! gradient, the transition parameters by the pathwise gradient through the
//! gated chain. A `P0` update that would put `H(P0)` at or below the floor is
//! dropped as a whole.

use std::time::Instant;

use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::chain::{
    entropy_of_log_std, flat_params, mix_seed, pathwise_gradient, run_chain, set_flat_params,
    ChainGradient, ChainNoise, ChainSpec,
};
use crate::error::{Error, Result};
use crate::eval::mean_and_stderr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam in ascent form.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Updates the moment estimates and returns the increment to add.
    pub fn ascent_step(&mut self, grad: &[f64]) -> Vec<f64> {
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(g, (m, v))| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
    /// `h`; `f64::NEG_INFINITY` disables the guard.
    pub entropy_floor: f64,
    pub stop_gradient: bool,
    pub seed: u64,
    pub step_size_init_range: (f64, f64),
    pub train_momentum_variance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            iterations: 50,
            adam: AdamConfig::default(),
            entropy_floor: f64::NEG_INFINITY,
            stop_gradient: false,
            seed: 0,
            step_size_init_range: (0.01, 0.025),
            train_momentum_variance: true,
        }
    }
}

impl TrainConfig {
    /// Every violated invariant, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let a = &self.adam;
        if !(a.beta1 > 0.0 && a.beta1 < 1.0) {
            v.push(format!("beta1 must lie in (0,1), got {}", a.beta1));
        }
        if !(a.beta2 > 0.0 && a.beta2 < 1.0) {
            v.push(format!("beta2 must lie in (0,1), got {}", a.beta2));
        }
        if !(a.learning_rate >= 0.0) {
            v.push(format!(
                "learning_rate must be non-negative, got {}",
                a.learning_rate
            ));
        }
        if !(a.epsilon > 0.0) {
            v.push(format!("epsilon must be positive, got {}", a.epsilon));
        }
        if self.batch_size < 2 {
            v.push(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        let (lo, hi) = self.step_size_init_range;
        if !(lo > 0.0 && hi >= lo) {
            v.push(format!(
                "step_size_init_range [{lo}, {hi}] must be positive and ordered"
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmlboEstimate {
    pub total: f64,
    pub e_log_target_final: f64,
    pub elbo_p0: f64,
}

/// Monte Carlo EMLBO from `n` sampled chains; `H(P0)` is analytic.
pub fn emlbo_estimate(spec: &ChainSpec, n: usize, seed: u64) -> Result<EmlboEstimate> {
    if n < 2 {
        return Err(Error::InvalidParameter("N must be at least 2".into()));
    }
    let run = run_chain(spec, n, seed, false)?;
    let e_final = mean(run.final_batch.rows().map(|x| spec.target.log_density(x)));
    let d = spec.dim();
    let e_init = mean((0..n).map(|i| {
        let noise = ChainNoise::draw(seed, i, d, 0);
        spec.target.log_density(&spec.p0.transform(&noise.eps))
    }));
    let elbo_p0 = e_init + spec.p0.entropy();
    Ok(EmlboEstimate {
        total: e_final + elbo_p0,
        e_log_target_final: e_final,
        elbo_p0,
    })
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    s / c as f64
}

/// Reparameterized `d/d(mean, log_std) log pi*(mean + exp(log_std) * eps)`.
fn p0_pathwise(spec: &ChainSpec, eps: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = spec.dim();
    let tape = Tape::with_capacity(16 * d * d + 32);
    let mean = tape.inputs(&spec.p0.mean);
    let log_std = tape.inputs(&spec.p0.log_std);
    let x: Vec<_> = (0..d)
        .map(|i| mean[i] + log_std[i].exp() * eps[i])
        .collect();
    let out = spec.target.log_density(&x);
    let g = tape.gradient(out)?;
    Ok((g[..d].to_vec(), g[d..].to_vec()))
}

/// Gradient of the ELBO of `P0`: MC average of the reparameterized integrand
/// plus `dH/dlog_std = 1`.
pub fn grad_elbo_p0(spec: &ChainSpec, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidParameter("N must be at least 2".into()));
    }
    let d = spec.dim();
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| p0_pathwise(spec, &ChainNoise::draw(seed, i, d, 0).eps))
        .collect::<Result<_>>()?;
    let mut gm = vec![0.0; d];
    let mut gs = vec![0.0; d];
    for (m, s) in &per {
        for i in 0..d {
            gm[i] += m[i];
            gs[i] += s[i];
        }
    }
    let nf = n as f64;
    Ok((
        gm.iter().map(|v| v / nf).collect(),
        gs.iter().map(|v| v / nf + 1.0).collect(),
    ))
}

/// Averaged pathwise gradient of `E_{p_T}[log pi*(x_T)]` at fixed noise.
pub fn grad_chain_params(
    spec: &ChainSpec,
    n: usize,
    seed: u64,
    stop_gradient: bool,
) -> Result<ChainGradient> {
    Ok(batch_estimate(spec, n, seed, stop_gradient, false)?.chain_gradient)
}

/// Everything one training iteration needs from a batch of chains.
#[derive(Debug, Clone)]
pub struct BatchEstimate {
    pub e_log_target_final: f64,
    pub e_log_target_initial: f64,
    /// Standard error of the per-chain `log pi*(x_T) + log pi*(x_0)`.
    pub emlbo_std_error: f64,
    pub chain_gradient: ChainGradient,
    /// ELBO(P0) gradient without the entropy term, when requested.
    pub p0_gradient: Option<(Vec<f64>, Vec<f64>)>,
}

/// Runs `n` chains under common noise derived from `seed`, reducing in chain
/// order so the result does not depend on the worker count.
pub fn batch_estimate(
    spec: &ChainSpec,
    n: usize,
    seed: u64,
    stop_gradient: bool,
    with_p0_gradient: bool,
) -> Result<BatchEstimate> {
    if n < 2 {
        return Err(Error::InvalidParameter("N must be at least 2".into()));
    }
    let d = spec.dim();
    let t_len = spec.chain_length();
    let per: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let noise = ChainNoise::draw(seed, i, d, t_len);
            let s = pathwise_gradient(spec, &noise, stop_gradient)?;
            let p0 = if with_p0_gradient {
                Some(p0_pathwise(spec, &noise.eps)?)
            } else {
                None
            };
            Ok((s, p0))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut flat = vec![0.0; ChainGradient::zeros(d, t_len).len()];
    let mut e_final = 0.0;
    let mut e_init = 0.0;
    let per_chain: Vec<f64> = per
        .iter()
        .map(|(s, _)| s.log_target_final + s.log_target_initial)
        .collect();
    let mut gm = vec![0.0; d];
    let mut gs = vec![0.0; d];
    for (s, p0) in &per {
        for (a, g) in flat.iter_mut().zip(s.gradient.to_flat()) {
            *a += g;
        }
        e_final += s.log_target_final;
        e_init += s.log_target_initial;
        if let Some((m, l)) = p0 {
            for i in 0..d {
                gm[i] += m[i];
                gs[i] += l[i];
            }
        }
    }
    let nf = n as f64;
    flat.iter_mut().for_each(|v| *v /= nf);
    Ok(BatchEstimate {
        e_log_target_final: e_final / nf,
        e_log_target_initial: e_init / nf,
        emlbo_std_error: mean_and_stderr(&per_chain).1,
        chain_gradient: ChainGradient::from_flat(&flat, d, t_len),
        p0_gradient: with_p0_gradient.then(|| {
            (
                gm.iter().map(|v| v / nf).collect(),
                gs.iter().map(|v| v / nf).collect(),
            )
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub emlbo: f64,
    pub emlbo_std_error: f64,
    pub e_log_target_final: f64,
    pub elbo_p0: f64,
    pub entropy_p0: f64,
    pub guard_triggered: bool,
    pub step_sizes: Vec<f64>,
    pub wall_ms: f64,
    pub gradient_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

impl TrainReport {
    pub fn guard_events(&self) -> usize {
        self.records.iter().filter(|r| r.guard_triggered).count()
    }

    pub fn to_csv(&self) -> String {
        let t_len = self.records.first().map_or(0, |r| r.step_sizes.len());
        let mut out = String::from(
            "iteration,emlbo,emlbo_stderr,e_logpi_T,elbo_p0,entropy_p0,guard_triggered,wall_ms,gradient_ms",
        );
        for t in 0..t_len {
            out.push_str(&format!(",step_size_{}", t + 1));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3},{:.3}",
                r.iteration,
                r.emlbo,
                r.emlbo_std_error,
                r.e_log_target_final,
                r.elbo_p0,
                r.entropy_p0,
                u8::from(r.guard_triggered),
                r.wall_ms,
                r.gradient_ms
            ));
            for s in &r.step_sizes {
                out.push_str(&format!(",{s}"));
            }
            out.push('\n');
        }
        out
    }
}

fn is_numerical(e: &Error) -> bool {
    match e {
        Error::NonFinite { .. } | Error::LeapfrogDiverged { .. } => true,
        Error::ChainFailed { source, .. } => is_numerical(source),
        _ => false,
    }
}

const MAX_RETRIES: u64 = 3;

/// Constrained stochastic-gradient ascent on the EMLBO.
pub fn train(spec: &ChainSpec, config: &TrainConfig) -> Result<(ChainSpec, TrainReport)> {
    config.validate()?;
    let h0 = spec.p0.entropy();
    if h0 <= config.entropy_floor {
        return Err(Error::EntropyConstraint {
            entropy: h0,
            floor: config.entropy_floor,
        });
    }
    let d = spec.dim();
    let t_len = spec.chain_length();
    let mut spec = spec.clone();
    let mut params = flat_params(&spec);
    let mut adam = Adam::new(params.len(), config.adam);
    let mut report = TrainReport::default();

    for iteration in 0..config.iterations {
        let started = Instant::now();
        let mut attempt = 0;
        let est = loop {
            let seed = mix_seed(config.seed, iteration as u64, attempt);
            match batch_estimate(&spec, config.batch_size, seed, config.stop_gradient, true) {
                Ok(e) if e.chain_gradient.is_finite() => break e,
                Ok(_) if attempt < MAX_RETRIES => attempt += 1,
                Err(e) if is_numerical(&e) && attempt < MAX_RETRIES => {
                    log::warn!("iteration {iteration}: {e}; retrying with a fresh seed");
                    attempt += 1;
                }
                Ok(_) => {
                    return Err(Error::TrainingFailed {
                        iteration,
                        source: Box::new(Error::NonFinite {
                            op_index: usize::MAX,
                            quantity: "gradient",
                        }),
                    })
                }
                Err(e) => {
                    return Err(Error::TrainingFailed {
                        iteration,
                        source: Box::new(e),
                    })
                }
            }
        };
        let gradient_ms = started.elapsed().as_secs_f64() * 1e3;

        let entropy = spec.p0.entropy();
        let elbo_p0 = est.e_log_target_initial + entropy;

        // assemble the ascent direction in flat layout
        let mut grad = est.chain_gradient.to_flat();
        let (gm, gs) = est.p0_gradient.expect("requested");
        grad[..d].copy_from_slice(&gm);
        for i in 0..d {
            grad[d + i] = gs[i] + 1.0;
        }
        if !config.train_momentum_variance {
            for t in 0..t_len {
                let off = 2 * d + t * (1 + d) + 1;
                grad[off..off + d].iter_mut().for_each(|g| *g = 0.0);
            }
        }
        let delta = adam.ascent_step(&grad);

        let proposed_log_std: Vec<f64> = (0..d).map(|i| params[d + i] + delta[d + i]).collect();
        let guard_triggered = entropy_of_log_std(&proposed_log_std) <= config.entropy_floor;
        let start = if guard_triggered { 2 * d } else { 0 };
        for k in start..params.len() {
            params[k] += delta[k];
        }
        if !config.train_momentum_variance {
            // leave momentum variances bit-exact
            for t in 0..t_len {
                let off = 2 * d + t * (1 + d) + 1;
                params[off..off + d].copy_from_slice(spec.steps[t].log_momentum_variance());
            }
        }

        report.records.push(IterationRecord {
            iteration,
            emlbo: est.e_log_target_final + elbo_p0,
            emlbo_std_error: est.emlbo_std_error,
            e_log_target_final: est.e_log_target_final,
            elbo_p0,
            entropy_p0: entropy,
            guard_triggered,
            step_sizes: spec.step_sizes(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            gradient_ms,
        });
        set_flat_params(&mut spec, &params);
    }
    Ok((spec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::InitialDistParams;
    use crate::targets::{make_target, BenchmarkId};

    fn corr_spec(t: usize) -> ChainSpec {
        ChainSpec::with_random_steps(
            make_target(BenchmarkId::CorrGauss),
            InitialDistParams::isotropic(2, 3.0),
            t,
            5,
            (0.01, 0.025),
            2.812_23,
            3,
        )
        .unwrap()
    }

    #[test]
    fn adam_first_step_is_learning_rate_times_sign() {
        let mut a = Adam::new(3, AdamConfig::default());
        let d = a.ascent_step(&[2.0, -0.5, 0.0]);
        assert!((d[0] - 0.01).abs() < 1e-9);
        assert!((d[1] + 0.01).abs() < 1e-9);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn config_violations_are_listed() {
        let mut c = TrainConfig::default();
        c.adam.beta1 = 1.0;
        c.adam.beta2 = 0.0;
        c.batch_size = 1;
        let v = c.violations();
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn entropy_gradient_is_one_per_log_std() {
        let spec = corr_spec(0);
        let (_, gs) = grad_elbo_p0(&spec, 64, 1).unwrap();
        let (_, raw) = batch_estimate(&spec, 64, 1, false, true)
            .unwrap()
            .p0_gradient
            .unwrap();
        for i in 0..2 {
            assert!((gs[i] - raw[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let spec = corr_spec(3);
        let cfg = TrainConfig {
            iterations: 4,
            batch_size: 16,
            adam: AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
            entropy_floor: 2.812_23,
            ..TrainConfig::default()
        };
        let (trained, report) = train(&spec, &cfg).unwrap();
        assert_eq!(trained, spec);
        assert_eq!(report.records.len(), 4);
        assert!(report.records.iter().all(|r| r.emlbo.is_finite()));
    }

    #[test]
    fn training_rejects_initial_constraint_violation() {
        let spec = corr_spec(1);
        let cfg = TrainConfig {
            entropy_floor: 10.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&spec, &cfg),
            Err(Error::EntropyConstraint { .. })
        ));
    }

    #[test]
    fn report_csv_shape() {
        let spec = corr_spec(2);
        let cfg = TrainConfig {
            iterations: 2,
            batch_size: 8,
            entropy_floor: 2.812_23,
            ..TrainConfig::default()
        };
        let (_, report) = train(&spec, &cfg).unwrap();
        let csv = report.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ends_with("step_size_1,step_size_2"));
        assert_eq!(lines[1].split(',').count(), 11);
    }
}
