//! The ergodic approximation: a diagonal-Gaussian initial distribution pushed
//! through `T` HMC transitions, each with its own hyperparameters.

use std::f64::consts::{E, PI};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::{Scalar, Tape, Var};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::hmc::{gated_step, HmcStepParams, KernelParams, StepNoise, Workspace};
use crate::kv::KvMap;
use crate::targets::{make_target_by_name, TargetDensity};

/// Parameters of the diagonal-Gaussian initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl InitialDistParams {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: log_std.len(),
            });
        }
        let p = Self { mean, log_std };
        if !p.entropy().is_finite() {
            return Err(Error::InvalidParameter(
                "initial entropy is not finite".into(),
            ));
        }
        Ok(p)
    }

    /// `N(0, variance * I)`.
    pub fn isotropic(dim: usize, variance: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.5 * variance.ln(); dim],
        }
    }

    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        Self::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Closed-form entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy_of_log_std(&self.log_std)
    }

    /// `x = mean + exp(log_std) * eps`
    pub fn transform(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, s), e)| m + s.exp() * e)
            .collect()
    }

    /// Normalized log density.
    pub fn log_density<S: Scalar>(&self, x: &[S]) -> S {
        let d = self.dim() as f64;
        let mut acc = S::constant(-0.5 * d * (2.0 * PI).ln() - self.log_std.iter().sum::<f64>());
        for i in 0..self.dim() {
            let z = (x[i] - self.mean[i]) * (-self.log_std[i]).exp();
            acc = acc - z * z * 0.5;
        }
        acc
    }

    pub fn grad_log_density_into<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        for i in 0..self.dim() {
            out[i] = -(x[i] - self.mean[i]) * (-2.0 * self.log_std[i]).exp();
        }
    }
}

/// `H = sum log_std + d/2 log(2 pi e)`
pub fn entropy_of_log_std(log_std: &[f64]) -> f64 {
    log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (2.0 * PI * E).ln()
}

pub fn entropy_p0(p0: &InitialDistParams) -> f64 {
    p0.entropy()
}

/// Initial distribution, per-step kernels, target and entropy floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub target: TargetDensity,
    pub p0: InitialDistParams,
    pub steps: Vec<HmcStepParams>,
    pub entropy_floor: f64,
}

impl ChainSpec {
    /// Validates dimensions and `H(P0) > h`. Pass `f64::NEG_INFINITY` as the
    /// floor to run without the constraint.
    pub fn new(
        target: TargetDensity,
        p0: InitialDistParams,
        steps: Vec<HmcStepParams>,
        entropy_floor: f64,
    ) -> Result<Self> {
        let d = target.dim();
        if p0.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p0.dim(),
            });
        }
        if let Some(s) = steps.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
        let h0 = p0.entropy();
        if h0 <= entropy_floor {
            return Err(Error::EntropyConstraint {
                entropy: h0,
                floor: entropy_floor,
            });
        }
        Ok(Self {
            target,
            p0,
            steps,
            entropy_floor,
        })
    }

    /// `T` transitions with unit momentum variance and step sizes drawn
    /// uniformly from `step_range`.
    pub fn with_random_steps(
        target: TargetDensity,
        p0: InitialDistParams,
        chain_length: usize,
        leapfrog_steps: usize,
        step_range: (f64, f64),
        entropy_floor: f64,
        seed: u64,
    ) -> Result<Self> {
        let (lo, hi) = step_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidParameter(format!(
                "step size range [{lo}, {hi}] must be positive and ordered"
            )));
        }
        let d = target.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57e9);
        let steps = (0..chain_length)
            .map(|_| {
                let eps = if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                };
                HmcStepParams::new(eps, vec![1.0; d], leapfrog_steps)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(target, p0, steps, entropy_floor)
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn chain_length(&self) -> usize {
        self.steps.len()
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.step_size()).collect()
    }

    /// Copy truncated to the first `t` transitions.
    pub fn prefix(&self, t: usize) -> Self {
        let mut s = self.clone();
        s.steps.truncate(t);
        s
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("target", self.target.name());
        m.set("dim", self.dim());
        m.set("chain_length", self.chain_length());
        m.set("entropy_floor", self.entropy_floor);
        m.set_list("p0.mean", &self.p0.mean);
        m.set_list("p0.log_std", &self.p0.log_std);
        for (t, s) in self.steps.iter().enumerate() {
            m.set(&format!("step.{t}.log_step_size"), s.log_step_size());
            m.set_list(
                &format!("step.{t}.log_momentum_variance"),
                s.log_momentum_variance(),
            );
            m.set(&format!("step.{t}.leapfrog_steps"), s.leapfrog_steps());
        }
        m
    }

    /// Inverse of [`ChainSpec::to_kv`]; the target is resolved from the registry.
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let target = make_target_by_name(&m.get::<String>("target")?)?;
        let t: usize = m.get("chain_length")?;
        let p0 = InitialDistParams::new(m.get_list("p0.mean")?, m.get_list("p0.log_std")?)?;
        let steps = (0..t)
            .map(|i| {
                Ok(HmcStepParams::from_log(
                    m.get(&format!("step.{i}.log_step_size"))?,
                    m.get_list(&format!("step.{i}.log_momentum_variance"))?,
                    m.get(&format!("step.{i}.leapfrog_steps"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(target, p0, steps, m.get("entropy_floor")?)
    }
}

/// `n` independent draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<f64>,
    pub dim: usize,
    pub seed: u64,
    pub chain_length: usize,
}

impl SampleBatch {
    pub fn new(points: Vec<f64>, dim: usize, seed: u64, chain_length: usize) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim), "ragged batch");
        Self {
            points,
            dim,
            seed,
            chain_length,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter().map(|v| v / n).collect()
    }

    /// Sample covariance (divisor `n - 1`), row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mean = self.column_means();
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        c.iter().map(|v| v / denom).collect()
    }

    pub fn header(&self) -> String {
        (0..self.dim)
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes the CSV and a `<path>.meta` sidecar with seed, `T` and, when
    /// given, the chain parameters.
    pub fn write_csv(&self, path: &Path, spec: Option<&ChainSpec>) -> Result<()> {
        fs::File::create(path)?.write_all(self.to_csv().as_bytes())?;
        let mut meta = spec.map(ChainSpec::to_kv).unwrap_or_default();
        meta.set("seed", self.seed);
        meta.set("chain_length", self.chain_length);
        meta.set("n", self.len());
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".meta");
        fs::write(sidecar, meta.render())?;
        Ok(())
    }

    pub fn from_csv(text: &str, seed: u64, chain_length: usize) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let dim = header.split(',').filter(|h| h.starts_with('x')).count();
        if dim == 0 {
            return Err(Error::Parse("CSV header has no x columns".into()));
        }
        let mut points = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            for field in line.split(',').take(dim) {
                points.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number `{field}`")))?,
                );
            }
        }
        Ok(Self::new(points, dim, seed, chain_length))
    }
}

/// Noise for one chain: reparameterization `eps` and per-step `(z_t, u_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise {
    pub eps: Vec<f64>,
    pub steps: Vec<StepNoise>,
}

/// SplitMix64-style mixing of a base seed with two indices.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-chain stream: master seed selects the key, chain index
/// selects the ChaCha stream.
pub fn chain_rng(seed: u64, chain_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_index as u64);
    rng
}

impl ChainNoise {
    /// `eps` first, then `(z_t, u_t)` for `t = 1..=T`; a shorter chain sees a
    /// prefix of a longer chain's noise.
    pub fn draw(seed: u64, chain_index: usize, dim: usize, chain_length: usize) -> Self {
        let mut rng = chain_rng(seed, chain_index);
        let eps = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let steps = (0..chain_length)
            .map(|_| StepNoise::draw(&mut rng, dim))
            .collect();
        Self { eps, steps }
    }
}

/// `n` independent draws from `P0`.
pub fn sample_p0(p0: &InitialDistParams, n: usize, seed: u64) -> SampleBatch {
    let d = p0.dim();
    let mut points = Vec::with_capacity(n * d);
    for i in 0..n {
        let noise = ChainNoise::draw(seed, i, d, 0);
        points.extend(p0.transform(&noise.eps));
    }
    SampleBatch::new(points, d, seed, 0)
}

/// Output of [`run_chain`].
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub final_batch: SampleBatch,
    /// Marginal batches `P_0 .. P_T` when recording was requested.
    pub intermediate: Option<Vec<SampleBatch>>,
    pub acceptance_rate: f64,
}

/// Simulates one chain in plain arithmetic. Pushes every visited state into
/// `trace` when given. Returns the number of accepted proposals.
pub fn simulate_chain(
    spec: &ChainSpec,
    kernels: &[KernelParams<f64>],
    noise: &ChainNoise,
    x: &mut Vec<f64>,
    mut trace: Option<&mut Vec<f64>>,
    ws: &mut Workspace<f64>,
) -> Result<usize> {
    *x = spec.p0.transform(&noise.eps);
    if let Some(tr) = trace.as_deref_mut() {
        tr.extend_from_slice(x);
    }
    let mut accepted = 0;
    let mut momentum = vec![0.0; spec.dim()];
    for (t, (kernel, step)) in kernels.iter().zip(&noise.steps).enumerate() {
        for i in 0..momentum.len() {
            momentum[i] = kernel.momentum_variance[i].sqrt() * step.z[i];
        }
        let (acc, _) = gated_step(x, &momentum, step.u, &spec.target, kernel, ws).map_err(|e| {
            Error::ChainFailed {
                chain: usize::MAX,
                step: t + 1,
                source: Box::new(e),
            }
        })?;
        accepted += usize::from(acc);
        if let Some(tr) = trace.as_deref_mut() {
            tr.extend_from_slice(x);
        }
    }
    Ok(accepted)
}

fn tag_chain(e: Error, chain: usize) -> Error {
    match e {
        Error::ChainFailed { step, source, .. } => Error::ChainFailed {
            chain,
            step,
            source,
        },
        other => Error::ChainFailed {
            chain,
            step: 0,
            source: Box::new(other),
        },
    }
}

/// Runs `n` independent chains; rows of the output are their final states.
pub fn run_chain(
    spec: &ChainSpec,
    n: usize,
    seed: u64,
    record_intermediate: bool,
) -> Result<ChainRun> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let d = spec.dim();
    let t_len = spec.chain_length();
    let kernels: Vec<KernelParams<f64>> = spec.steps.iter().map(HmcStepParams::kernel).collect();

    let per_chain: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map_init(
            || Workspace::new(d),
            |ws, i| {
                let noise = ChainNoise::draw(seed, i, d, t_len);
                let mut x = Vec::with_capacity(d);
                let mut trace = Vec::new();
                let acc = simulate_chain(
                    spec,
                    &kernels,
                    &noise,
                    &mut x,
                    record_intermediate.then_some(&mut trace),
                    ws,
                )
                .map_err(|e| tag_chain(e, i))?;
                Ok((x, trace, acc))
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(n * d);
    let mut accepted = 0;
    for (x, _, acc) in &per_chain {
        points.extend_from_slice(x);
        accepted += acc;
    }
    let intermediate = record_intermediate.then(|| {
        (0..=t_len)
            .map(|t| {
                let mut pts = Vec::with_capacity(n * d);
                for (_, trace, _) in &per_chain {
                    pts.extend_from_slice(&trace[t * d..(t + 1) * d]);
                }
                SampleBatch::new(pts, d, seed, t)
            })
            .collect()
    });
    let proposals = (n * t_len).max(1) as f64;
    Ok(ChainRun {
        final_batch: SampleBatch::new(points, d, seed, t_len),
        intermediate,
        acceptance_rate: accepted as f64 / proposals,
    })
}

/// Tape handles for every trainable parameter of a chain.
pub struct ChainInputs<'t> {
    pub mean: Vec<Var<'t>>,
    pub log_std: Vec<Var<'t>>,
    pub steps: Vec<KernelParams<Var<'t>>>,
}

impl<'t> ChainInputs<'t> {
    /// Registers inputs in [`ChainGradient`] flat order.
    pub fn register(tape: &'t Tape, spec: &ChainSpec) -> Self {
        let mean = tape.inputs(&spec.p0.mean);
        let log_std = tape.inputs(&spec.p0.log_std);
        let steps = spec
            .steps
            .iter()
            .map(|s| {
                let step_size = tape.input(s.log_step_size()).exp();
                let momentum_variance = s
                    .log_momentum_variance()
                    .iter()
                    .map(|v| tape.input(*v).exp())
                    .collect();
                KernelParams {
                    step_size,
                    momentum_variance,
                    leapfrog_steps: s.leapfrog_steps(),
                }
            })
            .collect();
        Self {
            mean,
            log_std,
            steps,
        }
    }
}

/// Builds `log pi*(x_T)` as a recorded expression of every chain parameter.
///
/// With `stop_gradient_inputs`, the position entering each transition is
/// detached; every step's parameters then receive gradient only from
/// `log pi*` at that step's own output. The returned value is always exactly
/// `log pi*(x_T)`.
pub fn chain_forward_differentiable<'t>(
    spec: &ChainSpec,
    inputs: &ChainInputs<'t>,
    noise: &ChainNoise,
    stop_gradient_inputs: bool,
) -> Result<Var<'t>> {
    let d = spec.dim();
    let mut x: Vec<Var<'t>> = (0..d)
        .map(|i| inputs.mean[i] + inputs.log_std[i].exp() * noise.eps[i])
        .collect();
    let mut ws = Workspace::new(d);
    let mut local_terms: Option<Var<'t>> = None;
    let last = spec.chain_length().saturating_sub(1);

    for (t, (kernel, step)) in inputs.steps.iter().zip(&noise.steps).enumerate() {
        if stop_gradient_inputs {
            for v in x.iter_mut() {
                *v = v.detach();
            }
        }
        let momentum = step.momentum(&kernel.momentum_variance);
        gated_step(&mut x, &momentum, step.u, &spec.target, kernel, &mut ws).map_err(|e| {
            Error::ChainFailed {
                chain: usize::MAX,
                step: t + 1,
                source: Box::new(e),
            }
        })?;
        if stop_gradient_inputs && t < last && !x[0].is_constant() {
            // zero-valued term carrying this step's local gradient
            let lp = spec.target.log_density(&x);
            let term = lp - lp.detach();
            local_terms = Some(match local_terms {
                Some(acc) => acc + term,
                None => term,
            });
        }
    }
    let out = spec.target.log_density(&x);
    Ok(match local_terms {
        Some(acc) => out + acc,
        None => out,
    })
}

/// Gradient with respect to the unconstrained chain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGradient {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub log_step_size: Vec<f64>,
    /// `[step][dim]`
    pub log_momentum_variance: Vec<Vec<f64>>,
}

impl ChainGradient {
    pub fn zeros(dim: usize, chain_length: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
            log_step_size: vec![0.0; chain_length],
            log_momentum_variance: vec![vec![0.0; dim]; chain_length],
        }
    }

    pub fn from_flat(flat: &[f64], dim: usize, chain_length: usize) -> Self {
        let mut g = Self::zeros(dim, chain_length);
        g.mean.copy_from_slice(&flat[..dim]);
        g.log_std.copy_from_slice(&flat[dim..2 * dim]);
        let mut off = 2 * dim;
        for t in 0..chain_length {
            g.log_step_size[t] = flat[off];
            g.log_momentum_variance[t].copy_from_slice(&flat[off + 1..off + 1 + dim]);
            off += 1 + dim;
        }
        g
    }

    /// Layout: mean, log_std, then per step `(log_step_size, log_momentum_variance)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(&self.mean);
        v.extend(&self.log_std);
        for (s, m) in self.log_step_size.iter().zip(&self.log_momentum_variance) {
            v.push(*s);
            v.extend(m);
        }
        v
    }

    pub fn len(&self) -> usize {
        2 * self.mean.len() + self.log_step_size.len() * (1 + self.mean.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Flat parameter vector of a spec in [`ChainGradient`] layout.
pub fn flat_params(spec: &ChainSpec) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend(&spec.p0.mean);
    v.extend(&spec.p0.log_std);
    for s in &spec.steps {
        v.push(s.log_step_size());
        v.extend(s.log_momentum_variance());
    }
    v
}

/// Writes a flat parameter vector back into `spec` (no validation).
pub fn set_flat_params(spec: &mut ChainSpec, flat: &[f64]) {
    let d = spec.dim();
    spec.p0.mean.copy_from_slice(&flat[..d]);
    spec.p0.log_std.copy_from_slice(&flat[d..2 * d]);
    let mut off = 2 * d;
    for s in spec.steps.iter_mut() {
        s.set_log_step_size(flat[off]);
        s.log_momentum_variance_mut()
            .copy_from_slice(&flat[off + 1..off + 1 + d]);
        off += 1 + d;
    }
}

/// One chain's pathwise value and gradient.
#[derive(Debug, Clone)]
pub struct PathwiseSample {
    pub log_target_final: f64,
    pub log_target_initial: f64,
    pub gradient: ChainGradient,
}

/// Records the chain for one noise realization and backpropagates.
pub fn pathwise_gradient(
    spec: &ChainSpec,
    noise: &ChainNoise,
    stop_gradient_inputs: bool,
) -> Result<PathwiseSample> {
    let d = spec.dim();
    if stop_gradient_inputs && spec.chain_length() > 0 {
        // detached inputs make every step's gradient local: forward mode over
        // (log step size, log momentum variances) suffices
        match d {
            1 => return local_pathwise_gradient::<2>(spec, noise),
            2 => return local_pathwise_gradient::<3>(spec, noise),
            3 => return local_pathwise_gradient::<4>(spec, noise),
            _ => {}
        }
    }
    recorded_pathwise_gradient(spec, noise, stop_gradient_inputs)
}

/// [`pathwise_gradient`] always going through the reverse-mode tape.
pub fn recorded_pathwise_gradient(
    spec: &ChainSpec,
    noise: &ChainNoise,
    stop_gradient_inputs: bool,
) -> Result<PathwiseSample> {
    let d = spec.dim();
    let tape = Tape::with_capacity(64 + spec.chain_length() * 256);
    let inputs = ChainInputs::register(&tape, spec);
    let out = chain_forward_differentiable(spec, &inputs, noise, stop_gradient_inputs)?;
    let flat = tape.gradient(out)?;
    if !out.value().is_finite() {
        return Err(Error::NonFinite {
            op_index: out.index().unwrap_or(usize::MAX),
            quantity: "value",
        });
    }
    let x0 = spec.p0.transform(&noise.eps);
    Ok(PathwiseSample {
        log_target_final: out.value(),
        log_target_initial: spec.target.log_density(&x0),
        gradient: ChainGradient::from_flat(&flat, d, spec.chain_length()),
    })
}

/// Stop-gradient pathwise sample with `N = 1 + dim` tangents per transition.
/// `P0` parameters receive no chain gradient in this mode.
fn local_pathwise_gradient<const N: usize>(
    spec: &ChainSpec,
    noise: &ChainNoise,
) -> Result<PathwiseSample> {
    let d = spec.dim();
    debug_assert_eq!(N, d + 1);
    let t_len = spec.chain_length();
    let mut gradient = ChainGradient::zeros(d, t_len);
    let x0 = spec.p0.transform(&noise.eps);
    let mut x = x0.clone();
    let mut xd = vec![Dual::<N>::constant(0.0); d];
    let mut ws = Workspace::<Dual<N>>::new(d);
    let mut lp = f64::NAN;

    for (t, (params, step)) in spec.steps.iter().zip(&noise.steps).enumerate() {
        let kernel = KernelParams {
            step_size: Dual::variable(params.log_step_size(), 0).exp(),
            momentum_variance: params
                .log_momentum_variance()
                .iter()
                .enumerate()
                .map(|(i, v)| Dual::variable(*v, i + 1).exp())
                .collect::<Vec<_>>(),
            leapfrog_steps: params.leapfrog_steps(),
        };
        for (a, b) in xd.iter_mut().zip(&x) {
            *a = Dual::constant(*b);
        }
        let momentum = step.momentum(&kernel.momentum_variance);
        let fail = |e: Error| Error::ChainFailed {
            chain: usize::MAX,
            step: t + 1,
            source: Box::new(e),
        };
        gated_step(&mut xd, &momentum, step.u, &spec.target, &kernel, &mut ws).map_err(fail)?;
        let out = spec.target.log_density(&xd);
        if !out.value.is_finite() || out.tangent.iter().any(|g| !g.is_finite()) {
            return Err(fail(Error::NonFinite {
                op_index: usize::MAX,
                quantity: "value",
            }));
        }
        gradient.log_step_size[t] = out.tangent[0];
        gradient.log_momentum_variance[t].copy_from_slice(&out.tangent[1..]);
        for (a, b) in x.iter_mut().zip(&xd) {
            *a = b.value;
        }
        lp = out.value;
    }
    Ok(PathwiseSample {
        log_target_final: lp,
        log_target_initial: spec.target.log_density(&x0),
        gradient,
    })
}
