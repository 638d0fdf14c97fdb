//! Reference samplers: rejection sampling on the registry box, exact draws
//! for Gaussian targets, and Hamiltonian annealed importance sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::Scalar;
use crate::chain::{chain_rng, InitialDistParams, SampleBatch};
use crate::error::{Error, Result};
use crate::hmc::{gated_step, KernelParams, LogDensity, Workspace};
use crate::linalg::cholesky;
use crate::targets::{SamplingBox, TargetDensity};

/// Grid resolution per axis for the rejection bound.
pub const BOUND_GRID: usize = 512;
pub const BOUND_SAFETY: f64 = 1.2;
const MIN_ACCEPTANCE: f64 = 1e-4;
const PROPOSALS_PER_BLOCK: usize = 4096;
const BLOCKS_PER_ROUND: usize = 32;

/// `log` of the grid maximum of `pi*` over the box times the safety factor.
pub fn rejection_log_bound(target: &TargetDensity, sampling_box: &SamplingBox) -> Result<f64> {
    let d = sampling_box.dim();
    if d != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: d,
        });
    }
    if d > 2 {
        return Err(Error::InvalidParameter(format!(
            "grid bound supports at most 2 dimensions, got {d}"
        )));
    }
    let axis = |k: usize| -> Vec<f64> {
        let (lo, hi) = (sampling_box.lower[k], sampling_box.upper[k]);
        (0..BOUND_GRID)
            .map(|i| lo + (hi - lo) * i as f64 / (BOUND_GRID - 1) as f64)
            .collect()
    };
    let xs = axis(0);
    let max = if d == 1 {
        xs.iter()
            .map(|x| target.log_density(&[*x]))
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        let ys = axis(1);
        xs.par_iter()
            .map(|x| {
                ys.iter()
                    .map(|y| target.log_density(&[*x, *y]))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(max + BOUND_SAFETY.ln())
}

/// Output of [`rejection_sample`].
#[derive(Debug, Clone)]
pub struct RejectionRun {
    pub batch: SampleBatch,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

/// `n` exact draws from the target restricted to its sampling box, with
/// uniform proposals. Proposal blocks use independent streams and are merged
/// in block order, so the output does not depend on the worker count.
pub fn rejection_sample(target: &TargetDensity, n: usize, seed: u64) -> Result<RejectionRun> {
    let sbox = target.sampling_box().ok_or_else(|| {
        Error::InvalidParameter(format!("target `{}` has no sampling box", target.name()))
    })?;
    let log_bound = rejection_log_bound(target, sbox)?;
    let d = sbox.dim();
    let mut points = Vec::with_capacity(n * d);
    let mut proposals = 0u64;
    let mut round = 0usize;
    while points.len() < n * d {
        let blocks: Vec<(Vec<f64>, f64)> = (0..BLOCKS_PER_ROUND)
            .into_par_iter()
            .map(|b| {
                let mut rng = chain_rng(seed, round * BLOCKS_PER_ROUND + b);
                let mut acc = Vec::new();
                let mut worst = f64::NEG_INFINITY;
                let mut x = vec![0.0; d];
                for _ in 0..PROPOSALS_PER_BLOCK {
                    for k in 0..d {
                        x[k] = rng.random_range(sbox.lower[k]..sbox.upper[k]);
                    }
                    let lp = target.log_density(&x);
                    worst = worst.max(lp - log_bound);
                    let u: f64 = rng.random();
                    if u.ln() < lp - log_bound {
                        acc.extend_from_slice(&x);
                    }
                }
                (acc, worst)
            })
            .collect();
        for (acc, worst) in blocks {
            if worst > 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "density exceeds the rejection bound by {:.3e} nats on `{}`",
                    worst,
                    target.name()
                )));
            }
            points.extend(acc);
        }
        proposals += (BLOCKS_PER_ROUND * PROPOSALS_PER_BLOCK) as u64;
        round += 1;
        let rate = (points.len() / d) as f64 / proposals as f64;
        if rate < MIN_ACCEPTANCE {
            return Err(Error::RejectionRateTooLow { rate });
        }
    }
    let accepted_total = points.len() / d;
    points.truncate(n * d);
    Ok(RejectionRun {
        batch: SampleBatch::new(points, d, seed, 0),
        proposals,
        acceptance_rate: accepted_total as f64 / proposals as f64,
    })
}

/// Exact draws `mean + L z` for a Gaussian target.
pub fn exact_gaussian_sample(target: &TargetDensity, n: usize, seed: u64) -> Result<SampleBatch> {
    let (mean, cov) = target.gaussian_moments().ok_or_else(|| {
        Error::InvalidParameter(format!("target `{}` is not Gaussian", target.name()))
    })?;
    let d = mean.len();
    let l = cholesky(cov, d)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = chain_rng(seed, i);
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            (0..d)
                .map(|r| mean[r] + (0..=r).map(|c| l[r * d + c] * z[c]).sum::<f64>())
                .collect()
        })
        .collect();
    Ok(SampleBatch::new(rows.concat(), d, seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AisStepSize {
    Fixed(f64),
    /// Multiplicative adaptation toward the target acceptance rate, starting
    /// from the given step size.
    Auto {
        initial: f64,
        target_acceptance: f64,
    },
}

impl Default for AisStepSize {
    fn default() -> Self {
        AisStepSize::Auto {
            initial: 0.1,
            target_acceptance: 0.7,
        }
    }
}

/// Linear schedule `beta_j = j / (n_temps - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AisConfig {
    pub n_temps: usize,
    pub leapfrog_steps: usize,
    pub n_chains: usize,
    pub step_size: AisStepSize,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            n_temps: 1000,
            leapfrog_steps: 5,
            n_chains: 64,
            step_size: AisStepSize::default(),
        }
    }
}

impl AisConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_temps < 2 {
            bad.push(format!("n_temps must be at least 2, got {}", self.n_temps));
        }
        if self.n_chains < 2 {
            bad.push(format!(
                "n_chains must be at least 2, got {}",
                self.n_chains
            ));
        }
        if self.leapfrog_steps == 0 {
            bad.push("leapfrog_steps must be positive".to_string());
        }
        match self.step_size {
            AisStepSize::Fixed(s) | AisStepSize::Auto { initial: s, .. } if !(s > 0.0) => {
                bad.push(format!("step size must be positive, got {s}"));
            }
            _ => {}
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }

    pub fn beta(&self, j: usize) -> f64 {
        j as f64 / (self.n_temps - 1) as f64
    }
}

/// Points with log importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub points: Vec<f64>,
    pub dim: usize,
    pub log_weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    /// Self-normalized importance estimate of `E[f]`.
    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.normalized_weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * f(self.row(i)))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out: String = (0..self.dim).map(|i| format!("x{i},")).collect();
        out.push_str("log_weight\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.log_weights[i]));
        }
        out
    }
}

/// `(sum w)^2 / sum w^2`, in `[1, n]`.
pub fn ess_weights(weighted: &WeightedBatch) -> f64 {
    let w = weighted.normalized_weights();
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// `log mean exp`.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (v.iter().map(|l| (l - max).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Geometric bridge `(1 - beta) log p0 + beta log pi*`.
struct Annealed<'a> {
    target: &'a TargetDensity,
    p0: &'a InitialDistParams,
    beta: f64,
}

impl LogDensity for Annealed<'_> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density<S: Scalar>(&self, x: &[S]) -> S {
        self.p0.log_density(x) * (1.0 - self.beta) + self.target.log_density(x) * self.beta
    }

    fn grad_into<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        let d = x.len();
        let mut tmp = vec![S::constant(0.0); d];
        self.p0.grad_log_density_into(x, &mut tmp);
        self.target.grad_log_density_into(x, out);
        for i in 0..d {
            out[i] = tmp[i] * (1.0 - self.beta) + out[i] * self.beta;
        }
    }
}

struct AisChain {
    rng: ChaCha8Rng,
    x: Vec<f64>,
    log_weight: f64,
    ws: Workspace<f64>,
}

/// Annealed importance sampling along the geometric path from `p0` to the
/// target, with one HMC transition at each intermediate temperature. Chains
/// advance in lockstep so the automatic step size can adapt per temperature.
/// Returns `log Z` and the final weighted sample.
pub fn ais_estimate(
    target: &TargetDensity,
    p0: &InitialDistParams,
    config: &AisConfig,
    seed: u64,
) -> Result<(f64, WeightedBatch)> {
    config.validate()?;
    let d = target.dim();
    if p0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p0.dim(),
        });
    }
    let mut chains: Vec<AisChain> = (0..config.n_chains)
        .map(|c| {
            let mut rng = chain_rng(seed, c);
            let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            AisChain {
                rng,
                x: p0.transform(&eps),
                log_weight: 0.0,
                ws: Workspace::new(d),
            }
        })
        .collect();

    let (mut step, adapt) = match config.step_size {
        AisStepSize::Fixed(s) => (s, None),
        AisStepSize::Auto {
            initial,
            target_acceptance,
        } => (initial, Some(target_acceptance)),
    };
    let last = config.n_temps - 1;
    for j in 1..=last {
        let (b_prev, b) = (config.beta(j - 1), config.beta(j));
        let kernel = KernelParams {
            step_size: step,
            momentum_variance: vec![1.0; d],
            leapfrog_steps: config.leapfrog_steps,
        };
        let bridge = Annealed {
            target,
            p0,
            beta: b,
        };
        let accepted: usize = chains
            .par_iter_mut()
            .map(|ch| {
                ch.log_weight += (b - b_prev) * (target.log_density(&ch.x) - p0.log_density(&ch.x));
                if j == last {
                    return 0;
                }
                let z: Vec<f64> = (0..d).map(|_| ch.rng.sample(StandardNormal)).collect();
                let u: f64 = ch.rng.random();
                // a diverging trajectory is a rejection
                match gated_step(&mut ch.x, &z, u, &bridge, &kernel, &mut ch.ws) {
                    Ok((true, _)) => 1,
                    _ => 0,
                }
            })
            .sum();
        if let (Some(goal), true) = (adapt, j < last) {
            let rate = accepted as f64 / config.n_chains as f64;
            step = (step * (rate - goal).exp()).clamp(1e-4, 10.0);
        }
    }

    let log_weights: Vec<f64> = chains.iter().map(|c| c.log_weight).collect();
    if let Some(bad) = log_weights.iter().position(|l| !l.is_finite()) {
        return Err(Error::ChainFailed {
            chain: bad,
            step: last,
            source: Box::new(Error::NonFinite {
                op_index: usize::MAX,
                quantity: "log weight",
            }),
        });
    }
    let weighted = WeightedBatch {
        points: chains.iter().flat_map(|c| c.x.iter().copied()).collect(),
        dim: d,
        log_weights,
    };
    let ess = ess_weights(&weighted);
    if ess < 2.0 {
        return Err(Error::DegenerateWeights { ess });
    }
    Ok((log_mean_exp(&weighted.log_weights), weighted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_target, BenchmarkId};

    fn weighted(w: &[f64]) -> WeightedBatch {
        WeightedBatch {
            points: vec![0.0; w.len()],
            dim: 1,
            log_weights: w.iter().map(|v: &f64| v.ln()).collect(),
        }
    }

    #[test]
    fn ess_examples() {
        assert!((ess_weights(&weighted(&[1.0; 100])) - 100.0).abs() < 1e-9);
        assert!((ess_weights(&weighted(&[1.0, 0.0, 0.0, 0.0])) - 1.0).abs() < 1e-12);
        assert!((ess_weights(&weighted(&[2.0, 1.0, 1.0])) - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_target_accepts_everything() {
        let t = TargetDensity::uniform(SamplingBox::square(2.0));
        let run = rejection_sample(&t, 1000, 1).unwrap();
        assert!(run.acceptance_rate > 0.8, "{}", run.acceptance_rate);
        assert_eq!(run.batch.len(), 1000);
    }

    #[test]
    fn rejection_is_thread_count_independent() {
        let t = make_target(BenchmarkId::BenchA);
        let a = rejection_sample(&t, 500, 4).unwrap().batch;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| rejection_sample(&t, 500, 4).unwrap().batch);
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_box_fraction_aborts() {
        // a narrow Gaussian inside a huge box
        let mut t = TargetDensity::isotropic_gaussian(2, 1e-8);
        t = t.with_sampling_box(SamplingBox::square(1e3));
        assert!(matches!(
            rejection_sample(&t, 10, 0),
            Err(Error::RejectionRateTooLow { .. }) | Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn exact_sampler_moments() {
        let t = make_target(BenchmarkId::CorrGauss);
        let b = exact_gaussian_sample(&t, 50_000, 2).unwrap();
        let c = b.covariance();
        let (_, cov) = t.gaussian_moments().unwrap();
        for k in 0..4 {
            assert!((c[k] - cov[k]).abs() < 0.05, "{c:?}");
        }
    }

    #[test]
    fn ais_config_validation() {
        let c = AisConfig {
            n_temps: 1,
            n_chains: 1,
            ..AisConfig::default()
        };
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("n_temps") && e.contains("n_chains"), "{e}");
    }

    #[test]
    fn weighted_csv_has_log_weight_column() {
        let w = weighted(&[1.0, 2.0]);
        let csv = w.to_csv();
        assert!(csv.starts_with("x0,log_weight\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
