//! Leapfrog integration and the Metropolis-Hastings corrected HMC transition.
//!
//! The accept/reject step is written as a gated map of `(x, r, u)`, so the
//! same code produces plain samples (`f64`) and differentiable ones
//! ([`Var`](crate::autodiff::Var)). The acceptance test itself only reads
//! values and never enters the gradient.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::targets::TargetDensity;

/// Anything exposing an unnormalized log density and its gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density<S: Scalar>(&self, x: &[S]) -> S;
    fn grad_into<S: Scalar>(&self, x: &[S], out: &mut [S]);
}

impl LogDensity for TargetDensity {
    #[inline]
    fn dim(&self) -> usize {
        TargetDensity::dim(self)
    }
    #[inline]
    fn log_density<S: Scalar>(&self, x: &[S]) -> S {
        TargetDensity::log_density(self, x)
    }
    #[inline]
    fn grad_into<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        self.grad_log_density_into(x, out)
    }
}

/// Hyperparameters of one HMC transition, stored in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcStepParams {
    log_step_size: f64,
    log_momentum_variance: Vec<f64>,
    leapfrog_steps: usize,
}

impl HmcStepParams {
    pub fn new(step_size: f64, momentum_variance: Vec<f64>, leapfrog_steps: usize) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        if let Some(v) = momentum_variance
            .iter()
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidParameter(format!(
                "momentum variance must be positive, got {v}"
            )));
        }
        if leapfrog_steps == 0 {
            return Err(Error::InvalidParameter(
                "leapfrog step count must be at least 1".into(),
            ));
        }
        Ok(Self {
            log_step_size: step_size.ln(),
            log_momentum_variance: momentum_variance.iter().map(|v| v.ln()).collect(),
            leapfrog_steps,
        })
    }

    /// Builds from unconstrained values.
    pub fn from_log(
        log_step_size: f64,
        log_momentum_variance: Vec<f64>,
        leapfrog_steps: usize,
    ) -> Self {
        Self {
            log_step_size,
            log_momentum_variance,
            leapfrog_steps: leapfrog_steps.max(1),
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_step_size.exp()
    }

    pub fn momentum_variance(&self) -> Vec<f64> {
        self.log_momentum_variance.iter().map(|v| v.exp()).collect()
    }

    pub fn log_step_size(&self) -> f64 {
        self.log_step_size
    }

    pub fn log_momentum_variance(&self) -> &[f64] {
        &self.log_momentum_variance
    }

    pub fn leapfrog_steps(&self) -> usize {
        self.leapfrog_steps
    }

    pub fn dim(&self) -> usize {
        self.log_momentum_variance.len()
    }

    pub fn set_log_step_size(&mut self, v: f64) {
        self.log_step_size = v;
    }

    pub fn log_momentum_variance_mut(&mut self) -> &mut [f64] {
        &mut self.log_momentum_variance
    }

    /// Read-only `f64` view used by the integrator.
    pub fn kernel(&self) -> KernelParams<f64> {
        KernelParams {
            step_size: self.step_size(),
            momentum_variance: self.momentum_variance(),
            leapfrog_steps: self.leapfrog_steps,
        }
    }
}

/// Positive-space parameters as seen by the integrator, generic over scalar.
#[derive(Debug, Clone)]
pub struct KernelParams<S> {
    pub step_size: S,
    pub momentum_variance: Vec<S>,
    pub leapfrog_steps: usize,
}

/// Joint position/momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState<S = f64> {
    pub position: Vec<S>,
    pub momentum: Vec<S>,
}

/// Reusable buffers for one chain.
#[derive(Debug, Clone)]
pub struct Workspace<S> {
    position: Vec<S>,
    momentum: Vec<S>,
    grad: Vec<S>,
    ratio: Vec<S>,
    values: Vec<f64>,
}

impl<S: Scalar> Workspace<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            position: vec![S::constant(0.0); dim],
            momentum: vec![S::constant(0.0); dim],
            grad: vec![S::constant(0.0); dim],
            ratio: vec![S::constant(0.0); dim],
            values: vec![0.0; dim],
        }
    }
}

fn all_finite<S: Scalar>(v: &[S]) -> bool {
    v.iter().all(|s| s.value().is_finite())
}

/// In-place leapfrog with `U = -log pi*`:
/// half momentum step, full position step scaled by `step / variance`,
/// half momentum step; repeated `leapfrog_steps` times.
pub fn leapfrog_in_place<S: Scalar, D: LogDensity>(
    position: &mut [S],
    momentum: &mut [S],
    target: &D,
    params: &KernelParams<S>,
    grad: &mut [S],
    ratio: &mut [S],
) -> Result<()> {
    let d = position.len();
    let half = params.step_size * 0.5;
    for i in 0..d {
        ratio[i] = params.step_size / params.momentum_variance[i];
    }
    // the closing gradient of one iteration opens the next
    target.grad_into(position, grad);
    for iteration in 0..params.leapfrog_steps {
        for i in 0..d {
            momentum[i] = momentum[i] + half * grad[i];
        }
        for i in 0..d {
            position[i] = position[i] + ratio[i] * momentum[i];
        }
        target.grad_into(position, grad);
        for i in 0..d {
            momentum[i] = momentum[i] + half * grad[i];
        }
        if !(all_finite(position) && all_finite(momentum)) {
            return Err(Error::LeapfrogDiverged { iteration });
        }
    }
    Ok(())
}

/// Leapfrog integration of `state` under `params`.
pub fn leapfrog(
    state: &PhaseState,
    target: &TargetDensity,
    params: &HmcStepParams,
) -> Result<PhaseState> {
    let d = target.dim();
    for got in [state.position.len(), state.momentum.len(), params.dim()] {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    let mut out = state.clone();
    let mut grad = vec![0.0; d];
    let mut ratio = vec![0.0; d];
    leapfrog_in_place(
        &mut out.position,
        &mut out.momentum,
        target,
        &params.kernel(),
        &mut grad,
        &mut ratio,
    )?;
    Ok(out)
}

/// `1/2 sum r_i^2 / var_i`
#[inline]
pub fn kinetic_energy(momentum: &[f64], variance: &[f64]) -> f64 {
    momentum
        .iter()
        .zip(variance)
        .map(|(r, v)| 0.5 * r * r / v)
        .sum()
}

/// `log p_MH = min{0, [log pi*(x') - K(r')] - [log pi*(x) - K(r)]}`.
#[inline]
pub fn log_acceptance(
    log_target_prev: f64,
    kinetic_prev: f64,
    log_target_new: f64,
    kinetic_new: f64,
) -> f64 {
    let delta = (log_target_new - kinetic_new) - (log_target_prev - kinetic_prev);
    if delta.is_nan() {
        f64::NEG_INFINITY
    } else {
        delta.min(0.0)
    }
}

/// Result of one gated M-H map.
#[derive(Debug, Clone)]
pub struct MhOutcome<S> {
    pub next: Vec<S>,
    pub accepted: bool,
    pub log_accept: f64,
}

/// `x_next = x' 1(p_MH > u) + x_prev (1 - 1(p_MH > u))` with
/// `(x', r') = leapfrog(x_prev, r)`.
pub fn mh_transform<S: Scalar, D: LogDensity>(
    x_prev: &[S],
    momentum: &[S],
    u: f64,
    target: &D,
    params: &KernelParams<S>,
) -> Result<MhOutcome<S>> {
    let mut ws = Workspace::new(x_prev.len());
    let mut next = x_prev.to_vec();
    let (accepted, log_accept) = gated_step(&mut next, momentum, u, target, params, &mut ws)?;
    Ok(MhOutcome {
        next,
        accepted,
        log_accept,
    })
}

/// Core of the transition: integrates from `x` with momentum `momentum`, then
/// overwrites `x` with the gated result. Returns `(accepted, log p_MH)`.
pub fn gated_step<S: Scalar, D: LogDensity>(
    x: &mut [S],
    momentum: &[S],
    u: f64,
    target: &D,
    params: &KernelParams<S>,
    ws: &mut Workspace<S>,
) -> Result<(bool, f64)> {
    let d = x.len();
    ws.position.copy_from_slice(x);
    ws.momentum.copy_from_slice(momentum);
    leapfrog_in_place(
        &mut ws.position,
        &mut ws.momentum,
        target,
        params,
        &mut ws.grad,
        &mut ws.ratio,
    )?;

    // acceptance from values only
    let mut k_prev = 0.0;
    let mut k_new = 0.0;
    for i in 0..d {
        let var = params.momentum_variance[i].value();
        let (r0, r1) = (momentum[i].value(), ws.momentum[i].value());
        k_prev += 0.5 * r0 * r0 / var;
        k_new += 0.5 * r1 * r1 / var;
        ws.values[i] = x[i].value();
    }
    let lp_prev = target.log_density(&ws.values[..]);
    for i in 0..d {
        ws.values[i] = ws.position[i].value();
    }
    let lp_new = target.log_density(&ws.values[..]);
    let log_accept = log_acceptance(lp_prev, k_prev, lp_new, k_new);
    let accepted = log_accept > u.ln();

    for i in 0..d {
        x[i] = S::select(accepted, ws.position[i], x[i]);
    }
    Ok((accepted, log_accept))
}

/// Noise consumed by one transition: standard-normal `z` (momentum is
/// `sqrt(variance) * z`) and the uniform `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub z: Vec<f64>,
    pub u: f64,
}

impl StepNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        let z = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let u = rng.random::<f64>();
        Self { z, u }
    }

    /// Momentum `r = sqrt(variance) * z`.
    pub fn momentum<S: Scalar>(&self, variance: &[S]) -> Vec<S> {
        self.z
            .iter()
            .zip(variance)
            .map(|(z, v)| v.sqrt() * *z)
            .collect()
    }
}

/// One M-H corrected HMC step from `x` with externally supplied noise.
pub fn hmc_transition<S: Scalar, D: LogDensity>(
    x: &[S],
    target: &D,
    params: &KernelParams<S>,
    noise: &StepNoise,
) -> Result<Vec<S>> {
    let momentum = noise.momentum(&params.momentum_variance);
    Ok(mh_transform(x, &momentum, noise.u, target, params)?.next)
}

/// One HMC step drawing its noise from `rng`; returns the acceptance flag.
pub fn hmc_transition_rng<R: Rng + ?Sized, D: LogDensity>(
    x: &mut [f64],
    target: &D,
    params: &KernelParams<f64>,
    rng: &mut R,
    ws: &mut Workspace<f64>,
) -> Result<bool> {
    let d = x.len();
    let mut momentum = vec![0.0; d];
    for i in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        momentum[i] = params.momentum_variance[i].sqrt() * z;
    }
    let u = rng.random::<f64>();
    Ok(gated_step(x, &momentum, u, target, params, ws)?.0)
}
