//! Helpers shared by integration test targets.
#![allow(dead_code)]

use ergodic::chain::{flat_params, set_flat_params, ChainNoise, ChainSpec};
use ergodic::hmc::{gated_step, Workspace};

/// Plain-arithmetic forward pass under fixed noise; returns `log pi*(x_T)`
/// and the accept/reject decisions.
pub fn forward(spec: &ChainSpec, noise: &ChainNoise) -> (f64, Vec<bool>) {
    let d = spec.dim();
    let mut x = spec.p0.transform(&noise.eps);
    let mut ws = Workspace::new(d);
    let mut flags = Vec::new();
    for (p, step) in spec.steps.iter().zip(&noise.steps) {
        let k = p.kernel();
        let r: Vec<f64> = step
            .z
            .iter()
            .zip(&k.momentum_variance)
            .map(|(z, v)| v.sqrt() * z)
            .collect();
        flags.push(
            gated_step(&mut x, &r, step.u, &spec.target, &k, &mut ws)
                .unwrap()
                .0,
        );
    }
    (spec.target.log_density(&x), flags)
}

/// Central differences per coordinate; `None` where a decision flips.
pub fn finite_difference(spec: &ChainSpec, noise: &ChainNoise, h: f64) -> Vec<Option<f64>> {
    let base = flat_params(spec);
    let (_, flags) = forward(spec, noise);
    (0..base.len())
        .map(|k| {
            let eval = |delta: f64| {
                let mut s = spec.clone();
                let mut p = base.clone();
                p[k] += delta;
                set_flat_params(&mut s, &p);
                forward(&s, noise)
            };
            let (fp, ap) = eval(h);
            let (fm, am) = eval(-h);
            (ap == flags && am == flags).then(|| (fp - fm) / (2.0 * h))
        })
        .collect()
}
