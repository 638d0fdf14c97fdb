//! Unnormalized target densities and the named benchmark registry.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::linalg;

/// Analytic or registry-provided reference quantities for a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    /// `-E_pi[log pi*]` for the unnormalized density as registered.
    pub neg_expected_log_target: f64,
    /// `H(pi)` in nats.
    pub entropy: Option<f64>,
    /// `log of the integral of pi*`.
    pub log_z: Option<f64>,
}

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SamplingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn square(half_width: f64) -> Self {
        Self::new(vec![-half_width; 2], vec![half_width; 2])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct GaussianComponent {
    log_weight: f64,
    mean: Vec<f64>,
    precision: Vec<f64>,
}

impl GaussianComponent {
    fn new(weight: f64, mean: Vec<f64>, covariance: &[f64]) -> Result<Self> {
        let d = mean.len();
        let precision = linalg::spd_inverse(covariance, d)?;
        // weight * N(x; mean, cov) up to the shared (2 pi)^{-d/2}
        let log_weight = weight.ln() - 0.5 * linalg::spd_log_det(covariance, d)?;
        Ok(Self {
            log_weight,
            mean,
            precision,
        })
    }

    fn log_term<S: Scalar>(&self, x: &[S]) -> S {
        -quadratic_form(&self.precision, &self.mean, x) * 0.5 + self.log_weight
    }

    fn add_grad<S: Scalar>(&self, x: &[S], scale: S, out: &mut [S]) {
        let d = x.len();
        for i in 0..d {
            let mut acc = (x[0] - self.mean[0]) * self.precision[i * d];
            for j in 1..d {
                acc = acc + (x[j] - self.mean[j]) * self.precision[i * d + j];
            }
            out[i] = out[i] - acc * scale;
        }
    }
}

/// (x - mean)^T P (x - mean) without allocation.
fn quadratic_form<S: Scalar>(precision: &[f64], mean: &[f64], x: &[S]) -> S {
    let d = x.len();
    let mut q = S::constant(0.0);
    for i in 0..d {
        let di = x[i] - mean[i];
        let mut row = (x[0] - mean[0]) * precision[i * d];
        for j in 1..d {
            row = row + (x[j] - mean[j]) * precision[i * d + j];
        }
        q = if i == 0 { di * row } else { q + di * row };
    }
    q
}

fn squared_norm<S: Scalar>(x: &[S]) -> S {
    let mut q = x[0] * x[0];
    for v in &x[1..] {
        q = q + *v * *v;
    }
    q
}

/// log(sum_k exp(terms_k)) with a constant max shift.
fn log_sum_exp<S: Scalar>(terms: &[S]) -> S {
    let m = terms
        .iter()
        .map(|t| t.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = (terms[0] - m).exp();
    for t in &terms[1..] {
        s = s + (*t - m).exp();
    }
    s.ln() + m
}

/// Analytic density families. All are unnormalized log densities with
/// hand-written gradients.
#[derive(Debug, Clone, PartialEq)]
enum Family {
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<f64>,
        precision: Vec<f64>,
    },
    GaussianMixture(Vec<GaussianComponent>),
    /// `-1/2 ((|x|^2 - radius^2) / width)^2`
    Ring {
        radius: f64,
        width: f64,
    },
    /// Ring term plus a two-bump modulation along the first axis.
    TwoMoons {
        radius: f64,
        width: f64,
        bump_offset: f64,
        bump_width: f64,
    },
    /// Equal-weight mixture of isotropic Student-t components.
    StudentTMixture {
        dof: f64,
        scale: f64,
        centers: Vec<Vec<f64>>,
    },
    /// Constant density; used for sampler validation.
    Uniform,
}

impl Family {
    fn log_density<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Family::Gaussian {
                mean, precision, ..
            } => -quadratic_form(precision, mean, x) * 0.5,
            Family::GaussianMixture(comps) => {
                let terms: Vec<S> = comps.iter().map(|c| c.log_term(x)).collect();
                log_sum_exp(&terms)
            }
            Family::Ring { radius, width } => {
                let z = (squared_norm(x) - radius * radius) / *width;
                -(z * z) * 0.5
            }
            Family::TwoMoons {
                radius,
                width,
                bump_offset,
                bump_width,
            } => {
                let z = (squared_norm(x) - radius * radius) / *width;
                let a = (x[0] - *bump_offset) / *bump_width;
                let b = (x[0] + *bump_offset) / *bump_width;
                -(z * z) * 0.5 + log_sum_exp(&[-(a * a) * 0.5, -(b * b) * 0.5])
            }
            Family::StudentTMixture {
                dof,
                scale,
                centers,
            } => {
                let d = x.len() as f64;
                let terms: Vec<S> = centers
                    .iter()
                    .map(|c| {
                        let q = quadratic_form_iso(c, x) / (dof * scale * scale);
                        -(q + 1.0).ln() * (0.5 * (dof + d))
                    })
                    .collect();
                log_sum_exp(&terms)
            }
            Family::Uniform => S::constant(0.0),
        }
    }

    fn grad_into<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        let d = x.len();
        match self {
            Family::Gaussian {
                mean, precision, ..
            } => {
                for i in 0..d {
                    let mut acc = (x[0] - mean[0]) * precision[i * d];
                    for j in 1..d {
                        acc = acc + (x[j] - mean[j]) * precision[i * d + j];
                    }
                    out[i] = -acc;
                }
            }
            Family::GaussianMixture(comps) => {
                let terms: Vec<S> = comps.iter().map(|c| c.log_term(x)).collect();
                let lse = log_sum_exp(&terms);
                out.iter_mut().for_each(|o| *o = S::constant(0.0));
                for (c, t) in comps.iter().zip(&terms) {
                    let resp = (*t - lse).exp();
                    c.add_grad(x, resp, out);
                }
            }
            Family::Ring { radius, width } => {
                let z = (squared_norm(x) - radius * radius) / (*width * *width);
                for i in 0..d {
                    out[i] = -(z * x[i]) * 2.0;
                }
            }
            Family::TwoMoons {
                radius,
                width,
                bump_offset,
                bump_width,
            } => {
                let z = (squared_norm(x) - radius * radius) / (*width * *width);
                for i in 0..d {
                    out[i] = -(z * x[i]) * 2.0;
                }
                let a = (x[0] - *bump_offset) / *bump_width;
                let b = (x[0] + *bump_offset) / *bump_width;
                let ta = -(a * a) * 0.5;
                let tb = -(b * b) * 0.5;
                let lse = log_sum_exp(&[ta, tb]);
                let wa = (ta - lse).exp();
                let wb = (tb - lse).exp();
                // d/dx0 of each bump term is -(arg) / bump_width
                let bump = -(wa * a + wb * b) / *bump_width;
                out[0] = out[0] + bump;
            }
            Family::StudentTMixture {
                dof,
                scale,
                centers,
            } => {
                let dd = d as f64;
                let denom = dof * scale * scale;
                let terms: Vec<S> = centers
                    .iter()
                    .map(|c| {
                        let q = quadratic_form_iso(c, x) / denom;
                        -(q + 1.0).ln() * (0.5 * (dof + dd))
                    })
                    .collect();
                let lse = log_sum_exp(&terms);
                out.iter_mut().for_each(|o| *o = S::constant(0.0));
                for (c, t) in centers.iter().zip(&terms) {
                    let resp = (*t - lse).exp();
                    let q = quadratic_form_iso(c, x) / denom;
                    // d/dx of -(nu+d)/2 ln(1+q) = -(nu+d)/denom (x-c)/(1+q)
                    let factor = resp / (q + 1.0) * (-(dof + dd) / denom);
                    for i in 0..d {
                        out[i] = out[i] + factor * (x[i] - c[i]);
                    }
                }
            }
            Family::Uniform => out.iter_mut().for_each(|o| *o = S::constant(0.0)),
        }
    }
}

fn quadratic_form_iso<S: Scalar>(center: &[f64], x: &[S]) -> S {
    let mut q = (x[0] - center[0]) * (x[0] - center[0]);
    for i in 1..x.len() {
        q = q + (x[i] - center[i]) * (x[i] - center[i]);
    }
    q
}

/// An unnormalized target `pi*` with gradient and optional reference data.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDensity {
    name: String,
    dim: usize,
    family: Family,
    log_scale: f64,
    ground_truth: Option<GroundTruth>,
    sampling_box: Option<SamplingBox>,
    entropy_reference: Option<f64>,
    default_init_std: Vec<f64>,
}

impl TargetDensity {
    fn from_family(name: &str, dim: usize, family: Family) -> Self {
        Self {
            name: name.to_string(),
            dim,
            family,
            log_scale: 0.0,
            ground_truth: None,
            sampling_box: None,
            entropy_reference: None,
            default_init_std: vec![1.0; dim],
        }
    }

    /// `log pi*(x) = -1/2 (x - mean)^T cov^{-1} (x - mean)`, with analytic
    /// ground truth.
    pub fn gaussian(name: &str, mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let precision = linalg::spd_inverse(&covariance, d)?;
        let log_det = linalg::spd_log_det(&covariance, d)?;
        let entropy = 0.5 * d as f64 * (2.0 * PI * E).ln() + 0.5 * log_det;
        let log_z = 0.5 * d as f64 * (2.0 * PI).ln() + 0.5 * log_det;
        let mut t = Self::from_family(
            name,
            d,
            Family::Gaussian {
                mean,
                covariance: covariance.clone(),
                precision,
            },
        );
        t.ground_truth = Some(GroundTruth {
            neg_expected_log_target: 0.5 * d as f64,
            entropy: Some(entropy),
            log_z: Some(log_z),
        });
        t.entropy_reference = Some(entropy);
        t.default_init_std = (0..d).map(|i| covariance[i * d + i].sqrt()).collect();
        Ok(t)
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = 1.0;
        }
        Self::gaussian(&format!("std-gauss-{dim}d"), vec![0.0; dim], cov).expect("identity is SPD")
    }

    pub fn isotropic_gaussian(dim: usize, variance: f64) -> Self {
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = variance;
        }
        Self::gaussian(&format!("iso-gauss-{dim}d"), vec![0.0; dim], cov)
            .expect("scaled identity is SPD")
    }

    /// Constant density on a box.
    pub fn uniform(sampling_box: SamplingBox) -> Self {
        let d = sampling_box.dim();
        let log_z = sampling_box.volume().ln();
        let mut t = Self::from_family("uniform", d, Family::Uniform);
        t.ground_truth = Some(GroundTruth {
            neg_expected_log_target: 0.0,
            entropy: Some(log_z),
            log_z: Some(log_z),
        });
        t.sampling_box = Some(sampling_box);
        t
    }

    /// Replaces the box used by rejection sampling.
    pub fn with_sampling_box(mut self, sampling_box: SamplingBox) -> Self {
        assert_eq!(sampling_box.dim(), self.dim, "box dimension");
        self.sampling_box = Some(sampling_box);
        self
    }

    /// Same target with `pi*` multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c > 0.0, "scale must be positive");
        let lc = c.ln();
        let mut t = self.clone();
        t.log_scale += lc;
        t.ground_truth = self.ground_truth.map(|g| GroundTruth {
            neg_expected_log_target: g.neg_expected_log_target - lc,
            entropy: g.entropy,
            log_z: g.log_z.map(|z| z + lc),
        });
        t
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ground_truth(&self) -> Option<GroundTruth> {
        self.ground_truth
    }

    pub fn sampling_box(&self) -> Option<&SamplingBox> {
        self.sampling_box.as_ref()
    }

    /// Entropy used to set the floor `h`: exact when known, otherwise the
    /// entropy of the moment-matched Gaussian, an upper bound on `H(pi)`.
    pub fn entropy_reference(&self) -> Option<f64> {
        self.entropy_reference
    }

    /// Per-dimension standard deviation of the registered initial distribution.
    pub fn default_init_std(&self) -> &[f64] {
        &self.default_init_std
    }

    /// Mean and covariance when the target is a single Gaussian.
    pub fn gaussian_moments(&self) -> Option<(&[f64], &[f64])> {
        match &self.family {
            Family::Gaussian {
                mean, covariance, ..
            } => Some((mean, covariance)),
            _ => None,
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// `log pi*(x)`. Panics in debug builds on a dimension mismatch; use
    /// [`TargetDensity::try_log_density`] for checked access.
    #[inline]
    pub fn log_density<S: Scalar>(&self, x: &[S]) -> S {
        debug_assert_eq!(x.len(), self.dim);
        let v = self.family.log_density(x);
        if self.log_scale == 0.0 {
            v
        } else {
            v + self.log_scale
        }
    }

    pub fn try_log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.log_density(x))
    }

    /// Writes `grad log pi*(x)` into `out`.
    #[inline]
    pub fn grad_log_density_into<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        debug_assert_eq!(x.len(), self.dim);
        self.family.grad_into(x, out);
    }

    /// `grad log pi*(x)`.
    pub fn grad_log_density<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        self.check_dim(x.len())?;
        let mut out = vec![S::constant(0.0); self.dim];
        self.family.grad_into(x, &mut out);
        Ok(out)
    }
}

/// Named entries of the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkId {
    CorrGauss,
    BenchA,
    BenchB,
    BenchC,
    BenchD,
    BenchE,
    BenchF,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 7] = [
        BenchmarkId::CorrGauss,
        BenchmarkId::BenchA,
        BenchmarkId::BenchB,
        BenchmarkId::BenchC,
        BenchmarkId::BenchD,
        BenchmarkId::BenchE,
        BenchmarkId::BenchF,
    ];

    /// The six 2D synthetic benchmarks.
    pub const SUITE: [BenchmarkId; 6] = [
        BenchmarkId::BenchA,
        BenchmarkId::BenchB,
        BenchmarkId::BenchC,
        BenchmarkId::BenchD,
        BenchmarkId::BenchE,
        BenchmarkId::BenchF,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkId::CorrGauss => "corr-gauss",
            BenchmarkId::BenchA => "bench-a",
            BenchmarkId::BenchB => "bench-b",
            BenchmarkId::BenchC => "bench-c",
            BenchmarkId::BenchD => "bench-d",
            BenchmarkId::BenchE => "bench-e",
            BenchmarkId::BenchF => "bench-f",
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownTarget(s.to_string()))
    }
}

/// Builds the registered target for `id`.
pub fn make_target(id: BenchmarkId) -> TargetDensity {
    let name = id.as_str();
    let mut t = match id {
        BenchmarkId::CorrGauss => {
            let mut t =
                TargetDensity::gaussian(name, vec![0.0, 0.0], vec![2.0, 1.5, 1.5, 1.6]).unwrap();
            t.sampling_box = Some(SamplingBox::square(9.0));
            t.default_init_std = vec![3.0_f64.sqrt(); 2];
            return t;
        }
        BenchmarkId::BenchA => {
            let cov = [0.49, 0.0, 0.0, 0.49];
            let comps = vec![
                GaussianComponent::new(0.5, vec![-2.0, 0.0], &cov).unwrap(),
                GaussianComponent::new(0.5, vec![2.0, 0.0], &cov).unwrap(),
            ];
            let mut t = TargetDensity::from_family(name, 2, Family::GaussianMixture(comps));
            t.sampling_box = Some(SamplingBox::new(vec![-7.5, -5.5], vec![7.5, 5.5]));
            t
        }
        BenchmarkId::BenchB => {
            let mut t =
                TargetDensity::gaussian(name, vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 0.25]).unwrap();
            t.sampling_box = Some(SamplingBox::new(vec![-12.0, -3.0], vec![12.0, 3.0]));
            t
        }
        BenchmarkId::BenchC => {
            let mut t = TargetDensity::from_family(
                name,
                2,
                Family::Ring {
                    radius: 2.0,
                    width: 1.0,
                },
            );
            t.sampling_box = Some(SamplingBox::square(4.0));
            t
        }
        BenchmarkId::BenchD => {
            let mut t = TargetDensity::from_family(
                name,
                2,
                Family::TwoMoons {
                    radius: 2.0,
                    width: 1.6,
                    bump_offset: 2.0,
                    bump_width: 0.6,
                },
            );
            t.sampling_box = Some(SamplingBox::square(4.5));
            t
        }
        BenchmarkId::BenchE => {
            let mut t =
                TargetDensity::gaussian(name, vec![0.0, 0.0], vec![1.0, 0.9, 0.9, 1.0]).unwrap();
            t.sampling_box = Some(SamplingBox::square(7.0));
            t
        }
        BenchmarkId::BenchF => {
            let mut t = TargetDensity::from_family(
                name,
                2,
                Family::StudentTMixture {
                    dof: 6.0,
                    scale: 0.6,
                    centers: vec![vec![-1.5, 0.0], vec![1.5, 0.0]],
                },
            );
            t.sampling_box = Some(SamplingBox::square(17.0));
            t
        }
    };

    // Non-Gaussian entries: Gaussian max-entropy bound and a diagonal initial
    // distribution slightly wider than the target marginals.
    let b = t.sampling_box.clone().expect("benchmarks carry a box");
    let (_, cov) = box_moments(&t, &b, 600);
    let gauss_entropy =
        (2.0 * PI * E).ln() + 0.5 * linalg::spd_log_det(&cov, 2).expect("covariance is SPD");
    if t.entropy_reference.is_none() {
        t.entropy_reference = Some(gauss_entropy);
    }
    t.default_init_std = vec![1.1 * cov[0].sqrt(), 1.1 * cov[3].sqrt()];
    t
}

pub fn make_target_by_name(name: &str) -> Result<TargetDensity> {
    Ok(make_target(name.parse()?))
}

/// `H(pi)` for targets with a closed-form entropy.
pub fn target_entropy_reference(id: BenchmarkId) -> Result<f64> {
    make_target(id)
        .ground_truth()
        .and_then(|g| g.entropy)
        .ok_or_else(|| Error::NoAnalyticEntropy(id.to_string()))
}

/// Mean and covariance of a 2D target restricted to a box, by midpoint
/// quadrature on a `grid x grid` lattice.
pub fn box_moments(target: &TargetDensity, b: &SamplingBox, grid: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(target.dim(), 2, "quadrature moments are 2D only");
    let hx = (b.upper[0] - b.lower[0]) / grid as f64;
    let hy = (b.upper[1] - b.lower[1]) / grid as f64;
    let mut w_sum = 0.0;
    let mut m = [0.0; 2];
    let mut s = [0.0; 3];
    for i in 0..grid {
        let x = b.lower[0] + (i as f64 + 0.5) * hx;
        for j in 0..grid {
            let y = b.lower[1] + (j as f64 + 0.5) * hy;
            let w = target.log_density(&[x, y]).exp();
            w_sum += w;
            m[0] += w * x;
            m[1] += w * y;
            s[0] += w * x * x;
            s[1] += w * x * y;
            s[2] += w * y * y;
        }
    }
    let mean = vec![m[0] / w_sum, m[1] / w_sum];
    let cxx = s[0] / w_sum - mean[0] * mean[0];
    let cxy = s[1] / w_sum - mean[0] * mean[1];
    let cyy = s[2] / w_sum - mean[1] * mean[1];
    (mean, vec![cxx, cxy, cxy, cyy])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corr_gauss_values() {
        let t = make_target(BenchmarkId::CorrGauss);
        assert_eq!(t.log_density(&[0.0, 0.0]), 0.0);
        let v = t.log_density(&[1.0, 1.0]);
        assert!((v - (-0.6 / 0.95 / 2.0)).abs() < 1e-12, "{v}");
        assert!((v + 0.315_789_473_684).abs() < 1e-9);
        let g = t.grad_log_density(&[1.0, 1.0]).unwrap();
        assert!((g[0] + 0.1 / 0.95).abs() < 1e-12);
        assert!((g[1] + 0.5 / 0.95).abs() < 1e-12);
        assert!((g[0] + 0.105_263_157_9).abs() < 1e-9);
        assert!((g[1] + 0.526_315_789_5).abs() < 1e-9);
        let gt = t.ground_truth().unwrap();
        assert_eq!(gt.neg_expected_log_target, 1.0);
    }

    #[test]
    fn standard_gaussian_gradient() {
        let t = TargetDensity::standard_gaussian(2);
        assert_eq!(t.grad_log_density(&[1.0, -2.0]).unwrap(), vec![-1.0, 2.0]);
    }

    #[test]
    fn entropies() {
        let h = target_entropy_reference(BenchmarkId::CorrGauss).unwrap();
        let expect = 1.0 + (2.0 * PI).ln() + 0.5 * 0.95_f64.ln();
        assert!((h - expect).abs() < 1e-12);
        assert!((h - 2.812_23).abs() < 1e-5);
        let std2 = TargetDensity::standard_gaussian(2).ground_truth().unwrap();
        assert!((std2.entropy.unwrap() - 2.837_877).abs() < 1e-6);
        let iso3 = TargetDensity::isotropic_gaussian(2, 3.0)
            .ground_truth()
            .unwrap();
        assert!((iso3.entropy.unwrap() - 3.936_489).abs() < 1e-6);
    }

    #[test]
    fn non_gaussian_entropy_is_unavailable() {
        assert!(matches!(
            target_entropy_reference(BenchmarkId::BenchC),
            Err(Error::NoAnalyticEntropy(_))
        ));
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(matches!(
            make_target_by_name("bench-z"),
            Err(Error::UnknownTarget(_))
        ));
        for id in BenchmarkId::ALL {
            assert_eq!(
                make_target_by_name(id.as_str()).unwrap().name(),
                id.as_str()
            );
        }
    }

    #[test]
    fn dimension_mismatch() {
        let t = make_target(BenchmarkId::CorrGauss);
        assert!(matches!(
            t.grad_log_density(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn init_distribution_exceeds_reference_entropy() {
        for id in BenchmarkId::ALL {
            let t = make_target(id);
            let h0: f64 =
                t.default_init_std().iter().map(|s| s.ln()).sum::<f64>() + (2.0 * PI * E).ln();
            assert!(h0 > t.entropy_reference().unwrap(), "{id}");
        }
    }

    #[test]
    fn scaling_shifts_log_density_only() {
        let t = make_target(BenchmarkId::BenchD);
        let s = t.scaled(3.0);
        let x = [0.4, -1.3];
        assert!((s.log_density(&x) - t.log_density(&x) - 3.0_f64.ln()).abs() < 1e-12);
        assert_eq!(
            s.grad_log_density(&x).unwrap(),
            t.grad_log_density(&x).unwrap()
        );
    }
}
