//! Sample-quality metrics: Monte Carlo `E[log pi*]`, kernel MMD and 2D
//! histograms, plus TSV emitters for plotting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::SampleBatch;
use crate::error::{Error, Result};
use crate::targets::{SamplingBox, TargetDensity};

/// Mean of `log pi*` over the batch and its standard error.
pub fn expected_log_target(batch: &SampleBatch, target: &TargetDensity) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if batch.dim != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: batch.dim,
        });
    }
    let values: Vec<f64> = batch.rows().map(|x| target.log_density(x)).collect();
    Ok(mean_and_stderr(&values))
}

/// Sample mean and `sd / sqrt(n)` (zero for a single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One point of a convergence curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: usize,
    pub estimate: f64,
    pub std_error: f64,
}

/// `E_{p_t}[log pi*]` for each recorded marginal `P_0 .. P_T`.
pub fn convergence_curve(
    batches: &[SampleBatch],
    target: &TargetDensity,
) -> Result<Vec<CurvePoint>> {
    batches
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let (estimate, std_error) = expected_log_target(b, target)?;
            Ok(CurvePoint {
                t,
                estimate,
                std_error,
            })
        })
        .collect()
}

pub fn curve_to_tsv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("t\testimate\tstd_error\n");
    for p in curve {
        out.push_str(&format!("{}\t{}\t{}\n", p.t, p.estimate, p.std_error));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample.
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
}

/// Points used for the median heuristic are capped; larger pools are put in
/// lexicographic order and strided so the result ignores input order.
const MEDIAN_POOL_CAP: usize = 4000;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Resolves the kernel bandwidth for the pair `(a, b)`.
pub fn resolve_bandwidth(a: &SampleBatch, b: &SampleBatch, config: &MmdConfig) -> Result<f64> {
    let sigma = match config.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::MedianHeuristic => {
            let mut pool: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
            if pool.len() > MEDIAN_POOL_CAP {
                pool.sort_by(|x, y| {
                    x.iter()
                        .zip(y.iter())
                        .map(|(p, q)| p.total_cmp(q))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let stride = pool.len() as f64 / MEDIAN_POOL_CAP as f64;
                pool = (0..MEDIAN_POOL_CAP)
                    .map(|k| pool[(k as f64 * stride) as usize])
                    .collect();
            }
            let mut d2: Vec<f64> = (0..pool.len())
                .into_par_iter()
                .flat_map_iter(|i| {
                    let pool = &pool;
                    (i + 1..pool.len()).map(move |j| squared_distance(pool[i], pool[j]))
                })
                .collect();
            if d2.is_empty() {
                return Err(Error::InvalidParameter(
                    "median heuristic needs at least two points".into(),
                ));
            }
            let mid = d2.len() / 2;
            let (_, m, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
            m.sqrt()
        }
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    Ok(sigma)
}

/// Sum of `k(x_i, y_j)` over all pairs, skipping `i == j` when `same`.
/// Row sums are reduced in index order.
fn kernel_sum(x: &SampleBatch, y: &SampleBatch, inv_two_sigma2: f64, same: bool) -> f64 {
    let rows: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut s = 0.0;
            for (j, yj) in y.rows().enumerate() {
                if same && i == j {
                    continue;
                }
                s += (-squared_distance(xi, yj) * inv_two_sigma2).exp();
            }
            s
        })
        .collect();
    rows.iter().sum()
}

/// Unbiased MMD² with a Gaussian kernel `exp(-|x-y|² / (2 sigma²))`.
pub fn mmd(a: &SampleBatch, b: &SampleBatch, config: &MmdConfig) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidParameter(
            "MMD needs at least two points per sample".into(),
        ));
    }
    let sigma = resolve_bandwidth(a, b, config)?;
    Ok(mmd_with_bandwidth(a, b, sigma))
}

fn mmd_with_bandwidth(a: &SampleBatch, b: &SampleBatch, sigma: f64) -> f64 {
    let g = 1.0 / (2.0 * sigma * sigma);
    let (m, n) = (a.len() as f64, b.len() as f64);
    let kaa = kernel_sum(a, a, g, true) / (m * (m - 1.0));
    let kbb = kernel_sum(b, b, g, true) / (n * (n - 1.0));
    let kab = kernel_sum(a, b, g, false) / (m * n);
    kaa + kbb - 2.0 * kab
}

/// Standard deviation of MMD² under random relabeling of the pooled sample,
/// at the bandwidth resolved for `(a, b)`. A yardstick for estimator noise.
pub fn mmd_null_std(
    a: &SampleBatch,
    b: &SampleBatch,
    config: &MmdConfig,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    if permutations < 2 {
        return Err(Error::InvalidParameter(
            "need at least two permutations".into(),
        ));
    }
    let sigma = resolve_bandwidth(a, b, config)?;
    let d = a.dim;
    let pooled: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let m = a.len();
    let stats: Vec<f64> = (0..permutations)
        .map(|p| {
            let mut idx: Vec<usize> = (0..pooled.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(p as u64)));
            let gather = |ids: &[usize]| {
                SampleBatch::new(
                    ids.iter()
                        .flat_map(|&i| pooled[i].iter().copied())
                        .collect(),
                    d,
                    0,
                    0,
                )
            };
            mmd_with_bandwidth(&gather(&idx[..m]), &gather(&idx[m..]), sigma)
        })
        .collect();
    let (mean, _) = mean_and_stderr(&stats);
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (stats.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Counts on a `bins x bins` grid; points outside the range go to `overflow`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major `[ix * bins + iy]`.
    pub counts: Vec<u64>,
    pub total: u64,
    pub overflow: u64,
}

impl Histogram2D {
    pub fn bins(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[ix * self.bins() + iy]
    }

    /// Long format: one line per cell with its centre and count.
    pub fn to_tsv(&self) -> String {
        let b = self.bins();
        let mut out = format!(
            "# total={} overflow={}\nx\ty\tcount\n",
            self.total, self.overflow
        );
        for ix in 0..b {
            let xc = 0.5 * (self.x_edges[ix] + self.x_edges[ix + 1]);
            for iy in 0..b {
                let yc = 0.5 * (self.y_edges[iy] + self.y_edges[iy + 1]);
                out.push_str(&format!("{xc}\t{yc}\t{}\n", self.count(ix, iy)));
            }
        }
        out
    }
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect()
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    // the upper edge belongs to the last bin
    Some((((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1))
}

pub fn histogram2d(batch: &SampleBatch, bins: usize, range: &SamplingBox) -> Result<Histogram2D> {
    if batch.dim != 2 || range.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: if batch.dim != 2 {
                batch.dim
            } else {
                range.dim()
            },
        });
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let (lx, ux, ly, uy) = (
        range.lower[0],
        range.upper[0],
        range.lower[1],
        range.upper[1],
    );
    let mut counts = vec![0u64; bins * bins];
    let mut overflow = 0;
    for r in batch.rows() {
        match (bin_index(r[0], lx, ux, bins), bin_index(r[1], ly, uy, bins)) {
            (Some(i), Some(j)) => counts[i * bins + j] += 1,
            _ => overflow += 1,
        }
    }
    Ok(Histogram2D {
        x_edges: edges(lx, ux, bins),
        y_edges: edges(ly, uy, bins),
        counts,
        total: batch.len() as u64,
        overflow,
    })
}
