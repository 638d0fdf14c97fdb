//! Experiment configuration: a flat `key=value` file, overridable per key.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ergodic::chain::{ChainSpec, InitialDistParams};
use ergodic::error::{Error, Result};
use ergodic::kv::KvMap;
use ergodic::targets::{make_target, BenchmarkId, TargetDensity};
use ergodic::trainer::{AdamConfig, TrainConfig};

/// Entropy floor setting as written in the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyFloor {
    /// The target's entropy reference.
    Auto,
    /// Guard disabled.
    Off,
    Value(f64),
}

impl fmt::Display for EntropyFloor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropyFloor::Auto => f.write_str("auto"),
            EntropyFloor::Off => f.write_str("off"),
            EntropyFloor::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for EntropyFloor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(EntropyFloor::Auto),
            "off" | "none" => Ok(EntropyFloor::Off),
            _ => s
                .parse()
                .map(EntropyFloor::Value)
                .map_err(|_| format!("expected auto, off or a number, got `{s}`")),
        }
    }
}

/// Standard deviations of the initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum InitStd {
    /// The target's registered default.
    Default,
    PerDim(Vec<f64>),
}

impl fmt::Display for InitStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitStd::Default => f.write_str("default"),
            InitStd::PerDim(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&s.join(","))
            }
        }
    }
}

impl FromStr for InitStd {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "default" {
            return Ok(InitStd::Default);
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(InitStd::PerDim)
            .map_err(|_| format!("expected `default` or a comma-separated list, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub target: BenchmarkId,
    pub chain_length: usize,
    pub leapfrog_steps: usize,
    pub batch: usize,
    pub iterations: usize,
    pub h: EntropyFloor,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_seed: u64,
    pub out: PathBuf,
    pub stop_gradient: bool,
    pub train_momentum_variance: bool,
    pub p0_std: InitStd,
    pub step_size_min: f64,
    pub step_size_max: f64,
    pub eval_samples: usize,
    pub oracle_samples: usize,
    pub mmd_samples: usize,
    pub hist_bins: usize,
    pub bench_targets: Vec<BenchmarkId>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            target: BenchmarkId::CorrGauss,
            chain_length: 10,
            leapfrog_steps: 5,
            batch: 128,
            iterations: 50,
            h: EntropyFloor::Auto,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 0,
            eval_seed: 1,
            out: PathBuf::from("out"),
            stop_gradient: false,
            train_momentum_variance: true,
            p0_std: InitStd::Default,
            step_size_min: 0.01,
            step_size_max: 0.025,
            eval_samples: 100_000,
            oracle_samples: 100_000,
            mmd_samples: 2000,
            hist_bins: 50,
            bench_targets: BenchmarkId::ALL.to_vec(),
        }
    }
}

pub const KEYS: [&str; 20] = [
    "target",
    "T",
    "leapfrog_steps",
    "batch",
    "iters",
    "h",
    "learning_rate",
    "seed",
    "eval_seed",
    "out",
    "stop_gradient",
    "train_momentum_variance",
    "p0_std",
    "step_size_min",
    "step_size_max",
    "eval_samples",
    "oracle_samples",
    "mmd_samples",
    "hist_bins",
    "bench_targets",
];

fn parse_targets(s: &str) -> std::result::Result<Vec<BenchmarkId>, String> {
    if s == "all" {
        return Ok(BenchmarkId::ALL.to_vec());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|e: Error| e.to_string()))
        .collect()
}

/// Reads `key` into `slot` when present, recording a message on failure.
fn read<T: FromStr>(m: &KvMap, key: &str, slot: &mut T, errors: &mut Vec<String>)
where
    T::Err: fmt::Display,
{
    if let Some(raw) = m.raw(key) {
        match raw.parse() {
            Ok(v) => *slot = v,
            Err(e) => errors.push(format!("{key}: {e}")),
        }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with the entries of `m`. Unknown keys and every
    /// unparsable value are reported together.
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let mut c = Self::default();
        let mut errors: Vec<String> = m
            .keys()
            .filter(|k| !KEYS.contains(k))
            .map(|k| format!("{k}: unknown key"))
            .collect();
        read(m, "target", &mut c.target, &mut errors);
        read(m, "T", &mut c.chain_length, &mut errors);
        read(m, "leapfrog_steps", &mut c.leapfrog_steps, &mut errors);
        read(m, "batch", &mut c.batch, &mut errors);
        read(m, "iters", &mut c.iterations, &mut errors);
        read(m, "h", &mut c.h, &mut errors);
        read(m, "learning_rate", &mut c.learning_rate, &mut errors);
        read(m, "seed", &mut c.seed, &mut errors);
        read(m, "eval_seed", &mut c.eval_seed, &mut errors);
        read(m, "out", &mut c.out, &mut errors);
        read(m, "stop_gradient", &mut c.stop_gradient, &mut errors);
        read(
            m,
            "train_momentum_variance",
            &mut c.train_momentum_variance,
            &mut errors,
        );
        read(m, "p0_std", &mut c.p0_std, &mut errors);
        read(m, "step_size_min", &mut c.step_size_min, &mut errors);
        read(m, "step_size_max", &mut c.step_size_max, &mut errors);
        read(m, "eval_samples", &mut c.eval_samples, &mut errors);
        read(m, "oracle_samples", &mut c.oracle_samples, &mut errors);
        read(m, "mmd_samples", &mut c.mmd_samples, &mut errors);
        read(m, "hist_bins", &mut c.hist_bins, &mut errors);
        if let Some(raw) = m.raw("bench_targets") {
            match parse_targets(raw) {
                Ok(v) => c.bench_targets = v,
                Err(e) => errors.push(format!("bench_targets: {e}")),
            }
        }
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(Error::Parse(errors.join("; ")))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("target", self.target);
        m.set("T", self.chain_length);
        m.set("leapfrog_steps", self.leapfrog_steps);
        m.set("batch", self.batch);
        m.set("iters", self.iterations);
        m.set("h", self.h);
        m.set("learning_rate", self.learning_rate);
        m.set("seed", self.seed);
        m.set("eval_seed", self.eval_seed);
        m.set("out", self.out.display());
        m.set("stop_gradient", self.stop_gradient);
        m.set("train_momentum_variance", self.train_momentum_variance);
        m.set("p0_std", &self.p0_std);
        m.set("step_size_min", self.step_size_min);
        m.set("step_size_max", self.step_size_max);
        m.set("eval_samples", self.eval_samples);
        m.set("oracle_samples", self.oracle_samples);
        m.set("mmd_samples", self.mmd_samples);
        m.set("hist_bins", self.hist_bins);
        let names: Vec<&str> = self.bench_targets.iter().map(|t| t.as_str()).collect();
        m.set("bench_targets", names.join(","));
        m
    }

    pub fn render(&self) -> String {
        self.to_kv().render()
    }

    pub fn target_density(&self) -> TargetDensity {
        make_target(self.target)
    }

    /// Numeric floor; `f64::NEG_INFINITY` when the guard is off.
    pub fn entropy_floor(&self) -> Result<f64> {
        let target = self.target_density();
        match self.h {
            EntropyFloor::Off => Ok(f64::NEG_INFINITY),
            EntropyFloor::Value(v) => Ok(v),
            EntropyFloor::Auto => target
                .entropy_reference()
                .ok_or_else(|| Error::NoAnalyticEntropy(self.target.to_string())),
        }
    }

    pub fn initial_distribution(&self) -> Result<InitialDistParams> {
        let target = self.target_density();
        let std = match &self.p0_std {
            InitStd::Default => target.default_init_std().to_vec(),
            InitStd::PerDim(v) => v.clone(),
        };
        InitialDistParams::from_std(vec![0.0; target.dim()], &std)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.batch,
            iterations: self.iterations,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            entropy_floor: self.entropy_floor()?,
            stop_gradient: self.stop_gradient,
            seed: self.seed,
            step_size_init_range: (self.step_size_min, self.step_size_max),
            train_momentum_variance: self.train_momentum_variance,
        })
    }

    /// Every offending field, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.leapfrog_steps == 0 {
            v.push("leapfrog_steps: must be at least 1".to_string());
        }
        for (key, n) in [
            ("batch", self.batch),
            ("eval_samples", self.eval_samples),
            ("oracle_samples", self.oracle_samples),
            ("mmd_samples", self.mmd_samples),
        ] {
            if n < 2 {
                v.push(format!("{key}: must be at least 2, got {n}"));
            }
        }
        if self.hist_bins == 0 {
            v.push("hist_bins: must be at least 1".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            v.push(format!(
                "learning_rate: must be a non-negative number, got {}",
                self.learning_rate
            ));
        }
        if !(self.step_size_min > 0.0 && self.step_size_max >= self.step_size_min) {
            v.push(format!(
                "step_size_min/step_size_max: need 0 < min <= max, got [{}, {}]",
                self.step_size_min, self.step_size_max
            ));
        }
        if self.bench_targets.is_empty() {
            v.push("bench_targets: empty".to_string());
        }
        if let EntropyFloor::Value(h) = self.h {
            if !h.is_finite() {
                v.push(format!("h: must be finite, got {h}"));
            }
        }
        let d = self.target_density().dim();
        let p0 = match &self.p0_std {
            InitStd::PerDim(s) if s.len() != d => {
                v.push(format!(
                    "p0_std: target has {d} dimensions, got {} values",
                    s.len()
                ));
                None
            }
            InitStd::PerDim(s) if s.iter().any(|x| !(*x > 0.0 && x.is_finite())) => {
                v.push("p0_std: entries must be positive".to_string());
                None
            }
            _ => self.initial_distribution().ok(),
        };
        match (self.entropy_floor(), p0) {
            (Err(e), _) => v.push(format!("h: {e}")),
            (Ok(h), Some(p0)) if p0.entropy() <= h => v.push(format!(
                "p0_std: H(P0) = {:.5} does not exceed h = {h:.5}; widen P0 or set h=off",
                p0.entropy()
            )),
            _ => {}
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

    /// Untrained chain: step sizes drawn from the init range with `seed`.
    pub fn chain_spec(&self) -> Result<ChainSpec> {
        self.validate()?;
        ChainSpec::with_random_steps(
            self.target_density(),
            self.initial_distribution()?,
            self.chain_length,
            self.leapfrog_steps,
            (self.step_size_min, self.step_size_max),
            self.entropy_floor()?,
            self.seed,
        )
    }
}
