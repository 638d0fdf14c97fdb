//! Subcommand implementations. Each writes its artifacts under `config.out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ergodic::chain::{run_chain, ChainSpec, SampleBatch};
use ergodic::error::{Error, Result};
use ergodic::eval::{
    convergence_curve, curve_to_tsv, expected_log_target, histogram2d, mmd, mmd_null_std,
    resolve_bandwidth, Bandwidth, CurvePoint, MmdConfig,
};
use ergodic::kv::KvMap;
use ergodic::oracles::{exact_gaussian_sample, rejection_sample};
use ergodic::targets::{BenchmarkId, TargetDensity};
use ergodic::trainer::{train, TrainReport};

use crate::config::{EntropyFloor, ExperimentConfig, InitStd};

pub const PARAMS_FILE: &str = "params.kv";
pub const REPORT_FILE: &str = "train_report.csv";
pub const CONFIG_FILE: &str = "config.kv";
pub const BENCH_FILE: &str = "bench.csv";
const NULL_PERMUTATIONS: usize = 20;

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn ensure_out(config: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&config.out)?;
    Ok(&config.out)
}

pub fn load_params(path: &Path) -> Result<ChainSpec> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    ChainSpec::from_kv(&KvMap::parse(&text)?)
}

pub struct TrainOutcome {
    pub initial: ChainSpec,
    pub trained: ChainSpec,
    pub report: TrainReport,
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let initial = config.chain_spec()?;
    let tc = config.train_config()?;
    let out = ensure_out(config)?;
    let started = Instant::now();
    let (trained, report) = train(&initial, &tc)?;
    log::info!(
        "trained {} iterations in {:.2}s, {} guard events",
        tc.iterations,
        started.elapsed().as_secs_f64(),
        report.guard_events()
    );
    for r in report.records.iter().filter(|r| r.guard_triggered) {
        log::info!("iteration {}: entropy guard kept P0 fixed", r.iteration);
    }
    write(&out.join(CONFIG_FILE), &config.render())?;
    write(&out.join(PARAMS_FILE), &trained.to_kv().render())?;
    write(&out.join(REPORT_FILE), &report.to_csv())?;
    Ok(TrainOutcome {
        initial,
        trained,
        report,
    })
}

/// Rejection-oracle sample for `target`, cached as CSV under `dir`.
pub fn oracle_sample(
    target: &TargetDensity,
    n: usize,
    seed: u64,
    dir: &Path,
) -> Result<SampleBatch> {
    let path = dir.join(format!("oracle_{}_{n}_{seed}.csv", target.name()));
    if let Ok(text) = fs::read_to_string(&path) {
        let batch = SampleBatch::from_csv(&text, seed, 0)?;
        if batch.len() == n {
            log::info!("oracle cache hit {}", path.display());
            return Ok(batch);
        }
    }
    log::info!(
        "oracle cache miss for {}; running rejection sampler",
        target.name()
    );
    let started = Instant::now();
    let run = rejection_sample(target, n, seed)?;
    log::info!(
        "oracle: {n} samples in {:.2}s (acceptance {:.4})",
        started.elapsed().as_secs_f64(),
        run.acceptance_rate
    );
    run.batch.write_csv(&path, None)?;
    Ok(run.batch)
}

fn head(batch: &SampleBatch, n: usize) -> SampleBatch {
    let n = n.min(batch.len());
    SampleBatch::new(
        batch.points[..n * batch.dim].to_vec(),
        batch.dim,
        batch.seed,
        batch.chain_length,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub trained_curve: Vec<CurvePoint>,
    pub untrained_curve: Vec<CurvePoint>,
    pub oracle_estimate: (f64, f64),
    /// `(t, trained, untrained)` for `t = 1..=T`.
    pub mmd_curve: Vec<(usize, f64, f64)>,
    pub mmd_null_std: f64,
    pub bandwidth: f64,
    pub files: Vec<PathBuf>,
}

/// Untrained chain matching `trained` in target and length, with the config's
/// initial step-size draw.
fn untrained_like(config: &ExperimentConfig, trained: &ChainSpec) -> Result<ChainSpec> {
    let mut c = config.clone();
    c.target = trained.target.name().parse()?;
    c.chain_length = trained.chain_length();
    c.chain_spec()
}

pub fn cmd_evaluate(config: &ExperimentConfig, params: Option<&Path>) -> Result<EvalSummary> {
    let out = ensure_out(config)?.to_path_buf();
    let params = params.map_or_else(|| out.join(PARAMS_FILE), Path::to_path_buf);
    let trained = load_params(&params)?;
    let untrained = untrained_like(config, &trained)?;
    let target = &trained.target;
    let t_len = trained.chain_length();

    let oracle = oracle_sample(target, config.oracle_samples, config.eval_seed, &out)?;
    let oracle_estimate = expected_log_target(&oracle, target)?;

    let run_t = run_chain(&trained, config.eval_samples, config.eval_seed, true)?;
    let run_u = run_chain(&untrained, config.eval_samples, config.eval_seed, true)?;
    let marg_t = run_t.intermediate.expect("recorded");
    let marg_u = run_u.intermediate.expect("recorded");
    let trained_curve = convergence_curve(&marg_t, target)?;
    let untrained_curve = convergence_curve(&marg_u, target)?;

    // a single kernel for every comparison so the curve is comparable across t
    let oracle_head = head(&oracle, config.mmd_samples);
    let bandwidth = resolve_bandwidth(&oracle_head, &oracle_head, &MmdConfig::default())?;
    let mcfg = MmdConfig {
        bandwidth: Bandwidth::Fixed(bandwidth),
    };
    let mut mmd_curve = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let a = mmd(&head(&marg_t[t], config.mmd_samples), &oracle_head, &mcfg)?;
        let b = mmd(&head(&marg_u[t], config.mmd_samples), &oracle_head, &mcfg)?;
        mmd_curve.push((t, a, b));
    }
    let final_t = head(&run_t.final_batch, config.mmd_samples);
    let null_std = mmd_null_std(
        &final_t,
        &oracle_head,
        &mcfg,
        NULL_PERMUTATIONS,
        config.eval_seed,
    )?;

    let mut files = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        write(&p, &text)?;
        files.push(p);
        Ok(())
    };
    emit("convergence_trained.tsv", curve_to_tsv(&trained_curve))?;
    emit("convergence_untrained.tsv", curve_to_tsv(&untrained_curve))?;
    let mut mmd_tsv = String::from("t\tmmd2_trained\tmmd2_untrained\n");
    for (t, a, b) in &mmd_curve {
        mmd_tsv.push_str(&format!("{t}\t{a}\t{b}\n"));
    }
    emit("mmd.tsv", mmd_tsv)?;
    if let Some(range) = target.sampling_box().filter(|b| b.dim() == 2) {
        emit(
            "hist_trained.tsv",
            histogram2d(&run_t.final_batch, config.hist_bins, range)?.to_tsv(),
        )?;
        emit(
            "hist_untrained.tsv",
            histogram2d(&run_u.final_batch, config.hist_bins, range)?.to_tsv(),
        )?;
        emit(
            "hist_oracle.tsv",
            histogram2d(&oracle, config.hist_bins, range)?.to_tsv(),
        )?;
    }
    let last_t = trained_curve.last().expect("T+1 points");
    let last_u = untrained_curve.last().expect("T+1 points");
    let mut metrics = String::from("metric\tvalue\n");
    for (k, v) in [
        ("e_logpi_T_trained", last_t.estimate),
        ("e_logpi_T_trained_stderr", last_t.std_error),
        ("e_logpi_T_untrained", last_u.estimate),
        ("e_logpi_T_untrained_stderr", last_u.std_error),
        ("e_logpi_oracle", oracle_estimate.0),
        ("e_logpi_oracle_stderr", oracle_estimate.1),
        ("acceptance_rate_trained", run_t.acceptance_rate),
        ("acceptance_rate_untrained", run_u.acceptance_rate),
        ("mmd2_T_trained", mmd_curve.last().map_or(f64::NAN, |m| m.1)),
        (
            "mmd2_T_untrained",
            mmd_curve.last().map_or(f64::NAN, |m| m.2),
        ),
        ("mmd2_null_std", null_std),
        ("mmd_bandwidth", bandwidth),
    ] {
        metrics.push_str(&format!("{k}\t{v}\n"));
    }
    emit("metrics.tsv", metrics)?;
    Ok(EvalSummary {
        trained_curve,
        untrained_curve,
        oracle_estimate,
        mmd_curve,
        mmd_null_std: null_std,
        bandwidth,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub target: BenchmarkId,
    pub method: &'static str,
    pub neg_e_logpi: f64,
    pub stderr: f64,
    pub sample_seconds: f64,
    /// `None` for methods without a training phase.
    pub train_seconds_per_100: Option<f64>,
    pub status: String,
}

impl BenchRow {
    fn failed(target: BenchmarkId, method: &'static str, e: &Error) -> Self {
        Self {
            target,
            method,
            neg_e_logpi: f64::NAN,
            stderr: f64::NAN,
            sample_seconds: f64::NAN,
            train_seconds_per_100: None,
            status: format!("error: {e}").replace([',', '\n'], ";"),
        }
    }
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "target,method,neg_e_logpi,stderr,sample_seconds,train_seconds_per_100,status\n",
    );
    for r in rows {
        let train = r
            .train_seconds_per_100
            .map_or(String::new(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.target, r.method, r.neg_e_logpi, r.stderr, r.sample_seconds, train, r.status
        ));
    }
    out
}

fn timed_estimate(
    target: BenchmarkId,
    method: &'static str,
    sample: impl FnOnce() -> Result<SampleBatch>,
    density: &TargetDensity,
) -> Result<BenchRow> {
    let started = Instant::now();
    let batch = sample()?;
    let sample_seconds = started.elapsed().as_secs_f64();
    let (e, se) = expected_log_target(&batch, density)?;
    Ok(BenchRow {
        target,
        method,
        neg_e_logpi: -e,
        stderr: se,
        sample_seconds,
        train_seconds_per_100: None,
        status: "ok".to_string(),
    })
}

fn bench_target(config: &ExperimentConfig, id: BenchmarkId) -> Vec<BenchRow> {
    let mut c = config.clone();
    c.target = id;
    let density = c.target_density();
    let mut rows = Vec::new();

    let hei = || -> Result<(BenchRow, BenchRow)> {
        let initial = c.chain_spec()?;
        let tc = c.train_config()?;
        let started = Instant::now();
        let (trained, _) = train(&initial, &tc)?;
        let secs = started.elapsed().as_secs_f64();
        let per_100 = if tc.iterations > 0 {
            secs * 100.0 / tc.iterations as f64
        } else {
            f64::NAN
        };
        let mut row = timed_estimate(
            id,
            "HEI",
            || Ok(run_chain(&trained, c.eval_samples, c.eval_seed, false)?.final_batch),
            &density,
        )?;
        row.train_seconds_per_100 = Some(per_100);
        let untrained = timed_estimate(
            id,
            "HEI-untrained",
            || Ok(run_chain(&initial, c.eval_samples, c.eval_seed, false)?.final_batch),
            &density,
        )?;
        Ok((row, untrained))
    };
    match hei() {
        Ok((a, b)) => rows.extend([a, b]),
        Err(e) => {
            log::error!("{id}: {e}");
            rows.push(BenchRow::failed(id, "HEI", &e));
            rows.push(BenchRow::failed(id, "HEI-untrained", &e));
        }
    }
    let oracle = timed_estimate(
        id,
        "oracle",
        || Ok(rejection_sample(&density, c.oracle_samples, c.eval_seed)?.batch),
        &density,
    );
    rows.push(oracle.unwrap_or_else(|e| {
        log::error!("{id} oracle: {e}");
        BenchRow::failed(id, "oracle", &e)
    }));
    rows
}

/// Table-style comparison over `config.bench_targets`. Per-target failures are
/// recorded in the rows and the run continues.
pub fn cmd_bench(config: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    let out = ensure_out(config)?;
    let mut rows = Vec::new();
    for &id in &config.bench_targets {
        log::info!("bench {id}");
        rows.extend(bench_target(config, id));
    }
    write(&out.join(BENCH_FILE), &bench_to_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoCase {
    pub name: &'static str,
    pub entropy_p0: f64,
    pub entropy_floor: f64,
    pub guard_events: usize,
    pub untrained_curve: Vec<CurvePoint>,
    pub trained_curve: Vec<CurvePoint>,
}

/// Valid `P0 = N(0, 3I)` with the guard at `H(pi)` against the low-entropy
/// `P0' = N(0, 0.25 I)` trained without the guard, both on corr-gauss.
pub fn cmd_demo_constraint(config: &ExperimentConfig) -> Result<Vec<DemoCase>> {
    let out = ensure_out(config)?.to_path_buf();
    let mut base = config.clone();
    if base.target != BenchmarkId::CorrGauss {
        log::warn!(
            "demo-constraint runs on corr-gauss; ignoring target {}",
            base.target
        );
        base.target = BenchmarkId::CorrGauss;
    }
    let density = base.target_density();
    if let Some(range) = density.sampling_box() {
        let exact = exact_gaussian_sample(&density, base.eval_samples, base.eval_seed)?;
        write(
            &out.join("demo_target_hist.tsv"),
            &histogram2d(&exact, base.hist_bins, range)?.to_tsv(),
        )?;
    }
    let mut cases = Vec::new();
    for (name, std, h) in [
        ("valid", 3.0_f64.sqrt(), EntropyFloor::Auto),
        ("invalid", 0.5, EntropyFloor::Off),
    ] {
        let mut c = base.clone();
        c.p0_std = InitStd::PerDim(vec![std; 2]);
        c.h = h;
        let initial = c.chain_spec()?;
        let (trained, report) = train(&initial, &c.train_config()?)?;
        write(
            &out.join(format!("demo_{name}_report.csv")),
            &report.to_csv(),
        )?;
        write(
            &out.join(format!("demo_{name}_params.kv")),
            &trained.to_kv().render(),
        )?;

        let mut curves = Vec::new();
        for (label, spec) in [("untrained", &initial), ("trained", &trained)] {
            let run = run_chain(spec, c.eval_samples, c.eval_seed, true)?;
            curves.push(convergence_curve(
                run.intermediate.as_ref().expect("recorded"),
                &density,
            )?);
            if let Some(range) = density.sampling_box() {
                let hist = histogram2d(&run.final_batch, c.hist_bins, range)?;
                write(
                    &out.join(format!("demo_{name}_hist_{label}.tsv")),
                    &hist.to_tsv(),
                )?;
            }
        }
        let mut tsv = String::from("t\tuntrained\tuntrained_stderr\ttrained\ttrained_stderr\n");
        for (u, t) in curves[0].iter().zip(&curves[1]) {
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                u.t, u.estimate, u.std_error, t.estimate, t.std_error
            ));
        }
        write(&out.join(format!("demo_{name}_curve.tsv")), &tsv)?;
        let trained_curve = curves.pop().expect("two curves");
        let untrained_curve = curves.pop().expect("two curves");
        cases.push(DemoCase {
            name,
            entropy_p0: initial.p0.entropy(),
            entropy_floor: c.entropy_floor()?,
            guard_events: report.guard_events(),
            untrained_curve,
            trained_curve,
        });
    }
    let mut summary = String::from(
        "case\tentropy_p0\tentropy_floor\tguard_events\te_logpi_T_untrained\te_logpi_T_trained\n",
    );
    for d in &cases {
        summary.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            d.name,
            d.entropy_p0,
            d.entropy_floor,
            d.guard_events,
            d.untrained_curve.last().map_or(f64::NAN, |p| p.estimate),
            d.trained_curve.last().map_or(f64::NAN, |p| p.estimate),
        ));
    }
    write(&out.join("demo_summary.tsv"), &summary)?;
    Ok(cases)
}
