use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergodic_cli::commands::{
    bench_to_csv, cmd_bench, cmd_demo_constraint, cmd_evaluate, cmd_train,
};
use ergodic_cli::load_config;

#[derive(Parser)]
#[command(
    name = "ergodic",
    version,
    about = "Train and evaluate ergodic HMC chains on 2D targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train chain parameters; writes params.kv and train_report.csv.
    Train(Common),
    /// Convergence curves, MMD against the oracle and histograms.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trained parameters (default: <out>/params.kv).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Trained, untrained and oracle estimates for every bench target.
    Bench(Common),
    /// Valid versus low-entropy initial distribution on corr-gauss.
    DemoConstraint(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    /// Number of HMC transitions.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    leapfrog_steps: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Entropy floor: a number, `auto` or `off`.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    stop_gradient: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut o = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects key=value, got `{kv}`"))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("target", self.target.clone());
        push("T", self.t.map(|v| v.to_string()));
        push("leapfrog_steps", self.leapfrog_steps.map(|v| v.to_string()));
        push("iters", self.iters.map(|v| v.to_string()));
        push("batch", self.batch.map(|v| v.to_string()));
        push("h", self.h.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("stop_gradient", self.stop_gradient.map(|v| v.to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        Ok(o)
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let (common, params) = match &cli.command {
        Command::Train(c) | Command::Bench(c) | Command::DemoConstraint(c) => (c, None),
        Command::Evaluate { common, params } => (common, params.clone()),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let config =
        load_config(common.config.as_deref(), &common.overrides()?).map_err(|e| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    match cli.command {
        Command::Train(_) => {
            let o = cmd_train(&config).map_err(|e| e.to_string())?;
            let last = o.report.records.last();
            println!(
                "trained {} iterations; guard events {}; final EMLBO {}",
                o.report.records.len(),
                o.report.guard_events(),
                last.map_or(f64::NAN, |r| r.emlbo)
            );
        }
        Command::Evaluate { .. } => {
            let s = cmd_evaluate(&config, params.as_deref()).map_err(|e| e.to_string())?;
            let t = s.trained_curve.last().expect("curve");
            println!(
                "E[log pi*] at T: trained {:.4} +- {:.4}, oracle {:.4} +- {:.4}",
                t.estimate, t.std_error, s.oracle_estimate.0, s.oracle_estimate.1
            );
        }
        Command::Bench(_) => {
            let rows = cmd_bench(&config).map_err(|e| e.to_string())?;
            print!("{}", bench_to_csv(&rows));
        }
        Command::DemoConstraint(_) => {
            for c in cmd_demo_constraint(&config).map_err(|e| e.to_string())? {
                println!(
                    "{}: H(P0) {:.4}, guard events {}, E_pT untrained {:.4}, trained {:.4}",
                    c.name,
                    c.entropy_p0,
                    c.guard_events,
                    c.untrained_curve.last().map_or(f64::NAN, |p| p.estimate),
                    c.trained_curve.last().map_or(f64::NAN, |p| p.estimate)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
