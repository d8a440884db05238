use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use kadrtc::harness::{
    check_invariants, export_report, run_experiment, ExperimentConfig, Format, MetricsReport, Scenario,
};

#[derive(Parser)]
#[command(
    name = "kadsim",
    version,
    about = "Deterministic simulation experiments for the DHT signaling overlay"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its report.
    Run(RunArgs),
    /// Run one experiment per value of a parameter.
    Sweep {
        /// `name=v1,v2,...` where name is one of nodes, trials, seed, loss, churn, duration, k, alpha.
        #[arg(long)]
        param: String,
        #[command(flatten)]
        base: RunArgs,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value = "connection_time")]
    scenario: Scenario,
    #[arg(long, default_value_t = 64)]
    nodes: usize,
    #[arg(long, default_value_t = 100)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// One-way latency range in ms, `min:max`.
    #[arg(long, default_value = "10:50", value_parser = parse_latency)]
    latency: (u64, u64),
    #[arg(long, default_value_t = 0.0)]
    churn: f64,
    /// Session length in seconds, for session_survival.
    #[arg(long, default_value_t = 120)]
    duration: u64,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    alpha: usize,
    /// Report path; stdout when omitted. A sweep adds `-<param>-<value>` before the extension.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

fn parse_latency(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected min:max")?;
    let lo = lo.trim().parse::<u64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<u64>().map_err(|e| e.to_string())?;
    if lo > hi {
        return Err(format!("min {lo} exceeds max {hi}"));
    }
    Ok((lo, hi))
}

impl RunArgs {
    fn config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            scenario: self.scenario,
            n_nodes: self.nodes,
            k: self.k,
            alpha: self.alpha,
            trials: self.trials,
            churn_rate: self.churn,
            session_duration_secs: self.duration,
            ..ExperimentConfig::default()
        };
        cfg.net.seed = self.seed;
        cfg.net.loss_rate = self.loss;
        (cfg.net.latency_min_ms, cfg.net.latency_max_ms) = self.latency;
        cfg
    }

    fn set(&mut self, name: &str, value: &str) -> anyhow::Result<()> {
        let bad = || format!("bad value {value:?} for {name}");
        match name {
            "nodes" => self.nodes = value.parse().with_context(bad)?,
            "trials" => self.trials = value.parse().with_context(bad)?,
            "seed" => self.seed = value.parse().with_context(bad)?,
            "loss" => self.loss = value.parse().with_context(bad)?,
            "churn" => self.churn = value.parse().with_context(bad)?,
            "duration" => self.duration = value.parse().with_context(bad)?,
            "k" => self.k = value.parse().with_context(bad)?,
            "alpha" => self.alpha = value.parse().with_context(bad)?,
            "latency" => self.latency = parse_latency(value).map_err(anyhow::Error::msg).with_context(bad)?,
            _ => bail!("unknown sweep parameter {name:?}"),
        }
        Ok(())
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{suffix}"),
    };
    path.with_file_name(name)
}

/// Runs one experiment, writes its report and returns it with any broken invariants.
fn run_one(args: &RunArgs, out: Option<&Path>) -> anyhow::Result<(MetricsReport, Vec<String>)> {
    let cfg = args.config();
    let report = run_experiment(&cfg)?;
    match out {
        Some(path) => {
            export_report(&report, path, args.format).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{}", report.render(args.format)),
    }
    let failures = check_invariants(&cfg, &report);
    for f in &failures {
        eprintln!("invariant failed: {} n={}: {f}", cfg.scenario, cfg.n_nodes);
    }
    Ok((report, failures))
}

fn sweep(param: &str, base: &RunArgs) -> anyhow::Result<bool> {
    let (name, values) = param.split_once('=').context("--param expects name=v1,v2,...")?;
    let name = name.trim();
    let mut ok = true;
    let mut medians = Vec::new();
    for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let mut args = base.clone();
        args.set(name, value)?;
        let out = base.out.as_deref().map(|p| with_suffix(p, &format!("{name}-{value}")));
        let (report, failures) = run_one(&args, out.as_deref())?;
        ok &= failures.is_empty();
        if let Some(h) = report.aggregates().hops {
            medians.push((args.nodes, h.median));
        }
    }
    // Hop counts must not shrink as the network grows.
    if name == "nodes" && base.scenario == Scenario::LookupScaling {
        let mut sorted = medians.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[1].1 < w[0].1 {
                eprintln!(
                    "invariant failed: median hops {} at n={} below {} at n={}",
                    w[1].1, w[1].0, w[0].1, w[0].0
                );
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let result = match Cli::parse().cmd {
        Cmd::Run(args) => run_one(&args, args.out.as_deref()).map(|(_, f)| f.is_empty()),
        Cmd::Sweep { param, base } => sweep(&param, &base),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("kadsim: {e:#}");
            ExitCode::from(2)
        }
    }
}
