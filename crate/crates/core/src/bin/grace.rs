use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grace::config::RunConfig;
use grace::stages;
use grace::Error;

#[derive(Parser)]
#[command(name = "grace", version, about = "Conditional moments from graph-based quantile models, and decile backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long = "cost-bps", global = true)]
    cost_bps: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of quantile levels.
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    /// Minimum number of valid levels per stock.
    #[arg(long = "K0", global = true)]
    k0: Option<usize>,
    /// grace, grace1 or grace2.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Comma-separated list from M, MV, MVSK, SR, SRSK.
    #[arg(long, global = true)]
    measures: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel training jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic market.
    Synth,
    /// Build and normalize the lagged feature panel.
    Featurize,
    /// Fit the quantile and mean models.
    Train,
    /// Forecast quantiles and means on the in-sample and test spans.
    Predict,
    /// Convert quantile forecasts to variance, skewness and kurtosis.
    Qcm,
    /// Coverage tests and the valid level sets.
    Validate,
    /// Decile long-short backtests for every measure.
    Backtest,
    /// Collect the per-method results into one report.
    Report,
    /// Every stage in order.
    RunAll,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Qcm => "qcm",
            Command::Validate => "validate",
            Command::Backtest => "backtest",
            Command::Report => "report",
            Command::RunAll => "run-all",
        }
    }
}

fn build_config(cli: &Cli) -> grace::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    };
    put("out_dir", cli.out.as_ref().map(|p| p.display().to_string()));
    put("cost_bps", cli.cost_bps.map(|v| v.to_string()));
    put("alpha", cli.alpha.map(|v| v.to_string()));
    put("K", cli.k.map(|v| v.to_string()));
    put("K0", cli.k0.map(|v| v.to_string()));
    put("method", cli.method.clone());
    put("measures", cli.measures.clone());
    put("seed", cli.seed.map(|v| v.to_string()));
    put("jobs", cli.jobs.map(|v| v.to_string()));
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stage = cli.command.name();
    let result = build_config(&cli).and_then(|cfg| stages::run_stage(stage, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (stage, cause) = match &e {
                Error::Stage { stage, source } => (stage.clone(), source.to_string()),
                other => (stage.to_string(), other.to_string()),
            };
            eprintln!("error stage={stage} cause={}", cause.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
