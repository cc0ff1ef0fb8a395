//! Full pipeline in memory: fit, forecast, coverage filter, moments and all five backtests.
//!
//! `cargo run --release --example end_to_end -- [grace|grace1|grace2] [seed]`

use grace::backtest::{report_csv, LambdaGrid, MeasureKind, ReportRow};
use grace::baselines::LinearFitConfig;
use grace::data::SplitSpec;
use grace::pipeline::{run_method, Market, Method, Settings};
use grace::synth::{generate, DgpSpec, MarketOptions};
use grace::training::{quantile_levels, TrainConfig};

fn main() -> grace::Result<()> {
    let mut args = std::env::args().skip(1);
    let method: Method = args.next().unwrap_or_else(|| "grace".into()).parse()?;
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let opt = MarketOptions { base_vol: 5e-4, tier_ratio: 4.0, vol_dispersion: 0.0, seed, ..Default::default() };
    let market = Market::from_synthetic(&generate(&DgpSpec::market(&opt))?, SplitSpec::new(600, 750, 900)?)?;
    let s = Settings {
        method,
        levels: quantile_levels(49),
        train: TrainConfig { lags: 8, hidden: 16, learning_rate: 1e-2, max_epochs: 3, patience: 2, seed, ..Default::default() },
        baseline: LinearFitConfig::default(),
        alpha: 0.01,
        k0: 7,
        measures: MeasureKind::ALL.to_vec(),
        cost: 0.0,
        jobs: 1,
        grid: LambdaGrid::default(),
    };
    let (_, ev) = run_method(&market, &s)?;
    println!("|omega| per stock {:?}", ev.omega.sizes());
    println!("pool of {} stocks", ev.pool.len());
    let rows: Vec<ReportRow> = ev
        .results
        .iter()
        .map(|r| {
            println!("{}: lambdas {:?}, in-sample SR {:.2}", r.spec.kind, r.spec.lambdas(), r.in_sample_sharpe);
            ReportRow { method: method.to_string(), measure: r.spec.kind, perf: r.perf }
        })
        .collect();
    print!("{}", report_csv(&rows));
    Ok(())
}
