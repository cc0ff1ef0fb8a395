//! Decile long-short portfolios ranked on the true conditional moments of a synthetic market.
//!
//! `cargo run --release --example backtest_deciles -- [cost_bps]`

use grace::backtest::{BacktestInput, MeasureKind, PerformanceMeasureSpec};
use grace::qcm::MomentPanel;
use grace::synth::{generate, DgpSpec, MarketOptions};

fn main() -> grace::Result<()> {
    let cost_bps: f64 = std::env::args().nth(1).map(|s| s.parse().expect("cost in bps")).unwrap_or(3.0);
    let ds = generate(&DgpSpec::market(&MarketOptions { base_vol: 5e-4, tier_ratio: 4.0, vol_dispersion: 0.0, ..Default::default() }))?;
    let n = ds.n_stocks();
    let days: Vec<usize> = (650..900).collect();
    let cells = n * days.len();
    let mut m = MomentPanel {
        days: days.clone(),
        n_stocks: n,
        mu: Vec::with_capacity(cells),
        h: Vec::with_capacity(cells),
        s: Vec::with_capacity(cells),
        k: Vec::with_capacity(cells),
        degenerate: vec![false; cells],
        projected: vec![false; cells],
        fitted: vec![true; cells],
        usable: vec![true; n],
        omega_sizes: vec![0; n],
    };
    for i in 0..n {
        for &t in &days {
            let (mu, h, s, k) = ds.truth_row(i, t);
            m.mu.push(mu);
            m.h.push(h);
            m.s.push(s);
            m.k.push(k);
        }
    }
    let pool: Vec<usize> = (0..n).collect();
    let input = BacktestInput { moments: &m, returns: &ds.prices, risk_free: &ds.factors.risk_free, pool: &pool, cost: cost_bps / 1e4 };
    println!("measure  lambdas                return%   risk%   sharpe  mean turnover");
    for (kind, l) in [
        (MeasureKind::M, (0.0, 0.0, 0.0)),
        (MeasureKind::MV, (100.0, 0.0, 0.0)),
        (MeasureKind::MVSK, (100.0, 1e-5, 1e-6)),
        (MeasureKind::SR, (0.0, 0.0, 0.0)),
        (MeasureKind::SRSK, (0.0, 0.05, 0.01)),
    ] {
        let (series, perf) = input.run(&PerformanceMeasureSpec::new(kind, l))?;
        let turnover = series.turnover.iter().sum::<f64>() / series.len() as f64;
        println!(
            "{:7}  {:<21}  {:7.2}  {:6.2}  {:7.2}  {turnover:.2}",
            kind.name(),
            format!("{l:?}"),
            perf.return_pct,
            perf.risk_pct,
            perf.sharpe
        );
    }
    Ok(())
}
