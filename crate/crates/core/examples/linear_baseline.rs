//! The linear network-autoregression baseline: fit every level and compare with the truth.
//!
//! `cargo run --release --example linear_baseline`

use grace::baselines::{fit_linear_all, predict_linear_panel, LinearDesign, LinearFitConfig};
use grace::data::SplitSpec;
use grace::pipeline::Market;
use grace::synth::{generate, DgpSpec, MarketOptions};
use grace::training::quantile_levels;

fn main() -> grace::Result<()> {
    let ds = generate(&DgpSpec::market(&MarketOptions { base_vol: 5e-4, tier_ratio: 4.0, vol_dispersion: 0.0, ..Default::default() }))?;
    let market = Market::from_synthetic(&ds, SplitSpec::new(600, 750, 900)?)?;
    let w = market.graph.collapse();
    let first = market.features.first_target(1);
    let design = LinearDesign::build(&market.features, &market.prices, &market.factors, &w, first..market.split.valid_end)?;
    println!("design: {} observations, columns {:?}", design.targets.len(), (0..4).map(|c| design.column_name(c)).collect::<Vec<_>>());

    let levels = quantile_levels(9);
    let (models, fits) = fit_linear_all(&levels, &design, &LinearFitConfig::default())?;
    for (tau, fit) in levels.iter().zip(&fits) {
        println!(
            "tau {tau:.1}: {} epochs, converged {}, loss {:.3e}, alpha {:+.2e}, gamma {:+.3}",
            fit.epochs_run, fit.converged, fit.final_loss, fit.params.alpha, fit.params.gamma
        );
    }
    let days = market.test_days();
    let (q, mean) = predict_linear_panel(&models, &market.features, &market.prices, &market.factors, &w, &days)?;
    let (mut covered, mut total, mut err) = (0, 0, 0.0);
    for i in 0..market.prices.n_stocks() {
        for (d, &t) in days.iter().enumerate() {
            covered += usize::from(market.prices.ret(i, t) < q.get(i, d, 4));
            err += (mean.get(i, d) - ds.truth_row(i, t).0).abs();
            total += 1;
        }
    }
    println!("test span: median hit rate {:.3}, mean abs error of the mean forecast {:.2e}", covered as f64 / total as f64, err / total as f64);
    Ok(())
}
