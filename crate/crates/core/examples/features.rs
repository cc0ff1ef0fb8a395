//! Lagged, range-normalized feature tensors for stocks and factors.
//!
//! `cargo run --release --example features`

use grace::data::{FeatureConfig, FeaturePanel};
use grace::synth::{generate, DgpSpec, MarketOptions};

fn main() -> grace::Result<()> {
    let ds = generate(&DgpSpec::market(&MarketOptions { n_days: 400, ..Default::default() }))?;
    let fp = FeaturePanel::build(&ds.prices, &ds.factors, &FeatureConfig::default(), 250)?;
    let names = fp.feature_names(&ds.factors.names);
    println!("{} entities x {} features, history complete from day {}", fp.n_entities(), fp.n_features(), fp.first_day);
    println!("features: {}", names.join(" "));
    println!("{} rows with zero training range are set to 0", fp.warnings.iter().filter(|w| w.contains("zero")).count());

    let x = fp.slice(300, 4)?;
    println!("X for day 300: {} lags of {} x {}", x.n_lags(), x.n_entities(), x.n_features());
    for e in [0, 1, fp.n_stocks] {
        let row: Vec<String> = (0..fp.n_features()).map(|p| format!("{:+.3}", x.get(e, p, x.n_lags() - 1))).collect();
        println!("entity {e:2} on day 299: {}", row.join(" "));
    }
    Ok(())
}
