//! Train one quantile network and the mean network, then save and reload a checkpoint.
//!
//! `cargo run --release --example train_model -- [tau]`

use grace::checkpoint::{Checkpoint, ModelParams};
use grace::data::SplitSpec;
use grace::ftgcn::GraphContext;
use grace::io::Provenance;
use grace::pipeline::{Market, Method};
use grace::synth::{generate, DgpSpec, MarketOptions};
use grace::training::{predict_panel, quantile_loss, train, Target, TrainConfig, TrainData};

fn main() -> grace::Result<()> {
    let tau: f64 = std::env::args().nth(1).map(|s| s.parse().expect("tau")).unwrap_or(0.1);
    let opt = MarketOptions { base_vol: 5e-4, tier_ratio: 4.0, vol_dispersion: 0.0, ..Default::default() };
    let ds = generate(&DgpSpec::market(&opt))?;
    let market = Market::from_synthetic(&ds, SplitSpec::new(600, 750, 900)?)?;
    let cfg = TrainConfig { lags: 8, hidden: 16, learning_rate: 1e-2, max_epochs: 4, patience: 2, seed: 1, ..Default::default() };
    let graph = market.graph_for(Method::Grace);
    let data = TrainData::new(&market.features, &market.prices, &graph, &market.split, cfg.lags, cfg.hidden)?;

    let (q_model, log) = train(Target::Quantile(tau), &data, &cfg)?;
    print!("{}", log.to_csv());
    println!("best epoch {}, stopped early: {}", log.best_epoch, log.stopped_early);
    let (mean_model, mean_log) = train(Target::Mean, &data, &cfg)?;
    println!("mean model best validation loss {:.3e}", mean_log.best_valid());

    let days = market.test_days();
    let (q, _) = predict_panel(&[(tau, q_model.clone())], &mean_model, &market.features, &GraphContext::new(&graph), &days)?;
    let (mut hits, mut r_all, mut q_all) = (0, Vec::new(), Vec::new());
    for i in 0..market.prices.n_stocks() {
        for (d, &t) in days.iter().enumerate() {
            let (r, qv) = (market.prices.ret(i, t), q.get(i, d, 0));
            hits += usize::from(r < qv);
            r_all.push(r);
            q_all.push(qv);
        }
    }
    println!(
        "test span: violation rate {:.3} at tau {tau}, pinball loss {:.3e}",
        hits as f64 / r_all.len() as f64,
        quantile_loss(&r_all, &q_all, tau)?
    );

    let dir = std::env::temp_dir().join("grace_example_models");
    let ck = Checkpoint { method: Method::Grace, target: Target::Quantile(tau), seed: cfg.seed, params: ModelParams::Network(q_model) };
    let path = ck.save(&dir, &Provenance::new("example train_model", cfg.seed))?;
    let back = Checkpoint::load(&path)?;
    println!("checkpoint {} reloads identically: {}", path.display(), back == ck);
    Ok(())
}
