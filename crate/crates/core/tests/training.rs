use grace::data::SplitSpec;
use grace::pipeline::{Market, Method};
use grace::synth::{generate, DgpSpec, MarketOptions};
use grace::training::{train, train_all, Target, TrainConfig, TrainData};

fn small_market() -> Market {
    let opt = MarketOptions { n_stocks: 10, n_days: 260, base_vol: 5e-4, tier_ratio: 4.0, vol_dispersion: 0.0, seed: 3, ..Default::default() };
    Market::from_synthetic(&generate(&DgpSpec::market(&opt)).unwrap(), SplitSpec::new(190, 225, 260).unwrap()).unwrap()
}

fn cfg(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig { lags: 4, hidden: 6, learning_rate: 1e-2, max_epochs, patience, seed: 5, ..Default::default() }
}

fn data(m: &Market, c: &TrainConfig) -> TrainData {
    TrainData::new(&m.features, &m.prices, &m.graph_for(Method::Grace), &m.split, c.lags, c.hidden).unwrap()
}

#[test]
fn training_loss_decreases() {
    let m = small_market();
    let c = cfg(6, 10);
    let (_, log) = train(Target::Quantile(0.1), &data(&m, &c), &c).unwrap();
    let first = log.epochs[0].train_loss;
    let last = log.epochs.last().unwrap().train_loss;
    assert!(last < first, "{}", log.to_csv());
}

#[test]
fn same_seed_same_model_and_jobs_do_not_matter() {
    let m = small_market();
    let c = cfg(2, 2);
    let d = data(&m, &c);
    let a = train(Target::Mean, &d, &c).unwrap();
    let b = train(Target::Mean, &d, &c).unwrap();
    assert_eq!(a, b);
    let other = train(Target::Mean, &d, &TrainConfig { seed: 6, ..c.clone() }).unwrap();
    assert_ne!(a.0, other.0);
    let serial = train_all(&[0.25, 0.75], &d, &c, 1).unwrap();
    let parallel = train_all(&[0.25, 0.75], &d, &c, 3).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn patience_bounds_the_epochs_after_the_best() {
    let m = small_market();
    let c = TrainConfig { learning_rate: 5e-2, ..cfg(30, 2) };
    let (_, log) = train(Target::Quantile(0.5), &data(&m, &c), &c).unwrap();
    let best = log.epochs.iter().min_by(|a, b| a.valid_loss.total_cmp(&b.valid_loss)).unwrap().epoch;
    assert_eq!(best, log.best_epoch);
    if log.stopped_early {
        assert_eq!(log.epochs.len(), log.best_epoch + c.patience);
    } else {
        assert_eq!(log.epochs.len(), c.max_epochs);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let m = small_market();
    let c = cfg(1, 1);
    let d = data(&m, &c);
    assert!(train(Target::Quantile(1.0), &d, &c).is_err());
    assert!(train(Target::Mean, &d, &TrainConfig { learning_rate: 0.0, ..c.clone() }).is_err());
    assert!(train(Target::Mean, &d, &TrainConfig { hidden: 7, ..c }).is_err());
}
