//! Simulate the two-group market and write its CSV files.
//!
//! `cargo run --release --example synth_market -- [out_dir] [seed]`

use grace::io::Provenance;
use grace::synth::{generate, DgpSpec, MarketOptions};

fn main() -> grace::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "out/example_synth".into());
    let seed = args.next().map(|s| s.parse().expect("seed")).unwrap_or(42);
    let opt = MarketOptions { base_vol: 5e-4, tier_ratio: 4.0, vol_dispersion: 0.0, seed, ..Default::default() };
    let ds = generate(&DgpSpec::market(&opt))?;
    ds.write(&out, &Provenance::new("example synth_market", seed))?;

    println!("{} stocks x {} days, relations {:?}", ds.n_stocks(), ds.n_days(), ds.spec.relation_names);
    println!("stock  mean(r)      true mu      mean true h  true s   true k");
    for i in 0..ds.n_stocks() {
        let t_len = ds.n_days();
        let r: f64 = (0..t_len).map(|t| ds.prices.ret(i, t)).sum::<f64>() / t_len as f64;
        let (mu, _, s, k) = ds.truth_row(i, t_len - 1);
        let h_bar: f64 = (0..t_len).map(|t| ds.truth_row(i, t).1).sum::<f64>() / t_len as f64;
        println!("{:5}  {r:+.3e}  {mu:+.3e}  {h_bar:.3e}    {s:+.3}   {k:.3}", ds.prices.tickers[i]);
    }
    println!("wrote {out}/{{prices,factors,relations,relations_meta,truth_moments}}.csv");
    Ok(())
}
