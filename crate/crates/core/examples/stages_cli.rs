//! The file-based stages the `grace` binary runs, driven from a config.
//!
//! `cargo run --release --example stages_cli -- [out_dir]`

use grace::config::RunConfig;
use grace::stages;

fn main() -> grace::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example_stages".into());
    let mut cfg = RunConfig::parse(include_str!("../../../configs/synth20.conf"))?;
    for (k, v) in [("out_dir", out.as_str()), ("K", "9"), ("K0", "4"), ("alpha", "0"), ("max_epochs", "1"), ("measures", "M,SR")] {
        cfg.set(k, v)?;
    }
    println!("config hash {}", cfg.hash());
    for stage in stages::RUN_ALL_ORDER {
        stages::run_stage(stage, &cfg)?;
        println!("{stage} done");
    }
    print!("{}", std::fs::read_to_string(cfg.out_dir.join("report.csv"))?);
    Ok(())
}
