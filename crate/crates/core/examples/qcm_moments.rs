//! Recover variance, skewness and kurtosis from a grid of conditional quantiles.
//!
//! `cargo run --release --example qcm_moments`

use grace::qcm::{build_design, fit_qcm};
use grace::synth::{generate, DgpSpec, Innovation};
use grace::training::quantile_levels;

fn main() -> grace::Result<()> {
    let levels = quantile_levels(199);
    let grid = build_design(&levels)?;
    let (lo, hi) = grid.eigen_range();
    println!("K = {}, eig(Z'Z) in [{lo:.2}, {hi:.2}]", grid.len());

    let q: Vec<f64> = grid.z.iter().map(|z| 0.001 + 0.02 * z).collect();
    let (beta, m) = fit_qcm(&q, &grid)?;
    println!("normal(0.001, 0.02^2): beta {beta:.6?} -> h {:.6e} s {:+.2e} k {:.6}", m.h, m.s, m.k);

    let mut spec = DgpSpec::garch_normal(1, 500, 7);
    for delta in [0.2, -0.2] {
        spec.stocks[0].innovation = Innovation::skewed(delta);
        let ds = generate(&spec)?;
        let t = 250;
        let q: Vec<f64> = levels.iter().map(|&tau| ds.true_quantile(0, t, tau)).collect::<grace::Result<_>>()?;
        let (_, m) = fit_qcm(&q, &grid)?;
        let (_, h, s, k) = ds.truth_row(0, t);
        println!("mixture delta {delta:+}: estimate h {:.3e} s {:+.3} k {:.3} | truth h {h:.3e} s {s:+.3} k {k:.3}", m.h, m.s, m.k);
    }

    let ds = generate(&DgpSpec::garch_normal(1, 1000, 8))?;
    let mut err: f64 = 0.0;
    for t in 0..1000 {
        let q: Vec<f64> = levels.iter().map(|&tau| ds.true_quantile(0, t, tau)).collect::<grace::Result<_>>()?;
        let h = fit_qcm(&q, &grid)?.1.h;
        err = err.max((h / ds.truth_row(0, t).1 - 1.0).abs());
    }
    println!("GARCH(1,1)-normal path, 1000 days: max relative error of h {err:.2e}");
    Ok(())
}
