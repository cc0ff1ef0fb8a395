//! File-based pipeline stages. Each stage reads the files the previous stages wrote
//! under the output directory and writes its own, all with a provenance header.
//!
//! ```text
//! out/config.txt
//! out/data/{prices,factors,relations,relations_meta,truth_moments}.csv     synth
//! out/features/{features,feature_stats}.csv                                featurize
//! out/<method>/models/model_{tau_<level>|mean}.ckpt, logs/                  train
//! out/<method>/forecasts_{in,out}.csv                                      predict
//! out/<method>/{omega,omega_levels}.csv                                    validate
//! out/<method>/{moments_in,moments_out,moment_tests}.csv                   qcm
//! out/<method>/performance.csv, backtest/                                  backtest
//! out/report.csv                                                           report
//! ```

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use crate::backtest::{report_csv, series_csv, ReportRow};
use crate::baselines::{LinearModelSet, LinearParams};
use crate::checkpoint::{checkpoint_name, Checkpoint, ModelParams};
use crate::config::RunConfig;
use crate::data::{csv_reader, load_factors, load_prices, FactorColumns, FactorPanel, FeatureConfig, FeaturePanel, PricePanel};
use crate::diagnostics::{build_omega, filter_stocks, moment_ttests, OmegaSet, MOMENT_NAMES};
use crate::error::{Error, Result};
use crate::ftgcn::ModelTheta;
use crate::hypergraph::{build_hypergraph, Hypergraph};
use crate::io::{write_with_header, Provenance};
use crate::pipeline::{fit_models, forecast, moments, run_backtests, FittedModels, Market, Method};
use crate::qcm::MomentPanel;
use crate::synth::{generate, DgpSpec};
use crate::training::{require_levels, QuantilePanel, SeriesPanel, Target};

pub const STAGES: [&str; 9] = ["synth", "featurize", "train", "predict", "qcm", "validate", "backtest", "report", "run-all"];

/// Order used by `run-all`. The coverage filter runs before the moment conversion,
/// which needs the valid level sets.
pub const RUN_ALL_ORDER: [&str; 8] = ["synth", "featurize", "train", "predict", "validate", "qcm", "backtest", "report"];

fn prov(cfg: &RunConfig) -> Provenance {
    Provenance { config_hash: cfg.hash(), seed: cfg.seed }
}

pub fn method_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(cfg.method.name())
}

fn features_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("features").join("features.csv")
}

fn load_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Load { path: path.display().to_string(), msg: msg.into() }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(load_err(path, "missing input; run the earlier stages first"))
    }
}

/// Writes the canonical configuration next to the outputs.
pub fn echo_config(cfg: &RunConfig) -> Result<()> {
    write_with_header(cfg.out_dir.join("config.txt"), &prov(cfg), &cfg.to_text())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let ds = generate(&DgpSpec::market(&cfg.synth_options()))?;
    ds.write(cfg.data_dir(), &prov(cfg))?;
    log::info!("synth: {} stocks x {} days in {}", ds.n_stocks(), ds.spec.n_days, cfg.data_dir().display());
    Ok(())
}

pub fn load_panels(cfg: &RunConfig) -> Result<(PricePanel, FactorPanel)> {
    let (pp, fp) = (cfg.prices_path(), cfg.factors_path());
    require(&pp)?;
    require(&fp)?;
    let prices = load_prices(&pp)?;
    let factors = load_factors(&fp, &FactorColumns::default())?.align_to(&prices.dates)?;
    Ok((prices, factors))
}

fn entity_names(prices: &PricePanel, factors: &FactorPanel) -> Vec<String> {
    prices.tickers.iter().chain(&factors.names).cloned().collect()
}

pub fn featurize(cfg: &RunConfig) -> Result<()> {
    let (prices, factors) = load_panels(cfg)?;
    let split = cfg.split()?;
    split.validate(prices.n_days())?;
    let fp = FeaturePanel::build(&prices, &factors, &FeatureConfig::default(), split.train_end)?;
    let entities = entity_names(&prices, &factors);
    let p = prov(cfg);
    write_with_header(features_path(cfg), &p, &fp.raw_csv(&prices.dates, &entities, &factors.names))?;
    write_with_header(
        cfg.out_dir.join("features").join("feature_stats.csv"),
        &p,
        &fp.stats_csv(&entities, &factors.names),
    )?;
    let (flat, other): (Vec<&String>, Vec<&String>) = fp.warnings.iter().partition(|w| w.contains("zero training range"));
    if !flat.is_empty() {
        log::warn!("featurize: {} entity-feature rows have zero training range and are set to 0 (min == max in feature_stats.csv)", flat.len());
    }
    for w in other {
        log::warn!("featurize: {w}");
    }
    Ok(())
}

pub fn load_graph(cfg: &RunConfig, n_stocks: usize, n_factors: usize) -> Result<Hypergraph> {
    let path = cfg.relations_path();
    require(&path)?;
    build_hypergraph(&path, Some(&cfg.relations_meta_path()), n_stocks, n_factors, true)
}

/// Prices, factors, relations and the featurized panel from disk.
pub fn load_market(cfg: &RunConfig) -> Result<Market> {
    let (prices, factors) = load_panels(cfg)?;
    let split = cfg.split()?;
    let graph = load_graph(cfg, prices.n_stocks(), factors.n_factors())?;
    let path = features_path(cfg);
    require(&path)?;
    let features = FeaturePanel::load_raw_csv(
        &path,
        &prices.dates,
        &entity_names(&prices, &factors),
        factors.n_factors(),
        &FeatureConfig::default(),
        split.train_end,
    )?;
    Market::with_features(prices, factors, graph, split, features)
}

fn models_dir(cfg: &RunConfig) -> PathBuf {
    method_dir(cfg).join("models")
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let market = load_market(cfg)?;
    let s = cfg.settings();
    let models = fit_models(&market, &s)?;
    let p = prov(cfg);
    let dir = models_dir(cfg);
    let logs = method_dir(cfg).join("logs");
    let save = |target: Target, params: ModelParams| {
        Checkpoint { method: cfg.method, target, seed: cfg.seed, params }.save(&dir, &p)
    };
    match models {
        FittedModels::Network { quantiles, mean, logs: train_logs } => {
            for (tau, theta) in quantiles {
                save(Target::Quantile(tau), ModelParams::Network(theta))?;
            }
            save(Target::Mean, ModelParams::Network(mean))?;
            for log in &train_logs {
                write_with_header(logs.join(format!("train_{}.csv", log.target.tag())), &p, &log.to_csv())?;
            }
        }
        FittedModels::Linear { models, fits } => {
            for (tau, params) in models.quantiles {
                save(Target::Quantile(tau), ModelParams::Linear(params))?;
            }
            save(Target::Mean, ModelParams::Linear(models.mean))?;
            let mut s = String::from("target,epochs_run,converged,final_loss,unidentified\n");
            let targets = cfg.levels().into_iter().map(Target::Quantile).chain([Target::Mean]);
            for (t, f) in targets.zip(&fits) {
                let _ = writeln!(s, "{},{},{},{:e},{}", t.tag(), f.epochs_run, f.converged, f.final_loss, f.unidentified.join(" "));
            }
            write_with_header(logs.join("linear_fits.csv"), &p, &s)?;
        }
    }
    Ok(())
}

/// Reads the checkpoints for the configured levels and method.
pub fn load_models(cfg: &RunConfig) -> Result<FittedModels> {
    let dir = models_dir(cfg);
    let load = |t: Target| -> Result<ModelParams> {
        let path = dir.join(checkpoint_name(t));
        require(&path)?;
        let ck = Checkpoint::load(&path)?;
        if ck.method != cfg.method {
            return Err(Error::Checkpoint { path, msg: format!("trained for {}, configured {}", ck.method, cfg.method) });
        }
        Ok(ck.params)
    };
    let levels = cfg.levels();
    let mut nets: Vec<(f64, ModelTheta)> = Vec::new();
    let mut lins: Vec<(f64, LinearParams)> = Vec::new();
    for &tau in &levels {
        match load(Target::Quantile(tau))? {
            ModelParams::Network(t) => nets.push((tau, t)),
            ModelParams::Linear(l) => lins.push((tau, l)),
        }
    }
    let found: Vec<f64> = nets.iter().map(|m| m.0).chain(lins.iter().map(|m| m.0)).collect();
    require_levels(&levels, &found)?;
    match (load(Target::Mean)?, cfg.method) {
        (ModelParams::Network(mean), Method::Grace | Method::Grace1) if lins.is_empty() => {
            Ok(FittedModels::Network { quantiles: nets, mean, logs: Vec::new() })
        }
        (ModelParams::Linear(mean), Method::Grace2) if nets.is_empty() => {
            Ok(FittedModels::Linear { models: LinearModelSet { quantiles: lins, mean }, fits: Vec::new() })
        }
        _ => Err(Error::Pipeline(format!("checkpoints in {} mix model kinds", dir.display()))),
    }
}

/// `date,ticker,mean,tau_<level>...`, one row per day and stock.
pub fn forecast_csv(q: &QuantilePanel, mean: &SeriesPanel, prices: &PricePanel) -> String {
    let mut s = String::from("date,ticker,mean");
    for tau in &q.levels {
        let _ = write!(s, ",tau_{tau:.6}");
    }
    s.push('\n');
    for (d, &t) in q.days.iter().enumerate() {
        for i in 0..q.n_stocks {
            let _ = write!(s, "{},{},{}", prices.dates[t], prices.tickers[i], mean.get(i, d));
            for v in q.cell(i, d) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

/// Row-by-row reader for the day-major, ticker-ordered files written by this module.
fn read_cells(
    path: &Path,
    prices: &PricePanel,
    mut row: impl FnMut(usize, usize, &csv::StringRecord) -> std::result::Result<(), String>,
) -> Result<(csv::StringRecord, Vec<usize>)> {
    require(path)?;
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| load_err(path, e.to_string()))?.clone();
    let mut days: Vec<usize> = Vec::new();
    let date_index: BTreeMap<String, usize> = prices.dates.iter().enumerate().map(|(t, d)| (d.to_string(), t)).collect();
    let ticker_index: BTreeMap<&str, usize> = prices.tickers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| load_err(path, format!("row {line}: {e}")))?;
        let t = *date_index
            .get(rec.get(0).unwrap_or(""))
            .ok_or_else(|| load_err(path, format!("row {line}: date not in the price panel")))?;
        let i = *ticker_index
            .get(rec.get(1).unwrap_or(""))
            .ok_or_else(|| load_err(path, format!("row {line}: unknown ticker")))?;
        match days.last() {
            Some(&last) if last == t => {}
            Some(&last) if last > t => return Err(load_err(path, format!("row {line}: dates out of order"))),
            _ => days.push(t),
        }
        row(days.len() - 1, i, &rec).map_err(|m| load_err(path, format!("row {line}: {m}")))?;
    }
    Ok((headers, days))
}

fn field(rec: &csv::StringRecord, c: usize) -> std::result::Result<f64, String> {
    let s = rec.get(c).unwrap_or("");
    s.parse::<f64>().map_err(|_| format!("bad number `{s}` in column {}", c + 1))
}

pub fn read_forecasts(path: &Path, prices: &PricePanel) -> Result<(QuantilePanel, SeriesPanel)> {
    let n = prices.n_stocks();
    let mut cells: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
    let (headers, days) = read_cells(path, prices, |d, i, rec| {
        let mean = field(rec, 2)?;
        let q = (3..rec.len()).map(|c| field(rec, c)).collect::<std::result::Result<Vec<_>, _>>()?;
        cells.push((d, i, mean, q));
        Ok(())
    })?;
    let levels: Vec<f64> = headers
        .iter()
        .skip(3)
        .map(|h| h.strip_prefix("tau_").and_then(|v| v.parse().ok()).ok_or_else(|| load_err(path, format!("bad level column `{h}`"))))
        .collect::<Result<_>>()?;
    if cells.len() != days.len() * n {
        return Err(load_err(path, format!("{} rows for {} days x {n} stocks", cells.len(), days.len())));
    }
    let mut qp = QuantilePanel::new(levels, days.clone(), n);
    let mut mu = vec![0.0; n * days.len()];
    for (d, i, m, q) in cells {
        if q.len() != qp.n_levels() {
            return Err(load_err(path, "row with the wrong number of levels"));
        }
        mu[i * days.len() + d] = m;
        for (k, v) in q.into_iter().enumerate() {
            qp.set(i, d, k, v);
        }
    }
    Ok((qp, SeriesPanel { days, n_stocks: n, values: mu }))
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let market = load_market(cfg)?;
    let models = load_models(cfg)?;
    let p = prov(cfg);
    let spans = [("in", market.in_sample_days(cfg.train.lags)), ("out", market.test_days())];
    for (name, days) in spans {
        let (q, m) = forecast(&market, cfg.method, &models, &days)?;
        write_with_header(method_dir(cfg).join(format!("forecasts_{name}.csv")), &p, &forecast_csv(&q, &m, &market.prices))?;
    }
    Ok(())
}

fn omega_csv(omega: &OmegaSet, k0: usize, tickers: &[String]) -> (String, String) {
    let mut sizes = String::from("ticker,|omega|,survived\n");
    let mut levels = String::from("ticker,level_index\n");
    for (i, set) in omega.sets.iter().enumerate() {
        let _ = writeln!(sizes, "{},{},{}", tickers[i], set.len(), u8::from(set.len() >= k0));
        for k in set {
            let _ = writeln!(levels, "{},{k}", tickers[i]);
        }
    }
    (sizes, levels)
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let (prices, _) = load_panels(cfg)?;
    let dir = method_dir(cfg);
    let (q, _) = read_forecasts(&dir.join("forecasts_in.csv"), &prices)?;
    let omega = build_omega(&q, &prices, cfg.alpha)?;
    let (sizes, levels) = omega_csv(&omega, cfg.k0, &prices.tickers);
    let p = prov(cfg);
    write_with_header(dir.join("omega.csv"), &p, &sizes)?;
    write_with_header(dir.join("omega_levels.csv"), &p, &levels)?;
    let pool = filter_stocks(&omega, cfg.k0)?;
    log::info!("validate: {} of {} stocks keep at least {} levels", pool.len(), prices.n_stocks(), cfg.k0);
    Ok(())
}

/// Level sets and the surviving pool, read back from the `validate` outputs.
pub fn read_omega(cfg: &RunConfig, prices: &PricePanel) -> Result<(OmegaSet, Vec<usize>)> {
    let dir = method_dir(cfg);
    let idx: BTreeMap<&str, usize> = prices.tickers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut sets = vec![Vec::new(); prices.n_stocks()];
    let path = dir.join("omega_levels.csv");
    require(&path)?;
    let mut rdr = csv_reader(&path)?;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| load_err(&path, e.to_string()))?;
        let i = idx.get(rec.get(0).unwrap_or("")).ok_or_else(|| load_err(&path, format!("row {}: unknown ticker", k + 2)))?;
        let level: usize = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .filter(|&l| l < cfg.k)
            .ok_or_else(|| load_err(&path, format!("row {}: bad level index", k + 2)))?;
        sets[*i].push(level);
    }
    let omega = OmegaSet { alpha: cfg.alpha, n_levels: cfg.k, sets };
    let pool = filter_stocks(&omega, cfg.k0)?;
    Ok((omega, pool))
}

/// `date,ticker,mu,h,s,k,degenerate,projected` for every fitted cell.
pub fn moments_csv(m: &MomentPanel, prices: &PricePanel) -> String {
    let mut s = String::from("date,ticker,mu,h,s,k,degenerate,projected\n");
    for (d, &t) in m.days.iter().enumerate() {
        for i in 0..m.n_stocks {
            let j = m.idx(i, d);
            if !m.valid(i, d) {
                continue;
            }
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                prices.dates[t],
                prices.tickers[i],
                m.mu[j],
                m.h[j],
                m.s[j],
                m.k[j],
                u8::from(m.degenerate[j]),
                u8::from(m.projected[j])
            );
        }
    }
    s
}

/// Reads a moments file onto the day axis of `days`; absent cells are marked unfitted.
pub fn read_moments(path: &Path, prices: &PricePanel, days: &[usize], omega: &OmegaSet) -> Result<MomentPanel> {
    let (n, nd) = (prices.n_stocks(), days.len());
    let mut m = MomentPanel {
        days: days.to_vec(),
        n_stocks: n,
        mu: vec![0.0; n * nd],
        h: vec![0.0; n * nd],
        s: vec![0.0; n * nd],
        k: vec![0.0; n * nd],
        degenerate: vec![false; n * nd],
        projected: vec![false; n * nd],
        fitted: vec![false; n * nd],
        usable: omega.sets.iter().map(|o| o.len() >= 4).collect(),
        omega_sizes: omega.sizes(),
    };
    let slot: BTreeMap<usize, usize> = days.iter().enumerate().map(|(d, &t)| (t, d)).collect();
    let mut rows: Vec<(usize, usize, [f64; 6])> = Vec::new();
    let (_, seen) = read_cells(path, prices, |d, i, rec| {
        let mut v = [0.0; 6];
        for (c, x) in v.iter_mut().enumerate() {
            *x = field(rec, c + 2)?;
        }
        rows.push((d, i, v));
        Ok(())
    })?;
    for (d, i, v) in rows {
        let t = seen[d];
        let d = *slot.get(&t).ok_or_else(|| load_err(path, format!("day {t} outside the expected span")))?;
        let j = m.idx(i, d);
        m.mu[j] = v[0];
        m.h[j] = v[1];
        m.s[j] = v[2];
        m.k[j] = v[3];
        m.degenerate[j] = v[4] != 0.0;
        m.projected[j] = v[5] != 0.0;
        m.fitted[j] = true;
    }
    Ok(m)
}

pub fn qcm(cfg: &RunConfig) -> Result<()> {
    let (prices, _) = load_panels(cfg)?;
    let (omega, pool) = read_omega(cfg, &prices)?;
    let dir = method_dir(cfg);
    let p = prov(cfg);
    let mut out_panel = None;
    for name in ["in", "out"] {
        let (q, mean) = read_forecasts(&dir.join(format!("forecasts_{name}.csv")), &prices)?;
        let m = moments(&q, &mean, &omega)?;
        write_with_header(dir.join(format!("moments_{name}.csv")), &p, &moments_csv(&m, &prices))?;
        out_panel = Some(m);
    }
    let m = out_panel.expect("two spans");
    let mut s = String::from("ticker,moment,tstat,pvalue\n");
    for (i, tests) in moment_ttests(&prices, &m, &pool)? {
        for (name, t) in MOMENT_NAMES.iter().zip(tests) {
            let show = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into());
            let _ = writeln!(s, "{},{name},{},{}", prices.tickers[i], show(t.statistic), show(t.p_value));
        }
    }
    write_with_header(dir.join("moment_tests.csv"), &p, &s)?;
    Ok(())
}

pub fn backtest(cfg: &RunConfig) -> Result<()> {
    let (prices, factors) = load_panels(cfg)?;
    let (omega, pool) = read_omega(cfg, &prices)?;
    let dir = method_dir(cfg);
    let split = cfg.split()?;
    let (q_in, _) = read_forecasts(&dir.join("forecasts_in.csv"), &prices)?;
    let out_days: Vec<usize> = (split.valid_end..split.test_end).collect();
    let m_in = read_moments(&dir.join("moments_in.csv"), &prices, &q_in.days, &omega)?;
    let m_out = read_moments(&dir.join("moments_out.csv"), &prices, &out_days, &omega)?;
    let results = run_backtests(&prices, &factors.risk_free, (&m_in, &m_out), &pool, &cfg.settings())?;
    let p = prov(cfg);
    let mut lambdas = String::from("measure,lambda1,lambda2,lambda3,in_sample_sharpe\n");
    let mut rows = Vec::new();
    for r in &results {
        let (l1, l2, l3) = r.spec.lambdas();
        let _ = writeln!(lambdas, "{},{l1},{l2},{l3},{:.6}", r.spec.kind, r.in_sample_sharpe);
        write_with_header(dir.join("backtest").join(format!("series_{}.csv", r.spec.kind)), &p, &series_csv(&r.series, &prices.dates))?;
        rows.push(ReportRow { method: cfg.method.name().into(), measure: r.spec.kind, perf: r.perf });
    }
    write_with_header(dir.join("backtest").join("lambdas.csv"), &p, &lambdas)?;
    write_with_header(dir.join("performance.csv"), &p, &report_csv(&rows))?;
    Ok(())
}

/// Collects every method's `performance.csv` into `report.csv`.
pub fn report(cfg: &RunConfig) -> Result<PathBuf> {
    let mut body = String::from("method,measure,return_pct,risk_pct,sharpe\n");
    let mut found = 0;
    for m in [Method::Grace, Method::Grace1, Method::Grace2] {
        let path = cfg.out_dir.join(m.name()).join("performance.csv");
        if !path.exists() {
            continue;
        }
        found += 1;
        let text = fs::read_to_string(&path)?;
        for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            body.push_str(line);
            body.push('\n');
        }
    }
    if found == 0 {
        return Err(load_err(&cfg.out_dir, "no performance.csv found; run backtest first"));
    }
    let path = cfg.out_dir.join("report.csv");
    write_with_header(&path, &prov(cfg), &body)?;
    Ok(path)
}

pub fn run_stage(name: &str, cfg: &RunConfig) -> Result<()> {
    let res = match name {
        "synth" => synth(cfg),
        "featurize" => featurize(cfg),
        "train" => train(cfg),
        "predict" => predict(cfg),
        "validate" => validate(cfg),
        "qcm" => qcm(cfg),
        "backtest" => backtest(cfg),
        "report" => report(cfg).map(|_| ()),
        "run-all" => return run_all(cfg),
        other => return Err(Error::Usage(format!("unknown stage `{other}`; expected one of {}", STAGES.join(", ")))),
    };
    res.map_err(|e| e.in_stage(name))
}

/// Every stage in order. `synth` is skipped when a price file is configured.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg)?;
    for stage in RUN_ALL_ORDER {
        if stage == "synth" && cfg.prices.is_some() {
            continue;
        }
        log::info!("stage {stage}");
        run_stage(stage, cfg)?;
    }
    Ok(())
}
