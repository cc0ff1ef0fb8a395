use std::fmt::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::math::{LeastSquares, Tensor};

use super::panel::{csv_reader, parse_date, parse_f64, FactorPanel, PricePanel};

pub const MA_WINDOWS: [usize; 5] = [1, 5, 10, 20, 30];
/// Half a trading year.
pub const EXPOSURE_WINDOW: usize = 126;

/// Mean of the `k` returns of stock `i` ending at day index `t` (0-based, inclusive).
pub fn moving_average(panel: &PricePanel, k: usize, i: usize, t: usize) -> Result<f64> {
    if k == 0 || t + 1 < k {
        return Err(Error::InsufficientHistory(format!(
            "moving average of width {k} needs day index >= {}, got {t}",
            k.saturating_sub(1)
        )));
    }
    if i >= panel.n_stocks() || t >= panel.n_days() {
        return Err(Error::Shape(format!("cell ({i}, {t}) outside the panel")));
    }
    let s = &panel.series(i)[t + 1 - k..=t];
    Ok(s.iter().sum::<f64>() / k as f64)
}

fn exposure_design(factors: &FactorPanel, t: usize, window: usize) -> Result<LeastSquares> {
    let b = factors.n_factors();
    let mut x = Vec::with_capacity(window * (b + 1));
    for u in t + 1 - window..=t {
        x.push(1.0);
        for f in 0..b {
            x.push(factors.value(f, u));
        }
    }
    LeastSquares::new(&Tensor::from_vec(&[window, b + 1], x)?)
}

/// Slopes of stock `i`'s returns on the factors over the `window` days ending at `t`.
pub fn rolling_factor_exposures(
    panel: &PricePanel,
    factors: &FactorPanel,
    i: usize,
    t: usize,
    window: usize,
) -> Result<Vec<f64>> {
    if window < 20 {
        return Err(Error::Usage(format!("exposure window must be >= 20, got {window}")));
    }
    if t + 1 < window {
        return Err(Error::InsufficientHistory(format!(
            "exposure window {window} needs day index >= {}, got {t}",
            window - 1
        )));
    }
    let ls = exposure_design(factors, t, window)?;
    let y = &panel.series(i)[t + 1 - window..=t];
    let beta = ls.solve(y)?;
    Ok(beta[1..].to_vec())
}

/// `(v - min) / (max - min)`, or 0 when the range is empty.
pub fn normalize(v: f64, min: f64, max: f64) -> f64 {
    let range = max - min;
    if range > 0.0 {
        (v - min) / range
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub windows: Vec<usize>,
    pub exposure_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            windows: MA_WINDOWS.to_vec(),
            exposure_window: EXPOSURE_WINDOW,
        }
    }
}

/// The lagged features `X_{t-1}`: one `(N+B) x P` matrix per lag, oldest first.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    pub t: usize,
    pub lags: Vec<Tensor>,
}

impl FeatureTensor {
    pub fn n_entities(&self) -> usize {
        self.lags[0].rows()
    }

    pub fn n_features(&self) -> usize {
        self.lags[0].cols()
    }

    pub fn n_lags(&self) -> usize {
        self.lags.len()
    }

    /// Entity `e`, feature row `p`, lag column `s` (0 = day `t - S`).
    pub fn get(&self, e: usize, p: usize, s: usize) -> f64 {
        self.lags[s].get2(e, p)
    }

    /// The most recent column, day `t - 1`.
    pub fn last(&self) -> &Tensor {
        self.lags.last().expect("at least one lag")
    }
}

/// Normalized features for every entity and day, stocks first, then factors.
#[derive(Debug, Clone)]
pub struct FeaturePanel {
    pub n_stocks: usize,
    pub n_factors: usize,
    pub config: FeatureConfig,
    /// First day index with complete history.
    pub first_day: usize,
    /// Training span end used for the normalization statistics (exclusive).
    pub stats_end: usize,
    /// `(min, max)` per `(entity, feature)`, row-major.
    pub stats: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
    raw: Vec<f64>,
    days: Vec<Tensor>,
}

impl FeaturePanel {
    /// Builds raw features and normalizes them by their range over days `< train_end`.
    pub fn build(
        prices: &PricePanel,
        factors: &FactorPanel,
        cfg: &FeatureConfig,
        train_end: usize,
    ) -> Result<Self> {
        let (n, b, t_len) = (prices.n_stocks(), factors.n_factors(), prices.n_days());
        if factors.dates != prices.dates {
            return Err(Error::Spec("factor and price date axes differ".into()));
        }
        if cfg.windows.is_empty() || cfg.windows.contains(&0) {
            return Err(Error::Config("moving-average windows must be positive".into()));
        }
        if cfg.exposure_window < 20 {
            return Err(Error::Config(format!(
                "exposure window must be >= 20, got {}",
                cfg.exposure_window
            )));
        }
        let w_max = *cfg.windows.iter().max().unwrap();
        let first_day = w_max.max(cfg.exposure_window) - 1;
        if train_end <= first_day || train_end > t_len {
            return Err(Error::InsufficientHistory(format!(
                "training span ends at day {train_end}; features need day index >= {first_day} \
                 and at least one training day with full history"
            )));
        }
        let e_count = n + b;
        let p_count = cfg.windows.len() + b;
        let mut raw = vec![0.0; e_count * p_count * t_len];
        let at = |e: usize, p: usize, u: usize| (e * p_count + p) * t_len + u;

        let fill_ma = |e: usize, series: &[f64], raw: &mut Vec<f64>| {
            let mut prefix = vec![0.0; t_len + 1];
            for (u, v) in series.iter().enumerate() {
                prefix[u + 1] = prefix[u] + v;
            }
            for (p, &k) in cfg.windows.iter().enumerate() {
                for u in first_day..t_len {
                    raw[at(e, p, u)] = if k == 1 {
                        series[u]
                    } else {
                        (prefix[u + 1] - prefix[u + 1 - k]) / k as f64
                    };
                }
            }
        };
        for i in 0..n {
            fill_ma(i, prices.series(i), &mut raw);
        }
        for f in 0..b {
            fill_ma(n + f, factors.series(f), &mut raw);
        }

        let mut warnings = Vec::new();
        let q = cfg.windows.len();
        let mut last: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut substituted = 0usize;
        for u in first_day..t_len {
            let ls = exposure_design(factors, u, cfg.exposure_window);
            for i in 0..n {
                let beta = ls.as_ref().ok().and_then(|ls| {
                    ls.solve(&prices.series(i)[u + 1 - cfg.exposure_window..=u]).ok()
                });
                let slopes = match beta {
                    Some(beta) => {
                        let s = beta[1..].to_vec();
                        last[i] = Some(s.clone());
                        s
                    }
                    None => {
                        substituted += 1;
                        last[i].clone().unwrap_or_else(|| vec![0.0; b])
                    }
                };
                for (f, v) in slopes.iter().enumerate() {
                    raw[at(i, q + f, u)] = *v;
                }
            }
        }
        if substituted > 0 {
            warnings.push(format!(
                "{substituted} singular exposure windows replaced by the previous valid exposure"
            ));
        }
        for f in 0..b {
            for u in first_day..t_len {
                raw[at(n + f, q + f, u)] = 1.0;
            }
        }

        for w in &warnings {
            log::debug!("{w}");
        }
        FeaturePanel::from_raw(n, b, cfg, first_day, train_end, raw, t_len, warnings)
    }

    /// Normalizes a raw `(entity, feature, day)` array by its training-span ranges.
    #[allow(clippy::too_many_arguments)]
    fn from_raw(
        n: usize,
        b: usize,
        cfg: &FeatureConfig,
        first_day: usize,
        train_end: usize,
        raw: Vec<f64>,
        t_len: usize,
        mut warnings: Vec<String>,
    ) -> Result<Self> {
        let e_count = n + b;
        let p_count = cfg.windows.len() + b;
        let at = |e: usize, p: usize, u: usize| (e * p_count + p) * t_len + u;
        let mut stats = Vec::with_capacity(e_count * p_count);
        for e in 0..e_count {
            for p in 0..p_count {
                let span = &raw[at(e, p, first_day)..at(e, p, train_end)];
                let lo = span.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = span.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !(hi > lo) {
                    let w = format!("entity {e} feature {p}: zero training range, row set to 0");
                    log::debug!("{w}");
                    warnings.push(w);
                }
                stats.push((lo, hi));
            }
        }

        let mut days = Vec::with_capacity(t_len);
        for u in 0..t_len {
            let mut m = vec![0.0; e_count * p_count];
            if u >= first_day {
                for e in 0..e_count {
                    for p in 0..p_count {
                        let (lo, hi) = stats[e * p_count + p];
                        m[e * p_count + p] = normalize(raw[at(e, p, u)], lo, hi);
                    }
                }
            }
            days.push(Tensor::from_vec(&[e_count, p_count], m)?);
        }

        Ok(FeaturePanel {
            n_stocks: n,
            n_factors: b,
            config: cfg.clone(),
            first_day,
            stats_end: train_end,
            stats,
            warnings,
            raw,
            days,
        })
    }

    /// Column names: `ma_<k>` per window, then `beta_<factor>` per factor.
    pub fn feature_names(&self, factor_names: &[String]) -> Vec<String> {
        let mut out: Vec<String> = self.config.windows.iter().map(|k| format!("ma_{k}")).collect();
        out.extend(factor_names.iter().map(|f| format!("beta_{f}")));
        out
    }

    /// Unnormalized features as `date,entity,<features>` for days with full history.
    pub fn raw_csv(&self, dates: &[NaiveDate], entities: &[String], factor_names: &[String]) -> String {
        let mut s = format!("date,entity,{}\n", self.feature_names(factor_names).join(","));
        for u in self.first_day..self.n_days() {
            for (e, name) in entities.iter().enumerate() {
                let _ = write!(s, "{},{name}", dates[u]);
                for p in 0..self.n_features() {
                    let _ = write!(s, ",{}", self.raw(e, p, u));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Training ranges as `entity,feature,min,max`.
    pub fn stats_csv(&self, entities: &[String], factor_names: &[String]) -> String {
        let names = self.feature_names(factor_names);
        let mut s = String::from("entity,feature,min,max\n");
        for (e, entity) in entities.iter().enumerate() {
            for (p, f) in names.iter().enumerate() {
                let (lo, hi) = self.stats[e * names.len() + p];
                let _ = writeln!(s, "{entity},{f},{lo},{hi}");
            }
        }
        s
    }

    /// Reads a file written by [`FeaturePanel::raw_csv`] and renormalizes it over
    /// days `< train_end`. Entities must appear in `entities` order on every date of `dates`
    /// from the first listed date on.
    pub fn load_raw_csv(
        path: impl AsRef<Path>,
        dates: &[NaiveDate],
        entities: &[String],
        n_factors: usize,
        cfg: &FeatureConfig,
        train_end: usize,
    ) -> Result<Self> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let mut rdr = csv_reader(path)?;
        let headers = rdr.headers().map_err(|e| Error::load(&shown, e.to_string()))?.clone();
        let p_count = cfg.windows.len() + n_factors;
        if headers.len() != 2 + p_count {
            return Err(Error::load(&shown, format!("expected {} feature columns, found {}", p_count, headers.len().saturating_sub(2))));
        }
        let (t_len, e_count) = (dates.len(), entities.len());
        let mut raw = vec![0.0; e_count * p_count * t_len];
        let mut first_day = None;
        let mut seen = 0usize;
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
            let date = parse_date(rec.get(0).unwrap_or("")).map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
            let u = dates
                .binary_search(&date)
                .map_err(|_| Error::load(&shown, format!("row {line}: date {date} not in the price panel")))?;
            let first = *first_day.get_or_insert(u);
            let expect = first + seen / e_count;
            let e = seen % e_count;
            if u != expect || rec.get(1) != Some(entities[e].as_str()) {
                return Err(Error::load(&shown, format!("row {line}: expected {} on {}", entities[e], dates.get(expect).map(|d| d.to_string()).unwrap_or_default())));
            }
            for p in 0..p_count {
                raw[(e * p_count + p) * t_len + u] =
                    parse_f64(rec.get(2 + p).unwrap_or("")).map_err(|m| Error::load(&shown, format!("row {line}: {m}")))?;
            }
            seen += 1;
        }
        let first_day = first_day.ok_or_else(|| Error::load(&shown, "no data rows"))?;
        if seen != (t_len - first_day) * e_count {
            return Err(Error::load(&shown, format!("{seen} rows; expected {}", (t_len - first_day) * e_count)));
        }
        if train_end <= first_day || train_end > t_len {
            return Err(Error::InsufficientHistory(format!("training span ends at day {train_end}; features start at {first_day}")));
        }
        FeaturePanel::from_raw(e_count - n_factors, n_factors, cfg, first_day, train_end, raw, t_len, Vec::new())
    }

    pub fn n_entities(&self) -> usize {
        self.n_stocks + self.n_factors
    }

    pub fn n_features(&self) -> usize {
        self.config.windows.len() + self.n_factors
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    /// Unnormalized feature value.
    pub fn raw(&self, e: usize, p: usize, u: usize) -> f64 {
        let (pc, tl) = (self.n_features(), self.n_days());
        self.raw[(e * pc + p) * tl + u]
    }

    /// Normalized `(N+B) x P` features observed on day `u`.
    pub fn day(&self, u: usize) -> &Tensor {
        &self.days[u]
    }

    /// Earliest target day whose `s` lags all have complete history.
    pub fn first_target(&self, s: usize) -> usize {
        self.first_day + s
    }

    /// `X_{t-1}`: lags `t-s .. t-1`. `t` may equal the panel length (next-day forecast).
    pub fn slice(&self, t: usize, s: usize) -> Result<FeatureTensor> {
        if s == 0 {
            return Err(Error::Usage("lag count must be positive".into()));
        }
        if t < self.first_target(s) {
            return Err(Error::InsufficientHistory(format!(
                "day {t} with {s} lags; earliest usable day is {}",
                self.first_target(s)
            )));
        }
        if t > self.n_days() {
            return Err(Error::Shape(format!("day {t} beyond panel of {} days", self.n_days())));
        }
        Ok(FeatureTensor {
            t,
            lags: self.days[t - s..t].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dates(t: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..t).map(|k| d0 + chrono::Days::new(k as u64)).collect()
    }

    fn random_factors(b: usize, t: usize, seed: u64) -> FactorPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FactorPanel {
            names: (0..b).map(|k| format!("f{k}")).collect(),
            dates: dates(t),
            values: (0..b * t).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect(),
            risk_free: vec![0.0; t],
        }
    }

    #[test]
    fn moving_average_cases() {
        let p = PricePanel::new(vec!["A".into()], dates(5), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(moving_average(&p, 5, 0, 4).unwrap(), 3.0);
        assert_eq!(moving_average(&p, 1, 0, 2).unwrap(), 3.0);
        assert!(matches!(moving_average(&p, 5, 0, 3), Err(Error::InsufficientHistory(_))));
        let c = PricePanel::new(vec!["A".into()], dates(40), vec![0.01; 40]).unwrap();
        for k in MA_WINDOWS {
            assert!((moving_average(&c, k, 0, 39).unwrap() - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn exposure_exact_regressions() {
        let t = 150;
        let f = random_factors(5, t, 3);
        let equal = PricePanel::new(vec!["A".into()], dates(t), f.series(0).to_vec()).unwrap();
        let l = rolling_factor_exposures(&equal, &f, 0, 140, 126).unwrap();
        for (k, v) in l.iter().enumerate() {
            assert!((v - if k == 0 { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
        let flat = PricePanel::new(vec!["A".into()], dates(t), vec![0.003; t]).unwrap();
        let l = rolling_factor_exposures(&flat, &f, 0, 140, 126).unwrap();
        assert!(l.iter().all(|v| v.abs() < 1e-8));
        assert!(rolling_factor_exposures(&flat, &f, 0, 100, 126).is_err());
    }

    #[test]
    fn exposure_generate_and_refit() {
        let t = 200;
        let f = random_factors(5, t, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r: Vec<f64> = (0..t)
            .map(|u| {
                0.5 * f.value(0, u) + 2.0 * f.value(2, u) + 1e-4 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let p = PricePanel::new(vec!["A".into()], dates(t), r).unwrap();
        let l = rolling_factor_exposures(&p, &f, 0, 180, 126).unwrap();
        let truth = [0.5, 0.0, 2.0, 0.0, 0.0];
        for (a, b) in l.iter().zip(truth) {
            assert!((a - b).abs() < 1e-2, "{l:?}");
        }
    }

    #[test]
    fn normalize_definition() {
        assert_eq!(normalize(1.0, 0.0, 2.0), 0.5);
        assert_eq!(normalize(0.0, 0.0, 2.0), 0.0);
        assert_eq!(normalize(2.0, 0.0, 2.0), 1.0);
        assert_eq!(normalize(3.0, 0.0, 2.0), 1.5);
        assert_eq!(normalize(3.0, 1.0, 1.0), 0.0);
    }

    fn small_market(t: usize, seed: u64) -> (PricePanel, FactorPanel) {
        let f = random_factors(1, t, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let r: Vec<f64> = (0..t)
            .map(|u| 0.8 * f.value(0, u) + 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (PricePanel::new(vec!["A".into()], dates(t), r).unwrap(), f)
    }

    #[test]
    fn hand_layout_one_stock_one_factor() {
        let (p, f) = small_market(40, 5);
        let cfg = FeatureConfig { windows: vec![1, 3], exposure_window: 20 };
        let fp = FeaturePanel::build(&p, &f, &cfg, 30).unwrap();
        assert_eq!(fp.first_day, 19);
        assert_eq!((fp.n_entities(), fp.n_features()), (2, 3));
        let x = fp.slice(25, 2).unwrap();
        assert_eq!((x.n_entities(), x.n_features(), x.n_lags()), (2, 3, 2));
        for s in 0..2 {
            let u = 23 + s;
            let expect_raw = [
                [p.ret(0, u), (p.ret(0, u) + p.ret(0, u - 1) + p.ret(0, u - 2)) / 3.0,
                    rolling_factor_exposures(&p, &f, 0, u, 20).unwrap()[0]],
                [f.value(0, u), (f.value(0, u) + f.value(0, u - 1) + f.value(0, u - 2)) / 3.0, 1.0],
            ];
            for e in 0..2 {
                for q in 0..3 {
                    assert!((fp.raw(e, q, u) - expect_raw[e][q]).abs() < 1e-12);
                    let (lo, hi) = fp.stats[e * 3 + q];
                    assert!((x.get(e, q, s) - normalize(expect_raw[e][q], lo, hi)).abs() < 1e-12);
                }
            }
        }
        // factor self-exposure is constant, so its row normalizes to zero with a warning
        assert!(fp.warnings.iter().any(|w| w.contains("entity 1 feature 2")));
        assert!(matches!(fp.slice(20, 2), Err(Error::InsufficientHistory(m)) if m.contains("21")));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (p, f) = small_market(60, 9);
        let cfg = FeatureConfig { windows: vec![1, 5], exposure_window: 20 };
        let fp = FeaturePanel::build(&p, &f, &cfg, 40).unwrap();
        let entities = vec!["A".to_string(), "F0".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        std::fs::write(&path, fp.raw_csv(&p.dates, &entities, &f.names)).unwrap();
        let back = FeaturePanel::load_raw_csv(&path, &p.dates, &entities, 1, &cfg, 40).unwrap();
        assert_eq!(back.stats, fp.stats);
        assert_eq!(back.first_day, fp.first_day);
        for u in fp.first_day..60 {
            assert_eq!(back.day(u), fp.day(u));
        }
        let swapped = vec!["F0".to_string(), "A".to_string()];
        assert!(FeaturePanel::load_raw_csv(&path, &p.dates, &swapped, 1, &cfg, 40).is_err());
    }

    #[test]
    fn stats_ignore_post_training_data_and_features_are_causal() {
        let (p, f) = small_market(60, 8);
        let cfg = FeatureConfig { windows: vec![1, 5], exposure_window: 20 };
        let base = FeaturePanel::build(&p, &f, &cfg, 40).unwrap();
        let mut q = p.clone();
        q.returns[50] += 0.3;
        let pert = FeaturePanel::build(&q, &f, &cfg, 40).unwrap();
        assert_eq!(base.stats, pert.stats);
        assert_eq!(base.slice(50, 4).unwrap().lags, pert.slice(50, 4).unwrap().lags);
        assert_ne!(base.slice(51, 4).unwrap().lags, pert.slice(51, 4).unwrap().lags);
        for u in base.first_day..60 {
            assert_eq!(base.raw(0, 0, u), p.ret(0, u));
        }
    }

    #[test]
    fn build_is_deterministic() {
        let (p, f) = small_market(60, 9);
        let cfg = FeatureConfig { windows: vec![1, 5], exposure_window: 20 };
        let a = FeaturePanel::build(&p, &f, &cfg, 40).unwrap();
        let b = FeaturePanel::build(&p, &f, &cfg, 40).unwrap();
        for u in 0..60 {
            assert_eq!(a.day(u), b.day(u));
        }
    }
}
