//! `key = value` run configuration with command-line overrides.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use crate::backtest::{parse_measures, LambdaGrid, MeasureKind, DEFAULT_COST_BPS};
use crate::baselines::LinearFitConfig;
use crate::data::SplitSpec;
use crate::diagnostics::DEFAULT_K0;
use crate::error::{Error, Result};
use crate::io::config_hash;
use crate::pipeline::{Method, Settings};
use crate::synth::MarketOptions;
use crate::training::{quantile_levels, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Input files; `None` means the synthetic files under `out_dir/data`.
    pub prices: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub relations_meta: Option<PathBuf>,
    pub market: MarketOptions,
    pub train_end: usize,
    pub valid_end: usize,
    pub test_end: usize,
    pub method: Method,
    pub k: usize,
    pub train: TrainConfig,
    pub baseline: LinearFitConfig,
    pub alpha: f64,
    pub k0: usize,
    pub measures: Vec<MeasureKind>,
    pub cost_bps: f64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            prices: None,
            factors: None,
            relations: None,
            relations_meta: None,
            market: MarketOptions::default(),
            train_end: 600,
            valid_end: 750,
            test_end: 900,
            method: Method::Grace,
            k: 199,
            train: TrainConfig::default(),
            baseline: LinearFitConfig::default(),
            alpha: 0.01,
            k0: DEFAULT_K0,
            measures: MeasureKind::ALL.to_vec(),
            cost_bps: DEFAULT_COST_BPS,
            seed: 42,
            jobs: 1,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn path_or_auto(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "auto").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "auto".into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Sets one key. Keys match the canonical names written by [`RunConfig::to_text`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.market;
        let t = &mut self.train;
        match key {
            "out_dir" => self.out_dir = PathBuf::from(v),
            "prices" => self.prices = path_or_auto(v),
            "factors" => self.factors = path_or_auto(v),
            "relations" => self.relations = path_or_auto(v),
            "relations_meta" => self.relations_meta = path_or_auto(v),
            "synth_stocks" => m.n_stocks = num(key, v)?,
            "synth_days" => m.n_days = num(key, v)?,
            "group_gap" => m.group_gap = num(key, v)?,
            "base_vol" => m.base_vol = num(key, v)?,
            "skew_delta" => m.skew_delta = num(key, v)?,
            "vol_dispersion" => m.vol_dispersion = num(key, v)?,
            "tier_ratio" => m.tier_ratio = num(key, v)?,
            "garch_a" => m.garch_a = num(key, v)?,
            "garch_b" => m.garch_b = num(key, v)?,
            "nonlinear" => m.nonlinear = num(key, v)?,
            "train_end" => self.train_end = num(key, v)?,
            "valid_end" => self.valid_end = num(key, v)?,
            "test_end" => self.test_end = num(key, v)?,
            "method" => self.method = v.parse()?,
            "K" => self.k = num(key, v)?,
            "lags" => t.lags = num(key, v)?,
            "hidden" => t.hidden = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "penalty" => t.penalty = num(key, v)?,
            "max_epochs" => t.max_epochs = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "baseline_learning_rate" => self.baseline.learning_rate = num(key, v)?,
            "baseline_epochs" => self.baseline.epochs = num(key, v)?,
            "baseline_grad_tol" => self.baseline.grad_tol = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "K0" => self.k0 = num(key, v)?,
            "measures" => self.measures = parse_measures(v)?,
            "cost_bps" => self.cost_bps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "jobs" => self.jobs = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Config(format!("K = {} must be at least 4", self.k)));
        }
        if self.k0 < 4 || self.k0 > self.k {
            return Err(Error::Config(format!("K0 = {} must lie in [4, K = {}]", self.k0, self.k)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha = {} outside [0, 1)", self.alpha)));
        }
        if !(self.cost_bps >= 0.0) {
            return Err(Error::Config(format!("cost_bps = {} must be >= 0", self.cost_bps)));
        }
        if self.measures.is_empty() {
            return Err(Error::Config("no performance measures".into()));
        }
        self.train.validate()?;
        self.split()?;
        Ok(())
    }

    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.train_end, self.valid_end, self.test_end)
    }

    pub fn levels(&self) -> Vec<f64> {
        quantile_levels(self.k)
    }

    /// Training settings with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn settings(&self) -> Settings {
        Settings {
            method: self.method,
            levels: self.levels(),
            train: self.train_config(),
            baseline: self.baseline.clone(),
            alpha: self.alpha,
            k0: self.k0,
            measures: self.measures.clone(),
            cost: self.cost_bps / 1e4,
            jobs: self.jobs,
            grid: LambdaGrid::default(),
        }
    }

    pub fn synth_options(&self) -> MarketOptions {
        MarketOptions { seed: self.seed, ..self.market.clone() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn prices_path(&self) -> PathBuf {
        self.prices.clone().unwrap_or_else(|| self.data_dir().join("prices.csv"))
    }

    pub fn factors_path(&self) -> PathBuf {
        self.factors.clone().unwrap_or_else(|| self.data_dir().join("factors.csv"))
    }

    pub fn relations_path(&self) -> PathBuf {
        self.relations.clone().unwrap_or_else(|| self.data_dir().join("relations.csv"))
    }

    pub fn relations_meta_path(&self) -> PathBuf {
        self.relations_meta.clone().unwrap_or_else(|| self.relations_path().with_file_name("relations_meta.csv"))
    }

    /// Canonical text of every setting that can change an output, one key per line.
    /// `out_dir` and `jobs` are left out.
    pub fn to_text(&self) -> String {
        let m = &self.market;
        let t = &self.train;
        let measures: Vec<&str> = self.measures.iter().map(|k| k.name()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("prices", show_path(&self.prices));
        kv("factors", show_path(&self.factors));
        kv("relations", show_path(&self.relations));
        kv("relations_meta", show_path(&self.relations_meta));
        kv("synth_stocks", m.n_stocks.to_string());
        kv("synth_days", m.n_days.to_string());
        kv("group_gap", m.group_gap.to_string());
        kv("base_vol", m.base_vol.to_string());
        kv("skew_delta", m.skew_delta.to_string());
        kv("vol_dispersion", m.vol_dispersion.to_string());
        kv("tier_ratio", m.tier_ratio.to_string());
        kv("garch_a", m.garch_a.to_string());
        kv("garch_b", m.garch_b.to_string());
        kv("nonlinear", m.nonlinear.to_string());
        kv("train_end", self.train_end.to_string());
        kv("valid_end", self.valid_end.to_string());
        kv("test_end", self.test_end.to_string());
        kv("method", self.method.to_string());
        kv("K", self.k.to_string());
        kv("lags", t.lags.to_string());
        kv("hidden", t.hidden.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("penalty", t.penalty.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("patience", t.patience.to_string());
        kv("baseline_learning_rate", self.baseline.learning_rate.to_string());
        kv("baseline_epochs", self.baseline.epochs.to_string());
        kv("baseline_grad_tol", self.baseline.grad_tol.to_string());
        kv("alpha", self.alpha.to_string());
        kv("K0", self.k0.to_string());
        kv("measures", measures.join(","));
        kv("cost_bps", self.cost_bps.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_text())
    }
}
