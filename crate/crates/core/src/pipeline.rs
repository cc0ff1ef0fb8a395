//! In-memory pipeline: fit, forecast, filter, convert to moments and backtest.

use std::fmt;
use std::str::FromStr;

use crate::backtest::{grid_search_lambdas, N_DECILES, Annualized, BacktestInput, LambdaGrid, MeasureKind, PerformanceMeasureSpec, PortfolioSeries};
use crate::baselines::{fit_linear_all, predict_linear_panel, LinearDesign, LinearFit, LinearFitConfig, LinearModelSet};
use crate::data::{FactorPanel, FeatureConfig, FeaturePanel, PricePanel, SplitSpec};
use crate::diagnostics::{build_omega, filter_stocks, OmegaSet};
use crate::error::{Error, Result};
use crate::ftgcn::{GraphContext, ModelTheta};
use crate::hypergraph::Hypergraph;
use crate::qcm::{qcm_panel, MomentPanel};
use crate::synth::SyntheticDataset;
use crate::training::{predict_panel, train_all, QuantilePanel, SeriesPanel, TrainConfig, TrainData, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Network with factor vertices in the graph.
    Grace,
    /// Network without factor vertices.
    Grace1,
    /// Linear network autoregression.
    Grace2,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Grace => "grace",
            Method::Grace1 => "grace1",
            Method::Grace2 => "grace2",
        }
    }

    pub fn include_factors(self) -> bool {
        self != Method::Grace1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grace" => Ok(Method::Grace),
            "grace1" => Ok(Method::Grace1),
            "grace2" => Ok(Method::Grace2),
            other => Err(Error::Usage(format!("unknown method '{other}' (grace, grace1, grace2)"))),
        }
    }
}

/// Returns, factors, relations and features on one date axis.
#[derive(Debug, Clone)]
pub struct Market {
    pub prices: PricePanel,
    pub factors: FactorPanel,
    pub graph: Hypergraph,
    pub features: FeaturePanel,
    pub split: SplitSpec,
}

impl Market {
    pub fn new(prices: PricePanel, factors: FactorPanel, graph: Hypergraph, split: SplitSpec, cfg: &FeatureConfig) -> Result<Self> {
        split.validate(prices.n_days())?;
        let factors = factors.align_to(&prices.dates)?;
        if graph.n_stocks != prices.n_stocks() || graph.n_factors != factors.n_factors() {
            return Err(Error::Shape(format!(
                "graph has {}+{} vertices for {} stocks and {} factors",
                graph.n_stocks,
                graph.n_factors,
                prices.n_stocks(),
                factors.n_factors()
            )));
        }
        let features = FeaturePanel::build(&prices, &factors, cfg, split.train_end)?;
        Ok(Market { prices, factors, graph: graph.with_factors(true), features, split })
    }

    /// Like [`Market::new`] with features built elsewhere, e.g. read back from disk.
    pub fn with_features(prices: PricePanel, factors: FactorPanel, graph: Hypergraph, split: SplitSpec, features: FeaturePanel) -> Result<Self> {
        split.validate(prices.n_days())?;
        let factors = factors.align_to(&prices.dates)?;
        if features.n_stocks != prices.n_stocks() || features.n_factors != factors.n_factors() || features.n_days() != prices.n_days() {
            return Err(Error::Shape("feature panel does not match the price and factor panels".into()));
        }
        if features.stats_end != split.train_end {
            return Err(Error::Spec(format!(
                "features normalized over days < {}, split trains on days < {}",
                features.stats_end, split.train_end
            )));
        }
        Ok(Market { prices, factors, graph: graph.with_factors(true), features, split })
    }

    pub fn from_synthetic(ds: &SyntheticDataset, split: SplitSpec) -> Result<Self> {
        let graph = Hypergraph::new(
            ds.n_stocks(),
            ds.factors.n_factors(),
            ds.spec.relation_names.clone(),
            &ds.spec.edges,
            true,
        )?;
        Market::new(ds.prices.clone(), ds.factors.clone(), graph, split, &FeatureConfig::default())
    }

    pub fn graph_for(&self, method: Method) -> Hypergraph {
        self.graph.with_factors(method.include_factors())
    }

    /// Training and validation days with complete lag history.
    pub fn in_sample_days(&self, lags: usize) -> Vec<usize> {
        (self.features.first_target(lags)..self.split.valid_end).collect()
    }

    pub fn test_days(&self) -> Vec<usize> {
        (self.split.valid_end..self.split.test_end).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub method: Method,
    pub levels: Vec<f64>,
    pub train: TrainConfig,
    pub baseline: LinearFitConfig,
    pub alpha: f64,
    pub k0: usize,
    pub measures: Vec<MeasureKind>,
    /// Cost per unit turnover as a fraction.
    pub cost: f64,
    pub jobs: usize,
    pub grid: LambdaGrid,
}

#[derive(Debug, Clone)]
pub enum FittedModels {
    Network { quantiles: Vec<(f64, ModelTheta)>, mean: ModelTheta, logs: Vec<TrainLog> },
    Linear { models: LinearModelSet, fits: Vec<LinearFit> },
}

pub fn fit_models(market: &Market, s: &Settings) -> Result<FittedModels> {
    match s.method {
        Method::Grace | Method::Grace1 => {
            let g = market.graph_for(s.method);
            let data = TrainData::new(&market.features, &market.prices, &g, &market.split, s.train.lags, s.train.hidden)?;
            let mut out = train_all(&s.levels, &data, &s.train, s.jobs)?;
            let (mean, mean_log) = out.pop().expect("mean model");
            let mut logs: Vec<TrainLog> = out.iter().map(|o| o.1.clone()).collect();
            logs.push(mean_log);
            let quantiles = s.levels.iter().cloned().zip(out.into_iter().map(|o| o.0)).collect();
            Ok(FittedModels::Network { quantiles, mean, logs })
        }
        Method::Grace2 => {
            let days = market.in_sample_days(s.train.lags);
            let w = market.graph.collapse();
            let design = LinearDesign::build(&market.features, &market.prices, &market.factors, &w, days[0]..market.split.valid_end)?;
            let (models, fits) = fit_linear_all(&s.levels, &design, &s.baseline)?;
            Ok(FittedModels::Linear { models, fits })
        }
    }
}

pub fn forecast(market: &Market, method: Method, models: &FittedModels, days: &[usize]) -> Result<(QuantilePanel, SeriesPanel)> {
    match models {
        FittedModels::Network { quantiles, mean, .. } => {
            let ctx = GraphContext::new(&market.graph_for(method));
            predict_panel(quantiles, mean, &market.features, &ctx, days)
        }
        FittedModels::Linear { models, .. } => {
            predict_linear_panel(models, &market.features, &market.prices, &market.factors, &market.graph.collapse(), days)
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasureResult {
    pub spec: PerformanceMeasureSpec,
    pub in_sample_sharpe: f64,
    pub series: PortfolioSeries,
    pub perf: Annualized,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub omega: OmegaSet,
    pub pool: Vec<usize>,
    pub moments_in: MomentPanel,
    pub moments_out: MomentPanel,
    pub results: Vec<MeasureResult>,
}

/// Moments on a span using the in-sample level sets.
pub fn moments(quantiles: &QuantilePanel, mean: &SeriesPanel, omega: &OmegaSet) -> Result<MomentPanel> {
    qcm_panel(quantiles, mean, &omega.sets)
}

/// Coverage filter and lambda search in-sample, then out-of-sample backtests.
pub fn evaluate(
    market: &Market,
    in_sample: (&QuantilePanel, &SeriesPanel),
    out_of_sample: (&QuantilePanel, &SeriesPanel),
    s: &Settings,
) -> Result<Evaluation> {
    let omega = build_omega(in_sample.0, &market.prices, s.alpha).map_err(|e| e.in_stage("validate"))?;
    let pool = filter_stocks(&omega, s.k0).map_err(|e| e.in_stage("validate"))?;
    let moments_in = moments(in_sample.0, in_sample.1, &omega).map_err(|e| e.in_stage("qcm"))?;
    let moments_out = moments(out_of_sample.0, out_of_sample.1, &omega).map_err(|e| e.in_stage("qcm"))?;
    let results = run_backtests(&market.prices, &market.factors.risk_free, (&moments_in, &moments_out), &pool, s)
        .map_err(|e| e.in_stage("backtest"))?;
    Ok(Evaluation { omega, pool, moments_in, moments_out, results })
}

/// For each measure: lambda search on the in-sample moments, then the out-of-sample backtest.
pub fn run_backtests(
    returns: &PricePanel,
    risk_free: &[f64],
    moments: (&MomentPanel, &MomentPanel),
    pool: &[usize],
    s: &Settings,
) -> Result<Vec<MeasureResult>> {
    if pool.len() < N_DECILES {
        return Err(Error::Pipeline(format!(
            "the stock pool has {} stocks; decile portfolios need at least {N_DECILES} (lower K0 or alpha)",
            pool.len()
        )));
    }
    let input_in = BacktestInput { moments: moments.0, returns, risk_free, pool, cost: s.cost };
    let input_out = BacktestInput { moments: moments.1, returns, risk_free, pool, cost: s.cost };
    let mut results = Vec::with_capacity(s.measures.len());
    for &kind in &s.measures {
        let (spec, in_sr) = grid_search_lambdas(kind, &input_in, &s.grid)?;
        let (series, perf) = input_out
            .run(&spec)
            .map_err(|e| Error::Pipeline(format!("measure {kind}: {e}")))?;
        let flat = series.long.iter().filter(|l| l.is_empty()).count();
        if flat > 0 {
            log::warn!("measure {kind}: no position on {flat} of {} days (fewer than {N_DECILES} rankable stocks)", series.len());
        }
        results.push(MeasureResult { spec, in_sample_sharpe: in_sr, series, perf });
    }
    Ok(results)
}

/// Fit, forecast both spans and evaluate.
pub fn run_method(market: &Market, s: &Settings) -> Result<(FittedModels, Evaluation)> {
    let models = fit_models(market, s).map_err(|e| e.in_stage("train"))?;
    let in_days = market.in_sample_days(s.train.lags);
    let out_days = market.test_days();
    let fin = forecast(market, s.method, &models, &in_days).map_err(|e| e.in_stage("predict"))?;
    let fout = forecast(market, s.method, &models, &out_days).map_err(|e| e.in_stage("predict"))?;
    let eval = evaluate(market, (&fin.0, &fin.1), (&fout.0, &fout.1), s)?;
    Ok((models, eval))
}
