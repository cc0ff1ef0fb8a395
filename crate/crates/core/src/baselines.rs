//! Linear factor-augmented network autoregression fitted with the same losses.

use std::ops::Range;

use rayon::prelude::*;

use crate::data::{FactorPanel, FeaturePanel, PricePanel};
use crate::error::{Error, Result};
use crate::hypergraph::CollapsedAdjacency;
use crate::math::{AdamState, Tensor};
use crate::training::{QuantilePanel, SeriesPanel, Target};

/// `pred_i = alpha + gamma * sum_j w_ij r_j + zeta' x_i + varsigma' F`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: Vec<f64>,
    pub varsigma: Vec<f64>,
}

pub type LinearQuantileParams = LinearParams;
pub type LinearMeanParams = LinearParams;

impl LinearParams {
    pub fn zeros(n_features: usize, n_factors: usize) -> Self {
        LinearParams { alpha: 0.0, gamma: 0.0, zeta: vec![0.0; n_features], varsigma: vec![0.0; n_factors] }
    }

    /// Coefficients in regressor order `[1, network, x.., F..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.alpha, self.gamma];
        v.extend(&self.zeta);
        v.extend(&self.varsigma);
        v
    }

    pub fn from_vec(v: &[f64], n_features: usize, n_factors: usize) -> Result<Self> {
        if v.len() != 2 + n_features + n_factors {
            return Err(Error::Shape(format!("{} coefficients for {n_features} features, {n_factors} factors", v.len())));
        }
        Ok(LinearParams {
            alpha: v[0],
            gamma: v[1],
            zeta: v[2..2 + n_features].to_vec(),
            varsigma: v[2 + n_features..].to_vec(),
        })
    }
}

/// Predictions for all stocks given lag returns, an `N x P` feature block and lag factors.
pub fn linear_forward(
    params: &LinearParams,
    w: &CollapsedAdjacency,
    lag_returns: &[f64],
    features: &Tensor,
    factors: &[f64],
) -> Result<Vec<f64>> {
    let n = w.n;
    let (rows, cols) = features.dims2()?;
    if lag_returns.len() != n || rows < n || cols != params.zeta.len() || factors.len() != params.varsigma.len() {
        return Err(Error::Shape(format!(
            "linear model with {} features, {} factors got {} returns, {rows}x{cols} features, {} factors for {n} stocks",
            params.zeta.len(),
            params.varsigma.len(),
            lag_returns.len(),
            factors.len()
        )));
    }
    let net = w.apply(lag_returns);
    let common = params.alpha + params.varsigma.iter().zip(factors).map(|(a, b)| a * b).sum::<f64>();
    Ok((0..n)
        .map(|i| {
            let x = features.row(i);
            common + params.gamma * net[i] + params.zeta.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

/// Stacked lag-1 regressors for every `(day, stock)` in a span.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    pub n_features: usize,
    pub n_factors: usize,
    pub days: Vec<usize>,
    /// One row per `(day, stock)` without the intercept.
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl LinearDesign {
    pub fn build(
        features: &FeaturePanel,
        returns: &PricePanel,
        factors: &FactorPanel,
        w: &CollapsedAdjacency,
        days: Range<usize>,
    ) -> Result<Self> {
        let n = returns.n_stocks();
        if features.n_stocks != n || w.n != n || factors.dates.len() != returns.n_days() {
            return Err(Error::Shape("features, returns, factors and adjacency disagree".into()));
        }
        if days.start <= features.first_day {
            return Err(Error::InsufficientHistory(format!(
                "linear design starts at day {}; first usable day is {}",
                days.start,
                features.first_day + 1
            )));
        }
        let b = factors.n_factors();
        let mut rows = Vec::with_capacity(days.len() * n);
        let mut targets = Vec::with_capacity(days.len() * n);
        for t in days.clone() {
            let lag = returns.day(t - 1);
            let net = w.apply(&lag);
            let x = features.day(t - 1);
            let f: Vec<f64> = (0..b).map(|k| factors.value(k, t - 1)).collect();
            for i in 0..n {
                let mut row = Vec::with_capacity(1 + x.cols() + b);
                row.push(net[i]);
                row.extend(x.row(i));
                row.extend(&f);
                rows.push(row);
                targets.push(returns.ret(i, t));
            }
        }
        Ok(LinearDesign { n_features: features.n_features(), n_factors: b, days: days.collect(), rows, targets })
    }

    fn n_regressors(&self) -> usize {
        1 + self.n_features + self.n_factors
    }

    /// Name of regressor column `c` (excluding the intercept).
    pub fn column_name(&self, c: usize) -> String {
        match c {
            0 => "network".into(),
            c if c <= self.n_features => format!("feature{}", c - 1),
            c => format!("factor{}", c - 1 - self.n_features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_tol: f64,
}

impl Default for LinearFitConfig {
    fn default() -> Self {
        LinearFitConfig { learning_rate: 1e-2, epochs: 500, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub params: LinearParams,
    pub epochs_run: usize,
    pub converged: bool,
    pub final_loss: f64,
    /// Zero-variance regressors whose coefficients were held at zero.
    pub unidentified: Vec<String>,
}

/// Full-batch Adam on standardized regressors and targets.
pub fn fit_linear(target: Target, design: &LinearDesign, cfg: &LinearFitConfig) -> Result<LinearFit> {
    let n_obs = design.targets.len();
    if n_obs == 0 {
        return Err(Error::InsufficientSample("empty linear design".into()));
    }
    let p = design.n_regressors();
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for c in 0..p {
        mean[c] = design.rows.iter().map(|r| r[c]).sum::<f64>() / n_obs as f64;
        sd[c] = (design.rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n_obs as f64).sqrt();
    }
    let mut unidentified = Vec::new();
    for c in 0..p {
        if !(sd[c] > 1e-12 * mean[c].abs().max(1e-12)) {
            let name = design.column_name(c);
            log::warn!("{}: regressor {name} has zero variance; coefficient fixed at 0", target.tag());
            unidentified.push(name);
            sd[c] = 0.0;
        }
    }
    let my = design.targets.iter().sum::<f64>() / n_obs as f64;
    let sy = {
        let v = design.targets.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n_obs as f64;
        if v > 0.0 { v.sqrt() } else { 1.0 }
    };
    let z: Vec<Vec<f64>> = design
        .rows
        .iter()
        .map(|r| (0..p).map(|c| if sd[c] > 0.0 { (r[c] - mean[c]) / sd[c] } else { 0.0 }).collect())
        .collect();
    let y: Vec<f64> = design.targets.iter().map(|v| (v - my) / sy).collect();

    let mut coef = vec![0.0; p + 1];
    let mut adam = AdamState::new(&[p + 1]);
    let mut pred = vec![0.0; n_obs];
    let mut converged = false;
    let mut epochs_run = 0;
    let mut loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        for (o, row) in z.iter().enumerate() {
            pred[o] = coef[0] + row.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>();
        }
        loss = target.loss(&y, &pred, 0.0)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("{} linear fit: loss {loss} at epoch {epoch}", target.tag())));
        }
        let mut grad = vec![0.0; p + 1];
        for (o, row) in z.iter().enumerate() {
            let g = match target {
                Target::Quantile(tau) => (if y[o] < pred[o] { 1.0 } else { 0.0 }) - tau,
                Target::Mean => 2.0 * (pred[o] - y[o]),
            } / n_obs as f64;
            grad[0] += g;
            for c in 0..p {
                grad[c + 1] += g * row[c];
            }
        }
        epochs_run = epoch + 1;
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < cfg.grad_tol {
            converged = true;
            break;
        }
        let delta = adam.step(&Tensor::from_vec(&[p + 1], grad)?, cfg.learning_rate)?;
        for (c, d) in coef.iter_mut().zip(delta.data()) {
            *c += d;
        }
    }

    let mut raw = vec![0.0; p + 1];
    raw[0] = my + sy * coef[0];
    for c in 0..p {
        if sd[c] > 0.0 {
            raw[c + 1] = sy * coef[c + 1] / sd[c];
            raw[0] -= raw[c + 1] * mean[c];
        }
    }
    Ok(LinearFit {
        params: LinearParams::from_vec(&raw, design.n_features, design.n_factors)?,
        epochs_run,
        converged,
        final_loss: loss,
        unidentified,
    })
}

/// The linear baseline: one fit per quantile level plus the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelSet {
    pub quantiles: Vec<(f64, LinearParams)>,
    pub mean: LinearParams,
}

pub fn fit_linear_all(levels: &[f64], design: &LinearDesign, cfg: &LinearFitConfig) -> Result<(LinearModelSet, Vec<LinearFit>)> {
    let mut targets: Vec<Target> = levels.iter().map(|&t| Target::Quantile(t)).collect();
    targets.push(Target::Mean);
    let fits: Vec<LinearFit> = targets
        .par_iter()
        .map(|&t| fit_linear(t, design, cfg).map_err(|e| e.in_stage(&format!("baseline {}", t.tag()))))
        .collect::<Result<_>>()?;
    let mean = fits.last().expect("mean fit").params.clone();
    let quantiles = levels.iter().zip(&fits).map(|(&t, f)| (t, f.params.clone())).collect();
    Ok((LinearModelSet { quantiles, mean }, fits))
}

/// Forecast panels with the same layout as the network path.
pub fn predict_linear_panel(
    models: &LinearModelSet,
    features: &FeaturePanel,
    returns: &PricePanel,
    factors: &FactorPanel,
    w: &CollapsedAdjacency,
    days: &[usize],
) -> Result<(QuantilePanel, SeriesPanel)> {
    let n = returns.n_stocks();
    let levels: Vec<f64> = models.quantiles.iter().map(|q| q.0).collect();
    let mut qp = QuantilePanel::new(levels, days.to_vec(), n);
    let mut mu = vec![0.0; n * days.len()];
    for (d, &t) in days.iter().enumerate() {
        if t == 0 || t > returns.n_days() {
            return Err(Error::Shape(format!("cannot forecast day {t}")));
        }
        let lag = returns.day(t - 1);
        let f: Vec<f64> = (0..factors.n_factors()).map(|k| factors.value(k, t - 1)).collect();
        let x = features.day(t - 1);
        for (k, (_, p)) in models.quantiles.iter().enumerate() {
            for (i, v) in linear_forward(p, w, &lag, x, &f)?.into_iter().enumerate() {
                qp.set(i, d, k, v);
            }
        }
        for (i, v) in linear_forward(&models.mean, w, &lag, x, &f)?.into_iter().enumerate() {
            mu[i * days.len() + d] = v;
        }
    }
    Ok((qp, SeriesPanel { days: days.to_vec(), n_stocks: n, values: mu }))
}
