//! Pinball and order-penalized least-squares objectives, the minibatch Adam loop
//! with validation early stopping, and panel prediction.

use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{FeaturePanel, FeatureTensor, PricePanel, SplitSpec};
use crate::error::{Error, Result};
use crate::ftgcn::{forward_on_tape, register_params, Dims, GraphContext, ModelTheta};
use crate::hypergraph::Hypergraph;
use crate::math::{AdamState, CustomOp, Tape, Tensor, Var};

/// `rho_tau(x) = x (tau - 1{x < 0})`.
#[inline]
pub fn pinball(x: f64, tau: f64) -> f64 {
    if x < 0.0 {
        x * (tau - 1.0)
    } else {
        x * tau
    }
}

pub fn quantile_loss(r: &[f64], pred: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Usage(format!("quantile level {tau} outside (0, 1)")));
    }
    if r.len() != pred.len() || r.is_empty() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", r.len(), pred.len())));
    }
    Ok(r.iter().zip(pred).map(|(a, b)| pinball(a - b, tau)).sum::<f64>() / r.len() as f64)
}

/// Mean squared error plus `lambda / N^2` times the discordant-pair penalty.
pub fn pls_loss(r: &[f64], pred: &[f64], lambda: f64) -> f64 {
    let n = r.len() as f64;
    let mse = r.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if lambda == 0.0 {
        return mse;
    }
    let mut pen = 0.0;
    for i in 0..r.len() {
        for j in 0..r.len() {
            pen += (-(pred[i] - pred[j]) * (r[i] - r[j])).max(0.0);
        }
    }
    mse + lambda * pen / (n * n)
}

struct QuantileLossOp {
    tau: f64,
    target: Vec<f64>,
}

impl CustomOp for QuantileLossOp {
    fn name(&self) -> &'static str {
        "quantile_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
        let pred = inputs[0];
        let n = self.target.len() as f64;
        let g = adjoint.data()[0];
        let grad = self
            .target
            .iter()
            .zip(pred.data())
            .map(|(r, p)| {
                let ind = if r - p < 0.0 { 1.0 } else { 0.0 };
                -g * (self.tau - ind) / n
            })
            .collect();
        vec![Tensor::from_vec(pred.shape(), grad).expect("finite gradient")]
    }
}

struct PlsLossOp {
    lambda: f64,
    target: Vec<f64>,
}

impl CustomOp for PlsLossOp {
    fn name(&self) -> &'static str {
        "pls_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
        let p = inputs[0].data();
        let r = &self.target;
        let n = r.len() as f64;
        let g = adjoint.data()[0];
        let mut grad: Vec<f64> = r.iter().zip(p).map(|(a, b)| -2.0 * (a - b) / n).collect();
        if self.lambda != 0.0 {
            let c = 2.0 * self.lambda / (n * n);
            for i in 0..r.len() {
                let mut acc = 0.0;
                for j in 0..r.len() {
                    if (p[i] - p[j]) * (r[i] - r[j]) < 0.0 {
                        acc += r[j] - r[i];
                    }
                }
                grad[i] += c * acc;
            }
        }
        grad.iter_mut().for_each(|v| *v *= g);
        vec![Tensor::from_vec(inputs[0].shape(), grad).expect("finite gradient")]
    }
}

/// What a model estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Quantile(f64),
    Mean,
}

impl Target {
    pub fn tag(&self) -> String {
        match self {
            Target::Quantile(tau) => format!("tau_{tau:.6}"),
            Target::Mean => "mean".into(),
        }
    }

    /// Loss on plain vectors.
    pub fn loss(&self, r: &[f64], pred: &[f64], penalty: f64) -> Result<f64> {
        match *self {
            Target::Quantile(tau) => quantile_loss(r, pred, tau),
            Target::Mean => Ok(pls_loss(r, pred, penalty)),
        }
    }

    /// Loss recorded on `tape` with `pred` an `N x 1` node.
    pub fn loss_on_tape(&self, tape: &mut Tape, pred: Var, r: &[f64], penalty: f64) -> Result<Var> {
        let value = self.loss(r, tape.value(pred).data(), penalty)?;
        let op: Box<dyn CustomOp> = match *self {
            Target::Quantile(tau) => Box::new(QuantileLossOp { tau, target: r.to_vec() }),
            Target::Mean => Box::new(PlsLossOp { lambda: penalty, target: r.to_vec() }),
        };
        Ok(tape.custom(&[pred], Tensor::scalar(value), op))
    }

    /// Loss in units of `scale * y` given the loss on standardized `y`.
    fn unscale(&self, loss: f64, scale: f64) -> f64 {
        match self {
            Target::Quantile(_) => loss * scale,
            Target::Mean => loss * scale * scale,
        }
    }
}

/// `tau_k = k / (K + 1)` for `k = 1..K`.
pub fn quantile_levels(k: usize) -> Vec<f64> {
    (1..=k).map(|j| j as f64 / (k + 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub penalty: f64,
    pub lags: usize,
    pub hidden: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            penalty: 0.1,
            lags: 16,
            hidden: 64,
            max_epochs: 200,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.penalty >= 0.0) {
            return Err(Error::Config(format!("penalty {} must be >= 0", self.penalty)));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.lags == 0 || self.hidden == 0 {
            return Err(Error::Config("patience, max_epochs, lags and hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Best-so-far tracker for validation early stopping.
#[derive(Debug, Clone)]
pub struct EarlyStopState<T> {
    pub patience: usize,
    pub best_error: f64,
    pub best_epoch: usize,
    pub best: Option<T>,
    pub since_improvement: usize,
}

impl<T: Clone> EarlyStopState<T> {
    pub fn new(patience: usize) -> Self {
        EarlyStopState {
            patience,
            best_error: f64::INFINITY,
            best_epoch: 0,
            best: None,
            since_improvement: 0,
        }
    }

    /// Records an epoch; returns true when training should stop.
    pub fn update(&mut self, epoch: usize, error: f64, snapshot: &T) -> bool {
        if error < self.best_error {
            self.best_error = error;
            self.best_epoch = epoch;
            self.best = Some(snapshot.clone());
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.since_improvement >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub target: Target,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn best_valid(&self) -> f64 {
        self.epochs.iter().map(|e| e.valid_loss).fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,valid_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:e},{:e}", e.epoch, e.train_loss, e.valid_loss);
        }
        s
    }
}

/// Precomputed inputs and targets for a set of days.
#[derive(Debug, Clone)]
pub struct Samples {
    pub days: Vec<usize>,
    pub inputs: Vec<FeatureTensor>,
    pub targets: Vec<Vec<f64>>,
}

impl Samples {
    pub fn build(features: &FeaturePanel, returns: &PricePanel, days: Range<usize>, lags: usize) -> Result<Self> {
        let days: Vec<usize> = days.collect();
        let inputs = days.iter().map(|&t| features.slice(t, lags)).collect::<Result<_>>()?;
        let targets = days.iter().map(|&t| returns.day(t)).collect();
        Ok(Samples { days, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// Everything a model fit needs, shared read-only across jobs.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub dims: Dims,
    pub graph: GraphContext,
    pub train: Samples,
    pub valid: Samples,
}

impl TrainData {
    pub fn new(
        features: &FeaturePanel,
        returns: &PricePanel,
        graph: &Hypergraph,
        split: &SplitSpec,
        lags: usize,
        hidden: usize,
    ) -> Result<Self> {
        split.validate(returns.n_days())?;
        if graph.n_stocks != features.n_stocks || graph.n_factors != features.n_factors {
            return Err(Error::Shape(format!(
                "graph has {}+{} vertices, features {}+{} entities",
                graph.n_stocks, graph.n_factors, features.n_stocks, features.n_factors
            )));
        }
        let first = features.first_target(lags);
        if first >= split.train_end {
            return Err(Error::InsufficientHistory(format!(
                "first usable target day {first} is not before the training end {}",
                split.train_end
            )));
        }
        let dims = Dims {
            n_stocks: features.n_stocks,
            n_factors: features.n_factors,
            n_relations: graph.n_relations(),
            n_features: features.n_features(),
            lags,
            hidden,
        };
        Ok(TrainData {
            dims,
            graph: GraphContext::new(graph),
            train: Samples::build(features, returns, first..split.train_end, lags)?,
            valid: Samples::build(features, returns, split.train_end..split.valid_end, lags)?,
        })
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean and standard deviation of all training targets.
fn target_scale(s: &Samples) -> (f64, f64) {
    let all: Vec<f64> = s.targets.iter().flatten().cloned().collect();
    let n = all.len() as f64;
    let m = all.iter().sum::<f64>() / n;
    let v = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, if v > 0.0 { v.sqrt() } else { 1.0 })
}

fn standardized(r: &[f64], m: f64, s: f64) -> Vec<f64> {
    r.iter().map(|x| (x - m) / s).collect()
}

fn mean_loss(theta: &ModelTheta, data: &TrainData, s: &Samples, target: Target, penalty: f64, m: f64, sd: f64) -> Result<f64> {
    let mut total = 0.0;
    for (x, r) in s.inputs.iter().zip(&s.targets) {
        let mut tape = Tape::new();
        let p = register_params(&mut tape, theta)?;
        let fv = forward_on_tape(&mut tape, &p, &theta.dims, &data.graph, x)?;
        total += target.loss(&standardized(r, m, sd), tape.value(fv.output).data(), penalty)?;
    }
    Ok(total / s.len() as f64)
}

/// Fits one model with cross-sectional minibatches (one day per step), one shuffled
/// pass over the training days per epoch, and validation early stopping.
///
/// Targets are standardized by the training mean and standard deviation; the
/// returned parameters predict in the original units.
pub fn train(target: Target, data: &TrainData, cfg: &TrainConfig) -> Result<(ModelTheta, TrainLog)> {
    cfg.validate()?;
    if let Target::Quantile(tau) = target {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Usage(format!("quantile level {tau} outside (0, 1)")));
        }
    }
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::InsufficientSample("empty training or validation span".into()));
    }
    let dims = Dims { lags: cfg.lags, hidden: cfg.hidden, ..data.dims };
    if dims != data.dims {
        return Err(Error::Shape(format!("config dims {dims:?} differ from data dims {:?}", data.dims)));
    }
    let (m, sd) = target_scale(&data.train);
    let ys: Vec<Vec<f64>> = data.train.targets.iter().map(|r| standardized(r, m, sd)).collect();

    let mut theta = ModelTheta::init(dims, derive_seed(cfg.seed, 0));
    let mut adam: Vec<AdamState> = theta.params.iter().map(|p| AdamState::new(p.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stop = EarlyStopState::new(cfg.patience);
    let mut log = TrainLog { target, epochs: Vec::new(), best_epoch: 0, stopped_early: false };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for &k in &order {
            let mut tape = Tape::new();
            let p = register_params(&mut tape, &theta)?;
            let fv = forward_on_tape(&mut tape, &p, &dims, &data.graph, &data.train.inputs[k])?;
            let loss = target.loss_on_tape(&mut tape, fv.output, &ys[k], cfg.penalty)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Diverged(format!(
                    "{} loss is {lv} at epoch {epoch}; lower the learning rate (currently {})",
                    target.tag(),
                    cfg.learning_rate
                )));
            }
            train_total += lv;
            let grads = tape.backward(loss)?;
            for (id, state) in adam.iter_mut().enumerate() {
                let g = grads.param(id).expect("registered parameter");
                let delta = state.step(g, cfg.learning_rate).map_err(|e| {
                    Error::Diverged(format!("{e} at epoch {epoch}; lower the learning rate"))
                })?;
                for (w, dw) in theta.params[id].data_mut().iter_mut().zip(delta.data()) {
                    *w += dw;
                }
            }
        }
        let valid = mean_loss(&theta, data, &data.valid, target, cfg.penalty, m, sd)?;
        if !valid.is_finite() {
            return Err(Error::Diverged(format!("validation loss {valid} at epoch {epoch}")));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: target.unscale(train_total / order.len() as f64, sd),
            valid_loss: target.unscale(valid, sd),
        });
        if stop.update(epoch, valid, &theta) {
            log.stopped_early = true;
            break;
        }
    }
    let mut best = stop.best.expect("at least one epoch");
    log.best_epoch = stop.best_epoch;
    best.rescale_output(sd, m);
    Ok((best, log))
}

/// Fits the `K` quantile models and the mean model, `jobs` at a time.
pub fn train_all(
    levels: &[f64],
    data: &TrainData,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<(ModelTheta, TrainLog)>> {
    let mut targets: Vec<Target> = levels.iter().map(|&t| Target::Quantile(t)).collect();
    targets.push(Target::Mean);
    let run = |(k, t): (usize, &Target)| {
        let c = TrainConfig { seed: derive_seed(cfg.seed, 100 + k as u64), ..cfg.clone() };
        train(*t, data, &c).map_err(|e| e.in_stage(&format!("train {}", t.tag())))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Pipeline(e.to_string()))?;
    pool.install(|| targets.par_iter().enumerate().map(run).collect())
}

/// Quantile forecasts over `N` stocks, a set of days and `K` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePanel {
    pub levels: Vec<f64>,
    pub days: Vec<usize>,
    pub n_stocks: usize,
    /// Index `(i * days + d) * K + k`.
    pub values: Vec<f64>,
}

impl QuantilePanel {
    pub fn new(levels: Vec<f64>, days: Vec<usize>, n_stocks: usize) -> Self {
        let len = levels.len() * days.len() * n_stocks;
        QuantilePanel { levels, days, n_stocks, values: vec![0.0; len] }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    #[inline]
    pub fn get(&self, i: usize, d: usize, k: usize) -> f64 {
        self.values[(i * self.days.len() + d) * self.levels.len() + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, d: usize, k: usize, v: f64) {
        let idx = (i * self.days.len() + d) * self.levels.len() + k;
        self.values[idx] = v;
    }

    /// The `K` quantiles of stock `i` on day slot `d`.
    pub fn cell(&self, i: usize, d: usize) -> &[f64] {
        let k = self.levels.len();
        let start = (i * self.days.len() + d) * k;
        &self.values[start..start + k]
    }

    /// Position of day index `t` in `days`.
    pub fn day_slot(&self, t: usize) -> Option<usize> {
        self.days.binary_search(&t).ok()
    }

    /// Restriction to the day slots in `range`.
    pub fn subset(&self, range: Range<usize>) -> QuantilePanel {
        let days = self.days[range.clone()].to_vec();
        let mut out = QuantilePanel::new(self.levels.clone(), days, self.n_stocks);
        for i in 0..self.n_stocks {
            for (d_new, d) in range.clone().enumerate() {
                for k in 0..self.levels.len() {
                    out.set(i, d_new, k, self.get(i, d, k));
                }
            }
        }
        out
    }
}

/// Stock-by-day series such as the mean forecast. Index `i * days + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub days: Vec<usize>,
    pub n_stocks: usize,
    pub values: Vec<f64>,
}

impl SeriesPanel {
    #[inline]
    pub fn get(&self, i: usize, d: usize) -> f64 {
        self.values[i * self.days.len() + d]
    }
}

/// Forecasts of every quantile model (in level order) and the mean model on `days`.
pub fn predict_panel(
    quantile_models: &[(f64, ModelTheta)],
    mean_model: &ModelTheta,
    features: &FeaturePanel,
    graph: &GraphContext,
    days: &[usize],
) -> Result<(QuantilePanel, SeriesPanel)> {
    let lags = mean_model.dims.lags;
    let n = mean_model.dims.n_stocks;
    let levels: Vec<f64> = quantile_models.iter().map(|(t, _)| *t).collect();
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("quantile models must be sorted by level".into()));
    }
    let mut qp = QuantilePanel::new(levels, days.to_vec(), n);
    let mut mu = vec![0.0; n * days.len()];
    for (d, &t) in days.iter().enumerate() {
        let x = features.slice(t, lags)?;
        for (k, (_, theta)) in quantile_models.iter().enumerate() {
            let out = crate::ftgcn::model_forward(&x, graph, theta)?;
            for i in 0..n {
                qp.set(i, d, k, out[i]);
            }
        }
        let out = crate::ftgcn::model_forward(&x, graph, mean_model)?;
        for i in 0..n {
            mu[i * days.len() + d] = out[i];
        }
    }
    Ok((qp, SeriesPanel { days: days.to_vec(), n_stocks: n, values: mu }))
}

/// Checks that a model exists for every requested level.
pub fn require_levels(requested: &[f64], available: &[f64]) -> Result<()> {
    let missing: Vec<String> = requested
        .iter()
        .filter(|t| !available.iter().any(|a| (*a - **t).abs() < 1e-12))
        .map(|t| format!("{t:.6}"))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Pipeline(format!("no trained model for levels {}", missing.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_loss_values() {
        assert_eq!(quantile_loss(&[2.0, -2.0], &[0.0, 0.0], 0.5).unwrap(), 1.0);
        assert!((pinball(1.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((pinball(-1.0, 0.9) - 0.1).abs() < 1e-15);
        assert_eq!(quantile_loss(&[0.3, 0.1], &[0.3, 0.1], 0.2).unwrap(), 0.0);
        assert!(quantile_loss(&[1.0], &[0.0], 1.0).is_err());
        assert!(quantile_loss(&[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn pls_loss_values() {
        assert!((pls_loss(&[1.0, 0.0], &[0.0, 1.0], 1.0) - 1.5).abs() < 1e-15);
        assert_eq!(pls_loss(&[1.0, 2.0, 3.0], &[0.5, 2.5, 9.0], 3.0), pls_loss(&[1.0, 2.0, 3.0], &[0.5, 2.5, 9.0], 0.0));
        let (r, p) = ([0.1, -0.3, 0.2], [0.0, 0.4, -0.2]);
        let mse = r.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
        assert!((pls_loss(&r, &p, 0.0) - mse).abs() < 1e-12);
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let (mut a, mut b) = (x.to_vec(), x.to_vec());
                a[k] += 1e-6;
                b[k] -= 1e-6;
                (f(&a) - f(&b)) / 2e-6
            })
            .collect()
    }

    #[test]
    fn loss_ops_match_finite_differences() {
        let r = [0.3, -0.2, 0.5, 0.05, -0.4];
        let p = [0.1, 0.25, -0.3, 0.4, -0.35];
        for target in [Target::Quantile(0.1), Target::Quantile(0.7), Target::Mean] {
            let mut tape = Tape::new();
            let v = tape.param(0, Tensor::from_vec(&[5, 1], p.to_vec()).unwrap()).unwrap();
            let l = target.loss_on_tape(&mut tape, v, &r, 0.8).unwrap();
            let g = tape.backward(l).unwrap();
            let fd = fd_grad(|x| target.loss(&r, x, 0.8).unwrap(), &p);
            for (a, b) in g.param(0).unwrap().data().iter().zip(&fd) {
                assert!((a - b).abs() < 1e-7, "{target:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn subgradient_at_kink_is_tau() {
        let mut tape = Tape::new();
        let v = tape.param(0, Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
        let l = Target::Quantile(0.3).loss_on_tape(&mut tape, v, &[1.0, 2.0], 0.0).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.param(0).unwrap().data().iter().all(|&x| (x + 0.3 / 2.0).abs() < 1e-15));
    }

    #[test]
    fn early_stop_contract() {
        let mut s = EarlyStopState::new(1);
        assert!(!s.update(1, 0.5, &"epoch1"));
        assert!(s.update(2, 0.6, &"epoch2"));
        assert_eq!((s.best_epoch, s.best), (1, Some("epoch1")));
        let mut s = EarlyStopState::new(3);
        let errs = [0.9, 0.8, 0.85, 0.7, 0.75, 0.76, 0.77];
        let mut stopped = 0;
        for (k, e) in errs.iter().enumerate() {
            if s.update(k + 1, *e, &(k + 1)) {
                stopped = k + 1;
                break;
            }
        }
        assert_eq!((stopped, s.best_epoch, s.best), (7, 4, Some(4)));
    }

    #[test]
    fn levels_and_requirements() {
        assert_eq!(quantile_levels(3), vec![0.25, 0.5, 0.75]);
        assert!(require_levels(&[0.25, 0.5], &[0.25, 0.5, 0.75]).is_ok());
        let e = require_levels(&[0.25, 0.4], &[0.25, 0.5]).unwrap_err().to_string();
        assert!(e.contains("0.400000"));
    }
}
