//! Coverage tests for quantile forecasts, valid level sets and moment t-tests.

use crate::data::PricePanel;
use crate::error::{Error, Result};
use crate::math::special::{chi2_sf, student_t_two_sided};
use crate::qcm::MomentPanel;
use crate::training::QuantilePanel;

pub const MIN_TEST_LENGTH: usize = 30;
pub const DEFAULT_K0: usize = 30;

/// `n * ln(p)` with `0 * ln(0) = 0`.
fn xlny(n: f64, p: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n * p.ln()
    }
}

/// Violation indicators `1{r_t < Q_t(tau)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationSeries {
    pub tau: f64,
    pub hits: Vec<bool>,
}

impl ViolationSeries {
    pub fn from_forecasts(returns: &[f64], quantiles: &[f64], tau: f64) -> Self {
        ViolationSeries {
            tau,
            hits: returns.iter().zip(quantiles).map(|(r, q)| r < q).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.hits.iter().filter(|&&h| h).count()
    }

    fn check(&self) -> Result<()> {
        if self.hits.len() < MIN_TEST_LENGTH {
            return Err(Error::InsufficientSample(format!(
                "{} observations; coverage tests need at least {MIN_TEST_LENGTH}",
                self.hits.len()
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Usage(format!("level {} outside (0, 1)", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageTestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl CoverageTestResult {
    fn new(statistic: f64, dof: usize) -> Self {
        let statistic = statistic.max(0.0);
        CoverageTestResult { statistic, dof, p_value: chi2_sf(statistic, dof as f64) }
    }

    /// Accepts correct coverage when `p >= alpha`.
    pub fn accepts(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Kupiec unconditional coverage likelihood ratio.
pub fn lr_uc(v: &ViolationSeries) -> Result<CoverageTestResult> {
    v.check()?;
    let t = v.hits.len() as f64;
    let n = v.count() as f64;
    let p_hat = n / t;
    let null = xlny(t - n, 1.0 - v.tau) + xlny(n, v.tau);
    let alt = xlny(t - n, 1.0 - p_hat) + xlny(n, p_hat);
    Ok(CoverageTestResult::new(-2.0 * (null - alt), 1))
}

/// First-order Markov independence likelihood ratio.
pub fn lr_ind(v: &ViolationSeries) -> Result<f64> {
    v.check()?;
    let mut c = [[0.0f64; 2]; 2];
    for w in v.hits.windows(2) {
        c[w[0] as usize][w[1] as usize] += 1.0;
    }
    let (n00, n01, n10, n11) = (c[0][0], c[0][1], c[1][0], c[1][1]);
    let ratio = |a: f64, b: f64| if a + b > 0.0 { b / (a + b) } else { 0.0 };
    let (p01, p11) = (ratio(n00, n01), ratio(n10, n11));
    let p = ratio(n00 + n10, n01 + n11);
    let unrestricted = xlny(n00, 1.0 - p01) + xlny(n01, p01) + xlny(n10, 1.0 - p11) + xlny(n11, p11);
    let restricted = xlny(n00 + n10, 1.0 - p) + xlny(n01 + n11, p);
    Ok(-2.0 * (restricted - unrestricted))
}

/// Christoffersen conditional coverage: `LR_uc + LR_ind` against chi-square(2).
pub fn lr_cc(v: &ViolationSeries) -> Result<CoverageTestResult> {
    let uc = lr_uc(v)?;
    let ind = lr_ind(v)?;
    Ok(CoverageTestResult::new(uc.statistic + ind, 2))
}

/// Per stock, the indices of the levels passing both coverage tests.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSet {
    pub alpha: f64,
    pub n_levels: usize,
    pub sets: Vec<Vec<usize>>,
}

impl OmegaSet {
    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }
}

/// Runs both tests for every (stock, level) over the panel's days.
pub fn build_omega(quantiles: &QuantilePanel, returns: &PricePanel, alpha: f64) -> Result<OmegaSet> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha {alpha} outside [0, 1)")));
    }
    let nd = quantiles.n_days();
    let mut sets = Vec::with_capacity(quantiles.n_stocks);
    for i in 0..quantiles.n_stocks {
        let r: Vec<f64> = quantiles.days.iter().map(|&t| returns.ret(i, t)).collect();
        let mut set = Vec::new();
        for (k, &tau) in quantiles.levels.iter().enumerate() {
            let q: Vec<f64> = (0..nd).map(|d| quantiles.get(i, d, k)).collect();
            let v = ViolationSeries::from_forecasts(&r, &q, tau);
            if lr_uc(&v)?.accepts(alpha) && lr_cc(&v)?.accepts(alpha) {
                set.push(k);
            }
        }
        sets.push(set);
    }
    Ok(OmegaSet { alpha, n_levels: quantiles.n_levels(), sets })
}

/// Stocks with at least `k0` valid levels.
pub fn filter_stocks(omega: &OmegaSet, k0: usize) -> Result<Vec<usize>> {
    if k0 < 4 {
        return Err(Error::Usage(format!("K0 = {k0}; must be at least 4")));
    }
    let keep: Vec<usize> = (0..omega.sets.len()).filter(|&i| omega.sets[i].len() >= k0).collect();
    if keep.is_empty() {
        let report: Vec<String> = omega.sizes().iter().enumerate().map(|(i, s)| format!("{i}:{s}")).collect();
        return Err(Error::Pipeline(format!(
            "no stock has |omega| >= {k0} (sizes {})",
            report.join(" ")
        )));
    }
    Ok(keep)
}

/// One-sample t-test of zero mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    /// `None` when the residuals have zero variance but nonzero mean.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl TTest {
    pub fn accepts(&self, alpha: f64) -> bool {
        matches!(self.p_value, Some(p) if p >= alpha)
    }
}

pub fn t_test(residuals: &[f64]) -> Result<TTest> {
    let n = residuals.len();
    if n < MIN_TEST_LENGTH {
        return Err(Error::InsufficientSample(format!("{n} residuals; t-tests need {MIN_TEST_LENGTH}")));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let var = residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
    let (statistic, p_value) = if var > 0.0 {
        let t = mean / (var.sqrt() / (n as f64).sqrt());
        (Some(t), Some(student_t_two_sided(t, (n - 1) as f64)))
    } else if mean == 0.0 {
        (Some(0.0), Some(1.0))
    } else {
        (None, None)
    };
    Ok(TTest { n, mean, statistic, p_value })
}

pub const MOMENT_NAMES: [&str; 4] = ["mu", "h", "s", "k"];

/// Residuals `e^mu, e^h, e^s, e^k` for one stock over the panel's day slots.
pub fn moment_residuals(returns: &PricePanel, moments: &MomentPanel, i: usize) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for (d, &t) in moments.days.iter().enumerate() {
        if !moments.valid(i, d) {
            continue;
        }
        let (mu, h, s, k) = moments.row(i, d);
        if !(h > 0.0) {
            continue;
        }
        let e = returns.ret(i, t) - mu;
        let z = e / h.sqrt();
        out[0].push(e);
        out[1].push(e * e - h);
        out[2].push(z.powi(3) - s);
        out[3].push(z.powi(4) - k);
    }
    out
}

/// Per-stock t-tests of the four moment residuals.
pub fn moment_ttests(returns: &PricePanel, moments: &MomentPanel, stocks: &[usize]) -> Result<Vec<(usize, [TTest; 4])>> {
    stocks
        .iter()
        .map(|&i| {
            let res = moment_residuals(returns, moments, i);
            Ok((i, [t_test(&res[0])?, t_test(&res[1])?, t_test(&res[2])?, t_test(&res[3])?]))
        })
        .collect()
}

/// Percentage of stocks accepting each moment at `alpha`.
pub fn acceptance_rates(tests: &[(usize, [TTest; 4])], alpha: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    if tests.is_empty() {
        return out;
    }
    for (m, o) in out.iter_mut().enumerate() {
        *o = 100.0 * tests.iter().filter(|t| t.1[m].accepts(alpha)).count() as f64 / tests.len() as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(tau: f64, n: usize, hits_at: &[usize]) -> ViolationSeries {
        let mut hits = vec![false; n];
        for &k in hits_at {
            hits[k] = true;
        }
        ViolationSeries { tau, hits }
    }

    #[test]
    fn exact_coverage_gives_zero() {
        let v = series(0.1, 100, &(0..10).map(|k| k * 10).collect::<Vec<_>>());
        let r = lr_uc(&v).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!(r.accepts(0.99));
    }

    #[test]
    fn pinned_kupiec_value() {
        // tau = 0.05, T = 250, n = 10: -2 [240 ln .95 + 10 ln .05 - 240 ln .96 - 10 ln .04]
        let v = series(0.05, 250, &(0..10).map(|k| k * 25).collect::<Vec<_>>());
        let r = lr_uc(&v).unwrap();
        assert!((r.statistic - 0.563_352_910_017_6).abs() < 1e-10, "{}", r.statistic);
        assert!(r.statistic > 0.0 && r.statistic < 3.841);
    }

    #[test]
    fn no_hits_at_median_rejects() {
        let v = series(0.5, 100, &[]);
        let r = lr_uc(&v).unwrap();
        assert!(r.statistic > 100.0 && !r.accepts(0.01));
        assert!(r.p_value >= 0.0);
    }

    #[test]
    fn clustered_violations_reject_cc() {
        let v = series(0.5, 100, &(0..50).collect::<Vec<_>>());
        assert!(lr_uc(&v).unwrap().statistic.abs() < 1e-12);
        assert!(lr_ind(&v).unwrap() > 50.0);
        assert!(!lr_cc(&v).unwrap().accepts(0.01));
    }

    #[test]
    fn lr_ind_nonnegative_and_short_series_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let hits: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.3)).collect();
            assert!(lr_ind(&ViolationSeries { tau: 0.3, hits }).unwrap() >= -1e-9);
        }
        assert!(matches!(lr_uc(&series(0.1, 29, &[])), Err(Error::InsufficientSample(_))));
    }

    #[test]
    fn filter_boundary() {
        let om = OmegaSet { alpha: 0.01, n_levels: 40, sets: vec![(0..30).collect(), (0..29).collect()] };
        assert_eq!(filter_stocks(&om, 30).unwrap(), vec![0]);
        let none = OmegaSet { sets: vec![(0..29).collect()], ..om.clone() };
        assert!(filter_stocks(&none, 30).unwrap_err().to_string().contains("0:29"));
        assert!(filter_stocks(&om, 3).is_err());
    }

    #[test]
    fn t_test_cases() {
        let z = t_test(&[0.0; 40]).unwrap();
        assert_eq!(z.statistic, Some(0.0));
        assert!(z.accepts(0.1));
        assert_eq!(t_test(&[1.0; 40]).unwrap().statistic, None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e: Vec<f64> = (0..500).map(|_| 0.5 + rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        assert!(!t_test(&e).unwrap().accepts(0.05));
    }
}
