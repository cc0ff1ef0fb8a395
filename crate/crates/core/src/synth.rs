//! Synthetic factor + GARCH(1,1) markets with known conditional moments.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{FactorPanel, PricePanel};
use crate::error::{Error, Result};
use crate::io::{write_with_header, Provenance};
use crate::math::special::{normal_cdf, normal_quantile};

pub const FACTOR_NAMES: [&str; 5] = ["mkt_rf", "smb", "hml", "rmw", "cma"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Garch {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
}

impl Garch {
    /// Parameters with unconditional variance `var` and persistence `a + b`.
    pub fn with_variance(var: f64, a: f64, b: f64) -> Self {
        Garch { omega: var * (1.0 - a - b), a, b }
    }

    pub fn next(&self, h: f64, eps: f64) -> f64 {
        self.omega + self.a * eps * eps + self.b * h
    }

    pub fn unconditional(&self) -> f64 {
        self.omega / (1.0 - self.a - self.b)
    }

    fn check(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.a >= 0.0 && self.b >= 0.0 && self.a + self.b < 1.0) {
            return Err(Error::Spec(format!(
                "GARCH needs omega > 0, a, b >= 0, a + b < 1 (got {}, {}, {})",
                self.omega, self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Innovation law; mixtures are standardized to zero mean and unit variance on use.
#[derive(Debug, Clone, PartialEq)]
pub enum Innovation {
    Normal,
    Mixture { weights: Vec<f64>, means: Vec<f64>, scales: Vec<f64> },
}

impl Innovation {
    /// Weights (0.9, 0.1) at means (-delta, 9 delta), unit scales.
    pub fn skewed(delta: f64) -> Self {
        Innovation::Mixture { weights: vec![0.9, 0.1], means: vec![-delta, 9.0 * delta], scales: vec![1.0, 1.0] }
    }

    /// Standardized components `(weight, mean, sd)`.
    pub fn components(&self) -> Result<Vec<(f64, f64, f64)>> {
        match self {
            Innovation::Normal => Ok(vec![(1.0, 0.0, 1.0)]),
            Innovation::Mixture { weights, means, scales } => {
                check_mixture(weights, means, scales)?;
                let m: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
                let var: f64 = weights.iter().zip(means).zip(scales).map(|((w, mu), s)| w * ((mu - m).powi(2) + s * s)).sum();
                let sd = var.sqrt();
                Ok(weights.iter().zip(means).zip(scales).map(|((w, mu), s)| (*w, (mu - m) / sd, s / sd)).collect())
            }
        }
    }
}

fn check_mixture(weights: &[f64], means: &[f64], scales: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.len() != means.len() || weights.len() != scales.len() {
        return Err(Error::Spec("mixture weights, means and scales must have equal nonzero length".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Spec("mixture weights must be nonnegative and sum to 1".into()));
    }
    if scales.iter().any(|s| !(*s > 0.0)) || means.iter().any(|m| !m.is_finite()) {
        return Err(Error::Spec("mixture scales must be positive and means finite".into()));
    }
    Ok(())
}

/// Skewness and kurtosis of a normal mixture after standardization.
pub fn mixture_moments(weights: &[f64], means: &[f64], scales: &[f64]) -> Result<(f64, f64)> {
    check_mixture(weights, means, scales)?;
    let m: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for ((w, mu), s) in weights.iter().zip(means).zip(scales) {
        let d = mu - m;
        let v = s * s;
        m2 += w * (d * d + v);
        m3 += w * (d.powi(3) + 3.0 * d * v);
        m4 += w * (d.powi(4) + 6.0 * d * d * v + 3.0 * v * v);
    }
    if !(m2 > 0.0) {
        return Err(Error::Spec("mixture has zero variance".into()));
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2)))
}

/// Law of one return given the past: a normal mixture in return units.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub components: Vec<(f64, f64, f64)>,
}

impl ConditionalLaw {
    pub fn cdf(&self, x: f64) -> f64 {
        self.components.iter().map(|(w, m, s)| w * normal_cdf((x - m) / s)).sum()
    }

    /// Closed form for one component, otherwise bisection to `1e-10` of the smallest scale.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Usage(format!("level {tau} outside (0, 1)")));
        }
        if let [(_, m, s)] = self.components[..] {
            return Ok(m + s * normal_quantile(tau));
        }
        let z = normal_quantile(tau).abs() + 10.0;
        let mut lo = self.components.iter().map(|(_, m, s)| m - z * s).fold(f64::INFINITY, f64::min);
        let mut hi = self.components.iter().map(|(_, m, s)| m + z * s).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-10 * self.components.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        for _ in 0..300 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `(mu, h, s, k)`.
    pub fn moments(&self) -> (f64, f64, f64, f64) {
        let w: Vec<f64> = self.components.iter().map(|c| c.0).collect();
        let m: Vec<f64> = self.components.iter().map(|c| c.1).collect();
        let s: Vec<f64> = self.components.iter().map(|c| c.2).collect();
        let mu: f64 = w.iter().zip(&m).map(|(a, b)| a * b).sum();
        let h: f64 = self.components.iter().map(|(w, m, s)| w * ((m - mu).powi(2) + s * s)).sum();
        let (sk, ku) = mixture_moments(&w, &m, &s).unwrap_or((0.0, 3.0));
        (mu, h, sk, ku)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StockSpec {
    pub mu: f64,
    pub beta: Vec<f64>,
    pub garch: Garch,
    pub innovation: Innovation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub n_days: usize,
    pub start: NaiveDate,
    pub factor_names: Vec<String>,
    pub factor_mean: Vec<f64>,
    pub factor_sd: Vec<f64>,
    pub risk_free: f64,
    pub stocks: Vec<StockSpec>,
    /// Mean shift `kappa * sd_i * (|eta_{t-1}| - E|eta|)`.
    pub nonlinear: f64,
    pub relation_names: Vec<String>,
    pub edges: Vec<(usize, usize, usize)>,
    pub seed: u64,
}

/// Knobs for the standard two-group market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketOptions {
    pub n_stocks: usize,
    pub n_days: usize,
    /// Daily mean difference between the two groups.
    pub group_gap: f64,
    /// Typical daily idiosyncratic volatility.
    pub base_vol: f64,
    /// Mixture shift of the innovation law; the high group gets `skewed(delta)`,
    /// the low group its mirror image. Zero gives normal innovations.
    pub skew_delta: f64,
    /// Half-width of the uniform draw of log volatility around `base_vol`.
    pub vol_dispersion: f64,
    /// Volatility ratio between the volatile tier (`i % 4 < 2`) and the calm tier.
    /// Above one the volatile tier is also linked as a clique under relation `volatile`.
    pub tier_ratio: f64,
    /// GARCH news and persistence coefficients shared by all stocks.
    pub garch_a: f64,
    pub garch_b: f64,
    pub nonlinear: f64,
    pub seed: u64,
}

impl Default for MarketOptions {
    fn default() -> Self {
        MarketOptions {
            n_stocks: 20,
            n_days: 900,
            group_gap: 3e-4,
            base_vol: 1e-3,
            skew_delta: 0.2,
            vol_dispersion: 0.5,
            tier_ratio: 1.0,
            garch_a: 0.08,
            garch_b: 0.9,
            nonlinear: 0.0,
            seed: 42,
        }
    }
}

fn business_day_on_or_after(mut d: NaiveDate) -> NaiveDate {
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d += Duration::days(1);
    }
    d
}

pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = business_day_on_or_after(start);
    while out.len() < n {
        out.push(d);
        d = business_day_on_or_after(d + Duration::days(1));
    }
    out
}

pub fn ticker(i: usize) -> String {
    format!("S{i:03}")
}

impl DgpSpec {
    /// Two mean groups (odd/even stocks) with heterogeneous volatility. The high
    /// group forms a clique under relation `sector_a`; the low group a ring under `sector_b`.
    pub fn market(opt: &MarketOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed ^ 0x5EED_0F_DA7A);
        let n = opt.n_stocks;
        let b = FACTOR_NAMES.len();
        let factor_sd: Vec<f64> = (0..b).map(|k| opt.base_vol * if k == 0 { 0.5 } else { 0.25 }).collect();
        let stocks = (0..n)
            .map(|i| {
                let high = i % 2 == 0;
                let u: f64 = rng.gen_range(-1.0..1.0);
                let tier = if i % 4 < 2 { opt.tier_ratio.sqrt() } else { 1.0 / opt.tier_ratio.sqrt() };
                let vol = opt.base_vol * tier * (u * opt.vol_dispersion).exp();
                let beta = (0..b)
                    .map(|k| if k == 0 { 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal) } else { 0.3 * rng.sample::<f64, _>(StandardNormal) })
                    .collect();
                StockSpec {
                    mu: if high { 0.5 * opt.group_gap } else { -0.5 * opt.group_gap },
                    beta,
                    garch: Garch::with_variance(vol * vol, opt.garch_a, opt.garch_b),
                    innovation: match (opt.skew_delta == 0.0, high) {
                        (true, _) => Innovation::Normal,
                        (false, true) => Innovation::skewed(opt.skew_delta),
                        (false, false) => Innovation::skewed(-opt.skew_delta),
                    },
                }
            })
            .collect();
        let high: Vec<usize> = (0..n).step_by(2).collect();
        let low: Vec<usize> = (1..n).step_by(2).collect();
        let mut edges = Vec::new();
        for (x, &i) in high.iter().enumerate() {
            for &j in &high[x + 1..] {
                edges.push((i, j, 0));
            }
        }
        if low.len() > 1 {
            for x in 0..low.len() {
                let (i, j) = (low[x], low[(x + 1) % low.len()]);
                if i != j && !(low.len() == 2 && x == 1) {
                    edges.push((i.min(j), i.max(j), 1));
                }
            }
        }
        let mut relation_names = vec!["sector_a".to_string(), "sector_b".to_string()];
        if opt.tier_ratio != 1.0 {
            let volatile: Vec<usize> = (0..n).filter(|i| i % 4 < 2).collect();
            for (x, &i) in volatile.iter().enumerate() {
                for &j in &volatile[x + 1..] {
                    edges.push((i, j, 2));
                }
            }
            relation_names.push("volatile".into());
        }
        DgpSpec {
            n_days: opt.n_days,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            factor_names: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
            factor_mean: vec![0.0; b],
            factor_sd,
            risk_free: 0.0,
            stocks,
            nonlinear: opt.nonlinear,
            relation_names,
            edges,
            seed: opt.seed,
        }
    }

    /// GARCH(1,1)-normal stocks without factor exposure or relations.
    pub fn garch_normal(n_stocks: usize, n_days: usize, seed: u64) -> Self {
        let mut spec = DgpSpec::market(&MarketOptions {
            n_stocks,
            n_days,
            group_gap: 0.0,
            base_vol: 0.01,
            skew_delta: 0.0,
            seed,
            ..Default::default()
        });
        for s in &mut spec.stocks {
            s.beta.iter_mut().for_each(|b| *b = 0.0);
        }
        spec
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.factor_names.len();
        if self.stocks.is_empty() || self.n_days < 2 {
            return Err(Error::Spec("need at least one stock and two days".into()));
        }
        if self.factor_mean.len() != b || self.factor_sd.len() != b {
            return Err(Error::Spec("factor mean/sd lengths differ from factor names".into()));
        }
        if self.factor_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Spec("factor sd must be nonnegative".into()));
        }
        for (i, s) in self.stocks.iter().enumerate() {
            s.garch.check().map_err(|e| Error::Spec(format!("stock {i}: {e}")))?;
            s.innovation.components().map_err(|e| Error::Spec(format!("stock {i}: {e}")))?;
            if s.beta.len() != b {
                return Err(Error::Spec(format!("stock {i} has {} loadings for {b} factors", s.beta.len())));
            }
        }
        for &(i, j, r) in &self.edges {
            if i >= self.n_stocks() || j >= self.n_stocks() || i == j || r >= self.relation_names.len() {
                return Err(Error::Spec(format!("invalid edge ({i}, {j}, {r})")));
            }
        }
        Ok(())
    }
}

/// True conditional moments per `(stock, day)`, row-major `i * T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPanel {
    pub n_days: usize,
    pub mu: Vec<f64>,
    /// GARCH variance of the idiosyncratic term.
    pub garch_h: Vec<f64>,
    /// `beta' Sigma_F beta` per stock.
    pub factor_var: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: DgpSpec,
    pub prices: PricePanel,
    pub factors: FactorPanel,
    pub truth: TruthPanel,
    innovation: Vec<Vec<(f64, f64, f64)>>,
}

fn mean_abs(comps: &[(f64, f64, f64)]) -> f64 {
    comps
        .iter()
        .map(|&(w, m, s)| {
            let z = m / s;
            w * (s * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * z * z).exp() + m * (1.0 - 2.0 * normal_cdf(-z)))
        })
        .sum()
}

fn draw(rng: &mut ChaCha8Rng, comps: &[(f64, f64, f64)]) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if comps.len() == 1 {
        return comps[0].1 + comps[0].2 * z;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(w, m, s) in comps {
        acc += w;
        if u < acc {
            return m + s * z;
        }
    }
    let &(_, m, s) = comps.last().expect("nonempty");
    m + s * z
}

/// Simulates the market described by `spec`.
pub fn generate(spec: &DgpSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let comps: Vec<Vec<(f64, f64, f64)>> = spec.stocks.iter().map(|s| s.innovation.components()).collect::<Result<_>>()?;
    let (n, t_len, b) = (spec.n_stocks(), spec.n_days, spec.factor_names.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut fvals = vec![0.0; b * t_len];
    for t in 0..t_len {
        for k in 0..b {
            let z: f64 = rng.sample(StandardNormal);
            fvals[k * t_len + t] = spec.factor_mean[k] + spec.factor_sd[k] * z;
        }
    }
    let mut returns = vec![0.0; n * t_len];
    let mut truth = TruthPanel {
        n_days: t_len,
        mu: vec![0.0; n * t_len],
        garch_h: vec![0.0; n * t_len],
        factor_var: Vec::with_capacity(n),
        h: vec![0.0; n * t_len],
        s: vec![0.0; n * t_len],
        k: vec![0.0; n * t_len],
    };
    for (i, st) in spec.stocks.iter().enumerate() {
        let fv: f64 = st.beta.iter().zip(&spec.factor_sd).map(|(b, s)| b * b * s * s).sum();
        let fm: f64 = st.beta.iter().zip(&spec.factor_mean).map(|(b, m)| b * m).sum();
        truth.factor_var.push(fv);
        let sd_bar = st.garch.unconditional().sqrt();
        let e_abs = mean_abs(&comps[i]);
        let mut h = st.garch.unconditional();
        let mut prev_eta_abs = e_abs;
        for t in 0..t_len {
            let j = i * t_len + t;
            let mu = st.mu + fm + spec.nonlinear * sd_bar * (prev_eta_abs - e_abs);
            let eta = draw(&mut rng, &comps[i]);
            let eps = h.sqrt() * eta;
            let factor: f64 = (0..b).map(|k| st.beta[k] * fvals[k * t_len + t]).sum();
            returns[j] = mu + (factor - fm) + eps;
            truth.mu[j] = mu;
            truth.garch_h[j] = h;
            h = st.garch.next(h, eps);
            prev_eta_abs = eta.abs();
        }
    }
    let dates = business_days(spec.start, t_len);
    let prices = PricePanel::new((0..n).map(ticker).collect(), dates.clone(), returns)?;
    let factors = FactorPanel {
        names: spec.factor_names.clone(),
        dates,
        values: fvals,
        risk_free: vec![spec.risk_free; t_len],
    };
    let mut ds = SyntheticDataset { spec: spec.clone(), prices, factors, truth, innovation: comps };
    for i in 0..n {
        for t in 0..t_len {
            let (_, h, s, k) = ds.law(i, t).moments();
            let j = i * t_len + t;
            ds.truth.h[j] = h;
            ds.truth.s[j] = s;
            ds.truth.k[j] = k;
        }
    }
    Ok(ds)
}

impl SyntheticDataset {
    pub fn n_stocks(&self) -> usize {
        self.spec.n_stocks()
    }

    pub fn n_days(&self) -> usize {
        self.truth.n_days
    }

    /// Law of `r_{i,t}` given information up to `t - 1`.
    pub fn law(&self, i: usize, t: usize) -> ConditionalLaw {
        let j = i * self.truth.n_days + t;
        let (mu, h, fv) = (self.truth.mu[j], self.truth.garch_h[j], self.truth.factor_var[i]);
        ConditionalLaw {
            components: self
                .innovation[i]
                .iter()
                .map(|&(w, m, s)| (w, mu + h.sqrt() * m, (h * s * s + fv).sqrt()))
                .collect(),
        }
    }

    pub fn true_quantile(&self, i: usize, t: usize, tau: f64) -> Result<f64> {
        self.law(i, t).quantile(tau)
    }

    pub fn truth_row(&self, i: usize, t: usize) -> (f64, f64, f64, f64) {
        let j = i * self.truth.n_days + t;
        (self.truth.mu[j], self.truth.h[j], self.truth.s[j], self.truth.k[j])
    }

    pub fn prices_csv(&self) -> String {
        let mut s = String::from("date,ticker,return\n");
        for t in 0..self.n_days() {
            for i in 0..self.n_stocks() {
                let _ = writeln!(s, "{},{},{}", self.prices.dates[t], self.prices.tickers[i], self.prices.ret(i, t));
            }
        }
        s
    }

    pub fn factors_csv(&self) -> String {
        let mut s = format!("date,{},rf\n", self.factors.names.join(","));
        for t in 0..self.n_days() {
            let _ = write!(s, "{}", self.factors.dates[t]);
            for k in 0..self.factors.n_factors() {
                let _ = write!(s, ",{}", self.factors.value(k, t));
            }
            let _ = writeln!(s, ",{}", self.factors.risk_free[t]);
        }
        s
    }

    pub fn relations_csv(&self) -> String {
        let mut s = String::from("i,j,relation_id\n");
        for &(i, j, r) in &self.spec.edges {
            let _ = writeln!(s, "{i},{j},{r}");
        }
        s
    }

    pub fn relations_meta_csv(&self) -> String {
        let mut s = String::from("relation_id,name\n");
        for (r, name) in self.spec.relation_names.iter().enumerate() {
            let _ = writeln!(s, "{r},{name}");
        }
        s
    }

    pub fn truth_csv(&self) -> String {
        let mut s = String::from("date,ticker,mu,h,s,k\n");
        for t in 0..self.n_days() {
            for i in 0..self.n_stocks() {
                let (mu, h, sk, ku) = self.truth_row(i, t);
                let _ = writeln!(s, "{},{},{mu},{h},{sk},{ku}", self.prices.dates[t], self.prices.tickers[i]);
            }
        }
        s
    }

    /// Writes `prices.csv`, `factors.csv`, `relations.csv`, `relations_meta.csv`
    /// and `truth_moments.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, prov: &Provenance) -> Result<()> {
        let dir = dir.as_ref();
        write_with_header(dir.join("prices.csv"), prov, &self.prices_csv())?;
        write_with_header(dir.join("factors.csv"), prov, &self.factors_csv())?;
        write_with_header(dir.join("relations.csv"), prov, &self.relations_csv())?;
        write_with_header(dir.join("relations_meta.csv"), prov, &self.relations_meta_csv())?;
        write_with_header(dir.join("truth_moments.csv"), prov, &self.truth_csv())?;
        Ok(())
    }
}
