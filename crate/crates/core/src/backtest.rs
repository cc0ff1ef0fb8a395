//! Performance measures, decile long-short portfolios and the lambda grid search.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::PricePanel;
use crate::error::{Error, Result};
use crate::qcm::MomentPanel;

pub const TRADING_DAYS: f64 = 252.0;
pub const MIN_OBSERVATIONS: usize = 30;
pub const DEFAULT_COST_BPS: f64 = 30.0;
pub const N_DECILES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MeasureKind {
    M,
    MV,
    MVSK,
    SR,
    SRSK,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 5] = [MeasureKind::M, MeasureKind::MV, MeasureKind::MVSK, MeasureKind::SR, MeasureKind::SRSK];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::M => "M",
            MeasureKind::MV => "MV",
            MeasureKind::MVSK => "MVSK",
            MeasureKind::SR => "SR",
            MeasureKind::SRSK => "SRSK",
        }
    }

    /// Measures dividing by `sqrt(h)`.
    pub fn needs_variance(self) -> bool {
        matches!(self, MeasureKind::SR | MeasureKind::SRSK)
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Usage(format!("unknown measure '{s}' (M, MV, MVSK, SR, SRSK)")))
    }
}

/// Parses a comma separated measure list.
pub fn parse_measures(list: &str) -> Result<Vec<MeasureKind>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceMeasureSpec {
    pub kind: MeasureKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl PerformanceMeasureSpec {
    pub fn new(kind: MeasureKind, lambda: (f64, f64, f64)) -> Self {
        PerformanceMeasureSpec { kind, lambda1: lambda.0, lambda2: lambda.1, lambda3: lambda.2 }
    }

    pub fn plain(kind: MeasureKind) -> Self {
        Self::new(kind, (0.0, 0.0, 0.0))
    }

    pub fn lambdas(&self) -> (f64, f64, f64) {
        (self.lambda1, self.lambda2, self.lambda3)
    }
}

/// Measure value, or `None` when the cell cannot be ranked under `spec`.
pub fn compute_measure(spec: &PerformanceMeasureSpec, mu: f64, h: f64, s: f64, k: f64) -> Option<f64> {
    let (l1, l2, l3) = spec.lambdas();
    let v = match spec.kind {
        MeasureKind::M => mu,
        MeasureKind::MV => mu - l1 * h,
        MeasureKind::MVSK => mu - l1 * h + l2 * s - l3 * k,
        MeasureKind::SR | MeasureKind::SRSK if h <= 0.0 => return None,
        MeasureKind::SR => mu / h.sqrt(),
        MeasureKind::SRSK => mu / h.sqrt() + l2 * s - l3 * k,
    };
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecileAssignment {
    /// Panel day the portfolio is held over.
    pub day: usize,
    /// Stock ids in ascending measure order.
    pub ranking: Vec<usize>,
    /// Decile (1..=10) of `ranking[r]`.
    pub deciles: Vec<u8>,
}

impl DecileAssignment {
    pub fn members(&self, decile: u8) -> Vec<usize> {
        self.ranking.iter().zip(&self.deciles).filter(|(_, &d)| d == decile).map(|(&i, _)| i).collect()
    }

    pub fn long(&self) -> Vec<usize> {
        self.members(N_DECILES as u8)
    }

    pub fn short(&self) -> Vec<usize> {
        self.members(1)
    }
}

/// Sorts `(stock, value)` pairs ascending, ties by ticker.
pub fn decile_sort(day: usize, values: &[(usize, f64)], tickers: &[String]) -> Result<DecileAssignment> {
    let pool = values.len();
    if pool < N_DECILES {
        return Err(Error::InsufficientSample(format!("{pool} stocks on day {day}; deciles need {N_DECILES}")));
    }
    if let Some(&(i, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite measure for stock {i} on day {day}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| tickers[a.0].cmp(&tickers[b.0])));
    Ok(DecileAssignment {
        day,
        ranking: sorted.iter().map(|p| p.0).collect(),
        deciles: (0..pool).map(|r| (N_DECILES * r / pool + 1) as u8).collect(),
    })
}

/// Daily deciles for every day slot of `moments`, restricted to `pool`.
///
/// Days with fewer than ten rankable stocks yield `None` (flat book).
pub fn assign_deciles(
    spec: &PerformanceMeasureSpec,
    moments: &MomentPanel,
    pool: &[usize],
    tickers: &[String],
) -> Result<Vec<Option<DecileAssignment>>> {
    let mut values = Vec::with_capacity(pool.len());
    (0..moments.n_days())
        .map(|d| {
            values.clear();
            for &i in pool {
                if !moments.valid(i, d) || (spec.kind.needs_variance() && moments.degenerate[moments.idx(i, d)]) {
                    continue;
                }
                let (mu, h, s, k) = moments.row(i, d);
                if let Some(v) = compute_measure(spec, mu, h, s, k) {
                    values.push((i, v));
                }
            }
            if values.len() < N_DECILES {
                log::debug!("day {}: {} rankable stocks, holding no position", moments.days[d], values.len());
                return Ok(None);
            }
            decile_sort(moments.days[d], &values, tickers).map(Some)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSeries {
    pub days: Vec<usize>,
    pub long: Vec<Vec<usize>>,
    pub short: Vec<Vec<usize>>,
    pub gross: Vec<f64>,
    pub turnover: Vec<f64>,
    pub net: Vec<f64>,
    pub cost: f64,
}

impl PortfolioSeries {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn mean_leg_returns(&self, returns: &PricePanel) -> (f64, f64) {
        let leg = |sets: &[Vec<usize>]| {
            let v: Vec<f64> = self
                .days
                .iter()
                .zip(sets)
                .filter(|(_, s)| !s.is_empty())
                .map(|(&t, s)| s.iter().map(|&i| returns.ret(i, t)).sum::<f64>() / s.len() as f64)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        (leg(&self.long), leg(&self.short))
    }
}

/// Equal-weight long decile 10, short decile 1, rebalanced daily at cost rate `cost`.
pub fn longshort_returns(assignments: &[Option<DecileAssignment>], days: &[usize], returns: &PricePanel, cost: f64) -> Result<PortfolioSeries> {
    if assignments.len() != days.len() {
        return Err(Error::Shape(format!("{} assignments for {} days", assignments.len(), days.len())));
    }
    let n = returns.n_stocks();
    let mut prev = vec![0.0; n];
    let mut out = PortfolioSeries {
        days: days.to_vec(),
        long: Vec::with_capacity(days.len()),
        short: Vec::with_capacity(days.len()),
        gross: Vec::with_capacity(days.len()),
        turnover: Vec::with_capacity(days.len()),
        net: Vec::with_capacity(days.len()),
        cost,
    };
    for (a, &t) in assignments.iter().zip(days) {
        if t >= returns.n_days() {
            return Err(Error::Shape(format!("day {t} beyond the return panel ({} days)", returns.n_days())));
        }
        let (long, short) = match a {
            Some(a) if a.day != t => return Err(Error::Shape(format!("assignment dated {} aligned to day {t}", a.day))),
            Some(a) => (a.long(), a.short()),
            None => (Vec::new(), Vec::new()),
        };
        let mut w = vec![0.0; n];
        for &i in &long {
            w[i] += 1.0 / long.len() as f64;
        }
        for &i in &short {
            w[i] -= 1.0 / short.len() as f64;
        }
        let gross: f64 = (0..n).map(|i| w[i] * returns.ret(i, t)).sum();
        let turnover: f64 = w.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
        out.gross.push(gross);
        out.turnover.push(turnover);
        out.net.push(gross - cost * turnover);
        out.long.push(long);
        out.short.push(short);
        prev = w;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annualized {
    pub return_pct: f64,
    pub risk_pct: f64,
    pub sharpe: f64,
}

/// Annualized excess return, risk (sample sd) and Sharpe ratio.
pub fn annualize(net: &[f64], rf: &[f64]) -> Result<Annualized> {
    if net.len() != rf.len() {
        return Err(Error::Shape(format!("{} returns, {} risk-free rates", net.len(), rf.len())));
    }
    let n = net.len();
    if n < MIN_OBSERVATIONS {
        return Err(Error::InsufficientSample(format!("{n} daily returns; need {MIN_OBSERVATIONS}")));
    }
    let excess: Vec<f64> = net.iter().zip(rf).map(|(r, f)| r - f).collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let sd = (excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let ret = TRADING_DAYS * mean;
    let risk = TRADING_DAYS.sqrt() * sd;
    if sd == 0.0 || sd <= 1e-12 * mean.abs() {
        return Err(Error::Numeric("zero portfolio risk; Sharpe ratio undefined".into()));
    }
    Ok(Annualized { return_pct: 100.0 * ret, risk_pct: 100.0 * risk, sharpe: ret / risk })
}

/// Everything needed to evaluate a measure on a span.
#[derive(Debug, Clone, Copy)]
pub struct BacktestInput<'a> {
    pub moments: &'a MomentPanel,
    pub returns: &'a PricePanel,
    /// Risk-free rate per panel day.
    pub risk_free: &'a [f64],
    pub pool: &'a [usize],
    pub cost: f64,
}

impl BacktestInput<'_> {
    pub fn run(&self, spec: &PerformanceMeasureSpec) -> Result<(PortfolioSeries, Annualized)> {
        let a = assign_deciles(spec, self.moments, self.pool, &self.returns.tickers)?;
        let series = longshort_returns(&a, &self.moments.days, self.returns, self.cost)?;
        let rf: Vec<f64> = series.days.iter().map(|&t| self.risk_free[t]).collect();
        let perf = annualize(&series.net, &rf)?;
        Ok((series, perf))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

fn grid(b_lo: i32, b_hi: i32) -> Vec<f64> {
    let mut v: Vec<f64> = (b_lo..=b_hi)
        .flat_map(|b| (1..=9).map(move |a| a as f64 * 10f64.powi(-b)))
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { a1: grid(-1, 3), a2: grid(2, 6), a3: grid(2, 6) }
    }
}

impl LambdaGrid {
    /// Lexicographically ascending candidate tuples for `kind`.
    pub fn candidates(&self, kind: MeasureKind) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        match kind {
            MeasureKind::M | MeasureKind::SR => out.push((0.0, 0.0, 0.0)),
            MeasureKind::MV => out.extend(self.a1.iter().map(|&l| (l, 0.0, 0.0))),
            MeasureKind::SRSK => {
                for &l2 in &self.a2 {
                    out.extend(self.a3.iter().map(|&l3| (0.0, l2, l3)));
                }
            }
            MeasureKind::MVSK => {
                for &l1 in &self.a1 {
                    for &l2 in &self.a2 {
                        out.extend(self.a3.iter().map(|&l3| (l1, l2, l3)));
                    }
                }
            }
        }
        out
    }
}

/// Tuple maximizing in-sample Sharpe ratio; ties go to the earliest candidate.
pub fn grid_search_lambdas(kind: MeasureKind, input: &BacktestInput<'_>, grid: &LambdaGrid) -> Result<(PerformanceMeasureSpec, f64)> {
    let cands = grid.candidates(kind);
    if cands.len() == 1 {
        let spec = PerformanceMeasureSpec::new(kind, cands[0]);
        let sr = input.run(&spec).map(|r| r.1.sharpe).unwrap_or(f64::NAN);
        return Ok((spec, sr));
    }
    let best = cands
        .par_iter()
        .enumerate()
        .filter_map(|(idx, &l)| {
            let sr = input.run(&PerformanceMeasureSpec::new(kind, l)).ok()?.1.sharpe;
            sr.is_finite().then_some((idx, sr))
        })
        .reduce_with(|a, b| match a.1.total_cmp(&b.1) {
            std::cmp::Ordering::Greater => a,
            std::cmp::Ordering::Less => b,
            std::cmp::Ordering::Equal => if a.0 < b.0 { a } else { b },
        });
    match best {
        Some((idx, sr)) => Ok((PerformanceMeasureSpec::new(kind, cands[idx]), sr)),
        None => Err(Error::Pipeline(format!("every {} candidate portfolio is degenerate", kind))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub measure: MeasureKind,
    pub perf: Annualized,
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("method,measure,return_pct,risk_pct,sharpe\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            r.method, r.measure, r.perf.return_pct, r.perf.risk_pct, r.perf.sharpe
        ));
    }
    s
}

pub fn series_csv(series: &PortfolioSeries, dates: &[chrono::NaiveDate]) -> String {
    let mut s = String::from("date,gross,turnover,net\n");
    for (j, &t) in series.days.iter().enumerate() {
        s.push_str(&format!(
            "{},{:.10},{:.10},{:.10}\n",
            dates[t], series.gross[j], series.turnover[j], series.net[j]
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tickers(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:02}")).collect()
    }

    #[test]
    fn measure_arithmetic() {
        let sr = PerformanceMeasureSpec::plain(MeasureKind::SR);
        assert!((compute_measure(&sr, 0.01, 0.0004, 0.0, 3.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(compute_measure(&sr, 0.01, 0.0, 0.0, 3.0), None);
        let mvsk = PerformanceMeasureSpec::new(MeasureKind::MVSK, (2.0, 0.5, 0.25));
        let v = compute_measure(&mvsk, 0.01, 0.01, 0.2, 4.0).unwrap();
        assert!((v - (0.01 - 0.02 + 0.1 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn decile_sizes() {
        let t = tickers(20);
        let vals: Vec<(usize, f64)> = (0..20).map(|i| (i, (i as f64 * 7.0) % 20.0)).collect();
        let a = decile_sort(0, &vals, &t).unwrap();
        let long = a.long();
        assert_eq!(long.len(), 2);
        let mut top: Vec<f64> = long.iter().map(|&i| vals[i].1).collect();
        top.sort_by(f64::total_cmp);
        assert_eq!(top, vec![18.0, 19.0]);
        for n in 10..40 {
            let v: Vec<(usize, f64)> = (0..n).map(|i| (i, i as f64)).collect();
            let a = decile_sort(0, &v, &tickers(n)).unwrap();
            let sizes: Vec<usize> = (1..=10).map(|d| a.members(d).len()).collect();
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert!(decile_sort(0, &vals[..9], &t).is_err());
    }

    #[test]
    fn ties_follow_ticker_order() {
        let t: Vec<String> = ["b", "a", "d", "c", "e", "f", "g", "h", "i", "j"].iter().map(|s| s.to_string()).collect();
        let vals: Vec<(usize, f64)> = (0..10).map(|i| (i, 1.0)).collect();
        let a = decile_sort(0, &vals, &t).unwrap();
        assert_eq!(&a.ranking[..4], &[1, 0, 3, 2]);
    }

    #[test]
    fn grid_sizes() {
        let g = LambdaGrid::default();
        assert_eq!((g.a1.len(), g.a2.len(), g.a3.len()), (45, 45, 45));
        assert_eq!(g.a1[0], 0.001);
        assert!((g.a1[44] - 90.0).abs() < 1e-12);
        assert!((g.a2[0] - 1e-6).abs() < 1e-20);
        assert_eq!(g.candidates(MeasureKind::MV).len(), 45);
        assert_eq!(g.candidates(MeasureKind::SRSK).len(), 2025);
        assert_eq!(g.candidates(MeasureKind::MVSK).len(), 91125);
        let c = g.candidates(MeasureKind::MVSK);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn annualize_hand_value() {
        let net: Vec<f64> = (0..1000).map(|t| 0.001 + if t % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let a = annualize(&net, &vec![0.0; 1000]).unwrap();
        let sd = 0.01 * (1000.0f64 / 999.0).sqrt();
        assert!((a.sharpe - 0.252 / (sd * 252f64.sqrt())).abs() < 1e-9);
        assert!(annualize(&vec![0.001; 100], &vec![0.0; 100]).is_err());
        assert!(annualize(&net[..20], &vec![0.0; 20]).is_err());
    }

    #[test]
    fn measure_parsing() {
        assert_eq!(parse_measures("M,srsk, MV").unwrap(), vec![MeasureKind::M, MeasureKind::SRSK, MeasureKind::MV]);
        assert!("X".parse::<MeasureKind>().is_err());
    }
}
