use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Dense N x T panel of one-day simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// Row-major `N x T`.
    pub returns: Vec<f64>,
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, returns: Vec<f64>) -> Result<Self> {
        if returns.len() != tickers.len() * dates.len() {
            return Err(Error::Shape(format!(
                "{} returns for {} tickers x {} dates",
                returns.len(),
                tickers.len(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Spec("dates must be strictly increasing".into()));
        }
        Ok(PricePanel { tickers, dates, returns })
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    #[inline]
    pub fn ret(&self, i: usize, t: usize) -> f64 {
        self.returns[i * self.dates.len() + t]
    }

    pub fn series(&self, i: usize) -> &[f64] {
        let t = self.dates.len();
        &self.returns[i * t..(i + 1) * t]
    }

    /// Cross-section of returns on day `t`.
    pub fn day(&self, t: usize) -> Vec<f64> {
        (0..self.n_stocks()).map(|i| self.ret(i, t)).collect()
    }
}

/// B x T factor values with the daily risk-free rate on the same date axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    pub names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// Row-major `B x T`.
    pub values: Vec<f64>,
    pub risk_free: Vec<f64>,
}

impl FactorPanel {
    pub fn n_factors(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn value(&self, b: usize, t: usize) -> f64 {
        self.values[b * self.dates.len() + t]
    }

    pub fn series(&self, b: usize) -> &[f64] {
        let t = self.dates.len();
        &self.values[b * t..(b + 1) * t]
    }

    /// Restricts the panel to `dates`, which must all be present.
    pub fn align_to(&self, dates: &[NaiveDate]) -> Result<FactorPanel> {
        let index: BTreeMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(k, d)| (*d, k)).collect();
        let mut cols = Vec::with_capacity(dates.len());
        for d in dates {
            match index.get(d) {
                Some(&k) => cols.push(k),
                None => return Err(Error::Spec(format!("factor panel has no row for {d}"))),
            }
        }
        let b = self.n_factors();
        let mut values = Vec::with_capacity(b * dates.len());
        for f in 0..b {
            values.extend(cols.iter().map(|&k| self.value(f, k)));
        }
        Ok(FactorPanel {
            names: self.names.clone(),
            dates: dates.to_vec(),
            values,
            risk_free: cols.iter().map(|&k| self.risk_free[k]).collect(),
        })
    }
}

/// Column names of the factor file.
#[derive(Debug, Clone)]
pub struct FactorColumns {
    pub factors: Vec<String>,
    pub risk_free: String,
}

impl Default for FactorColumns {
    fn default() -> Self {
        FactorColumns {
            factors: ["mkt_rf", "smb", "hml", "rmw", "cma"].iter().map(|s| s.to_string()).collect(),
            risk_free: "rf".into(),
        }
    }
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::load(path.display().to_string(), e.to_string()))
}

pub(crate) fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("bad date `{s}`: {e}"))
}

pub(crate) fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad number `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number `{s}`"))
    }
}

/// Loads `date,ticker,return` or `date,ticker,close`.
///
/// Tickers are sorted lexicographically. A ticker missing on any date is
/// dropped with a warning; with closes, the first date only seeds returns.
pub fn load_prices(path: impl AsRef<Path>) -> Result<PricePanel> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::load(&shown, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (di, ti) = match (col("date"), col("ticker")) {
        (Some(d), Some(t)) => (d, t),
        _ => return Err(Error::load(&shown, "header needs `date` and `ticker` columns")),
    };
    let (vi, is_close) = match (col("return"), col("close")) {
        (Some(v), _) => (v, false),
        (None, Some(v)) => (v, true),
        _ => return Err(Error::load(&shown, "header needs a `return` or `close` column")),
    };

    let mut cells: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    let mut all_dates = BTreeSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let date = parse_date(field(di)).map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
        let ticker = field(ti).to_string();
        if ticker.is_empty() {
            return Err(Error::load(&shown, format!("row {line}: empty ticker")));
        }
        let v = parse_f64(field(vi)).map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
        let series = cells.entry(ticker.clone()).or_default();
        if let Some((&last, _)) = series.iter().next_back() {
            if date == last {
                return Err(Error::load(&shown, format!("row {line}: duplicate ({date}, {ticker})")));
            }
            if date < last {
                if series.contains_key(&date) {
                    return Err(Error::load(&shown, format!("row {line}: duplicate ({date}, {ticker})")));
                }
                return Err(Error::load(
                    &shown,
                    format!("row {line}: date {date} for {ticker} precedes {last}"),
                ));
            }
        }
        series.insert(date, v);
        all_dates.insert(date);
    }
    if cells.is_empty() {
        return Err(Error::load(&shown, "no data rows"));
    }

    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    let mut tickers = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ticker, series) in cells {
        if series.len() != dates.len() {
            log::warn!(
                "{shown}: dropping {ticker}, present on {} of {} dates",
                series.len(),
                dates.len()
            );
            continue;
        }
        let vals: Vec<f64> = series.into_values().collect();
        let row = if is_close {
            let mut r = Vec::with_capacity(vals.len().saturating_sub(1));
            for w in vals.windows(2) {
                if w[0] <= 0.0 {
                    return Err(Error::load(&shown, format!("non-positive close for {ticker}")));
                }
                r.push(w[1] / w[0] - 1.0);
            }
            r
        } else {
            vals
        };
        tickers.push(ticker);
        rows.push(row);
    }
    if tickers.is_empty() {
        return Err(Error::load(&shown, "no ticker is present on every date"));
    }
    let dates = if is_close { dates[1..].to_vec() } else { dates };
    PricePanel::new(tickers, dates, rows.concat())
}

/// Loads a wide factor file: `date,<factor columns...>,<risk-free column>`.
pub fn load_factors(path: impl AsRef<Path>, columns: &FactorColumns) -> Result<FactorPanel> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::load(&shown, e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::load(&shown, format!("missing column `{name}`")))
    };
    let di = find("date")?;
    let fi: Vec<usize> = columns.factors.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let ri = find(&columns.risk_free)?;

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); fi.len()];
    let mut rf = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
        let get = |i: usize| -> Result<f64> {
            parse_f64(rec.get(i).unwrap_or("")).map_err(|e| Error::load(&shown, format!("row {line}: {e}")))
        };
        let date = parse_date(rec.get(di).unwrap_or(""))
            .map_err(|e| Error::load(&shown, format!("row {line}: {e}")))?;
        if let Some(&last) = dates.last() {
            if date <= last {
                return Err(Error::load(&shown, format!("row {line}: date {date} not after {last}")));
            }
        }
        dates.push(date);
        for (c, &i) in fi.iter().enumerate() {
            cols[c].push(get(i)?);
        }
        rf.push(get(ri)?);
    }
    Ok(FactorPanel {
        names: columns.factors.clone(),
        dates,
        values: cols.concat(),
        risk_free: rf,
    })
}
