//! The 23-column feature vector: order statistics of centred daily log
//! returns plus contract and rate features, and the historical-volatility
//! estimate that doubles as the volatility scalar.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CleanOptionQuote;

pub const WINDOW_RETURNS: usize = 19;
pub const TRADING_DAYS_PER_YEAR: f64 = 255.0;
pub const FEATURE_COUNT: usize = WINDOW_RETURNS + 4;
/// Bumped whenever the column order below changes.
pub const FEATURE_SCHEMA_VERSION: &str = "features-v1";

pub fn feature_names() -> Vec<String> {
    (1..=WINDOW_RETURNS)
        .map(|i| format!("F{i}"))
        .chain(["ttm_days", "inv_moneyness", "prev_norm_price", "rate"].map(String::from))
        .collect()
}

/// `n + 1` consecutive closes, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnWindow {
    prices: Vec<f64>,
}

impl ReturnWindow {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if prices.len() < 3 {
            return Err(Error::Feature(format!(
                "return window needs at least 3 prices, got {}",
                prices.len()
            )));
        }
        if let Some(bad) = prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::domain(format!("window price must be positive, got {bad}")));
        }
        Ok(Self { prices })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn n_returns(&self) -> usize {
        self.prices.len() - 1
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.prices.iter().map(|p| p * c).collect())
    }
}

/// `R_i = ln(S_i / S_{i-1}) - ln(S_n / S_0) / n`. The centring term is the
/// mean of the raw log returns, so the result sums to zero up to rounding.
pub fn centered_log_returns(window: &ReturnWindow) -> Vec<f64> {
    let p = window.prices();
    let n = window.n_returns();
    let drift = (p[n] / p[0]).ln() / n as f64;
    p.windows(2).map(|w| (w[1] / w[0]).ln() - drift).collect()
}

pub fn order_statistics(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolEstimate {
    pub hist_vol: f64,
    /// `None` when the estimate is zero and cannot be divided by.
    pub rho: Option<f64>,
}

/// Annualised sample standard deviation (n - 1 divisor, 255 days a year).
///
/// The deviations are summed in sorted order so that any permutation of the
/// input gives a bit-identical estimate.
pub fn historical_vol(returns: &[f64]) -> Result<VolEstimate> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::Feature(format!("historical vol needs >= 2 returns, got {n}")));
    }
    let sorted = order_statistics(returns);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let ss: f64 = sorted.iter().map(|r| (r - mean) * (r - mean)).sum();
    let hist_vol = (ss / (n - 1) as f64).sqrt() * TRADING_DAYS_PER_YEAR.sqrt();
    Ok(VolEstimate {
        hist_vol,
        rho: (hist_vol > 0.0).then_some(hist_vol),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub order_stats: Vec<f64>,
    pub ttm_days: f64,
    /// `S / K`.
    pub inv_moneyness: f64,
    /// `100 C_{t-1} / S_{t-1}`.
    pub prev_norm_price: f64,
    pub rate: f64,
}

impl FeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.order_stats.clone();
        v.extend([self.ttm_days, self.inv_moneyness, self.prev_norm_price, self.rate]);
        v
    }
}

pub fn build_feature_vector(quote: &CleanOptionQuote, window: &ReturnWindow, rate: f64) -> Result<FeatureVector> {
    if !(quote.strike > 0.0 && quote.prev_spot > 0.0) {
        return Err(Error::Feature("strike and previous spot must be positive".into()));
    }
    Ok(FeatureVector {
        order_stats: order_statistics(&centered_log_returns(window)),
        ttm_days: quote.ttm_days as f64,
        inv_moneyness: quote.spot / quote.strike,
        prev_norm_price: 100.0 * quote.prev_option_close / quote.prev_spot,
        rate,
    })
}

/// Where the 20-close window ends relative to the quote date.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAnchor {
    #[default]
    QuoteDate,
    PreviousDay,
}

/// Daily underlying closes for one symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnderlyingSeries {
    closes: BTreeMap<NaiveDate, f64>,
}

impl UnderlyingSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, date: NaiveDate, close: f64) {
        self.closes.insert(date, close);
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.closes.get(&date).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.closes.iter().map(|(d, c)| (*d, *c))
    }

    /// The `n_returns + 1` closes ending at `date` (or at the series day
    /// before it, for [`WindowAnchor::PreviousDay`]).
    pub fn window(&self, date: NaiveDate, anchor: WindowAnchor, n_returns: usize) -> Result<ReturnWindow> {
        let end = match anchor {
            WindowAnchor::QuoteDate => {
                if !self.closes.contains_key(&date) {
                    return Err(Error::Feature(format!("no underlying close on {date}")));
                }
                date
            }
            WindowAnchor::PreviousDay => *self
                .closes
                .range(..date)
                .next_back()
                .ok_or_else(|| Error::Feature(format!("no underlying close before {date}")))?
                .0,
        };
        let mut prices: Vec<f64> = self
            .closes
            .range(..=end)
            .rev()
            .take(n_returns + 1)
            .map(|(_, c)| *c)
            .collect();
        if prices.len() < n_returns + 1 {
            return Err(Error::Feature(format!(
                "only {} closes up to {end}, need {}",
                prices.len(),
                n_returns + 1
            )));
        }
        prices.reverse();
        ReturnWindow::new(prices)
    }
}

/// Builds one series per symbol from the underlying value reported on the
/// option rows themselves (first value seen per date).
pub fn series_from_quotes<'a>(quotes: impl IntoIterator<Item = &'a CleanOptionQuote>) -> BTreeMap<String, UnderlyingSeries> {
    let mut out: BTreeMap<String, UnderlyingSeries> = BTreeMap::new();
    for q in quotes {
        let s = out.entry(q.symbol.clone()).or_default();
        s.closes.entry(q.date).or_insert(q.spot);
    }
    out
}

#[derive(Debug, Deserialize)]
struct UnderlyingRow {
    #[serde(alias = "Symbol")]
    symbol: String,
    #[serde(alias = "Date")]
    date: String,
    #[serde(alias = "Close")]
    close: f64,
}

/// Reads `symbol,date,close` rows (dates in `date_format`).
pub fn read_underlying_csv(path: &std::path::Path, date_format: &str) -> Result<BTreeMap<String, UnderlyingSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out: BTreeMap<String, UnderlyingSeries> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<UnderlyingRow>().enumerate() {
        let rec = rec?;
        let date = NaiveDate::parse_from_str(&rec.date, date_format)
            .or_else(|_| NaiveDate::parse_from_str(&rec.date, "%Y-%m-%d"))
            .map_err(|e| Error::Parse {
                line: i as u64 + 2,
                msg: format!("bad date {:?}: {e}", rec.date),
            })?;
        out.entry(rec.symbol).or_default().insert(date, rec.close);
    }
    Ok(out)
}
