//! Featurised datasets: one row per contract-day with identifiers, the 23
//! features, the volatility estimate and both targets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    build_feature_vector, centered_log_returns, feature_names, historical_vol, UnderlyingSeries, WindowAnchor,
    FEATURE_COUNT, FEATURE_SCHEMA_VERSION, WINDOW_RETURNS,
};
use crate::gbt::FeatureMatrix;
use crate::ingest::CleanOptionQuote;
use crate::targets::TargetRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeConfig {
    pub anchor: WindowAnchor,
    /// Days per year used to turn the TTM day count into years.
    pub day_count: f64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            anchor: WindowAnchor::QuoteDate,
            day_count: 365.0,
        }
    }
}

/// Risk-free rate per quote date (decimal, per annum).
#[derive(Debug, Clone, PartialEq)]
pub enum RateSource {
    Constant(f64),
    /// Uses the latest rate on or before the quote date.
    Series(BTreeMap<NaiveDate, f64>),
}

impl RateSource {
    pub fn rate_on(&self, date: NaiveDate) -> Result<f64> {
        match self {
            RateSource::Constant(r) => Ok(*r),
            RateSource::Series(m) => m
                .range(..=date)
                .next_back()
                .map(|(_, r)| *r)
                .ok_or_else(|| Error::Feature(format!("no rate on or before {date}"))),
        }
    }

    /// Reads `date,yield` rows where the yield is in percent (divided by 100).
    pub fn read_percent_csv(path: &Path, date_format: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut m = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let (Some(d), Some(y)) = (rec.get(0), rec.get(1)) else {
                return Err(Error::Parse {
                    line,
                    msg: "expected date,yield".into(),
                });
            };
            let date = NaiveDate::parse_from_str(d, date_format)
                .or_else(|_| NaiveDate::parse_from_str(d, "%Y-%m-%d"))
                .map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad date {d:?}: {e}"),
                })?;
            let y: f64 = y.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad yield {y:?}"),
            })?;
            m.insert(date, y / 100.0);
        }
        Ok(RateSource::Series(m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedRow {
    pub symbol: String,
    pub date: NaiveDate,
    pub expiry: NaiveDate,
    pub strike: f64,
    pub spot: f64,
    pub option_close: f64,
    pub features: Vec<f64>,
    pub hist_vol: f64,
    pub ttm_years: f64,
    pub moneyness: f64,
    pub p_star: f64,
    pub rate: f64,
    pub hh_target: f64,
    /// Missing when the volatility estimate is zero.
    pub ds_target: Option<f64>,
}

impl FeaturizedRow {
    pub fn rho(&self) -> Option<f64> {
        (self.hist_vol > 0.0).then_some(self.hist_vol)
    }

    /// Centred returns order statistics F1..F19.
    pub fn order_stats(&self) -> &[f64] {
        &self.features[..WINDOW_RETURNS]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizeReport {
    pub input_quotes: usize,
    pub rows: usize,
    pub skipped_no_window: usize,
    pub skipped_no_rate: usize,
    pub degenerate_vol: usize,
}

pub fn featurize_quote(
    q: &CleanOptionQuote,
    series: &UnderlyingSeries,
    rate: f64,
    cfg: &FeaturizeConfig,
) -> Result<FeaturizedRow> {
    let window = series.window(q.date, cfg.anchor, WINDOW_RETURNS)?;
    let fv = build_feature_vector(q, &window, rate)?;
    let vol = historical_vol(&centered_log_returns(&window))?;
    let ttm_years = q.ttm_days as f64 / cfg.day_count;
    let t = TargetRecord::compute(q.option_close, q.spot, q.moneyness, ttm_years, rate, vol.rho)?;
    Ok(FeaturizedRow {
        symbol: q.symbol.clone(),
        date: q.date,
        expiry: q.expiry,
        strike: q.strike,
        spot: q.spot,
        option_close: q.option_close,
        features: fv.to_vec(),
        hist_vol: vol.hist_vol,
        ttm_years,
        moneyness: q.moneyness,
        p_star: t.p_star,
        rate,
        hh_target: t.hh_target,
        ds_target: t.ds_target,
    })
}

/// Featurises every quote whose symbol has enough underlying history; the
/// rest are skipped and counted. Output order follows input order.
pub fn featurize(
    quotes: &[CleanOptionQuote],
    series: &BTreeMap<String, UnderlyingSeries>,
    rates: &RateSource,
    cfg: &FeaturizeConfig,
) -> (Vec<FeaturizedRow>, FeaturizeReport) {
    let results: Vec<std::result::Result<FeaturizedRow, bool>> = quotes
        .par_iter()
        .map(|q| {
            let Ok(rate) = rates.rate_on(q.date) else {
                return Err(true);
            };
            let Some(s) = series.get(&q.symbol) else {
                return Err(false);
            };
            featurize_quote(q, s, rate, cfg).map_err(|_| false)
        })
        .collect();
    let mut report = FeaturizeReport {
        input_quotes: quotes.len(),
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => {
                if row.ds_target.is_none() {
                    report.degenerate_vol += 1;
                }
                rows.push(row);
            }
            Err(true) => report.skipped_no_rate += 1,
            Err(false) => report.skipped_no_window += 1,
        }
    }
    report.rows = rows.len();
    (rows, report)
}

pub fn feature_matrix<'a>(rows: impl IntoIterator<Item = &'a FeaturizedRow>) -> Result<FeatureMatrix> {
    let data: Vec<f64> = rows.into_iter().flat_map(|r| r.features.iter().copied()).collect();
    FeatureMatrix::new(FEATURE_COUNT, data)
}

const ID_COLUMNS: [&str; 6] = ["symbol", "date", "expiry", "strike", "spot", "option_close"];
const TAIL_COLUMNS: [&str; 7] = ["hist_vol", "ttm_years", "moneyness", "p_star", "rate_decimal", "hh_target", "ds_target"];

pub fn dataset_header() -> Vec<String> {
    ID_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(feature_names())
        .chain(TAIL_COLUMNS.iter().map(|s| s.to_string()))
        .collect()
}

/// Writes the featurised CSV. The first line is a `#` comment carrying the
/// feature schema version; numbers use the shortest round-trip formatting.
pub fn write_dataset_csv(path: &Path, rows: &[FeaturizedRow]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(file, "#{FEATURE_SCHEMA_VERSION}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(dataset_header())?;
    for r in rows {
        let mut rec: Vec<String> = vec![
            r.symbol.clone(),
            r.date.to_string(),
            r.expiry.to_string(),
            r.strike.to_string(),
            r.spot.to_string(),
            r.option_close.to_string(),
        ];
        rec.extend(r.features.iter().map(f64::to_string));
        rec.extend([
            r.hist_vol.to_string(),
            r.ttm_years.to_string(),
            r.moneyness.to_string(),
            r.p_star.to_string(),
            r.rate.to_string(),
            r.hh_target.to_string(),
            r.ds_target.map(|v| v.to_string()).unwrap_or_default(),
        ]);
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Vec<FeaturizedRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or_default().trim();
    if first != format!("#{FEATURE_SCHEMA_VERSION}") {
        return Err(Error::Schema(format!(
            "dataset schema {first:?} does not match {FEATURE_SCHEMA_VERSION:?}"
        )));
    }
    let body = lines.next().unwrap_or_default();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != dataset_header() {
        return Err(Error::Schema("featurised dataset header mismatch".into()));
    }
    let n_id = ID_COLUMNS.len();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 3;
        let num = |j: usize| -> Result<f64> {
            rec.get(j).unwrap_or("").parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number in column {}", j + 1),
            })
        };
        let date = |j: usize| -> Result<NaiveDate> {
            rec.get(j).unwrap_or("").parse::<NaiveDate>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad date in column {}", j + 1),
            })
        };
        let features = (0..FEATURE_COUNT).map(|k| num(n_id + k)).collect::<Result<Vec<_>>>()?;
        let t = n_id + FEATURE_COUNT;
        let ds_raw = rec.get(t + 6).unwrap_or("");
        rows.push(FeaturizedRow {
            symbol: rec.get(0).unwrap_or("").to_string(),
            date: date(1)?,
            expiry: date(2)?,
            strike: num(3)?,
            spot: num(4)?,
            option_close: num(5)?,
            features,
            hist_vol: num(t)?,
            ttm_years: num(t + 1)?,
            moneyness: num(t + 2)?,
            p_star: num(t + 3)?,
            rate: num(t + 4)?,
            hh_target: num(t + 5)?,
            ds_target: if ds_raw.is_empty() { None } else { Some(num(t + 6)?) },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quote(date: NaiveDate) -> CleanOptionQuote {
        CleanOptionQuote {
            symbol: "NIFTY".into(),
            date,
            expiry: date + chrono::Days::new(20),
            strike: 101.0,
            spot: 100.0,
            option_close: 2.0,
            prev_option_close: 1.9,
            prev_spot: 99.5,
            ttm_days: 20,
            moneyness: 1.01,
        }
    }

    fn series(n: u64) -> BTreeMap<String, UnderlyingSeries> {
        let mut s = UnderlyingSeries::new();
        let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        for k in 0..n {
            s.insert(d0 + chrono::Days::new(k), 100.0 * (1.0 + 0.01 * ((k * 7 % 5) as f64 - 2.0)));
        }
        BTreeMap::from([("NIFTY".to_string(), s)])
    }

    #[test]
    fn featurize_counts_skips() {
        let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let quotes = vec![quote(d0 + chrono::Days::new(5)), quote(d0 + chrono::Days::new(25))];
        let (rows, rep) = featurize(&quotes, &series(30), &RateSource::Constant(0.06), &FeaturizeConfig::default());
        assert_eq!(rows.len(), 1);
        assert_eq!(rep.skipped_no_window, 1);
        assert_eq!(rows[0].features.len(), FEATURE_COUNT);
        assert!((rows[0].ttm_years - 20.0 / 365.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let quotes: Vec<_> = (20..30).map(|k| quote(d0 + chrono::Days::new(k))).collect();
        let (rows, _) = featurize(&quotes, &series(30), &RateSource::Constant(0.0625), &FeaturizeConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_dataset_csv(&path, &rows).unwrap();
        assert_eq!(read_dataset_csv(&path).unwrap(), rows);
    }

    #[test]
    fn schema_version_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "#features-v0\nsymbol\n").unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn rate_series_lookup() {
        let d = |k| NaiveDate::from_ymd_opt(2019, 1, k).unwrap();
        let rs = RateSource::Series(BTreeMap::from([(d(2), 0.06), (d(10), 0.05)]));
        assert!(rs.rate_on(d(1)).is_err());
        assert_eq!(rs.rate_on(d(5)).unwrap(), 0.06);
        assert_eq!(rs.rate_on(d(10)).unwrap(), 0.05);
    }
}
