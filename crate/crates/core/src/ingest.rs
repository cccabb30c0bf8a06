//! Option-chain CSV ingestion: parsing, cleaning, previous-day join and the
//! date-based train / typical / atypical split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A numeric CSV cell that may hold the archive's blank marker (`-`) or
/// otherwise unparseable text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Value(f64),
    Missing,
}

impl Cell {
    pub fn parse(raw: &str) -> Self {
        let t = raw.trim();
        if t.is_empty() || t == "-" {
            return Cell::Missing;
        }
        match t.replace(',', "").parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Value(v),
            _ => Cell::Missing,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(v),
            Cell::Missing => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawOptionRow {
    pub symbol: String,
    pub date: NaiveDate,
    pub expiry: NaiveDate,
    /// As written in the file, upper-cased (`CE` for calls).
    pub option_type: String,
    pub strike: Cell,
    pub open: Cell,
    pub close: Cell,
    pub underlying_value: Cell,
    /// Whether the same contract has a row on the symbol's previous trading day.
    pub prev_close_available: bool,
}

impl RawOptionRow {
    pub fn is_call(&self) -> bool {
        self.option_type == "CE"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanOptionQuote {
    pub symbol: String,
    pub date: NaiveDate,
    pub expiry: NaiveDate,
    pub strike: f64,
    pub spot: f64,
    pub option_close: f64,
    pub prev_option_close: f64,
    pub prev_spot: f64,
    pub ttm_days: i64,
    /// `K / S`.
    pub moneyness: f64,
}

/// Maps the logical columns onto the header names of a particular archive vintage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub symbol: String,
    pub date: String,
    pub expiry: String,
    pub option_type: String,
    pub strike: String,
    pub open: String,
    pub close: String,
    pub underlying_value: String,
    /// chrono format string shared by the date and expiry columns.
    pub date_format: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            symbol: "Symbol".into(),
            date: "Date".into(),
            expiry: "Expiry".into(),
            option_type: "Option Type".into(),
            strike: "Strike Price".into(),
            open: "Open".into(),
            close: "Close".into(),
            underlying_value: "Underlying Value".into(),
            date_format: "%d-%b-%Y".into(),
        }
    }
}

fn parse_date(raw: &str, fmt: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), fmt).map_err(|e| Error::Parse {
        line,
        msg: format!("bad date {raw:?} for format {fmt:?}: {e}"),
    })
}

pub fn parse_chain_csv(path: &Path, schema: &ColumnSchema) -> Result<Vec<RawOptionRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_chain_reader(file, schema)
}

pub fn parse_chain_reader<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<Vec<RawOptionRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let idx = [
        find(&schema.symbol)?,
        find(&schema.date)?,
        find(&schema.expiry)?,
        find(&schema.option_type)?,
        find(&schema.strike)?,
        find(&schema.open)?,
        find(&schema.close)?,
        find(&schema.underlying_value)?,
    ];

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("");
        rows.push(RawOptionRow {
            symbol: get(idx[0]).to_string(),
            date: parse_date(get(idx[1]), &schema.date_format, line)?,
            expiry: parse_date(get(idx[2]), &schema.date_format, line)?,
            option_type: get(idx[3]).to_ascii_uppercase(),
            strike: Cell::parse(get(idx[4])),
            open: Cell::parse(get(idx[5])),
            close: Cell::parse(get(idx[6])),
            underlying_value: Cell::parse(get(idx[7])),
            prev_close_available: false,
        });
    }
    mark_prev_close(&mut rows);
    Ok(rows)
}

type ContractKey = (String, NaiveDate, u64);

fn contract_key(symbol: &str, expiry: NaiveDate, strike: f64) -> ContractKey {
    (symbol.to_string(), expiry, strike.to_bits())
}

/// Previous trading day per (symbol, date), from the dates present in `rows`.
fn previous_trading_days<'a>(
    rows: impl Iterator<Item = (&'a str, NaiveDate)>,
) -> HashMap<(String, NaiveDate), NaiveDate> {
    let mut dates: BTreeMap<&str, BTreeSet<NaiveDate>> = BTreeMap::new();
    for (sym, d) in rows {
        dates.entry(sym).or_default().insert(d);
    }
    let mut prev = HashMap::new();
    for (sym, set) in dates {
        let mut last = None;
        for d in set {
            if let Some(p) = last {
                prev.insert((sym.to_string(), d), p);
            }
            last = Some(d);
        }
    }
    prev
}

fn mark_prev_close(rows: &mut [RawOptionRow]) {
    let prev_day = previous_trading_days(rows.iter().map(|r| (r.symbol.as_str(), r.date)));
    let present: BTreeSet<(ContractKey, NaiveDate)> = rows
        .iter()
        .filter_map(|r| {
            r.strike
                .value()
                .map(|k| (contract_key(&r.symbol, r.expiry, k), r.date))
        })
        .collect();
    for r in rows.iter_mut() {
        r.prev_close_available = match (r.strike.value(), prev_day.get(&(r.symbol.clone(), r.date))) {
            (Some(k), Some(&p)) => present.contains(&(contract_key(&r.symbol, r.expiry, k), p)),
            _ => false,
        };
    }
}

/// Which ratio the moneyness band applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandOrientation {
    /// `|K / S - 1| <= band`.
    StrikeOverSpot,
    /// `|1 - S / K| <= band`.
    SpotOverStrike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub moneyness_band: f64,
    pub orientation: BandOrientation,
    pub min_ttm_days: i64,
    pub max_ttm_days: i64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            moneyness_band: 0.04,
            orientation: BandOrientation::StrikeOverSpot,
            min_ttm_days: 3,
            max_ttm_days: 45,
        }
    }
}

impl FilterConfig {
    pub fn in_band(&self, strike: f64, spot: f64) -> bool {
        let ratio = match self.orientation {
            BandOrientation::StrikeOverSpot => strike / spot,
            BandOrientation::SpotOverStrike => spot / strike,
        };
        // relative slack so that K/S = 1.04 computed in floating point stays in
        (ratio - 1.0).abs() <= self.moneyness_band * (1.0 + 1e-12)
    }

    pub fn ttm_ok(&self, ttm_days: i64) -> bool {
        (self.min_ttm_days..=self.max_ttm_days).contains(&ttm_days)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotCall,
    Duplicate,
    MissingField,
    ZeroPrice,
    Moneyness,
    Maturity,
    NoPreviousClose,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NotCall => "not_call",
            DropReason::Duplicate => "duplicate",
            DropReason::MissingField => "missing_field",
            DropReason::ZeroPrice => "zero_price",
            DropReason::Moneyness => "moneyness",
            DropReason::Maturity => "maturity",
            DropReason::NoPreviousClose => "no_previous_close",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub input_rows: usize,
    pub retained: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

impl DropReport {
    fn drop(&mut self, reason: DropReason) {
        *self.dropped.entry(reason).or_default() += 1;
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.dropped.get(&reason).copied().unwrap_or(0)
    }
}

impl fmt::Display for DropReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input_rows = {}", self.input_rows)?;
        for reason in [
            DropReason::NotCall,
            DropReason::Duplicate,
            DropReason::MissingField,
            DropReason::ZeroPrice,
            DropReason::Moneyness,
            DropReason::Maturity,
            DropReason::NoPreviousClose,
        ] {
            writeln!(f, "dropped.{} = {}", reason.as_str(), self.count(reason))?;
        }
        writeln!(f, "retained = {}", self.retained)
    }
}

struct ValidRow<'a> {
    row: &'a RawOptionRow,
    strike: f64,
    close: f64,
    spot: f64,
}

/// Cleans raw chain rows into quotes with the previous trading day's option
/// and underlying close joined in.
///
/// Rows are dropped for: non-call type, duplicate contract-day (last one
/// wins), a `-` strike or underlying, zero/missing open or close, moneyness
/// outside the band, TTM outside the bounds, and no valid close for the same
/// contract on the symbol's previous trading day.
pub fn clean_and_filter(rows: &[RawOptionRow], cfg: &FilterConfig) -> (Vec<CleanOptionQuote>, DropReport) {
    let mut report = DropReport {
        input_rows: rows.len(),
        ..Default::default()
    };

    // last occurrence of each contract-day wins
    let mut last_idx: HashMap<(String, NaiveDate, NaiveDate, u64), usize> = HashMap::new();
    let mut strike_missing_idx = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if !r.is_call() {
            continue;
        }
        match r.strike.value() {
            Some(k) => {
                if last_idx
                    .insert((r.symbol.clone(), r.date, r.expiry, k.to_bits()), i)
                    .is_some()
                {
                    report.drop(DropReason::Duplicate);
                }
            }
            None => strike_missing_idx.push(i),
        }
    }
    if report.count(DropReason::Duplicate) > 0 {
        log::info!(
            "{} duplicate contract-day rows replaced by later occurrences",
            report.count(DropReason::Duplicate)
        );
    }
    let mut kept: Vec<usize> = last_idx.into_values().chain(strike_missing_idx).collect();
    kept.sort_unstable();
    let n_calls = rows.iter().filter(|r| r.is_call()).count();
    for _ in 0..rows.len() - n_calls {
        report.drop(DropReason::NotCall);
    }

    let mut valid: Vec<ValidRow<'_>> = Vec::with_capacity(kept.len());
    for i in kept {
        let r = &rows[i];
        let (Some(strike), Some(spot)) = (r.strike.value(), r.underlying_value.value()) else {
            report.drop(DropReason::MissingField);
            continue;
        };
        let (open, close) = (r.open.value(), r.close.value());
        if !matches!(open, Some(o) if o != 0.0) || !matches!(close, Some(c) if c > 0.0) || !(spot > 0.0) || !(strike > 0.0) {
            report.drop(DropReason::ZeroPrice);
            continue;
        }
        valid.push(ValidRow {
            row: r,
            strike,
            close: close.unwrap_or_default(),
            spot,
        });
    }

    let prev_day = previous_trading_days(rows.iter().map(|r| (r.symbol.as_str(), r.date)));
    let by_contract_day: HashMap<(ContractKey, NaiveDate), (f64, f64)> = valid
        .iter()
        .map(|v| {
            (
                (contract_key(&v.row.symbol, v.row.expiry, v.strike), v.row.date),
                (v.close, v.spot),
            )
        })
        .collect();

    let mut out = Vec::new();
    for v in &valid {
        let r = v.row;
        if !cfg.in_band(v.strike, v.spot) {
            report.drop(DropReason::Moneyness);
            continue;
        }
        let ttm_days = (r.expiry - r.date).num_days();
        if !cfg.ttm_ok(ttm_days) {
            report.drop(DropReason::Maturity);
            continue;
        }
        let prev = prev_day
            .get(&(r.symbol.clone(), r.date))
            .and_then(|p| by_contract_day.get(&(contract_key(&r.symbol, r.expiry, v.strike), *p)));
        let Some(&(prev_close, prev_spot)) = prev else {
            report.drop(DropReason::NoPreviousClose);
            continue;
        };
        out.push(CleanOptionQuote {
            symbol: r.symbol.clone(),
            date: r.date,
            expiry: r.expiry,
            strike: v.strike,
            spot: v.spot,
            option_close: v.close,
            prev_option_close: prev_close,
            prev_spot,
            ttm_days,
            moneyness: v.strike / v.spot,
        });
    }
    sort_quotes(&mut out);
    report.retained = out.len();
    (out, report)
}

/// Canonical quote order: symbol, date, expiry, strike.
pub fn sort_quotes(quotes: &mut [CleanOptionQuote]) {
    quotes.sort_by(|a, b| {
        (&a.symbol, a.date, a.expiry)
            .cmp(&(&b.symbol, b.date, b.expiry))
            .then(a.strike.total_cmp(&b.strike))
    });
}

/// Re-applies the per-quote filters to already cleaned quotes.
pub fn refilter(quotes: &[CleanOptionQuote], cfg: &FilterConfig) -> Vec<CleanOptionQuote> {
    quotes
        .iter()
        .filter(|q| {
            q.spot > 0.0
                && q.option_close > 0.0
                && q.prev_option_close > 0.0
                && q.prev_spot > 0.0
                && cfg.in_band(q.strike, q.spot)
                && cfg.ttm_ok(q.ttm_days)
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDates {
    pub train_end: NaiveDate,
    pub typical_end: NaiveDate,
    pub atypical_end: NaiveDate,
}

impl Default for SplitDates {
    fn default() -> Self {
        Self {
            train_end: NaiveDate::from_ymd_opt(2019, 8, 31).unwrap(),
            typical_end: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            atypical_end: NaiveDate::from_ymd_opt(2020, 4, 30).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Typical,
    Atypical,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Typical => "typical",
            SplitKind::Atypical => "atypical",
        }
    }

    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Typical, SplitKind::Atypical];
}

impl std::str::FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "typical" => Ok(SplitKind::Typical),
            "atypical" => Ok(SplitKind::Atypical),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<CleanOptionQuote>,
    pub typical_test: Vec<CleanOptionQuote>,
    pub atypical_test: Vec<CleanOptionQuote>,
    /// Quotes dated after the atypical window; not part of any split.
    pub beyond_end: usize,
    pub split_dates: Option<SplitDates>,
}

impl DatasetSplit {
    pub fn get(&self, kind: SplitKind) -> &[CleanOptionQuote] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Typical => &self.typical_test,
            SplitKind::Atypical => &self.atypical_test,
        }
    }
}

/// Partitions by quote date: `date <= train_end` is training,
/// `(train_end, typical_end]` typical test, `(typical_end, atypical_end]`
/// atypical test.
pub fn split_by_date(quotes: &[CleanOptionQuote], dates: &SplitDates) -> Result<DatasetSplit> {
    if !(dates.train_end < dates.typical_end && dates.typical_end < dates.atypical_end) {
        return Err(Error::Config(format!("split boundaries must be strictly increasing: {dates:?}")));
    }
    let mut split = DatasetSplit {
        split_dates: Some(*dates),
        ..Default::default()
    };
    for q in quotes {
        if q.date <= dates.train_end {
            split.train.push(q.clone());
        } else if q.date <= dates.typical_end {
            split.typical_test.push(q.clone());
        } else if q.date <= dates.atypical_end {
            split.atypical_test.push(q.clone());
        } else {
            split.beyond_end += 1;
        }
    }
    for kind in SplitKind::ALL {
        if split.get(kind).is_empty() {
            log::warn!("split {} is empty", kind.as_str());
        }
    }
    Ok(split)
}

pub const QUOTE_COLUMNS: [&str; 10] = [
    "symbol",
    "date",
    "expiry",
    "strike",
    "spot",
    "option_close",
    "prev_option_close",
    "prev_spot",
    "ttm_days",
    "moneyness",
];

pub fn write_quotes_csv(path: &Path, quotes: &[CleanOptionQuote]) -> Result<()> {
    // header written explicitly so an empty split still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(QUOTE_COLUMNS)?;
    for q in quotes {
        w.serialize(q)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_quotes_csv(path: &Path) -> Result<Vec<CleanOptionQuote>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != QUOTE_COLUMNS {
        return Err(Error::Schema(format!("unexpected quote header {headers:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
