use std::path::Path;

use chrono::NaiveDate;
use proptest::prelude::*;

use optshift::ingest::{
    clean_and_filter, parse_chain_csv, parse_chain_reader, refilter, split_by_date, Cell, ColumnSchema,
    DropReason, FilterConfig, RawOptionRow, SplitDates,
};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/chain_small.csv")
}

#[test]
fn fixture_drop_accounting() {
    let rows = parse_chain_csv(&fixture(), &ColumnSchema::default()).unwrap();
    assert_eq!(rows.len(), 13);
    let (q, rep) = clean_and_filter(&rows, &FilterConfig::default());
    let expected = [
        (DropReason::NotCall, 1),
        (DropReason::Duplicate, 1),
        (DropReason::MissingField, 1),
        (DropReason::ZeroPrice, 2),
        (DropReason::Moneyness, 1),
        (DropReason::Maturity, 1),
        (DropReason::NoPreviousClose, 3),
    ];
    for (reason, n) in expected {
        assert_eq!(rep.count(reason), n, "{reason:?}");
    }
    assert_eq!(rep.retained, 3);
    assert_eq!(rep.input_rows, 13);

    // canonical order: symbol, date, expiry, strike
    let keys: Vec<(NaiveDate, f64)> = q.iter().map(|x| (x.date, x.strike)).collect();
    assert_eq!(keys, [(d(2019, 3, 15), 11400.0), (d(2019, 3, 18), 11400.0), (d(2019, 3, 18), 11500.0)]);
    // the previous-day join and the later duplicate winning
    assert_eq!((q[0].prev_option_close, q[0].prev_spot), (105.0, 11340.0));
    assert_eq!(q[1].option_close, 125.0);
    assert_eq!((q[1].prev_option_close, q[1].prev_spot), (120.0, 11420.0));
    assert_eq!((q[2].prev_option_close, q[2].prev_spot), (75.0, 11420.0));
    assert_eq!(q[1].ttm_days, 10);
    assert!((q[2].moneyness - 11500.0 / 11450.0).abs() < 1e-15);
}

#[test]
fn missing_column_is_a_schema_error() {
    let csv = "Symbol,Date,Expiry,Option Type,Strike Price,Open,Close\nX,01-Jan-2019,31-Jan-2019,CE,100,1,1\n";
    let err = parse_chain_reader(csv.as_bytes(), &ColumnSchema::default()).unwrap_err();
    assert!(err.to_string().contains("Underlying Value"), "{err}");
}

#[test]
fn bad_date_reports_line() {
    let csv = "Symbol,Date,Expiry,Option Type,Strike Price,Open,Close,Underlying Value\n\
               X,01-Jan-2019,31-Jan-2019,CE,100,1,1,100\nX,2019/01/02,31-Jan-2019,CE,100,1,1,100\n";
    let err = parse_chain_reader(csv.as_bytes(), &ColumnSchema::default()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn split_boundaries_are_inclusive() {
    let rows = parse_chain_csv(&fixture(), &ColumnSchema::default()).unwrap();
    let (q, _) = clean_and_filter(&rows, &FilterConfig::default());
    let dates = SplitDates {
        train_end: d(2019, 3, 15),
        typical_end: d(2019, 3, 17),
        atypical_end: d(2019, 3, 18),
    };
    let s = split_by_date(&q, &dates).unwrap();
    assert_eq!((s.train.len(), s.typical_test.len(), s.atypical_test.len(), s.beyond_end), (1, 0, 2, 0));
    let bad = SplitDates {
        typical_end: d(2019, 3, 10),
        ..dates
    };
    assert!(split_by_date(&q, &bad).is_err());
}

fn raw_rows() -> impl Strategy<Value = Vec<RawOptionRow>> {
    let row = (
        0u64..12,        // day offset
        0usize..2,       // symbol
        prop::bool::weighted(0.85),
        90.0..110.0f64,  // strike
        0u64..60,        // days to expiry
        prop::option::weighted(0.95, 0.0..10.0f64),
        prop::option::weighted(0.95, 95.0..105.0f64),
    );
    prop::collection::vec(row, 1..80).prop_map(|v| {
        v.into_iter()
            .map(|(day, sym, call, strike, exp, close, spot)| {
                let date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Days::new(day);
                RawOptionRow {
                    symbol: ["A", "B"][sym].into(),
                    date,
                    expiry: date + chrono::Days::new(exp),
                    option_type: if call { "CE".into() } else { "PE".into() },
                    strike: Cell::Value(strike.round()),
                    open: close.map_or(Cell::Missing, Cell::Value),
                    close: close.map_or(Cell::Missing, Cell::Value),
                    underlying_value: spot.map_or(Cell::Missing, Cell::Value),
                    prev_close_available: false,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn cleaned_quotes_satisfy_filters(rows in raw_rows()) {
        let cfg = FilterConfig::default();
        let (q, rep) = clean_and_filter(&rows, &cfg);
        let dropped: usize = rep.dropped.values().sum();
        prop_assert_eq!(dropped + rep.retained, rows.len());
        prop_assert_eq!(rep.retained, q.len());
        for x in &q {
            prop_assert!(cfg.in_band(x.strike, x.spot));
            prop_assert!(cfg.ttm_ok(x.ttm_days));
            prop_assert!(x.option_close > 0.0 && x.prev_option_close > 0.0 && x.prev_spot > 0.0);
            prop_assert!(x.date > NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() || x.prev_spot > 0.0);
        }
        // filtering is idempotent
        prop_assert_eq!(refilter(&q, &cfg), q);
    }

    #[test]
    fn narrower_band_keeps_a_subset(rows in raw_rows(), band in 0.0..0.04f64) {
        let wide = clean_and_filter(&rows, &FilterConfig::default()).0;
        let narrow = clean_and_filter(&rows, &FilterConfig { moneyness_band: band, ..Default::default() }).0;
        prop_assert!(narrow.iter().all(|q| wide.contains(q)));
    }
}
