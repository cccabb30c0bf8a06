mod common;

use chrono::NaiveDate;
use proptest::prelude::*;

use optshift::features::{
    build_feature_vector, centered_log_returns, feature_names, historical_vol, order_statistics, ReturnWindow,
    UnderlyingSeries, WindowAnchor, FEATURE_COUNT, WINDOW_RETURNS,
};
use optshift::ingest::CleanOptionQuote;

fn path_strategy() -> impl Strategy<Value = Vec<f64>> {
    (1.0..1000.0f64, prop::collection::vec(-0.2..0.2f64, WINDOW_RETURNS)).prop_map(|(p0, steps)| {
        let mut p = p0;
        let mut out = vec![p0];
        for s in steps {
            p *= s.exp();
            out.push(p);
        }
        out
    })
}

fn quote(spot: f64, strike: f64, close: f64, prev_close: f64, prev_spot: f64) -> CleanOptionQuote {
    CleanOptionQuote {
        symbol: "X".into(),
        date: NaiveDate::from_ymd_opt(2019, 5, 2).unwrap(),
        expiry: NaiveDate::from_ymd_opt(2019, 5, 30).unwrap(),
        strike,
        spot,
        option_close: close,
        prev_option_close: prev_close,
        prev_spot,
        ttm_days: 28,
        moneyness: strike / spot,
    }
}

proptest! {
    #[test]
    fn centered_returns_telescope(prices in path_strategy()) {
        let r = centered_log_returns(&ReturnWindow::new(prices).unwrap());
        prop_assert_eq!(r.len(), WINDOW_RETURNS);
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn order_statistics_match_insertion_sort(v in prop::collection::vec(-1.0..1.0f64, 0..60)) {
        let mut oracle = v.clone();
        common::insertion_sort(&mut oracle);
        prop_assert_eq!(order_statistics(&v), oracle);
    }

    #[test]
    fn feature_vector_is_scale_free(
        prices in path_strategy(), m in 0.96..1.04f64, c in 1e-3..1e3f64, rate in 0.0..0.1f64,
    ) {
        let w = ReturnWindow::new(prices.clone()).unwrap();
        let s = prices[WINDOW_RETURNS];
        let q = quote(s, s * m, 0.02 * s, 0.021 * prices[WINDOW_RETURNS - 1], prices[WINDOW_RETURNS - 1]);
        let qc = quote(c * s, c * s * m, c * q.option_close, c * q.prev_option_close, c * q.prev_spot);
        let a = build_feature_vector(&q, &w, rate).unwrap().to_vec();
        let b = build_feature_vector(&qc, &w.scaled(c).unwrap(), rate).unwrap().to_vec();
        prop_assert_eq!(a.len(), FEATURE_COUNT);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn historical_vol_is_permutation_invariant(
        v in prop::collection::vec(-0.05..0.05f64, 2..40), seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = v.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = historical_vol(&v).unwrap();
        let b = historical_vol(&shuffled).unwrap();
        prop_assert_eq!(a.hist_vol.to_bits(), b.hist_vol.to_bits());
    }

    #[test]
    fn historical_vol_matches_two_pass_formula(v in prop::collection::vec(-0.05..0.05f64, 2..40)) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = (var * 255.0).sqrt();
        prop_assert!((historical_vol(&v).unwrap().hist_vol - expected).abs() <= 1e-12 * expected.max(1e-12));
    }
}

#[test]
fn constant_path_gives_degenerate_vol() {
    let w = ReturnWindow::new(vec![50.0; WINDOW_RETURNS + 1]).unwrap();
    let v = historical_vol(&centered_log_returns(&w)).unwrap();
    assert_eq!(v.hist_vol, 0.0);
    assert!(v.rho.is_none());
}

#[test]
fn feature_names_are_stable() {
    let names = feature_names();
    assert_eq!(names.len(), FEATURE_COUNT);
    assert_eq!(names[0], "F1");
    assert_eq!(names[18], "F19");
    assert_eq!(&names[19..], ["ttm_days", "inv_moneyness", "prev_norm_price", "rate"]);
}

#[test]
fn series_window_needs_enough_history() {
    let mut s = UnderlyingSeries::new();
    let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    for k in 0..25u64 {
        s.insert(d0 + chrono::Days::new(k), 100.0 + k as f64);
    }
    let last = d0 + chrono::Days::new(24);
    let w = s.window(last, WindowAnchor::QuoteDate, WINDOW_RETURNS).unwrap();
    assert_eq!(w.prices().len(), WINDOW_RETURNS + 1);
    assert_eq!(*w.prices().last().unwrap(), 124.0);
    let early = d0 + chrono::Days::new(10);
    assert!(s.window(early, WindowAnchor::QuoteDate, WINDOW_RETURNS).is_err());
}
