//! Synthetic GBM markets labelled with BSM prices, used to stress the models
//! under controlled volatility shifts.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{featurize, FeaturizeConfig, FeaturizedRow, RateSource};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, predict_norm_prices, EvalConfig, ModelKind};
use crate::features::{UnderlyingSeries, TRADING_DAYS_PER_YEAR, WINDOW_RETURNS};
use crate::ingest::CleanOptionQuote;
use crate::pipeline::FittedSet;
use crate::pricing::{bsm_call, BsmInputs};

pub const SYNTH_SYMBOL: &str = "SYNTH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub mu: f64,
    pub sigma: f64,
    pub path_days: usize,
    pub rate: f64,
    pub ttm_set: Vec<i64>,
    /// Strikes as multiples of the day's spot.
    pub strike_grid: Vec<f64>,
    pub seed: u64,
    /// RNG stream; lets many scenarios share one master seed.
    pub stream: u64,
    pub s0: f64,
    pub start_date: NaiveDate,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            mu: 0.1,
            sigma: 0.2,
            path_days: 520,
            rate: 0.05,
            ttm_set: vec![10, 25, 40],
            strike_grid: vec![0.96, 0.98, 1.0, 1.02, 1.04],
            seed: 7,
            stream: 0,
            s0: 100.0,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
        }
    }
}

impl SynthScenario {
    pub fn with_sigma(&self, sigma: f64, stream: u64) -> Self {
        Self {
            sigma,
            stream,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("scenario sigma must be >= 0".into()));
        }
        if self.path_days <= WINDOW_RETURNS + 1 {
            return Err(Error::Config(format!("path_days must exceed {}", WINDOW_RETURNS + 1)));
        }
        if self.strike_grid.iter().any(|m| !(0.96 - 1e-12..=1.04 + 1e-12).contains(m)) {
            return Err(Error::Config("strike grid must stay within [0.96, 1.04]".into()));
        }
        if self.ttm_set.iter().any(|t| *t < 1) {
            return Err(Error::Config("ttm_set entries must be >= 1 day".into()));
        }
        Ok(())
    }
}

/// Exact GBM discretisation with daily steps of `1/255` years:
/// `S(k+1) = S(k) exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z_k)`.
pub fn simulate_gbm(scn: &SynthScenario) -> Vec<f64> {
    let dt = 1.0 / TRADING_DAYS_PER_YEAR;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    rng.set_stream(scn.stream);
    let drift = (scn.mu - 0.5 * scn.sigma * scn.sigma) * dt;
    let diffusion = scn.sigma * dt.sqrt();
    let mut path = Vec::with_capacity(scn.path_days);
    let mut log_s = 0.0;
    path.push(scn.s0);
    for _ in 1..scn.path_days {
        let z: f64 = StandardNormal.sample(&mut rng);
        log_s += drift + diffusion * z;
        path.push(scn.s0 * log_s.exp());
    }
    path
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub series: UnderlyingSeries,
    pub quotes: Vec<CleanOptionQuote>,
    /// Contract-days with a non-positive model price (only possible at zero vol).
    pub dropped_nonpositive: usize,
}

/// BSM-labelled near-ATM calls for every day with a full return window and a
/// previous day. Yesterday's price is the same contract one day longer-dated
/// at yesterday's spot.
pub fn label_options(path: &[f64], scn: &SynthScenario, day_count: f64) -> Result<SynthDataset> {
    if path.len() < WINDOW_RETURNS + 2 {
        return Err(Error::Config(format!(
            "path of {} days is too short to label",
            path.len()
        )));
    }
    let date_of = |k: usize| scn.start_date + chrono::Days::new(k as u64);
    let mut series = UnderlyingSeries::new();
    for (k, s) in path.iter().enumerate() {
        series.insert(date_of(k), *s);
    }
    let mut quotes = Vec::new();
    let mut dropped = 0;
    for t in (WINDOW_RETURNS + 1)..path.len() {
        let (spot, prev_spot) = (path[t], path[t - 1]);
        for &ttm in &scn.ttm_set {
            for &m in &scn.strike_grid {
                let strike = m * spot;
                let c = bsm_call(&BsmInputs::new(spot, strike, scn.rate, scn.sigma, ttm as f64 / day_count));
                let c_prev = bsm_call(&BsmInputs::new(
                    prev_spot,
                    strike,
                    scn.rate,
                    scn.sigma,
                    (ttm + 1) as f64 / day_count,
                ));
                if !(c > 0.0 && c_prev > 0.0) {
                    dropped += 1;
                    continue;
                }
                quotes.push(CleanOptionQuote {
                    symbol: SYNTH_SYMBOL.into(),
                    date: date_of(t),
                    expiry: date_of(t) + chrono::Days::new(ttm as u64),
                    strike,
                    spot,
                    option_close: c,
                    prev_option_close: c_prev,
                    prev_spot,
                    ttm_days: ttm,
                    moneyness: strike / spot,
                });
            }
        }
    }
    Ok(SynthDataset {
        series,
        quotes,
        dropped_nonpositive: dropped,
    })
}

/// Simulates, labels and featurises one scenario.
pub fn synthetic_rows(scn: &SynthScenario, fcfg: &FeaturizeConfig) -> Result<Vec<FeaturizedRow>> {
    scn.validate()?;
    let path = simulate_gbm(scn);
    let data = label_options(&path, scn, fcfg.day_count)?;
    let series = BTreeMap::from([(SYNTH_SYMBOL.to_string(), data.series)]);
    let (rows, _) = featurize(&data.quotes, &series, &RateSource::Constant(scn.rate), fcfg);
    Ok(rows)
}

/// Pools scenarios at several volatilities; scenario `i` uses RNG stream
/// `stream_base + i`.
pub fn pooled_rows(
    template: &SynthScenario,
    sigmas: &[f64],
    stream_base: u64,
    fcfg: &FeaturizeConfig,
) -> Result<Vec<FeaturizedRow>> {
    let parts = sigmas
        .par_iter()
        .enumerate()
        .map(|(i, &s)| synthetic_rows(&template.with_sigma(s, stream_base + i as u64), fcfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// 1%, 2%, ..., 30%.
pub fn default_sigma_grid() -> Vec<f64> {
    (1..=30).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub approach: String,
    pub training_set: String,
    pub sigma: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsemblePosition {
    Best,
    Between,
    Worst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub training_set: String,
    pub sigma: f64,
    pub position: EnsemblePosition,
}

/// Test scenarios for the volatility grid use streams starting here, clear
/// of any training streams.
pub const TEST_STREAM_BASE: u64 = 1_000_000;

fn run_curves(
    sets: &[FittedSet],
    kinds: &[ModelKind],
    sigma_grid: &[f64],
    template: &SynthScenario,
    fcfg: &FeaturizeConfig,
    eval: &EvalConfig,
) -> Result<Vec<CurveRow>> {
    let per_sigma = sigma_grid
        .par_iter()
        .enumerate()
        .map(|(i, &sigma)| -> Result<Vec<CurveRow>> {
            let rows = synthetic_rows(&template.with_sigma(sigma, TEST_STREAM_BASE + i as u64), fcfg)?;
            let actual: Vec<f64> = rows.iter().map(|r| r.hh_target).collect();
            let mut out = Vec::new();
            for set in sets {
                for &kind in kinds {
                    let preds = predict_norm_prices(kind, &rows, &set.models, eval)?;
                    let rep = build_report(kind.as_str(), "synthetic", &actual, &preds, None)?;
                    out.push(CurveRow {
                        approach: kind.as_str().to_string(),
                        training_set: set.name.clone(),
                        sigma,
                        rmse: rep.rmse,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sigma.into_iter().flatten().collect())
}

/// RMSE of the HH and DS models of each training set across the test
/// volatility grid.
pub fn run_experiment_1(
    sets: &[FittedSet],
    sigma_grid: &[f64],
    template: &SynthScenario,
    fcfg: &FeaturizeConfig,
    eval: &EvalConfig,
) -> Result<Vec<CurveRow>> {
    run_curves(sets, &[ModelKind::Hh, ModelKind::Ds], sigma_grid, template, fcfg, eval)
}

/// HH, DS and ensemble curves, plus where the ensemble ranks at each sigma.
pub fn run_experiment_2(
    sets: &[FittedSet],
    sigma_grid: &[f64],
    template: &SynthScenario,
    fcfg: &FeaturizeConfig,
    eval: &EvalConfig,
) -> Result<(Vec<CurveRow>, Vec<PositionRow>)> {
    let curves = run_curves(
        sets,
        &[ModelKind::Hh, ModelKind::Ds, ModelKind::E],
        sigma_grid,
        template,
        fcfg,
        eval,
    )?;
    let positions = ensemble_positions(&curves);
    Ok((curves, positions))
}

pub fn curve_value(curves: &[CurveRow], approach: &str, set: &str, sigma: f64) -> Option<f64> {
    curves
        .iter()
        .find(|c| c.approach == approach && c.training_set == set && (c.sigma - sigma).abs() < 1e-12)
        .map(|c| c.rmse)
}

pub fn ensemble_positions(curves: &[CurveRow]) -> Vec<PositionRow> {
    let mut out = Vec::new();
    for e in curves.iter().filter(|c| c.approach == "e") {
        let (Some(hh), Some(ds)) = (
            curve_value(curves, "hh", &e.training_set, e.sigma),
            curve_value(curves, "ds", &e.training_set, e.sigma),
        ) else {
            continue;
        };
        let position = if e.rmse < hh.min(ds) {
            EnsemblePosition::Best
        } else if e.rmse > hh.max(ds) {
            EnsemblePosition::Worst
        } else {
            EnsemblePosition::Between
        };
        out.push(PositionRow {
            training_set: e.training_set.clone(),
            sigma: e.sigma,
            position,
        });
    }
    out
}

pub fn write_curves_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_positions_csv(path: &Path, rows: &[PositionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
