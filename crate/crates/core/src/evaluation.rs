//! Error metrics and reports on the normalised-price scale, the BSM
//! benchmark predictor, and Q-Q tables for comparing return distributions.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{feature_matrix, FeaturizedRow};
use crate::ensemble::{blend, dsq, EnsembleParams};
use crate::error::{Error, Result};
use crate::gbt::TrainedModel;
use crate::pricing::{bsm_call, BsmInputs};
use crate::targets::norm_price_from_ds_target;

pub const HISTOGRAM_BINS: usize = 100;

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("error vector"));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hh,
    Ds,
    E,
    Bsm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hh => "hh",
            ModelKind::Ds => "ds",
            ModelKind::E => "e",
            ModelKind::Bsm => "bsm",
        }
    }

    pub const ALL: [ModelKind; 4] = [ModelKind::Hh, ModelKind::Ds, ModelKind::E, ModelKind::Bsm];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hh" => Ok(ModelKind::Hh),
            "ds" => Ok(ModelKind::Ds),
            "e" | "ensemble" => Ok(ModelKind::E),
            "bsm" => Ok(ModelKind::Bsm),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// The fitted pieces one training set contributes.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub hh: Option<TrainedModel>,
    pub ds: Option<TrainedModel>,
    pub ensemble: Option<EnsembleParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Floor predicted normalised prices at zero.
    pub floor_at_zero: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { floor_at_zero: true }
    }
}

/// BSM value with the row's historical volatility, as a normalised price.
pub fn bsm_benchmark_predict(rows: &[FeaturizedRow]) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            let c = bsm_call(&BsmInputs::new(r.spot, r.strike, r.rate, r.hist_vol, r.ttm_years));
            100.0 * c / r.spot
        })
        .collect()
}

fn model_for(models: &ModelSet, kind: ModelKind) -> Result<&TrainedModel> {
    let m = match kind {
        ModelKind::Hh => models.hh.as_ref(),
        _ => models.ds.as_ref(),
    };
    m.ok_or_else(|| Error::Model(format!("{kind} model not loaded")))
}

fn raw_predictions(model: &TrainedModel, rows: &[FeaturizedRow]) -> Result<Vec<f64>> {
    let x = feature_matrix(rows)?;
    if rows.first().is_some_and(|r| r.features.len() != model.feature_count) {
        return Err(Error::Schema(format!(
            "model expects {} features, dataset has {}",
            model.feature_count,
            rows[0].features.len()
        )));
    }
    model.predict(&x)
}

/// DS target predictions turned back into normalised prices; `None` where
/// the volatility scalar is degenerate.
pub fn ds_norm_predictions(model: &TrainedModel, rows: &[FeaturizedRow]) -> Result<Vec<Option<f64>>> {
    let u = raw_predictions(model, rows)?;
    rows.iter()
        .zip(u)
        .map(|(r, u)| match r.rho() {
            Some(rho) => norm_price_from_ds_target(u, r.moneyness, r.ttm_years, r.rate, rho).map(Some),
            None => Ok(None),
        })
        .collect()
}

/// Normalised-price predictions for each row; `None` marks rows a model
/// cannot price (DS with a zero volatility estimate).
pub fn predict_norm_prices(
    kind: ModelKind,
    rows: &[FeaturizedRow],
    models: &ModelSet,
    cfg: &EvalConfig,
) -> Result<Vec<Option<f64>>> {
    let preds: Vec<Option<f64>> = match kind {
        ModelKind::Bsm => bsm_benchmark_predict(rows).into_iter().map(Some).collect(),
        ModelKind::Hh => raw_predictions(model_for(models, kind)?, rows)?.into_iter().map(Some).collect(),
        ModelKind::Ds => ds_norm_predictions(model_for(models, kind)?, rows)?,
        ModelKind::E => {
            let params = models
                .ensemble
                .as_ref()
                .ok_or_else(|| Error::Model("ensemble parameters not loaded".into()))?;
            let hh = raw_predictions(model_for(models, ModelKind::Hh)?, rows)?;
            let ds = ds_norm_predictions(model_for(models, ModelKind::Ds)?, rows)?;
            let floor = |v: f64| if cfg.floor_at_zero { v.max(0.0) } else { v };
            rows.iter()
                .zip(hh.into_iter().zip(ds))
                .map(|(r, (h, d))| match d {
                    Some(d) => Ok(Some(blend(floor(h), floor(d), dsq(r.hist_vol, params.sigma0)?, params))),
                    None => Ok(Some(h)),
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(preds
        .into_iter()
        .map(|p| p.map(|v| if cfg.floor_at_zero { v.max(0.0) } else { v }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `HISTOGRAM_BINS + 1` equal-width edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `range` (or the data range). A degenerate range
    /// is widened by 0.5 either side.
    pub fn new(values: &[f64], range: Option<(f64, f64)>) -> Self {
        let (mut lo, mut hi) = range.unwrap_or_else(|| {
            values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)))
        });
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (-0.5, 0.5);
        }
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|k| lo + k as f64 * width).collect();
        let mut h = Self {
            edges,
            counts: vec![0; HISTOGRAM_BINS],
        };
        for v in values {
            let k = h.bin_of(*v);
            h.counts[k] += 1;
        }
        h
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let lo = self.edges[0];
        let width = (self.edges[HISTOGRAM_BINS] - lo) / HISTOGRAM_BINS as f64;
        (((v - lo) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub split: String,
    pub rmse: f64,
    pub n: usize,
    /// Rows the model could not price.
    pub excluded: usize,
    /// `actual - predicted` normalised prices.
    pub residuals: Vec<f64>,
    pub histogram: Histogram,
}

/// The one place residuals are formed, so every model shares the sign and scale convention.
pub fn build_report(
    model_id: &str,
    split: &str,
    actual: &[f64],
    predicted: &[Option<f64>],
    hist_range: Option<(f64, f64)>,
) -> Result<EvalReport> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    let residuals: Vec<f64> = actual
        .iter()
        .zip(predicted)
        .filter_map(|(a, p)| p.map(|p| a - p))
        .collect();
    let rmse = rmse(&residuals)?;
    Ok(EvalReport {
        model_id: model_id.to_string(),
        split: split.to_string(),
        rmse,
        n: residuals.len(),
        excluded: actual.len() - residuals.len(),
        histogram: Histogram::new(&residuals, hist_range),
        residuals,
    })
}

pub fn evaluate_model(
    kind: ModelKind,
    model_id: &str,
    split: &str,
    rows: &[FeaturizedRow],
    models: &ModelSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let preds = predict_norm_prices(kind, rows, models, cfg)?;
    let actual: Vec<f64> = rows.iter().map(|r| r.hh_target).collect();
    build_report(model_id, split, &actual, &preds, None)
}

/// Re-bins a set of reports over their pooled residual range so the
/// histograms can be overlaid.
pub fn pool_histograms(reports: &mut [EvalReport]) {
    let (lo, hi) = reports
        .iter()
        .flat_map(|r| r.residuals.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    for r in reports.iter_mut() {
        r.histogram = Histogram::new(&r.residuals, Some((lo, hi)));
    }
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (k, c) in self.histogram.counts.iter().enumerate() {
            w.write_record([
                self.histogram.edges[k].to_string(),
                self.histogram.edges[k + 1].to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Linearly interpolated empirical quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub percentile: u32,
    pub quantile_a: f64,
    pub quantile_b: f64,
}

/// Paired empirical quantiles at the 1st..99th percentiles.
pub fn qq_export(sample_a: &[f64], sample_b: &[f64]) -> Result<Vec<QqPoint>> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::Empty("q-q sample"));
    }
    let sort = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sort(sample_a), sort(sample_b));
    Ok((1..=99)
        .map(|p| {
            let q = p as f64 / 100.0;
            QqPoint {
                percentile: p,
                quantile_a: quantile_sorted(&a, q),
                quantile_b: quantile_sorted(&b, q),
            }
        })
        .collect())
}

pub fn write_qq_csv(path: &Path, points: &[QqPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
