//! Training and calibration steps shared by the CLI and the synthetic experiments.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::{feature_matrix, FeaturizedRow};
use crate::ensemble::{calibrate, dsq, sigma0_of_training_set, EnsembleParams, GridResult, GridSpec};
use crate::error::{Error, Result};
use crate::evaluation::{ds_norm_predictions, EvalConfig, ModelKind, ModelSet};
use crate::gbt::{fit, GbtConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Hh,
    Ds,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Hh => "hh",
            Approach::Ds => "ds",
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hh" => Ok(Approach::Hh),
            "ds" => Ok(Approach::Ds),
            other => Err(Error::Config(format!("unknown approach {other:?}"))),
        }
    }
}

/// Rows usable for an approach: DS needs a non-degenerate volatility scalar.
pub fn training_rows(rows: &[FeaturizedRow], approach: Approach) -> Vec<&FeaturizedRow> {
    rows.iter()
        .filter(|r| approach == Approach::Hh || r.ds_target.is_some())
        .collect()
}

pub fn train_approach(rows: &[FeaturizedRow], approach: Approach, cfg: &GbtConfig) -> Result<TrainedModel> {
    let used = training_rows(rows, approach);
    if used.len() < 2 {
        return Err(Error::Empty("training rows"));
    }
    let x = feature_matrix(used.iter().copied())?;
    let y: Vec<f64> = used
        .iter()
        .map(|r| match approach {
            Approach::Hh => r.hh_target,
            Approach::Ds => r.ds_target.unwrap_or_default(),
        })
        .collect();
    fit(&x, &y, cfg)
}

/// Splits rows so that the last `fraction` of distinct dates becomes the
/// calibration holdout.
pub fn holdout_tail(rows: &[FeaturizedRow], fraction: f64) -> (Vec<FeaturizedRow>, Vec<FeaturizedRow>) {
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    if dates.is_empty() || fraction <= 0.0 {
        return (rows.to_vec(), Vec::new());
    }
    let n_hold = ((dates.len() as f64 * fraction).round() as usize).clamp(1, dates.len());
    let cutoff = dates[dates.len() - n_hold];
    rows.iter().cloned().partition(|r| r.date < cutoff)
}

/// Grid-calibrates the blend on `sample`. Both constituents are compared on
/// the normalised-price scale; rows without a DS prediction are skipped.
pub fn calibrate_ensemble(
    models: &ModelSet,
    sigma0: f64,
    sample: &[FeaturizedRow],
    grid: &GridSpec,
    eval: &EvalConfig,
) -> Result<(EnsembleParams, GridResult)> {
    let hh_model = models.hh.as_ref().ok_or_else(|| Error::Model("hh model missing".into()))?;
    let ds_model = models.ds.as_ref().ok_or_else(|| Error::Model("ds model missing".into()))?;
    let hh = hh_model.predict(&feature_matrix(sample)?)?;
    let ds = ds_norm_predictions(ds_model, sample)?;
    let floor = |v: f64| if eval.floor_at_zero { v.max(0.0) } else { v };

    let (mut h, mut d, mut q, mut truth) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((r, hp), dp) in sample.iter().zip(hh).zip(ds) {
        if let Some(dp) = dp {
            h.push(floor(hp));
            d.push(floor(dp));
            q.push(dsq(r.hist_vol, sigma0)?);
            truth.push(r.hh_target);
        }
    }
    let res = calibrate(grid, &h, &d, &q, &truth)?;
    Ok((
        EnsembleParams {
            lambda1: res.argmin.0,
            lambda2: res.argmin.1,
            sigma0,
        },
        res,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gbt: GbtConfig,
    pub grid: GridSpec,
    /// Fraction of the latest training dates held out for blend calibration.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gbt: GbtConfig::default(),
            grid: GridSpec::default(),
            holdout_fraction: 0.2,
        }
    }
}

/// Everything fitted for one training set.
#[derive(Debug, Clone)]
pub struct FittedSet {
    pub name: String,
    pub models: ModelSet,
    pub grid: GridResult,
}

/// Fits HH and DS on the leading dates of `rows` and calibrates the blend on
/// the held-out tail.
pub fn fit_training_set(name: &str, rows: &[FeaturizedRow], cfg: &TrainConfig, eval: &EvalConfig) -> Result<FittedSet> {
    let (fit_rows, hold) = holdout_tail(rows, cfg.holdout_fraction);
    if hold.is_empty() {
        return Err(Error::Empty("calibration holdout"));
    }
    let sigma0 = sigma0_of_training_set(&fit_rows.iter().map(|r| r.hist_vol).collect::<Vec<_>>())?;
    let mut models = ModelSet {
        hh: Some(train_approach(&fit_rows, Approach::Hh, &cfg.gbt)?),
        ds: Some(train_approach(&fit_rows, Approach::Ds, &cfg.gbt)?),
        ensemble: None,
    };
    let (params, grid) = calibrate_ensemble(&models, sigma0, &hold, &cfg.grid, eval)?;
    models.ensemble = Some(params);
    Ok(FittedSet {
        name: name.to_string(),
        models,
        grid,
    })
}

/// Which approaches a training set can be evaluated with.
pub fn available_kinds(models: &ModelSet) -> Vec<ModelKind> {
    let mut v = Vec::new();
    if models.hh.is_some() {
        v.push(ModelKind::Hh);
    }
    if models.ds.is_some() {
        v.push(ModelKind::Ds);
    }
    if models.hh.is_some() && models.ds.is_some() && models.ensemble.is_some() {
        v.push(ModelKind::E);
    }
    v
}
