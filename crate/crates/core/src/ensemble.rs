//! Domain-shift-quotient weighted blending of the HH and DS predictions and
//! the grid calibration of the blend parameters.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Mean historical volatility of the training rows.
    pub sigma0: f64,
}

/// `|sigma_i - sigma0| / sigma0`.
pub fn dsq(sigma_i: f64, sigma0: f64) -> Result<f64> {
    if !(sigma0 > 0.0) {
        return Err(Error::domain(format!("sigma0 must be > 0, got {sigma0}")));
    }
    Ok((sigma_i - sigma0).abs() / sigma0)
}

/// Ratio of the DS weight to the HH weight, `lambda1 * dsq^lambda2`, with `0^0 = 1`.
pub fn weight_ratio(dsq_value: f64, lambda1: f64, lambda2: f64) -> f64 {
    if lambda2 == 0.0 {
        lambda1
    } else {
        lambda1 * dsq_value.powf(lambda2)
    }
}

/// `(p_hh + w p_ds) / (1 + w)` with `w = weight_ratio(dsq)`.
pub fn blend(p_hh: f64, p_ds: f64, dsq_value: f64, params: &EnsembleParams) -> f64 {
    blend_with(p_hh, p_ds, dsq_value, params.lambda1, params.lambda2)
}

fn blend_with(p_hh: f64, p_ds: f64, dsq_value: f64, lambda1: f64, lambda2: f64) -> f64 {
    let w = weight_ratio(dsq_value, lambda1, lambda2);
    if w == 0.0 {
        return p_hh;
    }
    if w.is_infinite() {
        return p_ds;
    }
    let hh_weight = 1.0 / (1.0 + w);
    let out = hh_weight * p_hh + (1.0 - hh_weight) * p_ds;
    out.clamp(p_hh.min(p_ds), p_hh.max(p_ds))
}

pub fn sigma0_of_training_set(hist_vols: &[f64]) -> Result<f64> {
    if hist_vols.is_empty() {
        return Err(Error::Empty("training volatilities"));
    }
    Ok(hist_vols.iter().sum::<f64>() / hist_vols.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lambda1_max: f64,
    pub lambda2_max: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda1_max: 5.0,
            lambda2_max: 5.0,
            step: 0.1,
        }
    }
}

impl GridSpec {
    fn axis(max: f64, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) || !(max >= 0.0) {
            return Err(Error::Config(format!("invalid lambda grid: max {max}, step {step}")));
        }
        let n = (max / step + 1e-9).floor() as usize;
        // k * step keeps grid values like 2.6 as close to decimal as possible
        Ok((0..=n).map(|k| k as f64 * step).collect())
    }

    pub fn lambda1_axis(&self) -> Result<Vec<f64>> {
        Self::axis(self.lambda1_max, self.step)
    }

    pub fn lambda2_axis(&self) -> Result<Vec<f64>> {
        Self::axis(self.lambda2_max, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// `(lambda1, lambda2, rmse)` in lambda1-major order.
    pub surface: Vec<(f64, f64, f64)>,
    pub argmin: (f64, f64),
    pub rmse_min: f64,
}

impl GridResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda1", "lambda2", "rmse"])?;
        for (l1, l2, e) in &self.surface {
            w.write_record([format!("{l1:.1}"), format!("{l2:.1}"), format!("{e:.10}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// RMSE of the blended predictions at every grid point. The argmin is the
/// first minimum in lambda1-major, lambda2-minor ascending order, i.e. ties
/// go to the lowest lambda1, then the lowest lambda2.
pub fn calibrate(
    grid: &GridSpec,
    hh_preds: &[f64],
    ds_preds: &[f64],
    dsq_values: &[f64],
    truth: &[f64],
) -> Result<GridResult> {
    let n = truth.len();
    if n == 0 {
        return Err(Error::Empty("calibration sample"));
    }
    for len in [hh_preds.len(), ds_preds.len(), dsq_values.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let l1_axis = grid.lambda1_axis()?;
    let l2_axis = grid.lambda2_axis()?;

    let surface: Vec<(f64, f64, f64)> = l1_axis
        .par_iter()
        .flat_map_iter(|&l1| {
            l2_axis.iter().map(move |&l2| {
                let sse: f64 = (0..n)
                    .map(|i| {
                        let e = truth[i] - blend_with(hh_preds[i], ds_preds[i], dsq_values[i], l1, l2);
                        e * e
                    })
                    .sum();
                (l1, l2, (sse / n as f64).sqrt())
            })
        })
        .collect();

    let mut best = surface[0];
    for &cell in &surface[1..] {
        if cell.2 < best.2 {
            best = cell;
        }
    }
    Ok(GridResult {
        surface,
        argmin: (best.0, best.1),
        rmse_min: best.2,
    })
}

impl EnsembleParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if !(p.sigma0 > 0.0) || p.lambda1 < 0.0 || p.lambda2 < 0.0 {
            return Err(Error::Config(format!("invalid ensemble parameters {p:?}")));
        }
        Ok(p)
    }
}
