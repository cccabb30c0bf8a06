//! Black-Scholes-Merton call pricing, the closed-form near-ATM implied
//! volatility approximation, the CIR volatility scalar, and the grid study of
//! how well the approximation transfers between assets of different volatility.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF, `0.5 * erfc(-x / sqrt(2))`.
///
/// `erfc` keeps full relative precision in the lower tail, which matters for
/// deep out-of-the-money `d2` values.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmInputs {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub vol: f64,
    /// Time to maturity in years.
    pub ttm: f64,
}

impl BsmInputs {
    pub fn new(spot: f64, strike: f64, rate: f64, vol: f64, ttm: f64) -> Self {
        Self {
            spot,
            strike,
            rate,
            vol,
            ttm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0) {
            return Err(Error::domain(format!("spot must be > 0, got {}", self.spot)));
        }
        if !(self.strike >= 0.0) {
            return Err(Error::domain(format!("strike must be >= 0, got {}", self.strike)));
        }
        if !(self.ttm >= 0.0) {
            return Err(Error::domain(format!("ttm must be >= 0, got {}", self.ttm)));
        }
        if !(self.vol >= 0.0) {
            return Err(Error::domain(format!("vol must be >= 0, got {}", self.vol)));
        }
        if !self.rate.is_finite() {
            return Err(Error::domain("rate must be finite"));
        }
        Ok(())
    }
}

/// European call value under constant-volatility BSM.
///
/// Degenerate inputs (zero vol, zero maturity, zero strike) fall back to the
/// discounted intrinsic value, which is the exact limit in each case.
pub fn bsm_call(inp: &BsmInputs) -> f64 {
    let BsmInputs {
        spot,
        strike,
        rate,
        vol,
        ttm,
    } = *inp;
    let disc_strike = strike * (-rate * ttm).exp();
    if strike == 0.0 {
        return spot;
    }
    let sd = vol * ttm.sqrt();
    if sd == 0.0 {
        return (spot - disc_strike).max(0.0);
    }
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * ttm) / sd;
    let d2 = d1 - sd;
    let value = spot * norm_cdf(d1) - disc_strike * norm_cdf(d2);
    // rounding can push a few ulps outside the no-arbitrage bounds
    value.clamp((spot - disc_strike).max(0.0), spot)
}

/// Discounted moneyness `p* = p * exp(-r T)`.
pub fn discounted_moneyness(moneyness: f64, rate: f64, ttm: f64) -> f64 {
    moneyness * (-rate * ttm).exp()
}

/// Closed-form implied volatility approximation for near-ATM calls:
///
/// `sqrt(2 pi / T) * (C / (s (1 + p*) / 2) - (1 - p*) / (1 + p*))`.
///
/// No root finding is involved. Prices below the affine floor
/// `s (1 - p*) / 2` produce negative values, which are returned unchanged.
pub fn bharadia_iv(call: f64, spot: f64, moneyness: f64, ttm: f64, rate: f64) -> Result<f64> {
    if !(ttm > 0.0) {
        return Err(Error::domain(format!("ttm must be > 0, got {ttm}")));
    }
    if !(spot > 0.0) {
        return Err(Error::domain(format!("spot must be > 0, got {spot}")));
    }
    let p_star = discounted_moneyness(moneyness, rate, ttm);
    let half = (1.0 + p_star) / 2.0;
    Ok((2.0 * PI / ttm).sqrt() * (call / (spot * half) - (1.0 - p_star) / (1.0 + p_star)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonVolParams {
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Vol-of-vol. Does not enter the expected integrated variance.
    pub xi: f64,
    pub current_var: f64,
    /// Remaining life `T - t` in years.
    pub horizon: f64,
}

const KAPPA_TAU_SERIES_CUTOFF: f64 = 1e-8;

/// Volatility scalar under a CIR variance process: the square root of the
/// expected average variance over the remaining life,
/// `theta - (theta - v0) (1 - exp(-k tau)) / (k tau)`.
pub fn heston_rho(params: &HestonVolParams) -> Result<f64> {
    let HestonVolParams {
        kappa,
        theta,
        current_var,
        horizon,
        ..
    } = *params;
    if !(kappa > 0.0 && theta > 0.0 && current_var > 0.0 && horizon > 0.0) {
        return Err(Error::domain(
            "heston_rho requires kappa, theta, current variance and horizon > 0",
        ));
    }
    let x = kappa * horizon;
    let decay = if x < KAPPA_TAU_SERIES_CUTOFF {
        1.0 - x / 2.0
    } else {
        -(-x).exp_m1() / x
    };
    Ok((theta - (theta - current_var) * decay).sqrt())
}

/// Volatility-normalised approximation `U = IV_approx / rho` for a BSM call
/// with constant volatility `sigma` and `rho = sigma`.
pub fn normalized_iv(spot: f64, sigma: f64, moneyness: f64, ttm: f64, rate: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain("sigma must be > 0"));
    }
    let call = bsm_call(&BsmInputs::new(spot, moneyness * spot, rate, sigma, ttm));
    Ok(bharadia_iv(call, spot, moneyness, ttm, rate)? / sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStudyConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub step: f64,
    pub ttm: f64,
    pub moneyness: f64,
    pub rate: f64,
}

impl Default for ErrorStudyConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.05,
            sigma_max: 1.0,
            step: 0.01,
            ttm: 0.2,
            moneyness: 1.0,
            rate: 0.0,
        }
    }
}

impl ErrorStudyConfig {
    /// Inclusive axis `sigma_min, sigma_min + step, ..., sigma_max`.
    pub fn sigma_axis(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.sigma_min > 0.0) || self.sigma_max < self.sigma_min {
            return Err(Error::Config(format!("invalid sigma axis {self:?}")));
        }
        let n = ((self.sigma_max - self.sigma_min) / self.step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|k| self.sigma_min + k as f64 * self.step)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub sigma_1: f64,
    pub sigma_2: f64,
    pub ratio: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct ErrorStudyGrid {
    pub sigma_axis: Vec<f64>,
    pub ttm: f64,
    pub moneyness: f64,
    pub rate: f64,
    /// `U` per axis entry, evaluated at unit spot.
    pub u_values: Vec<f64>,
    /// Row-major `n x n` relative errors; `None` where both `U <= 0`.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub scatter: Vec<ScatterPoint>,
}

/// Relative error between two normalised approximations, `|u1 - u2| / max(u1, u2)`.
pub fn relative_error(u1: f64, u2: f64) -> Option<f64> {
    let denom = u1.max(u2);
    if denom <= 0.0 {
        None
    } else {
        Some((u1 - u2).abs() / denom)
    }
}

/// Pairwise relative error of `U` across an axis of constant volatilities.
///
/// Under constant-vol BSM the normalised approximation does not depend on the
/// spot level, so the supremum over spots reduces to a single evaluation at
/// `s = 1`.
pub fn approx_error_study(cfg: &ErrorStudyConfig) -> Result<ErrorStudyGrid> {
    let axis = cfg.sigma_axis()?;
    let u_values = axis
        .par_iter()
        .map(|&sigma| normalized_iv(1.0, sigma, cfg.moneyness, cfg.ttm, cfg.rate))
        .collect::<Result<Vec<_>>>()?;

    let matrix: Vec<Vec<Option<f64>>> = u_values
        .par_iter()
        .map(|&u1| u_values.iter().map(|&u2| relative_error(u1, u2)).collect())
        .collect();

    let mut scatter = Vec::with_capacity(axis.len() * (axis.len() + 1) / 2);
    for i in 0..axis.len() {
        for j in i..axis.len() {
            if let Some(error) = matrix[i][j] {
                let (lo, hi) = (axis[i].min(axis[j]), axis[i].max(axis[j]));
                scatter.push(ScatterPoint {
                    sigma_1: axis[i],
                    sigma_2: axis[j],
                    ratio: hi / lo,
                    error,
                });
            }
        }
    }

    Ok(ErrorStudyGrid {
        sigma_axis: axis,
        ttm: cfg.ttm,
        moneyness: cfg.moneyness,
        rate: cfg.rate,
        u_values,
        matrix,
        scatter,
    })
}

impl ErrorStudyGrid {
    /// Largest error over cells where both volatilities satisfy `pred`.
    pub fn max_error_where(&self, pred: impl Fn(f64, f64) -> bool) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(e) = cell {
                    if pred(self.sigma_axis[i], self.sigma_axis[j]) {
                        best = Some(best.map_or(*e, |b: f64| b.max(*e)));
                    }
                }
            }
        }
        best
    }

    pub fn max_error(&self) -> Option<f64> {
        self.max_error_where(|_, _| true)
    }

    /// Largest scatter error among pairs whose max/min ratio is at most `ratio`.
    pub fn max_error_within_ratio(&self, ratio: f64) -> Option<f64> {
        self.scatter
            .iter()
            .filter(|pt| pt.ratio <= ratio * (1.0 + 1e-12))
            .map(|pt| pt.error)
            .reduce(f64::max)
    }

    pub fn invalid_cells(&self) -> usize {
        self.matrix.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// Long-format heatmap CSV: `sigma_1,sigma_2,rel_error`.
    pub fn write_matrix_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma_1", "sigma_2", "rel_error"])?;
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                let err = cell.map(|e| format!("{e:.10}")).unwrap_or_default();
                w.write_record([
                    format!("{:.4}", self.sigma_axis[i]),
                    format!("{:.4}", self.sigma_axis[j]),
                    err,
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Scatter CSV: `sigma_1,sigma_2,max_min_ratio,rel_error`, one row per unordered pair.
    pub fn write_scatter_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma_1", "sigma_2", "max_min_ratio", "rel_error"])?;
        for pt in &self.scatter {
            w.write_record([
                format!("{:.4}", pt.sigma_1),
                format!("{:.4}", pt.sigma_2),
                format!("{:.10}", pt.ratio),
                format!("{:.10}", pt.error),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_summary(&self, mut out: impl Write) -> std::io::Result<()> {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |e| format!("{e:.6}"));
        writeln!(out, "ttm = {}", self.ttm)?;
        writeln!(out, "moneyness = {}", self.moneyness)?;
        writeln!(out, "rate = {}", self.rate)?;
        writeln!(out, "grid_points = {}", self.sigma_axis.len())?;
        writeln!(out, "max_rel_error = {}", fmt(self.max_error()))?;
        writeln!(
            out,
            "max_rel_error_both_ge_9pct = {}",
            fmt(self.max_error_where(|a, b| a >= 0.09 - 1e-12 && b >= 0.09 - 1e-12))
        )?;
        writeln!(out, "max_rel_error_ratio_le_2 = {}", fmt(self.max_error_within_ratio(2.0)))?;
        writeln!(out, "max_rel_error_ratio_le_9 = {}", fmt(self.max_error_within_ratio(9.0)))?;
        writeln!(out, "invalid_cells = {}", self.invalid_cells())
    }
}
