//! Scale-free regression targets and their inverses.
//!
//! The HH target is the normalised price `100 C / S`. The DS target divides
//! the closed-form implied volatility approximation by the volatility scalar,
//! which makes it approximately independent of the underlying's volatility
//! level.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::{bharadia_iv, discounted_moneyness};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub hh_target: f64,
    /// `None` when the volatility scalar is degenerate.
    pub ds_target: Option<f64>,
    pub moneyness: f64,
    pub p_star: f64,
    pub rho: Option<f64>,
    /// Years.
    pub ttm: f64,
}

impl TargetRecord {
    pub fn compute(
        call: f64,
        spot: f64,
        moneyness: f64,
        ttm: f64,
        rate: f64,
        rho: Option<f64>,
    ) -> Result<Self> {
        let hh = hh_target(call, spot)?;
        let ds = match rho {
            Some(rho) => Some(ds_target(call, spot, moneyness, ttm, rate, rho)?),
            None => None,
        };
        Ok(Self {
            hh_target: hh,
            ds_target: ds,
            moneyness,
            p_star: discounted_moneyness(moneyness, rate, ttm),
            rho,
            ttm,
        })
    }
}

pub fn hh_target(call: f64, spot: f64) -> Result<f64> {
    if !(spot > 0.0) {
        return Err(Error::domain(format!("spot must be > 0, got {spot}")));
    }
    Ok(100.0 * call / spot)
}

pub fn price_from_hh_target(target: f64, spot: f64) -> f64 {
    spot * target / 100.0
}

fn check_ds_domain(spot: f64, ttm: f64, rho: f64) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::domain(format!("volatility scalar must be > 0, got {rho}")));
    }
    if !(ttm > 0.0) {
        return Err(Error::domain(format!("ttm must be > 0, got {ttm}")));
    }
    if !(spot > 0.0) {
        return Err(Error::domain(format!("spot must be > 0, got {spot}")));
    }
    Ok(())
}

/// `U = IV_approx(C, S, p, T, r) / rho`.
pub fn ds_target(call: f64, spot: f64, moneyness: f64, ttm: f64, rate: f64, rho: f64) -> Result<f64> {
    check_ds_domain(spot, ttm, rho)?;
    Ok(bharadia_iv(call, spot, moneyness, ttm, rate)? / rho)
}

/// Inverse of [`ds_target`]:
/// `C = S (rho (1 + p*) / 2 sqrt(T / 2 pi) U + (1 - p*) / 2)`.
pub fn price_from_ds_target(
    u: f64,
    spot: f64,
    moneyness: f64,
    ttm: f64,
    rate: f64,
    rho: f64,
) -> Result<f64> {
    check_ds_domain(spot, ttm, rho)?;
    let p_star = discounted_moneyness(moneyness, rate, ttm);
    Ok(spot * (rho * (1.0 + p_star) / 2.0 * (ttm / (2.0 * PI)).sqrt() * u + (1.0 - p_star) / 2.0))
}

/// Normalised price implied by a DS prediction; convenience for evaluation.
pub fn norm_price_from_ds_target(u: f64, moneyness: f64, ttm: f64, rate: f64, rho: f64) -> Result<f64> {
    Ok(100.0 * price_from_ds_target(u, 1.0, moneyness, ttm, rate, rho)?)
}
