//! Convergence orders from residuals at several lattice spacings.

use serde::Serialize;

use crate::error::{Error, Result};

/// Residuals at or below this at every level are roundoff, not truncation.
pub const SATURATION_FLOOR: f64 = 1e-9;

/// Measured order: a number, or `"saturated"` in reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    Slope(f64),
    Saturated,
}

impl Serialize for Order {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Order::Slope(v) => s.serialize_f64(*v),
            Order::Saturated => s.serialize_str("saturated"),
        }
    }
}

impl Order {
    pub fn slope(&self) -> Option<f64> {
        match self {
            Order::Slope(s) => Some(*s),
            Order::Saturated => None,
        }
    }

    /// At least `min`, or saturated (exact up to roundoff).
    pub fn at_least(&self, min: f64) -> bool {
        match self {
            Order::Slope(s) => *s >= min,
            Order::Saturated => true,
        }
    }

    pub fn within(&self, lo: f64, hi: f64) -> bool {
        matches!(self, Order::Slope(s) if *s >= lo && *s <= hi)
    }
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Order::Slope(s) => write!(f, "{s:.3}"),
            Order::Saturated => write!(f, "saturated"),
        }
    }
}

/// Least-squares slope of `log residual` against `log h`.
pub fn convergence_order(hs: &[f64], residuals: &[f64]) -> Result<Order> {
    convergence_order_with_floor(hs, residuals, SATURATION_FLOOR)
}

pub fn convergence_order_with_floor(hs: &[f64], residuals: &[f64], floor: f64) -> Result<Order> {
    if hs.len() != residuals.len() || hs.len() < 3 {
        return Err(Error::InvalidInput("a convergence study needs at least 3 levels".into()));
    }
    if hs.iter().any(|h| !(*h > 0.0)) || residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("steps must be positive and residuals finite".into()));
    }
    if residuals.iter().all(|r| r.abs() <= floor) {
        return Ok(Order::Saturated);
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.abs().max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(Order::Slope(sxy / sxx))
}
