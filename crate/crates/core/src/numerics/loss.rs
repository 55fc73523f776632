//! Scalar loss formulas on plain inputs.

use super::tape::{focal_value, smooth_l1_elem, PROB_FLOOR};
use crate::error::{Error, Result};

/// `sum_i d(x_i)` with `d(x) = 0.5 x^2` for `|x| <= 1`, else `|x| - 0.5`.
pub fn smooth_l1(x: &[f64]) -> f64 {
    x.iter().map(|&v| smooth_l1_elem(v)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalValue {
    pub value: f64,
    /// The target probability was below the floor and got clamped.
    pub clamped: bool,
}

/// `-alpha[target] (1 - p_target)^gamma ln p_target`.
pub fn focal_loss(probs: &[f64; 3], target: usize, gamma: f64, alpha: &[f64; 3]) -> Result<FocalValue> {
    if target >= 3 {
        return Err(Error::InvalidConfig(format!("focal target class {target} out of range")));
    }
    let p = probs[target];
    Ok(FocalValue {
        value: focal_value(p, gamma, alpha[target]),
        clamped: p < PROB_FLOOR,
    })
}
