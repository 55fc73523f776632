//! Central finite-difference check of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

/// Denominator floor of the relative error, so gradients near zero are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
    /// Names of parameters whose worst error exceeds the tolerance.
    pub flagged: Vec<String>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Compares the reverse-mode gradient of `loss_fn` with central differences
/// for every scalar of every parameter.
pub fn grad_check<F>(store: &ParamStore, loss_fn: F, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.value(loss).data[0])
    };
    let mut work = store.clone();
    let mut params = Vec::new();
    for id in store.ids() {
        let mut worst: f64 = 0.0;
        let n = store.get(id).len();
        for i in 0..n {
            let orig = store.get(id).data[i];
            work.get_mut(id).data[i] = orig + FD_STEP;
            let up = eval(&work)?;
            work.get_mut(id).data[i] = orig - FD_STEP;
            let down = eval(&work)?;
            work.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.get(id).data[i], numeric));
        }
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            scalars: n,
            max_rel_error: worst,
        });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    let flagged = params
        .iter()
        .filter(|p| p.max_rel_error > tolerance)
        .map(|p| p.name.clone())
        .collect();
    Ok(GradReport {
        tolerance,
        max_rel_error,
        params,
        flagged,
    })
}
