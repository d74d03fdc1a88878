//! Central finite-difference verification of tape gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(1, |a|, |n|)` over all coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `backward` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
///
/// `f` records a scalar function of its input on the given tape. The same
/// closure serves both routes: once with `x` as a differentiable leaf, and
/// `2 * len(x)` times as a plain forward evaluation.
pub fn finite_difference_check<F>(f: F, x: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::domain(format!(
            "finite difference step must be > 0, got {h}"
        )));
    }
    if x.is_empty() {
        return Err(Error::domain(
            "gradient check needs at least one coordinate",
        ));
    }

    let mut tape = Tape::new();
    let input = tape.param(x.to_vec());
    let root = f(&mut tape, input)?;
    let value = tape.scalar(root);
    if !value.is_finite() {
        return Err(Error::numeric("gradient check", format!("f(x) = {value}")));
    }
    let analytic = tape.backward(root)?.get_or_zeros(input, x.len());

    let eval = |point: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.constant(point);
        let root = f(&mut tape, input)?;
        let v = tape.scalar(root);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(
                "gradient check",
                format!("non-finite f = {v}"),
            ))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic[0],
        numeric: f64::NAN,
    };
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if i == 0 || err > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}
