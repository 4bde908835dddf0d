//! Block-length-`n` error bounds for memoryless sources and metrics,
//! evaluated through their single-letter factorization.

use crate::dual::Ensemble;
use crate::error::{Error, Result};
use crate::model::{CostFunction, DecodingMetric, JointSource};
use crate::numerics::{scaled_log, LogSumExp};

/// Iteration count of the expurgation construction, `ceil(n log2 |X|)`,
/// and never less than one.
pub fn nletter_k(n: usize, x_size: usize) -> usize {
    ((n as f64 * (x_size as f64).log2()).ceil() as usize).max(1)
}

/// Number of type classes of length-`n` sequences over `size` letters.
pub fn type_count(n: usize, size: usize) -> f64 {
    // C(n + size - 1, size - 1)
    let mut c = 1.0;
    for i in 1..size {
        c = c * (n + i) as f64 / i as f64;
    }
    c.round()
}

fn cost(a: Option<&CostFunction>, x: usize) -> f64 {
    a.map(|c| c.get(x)).unwrap_or(0.0)
}

fn check(
    source: &JointSource,
    metric: &DecodingMetric,
    s: f64,
    a: Option<&CostFunction>,
) -> Result<()> {
    metric.check_compatible(source)?;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("s = {s}")));
    }
    if let Some(c) = a {
        if c.len() != source.x_size() {
            return Err(Error::DimensionMismatch {
                expected: source.x_size().to_string(),
                found: c.len().to_string(),
            });
        }
    }
    Ok(())
}

/// `log( e^{a(xb) - a(x)} (q(xb,y) / q(x,y))^s )`.
fn log_ratio(
    metric: &DecodingMetric,
    a: Option<&CostFunction>,
    s: f64,
    xb: usize,
    x: usize,
    y: usize,
) -> f64 {
    let ab = cost(a, xb);
    if ab == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    ab - cost(a, x) + scaled_log(s, metric.q(xb, y).ln()) - scaled_log(s, metric.q(x, y).ln())
}

fn ensemble_factor(n: usize, x_size: usize, bins: usize, ensemble: Ensemble) -> f64 {
    let k = nletter_k(n, x_size) as f64;
    match ensemble {
        Ensemble::Standard => k / bins as f64,
        Ensemble::TypeByType => k * type_count(n, x_size) / bins as f64,
    }
}

/// Random-coding bound on the ensemble-average error,
/// `(k/M)^rho (sum_{x,y} P(x,y) (sum_xb e^{a(xb)-a(x)} (q(xb,y)/q(x,y))^s)^rho)^n`,
/// with `k` multiplied by the number of type classes for type-by-type.
#[allow(clippy::too_many_arguments)]
pub fn nletter_rc_bound(
    source: &JointSource,
    metric: &DecodingMetric,
    n: usize,
    bins: usize,
    rho: f64,
    s: f64,
    ensemble: Ensemble,
    a: Option<&CostFunction>,
) -> Result<f64> {
    check(source, metric, s, a)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "rho = {rho} outside [0, 1]"
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "bin count must be at least 1".into(),
        ));
    }
    let mut outer = LogSumExp::new();
    for x in 0..source.x_size() {
        for y in 0..source.y_size() {
            let p = source.p(x, y);
            if p == 0.0 {
                continue;
            }
            let mut inner = LogSumExp::new();
            for xb in 0..source.x_size() {
                inner.push(log_ratio(metric, a, s, xb, x, y));
            }
            outer.push(p.ln() + scaled_log(rho, inner.value()));
        }
    }
    let factor = ensemble_factor(n, source.x_size(), bins, ensemble);
    Ok((scaled_log(rho, factor.ln()) + n as f64 * outer.value()).exp())
}

/// Expurgated bound on the error of the expurgated code,
/// `(2k/M)^rho (sum_x (sum_xb (sum_y P(x,y) e^{a(xb)-a(x)} (q(xb,y)/q(x,y))^s)^{1/rho})^rho)^n`.
#[allow(clippy::too_many_arguments)]
pub fn nletter_ex_bound(
    source: &JointSource,
    metric: &DecodingMetric,
    n: usize,
    bins: usize,
    rho: f64,
    s: f64,
    ensemble: Ensemble,
    a: Option<&CostFunction>,
) -> Result<f64> {
    check(source, metric, s, a)?;
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho = {rho} below 1")));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "bin count must be at least 1".into(),
        ));
    }
    let mut outer = LogSumExp::new();
    for x in 0..source.x_size() {
        let mut middle = LogSumExp::new();
        for xb in 0..source.x_size() {
            let mut inner = LogSumExp::new();
            for y in 0..source.y_size() {
                let p = source.p(x, y);
                if p > 0.0 {
                    inner.push(p.ln() + log_ratio(metric, a, s, xb, x, y));
                }
            }
            middle.push(inner.value() / rho);
        }
        outer.push(rho * middle.value());
    }
    let factor = 2.0 * ensemble_factor(n, source.x_size(), bins, ensemble);
    Ok((rho * factor.ln() + n as f64 * outer.value()).exp())
}
