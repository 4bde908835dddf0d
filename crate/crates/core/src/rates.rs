//! Achievable-rate thresholds for the standard and type-by-type ensembles,
//! and the GMI / LM-rate functionals they are tied to.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{entropy, CostFunction, DecodingMetric, JointSource};
use crate::numerics::{
    ln0, minimize_convex_box, scaled_log, LogSumExp, NeumaierSum, NewtonOptions,
};

const S_MAX: f64 = 1e3;
const A_MAX: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStd {
    pub value: f64,
    pub s_star: f64,
    /// The infimum sits on the upper end of the `s` range.
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTt {
    pub value: f64,
    pub s_star: f64,
    pub a_star: CostFunction,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub h_xy: f64,
    pub h_q_std: f64,
    pub h_q_tt: f64,
    pub s_star: f64,
    pub s_star_tt: f64,
    pub a_star: CostFunction,
    /// `H(X) - GMI` with the rescaled metric `q P^{-1/s*}`. Never exceeds
    /// `h_q_std`; absent when `s* = 0`.
    pub gmi_crosscheck: Option<f64>,
    /// `H(X)` minus the GMI objective of the rescaled metric evaluated at
    /// `s = s*`; equals `h_q_std`.
    pub gmi_at_s_star: Option<f64>,
    /// `H(X) - LM rate`; equals `h_q_tt`.
    pub lm_crosscheck: f64,
    pub boundary_hit: bool,
}

fn log_tables(source: &JointSource, metric: &DecodingMetric) -> Result<(Vec<f64>, Vec<f64>)> {
    metric.check_compatible(source)?;
    let (xs, ys) = (source.x_size(), source.y_size());
    let mut lq = vec![0.0; xs * ys];
    let mut p = vec![0.0; xs * ys];
    for x in 0..xs {
        for y in 0..ys {
            lq[x * ys + y] = ln0(metric.q(x, y));
            p[x * ys + y] = source.p(x, y);
        }
    }
    Ok((p, lq))
}

/// `-sum P(x,y) log(q(x,y)^s e^{a(x)} / sum_xb q(xb,y)^s e^{a(xb)})`.
fn cross_entropy(p: &[f64], lq: &[f64], xs: usize, ys: usize, s: f64, a: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for y in 0..ys {
        let mut norm = LogSumExp::new();
        for xb in 0..xs {
            norm.push(scaled_log(s, lq[xb * ys + y]) + a[xb]);
        }
        let z = norm.value();
        for x in 0..xs {
            let w = p[x * ys + y];
            if w > 0.0 {
                acc.add(w * (z - scaled_log(s, lq[x * ys + y]) - a[x]));
            }
        }
    }
    acc.value()
}

/// Standard-ensemble threshold `H_q(X|Y)`.
pub fn rate_std(source: &JointSource, metric: &DecodingMetric) -> Result<RateStd> {
    let (p, lq) = log_tables(source, metric)?;
    let (xs, ys) = (source.x_size(), source.y_size());
    let zeros = vec![0.0; xs];
    let r = minimize_convex_box(
        |th| cross_entropy(&p, &lq, xs, ys, th[0], &zeros),
        &[1.0],
        &[0.0],
        &[S_MAX],
        &NewtonOptions::default(),
    );
    if !r.converged {
        return Err(Error::NotConverged("standard rate threshold".into()));
    }
    Ok(RateStd {
        value: r.value,
        s_star: r.x[0],
        boundary_hit: r.x[0] >= S_MAX * (1.0 - 1e-9),
    })
}

fn cost_from_free(support: &[usize], xs: usize, free: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
    let mut sum = 0.0;
    for (j, &x) in support.iter().enumerate() {
        if j + 1 < support.len() {
            out[x] = free[j];
            sum += free[j];
        } else {
            out[x] = -sum;
        }
    }
    debug_assert_eq!(out.len(), xs);
}

/// Type-by-type threshold `H^tt_q(X|Y)`. Symbols outside the source support
/// carry `a = -inf`, which is always optimal.
pub fn rate_tt(source: &JointSource, metric: &DecodingMetric) -> Result<RateTt> {
    let (p, lq) = log_tables(source, metric)?;
    let (xs, ys) = (source.x_size(), source.y_size());
    let support = source.support_x();
    let d = support.len();
    let mut lo = vec![-A_MAX; d];
    let mut hi = vec![A_MAX; d];
    lo[0] = 0.0;
    hi[0] = S_MAX;
    let mut x0 = vec![0.0; d];
    x0[0] = 1.0;
    let f = |th: &[f64]| {
        let mut a = vec![0.0; xs];
        cost_from_free(&support, xs, &th[1..], &mut a);
        cross_entropy(&p, &lq, xs, ys, th[0], &a)
    };
    let r = minimize_convex_box(f, &x0, &lo, &hi, &NewtonOptions::default());
    if !r.converged {
        return Err(Error::NotConverged("type-by-type rate threshold".into()));
    }
    let mut a = vec![0.0; xs];
    cost_from_free(&support, xs, &r.x[1..], &mut a);
    let active: Vec<bool> = a.iter().map(|v| v.is_finite()).collect();
    Ok(RateTt {
        value: r.value,
        s_star: r.x[0],
        a_star: CostFunction::with_support(&a, &active),
        boundary_hit: r.x[0] >= S_MAX * (1.0 - 1e-9),
    })
}

/// Channel-coding view of an input distribution, channel and metric.
struct ChannelTables {
    xs: usize,
    ys: usize,
    lpx: Vec<f64>,
    pxy: Vec<f64>,
    lq: Vec<f64>,
    support: Vec<usize>,
}

impl ChannelTables {
    fn new(px: &[f64], channel: &[Vec<f64>], metric: &DecodingMetric) -> Result<Self> {
        let source = JointSource::from_channel(px, channel)?;
        for (x, row) in channel.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if px[x] > 0.0 && (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "channel row {x} sums to {total}"
                )));
            }
        }
        metric.check_compatible(&source)?;
        let (xs, ys) = (source.x_size(), source.y_size());
        let mut pxy = vec![0.0; xs * ys];
        let mut lq = vec![0.0; xs * ys];
        for x in 0..xs {
            for y in 0..ys {
                pxy[x * ys + y] = source.p(x, y);
                lq[x * ys + y] = ln0(metric.q(x, y));
            }
        }
        Ok(Self {
            xs,
            ys,
            lpx: source.px().iter().map(|v| ln0(*v)).collect(),
            pxy,
            lq,
            support: source.support_x(),
        })
    }

    /// `sum P(x,y) log(q^s e^{b(x)} / sum_xb P(xb) q(xb,y)^s e^{b(xb)})`.
    fn objective(&self, s: f64, b: &[f64]) -> f64 {
        let mut acc = NeumaierSum::new();
        for y in 0..self.ys {
            let mut norm = LogSumExp::new();
            for &xb in &self.support {
                norm.push(self.lpx[xb] + scaled_log(s, self.lq[xb * self.ys + y]) + b[xb]);
            }
            let z = norm.value();
            for &x in &self.support {
                let w = self.pxy[x * self.ys + y];
                if w > 0.0 {
                    acc.add(w * (scaled_log(s, self.lq[x * self.ys + y]) + b[x] - z));
                }
            }
        }
        acc.value()
    }
}

/// Generalized mutual information `sup_s` of the i.i.d. mismatched channel
/// functional.
pub fn gmi(px: &[f64], channel: &[Vec<f64>], metric: &DecodingMetric) -> Result<f64> {
    let t = ChannelTables::new(px, channel, metric)?;
    let zeros = vec![0.0; t.xs];
    let r = minimize_convex_box(
        |th| -t.objective(th[0], &zeros),
        &[1.0],
        &[0.0],
        &[S_MAX],
        &NewtonOptions::default(),
    );
    Ok(-r.value)
}

/// The GMI objective at a fixed `s`.
pub fn gmi_objective(
    px: &[f64],
    channel: &[Vec<f64>],
    metric: &DecodingMetric,
    s: f64,
) -> Result<f64> {
    let t = ChannelTables::new(px, channel, metric)?;
    Ok(t.objective(s, &vec![0.0; t.xs]))
}

/// LM rate: `sup_{s, b}` of the constant-composition mismatched functional.
pub fn lm_rate(px: &[f64], channel: &[Vec<f64>], metric: &DecodingMetric) -> Result<f64> {
    let t = ChannelTables::new(px, channel, metric)?;
    let d = t.support.len();
    let mut lo = vec![-A_MAX; d];
    let mut hi = vec![A_MAX; d];
    lo[0] = 0.0;
    hi[0] = S_MAX;
    let mut x0 = vec![0.0; d];
    x0[0] = 1.0;
    let r = minimize_convex_box(
        |th| {
            let mut b = vec![0.0; t.xs];
            cost_from_free(&t.support, t.xs, &th[1..], &mut b);
            -t.objective(th[0], &b)
        },
        &x0,
        &lo,
        &hi,
        &NewtonOptions::default(),
    );
    Ok(-r.value)
}

/// The rescaled metric `q(x,y) P(x)^{-1/s}` restricted to the support of `P_X`.
fn rescaled_metric(
    source: &JointSource,
    metric: &DecodingMetric,
    s: f64,
) -> Result<DecodingMetric> {
    let rows: Vec<Vec<f64>> = (0..source.x_size())
        .map(|x| {
            let px = source.px()[x];
            (0..source.y_size())
                .map(|y| {
                    if px > 0.0 {
                        metric.q(x, y) * px.powf(-1.0 / s)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    DecodingMetric::new(&rows)
}

pub fn rate_report(source: &JointSource, metric: &DecodingMetric) -> Result<RateReport> {
    let std = rate_std(source, metric)?;
    let tt = rate_tt(source, metric)?;
    let hx = entropy(source.px());
    let channel = source.channel();
    let (gmi_crosscheck, gmi_at_s_star) = if std.s_star > 1e-9 {
        let qbar = rescaled_metric(source, metric, std.s_star)?;
        (
            Some(hx - gmi(source.px(), &channel, &qbar)?),
            Some(hx - gmi_objective(source.px(), &channel, &qbar, std.s_star)?),
        )
    } else {
        (None, None)
    };
    let lm_crosscheck = hx - lm_rate(source.px(), &channel, metric)?;
    Ok(RateReport {
        h_xy: source.conditional_entropy(),
        h_q_std: std.value,
        h_q_tt: tt.value,
        s_star: std.s_star,
        s_star_tt: tt.s_star,
        a_star: tt.a_star,
        gmi_crosscheck,
        gmi_at_s_star,
        lm_crosscheck,
        boundary_hit: std.boundary_hit || tt.boundary_hit,
    })
}
