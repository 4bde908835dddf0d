//! Dual-domain exponents: objective evaluation and optimization over
//! `(rho, s, a)`.
//!
//! For fixed `rho` every objective below is a convex function of `(s, a)`
//! (a composition of log-sum-exps of affine maps), so the inner problem is
//! solved by a projected Newton method. The outer supremum over `rho` uses a
//! grid followed by golden-section refinement.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{entropy, kl_divergence, CostFunction, DecodingMetric, DualParams, JointSource};
use crate::numerics::{
    golden_section_max, ln0, minimize_convex_box, scaled_log, LogSumExp, NewtonOptions,
};

/// Default cap on `rho` for the expurgated and sphere-packing suprema.
pub const DEFAULT_RHO_CAP: f64 = 64.0;

const S_MAX: f64 = 1e3;
const A_MAX: f64 = 60.0;
const GRID_POINTS: usize = 33;
/// Values at or below this are reported as the `rho = 0` point.
const ZERO_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Standard,
    #[serde(rename = "tt")]
    TypeByType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    StdRc,
    StdEx,
    Std,
    TtRc,
    TtEx,
    Tt,
    Gallager,
    SpherePacking,
    MatchedExStd,
    MatchedExTt,
    NoSideInfo,
    NoSideInfoOptimal,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::StdRc => "E_std_rc",
            Family::StdEx => "E_std_ex",
            Family::Std => "E_std",
            Family::TtRc => "E_tt_rc",
            Family::TtEx => "E_tt_ex",
            Family::Tt => "E_tt",
            Family::Gallager => "E_r_gallager",
            Family::SpherePacking => "E_sp",
            Family::MatchedExStd => "E_ex_matched_std",
            Family::MatchedExTt => "E_ex_matched_tt",
            Family::NoSideInfo => "E_no_si",
            Family::NoSideInfoOptimal => "E_no_si_optimal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    RandomCoding,
    Expurgated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentPoint {
    pub rate: f64,
    pub value: f64,
    pub argmax: DualParams,
    pub saturated_rho: bool,
    pub converged: bool,
    /// Winning branch, set by the combined exponents only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentCurve {
    pub family: Family,
    pub points: Vec<ExponentPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeReport {
    pub nondecreasing: bool,
    pub convex: bool,
    pub worst_decrease: f64,
    pub worst_concavity: f64,
}

impl ExponentCurve {
    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Monotonicity and discrete convexity on the (possibly nonuniform) grid.
    pub fn shape(&self, tol: f64) -> ShapeReport {
        let r = self.rates();
        let v = self.values();
        let mut worst_decrease: f64 = 0.0;
        let mut worst_concavity: f64 = 0.0;
        for i in 1..v.len() {
            worst_decrease = worst_decrease.max(v[i - 1] - v[i]);
        }
        for i in 1..v.len().saturating_sub(1) {
            let w = (r[i] - r[i - 1]) / (r[i + 1] - r[i - 1]);
            let chord = (1.0 - w) * v[i - 1] + w * v[i + 1];
            worst_concavity = worst_concavity.max(v[i] - chord);
        }
        ShapeReport {
            nondecreasing: worst_decrease <= tol,
            convex: worst_concavity <= tol,
            worst_decrease,
            worst_concavity,
        }
    }
}

/// Log-domain tables shared by all objectives.
#[derive(Debug, Clone)]
struct Tables {
    xs: usize,
    ys: usize,
    lp: Vec<f64>,
    lq: Vec<f64>,
    lpx: Vec<f64>,
    support: Vec<usize>,
    zeros: Vec<f64>,
}

impl Tables {
    fn new(source: &JointSource, metric: &DecodingMetric) -> Result<Self> {
        metric.check_compatible(source)?;
        let (xs, ys) = (source.x_size(), source.y_size());
        let mut lp = vec![0.0; xs * ys];
        let mut lq = vec![0.0; xs * ys];
        for x in 0..xs {
            for y in 0..ys {
                lp[x * ys + y] = ln0(source.p(x, y));
                lq[x * ys + y] = ln0(metric.q(x, y));
            }
        }
        Ok(Self {
            xs,
            ys,
            lp,
            lq,
            lpx: source.px().iter().map(|v| ln0(*v)).collect(),
            support: source.support_x(),
            zeros: vec![0.0; xs],
        })
    }

    /// `log sum_{x,y} P(x,y) (sum_xb e^{a(xb)-a(x)} (q(xb,y)/q(x,y))^s)^rho`.
    fn rc(&self, rho: f64, s: f64, a: &[f64]) -> f64 {
        let mut outer = LogSumExp::new();
        for &x in &self.support {
            for y in 0..self.ys {
                let lp = self.lp[x * self.ys + y];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let lqx = self.lq[x * self.ys + y];
                let mut inner = LogSumExp::new();
                for xb in 0..self.xs {
                    inner.push(scaled_log(s, self.lq[xb * self.ys + y] - lqx) + a[xb] - a[x]);
                }
                outer.push(lp + scaled_log(rho, inner.value()));
            }
        }
        outer.value()
    }

    /// `log sum_x (sum_xb (sum_y P(x,y) e^{a(xb)-a(x)} (q(xb,y)/q(x,y))^s)^{1/rho})^rho`.
    fn ex(&self, rho: f64, s: f64, a: &[f64]) -> f64 {
        let mut outer = LogSumExp::new();
        for &x in &self.support {
            let mut mid = LogSumExp::new();
            for xb in 0..self.xs {
                if a[xb] == f64::NEG_INFINITY {
                    continue;
                }
                let mut inner = LogSumExp::new();
                for y in 0..self.ys {
                    let lp = self.lp[x * self.ys + y];
                    if lp == f64::NEG_INFINITY {
                        continue;
                    }
                    inner.push(
                        lp + scaled_log(s, self.lq[xb * self.ys + y] - self.lq[x * self.ys + y]),
                    );
                }
                let v = inner.value();
                if v == f64::NEG_INFINITY {
                    continue;
                }
                mid.push((v + a[xb] - a[x]) / rho);
            }
            outer.push(rho * mid.value());
        }
        outer.value()
    }
}

/// Bhattacharyya tables for the matched type-by-type expurgated exponent.
#[derive(Debug, Clone)]
struct Bhattacharyya {
    xs: usize,
    support: Vec<usize>,
    lpx: Vec<f64>,
    /// `ln sum_y sqrt(P(y|x) P(y|xb))`, row-major.
    lb: Vec<f64>,
}

impl Bhattacharyya {
    fn new(source: &JointSource) -> Self {
        let xs = source.x_size();
        let mut lb = vec![f64::NEG_INFINITY; xs * xs];
        for x in 0..xs {
            for xb in 0..xs {
                let v: f64 = (0..source.y_size())
                    .map(|y| (source.p_y_given_x(y, x) * source.p_y_given_x(y, xb)).sqrt())
                    .sum();
                lb[x * xs + xb] = ln0(v);
            }
        }
        Self {
            xs,
            support: source.support_x(),
            lpx: source.px().iter().map(|v| ln0(*v)).collect(),
            lb,
        }
    }

    fn objective(&self, rho: f64, a: &[f64]) -> f64 {
        let mut outer = LogSumExp::new();
        for &x in &self.support {
            let mut mid = LogSumExp::new();
            for &xb in &self.support {
                mid.push((self.lb[x * self.xs + xb] + a[xb] - a[x]) / rho);
            }
            outer.push(self.lpx[x] + rho * mid.value());
        }
        outer.value()
    }
}

/// Maps free coordinates to a gauge-fixed cost vector over the support.
#[derive(Debug, Clone)]
struct CostLayout {
    xs: usize,
    support: Vec<usize>,
}

impl CostLayout {
    fn free_dim(&self) -> usize {
        self.support.len().saturating_sub(1)
    }

    fn expand(&self, free: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let m = self.support.len();
        let mut sum = 0.0;
        for (j, &x) in self.support.iter().enumerate() {
            if j + 1 < m {
                out[x] = free[j];
                sum += free[j];
            } else {
                out[x] = -sum;
            }
        }
    }

    fn cost(&self, free: &[f64]) -> CostFunction {
        let mut full = vec![0.0; self.xs];
        self.expand(free, &mut full);
        let active: Vec<bool> = full.iter().map(|v| v.is_finite()).collect();
        CostFunction::with_support(&full, &active)
    }
}

fn check_rho_s(rho: f64, s: f64, min_rho_exclusive: bool) -> Result<()> {
    if !(rho.is_finite() && s.is_finite())
        || rho < 0.0
        || s < 0.0
        || (min_rho_exclusive && rho == 0.0)
    {
        return Err(Error::InvalidParameter(format!("rho = {rho}, s = {s}")));
    }
    Ok(())
}

fn cost_vector(a: &CostFunction, xs: usize) -> Result<Vec<f64>> {
    if a.len() != xs {
        return Err(Error::DimensionMismatch {
            expected: xs.to_string(),
            found: a.len().to_string(),
        });
    }
    Ok((0..xs).map(|x| a.get(x)).collect())
}

pub fn std_rc_objective(
    source: &JointSource,
    metric: &DecodingMetric,
    rho: f64,
    s: f64,
) -> Result<f64> {
    check_rho_s(rho, s, false)?;
    let t = Tables::new(source, metric)?;
    Ok(t.rc(rho, s, &t.zeros))
}

pub fn std_ex_objective(
    source: &JointSource,
    metric: &DecodingMetric,
    rho: f64,
    s: f64,
) -> Result<f64> {
    check_rho_s(rho, s, true)?;
    let t = Tables::new(source, metric)?;
    Ok(t.ex(rho, s, &t.zeros))
}

pub fn tt_rc_objective(
    source: &JointSource,
    metric: &DecodingMetric,
    rho: f64,
    s: f64,
    a: &CostFunction,
) -> Result<f64> {
    check_rho_s(rho, s, false)?;
    let t = Tables::new(source, metric)?;
    Ok(t.rc(rho, s, &cost_vector(a, t.xs)?))
}

pub fn tt_ex_objective(
    source: &JointSource,
    metric: &DecodingMetric,
    rho: f64,
    s: f64,
    a: &CostFunction,
) -> Result<f64> {
    check_rho_s(rho, s, true)?;
    let t = Tables::new(source, metric)?;
    Ok(t.ex(rho, s, &cost_vector(a, t.xs)?))
}

/// Objective of the matched type-by-type expurgated exponent.
pub fn matched_ex_tt_objective(source: &JointSource, rho: f64, a: &CostFunction) -> Result<f64> {
    check_rho_s(rho, 0.0, true)?;
    let b = Bhattacharyya::new(source);
    Ok(b.objective(rho, &cost_vector(a, source.x_size())?))
}

/// Gallager's `E0(rho)`.
pub fn gallager_e0(source: &JointSource, rho: f64) -> f64 {
    let mut outer = LogSumExp::new();
    for y in 0..source.y_size() {
        let py = source.py()[y];
        if py <= 0.0 {
            continue;
        }
        let inner = LogSumExp::new();
        let mut inner = inner;
        for x in 0..source.x_size() {
            inner.push(ln0(source.p_x_given_y(x, y)) / (1.0 + rho));
        }
        outer.push(py.ln() + (1.0 + rho) * inner.value());
    }
    if rho == 0.0 {
        return 0.0;
    }
    outer.value()
}

/// `(1+rho) log sum_x P(x)^{1/(1+rho)}`, the log term of the optimal
/// fixed-rate source code exponent.
pub fn optimal_no_si_objective(px: &[f64], rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    (1.0 + rho) * crate::numerics::log_sum_exp(px.iter().map(|p| ln0(*p) / (1.0 + rho)))
}

/// One inner problem: `F(rho, theta)` minimized over a box in `theta`.
type InnerFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + 'a>;

struct Inner<'a> {
    lo: Vec<f64>,
    hi: Vec<f64>,
    x0: Vec<f64>,
    f: InnerFn<'a>,
}

#[derive(Debug, Clone)]
struct Eval {
    rho: f64,
    g: f64,
    theta: Vec<f64>,
    converged: bool,
}

#[derive(Debug, Clone, Copy)]
enum Grid {
    /// `[0, 1]`, random-coding forms.
    Unit,
    /// `[1, cap]`, expurgated forms.
    AboveOne,
    /// `[0, cap]`, sphere-packing and no-side-information forms.
    Full,
}

fn rho_grid(kind: Grid, cap: f64) -> Vec<f64> {
    let n = GRID_POINTS;
    let lin = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    let log = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..k)
            .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
            .collect()
    };
    match kind {
        Grid::Unit => lin(0.0, 1.0, n),
        Grid::AboveOne => {
            if cap <= 1.0 {
                vec![1.0]
            } else {
                let mut g = log(1.0, cap, n);
                g[n - 1] = cap;
                g
            }
        }
        Grid::Full => {
            let mut g = lin(0.0, 1.0, n / 2 + 1);
            if cap > 1.0 {
                let mut tail = log(1.0, cap, n / 2 + 1);
                let last = tail.len() - 1;
                tail[last] = cap;
                g.extend(tail.into_iter().skip(1));
            }
            g
        }
    }
}

fn evaluate(inner: &Inner, rate: f64, rho: f64, warm: &[f64]) -> Eval {
    if rho == 0.0 {
        return Eval {
            rho,
            g: 0.0,
            theta: warm.to_vec(),
            converged: true,
        };
    }
    let opts = NewtonOptions::default();
    let r = minimize_convex_box(|th| (inner.f)(rho, th), warm, &inner.lo, &inner.hi, &opts);
    Eval {
        rho,
        g: rho * rate - r.value,
        theta: r.x,
        converged: r.converged,
    }
}

/// `sup_rho rho*rate - min_theta F(rho, theta)`.
fn search_rho(inner: &Inner, rate: f64, kind: Grid, cap: f64) -> Eval {
    let grid = rho_grid(kind, cap);
    let mut evals: Vec<Eval> = Vec::with_capacity(grid.len() + 64);
    let mut warm = inner.x0.clone();
    for &rho in &grid {
        let e = evaluate(inner, rate, rho, &warm);
        if e.rho > 0.0 {
            warm = e.theta.clone();
        }
        evals.push(e);
    }
    let mut best_i = 0;
    for (i, e) in evals.iter().enumerate() {
        if e.g > evals[best_i].g {
            best_i = i;
        }
    }
    let mut best = evals[best_i].clone();
    if grid.len() > 1 {
        let lo = grid[best_i.saturating_sub(1)];
        let hi = grid[(best_i + 1).min(grid.len() - 1)];
        let cache = RefCell::new(evals);
        let found = RefCell::new(best.clone());
        let tol = 1e-10 * hi.max(1.0);
        golden_section_max(
            |rho| {
                let warm = {
                    let c = cache.borrow();
                    c.iter()
                        .filter(|e| e.rho > 0.0)
                        .min_by(|a, b| (a.rho - rho).abs().total_cmp(&(b.rho - rho).abs()))
                        .map(|e| e.theta.clone())
                        .unwrap_or_else(|| inner.x0.clone())
                };
                let e = evaluate(inner, rate, rho, &warm);
                let g = e.g;
                if g > found.borrow().g {
                    *found.borrow_mut() = e.clone();
                }
                cache.borrow_mut().push(e);
                g
            },
            lo,
            hi,
            tol,
        );
        best = found.into_inner();
    }
    if matches!(kind, Grid::Unit | Grid::Full) && best.g <= ZERO_FLOOR {
        return Eval {
            rho: 0.0,
            g: 0.0,
            theta: inner.x0.clone(),
            converged: true,
        };
    }
    best
}

fn finish(
    rate: f64,
    e: Eval,
    cap: Option<f64>,
    s: Option<f64>,
    a: Option<CostFunction>,
) -> ExponentPoint {
    let saturated_rho = cap.map(|c| e.rho >= c * (1.0 - 1e-9)).unwrap_or(false);
    ExponentPoint {
        rate,
        value: e.g.max(0.0),
        argmax: DualParams { rho: e.rho, s, a },
        saturated_rho,
        converged: e.converged,
        branch: None,
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::InvalidParameter(format!("rate = {rate}")));
    }
    Ok(())
}

fn check_cap(cap: f64) -> Result<()> {
    if !cap.is_finite() || cap < 1.0 {
        return Err(Error::InvalidParameter(format!("rho_cap = {cap}")));
    }
    Ok(())
}

fn s_only<'a>(f: InnerFn<'a>) -> Inner<'a> {
    Inner {
        lo: vec![0.0],
        hi: vec![S_MAX],
        x0: vec![1.0],
        f,
    }
}

fn s_and_cost<'a>(layout: &CostLayout, f: InnerFn<'a>) -> Inner<'a> {
    let d = 1 + layout.free_dim();
    let mut lo = vec![-A_MAX; d];
    let mut hi = vec![A_MAX; d];
    lo[0] = 0.0;
    hi[0] = S_MAX;
    let mut x0 = vec![0.0; d];
    x0[0] = 1.0;
    Inner { lo, hi, x0, f }
}

fn std_point(t: &Tables, rate: f64, expurgated: bool, cap: f64) -> ExponentPoint {
    let inner = if expurgated {
        s_only(Box::new(|rho, th: &[f64]| t.ex(rho, th[0], &t.zeros)))
    } else {
        s_only(Box::new(|rho, th: &[f64]| t.rc(rho, th[0], &t.zeros)))
    };
    let (kind, c) = if expurgated {
        (Grid::AboveOne, Some(cap))
    } else {
        (Grid::Unit, None)
    };
    let e = search_rho(&inner, rate, kind, cap);
    let s = e.theta[0];
    finish(rate, e, c, Some(s), None)
}

fn tt_point(t: &Tables, rate: f64, expurgated: bool, cap: f64) -> ExponentPoint {
    let layout = CostLayout {
        xs: t.xs,
        support: t.support.clone(),
    };
    let lay = layout.clone();
    let inner = s_and_cost(
        &layout,
        Box::new(move |rho, th: &[f64]| {
            let mut a = vec![0.0; lay.xs];
            lay.expand(&th[1..], &mut a);
            if expurgated {
                t.ex(rho, th[0], &a)
            } else {
                t.rc(rho, th[0], &a)
            }
        }),
    );
    let (kind, c) = if expurgated {
        (Grid::AboveOne, Some(cap))
    } else {
        (Grid::Unit, None)
    };
    let e = search_rho(&inner, rate, kind, cap);
    let s = e.theta[0];
    let a = layout.cost(&e.theta[1..]);
    finish(rate, e, c, Some(s), Some(a))
}

pub fn exponent_r_gallager(source: &JointSource, rate: f64) -> Result<ExponentPoint> {
    check_rate(rate)?;
    let inner = Inner {
        lo: vec![],
        hi: vec![],
        x0: vec![],
        f: Box::new(|rho, _| gallager_e0(source, rho)),
    };
    Ok(finish(
        rate,
        search_rho(&inner, rate, Grid::Unit, 1.0),
        None,
        None,
        None,
    ))
}

pub fn exponent_sp(source: &JointSource, rate: f64, rho_cap: f64) -> Result<ExponentPoint> {
    check_rate(rate)?;
    check_cap(rho_cap)?;
    let inner = Inner {
        lo: vec![],
        hi: vec![],
        x0: vec![],
        f: Box::new(|rho, _| gallager_e0(source, rho)),
    };
    Ok(finish(
        rate,
        search_rho(&inner, rate, Grid::Full, rho_cap),
        Some(rho_cap),
        None,
        None,
    ))
}

pub fn exponent_std_rc(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
) -> Result<ExponentPoint> {
    check_rate(rate)?;
    let t = Tables::new(source, metric)?;
    Ok(std_point(&t, rate, false, 1.0))
}

pub fn exponent_std_ex(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    rho_cap: f64,
) -> Result<ExponentPoint> {
    check_rate(rate)?;
    check_cap(rho_cap)?;
    let t = Tables::new(source, metric)?;
    Ok(std_point(&t, rate, true, rho_cap))
}

pub fn exponent_tt_rc(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
) -> Result<ExponentPoint> {
    check_rate(rate)?;
    let t = Tables::new(source, metric)?;
    Ok(tt_point(&t, rate, false, 1.0))
}

pub fn exponent_tt_ex(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    rho_cap: f64,
) -> Result<ExponentPoint> {
    check_rate(rate)?;
    check_cap(rho_cap)?;
    let t = Tables::new(source, metric)?;
    Ok(tt_point(&t, rate, true, rho_cap))
}

/// Standard-ensemble expurgated exponent under the MAP metric.
pub fn matched_ex_std(source: &JointSource, rate: f64, rho_cap: f64) -> Result<ExponentPoint> {
    exponent_std_ex(source, &DecodingMetric::matched(source), rate, rho_cap)
}

/// Type-by-type expurgated exponent under the MAP metric, in Bhattacharyya form.
pub fn matched_ex_tt(source: &JointSource, rate: f64, rho_cap: f64) -> Result<ExponentPoint> {
    check_rate(rate)?;
    check_cap(rho_cap)?;
    let b = Bhattacharyya::new(source);
    let layout = CostLayout {
        xs: b.xs,
        support: b.support.clone(),
    };
    let d = layout.free_dim();
    let lay = layout.clone();
    let inner = Inner {
        lo: vec![-A_MAX; d],
        hi: vec![A_MAX; d],
        x0: vec![0.0; d],
        f: Box::new(move |rho, th: &[f64]| {
            let mut a = vec![0.0; lay.xs];
            lay.expand(th, &mut a);
            b.objective(rho, &a)
        }),
    };
    let e = search_rho(&inner, rate, Grid::AboveOne, rho_cap);
    let a = layout.cost(&e.theta);
    Ok(finish(rate, e, Some(rho_cap), Some(0.5), Some(a)))
}

/// Mismatched exponent without side information, metric `q(x)`.
pub fn exponent_no_si(px: &[f64], q: &[f64], rate: f64, rho_cap: f64) -> Result<ExponentPoint> {
    check_rate(rate)?;
    check_cap(rho_cap)?;
    let source = JointSource::without_side_information(px)?;
    let rows: Vec<Vec<f64>> = q.iter().map(|v| vec![*v]).collect();
    let metric = DecodingMetric::new(&rows)?;
    let t = Tables::new(&source, &metric)?;
    let inner = s_only(Box::new(|rho, th: &[f64]| t.rc(rho, th[0], &t.zeros)));
    let e = search_rho(&inner, rate, Grid::Full, rho_cap);
    let s = e.theta[0];
    Ok(finish(rate, e, Some(rho_cap), Some(s), None))
}

/// Exponent of the optimal fixed-rate source code.
pub fn exponent_no_si_optimal(px: &[f64], rate: f64, rho_cap: f64) -> Result<ExponentPoint> {
    check_rate(rate)?;
    check_cap(rho_cap)?;
    let p = JointSource::without_side_information(px)?.px().to_vec();
    let inner = Inner {
        lo: vec![],
        hi: vec![],
        x0: vec![],
        f: Box::new(move |rho, _| optimal_no_si_objective(&p, rho)),
    };
    Ok(finish(
        rate,
        search_rho(&inner, rate, Grid::Full, rho_cap),
        Some(rho_cap),
        None,
        None,
    ))
}

/// Larger of the random-coding and expurgated points of an ensemble. Ties go
/// to the random-coding branch.
pub fn combined_exponent(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    ensemble: Ensemble,
    rho_cap: f64,
) -> Result<ExponentPoint> {
    let (rc, ex) = match ensemble {
        Ensemble::Standard => (
            exponent_std_rc(source, metric, rate)?,
            exponent_std_ex(source, metric, rate, rho_cap)?,
        ),
        Ensemble::TypeByType => (
            exponent_tt_rc(source, metric, rate)?,
            exponent_tt_ex(source, metric, rate, rho_cap)?,
        ),
    };
    Ok(pick_branch(rc, ex))
}

fn pick_branch(rc: ExponentPoint, ex: ExponentPoint) -> ExponentPoint {
    if ex.value > rc.value {
        ExponentPoint {
            branch: Some(Branch::Expurgated),
            ..ex
        }
    } else {
        ExponentPoint {
            branch: Some(Branch::RandomCoding),
            ..rc
        }
    }
}

/// Evaluates one family on a rate grid; grid points run in parallel.
pub fn exponent_curve(
    source: &JointSource,
    metric: &DecodingMetric,
    family: Family,
    rates: &[f64],
    rho_cap: f64,
) -> Result<ExponentCurve> {
    if rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "rate grid must be strictly increasing".into(),
        ));
    }
    metric.check_compatible(source)?;
    let points = rates
        .par_iter()
        .map(|&r| match family {
            Family::StdRc => exponent_std_rc(source, metric, r),
            Family::StdEx => exponent_std_ex(source, metric, r, rho_cap),
            Family::Std => combined_exponent(source, metric, r, Ensemble::Standard, rho_cap),
            Family::TtRc => exponent_tt_rc(source, metric, r),
            Family::TtEx => exponent_tt_ex(source, metric, r, rho_cap),
            Family::Tt => combined_exponent(source, metric, r, Ensemble::TypeByType, rho_cap),
            Family::Gallager => exponent_r_gallager(source, r),
            Family::SpherePacking => exponent_sp(source, r, rho_cap),
            Family::MatchedExStd => matched_ex_std(source, r, rho_cap),
            Family::MatchedExTt => matched_ex_tt(source, r, rho_cap),
            Family::NoSideInfo | Family::NoSideInfoOptimal => Err(Error::InvalidParameter(
                "no-side-information families take a marginal and a metric vector".into(),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExponentCurve { family, points })
}

/// All exponents reported for one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub rate: f64,
    pub std_rc: ExponentPoint,
    pub std_ex: ExponentPoint,
    pub std: ExponentPoint,
    pub tt_rc: ExponentPoint,
    pub tt_ex: ExponentPoint,
    pub tt: ExponentPoint,
    pub gallager: ExponentPoint,
    pub sp: ExponentPoint,
}

/// Every exponent family on a rate grid, one row per rate.
pub fn exponent_table(
    source: &JointSource,
    metric: &DecodingMetric,
    rates: &[f64],
    rho_cap: f64,
) -> Result<Vec<ExponentRow>> {
    if rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "rate grid must be strictly increasing".into(),
        ));
    }
    check_cap(rho_cap)?;
    metric.check_compatible(source)?;
    rates
        .par_iter()
        .map(|&rate| {
            let std_rc = exponent_std_rc(source, metric, rate)?;
            let std_ex = exponent_std_ex(source, metric, rate, rho_cap)?;
            let tt_rc = exponent_tt_rc(source, metric, rate)?;
            let tt_ex = exponent_tt_ex(source, metric, rate, rho_cap)?;
            Ok(ExponentRow {
                rate,
                std: pick_branch(std_rc.clone(), std_ex.clone()),
                tt: pick_branch(tt_rc.clone(), tt_ex.clone()),
                std_rc,
                std_ex,
                tt_rc,
                tt_ex,
                gallager: exponent_r_gallager(source, rate)?,
                sp: exponent_sp(source, rate, rho_cap)?,
            })
        })
        .collect()
}

/// Tilted distributions at the type-by-type optima of a rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tilted {
    /// From the random-coding optimum.
    pub q: Vec<f64>,
    /// From the expurgated optimum.
    pub q_tilde: Vec<f64>,
    pub rc: ExponentPoint,
    pub ex: ExponentPoint,
}

pub fn tilted_distributions(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    rho_cap: f64,
) -> Result<Tilted> {
    let t = Tables::new(source, metric)?;
    let rc = exponent_tt_rc(source, metric, rate)?;
    let ex = exponent_tt_ex(source, metric, rate, rho_cap)?;
    if !rc.converged || !ex.converged {
        return Err(Error::NotConverged(format!(
            "type-by-type optimum at rate {rate}"
        )));
    }
    let params = |p: &ExponentPoint| -> (f64, f64, Vec<f64>) {
        let a = p
            .argmax
            .a
            .as_ref()
            .expect("type-by-type point carries a cost");
        (
            p.argmax.rho,
            p.argmax.s.unwrap_or(0.0),
            (0..t.xs).map(|x| a.get(x)).collect(),
        )
    };
    let (rho, s, a) = params(&rc);
    let mut wq = vec![f64::NEG_INFINITY; t.xs];
    for &x in &t.support {
        let mut acc = LogSumExp::new();
        for y in 0..t.ys {
            let lp = t.lp[x * t.ys + y];
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let mut inner = LogSumExp::new();
            for xb in 0..t.xs {
                inner.push(scaled_log(s, t.lq[xb * t.ys + y] - t.lq[x * t.ys + y]) + a[xb] - a[x]);
            }
            acc.push(lp + scaled_log(rho, inner.value()));
        }
        wq[x] = acc.value();
    }
    let (rho, s, a) = params(&ex);
    let mut wt = vec![f64::NEG_INFINITY; t.xs];
    for &x in &t.support {
        let mut mid = LogSumExp::new();
        for xb in 0..t.xs {
            if a[xb] == f64::NEG_INFINITY {
                continue;
            }
            let mut inner = LogSumExp::new();
            for y in 0..t.ys {
                let lp = t.lp[x * t.ys + y];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                inner.push(lp - t.lpx[x] + scaled_log(s, t.lq[xb * t.ys + y] - t.lq[x * t.ys + y]));
            }
            let v = inner.value();
            if v > f64::NEG_INFINITY {
                mid.push((v + a[xb] - a[x]) / rho);
            }
        }
        wt[x] = t.lpx[x] + rho * mid.value();
    }
    Ok(Tilted {
        q: normalize_log(&wq),
        q_tilde: normalize_log(&wt),
        rc,
        ex,
    })
}

fn normalize_log(w: &[f64]) -> Vec<f64> {
    let z = crate::numerics::log_sum_exp(w.iter().copied());
    let mut p: Vec<f64> = w.iter().map(|v| (v - z).exp()).collect();
    let total: f64 = crate::numerics::compensated_sum(p.iter().copied());
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Constant-composition exponents of the channel `P(y|x)` under input
/// distribution `q_dist`, used by the tilted-distribution decomposition.
struct ConstantComposition {
    xs: usize,
    ys: usize,
    lw: Vec<f64>,
    lq: Vec<f64>,
    lqd: Vec<f64>,
    support: Vec<usize>,
}

impl ConstantComposition {
    fn new(source: &JointSource, metric: &DecodingMetric, q_dist: &[f64]) -> Result<Self> {
        metric.check_compatible(source)?;
        if q_dist.len() != source.x_size() {
            return Err(Error::DimensionMismatch {
                expected: source.x_size().to_string(),
                found: q_dist.len().to_string(),
            });
        }
        let (xs, ys) = (source.x_size(), source.y_size());
        let support: Vec<usize> = (0..xs).filter(|&x| q_dist[x] > 0.0).collect();
        if support.iter().any(|&x| source.px()[x] <= 0.0) {
            return Err(Error::InvalidParameter(
                "input distribution outside source support".into(),
            ));
        }
        let mut lw = vec![f64::NEG_INFINITY; xs * ys];
        let mut lq = vec![0.0; xs * ys];
        for x in 0..xs {
            for y in 0..ys {
                lw[x * ys + y] = ln0(source.p_y_given_x(y, x));
                lq[x * ys + y] = ln0(metric.q(x, y));
            }
        }
        Ok(Self {
            xs,
            ys,
            lw,
            lq,
            lqd: q_dist.iter().map(|v| ln0(*v)).collect(),
            support,
        })
    }

    /// `-sum_x Q(x) log sum_y W(y|x) (sum_xb Q(xb) e^{a(xb)-a(x)} (q(xb,y)/q(x,y))^s)^rho`.
    fn e0(&self, rho: f64, s: f64, a: &[f64]) -> f64 {
        let mut total = 0.0;
        for &x in &self.support {
            let mut acc = LogSumExp::new();
            for y in 0..self.ys {
                let lw = self.lw[x * self.ys + y];
                if lw == f64::NEG_INFINITY {
                    continue;
                }
                let mut inner = LogSumExp::new();
                for &xb in &self.support {
                    inner.push(
                        self.lqd[xb]
                            + scaled_log(s, self.lq[xb * self.ys + y] - self.lq[x * self.ys + y])
                            + a[xb]
                            - a[x],
                    );
                }
                acc.push(lw + scaled_log(rho, inner.value()));
            }
            total -= self.lqd[x].exp() * acc.value();
        }
        total
    }

    /// `-rho sum_x Q(x) log sum_xb Q(xb) (sum_y W(y|x) e^{a(xb)-a(x)} (q(xb,y)/q(x,y))^s)^{1/rho}`.
    fn ex(&self, rho: f64, s: f64, a: &[f64]) -> f64 {
        let mut total = 0.0;
        for &x in &self.support {
            let mut mid = LogSumExp::new();
            for &xb in &self.support {
                let mut inner = LogSumExp::new();
                for y in 0..self.ys {
                    let lw = self.lw[x * self.ys + y];
                    if lw == f64::NEG_INFINITY {
                        continue;
                    }
                    inner.push(
                        lw + scaled_log(s, self.lq[xb * self.ys + y] - self.lq[x * self.ys + y]),
                    );
                }
                let v = inner.value();
                if v > f64::NEG_INFINITY {
                    mid.push(self.lqd[xb] + (v + a[xb] - a[x]) / rho);
                }
            }
            total -= rho * self.lqd[x].exp() * mid.value();
        }
        total
    }
}

/// Constant-composition random-coding exponent at rate `r` for input
/// distribution `q_dist` over the source's conditional channel.
pub fn constant_composition_rc(
    source: &JointSource,
    metric: &DecodingMetric,
    q_dist: &[f64],
    r: f64,
) -> Result<f64> {
    let cc = ConstantComposition::new(source, metric, q_dist)?;
    let layout = CostLayout {
        xs: cc.xs,
        support: cc.support.clone(),
    };
    let lay = layout.clone();
    let inner = s_and_cost(
        &layout,
        Box::new(move |rho, th: &[f64]| {
            let mut a = vec![0.0; lay.xs];
            lay.expand(&th[1..], &mut a);
            -cc.e0(rho, th[0], &a)
        }),
    );
    Ok(search_cc(&inner, r, Grid::Unit, 1.0))
}

/// Constant-composition expurgated exponent, `sup_{rho >= 1}`.
pub fn constant_composition_ex(
    source: &JointSource,
    metric: &DecodingMetric,
    q_dist: &[f64],
    r: f64,
    rho_cap: f64,
) -> Result<f64> {
    let cc = ConstantComposition::new(source, metric, q_dist)?;
    let layout = CostLayout {
        xs: cc.xs,
        support: cc.support.clone(),
    };
    let lay = layout.clone();
    let inner = s_and_cost(
        &layout,
        Box::new(move |rho, th: &[f64]| {
            let mut a = vec![0.0; lay.xs];
            lay.expand(&th[1..], &mut a);
            -cc.ex(rho, th[0], &a)
        }),
    );
    Ok(search_cc(&inner, r, Grid::AboveOne, rho_cap))
}

/// `sup_rho E(rho) - rho r` where `inner.f = -E`; `r` may be negative.
fn search_cc(inner: &Inner, r: f64, kind: Grid, cap: f64) -> f64 {
    let e = search_rho(inner, -r, kind, cap);
    if matches!(kind, Grid::AboveOne) {
        e.g
    } else {
        e.g.max(0.0)
    }
}

/// `D(Q || P_X) + E^cc(H(Q) - rate, Q)` for a random-coding or expurgated
/// constant-composition exponent.
pub fn tilted_decomposition(
    source: &JointSource,
    metric: &DecodingMetric,
    q_dist: &[f64],
    rate: f64,
    expurgated: bool,
    rho_cap: f64,
) -> Result<f64> {
    let d = kl_divergence(q_dist, source.px())?;
    let r = entropy(q_dist) - rate;
    let e = if expurgated {
        constant_composition_ex(source, metric, q_dist, r, rho_cap)?
    } else {
        constant_composition_rc(source, metric, q_dist, r)?
    };
    Ok(d + e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example_source;
    use approx::assert_abs_diff_eq;

    fn hamming3() -> DecodingMetric {
        DecodingMetric::hamming(3, 0.1).unwrap()
    }

    #[test]
    fn objective_trivial_values() {
        let s = example_source();
        let q = hamming3();
        assert_abs_diff_eq!(
            std_rc_objective(&s, &q, 0.5, 0.0).unwrap(),
            0.5 * 3f64.ln(),
            epsilon = 1e-14
        );
        assert!(std_rc_objective(&s, &q, 0.0, 0.7).unwrap().abs() < 1e-15);
        assert_abs_diff_eq!(
            std_ex_objective(&s, &q, 2.0, 0.0).unwrap(),
            2.0 * 3f64.ln(),
            epsilon = 1e-14
        );
        let pm = JointSource::new(&[vec![0.3, 0.7]]).unwrap();
        let qm = DecodingMetric::new(&[vec![0.5, 2.0]]).unwrap();
        assert_abs_diff_eq!(
            std_ex_objective(&pm, &qm, 3.0, 1.3).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rc_and_ex_agree_at_rho_one() {
        let s = example_source();
        let q = hamming3();
        let a = CostFunction::new(&[0.2, -0.5, 0.1]);
        for &sv in &[0.0, 0.3, 1.0, 2.5] {
            let rc = tt_rc_objective(&s, &q, 1.0, sv, &a).unwrap();
            let ex = tt_ex_objective(&s, &q, 1.0, sv, &a).unwrap();
            assert_abs_diff_eq!(rc, ex, epsilon = 1e-13);
        }
    }

    #[test]
    fn gallager_e0_trivial() {
        let s = example_source();
        assert_eq!(gallager_e0(&s, 0.0), 0.0);
        let pm = JointSource::new(&[vec![0.0, 0.0], vec![0.3, 0.7]]).unwrap();
        assert_abs_diff_eq!(gallager_e0(&pm, 0.7), 0.0, epsilon = 1e-15);
        // slope at zero is H(X|Y)
        let h = 1e-6;
        assert_abs_diff_eq!(
            gallager_e0(&s, h) / h,
            s.conditional_entropy(),
            epsilon = 1e-5
        );
    }

    #[test]
    fn gallager_below_threshold_is_zero() {
        let s = example_source();
        let p = exponent_r_gallager(&s, 0.4).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(p.argmax.rho, 0.0);
        let pm = JointSource::new(&[vec![0.4, 0.6]]).unwrap();
        let p = exponent_r_gallager(&pm, 0.3).unwrap();
        assert_abs_diff_eq!(p.value, 0.3, epsilon = 1e-12);
        assert_eq!(p.argmax.rho, 1.0);
    }

    #[test]
    fn sphere_packing_saturates_above_log_support() {
        let s = example_source();
        let p = exponent_sp(&s, 1.2, 16.0).unwrap();
        assert!(p.saturated_rho);
        let q = exponent_sp(&s, 1.2, 32.0).unwrap();
        assert!(q.value > p.value);
    }

    #[test]
    fn tt_dominates_std_on_example() {
        let s = example_source();
        let q = hamming3();
        let std = exponent_std_rc(&s, &q, 0.7).unwrap();
        let tt = exponent_tt_rc(&s, &q, 0.7).unwrap();
        let er = exponent_r_gallager(&s, 0.7).unwrap();
        assert!(std.value <= tt.value + 1e-9);
        assert!(tt.value <= er.value + 1e-9);
        assert!(std.converged && tt.converged);
    }

    #[test]
    fn point_mass_expurgated_saturates() {
        let pm = JointSource::new(&[vec![0.3, 0.7]]).unwrap();
        let q = DecodingMetric::new(&[vec![0.5, 2.0]]).unwrap();
        let p = exponent_std_ex(&pm, &q, 0.1, 8.0).unwrap();
        assert!(p.saturated_rho);
        assert_abs_diff_eq!(p.value, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn combined_picks_larger_branch() {
        let s = example_source();
        let q = hamming3();
        let lo = combined_exponent(&s, &q, 0.55, Ensemble::TypeByType, 64.0).unwrap();
        assert_eq!(lo.branch, Some(Branch::RandomCoding));
        let hi = combined_exponent(&s, &q, 1.05, Ensemble::TypeByType, 64.0).unwrap();
        assert_eq!(hi.branch, Some(Branch::Expurgated));
    }

    #[test]
    fn rho_grids() {
        assert_eq!(rho_grid(Grid::Unit, 1.0).len(), GRID_POINTS);
        let g = rho_grid(Grid::AboveOne, 64.0);
        assert_eq!((g[0], *g.last().unwrap()), (1.0, 64.0));
        let f = rho_grid(Grid::Full, 64.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn shape_report_flags_concavity() {
        let mk = |v: &[f64]| ExponentCurve {
            family: Family::Gallager,
            points: v
                .iter()
                .enumerate()
                .map(|(i, &value)| ExponentPoint {
                    rate: i as f64,
                    value,
                    argmax: DualParams {
                        rho: 0.0,
                        s: None,
                        a: None,
                    },
                    saturated_rho: false,
                    converged: true,
                    branch: None,
                })
                .collect(),
        };
        assert!(mk(&[0.0, 0.0, 1.0, 3.0]).shape(1e-9).convex);
        assert!(!mk(&[0.0, 2.0, 3.0]).shape(1e-9).convex);
        assert!(!mk(&[1.0, 0.5]).shape(1e-9).nondecreasing);
    }
}
