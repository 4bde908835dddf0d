//! Primal-domain exponents: divergence minimizations over joint
//! distributions, solved numerically and used to cross-check the dual forms.
//!
//! Distributions live on the cells of `X^ x X~ x Y` that can carry mass at
//! finite cost. Each solve is an augmented Lagrangian loop whose inner
//! problems are minimized by L-BFGS in softmax coordinates. The positive
//! part `|R - H|^+` is handled by solving the two convex branches
//! `min D s.t. H >= R` and `min D + R - H` and keeping the better objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dual::{combined_exponent, exponent_tt_ex, exponent_tt_rc, Ensemble};
use crate::error::{Error, Result};
use crate::model::{DecodingMetric, JointSource};
use crate::numerics::{lbfgs, ln0, LbfgsOptions, NeumaierSum};

const XH: usize = 1;
const XT: usize = 2;
const YY: usize = 4;

/// Constraint violation accepted as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrimalConfig {
    /// Random starts in addition to the deterministic ones.
    pub restarts: usize,
    pub seed: u64,
}

impl PrimalConfig {
    pub const fn new(restarts: usize, seed: u64) -> Self {
        Self { restarts, seed }
    }

    pub fn doubled(&self) -> Self {
        Self {
            restarts: self.restarts * 2,
            seed: self.seed,
        }
    }
}

/// Default for the two-variable problems.
pub const DEFAULT_CONFIG: PrimalConfig = PrimalConfig::new(20, 0x5eed);
/// Default for the three-variable problems with metric constraints.
pub const DEFAULT_CK_CONFIG: PrimalConfig = PrimalConfig::new(40, 0x5eed);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalSolution {
    pub value: f64,
    /// Dense minimizer, row-major over `dims`.
    pub minimizer: Vec<f64>,
    /// Alphabet sizes of the minimizer's axes.
    pub dims: Vec<usize>,
    pub feasible: bool,
    /// Largest constraint violation at the minimizer.
    pub max_violation: f64,
    /// `E log q(X^,Y~) - E log q(X~,Y~)`, for metric-constrained problems.
    pub metric_slack: Option<f64>,
    pub metric_constraint_active: Option<bool>,
    pub starts: usize,
}

impl PrimalSolution {
    fn infeasible(dims: Vec<usize>, starts: usize) -> Self {
        let len = dims.iter().product();
        Self {
            value: f64::INFINITY,
            minimizer: vec![0.0; len],
            dims,
            feasible: false,
            max_violation: f64::INFINITY,
            metric_slack: None,
            metric_constraint_active: None,
            starts,
        }
    }
}

/// Cells of `X^ x X~ x Y` that may carry mass, with precomputed marginal keys.
#[derive(Debug, Clone)]
struct Space {
    dims: [usize; 3],
    cells: Vec<[usize; 3]>,
    keys: Vec<Vec<usize>>,
    sizes: Vec<usize>,
}

impl Space {
    fn new(dims: [usize; 3], cells: Vec<[usize; 3]>) -> Self {
        let mut keys = vec![Vec::new(); 8];
        let mut sizes = vec![1; 8];
        for mask in 0..8 {
            let mut size = 1;
            for (axis, &d) in dims.iter().enumerate() {
                if mask & (1 << axis) != 0 {
                    size *= d;
                }
            }
            sizes[mask] = size;
            keys[mask] = cells
                .iter()
                .map(|c| {
                    let mut k = 0;
                    for (axis, &d) in dims.iter().enumerate() {
                        if mask & (1 << axis) != 0 {
                            k = k * d + c[axis];
                        }
                    }
                    k
                })
                .collect();
        }
        Self {
            dims,
            cells,
            keys,
            sizes,
        }
    }

    fn n(&self) -> usize {
        self.cells.len()
    }

    fn marginal(&self, p: &[f64], mask: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.sizes[mask]];
        for (i, &k) in self.keys[mask].iter().enumerate() {
            m[k] += p[i];
        }
        m
    }

    /// Joint entropy of the axes in `mask`; adds `w * dH/dp` to `grad`.
    fn entropy(&self, p: &[f64], mask: usize, w: f64, grad: Option<&mut [f64]>) -> f64 {
        let m = self.marginal(p, mask);
        let mut acc = NeumaierSum::new();
        for &v in &m {
            if v > 0.0 {
                acc.add(-v * v.ln());
            }
        }
        if let Some(g) = grad {
            for (i, &k) in self.keys[mask].iter().enumerate() {
                g[i] -= w * (ln0(m[k]).max(-745.0) + 1.0);
            }
        }
        acc.value()
    }

    /// `H(a | b)` where `b` is a subset of `a`.
    fn cond_entropy(&self, p: &[f64], a: usize, b: usize, w: f64, grad: Option<&mut [f64]>) -> f64 {
        match grad {
            Some(g) => {
                let hab = self.entropy(p, a, w, Some(g));
                let hb = self.entropy(p, b, -w, Some(g));
                hab - hb
            }
            None => self.entropy(p, a, 0.0, None) - self.entropy(p, b, 0.0, None),
        }
    }

    /// `D(marginal_mask(p) || reference)`; adds `w * dD/dp` to `grad`.
    fn divergence(
        &self,
        p: &[f64],
        mask: usize,
        reference: &[f64],
        w: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let m = self.marginal(p, mask);
        let mut acc = NeumaierSum::new();
        for (k, &v) in m.iter().enumerate() {
            if v > 0.0 {
                acc.add(v * (v / reference[k]).ln());
            }
        }
        if let Some(g) = grad {
            for (i, &k) in self.keys[mask].iter().enumerate() {
                let v = m[k].max(1e-300);
                g[i] += w * ((v / reference[k]).ln() + 1.0);
            }
        }
        acc.value()
    }

    fn linear(&self, p: &[f64], c: &[f64], w: f64, grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad {
            for (gi, ci) in g.iter_mut().zip(c) {
                *gi += w * ci;
            }
        }
        let mut acc = NeumaierSum::new();
        for (pi, ci) in p.iter().zip(c) {
            acc.add(pi * ci);
        }
        acc.value()
    }

    fn dense(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.iter().product()];
        for (i, c) in self.cells.iter().enumerate() {
            out[(c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]] = p[i];
        }
        out
    }
}

type Func<'a> = Box<dyn Fn(&[f64], Option<&mut [f64]>) -> f64 + Send + Sync + 'a>;

/// `min f(p)` over the simplex subject to `eq(p) = 0` and `ineq(p) <= 0`.
struct Program<'a> {
    n: usize,
    objective: Func<'a>,
    eqs: Vec<Func<'a>>,
    ineqs: Vec<Func<'a>>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

impl Program<'_> {
    fn solve(&self, start: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = start.iter().map(|v| v.max(1e-12).ln()).collect();
        let mut lam = vec![0.0; self.eqs.len()];
        let mut nu = vec![0.0; self.ineqs.len()];
        let mut mu = 10.0;
        let mut prev_violation = f64::INFINITY;
        let mut prev_f = f64::INFINITY;
        let opts = LbfgsOptions {
            max_iter: 4000,
            memory: 12,
            grad_tol: 1e-11,
        };
        let constrained = !(self.eqs.is_empty() && self.ineqs.is_empty());
        for outer in 0..60 {
            let lagrangian = |z: &[f64], gz: &mut [f64]| -> f64 {
                let p = softmax(z);
                let mut gp = vec![0.0; self.n];
                let mut val = (self.objective)(&p, Some(&mut gp));
                for (j, h) in self.eqs.iter().enumerate() {
                    let mut gh = vec![0.0; self.n];
                    let hv = h(&p, Some(&mut gh));
                    val += lam[j] * hv + 0.5 * mu * hv * hv;
                    let w = lam[j] + mu * hv;
                    gp.iter_mut().zip(&gh).for_each(|(g, d)| *g += w * d);
                }
                for (k, c) in self.ineqs.iter().enumerate() {
                    let mut gc = vec![0.0; self.n];
                    let cv = c(&p, Some(&mut gc));
                    let t = (nu[k] + mu * cv).max(0.0);
                    val += (t * t - nu[k] * nu[k]) / (2.0 * mu);
                    if t > 0.0 {
                        gp.iter_mut().zip(&gc).for_each(|(g, d)| *g += t * d);
                    }
                }
                let mean: f64 = p.iter().zip(&gp).map(|(a, b)| a * b).sum();
                for i in 0..z.len() {
                    gz[i] = p[i] * (gp[i] - mean);
                }
                val
            };
            let r = lbfgs(lagrangian, &z, &opts);
            z = r.x;
            // keep logits bounded below to avoid underflow of the softmax
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            z.iter_mut().for_each(|v| *v = v.max(zmax - 700.0));
            if !constrained {
                break;
            }
            let p = softmax(&z);
            let f = (self.objective)(&p, None);
            let mut violation: f64 = 0.0;
            for (j, h) in self.eqs.iter().enumerate() {
                let hv = h(&p, None);
                lam[j] += mu * hv;
                violation = violation.max(hv.abs());
            }
            for (k, c) in self.ineqs.iter().enumerate() {
                let cv = c(&p, None);
                nu[k] = (nu[k] + mu * cv).max(0.0);
                violation = violation.max(cv.max(0.0));
            }
            if violation < 1e-11 && (f - prev_f).abs() < 1e-11 && outer > 0 {
                break;
            }
            if violation > 0.25 * prev_violation {
                mu = (mu * 10.0).min(1e8);
            }
            prev_violation = violation;
            prev_f = f;
        }
        softmax(&z)
    }
}

/// Deterministic and random starting points, indexed so that increasing the
/// restart count only appends starts.
fn starts(n: usize, fixed: Vec<Vec<f64>>, cfg: &PrimalConfig) -> Vec<Vec<f64>> {
    let mut all = fixed;
    all.push(vec![1.0 / n as f64; n]);
    for i in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let w: Vec<f64> = (0..n)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * 3.0)
            .map(f64::exp)
            .collect();
        let s: f64 = w.iter().sum();
        all.push(w.into_iter().map(|v| v / s).collect());
    }
    all
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Runs every (branch, start) pair and keeps the feasible point with the
/// smallest exact objective `phi`. Ties go to the earliest pair.
fn best_of<'a>(
    branches: &[Program<'a>],
    starts: &[Vec<f64>],
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    full_violation: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Option<(Vec<f64>, f64, f64)> {
    let jobs: Vec<(usize, usize)> = (0..branches.len())
        .flat_map(|b| (0..starts.len()).map(move |s| (b, s)))
        .collect();
    let results: Vec<(Vec<f64>, f64, f64)> = jobs
        .par_iter()
        .map(|&(b, s)| {
            let p = branches[b].solve(&starts[s]);
            let v = full_violation(&p);
            let val = phi(&p);
            (p, val, v)
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for r in results {
        if r.2 > FEASIBILITY_TOL || !r.1.is_finite() {
            continue;
        }
        if best.as_ref().map(|b| r.1 < b.1).unwrap_or(true) {
            best = Some(r);
        }
    }
    best
}

/// Largest achievable `H(X~|Y~)` for distributions absolutely continuous
/// with respect to `P_XY`.
fn max_conditional_entropy(source: &JointSource) -> f64 {
    (0..source.y_size())
        .map(|y| {
            (0..source.x_size())
                .filter(|&x| source.p(x, y) > 0.0)
                .count()
        })
        .max()
        .map(|c| (c.max(1) as f64).ln())
        .unwrap_or(0.0)
}

fn check_rate(rate: f64) -> Result<()> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::InvalidParameter(format!("rate = {rate}")));
    }
    Ok(())
}

fn two_variable_space(source: &JointSource) -> (Space, Vec<f64>) {
    let (xs, ys) = (source.x_size(), source.y_size());
    let cells: Vec<[usize; 3]> = (0..xs)
        .flat_map(|x| (0..ys).map(move |y| [0, x, y]))
        .filter(|c| source.p(c[1], c[2]) > 0.0)
        .collect();
    let reference: Vec<f64> = (0..xs * ys).map(|k| source.p(k / ys, k % ys)).collect();
    (Space::new([1, xs, ys], cells), reference)
}

fn pair_solution(
    space: &Space,
    p: Vec<f64>,
    value: f64,
    violation: f64,
    starts: usize,
) -> PrimalSolution {
    let dense = space.dense(&p);
    let dims = space.dims.to_vec();
    PrimalSolution {
        value,
        minimizer: dense,
        dims,
        feasible: true,
        max_violation: violation,
        metric_slack: None,
        metric_constraint_active: None,
        starts,
    }
}

/// `min D(P~ || P) + |R - H(X~|Y~)|^+`.
pub fn exponent_r_primal(source: &JointSource, rate: f64) -> Result<PrimalSolution> {
    exponent_r_primal_with(source, rate, &DEFAULT_CONFIG)
}

pub fn exponent_r_primal_with(
    source: &JointSource,
    rate: f64,
    cfg: &PrimalConfig,
) -> Result<PrimalSolution> {
    check_rate(rate)?;
    let (space, reference) = two_variable_space(source);
    let sp = &space;
    let rf = &reference;
    let d = move |p: &[f64], g: Option<&mut [f64]>| sp.divergence(p, XT | YY, rf, 1.0, g);
    let unconstrained = Program {
        n: space.n(),
        objective: Box::new(move |p, g| match g {
            Some(g) => {
                let dv = sp.divergence(p, XT | YY, rf, 1.0, Some(&mut *g));
                dv + rate - sp.cond_entropy(p, XT | YY, YY, -1.0, Some(g))
            }
            None => {
                sp.divergence(p, XT | YY, rf, 1.0, None) + rate
                    - sp.cond_entropy(p, XT | YY, YY, -1.0, None)
            }
        }),
        eqs: vec![],
        ineqs: vec![],
    };
    let mut branches = vec![unconstrained];
    if rate <= max_conditional_entropy(source) {
        branches.push(Program {
            n: space.n(),
            objective: Box::new(d),
            eqs: vec![],
            ineqs: vec![Box::new(move |p, g| {
                rate - sp.cond_entropy(p, XT | YY, YY, -1.0, g)
            })],
        });
    }
    let p0: Vec<f64> = space.cells.iter().map(|c| source.p(c[1], c[2])).collect();
    let st = starts(space.n(), vec![p0], cfg);
    let phi = |p: &[f64]| {
        sp.divergence(p, XT | YY, rf, 1.0, None)
            + (rate - sp.cond_entropy(p, XT | YY, YY, -1.0, None)).max(0.0)
    };
    let (p, value, v) =
        best_of(&branches, &st, &phi, &|_| 0.0).expect("unconstrained branch is always feasible");
    Ok(pair_solution(&space, p, value, v, st.len()))
}

/// `min D(P~ || P)` subject to `H(X~|Y~) >= R`.
pub fn exponent_sp_primal(source: &JointSource, rate: f64) -> Result<PrimalSolution> {
    exponent_sp_primal_with(source, rate, &DEFAULT_CONFIG)
}

pub fn exponent_sp_primal_with(
    source: &JointSource,
    rate: f64,
    cfg: &PrimalConfig,
) -> Result<PrimalSolution> {
    check_rate(rate)?;
    let (space, reference) = two_variable_space(source);
    let dims = space.dims.to_vec();
    if rate > max_conditional_entropy(source) + 1e-12 {
        return Ok(PrimalSolution::infeasible(dims, 0));
    }
    let sp = &space;
    let rf = &reference;
    let program = Program {
        n: space.n(),
        objective: Box::new(move |p, g| sp.divergence(p, XT | YY, rf, 1.0, g)),
        eqs: vec![],
        ineqs: vec![Box::new(move |p, g| {
            rate - sp.cond_entropy(p, XT | YY, YY, -1.0, g)
        })],
    };
    let p0: Vec<f64> = space.cells.iter().map(|c| source.p(c[1], c[2])).collect();
    let st = starts(space.n(), vec![p0], cfg);
    let phi = |p: &[f64]| sp.divergence(p, XT | YY, rf, 1.0, None);
    let viol = |p: &[f64]| (rate - sp.cond_entropy(p, XT | YY, YY, -1.0, None)).max(0.0);
    let best = best_of(&[program], &st, &phi, &viol);
    match best {
        Some((p, value, v)) => Ok(pair_solution(&space, p, value, v, st.len())),
        None => Ok(PrimalSolution::infeasible(dims, st.len())),
    }
}

/// Bhattacharyya distance `-log sum_y sqrt(P(y|a) P(y|b))`.
pub fn bhattacharyya_distance(source: &JointSource, a: usize, b: usize) -> f64 {
    let v: f64 = (0..source.y_size())
        .map(|y| (source.p_y_given_x(y, a) * source.p_y_given_x(y, b)).sqrt())
        .sum();
    -ln0(v)
}

/// Marginal-equality constraints `P_X^(x) = P_X~(x)` for all but one symbol.
fn marginal_equalities<'a>(space: &'a Space, support: &[usize]) -> Vec<Func<'a>> {
    let take = support.len().saturating_sub(1);
    support[..take]
        .iter()
        .map(|&x| {
            let coeff: Vec<f64> = space
                .cells
                .iter()
                .map(|c| (if c[0] == x { 1.0 } else { 0.0 }) - (if c[1] == x { 1.0 } else { 0.0 }))
                .collect();
            Box::new(move |p: &[f64], g: Option<&mut [f64]>| space.linear(p, &coeff, 1.0, g))
                as Func<'a>
        })
        .collect()
}

fn marginal_gap(space: &Space, p: &[f64]) -> f64 {
    let a = space.marginal(p, XH);
    let b = space.marginal(p, XT);
    a.iter()
        .zip(&b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Expurgated exponent: `min D(P_X~ || P_X) + E d(X^,X~) + R - H(X^|X~)` over
/// couplings with equal marginals and `H(X^|X~) >= R`.
pub fn exponent_ex_primal(source: &JointSource, rate: f64) -> Result<PrimalSolution> {
    exponent_ex_primal_with(source, rate, &DEFAULT_CONFIG)
}

pub fn exponent_ex_primal_with(
    source: &JointSource,
    rate: f64,
    cfg: &PrimalConfig,
) -> Result<PrimalSolution> {
    check_rate(rate)?;
    let xs = source.x_size();
    let support = source.support_x();
    let mut cells = Vec::new();
    let mut dist = Vec::new();
    for &a in &support {
        for &b in &support {
            let d = bhattacharyya_distance(source, a, b);
            if d.is_finite() {
                cells.push([a, b, 0]);
                dist.push(d);
            }
        }
    }
    let space = Space::new([xs, xs, 1], cells);
    let dims = space.dims.to_vec();
    if rate > (support.len() as f64).ln() + 1e-12 {
        return Ok(PrimalSolution::infeasible(dims, 0));
    }
    let sp = &space;
    let px = source.px();
    let ds = &dist;
    let objective = move |p: &[f64], g: Option<&mut [f64]>| -> f64 {
        match g {
            Some(g) => {
                let a = sp.divergence(p, XT, px, 1.0, Some(&mut *g));
                let b = sp.linear(p, ds, 1.0, Some(&mut *g));
                a + b + rate - sp.cond_entropy(p, XH | XT, XT, -1.0, Some(g))
            }
            None => {
                sp.divergence(p, XT, px, 1.0, None) + sp.linear(p, ds, 1.0, None) + rate
                    - sp.cond_entropy(p, XH | XT, XT, -1.0, None)
            }
        }
    };
    let program = Program {
        n: space.n(),
        objective: Box::new(objective),
        eqs: marginal_equalities(sp, &support),
        ineqs: vec![Box::new(move |p, g| {
            rate - sp.cond_entropy(p, XH | XT, XT, -1.0, g)
        })],
    };
    let independent: Vec<f64> = space.cells.iter().map(|c| px[c[0]] * px[c[1]]).collect();
    let st = starts(space.n(), vec![normalized(independent)], cfg);
    let phi = |p: &[f64]| objective(p, None);
    let viol =
        |p: &[f64]| marginal_gap(sp, p).max(rate - sp.cond_entropy(p, XH | XT, XT, -1.0, None));
    let best = best_of(&[program], &st, &phi, &viol);
    match best {
        Some((p, value, v)) => Ok(pair_solution(&space, p, value, v, st.len())),
        None => Ok(PrimalSolution::infeasible(dims, st.len())),
    }
}

struct CkSetup {
    space: Space,
    reference: Vec<f64>,
    /// `log q(x~,y) - log q(x^,y)` per cell.
    metric_gap: Vec<f64>,
    support: Vec<usize>,
    coupled: Vec<f64>,
    independent: Vec<f64>,
}

fn ck_setup(source: &JointSource, metric: &DecodingMetric) -> Result<CkSetup> {
    metric.check_compatible(source)?;
    let (xs, ys) = (source.x_size(), source.y_size());
    let support = source.support_x();
    let mut cells = Vec::new();
    for &xh in &support {
        for &xt in &support {
            for y in 0..ys {
                if source.p(xt, y) > 0.0 && metric.q(xh, y) > 0.0 {
                    cells.push([xh, xt, y]);
                }
            }
        }
    }
    let space = Space::new([xs, xs, ys], cells);
    let reference: Vec<f64> = (0..xs * ys).map(|k| source.p(k / ys, k % ys)).collect();
    let metric_gap = space
        .cells
        .iter()
        .map(|c| metric.q(c[1], c[2]).ln() - metric.q(c[0], c[2]).ln())
        .collect();
    let coupled = normalized(
        space
            .cells
            .iter()
            .map(|c| {
                if c[0] == c[1] {
                    source.p(c[1], c[2])
                } else {
                    1e-9
                }
            })
            .collect(),
    );
    let independent = normalized(
        space
            .cells
            .iter()
            .map(|c| source.p(c[1], c[2]) * source.px()[c[0]])
            .collect(),
    );
    Ok(CkSetup {
        space,
        reference,
        metric_gap,
        support,
        coupled,
        independent,
    })
}

fn ck_solution(
    setup: &CkSetup,
    p: Vec<f64>,
    value: f64,
    violation: f64,
    starts: usize,
) -> PrimalSolution {
    let slack = -setup.space.linear(&p, &setup.metric_gap, 0.0, None);
    PrimalSolution {
        value,
        minimizer: setup.space.dense(&p),
        dims: setup.space.dims.to_vec(),
        feasible: true,
        max_violation: violation,
        metric_slack: Some(slack),
        metric_constraint_active: Some(slack.abs() <= 1e-6),
        starts,
    }
}

/// Csiszar-Korner random-coding exponent for metric `q`.
pub fn ck_rc_primal(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
) -> Result<PrimalSolution> {
    ck_rc_primal_with(source, metric, rate, &DEFAULT_CK_CONFIG)
}

pub fn ck_rc_primal_with(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    cfg: &PrimalConfig,
) -> Result<PrimalSolution> {
    check_rate(rate)?;
    let setup = ck_setup(source, metric)?;
    let sp = &setup.space;
    let rf = &setup.reference;
    let mg = &setup.metric_gap;
    let metric_ineq =
        || Box::new(move |p: &[f64], g: Option<&mut [f64]>| sp.linear(p, mg, 1.0, g)) as Func<'_>;
    let unconstrained = Program {
        n: sp.n(),
        objective: Box::new(move |p, g| match g {
            Some(g) => {
                let dv = sp.divergence(p, XT | YY, rf, 1.0, Some(&mut *g));
                dv + rate - sp.cond_entropy(p, XH | YY, YY, -1.0, Some(g))
            }
            None => {
                sp.divergence(p, XT | YY, rf, 1.0, None) + rate
                    - sp.cond_entropy(p, XH | YY, YY, -1.0, None)
            }
        }),
        eqs: marginal_equalities(sp, &setup.support),
        ineqs: vec![metric_ineq()],
    };
    let constrained = Program {
        n: sp.n(),
        objective: Box::new(move |p, g| sp.divergence(p, XT | YY, rf, 1.0, g)),
        eqs: marginal_equalities(sp, &setup.support),
        ineqs: vec![
            metric_ineq(),
            Box::new(move |p, g| rate - sp.cond_entropy(p, XH | YY, YY, -1.0, g)),
        ],
    };
    let st = starts(
        sp.n(),
        vec![setup.coupled.clone(), setup.independent.clone()],
        cfg,
    );
    let phi = |p: &[f64]| {
        sp.divergence(p, XT | YY, rf, 1.0, None)
            + (rate - sp.cond_entropy(p, XH | YY, YY, -1.0, None)).max(0.0)
    };
    let viol = |p: &[f64]| marginal_gap(sp, p).max(sp.linear(p, mg, 1.0, None));
    let best = best_of(&[unconstrained, constrained], &st, &phi, &viol);
    match best {
        Some((p, value, v)) => Ok(ck_solution(&setup, p, value, v, st.len())),
        None => Ok(PrimalSolution::infeasible(sp.dims.to_vec(), st.len())),
    }
}

/// Csiszar-Korner expurgated exponent for metric `q`.
pub fn ck_ex_primal(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
) -> Result<PrimalSolution> {
    ck_ex_primal_with(source, metric, rate, &DEFAULT_CK_CONFIG)
}

pub fn ck_ex_primal_with(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    cfg: &PrimalConfig,
) -> Result<PrimalSolution> {
    check_rate(rate)?;
    let setup = ck_setup(source, metric)?;
    let sp = &setup.space;
    let rf = &setup.reference;
    let mg = &setup.metric_gap;
    if rate > (setup.support.len() as f64).ln() + 1e-12 {
        return Ok(PrimalSolution::infeasible(sp.dims.to_vec(), 0));
    }
    let objective = move |p: &[f64], g: Option<&mut [f64]>| -> f64 {
        match g {
            Some(g) => {
                let dv = sp.divergence(p, XT | YY, rf, 1.0, Some(&mut *g));
                dv + rate - sp.cond_entropy(p, XH | XT | YY, XT | YY, -1.0, Some(g))
            }
            None => {
                sp.divergence(p, XT | YY, rf, 1.0, None) + rate
                    - sp.cond_entropy(p, XH | XT | YY, XT | YY, -1.0, None)
            }
        }
    };
    let program = Program {
        n: sp.n(),
        objective: Box::new(objective),
        eqs: marginal_equalities(sp, &setup.support),
        ineqs: vec![
            Box::new(move |p: &[f64], g: Option<&mut [f64]>| sp.linear(p, mg, 1.0, g)),
            Box::new(move |p, g| rate - sp.cond_entropy(p, XH | XT, XT, -1.0, g)),
        ],
    };
    let st = starts(
        sp.n(),
        vec![setup.independent.clone(), setup.coupled.clone()],
        cfg,
    );
    let phi = |p: &[f64]| objective(p, None);
    let viol = |p: &[f64]| {
        marginal_gap(sp, p)
            .max(sp.linear(p, mg, 1.0, None))
            .max(rate - sp.cond_entropy(p, XH | XT, XT, -1.0, None))
    };
    let best = best_of(&[program], &st, &phi, &viol);
    match best {
        Some((p, value, v)) => Ok(ck_solution(&setup, p, value, v, st.len())),
        None => Ok(PrimalSolution::infeasible(sp.dims.to_vec(), st.len())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityRow {
    pub rate: f64,
    pub primal_rc: f64,
    pub primal_ex: f64,
    pub primal: f64,
    pub dual_rc: f64,
    pub dual_ex: f64,
    pub dual: f64,
    pub gap: f64,
    pub metric_constraint_active_rc: Option<bool>,
    pub metric_constraint_active_ex: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub max_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub config: PrimalConfig,
}

/// Compares `max(ck_rc, ck_ex)` with the combined type-by-type dual exponent
/// at each rate.
pub fn verify_duality(
    source: &JointSource,
    metric: &DecodingMetric,
    rates: &[f64],
    tolerance: f64,
    rho_cap: f64,
    cfg: &PrimalConfig,
) -> Result<DualityReport> {
    if rates.is_empty() {
        return Err(Error::InvalidParameter("empty rate grid".into()));
    }
    let rows = rates
        .iter()
        .map(|&rate| {
            let rc = ck_rc_primal_with(source, metric, rate, cfg)?;
            let ex = ck_ex_primal_with(source, metric, rate, cfg)?;
            let d_rc = exponent_tt_rc(source, metric, rate)?;
            let d_ex = exponent_tt_ex(source, metric, rate, rho_cap)?;
            let dual = combined_exponent(source, metric, rate, Ensemble::TypeByType, rho_cap)?;
            let primal = rc.value.max(ex.value);
            Ok(DualityRow {
                rate,
                primal_rc: rc.value,
                primal_ex: ex.value,
                primal,
                dual_rc: d_rc.value,
                dual_ex: d_ex.value,
                dual: dual.value,
                gap: (primal - dual.value).abs(),
                metric_constraint_active_rc: rc.metric_constraint_active,
                metric_constraint_active_ex: ex.metric_constraint_active,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(DualityReport {
        rows,
        max_gap,
        tolerance,
        pass: max_gap <= tolerance,
        config: *cfg,
    })
}


#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::model::example_source;

    #[test]
    fn gradients_match_finite_differences() {
        let s = example_source();
        let q = DecodingMetric::hamming(3, 0.1).unwrap();
        let setup = ck_setup(&s, &q).unwrap();
        let sp = &setup.space;
        let rf = &setup.reference;
        let n = sp.n();
        let p: Vec<f64> = normalized(
            (0..n)
                .map(|i| 1.0 + (i as f64 * 0.37).sin().abs())
                .collect(),
        );
        let funcs: Vec<Func<'_>> = vec![
            Box::new(|p, g| sp.divergence(p, XT | YY, rf, 1.0, g)),
            Box::new(|p, g| sp.cond_entropy(p, XH | YY, YY, 1.0, g)),
            Box::new(|p, g| sp.cond_entropy(p, XH | XT | YY, XT | YY, 1.0, g)),
        ];
        for (fi, f) in funcs.iter().enumerate() {
            let mut g = vec![0.0; n];
            f(&p, Some(&mut g));
            for i in 0..n {
                let h = 1e-6;
                let mut a = p.clone();
                a[i] += h;
                let mut b = p.clone();
                b[i] -= h;
                let fd = (f(&a, None) - f(&b, None)) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() < 1e-5,
                    "f{fi} cell {i}: fd {fd} analytic {}",
                    g[i]
                );
            }
        }
    }
}
