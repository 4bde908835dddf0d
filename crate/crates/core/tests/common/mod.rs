//! Shared fixtures and naive reference formulas for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swexp_core::{DecodingMetric, JointSource};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly positive random matrix, normalized to a pmf.
pub fn random_source(rng: &mut ChaCha8Rng, xs: usize, ys: usize) -> JointSource {
    let rows: Vec<Vec<f64>> = (0..xs)
        .map(|_| (0..ys).map(|_| rng.random_range(0.02..1.0)).collect())
        .collect();
    JointSource::new(&rows).unwrap()
}

pub fn random_metric(rng: &mut ChaCha8Rng, xs: usize, ys: usize) -> DecodingMetric {
    let rows: Vec<Vec<f64>> = (0..xs)
        .map(|_| (0..ys).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    DecodingMetric::new(&rows).unwrap()
}

pub fn hamming(delta: f64) -> DecodingMetric {
    DecodingMetric::hamming(3, delta).unwrap()
}

/// Plain-loop evaluations, written straight from the formulas with `powf`.
pub mod naive {
    use super::*;

    fn ratio(q: &DecodingMetric, xb: usize, x: usize, y: usize, s: f64) -> f64 {
        if s == 0.0 {
            1.0
        } else {
            (q.q(xb, y) / q.q(x, y)).powf(s)
        }
    }

    pub fn rc(p: &JointSource, q: &DecodingMetric, rho: f64, s: f64, a: &[f64]) -> f64 {
        let mut total = 0.0;
        for x in 0..p.x_size() {
            for y in 0..p.y_size() {
                if p.p(x, y) == 0.0 {
                    continue;
                }
                let inner: f64 = (0..p.x_size())
                    .map(|xb| (a[xb] - a[x]).exp() * ratio(q, xb, x, y, s))
                    .sum();
                total += p.p(x, y) * inner.powf(rho);
            }
        }
        total.ln()
    }

    pub fn ex(p: &JointSource, q: &DecodingMetric, rho: f64, s: f64, a: &[f64]) -> f64 {
        let mut total = 0.0;
        for x in 0..p.x_size() {
            if p.px()[x] == 0.0 {
                continue;
            }
            let mut mid = 0.0;
            for xb in 0..p.x_size() {
                let inner: f64 = (0..p.y_size())
                    .map(|y| p.p(x, y) * (a[xb] - a[x]).exp() * ratio(q, xb, x, y, s))
                    .sum();
                mid += inner.powf(1.0 / rho);
            }
            total += mid.powf(rho);
        }
        total.ln()
    }

    pub fn e0(p: &JointSource, rho: f64) -> f64 {
        let mut total = 0.0;
        for y in 0..p.y_size() {
            let py = p.py()[y];
            if py == 0.0 {
                continue;
            }
            let inner: f64 = (0..p.x_size())
                .map(|x| (p.p(x, y) / py).powf(1.0 / (1.0 + rho)))
                .sum();
            total += py * inner.powf(1.0 + rho);
        }
        total.ln()
    }

    pub fn bhattacharyya(p: &JointSource, rho: f64, a: &[f64]) -> f64 {
        let mut total = 0.0;
        for x in 0..p.x_size() {
            let px = p.px()[x];
            if px == 0.0 {
                continue;
            }
            let mut mid = 0.0;
            for xb in 0..p.x_size() {
                if p.px()[xb] == 0.0 {
                    continue;
                }
                let inner: f64 = (0..p.y_size())
                    .map(|y| {
                        (a[xb] - a[x]).exp() * (p.p(x, y) / px * p.p(xb, y) / p.px()[xb]).sqrt()
                    })
                    .sum();
                mid += inner.powf(1.0 / rho);
            }
            total += px * mid.powf(rho);
        }
        total.ln()
    }

    pub fn optimal_no_si(px: &[f64], rho: f64) -> f64 {
        (1.0 + rho)
            * px.iter()
                .filter(|p| **p > 0.0)
                .map(|p| p.powf(1.0 / (1.0 + rho)))
                .sum::<f64>()
                .ln()
    }

    /// `max_rho rho R - f(rho)` on a uniform grid of `steps` intervals.
    pub fn grid_sup<F: Fn(f64) -> f64>(f: F, rate: f64, lo: f64, hi: f64, steps: usize) -> f64 {
        (0..=steps)
            .map(|i| {
                let rho = lo + (hi - lo) * i as f64 / steps as f64;
                rho * rate - f(rho)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
