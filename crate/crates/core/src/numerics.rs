//! Summation, log-domain accumulation and the small optimizers used by the
//! exponent, rate and primal modules.

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn scale(&mut self, factor: f64) {
        self.sum *= factor;
        self.comp *= factor;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = NeumaierSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Streaming log-sum-exp with a compensated inner sum. `-inf` terms are
/// dropped, so an empty accumulator evaluates to `-inf`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    acc: NeumaierSum,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            acc: NeumaierSum::new(),
        }
    }

    pub fn push(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t == f64::INFINITY || t.is_nan() {
            self.max = t;
            return;
        }
        if !self.max.is_finite() {
            if self.max == f64::NEG_INFINITY {
                self.max = t;
                self.acc = NeumaierSum::new();
                self.acc.add(1.0);
            }
            return;
        }
        if t <= self.max {
            self.acc.add((t - self.max).exp());
        } else {
            self.acc.scale((self.max - t).exp());
            self.acc.add(1.0);
            self.max = t;
        }
    }

    pub fn value(&self) -> f64 {
        if !self.max.is_finite() {
            return self.max;
        }
        self.max + self.acc.value().ln()
    }
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut acc = LogSumExp::new();
    for t in terms {
        acc.push(t);
    }
    acc.value()
}

/// `ln(x)` with `ln(0) = -inf`.
#[inline]
pub fn ln0(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `s * t` with the convention `0 * (-inf) = 0`, i.e. `0^0 = 1` in the
/// exponentiated domain.
#[inline]
pub fn scaled_log(s: f64, t: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s * t
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
/// Returns the best abscissa seen together with its value.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn fd_center(x: f64, lo: f64, hi: f64, h: f64) -> f64 {
    if hi - lo <= 4.0 * h {
        return 0.5 * (lo + hi);
    }
    x.clamp(lo + 2.0 * h, hi - 2.0 * h)
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], lo: &[f64], hi: &[f64], g: &mut [f64]) {
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        let c = fd_center(x[i], lo[i], hi[i], h);
        p[i] = c + h;
        let fp = f(&p);
        p[i] = c - h;
        let fm = f(&p);
        p[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
}

fn fd_hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let steps: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let c: Vec<f64> = (0..d)
        .map(|i| fd_center(x[i], lo[i], hi[i], steps[i]))
        .collect();
    let f0 = f(&c);
    let mut h = vec![vec![0.0; d]; d];
    let mut p = c.clone();
    for i in 0..d {
        let k = steps[i];
        p[i] = c[i] + k;
        let fp = f(&p);
        p[i] = c[i] - k;
        let fm = f(&p);
        p[i] = c[i];
        h[i][i] = (fp - 2.0 * f0 + fm) / (k * k);
        for j in 0..i {
            let kj = steps[j];
            let mut eval = |si: f64, sj: f64| {
                p[i] = c[i] + si * k;
                p[j] = c[j] + sj * kj;
                let v = f(&p);
                p[i] = c[i];
                p[j] = c[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * k * kj);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Solves `a x = b` in place for symmetric positive definite `a`.
/// Returns `None` when the Cholesky factorization breaks down.
pub fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j]
                - l[i][..j]
                    .iter()
                    .zip(&l[j][..j])
                    .map(|(u, v)| u * v)
                    .sum::<f64>();
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Projected damped Newton method for a smooth convex function on a box.
/// Derivatives are taken by central differences whose stencil is kept
/// inside the box.
pub fn minimize_convex_box<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NewtonOptions,
) -> NewtonResult {
    let d = x0.len();
    let mut x: Vec<f64> = (0..d).map(|i| x0[i].clamp(lo[i], hi[i])).collect();
    let mut fx = f(&x);
    if d == 0 {
        return NewtonResult {
            x,
            value: fx,
            converged: true,
            iterations: 0,
        };
    }
    let mut g = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        fd_gradient(&f, &x, lo, hi, &mut g);
        let span: Vec<f64> = (0..d).map(|i| 1e-10 * x[i].abs().max(1.0)).collect();
        let free: Vec<usize> = (0..d)
            .filter(|&i| {
                !((x[i] <= lo[i] + span[i] && g[i] > 0.0)
                    || (x[i] >= hi[i] - span[i] && g[i] < 0.0))
            })
            .collect();
        let gmax = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if gmax <= opts.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        let hess = fd_hessian(&f, &x, lo, hi);
        let hf: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| free.iter().map(|&j| hess[i][j]).collect())
            .collect();
        let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
        let diag_scale = hf
            .iter()
            .enumerate()
            .map(|(k, r)| r[k].abs())
            .fold(0.0, f64::max)
            .max(1e-12);
        let mut lambda = 0.0;
        let mut improved = false;
        for _attempt in 0..8 {
            let mut a = hf.clone();
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda;
            }
            let step = match cholesky_solve(&a, &rhs) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    lambda = if lambda == 0.0 {
                        1e-8 * diag_scale
                    } else {
                        lambda * 100.0
                    };
                    continue;
                }
            };
            if let Some((xn, fnew)) = line_search(&f, &x, fx, &g, &free, &step, lo, hi) {
                x = xn;
                let df = fx - fnew;
                fx = fnew;
                improved = true;
                if df <= 1e-16 * (1.0 + fx.abs()) && gmax <= 1e-6 * (1.0 + fx.abs()) {
                    converged = true;
                }
                break;
            }
            lambda = if lambda == 0.0 {
                1e-6 * diag_scale
            } else {
                lambda * 100.0
            };
        }
        if !improved {
            let step: Vec<f64> = free.iter().map(|&i| -g[i] / diag_scale).collect();
            match line_search(&f, &x, fx, &g, &free, &step, lo, hi) {
                Some((xn, fnew)) => {
                    x = xn;
                    fx = fnew;
                }
                None => {
                    converged = gmax <= 1e-6 * (1.0 + fx.abs());
                    break;
                }
            }
        }
        if converged {
            break;
        }
    }
    NewtonResult {
        x,
        value: fx,
        converged,
        iterations,
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    fx: f64,
    g: &[f64],
    free: &[usize],
    step: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let mut t = 1.0;
    for _ in 0..50 {
        let mut xn = x.to_vec();
        for (k, &i) in free.iter().enumerate() {
            xn[i] = (x[i] + t * step[k]).clamp(lo[i], hi[i]);
        }
        let decrease: f64 = free.iter().map(|&i| g[i] * (xn[i] - x[i])).sum();
        let fnew = f(&xn);
        if fnew.is_finite() && fnew < fx && fnew <= fx + 1e-4 * decrease.min(0.0) {
            return Some((xn, fnew));
        }
        t *= 0.5;
    }
    None
}

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            memory: 10,
            grad_tol: 1e-11,
        }
    }
}

/// Unconstrained L-BFGS with Armijo backtracking. `f` writes the gradient
/// into its second argument and returns the value.
pub fn lbfgs<F: FnMut(&[f64], &mut [f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> NewtonResult {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut fx = f(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut gn = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;
    let mut stall = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= opts.grad_tol {
            converged = true;
            break;
        }
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for k in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alpha[k] = rho * dot(&s_hist[k], &q);
            axpy(-alpha[k], &y_hist[k], &mut q);
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / gmax.max(1.0)
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for k in 0..m {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let beta = rho * dot(&y_hist[k], &q);
            axpy(alpha[k] - beta, &s_hist[k], &mut q);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v / gmax.max(1.0)).collect();
            slope = dot(&g, &dir);
            s_hist.clear();
            y_hist.clear();
        }
        let mut t = 1.0;
        let mut accepted = false;
        let mut xn = vec![0.0; d];
        let mut fnew = fx;
        for _ in 0..60 {
            for i in 0..d {
                xn[i] = x[i] + t * dir[i];
            }
            fnew = f(&xn, &mut gn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = gmax <= 1e3 * opts.grad_tol;
            break;
        }
        let s: Vec<f64> = (0..d).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..d).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let df = fx - fnew;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        fx = fnew;
        if df <= 1e-16 * (1.0 + fx.abs()) {
            stall += 1;
            if stall >= 5 {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }
    NewtonResult {
        x,
        value: fx,
        converged,
        iterations,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let v = compensated_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(v, 2.0);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(
            log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        let v = log_sum_exp([1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = log_sum_exp([-1000.0, 0.0, -2000.0]);
        assert!(v.abs() < 1e-300 + 1e-15);
        let naive = (0.3f64.exp() + 1.7f64.exp()).ln();
        assert!((log_sum_exp([0.3, 1.7]) - naive).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_order_independent() {
        let terms = [-3.0, 2.0, 0.5, -700.0, 1.9];
        let a = log_sum_exp(terms);
        let mut rev = terms;
        rev.reverse();
        assert!((a - log_sum_exp(rev)).abs() < 1e-14);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx.abs() < 1e-15);
    }

    #[test]
    fn newton_respects_box() {
        let f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2) + 0.5 * x[0] * x[1];
        let r = minimize_convex_box(
            f,
            &[1.0, 1.0],
            &[0.0, -5.0],
            &[5.0, 5.0],
            &NewtonOptions::default(),
        );
        assert!(r.converged);
        assert!(r.x[0].abs() < 1e-9);
        assert!((r.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn newton_on_log_sum_exp() {
        let f = |x: &[f64]| log_sum_exp([x[0], -x[0] + 1.0, 2.0 * x[1] - 1.0, -x[1]]);
        let r = minimize_convex_box(
            f,
            &[3.0, -2.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &NewtonOptions::default(),
        );
        assert!(r.converged);
        let mut g = [0.0; 2];
        let h = 1e-6;
        for i in 0..2 {
            let mut p = r.x.clone();
            p[i] += h;
            let fp = f(&p);
            p[i] -= 2.0 * h;
            g[i] = (fp - f(&p)) / (2.0 * h);
        }
        assert!(g.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            g[0] = -2.0 * a - 400.0 * x[0] * b;
            g[1] = 200.0 * b;
            a * a + 100.0 * b * b
        };
        let r = lbfgs(f, &[-1.2, 1.0], &LbfgsOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky_solve(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[1.0, 1.0]).is_none());
        let x = cholesky_solve(&[vec![4.0, 1.0], vec![1.0, 3.0]], &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
    }
}
