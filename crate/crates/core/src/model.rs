//! Problem instances: joint sources, decoding metrics and cost functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, NeumaierSum};

fn check_matrix(rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Empty);
    }
    let cols = rows[0].len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Ragged {
                row: r,
                expected: cols,
                found: row.len(),
            });
        }
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            if v < 0.0 {
                return Err(Error::NegativeProbability {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    Ok((rows.len(), cols))
}

/// Finite joint pmf over `X x Y`, stored row-major with rows indexed by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSource {
    x_size: usize,
    y_size: usize,
    pmf: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
    labels_x: Option<Vec<String>>,
    labels_y: Option<Vec<String>>,
}

/// JSON form of a source: `{"pmf": [[...]], "labels_x": [...], "labels_y": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDocument {
    pub pmf: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_x: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_y: Option<Vec<String>>,
}

/// JSON form of a metric: `{"q": [[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricDocument {
    pub q: Vec<Vec<f64>>,
}

impl JointSource {
    /// Validates and normalizes a probability matrix.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let (x_size, y_size) = check_matrix(rows)?;
        let total = compensated_sum(rows.iter().flatten().copied());
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let pmf: Vec<f64> = rows.iter().flatten().map(|v| v / total).collect();
        let px = (0..x_size)
            .map(|x| compensated_sum((0..y_size).map(|y| pmf[x * y_size + y])))
            .collect();
        let py = (0..y_size)
            .map(|y| compensated_sum((0..x_size).map(|x| pmf[x * y_size + y])))
            .collect();
        Ok(Self {
            x_size,
            y_size,
            pmf,
            px,
            py,
            labels_x: None,
            labels_y: None,
        })
    }

    pub fn from_document(doc: &SourceDocument) -> Result<Self> {
        let mut s = Self::new(&doc.pmf)?;
        if let Some(l) = &doc.labels_x {
            if l.len() != s.x_size {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} x labels", s.x_size),
                    found: l.len().to_string(),
                });
            }
        }
        if let Some(l) = &doc.labels_y {
            if l.len() != s.y_size {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} y labels", s.y_size),
                    found: l.len().to_string(),
                });
            }
        }
        s.labels_x = doc.labels_x.clone();
        s.labels_y = doc.labels_y.clone();
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SourceDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn to_document(&self) -> SourceDocument {
        SourceDocument {
            pmf: self.rows(),
            labels_x: self.labels_x.clone(),
            labels_y: self.labels_y.clone(),
        }
    }

    /// Source with independent components.
    pub fn product(px: &[f64], py: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = px
            .iter()
            .map(|a| py.iter().map(|b| a * b).collect())
            .collect();
        Self::new(&rows)
    }

    /// Source built from a marginal and a channel `W(y|x)`.
    pub fn from_channel(px: &[f64], channel: &[Vec<f64>]) -> Result<Self> {
        if channel.len() != px.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channel rows", px.len()),
                found: channel.len().to_string(),
            });
        }
        check_matrix(channel)?;
        let rows: Vec<Vec<f64>> = px
            .iter()
            .zip(channel)
            .map(|(p, row)| row.iter().map(|w| p * w).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn x_size(&self) -> usize {
        self.x_size
    }

    pub fn y_size(&self) -> usize {
        self.y_size
    }

    #[inline]
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.pmf[x * self.y_size + y]
    }

    pub fn px(&self) -> &[f64] {
        &self.px
    }

    pub fn py(&self) -> &[f64] {
        &self.py
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.pmf.chunks(self.y_size).map(|r| r.to_vec()).collect()
    }

    pub fn labels_x(&self) -> Option<&[String]> {
        self.labels_x.as_deref()
    }

    pub fn labels_y(&self) -> Option<&[String]> {
        self.labels_y.as_deref()
    }

    /// `P(x|y)`, zero on columns of zero mass.
    pub fn p_x_given_y(&self, x: usize, y: usize) -> f64 {
        if self.py[y] > 0.0 {
            self.p(x, y) / self.py[y]
        } else {
            0.0
        }
    }

    /// `P(y|x)`, zero on rows of zero mass.
    pub fn p_y_given_x(&self, y: usize, x: usize) -> f64 {
        if self.px[x] > 0.0 {
            self.p(x, y) / self.px[x]
        } else {
            0.0
        }
    }

    /// The channel `P(y|x)` as a matrix; unsupported rows are uniform.
    pub fn channel(&self) -> Vec<Vec<f64>> {
        (0..self.x_size)
            .map(|x| {
                if self.px[x] > 0.0 {
                    (0..self.y_size).map(|y| self.p_y_given_x(y, x)).collect()
                } else {
                    vec![1.0 / self.y_size as f64; self.y_size]
                }
            })
            .collect()
    }

    /// `S(X)`, the symbols with positive marginal probability.
    pub fn support_x(&self) -> Vec<usize> {
        (0..self.x_size).filter(|&x| self.px[x] > 0.0).collect()
    }

    pub fn entropy_x(&self) -> f64 {
        entropy(&self.px)
    }

    pub fn conditional_entropy(&self) -> f64 {
        conditional_entropy(self)
    }

    /// Marginal source over `X` with a single side-information symbol.
    pub fn without_side_information(px: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = px.iter().map(|p| vec![*p]).collect();
        Self::new(&rows)
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for &v in p {
        if v > 0.0 {
            acc.add(-v * v.ln());
        }
    }
    acc.value()
}

/// `H(X|Y)` in nats, summed over the support only.
pub fn conditional_entropy(source: &JointSource) -> f64 {
    let mut acc = NeumaierSum::new();
    for x in 0..source.x_size() {
        for y in 0..source.y_size() {
            let p = source.p(x, y);
            if p > 0.0 {
                acc.add(-p * (p / source.py()[y]).ln());
            }
        }
    }
    acc.value().max(0.0)
}

/// `D(p || q)` in nats; `+inf` when `p` is not absolutely continuous w.r.t. `q`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len().to_string(),
            found: q.len().to_string(),
        });
    }
    let mut acc = NeumaierSum::new();
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc.add(a * (a / b).ln());
        }
    }
    Ok(acc.value().max(0.0))
}

/// Nonnegative decoding metric `q(x, y)`. Need not be normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingMetric {
    x_size: usize,
    y_size: usize,
    q: Vec<f64>,
}

impl DecodingMetric {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let (x_size, y_size) = check_matrix(rows)?;
        Ok(Self {
            x_size,
            y_size,
            q: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MetricDocument = serde_json::from_str(text)?;
        Self::new(&doc.q)
    }

    /// Minimum Hamming distance metric: `1-(size-1)delta` on the diagonal and
    /// `delta` elsewhere.
    pub fn hamming(size: usize, delta: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Empty);
        }
        if !(delta > 0.0 && delta < 1.0 / size as f64) {
            return Err(Error::DeltaOutOfRange { size, delta });
        }
        let diag = 1.0 - (size as f64 - 1.0) * delta;
        let rows: Vec<Vec<f64>> = (0..size)
            .map(|x| {
                (0..size)
                    .map(|y| if x == y { diag } else { delta })
                    .collect()
            })
            .collect();
        Self::new(&rows)
    }

    /// The MAP metric `q(x,y) = P(x|y)`; zero-mass columns are uniform.
    pub fn matched(source: &JointSource) -> Self {
        let (xs, ys) = (source.x_size(), source.y_size());
        let mut q = vec![0.0; xs * ys];
        for y in 0..ys {
            for x in 0..xs {
                q[x * ys + y] = if source.py()[y] > 0.0 {
                    source.p_x_given_y(x, y)
                } else {
                    1.0 / xs as f64
                };
            }
        }
        Self {
            x_size: xs,
            y_size: ys,
            q,
        }
    }

    pub fn x_size(&self) -> usize {
        self.x_size
    }

    pub fn y_size(&self) -> usize {
        self.y_size
    }

    #[inline]
    pub fn q(&self, x: usize, y: usize) -> f64 {
        self.q[x * self.y_size + y]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.q.chunks(self.y_size).map(|r| r.to_vec()).collect()
    }

    /// `lambda * q^tau`.
    pub fn power(&self, lambda: f64, tau: f64) -> Self {
        Self {
            x_size: self.x_size,
            y_size: self.y_size,
            q: self
                .q
                .iter()
                .map(|v| if *v > 0.0 { lambda * v.powf(tau) } else { 0.0 })
                .collect(),
        }
    }

    /// Checks shape and that `q > 0` wherever the source has mass.
    pub fn check_compatible(&self, source: &JointSource) -> Result<()> {
        if self.x_size != source.x_size() || self.y_size != source.y_size() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", source.x_size(), source.y_size()),
                found: format!("{}x{}", self.x_size, self.y_size),
            });
        }
        for x in 0..self.x_size {
            for y in 0..self.y_size {
                if source.p(x, y) > 0.0
                    && self.q(x, y).partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
                {
                    return Err(Error::IncompatibleMetric { x, y });
                }
            }
        }
        Ok(())
    }
}

/// Log-domain weights `a(x)`, gauge fixed so that the active entries sum to
/// zero. Inactive entries stand for `a = -inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    pub values: Vec<f64>,
    pub active: Vec<bool>,
}

impl CostFunction {
    pub fn zero(size: usize) -> Self {
        Self {
            values: vec![0.0; size],
            active: vec![true; size],
        }
    }

    /// Builds a gauge-fixed cost function from raw weights.
    pub fn new(values: &[f64]) -> Self {
        let mut c = Self {
            values: values.to_vec(),
            active: vec![true; values.len()],
        };
        c.gauge_fix();
        c
    }

    pub fn with_support(values: &[f64], active: &[bool]) -> Self {
        let mut c = Self {
            values: values.to_vec(),
            active: active.to_vec(),
        };
        for (v, a) in c.values.iter_mut().zip(active) {
            if !a {
                *v = 0.0;
            }
        }
        c.gauge_fix();
        c
    }

    pub fn gauge_fix(&mut self) {
        let n = self.active.iter().filter(|a| **a).count();
        if n == 0 {
            return;
        }
        let mean = compensated_sum(
            self.values
                .iter()
                .zip(&self.active)
                .filter(|(_, a)| **a)
                .map(|(v, _)| *v),
        ) / n as f64;
        for (v, a) in self.values.iter_mut().zip(&self.active) {
            if *a {
                *v -= mean;
            }
        }
    }

    /// `a(x)` with `-inf` for inactive entries.
    #[inline]
    pub fn get(&self, x: usize) -> f64 {
        if self.active[x] {
            self.values[x]
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Optimization variables `(rho, s, a)` of a dual exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub rho: f64,
    /// Absent for families without a metric exponent.
    pub s: Option<f64>,
    /// Absent for standard-ensemble families.
    pub a: Option<CostFunction>,
}

/// The 3x3 source used throughout the examples and regression tests.
pub fn example_source() -> JointSource {
    JointSource::new(&[
        vec![0.49, 0.005, 0.005],
        vec![0.015, 0.27, 0.015],
        vec![0.05, 0.05, 0.1],
    ])
    .expect("valid example source")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn example_source_normalized() {
        let s = example_source();
        let total: f64 = s.rows().iter().flatten().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert_eq!(s.support_x(), vec![0, 1, 2]);
    }

    #[test]
    fn point_mass_source() {
        let s = JointSource::new(&[vec![1.0]]).unwrap();
        assert_eq!(s.conditional_entropy(), 0.0);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            JointSource::new(&[vec![0.5, -0.1], vec![0.3, 0.3]]),
            Err(Error::NegativeProbability { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            JointSource::new(&[vec![0.0, 0.0]]),
            Err(Error::ZeroMass)
        ));
        assert!(matches!(
            JointSource::new(&[vec![f64::NAN]]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            JointSource::new(&[vec![0.5], vec![0.2, 0.3]]),
            Err(Error::Ragged { row: 1, .. })
        ));
        assert!(matches!(JointSource::new(&[]), Err(Error::Empty)));
    }

    #[test]
    fn unnormalized_input_is_rescaled() {
        let s = JointSource::new(&[vec![2.0, 2.0], vec![4.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(s.p(1, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn conditional_entropy_examples() {
        let s = example_source();
        assert_abs_diff_eq!(s.conditional_entropy(), 0.4654, epsilon = 5e-5);
        let d = JointSource::new(&[vec![0.0, 0.0], vec![0.3, 0.7]]).unwrap();
        assert_eq!(d.conditional_entropy(), 0.0);
        let u = JointSource::product(&[0.5, 0.5], &[0.2, 0.3, 0.5]).unwrap();
        assert_abs_diff_eq!(u.conditional_entropy(), 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn matched_metric_columns() {
        let s = example_source();
        let q = DecodingMetric::matched(&s);
        assert_abs_diff_eq!(q.q(0, 0), 0.49 / 0.555, epsilon = 1e-12);
        assert_abs_diff_eq!(q.q(1, 0), 0.015 / 0.555, epsilon = 1e-12);
        assert_abs_diff_eq!(q.q(2, 0), 0.05 / 0.555, epsilon = 1e-12);
        let u = JointSource::product(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(DecodingMetric::matched(&u)
            .rows()
            .iter()
            .flatten()
            .all(|v| (*v - 0.5).abs() < 1e-15));
        let pm = JointSource::new(&[vec![0.0, 0.0], vec![0.4, 0.6]]).unwrap();
        assert_eq!(
            DecodingMetric::matched(&pm).rows(),
            vec![vec![0.0, 0.0], vec![1.0, 1.0]]
        );
        let z = JointSource::new(&[vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        assert_eq!(DecodingMetric::matched(&z).q(0, 1), 0.5);
    }

    #[test]
    fn hamming_examples() {
        let q = DecodingMetric::hamming(3, 0.1).unwrap();
        assert_abs_diff_eq!(q.q(1, 1), 0.8, epsilon = 1e-15);
        assert_eq!(q.q(0, 2), 0.1);
        let q = DecodingMetric::hamming(2, 0.25).unwrap();
        assert_eq!(q.rows(), vec![vec![0.75, 0.25], vec![0.25, 0.75]]);
        assert!(matches!(
            DecodingMetric::hamming(3, 0.4),
            Err(Error::DeltaOutOfRange { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            f64::INFINITY
        );
        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn compatibility() {
        let s = JointSource::new(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let q = DecodingMetric::new(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(q.check_compatible(&s).is_ok());
        let bad = DecodingMetric::new(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            bad.check_compatible(&s),
            Err(Error::IncompatibleMetric { x: 0, y: 0 })
        ));
        let wrong = DecodingMetric::hamming(3, 0.1).unwrap();
        assert!(matches!(
            wrong.check_compatible(&s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn json_round_trip_and_ragged_rows() {
        let s =
            JointSource::from_json(r#"{"pmf": [[0.2, 0.3], [0.1, 0.4]], "labels_x": ["a", "b"]}"#)
                .unwrap();
        assert_eq!(s.labels_x().unwrap(), &["a".to_string(), "b".to_string()]);
        let text = serde_json::to_string(&s.to_document()).unwrap();
        assert_eq!(JointSource::from_json(&text).unwrap(), s);
        assert!(matches!(
            JointSource::from_json(r#"{"pmf": [[0.2, 0.3], [0.5]]}"#),
            Err(Error::Ragged { .. })
        ));
        assert!(matches!(
            DecodingMetric::from_json(r#"{"q": [[1.0], [1.0, 2.0]]}"#),
            Err(Error::Ragged { .. })
        ));
        assert!(matches!(JointSource::from_json("{"), Err(Error::Json(_))));
    }

    #[test]
    fn cost_function_gauge() {
        let c = CostFunction::new(&[1.0, 2.0, 6.0]);
        assert_abs_diff_eq!(c.values.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
        let d = CostFunction::with_support(&[1.0, 5.0, 3.0], &[true, false, true]);
        assert_eq!(d.get(1), f64::NEG_INFINITY);
        assert_abs_diff_eq!(d.values[0] + d.values[2], 0.0, epsilon = 1e-15);
    }
}
