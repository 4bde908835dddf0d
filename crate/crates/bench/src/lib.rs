//! Fixtures shared by the benchmarks under `benches/`.

use swexp_core::model::example_source;
use swexp_core::{DecodingMetric, JointSource};

/// The 3x3 example source with the minimum-distance metric.
pub fn example() -> (JointSource, DecodingMetric) {
    (
        example_source(),
        DecodingMetric::hamming(3, 0.1).expect("valid delta"),
    )
}

/// The example with the last two source symbols merged, for block simulations.
pub fn binary() -> (JointSource, DecodingMetric) {
    let p = JointSource::new(&[vec![0.49, 0.01], vec![0.065, 0.435]]).expect("valid pmf");
    (p, DecodingMetric::hamming(2, 0.1).expect("valid delta"))
}

pub fn rate_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
