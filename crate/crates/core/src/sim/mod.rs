//! Random binning codes at small blocklength with exact error evaluation.
//!
//! Sequences in `X^n` and `Y^n` are indexed in base `|X|` (resp. `|Y|`) with
//! the first symbol most significant. Every computation here enumerates
//! sequences, so hard limits guard the alphabet powers.

mod bounds;
mod expurgate;

pub use bounds::{nletter_ex_bound, nletter_k, nletter_rc_bound};
pub use expurgate::{
    expectation_of_root, expurgate, simulate, ExpectationMethod, ExpurgationResult,
    SequenceErrorReport, SequenceRecord, SimulationConfig, SimulationReport,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dual::Ensemble;
use crate::error::{Error, Result};
use crate::model::{DecodingMetric, JointSource};

/// Largest `|X|^n` or `|Y|^n` handled.
pub const SEQUENCE_LIMIT: u128 = 1 << 20;
/// Largest `|X|^n` for which ensemble averages are computed exactly.
pub const EXACT_AVERAGE_LIMIT: usize = 1 << 12;
/// Relative tolerance under which two metric values count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn power(base: usize, n: usize) -> u128 {
    let mut v: u128 = 1;
    for _ in 0..n {
        v = v.saturating_mul(base as u128);
    }
    v
}

/// A competitor with log-metric `other` beats the truth `truth` (ties count).
#[inline]
pub(crate) fn beats(other: f64, truth: f64) -> bool {
    if truth == f64::NEG_INFINITY {
        return true;
    }
    other >= truth - TIE_TOLERANCE * truth.abs().max(1.0)
}

/// All sequences of length `n` over an alphabet, with their letters.
#[derive(Debug, Clone)]
pub struct Sequences {
    pub n: usize,
    pub alphabet: usize,
    letters: Vec<u8>,
}

impl Sequences {
    fn new(alphabet: usize, n: usize, limit_err: impl Fn(u128) -> Error) -> Result<Self> {
        let count = power(alphabet, n);
        if count > SEQUENCE_LIMIT || alphabet > 256 {
            return Err(limit_err(count));
        }
        let count = count as usize;
        let mut letters = vec![0u8; count * n];
        for i in 0..count {
            let mut r = i;
            for t in (0..n).rev() {
                letters[i * n + t] = (r % alphabet) as u8;
                r /= alphabet;
            }
        }
        Ok(Self {
            n,
            alphabet,
            letters,
        })
    }

    pub fn len(&self) -> usize {
        power(self.alphabet, self.n) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn letters(&self, i: usize) -> &[u8] {
        &self.letters[i * self.n..(i + 1) * self.n]
    }
}

/// Type classes of `X^n`, listed in lexicographic order of their counts.
#[derive(Debug, Clone, Serialize)]
pub struct TypeTable {
    pub counts: Vec<Vec<usize>>,
    /// Type index of every sequence.
    pub of_sequence: Vec<usize>,
    pub class_sizes: Vec<usize>,
}

impl TypeTable {
    pub fn new(seqs: &Sequences) -> Self {
        let mut counts: Vec<Vec<usize>> = (0..seqs.len())
            .map(|i| {
                let mut c = vec![0; seqs.alphabet];
                seqs.letters(i).iter().for_each(|&l| c[l as usize] += 1);
                c
            })
            .collect();
        let per_seq = counts.clone();
        counts.sort();
        counts.dedup();
        let of_sequence: Vec<usize> = per_seq
            .iter()
            .map(|c| counts.binary_search(c).unwrap())
            .collect();
        let mut class_sizes = vec![0; counts.len()];
        of_sequence.iter().for_each(|&t| class_sizes[t] += 1);
        Self {
            counts,
            of_sequence,
            class_sizes,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Per-letter log tables of a memoryless source and metric, extended to
/// blocks by summation.
#[derive(Debug, Clone)]
pub struct BlockModel {
    pub xs: Sequences,
    pub ys: Sequences,
    log_q: Vec<Vec<f64>>,
    log_w: Vec<Vec<f64>>,
    log_px: Vec<f64>,
}

impl BlockModel {
    pub fn new(source: &JointSource, metric: &DecodingMetric, n: usize) -> Result<Self> {
        metric.check_compatible(source)?;
        let xs = Sequences::new(source.x_size(), n, |count| Error::BlocklengthTooLarge {
            n,
            count,
            limit: SEQUENCE_LIMIT,
        })?;
        let ys = Sequences::new(source.y_size(), n, |count| Error::EnumerationTooLarge {
            n,
            count,
            limit: SEQUENCE_LIMIT,
        })?;
        let (xn, yn) = (source.x_size(), source.y_size());
        let log_q = (0..xn)
            .map(|x| (0..yn).map(|y| metric.q(x, y).ln()).collect())
            .collect();
        let log_w = (0..xn)
            .map(|x| (0..yn).map(|y| source.p_y_given_x(y, x).ln()).collect())
            .collect();
        let log_px = source.px().iter().map(|p| p.ln()).collect();
        Ok(Self {
            xs,
            ys,
            log_q,
            log_w,
            log_px,
        })
    }

    pub fn n(&self) -> usize {
        self.xs.n
    }

    pub fn log_q(&self, x: usize, y: usize) -> f64 {
        let (a, b) = (self.xs.letters(x), self.ys.letters(y));
        a.iter()
            .zip(b)
            .map(|(&u, &v)| self.log_q[u as usize][v as usize])
            .sum()
    }

    pub fn p_y_given_x(&self, y: usize, x: usize) -> f64 {
        let (a, b) = (self.xs.letters(x), self.ys.letters(y));
        a.iter()
            .zip(b)
            .map(|(&u, &v)| self.log_w[u as usize][v as usize])
            .sum::<f64>()
            .exp()
    }

    pub fn p_x(&self, x: usize) -> f64 {
        self.xs
            .letters(x)
            .iter()
            .map(|&u| self.log_px[u as usize])
            .sum::<f64>()
            .exp()
    }

    /// `log q(x, y)` for every `x`, at fixed `y`.
    fn column(&self, y: usize) -> Vec<f64> {
        (0..self.xs.len()).map(|x| self.log_q(x, y)).collect()
    }
}

/// A binning code: every source sequence is mapped to a bin. Bins used by
/// different type classes (type-by-type) or expurgation rounds are disjoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinningCode {
    pub n: usize,
    pub x_size: usize,
    pub ensemble: Ensemble,
    /// Bin count as requested.
    pub requested_bins: usize,
    /// Bins actually available (padded up for type-by-type).
    pub total_bins: usize,
    /// Bins per type class (type-by-type) or a single entry (standard).
    pub bins_per_class: Vec<usize>,
    pub bins: Vec<u32>,
    pub seed: u64,
}

impl BinningCode {
    /// Members of every bin, in increasing sequence order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.total_bins];
        for (i, &b) in self.bins.iter().enumerate() {
            m[b as usize].push(i);
        }
        m
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.total_bins];
        self.bins.iter().for_each(|&b| h[b as usize] += 1);
        h
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_bins(
    len: usize,
    offsets: &[usize],
    sizes: &[usize],
    class: &dyn Fn(usize) -> usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    (0..len)
        .map(|i| {
            let c = class(i);
            (offsets[c] + rng.random_range(0..sizes[c])) as u32
        })
        .collect()
}

/// Draws a code from the standard or type-by-type ensemble.
///
/// For type-by-type codes `bins` is padded up to a multiple of the number of
/// type classes; the padded count is recorded in `total_bins`.
pub fn sample_code(
    x_size: usize,
    n: usize,
    bins: usize,
    ensemble: Ensemble,
    seed: u64,
) -> Result<BinningCode> {
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "bin count must be at least 1".into(),
        ));
    }
    let xs = Sequences::new(x_size, n, |count| Error::BlocklengthTooLarge {
        n,
        count,
        limit: SEQUENCE_LIMIT,
    })?;
    let mut rng = rng_for(seed, 0);
    match ensemble {
        Ensemble::Standard => {
            let b = sample_bins(xs.len(), &[0], &[bins], &|_| 0, &mut rng);
            Ok(BinningCode {
                n,
                x_size,
                ensemble,
                requested_bins: bins,
                total_bins: bins,
                bins_per_class: vec![bins],
                bins: b,
                seed,
            })
        }
        Ensemble::TypeByType => {
            let types = TypeTable::new(&xs);
            let per = bins.div_ceil(types.len());
            let offsets: Vec<usize> = (0..types.len()).map(|t| t * per).collect();
            let sizes = vec![per; types.len()];
            let b = sample_bins(
                xs.len(),
                &offsets,
                &sizes,
                &|i| types.of_sequence[i],
                &mut rng,
            );
            Ok(BinningCode {
                n,
                x_size,
                ensemble,
                requested_bins: bins,
                total_bins: per * types.len(),
                bins_per_class: sizes,
                bins: b,
                seed,
            })
        }
    }
}

fn check_code(code: &BinningCode, model: &BlockModel) -> Result<()> {
    if code.n != model.n() || code.x_size != model.xs.alphabet || code.bins.len() != model.xs.len()
    {
        return Err(Error::DimensionMismatch {
            expected: format!("n = {}, |X| = {}", model.n(), model.xs.alphabet),
            found: format!("n = {}, |X| = {}", code.n, code.x_size),
        });
    }
    Ok(())
}

/// Exact error probability of `x` given the members of its bin.
fn error_given_bin(model: &BlockModel, x: usize, bin: &[usize]) -> f64 {
    let competitors: Vec<usize> = bin.iter().copied().filter(|&c| c != x).collect();
    if competitors.is_empty() {
        return 0.0;
    }
    let mut err = 0.0;
    for y in 0..model.ys.len() {
        let w = model.p_y_given_x(y, x);
        if w == 0.0 {
            continue;
        }
        let truth = model.log_q(x, y);
        if competitors.iter().any(|&c| beats(model.log_q(c, y), truth)) {
            err += w;
        }
    }
    err.min(1.0)
}

/// `P[some other sequence in x's bin scores at least q(x, Y)]` under `P(y|x)`.
pub fn exact_error_probability(
    code: &BinningCode,
    source: &JointSource,
    metric: &DecodingMetric,
    x: usize,
) -> Result<f64> {
    let model = BlockModel::new(source, metric, code.n)?;
    check_code(code, &model)?;
    if x >= model.xs.len() {
        return Err(Error::InvalidParameter(format!(
            "sequence index {x} out of range"
        )));
    }
    let bin: Vec<usize> = (0..code.bins.len())
        .filter(|&i| code.bins[i] == code.bins[x])
        .collect();
    Ok(error_given_bin(&model, x, &bin))
}

/// Exact per-sequence error probabilities of a code.
pub fn code_errors(model: &BlockModel, code: &BinningCode) -> Result<Vec<f64>> {
    check_code(code, model)?;
    let members = code.members();
    Ok((0..model.xs.len())
        .into_par_iter()
        .map(|x| error_given_bin(model, x, &members[code.bins[x] as usize]))
        .collect())
}

/// Average error `sum_x P(x) p_e(x, C)` of one code, via the two best
/// metric values in each bin.
fn code_average_error(model: &BlockModel, code: &BinningCode) -> f64 {
    let nb = code.total_bins;
    let nx = model.xs.len();
    let px: Vec<f64> = (0..nx).map(|x| model.p_x(x)).collect();
    let mut total = 0.0;
    for y in 0..model.ys.len() {
        let col = model.column(y);
        let mut top = vec![(f64::NEG_INFINITY, usize::MAX); nb];
        let mut second = vec![f64::NEG_INFINITY; nb];
        let mut count = vec![0usize; nb];
        for (x, &v) in col.iter().enumerate() {
            let b = code.bins[x] as usize;
            count[b] += 1;
            if v > top[b].0 || top[b].1 == usize::MAX {
                second[b] = top[b].0;
                top[b] = (v, x);
            } else if v > second[b] {
                second[b] = v;
            }
        }
        for x in 0..nx {
            let w = model.p_y_given_x(y, x);
            if w == 0.0 || px[x] == 0.0 {
                continue;
            }
            let b = code.bins[x] as usize;
            if count[b] < 2 {
                continue;
            }
            let best_other = if top[b].1 == x { second[b] } else { top[b].0 };
            if beats(best_other, col[x]) {
                total += px[x] * w;
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageError {
    pub mean: f64,
    /// Standard error of the Monte Carlo mean; zero when exact.
    pub std_error: f64,
    pub exact: bool,
    pub trials: usize,
    pub bins: usize,
    pub seed: u64,
}

impl AverageError {
    /// Two-sided normal interval at the given number of standard errors.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (
            (self.mean - z * self.std_error).max(0.0),
            (self.mean + z * self.std_error).min(1.0),
        )
    }
}

/// Exact ensemble average via independence of bin assignments: a sequence
/// with `c` competing sequences at `y` is confused with probability
/// `1 - (1 - 1/M)^c`.
pub fn exact_ensemble_average(model: &BlockModel, bins: usize, ensemble: Ensemble) -> f64 {
    let nx = model.xs.len();
    let (groups, per_bin): (Vec<usize>, usize) = match ensemble {
        Ensemble::Standard => (vec![0; nx], bins),
        Ensemble::TypeByType => {
            let t = TypeTable::new(&model.xs);
            let per = bins.div_ceil(t.len());
            (t.of_sequence, per)
        }
    };
    let miss = 1.0 - 1.0 / per_bin as f64;
    let ngroups = groups.iter().max().map(|m| m + 1).unwrap_or(0);
    let px: Vec<f64> = (0..nx).map(|x| model.p_x(x)).collect();
    (0..model.ys.len())
        .into_par_iter()
        .map(|y| {
            let col = model.column(y);
            let mut sorted: Vec<Vec<f64>> = vec![Vec::new(); ngroups];
            for x in 0..nx {
                sorted[groups[x]].push(col[x]);
            }
            sorted
                .iter_mut()
                .for_each(|v| v.sort_by(|a, b| a.total_cmp(b)));
            let mut acc = 0.0;
            for x in 0..nx {
                let w = model.p_y_given_x(y, x);
                if w == 0.0 || px[x] == 0.0 {
                    continue;
                }
                let g = &sorted[groups[x]];
                let truth = col[x];
                let first = g.partition_point(|&v| !beats(v, truth));
                let competitors = (g.len() - first).saturating_sub(1);
                acc += px[x] * w * (1.0 - miss.powi(competitors as i32));
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Ensemble-average error `E[sum_x P(x) p_e(x, C)]`, exact when
/// `|X|^n <= EXACT_AVERAGE_LIMIT`, otherwise over `trials` sampled codes.
pub fn ensemble_average_error(
    source: &JointSource,
    metric: &DecodingMetric,
    n: usize,
    bins: usize,
    ensemble: Ensemble,
    trials: usize,
    seed: u64,
) -> Result<AverageError> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let model = BlockModel::new(source, metric, n)?;
    if model.xs.len() <= EXACT_AVERAGE_LIMIT {
        let mean = exact_ensemble_average(&model, bins, ensemble);
        return Ok(AverageError {
            mean,
            std_error: 0.0,
            exact: true,
            trials: 0,
            bins,
            seed,
        });
    }
    monte_carlo_average(&model, bins, ensemble, trials, seed)
}

/// Monte Carlo ensemble average over `trials` codes; trial `i` uses the code
/// drawn with seed `seed + i`.
pub fn monte_carlo_average(
    model: &BlockModel,
    bins: usize,
    ensemble: Ensemble,
    trials: usize,
    seed: u64,
) -> Result<AverageError> {
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let code = sample_code(
                model.xs.alphabet,
                model.n(),
                bins,
                ensemble,
                seed.wrapping_add(i as u64),
            )?;
            Ok(code_average_error(model, &code))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(AverageError {
        mean,
        std_error: (var / trials as f64).sqrt(),
        exact: false,
        trials,
        bins,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalPoint {
    pub n: usize,
    pub bins: usize,
    pub error: f64,
    /// `-log(error) / n`; infinite when the error vanishes.
    pub exponent: f64,
    pub exact: bool,
}

/// Finite-length exponent samples with `M = round(e^{nR})` bins.
pub fn empirical_exponent(
    source: &JointSource,
    metric: &DecodingMetric,
    rate: f64,
    ensemble: Ensemble,
    n_list: &[usize],
    seed: u64,
) -> Result<Vec<EmpiricalPoint>> {
    n_list
        .iter()
        .map(|&n| {
            let bins = ((n as f64 * rate).exp().round() as usize).max(1);
            let avg = ensemble_average_error(source, metric, n, bins, ensemble, 200, seed)?;
            let exponent = if avg.mean > 0.0 {
                -avg.mean.ln() / n as f64
            } else {
                f64::INFINITY
            };
            Ok(EmpiricalPoint {
                n,
                bins,
                error: avg.mean,
                exponent,
                exact: avg.exact,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> (JointSource, DecodingMetric) {
        let s = JointSource::new(&[vec![0.4, 0.1], vec![0.15, 0.35]]).unwrap();
        let q = DecodingMetric::matched(&s);
        (s, q)
    }

    #[test]
    fn sequence_indexing_is_big_endian() {
        let s = Sequences::new(3, 2, |_| Error::Empty).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s.letters(5), &[1, 2]);
    }

    #[test]
    fn binary_types() {
        let s = Sequences::new(2, 4, |_| Error::Empty).unwrap();
        let t = TypeTable::new(&s);
        assert_eq!(t.len(), 5);
        assert_eq!(t.class_sizes.iter().sum::<usize>(), 16);
        assert_eq!(t.class_sizes[t.of_sequence[0]], 1);
    }

    #[test]
    fn type_by_type_bins_are_disjoint() {
        let code = sample_code(2, 4, 8, Ensemble::TypeByType, 3).unwrap();
        assert_eq!(code.total_bins, 10);
        let types = TypeTable::new(&Sequences::new(2, 4, |_| Error::Empty).unwrap());
        for (i, &b) in code.bins.iter().enumerate() {
            assert_eq!(b as usize / 2, types.of_sequence[i]);
        }
    }

    #[test]
    fn seeded_replay() {
        let a = sample_code(2, 4, 4, Ensemble::Standard, 7).unwrap();
        let b = sample_code(2, 4, 4, Ensemble::Standard, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn limits_are_enforced() {
        assert!(matches!(
            sample_code(2, 21, 4, Ensemble::Standard, 1),
            Err(Error::BlocklengthTooLarge { .. })
        ));
        let (s, q) = binary();
        assert!(matches!(
            BlockModel::new(&s, &q, 30),
            Err(Error::BlocklengthTooLarge { .. })
        ));
    }

    #[test]
    fn single_bin_pair_by_hand() {
        let (s, q) = binary();
        let code = BinningCode {
            n: 1,
            x_size: 2,
            ensemble: Ensemble::Standard,
            requested_bins: 1,
            total_bins: 1,
            bins_per_class: vec![1],
            bins: vec![0, 0],
            seed: 0,
        };
        // matched decoding picks argmax_x P(x|y): x=0 at y=0, x=1 at y=1
        let e0 = exact_error_probability(&code, &s, &q, 0).unwrap();
        let e1 = exact_error_probability(&code, &s, &q, 1).unwrap();
        assert!((e0 - 0.2).abs() < 1e-12);
        assert!((e1 - 0.15 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn fast_average_matches_per_sequence_errors() {
        let (s, q) = binary();
        let model = BlockModel::new(&s, &q, 4).unwrap();
        for seed in 0..5 {
            let code = sample_code(2, 4, 3, Ensemble::Standard, seed).unwrap();
            let errs = code_errors(&model, &code).unwrap();
            let direct: f64 = errs.iter().enumerate().map(|(x, e)| model.p_x(x) * e).sum();
            assert!((direct - code_average_error(&model, &code)).abs() < 1e-12);
        }
    }
}
