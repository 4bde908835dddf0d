//! Expurgated codes in which every sequence meets a per-sequence error bound,
//! and the end-to-end simulation report.
//!
//! Each round draws bins for the sequences still unassigned, keeps those with
//! `p_e <= (2 E[p_e^{1/rho}])^rho` and hands the rest to the next round on a
//! fresh set of bins. The expectation is over the ensemble with the per-round
//! bin budget on the whole class, which upper bounds the expectation over the
//! reduced ensembles of later rounds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::bounds::{nletter_ex_bound, nletter_k, nletter_rc_bound};
use super::{
    beats, code_errors, ensemble_average_error, rng_for, sample_bins, sample_code, AverageError,
    BinningCode, BlockModel, TypeTable,
};
use crate::dual::Ensemble;
use crate::error::{Error, Result};
use crate::model::{DecodingMetric, JointSource};

/// Code draws tried per round before giving up.
const MAX_DRAWS: usize = 256;
/// Sampled codes when the expectation cannot be computed exactly.
const EXPECTATION_SAMPLES: usize = 256;
/// Exact expectations require `|X|^n |Y|^n` at most this.
const EXACT_EXPECTATION_LIMIT: usize = 1 << 22;
const STATE_LIMIT: usize = 1 << 16;
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectationMethod {
    Exact,
    Sampled { codes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceRecord {
    pub index: usize,
    pub letters: Vec<u8>,
    pub class: usize,
    pub round: usize,
    pub bin: u32,
    pub error: f64,
    /// `E[p_e^{1/rho}]` over the per-round ensemble.
    pub expectation: f64,
    /// Standard error of `expectation` when sampled.
    pub expectation_std_error: f64,
    /// `(2 E[p_e^{1/rho}])^rho`.
    pub lemma_bound: f64,
    /// Lemma bound with the expectation replaced by its pairwise upper bound,
    /// minimized over a grid of `s`. Only defined for `rho >= 1`.
    pub chained_bound: Option<f64>,
    pub lemma_satisfied: bool,
    pub chained_satisfied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceErrorReport {
    pub rho: f64,
    pub expectation: ExpectationMethod,
    pub rounds_per_class: Vec<usize>,
    pub bins_per_round: Vec<usize>,
    pub draws: usize,
    /// Moved to the top level of a [`SimulationReport`].
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_sequence: Vec<SequenceRecord>,
    /// `sum_x P(x) p_e(x)` of the expurgated code.
    pub average_error: f64,
    pub all_lemma_satisfied: bool,
    pub all_chained_satisfied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpurgationResult {
    pub code: BinningCode,
    pub report: SequenceErrorReport,
}

/// Classes of the ensemble: one class for standard codes, the type classes
/// for type-by-type codes. Returns class of each sequence, class sizes and
/// per-round bins for each class.
fn classes(
    model: &BlockModel,
    bins: usize,
    ensemble: Ensemble,
) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let nx = model.xs.len();
    match ensemble {
        Ensemble::Standard => {
            let k = nletter_k(model.n(), model.xs.alphabet);
            (vec![0; nx], vec![nx], vec![k], vec![(bins / k).max(1)])
        }
        Ensemble::TypeByType => {
            let t = TypeTable::new(&model.xs);
            let per_type = bins.div_ceil(t.len());
            let ks: Vec<usize> = t
                .class_sizes
                .iter()
                .map(|&c| ((c as f64).log2().ceil() as usize).max(1))
                .collect();
            let per_round = ks.iter().map(|&k| (per_type / k).max(1)).collect();
            (t.of_sequence, t.class_sizes, ks, per_round)
        }
    }
}

/// Exact `E[p_e(x)^{1/rho}]` when each competitor lands in `x`'s bin
/// independently with probability `1/bins`. The error only depends on the
/// union of the competitors' winning sets of `y`, which is tracked exactly.
fn exact_expectation(
    model: &BlockModel,
    x: usize,
    competitors: &[usize],
    bins: usize,
    rho: f64,
) -> Option<f64> {
    let ys: Vec<(usize, f64)> = (0..model.ys.len())
        .map(|y| (y, model.p_y_given_x(y, x)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if ys.len() > 128 {
        return None;
    }
    let truth: Vec<f64> = ys.iter().map(|&(y, _)| model.log_q(x, y)).collect();
    let mut groups: BTreeMap<u128, usize> = BTreeMap::new();
    for &c in competitors {
        if c == x {
            continue;
        }
        let mut sig = 0u128;
        for (bit, &(y, _)) in ys.iter().enumerate() {
            if beats(model.log_q(c, y), truth[bit]) {
                sig |= 1 << bit;
            }
        }
        if sig != 0 {
            *groups.entry(sig).or_default() += 1;
        }
    }
    let miss = 1.0 - 1.0 / bins as f64;
    let mut states: BTreeMap<u128, f64> = BTreeMap::new();
    states.insert(0, 1.0);
    for (&sig, &count) in &groups {
        let hit = 1.0 - miss.powi(count as i32);
        let mut next: BTreeMap<u128, f64> = BTreeMap::new();
        for (&mask, &pr) in &states {
            *next.entry(mask | sig).or_default() += pr * hit;
            if hit < 1.0 {
                *next.entry(mask).or_default() += pr * (1.0 - hit);
            }
        }
        if next.len() > STATE_LIMIT {
            return None;
        }
        states = next;
    }
    let value = states
        .iter()
        .map(|(&mask, &pr)| {
            let pe: f64 = ys
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask >> bit & 1 == 1)
                .map(|(_, &(_, w))| w)
                .sum();
            pr * pe.min(1.0).powf(1.0 / rho)
        })
        .sum();
    Some(value)
}

/// `E[p_e(x)^{1/rho}]` for every sequence over the per-round ensemble, with
/// standard errors (zero when exact).
pub fn expectation_of_root(
    model: &BlockModel,
    bins: usize,
    ensemble: Ensemble,
    rho: f64,
    seed: u64,
) -> Result<(Vec<(f64, f64)>, ExpectationMethod)> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho = {rho}")));
    }
    let (class, _, _, per_round) = classes(model, bins, ensemble);
    let nx = model.xs.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); per_round.len()];
    (0..nx).for_each(|x| members[class[x]].push(x));
    if nx * model.ys.len() <= EXACT_EXPECTATION_LIMIT {
        let exact: Option<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|x| exact_expectation(model, x, &members[class[x]], per_round[class[x]], rho))
            .collect();
        if let Some(v) = exact {
            return Ok((
                v.into_iter().map(|e| (e, 0.0)).collect(),
                ExpectationMethod::Exact,
            ));
        }
    }
    let offsets: Vec<usize> = per_round
        .iter()
        .scan(0, |acc, &b| {
            let o = *acc;
            *acc += b;
            Some(o)
        })
        .collect();
    let total: usize = per_round.iter().sum();
    let samples: Vec<Vec<f64>> = (0..EXPECTATION_SAMPLES)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, 1 << 40 | i as u64);
            let bins = sample_bins(nx, &offsets, &per_round, &|x| class[x], &mut rng);
            let code = BinningCode {
                n: model.n(),
                x_size: model.xs.alphabet,
                ensemble,
                requested_bins: total,
                total_bins: total,
                bins_per_class: per_round.clone(),
                bins,
                seed,
            };
            code_errors(model, &code).map(|e| e.into_iter().map(|p| p.powf(1.0 / rho)).collect())
        })
        .collect::<Result<_>>()?;
    let m = EXPECTATION_SAMPLES as f64;
    let stats = (0..nx)
        .map(|x| {
            let mean = samples.iter().map(|s| s[x]).sum::<f64>() / m;
            let var = samples.iter().map(|s| (s[x] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (mean, (var / m).sqrt())
        })
        .collect();
    Ok((
        stats,
        ExpectationMethod::Sampled {
            codes: EXPECTATION_SAMPLES,
        },
    ))
}

/// `(2/M_r sum_xb (sum_y P(y|x) (q(xb,y)/q(x,y))^s)^{1/rho})^rho`, minimized
/// over `s` in `{0, 0.1, ..., 3}`.
fn chained_bound(
    model: &BlockModel,
    x: usize,
    competitors: &[usize],
    bins: usize,
    rho: f64,
) -> f64 {
    let ys: Vec<(usize, f64, f64)> = (0..model.ys.len())
        .map(|y| (y, model.p_y_given_x(y, x), model.log_q(x, y)))
        .filter(|&(_, w, _)| w > 0.0)
        .collect();
    let cols: Vec<Vec<f64>> = competitors
        .iter()
        .map(|&c| ys.iter().map(|&(y, _, _)| model.log_q(c, y)).collect())
        .collect();
    (0..=30)
        .map(|i| {
            let s = i as f64 * 0.1;
            let sum: f64 = cols
                .iter()
                .map(|col| {
                    let inner: f64 = ys
                        .iter()
                        .zip(col)
                        .map(|(&(_, w, lq), &lb)| {
                            if s == 0.0 {
                                w
                            } else {
                                w * (s * (lb - lq)).exp()
                            }
                        })
                        .sum();
                    inner.powf(1.0 / rho)
                })
                .sum();
            (2.0 * sum / bins as f64).powf(rho)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Builds an expurgated code in which every sequence satisfies its
/// per-sequence bound.
pub fn expurgate(
    source: &JointSource,
    metric: &DecodingMetric,
    n: usize,
    bins: usize,
    ensemble: Ensemble,
    rho: f64,
    seed: u64,
) -> Result<ExpurgationResult> {
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "bin count must be at least 1".into(),
        ));
    }
    let model = BlockModel::new(source, metric, n)?;
    let (class, sizes, ks, per_round) = classes(&model, bins, ensemble);
    let (expect, method) = expectation_of_root(&model, bins, ensemble, rho, seed)?;
    let threshold: Vec<f64> = expect.iter().map(|&(e, _)| (2.0 * e).powf(rho)).collect();
    let nx = model.xs.len();

    let mut assigned_bin = vec![u32::MAX; nx];
    let mut assigned_round = vec![0usize; nx];
    let mut rounds_per_class = vec![0; sizes.len()];
    let mut offset = 0usize;
    let mut draws = 0usize;
    for c in 0..sizes.len() {
        let mut remaining: Vec<usize> = (0..nx).filter(|&x| class[x] == c).collect();
        let mut round = 0;
        while !remaining.is_empty() {
            if round >= ks[c] {
                return Err(Error::IterationBudgetExceeded {
                    rounds: round,
                    remaining: remaining.len(),
                });
            }
            let need = remaining.len().div_ceil(2);
            let mut accepted = None;
            for draw in 0..MAX_DRAWS {
                draws += 1;
                let mut rng = rng_for(seed, (c as u64) << 40 | (round as u64) << 20 | draw as u64);
                let local = sample_bins(remaining.len(), &[0], &[per_round[c]], &|_| 0, &mut rng);
                let mut members = vec![Vec::new(); per_round[c]];
                for (i, &b) in local.iter().enumerate() {
                    members[b as usize].push(remaining[i]);
                }
                let survive: Vec<bool> = remaining
                    .par_iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let e = super::error_given_bin(&model, x, &members[local[i] as usize]);
                        e <= threshold[x] * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE
                    })
                    .collect();
                if survive.iter().filter(|&&v| v).count() >= need {
                    accepted = Some((local, survive));
                    break;
                }
            }
            let (local, survive) = accepted.ok_or(Error::IterationBudgetExceeded {
                rounds: round + 1,
                remaining: remaining.len(),
            })?;
            let mut next = Vec::new();
            for (i, &x) in remaining.iter().enumerate() {
                if survive[i] {
                    assigned_bin[x] = (offset + local[i] as usize) as u32;
                    assigned_round[x] = round;
                } else {
                    next.push(x);
                }
            }
            offset += per_round[c];
            remaining = next;
            round += 1;
        }
        rounds_per_class[c] = round;
    }

    let code = BinningCode {
        n,
        x_size: source.x_size(),
        ensemble,
        requested_bins: bins,
        total_bins: offset,
        bins_per_class: per_round.clone(),
        bins: assigned_bin,
        seed,
    };
    let errors = code_errors(&model, &code)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    (0..nx).for_each(|x| members[class[x]].push(x));
    let per_sequence: Vec<SequenceRecord> = (0..nx)
        .into_par_iter()
        .map(|x| {
            let lemma = threshold[x];
            let chained = (rho >= 1.0)
                .then(|| chained_bound(&model, x, &members[class[x]], per_round[class[x]], rho));
            let ok = |b: f64| errors[x] <= b * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE;
            SequenceRecord {
                index: x,
                letters: model.xs.letters(x).to_vec(),
                class: class[x],
                round: assigned_round[x],
                bin: code.bins[x],
                error: errors[x],
                expectation: expect[x].0,
                expectation_std_error: expect[x].1,
                lemma_bound: lemma,
                chained_bound: chained,
                lemma_satisfied: ok(lemma),
                chained_satisfied: chained.map(ok),
            }
        })
        .collect();
    let average_error = (0..nx).map(|x| model.p_x(x) * errors[x]).sum();
    let all_lemma_satisfied = per_sequence.iter().all(|r| r.lemma_satisfied);
    let all_chained_satisfied = (rho >= 1.0).then(|| {
        per_sequence
            .iter()
            .all(|r| r.chained_satisfied == Some(true))
    });
    Ok(ExpurgationResult {
        code,
        report: SequenceErrorReport {
            rho,
            expectation: method,
            rounds_per_class,
            bins_per_round: per_round,
            draws,
            per_sequence,
            average_error,
            all_lemma_satisfied,
            all_chained_satisfied,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub bins: usize,
    pub ensemble: Ensemble,
    /// Exponent parameter of the expurgation threshold.
    pub rho: f64,
    /// `s` used for the factorized expurgated bound.
    pub s: f64,
    pub seed: u64,
    /// Monte Carlo trials when the ensemble average is not exact.
    pub trials: usize,
    pub rc_rho_grid: Vec<f64>,
    pub rc_s_grid: Vec<f64>,
}

impl SimulationConfig {
    pub fn new(n: usize, bins: usize, ensemble: Ensemble, seed: u64) -> Self {
        Self {
            n,
            bins,
            ensemble,
            rho: 1.0,
            s: 1.0,
            seed,
            trials: 1000,
            rc_rho_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            rc_s_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcBoundCheck {
    pub rho: f64,
    pub s: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationAverages {
    pub ensemble: AverageError,
    pub sampled_code: f64,
    pub expurgated_code: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationBounds {
    pub random_coding: Vec<RcBoundCheck>,
    /// Factorized expurgated bound at `(rho, s)`; present when `rho >= 1`.
    pub expurgated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationFlags {
    pub probabilities_valid: bool,
    pub rc_bound_satisfied: bool,
    pub lemma_satisfied: bool,
    pub chained_satisfied: Option<bool>,
    pub ex_bound_satisfied: Option<bool>,
}

impl SimulationFlags {
    pub fn all(&self) -> bool {
        self.probabilities_valid
            && self.rc_bound_satisfied
            && self.lemma_satisfied
            && self.chained_satisfied.unwrap_or(true)
            && self.ex_bound_satisfied.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub params: SimulationConfig,
    pub seed: u64,
    /// Per-sequence errors of the expurgated code.
    pub per_sequence: Vec<SequenceRecord>,
    pub sampled_code: BinningCode,
    pub sampled_errors: Vec<f64>,
    pub expurgation: SequenceErrorReport,
    pub expurgated_code: BinningCode,
    pub averages: SimulationAverages,
    pub bounds: SimulationBounds,
    pub flags: SimulationFlags,
}

/// Samples a code, evaluates it exactly, checks the random-coding bound on a
/// parameter grid and runs the expurgation.
pub fn simulate(
    source: &JointSource,
    metric: &DecodingMetric,
    cfg: &SimulationConfig,
) -> Result<SimulationReport> {
    let model = BlockModel::new(source, metric, cfg.n)?;
    let code = sample_code(source.x_size(), cfg.n, cfg.bins, cfg.ensemble, cfg.seed)?;
    let sampled_errors = code_errors(&model, &code)?;
    let sampled_avg = (0..model.xs.len())
        .map(|x| model.p_x(x) * sampled_errors[x])
        .sum();
    let avg = ensemble_average_error(
        source,
        metric,
        cfg.n,
        cfg.bins,
        cfg.ensemble,
        cfg.trials,
        cfg.seed,
    )?;
    let mut random_coding = Vec::new();
    for &rho in &cfg.rc_rho_grid {
        for &s in &cfg.rc_s_grid {
            let bound =
                nletter_rc_bound(source, metric, cfg.n, cfg.bins, rho, s, cfg.ensemble, None)?;
            random_coding.push(RcBoundCheck {
                rho,
                s,
                bound,
                satisfied: avg.mean <= bound * (1.0 + BOUND_SLACK),
            });
        }
    }
    let ex = expurgate(
        source,
        metric,
        cfg.n,
        cfg.bins,
        cfg.ensemble,
        cfg.rho,
        cfg.seed,
    )?;
    let ex_bound = if cfg.rho >= 1.0 {
        Some(nletter_ex_bound(
            source,
            metric,
            cfg.n,
            cfg.bins,
            cfg.rho,
            cfg.s,
            cfg.ensemble,
            None,
        )?)
    } else {
        None
    };
    let valid = |v: &f64| (0.0..=1.0).contains(v);
    let flags = SimulationFlags {
        probabilities_valid: sampled_errors.iter().all(valid)
            && ex.report.per_sequence.iter().all(|r| valid(&r.error)),
        rc_bound_satisfied: random_coding.iter().all(|c| c.satisfied),
        lemma_satisfied: ex.report.all_lemma_satisfied,
        chained_satisfied: ex.report.all_chained_satisfied,
        ex_bound_satisfied: ex_bound.map(|b| ex.report.average_error <= b * (1.0 + BOUND_SLACK)),
    };
    let mut report = ex.report;
    let per_sequence = std::mem::take(&mut report.per_sequence);
    Ok(SimulationReport {
        params: cfg.clone(),
        seed: cfg.seed,
        per_sequence,
        sampled_code: code,
        sampled_errors,
        averages: SimulationAverages {
            ensemble: avg,
            sampled_code: sampled_avg,
            expurgated_code: report.average_error,
        },
        expurgation: report,
        expurgated_code: ex.code,
        bounds: SimulationBounds {
            random_coding,
            expurgated: ex_bound,
        },
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> (JointSource, DecodingMetric) {
        let s = JointSource::new(&[vec![0.4, 0.1], vec![0.15, 0.35]]).unwrap();
        let q = DecodingMetric::hamming(2, 0.2).unwrap();
        (s, q)
    }

    #[test]
    fn expurgated_code_covers_everything() {
        let (s, q) = binary();
        for ensemble in [Ensemble::Standard, Ensemble::TypeByType] {
            let r = expurgate(&s, &q, 3, 4, ensemble, 1.0, 5).unwrap();
            assert!(r
                .code
                .bins
                .iter()
                .all(|&b| (b as usize) < r.code.total_bins));
            assert!(r.report.all_lemma_satisfied);
            assert_eq!(r.report.expectation, ExpectationMethod::Exact);
        }
    }

    #[test]
    fn injective_regime_is_error_free() {
        let (s, q) = binary();
        // k = 3 rounds of 64 bins each
        let r = expurgate(&s, &q, 3, 192, Ensemble::Standard, 1.0, 1).unwrap();
        assert!(r.report.per_sequence.iter().all(|x| x.lemma_bound < 0.5));
    }

    #[test]
    fn exact_expectation_matches_sampling() {
        let (s, q) = binary();
        let model = BlockModel::new(&s, &q, 3).unwrap();
        let rho = 1.5;
        let (exact, _) = expectation_of_root(&model, 6, Ensemble::Standard, rho, 3).unwrap();
        // brute-force average over many codes with the same per-round bins
        let per_round = (6 / nletter_k(3, 2)).max(1);
        let trials = 4000;
        let mut acc = vec![0.0; model.xs.len()];
        for t in 0..trials {
            let code = sample_code(2, 3, per_round, Ensemble::Standard, 1000 + t).unwrap();
            let e = code_errors(&model, &code).unwrap();
            acc.iter_mut()
                .zip(&e)
                .for_each(|(a, v)| *a += v.powf(1.0 / rho));
        }
        for (x, &(ex, _)) in exact.iter().enumerate() {
            assert!(
                (acc[x] / trials as f64 - ex).abs() < 0.02,
                "x={x}: {} vs {ex}",
                acc[x] / trials as f64
            );
        }
    }
}
