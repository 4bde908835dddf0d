use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use swexp_core::dual::exponent_table;
use swexp_core::model::example_source;
use swexp_core::primal::{self, PrimalConfig};
use swexp_core::rates::rate_report;
use swexp_core::sim::{self, SimulationConfig};
use swexp_core::{DecodingMetric, ExponentPoint, JointSource};

use crate::args::{Common, ExponentsArgs, Format, MetricSpec, RatesArgs, SimulateArgs, VerifyArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{context}: {source}")]
    Model {
        context: String,
        source: swexp_core::Error,
    },
    #[error(transparent)]
    Core(#[from] swexp_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Verification(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_source(spec: &str) -> Result<JointSource> {
    if spec == "example" {
        return Ok(example_source());
    }
    let path = Path::new(spec);
    JointSource::from_json(&read(path)?).map_err(|source| CliError::Model {
        context: spec.to_owned(),
        source,
    })
}

fn load_metric(spec: &MetricSpec, source: &JointSource) -> Result<DecodingMetric> {
    let metric = match spec {
        MetricSpec::Matched => DecodingMetric::matched(source),
        MetricSpec::Hamming(d) => DecodingMetric::hamming(source.x_size(), *d)?,
        MetricSpec::File(p) => {
            DecodingMetric::from_json(&read(p)?).map_err(|source| CliError::Model {
                context: p.display().to_string(),
                source,
            })?
        }
    };
    metric.check_compatible(source)?;
    Ok(metric)
}

fn load(common: &Common) -> Result<(JointSource, DecodingMetric)> {
    let source = load_source(&common.source)?;
    let metric = load_metric(&common.metric, &source)?;
    Ok((source, metric))
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io {
            path: p.clone(),
            source,
        }),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn unit(bits: bool) -> f64 {
    if bits {
        std::f64::consts::LN_2
    } else {
        1.0
    }
}

/// Twelve significant digits.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

pub const CSV_COLUMNS: [&str; 19] = [
    "rate",
    "E_std_rc",
    "E_std_ex",
    "E_std",
    "E_tt_rc",
    "E_tt_ex",
    "E_tt",
    "E_r_gallager",
    "E_sp",
    "rho_std_rc",
    "s_std_rc",
    "rho_std_ex",
    "s_std_ex",
    "rho_tt_rc",
    "s_tt_rc",
    "rho_tt_ex",
    "s_tt_ex",
    "rho_r_gallager",
    "rho_sp",
];

pub fn exponents(a: &ExponentsArgs) -> Result<()> {
    let (source, metric) = load(&a.common)?;
    let rows = exponent_table(&source, &metric, &a.rates.points(), a.rho_cap)?;
    let u = unit(a.common.bits);
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
        Format::Csv => {
            let mut out = CSV_COLUMNS.join(",") + "\n";
            let s = |p: &ExponentPoint| p.argmax.s.unwrap_or(f64::NAN);
            for r in &rows {
                let mut cells = vec![r.rate / u];
                cells.extend(
                    [
                        &r.std_rc,
                        &r.std_ex,
                        &r.std,
                        &r.tt_rc,
                        &r.tt_ex,
                        &r.tt,
                        &r.gallager,
                        &r.sp,
                    ]
                    .map(|p| p.value / u),
                );
                for p in [&r.std_rc, &r.std_ex, &r.tt_rc, &r.tt_ex] {
                    cells.push(p.argmax.rho);
                    cells.push(s(p));
                }
                cells.push(r.gallager.argmax.rho);
                cells.push(r.sp.argmax.rho);
                let line: Vec<String> = cells.into_iter().map(num).collect();
                let _ = writeln!(out, "{}", line.join(","));
            }
            out
        }
    };
    emit(&a.common, &text)
}

pub fn rates(a: &RatesArgs) -> Result<()> {
    let (source, metric) = load(&a.common)?;
    let r = rate_report(&source, &metric)?;
    let text = match a.format {
        Some(Format::Json) => serde_json::to_string_pretty(&r)? + "\n",
        Some(Format::Csv) => {
            let u = unit(a.common.bits);
            format!(
                "h_xy,h_q_std,h_q_tt,s_star,s_star_tt\n{},{},{},{},{}\n",
                num(r.h_xy / u),
                num(r.h_q_std / u),
                num(r.h_q_tt / u),
                num(r.s_star),
                num(r.s_star_tt)
            )
        }
        None => {
            let (u, name) = if a.common.bits {
                (std::f64::consts::LN_2, "bits")
            } else {
                (1.0, "nats")
            };
            let mut t = String::new();
            let _ = writeln!(t, "H(X|Y)        {:.4} {name}", r.h_xy / u);
            let _ = writeln!(
                t,
                "H_q(X|Y)      {:.4} {name}  (s* = {:.4})",
                r.h_q_std / u,
                r.s_star
            );
            let _ = writeln!(
                t,
                "H^tt_q(X|Y)   {:.4} {name}  (s* = {:.4})",
                r.h_q_tt / u,
                r.s_star_tt
            );
            if let Some(g) = r.gmi_crosscheck {
                let _ = writeln!(t, "H(X) - GMI    {:.4} {name}", g / u);
            }
            let _ = writeln!(t, "H(X) - LM     {:.4} {name}", r.lm_crosscheck / u);
            if r.boundary_hit {
                let _ = writeln!(t, "note: s search hit its upper boundary");
            }
            t
        }
    };
    emit(&a.common, &text)
}

pub fn verify_duality(a: &VerifyArgs) -> Result<()> {
    let (source, metric) = load(&a.common)?;
    let cfg = PrimalConfig::new(a.restarts, a.seed);
    let report =
        primal::verify_duality(&source, &metric, &a.rates.points(), a.tol, a.rho_cap, &cfg)?;
    emit(&a.common, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    eprintln!(
        "max gap {:.3e} (tolerance {:.1e})",
        report.max_gap, report.tolerance
    );
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gap {:.3e} exceeds {:.1e}",
            report.max_gap, report.tolerance
        )))
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let (source, metric) = load(&a.common)?;
    let mut cfg = SimulationConfig::new(a.n, a.bins, a.ensemble.into(), a.seed);
    cfg.rho = a.rho;
    cfg.s = a.s;
    cfg.trials = a.trials;
    let report = sim::simulate(&source, &metric, &cfg)?;
    emit(&a.common, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let f = &report.flags;
    let show = |v: Option<bool>| v.map(|b| b.to_string()).unwrap_or_else(|| "n/a".into());
    eprintln!(
        "ensemble average {:.6}; random-coding bound {}; per-sequence bound {}; chained bound {}; expurgated bound {}",
        report.averages.ensemble.mean,
        f.rc_bound_satisfied,
        f.lemma_satisfied,
        show(f.chained_satisfied),
        show(f.ex_bound_satisfied)
    );
    if f.all() {
        Ok(())
    } else {
        Err(CliError::Verification("a bound check failed".into()))
    }
}
