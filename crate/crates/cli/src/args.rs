use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use swexp_core::Ensemble;

#[derive(Debug, Parser)]
#[command(
    name = "swexp",
    version,
    about = "Error exponents for source coding with side information"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponent curves for every family on a rate grid.
    Exponents(ExponentsArgs),
    /// Rate thresholds and their GMI / LM cross-checks.
    Rates(RatesArgs),
    /// Compare the primal-domain exponents with the type-by-type dual.
    VerifyDuality(VerifyArgs),
    /// Sample, evaluate and expurgate a binning code at small blocklength.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Joint pmf as JSON (`{"pmf": [[...]]}`), or `example`.
    #[arg(long, default_value = "example")]
    pub source: String,
    /// `matched`, `hamming:DELTA` or a JSON file (`{"q": [[...]]}`).
    #[arg(long, default_value = "matched")]
    pub metric: MetricSpec,
    /// Write output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Show rates and exponents in bits. Computation stays in nats.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleArg {
    Standard,
    Tt,
}

impl From<EnsembleArg> for Ensemble {
    fn from(e: EnsembleArg) -> Self {
        match e {
            EnsembleArg::Standard => Ensemble::Standard,
            EnsembleArg::Tt => Ensemble::TypeByType,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExponentsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Rate grid in nats.
    #[arg(long, default_value = "0.40:1.05:40")]
    pub rates: RateGrid,
    #[arg(long, default_value_t = swexp_core::dual::DEFAULT_RHO_CAP)]
    pub rho_cap: f64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct RatesArgs {
    #[command(flatten)]
    pub common: Common,
    /// Print JSON instead of the text summary.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "0.5:1.0:10")]
    pub rates: RateGrid,
    #[arg(long, default_value_t = 5e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = swexp_core::dual::DEFAULT_RHO_CAP)]
    pub rho_cap: f64,
    /// Random starts per primal solve, besides the fixed ones.
    #[arg(long, default_value_t = swexp_core::primal::DEFAULT_CK_CONFIG.restarts)]
    pub restarts: usize,
    #[arg(long, default_value_t = swexp_core::primal::DEFAULT_CK_CONFIG.seed)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Blocklength.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Number of bins M.
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "standard")]
    pub ensemble: EnsembleArg,
    /// Exponent of the expurgation threshold.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// `s` of the factorized expurgated bound.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo trials when the ensemble average is not exact.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    Matched,
    Hamming(f64),
    File(PathBuf),
}

impl FromStr for MetricSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "matched" {
            return Ok(Self::Matched);
        }
        if let Some(d) = s.strip_prefix("hamming:") {
            return d
                .parse()
                .map(Self::Hamming)
                .map_err(|e| format!("bad delta {d:?}: {e}"));
        }
        if s.is_empty() {
            return Err("empty metric".into());
        }
        Ok(Self::File(PathBuf::from(s)))
    }
}

/// `MIN:MAX:COUNT`, strictly increasing with at least two points.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RateGrid {
    pub fn points(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.max
                } else {
                    self.min + step * i as f64
                }
            })
            .collect()
    }
}

impl FromStr for RateGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected MIN:MAX:COUNT, got {s:?}"));
        }
        let min: f64 = parts[0]
            .parse()
            .map_err(|e| format!("bad MIN {:?}: {e}", parts[0]))?;
        let max: f64 = parts[1]
            .parse()
            .map_err(|e| format!("bad MAX {:?}: {e}", parts[1]))?;
        let count: usize = parts[2]
            .parse()
            .map_err(|e| format!("bad COUNT {:?}: {e}", parts[2]))?;
        if count < 2 {
            return Err("COUNT must be at least 2".into());
        }
        if !(min.is_finite() && max.is_finite() && min >= 0.0 && max > min) {
            return Err(format!("need 0 <= MIN < MAX, got {min} and {max}"));
        }
        Ok(Self { min, max, count })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g: RateGrid = "0.5:1.0:11".parse().unwrap();
        let p = g.points();
        assert_eq!(p.len(), 11);
        assert_eq!(p[10], 1.0);
        assert!((p[1] - 0.55).abs() < 1e-15);
        assert!("1:0.5:3".parse::<RateGrid>().is_err());
        assert!("0:1:1".parse::<RateGrid>().is_err());
        assert!("0:1".parse::<RateGrid>().is_err());
    }

    #[test]
    fn metric_parsing() {
        assert_eq!(
            "matched".parse::<MetricSpec>().unwrap(),
            MetricSpec::Matched
        );
        assert_eq!(
            "hamming:0.1".parse::<MetricSpec>().unwrap(),
            MetricSpec::Hamming(0.1)
        );
        assert!("hamming:x".parse::<MetricSpec>().is_err());
    }
}
