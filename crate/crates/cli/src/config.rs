//! Flat key-value configuration with CLI overrides.
//!
//! Precedence: command-line flag, then config-file key, then default.
//! Every output document embeds the fully resolved configuration, so
//! re-running a command with the same file reproduces the outputs
//! bit-identically.

use serde::{Deserialize, Serialize};
use sigma_mlmc::mlmc::{WeightFamily, WeightKind};
use sigma_mlmc::model::ModelParams;
use sigma_mlmc::noise::Permutation;
use sigma_mlmc::Error;
use std::path::PathBuf;

/// Keys accepted in the config file. All optional; unknown keys are
/// rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub payoff: Option<String>,
    pub payoff_const: Option<f64>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub q: Option<usize>,
    pub alpha: Option<f64>,
    pub weights: Option<String>,
    pub a0: Option<f64>,
    pub kappa: Option<f64>,
    pub replicates: Option<u64>,
    pub p: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub sigma: Option<String>,
    pub perms: Option<Vec<String>>,
    pub sup_functional: Option<bool>,
    pub x0: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub sigma_coeff: Option<f64>,
    pub drift: Option<Vec<f64>>,
    pub gmat: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<FileConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("invalid config {}: {e}", path.display())))
    }
}

/// The fully resolved settings of one invocation, echoed into every
/// output document.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payoff: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payoff_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perms: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_functional: Option<bool>,
    pub model_params: ModelParams,
}

/// Parse an n-grid specification: either a comma list `8,16,32` or an
/// exponent range `2^4..2^12` (all powers of the base in the range).
pub fn parse_n_grid(text: &str) -> Result<Vec<usize>, Error> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let parse_pow = |s: &str| -> Result<(usize, u32), Error> {
            let (base, exp) = s
                .trim()
                .split_once('^')
                .ok_or_else(|| Error::invalid(format!("expected base^exp in n-grid, got {s:?}")))?;
            Ok((
                base.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad base in n-grid: {s:?}")))?,
                exp.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad exponent in n-grid: {s:?}")))?,
            ))
        };
        let (base_lo, exp_lo) = parse_pow(lo)?;
        let (base_hi, exp_hi) = parse_pow(hi)?;
        if base_lo != base_hi || exp_lo > exp_hi {
            return Err(Error::invalid(format!("inconsistent n-grid range {text:?}")));
        }
        return Ok((exp_lo..=exp_hi)
            .map(|e| base_lo.pow(e))
            .collect());
    }
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad n-grid entry {tok:?}")))
        })
        .collect()
}

pub fn parse_weight_family(name: &str, a0: f64) -> Result<WeightFamily, Error> {
    WeightFamily::with_a0(WeightKind::parse(name)?, a0)
}

/// Parse a permutation given as 1-based images, e.g. "3,2,1".
pub fn parse_permutation(text: &str) -> Result<Permutation, Error> {
    let images: Vec<usize> = text
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad permutation entry {tok:?}")))
        })
        .collect::<Result<_, Error>>()?;
    Permutation::from_one_based(&images)
}

/// Check that every resolution is a positive power of m.
pub fn validate_power_of_m(n_grid: &[usize], m: usize) -> Result<(), Error> {
    for &n in n_grid {
        let mut v = n;
        while v > 1 && v % m == 0 {
            v /= m;
        }
        if v != 1 {
            return Err(Error::invalid(format!(
                "resolution {n} is not a positive power of m = {m}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_grid_forms() {
        assert_eq!(parse_n_grid("8,16,32").unwrap(), vec![8, 16, 32]);
        assert_eq!(
            parse_n_grid("2^4..2^8").unwrap(),
            vec![16, 32, 64, 128, 256]
        );
        assert!(parse_n_grid("2^4..3^8").is_err());
        assert!(parse_n_grid("abc").is_err());
    }

    #[test]
    fn power_validation() {
        assert!(validate_power_of_m(&[8, 16, 64], 2).is_ok());
        assert!(validate_power_of_m(&[10], 2).is_err());
        assert!(validate_power_of_m(&[9, 27], 3).is_ok());
    }

    #[test]
    fn permutation_parsing() {
        assert_eq!(
            parse_permutation("3,2,1").unwrap().one_based_images(),
            vec![3, 2, 1]
        );
        assert!(parse_permutation("1,1,2").is_err());
    }
}
