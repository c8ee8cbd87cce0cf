//! Plain `key = value` run configuration.
//!
//! Keys are grouped by a dotted prefix (`domain.`, `cloud.`, `scenario.`,
//! `output.`). `#` starts a comment. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cloud::Grading;
use crate::error::{Error, Result};
use crate::geometry::{DomainModel, SpectralParams, DEFAULT_BETA0};

/// Keys accepted under `scenario.`.
pub const SCENARIO_KEYS: &[&str] = &[
    "alpha",
    "axis",
    "b",
    "check",
    "eps",
    "iterations",
    "lambda",
    "lattice",
    "location",
    "measure",
    "mode",
    "mu_grid",
    "n_probe",
    "p",
    "p_grid",
    "problem",
    "s",
    "samples",
    "set",
    "sigma",
    "sigma_grid",
    "theta",
    "threshold",
    "triples",
    "variant",
    "x",
    "y",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainBlock {
    pub n: usize,
    pub k: usize,
    pub mu: f64,
    pub beta0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudBlock {
    pub resolution: usize,
    pub grading: Grading,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub domain: DomainBlock,
    pub cloud: CloudBlock,
    /// Subcommand parameters, validated by the consumer.
    pub scenario: BTreeMap<String, String>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: DomainBlock { n: 3, k: 0, mu: 2.0, beta0: DEFAULT_BETA0 },
            cloud: CloudBlock { resolution: 4000, grading: Grading::default(), seed: 0 },
            scenario: BTreeMap::new(),
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let key = k.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", no + 1)));
            }
            cfg.set(key, v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one key; the same rules as a config line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (group, name) = key.split_once('.').ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
        match (group, name) {
            ("domain", "N" | "n") => self.domain.n = parse_num(key, value)?,
            ("domain", "k") => self.domain.k = parse_num(key, value)?,
            ("domain", "mu") => self.domain.mu = parse_num(key, value)?,
            ("domain", "beta0") => self.domain.beta0 = parse_num(key, value)?,
            ("cloud", "resolution") => self.cloud.resolution = parse_num(key, value)?,
            ("cloud", "q") => self.cloud.grading.q = parse_num(key, value)?,
            ("cloud", "tube") => self.cloud.grading.tube = parse_num(key, value)?,
            ("cloud", "tube_depth") => self.cloud.grading.tube_depth = parse_num(key, value)?,
            ("cloud", "sigma_fraction") => self.cloud.grading.sigma_fraction = parse_num(key, value)?,
            ("cloud", "seed") => self.cloud.seed = parse_num(key, value)?,
            ("output", "dir") => self.out = Some(PathBuf::from(value)),
            ("scenario", s) if SCENARIO_KEYS.contains(&s) => {
                self.scenario.insert(s.to_string(), value.to_string());
            }
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Check the domain and cloud blocks.
    pub fn validate(&self) -> Result<()> {
        self.domain_model()?;
        self.params()?;
        self.cloud.grading.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.cloud.resolution < 1000 {
            return Err(Error::Config(format!(
                "cloud.resolution must be at least 1000, got {}",
                self.cloud.resolution
            )));
        }
        Ok(())
    }

    pub fn domain_model(&self) -> Result<DomainModel> {
        DomainModel::new(self.domain.n, self.domain.k, self.domain.beta0).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<SpectralParams> {
        SpectralParams::new(&self.domain_model()?, self.domain.mu).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.scenario.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| parse_num(key, v))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |v| parse_num(key, v))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn point(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_point(key, v)).transpose()
    }

    pub fn grid(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_grid(key, v)).transpose()
    }
}

pub fn parse_point(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

/// `a,b,c`, `lo:hi:n` (linear) or `log:lo:hi:n` (geometric).
pub fn parse_grid(key: &str, v: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    let spaced = |lo: f64, hi: f64, n: usize, geometric: bool| -> Result<Vec<f64>> {
        if n == 0 || (geometric && !(lo > 0.0 && hi > 0.0)) {
            return Err(Error::Config(format!("{key}: bad grid {v:?}")));
        }
        Ok((0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                let v = if geometric { (lo.ln() + t * (hi / lo).ln()).exp() } else { lo + t * (hi - lo) };
                // trim representation noise such as 1.5999999999999999
                format!("{v:.12e}").parse::<f64>().unwrap_or(v)
            })
            .collect())
    };
    match parts.as_slice() {
        ["log", lo, hi, n] => spaced(parse_num(key, lo)?, parse_num(key, hi)?, parse_num(key, n)?, true),
        [lo, hi, n] => spaced(parse_num(key, lo)?, parse_num(key, hi)?, parse_num(key, n)?, false),
        [list] => parse_point(key, list),
        _ => Err(Error::Config(format!("{key}: bad grid {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_comments() {
        let c = RunConfig::parse("domain.N = 4 # dimension\ndomain.k=1\n\ncloud.seed = 7\nscenario.p = 2.5\n").unwrap();
        assert_eq!(c.domain.n, 4);
        assert_eq!(c.domain.k, 1);
        assert_eq!(c.cloud.seed, 7);
        assert_eq!(c.f64_or("p", 0.0).unwrap(), 2.5);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::parse("domain.x = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("scenario.bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("p = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("domain.k = 1\ndomain.k = 0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("domain.k"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("domain.k = one"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_catches_bad_domains() {
        assert!(RunConfig::parse("domain.N = 3\ndomain.k = 3").unwrap().validate().is_err());
        assert!(RunConfig::parse("domain.mu = 9").unwrap().validate().is_err());
        assert!(RunConfig::parse("cloud.resolution = 10").unwrap().validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("g", "1,2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("g", "1:2:3").unwrap(), vec![1.0, 1.5, 2.0]);
        let g = parse_grid("g", "log:1e-2:1:3").unwrap();
        assert!((g[1] - 0.1).abs() < 1e-12);
        assert!(parse_grid("g", "log:0:1:3").is_err());
        assert!(parse_grid("g", "1:2").is_err());
    }
}
