//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. List
//! values are comma separated. Keys are matched case-insensitively against
//! the canonical names below.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qwire_core::lattice::Boundary;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: expected `key = value`")]
    Syntax { origin: String, line: usize },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("duplicate key `{key}`")]
    DuplicateKey { key: String },
    #[error("missing required key `experiment`")]
    MissingExperiment,
    #[error("missing required key `{key}` for experiment {experiment}")]
    MissingKey { key: String, experiment: Experiment },
    #[error("key `{key}`: expected {expected}, found `{found}`")]
    TypeMismatch { key: String, expected: &'static str, found: String },
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Dispersion,
    Packet,
    Transit,
    Broadening,
    OverlapDecay,
    ErrorBudget,
    MinWaitSweep,
    RateFit,
    OracleProtocol,
    OracleBounds,
    TjCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::Dispersion,
        Experiment::Packet,
        Experiment::Transit,
        Experiment::Broadening,
        Experiment::OverlapDecay,
        Experiment::ErrorBudget,
        Experiment::MinWaitSweep,
        Experiment::RateFit,
        Experiment::OracleProtocol,
        Experiment::OracleBounds,
        Experiment::TjCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dispersion => "Dispersion",
            Experiment::Packet => "Packet",
            Experiment::Transit => "Transit",
            Experiment::Broadening => "Broadening",
            Experiment::OverlapDecay => "OverlapDecay",
            Experiment::ErrorBudget => "ErrorBudget",
            Experiment::MinWaitSweep => "MinWaitSweep",
            Experiment::RateFit => "RateFit",
            Experiment::OracleProtocol => "OracleProtocol",
            Experiment::OracleBounds => "OracleBounds",
            Experiment::TjCheck => "TJCheck",
        }
    }

    /// Whether the experiment needs the carrier modes `N/4` and `3N/4`.
    pub fn needs_quarter_modes(self) -> bool {
        matches!(
            self,
            Experiment::Packet
                | Experiment::Transit
                | Experiment::Broadening
                | Experiment::OverlapDecay
                | Experiment::ErrorBudget
                | Experiment::MinWaitSweep
                | Experiment::RateFit
        )
    }

    /// Whether `N` may list several sizes.
    pub fn sweeps_sizes(self) -> bool {
        matches!(
            self,
            Experiment::Broadening | Experiment::OverlapDecay | Experiment::MinWaitSweep | Experiment::RateFit
        )
    }

    fn requires_signals(self) -> bool {
        matches!(self, Experiment::ErrorBudget | Experiment::OracleProtocol | Experiment::OracleBounds)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_lowercase();
        Experiment::ALL
            .into_iter()
            .find(|e| e.name().to_lowercase() == folded)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

const KEYS: [&str; 17] = [
    "experiment", "N", "M", "c", "kappa", "nu", "epsilon", "t", "s", "J", "seed", "out", "sigma", "x1", "boundary",
    "format", "k0",
];

fn canonical(key: &str) -> Result<&'static str, ConfigError> {
    KEYS.iter()
        .find(|k| k.eq_ignore_ascii_case(key))
        .copied()
        .ok_or_else(|| ConfigError::UnknownKey { key: key.to_string() })
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub n: Vec<usize>,
    pub m: usize,
    pub c: f64,
    pub kappa: f64,
    pub nu: f64,
    pub epsilon: f64,
    /// Times; meaning depends on the experiment. Empty means "use the
    /// experiment's natural time".
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub sigma: Vec<f64>,
    pub x1: Vec<f64>,
    pub j: f64,
    pub seed: u64,
    pub boundary: Boundary,
    /// Carrier mode override; 0 selects the default.
    pub k0: usize,
    pub out: Option<String>,
    pub format: Option<String>,
    /// Keys that were filled from defaults.
    pub defaults_applied: Vec<String>,
}

impl RunConfig {
    /// The single ring size of a non-sweep experiment.
    pub fn size(&self) -> usize {
        self.n[0]
    }

    /// Effective configuration as ordered `(key, value)` pairs.
    pub fn echo(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let mut out = vec![
            ("experiment".to_string(), self.experiment.name().to_string()),
            ("N".into(), self.n.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")),
            ("M".into(), self.m.to_string()),
            ("c".into(), format!("{}", self.c)),
            ("kappa".into(), format!("{}", self.kappa)),
            ("nu".into(), format!("{}", self.nu)),
            ("epsilon".into(), format!("{}", self.epsilon)),
            ("t".into(), list(&self.t)),
            ("s".into(), list(&self.s)),
            ("sigma".into(), list(&self.sigma)),
            ("x1".into(), list(&self.x1)),
            ("J".into(), format!("{}", self.j)),
            ("seed".into(), self.seed.to_string()),
            ("boundary".into(), match self.boundary {
                Boundary::Ring => "ring".into(),
                Boundary::Chain => "chain".into(),
            }),
            ("k0".into(), self.k0.to_string()),
        ];
        if let Some(path) = &self.out {
            out.push(("out".into(), path.clone()));
        }
        out
    }
}

/// Raw `(key, value)` pairs in file order, keys canonicalized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pairs: Vec<(&'static str, String)>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { origin: origin.to_string(), line: i + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { origin: origin.to_string(), line: i + 1 });
            }
            raw.insert(key, value.trim())?;
        }
        Ok(raw)
    }

    pub fn insert(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = canonical(key)?;
        if self.pairs.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { key: key.to_string() });
        }
        self.pairs.push((key, value.to_string()));
        Ok(())
    }

    /// Sets `key`, replacing an existing value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = canonical(key)?;
        self.pairs.retain(|(k, _)| *k != key);
        self.pairs.push((key, value.to_string()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }

    /// Applies defaults and validates against the experiment.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let experiment = match self.get("experiment") {
            Some(v) => v.parse::<Experiment>().map_err(|_| ConfigError::TypeMismatch {
                key: "experiment".into(),
                expected: "an experiment name",
                found: v.to_string(),
            })?,
            None => return Err(ConfigError::MissingExperiment),
        };
        let mut defaults = Vec::new();

        let n: Vec<usize> = match self.get("N") {
            Some(v) => parse_list(v, "N", "positive integers")?,
            None => return Err(ConfigError::MissingKey { key: "N".into(), experiment }),
        };
        if n.is_empty() || n.iter().any(|&x| x < 3) {
            return Err(ConfigError::Invalid { key: "N".into(), message: "sizes must be at least 3".into() });
        }
        if n.len() > 1 && !experiment.sweeps_sizes() {
            return Err(ConfigError::TypeMismatch {
                key: "N".into(),
                expected: "a single integer",
                found: self.get("N").unwrap_or_default().to_string(),
            });
        }
        if experiment.needs_quarter_modes() {
            if let Some(bad) = n.iter().find(|&&x| x % 4 != 0) {
                return Err(ConfigError::Invalid {
                    key: "N".into(),
                    message: format!("{bad} is not divisible by 4"),
                });
            }
        }

        let m = match self.get("M") {
            Some(v) => parse_scalar::<usize>(v, "M", "a positive integer")?,
            None if experiment.requires_signals() => {
                return Err(ConfigError::MissingKey { key: "M".into(), experiment })
            }
            None => {
                defaults.push("M".to_string());
                4
            }
        };
        if m == 0 {
            return Err(ConfigError::Invalid { key: "M".into(), message: "must be positive".into() });
        }

        let mut float = |key: &str, default: f64| -> Result<f64, ConfigError> {
            match self.get(key) {
                Some(v) => parse_scalar::<f64>(v, key, "a number"),
                None => {
                    defaults.push(key.to_string());
                    Ok(default)
                }
            }
        };
        let c = float("c", 9.0)?;
        let kappa = float("kappa", 1.0)?;
        let nu = float("nu", 2.0)?;
        let epsilon = float("epsilon", 0.01)?;
        let j = float("J", 1.0)?;
        for (key, v) in [("c", c), ("kappa", kappa), ("nu", nu)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::Invalid { key: key.into(), message: format!("must be positive, got {v}") });
            }
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ConfigError::Invalid { key: "epsilon".into(), message: format!("must lie in (0, 1), got {epsilon}") });
        }

        let mut list = |key: &str, default: &[f64]| -> Result<Vec<f64>, ConfigError> {
            match self.get(key) {
                Some(v) => parse_list::<f64>(v, key, "numbers"),
                None => {
                    if !default.is_empty() {
                        defaults.push(key.to_string());
                    }
                    Ok(default.to_vec())
                }
            }
        };
        let t_default: &[f64] = match experiment {
            Experiment::OracleBounds => &[0.0, 0.5, 1.0, 1.5, 2.0],
            Experiment::TjCheck => &[1.0, 2.0, 3.0],
            _ => &[],
        };
        let t = list("t", t_default)?;
        let s = list("s", if experiment == Experiment::TjCheck { &[0.1, 0.5, 1.0] } else { &[] })?;
        let sigma = list(
            "sigma",
            match experiment {
                Experiment::OracleBounds => &[0.8, 1.2, 1.8, 2.5],
                Experiment::TjCheck => &[1.0],
                _ => &[],
            },
        )?;
        let x1 = list(
            "x1",
            if experiment == Experiment::OverlapDecay { &[1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0] } else { &[] },
        )?;
        if t.iter().chain(&s).chain(&x1).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ConfigError::Invalid { key: "t/s/x1".into(), message: "times must be non-negative".into() });
        }
        if sigma.iter().any(|v| !(*v > 0.0)) {
            return Err(ConfigError::Invalid { key: "sigma".into(), message: "widths must be positive".into() });
        }

        let seed = match self.get("seed") {
            Some(v) => parse_scalar::<u64>(v, "seed", "a non-negative integer")?,
            None => {
                defaults.push("seed".to_string());
                0
            }
        };
        let boundary = match self.get("boundary").map(|b| b.to_ascii_lowercase()) {
            None => {
                defaults.push("boundary".to_string());
                Boundary::Ring
            }
            Some(b) if b == "ring" => Boundary::Ring,
            Some(b) if b == "chain" => Boundary::Chain,
            Some(b) => {
                return Err(ConfigError::TypeMismatch { key: "boundary".into(), expected: "ring or chain", found: b })
            }
        };
        if boundary == Boundary::Chain && experiment != Experiment::Dispersion {
            return Err(ConfigError::Invalid {
                key: "boundary".into(),
                message: format!("{experiment} runs on the ring only"),
            });
        }
        let k0 = match self.get("k0") {
            Some(v) => parse_scalar::<usize>(v, "k0", "a mode index")?,
            None => 0,
        };
        let format = self.get("format").map(|f| f.to_ascii_lowercase());
        if let Some(f) = &format {
            if f != "csv" && f != "json" {
                return Err(ConfigError::TypeMismatch { key: "format".into(), expected: "csv or json", found: f.clone() });
            }
        }

        Ok(RunConfig {
            experiment,
            n,
            m,
            c,
            kappa,
            nu,
            epsilon,
            t,
            s,
            sigma,
            x1,
            j,
            seed,
            boundary,
            k0,
            out: self.get("out").map(str::to_string),
            format,
            defaults_applied: defaults,
        })
    }
}

fn parse_scalar<T: FromStr>(value: &str, key: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse::<T>().map_err(|_| ConfigError::TypeMismatch {
        key: key.to_string(),
        expected,
        found: value.to_string(),
    })
}

fn parse_list<T: FromStr>(value: &str, key: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|item| parse_scalar(item, key, expected))
        .collect()
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    load_raw(path)?.resolve()
}

pub fn load_raw(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    RawConfig::parse(&text, &path.display().to_string())
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    RawConfig::parse(text, "<config>")?.resolve()
}
