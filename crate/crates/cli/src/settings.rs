//! Flag resolution: command line wins over the config file, the config file
//! wins over defaults, and CROOKED_SEED wins over everything for the seed.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use subfeistel::feistel::ConstructionParams;
use subfeistel::oracle::SubversionProgram;
use subfeistel::sim::IdealBackend;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Assertion(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Assertion(m) => write!(f, "assertion failure: {m}"),
        }
    }
}

pub fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

const KNOWN_KEYS: &[&str] = &[
    "n",
    "ell-profile",
    "eps",
    "subverter",
    "trials",
    "seed",
    "budget",
    "out",
    "format",
    "backend",
    "distinguisher",
    "game",
    "ops",
    "walks",
    "queries",
    "query-limit",
    "workers",
];

/// key=value lines; '#' starts a comment, blank lines are skipped.
pub struct ConfigFile {
    map: HashMap<String, String>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        ConfigFile { map: HashMap::new() }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                ));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return config_err(format!(
                    "{}:{}: unknown setting '{key}'",
                    path.display(),
                    lineno + 1
                ));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { map })
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Config(format!("setting '{key}': {e}"))),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }
}

/// Flag if given, else config value, else default.
pub fn pick<T: FromStr>(
    flag: Option<T>,
    cfg: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.parsed::<T>(key)?.unwrap_or(default)),
    }
}

pub fn pick_string(flag: Option<String>, cfg: &ConfigFile, key: &str, default: &str) -> String {
    flag.unwrap_or_else(|| cfg.raw(key).unwrap_or(default).to_string())
}

pub fn pick_out(flag: Option<PathBuf>, cfg: &ConfigFile) -> Option<PathBuf> {
    flag.or_else(|| cfg.raw("out").map(PathBuf::from))
}

/// CROOKED_SEED, when set, replaces whatever the flags and file produced.
pub fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile, default: u64) -> Result<u64, CliError> {
    let base = pick(flag, cfg, "seed", default)?;
    match std::env::var("CROOKED_SEED") {
        Err(_) => Ok(base),
        Ok(v) => v
            .parse::<u64>()
            .map_err(|e| CliError::Config(format!("CROOKED_SEED: {e}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => config_err(format!("format must be json or csv, got '{other}'")),
        }
    }
}

/// "8n", "eps", or "custom:ell,w,u_lo,u_hi,mid_lo,mid_hi".
pub fn build_params(n: usize, profile: &str, eps: f64) -> Result<ConstructionParams, CliError> {
    let params = match profile {
        "8n" => ConstructionParams::profile_8n(n),
        "eps" => ConstructionParams::profile_eps(n, eps),
        other => match other.strip_prefix("custom:") {
            None => {
                return config_err(format!(
                    "ell-profile must be 8n, eps, or custom:..., got '{other}'"
                ))
            }
            Some(list) => {
                let nums: Vec<usize> = list
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<usize>()
                            .map_err(|e| CliError::Config(format!("custom profile: {e}")))
                    })
                    .collect::<Result<_, _>>()?;
                if nums.len() != 6 {
                    return config_err(format!(
                        "custom profile needs 6 numbers (ell,w,u_lo,u_hi,mid_lo,mid_hi), got {}",
                        nums.len()
                    ));
                }
                ConstructionParams::custom(n, nums[0], nums[1], nums[2], nums[3], nums[4], nums[5])
            }
        },
    };
    params.map_err(|e| CliError::Config(e.to_string()))
}

pub fn build_program(spec: &str, n: usize) -> Result<SubversionProgram, CliError> {
    SubversionProgram::parse(spec, n).map_err(|e| CliError::Config(e.to_string()))
}

pub fn parse_backend(s: &str) -> Result<IdealBackend, CliError> {
    match s {
        "perm" => Ok(IdealBackend::Permutation),
        "rf" => Ok(IdealBackend::RandomFunction),
        other => config_err(format!("backend must be perm or rf, got '{other}'")),
    }
}
