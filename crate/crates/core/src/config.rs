//! Flat `key = value` experiment files.
//!
//! ```text
//! # comment
//! dt = [3e-3, 7e-3, 10e-3]
//! n = 3
//! receptors = [1, 3, 5, 7]
//! snr = off
//! ```
//!
//! Any value written as a bracketed list is swept; the grid is the cartesian
//! product of all lists, with the first listed key varying slowest. Keys that
//! are absent take the defaults of [`ExperimentConfig::default`].
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `q12_per_lumen` | 5000 | C1 -> O2 rate per lumen, 1/(s lumen) |
//! | `q23` | 50 | O2 -> D3 rate, 1/s |
//! | `q31` | 17 | D3 -> C1 rate, 1/s |
//! | `x_on` | 1 | intensity of a '1' bit, lumens |
//! | `dt` | 1e-6 | observation window, s |
//! | `n` | 3 | observations per bit |
//! | `receptors` | 1 | number of receptors |
//! | `prior` | 0.5 | p(x = 1) |
//! | `mode` | exact | `exact` or `euler` |
//! | `tie` | coin | `coin` or `erasure` |
//! | `init` | steady_avg | `steady_avg`, `steady_off`, `uniform`, `custom(a;b;c)` |
//! | `readout` | count | `count` or `binary` |
//! | `snr` | off | `off` or SNR (lambda = snr^2) |
//! | `lambda` | off | `off` or mean photons per window |
//! | `carryover` | false | keep receptor state across bits |
//! | `trials` | 100000 | Monte Carlo trials |
//! | `seed` | 1 | master seed |

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::analysis::{ExperimentConfig, Noise, SweepPoint};
use crate::detector::{Readout, TieRule};
use crate::ensemble::InitialMode;
use crate::kinetics::Discretization;

pub const KEYS: &[&str] = &[
    "q12_per_lumen",
    "q23",
    "q31",
    "x_on",
    "dt",
    "n",
    "receptors",
    "prior",
    "mode",
    "tie",
    "init",
    "readout",
    "snr",
    "lambda",
    "carryover",
    "trials",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line} (key `{key}`): {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },
    #[error("validation error (key `{key}`): {message}")]
    Validation { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { key, .. } | ConfigError::Validation { key, .. } => Some(key),
            ConfigError::Io { .. } => None,
        }
    }
}

/// One parsed entry: a scalar or a swept list of raw values.
#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    line: usize,
    values: Vec<String>,
    swept: bool,
}

/// The expanded experiment grid of a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigGrid {
    pub points: Vec<SweepPoint>,
    /// Keys given as lists, in file order.
    pub swept_keys: Vec<String>,
}

impl ConfigGrid {
    pub fn is_single(&self) -> bool {
        self.points.len() == 1
    }

    /// Applies command-line overrides to every point.
    pub fn override_run(&mut self, seed: Option<u64>, trials: Option<u64>) -> Result<(), ConfigError> {
        for p in &mut self.points {
            if let Some(seed) = seed {
                p.config.seed = seed;
            }
            if let Some(trials) = trials {
                if trials == 0 {
                    return Err(ConfigError::Validation {
                        key: "trials".into(),
                        message: "at least one trial is required".into(),
                    });
                }
                p.config.trials = trials;
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ConfigGrid, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ConfigGrid, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Parse {
                line,
                key: content.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let key = key.trim().to_ascii_lowercase();
        let perr = |message: String| ConfigError::Parse {
            line,
            key: key.clone(),
            message,
        };
        if !KEYS.contains(&key.as_str()) {
            return Err(perr(format!("unknown key (known keys: {})", KEYS.join(", "))));
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(perr("key given twice".into()));
        }
        let value = value.trim();
        if value.is_empty() {
            return Err(perr("missing value".into()));
        }
        let (values, swept) = if let Some(inner) = value.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| perr("unterminated list".into()))?;
            let items = split_top_level(inner);
            if items.iter().any(|s| s.is_empty()) {
                return Err(perr("empty list element".into()));
            }
            (items, true)
        } else {
            (vec![value.to_string()], false)
        };
        entries.push(Entry {
            key,
            line,
            values,
            swept,
        });
    }
    if entries.iter().any(|e| e.key == "snr") && entries.iter().any(|e| e.key == "lambda") {
        let line = entries.iter().find(|e| e.key == "lambda").map_or(0, |e| e.line);
        return Err(ConfigError::Parse {
            line,
            key: "lambda".into(),
            message: "give either `snr` or `lambda`, not both".into(),
        });
    }

    // validate every value once so errors report the source line
    for e in &entries {
        for v in &e.values {
            let mut scratch = ExperimentConfig::default();
            apply(&mut scratch, &e.key, v).map_err(|message| ConfigError::Parse {
                line: e.line,
                key: e.key.clone(),
                message,
            })?;
        }
    }

    let mut points = vec![SweepPoint::single(ExperimentConfig::default())];
    for e in &entries {
        let mut next = Vec::with_capacity(points.len() * e.values.len());
        for p in &points {
            for v in &e.values {
                let mut q = p.clone();
                apply(&mut q.config, &e.key, v).expect("validated above");
                if e.swept {
                    q.swept.push((e.key.clone(), v.clone()));
                }
                next.push(q);
            }
        }
        points = next;
    }
    for p in &points {
        p.config.validate().map_err(|err| match err {
            crate::Error::InvalidParameter { key, message } => ConfigError::Validation { key, message },
            other => ConfigError::Validation {
                key: "config".into(),
                message: other.to_string(),
            },
        })?;
    }
    Ok(ConfigGrid {
        points,
        swept_keys: entries.iter().filter(|e| e.swept).map(|e| e.key.clone()).collect(),
    })
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a)
}

/// Splits on commas outside parentheses.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    out.push(cur.trim().to_string());
    out
}

fn parse_f64(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"))
}

fn parse_u64(v: &str) -> Result<u64, String> {
    v.replace('_', "")
        .parse::<u64>()
        .or_else(|_| {
            // allow 1e5-style integers
            let f: f64 = v.parse().map_err(|_| ())?;
            if f >= 0.0 && f.fract() == 0.0 && f < 1.8e19 {
                Ok(f as u64)
            } else {
                Err(())
            }
        })
        .map_err(|_| format!("`{v}` is not a nonnegative integer"))
}

fn parse_noise(v: &str, snr: bool) -> Result<Noise, String> {
    if v.eq_ignore_ascii_case("off") || v.eq_ignore_ascii_case("inf") {
        return Ok(Noise::Off);
    }
    let x = parse_f64(v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(format!("`{v}` must be nonnegative"));
    }
    let lambda = if snr { crate::photon_noise::lambda_of_snr(x) } else { x };
    Ok(Noise::Poisson { lambda })
}

pub fn parse_init(v: &str) -> Result<InitialMode, String> {
    let lower = v.trim().to_ascii_lowercase();
    match lower.as_str() {
        "steady_avg" => return Ok(InitialMode::SteadyAverage),
        "steady_off" => return Ok(InitialMode::SteadyOff),
        "uniform" => return Ok(InitialMode::uniform()),
        _ => {}
    }
    let inner = lower
        .strip_prefix("custom(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("unknown init `{v}` (expected steady_avg|steady_off|uniform|custom(a;b;c))"))?;
    let values = inner
        .split([';', ','])
        .map(|s| parse_f64(s.trim()))
        .collect::<Result<Vec<f64>, String>>()?;
    if values.len() != 3 {
        return Err(format!("custom init needs 3 probabilities, got {}", values.len()));
    }
    Ok(InitialMode::Custom(values))
}

fn apply(cfg: &mut ExperimentConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "q12_per_lumen" => cfg.rates.q12_per_lumen = parse_f64(v)?,
        "q23" => cfg.rates.q23 = parse_f64(v)?,
        "q31" => cfg.rates.q31 = parse_f64(v)?,
        "x_on" => cfg.x_on = parse_f64(v)?,
        "dt" => cfg.dt = parse_f64(v)?,
        "n" => cfg.n_obs = parse_u64(v)? as usize,
        "receptors" => {
            cfg.receptors = u32::try_from(parse_u64(v)?).map_err(|_| format!("`{v}` is too large"))?
        }
        "prior" => cfg.prior = parse_f64(v)?,
        "mode" => cfg.mode = v.parse::<Discretization>()?,
        "tie" => cfg.tie = v.parse::<TieRule>()?,
        "init" => cfg.init = parse_init(v)?,
        "readout" => cfg.readout = v.parse::<Readout>()?,
        "snr" => cfg.noise = parse_noise(v, true)?,
        "lambda" => cfg.noise = parse_noise(v, false)?,
        "carryover" => {
            cfg.carryover = match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => true,
                "false" | "no" | "off" | "0" => false,
                _ => return Err(format!("`{v}` is not a boolean")),
            }
        }
        "trials" => cfg.trials = parse_u64(v)?,
        "seed" => cfg.seed = parse_u64(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Canonical `key = value` rendering of a resolved config, one key per line
/// in [`KEYS`] order. Used for manifests and hashing.
pub struct Canonical<'a>(pub &'a ExperimentConfig);

impl fmt::Display for Canonical<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::report::fmt_num;
        let c = self.0;
        writeln!(f, "q12_per_lumen = {}", fmt_num(c.rates.q12_per_lumen))?;
        writeln!(f, "q23 = {}", fmt_num(c.rates.q23))?;
        writeln!(f, "q31 = {}", fmt_num(c.rates.q31))?;
        writeln!(f, "x_on = {}", fmt_num(c.x_on))?;
        writeln!(f, "dt = {}", fmt_num(c.dt))?;
        writeln!(f, "n = {}", c.n_obs)?;
        writeln!(f, "receptors = {}", c.receptors)?;
        writeln!(f, "prior = {}", fmt_num(c.prior))?;
        writeln!(f, "mode = {}", c.mode)?;
        writeln!(f, "tie = {}", c.tie.as_str())?;
        writeln!(f, "init = {}", c.init)?;
        writeln!(f, "readout = {}", c.readout.as_str())?;
        match c.noise {
            Noise::Off => writeln!(f, "lambda = off")?,
            Noise::Poisson { lambda } => writeln!(f, "lambda = {}", fmt_num(lambda))?,
        }
        writeln!(f, "carryover = {}", c.carryover)?;
        writeln!(f, "trials = {}", c.trials)?;
        write!(f, "seed = {}", c.seed)
    }
}
