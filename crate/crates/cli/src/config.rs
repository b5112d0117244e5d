//! Plain-text `key=value` run configuration.
//!
//! Keys mirror the long command-line flags (`max-iters`, `alpha`, ...).
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! out-of-range values are rejected when the file is loaded; flags given on
//! the command line take precedence over the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nrsfm_core::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Check {
    /// Integer in `[min, max]`.
    Count(u64, u64),
    /// Finite real `>= 0`, or `> 0` when strict.
    Real { strict: bool },
    /// Real in `[0, 1]`.
    Fraction,
    Choice(&'static [&'static str]),
    /// `ROWSxCOLS`.
    Grid,
    Text,
}

const KEYS: &[(&str, Check)] = &[
    // synth
    ("frames", Check::Count(1, 1 << 24)),
    ("points", Check::Count(4, 1 << 28)),
    ("schedule", Check::Choice(&["a", "b"])),
    ("seed", Check::Count(0, u64::MAX)),
    // dcmdr
    ("k", Check::Count(1, 1 << 16)),
    ("alpha", Check::Real { strict: true }),
    ("beta", Check::Real { strict: false }),
    ("lambda", Check::Real { strict: false }),
    ("rho", Check::Real { strict: false }),
    ("epsilon", Check::Real { strict: true }),
    ("max-iters", Check::Count(0, 1 << 20)),
    ("rel-tol", Check::Real { strict: false }),
    ("grid", Check::Grid),
    // dsp-build
    ("mu", Check::Real { strict: false }),
    // dspr / compress
    ("seeds", Check::Count(1, 1 << 20)),
    ("gamma", Check::Real { strict: false }),
    ("max-alternations", Check::Count(1, 1 << 20)),
    // perturb / knockout
    ("magnitude", Check::Real { strict: false }),
    ("ratio", Check::Fraction),
    ("fill", Check::Choice(&["frozen", "zeros"])),
    // paths
    ("tracks", Check::Text),
    ("shapes", Check::Text),
    ("poses", Check::Text),
    ("dsp", Check::Text),
    ("out", Check::Text),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn check(key: &str, value: &str, rule: Check) -> Result<()> {
    let bad = |why: &str| Err(Error::InvalidInput(format!("config key {key}: {why}, got {value:?}")));
    match rule {
        Check::Count(min, max) => match value.parse::<u64>() {
            Ok(v) if (min..=max).contains(&v) => Ok(()),
            _ => bad(&format!("expected an integer in [{min}, {max}]")),
        },
        Check::Real { strict } => match value.parse::<f64>() {
            Ok(v) if v.is_finite() && (v > 0.0 || (!strict && v == 0.0)) => Ok(()),
            _ if strict => bad("expected a positive number"),
            _ => bad("expected a nonnegative number"),
        },
        Check::Fraction => match value.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) => Ok(()),
            _ => bad("expected a number in [0, 1]"),
        },
        Check::Choice(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                bad(&format!("expected one of {}", options.join(", ")))
            }
        }
        Check::Grid => parse_grid(value).map(|_| ()),
        Check::Text => {
            if value.is_empty() {
                bad("expected a non-empty value")
            } else {
                Ok(())
            }
        }
    }
}

/// Parses `ROWSxCOLS`.
pub fn parse_grid(value: &str) -> Result<(usize, usize)> {
    let parsed = value
        .split_once('x')
        .and_then(|(r, c)| Some((r.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)));
    match parsed {
        Some((r, c)) if r > 0 && c > 0 => Ok((r, c)),
        _ => Err(Error::InvalidInput(format!("grid must look like ROWSxCOLS, got {value:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let rule = KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, r)| *r)
                .ok_or_else(|| Error::InvalidInput(format!("line {}: unknown key {key:?}", lineno + 1)))?;
            check(key, value, rule)?;
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::InvalidInput(format!("line {}: key {key:?} given twice", lineno + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, else the config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> T {
        flag.or_else(|| self.get(key).and_then(|v| v.parse().ok())).unwrap_or(default)
    }

    /// Like [`pick`](Self::pick) without a default.
    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Option<T> {
        flag.or_else(|| self.get(key).and_then(|v| v.parse().ok()))
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
