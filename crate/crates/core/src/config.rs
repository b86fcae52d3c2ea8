//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{Domain1D, SpatialField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Evolve,
    Pair,
    Asymptotic,
    Stationary,
    Sweep,
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "evolve" => Ok(Self::Evolve),
            "pair" => Ok(Self::Pair),
            "asymptotic" => Ok(Self::Asymptotic),
            "stationary" => Ok(Self::Stationary),
            "sweep" => Ok(Self::Sweep),
            _ => Err(format!(
                "unknown kind '{s}' (expected evolve, pair, asymptotic, stationary or sweep)"
            )),
        }
    }
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Evolve => "evolve",
            Self::Pair => "pair",
            Self::Asymptotic => "asymptotic",
            Self::Stationary => "stationary",
            Self::Sweep => "sweep",
        }
    }
}

/// A named initial datum, optionally scaled: `sine_2`, `0.5*bump`,
/// `random_seeded(7)`, or a path to a file of nodal values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatumSpec {
    pub factor: f64,
    pub source: DatumSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatumSource {
    Sine(u32),
    Bump,
    TwoBumpSigned,
    Random(u64),
    File(PathBuf),
}

impl FromStr for DatumSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (factor, rest) = match s.split_once('*') {
            Some((f, r)) => {
                let f: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad scale factor '{}'", f.trim()))?;
                if !f.is_finite() {
                    return Err(format!("scale factor must be finite, got {f}"));
                }
                (f, r.trim())
            }
            None => (1.0, s),
        };
        let source = if let Some(k) = rest.strip_prefix("sine_") {
            let k: u32 = k.parse().map_err(|_| format!("bad sine mode in '{rest}'"))?;
            if k == 0 {
                return Err("sine mode must be at least 1".into());
            }
            DatumSource::Sine(k)
        } else if rest == "bump" {
            DatumSource::Bump
        } else if rest == "two_bump_signed" {
            DatumSource::TwoBumpSigned
        } else if let Some(inner) = rest
            .strip_prefix("random_seeded(")
            .and_then(|r| r.strip_suffix(')'))
        {
            DatumSource::Random(
                inner
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad seed in '{rest}'"))?,
            )
        } else if rest.is_empty() {
            return Err("empty initial datum".into());
        } else {
            DatumSource::File(PathBuf::from(rest))
        };
        Ok(Self { factor, source })
    }
}

impl std::fmt::Display for DatumSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.factor != 1.0 {
            write!(f, "{}*", self.factor)?;
        }
        match &self.source {
            DatumSource::Sine(k) => write!(f, "sine_{k}"),
            DatumSource::Bump => write!(f, "bump"),
            DatumSource::TwoBumpSigned => write!(f, "two_bump_signed"),
            DatumSource::Random(s) => write!(f, "random_seeded({s})"),
            DatumSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

fn bump(r: f64) -> f64 {
    if r.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

impl DatumSpec {
    /// Samples the datum on the interior nodes of `domain`.
    pub fn sample(&self, domain: &Domain1D) -> Result<SpatialField> {
        let len = domain.length();
        let rel = |x: f64| (x - domain.a) / len;
        let values: Vec<f64> = match &self.source {
            DatumSource::Sine(k) => {
                let k = *k as f64;
                domain
                    .nodes()
                    .iter()
                    .map(|&x| (k * std::f64::consts::PI * rel(x)).sin())
                    .collect()
            }
            DatumSource::Bump => domain
                .nodes()
                .iter()
                .map(|&x| bump((rel(x) - 0.5) / 0.4))
                .collect(),
            DatumSource::TwoBumpSigned => domain
                .nodes()
                .iter()
                .map(|&x| bump((rel(x) - 0.3) / 0.2) - 0.6 * bump((rel(x) - 0.7) / 0.2))
                .collect(),
            DatumSource::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..domain.n).map(|_| rng.random::<f64>()).collect()
            }
            DatumSource::File(path) => read_field_file(path, domain.n)?,
        };
        SpatialField::new(values.into_iter().map(|v| self.factor * v).collect())
    }
}

/// One value per line, or comma-separated rows whose last column is taken.
/// `#` starts a comment; a non-numeric first row is treated as a header.
fn read_field_file(path: &PathBuf, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or(line).trim();
        match last.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("{}: '{last}' is not a number", path.display()),
                })
            }
        }
    }
    if out.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: out.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub theta: f64,
    pub q: f64,
    pub tau: f64,
    pub t_end: f64,
    pub ext_tol: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub initial: DatumSpec,
    /// Second datum for `kind = pair`.
    pub initial_b: DatumSpec,
    pub kind: ExperimentKind,
    pub out: Option<PathBuf>,
    /// Every `stride`-th record is written to `trajectory.csv`.
    pub stride: usize,
    /// Final rescaled time for `kind = asymptotic`.
    pub s_end: f64,
    /// Residual tolerance of the stationary profile.
    pub profile_tol: f64,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    N,
    Q,
    Theta,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tau" => Ok(Self::Tau),
            "n" => Ok(Self::N),
            "q" => Ok(Self::Q),
            "theta" => Ok(Self::Theta),
            _ => Err(format!("sweep axis must be tau, n, q or theta, got '{s}'")),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::N => "n",
            Self::Q => "q",
            Self::Theta => "theta",
        }
    }
}

impl RunConfig {
    /// Defaults for everything except `q` and `theta`.
    pub fn with_params(q: f64, theta: f64) -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            n: 200,
            theta,
            q,
            tau: 1e-3,
            t_end: 1.0,
            ext_tol: 1e-8,
            newton_tol: 1e-11,
            newton_max: 50,
            initial: DatumSpec {
                factor: 1.0,
                source: DatumSource::Sine(1),
            },
            initial_b: DatumSpec {
                factor: 0.5,
                source: DatumSource::Sine(1),
            },
            kind: ExperimentKind::Evolve,
            out: None,
            stride: 1,
            s_end: 8.0,
            profile_tol: 1e-9,
            sweep_axis: None,
            sweep_values: Vec::new(),
        }
    }

    /// Checks cross-field constraints that do not belong to a single line.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Parameter(m));
        if !(self.b > self.a) {
            return err(format!("b must exceed a, got a = {}, b = {}", self.a, self.b));
        }
        if self.kind == ExperimentKind::Sweep && self.sweep_axis.is_none() {
            return err("kind = sweep needs sweep_axis".into());
        }
        if self.kind == ExperimentKind::Sweep && self.sweep_values.is_empty() {
            return err("kind = sweep needs sweep_values".into());
        }
        Ok(())
    }

    /// Renders the configuration in the same format [`parse_config`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "q = {}", self.q);
        let _ = writeln!(s, "theta = {}", self.theta);
        let _ = writeln!(s, "a = {}", self.a);
        let _ = writeln!(s, "b = {}", self.b);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "tau = {:e}", self.tau);
        let _ = writeln!(s, "t_end = {}", self.t_end);
        let _ = writeln!(s, "ext_tol = {:e}", self.ext_tol);
        let _ = writeln!(s, "newton_tol = {:e}", self.newton_tol);
        let _ = writeln!(s, "newton_max = {}", self.newton_max);
        let _ = writeln!(s, "initial = {}", self.initial);
        let _ = writeln!(s, "initial_b = {}", self.initial_b);
        let _ = writeln!(s, "kind = {}", self.kind.as_str());
        if let Some(o) = &self.out {
            let _ = writeln!(s, "out = {}", o.display());
        }
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "s_end = {}", self.s_end);
        let _ = writeln!(s, "profile_tol = {:e}", self.profile_tol);
        if let Some(ax) = self.sweep_axis {
            let _ = writeln!(s, "sweep_axis = {}", ax.as_str());
        }
        if !self.sweep_values.is_empty() {
            let vals: Vec<String> = self.sweep_values.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "sweep_values = {}", vals.join(","));
        }
        s
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("{key}: '{v}' is not a valid number"),
    })
}

fn range(line: usize, ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            line,
            message: message(),
        })
    }
}

/// Parses a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::with_params(f64::NAN, f64::NAN);
    let mut seen_q = false;
    let mut seen_theta = false;
    let mut seen: Vec<String> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected key = value, got '{body}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
        seen.push(key.to_string());
        match key {
            "q" => {
                let q: f64 = parse_num(line, key, value)?;
                range(line, q > 1.0 && q.is_finite(), || format!("q must exceed 1, got {q}"))?;
                cfg.q = q;
                seen_q = true;
            }
            "theta" => {
                let t: f64 = parse_num(line, key, value)?;
                range(line, t > 0.0 && t <= 1.0, || {
                    format!("theta must lie in (0, 1], got {t}")
                })?;
                cfg.theta = t;
                seen_theta = true;
            }
            "a" => cfg.a = parse_num(line, key, value)?,
            "b" => cfg.b = parse_num(line, key, value)?,
            "n" => {
                cfg.n = parse_num(line, key, value)?;
                range(line, cfg.n >= 1, || "n must be at least 1".into())?;
            }
            "tau" => {
                cfg.tau = parse_num(line, key, value)?;
                range(line, cfg.tau > 0.0 && cfg.tau.is_finite(), || {
                    format!("tau must be positive, got {}", cfg.tau)
                })?;
            }
            "t_end" => {
                cfg.t_end = parse_num(line, key, value)?;
                range(line, cfg.t_end > 0.0 && cfg.t_end.is_finite(), || {
                    format!("t_end must be positive, got {}", cfg.t_end)
                })?;
            }
            "ext_tol" => {
                cfg.ext_tol = parse_num(line, key, value)?;
                range(line, cfg.ext_tol >= 0.0, || {
                    format!("ext_tol must be nonnegative, got {}", cfg.ext_tol)
                })?;
            }
            "newton_tol" => {
                cfg.newton_tol = parse_num(line, key, value)?;
                range(line, cfg.newton_tol > 0.0, || {
                    format!("newton_tol must be positive, got {}", cfg.newton_tol)
                })?;
            }
            "newton_max" => {
                cfg.newton_max = parse_num(line, key, value)?;
                range(line, cfg.newton_max >= 1, || "newton_max must be at least 1".into())?;
            }
            "initial" | "initial_b" => {
                let d: DatumSpec = value.parse().map_err(|m| Error::Config { line, message: m })?;
                if key == "initial" {
                    cfg.initial = d;
                } else {
                    cfg.initial_b = d;
                }
            }
            "kind" => {
                cfg.kind = value.parse().map_err(|m| Error::Config { line, message: m })?;
            }
            "out" => cfg.out = Some(PathBuf::from(value)),
            "stride" => {
                cfg.stride = parse_num(line, key, value)?;
                range(line, cfg.stride >= 1, || "stride must be at least 1".into())?;
            }
            "s_end" => {
                cfg.s_end = parse_num(line, key, value)?;
                range(line, cfg.s_end > 0.0 && cfg.s_end.is_finite(), || {
                    format!("s_end must be positive, got {}", cfg.s_end)
                })?;
            }
            "profile_tol" => {
                cfg.profile_tol = parse_num(line, key, value)?;
                range(line, cfg.profile_tol > 0.0, || {
                    format!("profile_tol must be positive, got {}", cfg.profile_tol)
                })?;
            }
            "sweep_axis" => {
                cfg.sweep_axis = Some(value.parse().map_err(|m| Error::Config { line, message: m })?);
            }
            "sweep_values" => cfg.sweep_values = parse_values(value).map_err(|m| Error::Config { line, message: m })?,
            other => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
    }
    let end = last_line.max(1);
    if !seen_q {
        return Err(Error::Config {
            line: end,
            message: "missing required key 'q'".into(),
        });
    }
    if !seen_theta {
        return Err(Error::Config {
            line: end,
            message: "missing required key 'theta'".into(),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Comma-separated list of numbers.
pub fn parse_values(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|_| format!("'{v}' is not a number")))
        .collect()
}
