//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use sphereflow::integrators::Scheme;
use sphereflow::model::{Dealias, ModelParams};
use sphereflow::spectral::{Boundary, DomainSpec};

pub const KEYS: &[&str] = &[
    "domain.dim",
    "domain.L",
    "domain.N",
    "domain.boundary",
    "model.n",
    "model.a",
    "model.dealias",
    "stepper.scheme",
    "stepper.h",
    "stepper.t_end",
    "stepper.renormalize",
    "stepper.record_every",
    "init.kind",
    "init.seed",
    "init.mode",
    "init.path",
    "init.off_manifold_eps",
    "output.dir",
    "output.snapshots",
];

const REQUIRED: &[&str] = &["domain.dim", "domain.N"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("duplicate key {key} (line {line})")]
    Duplicate { key: String, line: usize },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("{key}: cannot parse {value:?} as {expected}")]
    Type {
        key: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("{key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    /// Normalized sine mode with the given multi-index.
    Mode(Vec<usize>),
    /// Seeded coefficients with `|k|^{-3}` decay, normalized.
    Random(u64),
    /// MSHF snapshot, normalized.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub model: ModelParams,
    pub scheme: Scheme,
    pub h: f64,
    pub t_end: f64,
    pub renormalize: bool,
    pub record_every: usize,
    pub init: InitKind,
    /// `|u₀|² = 1 + eps` after normalization.
    pub off_manifold_eps: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub write_snapshots: bool,
}

/// Raw key/value pairs in file order, duplicates rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = split_pair(content).ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                text: line.to_string(),
            })?;
            let key = canonical_key(key)?;
            if lines.insert(key.to_string(), line_no).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line: line_no,
                });
            }
            raw.entries.insert(key.to_string(), value.to_string());
        }
        Ok(raw)
    }

    /// `key=value` override; replaces any earlier value.
    pub fn set(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, value) = split_pair(pair).ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.to_string(),
        })?;
        let key = canonical_key(key)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &'static str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty() && !v.is_empty()).then_some((k, v))
}

fn canonical_key(key: &str) -> Result<&'static str, ConfigError> {
    KEYS.iter()
        .copied()
        .find(|k| *k == key)
        .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))
}

fn parse_as<T: std::str::FromStr>(key: &'static str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Type {
        key,
        value: value.to_string(),
        expected,
    })
}

fn parse_bool(key: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::Type {
            key,
            value: value.to_string(),
            expected: "true or false",
        }),
    }
}

/// Comma-separated list; a single entry is broadcast to `len`.
fn parse_list<T: std::str::FromStr + Clone>(
    key: &'static str,
    value: &str,
    len: usize,
    expected: &'static str,
) -> Result<Vec<T>, ConfigError> {
    let items = value
        .split(',')
        .map(|s| parse_as(key, s.trim(), expected))
        .collect::<Result<Vec<T>, _>>()?;
    match items.len() {
        1 => Ok(vec![items[0].clone(); len]),
        n if n == len => Ok(items),
        n => Err(ConfigError::Invalid {
            key,
            reason: format!("expected 1 or {len} entries, got {n}"),
        }),
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        for key in REQUIRED {
            if raw.get(key).is_none() {
                return Err(ConfigError::Missing(key));
            }
        }
        let get = |k| raw.get(k);

        let dim: usize = parse_as("domain.dim", get("domain.dim").unwrap(), "integer")?;
        if !(1..=3).contains(&dim) {
            return Err(ConfigError::Invalid {
                key: "domain.dim",
                reason: format!("must be 1, 2 or 3, got {dim}"),
            });
        }
        let resolution: Vec<usize> = parse_list("domain.N", get("domain.N").unwrap(), dim, "integer")?;
        let lengths: Vec<f64> = match get("domain.L") {
            Some(v) => parse_list("domain.L", v, dim, "number")?,
            None => vec![PI; dim],
        };
        let boundary: Boundary = parse_as(
            "domain.boundary",
            get("domain.boundary").unwrap_or("dirichlet_navier"),
            "dirichlet_navier or periodic",
        )?;
        if let Some(bad) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(ConfigError::Invalid {
                key: "domain.L",
                reason: format!("lengths must be positive, got {bad}"),
            });
        }
        let domain = DomainSpec::new(lengths, resolution, boundary).map_err(|e| ConfigError::Invalid {
            key: "domain.N",
            reason: e.to_string(),
        })?;

        let n: u32 = parse_as("model.n", get("model.n").unwrap_or("2"), "positive integer")?;
        if n < 1 {
            return Err(ConfigError::Invalid {
                key: "model.n",
                reason: format!("must be >= 1, got {n}"),
            });
        }
        let a: f64 = parse_as("model.a", get("model.a").unwrap_or("0"), "number")?;
        if !a.is_finite() {
            return Err(ConfigError::Invalid {
                key: "model.a",
                reason: "must be finite".into(),
            });
        }
        let dealias = match get("model.dealias").unwrap_or("zero_pad") {
            "none" => Dealias::None,
            "zero_pad" => Dealias::ZeroPad(n as usize),
            other => match other.strip_prefix("zero_pad:") {
                Some(f) => Dealias::ZeroPad(parse_as("model.dealias", f, "zero_pad:<factor>")?),
                None => {
                    return Err(ConfigError::Type {
                        key: "model.dealias",
                        value: other.into(),
                        expected: "none, zero_pad or zero_pad:<factor>",
                    })
                }
            },
        };
        let model = ModelParams::new(n).with_a(a).with_dealias(dealias);
        model.validate().map_err(|e| ConfigError::Invalid {
            key: "model.dealias",
            reason: e.to_string(),
        })?;

        let scheme: Scheme = parse_as(
            "stepper.scheme",
            get("stepper.scheme").unwrap_or("etd1"),
            "etd1, projected_euler or rk4",
        )?;
        let h = match get("stepper.h") {
            Some(v) => parse_as("stepper.h", v, "number")?,
            None => {
                let grid = sphereflow::spectral::SpectralGrid::new(domain.clone());
                scheme.default_step(grid.mu_max())
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "stepper.h",
                reason: format!("must be positive, got {h}"),
            });
        }
        let t_end: f64 = parse_as("stepper.t_end", get("stepper.t_end").unwrap_or("1"), "number")?;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "stepper.t_end",
                reason: format!("must be positive, got {t_end}"),
            });
        }
        let renormalize = parse_bool("stepper.renormalize", get("stepper.renormalize").unwrap_or("true"))?;
        let record_every: usize = parse_as(
            "stepper.record_every",
            get("stepper.record_every").unwrap_or("1"),
            "positive integer",
        )?;
        if record_every == 0 {
            return Err(ConfigError::Invalid {
                key: "stepper.record_every",
                reason: "must be >= 1".into(),
            });
        }

        let seed: u64 = parse_as("init.seed", get("init.seed").unwrap_or("0"), "unsigned integer")?;
        let init = match get("init.kind").unwrap_or("random") {
            "random" => InitKind::Random(seed),
            "mode" => {
                let k: Vec<usize> = parse_list("init.mode", get("init.mode").unwrap_or("1"), dim, "integer")?;
                if k.contains(&0) {
                    return Err(ConfigError::Invalid {
                        key: "init.mode",
                        reason: "sine modes start at 1".into(),
                    });
                }
                InitKind::Mode(k)
            }
            "file" => InitKind::File(PathBuf::from(get("init.path").ok_or(ConfigError::Missing("init.path"))?)),
            other => {
                return Err(ConfigError::Type {
                    key: "init.kind",
                    value: other.into(),
                    expected: "mode, random or file",
                })
            }
        };
        let off_manifold_eps: f64 = parse_as(
            "init.off_manifold_eps",
            get("init.off_manifold_eps").unwrap_or("0"),
            "number",
        )?;
        if !(off_manifold_eps > -1.0 && off_manifold_eps.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "init.off_manifold_eps",
                reason: format!("must exceed -1, got {off_manifold_eps}"),
            });
        }

        Ok(Self {
            domain,
            model,
            scheme,
            h,
            t_end,
            renormalize,
            record_every,
            init,
            off_manifold_eps,
            seed,
            out_dir: PathBuf::from(get("output.dir").unwrap_or("out")),
            write_snapshots: parse_bool("output.snapshots", get("output.snapshots").unwrap_or("false"))?,
        })
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    RunConfig::from_raw(&RawConfig::parse(text)?)
}

/// Used when no `--config` is given.
pub const DEFAULT_PRESET: &str = "domain.dim = 1\ndomain.N = 64\n";
