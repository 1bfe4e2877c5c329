//! Fail-closed key-value configuration and the run manifest.
//!
//! Config files are flat `key = value` lines with `#` comments. Unknown,
//! duplicate or malformed keys are errors; command-line flags override file
//! values.

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, Integrator, MuSetting};
use crate::grid::StencilOrder;
use crate::scenarios::Scenario;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Default, Clone)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::BadValue {
                    key: format!("line {}", lineno + 1),
                    msg: format!("expected `key = value`, got `{line}`"),
                }
            })?;
            kv.insert_unique(key.trim(), value.trim())?;
        }
        Ok(kv)
    }

    pub fn insert_unique(&mut self, key: &str, value: &str) -> Result<()> {
        if self.map.contains_key(key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Flag override: replaces a file value.
    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn reject_unknown(&self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::UnknownKey(key.clone()));
        }
        Ok(())
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::BadValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| bad(key, format!("`{v}` is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| bad(key, format!("`{v}` is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(bad(key, format!("`{v}` is not on/off"))),
    }
}

/// `64x64` or `64x64x8`.
pub fn parse_grid_sizes(v: &str) -> Result<Vec<usize>> {
    let sizes: Result<Vec<usize>> = v.split('x').map(|p| parse_usize("grid", p)).collect();
    let sizes = sizes?;
    if !(2..=3).contains(&sizes.len()) {
        return Err(bad("grid", format!("`{v}` must have 2 or 3 axes")));
    }
    Ok(sizes)
}

/// Single value (uniform) or per-axis `LxL[xL]`.
fn parse_periods(v: &str, dim: usize) -> Result<Vec<f64>> {
    let parts: Result<Vec<f64>> = v.split('x').map(|p| parse_f64("periods", p)).collect();
    let parts = parts?;
    match parts.len() {
        1 => Ok(vec![parts[0]; dim]),
        n if n == dim => Ok(parts),
        _ => Err(bad(
            "periods",
            format!("`{v}` must give 1 or {dim} values"),
        )),
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub sizes: Vec<usize>,
    pub periods: Vec<f64>,
    pub flow: FlowConfig,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// steps between checkpoints; 0 disables checkpointing
    pub checkpoint_every: usize,
}

impl RunManifest {
    /// Resolve a manifest from merged key-values (file, then flag
    /// overrides). Missing required keys, unknown keys and inconsistent
    /// cadences fail closed.
    pub fn from_keys(mut kv: KeyValues) -> Result<Self> {
        let scenario = Scenario::parse(
            &kv.take("scenario")
                .ok_or(Error::MissingKey("scenario"))?,
        )?;
        let sizes = parse_grid_sizes(&kv.take("grid").ok_or(Error::MissingKey("grid"))?)?;
        if sizes.len() != scenario.dim() {
            return Err(bad(
                "grid",
                format!(
                    "scenario `{}` needs dimension {}, grid has {}",
                    scenario.name(),
                    scenario.dim(),
                    sizes.len()
                ),
            ));
        }
        let periods = match kv.take("periods") {
            Some(v) => parse_periods(&v, sizes.len())?,
            None => vec![1.0; sizes.len()],
        };

        let mut flow = FlowConfig {
            t_end: parse_f64("t_end", &kv.take("t_end").ok_or(Error::MissingKey("t_end"))?)?,
            ..FlowConfig::default()
        };
        if let Some(v) = kv.take("t0") {
            flow.t0 = parse_f64("t0", &v)?;
        }
        if let Some(v) = kv.take("cfl") {
            flow.cfl = parse_f64("cfl", &v)?;
        }
        if let Some(v) = kv.take("order") {
            flow.order = StencilOrder::from_u32(
                v.parse::<u32>().map_err(|_| bad("order", "must be 2 or 4"))?,
            )?;
        }
        if let Some(v) = kv.take("integrator") {
            flow.integrator = Integrator::parse(&v)?;
        }
        if let Some(v) = kv.take("deturck") {
            flow.deturck = parse_bool("deturck", &v)?;
        }
        if let Some(v) = kv.take("mu") {
            flow.mu = if v == "auto" {
                MuSetting::Auto
            } else {
                let m = parse_f64("mu", &v)?;
                if m < 0.0 {
                    return Err(bad("mu", "must be `auto` or a real >= 0"));
                }
                MuSetting::Fixed(m)
            };
        }
        if let Some(v) = kv.take("lambda_min") {
            flow.lambda_min = parse_f64("lambda_min", &v)?;
        }
        if let Some(v) = kv.take("record_every") {
            flow.record_every = parse_usize("record_every", &v)?;
        }

        let out = PathBuf::from(kv.take("out").unwrap_or_else(|| "records.csv".into()));
        let checkpoint = kv.take("checkpoint").map(PathBuf::from);
        let checkpoint_every = match kv.take("checkpoint_every") {
            Some(v) => parse_usize("checkpoint_every", &v)?,
            None => 0,
        };
        kv.reject_unknown()?;

        flow.validate()?;
        if checkpoint_every > 0 {
            if checkpoint.is_none() {
                return Err(bad(
                    "checkpoint_every",
                    "set, but no `checkpoint` path given",
                ));
            }
            if checkpoint_every % flow.record_every != 0 {
                return Err(bad(
                    "checkpoint_every",
                    format!(
                        "{} must be a multiple of record_every {} so resumed runs stay aligned",
                        checkpoint_every, flow.record_every
                    ),
                ));
            }
        }
        Ok(RunManifest {
            scenario,
            sizes,
            periods,
            flow,
            out,
            checkpoint,
            checkpoint_every,
        })
    }
}
