//! `[simulate]` section of a TOML config file, layered over a preset.

use std::path::Path;

use shuffle_ev::simulation::{Layout, SweepConfig};
use shuffle_ev::{Error, Method, Result};
use toml::{Table, Value};

/// Which sweep routine a resolved config dispatches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig5a,
    Fig5b,
    Fig6,
    Custom,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fig5a" => Ok(Self::Fig5a),
            "fig5b" => Ok(Self::Fig5b),
            "fig6" => Ok(Self::Fig6),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::Config(format!("unknown preset {s:?} (fig5a, fig5b, fig6, custom)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig5a => "fig5a",
            Self::Fig5b => "fig5b",
            Self::Fig6 => "fig6",
            Self::Custom => "custom",
        }
    }

    pub fn defaults(self) -> SweepConfig {
        match self {
            Self::Fig5a => SweepConfig::block_defaults(),
            Self::Fig5b | Self::Custom => SweepConfig::timeseries_defaults(),
            Self::Fig6 => SweepConfig::reml_comparison_defaults(),
        }
    }
}

pub fn layout_string(l: Layout) -> String {
    match l {
        Layout::Random => "random".into(),
        Layout::Blocked { blocks } => format!("blocked:{blocks}"),
    }
}

fn parse_layout(s: &str) -> Result<Layout> {
    if s == "random" {
        return Ok(Layout::Random);
    }
    s.strip_prefix("blocked:")
        .and_then(|b| b.parse().ok())
        .map(|blocks| Layout::Blocked { blocks })
        .ok_or_else(|| Error::Config(format!("bad layout {s:?} (random or blocked:B)")))
}

fn bad(key: &str, want: &str) -> Error {
    Error::Config(format!("`{key}` must be {want}"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| bad(key, "a nonnegative integer"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| bad(key, "a number"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string"))
}

/// Strings may be given as a TOML array or one comma-separated string.
fn as_list(key: &str, v: &Value) -> Result<Vec<String>> {
    match v {
        Value::String(s) => Ok(s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()),
        Value::Array(items) => items.iter().map(|i| as_str(key, i).map(str::to_string)).collect(),
        _ => Err(bad(key, "a string or an array of strings")),
    }
}

/// Reads the `[simulate]` table of a config file.
pub fn load_simulate_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_simulate_table(&text)
}

pub fn parse_simulate_table(text: &str) -> Result<Table> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    match doc.get("simulate") {
        Some(Value::Table(t)) => Ok(t.clone()),
        _ => Err(Error::Config("config file has no [simulate] section".into())),
    }
}

/// Applies every key except `preset` to `cfg`.
pub fn apply(cfg: &mut SweepConfig, table: &Table) -> Result<()> {
    for (key, v) in table {
        match key.as_str() {
            "preset" => {}
            "m" => cfg.m = as_usize(key, v)?,
            "n" => cfg.n = as_usize(key, v)?,
            "layout" => cfg.layout = parse_layout(as_str(key, v)?)?,
            "noise" => cfg.noise = as_str(key, v)?.parse()?,
            "sigma2_eps" => cfg.sigma2_eps = as_f64(key, v)?,
            "grid" => {
                cfg.grid = v
                    .as_array()
                    .ok_or_else(|| bad(key, "an array of numbers"))?
                    .iter()
                    .map(|x| as_f64(key, x))
                    .collect::<Result<_>>()?
            }
            "replicates" => cfg.replicates = as_usize(key, v)?,
            "permutation" => cfg.permutation = as_str(key, v)?.parse()?,
            "seed" => cfg.seed = as_usize(key, v)? as u64,
            "estimators" => {
                cfg.estimators = as_list(key, v)?
                    .iter()
                    .map(|s| s.parse::<Method>())
                    .collect::<Result<_>>()?
            }
            "reml_starts" => cfg.reml.starts = as_usize(key, v)?,
            "reml_max_evals" => cfg.reml.max_evals = as_usize(key, v)?,
            "reml_max_len" => cfg.reml.max_len = as_usize(key, v)?,
            "threads" => cfg.threads = Some(as_usize(key, v)?),
            other => return Err(Error::Config(format!("unknown key `{other}` in [simulate]"))),
        }
    }
    Ok(())
}

/// Fully resolved settings, one `key = value` per line. Thread count is left out so
/// output does not depend on it.
pub fn echo(preset: Preset, cfg: &SweepConfig) -> Vec<String> {
    let grid: Vec<String> = cfg.grid.iter().map(f64::to_string).collect();
    vec![
        format!("preset = {}", preset.name()),
        format!("m = {}", cfg.m),
        format!("n = {}", cfg.n),
        format!("layout = {}", layout_string(cfg.layout)),
        format!("noise = {}", cfg.noise),
        format!("sigma2_eps = {}", cfg.sigma2_eps),
        format!("grid = {}", grid.join(",")),
        format!("replicates = {}", cfg.replicates),
        format!("permutation = {}", cfg.permutation),
        format!("seed = {}", cfg.seed),
        format!("estimators = {}", crate::common::join(&cfg.estimators)),
        format!("reml_starts = {}", cfg.reml.starts),
        format!("reml_max_evals = {}", cfg.reml.max_evals),
        format!("reml_max_len = {}", cfg.reml.max_len),
    ]
}
