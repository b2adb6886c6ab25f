//! TOML configuration with `JOINSENS_*` environment overrides.
//!
//! Nested keys use a double underscore: `JOINSENS_SAMPLING__TAU0=0.005`
//! sets `sampling.tau0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplingse::{Mode, SamplingConfig, Tolerance};
use crate::sketchse::{DistanceVariant, PartitionSearch, SketchParams};

pub const ENV_PREFIX: &str = "JOINSENS_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    /// `laplace`, `cauchy` or `global`.
    pub mechanism: String,
    pub gs_cap: Option<f64>,
    pub oracle_budget: u64,
    pub sampling: SamplingSection,
    pub sketch: SketchSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            epsilon: 0.8,
            delta: 1e-7,
            gamma: 4.0,
            mechanism: "laplace".into(),
            gs_cap: None,
            oracle_budget: crate::exact::DEFAULT_ORACLE_BUDGET as u64,
            sampling: SamplingSection::default(),
            sketch: SketchSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub tau0: f64,
    /// `normalized` or `absolute`.
    pub tolerance: String,
    pub eta: f64,
    pub m0: u64,
    pub walk_cap: u64,
    pub sample_rate: Option<f64>,
    pub mode: String,
    pub filter_walks: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let d = SamplingConfig::default();
        SamplingSection {
            tau0: 0.01,
            tolerance: "normalized".into(),
            eta: d.eta,
            m0: d.m0,
            walk_cap: d.walk_cap,
            sample_rate: None,
            mode: "improved".into(),
            filter_walks: d.filter_walks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub s1: usize,
    pub s2: usize,
    pub tau: f64,
    pub eta: f64,
    pub variant: DistanceVariant,
    pub partition_search: PartitionSearch,
}

impl Default for SketchSection {
    fn default() -> Self {
        let d = SketchParams::default();
        SketchSection {
            s1: d.s1,
            s2: d.s2,
            tau: d.tau,
            eta: d.eta,
            variant: d.variant,
            partition_search: d.partition_search,
        }
    }
}

impl Config {
    /// Reads `path` if given, then applies overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, std::env::vars())
    }

    pub fn from_toml(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(|p| p.to_ascii_lowercase()).collect();
            set_path(&mut table, &path, parse_env_value(&value)).map_err(|m| Error::Config(format!("{key}: {m}")))?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        self.sampling_config(self.seed)?;
        self.sketch_params().validate()
    }

    pub fn sampling_config(&self, seed: u64) -> Result<SamplingConfig> {
        let s = &self.sampling;
        let tau0 = match s.tolerance.as_str() {
            "normalized" => Tolerance::Normalized(s.tau0),
            "absolute" => Tolerance::Absolute(s.tau0),
            t => return Err(Error::Config(format!("unknown tolerance kind `{t}`"))),
        };
        let cfg = SamplingConfig {
            tau0,
            eta: s.eta,
            m0: s.m0,
            walk_cap: s.walk_cap,
            sample_rate: s.sample_rate,
            mode: Mode::parse(&s.mode)?,
            filter_walks: s.filter_walks,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sketch_params(&self) -> SketchParams {
        let s = &self.sketch;
        SketchParams {
            s1: s.s1,
            s2: s.s2,
            tau: s.tau,
            eta: s.eta,
            variant: s.variant,
            partition_search: s.partition_search,
        }
    }
}

/// Numbers and booleans parse as TOML; anything else stays a string.
fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{p}` is not a section"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}
