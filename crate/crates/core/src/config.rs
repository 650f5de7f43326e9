//! TOML experiment configuration and built-in presets.
//!
//! A config file has three optional parts:
//!
//! ```toml
//! preset = "paper-case"        # base to start from (default: paper-case)
//!
//! [scenario]                   # any subset of Scenario fields
//! duration_ms = 60000
//! [scenario.fwa]
//! symbols_per_unit = 62.5
//!
//! [sweep]
//! loads = [0.3, 0.5]
//! policies = ["basic", "e2e", "elastic"]
//! seeds = [0, 1, 2]
//! ```
//!
//! Tables under `[scenario]` are merged key by key into the preset, so a
//! file only states what it changes. Arrays replace the preset's arrays.

use std::path::Path;

use serde::Deserialize;

use crate::engine::{default_scenario, Scenario};
use crate::error::SimError;
use crate::scheduler::Policy;
use crate::sweep::SweepSpec;

pub const PRESETS: [&str; 1] = ["paper-case"];

/// Fine load sweep 10% to 100% in 5% steps.
pub fn fine_loads() -> Vec<f64> {
    (2..=20).map(|i| (i * 5) as f64 / 100.0).collect()
}

/// The case-study sweep: 88 RGs, two patients, one emergency from 30 s to
/// 90 s, all three policies, 19 load points and 10 seeds.
pub fn paper_case() -> SweepSpec {
    SweepSpec {
        base: default_scenario(),
        loads: fine_loads(),
        policies: Policy::ALL.to_vec(),
        seeds: (0..10).collect(),
    }
}

pub fn preset(name: &str) -> Result<SweepSpec, SimError> {
    match name {
        "paper-case" => Ok(paper_case()),
        other => Err(SimError::Config {
            path: "<preset>".into(),
            message: format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
        }),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    loads: Option<Vec<f64>>,
    policies: Option<Vec<Policy>>,
    seeds: Option<Vec<u64>>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses config text; `origin` names the source in error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<SweepSpec, SimError> {
    let err = |message: String| SimError::Config {
        path: origin.to_string(),
        message,
    };
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| err(e.to_string()))?;
    let base_name = match doc.remove("preset") {
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(err(format!("`preset` must be a string, got {other}"))),
        None => "paper-case".to_string(),
    };
    let mut spec = preset(&base_name).map_err(|e| err(e.to_string()))?;
    if let Some(over) = doc.remove("scenario") {
        if !over.is_table() {
            return Err(err("`scenario` must be a table".into()));
        }
        let mut value = toml::Value::try_from(&spec.base).map_err(|e| err(e.to_string()))?;
        merge(&mut value, over);
        spec.base = value
            .try_into()
            .map_err(|e: toml::de::Error| err(format!("[scenario]: {e}")))?;
    }
    if let Some(sweep) = doc.remove("sweep") {
        let s: SweepSection = sweep
            .try_into()
            .map_err(|e: toml::de::Error| err(format!("[sweep]: {e}")))?;
        if let Some(l) = s.loads {
            spec.loads = l;
        }
        if let Some(p) = s.policies {
            spec.policies = p;
        }
        if let Some(s) = s.seeds {
            spec.seeds = s;
        }
    }
    if let Some(k) = doc.keys().next() {
        return Err(err(format!("unknown top-level key `{k}`")));
    }
    spec.validate().map_err(|e| err(e.to_string()))?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<SweepSpec, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

/// The fully expanded scenario as TOML, a starting point for new configs.
pub fn scenario_to_toml(s: &Scenario) -> Result<String, SimError> {
    toml::to_string_pretty(s).map_err(|e| SimError::Parse(e.to_string()))
}
