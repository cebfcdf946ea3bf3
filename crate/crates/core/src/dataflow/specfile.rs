//! Text format for pipeline runs.
//!
//! INI-style sections with `key = value` lines, case-sensitive keys:
//!
//! ```text
//! task = fcount
//! layout = split
//! split_size = 10
//! partitions = 4
//! workers = 2
//! driver_mem_cap = 1000000
//! seed = 7
//!
//! [params.s1]
//! sigma = 1.0
//!
//! [params.s4]
//! corr_floor = 0.9
//!
//! [storage]
//! backend = flat
//! dir = out
//! shards = 4
//! ```

use std::collections::BTreeMap;

use crate::engine::ExecConfig;

use super::stage::{ParamSet, StageKind};
use super::record::Payload;
use super::DataflowError;

/// Parsed pipeline run description.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub task: String,
    pub layout: LayoutChoice,
    pub split_size: Option<usize>,
    pub config: ExecConfig,
    pub params: ParamSet,
    pub storage: StorageChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutChoice {
    Minimal,
    Modular,
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageChoice {
    pub backend: String,
    pub dir: String,
    pub shards: u32,
}

impl Default for StorageChoice {
    fn default() -> Self {
        Self {
            backend: "flat".into(),
            dir: "out".into(),
            shards: 4,
        }
    }
}

fn bad_key(section: &str, key: &str) -> DataflowError {
    DataflowError::SpecError(format!("unknown key '{key}' in section [{section}]"))
}

fn bad_value(key: &str, value: &str) -> DataflowError {
    DataflowError::SpecError(format!("invalid value '{value}' for key '{key}'"))
}

/// Parse the pipeline spec text. Unknown keys and malformed values are
/// errors naming the offending key.
pub fn parse_pipeline_spec(text: &str) -> Result<PipelineSpec, DataflowError> {
    let mut section = String::new();
    let mut top: BTreeMap<String, String> = BTreeMap::new();
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            sections.entry(section.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(DataflowError::SpecError(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if section.is_empty() {
            top.insert(key, value);
        } else {
            sections.entry(section.clone()).or_default().insert(key, value);
        }
    }

    let mut spec = PipelineSpec {
        task: String::new(),
        layout: LayoutChoice::Minimal,
        split_size: None,
        config: ExecConfig::default(),
        params: ParamSet::default(),
        storage: StorageChoice::default(),
    };
    for (key, value) in &top {
        match key.as_str() {
            "task" => spec.task = value.clone(),
            "layout" => {
                spec.layout = match value.as_str() {
                    "minimal" => LayoutChoice::Minimal,
                    "modular" => LayoutChoice::Modular,
                    "split" => LayoutChoice::Split,
                    _ => return Err(bad_value("layout", value)),
                }
            }
            "split_size" => {
                spec.split_size = Some(value.parse().map_err(|_| bad_value("split_size", value))?)
            }
            "partitions" => {
                spec.config.num_partitions =
                    value.parse().map_err(|_| bad_value("partitions", value))?
            }
            "workers" => {
                spec.config.num_workers = value.parse().map_err(|_| bad_value("workers", value))?
            }
            "driver_mem_cap" => {
                spec.config.driver_mem_cap =
                    value.parse().map_err(|_| bad_value("driver_mem_cap", value))?
            }
            "worker_mem_cap" => {
                spec.config.worker_mem_cap =
                    value.parse().map_err(|_| bad_value("worker_mem_cap", value))?
            }
            "seed" => spec.config.seed = value.parse().map_err(|_| bad_value("seed", value))?,
            other => return Err(bad_key("", other)),
        }
    }
    if spec.task.is_empty() {
        return Err(DataflowError::SpecError("missing required key 'task'".into()));
    }

    for (name, entries) in &sections {
        match name.as_str() {
            "params.s1" | "params.s2" | "params.s3" | "params.s4" => {
                let kind = match name.as_str() {
                    "params.s1" => StageKind::Preprocess,
                    "params.s2" => StageKind::Estimate,
                    "params.s3" => StageKind::Model,
                    _ => StageKind::Analyze,
                };
                let map = spec.params.for_stage_mut(kind);
                for (key, value) in entries {
                    map.insert(key.clone(), parse_param_value(value));
                }
            }
            "storage" => {
                for (key, value) in entries {
                    match key.as_str() {
                        "backend" => match value.as_str() {
                            "flat" | "sharded" | "kv" => spec.storage.backend = value.clone(),
                            _ => return Err(bad_value("backend", value)),
                        },
                        "dir" => spec.storage.dir = value.clone(),
                        "shards" => {
                            spec.storage.shards =
                                value.parse().map_err(|_| bad_value("shards", value))?
                        }
                        other => return Err(bad_key("storage", other)),
                    }
                }
            }
            other => {
                return Err(DataflowError::SpecError(format!(
                    "unknown section [{other}]"
                )))
            }
        }
    }
    Ok(spec)
}

/// Parameter values: integers, floats, or free text.
fn parse_param_value(value: &str) -> Payload {
    if let Ok(v) = value.parse::<i64>() {
        return Payload::Int(v);
    }
    if let Ok(v) = value.parse::<f64>() {
        return Payload::Real(v);
    }
    if value.contains(',') {
        if let Ok(vs) = value
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
        {
            return Payload::Vector(vs);
        }
    }
    Payload::Text(value.to_string())
}
