//! TOML config files and the bundled presets.
//!
//! A config file may carry any of the `[model]`, `[hardware]` and
//! `[scenario]` sections. Loaders pick the section they need and report a
//! missing one as a config error.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{HardwareProfile, InferenceScenario, ModelSpec};

const MODEL_PRESETS: &[(&str, &str)] = &[
    ("mixtral-8x7b", include_str!("../presets/mixtral-8x7b.toml")),
    ("qwen1.5-moe-a2.7b", include_str!("../presets/qwen1.5-moe-a2.7b.toml")),
    ("qwen2-57b-a14b", include_str!("../presets/qwen2-57b-a14b.toml")),
];

const HARDWARE_PRESETS: &[(&str, &str)] = &[
    ("a6000-pcie", include_str!("../presets/a6000-pcie.toml")),
    ("a100-nvlink", include_str!("../presets/a100-nvlink.toml")),
    ("v100-pcie", include_str!("../presets/v100-pcie.toml")),
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<ModelSpec>,
    pub hardware: Option<HardwareProfile>,
    pub scenario: Option<InferenceScenario>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let wrap = |e: Error| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(m) = &cfg.model {
            m.validate().map_err(wrap)?;
        }
        if let Some(h) = &cfg.hardware {
            h.validate().map_err(wrap)?;
        }
        if let Some(s) = &cfg.scenario {
            s.validate().map_err(wrap)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }
}

fn missing(path: &Path, section: &str) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        message: format!("missing [{section}] section"),
    }
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    ConfigFile::load(path)?.model.ok_or_else(|| missing(path, "model"))
}

pub fn load_hardware(path: &Path) -> Result<HardwareProfile> {
    ConfigFile::load(path)?
        .hardware
        .ok_or_else(|| missing(path, "hardware"))
}

pub fn load_scenario(path: &Path) -> Result<InferenceScenario> {
    ConfigFile::load(path)?
        .scenario
        .ok_or_else(|| missing(path, "scenario"))
}

fn preset_path(name: &str) -> PathBuf {
    PathBuf::from(format!("presets/{name}.toml"))
}

pub fn model_preset(name: &str) -> Result<ModelSpec> {
    let (_, text) = MODEL_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    let path = preset_path(name);
    ConfigFile::parse(text, &path)?
        .model
        .ok_or_else(|| missing(&path, "model"))
}

pub fn hardware_preset(name: &str) -> Result<HardwareProfile> {
    let (_, text) = HARDWARE_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    let path = preset_path(name);
    ConfigFile::parse(text, &path)?
        .hardware
        .ok_or_else(|| missing(&path, "hardware"))
}

pub fn model_preset_names() -> impl Iterator<Item = &'static str> {
    MODEL_PRESETS.iter().map(|(n, _)| *n)
}

pub fn hardware_preset_names() -> impl Iterator<Item = &'static str> {
    HARDWARE_PRESETS.iter().map(|(n, _)| *n)
}
