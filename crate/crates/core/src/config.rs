//! Run configuration: one TOML document with `[model]`, `[train]` and
//! `[data]` tables. Every key can be overridden as `section.key=value`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one `section.key=value` override. The value is read as a
    /// TOML literal, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {path:?} is not section.key")))?;
        let value = parse_value(raw.trim());

        let mut doc = toml::Table::try_from(&*self).expect("config serializes");
        let table = doc
            .get_mut(section)
            .and_then(|t| t.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section `{section}`")))?;
        table.insert(key.to_string(), value);
        *self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{path}: {}", e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
