use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

/// A named set of numeric plant parameters read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub name: String,
    values: BTreeMap<String, f64>,
}

impl ParameterSet {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let mut name = None;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            match value {
                toml::Value::String(s) if key == "name" => name = Some(s),
                toml::Value::Float(f) => {
                    values.insert(key, f);
                }
                toml::Value::Integer(i) => {
                    values.insert(key, i as f64);
                }
                other => {
                    return Err(Error::Config(format!(
                        "parameter `{key}` must be numeric, got {}",
                        other.type_str()
                    )))
                }
            }
        }
        let name = name.ok_or_else(|| Error::Config("parameter file lacks `name`".into()))?;
        Ok(Self { name, values })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        let value = *self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing plant parameter `{key}`")))?;
        if !value.is_finite() {
            return Err(Error::Config(format!("plant parameter `{key}` is not finite")));
        }
        Ok(value)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}
