//! Resolution of subcommand options: command-line flag, then the `--config`
//! file, then the built-in default. Every resolved value is recorded so it
//! can be echoed into output provenance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use segloo_core::{Error, Result};

pub struct Settings {
    file: Map<String, Value>,
    resolved: BTreeMap<String, Value>,
}

impl Settings {
    /// Reads the config file, if any. Top-level keys apply to every
    /// subcommand; an object under the subcommand's name overrides them.
    pub fn load(path: Option<&Path>, subcommand: &str) -> Result<Self> {
        let mut file = Map::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
            let Value::Object(top) = value else {
                return Err(Error::Config(format!("config {} must hold a JSON object", path.display())));
            };
            let section = top.get(subcommand).cloned();
            for (k, v) in top {
                if !v.is_object() {
                    file.insert(k, v);
                }
            }
            if let Some(Value::Object(sub)) = section {
                file.extend(sub);
            }
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::Config(format!("config key {key}: {e}"))),
        }
    }

    pub fn pick<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let value = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.resolved
            .insert(key.to_owned(), serde_json::to_value(&value).unwrap_or(Value::Null));
        Ok(value)
    }

    pub fn pick_opt<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.resolved
            .insert(key.to_owned(), serde_json::to_value(&value).unwrap_or(Value::Null));
        Ok(value)
    }

    /// A required value: flag or config file.
    pub fn require<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.pick_opt(key, flag)?
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}` (flag or config file)")))
    }

    /// Repeatable flags; the config file may give a list.
    pub fn pick_list(&mut self, key: &str, flag: Vec<String>, default: &[&str]) -> Result<Vec<String>> {
        let value = if !flag.is_empty() {
            flag
        } else {
            self.from_file::<Vec<String>>(key)?
                .unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect())
        };
        self.resolved.insert(key.to_owned(), Value::from(value.clone()));
        Ok(value)
    }

    pub fn resolved(&self) -> Value {
        Value::Object(self.resolved.clone().into_iter().collect())
    }
}
