//! Optional TOML config file. Keys are looked up in the subcommand's table
//! first (`[generate]`, `[correct]`, ...) and then at the top level. Flag
//! names map to keys with `-` replaced by `_`.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct Config {
    table: toml::Table,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table = text.parse::<toml::Table>().map_err(|e| e.to_string())?;
        Ok(Self { table })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&toml::Value> {
        let key = key.replace('-', "_");
        self.table
            .get(section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(&key))
            .or_else(|| self.table.get(&key).filter(|v| !v.is_table()))
    }

    pub fn get<T: DeserializeOwned>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        self.raw(section, key)
            .map(|value| {
                value
                    .clone()
                    .try_into()
                    .map_err(|e| CliError::Validation(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    /// `flag` when given, otherwise the config value.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, section: &str, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(value) => Ok(Some(value)),
            None => self.get(section, key),
        }
    }

    /// A whole table, e.g. `[pvi]` or `[generate.pvi]`.
    pub fn table<T: DeserializeOwned + Default>(&self, section: &str, name: &str) -> Result<T, CliError> {
        let found = self
            .table
            .get(section)
            .and_then(|s| s.get(name))
            .or_else(|| self.table.get(name))
            .filter(|v| v.is_table());
        match found {
            Some(value) => value
                .clone()
                .try_into()
                .map_err(|e| CliError::Validation(format!("config table {name}: {e}"))),
            None => Ok(T::default()),
        }
    }
}
