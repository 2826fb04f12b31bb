//! Layered configuration: built-in defaults, then the command's table in
//! the TOML file, then explicit flags.

use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Load the TOML file into a table keyed by subcommand name.
pub fn load(path: &Path) -> anyhow::Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<toml::Table>().with_context(|| format!("parsing config {}", path.display()))
}

/// Merge `flags` over the `section` table of `file` and fill the rest from
/// the defaults of `R`.
pub fn resolve<F: Serialize, R: DeserializeOwned>(flags: &F, file: Option<&toml::Table>, section: &str) -> anyhow::Result<R> {
    let mut merged = Map::new();
    if let Some(table) = file {
        match table.get(section) {
            None => {}
            Some(toml::Value::Table(t)) => {
                if let Value::Object(m) = serde_json::to_value(t)? {
                    merged.extend(m);
                }
            }
            Some(_) => bail!("config entry `{section}` must be a table"),
        }
    }
    if let Value::Object(m) = serde_json::to_value(flags)? {
        merged.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).with_context(|| format!("invalid `{section}` configuration"))
}

/// The resolved configuration as `# `-prefixed TOML lines.
pub fn comment_block<R: Serialize>(command: &str, resolved: &R) -> anyhow::Result<String> {
    let body = toml::to_string(resolved)?;
    let mut out = format!("# flowcert {command} {}\n", env!("CARGO_PKG_VERSION"));
    for line in body.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}
