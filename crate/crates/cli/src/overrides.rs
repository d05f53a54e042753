//! Dotted-path `--override key=value` edits applied to the TOML value tree
//! before deserialization, so the strict schema still vets every override.

use toml::value::{Table, Value};

use crate::error::{CliError, CliResult};

/// Applies one `path.to.key=value` override.  Array elements are addressed
/// by numeric segments (`stage.0.pulse.1.delta=-16`).  Intermediate tables
/// are created when missing; the final deserialization rejects any key the
/// schema does not know, so a typo cannot materialize silently.
pub fn apply_override(root: &mut Value, spec: &str) -> CliResult<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Config(format!("--override must look like key.path=value, got '{spec}'"))
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if path.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!(
            "--override has an empty path segment in '{path}'"
        )));
    }

    let mut current = root;
    for (i, segment) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match current {
            Value::Table(table) => {
                if last {
                    let parsed = parse_scalar(table.get(*segment), raw, path)?;
                    table.insert((*segment).to_string(), parsed);
                    return Ok(());
                }
                current = table
                    .entry((*segment).to_string())
                    .or_insert_with(|| Value::Table(Table::new()));
            }
            Value::Array(array) => {
                let index: usize = segment.parse().map_err(|_| {
                    CliError::Config(format!(
                        "override path '{path}': '{segment}' must be an array index"
                    ))
                })?;
                let len = array.len();
                if last {
                    return Err(CliError::Config(format!(
                        "override path '{path}' ends at an array element; \
                         address a key inside it"
                    )));
                }
                current = array.get_mut(index).ok_or_else(|| {
                    CliError::Config(format!(
                        "override path '{path}': index {index} out of range (len {len})"
                    ))
                })?;
            }
            _ => {
                return Err(CliError::Config(format!(
                    "override path '{path}': '{segment}' addresses into a scalar"
                )))
            }
        }
    }
    unreachable!("loop returns on the last segment");
}

/// Parses the right-hand side, coercing to the type of the value already at
/// the path when there is one (so `lambda=30` stays a float).  Fresh keys
/// get the natural reading: bool, then integer, then float, then string.
fn parse_scalar(existing: Option<&Value>, raw: &str, path: &str) -> CliResult<Value> {
    match existing {
        Some(Value::Boolean(_)) => raw.parse::<bool>().map(Value::Boolean).map_err(|_| {
            CliError::Config(format!("override '{path}': expected a boolean, got '{raw}'"))
        }),
        Some(Value::Integer(_)) => raw.parse::<i64>().map(Value::Integer).map_err(|_| {
            CliError::Config(format!("override '{path}': expected an integer, got '{raw}'"))
        }),
        Some(Value::Float(_)) => raw.parse::<f64>().map(Value::Float).map_err(|_| {
            CliError::Config(format!("override '{path}': expected a number, got '{raw}'"))
        }),
        Some(Value::String(_)) => Ok(Value::String(raw.to_string())),
        Some(other) => Err(CliError::Config(format!(
            "override '{path}': cannot replace a {} with a scalar",
            other.type_str()
        ))),
        None => Ok(if let Ok(b) = raw.parse::<bool>() {
            Value::Boolean(b)
        } else if let Ok(i) = raw.parse::<i64>() {
            Value::Integer(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            Value::Float(f)
        } else {
            Value::String(raw.to_string())
        }),
    }
}

/// Sets a string at a fixed path, creating intermediate tables.  Used for
/// flag-driven edits (`--out DIR`) that must land in the echoed config.
pub fn set_string(root: &mut Value, path: &[&str], value: &str) -> CliResult<()> {
    let mut current = root;
    for (i, segment) in path.iter().enumerate() {
        let table = current.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("cannot set '{}': not a table", path.join(".")))
        })?;
        if i + 1 == path.len() {
            table.insert((*segment).to_string(), Value::String(value.to_string()));
            return Ok(());
        }
        current = table
            .entry((*segment).to_string())
            .or_insert_with(|| Value::Table(Table::new()));
    }
    Ok(())
}
