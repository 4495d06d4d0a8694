//! `SURVPFN_CFG_<PATH>` environment overrides for TOML configs.
//!
//! `PATH` is the key path in upper case with `__` between levels, so
//! `SURVPFN_CFG_MODEL__HIDDEN=32` sets `model.hidden`. Values are parsed as
//! TOML (`3`, `1e-3`, `true`, `[8, 16]`, `"nll"`); anything that does not
//! parse is taken as a bare string.

use toml::{Table, Value};

pub const CONFIG_PREFIX: &str = "SURVPFN_CFG_";

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}

/// Apply overrides to `table`; returns the dotted keys that were set.
pub fn apply<I>(table: &mut Table, vars: I) -> Result<Vec<String>, String>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(CONFIG_PREFIX))
        .collect();
    vars.sort();
    let mut applied = Vec::new();
    for (key, raw) in vars {
        let path: Vec<String> = key[CONFIG_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(format!("malformed override variable `{key}`"));
        }
        let (last, parents) = path.split_last().expect("nonempty path");
        let mut node = &mut *table;
        for p in parents {
            let entry = node
                .entry(p.clone())
                .or_insert_with(|| Value::Table(Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| format!("`{key}`: `{p}` is not a table in the configuration"))?;
        }
        node.insert(last.clone(), parse_value(&raw));
        applied.push(path.join("."));
    }
    Ok(applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_and_typed_values() {
        let mut t: Table = "steps = 10\n[model]\nhidden = 8\n".parse().unwrap();
        let vars = [
            ("SURVPFN_CFG_STEPS", "50"),
            ("SURVPFN_CFG_MODEL__HIDDEN", "32"),
            ("SURVPFN_CFG_CONTEXT_SIZE", "[8, 16]"),
            ("SURVPFN_CFG_SCHEDULE", "event_only"),
            ("HOME", "/root"),
        ]
        .map(|(k, v)| (k.to_owned(), v.to_owned()));
        let applied = apply(&mut t, vars).unwrap();
        assert_eq!(applied.len(), 4);
        assert_eq!(t["steps"].as_integer(), Some(50));
        assert_eq!(t["model"]["hidden"].as_integer(), Some(32));
        assert_eq!(t["context_size"].as_array().unwrap().len(), 2);
        assert_eq!(t["schedule"].as_str(), Some("event_only"));
    }

    #[test]
    fn scalar_parent_is_an_error() {
        let mut t: Table = "steps = 10\n".parse().unwrap();
        let vars = [("SURVPFN_CFG_STEPS__X".to_owned(), "1".to_owned())];
        assert!(apply(&mut t, vars).is_err());
    }
}
