//! `--config FILE` overlay. The `[<subcommand>]` table of the TOML file is
//! turned into `--key=value` flags placed before the command-line flags;
//! keys whose flag also appears on the command line are dropped, so flags
//! always win. Unknown keys become unknown flags and are rejected by the
//! parser.

use std::collections::HashSet;

use toml::{Table, Value};

use crate::error::{usage, CliError};

fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

fn given_flags(args: &[String]) -> HashSet<String> {
    args.iter()
        .take_while(|a| *a != "--")
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_owned())
        .collect()
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        _ => Err(usage(format!("config key {key:?}: expected a string or number"))),
    }
}

/// Flags contributed by `section`, skipping those in `given`.
pub fn section_flags(section: &Table, given: &HashSet<String>) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (key, value) in section {
        let flag = key.replace('_', "-");
        if given.contains(&flag) {
            continue;
        }
        match value {
            Value::Boolean(true) => out.push(format!("--{flag}")),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                for item in items {
                    out.push(format!("--{flag}={}", scalar(key, item)?));
                }
            }
            v => out.push(format!("--{flag}={}", scalar(key, v)?)),
        }
    }
    Ok(out)
}

/// Rewrites `argv` with the config overlay applied.
pub fn overlay(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(sub) = argv.get(1).filter(|a| !a.starts_with('-')) else {
        return Ok(argv);
    };
    let rest = &argv[2..];
    let Some(path) = config_path(rest) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    let table: Table = text.parse().map_err(|e| usage(format!("config {path}: {e}")))?;
    if let Some((key, _)) = table.iter().find(|(_, v)| !v.is_table()) {
        return Err(usage(format!("config {path}: top-level key {key:?} must be inside a [subcommand] section")));
    }
    let flags = match table.get(sub.as_str()) {
        Some(Value::Table(section)) => section_flags(section, &given_flags(rest))?,
        _ => Vec::new(),
    };
    let mut out = vec![argv[0].clone(), sub.clone()];
    out.extend(flags);
    out.extend(rest.iter().cloned());
    Ok(out)
}
