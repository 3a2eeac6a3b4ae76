//! `key=value` config files. Keys are long flag names without the leading
//! dashes (`per-class = 100`); `#` starts a comment. Values are spliced into
//! the argument list only for flags the user did not pass.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;

use crate::cli::Cli;
use crate::Failure;

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Failure::Usage(format!("config line {}: expected key=value", n + 1)));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(Failure::Usage(format!("config line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value).is_some() {
            return Err(Failure::Usage(format!("config line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

fn flag_value(args: &[OsString], flag: &str) -> Option<OsString> {
    let eq = format!("{flag}=");
    args.iter().enumerate().find_map(|(i, a)| {
        let s = a.to_str()?;
        if s == flag {
            args.get(i + 1).cloned()
        } else {
            s.strip_prefix(&eq).map(OsString::from)
        }
    })
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| a.to_str().is_some_and(|s| s == flag || s.starts_with(&eq)))
}

/// Returns `args` with config-file defaults appended.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = flag_value(&args, "--config") else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let entries = parse(&text)?;

    let root = Cli::command();
    let sub_name = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| root.find_subcommand(a).is_some());
    let sub = sub_name.and_then(|n| root.find_subcommand(n));

    let mut merged = args.clone();
    for (key, value) in &entries {
        if key == "config" {
            return Err(Failure::Usage("config files cannot include other config files".into()));
        }
        let arg = root
            .get_arguments()
            .chain(sub.into_iter().flat_map(|s| s.get_arguments()))
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            let known = root.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str())));
            if known {
                continue;
            }
            return Err(Failure::Usage(format!("config: unknown key `{key}`")));
        };
        let flag = format!("--{key}");
        if has_flag(&args, &flag) {
            continue;
        }
        if arg.get_action().takes_values() {
            merged.push(flag.into());
            merged.push(value.into());
        } else {
            match value.as_str() {
                "true" => merged.push(flag.into()),
                "false" => {}
                other => return Err(Failure::Usage(format!("config: `{key}` expects true or false, got `{other}`"))),
            }
        }
    }
    Ok(merged)
}
