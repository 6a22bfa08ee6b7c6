//! Flat `key = value` settings resolved from defaults, a config file and
//! command-line flags, in increasing priority.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgMatches, Command};

use crate::CliError;

/// One recognised setting.
#[derive(Debug, Clone)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<String>,
    pub help: &'static str,
}

/// A setting with a default value.
pub fn key(name: &'static str, default: impl ToString, help: &'static str) -> Key {
    Key {
        name,
        default: Some(default.to_string()),
        help,
    }
}

/// A setting without a default.
pub fn bare(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: None,
        help,
    }
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Adds one `--flag <VALUE>` per key, plus `--config`.
pub fn with_keys(mut cmd: Command, keys: &[Key]) -> Command {
    cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Flat 'key = value' config file; flags take precedence"),
    );
    for k in keys {
        let mut help = k.help.to_string();
        if let Some(d) = &k.default {
            help.push_str(&format!(" [default: {d}]"));
        }
        cmd = cmd.arg(Arg::new(k.name).long(flag_name(k.name)).value_name("VALUE").help(help));
    }
    cmd
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, keys: &[Key]) -> Result<BTreeMap<&'static str, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected 'key = value', found '{line}'", i + 1)))?;
        let name = name.trim().replace('-', "_");
        let known = keys.iter().find(|k| k.name == name).ok_or_else(|| {
            let valid: Vec<&str> = keys.iter().map(|k| k.name).collect();
            CliError::Usage(format!(
                "config line {}: unknown key '{name}' (valid keys: {})",
                i + 1,
                valid.join(", ")
            ))
        })?;
        out.insert(known.name, value.trim().to_string());
    }
    Ok(out)
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn resolve(keys: &[Key], matches: &ArgMatches) -> Result<Self, CliError> {
        let mut values: BTreeMap<&'static str, String> = keys
            .iter()
            .filter_map(|k| k.default.clone().map(|d| (k.name, d)))
            .collect();
        if let Some(path) = matches.get_one::<String>("config") {
            let text = std::fs::read_to_string(Path::new(path))
                .map_err(|e| CliError::Usage(format!("cannot read config file '{path}': {e}")))?;
            values.extend(parse_config(&text, keys)?);
        }
        for k in keys {
            if let Some(v) = matches.get_one::<String>(k.name) {
                values.insert(k.name, v.clone());
            }
        }
        Ok(Self { values })
    }

    pub fn has(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn str(&self, name: &str) -> Result<&str, CliError> {
        self.values
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", flag_name(name))))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.str(name)?;
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value '{raw}' for --{}: {e}", flag_name(name))))
    }

    pub fn opt<T: FromStr>(&self, name: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        if self.has(name) {
            self.get(name).map(Some)
        } else {
            Ok(None)
        }
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys() -> Vec<Key> {
        vec![key("seed", 0, "seed"), bare("out", "output")]
    }

    #[test]
    fn config_lines_and_comments() {
        let m = parse_config("# header\nseed = 5 # trailing\n\nout=x.csv\n", &keys()).unwrap();
        assert_eq!(m["seed"], "5");
        assert_eq!(m["out"], "x.csv");
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        assert!(matches!(parse_config("speed = 3", &keys()), Err(CliError::Usage(_))));
        assert!(matches!(parse_config("seed 3", &keys()), Err(CliError::Usage(_))));
    }

    #[test]
    fn flags_override_config_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "seed = 5\nout = a.csv\n").unwrap();
        let cmd = with_keys(Command::new("t"), &keys());
        let m = cmd
            .try_get_matches_from(["t", "--config", cfg.to_str().unwrap(), "--seed", "9"])
            .unwrap();
        let s = Settings::resolve(&keys(), &m).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 9);
        assert_eq!(s.str("out").unwrap(), "a.csv");
        assert_eq!(s.to_string(), "out = a.csv\nseed = 9\n");
    }
}
