//! Flat `key = value` experiment configs.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

pub const COMMANDS: &[&str] = &["simulate", "oracle", "sweep", "couple", "graph-stats"];

const KERNEL: &str = "0.6,0.3,0.1,0.2,0.6,0.2,0.1,0.3,0.6";
const F0: &str = "0.7,0.2,0.1";

/// Keys accepted by each command, with their defaults, in manifest order.
pub fn keys_for(command: &str) -> Option<&'static [(&'static str, &'static str)]> {
    let keys: &'static [(&str, &str)] = match command {
        "simulate" => &[
            ("model", "kuramoto"),
            ("n", "64"),
            ("reps", "1"),
            ("t", "1"),
            ("dt", "0.01"),
            ("stride", "10"),
            ("grid", "10"),
            ("k0", "1"),
            ("sigma", "0.5"),
            ("lambda", "1"),
            ("init_mean", "0"),
            ("init_sd", "1"),
            ("kernel", KERNEL),
            ("f0", F0),
            ("seed", "0"),
        ],
        "oracle" => &[
            ("model", "choose-leader"),
            ("n", "3"),
            ("t", "1"),
            ("k", "1"),
            ("kernel", KERNEL),
            ("f0", F0),
            ("seed", "0"),
        ],
        "sweep" => &[
            ("model", "kuramoto"),
            ("metric", "coupling"),
            ("ns", "64,128"),
            ("reps", "32"),
            ("t", "1"),
            ("dt", "0.01"),
            ("k0", "1"),
            ("sigma", "0.5"),
            ("init_mean", "0"),
            ("init_sd", "1"),
            ("p", "2"),
            ("q", "6"),
            ("k", "2"),
            ("reference_size", "auto"),
            ("kernel", KERNEL),
            ("f0", F0),
            ("levels", "3"),
            ("seed", "0"),
        ],
        "couple" => &[
            ("model", "kuramoto"),
            ("ns", "64,128"),
            ("reps", "32"),
            ("t", "1"),
            ("dt", "0.01"),
            ("stride", "10"),
            ("k0", "1"),
            ("sigma", "0.5"),
            ("init_mean", "0"),
            ("init_sd", "1"),
            ("p", "2"),
            ("reference_size", "auto"),
            ("seed", "0"),
        ],
        "graph-stats" => &[
            ("ns", "100,1000"),
            ("lambda", "1"),
            ("t", "2"),
            ("reps", "1000"),
            ("seed", "0"),
        ],
        _ => return None,
    };
    Some(keys)
}

/// Splits config text into `(line, key, value)` entries.
pub fn parse_lines(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line).ok_or_else(|| CliError::Syntax {
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((i + 1, k, v));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    split_pair(s).ok_or_else(|| CliError::Syntax {
        line: 0,
        msg: format!("override `{s}` is not of the form key=value"),
    })
}

fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k.to_string(), v.to_string()))
}

/// A config with every key of its command resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub command: String,
    pub out: Option<String>,
    values: BTreeMap<&'static str, String>,
    order: &'static [(&'static str, &'static str)],
}

impl Config {
    /// Merges file entries and overrides (later wins) over the defaults.
    pub fn resolve(file: &[(usize, String, String)], overrides: &[(String, String)]) -> CliResult<Self> {
        let mut raw: Vec<(String, String)> = Vec::new();
        let mut seen = BTreeMap::new();
        for (line, k, v) in file {
            if let Some(prev) = seen.insert(k.clone(), *line) {
                return Err(CliError::Syntax {
                    line: *line,
                    msg: format!("key `{k}` already set on line {prev}"),
                });
            }
            raw.push((k.clone(), v.clone()));
        }
        raw.extend(overrides.iter().cloned());

        let command = raw
            .iter()
            .rev()
            .find(|(k, _)| k == "command")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| CliError::BadValue {
                key: "command".into(),
                msg: format!("missing; expected one of {}", COMMANDS.join(", ")),
            })?;
        let order = keys_for(&command).ok_or_else(|| CliError::BadValue {
            key: "command".into(),
            msg: format!("`{command}` is not one of {}", COMMANDS.join(", ")),
        })?;
        let mut values: BTreeMap<&'static str, String> = order.iter().map(|&(k, d)| (k, d.to_string())).collect();
        let mut out = None;
        for (k, v) in raw {
            match k.as_str() {
                "command" => {}
                "out" => out = Some(v),
                _ => {
                    let slot = order.iter().find(|(name, _)| *name == k).ok_or(CliError::UnknownKey {
                        key: k.clone(),
                        command: command.clone(),
                    })?;
                    values.insert(slot.0, v);
                }
            }
        }
        Ok(Config {
            command,
            out,
            values,
            order,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key `{key}` is not declared for `{}`", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).parse().map_err(|e: T::Err| CliError::BadValue {
            key: key.into(),
            msg: format!("cannot parse `{}`: {e}", self.raw(key)),
        })
    }

    /// Comma- or whitespace-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| CliError::BadValue {
                    key: key.into(),
                    msg: format!("cannot parse list entry `{s}`: {e}"),
                })
            })
            .collect()
    }

    /// `auto` maps to `None`.
    pub fn optional<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// The resolved config as config text. Output location is not part of it.
    pub fn render(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, _) in self.order {
            s.push_str(&format!("{k} = {}\n", self.values[k]));
        }
        s
    }
}
