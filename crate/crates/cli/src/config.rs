//! `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # comment
//! [train]
//! method = slsi
//! updates = 20000
//! ```
//!
//! Every section and key must be known; values are parsed by the command
//! that uses them, and command-line flags take precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Known sections and their keys.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("generate.transport-flow", &["grid", "times", "t-end", "half-width", "noise", "noise-seed"]),
    (
        "generate.burgers",
        &["grid", "viscosity", "horizon", "samples", "f", "advection", "max-substeps", "noise", "noise-seed"],
    ),
    (
        "generate.lti",
        &["n", "seed", "margin", "trajectories", "dt", "steps", "inputs", "noise", "noise-seed"],
    ),
    ("compress", &["rank", "energy", "center"]),
    (
        "train",
        &[
            "method",
            "updates",
            "lr-min",
            "lr-max",
            "cycle",
            "beta1",
            "beta2",
            "adam-eps",
            "init-std",
            "seed",
            "unroll",
        ],
    ),
    ("simulate", &["dt", "steps", "t0", "trajectory"]),
    ("evaluate", &["trajectory"]),
    ("spectrum", &["zoom"]),
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(format!("line {lineno}: unknown section [{name}]"));
                }
                cfg.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {lineno}: expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let section = current
                .as_deref()
                .ok_or_else(|| format!("line {lineno}: `{key}` appears before any [section]"))?;
            let allowed = SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(format!("line {lineno}: unknown key `{key}` in [{section}]"));
            }
            let entries = cfg.sections.get_mut(section).expect("section created on header");
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(format!("line {lineno}: duplicate key `{key}` in [{section}]"));
            }
        }
        Ok(cfg)
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            entries: self.sections.get(name),
        }
    }
}

pub struct Section<'a> {
    name: String,
    entries: Option<&'a BTreeMap<String, String>>,
}

impl Section<'_> {
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.and_then(|e| e.get(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("config [{}]: bad value `{v}` for `{key}`", self.name)))
            })
            .transpose()
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| {
                            CliError::Usage(format!("config [{}]: bad list entry `{s}` for `{key}`", self.name))
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ConfigFile::parse("# top\n[train]\nmethod = lsi # trailing\nupdates=100\n\n[compress]\nenergy = 0.999\n")
            .unwrap();
        let t = cfg.section("train");
        assert_eq!(t.raw("method"), Some("lsi"));
        assert_eq!(t.get::<usize>("updates").unwrap(), Some(100));
        assert_eq!(t.pick(Some(5usize), "updates", 1).unwrap(), 5);
        assert_eq!(t.pick(None, "seed", 9u64).unwrap(), 9);
        assert_eq!(cfg.section("compress").get::<f64>("energy").unwrap(), Some(0.999));
        assert_eq!(cfg.section("simulate").raw("dt"), None);
    }

    #[test]
    fn rejects_unknown_and_malformed_entries() {
        assert!(ConfigFile::parse("[train]\ncolour = red\n").unwrap_err().contains("unknown key"));
        assert!(ConfigFile::parse("[nope]\n").unwrap_err().contains("unknown section"));
        assert!(ConfigFile::parse("updates = 3\n").unwrap_err().contains("before any"));
        assert!(ConfigFile::parse("[train]\nupdates\n").is_err());
        assert!(ConfigFile::parse("[train]\nseed = 1\nseed = 2\n").unwrap_err().contains("duplicate"));
        let cfg = ConfigFile::parse("[train]\nupdates = many\n").unwrap();
        assert!(cfg.section("train").get::<usize>("updates").is_err());
    }

    #[test]
    fn lists() {
        let cfg = ConfigFile::parse("[generate.burgers]\nf = 1.0, 1.75 ,2\n").unwrap();
        assert_eq!(cfg.section("generate.burgers").list::<f64>("f").unwrap(), Some(vec![1.0, 1.75, 2.0]));
    }
}
