//! Flat `section.key = value` configuration with flag overrides and a
//! resolved snapshot written next to every run's outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::Validation;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            file = parse(&text).map_err(|m| Validation(format!("{}: {m}", path.display())))?;
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Flag value, else config-file value, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`Settings::get`] without a default; absent keys stay absent.
    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(raw.parse::<T>().map_err(|e| Validation(format!("config key `{key}` = `{raw}`: {e}")))?),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.opt::<bool>(key, None)?.unwrap_or(false);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn list<T>(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.get(key, flag, default.to_string())?;
        split_list(&raw).map_err(|e| Validation(format!("`{key}`: {e}")).into())
    }

    /// Directory from the flag, the config file, or `MPP_DATA_DIR`.
    pub fn data_dir(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let dir = match self.opt::<String>(key, flag.map(|p| p.display().to_string()))? {
            Some(d) => d,
            None => {
                let d = std::env::var("MPP_DATA_DIR")
                    .map_err(|_| Validation(format!("no dataset directory: pass --data, set `{key}` or MPP_DATA_DIR")))?;
                self.resolved.insert(key.to_string(), d.clone());
                d
            }
        };
        Ok(PathBuf::from(dir))
    }

    pub fn snapshot(&self, command: &str) -> String {
        let mut out = format!("# resolved configuration of `mpp {command}`\n");
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_snapshot(&self, dir: &Path, command: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{command}.conf"));
        fs::write(&path, self.snapshot(command))?;
        Ok(path)
    }

    /// File keys no command parameter consumed.
    pub fn unused(&self) -> Vec<&str> {
        self.file.keys().filter(|k| !self.resolved.contains_key(*k)).map(|k| k.as_str()).collect()
    }
}

pub fn split_list<T>(raw: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

/// `key = value` lines; `[section]` headers prefix following keys with
/// `section.`; `#` starts a comment.
fn parse(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = format!("{}.", name.trim());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        let key = format!("{section}{}", k.trim());
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{key}`", n + 1));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_snapshot_round_trips() {
        let mut s = Settings {
            file: parse("train.updates = 10\n[model]\npreset = micro # comment\n").unwrap(),
            resolved: BTreeMap::new(),
        };
        assert_eq!(s.get::<usize>("train.updates", None, 1).unwrap(), 10);
        assert_eq!(s.get::<usize>("train.updates", Some(3), 1).unwrap(), 3);
        assert_eq!(s.get::<String>("model.preset", None, "tiny".into()).unwrap(), "micro");
        assert_eq!(s.get::<f64>("train.peak_lr", None, 3e-4).unwrap(), 3e-4);
        let again = parse(&s.snapshot("pretrain")).unwrap();
        assert_eq!(again, s.resolved);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse("just words").is_err());
        assert!(parse("a = 1\na = 2").is_err());
        assert_eq!(split_list::<usize>("16, 64,256").unwrap(), vec![16, 64, 256]);
        assert!(split_list::<usize>("16,x").is_err());
    }
}
