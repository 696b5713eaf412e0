//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # comment
//! experiment = ber_sweep
//! seed = 42
//!
//! [ber_sweep]
//! ebn0_db = 0, 5, 10, 15
//! ```
//!
//! Keys before the first header belong to the root section (name `""`).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parse_value<T: FromStr>(&self, key: &str, line: usize, raw: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse::<T>().map_err(|e| Error::Config {
            line,
            msg: format!("[{}] {key} = {raw}: {e}", self.name),
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            Some((line, raw)) => self.parse_value(key, *line, raw),
            None => Err(Error::MissingKey { section: self.name.clone(), key: key.to_string() }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            Some((line, raw)) => self.parse_value(key, *line, raw),
            None => Ok(default),
        }
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, raw)) = self.entries.get(key) else {
            return Err(Error::MissingKey { section: self.name.clone(), key: key.to_string() });
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| self.parse_value(key, *line, item))
            .collect()
    }

    pub fn get_list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.contains(key) {
            self.get_list(key)
        } else {
            Ok(default)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: Vec<Section>,
    /// Exact text the config was parsed from; hashed into result provenance.
    pub source: String,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = vec![Section::new("")];
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                    line: line_no,
                    msg: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Config { line: line_no, msg: "empty section name".into() });
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(Error::Config { line: line_no, msg: format!("duplicate section [{name}]") });
                }
                sections.push(Section::new(name));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config { line: line_no, msg: "empty key".into() });
            }
            let section = sections.last_mut().expect("root section");
            if section.entries.contains_key(key) {
                return Err(Error::Config { line: line_no, msg: format!("duplicate key `{key}`") });
            }
            section.entries.insert(key.to_string(), (line_no, value.trim().to_string()));
        }
        Ok(Self { sections, source: text.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn root(&self) -> &Section {
        &self.sections[0]
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Named section, or an empty one when absent.
    pub fn section_or_empty(&self, name: &str) -> Section {
        self.section(name).cloned().unwrap_or_else(|| Section::new(name))
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| Error::Config { line: 0, msg: format!("missing section [{name}]") })
    }

    /// Sections whose name starts with `prefix` (e.g. `node.`), in file order.
    pub fn sections_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name.starts_with(prefix))
    }
}
