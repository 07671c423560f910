//! Part-name mapping `(object, affordance) → part`.
//!
//! File format: UTF-8, one record per line, `object<TAB>affordance<TAB>part`.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartMapping {
    entries: BTreeMap<(String, String), String>,
}

impl PartMapping {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; duplicates and empty fields are rejected.
    pub fn insert(&mut self, object: &str, affordance: &str, part: &str) -> Result<()> {
        if object.is_empty() || affordance.is_empty() || part.trim().is_empty() {
            return Err(Error::Invalid(format!("empty field in mapping entry ({object:?}, {affordance:?}, {part:?})")));
        }
        let key = (object.to_string(), affordance.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::Invalid(format!("duplicate mapping for ({object}, {affordance})")));
        }
        self.entries.insert(key, part.to_string());
        Ok(())
    }

    pub fn get(&self, object: &str, affordance: &str) -> Option<&str> {
        self.entries.get(&(object.to_string(), affordance.to_string())).map(String::as_str)
    }

    pub fn lookup(&self, object: &str, affordance: &str) -> Result<&str> {
        self.get(object, affordance).ok_or_else(|| Error::MissingMapping {
            object: object.to_string(),
            affordance: affordance.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.entries.iter().map(|((o, a), p)| (o.as_str(), a.as_str(), p.as_str()))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Mapping { path: path.to_path_buf(), line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let (o, a, p) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if o.is_empty() || a.is_empty() {
                return Err(err("empty object or affordance".into()));
            }
            if p.is_empty() {
                return Err(err(format!("empty part for ({o}, {a})")));
            }
            if out.get(o, a).is_some() {
                return Err(err(format!("duplicate key ({o}, {a}): {line}")));
            }
            out.entries.insert((o.to_string(), a.to_string()), p.to_string());
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# object\taffordance\tpart\n");
        for (o, a, p) in self.iter() {
            s.push_str(&format!("{o}\t{a}\t{p}\n"));
        }
        s
    }
}

pub fn load_part_mapping(path: &Path) -> Result<PartMapping> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PartMapping::parse(&text, path)
}
