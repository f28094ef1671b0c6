//! Flat `key = value` text documents with optional `[section]` headers.
//!
//! ```text
//! # comment
//! seed = 7
//!
//! [axial]
//! a = -0.25
//! ```
//!
//! Keys before the first header live in the unnamed section `""`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    path: PathBuf,
    // (section, entries) in file order; entries carry their source line.
    sections: Vec<(String, Vec<(String, String, usize)>)>,
}

impl KvDocument {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut doc = Self::parse_inner(&text, path)?;
        doc.path = path.to_path_buf();
        Ok(doc)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_inner(text, Path::new("<text>"))
    }

    fn parse_inner(text: &str, path: &Path) -> Result<Self> {
        let mut doc = KvDocument {
            path: path.to_path_buf(),
            sections: vec![(String::new(), Vec::new())],
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim().to_string();
                if doc.sections.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                doc.sections.push((name, Vec::new()));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let entries = &mut doc.sections.last_mut().expect("root section").1;
            if entries.iter().any(|(k, ..)| *k == key) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            entries.push((key, value, line_no));
        }
        Ok(doc)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Section names in file order, starting with the unnamed root section.
    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(s, _)| s.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|(s, _)| s == section)
    }

    pub fn keys(&self, section: &str) -> Vec<&str> {
        self.entries(section)
            .map(|e| e.iter().map(|(k, ..)| k.as_str()).collect())
            .unwrap_or_default()
    }

    fn entries(&self, section: &str) -> Option<&Vec<(String, String, usize)>> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .map(|(_, e)| e)
    }

    fn lookup(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entries(section)?
            .iter()
            .find(|(k, ..)| k == key)
            .map(|(_, v, line)| (v.as_str(), *line))
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.lookup(section, key).map(|(v, _)| v)
    }

    pub fn get_parsed<T>(&self, section: &str, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get_parsed_opt(section, key)? {
            Some(v) => Ok(v),
            None => Err(Error::Parse {
                path: self.path.clone(),
                line: 0,
                msg: format!("missing key `{key}` in section [{section}]"),
            }),
        }
    }

    pub fn get_parsed_opt<T>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((raw, line)) = self.lookup(section, key) else {
            return Ok(None);
        };
        raw.parse().map(Some).map_err(|e: T::Err| Error::Parse {
            path: self.path.clone(),
            line,
            msg: format!("bad value `{raw}` for `{key}`: {e}"),
        })
    }
}
