//! Line-oriented `key = value` text with `[section]` headers.
//!
//! A `#` at the start of a line or after whitespace starts a comment. Keys
//! are unique within a section; sections may not repeat. The same format is
//! used for configs and for run manifests.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .with_context(|| format!("line {lineno}: unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    bail!("line {lineno}: empty section name");
                }
                if doc.section(name).is_some() {
                    bail!("line {lineno}: section [{name}] appears twice");
                }
                doc.sections.push((name.to_string(), Vec::new()));
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {lineno}: expected 'key = value', got '{line}'");
            };
            let section = current
                .as_deref()
                .with_context(|| format!("line {lineno}: key outside of any section"))?;
            let key = key.trim();
            if key.is_empty() {
                bail!("line {lineno}: empty key");
            }
            if doc.get(section, key).is_some() {
                bail!("line {lineno}: duplicate key '{key}' in [{section}]");
            }
            doc.set(section, key, value.trim());
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, kv)| kv.as_slice())
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces, keeping first-insertion order.
    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        let idx = match self.sections.iter().position(|(n, _)| n == section) {
            Some(i) => i,
            None => {
                self.sections.push((section.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        let entries = &mut self.sections[idx].1;
        let value = value.to_string();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => entries.push((key.to_string(), value)),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    let mut prev_space = true;
    for (i, c) in line.char_indices() {
        if c == '#' && prev_space {
            return &line[..i];
        }
        prev_space = c.is_whitespace();
    }
    line
}
