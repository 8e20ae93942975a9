//! Per-class prompt templates and their expansion into prompt strings.
//!
//! File format, one entry per line (`#` comments allowed):
//!
//! ```text
//! GNSZ.template=eeg showing {} discharge pattern
//! GNSZ.phrase=generalized non-specific seizure
//! ```

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use crate::error::{CoreError, Result};
use crate::vocab::words;

pub const SLOT: &str = "{}";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassTemplate {
    pub template: String,
    pub phrase: String,
}

impl ClassTemplate {
    pub fn expand(&self) -> String {
        self.template.replace(SLOT, &self.phrase)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub classes: BTreeMap<String, ClassTemplate>,
}

impl PromptTemplateSet {
    pub fn parse(text: &str) -> Result<Self> {
        let mut classes: BTreeMap<String, ClassTemplate> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || {
                CoreError::Template(format!(
                    "line {}: expected LABEL.template=... or LABEL.phrase=...",
                    n + 1
                ))
            };
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (label, field) = key.trim().rsplit_once('.').ok_or_else(bad)?;
            let entry = classes.entry(label.to_string()).or_default();
            let slot = match field {
                "template" => &mut entry.template,
                "phrase" => &mut entry.phrase,
                _ => return Err(bad()),
            };
            if !slot.is_empty() {
                return Err(CoreError::Template(format!(
                    "line {}: {key} given twice",
                    n + 1
                )));
            }
            *slot = value.trim().to_string();
        }
        Ok(PromptTemplateSet { classes })
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::parse(&s)
    }

    pub fn insert(&mut self, label: &str, template: &str, phrase: &str) {
        self.classes.insert(
            label.to_string(),
            ClassTemplate {
                template: template.into(),
                phrase: phrase.into(),
            },
        );
    }
}

/// One prompt string per class, in `labels` order.
///
/// Fails when a class has no template, when a prompt contains a class
/// label or a number as a word, or when two classes expand to the same
/// string.
pub fn build_prompts<S: AsRef<str>>(
    labels: &[S],
    templates: &PromptTemplateSet,
) -> Result<Vec<String>> {
    let lowered: HashSet<String> = labels.iter().map(|l| l.as_ref().to_lowercase()).collect();
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let label = label.as_ref();
        let t = templates
            .classes
            .get(label)
            .filter(|t| !t.template.is_empty())
            .ok_or_else(|| CoreError::Template(format!("no template for class '{label}'")))?;
        let text = t.expand();
        for w in words(&text) {
            if lowered.contains(&w) {
                return Err(CoreError::Template(format!(
                    "prompt for '{label}' names class '{w}': {text:?}"
                )));
            }
            if w.chars().any(|c| c.is_ascii_digit()) {
                return Err(CoreError::Template(format!(
                    "prompt for '{label}' contains a number: {text:?}"
                )));
            }
        }
        out.push(text);
    }
    let mut seen = HashSet::new();
    for (label, p) in labels.iter().zip(&out) {
        if !seen.insert(p.as_str()) {
            return Err(CoreError::Template(format!(
                "prompt for '{}' is not distinct from another class: {p:?}",
                label.as_ref()
            )));
        }
    }
    Ok(out)
}
