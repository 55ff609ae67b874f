//! Prompt templates and placeholder substitution.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_SELECTOR_FIRST: &str = "feature_selector_first";
pub const EVIDENCE_PRUNING: &str = "evidence_pruning";
pub const FEATURE_SELECTOR_SECOND: &str = "feature_selector_second";
pub const DECISION: &str = "decision";

pub const TEMPLATE_NAMES: [&str; 4] = [
    FEATURE_SELECTOR_FIRST,
    EVIDENCE_PRUNING,
    FEATURE_SELECTOR_SECOND,
    DECISION,
];

/// Separates the system instruction from the user prompt in a template file.
pub const USER_MARKER: &str = "\n=== USER ===\n";

const BUILTIN: [(&str, &str); 4] = [
    (
        FEATURE_SELECTOR_FIRST,
        include_str!("../../templates/feature_selector_first.txt"),
    ),
    (EVIDENCE_PRUNING, include_str!("../../templates/evidence_pruning.txt")),
    (
        FEATURE_SELECTOR_SECOND,
        include_str!("../../templates/feature_selector_second.txt"),
    ),
    (DECISION, include_str!("../../templates/decision.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let (system, user) = text
            .split_once(USER_MARKER)
            .ok_or_else(|| Error::invalid(format!("template `{name}` lacks the user section marker")))?;
        Ok(Self {
            system: system.to_string(),
            user: user.strip_suffix('\n').unwrap_or(user).to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    /// The templates compiled into the library.
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| {
                let t = Template::parse(name, text).expect("built-in templates are well formed");
                (name.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    /// Reads `<name>.txt` for each of the four templates from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            templates.insert(name.to_string(), Template::parse(name, &text)?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: &str) -> Result<&Template> {
        self.templates
            .get(name)
            .ok_or_else(|| Error::UnknownTemplate(name.to_string()))
    }

    /// Renders the system and user text of a template.
    pub fn render(&self, name: &str, bindings: &BTreeMap<&str, String>) -> Result<(String, String)> {
        let t = self.get(name)?;
        Ok((substitute(&t.system, bindings)?, substitute(&t.user, bindings)?))
    }
}

/// Renders a built-in template.
pub fn render_prompt(name: &str, bindings: &BTreeMap<&str, String>) -> Result<(String, String)> {
    TemplateSet::builtin().render(name, bindings)
}

fn is_placeholder(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b == b'_')
}

/// Replaces every `{NAME}` (upper-case letters and underscores) in one pass;
/// substituted text is never scanned again.
pub fn substitute(text: &str, bindings: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_placeholder(&after[..close]) => {
                let name = &after[..close];
                let value = bindings
                    .get(name)
                    .ok_or_else(|| Error::Unbound(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
