//! Prompt templates.
//!
//! Placeholders follow Python `str.format` rules: `{name}` is substituted,
//! `{{` and `}}` produce literal braces. Any other brace is an error.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::corpus::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("template {template}: no value for placeholder {{{name}}}")]
    MissingField { template: String, name: String },
    #[error("template {template}: unbalanced brace at byte {offset}")]
    Syntax { template: String, offset: usize },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

pub const CONSISTENCY: &str = "consistency";
pub const DECISIVENESS: &str = "decisiveness";
pub const ACCURACY: &str = "accuracy";
pub const EXTRACT_MARKERS: &str = "extract_markers";
pub const STANDARDIZE_MARKERS: &str = "standardize_markers";
pub const SYSTEM_GENERIC: &str = "system_generic";
pub const SYSTEM_METACOGNITIVE: &str = "system_metacognitive";

const BUILTIN: &[(&str, &str)] = &[
    (CONSISTENCY, include_str!("../../resources/templates/consistency.txt")),
    (DECISIVENESS, include_str!("../../resources/templates/decisiveness.txt")),
    (ACCURACY, include_str!("../../resources/templates/accuracy.txt")),
    (EXTRACT_MARKERS, include_str!("../../resources/templates/extract_markers.txt")),
    (STANDARDIZE_MARKERS, include_str!("../../resources/templates/standardize_markers.txt")),
    (SYSTEM_GENERIC, include_str!("../../resources/templates/system_generic.txt")),
    (SYSTEM_METACOGNITIVE, include_str!("../../resources/templates/system_metacognitive.txt")),
    ("task_qa", include_str!("../../resources/templates/task_qa.txt")),
    ("task_qa_unanswerable", include_str!("../../resources/templates/task_qa_unanswerable.txt")),
    ("task_qa_context", include_str!("../../resources/templates/task_qa_context.txt")),
    ("task_multiple_choice", include_str!("../../resources/templates/task_multiple_choice.txt")),
    ("task_nli", include_str!("../../resources/templates/task_nli.txt")),
    (
        "task_hallucination_detection",
        include_str!("../../resources/templates/task_hallucination_detection.txt"),
    ),
];

pub fn task_template_id(kind: TaskKind) -> String {
    format!("task_{}", kind.as_str())
}

/// Template id for a system prompt id such as `generic`.
pub fn system_template_id(system_prompt_id: &str) -> String {
    format!("system_{system_prompt_id}")
}

#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        let texts = BUILTIN
            .iter()
            .map(|(id, text)| (id.to_string(), trim_final_newline(text).to_string()))
            .collect();
        Self { texts }
    }
}

// Resource files end with a newline for the benefit of editors; the prompt does not.
fn trim_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl Templates {
    /// Built-in templates, overridden by any `<id>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            t.texts.insert(id.to_string(), trim_final_newline(&text).to_string());
        }
        Ok(t)
    }

    pub fn get(&self, id: &str) -> Result<&str, TemplateError> {
        self.texts
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.texts.keys().map(String::as_str)
    }

    pub fn render(&self, id: &str, fields: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        render(id, self.get(id)?, fields)
    }
}

pub fn render(id: &str, template: &str, fields: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut literal_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push_str(&template[literal_start..i]);
                out.push('{');
                i += 2;
                literal_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push_str(&template[literal_start..i]);
                out.push('}');
                i += 2;
                literal_start = i;
            }
            b'{' => {
                out.push_str(&template[literal_start..i]);
                let close = template[i + 1..]
                    .find('}')
                    .ok_or(TemplateError::Syntax { template: id.to_string(), offset: i })?;
                let name = &template[i + 1..i + 1 + close];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(TemplateError::Syntax { template: id.to_string(), offset: i });
                }
                let value = fields.get(name).ok_or_else(|| TemplateError::MissingField {
                    template: id.to_string(),
                    name: name.to_string(),
                })?;
                out.push_str(value);
                i += close + 2;
                literal_start = i;
            }
            b'}' => return Err(TemplateError::Syntax { template: id.to_string(), offset: i }),
            _ => i += 1,
        }
    }
    out.push_str(&template[literal_start..]);
    Ok(out)
}
