//! Parsers from raw judge replies to typed verdicts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Tri-state consistency verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    Yes,
    #[serde(rename = "na")]
    NotApplicable,
    No,
}

impl Consistency {
    /// Inconsistency score: yes 0.0, n/a 0.5, no 1.0.
    pub fn inconsistency(self) -> f64 {
        match self {
            Consistency::Yes => 0.0,
            Consistency::NotApplicable => 0.5,
            Consistency::No => 1.0,
        }
    }
}

fn first_word(raw: &str) -> String {
    raw.trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase()
}

/// Anything whose first word is not exactly "yes" or "no" is n/a.
pub fn parse_consistency(raw: &str) -> Consistency {
    match first_word(raw).as_str() {
        "yes" => Consistency::Yes,
        "no" => Consistency::No,
        _ => Consistency::NotApplicable,
    }
}

/// Case- and punctuation-insensitive "True"/"False".
pub fn parse_accuracy(raw: &str) -> Option<bool> {
    match first_word(raw).as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// First decimal number in the reply, clamped to [0, 1].
/// Returns the value and whether clamping changed it.
pub fn parse_decisiveness(raw: &str) -> Option<(f64, bool)> {
    let value = first_number(raw)?;
    let clamped = value.clamp(0.0, 1.0);
    Some((clamped, clamped != value))
}

fn first_number(raw: &str) -> Option<f64> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let starts = bytes[i].is_ascii_digit()
            || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
            || (bytes[i] == b'-'
                && bytes
                    .get(i + 1)
                    .is_some_and(|b| b.is_ascii_digit() || *b == b'.'));
        if starts {
            let mut j = i + 1;
            let mut seen_dot = bytes[i] == b'.';
            while j < bytes.len() {
                match bytes[j] {
                    b'0'..=b'9' => j += 1,
                    b'.' if !seen_dot && bytes.get(j + 1).is_some_and(u8::is_ascii_digit) => {
                        seen_dot = true;
                        j += 1;
                    }
                    _ => break,
                }
            }
            return raw[i..j].parse().ok().filter(|v: &f64| v.is_finite());
        }
        i += 1;
    }
    None
}

/// Lowercase a marker except for the pronoun "I" and its contractions.
/// Curly apostrophes become straight ones and whitespace is collapsed.
pub fn normalize_marker(marker: &str) -> String {
    marker
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split_whitespace()
        .map(|w| {
            let lower = w.to_lowercase();
            let bare = lower.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
            if matches!(bare, "i" | "i'm" | "i've" | "i'd" | "i'll") {
                let mut chars = lower.chars();
                let mut out = String::new();
                for c in chars.by_ref() {
                    if c == 'i' {
                        out.push('I');
                        break;
                    }
                    out.push(c);
                }
                out.extend(chars);
                out
            } else {
                lower
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Semicolon-separated markers up to the `####` terminator (first line only).
pub fn parse_markers(raw: &str) -> Vec<String> {
    let body = raw.split("####").next().unwrap_or("");
    let line = body.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let line = line.trim().strip_prefix("Hedges:").unwrap_or(line.trim());
    line.split(';')
        .map(|m| m.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim())
        .filter(|m| !m.is_empty())
        .map(normalize_marker)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonicalError {
    NoJson(String),
    Missing(Vec<String>),
}

/// Parse the standardization JSON object and project it onto `inputs`.
///
/// The closing brace may be missing because `}` is a stop sequence.
pub fn parse_canonical(raw: &str, inputs: &[String]) -> Result<BTreeMap<String, String>, CanonicalError> {
    let start = raw.find('{').ok_or_else(|| CanonicalError::NoJson("no '{' in reply".into()))?;
    let mut body = raw[start..].trim_end().to_string();
    let parsed: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(&body) {
        Ok(m) => m,
        Err(_) => {
            if let Some(end) = body.rfind('}') {
                body.truncate(end + 1);
            } else {
                body.push('}');
            }
            serde_json::from_str(&body).map_err(|e| CanonicalError::NoJson(e.to_string()))?
        }
    };
    let mut by_lower: BTreeMap<String, &str> = BTreeMap::new();
    for (k, v) in &parsed {
        if let Some(s) = v.as_str() {
            by_lower.insert(normalize_marker(k).to_lowercase(), s);
        }
    }
    let mut out = BTreeMap::new();
    let mut missing = Vec::new();
    for input in inputs {
        let value = parsed
            .get(input)
            .and_then(|v| v.as_str())
            .or_else(|| by_lower.get(&normalize_marker(input).to_lowercase()).copied());
        match value {
            Some(v) if !v.trim().is_empty() => {
                out.insert(input.clone(), normalize_marker(v));
            }
            // Empty canonical forms map to themselves.
            Some(_) => {
                out.insert(input.clone(), input.clone());
            }
            None => missing.push(input.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(CanonicalError::Missing(missing))
    }
}
