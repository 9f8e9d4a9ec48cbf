//! Rule-based sentence segmentation.
//!
//! A sentence ends at a run of `.`, `!` or `?` (optionally followed by closing
//! quotes or brackets) when the run is followed by whitespace and then an
//! uppercase letter, a digit, or an opening quote. A period does not end a
//! sentence when it closes a listed abbreviation, a single-letter initial or a
//! dotted acronym. Ellipses never end a sentence, and decimal points never
//! qualify because they are not followed by whitespace.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Byte range of one sentence inside the segmented text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    pub index: usize,
}

impl SentenceSpan {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

/// Anything that can split a response into sentences.
pub trait Segmenter: Send + Sync {
    fn segment(&self, text: &str) -> Vec<SentenceSpan>;

    fn sentences<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.segment(text).iter().map(|s| s.slice(text)).collect()
    }
}

pub const DEFAULT_ABBREVIATIONS: &str = include_str!("../resources/abbreviations.txt");

/// The reference segmenter.
#[derive(Debug, Clone)]
pub struct RuleSegmenter {
    abbreviations: HashSet<String>,
}

impl Default for RuleSegmenter {
    fn default() -> Self {
        static SHARED: OnceLock<RuleSegmenter> = OnceLock::new();
        SHARED.get_or_init(|| RuleSegmenter::from_list(DEFAULT_ABBREVIATIONS)).clone()
    }
}

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '\u{bb}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}', '\u{ab}', '*'];

impl RuleSegmenter {
    /// Parse an abbreviation list in the shipped resource format.
    pub fn from_list(list: &str) -> Self {
        let abbreviations = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.trim_end_matches('.').to_lowercase())
            .collect();
        Self { abbreviations }
    }

    pub fn abbreviations(&self) -> impl Iterator<Item = &str> {
        self.abbreviations.iter().map(String::as_str)
    }

    /// True when the period at byte `dot` closes an abbreviation-like token.
    fn is_abbreviation(&self, text: &str, dot: usize) -> bool {
        let before = &text[..dot];
        let token_start = before
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace() || OPENERS.contains(c))
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        let token = &before[token_start..];
        if token.is_empty() {
            return false;
        }
        let mut chars = token.chars();
        let first = chars.next().unwrap();
        // Initials such as "J.", unless followed by a bare one-letter word
        // ("X. Y is Z.") or given as an answer ("Answer: B.").
        if first.is_uppercase() && chars.next().is_none() {
            if before[..token_start].trim_end().ends_with(':') {
                return false;
            }
            let next: String = text[dot + 1..].trim_start().chars().take_while(|c| !c.is_whitespace()).collect();
            let mut n = next.chars();
            let bare_letter = matches!((n.next(), n.next()), (Some(c), None) if c.is_alphabetic());
            return !bare_letter;
        }
        // Dotted acronyms such as "U.S" or "e.g"
        if token.contains('.') && token.split('.').all(|p| p.chars().count() == 1) {
            return true;
        }
        self.abbreviations.contains(&token.to_lowercase())
    }

    fn boundary_after(&self, text: &str, run_start: usize, run_end: usize) -> Option<usize> {
        let run = &text[run_start..run_end];
        // Ellipses, "..", and the unicode ellipsis never split.
        if run.contains("..") || run.contains('\u{2026}') {
            return None;
        }
        if run == "." && self.is_abbreviation(text, run_start) {
            return None;
        }
        let mut end = run_end;
        let rest = &text[run_end..];
        for c in rest.chars() {
            if CLOSERS.contains(&c) {
                end += c.len_utf8();
            } else {
                break;
            }
        }
        let after = &text[end..];
        let trimmed = after.trim_start();
        if trimmed.len() == after.len() || trimmed.is_empty() {
            return None;
        }
        let next = trimmed.chars().next().unwrap();
        if next.is_uppercase() || next.is_ascii_digit() || OPENERS.contains(&next) {
            Some(end)
        } else {
            None
        }
    }
}

impl Segmenter for RuleSegmenter {
    fn segment(&self, text: &str) -> Vec<SentenceSpan> {
        let mut cuts = Vec::new();
        let mut iter = text.char_indices().peekable();
        while let Some((i, c)) = iter.next() {
            if !matches!(c, '.' | '!' | '?' | '\u{2026}') {
                continue;
            }
            let mut run_end = i + c.len_utf8();
            while let Some(&(j, d)) = iter.peek() {
                if matches!(d, '.' | '!' | '?' | '\u{2026}') {
                    run_end = j + d.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            if let Some(cut) = self.boundary_after(text, i, run_end) {
                cuts.push(cut);
            }
        }
        cuts.push(text.len());

        let mut spans = Vec::new();
        let mut start = 0;
        for cut in cuts {
            let piece = &text[start..cut];
            let lead = piece.len() - piece.trim_start().len();
            let trimmed = piece.trim();
            if !trimmed.is_empty() {
                let s = start + lead;
                spans.push(SentenceSpan { start: s, end: s + trimmed.len(), index: spans.len() });
            }
            start = cut;
        }
        spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(text: &str) -> Vec<&str> {
        RuleSegmenter::default().sentences(text)
    }

    #[test]
    fn basic_split() {
        assert_eq!(split("Hello. World."), vec!["Hello.", "World."]);
        assert!(split("").is_empty());
        assert!(split("   \n ").is_empty());
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(
            split("I think it was Dr. Smith. Perhaps in 1999."),
            vec!["I think it was Dr. Smith.", "Perhaps in 1999."]
        );
        assert_eq!(split("Born in Jan. 1950 in town."), vec!["Born in Jan. 1950 in town."]);
        assert_eq!(split("Fruits, e.g. Apples, are good."), vec!["Fruits, e.g. Apples, are good."]);
        assert_eq!(split("It was J. R. R. Tolkien."), vec!["It was J. R. R. Tolkien."]);
        assert_eq!(split("Perhaps X. Y is Z."), vec!["Perhaps X.", "Y is Z."]);
        assert_eq!(split("Answer: B. The rest are wrong."), vec!["Answer: B.", "The rest are wrong."]);
        assert_eq!(split("The U.S. Army won."), vec!["The U.S. Army won."]);
    }

    #[test]
    fn decimals_and_ellipses() {
        assert_eq!(split("Pi is 3.14 roughly. Yes."), vec!["Pi is 3.14 roughly.", "Yes."]);
        assert_eq!(split("Well... Maybe not."), vec!["Well... Maybe not."]);
        assert_eq!(split("Well\u{2026} Maybe not."), vec!["Well\u{2026} Maybe not."]);
    }

    #[test]
    fn requires_capital_digit_or_quote() {
        assert_eq!(split("It is fine. it is lower."), vec!["It is fine. it is lower."]);
        assert_eq!(split("Done! 42 more."), vec!["Done!", "42 more."]);
        assert_eq!(split("Really?! \"Yes\" he said."), vec!["Really?!", "\"Yes\" he said."]);
        assert_eq!(split("He said \"no.\" Then left."), vec!["He said \"no.\"", "Then left."]);
    }

    #[test]
    fn spans_are_ordered_and_trimmed() {
        let text = "  First one.   Second one!\nThird? ";
        let spans = RuleSegmenter::default().segment(text);
        assert_eq!(spans.len(), 3);
        for (i, w) in spans.windows(2).enumerate() {
            assert!(w[0].end <= w[1].start);
            assert_eq!(w[0].index, i);
        }
        assert_eq!(spans[2].slice(text), "Third?");
    }
}
