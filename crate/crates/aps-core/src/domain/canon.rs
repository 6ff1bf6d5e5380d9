//! Final-answer extraction and normalization.
//!
//! Model outputs are free text; accuracy is computed on a canonical
//! final answer. Free-form numeric outputs canonicalize to the last
//! number token; multiple-choice outputs to the option letter nearest
//! the end of the text. A missing answer is an explicit sentinel so a
//! refusal can never accidentally match a gold answer.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::types::AnswerType;

/// A normalized final answer, or the explicit absence of one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum CanonicalAnswer {
    Answer(String),
    NoAnswer,
}

impl CanonicalAnswer {
    pub fn as_option(&self) -> Option<&str> {
        match self {
            CanonicalAnswer::Answer(s) => Some(s),
            CanonicalAnswer::NoAnswer => None,
        }
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, CanonicalAnswer::Answer(_))
    }
}

impl From<Option<String>> for CanonicalAnswer {
    fn from(value: Option<String>) -> Self {
        match value {
            Some(s) => CanonicalAnswer::Answer(s),
            None => CanonicalAnswer::NoAnswer,
        }
    }
}

impl From<CanonicalAnswer> for Option<String> {
    fn from(value: CanonicalAnswer) -> Self {
        match value {
            CanonicalAnswer::Answer(s) => Some(s),
            CanonicalAnswer::NoAnswer => None,
        }
    }
}

impl std::fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CanonicalAnswer::Answer(s) => write!(f, "{s}"),
            CanonicalAnswer::NoAnswer => write!(f, "<no-answer>"),
        }
    }
}

static NUMBER_TOKEN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"[-+]?(?:[$€£¥]\s?)?(?:\d[\d,]*(?:\.\d*)?|\.\d+)").unwrap()
});

// Recognized option-letter patterns, scanned jointly; the match that
// ends nearest the end of the text wins. Bare letters count only in
// uppercase, otherwise the article "a" would qualify.
static OPTION_PATTERNS: Lazy<Vec<Regex>> = Lazy::new(|| {
    vec![
        Regex::new(r"(?i)\b(?:answer|option|choice)\s*(?:is|:)?\s*\(?([A-Ea-e])\b").unwrap(),
        Regex::new(r"\(([A-Ea-e])\)").unwrap(),
        Regex::new(r"\b([A-Ea-e])\)").unwrap(),
        Regex::new(r"\b([A-E])\b").unwrap(),
    ]
});

/// Extract and normalize the final answer from raw text.
pub fn canonical_answer(raw: &str, answer_type: AnswerType) -> CanonicalAnswer {
    match answer_type {
        AnswerType::FreeFormNumeric => {
            let last = NUMBER_TOKEN.find_iter(raw).last();
            match last.and_then(|m| canonical_number(m.as_str())) {
                Some(n) => CanonicalAnswer::Answer(n),
                None => CanonicalAnswer::NoAnswer,
            }
        }
        AnswerType::MultipleChoice => {
            let mut best: Option<(usize, String)> = None;
            for pattern in OPTION_PATTERNS.iter() {
                for caps in pattern.captures_iter(raw) {
                    let group = caps.get(1).unwrap();
                    let candidate = (group.end(), group.as_str().to_ascii_uppercase());
                    if best.as_ref().is_none_or(|(end, _)| candidate.0 >= *end) {
                        best = Some(candidate);
                    }
                }
            }
            match best {
                Some((_, letter)) => CanonicalAnswer::Answer(letter),
                None => CanonicalAnswer::NoAnswer,
            }
        }
    }
}

/// Normalize one number token: strip sign noise, currency symbols,
/// commas, and trailing punctuation, then reduce to a canonical decimal
/// form with no trailing fractional zeros and no leading integer zeros.
pub fn canonical_number(token: &str) -> Option<String> {
    let mut s: String = token
        .chars()
        .filter(|c| !matches!(c, '$' | '€' | '£' | '¥' | ',' | ' '))
        .collect();
    if let Some(stripped) = s.strip_prefix('+') {
        s = stripped.to_string();
    }
    while s.ends_with('.') {
        s.pop();
    }
    if s.is_empty() {
        return None;
    }

    let negative = s.starts_with('-');
    let digits = if negative { &s[1..] } else { &s[..] };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
        || (int_part.is_empty() && frac_part.is_empty())
    {
        return None;
    }

    let int_trimmed = int_part.trim_start_matches('0');
    let int_canon = if int_trimmed.is_empty() { "0" } else { int_trimmed };
    let frac_canon = frac_part.trim_end_matches('0');

    let mut out = String::new();
    out.push_str(int_canon);
    if !frac_canon.is_empty() {
        out.push('.');
        out.push_str(frac_canon);
    }
    if out == "0" {
        // -0 and -0.00 collapse to plain 0.
        return Some(out);
    }
    if negative {
        return Some(format!("-{out}"));
    }
    Some(out)
}

/// Format an f64 the way `canonical_number` would. Used by the
/// simulator to emit answers that survive extraction.
pub fn format_number(value: f64) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        let text = format!("{value}");
        canonical_number(&text).unwrap_or(text)
    }
}
