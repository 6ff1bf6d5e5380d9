//! Corpus ingestion for the three supported line-delimited formats.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::canon::{canonical_answer, CanonicalAnswer};
use super::types::{AnswerType, QAExample, Split};
use crate::error::{ApsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Gsm8k,
    MultiArith,
    Aqua,
}

impl CorpusFormat {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "gsm8k" => Ok(CorpusFormat::Gsm8k),
            "multiarith" => Ok(CorpusFormat::MultiArith),
            "aqua" => Ok(CorpusFormat::Aqua),
            other => Err(ApsError::Config(format!("unknown corpus format {other:?}"))),
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            CorpusFormat::Gsm8k => "gsm8k",
            CorpusFormat::MultiArith => "multiarith",
            CorpusFormat::Aqua => "aqua",
        }
    }
}

#[derive(Deserialize)]
struct FreeFormRecord {
    question: String,
    answer: serde_json::Value,
}

#[derive(Deserialize)]
struct AquaRecord {
    question: String,
    options: Vec<String>,
    #[serde(default)]
    rationale: String,
    correct: String,
}

/// Load one split of a corpus. Records keep file order; ids are stable
/// functions of (format, split, line index).
pub fn load_corpus(path: &Path, format: CorpusFormat, split: Split) -> Result<Vec<QAExample>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| ApsError::io(&display, e))?;
    let reader = BufReader::new(file);

    let split_tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };

    let mut examples = Vec::new();
    let mut seen_ids = HashSet::new();
    for (zero_line, line) in reader.lines().enumerate() {
        let line_no = zero_line + 1;
        let line = line.map_err(|e| ApsError::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let id = format!("{}-{}-{:05}", format.prefix(), split_tag, examples.len());
        let example = parse_record(&line, format, id, split).map_err(|message| {
            ApsError::Parse {
                path: display.clone(),
                line: line_no,
                message,
            }
        })?;
        if !seen_ids.insert(example.id.clone()) {
            return Err(ApsError::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("duplicate example id {}", example.id),
            });
        }
        examples.push(example);
    }
    Ok(examples)
}

fn parse_record(
    line: &str,
    format: CorpusFormat,
    id: String,
    split: Split,
) -> std::result::Result<QAExample, String> {
    match format {
        CorpusFormat::Gsm8k | CorpusFormat::MultiArith => {
            let record: FreeFormRecord =
                serde_json::from_str(line).map_err(|e| format!("bad record: {e}"))?;
            let answer_text = match &record.answer {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(format!("answer field has unsupported type: {other}")),
            };
            // GSM8K answers carry the rationale before a "####" marker.
            let gold_raw = match answer_text.rsplit_once("####") {
                Some((_, tail)) => tail.trim().to_string(),
                None => answer_text,
            };
            let gold = match canonical_answer(&gold_raw, AnswerType::FreeFormNumeric) {
                CanonicalAnswer::Answer(g) => g,
                CanonicalAnswer::NoAnswer => {
                    return Err(format!("gold answer {gold_raw:?} contains no number"))
                }
            };
            QAExample::new(
                id,
                record.question,
                "",
                "",
                gold,
                AnswerType::FreeFormNumeric,
                split,
            )
            .map_err(|e| e.to_string())
        }
        CorpusFormat::Aqua => {
            let record: AquaRecord =
                serde_json::from_str(line).map_err(|e| format!("bad record: {e}"))?;
            if record.options.is_empty() {
                return Err("record has no options".to_string());
            }
            let gold = record.correct.trim().to_ascii_uppercase();
            QAExample::new(
                id,
                record.question,
                record.options.join(" "),
                record.rationale,
                gold,
                AnswerType::MultipleChoice,
                split,
            )
            .map_err(|e| e.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn gsm8k_records_become_free_form_examples() {
        let f = write_lines(&[
            r##"{"question": "2+2?", "answer": "2+2 = 4 #### 4"}"##,
            r##"{"question": "10-3?", "answer": "subtract to get 7 #### 7"}"##,
            r##"{"question": "price?", "answer": "list price #### 72,000"}"##,
        ]);
        let examples = load_corpus(f.path(), CorpusFormat::Gsm8k, Split::Train).unwrap();
        assert_eq!(examples.len(), 3);
        assert!(examples
            .iter()
            .all(|e| e.answer_type == AnswerType::FreeFormNumeric));
        assert_eq!(examples[0].gold_answer, "4");
        assert_eq!(examples[2].gold_answer, "72000");
        assert_eq!(examples[0].id, "gsm8k-train-00000");
        assert_eq!(examples[1].id, "gsm8k-train-00001");
    }

    #[test]
    fn multiarith_accepts_numeric_answer_field() {
        let f = write_lines(&[r#"{"question": "3*4?", "answer": 12}"#]);
        let examples = load_corpus(f.path(), CorpusFormat::MultiArith, Split::Test).unwrap();
        assert_eq!(examples[0].gold_answer, "12");
        assert_eq!(examples[0].split, Split::Test);
    }

    #[test]
    fn aqua_record_keeps_options_and_rationale() {
        let f = write_lines(&[
            r#"{"question": "max students?", "options": ["A)27", "B)81", "C)90", "D)99", "E)110"], "rationale": "at least 45% attended", "correct": "E"}"#,
        ]);
        let examples = load_corpus(f.path(), CorpusFormat::Aqua, Split::Train).unwrap();
        let e = &examples[0];
        assert_eq!(e.answer_type, AnswerType::MultipleChoice);
        assert_eq!(e.gold_answer, "E");
        assert!(e.context.contains("E)110"));
        assert!(e.rationale.contains("45%"));
    }

    #[test]
    fn empty_file_yields_empty_list() {
        let f = write_lines(&[]);
        let examples = load_corpus(f.path(), CorpusFormat::Gsm8k, Split::Train).unwrap();
        assert!(examples.is_empty());
    }

    #[test]
    fn malformed_record_names_line() {
        let f = write_lines(&[
            r##"{"question": "ok", "answer": "so #### 1"}"##,
            r#"{"question": "missing answer"}"#,
        ]);
        let err = load_corpus(f.path(), CorpusFormat::Gsm8k, Split::Train).unwrap_err();
        match err {
            ApsError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_format_tag_is_a_config_error() {
        assert!(matches!(
            CorpusFormat::parse("nope"),
            Err(ApsError::Config(_))
        ));
        assert!(CorpusFormat::parse("GSM8K").is_ok());
    }

    #[test]
    fn ordering_is_preserved_and_deterministic() {
        let f = write_lines(&[
            r##"{"question": "q0", "answer": "so #### 0"}"##,
            r##"{"question": "q1", "answer": "so #### 1"}"##,
            r##"{"question": "q2", "answer": "so #### 2"}"##,
        ]);
        let a = load_corpus(f.path(), CorpusFormat::Gsm8k, Split::Train).unwrap();
        let b = load_corpus(f.path(), CorpusFormat::Gsm8k, Split::Train).unwrap();
        assert_eq!(a, b);
        let questions: Vec<_> = a.iter().map(|e| e.question.as_str()).collect();
        assert_eq!(questions, vec!["q0", "q1", "q2"]);
    }
}
