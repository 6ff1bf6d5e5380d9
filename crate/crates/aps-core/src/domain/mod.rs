//! Shared domain types, answer canonicalization, corpus ingestion, and
//! the artifact file format.

pub mod artifact;
pub mod canon;
pub mod corpus;
pub mod types;

pub use artifact::{load_artifact, store_artifact, Artifact, ArtifactHeader};
pub use canon::{canonical_answer, canonical_number, format_number, CanonicalAnswer};
pub use corpus::{load_corpus, CorpusFormat};
pub use types::{
    AnswerType, PairsMode, PipelineConfig, PreferenceTuple, Prompt, PromptDatabase, QAExample,
    Split,
};

use std::collections::HashMap;

/// Index over a loaded corpus for id lookups.
pub struct ExampleIndex<'a> {
    by_id: HashMap<&'a str, &'a QAExample>,
}

impl<'a> ExampleIndex<'a> {
    pub fn new(examples: &'a [QAExample]) -> Self {
        ExampleIndex {
            by_id: examples.iter().map(|e| (e.id.as_str(), e)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&'a QAExample> {
        self.by_id.get(id).copied()
    }
}
