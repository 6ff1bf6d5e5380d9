//! Versioned line-delimited artifact files.
//!
//! Every stage output is a UTF-8 file whose first line is a header
//! record (kind, format version, fingerprint of the producing config,
//! optional parent fingerprint, record count) followed by one JSON
//! record per line. Field order is fixed by struct declaration order,
//! so identical values serialize to identical bytes and files diff
//! cleanly. The record count makes truncation detectable even when a
//! file is cut at a line boundary.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub kind: String,
    pub version: u32,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub records: usize,
}

/// A domain value that can be persisted as a header plus record lines.
pub trait Artifact: Sized {
    const KIND: &'static str;
    const VERSION: u32;

    fn fingerprint(&self) -> &str;

    fn parent(&self) -> Option<&str> {
        None
    }

    /// Serialize the body records, one JSON value per line.
    fn record_lines(&self) -> Result<Vec<String>>;

    /// Rebuild the value from a parsed header and its record lines.
    fn from_parts(header: &ArtifactHeader, records: &[&str]) -> Result<Self>;
}

/// Write an artifact atomically (temp file in the same directory, then
/// rename over the destination).
pub fn store_artifact<A: Artifact>(artifact: &A, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let parent_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| ApsError::Config(format!("artifact path {display} has no parent directory")))?;

    let records = artifact.record_lines()?;
    let header = ArtifactHeader {
        kind: A::KIND.to_string(),
        version: A::VERSION,
        fingerprint: artifact.fingerprint().to_string(),
        parent: artifact.parent().map(str::to_string),
        records: records.len(),
    };

    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir)
        .map_err(|e| ApsError::io(&display, e))?;
    let header_line = serde_json::to_string(&header)
        .map_err(|e| ApsError::Protocol(format!("header serialization failed: {e}")))?;
    writeln!(tmp, "{header_line}").map_err(|e| ApsError::io(&display, e))?;
    for record in &records {
        writeln!(tmp, "{record}").map_err(|e| ApsError::io(&display, e))?;
    }
    tmp.flush().map_err(|e| ApsError::io(&display, e))?;
    tmp.persist(path)
        .map_err(|e| ApsError::io(&display, e.error))?;
    Ok(())
}

/// Load an artifact, verifying kind, version, and record count.
pub fn load_artifact<A: Artifact>(path: &Path) -> Result<A> {
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| ApsError::io(&display, e))?;
    let mut lines = content.lines();

    let header_line = lines
        .next()
        .ok_or_else(|| ApsError::StaleArtifact(format!("{display}: empty file")))?;
    let header: ArtifactHeader = serde_json::from_str(header_line).map_err(|e| {
        ApsError::StaleArtifact(format!("{display}: unreadable header ({e})"))
    })?;

    if header.kind != A::KIND {
        return Err(ApsError::StaleArtifact(format!(
            "{display}: expected kind {:?}, found {:?}",
            A::KIND,
            header.kind
        )));
    }
    if header.version != A::VERSION {
        return Err(ApsError::StaleArtifact(format!(
            "{display}: format version {} does not match expected {}",
            header.version,
            A::VERSION
        )));
    }

    let records: Vec<&str> = lines.collect();
    if records.len() != header.records {
        return Err(ApsError::StaleArtifact(format!(
            "{display}: header promises {} record(s) but file holds {} (truncated or corrupt)",
            header.records,
            records.len()
        )));
    }

    A::from_parts(&header, &records).map_err(|e| match e {
        ApsError::StaleArtifact(m) => ApsError::StaleArtifact(format!("{display}: {m}")),
        other => other,
    })
}

/// Parse one record line, converting failures to stale-artifact errors.
pub fn parse_record<T: serde::de::DeserializeOwned>(line: &str, what: &str) -> Result<T> {
    serde_json::from_str(line)
        .map_err(|e| ApsError::StaleArtifact(format!("bad {what} record: {e}")))
}

/// Serialize one record line.
pub fn to_record<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value)
        .map_err(|e| ApsError::Protocol(format!("record serialization failed: {e}")))
}

impl Artifact for crate::domain::types::PromptDatabase {
    const KIND: &'static str = "prompt-database";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.config_fingerprint
    }

    fn parent(&self) -> Option<&str> {
        self.parent_fingerprint.as_deref()
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        self.prompts.iter().map(to_record).collect()
    }

    fn from_parts(header: &ArtifactHeader, records: &[&str]) -> Result<Self> {
        let prompts = records
            .iter()
            .map(|line| parse_record(line, "prompt"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            prompts,
            config_fingerprint: header.fingerprint.clone(),
            parent_fingerprint: header.parent.clone(),
        })
    }
}
