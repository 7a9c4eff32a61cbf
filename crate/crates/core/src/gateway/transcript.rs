//! JSON-lines transcript of recorded model exchanges, keyed by request digest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ChatResponse, GatewayError, StageTag, Usage};

/// One line of `transcripts/<run>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub stage: StageTag,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TranscriptEntry {
    pub fn new(digest: &str, stage: StageTag, response: &ChatResponse) -> Self {
        Self {
            digest: digest.to_string(),
            stage,
            response_text: response.text.clone(),
            input_tokens: response.usage.input_tokens,
            output_tokens: response.usage.output_tokens,
        }
    }

    pub fn response(&self) -> ChatResponse {
        ChatResponse {
            text: self.response_text.clone(),
            usage: Usage { input_tokens: self.input_tokens, output_tokens: self.output_tokens },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: IndexMap<String, TranscriptEntry>,
}

impl Transcript {
    /// Reads a transcript file. The first entry wins when a digest repeats.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Io(format!("reading transcript {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut transcript = Transcript::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            transcript.entries.entry(entry.digest.clone()).or_insert(entry);
        }
        Ok(transcript)
    }

    pub fn get(&self, digest: &str) -> Option<&TranscriptEntry> {
        self.entries.get(digest)
    }

    pub fn insert(&mut self, entry: TranscriptEntry) {
        self.entries.entry(entry.digest.clone()).or_insert(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.values()
    }

    /// Writes the whole transcript, one entry per line, sorted by digest.
    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut sorted: Vec<&TranscriptEntry> = self.entries.values().collect();
        sorted.sort_by(|a, b| a.digest.cmp(&b.digest));
        let mut out = String::new();
        for entry in sorted {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| GatewayError::Io(e.to_string()))?;
        }
        fs::write(path, out).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))
    }
}

pub(super) fn append(path: &Path, entry: &TranscriptEntry) -> Result<(), GatewayError> {
    let io = |e: std::io::Error| GatewayError::Io(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut line = serde_json::to_string(entry).expect("entry serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_has_the_five_fields() {
        let entry = TranscriptEntry {
            digest: "abc".into(),
            stage: StageTag::DagDecompose,
            response_text: "{}".into(),
            input_tokens: 5,
            output_tokens: 1,
        };
        let line = serde_json::to_string(&entry).unwrap();
        assert_eq!(
            line,
            r#"{"digest":"abc","stage":"dag_decompose","response_text":"{}","input_tokens":5,"output_tokens":1}"#
        );
        let parsed = Transcript::parse(&format!("{line}\n\n{line}\n")).unwrap();
        assert_eq!(parsed.len(), 1);
    }

    #[test]
    fn malformed_line_is_reported_with_number() {
        let err = Transcript::parse("{\"digest\": 1}\n").unwrap_err();
        assert!(err.starts_with("line 1"));
    }
}
