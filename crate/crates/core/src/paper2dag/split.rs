use std::sync::LazyLock;

use regex::Regex;

use super::{stage_error, Paper2DagError};
use crate::gateway::{Gateway, Part, StageTag};
use crate::prompts;
use crate::text;

pub const SPLIT_DELIMITER: &str = "===SPLIT===";

static DOTTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+(?:\.\d+)+").expect("dotted regex"));
static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:\d+(?:[\s.):\-]|[A-Z])|[IVX]+[.)]?\s)").expect("numbered regex"));

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub title: String,
    /// Verbatim chunk, heading line included.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionSplit {
    /// Text before the first section: title, authors and anything else kept by cleaning.
    pub front_matter: String,
    pub sections: Vec<Section>,
}

/// Smallest heading level below the title line; 1 when there are no headings.
pub(crate) fn base_level(markdown: &str) -> usize {
    let title_idx = markdown.lines().position(|l| !l.trim().is_empty());
    markdown
        .lines()
        .enumerate()
        .filter(|(i, _)| Some(*i) != title_idx)
        .filter_map(|(_, l)| text::heading(l).map(|(lvl, _)| lvl))
        .min()
        .unwrap_or(1)
}

/// Structural depth of a heading: numbered headings rank by their number of
/// components (`3` is 1, `3.2` is 2), others by level relative to `base`.
pub(crate) fn heading_rank(level: usize, heading: &str, base: usize) -> usize {
    let plain = heading.trim_start_matches(['*', '_']);
    if let Some(m) = DOTTED.find(plain) {
        return m.as_str().split('.').count();
    }
    if NUMBERED.is_match(plain) {
        return 1;
    }
    (level + 1).saturating_sub(base).max(1)
}

fn section_title(chunk: &str) -> String {
    let first = chunk.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    match text::heading(first) {
        Some((_, h)) if !h.is_empty() => h.to_string(),
        _ => text::truncate_words(first.trim(), 8).trim_end_matches('.').to_string(),
    }
}

/// Splits at top-level headings, starting from the Introduction (or the first
/// top-level heading after the title when there is none).
pub fn deterministic_split(cleaned: &str) -> SectionSplit {
    let base = base_level(cleaned);
    let title_idx = cleaned.lines().position(|l| !l.trim().is_empty());
    let mut offsets = Vec::new();
    let mut pos = 0;
    for (idx, line) in cleaned.split_inclusive('\n').enumerate() {
        if Some(idx) != title_idx {
            if let Some((level, heading)) = text::heading(line) {
                if heading_rank(level, heading, base) == 1 && level == base {
                    offsets.push((pos, text::strip_numbering(heading).to_lowercase()));
                }
            }
        }
        pos += line.len();
    }
    if offsets.is_empty() {
        // No section headings: everything after the title line is one section.
        let start = title_idx
            .filter(|&i| cleaned.lines().nth(i).is_some_and(|l| text::heading(l).is_some()))
            .map(|i| cleaned.split_inclusive('\n').take(i + 1).map(str::len).sum())
            .unwrap_or(0);
        let body = cleaned[start..].trim();
        let sections = if body.is_empty() {
            Vec::new()
        } else {
            vec![Section { title: section_title(body), body: body.to_string() }]
        };
        return SectionSplit { front_matter: cleaned[..start].to_string(), sections };
    }
    let first = offsets.iter().position(|(_, h)| h.starts_with("introduction")).unwrap_or(0);
    let starts: Vec<usize> = offsets[first..].iter().map(|(p, _)| *p).collect();
    let mut sections = Vec::new();
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(cleaned.len());
        let body = cleaned[start..end].trim();
        if !body.is_empty() {
            sections.push(Section { title: section_title(body), body: body.to_string() });
        }
    }
    SectionSplit { front_matter: cleaned[..starts[0]].to_string(), sections }
}

/// Parses a delimiter-separated answer and checks that the chunks are
/// contiguous, in-order pieces of `input` with nothing but whitespace between them.
pub fn check_split(input: &str, answer: &str) -> Result<SectionSplit, Vec<String>> {
    let chunks: Vec<&str> = answer.split(SPLIT_DELIMITER).map(str::trim).filter(|c| !c.is_empty()).collect();
    if chunks.is_empty() {
        return Err(vec![format!("no chunks found; separate sections with {SPLIT_DELIMITER}")]);
    }
    let mut violations = Vec::new();
    let mut cursor = 0;
    let mut front_end = None;
    for (i, chunk) in chunks.iter().enumerate() {
        let Some(offset) = input[cursor..].find(chunk) else {
            let shown: String = chunk.chars().take(60).collect();
            violations.push(format!("chunk {} (`{shown}`...) is not an unmodified, in-order part of the input", i + 1));
            continue;
        };
        let start = cursor + offset;
        if front_end.is_none() {
            front_end = Some(start);
        } else if !input[cursor..start].trim().is_empty() {
            violations.push(format!("text between chunk {i} and chunk {} was dropped", i + 1));
        }
        cursor = start + chunk.len();
    }
    if violations.is_empty() && !input[cursor..].trim().is_empty() {
        violations.push("text after the last chunk was dropped".into());
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    let sections = chunks
        .iter()
        .map(|c| Section { title: section_title(c), body: c.to_string() })
        .collect();
    Ok(SectionSplit { front_matter: input[..front_end.unwrap_or(0)].to_string(), sections })
}

pub fn split_sections(cleaned: &str, gateway: &Gateway) -> Result<SectionSplit, Paper2DagError> {
    if cleaned.trim().is_empty() {
        return Err(Paper2DagError::EmptyPaper);
    }
    let request = gateway.request(StageTag::DagSplit, prompts::SECTION_SPLIT, vec![Part::text(cleaned)]);
    gateway
        .complete_checked(&request, gateway.validation_retries(), |answer| {
            check_split(cleaned, &super::clean::unfence(answer, cleaned))
        })
        .map_err(stage_error)
}
