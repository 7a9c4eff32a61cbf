use super::split::{base_level, heading_rank};
use super::{stage_error, Paper2DagError};
use crate::gateway::{Gateway, Part, StageTag};
use crate::prompts;
use crate::text;

/// Section titles dropped by cleaning, matched as a word prefix of the
/// heading after numbering and emphasis are stripped.
pub const REMOVABLE_SECTIONS: &[&str] = &[
    "abstract",
    "summary",
    "related work",
    "related works",
    "previous work",
    "prior work",
    "background",
    "literature review",
    "appendix",
    "appendices",
    "supplementary",
    "acknowledgement",
    "acknowledgements",
    "acknowledgment",
    "acknowledgments",
    "references",
    "reference",
    "bibliography",
    "citation list",
    "limitations",
    "limitation",
];

pub fn is_removable_heading(heading_text: &str) -> bool {
    let plain: String = heading_text.chars().filter(|c| !matches!(c, '*' | '_' | '`')).collect();
    let norm = text::strip_numbering(&plain).to_lowercase();
    REMOVABLE_SECTIONS.iter().any(|term| {
        norm.strip_prefix(term)
            .is_some_and(|rest| !rest.starts_with(|c: char| c.is_alphanumeric()))
    })
}

/// Rejects binary garbage before any model sees it.
pub(crate) fn reject_corrupt(markdown: &str) -> Result<(), Paper2DagError> {
    if markdown.contains('\0') {
        return Err(Paper2DagError::CorruptInput("contains NUL bytes".into()));
    }
    if markdown.contains('\u{FFFD}') {
        return Err(Paper2DagError::CorruptInput("not valid UTF-8".into()));
    }
    let total = markdown.chars().count();
    let control = markdown
        .chars()
        .filter(|c| c.is_control() && !matches!(c, '\n' | '\r' | '\t'))
        .count();
    if control > 0 && control * 100 >= total {
        return Err(Paper2DagError::CorruptInput(format!("{control} control characters")));
    }
    Ok(())
}

/// Drops every removable section: its heading and everything up to the next
/// heading of the same or higher rank. The first line (the title) is kept.
pub fn deterministic_clean(markdown: &str) -> String {
    let lines: Vec<&str> = markdown.lines().collect();
    let title_idx = lines.iter().position(|l| !l.trim().is_empty());
    let base = base_level(markdown);
    let mut kept = Vec::with_capacity(lines.len());
    let mut skipping: Option<usize> = None;
    for (idx, line) in lines.iter().enumerate() {
        if let Some((level, heading)) = text::heading(line) {
            let rank = heading_rank(level, heading, base);
            if let Some(open) = skipping {
                if rank <= open {
                    skipping = None;
                }
            }
            if skipping.is_none() && Some(idx) != title_idx && is_removable_heading(heading) {
                skipping = Some(rank);
            }
        }
        if skipping.is_none() {
            kept.push(*line);
        }
    }
    let mut out = kept.join("\n");
    if markdown.ends_with('\n') && !out.is_empty() {
        out.push('\n');
    }
    out
}

/// Violations of the deletion-only contract; empty when `output` is sound.
pub fn check_clean(input: &str, output: &str) -> Vec<String> {
    let mut violations = Vec::new();
    let input_lines: Vec<&str> = input.lines().map(str::trim_end).collect();
    let mut cursor = 0;
    for line in output.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()) {
        match input_lines[cursor..].iter().position(|l| *l == line) {
            Some(offset) => cursor += offset + 1,
            None => {
                let shown: String = line.chars().take(80).collect();
                violations.push(format!("line not found in order in the input (rewritten or reordered): `{shown}`"));
                if violations.len() >= 5 {
                    break;
                }
            }
        }
    }
    for line in output.lines() {
        if let Some((_, heading)) = text::heading(line) {
            if is_removable_heading(heading) && first_line(output) != Some(line.trim_end()) {
                violations.push(format!("section `{heading}` should have been deleted"));
            }
        }
    }
    if let Some(title) = first_line(input) {
        if first_line(output) != Some(title) {
            violations.push(format!("title line `{title}` must be kept as the first line"));
        }
    }
    violations
}

fn first_line(text: &str) -> Option<&str> {
    text.lines().map(str::trim_end).find(|l| !l.trim().is_empty())
}

/// Removes a fence wrapping the whole answer unless the input itself starts with one.
pub(crate) fn unfence(answer: &str, input: &str) -> String {
    let trimmed = answer.trim();
    if trimmed.starts_with("```") && !input.trim_start().starts_with("```") {
        let body = trimmed.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
        let body = body.trim_end().strip_suffix("```").unwrap_or(body);
        return body.to_string();
    }
    answer.to_string()
}

/// Model-driven cleaning with the deletion contract enforced mechanically.
pub fn clean(markdown: &str, gateway: &Gateway) -> Result<String, Paper2DagError> {
    reject_corrupt(markdown)?;
    let request = gateway.request(StageTag::DagClean, prompts::CLEAN, vec![Part::text(markdown)]);
    gateway
        .complete_checked(&request, gateway.validation_retries(), |answer| {
            let out = unfence(answer, markdown);
            let violations = check_clean(markdown, &out);
            if violations.is_empty() {
                Ok(out)
            } else {
                Err(violations)
            }
        })
        .map_err(stage_error)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::mock::ScriptedBackend;
    use crate::gateway::GatewayConfig;

    const PAPER: &str = "# A Great Title\nAlice, Bob\n\n# Abstract\nWe do things.\n\n# 1 Introduction\nIntro text.\n\n# 2 Related Work\nOthers did things.\n## 2.1 Older work\nMore.\n\n# 3 Method\nOur method.\n\n# References\n[1] A paper.\n";

    fn gateway(backend: ScriptedBackend) -> Gateway {
        let config = GatewayConfig { backoff_base: std::time::Duration::ZERO, ..GatewayConfig::default() };
        Gateway::new(config, Some(Arc::new(backend))).unwrap()
    }

    #[test]
    fn removable_heading_matching() {
        assert!(is_removable_heading("2 Related Work"));
        assert!(is_removable_heading("**Acknowledgements**"));
        assert!(is_removable_heading("Appendix A: Proofs"));
        assert!(is_removable_heading("REFERENCES"));
        assert!(!is_removable_heading("3 Method"));
        assert!(!is_removable_heading("Backgrounds of art")); // not a word prefix
        assert!(!is_removable_heading("Conclusion and Limitations"));
    }

    #[test]
    fn deterministic_clean_drops_listed_sections() {
        let out = deterministic_clean(PAPER);
        assert!(!out.contains("Related Work"));
        assert!(!out.contains("Older work"));
        assert!(!out.contains("Abstract"));
        assert!(!out.contains("[1] A paper."));
        assert!(out.starts_with("# A Great Title\nAlice, Bob"));
        assert!(out.contains("# 3 Method\nOur method."));
        assert!(check_clean(PAPER, &out).is_empty());
    }

    #[test]
    fn nothing_to_delete_is_identity() {
        let paper = "# T\nA\n\n# 1 Introduction\nx\n\n# 2 Method\ny\n\n# 3 Conclusion\nz\n";
        assert_eq!(deterministic_clean(paper), paper);
    }

    #[test]
    fn paraphrase_is_a_deletion_violation() {
        let out = deterministic_clean(PAPER).replace("Our method.", "Our novel method.");
        let v = check_clean(PAPER, &out);
        assert_eq!(v.len(), 1, "{v:?}");
        let gw = gateway(ScriptedBackend::constant(&out));
        let err = clean(PAPER, &gw).unwrap_err();
        assert!(matches!(err, Paper2DagError::DeletionViolation(_)), "{err:?}");
    }

    #[test]
    fn leftover_section_is_flagged() {
        let v = check_clean(PAPER, PAPER);
        assert!(v.iter().any(|m| m.contains("Related Work")));
    }

    #[test]
    fn llm_clean_accepts_fenced_sound_output() {
        let good = deterministic_clean(PAPER);
        let gw = gateway(ScriptedBackend::constant(&format!("```markdown\n{good}```")));
        assert_eq!(clean(PAPER, &gw).unwrap().trim(), good.trim());
    }

    #[test]
    fn corrupt_input_is_rejected_before_any_call() {
        let backend = Arc::new(ScriptedBackend::constant("x"));
        let gw = Gateway::new(GatewayConfig::default(), Some(backend.clone())).unwrap();
        let err = clean("\0\u{1}\u{2}garbage", &gw).unwrap_err();
        assert!(matches!(err, Paper2DagError::CorruptInput(_)));
        assert_eq!(backend.calls(), 0);
    }
}
