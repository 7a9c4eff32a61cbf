use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::layout::{
    self, compute_boxes, disallowed_tags, has_escaped_tags, slot_fits, LayoutNode, SlotKind, BODY_FONT_MAX,
    BODY_FONT_MIN, LINE_HEIGHT_MAX, SLIDE_HEIGHT, SLIDE_WIDTH, SLOT_PADDING,
};
use super::outline::{SlideOutline, TEXT_ONLY_WORDS};
use super::template::{CONTENTS, TITLE_SLIDE};
use crate::measure::{self, Rect};
use crate::text;

/// Accepted distance from the word target on text-only slides.
pub const WORD_TOLERANCE: usize = 20;
/// Share of a container a text slot may take from its image siblings.
pub const MAX_TEXT_SHARE: f64 = 0.7;
const FONT_STEP: f64 = 0.5;

static STATUS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\W*Status\W*\[?\s*(PASS|NEEDS_REVISION)\b").expect("status regex"));
static REASON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^\W*Reason\W*(.*)$").expect("reason regex"));
static INSTRUCTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^\s*[-*]\s*\[TARGET:\s*([^\]]+?)\s*\]\s*->\s*\[ACTION:\s*([A-Z_]+)\s*\]\s*->\s*\[DETAIL:\s*(.*?)\s*\]\s*$")
        .expect("instruction regex")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditStatus {
    Pass,
    NeedsRevision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Resize,
    Rewrite,
    AddContent,
    RewriteShorten,
    Typography,
    ModifyTitle,
}

impl Action {
    pub const ALL: [Action; 6] =
        [Action::Resize, Action::Rewrite, Action::AddContent, Action::RewriteShorten, Action::Typography, Action::ModifyTitle];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Resize => "RESIZE",
            Action::Rewrite => "REWRITE",
            Action::AddContent => "ADD_CONTENT",
            Action::RewriteShorten => "REWRITE_SHORTEN",
            Action::Typography => "TYPOGRAPHY",
            Action::ModifyTitle => "MODIFY_TITLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub target: String,
    pub action: Action,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub status: AuditStatus,
    pub reason: String,
    pub instructions: Vec<Instruction>,
}

impl AuditReport {
    pub fn pass(reason: impl Into<String>) -> Self {
        AuditReport { status: AuditStatus::Pass, reason: reason.into(), instructions: Vec::new() }
    }

    pub fn is_pass(&self) -> bool {
        self.status == AuditStatus::Pass
    }

    /// Combines two reports; any revision need wins and instructions are concatenated.
    pub fn merge(mut self, other: AuditReport) -> AuditReport {
        if other.is_pass() {
            return self;
        }
        if self.is_pass() {
            return other;
        }
        self.reason = format!("{} {}", self.reason, other.reason);
        self.instructions.extend(other.instructions);
        self
    }

    /// Parses the two-part commenter format.
    pub fn parse(answer: &str) -> Result<AuditReport, Vec<String>> {
        let Some(status) = STATUS.captures(answer) else {
            return Err(vec!["missing `Status: PASS` or `Status: NEEDS_REVISION` line".into()]);
        };
        let status = if &status[1] == "PASS" { AuditStatus::Pass } else { AuditStatus::NeedsRevision };
        let reason = REASON
            .captures(answer)
            .map(|c| c[1].trim().trim_matches(['[', ']']).trim().to_string())
            .unwrap_or_default();
        let mut instructions = Vec::new();
        let mut violations = Vec::new();
        for c in INSTRUCTION.captures_iter(answer) {
            match Action::ALL.iter().find(|a| a.as_str() == &c[2]) {
                Some(&action) => instructions.push(Instruction {
                    target: c[1].to_string(),
                    action,
                    detail: c[3].to_string(),
                }),
                None => violations.push(format!("unknown action `{}`", &c[2])),
            }
        }
        match status {
            AuditStatus::Pass => instructions.clear(),
            AuditStatus::NeedsRevision if instructions.is_empty() && violations.is_empty() => violations.push(
                "NEEDS_REVISION requires at least one `- [TARGET: ...] -> [ACTION: ...] -> [DETAIL: ...]` line".into(),
            ),
            AuditStatus::NeedsRevision => {}
        }
        if violations.is_empty() {
            Ok(AuditReport { status, reason, instructions })
        } else {
            Err(violations)
        }
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            AuditStatus::Pass => "PASS",
            AuditStatus::NeedsRevision => "NEEDS_REVISION",
        };
        writeln!(f, "## Part 1: Audit Conclusion\nStatus: {status}\nReason: {}\n", self.reason)?;
        writeln!(f, "## Part 2: Engineer-Oriented Instructions")?;
        if self.instructions.is_empty() {
            return writeln!(f, "None");
        }
        for i in &self.instructions {
            writeln!(f, "- [TARGET: {}] -> [ACTION: {}] -> [DETAIL: {}]", i.target, i.action.as_str(), i.detail)?;
        }
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    let r = (x * 100.0).round() / 100.0;
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r}")
    }
}

/// Whether the word target applies: content slides without visuals.
pub fn is_text_only(tree: &LayoutNode, template: &str) -> bool {
    template != TITLE_SLIDE && template != CONTENTS && !tree.contains_image()
}

/// Mechanical audit: typography bounds, tag hygiene, overflow under the
/// text-metrics model and the word target of text-only slides. Instructions
/// are precise enough to be applied without judgment.
pub fn lint(tree: &LayoutNode, template: &str, outline: &SlideOutline) -> AuditReport {
    let mut work = tree.clone();
    let mut out: Vec<Instruction> = Vec::new();
    let mut reasons: Vec<String> = Vec::new();
    let push = |out: &mut Vec<Instruction>, target: &str, action: Action, detail: String| {
        out.push(Instruction { target: target.to_string(), action, detail });
    };

    // Typography and markup, fixed in `work` so the overflow analysis sees the corrected slide.
    for leaf in work.leaves_mut() {
        if leaf.slot != Some(SlotKind::Text) {
            continue;
        }
        let id = leaf.id.clone();
        let typo = leaf.typography.get_or_insert(layout::DEFAULT_BODY);
        let font = typo.font_size.clamp(BODY_FONT_MIN, BODY_FONT_MAX);
        if font != typo.font_size {
            reasons.push(format!("{id} font {}pt outside [16, 24]pt", fmt_num(typo.font_size)));
            push(&mut out, &id, Action::Typography, format!("Set font-size to {}pt.", fmt_num(font)));
            typo.font_size = font;
        }
        if typo.line_height > LINE_HEIGHT_MAX || typo.line_height < 1.0 {
            let lh = typo.line_height.clamp(1.0, LINE_HEIGHT_MAX);
            reasons.push(format!("{id} line-height {} outside [1, 1.5]", fmt_num(typo.line_height)));
            push(&mut out, &id, Action::Typography, format!("Set line-height to {}.", fmt_num(lh)));
            typo.line_height = lh;
        }
        let content = leaf.content.clone().unwrap_or_default();
        if has_escaped_tags(&content) {
            reasons.push(format!("{id} contains entity-escaped tags"));
            push(&mut out, &id, Action::Rewrite, "Replace entity-escaped tags with raw tags.".into());
        } else if !disallowed_tags(&content).is_empty() {
            reasons.push(format!("{id} uses tags outside ul, li, p, b, br"));
            push(&mut out, &id, Action::Rewrite, "Use only ul, li, p, b and br tags.".into());
        }
    }

    // Word target, applied before overflow so shortened text is measured.
    if is_text_only(&work, template) {
        let words = work.body_words();
        let available = text::word_count(&outline.text);
        let text_ids: Vec<String> = work.leaves().filter(|l| l.slot == Some(SlotKind::Text)).map(|l| l.id.clone()).collect();
        if words > TEXT_ONLY_WORDS + WORD_TOLERANCE {
            reasons.push(format!("text-only slide has {words} words, target {TEXT_ONLY_WORDS}"));
            for id in &text_ids {
                push(&mut out, id, Action::Rewrite, format!("Summarize the text to approximately {TEXT_ONLY_WORDS} words."));
            }
        } else if words + WORD_TOLERANCE < TEXT_ONLY_WORDS && available > words {
            reasons.push(format!("text-only slide has {words} words, target {TEXT_ONLY_WORDS}"));
            for id in &text_ids {
                push(&mut out, id, Action::AddContent, format!("Add outline content up to approximately {TEXT_ONLY_WORDS} words."));
            }
        }
    }

    let text_ids: Vec<String> = work
        .leaves()
        .filter(|l| matches!(l.slot, Some(SlotKind::Text | SlotKind::Heading)))
        .map(|l| l.id.clone())
        .collect();
    for id in text_ids {
        if fits(&work, &id) {
            continue;
        }
        reasons.push(format!("{id} overflows its box"));
        if work.find(&id).and_then(|l| l.slot) == Some(SlotKind::Heading) {
            let shortened = fitting_heading(&work, &id);
            push(&mut out, &id, Action::ModifyTitle, format!("Set heading to \"{shortened}\"."));
            continue;
        }
        resolve_overflow(&mut work, &id, &mut out);
    }

    if out.is_empty() {
        AuditReport::pass("Typography within bounds, markup clean, no overflow.")
    } else {
        AuditReport { status: AuditStatus::NeedsRevision, reason: reasons.join("; "), instructions: out }
    }
}

fn fits(tree: &LayoutNode, id: &str) -> bool {
    let boxes = compute_boxes(tree, SLIDE_WIDTH as f64, SLIDE_HEIGHT as f64);
    tree.find(id).is_none_or(|leaf| slot_fits(leaf, boxes[id]))
}

/// Overflow fixes in priority order: take space from image siblings, then
/// reduce the font down to the minimum, then shorten.
fn resolve_overflow(work: &mut LayoutNode, id: &str, out: &mut Vec<Instruction>) {
    let push = |out: &mut Vec<Instruction>, action: Action, detail: String| {
        out.push(Instruction { target: id.to_string(), action, detail });
    };
    // RESIZE against siblings holding images.
    if let Some(parent) = work.parent_of(id) {
        let has_image_sibling = parent.children.iter().any(|c| c.id != id && c.contains_image());
        if has_image_sibling {
            let own = parent.children.iter().find(|c| c.id == id).map(|c| c.flex).unwrap_or(1.0);
            let others: f64 = parent.children.iter().filter(|c| c.id != id).map(|c| c.flex).sum();
            let max_flex = MAX_TEXT_SHARE / (1.0 - MAX_TEXT_SHARE) * others;
            let mut chosen = None;
            let mut flex = own;
            while flex < max_flex {
                flex = (flex * 1.25).min(max_flex);
                set_flex(work, id, flex);
                if fits(work, id) {
                    chosen = Some(flex);
                    break;
                }
            }
            if flex > own {
                let f = chosen.unwrap_or(flex);
                let f = (f * 100.0).ceil() / 100.0;
                set_flex(work, id, f);
                push(out, Action::Resize, format!("Set flex to {} to give the text more space.", fmt_num(f)));
                if fits(work, id) {
                    return;
                }
            }
        }
    }
    // TYPOGRAPHY down to the minimum.
    let current = work.find(id).and_then(|l| l.typography).map(|t| t.font_size).unwrap_or(BODY_FONT_MIN);
    let mut size = current;
    while size - FONT_STEP >= BODY_FONT_MIN - 1e-9 {
        size -= FONT_STEP;
        set_font(work, id, size);
        if fits(work, id) {
            push(out, Action::Typography, format!("Set font-size to {}pt.", fmt_num(size)));
            return;
        }
    }
    if size < current {
        push(out, Action::Typography, format!("Set font-size to {}pt.", fmt_num(size)));
    }
    let words = capacity_words(work, id);
    push(out, Action::RewriteShorten, format!("Shorten the text to at most {words} words."));
}

fn set_flex(tree: &mut LayoutNode, id: &str, flex: f64) {
    if let Some(n) = tree.find_mut(id) {
        n.flex = flex;
    }
}

fn set_font(tree: &mut LayoutNode, id: &str, size: f64) {
    if let Some(t) = tree.find_mut(id).and_then(|n| n.typography.as_mut()) {
        t.font_size = size;
    }
}

/// Rough number of words the slot holds at its current typography.
fn capacity_words(tree: &LayoutNode, id: &str) -> usize {
    let boxes = compute_boxes(tree, SLIDE_WIDTH as f64, SLIDE_HEIGHT as f64);
    let (Some(leaf), Some(rect)) = (tree.find(id), boxes.get(id)) else { return 10 };
    let typo = leaf.typography.unwrap_or(layout::DEFAULT_BODY).measure();
    let inner = Rect::new(0.0, 0.0, rect.width - 2.0 * SLOT_PADDING - layout::BULLET_INDENT, rect.height - 2.0 * SLOT_PADDING);
    let lines = (inner.height / typo.line_px()).floor().max(0.0);
    let chars = lines * typo.chars_per_line(inner.width).unwrap_or(0) as f64;
    // One line per bullet is lost to ragged endings; seven characters per word.
    ((chars * 0.8) / 7.0).floor().max(5.0) as usize
}

/// Longest word prefix of the heading that fits its slot.
fn fitting_heading(tree: &LayoutNode, id: &str) -> String {
    let boxes = compute_boxes(tree, SLIDE_WIDTH as f64, SLIDE_HEIGHT as f64);
    let Some(leaf) = tree.find(id) else { return String::new() };
    let heading = leaf.heading.clone().unwrap_or_default();
    let words: Vec<&str> = heading.split_whitespace().collect();
    let rect = boxes[id];
    let typo = leaf.typography.unwrap_or(layout::DEFAULT_BODY).measure();
    for n in (1..=words.len()).rev() {
        let candidate = words[..n].join(" ");
        let ok = measure::text_height(&candidate, rect.width - 2.0 * SLOT_PADDING, &typo)
            .is_ok_and(|h| h <= rect.height - 2.0 * SLOT_PADDING + 1e-6);
        if ok {
            return candidate;
        }
    }
    words.first().map(|w| w.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::super::layout::{fill, SlideTypography};
    use super::super::template::TemplateLibrary;
    use super::*;

    fn slide(text: &str, template: &str) -> (LayoutNode, SlideOutline) {
        let outline = SlideOutline { text: text.into(), figures: vec![], formulas: vec![], template: None };
        let (tree, _) = fill(TemplateLibrary::embedded().skeleton(template).unwrap(), &outline, template, "Heading");
        (tree, outline)
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| if i % 8 == 7 { "word." } else { "word" }).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn clean_slide_passes() {
        let (mut tree, outline) = slide(&words(48), "T1_TextOnly.html");
        tree.find_mut("text-1").unwrap().typography = Some(SlideTypography { font_size: 18.0, line_height: 1.3 });
        assert!(lint(&tree, "T1_TextOnly.html", &outline).is_pass());
    }

    #[test]
    fn small_font_needs_typography() {
        let (mut tree, outline) = slide(&words(48), "T1_TextOnly.html");
        tree.find_mut("text-1").unwrap().typography = Some(SlideTypography { font_size: 14.0, line_height: 1.3 });
        let r = lint(&tree, "T1_TextOnly.html", &outline);
        assert_eq!(r.status, AuditStatus::NeedsRevision);
        assert_eq!(r.instructions[0].action, Action::Typography);
        assert!(r.instructions[0].detail.contains("16pt"));
    }

    #[test]
    fn long_text_only_slide_needs_rewrite() {
        let (tree, outline) = slide(&words(120), "T1_TextOnly.html");
        let r = lint(&tree, "T1_TextOnly.html", &outline);
        assert!(r.instructions.iter().any(|i| i.action == Action::Rewrite));
    }

    #[test]
    fn entity_escapes_are_flagged() {
        let (mut tree, outline) = slide(&words(48), "T1_TextOnly.html");
        tree.find_mut("text-1").unwrap().content = Some("&lt;ul&gt;x&lt;/ul&gt;".into());
        let r = lint(&tree, "T1_TextOnly.html", &outline);
        assert!(r.instructions.iter().any(|i| i.action == Action::Rewrite && i.detail.contains("entity")));
    }

    #[test]
    fn overflow_next_to_image_resizes_first() {
        let lib = TemplateLibrary::embedded();
        let fig = crate::dag::VisualNode {
            name: "![](images/a.png)".into(),
            caption: "Figure 1".into(),
            is_formula: false,
            resolution: crate::dag::Resolution::new(800, 400),
        };
        let outline = SlideOutline { text: words(150), figures: vec![fig], formulas: vec![], template: None };
        let (tree, _) = fill(lib.skeleton("T6_TwoImages2.html").unwrap(), &outline, "T6_TwoImages2.html", "H");
        let r = lint(&tree, "T6_TwoImages2.html", &outline);
        assert_eq!(r.instructions[0].action, Action::Resize, "{r}");
    }

    #[test]
    fn report_round_trips_through_text() {
        let r = AuditReport {
            status: AuditStatus::NeedsRevision,
            reason: "too small".into(),
            instructions: vec![Instruction { target: "text-1".into(), action: Action::Typography, detail: "Set font-size to 16pt.".into() }],
        };
        assert_eq!(AuditReport::parse(&r.to_string()).unwrap(), r);
        let p = AuditReport::pass("fine");
        assert_eq!(AuditReport::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn report_parse_errors() {
        assert!(AuditReport::parse("looks good").is_err());
        assert!(AuditReport::parse("Status: NEEDS_REVISION\nReason: x\nNone").is_err());
        assert!(AuditReport::parse("Status: NEEDS_REVISION\n- [TARGET: a] -> [ACTION: DANCE] -> [DETAIL: x]").is_err());
        let r = AuditReport::parse("Status: [PASS]\nReason: [ok]").unwrap();
        assert!(r.is_pass());
        assert_eq!(r.reason, "ok");
    }
}
