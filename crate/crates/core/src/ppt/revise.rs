use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use super::audit::{lint, Action, AuditReport, Instruction};
use super::layout::{
    self, disallowed_tags, has_escaped_tags, render_units, slot_units, text_units, LayoutNode, SlotKind, BODY_FONT_MAX,
    BODY_FONT_MIN, LINE_HEIGHT_MAX, SLIDE_HEIGHT, SLIDE_WIDTH,
};
use super::outline::{SlideOutline, TEXT_ONLY_WORDS};
use super::PptError;
use crate::gateway::{extract_json, Gateway, GatewayError, Part, StageTag};
use crate::measure;
use crate::prompts;
use crate::text;

static FONT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(\d+(?:\.\d+)?)\s*pt").expect("font regex"));
static LINE_HEIGHT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)line-?height\D{0,12}?(\d+(?:\.\d+)?)").expect("line-height regex"));
static FLEX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)flex\D{0,12}?(\d+(?:\.\d+)?)").expect("flex regex"));
static WORDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(\d+)\s*words").expect("words regex"));
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"]+)""#).expect("quoted regex"));

/// Reviser input: instructions, the current tree, the outline and the template name.
pub fn revise_request_text(report: &AuditReport, tree: &LayoutNode, outline: &SlideOutline, template: &str) -> String {
    format!(
        "Auditor Instructions:\n{report}\nOriginal Layout Tree (JSON):\n{}\n\nPPT Outline:\n{}\n\nTemplate: {template}",
        serde_json::to_string_pretty(tree).expect("json"),
        serde_json::to_string_pretty(&outline.to_json()).expect("json"),
    )
}

/// Inverse of [`revise_request_text`].
pub fn parse_revise_request(text: &str) -> Option<(AuditReport, LayoutNode, SlideOutline, String)> {
    let rest = text.strip_prefix("Auditor Instructions:\n")?;
    let (report, rest) = rest.split_once("\nOriginal Layout Tree (JSON):\n")?;
    let (tree, rest) = rest.split_once("\n\nPPT Outline:\n")?;
    let (outline, template) = rest.split_once("\n\nTemplate: ")?;
    let template = template.lines().next().unwrap_or("").trim().to_string();
    Some((
        AuditReport::parse(report).ok()?,
        serde_json::from_str(tree).ok()?,
        SlideOutline::from_json(&serde_json::from_str(outline).ok()?).ok()?,
        template,
    ))
}

/// Constraints every revised tree must meet; empty when sound. Topology is
/// compared against `original`: same ids, nesting, slot kinds and image bindings.
pub fn check_revision(original: &LayoutNode, revised: &LayoutNode) -> Vec<String> {
    let mut v = Vec::new();
    topology(original, revised, &mut v);
    for leaf in revised.leaves() {
        if leaf.flex <= 0.0 || !leaf.flex.is_finite() {
            v.push(format!("{}: flex must be positive", leaf.id));
        }
        if leaf.slot != Some(SlotKind::Text) {
            continue;
        }
        let content = leaf.content.as_deref().unwrap_or("");
        if has_escaped_tags(content) {
            v.push(format!("{}: content uses &lt;/&gt;/&amp; escapes; write raw < and > tags", leaf.id));
        }
        let bad = disallowed_tags(content);
        if !bad.is_empty() {
            v.push(format!("{}: tags {bad:?} are not allowed; use only ul, li, p, b, br", leaf.id));
        }
        match leaf.typography {
            None => v.push(format!("{}: typography is required", leaf.id)),
            Some(t) => {
                if !(BODY_FONT_MIN..=BODY_FONT_MAX).contains(&t.font_size) {
                    v.push(format!("{}: font-size {}pt outside [16, 24]pt", leaf.id, t.font_size));
                }
                if !(1.0..=LINE_HEIGHT_MAX).contains(&t.line_height) {
                    v.push(format!("{}: line-height {} outside [1, 1.5]", leaf.id, t.line_height));
                }
            }
        }
    }
    v
}

fn topology(a: &LayoutNode, b: &LayoutNode, v: &mut Vec<String>) {
    if a.id != b.id {
        v.push(format!("node `{}` was replaced by `{}`; the layout topology must not change", a.id, b.id));
        return;
    }
    if a.slot != b.slot || a.direction != b.direction {
        v.push(format!("{}: slot kind or direction changed", a.id));
    }
    if a.image.as_ref().map(|i| &i.name) != b.image.as_ref().map(|i| &i.name) {
        v.push(format!("{}: image binding changed", a.id));
    }
    if a.children.len() != b.children.len() {
        v.push(format!("{}: expected {} children, found {}", a.id, a.children.len(), b.children.len()));
        return;
    }
    for (x, y) in a.children.iter().zip(&b.children) {
        topology(x, y, v);
    }
}

/// Model-free reviser applying the precise instructions produced by the lint.
pub fn deterministic_revise(tree: &LayoutNode, report: &AuditReport, outline: &SlideOutline, template: &str) -> LayoutNode {
    let mut out = tree.clone();
    let text_ids: Vec<String> = out.leaves().filter(|l| l.slot == Some(SlotKind::Text)).map(|l| l.id.clone()).collect();
    let units = text_units(outline, template);
    let share = |id: &str| -> Vec<String> {
        let idx = text_ids.iter().position(|t| t == id).unwrap_or(0);
        slot_units(&units, idx, text_ids.len())
    };
    let per_slot = (TEXT_ONLY_WORDS / text_ids.len().max(1)).max(1);
    for Instruction { target, action, detail } in &report.instructions {
        let Some(node) = out.find_mut(target) else { continue };
        match action {
            Action::Resize => {
                if let Some(f) = FLEX.captures(detail).and_then(|c| c[1].parse::<f64>().ok()).filter(|f| *f > 0.0) {
                    node.flex = f;
                }
            }
            Action::Typography => {
                let typo = node.typography.get_or_insert(layout::DEFAULT_BODY);
                if let Some(f) = FONT.captures(detail).and_then(|c| c[1].parse::<f64>().ok()) {
                    typo.font_size = if node.slot == Some(SlotKind::Text) { f.clamp(BODY_FONT_MIN, BODY_FONT_MAX) } else { f };
                }
                if let Some(lh) = LINE_HEIGHT.captures(detail).and_then(|c| c[1].parse::<f64>().ok()) {
                    typo.line_height = lh.clamp(1.0, LINE_HEIGHT_MAX);
                }
            }
            Action::Rewrite if has_escaped_tags(node.content.as_deref().unwrap_or("")) => {
                node.content = node.content.as_deref().map(unescape);
            }
            Action::Rewrite | Action::AddContent => {
                let mine = share(target);
                node.content = Some(render_units(&within_words(&mine, per_slot), template));
            }
            Action::RewriteShorten => {
                let limit = WORDS.captures(detail).and_then(|c| c[1].parse().ok()).unwrap_or(per_slot / 2).max(1);
                let current = current_units(node, &share(target));
                node.content = Some(render_units(&within_words(&current, limit), template));
            }
            Action::ModifyTitle => {
                if let Some(q) = QUOTED.captures(detail) {
                    node.heading = Some(q[1].to_string());
                }
            }
        }
    }
    out
}

/// Units currently shown in a slot, falling back to its outline share.
fn current_units(node: &LayoutNode, share: &[String]) -> Vec<String> {
    let shown: Vec<String> = node
        .content
        .as_deref()
        .map(layout::paragraphs)
        .unwrap_or_default()
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    if shown.is_empty() {
        share.to_vec()
    } else {
        shown
    }
}

/// Leading units within `limit` words; a first unit that alone is too long is truncated.
fn within_words(units: &[String], limit: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut words = 0;
    for u in units {
        let n = text::word_count(&text::strip_tags(u));
        if out.is_empty() && n > limit {
            out.push(text::truncate_words(&text::strip_tags(u), limit));
            break;
        }
        if words + n > limit {
            break;
        }
        words += n;
        out.push(u.clone());
    }
    out
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

/// Applies one audit report through the reviser model.
pub fn revise(
    tree: &LayoutNode,
    report: &AuditReport,
    outline: &SlideOutline,
    template: &str,
    gateway: &Gateway,
) -> Result<LayoutNode, PptError> {
    let body = revise_request_text(report, tree, outline, template);
    let request = gateway.request(StageTag::PptRevise, prompts::REVISER, vec![Part::text(body)]);
    gateway
        .complete_checked(&request, gateway.validation_retries(), |answer| {
            let value: Value = extract_json(answer).map_err(|e| vec![e.to_string()])?;
            let revised: LayoutNode = serde_json::from_value(value).map_err(|e| vec![format!("not a layout tree: {e}")])?;
            let violations = check_revision(tree, &revised);
            if violations.is_empty() {
                Ok(revised)
            } else {
                Err(violations)
            }
        })
        .map_err(PptError::from)
}

/// Renderer settings for the vision audit; absent means lint-only audits.
#[derive(Debug, Clone)]
pub struct VisionAudit<'a> {
    pub renderer_cmd: &'a str,
    /// Directory image paths are relative to.
    pub asset_dir: &'a Path,
}

pub fn audit_request_text(tree: &LayoutNode, outline: &SlideOutline, template: &str, history: &[AuditReport]) -> String {
    let mut text = format!(
        "Slide outline:\n{}\n\nLayout tree:\n{}\n\nTemplate: {template}\n\nHistory:\n",
        serde_json::to_string_pretty(&outline.to_json()).expect("json"),
        serde_json::to_string_pretty(tree).expect("json"),
    );
    if history.is_empty() {
        text.push_str("None\n");
    }
    for (i, h) in history.iter().enumerate() {
        text.push_str(&format!("### Round {}\n{h}\n", i + 1));
    }
    text
}

/// Inverse of [`audit_request_text`] up to the history.
pub fn parse_audit_request(text: &str) -> Option<(SlideOutline, LayoutNode, String)> {
    let rest = text.strip_prefix("Slide outline:\n")?;
    let (outline, rest) = rest.split_once("\n\nLayout tree:\n")?;
    let (tree, rest) = rest.split_once("\n\nTemplate: ")?;
    let template = rest.lines().next()?.trim().to_string();
    Some((
        SlideOutline::from_json(&serde_json::from_str(outline).ok()?).ok()?,
        serde_json::from_str(tree).ok()?,
        template,
    ))
}

/// One audit: the lint always, plus the commenter model on a rendering when configured.
pub fn audit(
    tree: &LayoutNode,
    outline: &SlideOutline,
    template: &str,
    history: &[AuditReport],
    vision: Option<&VisionAudit<'_>>,
    gateway: &Gateway,
) -> Result<AuditReport, PptError> {
    let mechanical = lint(tree, template, outline);
    let Some(vision) = vision else { return Ok(mechanical) };
    let prefix = format!("file://{}/", vision.asset_dir.display());
    let html = layout::render(tree, template, &prefix);
    let png = measure::render_html(&html, SLIDE_WIDTH, SLIDE_HEIGHT, Some(vision.renderer_cmd))?;
    let shot = tempfile::Builder::new().suffix(".png").tempfile().map_err(|e| PptError::Io(e.to_string()))?;
    std::fs::write(shot.path(), &png).map_err(|e| PptError::Io(e.to_string()))?;
    let request = gateway.request(
        StageTag::PptAudit,
        prompts::COMMENTER,
        vec![Part::text(audit_request_text(tree, outline, template, history)), Part::image(shot.path())],
    );
    let model = gateway
        .complete_checked(&request, gateway.validation_retries(), AuditReport::parse)
        .map_err(|e| match e {
            GatewayError::ValidationExhausted { violations, .. } => PptError::ReportParse(violations),
            other => PptError::Gateway(other),
        })?;
    Ok(mechanical.merge(model))
}

/// Outcome of the audit/revise loop for one slide.
#[derive(Debug, Clone)]
pub struct Refined {
    pub tree: LayoutNode,
    pub history: Vec<AuditReport>,
    pub warnings: Vec<String>,
}

/// Alternates audit and revision until a PASS or `max_audits` audits. The
/// hard limits (font and line-height bounds, raw tags) are enforced on the
/// final tree whatever the loop produced.
pub fn refine_loop(
    tree: LayoutNode,
    outline: &SlideOutline,
    template: &str,
    max_audits: usize,
    vision: Option<&VisionAudit<'_>>,
    gateway: &Gateway,
) -> Result<Refined, PptError> {
    let mut tree = tree;
    let mut history: Vec<AuditReport> = Vec::new();
    let mut warnings = Vec::new();
    for round in 0..max_audits.max(1) {
        let report = audit(&tree, outline, template, &history, vision, gateway)?;
        let pass = report.is_pass();
        history.push(report);
        if pass {
            break;
        }
        if round + 1 < max_audits.max(1) {
            tree = revise(&tree, history.last().expect("just pushed"), outline, template, gateway)?;
        }
    }
    if !history.last().is_some_and(AuditReport::is_pass) {
        warnings.push(format!("slide did not pass within {} audits: {}", history.len(), history.last().map(|r| r.reason.as_str()).unwrap_or("")));
        if enforce_hard_limits(&mut tree) {
            warnings.push("typography or markup clamped to the hard limits".into());
        }
    }
    Ok(Refined { tree, history, warnings })
}

/// Clamps body typography into bounds and decodes entity-escaped tags.
/// Returns whether anything changed.
pub fn enforce_hard_limits(tree: &mut LayoutNode) -> bool {
    let mut changed = false;
    for leaf in tree.leaves_mut() {
        if leaf.slot != Some(SlotKind::Text) {
            continue;
        }
        let typo = leaf.typography.get_or_insert(layout::DEFAULT_BODY);
        let (f, lh) = (typo.font_size.clamp(BODY_FONT_MIN, BODY_FONT_MAX), typo.line_height.clamp(1.0, LINE_HEIGHT_MAX));
        if (f, lh) != (typo.font_size, typo.line_height) {
            typo.font_size = f;
            typo.line_height = lh;
            changed = true;
        }
        if let Some(c) = leaf.content.as_mut() {
            if has_escaped_tags(c) {
                *c = unescape(c);
                changed = true;
            }
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::layout::{fill, SlideTypography};
    use super::super::template::TemplateLibrary;
    use super::*;
    use crate::gateway::mock::ScriptedBackend;
    use crate::gateway::{ChatRequest, GatewayConfig};

    fn slide(text: &str) -> (LayoutNode, SlideOutline) {
        let outline = SlideOutline { text: text.into(), figures: vec![], formulas: vec![], template: None };
        let (tree, _) = fill(TemplateLibrary::embedded().skeleton("T1_TextOnly.html").unwrap(), &outline, "T1_TextOnly.html", "Heading");
        (tree, outline)
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| if i % 8 == 7 { "word." } else { "word" }).collect::<Vec<_>>().join(" ")
    }

    /// Gateway whose reviser applies instructions deterministically.
    fn deterministic_gateway() -> (Gateway, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::new(|req: &ChatRequest| {
            let (report, tree, outline, template) = parse_revise_request(&req.user_text()).expect("revise request");
            let revised = deterministic_revise(&tree, &report, &outline, &template);
            Ok(crate::gateway::mock::reply(req, &serde_json::to_string(&revised).unwrap()))
        }));
        let config = GatewayConfig { backoff_base: std::time::Duration::ZERO, ..GatewayConfig::default() };
        (Gateway::new(config, Some(backend.clone())).unwrap(), backend)
    }

    #[test]
    fn typography_instruction_changes_only_font() {
        let (tree, outline) = slide(&words(48));
        let report = AuditReport::parse("Status: NEEDS_REVISION\nReason: r\n- [TARGET: text-1] -> [ACTION: TYPOGRAPHY] -> [DETAIL: increase to 24pt]").unwrap();
        let out = deterministic_revise(&tree, &report, &outline, "T1_TextOnly.html");
        let mut expect = tree.clone();
        expect.find_mut("text-1").unwrap().typography.as_mut().unwrap().font_size = 24.0;
        assert_eq!(out, expect);
    }

    #[test]
    fn escaped_tags_are_rejected() {
        let (tree, _) = slide(&words(10));
        let mut bad = tree.clone();
        bad.find_mut("text-1").unwrap().content = Some("&lt;ul&gt;&lt;li&gt;x&lt;/li&gt;&lt;/ul&gt;".into());
        assert!(check_revision(&tree, &bad).iter().any(|v| v.contains("escapes")));
    }

    #[test]
    fn topology_is_preserved() {
        let (tree, _) = slide(&words(10));
        let mut bad = tree.clone();
        bad.children.pop();
        assert!(!check_revision(&tree, &bad).is_empty());
        let mut resized = tree.clone();
        resized.find_mut("text-1").unwrap().flex = 3.0;
        assert!(check_revision(&tree, &resized).is_empty());
    }

    #[test]
    fn fourteen_point_slide_passes_on_second_audit() {
        let (mut tree, outline) = slide(&words(48));
        tree.find_mut("text-1").unwrap().typography = Some(SlideTypography { font_size: 14.0, line_height: 1.3 });
        let (gw, backend) = deterministic_gateway();
        let r = refine_loop(tree, &outline, "T1_TextOnly.html", 3, None, &gw).unwrap();
        assert_eq!(r.history.len(), 2);
        assert!(r.history[1].is_pass());
        assert_eq!(backend.calls(), 1);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn never_passing_lint_stops_at_k() {
        let (tree, outline) = slide(&words(120));
        // A reviser that returns the tree unchanged: valid, but the word count never drops.
        let backend = Arc::new(ScriptedBackend::constant(&serde_json::to_string(&tree).unwrap()));
        let gw = Gateway::new(GatewayConfig { backoff_base: std::time::Duration::ZERO, ..Default::default() }, Some(backend.clone())).unwrap();
        let r = refine_loop(tree, &outline, "T1_TextOnly.html", 3, None, &gw).unwrap();
        assert_eq!(r.history.len(), 3);
        assert_eq!(backend.calls(), 2);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn hard_limits_are_clamped() {
        let (mut tree, _) = slide(&words(10));
        tree.find_mut("text-1").unwrap().typography = Some(SlideTypography { font_size: 30.0, line_height: 2.0 });
        assert!(enforce_hard_limits(&mut tree));
        assert_eq!(tree.find("text-1").unwrap().typography, Some(SlideTypography { font_size: 24.0, line_height: 1.5 }));
        assert!(!enforce_hard_limits(&mut tree));
    }

    #[test]
    fn long_slide_is_rewritten_to_target() {
        let (tree, outline) = slide(&words(120));
        let (gw, _) = deterministic_gateway();
        let r = refine_loop(tree, &outline, "T1_TextOnly.html", 3, None, &gw).unwrap();
        assert!(r.history.last().unwrap().is_pass(), "{:?}", r.history);
        assert!(r.tree.body_words() <= 70);
    }

    #[test]
    fn request_round_trips() {
        let (tree, outline) = slide(&words(10));
        let report = AuditReport::pass("ok");
        let (r, t, o, tpl) = parse_revise_request(&revise_request_text(&report, &tree, &outline, "T1_TextOnly.html")).unwrap();
        assert_eq!((r, t, o, tpl.as_str()), (report, tree.clone(), outline.clone(), "T1_TextOnly.html"));
        let (o2, t2, tpl2) = parse_audit_request(&audit_request_text(&tree, &outline, "T1_TextOnly.html", &[])).unwrap();
        assert_eq!((o2, t2, tpl2.as_str()), (outline, tree, "T1_TextOnly.html"));
    }
}
