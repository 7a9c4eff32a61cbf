//! Promotion post backend: each selected node becomes a labeled section,
//! the draft gets a headline and hashtags, then each section is restyled.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dag::{self, DagError, ScholarDag, TextNode, TraversalBudget, VisualNode};
use crate::gateway::{Gateway, GatewayError, Part, StageTag};
use crate::paper2dag::RootMetadata;
use crate::ppt::outline::extractive_summary;
use crate::prompts;
use crate::text;

pub const DEFAULT_BUDGET: usize = 5;
/// Allowed relative drift in word count during restyling.
pub const WORD_BAND: f64 = 0.3;
pub const SPECIFIC_TAGS: usize = 3;

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#[^\s#]+$").expect("tag regex"));

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrError {
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrKind {
    IntroductionLike,
    MethodsLike,
    ResultsLike,
    ConclusionLike,
}

impl PrKind {
    pub const ALL: [PrKind; 4] = [PrKind::IntroductionLike, PrKind::MethodsLike, PrKind::ResultsLike, PrKind::ConclusionLike];

    /// Labels the section body must carry, in order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            PrKind::IntroductionLike => &["Key Question:", "Brilliant Idea:"],
            PrKind::MethodsLike => &["Core Methods:"],
            PrKind::ResultsLike => &["Core Results:"],
            PrKind::ConclusionLike => &["Significance/Impact:"],
        }
    }

    pub fn allows_image(self) -> bool {
        self != PrKind::ConclusionLike
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrSection {
    pub node: String,
    pub kind: PrKind,
    /// Labeled Markdown, including the image line when present.
    pub body: String,
    /// Canonical `![](path)` of the attached visual.
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrDocument {
    pub headline: String,
    pub specific_tags: Vec<String>,
    pub community_tag: String,
    pub title: String,
    pub authors: String,
    pub affiliations: Option<String>,
    pub repo_url: Option<String>,
    pub sections: Vec<PrSection>,
    pub refined: bool,
}

impl PrDocument {
    pub fn tags(&self) -> Vec<&str> {
        self.specific_tags.iter().chain(std::iter::once(&self.community_tag)).map(String::as_str).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PrOptions {
    pub budget: usize,
    /// Restyling prompt; swap to target another platform's voice.
    pub style_prompt: String,
}

impl Default for PrOptions {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, style_prompt: prompts::PR_REFINE.to_string() }
    }
}

/// Kinds whose labels occur in `body`.
pub fn kinds_in(body: &str) -> Vec<PrKind> {
    PrKind::ALL.into_iter().filter(|k| k.labels().iter().any(|l| body.contains(l))).collect()
}

/// The node object sent to the section writer.
pub fn node_json(node: &TextNode, visuals: &[&VisualNode]) -> String {
    let items: Vec<_> = visuals
        .iter()
        .map(|v| json!({"name": v.name, "caption": v.caption, "resolution": v.resolution.to_string()}))
        .collect();
    serde_json::to_string_pretty(&json!({"name": node.name, "content": node.content, "visual_node": items})).expect("json")
}

fn strip_fences(answer: &str) -> &str {
    let t = answer.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.split_once('\n').map_or("", |(_, r)| r);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Validates a section answer; the image line is rewritten to its canonical form.
pub fn check_section(answer: &str, node: &str, visuals: &[&VisualNode]) -> Result<PrSection, Vec<String>> {
    let body = strip_fences(answer);
    let mut v = Vec::new();
    let kinds = kinds_in(body);
    let kind = match kinds.as_slice() {
        [k] => Some(*k),
        [] => {
            v.push("no section label found; use exactly one of the four formats".into());
            None
        }
        many => {
            v.push(format!("labels of {} different formats found; choose exactly one", many.len()));
            None
        }
    };
    if let Some(k) = kind {
        for label in k.labels() {
            if !body.contains(label) {
                v.push(format!("missing label \"{label}\""));
            }
        }
    }
    let refs = text::image_markdown(body);
    let paths = text::image_paths(body);
    if refs.len() > 1 {
        v.push(format!("{} images included; choose at most one", refs.len()));
    }
    if let Some(p) = paths.iter().find(|p| !visuals.iter().any(|vis| vis.path() == p.as_str())) {
        v.push(format!("image `{p}` is not in visual_node"));
    }
    if kind == Some(PrKind::ConclusionLike) && !refs.is_empty() {
        v.push("the Significance/Impact format takes no image; omit the image line".into());
    }
    if !v.is_empty() {
        return Err(v);
    }
    let kind = kind.expect("checked above");
    let image = paths.first().map(|p| text::image_ref(p));
    let body = match (&image, refs.first()) {
        (Some(canonical), Some(raw)) => body.replacen(raw.as_str(), canonical, 1),
        _ => body.to_string(),
    };
    Ok(PrSection { node: node.to_string(), kind, body, image })
}

/// Labeled section for one selected node.
pub fn classify_and_summarize(node: &TextNode, visuals: &[&VisualNode], gateway: &Gateway) -> Result<PrSection, PrError> {
    let system = prompts::fill(prompts::GENERATE_PR, "NODE_JSON", "(the node JSON is given in the user message)");
    let request = gateway.request(StageTag::PrOutline, &system, vec![Part::text(node_json(node, visuals))]);
    Ok(gateway.complete_checked(&request, gateway.validation_retries(), |a| check_section(a, &node.name, visuals))?)
}

/// Parses the three-line headline answer.
pub fn check_title_tags(answer: &str) -> Result<(String, Vec<String>, String), Vec<String>> {
    let lines: Vec<&str> = strip_fences(answer).lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut v = Vec::new();
    if lines.len() != 3 {
        v.push(format!("expected exactly three lines, found {}", lines.len()));
    }
    let field = |prefix: &str| lines.iter().find_map(|l| l.strip_prefix(prefix)).map(str::trim);
    let title = field("Title:").unwrap_or_default().to_string();
    if title.is_empty() {
        v.push("missing \"Title:\" line".into());
    }
    let mut tags_of = |prefix: &str, want: usize| -> Vec<String> {
        let Some(raw) = field(prefix) else {
            v.push(format!("missing \"{prefix}\" line"));
            return Vec::new();
        };
        let tags: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
        for t in tags.iter().filter(|t| !TAG.is_match(t)) {
            v.push(format!("`{t}` is not a valid tag: start with # and use no spaces"));
        }
        let valid = tags.iter().filter(|t| TAG.is_match(t)).count();
        if tags.len() != want || valid != want {
            v.push(format!("\"{prefix}\" needs exactly {want} tag(s), found {}", tags.len()));
        }
        tags
    };
    let specific = tags_of("Specific Tag:", SPECIFIC_TAGS);
    let community = tags_of("Community Tag:", 1);
    if v.is_empty() {
        Ok((title, specific, community[0].clone()))
    } else {
        Err(v)
    }
}

/// Headline, three specific tags and one community tag for the draft.
pub fn gen_title_tags(draft: &str, gateway: &Gateway) -> Result<(String, Vec<String>, String), PrError> {
    let system = prompts::fill(prompts::TITLE_HASHTAG, "MD_TEXT", "(the draft is given in the user message)");
    let request = gateway.request(StageTag::PrFinal, &system, vec![Part::text(draft)]);
    Ok(gateway.complete_checked(&request, gateway.validation_retries(), check_title_tags)?)
}

fn image_set(body: &str) -> BTreeSet<String> {
    text::image_markdown(body).into_iter().collect()
}

/// Checks a restyled body against its original.
pub fn check_refinement(original: &str, refined: &str) -> Result<String, Vec<String>> {
    let refined = strip_fences(refined);
    let mut v = Vec::new();
    let (before, after) = (text::word_count(original) as f64, text::word_count(refined) as f64);
    if (after - before).abs() > WORD_BAND * before {
        v.push(format!(
            "{after} words against {before} in the original; stay within {}%",
            (WORD_BAND * 100.0) as u32
        ));
    }
    let (a, b) = (text::image_markdown(original), text::image_markdown(refined));
    if image_set(original) != image_set(refined) || a.len() != b.len() {
        v.push(format!("image references must be kept verbatim: {a:?}"));
    }
    for label in kinds_in(original).iter().flat_map(|k| k.labels()) {
        if !refined.contains(label) {
            v.push(format!("keep the label \"{label}\" exactly"));
        }
    }
    if v.is_empty() {
        Ok(refined.to_string())
    } else {
        Err(v)
    }
}

/// Restyles one section body; empty bodies are returned unchanged.
pub fn refine_style(body: &str, style_prompt: &str, gateway: &Gateway) -> Result<String, PrError> {
    if body.trim().is_empty() {
        return Ok(body.to_string());
    }
    let request = gateway.request(StageTag::PrFinal, style_prompt, vec![Part::text(body)]);
    Ok(gateway.complete_checked(&request, gateway.validation_retries(), |a| check_refinement(body, a))?)
}

/// Header block lines: title, authors, then the optional affiliation and repository lines.
fn header_lines(doc: &PrDocument) -> Vec<String> {
    let mut out = vec![format!("**{}**", doc.title)];
    if !doc.authors.is_empty() {
        out.push(format!("Authors: {}", doc.authors));
    }
    if let Some(a) = &doc.affiliations {
        out.push(format!("Affiliations: {a}"));
    }
    if let Some(u) = &doc.repo_url {
        out.push(format!("Code: {u}"));
    }
    out
}

/// Draft shown to the headline writer: header and sections, no headline yet.
pub fn draft_markdown(doc: &PrDocument) -> String {
    let mut parts = vec![header_lines(doc).join("\n")];
    parts.extend(doc.sections.iter().map(|s| s.body.trim().to_string()));
    parts.join("\n\n") + "\n"
}

/// Final post: headline, tag line, header block, sections.
pub fn render_markdown(doc: &PrDocument) -> String {
    format!("# {}\n{}\n\n{}", doc.headline, doc.tags().join(" "), draft_markdown(doc))
}

pub fn generate_pr(dag: &ScholarDag, gateway: &Gateway, opts: &PrOptions) -> Result<PrDocument, PrError> {
    let selected = dag::bfs_select(dag, TraversalBudget::new(opts.budget)?)?;
    let sections: Vec<PrSection> = selected
        .par_iter()
        .map(|name| {
            let node = dag.node(name).ok_or_else(|| DagError::UnknownNode(name.clone()))?;
            classify_and_summarize(node, &dag.section_visuals(name, &selected), gateway)
        })
        .collect::<Result<_, _>>()?;
    let meta = RootMetadata::from_root(dag.root());
    let mut doc = PrDocument {
        headline: String::new(),
        specific_tags: Vec::new(),
        community_tag: String::new(),
        title: meta.title,
        authors: text::collapse_whitespace(&meta.authors),
        affiliations: meta.affiliations,
        repo_url: meta.repo_url,
        sections,
        refined: false,
    };
    let (headline, specific, community) = gen_title_tags(&draft_markdown(&doc), gateway)?;
    doc.headline = headline;
    doc.specific_tags = specific;
    doc.community_tag = community;
    let bodies: Vec<String> = doc
        .sections
        .par_iter()
        .map(|s| refine_style(&s.body, &opts.style_prompt, gateway))
        .collect::<Result<_, _>>()?;
    for (s, body) in doc.sections.iter_mut().zip(bodies) {
        s.body = body;
    }
    doc.refined = true;
    Ok(doc)
}

fn io(e: impl std::fmt::Display) -> PrError {
    PrError::Io(e.to_string())
}

/// Writes `pr.md` and `pr.json`; referenced images are copied from `asset_dir`.
pub fn export_pr(doc: &PrDocument, out_dir: &Path, asset_dir: Option<&Path>) -> Result<(), PrError> {
    fs::create_dir_all(out_dir).map_err(io)?;
    fs::write(out_dir.join("pr.md"), render_markdown(doc)).map_err(io)?;
    let mut json = serde_json::to_vec_pretty(doc).map_err(io)?;
    json.push(b'\n');
    fs::write(out_dir.join("pr.json"), json).map_err(io)?;
    if let Some(dir) = asset_dir {
        for path in doc.sections.iter().flat_map(|s| text::image_paths(&s.body)) {
            crate::ppt::copy_asset(dir, out_dir, &path).map_err(|e| PrError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Model-free stand-ins
// ---------------------------------------------------------------------------

const INTRO_WORDS: [&str; 6] = ["introduction", "background", "motivation", "overview", "abstract", "preliminar"];
const RESULT_WORDS: [&str; 7] = ["experiment", "result", "evaluation", "ablation", "analysis", "benchmark", "study"];
const CONCLUSION_WORDS: [&str; 5] = ["conclusion", "discussion", "future", "limitation", "summary"];

/// Keyword classifier over the section name; methods by default.
pub fn keyword_kind(name: &str) -> PrKind {
    let lower = name.to_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| lower.contains(w));
    if has(&CONCLUSION_WORDS) {
        PrKind::ConclusionLike
    } else if has(&INTRO_WORDS) {
        PrKind::IntroductionLike
    } else if has(&RESULT_WORDS) {
        PrKind::ResultsLike
    } else {
        PrKind::MethodsLike
    }
}

/// Model-free section answer for a node object as produced by [`node_json`].
pub fn deterministic_section(node: &serde_json::Value) -> String {
    let name = node["name"].as_str().unwrap_or("");
    let content = node["content"].as_str().unwrap_or("");
    let kind = keyword_kind(name);
    let summary = |budget| {
        let s = extractive_summary(content, budget);
        if s.is_empty() {
            format!("{}.", text::strip_numbering(name))
        } else {
            s
        }
    };
    let mut body = match kind {
        PrKind::IntroductionLike => {
            let all = summary(60);
            let sentences = text::sentences(&all);
            let (first, second) = match sentences.split_first() {
                Some((head, tail)) if !tail.is_empty() => (head.clone(), tail.join(" ")),
                _ => (all.clone(), all.clone()),
            };
            format!("Key Question: {first}\nBrilliant Idea: {second}")
        }
        PrKind::MethodsLike => format!("Core Methods: {}", summary(60)),
        PrKind::ResultsLike => format!("Core Results: {}", summary(60)),
        PrKind::ConclusionLike => format!("Significance/Impact: {}", summary(50)),
    };
    if kind.allows_image() {
        let best = node["visual_node"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|v| {
                let name = v["name"].as_str()?;
                let res: crate::dag::Resolution = v["resolution"].as_str()?.parse().ok()?;
                Some((name, res.pixels()))
            })
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)));
        if let Some((name, _)) = best {
            body.push('\n');
            body.push_str(name);
        }
    }
    body
}

/// Model-free headline answer: the draft's title and tags drawn from it.
pub fn deterministic_title_tags(draft: &str) -> String {
    let title = draft
        .lines()
        .find_map(|l| l.trim().strip_prefix("**").and_then(|r| r.strip_suffix("**")))
        .unwrap_or("New research")
        .to_string();
    let mut tags: Vec<String> = Vec::new();
    for word in title.split(|c: char| !c.is_alphanumeric()).filter(|w| w.chars().count() >= 4) {
        let mut chars = word.chars();
        let first = chars.next().map(|c| c.to_uppercase().to_string()).unwrap_or_default();
        let tag = format!("#{first}{}", chars.as_str());
        if !tags.iter().any(|t| t.eq_ignore_ascii_case(&tag)) {
            tags.push(tag);
        }
    }
    for filler in ["#Research", "#Science", "#MachineLearning"] {
        if tags.len() >= SPECIFIC_TAGS {
            break;
        }
        if !tags.iter().any(|t| t == filler) {
            tags.push(filler.into());
        }
    }
    tags.truncate(SPECIFIC_TAGS);
    format!("Title: {title}\nSpecific Tag: {}\nCommunity Tag: #AcademicCommunity", tags.join(" "))
}

/// Model-free restyling: a marker before each label when the word band allows it.
pub fn deterministic_refine(body: &str) -> String {
    let mut out = body.to_string();
    for (label, mark) in [
        ("Key Question:", "❓"),
        ("Brilliant Idea:", "💡"),
        ("Core Methods:", "🛠️"),
        ("Core Results:", "📊"),
        ("Significance/Impact:", "🌍"),
    ] {
        out = out.replacen(label, &format!("{mark} {label}"), 1);
    }
    if check_refinement(body, &out).is_ok() {
        out
    } else {
        body.to_string()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dag::Resolution;
    use crate::gateway::mock::ScriptedBackend;
    use crate::gateway::GatewayConfig;

    fn gateway(backend: Arc<ScriptedBackend>) -> Gateway {
        Gateway::new(GatewayConfig { backoff_base: std::time::Duration::ZERO, ..Default::default() }, Some(backend)).unwrap()
    }

    fn fig(path: &str) -> VisualNode {
        VisualNode { name: text::image_ref(path), caption: "c".into(), is_formula: false, resolution: Resolution::new(640, 480) }
    }

    #[test]
    fn introduction_format() {
        let f = fig("images/a.png");
        let s = check_section("Key Question: Why?\nBrilliant Idea: This.\n![](images/a.png)", "1 Introduction", &[&f]).unwrap();
        assert_eq!(s.kind, PrKind::IntroductionLike);
        assert_eq!(s.image.as_deref(), Some("![](images/a.png)"));
        let e = check_section("Key Question: Why?", "1 Introduction", &[]).unwrap_err();
        assert!(e[0].contains("Brilliant Idea:"));
    }

    #[test]
    fn conclusion_rejects_images() {
        let f = fig("images/a.png");
        let e = check_section("Significance/Impact: Big.\n![](images/a.png)", "Conclusion", &[&f]).unwrap_err();
        assert!(e.iter().any(|v| v.contains("no image")));
        let s = check_section("Significance/Impact: Big.", "Conclusion", &[&f]).unwrap();
        assert_eq!(s.image, None);
    }

    #[test]
    fn methods_without_visual_has_no_image() {
        let node = TextNode::new("Method", "We train a model. It is small.", 1);
        let answer = deterministic_section(&serde_json::from_str(&node_json(&node, &[])).unwrap());
        let backend = Arc::new(ScriptedBackend::constant(&answer));
        let s = classify_and_summarize(&node, &[], &gateway(backend)).unwrap();
        assert!(s.body.starts_with("Core Methods:"));
        assert!(text::image_markdown(&s.body).is_empty());
    }

    #[test]
    fn foreign_image_is_rejected() {
        let e = check_section("Core Results: Up.\n![](images/zzz.png)", "Results", &[]).unwrap_err();
        assert!(e[0].contains("not in visual_node"));
    }

    #[test]
    fn title_tags_parse_and_reject() {
        let ok = check_title_tags("Title: Faster slides\nSpecific Tag: #A #B #C\nCommunity Tag: #D").unwrap();
        assert_eq!(ok, ("Faster slides".into(), vec!["#A".into(), "#B".into(), "#C".into()], "#D".into()));
        let two = check_title_tags("Title: T\nSpecific Tag: #A #B\nCommunity Tag: #D").unwrap_err();
        assert!(two.iter().any(|v| v.contains("exactly 3")));
        let spaced = check_title_tags("Title: T\nSpecific Tag: #Neural Networks #B #C\nCommunity Tag: #D").unwrap_err();
        assert!(spaced.iter().any(|v| v.contains("no spaces")));
    }

    #[test]
    fn two_tags_are_retried() {
        let backend = Arc::new(ScriptedBackend::queue([
            "Title: T\nSpecific Tag: #A #B\nCommunity Tag: #D",
            "Title: T\nSpecific Tag: #A #B #C\nCommunity Tag: #D",
        ]));
        let (_, tags, _) = gen_title_tags("draft", &gateway(backend.clone())).unwrap();
        assert_eq!(tags.len(), 3);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn refinement_keeps_images_and_labels() {
        let body = "Core Results: Accuracy rises on every split we tried.\n![](images/r.png)";
        let refined = deterministic_refine(body);
        assert!(refined.contains("![](images/r.png)"));
        assert!(check_refinement(body, &refined).is_ok());
        assert!(check_refinement(body, "Core Results: Accuracy rises on every split we tried.").is_err());
        assert!(check_refinement(body, "Accuracy rises on every split we tried.\n![](images/r.png)").is_err());
    }

    #[test]
    fn doubled_length_is_retried() {
        let body = "Core Methods: A small encoder reads each page.";
        let doubled = format!("{body} {}", "more words here".repeat(3));
        let backend = Arc::new(ScriptedBackend::queue([doubled, deterministic_refine(body)]));
        refine_style(body, prompts::PR_REFINE, &gateway(backend.clone())).unwrap();
        assert_eq!(backend.calls(), 2);
        assert!(backend.last_request().unwrap().user_text().contains("stay within 30%"));
    }

    #[test]
    fn empty_body_skips_refinement() {
        let backend = Arc::new(ScriptedBackend::constant("x"));
        assert_eq!(refine_style("  ", prompts::PR_REFINE, &gateway(backend.clone())).unwrap(), "  ");
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn header_omits_missing_repo() {
        let doc = PrDocument {
            headline: "H".into(),
            specific_tags: vec!["#A".into(), "#B".into(), "#C".into()],
            community_tag: "#D".into(),
            title: "Paper".into(),
            authors: "A. Author".into(),
            affiliations: None,
            repo_url: None,
            sections: vec![],
            refined: true,
        };
        let md = render_markdown(&doc);
        assert!(md.starts_with("# H\n#A #B #C #D\n"));
        assert!(!md.contains("Code:"));
    }

    #[test]
    fn keyword_kinds() {
        assert_eq!(keyword_kind("1 Introduction"), PrKind::IntroductionLike);
        assert_eq!(keyword_kind("4 Experiments"), PrKind::ResultsLike);
        assert_eq!(keyword_kind("6 Conclusion"), PrKind::ConclusionLike);
        assert_eq!(keyword_kind("3 Approach"), PrKind::MethodsLike);
    }
}
