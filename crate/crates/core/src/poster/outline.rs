//! Per-node poster sections: a short summary paragraph wrapped in the
//! section-bar/section-body HTML block.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::PosterError;
use crate::dag::{TextNode, VisualNode};
use crate::gateway::{Gateway, Part, StageTag};
use crate::ppt::outline::{extractive_summary, forbidden_opener};
use crate::prompts;
use crate::text;

pub const MAX_WORDS: usize = 40;
pub const MIN_SENTENCES: usize = 2;
pub const MAX_SENTENCES: usize = 5;
pub const MAX_IMAGES: usize = 2;

static SECTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<section\b").expect("section regex"));
static BAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?is)<div\s+class="section-bar"[^>]*>(.*?)</div>"#).expect("bar regex"));
static BODY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(?i)<div\s+class="section-body""#).expect("body regex"));
static PARAGRAPH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<p\b[^>]*>(.*?)</p>").expect("p regex"));
static IMG_SRC: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(?i)<img\b[^>]*?\bsrc="([^"]*)""#).expect("img regex"));
static LIST: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<(ul|ol|li)\b").expect("list regex"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosterSection {
    pub title: String,
    pub summary: String,
    /// Visual names (`![](path)`), at most two.
    pub images: Vec<String>,
    pub html_block: String,
}

/// Up to two visuals for a section: figures before formulas, then by
/// descending pixel count, then document order.
pub fn representative<'a>(visuals: &[&'a VisualNode]) -> Vec<&'a VisualNode> {
    let mut ranked: Vec<&VisualNode> = visuals.to_vec();
    ranked.sort_by_key(|v| (v.is_formula, std::cmp::Reverse(v.resolution.pixels())));
    ranked.truncate(MAX_IMAGES);
    ranked
}

/// The section block; one `img-section` per image.
pub fn html_block(title: &str, summary: &str, images: &[(String, String)]) -> String {
    let mut out = format!(
        "<section class=\"section\">\n  <div class=\"section-bar\" contenteditable=\"true\">{}</div>\n  <div class=\"section-body\" contenteditable=\"true\">\n    <p>{}</p>\n",
        text::escape_html(title),
        text::escape_html(summary)
    );
    for (src, alt) in images {
        out.push_str(&format!(
            "\n    <div class=\"img-section\">\n      <img src=\"{}\" alt=\"{}\" class=\"figure\" />\n    </div>\n",
            text::escape_html(src),
            text::escape_html(alt)
        ));
    }
    out.push_str("  </div>\n</section>");
    out
}

/// Prompt inputs for one node.
pub fn poster_request_text(node: &TextNode, images: &[&VisualNode]) -> String {
    let section = json!({"name": node.name, "content": node.content});
    let mut out = format!("SECTION_JSON:\n{}\n\nHAS_VISUAL: {}\n", serde_json::to_string_pretty(&section).expect("json"), !images.is_empty());
    if !images.is_empty() {
        let visual: Vec<_> = images
            .iter()
            .map(|v| json!({"name": v.name, "caption": v.caption, "resolution": v.resolution.to_string()}))
            .collect();
        out.push_str(&format!("VISUAL_JSON:\n{}\n", serde_json::to_string_pretty(&visual).expect("json")));
        for v in images {
            out.push_str(&format!("IMAGE_SRC: {}\nALT_TEXT: {}\n", v.path(), text::collapse_whitespace(&v.caption)));
        }
    }
    out
}

pub type ImagePairs = Vec<(String, String)>;

/// Inverse of [`poster_request_text`]: node name, content and (src, alt) pairs.
pub fn parse_poster_request(text: &str) -> Option<(String, String, ImagePairs)> {
    let rest = text.strip_prefix("SECTION_JSON:\n")?;
    let (section, rest) = rest.split_once("\n\nHAS_VISUAL: ")?;
    let section: serde_json::Value = serde_json::from_str(section).ok()?;
    let mut images = Vec::new();
    let mut src = None;
    for line in rest.lines() {
        if let Some(s) = line.strip_prefix("IMAGE_SRC: ") {
            src = Some(s.to_string());
        } else if let (Some(alt), Some(s)) = (line.strip_prefix("ALT_TEXT: "), src.take()) {
            images.push((s, alt.to_string()));
        }
    }
    Some((section["name"].as_str()?.to_string(), section["content"].as_str()?.to_string(), images))
}

/// Sentence floor for a summary of `content`; short sources may yield one sentence.
pub fn min_sentences(content: &str) -> usize {
    let plain = text::strip_tags(&text::collapse_whitespace(content));
    text::sentences(&plain).len().clamp(1, MIN_SENTENCES)
}

/// Checks a summary against the word, sentence and opener rules.
pub fn check_summary(summary: &str, min: usize) -> Vec<String> {
    let mut v = Vec::new();
    let words = text::word_count(summary);
    if words == 0 {
        v.push("summary paragraph is empty".into());
    }
    if words > MAX_WORDS {
        v.push(format!("summary has {words} words; the maximum is {MAX_WORDS}"));
    }
    let n = text::sentences(summary).len();
    if n < min || n > MAX_SENTENCES {
        v.push(format!("summary has {n} sentences; write {min}-{MAX_SENTENCES}"));
    }
    if let Some(o) = forbidden_opener(summary) {
        v.push(format!("summary must not start with \"{o}\""));
    }
    v
}

/// Validates a generated block and extracts its summary paragraph.
pub fn check_poster_answer(answer: &str, name: &str, content: &str, expected_srcs: &[String]) -> Result<String, Vec<String>> {
    let mut v = Vec::new();
    let html = answer.trim();
    let sections = SECTION.find_iter(html).count();
    if sections != 1 {
        v.push(format!("expected exactly one <section class=\"section\"> block, found {sections}"));
    }
    let bars: Vec<String> = BAR.captures_iter(html).map(|c| text::collapse_whitespace(&text::strip_tags(&c[1]))).collect();
    let wanted = text::strip_numbering(name).to_lowercase();
    match bars.as_slice() {
        [bar] if bar.to_lowercase().contains(&wanted) => {}
        [bar] => v.push(format!("section-bar reads \"{bar}\" but must contain \"{name}\"")),
        _ => v.push(format!("expected one section-bar, found {}", bars.len())),
    }
    let bodies = BODY.find_iter(html).count();
    if bodies != 1 {
        v.push(format!("expected one section-body, found {bodies}"));
    }
    if LIST.is_match(html) {
        v.push("bullet lists are not allowed; write one paragraph".into());
    }
    let paragraphs: Vec<String> = PARAGRAPH.captures_iter(html).map(|c| text::collapse_whitespace(&text::strip_tags(&c[1]))).collect();
    let summary = unescape(&paragraphs.join(" "));
    v.extend(check_summary(&summary, min_sentences(content)));
    let srcs: Vec<String> = IMG_SRC.captures_iter(html).map(|c| unescape(&c[1])).collect();
    if srcs != expected_srcs {
        if expected_srcs.is_empty() {
            v.push("no visual was provided; do not output any img-section or img tag".into());
        } else {
            v.push(format!("img-section sources {srcs:?} must be exactly {expected_srcs:?}"));
        }
    }
    if v.is_empty() {
        Ok(summary)
    } else {
        Err(v)
    }
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"").replace("&amp;", "&")
}

/// Model-free summary within the poster limits.
pub fn deterministic_summary(name: &str, content: &str) -> String {
    let summary = extractive_summary(content, MAX_WORDS);
    let min = min_sentences(content);
    if text::sentences(&summary).len() >= min && !summary.is_empty() {
        return summary;
    }
    // Leading sentences too long to keep whole: share the budget.
    let plain = text::collapse_whitespace(&text::strip_tags(content));
    let parts: Vec<String> = text::sentences(&plain)
        .into_iter()
        .filter(|s| forbidden_opener(s).is_none())
        .take(min)
        .map(|s| text::truncate_words(&s, MAX_WORDS / min.max(1)))
        .collect();
    let joined = parts.join(" ");
    if joined.is_empty() || text::sentences(&joined).len() < min {
        format!("{}.", text::strip_numbering(name))
    } else {
        joined
    }
}

/// Model-free block for a parsed request.
pub fn deterministic_poster_block(name: &str, content: &str, images: &[(String, String)]) -> String {
    html_block(name, &deterministic_summary(name, content), images)
}

/// Poster section for one selected node.
pub fn gen_poster_outline(node: &TextNode, visuals: &[&VisualNode], gateway: &Gateway) -> Result<PosterSection, PosterError> {
    let chosen = representative(visuals);
    let srcs: Vec<String> = chosen.iter().map(|v| v.path().to_string()).collect();
    let request = gateway.request(StageTag::PosterOutline, prompts::POSTER_OUTLINE, vec![Part::text(poster_request_text(node, &chosen))]);
    let summary = gateway.complete_checked(&request, gateway.validation_retries(), |answer| {
        check_poster_answer(answer, &node.name, &node.content, &srcs)
    })?;
    let pairs: Vec<(String, String)> =
        chosen.iter().map(|v| (v.path().to_string(), text::collapse_whitespace(&v.caption))).collect();
    Ok(PosterSection {
        title: node.name.clone(),
        html_block: html_block(&node.name, &summary, &pairs),
        summary,
        images: chosen.iter().map(|v| v.name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dag::Resolution;
    use crate::gateway::mock::ScriptedBackend;
    use crate::gateway::GatewayConfig;

    const CONTENT: &str = "Our encoder reads pages. It keeps layout cues. Training is cheap.";

    fn fig(path: &str, w: u32, h: u32, formula: bool) -> VisualNode {
        VisualNode { name: text::image_ref(path), caption: "A plot".into(), is_formula: formula, resolution: Resolution::new(w, h) }
    }

    fn gateway(backend: Arc<ScriptedBackend>) -> Gateway {
        Gateway::new(GatewayConfig { backoff_base: std::time::Duration::ZERO, ..Default::default() }, Some(backend)).unwrap()
    }

    #[test]
    fn representative_prefers_large_figures() {
        let (a, b, c, d) = (fig("a.png", 10, 10, false), fig("b.png", 100, 100, false), fig("c.png", 900, 900, true), fig("d.png", 50, 50, false));
        let picked = representative(&[&a, &b, &c, &d]);
        assert_eq!(picked.iter().map(|v| v.path()).collect::<Vec<_>>(), ["b.png", "d.png"]);
    }

    #[test]
    fn one_figure_block() {
        let node = TextNode::new("Method", CONTENT, 1);
        let f = fig("images/m.png", 800, 600, false);
        let block = deterministic_poster_block(&node.name, &node.content, &[("images/m.png".into(), "A plot".into())]);
        let backend = Arc::new(ScriptedBackend::constant(&block));
        let s = gen_poster_outline(&node, &[&f], &gateway(backend)).unwrap();
        assert_eq!(s.html_block.matches("class=\"img-section\"").count(), 1);
        assert!(s.html_block.contains("src=\"images/m.png\""));
        assert_eq!(s.images, vec!["![](images/m.png)".to_string()]);
    }

    #[test]
    fn no_visual_no_img() {
        let node = TextNode::new("Method", CONTENT, 1);
        let block = deterministic_poster_block(&node.name, &node.content, &[]);
        let backend = Arc::new(ScriptedBackend::constant(&block));
        let s = gen_poster_outline(&node, &[], &gateway(backend)).unwrap();
        assert!(!s.html_block.contains("<img"));
        assert!(s.images.is_empty());
    }

    #[test]
    fn long_summary_is_retried_with_word_violation() {
        let node = TextNode::new("Method", CONTENT, 1);
        let long = html_block("Method", &format!("{}. Second one.", vec!["word"; 53].join(" ")), &[]);
        let good = deterministic_poster_block(&node.name, &node.content, &[]);
        let backend = Arc::new(ScriptedBackend::queue([long, good]));
        gen_poster_outline(&node, &[], &gateway(backend.clone())).unwrap();
        assert_eq!(backend.calls(), 2);
        let retry = backend.last_request().unwrap().user_text();
        assert!(retry.contains("55 words; the maximum is 40"), "{retry}");
    }

    #[test]
    fn request_round_trips() {
        let node = TextNode::new("Method", CONTENT, 1);
        let f = fig("images/m.png", 800, 600, false);
        let (name, content, images) = parse_poster_request(&poster_request_text(&node, &[&f])).unwrap();
        assert_eq!((name.as_str(), content.as_str()), ("Method", CONTENT));
        assert_eq!(images, vec![("images/m.png".to_string(), "A plot".to_string())]);
    }

    #[test]
    fn deterministic_summary_respects_limits() {
        let long = format!("{} end. {} end. Tail.", vec!["alpha"; 30].join(" "), vec!["beta"; 30].join(" "));
        let s = deterministic_summary("X", &long);
        assert!(check_summary(&s, min_sentences(&long)).is_empty(), "{s}");
        assert!(check_summary(&deterministic_summary("X", "Single."), 1).is_empty());
    }
}
