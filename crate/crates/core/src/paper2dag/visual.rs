use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use super::ingest::PaperBundle;
use super::Paper2DagError;
use crate::dag::{Resolution, ScholarDag, VisualNode};
use crate::gateway::{extract_json, Gateway, Part, StageTag};
use crate::prompts;
use crate::text;

static CAPTION_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*[*_]*\s*(?:figure|fig\.|table|equation|eq\.)\s*\(?\d+").expect("caption regex")
});
static CAPTION_NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(figures?|figs?\.?|tables?|equations?|eqs?\.?)\s*\(?(\d+)").expect("caption number regex")
});
static ROMAN_CAPTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:figure|fig\.?|table|equation|eq\.?)\s+[IVXLC]+\b").expect("roman regex"));
static REFERENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(figures?|figs?\.?|tables?|equations?|eqs?\.?)\s*~?\(?(\d+)\)?").expect("reference regex")
});
static EQ_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:equations?|eqs?\.)").expect("eq regex"));
static FIG_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:figures?|figs?\.|tables?)\b").expect("fig regex"));

/// Aspect ratio (width / height) above which an uncaptioned image is taken for a formula strip.
pub const FORMULA_ASPECT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefKind {
    Figure,
    Table,
    Equation,
}

fn kind_of(token: &str) -> RefKind {
    let t = token.to_ascii_lowercase();
    if t.starts_with("tab") {
        RefKind::Table
    } else if t.starts_with("eq") {
        RefKind::Equation
    } else {
        RefKind::Figure
    }
}

pub fn is_caption_line(line: &str) -> bool {
    CAPTION_LINE.is_match(line)
}

/// Kind and number of the first Figure/Fig./Table/Equation/Eq. token in a caption.
pub fn caption_number(caption: &str) -> Option<(RefKind, u32)> {
    let c = CAPTION_NUMBER.captures(caption)?;
    Some((kind_of(&c[1]), c[2].parse().ok()?))
}

/// Caption line adjacent to the image (next two non-empty lines first, then
/// the previous one), copied verbatim.
pub fn detect_caption(markdown: &str, path: &str) -> Option<String> {
    let lines: Vec<&str> = markdown.lines().collect();
    let at = lines.iter().position(|l| text::image_paths(l).iter().any(|p| p == path))?;
    let is_image = |l: &str| !text::image_paths(l).is_empty();
    let after = lines[at + 1..].iter().filter(|l| !l.trim().is_empty()).take(2).take_while(|l| !is_image(l));
    // A caption above only counts when no other image sits directly above it.
    let above: Vec<&&str> = lines[..at].iter().rev().filter(|l| !l.trim().is_empty()).take(2).collect();
    let before = above.first().filter(|_| above.get(1).is_none_or(|l| !is_image(l))).copied();
    after.chain(before).find(|l| is_caption_line(l)).map(|l| l.trim().to_string())
}

fn context(markdown: &str, path: &str) -> String {
    let lines: Vec<&str> = markdown.lines().collect();
    let Some(at) = lines.iter().position(|l| text::image_paths(l).iter().any(|p| p == path)) else {
        return String::new();
    };
    // The image line and the next non-empty line; wider windows pick up neighbouring captions.
    let next = lines[at + 1..].iter().find(|l| !l.trim().is_empty()).copied().unwrap_or("");
    format!("{}\n{next}", lines[at])
}

/// Formula flag without a model: the caption's kind wins, then Eq./Equation
/// versus Figure/Table tokens near the image, then the aspect ratio.
pub fn formula_heuristic(context: &str, caption: Option<&str>, resolution: Resolution) -> bool {
    if let Some((kind, _)) = caption.and_then(caption_number) {
        return kind == RefKind::Equation;
    }
    if EQ_TOKEN.is_match(context) {
        return true;
    }
    if FIG_TOKEN.is_match(context) {
        return false;
    }
    resolution.width as f64 / resolution.height as f64 > FORMULA_ASPECT
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualCandidate {
    pub path: String,
    pub resolution: Resolution,
    pub detected_caption: Option<String>,
    pub context: String,
}

fn candidates(bundle: &PaperBundle) -> Vec<VisualCandidate> {
    bundle
        .images
        .iter()
        .map(|img| VisualCandidate {
            path: img.path.clone(),
            resolution: img.resolution,
            detected_caption: detect_caption(&bundle.markdown, &img.path),
            context: context(&bundle.markdown, &img.path),
        })
        .collect()
}

fn fallback_node(c: &VisualCandidate) -> VisualNode {
    let is_formula = formula_heuristic(&c.context, c.detected_caption.as_deref(), c.resolution);
    let caption = c
        .detected_caption
        .clone()
        .unwrap_or_else(|| if is_formula { "Equation".into() } else { "Figure".into() });
    VisualNode { name: text::image_ref(&c.path), caption, is_formula, resolution: c.resolution }
}

/// Visual nodes without any model call: detected captions and the formula heuristic.
pub fn heuristic_visuals(bundle: &PaperBundle) -> Vec<VisualNode> {
    candidates(bundle).iter().map(fallback_node).collect()
}

/// Model-free answer to a visual request: detected captions and the formula
/// heuristic, one node per image in the given order.
pub fn deterministic_visuals(markdown: &str, images: &[(String, Resolution)]) -> Value {
    let nodes: Vec<Value> = images
        .iter()
        .map(|(path, resolution)| {
            let cand = VisualCandidate {
                path: path.clone(),
                resolution: *resolution,
                detected_caption: detect_caption(markdown, path),
                context: context(markdown, path),
            };
            let node = fallback_node(&cand);
            json!({"name": node.name, "caption": node.caption, "visual_node": 1, "formula": u8::from(node.is_formula)})
        })
        .collect();
    json!({ "nodes": nodes })
}

const REFS_MARKER: &str = "Image references:\n";
const MARKDOWN_MARKER: &str = "\n\nPaper Markdown:\n";

pub fn visual_request_text(bundle: &PaperBundle) -> String {
    let refs: Vec<String> = bundle.images.iter().map(|i| text::image_ref(&i.path)).collect();
    format!("{REFS_MARKER}{}{MARKDOWN_MARKER}{}", refs.join("\n"), bundle.markdown)
}

/// Inverse of [`visual_request_text`]: the listed image references and the markdown.
pub fn parse_visual_request(text: &str) -> Option<(Vec<String>, String)> {
    let rest = text.strip_prefix(REFS_MARKER)?;
    let (refs, markdown) = rest.split_once(MARKDOWN_MARKER)?;
    Some((refs.lines().map(str::to_string).collect(), markdown.to_string()))
}

fn check_visuals(value: &Value, inventory: &[VisualCandidate]) -> Result<Vec<(String, bool)>, Vec<String>> {
    let Some(nodes) = value.get("nodes").or(Some(value)).and_then(Value::as_array) else {
        return Err(vec!["expected an object {\"nodes\": [...]}".into()]);
    };
    let mut violations = Vec::new();
    if nodes.len() != inventory.len() {
        violations.push(format!(
            "expected {} nodes, one per image in the given order, found {}",
            inventory.len(),
            nodes.len()
        ));
        return Err(violations);
    }
    let mut out = Vec::new();
    for (i, (node, cand)) in nodes.iter().zip(inventory).enumerate() {
        let name = node.get("name").and_then(Value::as_str).unwrap_or("");
        if text::image_paths(name) != [cand.path.clone()] {
            violations.push(format!("node {i}: name must be `{}`, found `{name}`", text::image_ref(&cand.path)));
        }
        if node.get("visual_node").and_then(Value::as_i64) != Some(1) {
            violations.push(format!("node {i}: visual_node must be 1"));
        }
        let formula = match node.get("formula") {
            Some(Value::Number(n)) if n.as_i64() == Some(0) => Some(false),
            Some(Value::Number(n)) if n.as_i64() == Some(1) => Some(true),
            Some(Value::Bool(b)) => Some(*b),
            _ => None,
        };
        if formula.is_none() {
            violations.push(format!("node {i}: formula must be 0 or 1"));
        }
        let caption = node.get("caption").and_then(Value::as_str).map(str::trim);
        if caption.is_none_or(str::is_empty) {
            violations.push(format!("node {i}: caption must be a non-empty string"));
        }
        if let (Some(c), Some(f)) = (caption, formula) {
            out.push((c.to_string(), f));
        }
    }
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(violations)
    }
}

/// Visual nodes via the vision model, in inventory order. Captions found next
/// to the image override the model's. When the model is unreachable the
/// heuristic stands in and a warning is recorded.
pub fn build_visual_nodes(
    bundle: &PaperBundle,
    gateway: &Gateway,
    warnings: &mut Vec<String>,
) -> Result<Vec<VisualNode>, Paper2DagError> {
    let inventory = candidates(bundle);
    if inventory.is_empty() {
        return Ok(Vec::new());
    }
    let mut parts = vec![Part::text(visual_request_text(bundle))];
    parts.extend(inventory.iter().map(|c| Part::image(bundle.image_path(&c.path))));
    let request = gateway.request(StageTag::DagVisual, prompts::VISUAL_DAG, parts);
    let answer = gateway.complete_checked(&request, gateway.validation_retries(), |answer| {
        let value = extract_json(answer).map_err(|e| vec![e.to_string()])?;
        check_visuals(&value, &inventory)
    });
    let answer = match answer {
        Ok(a) => a,
        Err(e) if e.is_unavailable() => {
            warnings.push(format!("vision model unavailable ({e}); captions and formula flags from heuristics"));
            return Ok(inventory.iter().map(fallback_node).collect());
        }
        Err(e) => return Err(Paper2DagError::Gateway(e)),
    };
    Ok(inventory
        .iter()
        .zip(answer)
        .map(|(c, (caption, is_formula))| VisualNode {
            name: text::image_ref(&c.path),
            caption: c.detected_caption.clone().unwrap_or(caption),
            is_formula,
            resolution: c.resolution,
        })
        .collect())
}

/// Cross-modal edges: a node links to a visual when it embeds the image or
/// cites it by kind and number. Only the deepest matching nodes keep the link.
/// Node name, numbered references and embedded image paths.
type Citations<'a> = (&'a str, HashSet<(RefKind, u32)>, Vec<String>);

pub fn align(dag: &ScholarDag, warnings: &mut Vec<String>) -> Vec<(String, String)> {
    let mut parent: HashMap<&str, &str> = HashMap::new();
    for node in dag.text_nodes() {
        for child in &node.edge {
            parent.insert(child.as_str(), node.name.as_str());
        }
    }
    let citations: Vec<Citations> = dag
        .text_nodes()
        .filter(|n| n.name != dag.root_name())
        .map(|n| {
            let cites = REFERENCE
                .captures_iter(&n.content)
                .filter_map(|c| Some((kind_of(&c[1]), c[2].parse().ok()?)))
                .collect();
            (n.name.as_str(), cites, text::image_paths(&n.content))
        })
        .collect();

    let mut edges = Vec::new();
    for visual in dag.visual_nodes() {
        let number = caption_number(&visual.caption);
        if number.is_none() && ROMAN_CAPTION.is_match(&visual.caption) {
            warnings.push(format!("caption of {} uses a roman numeral; only embedded references can align", visual.name));
        }
        let matched: Vec<&str> = citations
            .iter()
            .filter(|(_, cites, paths)| {
                paths.iter().any(|p| p == visual.path()) || number.is_some_and(|n| cites.contains(&n))
            })
            .map(|(name, _, _)| *name)
            .collect();
        let matched_set: HashSet<&str> = matched.iter().copied().collect();
        let has_matched_descendant = |name: &str| {
            matched.iter().any(|&m| {
                let mut cur = m;
                while let Some(&p) = parent.get(cur) {
                    if p == name {
                        return true;
                    }
                    cur = p;
                }
                false
            })
        };
        let deepest: Vec<&str> = matched.iter().copied().filter(|m| !has_matched_descendant(m)).collect();
        debug_assert!(deepest.iter().all(|d| matched_set.contains(d)));
        if deepest.is_empty() {
            warnings.push(format!("{} is not referenced by any text node", visual.name));
        }
        edges.extend(deepest.into_iter().map(|d| (d.to_string(), visual.name.clone())));
    }
    edges
}
