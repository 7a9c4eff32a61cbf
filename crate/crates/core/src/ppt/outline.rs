use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::template::{CONTENTS, TITLE_SLIDE};
use super::PptError;
use crate::dag::{Resolution, ScholarDag, TextNode, VisualNode};
use crate::gateway::{extract_json, Gateway, Part, StageTag};
use crate::paper2dag::RootMetadata;
use crate::prompts;
use crate::text;

/// Openers the slide writer must not use, matched case-insensitively at the start.
pub const FORBIDDEN_OPENERS: [&str; 6] =
    ["this slide", "in this slide", "on this slide", "this section", "in this section", "this part"];

/// Word budget of a generated summary: text-only slides, then slides with visuals.
pub const TEXT_ONLY_WORDS: usize = 50;
pub const WITH_VISUAL_WORDS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualItem {
    pub name: String,
    pub caption: String,
    pub resolution: Resolution,
}

/// Content unit of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideOutline {
    pub text: String,
    pub figures: Vec<VisualNode>,
    pub formulas: Vec<VisualNode>,
    pub template: Option<String>,
}

impl SlideOutline {
    /// JSON in the outline schema: `text`, `figure`, `formula`, `template`.
    pub fn to_json(&self) -> Value {
        let items = |v: &[VisualNode]| -> Vec<Value> {
            v.iter()
                .map(|n| json!({"name": n.name, "caption": n.caption, "resolution": n.resolution.to_string()}))
                .collect()
        };
        json!({
            "text": self.text,
            "figure": items(&self.figures),
            "formula": items(&self.formulas),
            "template": self.template,
        })
    }

    /// Inverse of [`SlideOutline::to_json`]; formula flags follow the list an item sits in.
    pub fn from_json(value: &Value) -> Result<Self, String> {
        let text = value.get("text").and_then(Value::as_str).ok_or("`text` must be a string")?.to_string();
        let list = |key: &str, is_formula: bool| -> Result<Vec<VisualNode>, String> {
            let Some(arr) = value.get(key) else { return Ok(Vec::new()) };
            let arr = arr.as_array().ok_or(format!("`{key}` must be an array"))?;
            arr.iter()
                .map(|item| {
                    let item: VisualItem = serde_json::from_value(item.clone()).map_err(|e| format!("`{key}` item: {e}"))?;
                    Ok(VisualNode { name: item.name, caption: item.caption, is_formula, resolution: item.resolution })
                })
                .collect()
        };
        let template = match value.get("template") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err("`template` must be a string or null".into()),
        };
        Ok(SlideOutline { text, figures: list("figure", false)?, formulas: list("formula", true)?, template })
    }

    pub fn has_visuals(&self) -> bool {
        !self.figures.is_empty() || !self.formulas.is_empty()
    }
}

/// Title and contents slides, built directly from the root.
pub fn init_outline(dag: &ScholarDag, warnings: &mut Vec<String>) -> [SlideOutline; 2] {
    let root = dag.root();
    let meta = RootMetadata::from_root(root);
    let byline = if meta.authors.is_empty() { root.content.clone() } else { meta.authors.clone() };
    let title = SlideOutline {
        text: format!("{}\n{}", root.name, byline),
        figures: Vec::new(),
        formulas: Vec::new(),
        template: Some(TITLE_SLIDE.into()),
    };
    if root.edge.is_empty() {
        warnings.push("root has no sections; the contents slide is empty".into());
    }
    let sections: Vec<String> = root.edge.iter().map(|e| text::strip_numbering(e)).collect();
    let contents = SlideOutline {
        text: sections.join("\n"),
        figures: Vec::new(),
        formulas: Vec::new(),
        template: Some(CONTENTS.into()),
    };
    [title, contents]
}

/// The `selected_node` object sent to the slide writer.
pub fn selected_node_json(node: &TextNode, visuals: &[&VisualNode]) -> Value {
    let items: Vec<Value> = visuals
        .iter()
        .map(|v| {
            json!({
                "name": v.name,
                "caption": v.caption,
                "formula": u8::from(v.is_formula),
                "resolution": v.resolution.to_string(),
            })
        })
        .collect();
    json!({"name": node.name, "content": node.content, "visual_node": items})
}

pub fn forbidden_opener(text: &str) -> Option<&'static str> {
    let lower = text.trim_start().to_lowercase();
    FORBIDDEN_OPENERS.iter().copied().find(|o| {
        lower.strip_prefix(o).is_some_and(|rest| !rest.starts_with(|c: char| c.is_alphanumeric()))
    })
}

/// Checks a slide-writer answer against the node's visuals.
pub fn check_slide_outline(value: &Value, visuals: &[&VisualNode]) -> Result<SlideOutline, Vec<String>> {
    let mut violations = Vec::new();
    if !value.is_object() {
        return Err(vec!["output must be a single JSON object".into()]);
    }
    let parsed = match SlideOutline::from_json(value) {
        Ok(o) => o,
        Err(e) => return Err(vec![e]),
    };
    if parsed.text.trim().is_empty() {
        violations.push("`text` must not be empty".into());
    }
    if let Some(o) = forbidden_opener(&parsed.text) {
        violations.push(format!("`text` must not start with \"{o}\"; write direct academic content"));
    }
    if parsed.template.is_some() {
        violations.push("`template` must be null".into());
    }
    let names = |v: &[VisualNode]| -> Vec<String> { v.iter().map(|n| n.name.clone()).collect() };
    let want_fig: Vec<String> = visuals.iter().filter(|v| !v.is_formula).map(|v| v.name.clone()).collect();
    let want_eq: Vec<String> = visuals.iter().filter(|v| v.is_formula).map(|v| v.name.clone()).collect();
    let (mut got_fig, mut got_eq) = (names(&parsed.figures), names(&parsed.formulas));
    got_fig.sort();
    got_eq.sort();
    let (mut wf, mut we) = (want_fig.clone(), want_eq.clone());
    wf.sort();
    we.sort();
    if got_fig != wf {
        violations.push(format!("`figure` must list exactly the items with formula == 0: {want_fig:?}"));
    }
    if got_eq != we {
        violations.push(format!("`formula` must list exactly the items with formula == 1: {want_eq:?}"));
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    // Visual data comes from the dag, not from the answer.
    Ok(SlideOutline {
        text: parsed.text.trim().to_string(),
        figures: visuals.iter().filter(|v| !v.is_formula).map(|v| (*v).clone()).collect(),
        formulas: visuals.iter().filter(|v| v.is_formula).map(|v| (*v).clone()).collect(),
        template: None,
    })
}

/// Drops a forbidden opener phrase up to its comma; sentences that cannot be
/// repaired that way are skipped.
fn without_opener(sentence: &str) -> Option<String> {
    if forbidden_opener(sentence).is_none() {
        return Some(sentence.to_string());
    }
    let (_, rest) = sentence.split_once(',')?;
    let rest = rest.trim();
    let mut chars = rest.chars();
    let first = chars.next()?;
    Some(first.to_uppercase().chain(chars).collect())
}

/// Leading whole sentences of `content` within `budget` words; image
/// references dropped. The first sentence is truncated when it alone is too long.
pub fn extractive_summary(content: &str, budget: usize) -> String {
    let plain = text::collapse_whitespace(&super::layout::clean_unit(&text::prose(content)).replace("<b>", "").replace("</b>", ""));
    let mut out: Vec<String> = Vec::new();
    let mut words = 0;
    for s in text::sentences(&plain).iter().filter_map(|s| without_opener(s)) {
        let n = text::word_count(&s);
        if out.is_empty() && n > budget {
            out.push(text::truncate_words(&s, budget));
            break;
        }
        if words + n > budget {
            break;
        }
        words += n;
        out.push(s);
    }
    out.join(" ")
}

/// Model-free slide writer over a `selected_node` object.
pub fn deterministic_slide_outline(selected: &Value) -> Value {
    let content = selected.get("content").and_then(Value::as_str).unwrap_or("");
    let name = selected.get("name").and_then(Value::as_str).unwrap_or("");
    let items: Vec<&Value> = selected.get("visual_node").and_then(Value::as_array).map(|a| a.iter().collect()).unwrap_or_default();
    let budget = if items.is_empty() { TEXT_ONLY_WORDS } else { WITH_VISUAL_WORDS };
    let mut summary = extractive_summary(content, budget);
    if summary.is_empty() {
        summary = text::strip_numbering(name);
    }
    let pick = |flag: u64| -> Vec<Value> {
        items
            .iter()
            .filter(|i| i.get("formula").and_then(Value::as_u64) == Some(flag))
            .map(|i| json!({"name": i["name"], "caption": i["caption"], "resolution": i["resolution"]}))
            .collect()
    };
    json!({"text": summary, "figure": pick(0), "formula": pick(1), "template": null})
}

/// Slide outline for one selected node.
pub fn gen_slide_outline(node: &TextNode, visuals: &[&VisualNode], gateway: &Gateway) -> Result<SlideOutline, PptError> {
    let selected = selected_node_json(node, visuals);
    let body = serde_json::to_string_pretty(&selected).expect("json");
    let request = gateway.request(StageTag::PptOutline, prompts::SLIDE_OUTLINE, vec![Part::text(body)]);
    gateway
        .complete_checked(&request, gateway.validation_retries(), |answer| {
            let value = extract_json(answer).map_err(|e| vec![e.to_string()])?;
            check_slide_outline(&value, visuals)
        })
        .map_err(PptError::from)
}
