use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde_json::{json, Value};

use super::ingest::PaperBundle;
use super::split::{heading_rank, Section, SectionSplit};
use super::{BuildOptions, Paper2DagError};
use crate::dag::{ScholarDag, TextNode, Violation};
use crate::gateway::{Gateway, GatewayError, Part, StageTag};
use crate::prompts;
use crate::text;

static REPO_URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"https?://(?:www\.)?github\.com/[\w.\-]+/[\w\-]+(?:\.[\w\-]+)*").expect("repo regex"));

const AFFILIATIONS_LABEL: &str = "Affiliations: ";
const CODE_LABEL: &str = "Code: ";
const SEPARATOR: &str = " | ";

/// Paper identity stored in the root node: title as its name, the rest
/// encoded in its content as `authors | Affiliations: ... | Code: ...`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RootMetadata {
    pub title: String,
    pub authors: String,
    pub affiliations: Option<String>,
    pub repo_url: Option<String>,
}

impl RootMetadata {
    pub fn encode(&self) -> String {
        let mut parts = vec![text::collapse_whitespace(&self.authors)];
        if let Some(a) = &self.affiliations {
            parts.push(format!("{AFFILIATIONS_LABEL}{}", text::collapse_whitespace(a)));
        }
        if let Some(u) = &self.repo_url {
            parts.push(format!("{CODE_LABEL}{u}"));
        }
        parts.join(SEPARATOR)
    }

    pub fn from_root(root: &TextNode) -> Self {
        let mut meta = RootMetadata { title: root.name.clone(), ..Default::default() };
        for (i, part) in root.content.split(SEPARATOR).enumerate() {
            if let Some(a) = part.strip_prefix(AFFILIATIONS_LABEL) {
                meta.affiliations = Some(a.to_string());
            } else if let Some(u) = part.strip_prefix(CODE_LABEL) {
                meta.repo_url = Some(u.to_string());
            } else if i == 0 {
                meta.authors = part.to_string();
            }
        }
        meta
    }
}

fn plain_line(line: &str) -> String {
    let line = text::heading(line).map(|(_, h)| h).unwrap_or(line);
    text::collapse_whitespace(&line.replace("**", ""))
}

/// Text of a chunk without its own heading line, collapsed onto one line.
pub(crate) fn node_content(chunk: &str) -> String {
    let mut lines = chunk.trim().lines();
    let first = lines.next().unwrap_or("");
    if text::heading(first).is_none() {
        return text::collapse_whitespace(chunk);
    }
    let rest = text::collapse_whitespace(&lines.collect::<Vec<_>>().join("\n"));
    if rest.is_empty() {
        plain_line(first)
    } else {
        rest
    }
}

fn extract_metadata(bundle: &PaperBundle, split: &SectionSplit) -> Result<RootMetadata, Paper2DagError> {
    let overrides = &bundle.metadata_overrides;
    let source = if split.front_matter.trim().is_empty() { &bundle.markdown } else { &split.front_matter };
    let mut lines = source.lines().map(str::trim).filter(|l| !l.is_empty());
    let title_line = lines.next().map(plain_line).filter(|t| !t.is_empty());
    let title = overrides.title.clone().or(title_line).ok_or(Paper2DagError::MetadataMissing)?;
    let authors = overrides.authors.clone().unwrap_or_else(|| {
        lines
            .find(|l| text::heading(l).is_none() && text::image_paths(l).is_empty())
            .map(plain_line)
            .unwrap_or_default()
    });
    let repo_url = overrides.repo_url.clone().or_else(|| {
        REPO_URL
            .find(&bundle.markdown)
            .map(|m| m.as_str().trim_end_matches('.').to_string())
    });
    Ok(RootMetadata { title, authors, affiliations: overrides.affiliations.clone(), repo_url })
}

/// Root from the paper metadata plus one level-1 node per section.
pub fn init_graph(bundle: &PaperBundle, split: &SectionSplit) -> Result<ScholarDag, Paper2DagError> {
    if split.sections.is_empty() {
        return Err(Paper2DagError::EmptyPaper);
    }
    let meta = extract_metadata(bundle, split)?;
    let mut dag = ScholarDag::new(TextNode::new(meta.title.clone(), meta.encode(), 0));
    let root = dag.root_name().to_string();
    for section in &split.sections {
        let name = dag.unique_name(&text::collapse_whitespace(&section.title));
        dag.add_child(&root, TextNode::new(name, node_content(&section.body), 1))
            .expect("root exists");
    }
    Ok(dag)
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

const NAME_MARKER: &str = "Section Name: ";
const CONTENT_MARKER: &str = "\n\nSection Content:\n";
const TRACE_PREFIX: &str = "not traceable";

pub fn decompose_request_text(name: &str, body: &str) -> String {
    format!("{NAME_MARKER}{name}{CONTENT_MARKER}{body}")
}

/// Inverse of [`decompose_request_text`].
pub fn parse_decompose_request(text: &str) -> Option<(String, String)> {
    let rest = text.strip_prefix(NAME_MARKER)?;
    let (name, body) = rest.split_once(CONTENT_MARKER)?;
    Some((name.to_string(), body.to_string()))
}

/// One node of a validated decomposition; index 0 is the section itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposedNode {
    pub name: String,
    pub content: String,
    pub children: Vec<usize>,
}

const FIELDS: [&str; 5] = ["name", "content", "edge", "level", "visual_node"];

/// Checks a decomposition answer against the five-field schema, the tree
/// shape, level continuity and traceability to `section_content`. Nodes
/// deeper than `max_depth` (absolute, the section being at `section_level`)
/// are dropped.
pub fn validate_decomposition(
    value: &Value,
    section_content: &str,
    section_level: u32,
    max_depth: u32,
) -> Result<Vec<DecomposedNode>, Vec<String>> {
    let nodes = match value.get("nodes").or(Some(value)).and_then(Value::as_array) {
        Some(n) if !n.is_empty() => n,
        _ => return Err(vec!["expected an object {\"nodes\": [...]} with at least one node".into()]),
    };
    let mut violations = Vec::new();
    struct Raw<'a> {
        name: &'a str,
        content: String,
        edge: Vec<&'a str>,
        level: i64,
    }
    let mut raws = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        let Some(obj) = node.as_object() else {
            violations.push(format!("node {i} is not an object"));
            continue;
        };
        let keys: HashSet<&str> = obj.keys().map(String::as_str).collect();
        if keys != FIELDS.into_iter().collect() {
            violations.push(format!(
                "node {i} must have exactly the fields {FIELDS:?}, found {:?}",
                obj.keys().collect::<Vec<_>>()
            ));
            continue;
        }
        let name = obj["name"].as_str().map(str::trim).filter(|n| !n.is_empty());
        let content = obj["content"].as_str();
        let edge: Option<Vec<&str>> = obj["edge"].as_array().and_then(|a| a.iter().map(|v| v.as_str().map(str::trim)).collect());
        let level = obj["level"].as_i64();
        match (name, content, edge, level, obj["visual_node"].is_array()) {
            (Some(name), Some(content), Some(edge), Some(level), true) => raws.push(Raw {
                name,
                content: text::collapse_whitespace(content),
                edge,
                level,
            }),
            _ => violations.push(format!(
                "node {i}: name must be a non-empty string, content a string, edge a list of strings, level an integer, visual_node a list"
            )),
        }
    }
    if !violations.is_empty() {
        return Err(violations);
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, r) in raws.iter().enumerate() {
        if index.insert(r.name, i).is_some() {
            violations.push(format!("duplicate node name `{}`", r.name));
        }
    }
    let mut parent: Vec<Option<usize>> = vec![None; raws.len()];
    for (i, r) in raws.iter().enumerate() {
        for child in &r.edge {
            match index.get(child) {
                None => violations.push(format!("edge `{}` -> `{child}` names no node", r.name)),
                Some(&c) if parent[c].is_some() || c == i => {
                    violations.push(format!("`{child}` has more than one parent or is its own child"))
                }
                Some(&c) => parent[c] = Some(i),
            }
        }
    }
    let roots: Vec<usize> = (0..raws.len()).filter(|&i| parent[i].is_none()).collect();
    if roots.len() != 1 {
        violations.push(format!("expected exactly one root node, found {}", roots.len()));
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    let root = roots[0];

    // Walk from the root; anything not reached sits on a cycle.
    let mut order = vec![root];
    let mut depth = vec![0u32; raws.len()];
    let mut head = 0;
    while head < order.len() {
        let i = order[head];
        head += 1;
        for child in &raws[i].edge {
            let c = index[child];
            depth[c] = depth[i] + 1;
            if raws[c].level != raws[i].level + 1 {
                violations.push(format!(
                    "level discontinuity: `{}` (level {}) -> `{}` (level {})",
                    raws[i].name, raws[i].level, raws[c].name, raws[c].level
                ));
            }
            order.push(c);
        }
    }
    if order.len() != raws.len() {
        violations.push("some nodes are not reachable from the root (cycle)".into());
        return Err(violations);
    }

    let mut contents: Vec<String> = raws.iter().map(|r| text::normalize_for_match(&r.content)).collect();
    contents[root] = text::normalize_for_match(section_content);
    for &i in &order {
        let mut cursor = 0;
        for child in &raws[i].edge {
            let c = index[child];
            let needle = &contents[c];
            if needle.is_empty() {
                violations.push(format!("`{}` has empty content", raws[c].name));
                continue;
            }
            let hay = &contents[i];
            match hay[cursor..].find(needle.as_str()) {
                Some(off) => cursor += off + needle.len(),
                None if hay.contains(needle.as_str()) => violations.push(format!(
                    "`{}` overlaps or precedes an earlier sibling inside `{}`",
                    raws[c].name, raws[i].name
                )),
                None => violations.push(format!(
                    "{TRACE_PREFIX}: `{}` content is not a verbatim part of `{}`",
                    raws[c].name, raws[i].name
                )),
            }
        }
    }
    if !violations.is_empty() {
        return Err(violations);
    }

    // Re-index the kept nodes in walk order, dropping those below max_depth.
    let keep = |i: usize| section_level + depth[i] <= max_depth;
    let mut new_index = HashMap::new();
    for &i in order.iter().filter(|&&i| keep(i)) {
        new_index.insert(i, new_index.len());
    }
    let mut out = vec![
        DecomposedNode { name: String::new(), content: String::new(), children: Vec::new() };
        new_index.len()
    ];
    for (&old, &new) in &new_index {
        out[new] = DecomposedNode {
            name: raws[old].name.to_string(),
            content: if old == root { text::collapse_whitespace(section_content) } else { raws[old].content.clone() },
            children: raws[old]
                .edge
                .iter()
                .filter_map(|c| new_index.get(&index[c]).copied())
                .collect(),
        };
    }
    Ok(out)
}

/// Offline stand-in for the decomposition model: splits by sub-headings,
/// then by paragraphs, down to `max_depth`. Answers in the prompt's format.
pub fn deterministic_decompose(name: &str, body: &str, section_level: u32, max_depth: u32) -> Value {
    let base = body.lines().filter_map(text::heading).map(|(l, _)| l).min().unwrap_or(1);
    let mut nodes = Vec::new();
    let mut taken = HashSet::new();
    taken.insert(name.to_string());
    grow(name, body, section_level, section_level, max_depth, base, &mut taken, &mut nodes);
    json!({ "nodes": nodes })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    name: &str,
    chunk: &str,
    level: u32,
    rel_base: u32,
    max_depth: u32,
    base: usize,
    taken: &mut HashSet<String>,
    nodes: &mut Vec<Value>,
) {
    let slot = nodes.len();
    nodes.push(Value::Null);
    let children = if level < max_depth { child_chunks(name, chunk, base) } else { Vec::new() };
    let mut edge = Vec::new();
    for (child_name, child_chunk) in children {
        let unique = crate::dag::unique_name(&child_name, |n| taken.contains(n));
        taken.insert(unique.clone());
        edge.push(unique.clone());
        grow(&unique, &child_chunk, level + 1, rel_base, max_depth, base, taken, nodes);
    }
    nodes[slot] = json!({
        "name": name,
        "content": node_content(chunk),
        "edge": edge,
        "level": level - rel_base + 1,
        "visual_node": [],
    });
}

fn is_visual_block(block: &str) -> bool {
    let t = block.trim();
    let without_images = text::image_markdown(t).iter().fold(t.to_string(), |acc, m| acc.replace(m, ""));
    !text::image_paths(t).is_empty() && without_images.trim().is_empty() || super::visual::is_caption_line(t) || is_equation_number(t)
}

/// A bare equation number such as `(3)`, left behind by formula images.
fn is_equation_number(t: &str) -> bool {
    t.strip_prefix('(').and_then(|r| r.strip_suffix(')')).is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

fn child_chunks(parent: &str, chunk: &str, base: usize) -> Vec<(String, String)> {
    let trimmed = chunk.trim();
    let body = match trimmed.split_once('\n') {
        Some((first, rest)) if text::heading(first).is_some() => rest,
        None if text::heading(trimmed).is_some() => "",
        _ => trimmed,
    };

    let mut headings = Vec::new();
    let mut pos = 0;
    for line in body.split_inclusive('\n') {
        if let Some((level, h)) = text::heading(line) {
            headings.push((pos, heading_rank(level, h, base), h.to_string()));
        }
        pos += line.len();
    }
    if let Some(top) = headings.iter().map(|h| h.1).min() {
        let cuts: Vec<&(usize, usize, String)> = headings.iter().filter(|h| h.1 == top).collect();
        let mut out = Vec::new();
        let preamble = body[..cuts[0].0].trim();
        if !preamble.is_empty() {
            out.push((format!("{} overview", text::strip_numbering(parent)), preamble.to_string()));
        }
        for (i, cut) in cuts.iter().enumerate() {
            let end = cuts.get(i + 1).map(|c| c.0).unwrap_or(body.len());
            out.push((cut.2.clone(), body[cut.0..end].trim().to_string()));
        }
        return out;
    }

    // Figures and captions stay with the paragraph before them.
    let mut blocks: Vec<String> = Vec::new();
    for block in body.split("\n\n").map(str::trim).filter(|b| !b.is_empty()) {
        match blocks.last_mut() {
            Some(prev) if is_visual_block(block) || only_visuals(prev) => {
                prev.push_str("\n\n");
                prev.push_str(block);
            }
            _ => blocks.push(block.to_string()),
        }
    }
    if blocks.len() < 2 || text::word_count(body) < 60 {
        return Vec::new();
    }
    blocks
        .into_iter()
        .map(|b| (paragraph_name(&b), b))
        .collect()
}

fn only_visuals(block: &str) -> bool {
    block.split("\n\n").all(is_visual_block)
}

fn paragraph_name(block: &str) -> String {
    let prose: String = block
        .lines()
        .filter(|l| !is_visual_block(l))
        .collect::<Vec<_>>()
        .join(" ");
    let source = if prose.trim().is_empty() { block } else { &prose };
    let plain: String = source.chars().filter(|c| !matches!(c, '*' | '_' | '#' | '$' | '`')).collect();
    let first = text::sentences(&plain).into_iter().next().unwrap_or_default();
    let name = text::truncate_words(&first, 8);
    name.trim_end_matches(['.', ',', ';', ':']).to_string()
}

/// Decomposes one node with a single model call that returns its whole
/// subtree, and attaches the validated children.
pub fn decompose(
    dag: &mut ScholarDag,
    node: &str,
    body: &str,
    gateway: &Gateway,
    options: &BuildOptions,
) -> Result<(), Paper2DagError> {
    let target = dag.node(node).ok_or_else(|| Paper2DagError::Schema {
        node: node.to_string(),
        violations: vec!["node does not exist".into()],
    })?;
    let tree = query_subtree(&target.name, &target.content, body, target.level, gateway, options)?;
    attach(dag, node, &tree, 0);
    Ok(())
}

fn query_subtree(
    name: &str,
    content: &str,
    body: &str,
    level: u32,
    gateway: &Gateway,
    options: &BuildOptions,
) -> Result<Vec<DecomposedNode>, Paper2DagError> {
    if level >= options.max_depth {
        return Ok(vec![DecomposedNode { name: name.into(), content: content.into(), children: Vec::new() }]);
    }
    let classify = |violations: Vec<String>| {
        if violations.iter().any(|v| v.starts_with(TRACE_PREFIX)) {
            Paper2DagError::Hallucination { node: name.to_string(), violations }
        } else {
            Paper2DagError::Schema { node: name.to_string(), violations }
        }
    };
    let request = gateway.request(
        StageTag::DagDecompose,
        prompts::SECTION_DAG,
        vec![Part::text(decompose_request_text(name, body))],
    );
    gateway
        .complete_checked(&request, gateway.validation_retries(), |answer| {
            let value = crate::gateway::extract_json(answer).map_err(|e| vec![e.to_string()])?;
            validate_decomposition(&value, content, level, options.max_depth)
        })
        .map_err(|e| match e {
            GatewayError::ValidationExhausted { violations, .. } => classify(violations),
            other => Paper2DagError::Gateway(other),
        })
}

fn attach(dag: &mut ScholarDag, parent: &str, tree: &[DecomposedNode], idx: usize) {
    for &c in &tree[idx].children {
        let name = dag.unique_name(&tree[c].name);
        dag.add_child(parent, TextNode::new(name.clone(), tree[c].content.clone(), 0))
            .expect("parent was just inserted");
        attach(dag, &name, tree, c);
    }
}

/// Decomposes every section concurrently and applies the results in
/// document order, so node names and edge order never depend on timing.
pub(crate) fn decompose_sections(
    dag: &mut ScholarDag,
    names: &[String],
    sections: &[Section],
    gateway: &Gateway,
    options: &BuildOptions,
) -> Result<(), Paper2DagError> {
    let jobs: Vec<(&String, &Section, String, u32)> = names
        .iter()
        .zip(sections)
        .map(|(n, s)| {
            let node = dag.node(n).expect("section node exists");
            (n, s, node.content.clone(), node.level)
        })
        .collect();
    let results: Vec<Result<Vec<DecomposedNode>, Paper2DagError>> = jobs
        .par_iter()
        .map(|(name, section, content, level)| query_subtree(name, content, &section.body, *level, gateway, options))
        .collect();
    for (name, result) in names.iter().zip(results) {
        attach(dag, name, &result?, 0);
    }
    Ok(())
}

/// Nodes below level 1 whose content is not a normalized substring of their parent's.
pub fn traceability_violations(dag: &ScholarDag) -> Vec<Violation> {
    let mut out = Vec::new();
    for parent in dag.text_nodes().filter(|n| n.level >= 1) {
        let hay = text::normalize_for_match(&parent.content);
        for child in parent.edge.iter().filter_map(|c| dag.node(c)) {
            if !hay.contains(&text::normalize_for_match(&child.content)) {
                out.push(Violation::Untraceable { parent: parent.name.clone(), child: child.name.clone() });
            }
        }
    }
    out
}
