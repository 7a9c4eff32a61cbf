//! The Scholar DAG: text hierarchy nodes, visual nodes and the cross-modal
//! edges linking them.
//!
//! The on-disk form (`dag.json`) is a single object `{"nodes": [...]}`. Text
//! nodes carry exactly `name`, `content`, `edge`, `level` and `visual_node`;
//! the latter embeds the visual nodes the text references. After the text
//! nodes, every visual node of the paper is listed once as a standalone
//! `{"name", "caption", "visual_node": 1, "formula", "resolution"}` object so
//! that visuals no text references still survive a round trip.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text;

/// Maximum hierarchy depth used when nothing else is configured.
pub const DEFAULT_MAX_DEPTH: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("invalid dag: {}", summarize(.0))]
    InvalidDag(Vec<Violation>),
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("traversal budget must be at least 1")]
    ZeroBudget,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

fn summarize(violations: &[Violation]) -> String {
    let mut parts: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
    if violations.len() > 3 {
        parts.push(format!("and {} more", violations.len() - 3));
    }
    parts.join("; ")
}

// ---------------------------------------------------------------------------
// Node types
// ---------------------------------------------------------------------------

/// Pixel dimensions of an image; serialized as `"<width>x<height>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    /// Height over width; zero-width images report 0.
    pub fn aspect_hw(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            f64::from(self.height) / f64::from(self.width)
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("resolution `{s}` is not of the form WxH"))?;
        let width = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
        let height = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
        Ok(Self { width, height })
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextNode {
    pub name: String,
    pub content: String,
    pub edge: Vec<String>,
    pub level: u32,
    /// Mirror of the cross-modal edges leaving this node; rebuilt from the dag.
    pub visual_refs: Vec<String>,
}

impl TextNode {
    pub fn new(name: impl Into<String>, content: impl Into<String>, level: u32) -> Self {
        Self {
            name: name.into(),
            content: content.into(),
            edge: Vec::new(),
            level,
            visual_refs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualNode {
    /// Canonical image reference `![](relative_path)`.
    pub name: String,
    pub caption: String,
    pub is_formula: bool,
    pub resolution: Resolution,
}

impl VisualNode {
    pub fn path(&self) -> &str {
        text::image_ref_path(&self.name).unwrap_or(&self.name)
    }
}

/// Maximum number of content nodes a backend may select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraversalBudget(usize);

impl TraversalBudget {
    pub const PPT: TraversalBudget = TraversalBudget(15);
    pub const POSTER: TraversalBudget = TraversalBudget(5);
    pub const PR: TraversalBudget = TraversalBudget(5);

    pub fn new(k: usize) -> Result<Self, DagError> {
        if k == 0 {
            Err(DagError::ZeroBudget)
        } else {
            Ok(Self(k))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

// ---------------------------------------------------------------------------
// The graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScholarDag {
    root: String,
    text_nodes: IndexMap<String, TextNode>,
    visual_nodes: IndexMap<String, VisualNode>,
    cross_edges: Vec<(String, String)>,
}

impl ScholarDag {
    /// Starts a dag from its root; the root is forced to level 0.
    pub fn new(mut root: TextNode) -> Self {
        root.level = 0;
        let name = root.name.clone();
        let mut text_nodes = IndexMap::new();
        text_nodes.insert(name.clone(), root);
        Self {
            root: name,
            text_nodes,
            visual_nodes: IndexMap::new(),
            cross_edges: Vec::new(),
        }
    }

    pub fn root_name(&self) -> &str {
        &self.root
    }

    pub fn root(&self) -> &TextNode {
        &self.text_nodes[&self.root]
    }

    pub fn node(&self, name: &str) -> Option<&TextNode> {
        self.text_nodes.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.text_nodes.contains_key(name)
    }

    pub fn text_nodes(&self) -> impl Iterator<Item = &TextNode> {
        self.text_nodes.values()
    }

    pub fn text_node_count(&self) -> usize {
        self.text_nodes.len()
    }

    pub fn visual_nodes(&self) -> impl Iterator<Item = &VisualNode> {
        self.visual_nodes.values()
    }

    pub fn visual(&self, name: &str) -> Option<&VisualNode> {
        self.visual_nodes.get(name)
    }

    pub fn cross_edges(&self) -> &[(String, String)] {
        &self.cross_edges
    }

    /// Visual nodes linked from `name`, in cross-edge order.
    pub fn visuals_of(&self, name: &str) -> Vec<&VisualNode> {
        self.text_nodes
            .get(name)
            .map(|n| {
                n.visual_refs
                    .iter()
                    .filter_map(|v| self.visual_nodes.get(v))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Visuals a summarizing backend may show for `name`: its own aligned
    /// visuals, or when it has none, those aligned below it. Descendants in
    /// `selected` keep theirs, so one image never appears twice.
    pub fn section_visuals(&self, name: &str, selected: &[String]) -> Vec<&VisualNode> {
        let own = self.visuals_of(name);
        if !own.is_empty() {
            return own;
        }
        let mut seen = HashSet::new();
        self.descendants(name)
            .into_iter()
            .filter(|d| !selected.iter().any(|s| s == d))
            .flat_map(|d| self.visuals_of(d))
            .filter(|v| seen.insert(v.name.as_str()))
            .collect()
    }

    /// Returns a name not yet used by any text node: `name`, `name (2)`, `name (3)`, ...
    pub fn unique_name(&self, name: &str) -> String {
        unique_name(name, |candidate| self.text_nodes.contains_key(candidate))
    }

    /// Appends `child` under `parent`; the child's level is set from the parent.
    pub fn add_child(&mut self, parent: &str, mut child: TextNode) -> Result<(), DagError> {
        let parent_level = self
            .text_nodes
            .get(parent)
            .ok_or_else(|| DagError::UnknownNode(parent.to_string()))?
            .level;
        child.level = parent_level + 1;
        let name = child.name.clone();
        self.text_nodes.insert(name.clone(), child);
        self.text_nodes
            .get_mut(parent)
            .expect("parent checked above")
            .edge
            .push(name);
        Ok(())
    }

    /// Inserts a node verbatim, without touching any parent's edge list.
    pub fn insert_raw(&mut self, node: TextNode) {
        self.text_nodes.insert(node.name.clone(), node);
    }

    pub fn add_visual(&mut self, visual: VisualNode) {
        self.visual_nodes.insert(visual.name.clone(), visual);
    }

    /// Replaces the cross-modal edge set and rebuilds every node's `visual_refs` mirror.
    pub fn set_cross_edges(&mut self, edges: Vec<(String, String)>) {
        self.cross_edges = edges;
        self.rebuild_visual_refs();
    }

    fn rebuild_visual_refs(&mut self) {
        for node in self.text_nodes.values_mut() {
            node.visual_refs.clear();
        }
        for (text_name, visual_name) in &self.cross_edges {
            if let Some(node) = self.text_nodes.get_mut(text_name) {
                if !node.visual_refs.contains(visual_name) {
                    node.visual_refs.push(visual_name.clone());
                }
            }
        }
    }

    /// Parent of every non-root node, derived from edge lists.
    pub fn parent_of(&self, name: &str) -> Option<&str> {
        self.text_nodes
            .values()
            .find(|n| n.edge.iter().any(|c| c == name))
            .map(|n| n.name.as_str())
    }

    /// Every strict descendant of `name` in breadth-first order.
    pub fn descendants(&self, name: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        let mut seen = HashSet::new();
        if let Some(node) = self.text_nodes.get(name) {
            queue.extend(node.edge.iter().map(String::as_str));
        }
        while let Some(next) = queue.pop_front() {
            if !seen.insert(next) {
                continue;
            }
            if let Some(node) = self.text_nodes.get(next) {
                out.push(node.name.as_str());
                queue.extend(node.edge.iter().map(String::as_str));
            }
        }
        out
    }

    pub fn max_level(&self) -> u32 {
        self.text_nodes.values().map(|n| n.level).max().unwrap_or(0)
    }
}

/// `name`, or `name (2)`, `name (3)`, ... whichever is first not `taken`.
pub fn unique_name(name: &str, taken: impl Fn(&str) -> bool) -> String {
    if !taken(name) {
        return name.to_string();
    }
    (2..)
        .map(|i| format!("{name} ({i})"))
        .find(|candidate| !taken(candidate))
        .expect("unbounded suffix search")
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingRoot { root: String },
    RootLevel { root: String, level: u32 },
    ExtraRoot { name: String },
    DanglingEdge { from: String, to: String },
    LevelDiscontinuity { parent: String, child: String, parent_level: u32, child_level: u32 },
    MultipleParents { node: String, parents: Vec<String> },
    Unreachable { node: String },
    DepthExceeded { node: String, level: u32, max: u32 },
    ContentNewline { node: String },
    DanglingCrossEdge { text: String, visual: String },
    BadVisualName { name: String },
    ZeroResolution { name: String },
    Untraceable { parent: String, child: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingRoot { root } => write!(f, "missing root: `{root}` is not a node"),
            Violation::RootLevel { root, level } => {
                write!(f, "root level: `{root}` has level {level}, expected 0")
            }
            Violation::ExtraRoot { name } => {
                write!(f, "extra root: `{name}` has level 0 but is not the root")
            }
            Violation::DanglingEdge { from, to } => {
                write!(f, "dangling edge: `{from}` -> `{to}` names no node")
            }
            Violation::LevelDiscontinuity { parent, child, parent_level, child_level } => write!(
                f,
                "level discontinuity: `{parent}` (level {parent_level}) -> `{child}` (level {child_level})"
            ),
            Violation::MultipleParents { node, parents } => {
                write!(f, "multiple parents: `{node}` is a child of {parents:?}")
            }
            Violation::Unreachable { node } => write!(f, "unreachable: `{node}` is not below the root"),
            Violation::DepthExceeded { node, level, max } => {
                write!(f, "depth exceeded: `{node}` at level {level} > {max}")
            }
            Violation::ContentNewline { node } => {
                write!(f, "content newline: `{node}` content spans several lines")
            }
            Violation::DanglingCrossEdge { text, visual } => {
                write!(f, "dangling cross edge: `{text}` -> `{visual}`")
            }
            Violation::BadVisualName { name } => {
                write!(f, "bad visual name: `{name}` is not of the form ![](path)")
            }
            Violation::ZeroResolution { name } => write!(f, "zero resolution: `{name}`"),
            Violation::Untraceable { parent, child } => {
                write!(f, "untraceable: `{child}` content is not part of `{parent}`")
            }
        }
    }
}

/// Every invariant violation in `dag`; an empty report means the dag is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(dag: &ScholarDag) -> ValidationReport {
    validate_with_depth(dag, DEFAULT_MAX_DEPTH)
}

pub fn validate_with_depth(dag: &ScholarDag, max_depth: u32) -> ValidationReport {
    let mut violations = Vec::new();
    let nodes = &dag.text_nodes;

    match nodes.get(&dag.root) {
        None => violations.push(Violation::MissingRoot { root: dag.root.clone() }),
        Some(root) if root.level != 0 => violations.push(Violation::RootLevel {
            root: dag.root.clone(),
            level: root.level,
        }),
        Some(_) => {}
    }

    let mut parents: IndexMap<&str, Vec<&str>> = IndexMap::new();
    for node in nodes.values() {
        if node.level == 0 && node.name != dag.root {
            violations.push(Violation::ExtraRoot { name: node.name.clone() });
        }
        if node.level > max_depth {
            violations.push(Violation::DepthExceeded {
                node: node.name.clone(),
                level: node.level,
                max: max_depth,
            });
        }
        if node.content.contains(['\n', '\r']) {
            violations.push(Violation::ContentNewline { node: node.name.clone() });
        }
        for child_name in &node.edge {
            match nodes.get(child_name) {
                None => violations.push(Violation::DanglingEdge {
                    from: node.name.clone(),
                    to: child_name.clone(),
                }),
                Some(child) => {
                    if child.level != node.level + 1 {
                        violations.push(Violation::LevelDiscontinuity {
                            parent: node.name.clone(),
                            child: child.name.clone(),
                            parent_level: node.level,
                            child_level: child.level,
                        });
                    }
                    parents.entry(child.name.as_str()).or_default().push(node.name.as_str());
                }
            }
        }
    }

    for (child, ps) in &parents {
        if ps.len() > 1 || *child == dag.root {
            violations.push(Violation::MultipleParents {
                node: child.to_string(),
                parents: ps.iter().map(|p| p.to_string()).collect(),
            });
        }
    }

    let reachable = reachable_from_root(dag);
    for node in nodes.values() {
        if !reachable.contains(node.name.as_str()) && node.name != dag.root {
            violations.push(Violation::Unreachable { node: node.name.clone() });
        }
    }

    for visual in dag.visual_nodes.values() {
        if text::image_ref_path(&visual.name).is_none_or(|p| p.is_empty() || p.contains(char::is_whitespace)) {
            violations.push(Violation::BadVisualName { name: visual.name.clone() });
        }
        if visual.resolution.width == 0 || visual.resolution.height == 0 {
            violations.push(Violation::ZeroResolution { name: visual.name.clone() });
        }
    }
    for (text_name, visual_name) in &dag.cross_edges {
        if !nodes.contains_key(text_name) || !dag.visual_nodes.contains_key(visual_name) {
            violations.push(Violation::DanglingCrossEdge {
                text: text_name.clone(),
                visual: visual_name.clone(),
            });
        }
    }

    ValidationReport { violations }
}

fn reachable_from_root(dag: &ScholarDag) -> HashSet<&str> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    if dag.text_nodes.contains_key(&dag.root) {
        queue.push_back(dag.root.as_str());
    }
    while let Some(name) = queue.pop_front() {
        if !seen.insert(name) {
            continue;
        }
        if let Some(node) = dag.text_nodes.get(name) {
            for child in &node.edge {
                if let Some(c) = dag.text_nodes.get(child) {
                    queue.push_back(c.name.as_str());
                }
            }
        }
    }
    seen
}

// ---------------------------------------------------------------------------
// Traversal
// ---------------------------------------------------------------------------

/// Breadth-first selection of content nodes below the root: level by level,
/// siblings in edge order, cut after `budget` nodes.
pub fn bfs_select(dag: &ScholarDag, budget: TraversalBudget) -> Result<Vec<String>, DagError> {
    let report = validate(dag);
    if !report.is_valid() {
        return Err(DagError::InvalidDag(report.violations));
    }
    Ok(bfs_order(dag).into_iter().take(budget.get()).collect())
}

fn bfs_order(dag: &ScholarDag) -> Vec<String> {
    let mut out = Vec::new();
    let mut queue: VecDeque<&str> = dag.root().edge.iter().map(String::as_str).collect();
    while let Some(name) = queue.pop_front() {
        let node = &dag.text_nodes[name];
        out.push(node.name.clone());
        queue.extend(node.edge.iter().map(String::as_str));
    }
    out
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DagDoc {
    nodes: Vec<RawNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawNode {
    Text(RawText),
    Visual(RawVisual),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawText {
    name: String,
    content: String,
    edge: Vec<String>,
    level: u32,
    visual_node: Vec<RawVisual>,
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct RawVisual {
    name: String,
    caption: String,
    visual_node: u8,
    formula: u8,
    resolution: Resolution,
}

impl From<&VisualNode> for RawVisual {
    fn from(v: &VisualNode) -> Self {
        RawVisual {
            name: v.name.clone(),
            caption: v.caption.clone(),
            visual_node: 1,
            formula: u8::from(v.is_formula),
            resolution: v.resolution,
        }
    }
}

impl From<RawVisual> for VisualNode {
    fn from(v: RawVisual) -> Self {
        VisualNode {
            name: v.name,
            caption: v.caption,
            is_formula: v.formula != 0,
            resolution: v.resolution,
        }
    }
}

/// Pretty-printed `dag.json` bytes. Refuses invalid dags.
pub fn serialize(dag: &ScholarDag) -> Result<Vec<u8>, DagError> {
    let report = validate(dag);
    if !report.is_valid() {
        return Err(DagError::InvalidDag(report.violations));
    }
    let mut nodes: Vec<RawNode> = dag
        .text_nodes
        .values()
        .map(|n| {
            RawNode::Text(RawText {
                name: n.name.clone(),
                content: n.content.clone(),
                edge: n.edge.clone(),
                level: n.level,
                visual_node: n
                    .visual_refs
                    .iter()
                    .filter_map(|v| dag.visual_nodes.get(v))
                    .map(RawVisual::from)
                    .collect(),
            })
        })
        .collect();
    nodes.extend(dag.visual_nodes.values().map(|v| RawNode::Visual(v.into())));
    let mut bytes = serde_json::to_vec_pretty(&DagDoc { nodes }).expect("dag json is serializable");
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parses `dag.json` bytes. Structural invariants are left to [`validate`].
pub fn deserialize(bytes: &[u8]) -> Result<ScholarDag, DagError> {
    let doc: DagDoc = serde_json::from_slice(bytes).map_err(|e| DagError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let parse_err = |reason: String| DagError::Parse { offset: bytes.len(), reason };

    let mut texts = Vec::new();
    let mut visuals: IndexMap<String, VisualNode> = IndexMap::new();
    let mut embedded: Vec<(String, RawVisual)> = Vec::new();
    for node in doc.nodes {
        match node {
            RawNode::Text(t) => {
                for v in &t.visual_node {
                    embedded.push((t.name.clone(), v.clone()));
                }
                texts.push(t);
            }
            RawNode::Visual(v) => {
                if visuals.contains_key(&v.name) {
                    return Err(parse_err(format!("duplicate visual node `{}`", v.name)));
                }
                visuals.insert(v.name.clone(), v.into());
            }
        }
    }

    let root = texts
        .iter()
        .find(|t| t.level == 0)
        .map(|t| t.name.clone())
        .ok_or_else(|| parse_err("no level-0 root node".to_string()))?;

    let mut text_nodes = IndexMap::new();
    for t in texts {
        if text_nodes.contains_key(&t.name) {
            return Err(parse_err(format!("duplicate text node `{}`", t.name)));
        }
        text_nodes.insert(
            t.name.clone(),
            TextNode { name: t.name, content: t.content, edge: t.edge, level: t.level, visual_refs: Vec::new() },
        );
    }

    let mut cross_edges = Vec::new();
    for (text_name, raw) in embedded {
        visuals.entry(raw.name.clone()).or_insert_with(|| raw.clone().into());
        let edge = (text_name, raw.name);
        if !cross_edges.contains(&edge) {
            cross_edges.push(edge);
        }
    }

    let mut dag = ScholarDag { root, text_nodes, visual_nodes: visuals, cross_edges: Vec::new() };
    dag.set_cross_edges(cross_edges);
    Ok(dag)
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current_line = 1;
    for (idx, &b) in bytes.iter().enumerate() {
        if current_line == line {
            return (idx + column.saturating_sub(1)).min(bytes.len());
        }
        if b == b'\n' {
            current_line += 1;
        }
    }
    bytes.len()
}

/// Children of every node, keyed by name; convenience for backends.
pub fn child_map(dag: &ScholarDag) -> HashMap<&str, Vec<&str>> {
    dag.text_nodes
        .values()
        .map(|n| (n.name.as_str(), n.edge.iter().map(String::as_str).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn root_only() -> ScholarDag {
        ScholarDag::new(TextNode::new("Paper", "A, B", 0))
    }

    fn chain() -> ScholarDag {
        let mut dag = root_only();
        dag.add_child("Paper", TextNode::new("a", "alpha", 1)).unwrap();
        dag.add_child("a", TextNode::new("b", "beta", 2)).unwrap();
        dag
    }

    fn sectioned() -> ScholarDag {
        let mut dag = root_only();
        for s in 1..=4 {
            let sec = format!("S{s}");
            dag.add_child("Paper", TextNode::new(&sec, "x", 1)).unwrap();
            for c in 1..=4 {
                dag.add_child(&sec, TextNode::new(format!("S{s}.{c}"), "y", 2)).unwrap();
            }
        }
        dag
    }

    #[test]
    fn section_visuals_fall_back_to_unselected_descendants() {
        let mut dag = chain();
        for p in ["images/a.png", "images/b.png"] {
            dag.add_visual(VisualNode { name: format!("![]({p})"), caption: String::new(), is_formula: false, resolution: Resolution::new(4, 3) });
        }
        dag.set_cross_edges(vec![("b".into(), "![](images/a.png)".into()), ("Paper".into(), "![](images/b.png)".into())]);
        let names = |v: Vec<&VisualNode>| v.into_iter().map(|v| v.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(dag.section_visuals("a", &[])), ["![](images/a.png)"]);
        assert!(dag.section_visuals("a", &["b".into()]).is_empty());
        assert_eq!(names(dag.section_visuals("Paper", &[])), ["![](images/b.png)"]);
    }

    #[test]
    fn minimal_dag_is_valid() {
        assert!(validate(&root_only()).is_valid());
    }

    #[test]
    fn level_discontinuity_is_reported() {
        let mut dag = root_only();
        dag.add_child("Paper", TextNode::new("a", "x", 1)).unwrap();
        dag.insert_raw(TextNode::new("b", "y", 1));
        dag.text_nodes.get_mut("a").unwrap().edge.push("b".into());
        let report = validate(&dag);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert!(matches!(report.violations[0], Violation::LevelDiscontinuity { .. }));
        assert!(report.violations[0].to_string().starts_with("level discontinuity"));
    }

    #[test]
    fn dangling_edge_is_reported() {
        let mut dag = root_only();
        dag.text_nodes.get_mut("Paper").unwrap().edge.push("ghost".into());
        let report = validate(&dag);
        assert_eq!(
            report.violations,
            vec![Violation::DanglingEdge { from: "Paper".into(), to: "ghost".into() }]
        );
    }

    #[test]
    fn depth_and_newline_and_visual_checks() {
        let mut dag = chain();
        dag.text_nodes.get_mut("b").unwrap().content = "two\nlines".into();
        dag.add_visual(VisualNode {
            name: "images/a.jpg".into(),
            caption: String::new(),
            is_formula: false,
            resolution: Resolution::new(0, 5),
        });
        dag.set_cross_edges(vec![("b".into(), "![](missing.png)".into())]);
        let report = validate_with_depth(&dag, 1);
        let kinds: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        assert!(kinds.iter().any(|k| k.starts_with("depth exceeded")), "{kinds:?}");
        assert!(kinds.iter().any(|k| k.starts_with("content newline")));
        assert!(kinds.iter().any(|k| k.starts_with("bad visual name")));
        assert!(kinds.iter().any(|k| k.starts_with("zero resolution")));
        assert!(kinds.iter().any(|k| k.starts_with("dangling cross edge")));
    }

    #[test]
    fn shared_child_is_reported() {
        let mut dag = root_only();
        dag.add_child("Paper", TextNode::new("a", "x", 1)).unwrap();
        dag.add_child("Paper", TextNode::new("b", "x", 1)).unwrap();
        dag.add_child("a", TextNode::new("c", "x", 2)).unwrap();
        dag.text_nodes.get_mut("b").unwrap().edge.push("c".into());
        assert!(validate(&dag)
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MultipleParents { .. })));
    }

    #[test]
    fn bfs_chain_shorter_than_budget() {
        let picked = bfs_select(&chain(), TraversalBudget::new(5).unwrap()).unwrap();
        assert_eq!(picked, ["a", "b"]);
    }

    #[test]
    fn bfs_sections_before_subsections() {
        let picked = bfs_select(&sectioned(), TraversalBudget::PPT).unwrap();
        assert_eq!(picked.len(), 15);
        assert_eq!(&picked[..4], ["S1", "S2", "S3", "S4"]);
        let expected_children: Vec<String> = (1..=4)
            .flat_map(|s| (1..=4).map(move |c| format!("S{s}.{c}")))
            .take(11)
            .collect();
        assert_eq!(&picked[4..], expected_children.as_slice());
    }

    #[test]
    fn bfs_budget_floor() {
        let picked = bfs_select(&sectioned(), TraversalBudget::new(1).unwrap()).unwrap();
        assert_eq!(picked, ["S1"]);
        assert_eq!(TraversalBudget::new(0), Err(DagError::ZeroBudget));
    }

    #[test]
    fn bfs_rejects_invalid_dag() {
        let mut dag = root_only();
        dag.text_nodes.get_mut("Paper").unwrap().edge.push("ghost".into());
        assert!(matches!(
            bfs_select(&dag, TraversalBudget::PR),
            Err(DagError::InvalidDag(_))
        ));
    }

    #[test]
    fn root_only_json_shape() {
        let bytes = serialize(&root_only()).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        let node = &value["nodes"][0];
        assert_eq!(node["level"], 0);
        assert_eq!(node["edge"], serde_json::json!([]));
        assert_eq!(node["visual_node"], serde_json::json!([]));
        let keys: Vec<&String> = node.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["name", "content", "edge", "level", "visual_node"]);
    }

    #[test]
    fn three_level_round_trip_with_visuals() {
        let mut dag = chain();
        dag.add_visual(VisualNode {
            name: "![](images/f1.png)".into(),
            caption: "Figure 1: Pipeline".into(),
            is_formula: false,
            resolution: Resolution::new(800, 400),
        });
        dag.add_visual(VisualNode {
            name: "![](images/eq.png)".into(),
            caption: "Equation 2".into(),
            is_formula: true,
            resolution: Resolution::new(900, 90),
        });
        dag.set_cross_edges(vec![("b".into(), "![](images/f1.png)".into())]);
        let bytes = serialize(&dag).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("\"resolution\": \"800x400\""));
        assert!(text.contains("\"formula\": 1"));
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, dag);
        assert_eq!(serialize(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_json_is_a_parse_error() {
        let bytes = serialize(&chain()).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        match deserialize(cut) {
            Err(DagError::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(deserialize(b"{\"nodes\": []}"), Err(DagError::Parse { .. })));
        assert!(matches!(deserialize(b"\x00\xff"), Err(DagError::Parse { offset: 0, .. })));
    }

    #[test]
    fn unique_names_get_counters() {
        let mut dag = chain();
        assert_eq!(dag.unique_name("z"), "z");
        assert_eq!(dag.unique_name("a"), "a (2)");
        dag.add_child("Paper", TextNode::new("a (2)", "", 1)).unwrap();
        assert_eq!(dag.unique_name("a"), "a (3)");
    }

    #[test]
    fn resolution_parsing() {
        assert_eq!("800x400".parse::<Resolution>(), Ok(Resolution::new(800, 400)));
        assert!("800".parse::<Resolution>().is_err());
    }
}
