use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize};

use super::outline::SlideOutline;
use super::template::{CONTENTS, TITLE_SLIDE};
use crate::dag::{Resolution, VisualNode};
use crate::measure::{self, Rect, Typography};
use crate::text;

pub const SLIDE_WIDTH: u32 = 1280;
pub const SLIDE_HEIGHT: u32 = 720;
const MARGIN: f64 = 32.0;
const GAP: f64 = 16.0;
/// Inner padding of every slot.
pub const SLOT_PADDING: f64 = 8.0;
/// Left indent of list items.
pub const BULLET_INDENT: f64 = 24.0;

pub const BODY_FONT_MIN: f64 = 16.0;
pub const BODY_FONT_MAX: f64 = 24.0;
pub const LINE_HEIGHT_MAX: f64 = 1.5;
pub const DEFAULT_BODY: SlideTypography = SlideTypography { font_size: 20.0, line_height: 1.3 };
const HEADING_TYPO: SlideTypography = SlideTypography { font_size: 28.0, line_height: 1.2 };
const TITLE_TYPO: SlideTypography = SlideTypography { font_size: 40.0, line_height: 1.2 };

pub const ALLOWED_TAGS: [&str; 5] = ["ul", "li", "p", "b", "br"];
pub const FORBIDDEN_ENTITIES: [&str; 3] = ["&lt;", "&gt;", "&amp;"];

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<(/?)([A-Za-z][A-Za-z0-9]*)[^>]*>").expect("tag regex"));
static BOLD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\*\*([^*]+)\*\*").expect("bold regex"));
static IMAGE_MD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"!\[[^\]]*\]\([^)]*\)").expect("image md regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Heading,
    Text,
    Figure,
    Formula,
}

impl SlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Heading => "heading",
            SlotKind::Text => "text",
            SlotKind::Figure => "figure",
            SlotKind::Formula => "formula",
        }
    }

    pub fn is_image(self) -> bool {
        matches!(self, SlotKind::Figure | SlotKind::Formula)
    }
}

impl FromStr for SlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heading" => Ok(SlotKind::Heading),
            "text" => Ok(SlotKind::Text),
            "figure" => Ok(SlotKind::Figure),
            "formula" => Ok(SlotKind::Formula),
            other => Err(format!("unknown data-slot `{other}`")),
        }
    }
}

/// Font size in points and line-height multiplier. Sizes may arrive as
/// numbers or as `"20pt"` strings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideTypography {
    #[serde(rename = "font-size", deserialize_with = "points")]
    pub font_size: f64,
    #[serde(rename = "line-height")]
    pub line_height: f64,
}

fn points<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(n) => Ok(n),
        Raw::Str(s) => {
            let t = s.trim();
            t.strip_suffix("pt").unwrap_or(t).trim().parse().map_err(serde::de::Error::custom)
        }
    }
}

impl SlideTypography {
    pub fn measure(&self) -> Typography {
        Typography::new(self.font_size, self.line_height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSlot {
    pub name: String,
    pub caption: String,
    pub resolution: Resolution,
}

impl ImageSlot {
    pub fn path(&self) -> &str {
        text::image_ref_path(&self.name).unwrap_or(&self.name)
    }
}

impl From<&VisualNode> for ImageSlot {
    fn from(v: &VisualNode) -> Self {
        ImageSlot { name: v.name.clone(), caption: v.caption.clone(), resolution: v.resolution }
    }
}

/// One container or slot of a slide. Containers carry `direction` and
/// `children`; slots carry `slot` and their payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode {
    pub id: String,
    pub flex: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<SlotKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typography: Option<SlideTypography>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageSlot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<LayoutNode>,
}

impl LayoutNode {
    pub fn container(id: String, flex: f64, direction: Direction) -> Self {
        Self {
            id,
            flex,
            direction: Some(direction),
            slot: None,
            heading: None,
            typography: None,
            content: None,
            image: None,
            children: Vec::new(),
        }
    }

    pub fn slot(id: String, flex: f64, kind: SlotKind) -> Self {
        Self { slot: Some(kind), direction: None, ..Self::container(id, flex, Direction::Column) }
    }

    pub fn find(&self, id: &str) -> Option<&LayoutNode> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut LayoutNode> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    /// Slots in document order.
    pub fn leaves(&self) -> Box<dyn Iterator<Item = &LayoutNode> + '_> {
        if self.slot.is_some() {
            Box::new(std::iter::once(self))
        } else {
            Box::new(self.children.iter().flat_map(|c| c.leaves()))
        }
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut LayoutNode> {
        if self.slot.is_some() {
            return vec![self];
        }
        self.children.iter_mut().flat_map(|c| c.leaves_mut()).collect()
    }

    pub fn contains_image(&self) -> bool {
        self.leaves().any(|l| l.slot.is_some_and(SlotKind::is_image))
    }

    /// Parent container of the node with `id`.
    pub fn parent_of(&self, id: &str) -> Option<&LayoutNode> {
        if self.children.iter().any(|c| c.id == id) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.parent_of(id))
    }

    /// Slide heading text, if any.
    pub fn heading_text(&self) -> Option<&str> {
        self.leaves().find(|l| l.slot == Some(SlotKind::Heading)).and_then(|l| l.heading.as_deref())
    }

    fn text_words(&self) -> usize {
        self.leaves()
            .filter(|l| l.slot == Some(SlotKind::Text))
            .filter_map(|l| l.content.as_deref())
            .map(|c| text::word_count(&text::strip_tags(c)))
            .sum()
    }

    /// Words across all text slots.
    pub fn body_words(&self) -> usize {
        self.text_words()
    }
}

/// Outer boxes of every node, keyed by id, for a canvas of the given size.
pub fn compute_boxes(tree: &LayoutNode, width: f64, height: f64) -> IndexMap<String, Rect> {
    let mut out = IndexMap::new();
    let outer = Rect::new(MARGIN, MARGIN, width - 2.0 * MARGIN, height - 2.0 * MARGIN);
    place(tree, outer, &mut out);
    out
}

fn place(node: &LayoutNode, rect: Rect, out: &mut IndexMap<String, Rect>) {
    out.insert(node.id.clone(), rect);
    if node.children.is_empty() {
        return;
    }
    let n = node.children.len() as f64;
    let total: f64 = node.children.iter().map(|c| c.flex.max(0.0)).sum();
    let row = node.direction == Some(Direction::Row);
    let span = if row { rect.width } else { rect.height };
    let available = (span - GAP * (n - 1.0)).max(0.0);
    let mut offset = 0.0;
    for child in &node.children {
        let share = if total > 0.0 { available * child.flex.max(0.0) / total } else { available / n };
        let child_rect = if row {
            Rect::new(rect.x + offset, rect.y, share, rect.height)
        } else {
            Rect::new(rect.x, rect.y + offset, rect.width, share)
        };
        place(child, child_rect, out);
        offset += share + GAP;
    }
}

/// Paragraphs of raw slide HTML with their indent: one per `li`, `p` or
/// `br`-separated run.
pub fn paragraphs(html: &str) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    let mut last = 0;
    let flush = |buf: &mut String, depth: usize, out: &mut Vec<(String, f64)>| {
        let t = text::collapse_whitespace(buf);
        if !t.is_empty() {
            out.push((t, depth as f64 * BULLET_INDENT));
        }
        buf.clear();
    };
    for cap in TAG.captures_iter(html) {
        let m = cap.get(0).expect("whole match");
        current.push_str(&html[last..m.start()]);
        last = m.end();
        let closing = &cap[1] == "/";
        let name = cap[2].to_ascii_lowercase();
        match name.as_str() {
            "ul" | "ol" => {
                flush(&mut current, depth, &mut out);
                depth = if closing { depth.saturating_sub(1) } else { depth + 1 };
            }
            "li" | "p" | "br" | "div" => flush(&mut current, depth, &mut out),
            _ => {}
        }
    }
    current.push_str(&html[last..]);
    flush(&mut current, depth, &mut out);
    out
}

/// Height the content of a text slot needs inside `width` px.
pub fn content_height(html: &str, width: f64, typo: &SlideTypography) -> Result<f64, measure::MeasureError> {
    let t = typo.measure();
    let mut total = 0.0;
    for (para, indent) in paragraphs(html) {
        total += measure::text_height(&para, width - indent, &t)?;
    }
    Ok(total)
}

/// Whether a slot's text fits its box. Too-narrow boxes count as overflow.
pub fn slot_fits(leaf: &LayoutNode, rect: Rect) -> bool {
    let inner_w = rect.width - 2.0 * SLOT_PADDING;
    let inner_h = rect.height - 2.0 * SLOT_PADDING;
    let Some(typo) = leaf.typography else { return true };
    let needed = match leaf.slot {
        Some(SlotKind::Heading) => leaf
            .heading
            .as_deref()
            .map(|h| measure::text_height(h, inner_w, &typo.measure())),
        Some(SlotKind::Text) => leaf.content.as_deref().map(|c| content_height(c, inner_w, &typo)),
        _ => None,
    };
    match needed {
        None => true,
        Some(Ok(h)) => h <= inner_h + 1e-6,
        Some(Err(_)) => false,
    }
}

/// Ids of slots whose text does not fit, in document order.
pub fn overflowing_slots(tree: &LayoutNode) -> Vec<String> {
    let boxes = compute_boxes(tree, SLIDE_WIDTH as f64, SLIDE_HEIGHT as f64);
    tree.leaves()
        .filter(|l| !slot_fits(l, boxes[&l.id]))
        .map(|l| l.id.clone())
        .collect()
}

/// Tags outside the allowed set, in order of appearance.
pub fn disallowed_tags(html: &str) -> Vec<String> {
    TAG.captures_iter(html)
        .map(|c| c[2].to_ascii_lowercase())
        .filter(|t| !ALLOWED_TAGS.contains(&t.as_str()))
        .collect()
}

pub fn has_escaped_tags(html: &str) -> bool {
    FORBIDDEN_ENTITIES.iter().any(|e| html.contains(e))
}

/// Slide-ready text: image markdown and tag-like fragments dropped, `**x**` made bold.
pub fn clean_unit(unit: &str) -> String {
    let no_images = IMAGE_MD.replace_all(unit, " ");
    let no_tags = TAG.replace_all(&no_images, " ");
    let bold = BOLD.replace_all(&no_tags, "<b>$1</b>");
    text::collapse_whitespace(&bold)
}

/// A `<ul>` with one item per unit.
pub fn bullets<S: AsRef<str>>(units: &[S]) -> String {
    let mut html = String::from("<ul>");
    for u in units {
        let u = clean_unit(u.as_ref());
        if !u.is_empty() {
            html.push_str("<li>");
            html.push_str(&u);
            html.push_str("</li>");
        }
    }
    html.push_str("</ul>");
    html
}

/// Source units of a slide's text: section titles on the contents slide,
/// author lines on the title slide, sentences elsewhere.
pub fn text_units(outline: &SlideOutline, template: &str) -> Vec<String> {
    match template {
        CONTENTS => outline.text.lines().map(|l| l.trim().trim_end_matches(',').to_string()).filter(|l| !l.is_empty()).collect(),
        TITLE_SLIDE => outline.text.lines().skip(1).map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect(),
        _ => text::sentences(&outline.text),
    }
}

/// Units assigned to text slot `index` of `count`: consecutive, near-equal chunks.
pub fn slot_units(units: &[String], index: usize, count: usize) -> Vec<String> {
    let count = count.max(1);
    let per = units.len().div_ceil(count);
    units.iter().skip(index * per).take(per).cloned().collect()
}

/// Renders the units of one slot, the title slide's author block as paragraphs.
pub fn render_units(units: &[String], template: &str) -> String {
    if template == TITLE_SLIDE {
        units.iter().map(|u| format!("<p>{}</p>", clean_unit(u))).collect()
    } else {
        bullets(units)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotMismatch {
    pub template: String,
    pub slots: usize,
    pub visuals: usize,
}

impl fmt::Display for SlotMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "slot mismatch in {}: {} image slots for {} visuals",
            self.template, self.slots, self.visuals
        )
    }
}

/// Fills a template skeleton with the outline. Visual slots bind figures and
/// formulas by kind first, then any leftovers left to right; unfilled slots
/// are collapsed and surplus visuals dropped, both reported as a mismatch.
pub fn fill(
    mut skeleton: LayoutNode,
    outline: &SlideOutline,
    template: &str,
    heading: &str,
) -> (LayoutNode, Option<SlotMismatch>) {
    let units = text_units(outline, template);
    let text_slots = skeleton.leaves().filter(|l| l.slot == Some(SlotKind::Text)).count();
    let image_slots = skeleton.leaves().filter(|l| l.slot.is_some_and(SlotKind::is_image)).count();

    let mut figures: Vec<&VisualNode> = outline.figures.iter().collect();
    let mut formulas: Vec<&VisualNode> = outline.formulas.iter().collect();
    // Kind-matched binding first.
    let mut bound: IndexMap<String, ImageSlot> = IndexMap::new();
    for leaf in skeleton.leaves() {
        let pool = match leaf.slot {
            Some(SlotKind::Figure) => &mut figures,
            Some(SlotKind::Formula) => &mut formulas,
            _ => continue,
        };
        if !pool.is_empty() {
            bound.insert(leaf.id.clone(), pool.remove(0).into());
        }
    }
    let mut rest: Vec<&VisualNode> = figures.into_iter().chain(formulas).collect();
    for leaf in skeleton.leaves() {
        if leaf.slot.is_some_and(SlotKind::is_image) && !bound.contains_key(&leaf.id) && !rest.is_empty() {
            bound.insert(leaf.id.clone(), rest.remove(0).into());
        }
    }
    let visuals = outline.figures.len() + outline.formulas.len();
    let mismatch = (image_slots != visuals).then(|| SlotMismatch {
        template: template.to_string(),
        slots: image_slots,
        visuals,
    });

    let title_slide = template == TITLE_SLIDE;
    let mut text_index = 0;
    for leaf in skeleton.leaves_mut() {
        match leaf.slot {
            Some(SlotKind::Heading) => {
                leaf.heading = Some(heading.to_string());
                leaf.typography = Some(if title_slide { TITLE_TYPO } else { HEADING_TYPO });
            }
            Some(SlotKind::Text) => {
                let mine = slot_units(&units, text_index, text_slots);
                leaf.content = Some(render_units(&mine, template));
                leaf.typography = Some(DEFAULT_BODY);
                text_index += 1;
            }
            Some(_) => leaf.image = bound.shift_remove(&leaf.id),
            None => {}
        }
    }
    collapse_empty(&mut skeleton);
    (skeleton, mismatch)
}

/// Drops image slots without an image, text slots without text, and
/// containers left empty.
fn collapse_empty(node: &mut LayoutNode) {
    node.children.retain_mut(|c| {
        collapse_empty(c);
        match c.slot {
            Some(k) if k.is_image() => c.image.is_some(),
            Some(SlotKind::Text) => c.content.as_deref().is_some_and(|t| !text::strip_tags(t).is_empty()),
            Some(SlotKind::Heading) => true,
            _ => !c.children.is_empty(),
        }
    });
}

/// Self-contained slide HTML with absolutely positioned slots; image sources
/// are `asset_prefix` followed by the visual's relative path.
pub fn render(tree: &LayoutNode, title: &str, asset_prefix: &str) -> String {
    let (w, h) = (SLIDE_WIDTH as f64, SLIDE_HEIGHT as f64);
    let boxes = compute_boxes(tree, w, h);
    let mut html = format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>{}</title>\n<style>\n\
body{{margin:0}}\n\
.slide{{position:relative;width:{SLIDE_WIDTH}px;height:{SLIDE_HEIGHT}px;overflow:hidden;background:#ffffff;font-family:Helvetica,Arial,sans-serif;color:#1d2733}}\n\
.slot{{position:absolute;box-sizing:border-box;padding:{SLOT_PADDING}px;overflow:hidden}}\n\
.slot ul{{margin:0;padding-left:{BULLET_INDENT}px}}\n\
.slot li,.slot p{{margin:0}}\n\
.heading{{font-weight:bold;color:#143d6b}}\n\
.figure,.formula{{display:flex;align-items:center;justify-content:center}}\n\
.figure img,.formula img{{max-width:100%;max-height:100%;object-fit:contain}}\n\
</style>\n</head>\n<body>\n<div class=\"slide\">\n",
        text::escape_html(title)
    );
    for leaf in tree.leaves() {
        let r = boxes[&leaf.id];
        let kind = leaf.slot.map(SlotKind::as_str).unwrap_or("text");
        let mut style = format!("left:{:.1}px;top:{:.1}px;width:{:.1}px;height:{:.1}px", r.x, r.y, r.width, r.height);
        if let Some(t) = leaf.typography {
            style.push_str(&format!(";font-size:{}pt;line-height:{}", t.font_size, t.line_height));
        }
        let body = match leaf.slot {
            Some(SlotKind::Heading) => text::escape_html(leaf.heading.as_deref().unwrap_or("")),
            Some(SlotKind::Text) => leaf.content.clone().unwrap_or_default(),
            _ => leaf
                .image
                .as_ref()
                .map(|img| format!("<img src=\"{}{}\" alt=\"{}\"/>", text::escape_html(asset_prefix), text::escape_html(img.path()), text::escape_html(&img.caption)))
                .unwrap_or_default(),
        };
        html.push_str(&format!("<div class=\"slot {kind}\" data-id=\"{}\" style=\"{style}\">{body}</div>\n", leaf.id));
    }
    html.push_str("</div>\n</body>\n</html>\n");
    html
}
