//! Slide deck backend: a title and a contents slide, then one slide per
//! BFS-selected node, each assembled from a template and refined by
//! alternating audits and revisions.

pub mod audit;
pub mod layout;
pub mod outline;
pub mod revise;
pub mod template;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use audit::{lint, Action, AuditReport, AuditStatus, Instruction};
pub use layout::{LayoutNode, SlideTypography, SlotKind, SLIDE_HEIGHT, SLIDE_WIDTH};
pub use outline::{gen_slide_outline, init_outline, SlideOutline};
pub use revise::{audit, refine_loop, revise, Refined, VisionAudit};
pub use template::{classify, Orientation, TemplateLibrary, CONTENTS, CONTENT_TEMPLATES, TITLE_SLIDE};

use crate::dag::{self, DagError, ScholarDag, TraversalBudget, VisualNode};
use crate::gateway::{extract_json, Gateway, GatewayError, Part, StageTag};
use crate::measure::{self, MeasureError};
use crate::prompts;
use crate::text;

pub const DEFAULT_BUDGET: usize = 15;
pub const DEFAULT_REFINE_ITERS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PptError {
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("template `{0}` not found in the template library")]
    TemplateMissing(String),
    #[error("template `{name}` is malformed: {reason}")]
    TemplateParse { name: String, reason: String },
    #[error("audit report unparseable after retries: {}", .0.join("; "))]
    ReportParse(Vec<String>),
    #[error(transparent)]
    Render(#[from] MeasureError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl PptError {
    pub fn is_model_failure(&self) -> bool {
        matches!(self, PptError::Gateway(_) | PptError::ReportParse(_))
    }
}

#[derive(Debug, Clone)]
pub struct PptOptions {
    pub budget: usize,
    /// Maximum audits per slide.
    pub refine_iters: usize,
    pub templates: TemplateLibrary,
    /// Enables the vision audit on rendered slides.
    pub renderer_cmd: Option<String>,
    /// Bundle directory image paths are relative to.
    pub asset_dir: Option<PathBuf>,
}

impl Default for PptOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            refine_iters: DEFAULT_REFINE_ITERS,
            templates: TemplateLibrary::embedded(),
            renderer_cmd: None,
            asset_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlideRecord {
    /// Source node; `None` for the title and contents slides.
    pub node: Option<String>,
    #[serde(serialize_with = "outline_json")]
    pub outline: SlideOutline,
    pub template: String,
    pub layout: LayoutNode,
    pub audits: Vec<AuditReport>,
    pub warnings: Vec<String>,
}

fn outline_json<S: serde::Serializer>(o: &SlideOutline, s: S) -> Result<S::Ok, S::Error> {
    o.to_json().serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct Deck {
    pub slides: Vec<SlideRecord>,
    pub warnings: Vec<String>,
}

/// Template request body: the outline as a one-element array.
pub fn template_request_text(outline: &SlideOutline) -> String {
    serde_json::to_string_pretty(&json!([outline.to_json()])).expect("json")
}

/// Deterministic choice for an outline.
pub fn classify_outline(outline: &SlideOutline) -> &'static str {
    let resolutions: Vec<_> = outline.figures.iter().map(|f| f.resolution).collect();
    classify(
        outline.figures.len(),
        outline.formulas.len(),
        Orientation::dominant(&resolutions),
        !outline.text.trim().is_empty(),
    )
}

fn check_template_answer(value: &Value) -> Result<String, Vec<String>> {
    let name = value.get("template").and_then(Value::as_str).map(str::trim).unwrap_or("");
    if template::is_content_template(name) {
        Ok(name.to_string())
    } else {
        Err(vec![format!(
            "`template` must be one of the exact filenames {}; found `{name}`",
            CONTENT_TEMPLATES.join(", ")
        )])
    }
}

/// Template for a content slide. The classifier stands in when the model is unreachable.
pub fn select_template(outline: &SlideOutline, gateway: &Gateway, warnings: &mut Vec<String>) -> Result<String, PptError> {
    let request = gateway.request(StageTag::PptSlide, prompts::ARRANGE_TEMPLATE, vec![Part::text(template_request_text(outline))]);
    let answer = gateway.complete_checked(&request, gateway.validation_retries(), |answer| {
        let value = extract_json(answer).map_err(|e| vec![e.to_string()])?;
        check_template_answer(&value)
    });
    match answer {
        Ok(name) => Ok(name),
        Err(e) if e.is_unavailable() => {
            warnings.push(format!("template model unavailable ({e}); rule classifier used"));
            Ok(classify_outline(outline).to_string())
        }
        Err(e) => Err(e.into()),
    }
}

/// Fills the template and renders HTML with images under `asset_prefix`.
pub fn assemble(
    outline: &SlideOutline,
    template: &str,
    heading: &str,
    library: &TemplateLibrary,
    asset_prefix: &str,
) -> Result<(LayoutNode, String, Vec<String>), PptError> {
    let skeleton = library.skeleton(template)?;
    let (tree, mismatch) = layout::fill(skeleton, outline, template, heading);
    let html = layout::render(&tree, heading, asset_prefix);
    Ok((tree, html, mismatch.map(|m| m.to_string()).into_iter().collect()))
}

fn heading_for(outline: &SlideOutline, template: &str, node: Option<&str>) -> String {
    match (template, node) {
        (TITLE_SLIDE, _) => outline.text.lines().next().unwrap_or("").to_string(),
        (CONTENTS, _) => "Contents".into(),
        (_, Some(name)) => text::strip_numbering(name),
        _ => String::new(),
    }
}

fn build_slide(
    node: Option<&str>,
    outline: SlideOutline,
    template: String,
    mut warnings: Vec<String>,
    gateway: &Gateway,
    opts: &PptOptions,
) -> Result<SlideRecord, PptError> {
    let heading = heading_for(&outline, &template, node);
    let (tree, _, mismatch) = assemble(&outline, &template, &heading, &opts.templates, "")?;
    warnings.extend(mismatch);
    let vision = match (&opts.renderer_cmd, &opts.asset_dir) {
        (Some(cmd), Some(dir)) => Some(VisionAudit { renderer_cmd: cmd, asset_dir: dir }),
        _ => None,
    };
    let refined = refine_loop(tree, &outline, &template, opts.refine_iters, vision.as_ref(), gateway)?;
    warnings.extend(refined.warnings);
    let mut outline = outline;
    outline.template = Some(template.clone());
    Ok(SlideRecord { node: node.map(str::to_string), outline, template, layout: refined.tree, audits: refined.history, warnings })
}

/// Whole deck: 2 + min(budget, selectable nodes) slides, content slides
/// processed in parallel and kept in traversal order.
pub fn generate_deck(dag: &ScholarDag, gateway: &Gateway, opts: &PptOptions) -> Result<Deck, PptError> {
    let budget = TraversalBudget::new(opts.budget)?;
    let selected = dag::bfs_select(dag, budget)?;
    let mut deck_warnings = Vec::new();
    let [title, contents] = init_outline(dag, &mut deck_warnings);

    let mut slides = Vec::with_capacity(selected.len() + 2);
    for outline in [title, contents] {
        let template = outline.template.clone().expect("init outlines carry a template");
        slides.push(build_slide(None, outline, template, Vec::new(), gateway, opts)?);
    }
    let content: Vec<Result<SlideRecord, PptError>> = selected
        .par_iter()
        .map(|name| {
            let node = dag.node(name).ok_or_else(|| DagError::UnknownNode(name.clone()))?;
            let visuals: Vec<&VisualNode> = dag.visuals_of(name);
            let outline = gen_slide_outline(node, &visuals, gateway)?;
            let mut warnings = Vec::new();
            let template = select_template(&outline, gateway, &mut warnings)?;
            build_slide(Some(name), outline, template, warnings, gateway, opts)
        })
        .collect();
    for slide in content {
        slides.push(slide?);
    }
    Ok(Deck { slides, warnings: deck_warnings })
}

fn io(e: impl std::fmt::Display) -> PptError {
    PptError::Io(e.to_string())
}

/// Writes `slides/NNN.html`, `deck.json` and, with a renderer, `slides/NNN.png`.
/// Referenced images are copied under `images/` next to `slides/`.
pub fn export_deck(deck: &Deck, out_dir: &Path, asset_dir: Option<&Path>, renderer_cmd: Option<&str>) -> Result<Vec<PathBuf>, PptError> {
    let slides_dir = out_dir.join("slides");
    fs::create_dir_all(&slides_dir).map_err(io)?;
    let width = deck.slides.len().to_string().len().max(3);
    let mut written = Vec::new();
    for (i, slide) in deck.slides.iter().enumerate() {
        let title = slide.layout.heading_text().unwrap_or("").to_string();
        let html = layout::render(&slide.layout, &title, "../");
        let path = slides_dir.join(format!("{:0width$}.html", i + 1));
        fs::write(&path, &html).map_err(io)?;
        written.push(path);
        if let (Some(cmd), Some(dir)) = (renderer_cmd, asset_dir) {
            let html = layout::render(&slide.layout, &title, &format!("file://{}/", dir.display()));
            let png = measure::render_html(&html, SLIDE_WIDTH, SLIDE_HEIGHT, Some(cmd))?;
            fs::write(slides_dir.join(format!("{:0width$}.png", i + 1)), png).map_err(io)?;
        }
    }
    if let Some(dir) = asset_dir {
        for slide in &deck.slides {
            for leaf in slide.layout.leaves() {
                if let Some(img) = &leaf.image {
                    copy_asset(dir, out_dir, img.path())?;
                }
            }
        }
    }
    let mut json = serde_json::to_vec_pretty(deck).map_err(io)?;
    json.push(b'\n');
    fs::write(out_dir.join("deck.json"), json).map_err(io)?;
    Ok(written)
}

/// Copies `rel` from `from` to the same relative path under `to`.
pub(crate) fn copy_asset(from: &Path, to: &Path, rel: &str) -> Result<(), PptError> {
    let src = from.join(rel);
    let dst = to.join(rel);
    if !src.is_file() || dst.is_file() {
        return Ok(());
    }
    if let Some(parent) = dst.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::copy(&src, &dst).map_err(io)?;
    Ok(())
}
