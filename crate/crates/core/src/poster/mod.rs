//! Single-page poster backend: one section per BFS-selected node, placed in
//! reading order, then fonts maximized before images are grown.

pub mod layout;
pub mod outline;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

pub use layout::{
    expand_images, expand_step, optimize_fonts, place_initial, score, PosterBlock, PosterConfig, PosterImage, PosterLayout,
};
pub use outline::{gen_poster_outline, PosterSection};

use crate::dag::{self, DagError, ScholarDag, TraversalBudget, VisualNode};
use crate::gateway::{Gateway, GatewayError};
use crate::measure::{MeasureError, Rect};
use crate::paper2dag::RootMetadata;
use crate::text;

pub const DEFAULT_BUDGET: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosterError {
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("poster content does not fit even at minimum font and image sizes ({overflow_px:.1}px over)")]
    InfeasibleAtMinimum { overflow_px: f64 },
    #[error("invalid poster configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone)]
pub struct PosterOptions {
    pub budget: usize,
    pub config: PosterConfig,
}

impl Default for PosterOptions {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, config: PosterConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Poster {
    pub title: String,
    pub authors: String,
    pub sections: Vec<PosterSection>,
    pub layout: PosterLayout,
}

/// Sections, placement and the two-phase optimization for `dag`.
pub fn generate_poster(dag: &ScholarDag, gateway: &Gateway, opts: &PosterOptions) -> Result<Poster, PosterError> {
    let selected = dag::bfs_select(dag, TraversalBudget::new(opts.budget)?)?;
    let sections: Vec<PosterSection> = selected
        .par_iter()
        .map(|name| {
            let node = dag.node(name).ok_or_else(|| DagError::UnknownNode(name.clone()))?;
            let visuals: Vec<&VisualNode> = dag.section_visuals(name, &selected);
            gen_poster_outline(node, &visuals, gateway)
        })
        .collect::<Result<_, _>>()?;
    let blocks = sections
        .iter()
        .map(|s| PosterBlock {
            title: s.title.clone(),
            text: s.summary.clone(),
            images: s
                .images
                .iter()
                .filter_map(|name| dag.visual(name))
                .map(|v| PosterImage { name: v.name.clone(), caption: text::collapse_whitespace(&v.caption), resolution: v.resolution })
                .collect(),
        })
        .collect();
    let mut layout = place_initial(blocks, opts.config)?;
    optimize_fonts(&mut layout)?;
    expand_images(&mut layout)?;
    let meta = RootMetadata::from_root(dag.root());
    Ok(Poster { title: meta.title, authors: meta.authors, sections, layout })
}

fn io(e: impl std::fmt::Display) -> PosterError {
    PosterError::Io(e.to_string())
}

fn rect_json(r: &Rect) -> Value {
    json!({"x": round2(r.x), "y": round2(r.y), "width": round2(r.width), "height": round2(r.height)})
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn style(r: &Rect) -> String {
    format!(
        "position:absolute;left:{}px;top:{}px;width:{}px;height:{}px",
        round2(r.x),
        round2(r.y),
        round2(r.width),
        round2(r.height)
    )
}

/// Structured record of the final layout, as written to `poster.json`.
pub fn poster_json(poster: &Poster) -> Result<Value, PosterError> {
    let l = &poster.layout;
    let rects = l.placements()?;
    let blocks: Vec<Value> = l
        .blocks
        .iter()
        .enumerate()
        .map(|(b, block)| {
            json!({
                "title": block.title,
                "column": l.assignment[b],
                "rect": rect_json(&rects[b]),
                "images": block.images.iter().enumerate().map(|(i, img)| json!({
                    "name": img.name,
                    "scale": round2(l.config.scale_at(l.steps[b][i])),
                    "width": round2(l.image_width(b, i)),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({
        "title": poster.title,
        "authors": poster.authors,
        "canvas": {"width": l.config.canvas_width, "height": l.config.canvas_height},
        "header": rect_json(&l.header),
        "columns": l.columns.iter().map(rect_json).collect::<Vec<_>>(),
        "typography": {"font_size_pt": l.font_size, "line_height": layout::BODY_LINE_HEIGHT},
        "lambda": l.config.lambda,
        "readability": l.readability(),
        "coverage": l.coverage(),
        "score": l.score(),
        "blocks": blocks,
        "sections": poster.sections,
    }))
}

/// Self-contained poster page with absolutely positioned columns and blocks.
pub fn poster_html(poster: &Poster) -> Result<String, PosterError> {
    let l = &poster.layout;
    let rects = l.placements()?;
    let (w, h) = (l.config.canvas_width, l.config.canvas_height);
    let bar = layout::bar_typography(l.font_size);
    let mut html = format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>{title}</title>\n<style>\n\
body{{margin:0}}\n\
.poster{{position:relative;overflow:hidden;background:#fff;font-family:Helvetica,Arial,sans-serif;color:#1a1a1a}}\n\
.poster-header{{box-sizing:border-box;text-align:center;border-bottom:4px solid #1f3a5f}}\n\
.poster-header h1{{margin:0;font-size:{head}pt;line-height:1.2}}\n\
.poster-header p{{margin:8px 0 0;font-size:{sub}pt}}\n\
.column{{box-sizing:border-box}}\n\
.section{{box-sizing:border-box;overflow:hidden;margin:0}}\n\
.section-bar{{box-sizing:border-box;background:#1f3a5f;color:#fff;padding:{bp}px {pad}px;font-size:{bf}pt;line-height:{bl};font-weight:bold}}\n\
.section-body{{box-sizing:border-box;padding:{pad}px}}\n\
.section-body p{{margin:0}}\n\
.img-section{{margin-top:{ig}px;text-align:center}}\n\
.img-section img{{display:block;margin:0 auto;height:auto}}\n\
</style>\n</head>\n<body>\n<div class=\"poster\" style=\"width:{w}px;height:{h}px\">\n",
        title = text::escape_html(&poster.title),
        head = round2(l.config.font_max * 2.0),
        sub = round2(l.config.font_max),
        bp = layout::BAR_PAD,
        pad = layout::BODY_PAD,
        bf = round2(bar.font_size_pt),
        bl = bar.line_height,
        ig = layout::IMAGE_GAP,
    );
    html.push_str(&format!(
        "<header class=\"poster-header\" style=\"{}\">\n<h1>{}</h1>\n<p>{}</p>\n</header>\n",
        style(&l.header),
        text::escape_html(&poster.title),
        text::escape_html(&poster.authors)
    ));
    for (c, col) in l.columns.iter().enumerate() {
        html.push_str(&format!("<div class=\"column\" data-column=\"{c}\" style=\"{}\"></div>\n", style(col)));
    }
    for (b, block) in l.blocks.iter().enumerate() {
        html.push_str(&format!(
            "<section class=\"section\" data-block=\"{b}\" data-column=\"{}\" style=\"{};font-size:{}pt;line-height:{}\">\n",
            l.assignment[b],
            style(&rects[b]),
            round2(l.font_size),
            layout::BODY_LINE_HEIGHT
        ));
        html.push_str(&format!("  <div class=\"section-bar\">{}</div>\n", text::escape_html(&block.title)));
        html.push_str(&format!("  <div class=\"section-body\">\n    <p>{}</p>\n", text::escape_html(&block.text)));
        for (i, img) in block.images.iter().enumerate() {
            html.push_str(&format!(
                "    <div class=\"img-section\">\n      <img src=\"{}\" alt=\"{}\" class=\"figure\" style=\"width:{}px\" />\n    </div>\n",
                text::escape_html(text::image_ref_path(&img.name).unwrap_or(&img.name)),
                text::escape_html(&img.caption),
                round2(l.image_width(b, i))
            ));
        }
        html.push_str("  </div>\n</section>\n");
    }
    html.push_str("</div>\n</body>\n</html>\n");
    Ok(html)
}

/// Writes `poster.html` and `poster.json`; referenced images are copied
/// from `asset_dir` to the same relative paths under `out_dir`.
pub fn export_poster(poster: &Poster, out_dir: &Path, asset_dir: Option<&Path>) -> Result<(), PosterError> {
    fs::create_dir_all(out_dir).map_err(io)?;
    fs::write(out_dir.join("poster.html"), poster_html(poster)?).map_err(io)?;
    let mut json = serde_json::to_vec_pretty(&poster_json(poster)?).map_err(io)?;
    json.push(b'\n');
    fs::write(out_dir.join("poster.json"), json).map_err(io)?;
    if let Some(dir) = asset_dir {
        for block in &poster.layout.blocks {
            for img in &block.images {
                crate::ppt::copy_asset(dir, out_dir, text::image_ref_path(&img.name).unwrap_or(&img.name))
                    .map_err(|e| PosterError::Io(e.to_string()))?;
            }
        }
    }
    Ok(())
}
