//! Deterministic text metrics and the overflow predicate used by the slide
//! and poster layout code, plus a shell-out adapter for an HTML renderer.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::collapse_whitespace;

pub const PX_PER_PT: f64 = 4.0 / 3.0;
pub const DEFAULT_GLYPH_WIDTH_RATIO: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("box {width_px}px wide cannot hold one glyph at {font_size_pt}pt")]
    BoxTooNarrow { width_px: f64, font_size_pt: f64 },
    #[error("{texts} texts but {boxes} boxes")]
    LengthMismatch { texts: usize, boxes: usize },
    #[error("no renderer command configured; set `renderer_cmd` (or --renderer-cmd) to a command using {{input}} and {{output}}")]
    RendererMissing,
    #[error("renderer failed ({status}): {stderr}")]
    RendererFailed { status: String, stderr: String },
    #[error("renderer produced {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { want_w: u32, want_h: u32, got_w: u32, got_h: u32 },
    #[error("render i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Typography {
    pub font_size_pt: f64,
    pub line_height: f64,
    #[serde(default = "default_alpha")]
    pub glyph_width_ratio: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_GLYPH_WIDTH_RATIO
}

impl Typography {
    pub fn new(font_size_pt: f64, line_height: f64) -> Self {
        Self { font_size_pt, line_height, glyph_width_ratio: DEFAULT_GLYPH_WIDTH_RATIO }
    }

    pub fn font_size_px(&self) -> f64 {
        self.font_size_pt * PX_PER_PT
    }

    pub fn line_px(&self) -> f64 {
        self.font_size_px() * self.line_height
    }

    /// Whole glyphs per line in a box `width_px` wide.
    pub fn chars_per_line(&self, width_px: f64) -> Result<usize, MeasureError> {
        let glyph = self.glyph_width_ratio * self.font_size_px();
        // The epsilon keeps exact fits (400 / 10.0) from flooring down a glyph.
        let n = (width_px / glyph + 1e-9).floor();
        if n < 1.0 {
            return Err(MeasureError::BoxTooNarrow { width_px, font_size_pt: self.font_size_pt });
        }
        Ok(n as usize)
    }
}

/// Axis-aligned pixel rectangle, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self { x, y, width, height }
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// True when the interiors intersect; shared edges do not count.
    pub fn overlaps(&self, other: &Rect) -> bool {
        const EPS: f64 = 1e-6;
        self.x + EPS < other.right()
            && other.x + EPS < self.right()
            && self.y + EPS < other.bottom()
            && other.y + EPS < self.bottom()
    }

    pub fn contains(&self, other: &Rect) -> bool {
        const EPS: f64 = 1e-6;
        other.x + EPS >= self.x
            && other.y + EPS >= self.y
            && other.right() <= self.right() + EPS
            && other.bottom() <= self.bottom() + EPS
    }
}

/// Number of wrapped lines for `text`; 0 for blank text.
pub fn line_count(text: &str, width_px: f64, typo: &Typography) -> Result<usize, MeasureError> {
    let per_line = typo.chars_per_line(width_px)?;
    let len = collapse_whitespace(text).chars().count();
    Ok(len.div_ceil(per_line))
}

/// Rendered height in pixels under the fixed-advance glyph model.
pub fn text_height(text: &str, width_px: f64, typo: &Typography) -> Result<f64, MeasureError> {
    let lines = line_count(text, width_px, typo)?;
    Ok(lines as f64 * typo.line_px())
}

/// True iff any text needs more height than its box offers.
pub fn overflows(texts: &[&str], boxes: &[Rect], typo: &Typography) -> Result<bool, MeasureError> {
    if texts.len() != boxes.len() {
        return Err(MeasureError::LengthMismatch { texts: texts.len(), boxes: boxes.len() });
    }
    for (text, rect) in texts.iter().zip(boxes) {
        if text_height(text, rect.width, typo)? > rect.height + 1e-9 {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Renders `html` to a PNG of exactly `width`x`height` using an external
/// command template with `{input}`, `{output}`, `{width}` and `{height}`.
pub fn render_html(html: &str, width: u32, height: u32, renderer_cmd: Option<&str>) -> Result<Vec<u8>, MeasureError> {
    let template = renderer_cmd.map(str::trim).filter(|c| !c.is_empty()).ok_or(MeasureError::RendererMissing)?;
    let dir = tempfile::tempdir().map_err(|e| MeasureError::Io(e.to_string()))?;
    let input = dir.path().join("slide.html");
    let output = dir.path().join("slide.png");
    std::fs::write(&input, html).map_err(|e| MeasureError::Io(e.to_string()))?;

    let command = template
        .replace("{input}", &shell_quote(&input))
        .replace("{output}", &shell_quote(&output))
        .replace("{width}", &width.to_string())
        .replace("{height}", &height.to_string());
    let result = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(dir.path())
        .output()
        .map_err(|e| MeasureError::Io(e.to_string()))?;
    if !result.status.success() {
        // 127 is the shell's "command not found".
        if result.status.code() == Some(127) {
            return Err(MeasureError::RendererMissing);
        }
        return Err(MeasureError::RendererFailed {
            status: result.status.to_string(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    let bytes = std::fs::read(&output).map_err(|e| MeasureError::RendererFailed {
        status: result.status.to_string(),
        stderr: format!("no output image: {e}"),
    })?;
    let (got_w, got_h) = image::ImageReader::new(std::io::Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| MeasureError::Io(e.to_string()))?
        .into_dimensions()
        .map_err(|e| MeasureError::RendererFailed { status: result.status.to_string(), stderr: e.to_string() })?;
    if (got_w, got_h) != (width, height) {
        return Err(MeasureError::DimensionMismatch { want_w: width, want_h: height, got_w, got_h });
    }
    Ok(bytes)
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}
