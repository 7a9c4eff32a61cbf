//! Poster geometry: sequential column placement, the font binary search and
//! greedy image expansion. Text is measured with [`crate::measure`].

use serde::{Deserialize, Serialize};

use super::PosterError;
use crate::dag::Resolution;
use crate::measure::{self, Rect, Typography};

pub const DEFAULT_CANVAS: (u32, u32) = (3456, 2304);
pub const DEFAULT_COLUMNS: usize = 3;
pub const FONT_MIN: f64 = 18.0;
pub const FONT_MAX: f64 = 36.0;
pub const FONT_STEP: f64 = 0.5;
pub const S_MIN: f64 = 0.4;
pub const SCALE_STEP: f64 = 0.05;
pub const LAMBDA: f64 = 0.5;

pub const MARGIN: f64 = 48.0;
pub const GAP: f64 = 32.0;
/// Share of the canvas height taken by the title strip.
pub const HEADER_SHARE: f64 = 0.12;
pub const BODY_LINE_HEIGHT: f64 = 1.3;
pub const BAR_SCALE: f64 = 1.2;
pub const BAR_LINE_HEIGHT: f64 = 1.2;
pub const BAR_PAD: f64 = 12.0;
pub const BODY_PAD: f64 = 16.0;
pub const IMAGE_GAP: f64 = 12.0;

const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosterConfig {
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub columns: usize,
    pub font_min: f64,
    pub font_max: f64,
    pub font_step: f64,
    pub s_min: f64,
    pub scale_step: f64,
    pub lambda: f64,
}

impl Default for PosterConfig {
    fn default() -> Self {
        Self {
            canvas_width: DEFAULT_CANVAS.0 as f64,
            canvas_height: DEFAULT_CANVAS.1 as f64,
            columns: DEFAULT_COLUMNS,
            font_min: FONT_MIN,
            font_max: FONT_MAX,
            font_step: FONT_STEP,
            s_min: S_MIN,
            scale_step: SCALE_STEP,
            lambda: LAMBDA,
        }
    }
}

impl PosterConfig {
    pub fn area(&self) -> f64 {
        self.canvas_width * self.canvas_height
    }

    /// Number of font steps above `font_min` on the quantized grid.
    pub fn font_grid_len(&self) -> usize {
        ((self.font_max - self.font_min) / self.font_step + EPS).floor() as usize
    }

    pub fn font_at(&self, idx: usize) -> f64 {
        self.font_min + idx as f64 * self.font_step
    }

    /// Number of scale steps from `s_min` up to 1.0.
    pub fn max_scale_steps(&self) -> u32 {
        ((1.0 - self.s_min) / self.scale_step + EPS).floor() as u32
    }

    pub fn scale_at(&self, steps: u32) -> f64 {
        (self.s_min + steps as f64 * self.scale_step).min(1.0)
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.canvas_width > 0.0 && self.canvas_height > 0.0) {
            return Err("canvas dimensions must be positive".into());
        }
        if self.columns == 0 {
            return Err("poster needs at least one column".into());
        }
        if !(self.font_min > 0.0 && self.font_min <= self.font_max && self.font_step > 0.0) {
            return Err(format!("invalid font range [{}, {}] step {}", self.font_min, self.font_max, self.font_step));
        }
        if !(self.s_min > 0.0 && self.s_min <= 1.0 && self.scale_step > 0.0) {
            return Err(format!("s_min {} must lie in (0, 1]", self.s_min));
        }
        if self.lambda < 0.0 {
            return Err("lambda must be non-negative".into());
        }
        let inner = self.column_width() - 2.0 * BODY_PAD;
        if inner <= 0.0 {
            return Err(format!("{} columns leave no room on a {}px canvas", self.columns, self.canvas_width));
        }
        Ok(())
    }

    pub fn header(&self) -> Rect {
        let h = self.canvas_height * HEADER_SHARE;
        Rect::new(MARGIN, MARGIN, self.canvas_width - 2.0 * MARGIN, h)
    }

    pub fn column_width(&self) -> f64 {
        let n = self.columns as f64;
        (self.canvas_width - 2.0 * MARGIN - (n - 1.0) * GAP) / n
    }

    pub fn column_boxes(&self) -> Vec<Rect> {
        let header = self.header();
        let top = header.bottom() + GAP;
        let height = self.canvas_height - MARGIN - top;
        let w = self.column_width();
        (0..self.columns).map(|c| Rect::new(MARGIN + c as f64 * (w + GAP), top, w, height)).collect()
    }

    /// Width available to text and images inside a block.
    pub fn inner_width(&self) -> f64 {
        self.column_width() - 2.0 * BODY_PAD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosterImage {
    pub name: String,
    pub caption: String,
    pub resolution: Resolution,
}

/// One section as the layout engine sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosterBlock {
    pub title: String,
    pub text: String,
    pub images: Vec<PosterImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosterLayout {
    pub config: PosterConfig,
    pub header: Rect,
    pub columns: Vec<Rect>,
    pub blocks: Vec<PosterBlock>,
    /// Column index per block.
    pub assignment: Vec<usize>,
    pub font_size: f64,
    /// Scale steps above `s_min`, per block and image.
    pub steps: Vec<Vec<u32>>,
}

fn body_typography(font: f64) -> Typography {
    Typography::new(font, BODY_LINE_HEIGHT)
}

pub fn bar_typography(font: f64) -> Typography {
    Typography::new(font * BAR_SCALE, BAR_LINE_HEIGHT)
}

/// Natural height-over-width of an image.
fn aspect(res: &Resolution) -> f64 {
    if res.width == 0 {
        1.0
    } else {
        res.height as f64 / res.width as f64
    }
}

fn block_height(config: &PosterConfig, block: &PosterBlock, font: f64, steps: &[u32]) -> Result<f64, PosterError> {
    let w = config.inner_width();
    let bar = measure::text_height(&block.title, w, &bar_typography(font))?.max(bar_typography(font).line_px()) + 2.0 * BAR_PAD;
    let body = measure::text_height(&block.text, w, &body_typography(font))?;
    let images: f64 = block
        .images
        .iter()
        .zip(steps)
        .map(|(img, &s)| IMAGE_GAP + config.scale_at(s) * w * aspect(&img.resolution))
        .sum();
    Ok(bar + 2.0 * BODY_PAD + body + images)
}

fn stacked(heights: &[f64]) -> f64 {
    heights.iter().sum::<f64>() + GAP * heights.len().saturating_sub(1) as f64
}

impl PosterLayout {
    pub fn readability(&self) -> f64 {
        let c = &self.config;
        if c.font_max - c.font_min < EPS {
            return 1.0;
        }
        (self.font_size - c.font_min) / (c.font_max - c.font_min)
    }

    pub fn image_width(&self, block: usize, image: usize) -> f64 {
        self.config.scale_at(self.steps[block][image]) * self.config.inner_width()
    }

    fn image_area_at(&self, block: usize, image: usize, steps: u32) -> f64 {
        let w = self.config.scale_at(steps) * self.config.inner_width();
        w * w * aspect(&self.blocks[block].images[image].resolution)
    }

    /// Summed image area over the canvas area.
    pub fn coverage(&self) -> f64 {
        let mut total = 0.0;
        for (b, block) in self.blocks.iter().enumerate() {
            for i in 0..block.images.len() {
                total += self.image_area_at(b, i, self.steps[b][i]);
            }
        }
        total / self.config.area()
    }

    pub fn score(&self) -> f64 {
        score(self.readability(), self.coverage(), self.config.lambda)
    }

    pub fn block_heights(&self, font: f64, steps: &[Vec<u32>]) -> Result<Vec<f64>, PosterError> {
        self.blocks.iter().zip(steps).map(|(b, s)| block_height(&self.config, b, font, s)).collect()
    }

    /// Content height per column under the fixed assignment.
    pub fn column_heights(&self, font: f64, steps: &[Vec<u32>]) -> Result<Vec<f64>, PosterError> {
        let heights = self.block_heights(font, steps)?;
        let mut per_col = vec![Vec::new(); self.columns.len()];
        for (h, &c) in heights.iter().zip(&self.assignment) {
            per_col[c].push(*h);
        }
        Ok(per_col.iter().map(|hs| stacked(hs)).collect())
    }

    /// True iff any column's content exceeds its box.
    pub fn overflows(&self, font: f64, steps: &[Vec<u32>]) -> Result<bool, PosterError> {
        let heights = self.column_heights(font, steps)?;
        Ok(heights.iter().zip(&self.columns).any(|(h, col)| *h > col.height + EPS))
    }

    pub fn fits_now(&self) -> Result<bool, PosterError> {
        Ok(!self.overflows(self.font_size, &self.steps)?)
    }

    /// Header plus placed block areas.
    pub fn used_area(&self) -> Result<f64, PosterError> {
        let heights = self.block_heights(self.font_size, &self.steps)?;
        let w = self.config.column_width();
        Ok(self.header.area() + heights.iter().map(|h| h * w).sum::<f64>())
    }

    /// Block rectangles in canvas coordinates, stacked top-down per column.
    pub fn placements(&self) -> Result<Vec<Rect>, PosterError> {
        let heights = self.block_heights(self.font_size, &self.steps)?;
        let mut cursor: Vec<f64> = self.columns.iter().map(|c| c.y).collect();
        let mut out = Vec::with_capacity(heights.len());
        for (h, &c) in heights.iter().zip(&self.assignment) {
            let col = self.columns[c];
            out.push(Rect::new(col.x, cursor[c], col.width, *h));
            cursor[c] += h + GAP;
        }
        Ok(out)
    }

    fn min_steps(&self) -> Vec<Vec<u32>> {
        self.blocks.iter().map(|b| vec![0; b.images.len()]).collect()
    }
}

pub fn score(readability: f64, coverage: f64, lambda: f64) -> f64 {
    readability + lambda * coverage
}

/// Fills columns top to bottom in reading order at the minimum font and
/// image sizes, moving on when the current column is full.
pub fn place_initial(blocks: Vec<PosterBlock>, config: PosterConfig) -> Result<PosterLayout, PosterError> {
    config.check().map_err(PosterError::Config)?;
    let columns = config.column_boxes();
    let capacity = columns[0].height;
    let mut layout = PosterLayout {
        config,
        header: config.header(),
        columns,
        assignment: Vec::with_capacity(blocks.len()),
        font_size: config.font_min,
        steps: blocks.iter().map(|b| vec![0; b.images.len()]).collect(),
        blocks,
    };
    let heights = layout.block_heights(config.font_min, &layout.min_steps())?;
    let (mut col, mut used) = (0usize, 0.0f64);
    for (i, h) in heights.iter().enumerate() {
        let need = if used > 0.0 { GAP + h } else { *h };
        if used + need <= capacity + EPS {
            used += need;
        } else {
            col += 1;
            used = *h;
            if col == layout.columns.len() || *h > capacity + EPS {
                let rest = stacked(&heights[i..]);
                return Err(PosterError::InfeasibleAtMinimum { overflow_px: rest });
            }
        }
        layout.assignment.push(col);
    }
    Ok(layout)
}

/// Largest font on the quantized grid with no overflow, images held at
/// `s_min`. Sets and returns `layout.font_size`.
pub fn optimize_fonts(layout: &mut PosterLayout) -> Result<f64, PosterError> {
    let config = layout.config;
    let minimal = layout.min_steps();
    let fits = |idx: usize| -> Result<bool, PosterError> { Ok(!layout.overflows(config.font_at(idx), &minimal)?) };
    if !fits(0)? {
        let heights = layout.column_heights(config.font_min, &minimal)?;
        let over = heights.iter().zip(&layout.columns).map(|(h, c)| h - c.height).fold(0.0, f64::max);
        return Err(PosterError::InfeasibleAtMinimum { overflow_px: over });
    }
    let top = config.font_grid_len();
    let best = if fits(top)? {
        top
    } else {
        // Invariant: fits(lo) and !fits(hi).
        let (mut lo, mut hi) = (0, top);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if fits(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        debug_assert!(fits(lo).unwrap_or(false) && !fits(lo + 1).unwrap_or(true), "overflow predicate is not monotone");
        lo
    };
    layout.font_size = config.font_at(best);
    Ok(layout.font_size)
}

/// Grows the image with the largest coverage gain by one step, keeping the
/// layout overflow-free; ties go to the earlier image. Returns false when no
/// image can grow.
pub fn expand_step(layout: &mut PosterLayout) -> Result<bool, PosterError> {
    let limit = layout.config.max_scale_steps();
    let mut best: Option<(usize, usize, f64)> = None;
    for b in 0..layout.blocks.len() {
        for i in 0..layout.blocks[b].images.len() {
            let s = layout.steps[b][i];
            if s >= limit {
                continue;
            }
            let mut trial = layout.steps.clone();
            trial[b][i] += 1;
            if layout.overflows(layout.font_size, &trial)? {
                continue;
            }
            let gain = layout.image_area_at(b, i, s + 1) - layout.image_area_at(b, i, s);
            if best.is_none_or(|(_, _, g)| gain > g * (1.0 + 1e-9) + EPS) {
                best = Some((b, i, gain));
            }
        }
    }
    let Some((b, i, _)) = best else { return Ok(false) };
    layout.steps[b][i] += 1;
    debug_assert!(layout.used_area().unwrap_or(f64::INFINITY) <= layout.config.area() + EPS);
    Ok(true)
}

/// Greedy expansion until no image can grow; returns the number of steps taken.
pub fn expand_images(layout: &mut PosterLayout) -> Result<usize, PosterError> {
    let mut taken = 0;
    while expand_step(layout)? {
        taken += 1;
    }
    Ok(taken)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(words: usize, images: &[(u32, u32)]) -> PosterBlock {
        PosterBlock {
            title: "Section".into(),
            text: vec!["word"; words].join(" "),
            images: images
                .iter()
                .enumerate()
                .map(|(i, &(w, h))| PosterImage { name: format!("![](images/{i}.png)"), caption: String::new(), resolution: Resolution::new(w, h) })
                .collect(),
        }
    }

    #[test]
    fn default_geometry() {
        let c = PosterConfig::default();
        assert_eq!(c.font_grid_len(), 36);
        assert_eq!(c.max_scale_steps(), 12);
        let cols = c.column_boxes();
        assert_eq!(cols.len(), 3);
        assert!((cols[2].right() - (c.canvas_width - MARGIN)).abs() < 1e-9);
        assert!((cols[0].bottom() - (c.canvas_height - MARGIN)).abs() < 1e-9);
    }

    #[test]
    fn tiny_section_sits_top_left() {
        let l = place_initial(vec![block(5, &[])], PosterConfig::default()).unwrap();
        assert_eq!(l.assignment, vec![0]);
        let p = l.placements().unwrap();
        assert_eq!((p[0].x, p[0].y), (l.columns[0].x, l.columns[0].y));
    }

    #[test]
    fn empty_text_fits_at_max_font() {
        let mut l = place_initial(vec![block(0, &[])], PosterConfig::default()).unwrap();
        assert_eq!(optimize_fonts(&mut l).unwrap(), FONT_MAX);
    }

    #[test]
    fn oversized_content_is_infeasible() {
        let c = PosterConfig::default();
        let blocks = (0..6).map(|_| block(4000, &[])).collect();
        assert!(matches!(place_initial(blocks, c), Err(PosterError::InfeasibleAtMinimum { .. })));
    }

    #[test]
    fn zero_slack_keeps_minimum_scales() {
        let c = PosterConfig { columns: 1, ..Default::default() };
        let mut l = place_initial(vec![block(0, &[(100, 100)])], c).unwrap();
        // Shrink the column until only the minimum image fits.
        let need = l.column_heights(c.font_min, &[vec![0]]).unwrap()[0];
        l.columns[0].height = need;
        assert_eq!(expand_images(&mut l).unwrap(), 0);
        assert_eq!(l.steps, vec![vec![0]]);
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(0.0, 0.0, 0.5), 0.0);
        assert!((score(1.0, 0.4, 0.5) - 1.2).abs() < 1e-12);
    }
}
