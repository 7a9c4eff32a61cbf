use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::layout::{Direction, LayoutNode, SlotKind};
use super::PptError;
use crate::dag::Resolution;

pub const TITLE_SLIDE: &str = "Title Slide.html";
pub const CONTENTS: &str = "Contents.html";

/// Content templates in catalog order.
pub const CONTENT_TEMPLATES: [&str; 21] = [
    "T1_TextOnly.html",
    "T2_ImageRight.html",
    "T3_ImageLeft.html",
    "T4_ImageTop.html",
    "T5_TwoImages.html",
    "T6_TwoImages2.html",
    "T7_2x2_TopImage.html",
    "T8_2x2_BottomImage.html",
    "T9_2x2_AltTextImg.html",
    "T10_4Img_2x2Grid.html",
    "T11_3Img_TopTextBottom.html",
    "T12_3Img_BottomTextTop.html",
    "T13_3Img.html",
    "T14_ImageRight_1Formula.html",
    "T15_ImageLeft_1Formula.html",
    "T16_1Img_2Formula_TopTextBottom.html",
    "T17_2Img_1Formula_TopTextBottom.html",
    "T18_2Formula_TopTextBottom.html",
    "T19_2Text.html",
    "T20_FormulaTop.html",
    "T21_3Img_col.html",
];

macro_rules! embedded {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!("../../templates/", $name)))),*]
    };
}

const EMBEDDED: [(&str, &str); 23] = embedded!(
    "Title Slide.html",
    "Contents.html",
    "T1_TextOnly.html",
    "T2_ImageRight.html",
    "T3_ImageLeft.html",
    "T4_ImageTop.html",
    "T5_TwoImages.html",
    "T6_TwoImages2.html",
    "T7_2x2_TopImage.html",
    "T8_2x2_BottomImage.html",
    "T9_2x2_AltTextImg.html",
    "T10_4Img_2x2Grid.html",
    "T11_3Img_TopTextBottom.html",
    "T12_3Img_BottomTextTop.html",
    "T13_3Img.html",
    "T14_ImageRight_1Formula.html",
    "T15_ImageLeft_1Formula.html",
    "T16_1Img_2Formula_TopTextBottom.html",
    "T17_2Img_1Formula_TopTextBottom.html",
    "T18_2Formula_TopTextBottom.html",
    "T19_2Text.html",
    "T20_FormulaTop.html",
    "T21_3Img_col.html",
);

pub fn is_known_template(name: &str) -> bool {
    EMBEDDED.iter().any(|(n, _)| *n == name)
}

pub fn is_content_template(name: &str) -> bool {
    CONTENT_TEMPLATES.contains(&name)
}

/// Template sources by filename.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    sources: BTreeMap<String, String>,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::embedded()
    }
}

impl TemplateLibrary {
    /// The built-in library.
    pub fn embedded() -> Self {
        Self { sources: EMBEDDED.iter().map(|(n, s)| (n.to_string(), s.to_string())).collect() }
    }

    /// Loads every known template present in `dir`; absent ones surface as
    /// `TemplateMissing` when requested.
    pub fn from_dir(dir: &Path) -> Result<Self, PptError> {
        let mut sources = BTreeMap::new();
        for (name, _) in EMBEDDED {
            let path = dir.join(name);
            if path.is_file() {
                let html = fs::read_to_string(&path).map_err(|e| PptError::Io(format!("{}: {e}", path.display())))?;
                sources.insert(name.to_string(), html);
            }
        }
        Ok(Self { sources })
    }

    /// Writes the library into `dir`, one file per template.
    pub fn write_to(&self, dir: &Path) -> Result<(), PptError> {
        fs::create_dir_all(dir).map_err(|e| PptError::Io(e.to_string()))?;
        for (name, html) in &self.sources {
            fs::write(dir.join(name), html).map_err(|e| PptError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn source(&self, name: &str) -> Result<&str, PptError> {
        self.sources.get(name).map(String::as_str).ok_or_else(|| PptError::TemplateMissing(name.to_string()))
    }

    /// Empty layout skeleton of a template: containers and unfilled slots with ids.
    pub fn skeleton(&self, name: &str) -> Result<LayoutNode, PptError> {
        parse_skeleton(self.source(name)?).map_err(|reason| PptError::TemplateParse { name: name.to_string(), reason })
    }
}

fn attr(e: &BytesStart<'_>, key: &str) -> Result<Option<String>, String> {
    for a in e.attributes() {
        let a = a.map_err(|err| err.to_string())?;
        if a.key.as_ref() == key.as_bytes() {
            return Ok(Some(a.unescape_value().map_err(|err| err.to_string())?.into_owned()));
        }
    }
    Ok(None)
}

fn parse_flex(e: &BytesStart<'_>) -> Result<f64, String> {
    let raw = attr(e, "data-flex")?.unwrap_or_else(|| "1".into());
    let flex: f64 = raw.parse().map_err(|_| format!("bad data-flex `{raw}`"))?;
    if flex > 0.0 && flex.is_finite() {
        Ok(flex)
    } else {
        Err(format!("data-flex must be positive, found {raw}"))
    }
}

/// Builds the layout skeleton from `data-dir` containers and `data-slot`
/// leaves. Other elements are ignored.
fn parse_skeleton(html: &str) -> Result<LayoutNode, String> {
    let mut reader = Reader::from_str(html);
    reader.config_mut().check_end_names = false;
    // Stack of open layout elements; `None` marks a non-layout element.
    let mut stack: Vec<Option<LayoutNode>> = Vec::new();
    let mut root = None;
    let mut counters: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut next_id = |prefix: &'static str| {
        let n = counters.entry(prefix).or_insert(0);
        *n += 1;
        if prefix == "heading" && *n == 1 {
            "heading".to_string()
        } else {
            format!("{prefix}-{n}")
        }
    };
    let open = |e: &BytesStart<'_>, next_id: &mut dyn FnMut(&'static str) -> String| -> Result<Option<LayoutNode>, String> {
        if let Some(dir) = attr(e, "data-dir")? {
            let direction = match dir.as_str() {
                "row" => Direction::Row,
                "column" => Direction::Column,
                other => return Err(format!("unknown data-dir `{other}`")),
            };
            return Ok(Some(LayoutNode::container(next_id("group"), parse_flex(e)?, direction)));
        }
        if let Some(slot) = attr(e, "data-slot")? {
            let kind: SlotKind = slot.parse()?;
            return Ok(Some(LayoutNode::slot(next_id(kind.as_str()), parse_flex(e)?, kind)));
        }
        Ok(None)
    };
    let close = |node: Option<LayoutNode>, stack: &mut Vec<Option<LayoutNode>>, root: &mut Option<LayoutNode>| -> Result<(), String> {
        let Some(node) = node else { return Ok(()) };
        match stack.iter_mut().rev().find_map(Option::as_mut) {
            Some(parent) if parent.slot.is_none() => parent.children.push(node),
            Some(_) => return Err("slots cannot contain layout elements".into()),
            None if root.is_none() => *root = Some(node),
            None => return Err("more than one top-level layout element".into()),
        }
        Ok(())
    };
    loop {
        match reader.read_event().map_err(|e| format!("at byte {}: {e}", reader.buffer_position()))? {
            Event::Start(e) => {
                let node = open(&e, &mut next_id)?;
                stack.push(node);
            }
            Event::Empty(e) => {
                let node = open(&e, &mut next_id)?;
                close(node, &mut stack, &mut root)?;
            }
            Event::End(_) => {
                let node = stack.pop().ok_or("unbalanced closing tag")?;
                close(node, &mut stack, &mut root)?;
            }
            Event::Eof => break,
            _ => {}
        }
    }
    let mut root = root.ok_or("no layout element found")?;
    if root.slot.is_some() {
        return Err("top-level layout element must be a data-dir container".into());
    }
    root.id = "slide".into();
    Ok(root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Wide,
    Tall,
    Square,
}

/// Ratio one side must exceed the other by to count as wide or tall.
pub const ORIENTATION_RATIO: f64 = 1.2;

impl Orientation {
    pub fn of(res: Resolution) -> Self {
        let (w, h) = (res.width as f64, res.height as f64);
        if w > ORIENTATION_RATIO * h {
            Orientation::Wide
        } else if h > ORIENTATION_RATIO * w {
            Orientation::Tall
        } else {
            Orientation::Square
        }
    }

    /// Majority orientation; ties go to the first image. Square when empty.
    pub fn dominant(resolutions: &[Resolution]) -> Self {
        let all: Vec<Orientation> = resolutions.iter().map(|r| Orientation::of(*r)).collect();
        let count = |o: Orientation| all.iter().filter(|x| **x == o).count();
        let Some(&first) = all.first() else { return Orientation::Square };
        [Orientation::Wide, Orientation::Tall, Orientation::Square]
            .into_iter()
            .max_by_key(|o| (count(*o), *o == first))
            .unwrap_or(first)
    }
}

/// Deterministic template choice. Total over all counts; layouts that cannot
/// hold every visual pick the one preserving most of them.
pub fn classify(figures: usize, formulas: usize, orientation: Orientation, has_text: bool) -> &'static str {
    use Orientation::*;
    match (figures, formulas) {
        (0, 0) => "T1_TextOnly.html",
        (0, 1) => "T20_FormulaTop.html",
        (0, 2) => "T18_2Formula_TopTextBottom.html",
        (0, _) => "T11_3Img_TopTextBottom.html",
        (1, 0) if has_text => "T2_ImageRight.html",
        (1, 0) => "T4_ImageTop.html",
        (1, 1) => "T14_ImageRight_1Formula.html",
        (1, _) => "T16_1Img_2Formula_TopTextBottom.html",
        (2, 0) => match (orientation, has_text) {
            (Wide, true) => "T6_TwoImages2.html",
            (Square, true) => "T7_2x2_TopImage.html",
            _ => "T5_TwoImages.html",
        },
        (2, 1) => "T17_2Img_1Formula_TopTextBottom.html",
        (2, _) => "T10_4Img_2x2Grid.html",
        (3, 0) => match (orientation, has_text) {
            (Wide, _) => "T21_3Img_col.html",
            (Square, true) => "T12_3Img_BottomTextTop.html",
            _ => "T13_3Img.html",
        },
        _ => "T10_4Img_2x2Grid.html",
    }
}
