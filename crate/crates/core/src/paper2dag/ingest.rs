use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Paper2DagError;
use crate::dag::Resolution;
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInfo {
    /// Path relative to the bundle directory, as written in the Markdown.
    pub path: String,
    pub resolution: Resolution,
}

/// Metadata that wins over whatever is extracted from the paper text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataOverrides {
    pub title: Option<String>,
    pub authors: Option<String>,
    pub affiliations: Option<String>,
    pub repo_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaperBundle {
    pub dir: PathBuf,
    pub markdown: String,
    /// Referenced images in order of first appearance, then unreferenced
    /// files under `images/` sorted by name.
    pub images: Vec<ImageInfo>,
    pub metadata_overrides: MetadataOverrides,
}

impl PaperBundle {
    pub fn image_path(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }
}

/// Reads a MinerU-style bundle: `paper.md` (or the only `*.md`) plus `images/`.
pub fn ingest(bundle_dir: &Path) -> Result<PaperBundle, Paper2DagError> {
    let md_path = find_markdown(bundle_dir)?;
    let bytes = fs::read(&md_path).map_err(|e| Paper2DagError::Io(format!("{}: {e}", md_path.display())))?;
    // Invalid UTF-8 survives as U+FFFD and is rejected by the clean stage.
    let markdown = String::from_utf8_lossy(&bytes).into_owned();

    let mut seen = HashSet::new();
    let mut images = Vec::new();
    for path in text::image_paths(&markdown) {
        if !seen.insert(path.clone()) {
            continue;
        }
        let full = bundle_dir.join(&path);
        if !full.is_file() {
            return Err(Paper2DagError::MissingImage(path));
        }
        images.push(ImageInfo { resolution: measure(&full, &path)?, path });
    }

    let image_dir = bundle_dir.join("images");
    if image_dir.is_dir() {
        let mut extra = Vec::new();
        let entries = fs::read_dir(&image_dir).map_err(|e| Paper2DagError::Io(e.to_string()))?;
        for entry in entries {
            let entry = entry.map_err(|e| Paper2DagError::Io(e.to_string()))?;
            if !entry.path().is_file() {
                continue;
            }
            let rel = format!("images/{}", entry.file_name().to_string_lossy());
            if !seen.contains(&rel) && !rel.contains(char::is_whitespace) {
                extra.push(rel);
            }
        }
        extra.sort();
        for path in extra {
            let full = bundle_dir.join(&path);
            images.push(ImageInfo { resolution: measure(&full, &path)?, path });
        }
    }

    Ok(PaperBundle {
        dir: bundle_dir.to_path_buf(),
        markdown,
        images,
        metadata_overrides: MetadataOverrides::default(),
    })
}

fn find_markdown(dir: &Path) -> Result<PathBuf, Paper2DagError> {
    let preferred = dir.join("paper.md");
    if preferred.is_file() {
        return Ok(preferred);
    }
    let entries = fs::read_dir(dir).map_err(|_| Paper2DagError::MissingMarkdown(dir.to_path_buf()))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("md")))
        .collect();
    found.sort();
    match found.len() {
        0 => Err(Paper2DagError::MissingMarkdown(dir.to_path_buf())),
        1 => Ok(found.remove(0)),
        _ => Err(Paper2DagError::AmbiguousMarkdown {
            dir: dir.to_path_buf(),
            files: found.iter().map(|p| p.display().to_string()).collect(),
        }),
    }
}

fn measure(full: &Path, rel: &str) -> Result<Resolution, Paper2DagError> {
    let unreadable = |reason: String| Paper2DagError::UnreadableImage { path: rel.to_string(), reason };
    let (w, h) = image::image_dimensions(full).map_err(|e| unreadable(e.to_string()))?;
    if w == 0 || h == 0 {
        return Err(unreadable("zero-sized image".into()));
    }
    Ok(Resolution::new(w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(dir: &Path, name: &str, w: u32, h: u32) {
        fs::create_dir_all(dir.join("images")).unwrap();
        image::RgbImage::new(w, h).save(dir.join("images").join(name)).unwrap();
    }

    #[test]
    fn inventory_follows_first_reference_then_name() {
        let dir = tempfile::tempdir().unwrap();
        png(dir.path(), "b.png", 40, 20);
        png(dir.path(), "a.png", 10, 30);
        png(dir.path(), "z.png", 5, 5);
        fs::write(dir.path().join("x.md"), "# T\n![](images/b.png)\n![](images/z.png)\n![](images/b.png)\n").unwrap();
        let bundle = ingest(dir.path()).unwrap();
        let paths: Vec<&str> = bundle.images.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(paths, ["images/b.png", "images/z.png", "images/a.png"]);
        assert_eq!(bundle.images[0].resolution, Resolution::new(40, 20));
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("paper.md"), "![](images/x.jpg)").unwrap();
        assert_eq!(ingest(dir.path()).unwrap_err(), Paper2DagError::MissingImage("images/x.jpg".into()));
    }

    #[test]
    fn zero_images_and_missing_markdown() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest(dir.path()), Err(Paper2DagError::MissingMarkdown(_))));
        fs::write(dir.path().join("paper.md"), "# T\ntext").unwrap();
        assert!(ingest(dir.path()).unwrap().images.is_empty());
    }

    #[test]
    fn unreadable_image() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::write(dir.path().join("images/bad.png"), b"not an image").unwrap();
        fs::write(dir.path().join("paper.md"), "![](images/bad.png)").unwrap();
        assert!(matches!(ingest(dir.path()), Err(Paper2DagError::UnreadableImage { .. })));
    }

    #[test]
    fn ambiguous_markdown() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.md"), "a").unwrap();
        fs::write(dir.path().join("b.md"), "b").unwrap();
        assert!(matches!(ingest(dir.path()), Err(Paper2DagError::AmbiguousMarkdown { .. })));
    }
}
