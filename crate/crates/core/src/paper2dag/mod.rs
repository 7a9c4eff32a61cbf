//! Paper bundle to Scholar DAG: ingest, clean, split, initialize, decompose,
//! build visual nodes and align them with the text hierarchy.

mod clean;
mod graph;
mod ingest;
mod split;
mod visual;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dag::{self, ScholarDag, Violation};
use crate::gateway::{Gateway, GatewayError, StageTag};

pub use clean::{check_clean, clean, deterministic_clean, is_removable_heading, REMOVABLE_SECTIONS};
pub use graph::{
    decompose, decompose_request_text, deterministic_decompose, init_graph, parse_decompose_request,
    traceability_violations, validate_decomposition, DecomposedNode, RootMetadata,
};
pub use ingest::{ingest, ImageInfo, MetadataOverrides, PaperBundle};
pub use split::{check_split, deterministic_split, split_sections, Section, SectionSplit, SPLIT_DELIMITER};
pub use visual::{
    align, build_visual_nodes, caption_number, detect_caption, deterministic_visuals, formula_heuristic, heuristic_visuals,
    parse_visual_request, visual_request_text, RefKind, VisualCandidate,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Paper2DagError {
    #[error("no Markdown file in {0}")]
    MissingMarkdown(PathBuf),
    #[error("several Markdown files in {dir} and none is paper.md: {files:?}")]
    AmbiguousMarkdown { dir: PathBuf, files: Vec<String> },
    #[error("markdown references `{0}` but the file does not exist")]
    MissingImage(String),
    #[error("cannot read image `{path}`: {reason}")]
    UnreadableImage { path: String, reason: String },
    #[error("input does not look like Markdown text: {0}")]
    CorruptInput(String),
    #[error("cleaned text is not a pure deletion of the input: {}", .0.join("; "))]
    DeletionViolation(Vec<String>),
    #[error("section chunks do not reassemble the input: {}", .0.join("; "))]
    SplitDrift(Vec<String>),
    #[error("paper has no sections after cleaning")]
    EmptyPaper,
    #[error("no title line found and no title override given")]
    MetadataMissing,
    #[error("decomposition of `{node}` violates the node schema: {}", .violations.join("; "))]
    Schema { node: String, violations: Vec<String> },
    #[error("decomposition of `{node}` is not traceable to its parent: {}", .violations.join("; "))]
    Hallucination { node: String, violations: Vec<String> },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("built graph is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidDag(Vec<Violation>),
    #[error("i/o: {0}")]
    Io(String),
}

impl Paper2DagError {
    /// Pipeline step that raised the error, for stage-attributed messages.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::MissingMarkdown(_)
            | Self::AmbiguousMarkdown { .. }
            | Self::MissingImage(_)
            | Self::UnreadableImage { .. } => "ingest",
            Self::CorruptInput(_) | Self::DeletionViolation(_) => "clean",
            Self::SplitDrift(_) | Self::EmptyPaper => "split",
            Self::MetadataMissing => "init_graph",
            Self::Schema { .. } | Self::Hallucination { .. } => "decompose",
            Self::Gateway(e) => match e {
                GatewayError::Transport { stage, .. }
                | GatewayError::ReplayMiss { stage, .. }
                | GatewayError::ValidationExhausted { stage, .. } => stage.as_str(),
                _ => "gateway",
            },
            Self::InvalidDag(_) => "validate",
            Self::Io(_) => "io",
        }
    }

    /// True for failures of the model path (exhausted retries, transport,
    /// replay misses), as opposed to bad input.
    pub fn is_model_failure(&self) -> bool {
        matches!(
            self,
            Self::DeletionViolation(_) | Self::SplitDrift(_) | Self::Schema { .. } | Self::Hallucination { .. } | Self::Gateway(_)
        )
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub max_depth: u32,
    pub overrides: MetadataOverrides,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { max_depth: dag::DEFAULT_MAX_DEPTH, overrides: MetadataOverrides::default() }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dag: ScholarDag,
    pub bundle: PaperBundle,
    pub warnings: Vec<String>,
}

/// Runs the whole construction and validates the result. Nothing is written.
pub fn build_dag(bundle_dir: &Path, gateway: &Gateway, options: &BuildOptions) -> Result<BuildOutput, Paper2DagError> {
    let mut bundle = ingest(bundle_dir)?;
    bundle.metadata_overrides = options.overrides.clone();
    let mut warnings = Vec::new();

    let cleaned = clean(&bundle.markdown, gateway)?;
    let split = split_sections(&cleaned, gateway)?;
    if split.sections.is_empty() {
        return Err(Paper2DagError::EmptyPaper);
    }

    let mut dag = init_graph(&bundle, &split)?;
    let sections: Vec<Section> = split.sections.clone();
    let names: Vec<String> = dag.root().edge.clone();
    graph::decompose_sections(&mut dag, &names, &sections, gateway, options)?;

    for visual in build_visual_nodes(&bundle, gateway, &mut warnings)? {
        dag.add_visual(visual);
    }
    let edges = align(&dag, &mut warnings);
    dag.set_cross_edges(edges);

    let report = dag::validate_with_depth(&dag, options.max_depth);
    let mut violations = report.violations;
    violations.extend(traceability_violations(&dag));
    if !violations.is_empty() {
        return Err(Paper2DagError::InvalidDag(violations));
    }
    Ok(BuildOutput { dag, bundle, warnings })
}

/// [`build_dag`] plus `out_dir/dag.json` and `out_dir/build.log`. On error no
/// dag.json is written.
pub fn build(bundle_dir: &Path, out_dir: &Path, gateway: &Gateway, options: &BuildOptions) -> Result<BuildOutput, Paper2DagError> {
    let output = build_dag(bundle_dir, gateway, options)?;
    fs::create_dir_all(out_dir).map_err(|e| Paper2DagError::Io(format!("{}: {e}", out_dir.display())))?;
    let json = dag::serialize(&output.dag).map_err(|e| match e {
        dag::DagError::InvalidDag(v) => Paper2DagError::InvalidDag(v),
        other => Paper2DagError::Io(other.to_string()),
    })?;
    write(&out_dir.join("dag.json"), &json)?;
    let mut log = String::new();
    for w in &output.warnings {
        log.push_str(&crate::text::collapse_newlines(w));
        log.push('\n');
    }
    write(&out_dir.join("build.log"), log.as_bytes())?;
    Ok(output)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Paper2DagError> {
    fs::write(path, bytes).map_err(|e| Paper2DagError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn stage_error(err: GatewayError) -> Paper2DagError {
    match err {
        GatewayError::ValidationExhausted { stage: StageTag::DagClean, violations, .. } => {
            Paper2DagError::DeletionViolation(violations)
        }
        GatewayError::ValidationExhausted { stage: StageTag::DagSplit, violations, .. } => {
            Paper2DagError::SplitDrift(violations)
        }
        other => Paper2DagError::Gateway(other),
    }
}
