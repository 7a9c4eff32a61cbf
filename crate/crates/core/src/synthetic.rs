//! A model-free backend answering every stage with the deterministic
//! stand-ins. Runs through it exercise the full request, validation and
//! transcript path, so they can be recorded and replayed like live runs.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::dag::{Resolution, DEFAULT_MAX_DEPTH};
use crate::gateway::{BackendError, ChatBackend, ChatRequest, ChatResponse, Gateway, GatewayConfig, Part, StageTag, Usage};
use crate::paper2dag::{
    deterministic_clean, deterministic_decompose, deterministic_split, deterministic_visuals, parse_decompose_request,
    parse_visual_request, SPLIT_DELIMITER,
};
use crate::ppt::outline::{deterministic_slide_outline, SlideOutline};
use crate::ppt::revise::{deterministic_revise, parse_audit_request, parse_revise_request};
use crate::ppt::{classify_outline, lint};
use crate::poster::outline::{deterministic_poster_block, parse_poster_request};
use crate::pr::{deterministic_refine, deterministic_section, deterministic_title_tags};
use crate::prompts;

#[derive(Debug, Default, Clone, Copy)]
pub struct SyntheticBackend;

/// A live gateway backed by [`SyntheticBackend`] with no retry backoff.
pub fn gateway() -> Gateway {
    gateway_with(GatewayConfig::default())
}

pub fn gateway_with(config: GatewayConfig) -> Gateway {
    let config = GatewayConfig { backoff_base: std::time::Duration::ZERO, ..config };
    Gateway::new(config, Some(Arc::new(SyntheticBackend))).expect("synthetic gateway config")
}

/// Rough token estimate: four characters per token.
fn tokens(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

/// The original input; retry feedback arrives as later parts.
fn first_text(request: &ChatRequest) -> &str {
    request
        .user_parts
        .iter()
        .find_map(|p| match p {
            Part::Text(t) => Some(t.as_str()),
            Part::Image { .. } => None,
        })
        .unwrap_or("")
}

fn unparseable(stage: StageTag) -> BackendError {
    BackendError::Transport(format!("synthetic backend cannot parse the {stage} request"))
}

fn to_json(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("json")
}

impl SyntheticBackend {
    pub fn answer(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let input = first_text(request);
        let stage = request.stage;
        let parse_json = || serde_json::from_str::<Value>(input).map_err(|_| unparseable(stage));
        Ok(match stage {
            StageTag::DagClean => deterministic_clean(input),
            StageTag::DagSplit => {
                let split = deterministic_split(input);
                let chunks: Vec<&str> = split.sections.iter().map(|s| s.body.as_str()).collect();
                chunks.join(&format!("\n\n{SPLIT_DELIMITER}\n\n"))
            }
            StageTag::DagDecompose => {
                let (name, body) = parse_decompose_request(input).ok_or_else(|| unparseable(stage))?;
                to_json(&deterministic_decompose(&name, &body, 1, DEFAULT_MAX_DEPTH))
            }
            StageTag::DagVisual => {
                let (refs, markdown) = parse_visual_request(input).ok_or_else(|| unparseable(stage))?;
                let images: Vec<(String, Resolution)> = refs
                    .iter()
                    .zip(request.user_parts.iter().filter_map(|p| match p {
                        Part::Image { path, .. } => Some(path),
                        Part::Text(_) => None,
                    }))
                    .map(|(r, path)| {
                        let (w, h) = image::image_dimensions(path).unwrap_or((1, 1));
                        (crate::text::image_ref_path(r).unwrap_or(r).to_string(), Resolution::new(w, h))
                    })
                    .collect();
                to_json(&deterministic_visuals(&markdown, &images))
            }
            StageTag::PptOutline => to_json(&deterministic_slide_outline(&parse_json()?)),
            StageTag::PptSlide => {
                let value = parse_json()?;
                let first = value.get(0).unwrap_or(&value);
                let outline = SlideOutline::from_json(first).map_err(|_| unparseable(stage))?;
                to_json(&json!({"template": classify_outline(&outline)}))
            }
            StageTag::PptAudit => {
                let (outline, tree, template) = parse_audit_request(input).ok_or_else(|| unparseable(stage))?;
                lint(&tree, &template, &outline).to_string()
            }
            StageTag::PptRevise => {
                let (report, tree, outline, template) = parse_revise_request(input).ok_or_else(|| unparseable(stage))?;
                serde_json::to_string_pretty(&deterministic_revise(&tree, &report, &outline, &template)).expect("json")
            }
            StageTag::PosterOutline => {
                let (name, content, images) = parse_poster_request(input).ok_or_else(|| unparseable(stage))?;
                deterministic_poster_block(&name, &content, &images)
            }
            StageTag::PrOutline => deterministic_section(&parse_json()?),
            StageTag::PrFinal if is_title_request(&request.system) => deterministic_title_tags(input),
            StageTag::PrFinal => deterministic_refine(input),
        })
    }
}

fn is_title_request(system: &str) -> bool {
    let head = prompts::TITLE_HASHTAG.lines().next().unwrap_or("");
    system.starts_with(head)
}

impl ChatBackend for SyntheticBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = self.answer(request)?;
        let input = tokens(&request.system) + tokens(&request.user_text());
        Ok(ChatResponse { usage: Usage { input_tokens: input, output_tokens: tokens(&text) }, text })
    }
}
