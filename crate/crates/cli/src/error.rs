//! Every failure maps to one exit code: 1 configuration or i/o, 2 invalid
//! input or failed validation, 3 model failure.

use std::fmt;

use paperx_core::gateway::GatewayError;
use paperx_core::paper2dag::Paper2DagError;
use paperx_core::poster::PosterError;
use paperx_core::ppt::PptError;
use paperx_core::pr::PrError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    /// Pipeline step the failure is attributed to.
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { code, stage: stage.into(), message: message.to_string() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(EXIT_CONFIG, "config", message)
    }

    pub fn io(message: impl fmt::Display) -> Self {
        Self::new(EXIT_CONFIG, "io", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

fn gateway_code(e: &GatewayError) -> i32 {
    match e {
        GatewayError::Io(_) => EXIT_CONFIG,
        GatewayError::InvalidRequest(_) => EXIT_INPUT,
        GatewayError::Transport { .. }
        | GatewayError::ReplayMiss { .. }
        | GatewayError::Auth(_)
        | GatewayError::NoJsonFound
        | GatewayError::ValidationExhausted { .. } => EXIT_MODEL,
    }
}

fn gateway_stage(e: &GatewayError, fallback: &str) -> String {
    match e {
        GatewayError::Transport { stage, .. }
        | GatewayError::ReplayMiss { stage, .. }
        | GatewayError::ValidationExhausted { stage, .. } => stage.to_string(),
        _ => fallback.to_string(),
    }
}

impl From<Paper2DagError> for CliError {
    fn from(e: Paper2DagError) -> Self {
        let code = match &e {
            Paper2DagError::Io(_) => EXIT_CONFIG,
            Paper2DagError::Gateway(g) => gateway_code(g),
            other if other.is_model_failure() => EXIT_MODEL,
            _ => EXIT_INPUT,
        };
        CliError::new(code, e.stage(), e)
    }
}

impl From<PptError> for CliError {
    fn from(e: PptError) -> Self {
        let (code, stage) = match &e {
            PptError::Gateway(g) => (gateway_code(g), gateway_stage(g, "ppt")),
            PptError::ReportParse(_) => (EXIT_MODEL, "ppt_audit".into()),
            PptError::Dag(_) => (EXIT_INPUT, "ppt".into()),
            PptError::TemplateMissing(_) | PptError::TemplateParse { .. } | PptError::Render(_) | PptError::Io(_) => {
                (EXIT_CONFIG, "ppt".into())
            }
        };
        CliError::new(code, stage, e)
    }
}

impl From<PosterError> for CliError {
    fn from(e: PosterError) -> Self {
        let (code, stage) = match &e {
            PosterError::Gateway(g) => (gateway_code(g), gateway_stage(g, "poster")),
            PosterError::Dag(_) => (EXIT_INPUT, "poster".into()),
            PosterError::InfeasibleAtMinimum { .. } => (EXIT_INPUT, "poster_layout".into()),
            PosterError::Measure(_) | PosterError::Config(_) | PosterError::Io(_) => (EXIT_CONFIG, "poster".into()),
        };
        CliError::new(code, stage, e)
    }
}

impl From<PrError> for CliError {
    fn from(e: PrError) -> Self {
        let (code, stage) = match &e {
            PrError::Gateway(g) => (gateway_code(g), gateway_stage(g, "pr")),
            PrError::Dag(_) => (EXIT_INPUT, "pr".into()),
            PrError::Io(_) => (EXIT_CONFIG, "pr".into()),
        };
        CliError::new(code, stage, e)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::new(gateway_code(&e), gateway_stage(&e, "gateway"), e)
    }
}
