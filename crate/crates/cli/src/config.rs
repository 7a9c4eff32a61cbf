//! Run configuration. Precedence: flags, then `PAPERX_*` env vars (both
//! resolved by clap), then `paperx.toml`, then built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use paperx_core::dag::DEFAULT_MAX_DEPTH;
use paperx_core::gateway::{PriceTable, StageTag, TranscriptMode};
use paperx_core::poster::PosterConfig;
use serde::Deserialize;

use crate::error::CliError;

pub const CONFIG_FILE: &str = "paperx.toml";

#[derive(Debug, Parser)]
#[command(name = "paperx", version, about = "Compile a Markdown paper bundle into slides, a poster and a promotion post")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build dag.json and build.log from the input bundle.
    BuildDag,
    /// Generate the slide deck from dag.json.
    Ppt {
        /// Build the graph first instead of reading an existing dag.json.
        #[arg(long)]
        from_paper: bool,
    },
    /// Generate poster.html and poster.json from dag.json.
    Poster {
        #[arg(long)]
        from_paper: bool,
    },
    /// Generate pr.md and pr.json from dag.json.
    Pr {
        #[arg(long)]
        from_paper: bool,
    },
    /// Build the graph, then all three outputs.
    All,
    /// Print token and cost totals from the output directory's costs.csv.
    CostReport,
}

#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// Paper bundle: a Markdown file plus images/.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory [default: <input>/out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Configuration file [default: ./paperx.toml when present].
    #[arg(long, global = true, env = "PAPERX_CONFIG")]
    pub config: Option<PathBuf>,
    /// Text model id.
    #[arg(long, global = true, env = "PAPERX_MODEL")]
    pub model: Option<String>,
    /// Vision model id, used for figure analysis and slide audits.
    #[arg(long, global = true, env = "PAPERX_VLM_MODEL")]
    pub vlm_model: Option<String>,
    /// OpenAI-compatible endpoint.
    #[arg(long, global = true, env = "PAPERX_BASE_URL")]
    pub base_url: Option<String>,
    #[arg(long, global = true, env = "PAPERX_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    /// Traversal budget of the running backend; under `all` it sets all three.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Maximum hierarchy depth, 1 to 4.
    #[arg(long, global = true)]
    pub max_depth: Option<u32>,
    /// Maximum audit rounds per slide.
    #[arg(long, global = true)]
    pub refine_iters: Option<usize>,
    /// Poster canvas in pixels, e.g. 3456x2304.
    #[arg(long, global = true, value_parser = parse_canvas)]
    pub canvas: Option<(u32, u32)>,
    /// Poster column count
    #[arg(long, global = true)]
    pub columns: Option<usize>,
    /// Poster trade-off between readability and image coverage, in [0, 1].
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Serve from this transcript, calling the model and appending on a miss.
    #[arg(long, global = true, conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Serve only from this transcript; never call the model.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    /// HTML-to-PNG command with {input} and {output} placeholders; enables visual audits.
    #[arg(long, global = true)]
    pub renderer_cmd: Option<String>,
    /// Price table (TOML or JSON): model id to input_per_1k/output_per_1k USD.
    #[arg(long, global = true)]
    pub prices: Option<PathBuf>,
    /// Answer every model call with the built-in synthetic backend.
    #[arg(long, global = true)]
    pub offline: bool,
}

pub fn parse_canvas(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|_| format!("bad canvas dimension `{v}`"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("canvas dimensions must be positive".into());
    }
    Ok((w, h))
}

/// Keys accepted in `paperx.toml`. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<String>,
    pub vlm_model: Option<String>,
    pub audit_model: Option<String>,
    pub base_url: Option<String>,
    pub ppt_budget: Option<usize>,
    pub poster_budget: Option<usize>,
    pub pr_budget: Option<usize>,
    pub max_depth: Option<u32>,
    pub refine_iters: Option<usize>,
    pub canvas: Option<String>,
    pub columns: Option<usize>,
    pub lambda: Option<f64>,
    pub renderer_cmd: Option<String>,
    pub prices: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub offline: Option<bool>,
    /// Stage tag (e.g. `ppt_outline`) to sampling temperature.
    #[serde(default)]
    pub temperatures: BTreeMap<String, f32>,
    /// Replacement for the built-in promotion-post style prompt.
    pub pr_style_prompt: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub llm_model: String,
    pub vlm_model: String,
    pub audit_model: Option<String>,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub temperatures: BTreeMap<StageTag, f32>,
    pub ppt_budget: usize,
    pub poster_budget: usize,
    pub pr_budget: usize,
    pub max_depth: u32,
    pub refine_iters: usize,
    pub poster: PosterConfig,
    pub mode: TranscriptMode,
    pub transcript: Option<PathBuf>,
    pub renderer_cmd: Option<String>,
    pub prices: PriceTable,
    pub max_in_flight: usize,
    pub offline: bool,
    pub pr_style_prompt: Option<String>,
}

impl RunConfig {
    /// Merges flags over the config file. `file` is the explicit `--config`
    /// path or, when absent, `./paperx.toml` if it exists.
    pub fn resolve(command: Command, flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None if Path::new(CONFIG_FILE).is_file() => FileConfig::load(Path::new(CONFIG_FILE))?,
            None => FileConfig::default(),
        };
        Self::merge(command, flags, file)
    }

    pub fn merge(command: Command, flags: &Flags, file: FileConfig) -> Result<Self, CliError> {
        let input_dir = flags.input.clone().or(file.input);
        let out_dir = match (flags.out.clone().or(file.out), &input_dir) {
            (Some(out), _) => out,
            (None, Some(input)) => input.join("out"),
            (None, None) => return Err(CliError::config("either --input or --out is required")),
        };
        let model = flags.model.clone().or(file.model).unwrap_or_else(|| "gpt-4o".into());
        let vlm_model = flags.vlm_model.clone().or(file.vlm_model).unwrap_or_else(|| model.clone());

        let mut temperatures = BTreeMap::new();
        for (key, t) in &file.temperatures {
            let stage: StageTag = key.parse().map_err(CliError::config)?;
            if !(0.0..=2.0).contains(t) {
                return Err(CliError::config(format!("temperature for {key} must be within [0, 2]")));
            }
            temperatures.insert(stage, *t);
        }

        let budget_for = |this: Command, file_value: Option<usize>, default: usize| {
            let applies = matches!(command, Command::All) || std::mem::discriminant(&command) == std::mem::discriminant(&this);
            flags.budget.filter(|_| applies).or(file_value).unwrap_or(default)
        };
        let ppt_budget = budget_for(Command::Ppt { from_paper: false }, file.ppt_budget, paperx_core::ppt::DEFAULT_BUDGET);
        let poster_budget =
            budget_for(Command::Poster { from_paper: false }, file.poster_budget, paperx_core::poster::DEFAULT_BUDGET);
        let pr_budget = budget_for(Command::Pr { from_paper: false }, file.pr_budget, paperx_core::pr::DEFAULT_BUDGET);
        if ppt_budget == 0 || poster_budget == 0 || pr_budget == 0 {
            return Err(CliError::config("budgets must be at least 1"));
        }

        let max_depth = flags.max_depth.or(file.max_depth).unwrap_or(DEFAULT_MAX_DEPTH);
        if !(1..=DEFAULT_MAX_DEPTH).contains(&max_depth) {
            return Err(CliError::config(format!("max depth must be within 1..={DEFAULT_MAX_DEPTH}")));
        }
        let refine_iters = flags.refine_iters.or(file.refine_iters).unwrap_or(paperx_core::ppt::DEFAULT_REFINE_ITERS);
        if refine_iters == 0 {
            return Err(CliError::config("refine iterations must be at least 1"));
        }

        let mut poster = PosterConfig::default();
        let canvas = match (flags.canvas, file.canvas) {
            (Some(c), _) => Some(c),
            (None, Some(s)) => Some(parse_canvas(&s).map_err(CliError::config)?),
            (None, None) => None,
        };
        if let Some((w, h)) = canvas {
            poster.canvas_width = w as f64;
            poster.canvas_height = h as f64;
        }
        if let Some(c) = flags.columns.or(file.columns) {
            poster.columns = c;
        }
        if let Some(l) = flags.lambda.or(file.lambda) {
            poster.lambda = l;
        }
        poster.check().map_err(CliError::config)?;

        let (mode, transcript) = match (&flags.record, &flags.replay) {
            (Some(p), _) => (TranscriptMode::Record, Some(p.clone())),
            (None, Some(p)) => (TranscriptMode::Replay, Some(p.clone())),
            (None, None) => (TranscriptMode::Live, None),
        };

        let prices = match flags.prices.clone().or(file.prices) {
            Some(path) => load_prices(&path)?,
            None => PriceTable::default(),
        };
        let pr_style_prompt = match file.pr_style_prompt {
            Some(path) => Some(fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?),
            None => None,
        };

        Ok(Self {
            input_dir,
            out_dir,
            llm_model: model,
            vlm_model,
            audit_model: file.audit_model,
            base_url: flags.base_url.clone().or(file.base_url),
            api_key: flags.api_key.clone().filter(|k| !k.is_empty()),
            temperatures,
            ppt_budget,
            poster_budget,
            pr_budget,
            max_depth,
            refine_iters,
            poster,
            mode,
            transcript,
            renderer_cmd: flags.renderer_cmd.clone().or(file.renderer_cmd),
            prices,
            max_in_flight: file.max_in_flight.unwrap_or(4).max(1),
            offline: flags.offline || file.offline.unwrap_or(false),
            pr_style_prompt,
        })
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input_dir.as_deref().ok_or_else(|| CliError::config("--input is required for this command"))
    }
}

/// TOML or JSON, chosen by extension.
pub fn load_prices(path: &Path) -> Result<PriceTable, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags { input: Some("paper".into()), ..Default::default() }
    }

    #[test]
    fn canvas_parses_width_by_height() {
        assert_eq!(parse_canvas("3456x2304"), Ok((3456, 2304)));
        assert!(parse_canvas("3456").is_err());
        assert!(parse_canvas("0x10").is_err());
    }

    #[test]
    fn flags_beat_file_and_file_beats_defaults() {
        let file: FileConfig = toml::from_str("model = \"file-model\"\ncolumns = 2\nppt_budget = 9").unwrap();
        let mut f = flags();
        f.model = Some("flag-model".into());
        let cfg = RunConfig::merge(Command::All, &f, file).unwrap();
        assert_eq!(cfg.llm_model, "flag-model");
        assert_eq!(cfg.vlm_model, "flag-model");
        assert_eq!(cfg.poster.columns, 2);
        assert_eq!(cfg.ppt_budget, 9);
        assert_eq!(cfg.poster_budget, 5);
        assert_eq!(cfg.out_dir, PathBuf::from("paper/out"));
    }

    #[test]
    fn budget_flag_targets_the_running_backend() {
        let mut f = flags();
        f.budget = Some(7);
        let cfg = RunConfig::merge(Command::Poster { from_paper: false }, &f, FileConfig::default()).unwrap();
        assert_eq!((cfg.ppt_budget, cfg.poster_budget, cfg.pr_budget), (15, 7, 5));
        let cfg = RunConfig::merge(Command::All, &f, FileConfig::default()).unwrap();
        assert_eq!((cfg.ppt_budget, cfg.poster_budget, cfg.pr_budget), (7, 7, 7));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut f = flags();
        f.max_depth = Some(5);
        assert_eq!(RunConfig::merge(Command::All, &f, FileConfig::default()).unwrap_err().code, 1);
        let mut f = flags();
        f.budget = Some(0);
        assert!(RunConfig::merge(Command::All, &f, FileConfig::default()).is_err());
        let file: FileConfig = toml::from_str("[temperatures]\nnot_a_stage = 0.5").unwrap();
        assert!(RunConfig::merge(Command::All, &flags(), file).is_err());
        assert!(toml::from_str::<FileConfig>("unknown_key = 1").is_err());
        assert!(RunConfig::merge(Command::All, &Flags::default(), FileConfig::default()).is_err());
    }

    #[test]
    fn temperatures_and_transcript_mode() {
        let file: FileConfig = toml::from_str("[temperatures]\nppt_outline = 0.3").unwrap();
        let mut f = flags();
        f.replay = Some("t.jsonl".into());
        let cfg = RunConfig::merge(Command::All, &f, file).unwrap();
        assert_eq!(cfg.temperatures.get(&StageTag::PptOutline), Some(&0.3));
        assert_eq!(cfg.mode, TranscriptMode::Replay);
    }
}
