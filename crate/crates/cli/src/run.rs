//! Command execution. Each pipeline command writes its outputs, the merged
//! `costs.csv` and one `run_report.jsonl` line, also when it fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use paperx_core::dag::{self, ScholarDag};
use paperx_core::gateway::{ChatBackend, Gateway, GatewayConfig, HttpBackend, ModelRouting, StageGroup, TranscriptMode};
use paperx_core::paper2dag::{self, BuildOptions};
use paperx_core::poster::{self, PosterOptions};
use paperx_core::ppt::{self, PptOptions};
use paperx_core::pr::{self, PrOptions};
use paperx_core::synthetic::SyntheticBackend;

use crate::config::{Cli, Command, RunConfig};
use crate::error::{CliError, EXIT_CONFIG, EXIT_INPUT, EXIT_OK};
use crate::report::{self, RunReport};

/// Resolves configuration and runs the command; returns the exit code.
pub fn execute(cli: &Cli) -> i32 {
    let cfg = match RunConfig::resolve(cli.command, &cli.flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error {e}");
            return e.code;
        }
    };
    run(cli.command, &cfg)
}

pub fn run(command: Command, cfg: &RunConfig) -> i32 {
    if command == Command::CostReport {
        return match cost_report(&cfg.out_dir) {
            Ok(table) => {
                print!("{table}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error {e}");
                e.code
            }
        };
    }
    if let Err(e) = check_paths(cfg) {
        eprintln!("error {e}");
        return e.code;
    }
    let mut session = Session::default();
    let result = (|| {
        let gateway = make_gateway(cfg)?;
        let outcome = pipeline(command, cfg, &gateway, &mut session);
        session.model_calls = gateway.network_calls();
        let ledger = gateway.ledger();
        let merged = report::write_ledger(&cfg.out_dir, &ledger, &groups(command))?;
        session.outputs.push(report::LEDGER_FILE.into());
        session.ledger = Some(merged);
        outcome
    })();
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error {e}");
            e.code
        }
    };
    let totals = session.ledger.as_ref().map(|l| l.grand_total()).unwrap_or_default();
    let run_report = RunReport {
        command: command_name(command).into(),
        exit_code: code,
        failed_stage: result.as_ref().err().map(|e| e.stage.clone()),
        error: result.as_ref().err().map(|e| e.message.clone()),
        outputs: session.outputs.clone(),
        warnings: session.warnings.clone(),
        model_calls: session.model_calls,
        input_tokens: totals.input_tokens,
        output_tokens: totals.output_tokens,
        cost_usd: totals.cost_usd,
    };
    if fs::create_dir_all(&cfg.out_dir).is_ok() {
        if let Err(e) = report::append_run_report(&cfg.out_dir, &run_report) {
            eprintln!("error {e}");
        }
    }
    if code == EXIT_OK {
        for path in &session.outputs {
            println!("wrote {}", cfg.out_dir.join(path).display());
        }
        if let Some(ledger) = &session.ledger {
            print!("{}", report::cost_table(ledger));
        }
    }
    code
}

#[derive(Debug, Default)]
struct Session {
    outputs: Vec<String>,
    warnings: Vec<String>,
    model_calls: usize,
    ledger: Option<paperx_core::gateway::CostLedger>,
}

pub fn command_name(command: Command) -> &'static str {
    match command {
        Command::BuildDag => "build-dag",
        Command::Ppt { .. } => "ppt",
        Command::Poster { .. } => "poster",
        Command::Pr { .. } => "pr",
        Command::All => "all",
        Command::CostReport => "cost-report",
    }
}

/// Ledger groups a command owns; their old `costs.csv` rows are replaced.
fn groups(command: Command) -> Vec<StageGroup> {
    let with_dag = |from_paper: bool, g: StageGroup| if from_paper { vec![StageGroup::Dag, g] } else { vec![g] };
    match command {
        Command::BuildDag => vec![StageGroup::Dag],
        Command::Ppt { from_paper } => with_dag(from_paper, StageGroup::Ppt),
        Command::Poster { from_paper } => with_dag(from_paper, StageGroup::Poster),
        Command::Pr { from_paper } => with_dag(from_paper, StageGroup::Pr),
        Command::All => StageGroup::ALL.to_vec(),
        Command::CostReport => Vec::new(),
    }
}

/// The output directory may sit inside the bundle but must not be it.
/// Checked before anything is written.
fn check_paths(cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(input) = &cfg.input_dir {
        let same = match (input.canonicalize(), cfg.out_dir.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => input == &cfg.out_dir,
        };
        if same {
            return Err(CliError::config("--out must differ from --input; the input bundle is never written"));
        }
    }
    Ok(())
}

pub fn make_gateway(cfg: &RunConfig) -> Result<Gateway, CliError> {
    let routing = ModelRouting {
        llm_model: cfg.llm_model.clone(),
        vlm_model: cfg.vlm_model.clone(),
        audit_model: cfg.audit_model.clone(),
        temperatures: cfg.temperatures.clone(),
        ..ModelRouting::default()
    };
    let mut config = GatewayConfig {
        mode: cfg.mode,
        transcript_path: cfg.transcript.clone(),
        max_in_flight: cfg.max_in_flight,
        routing,
        prices: cfg.prices.clone(),
        ..GatewayConfig::default()
    };
    let backend: Option<Arc<dyn ChatBackend>> = match cfg.mode {
        TranscriptMode::Replay => None,
        _ if cfg.offline => {
            config.backoff_base = std::time::Duration::ZERO;
            Some(Arc::new(SyntheticBackend))
        }
        _ => {
            let key = cfg
                .api_key
                .as_deref()
                .ok_or_else(|| CliError::config("PAPERX_API_KEY is required for live and record runs (or pass --offline)"))?;
            Some(Arc::new(HttpBackend::new(cfg.base_url.as_deref(), key)))
        }
    };
    Ok(Gateway::new(config, backend)?)
}

fn pipeline(command: Command, cfg: &RunConfig, gateway: &Gateway, session: &mut Session) -> Result<(), CliError> {
    match command {
        Command::BuildDag => build_step(cfg, gateway, session).map(drop),
        Command::Ppt { from_paper } => {
            let dag = dag_for(from_paper, cfg, gateway, session)?;
            ppt_step(&dag, cfg, gateway, session)
        }
        Command::Poster { from_paper } => {
            let dag = dag_for(from_paper, cfg, gateway, session)?;
            poster_step(&dag, cfg, gateway, session)
        }
        Command::Pr { from_paper } => {
            let dag = dag_for(from_paper, cfg, gateway, session)?;
            pr_step(&dag, cfg, gateway, session)
        }
        Command::All => {
            let dag = build_step(cfg, gateway, session)?;
            ppt_step(&dag, cfg, gateway, session)?;
            poster_step(&dag, cfg, gateway, session)?;
            pr_step(&dag, cfg, gateway, session)
        }
        Command::CostReport => Ok(()),
    }
}

fn dag_for(from_paper: bool, cfg: &RunConfig, gateway: &Gateway, session: &mut Session) -> Result<ScholarDag, CliError> {
    if from_paper {
        build_step(cfg, gateway, session)
    } else {
        load_dag(&cfg.out_dir)
    }
}

pub fn load_dag(out_dir: &Path) -> Result<ScholarDag, CliError> {
    let path = out_dir.join("dag.json");
    let bytes = fs::read(&path).map_err(|e| {
        CliError::new(EXIT_INPUT, "load_dag", format!("{}: {e}; run build-dag first or pass --from-paper", path.display()))
    })?;
    dag::deserialize(&bytes).map_err(|e| CliError::new(EXIT_INPUT, "load_dag", format!("{}: {e}", path.display())))
}

fn build_step(cfg: &RunConfig, gateway: &Gateway, session: &mut Session) -> Result<ScholarDag, CliError> {
    let input = cfg.input()?;
    let options = BuildOptions { max_depth: cfg.max_depth, ..BuildOptions::default() };
    let output = paper2dag::build(input, &cfg.out_dir, gateway, &options)?;
    for w in &output.warnings {
        log::warn!("{w}");
    }
    session.warnings.extend(output.warnings);
    session.outputs.extend(["dag.json".to_string(), "build.log".to_string()]);
    Ok(output.dag)
}

fn ppt_step(dag: &ScholarDag, cfg: &RunConfig, gateway: &Gateway, session: &mut Session) -> Result<(), CliError> {
    let opts = PptOptions {
        budget: cfg.ppt_budget,
        refine_iters: cfg.refine_iters,
        renderer_cmd: cfg.renderer_cmd.clone(),
        asset_dir: cfg.input_dir.clone(),
        ..PptOptions::default()
    };
    let deck = ppt::generate_deck(dag, gateway, &opts)?;
    let slides = ppt::export_deck(&deck, &cfg.out_dir, cfg.input_dir.as_deref(), cfg.renderer_cmd.as_deref())?;
    let warnings = deck.warnings.iter().chain(deck.slides.iter().flat_map(|s| s.warnings.iter()));
    session.warnings.extend(warnings.cloned());
    session.outputs.extend(slides.iter().map(|p| relative(&cfg.out_dir, p)));
    session.outputs.push("deck.json".into());
    Ok(())
}

fn poster_step(dag: &ScholarDag, cfg: &RunConfig, gateway: &Gateway, session: &mut Session) -> Result<(), CliError> {
    let opts = PosterOptions { budget: cfg.poster_budget, config: cfg.poster };
    let poster = poster::generate_poster(dag, gateway, &opts)?;
    poster::export_poster(&poster, &cfg.out_dir, cfg.input_dir.as_deref())?;
    session.outputs.extend(["poster.html".to_string(), "poster.json".to_string()]);
    Ok(())
}

fn pr_step(dag: &ScholarDag, cfg: &RunConfig, gateway: &Gateway, session: &mut Session) -> Result<(), CliError> {
    let mut opts = PrOptions { budget: cfg.pr_budget, ..PrOptions::default() };
    if let Some(prompt) = &cfg.pr_style_prompt {
        opts.style_prompt = prompt.clone();
    }
    let doc = pr::generate_pr(dag, gateway, &opts)?;
    pr::export_pr(&doc, &cfg.out_dir, cfg.input_dir.as_deref())?;
    session.outputs.extend(["pr.md".to_string(), "pr.json".to_string()]);
    Ok(())
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).map(PathBuf::from).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

pub fn cost_report(out_dir: &Path) -> Result<String, CliError> {
    let ledger = report::read_ledger(out_dir)?
        .ok_or_else(|| CliError::new(EXIT_CONFIG, "cost_report", format!("no ledger at {}", out_dir.join(report::LEDGER_FILE).display())))?;
    Ok(report::cost_table(&ledger))
}
