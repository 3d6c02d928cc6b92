//! `saap` command line: every command delegates to the same pipeline
//! operations the HTTP service exposes.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use saap_core::pipeline::{
    AggregateRequest, CalibrationRequest, RepeatabilityRequest, RunRequest,
};
use saap_core::{
    DocId, ErrorCode, FindingId, NewDocument, Pipeline, PipelineConfig, PipelineError, ProfileId,
    RunId, Store,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CliConfig, GlobalArgs};

#[derive(Debug, Parser)]
#[command(name = "saap", version, about = "Judgment analysis, deviation ranking and arbitration")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Store judgment text files as documents.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        jurisdiction: String,
        #[arg(long)]
        language: String,
        #[arg(long, default_value = "")]
        court: String,
        #[arg(long)]
        decision_date: Option<NaiveDate>,
    },
    /// Analyze every document (or one jurisdiction) into a new run.
    Analyze {
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        jurisdiction: Option<String>,
    },
    /// Run the calibration harness from a JSON spec.
    Calibrate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Analyze one document n times and report field spreads.
    Repeat {
        #[arg(long)]
        doc: String,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Rank deviations and compose findings.
    Aggregate {
        #[arg(long, default_value = "biasLevel")]
        field: String,
        #[arg(long = "top-k", visible_alias = "topK", default_value_t = 1)]
        top_k: usize,
        #[arg(long)]
        run: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Open, step or complete the arbitration of a finding.
    Arbitrate {
        #[arg(long)]
        finding: String,
        #[arg(long, conflicts_with = "complete")]
        step: bool,
        #[arg(long)]
        complete: bool,
        #[arg(long)]
        max_turns: Option<usize>,
    },
    /// Write a run's records as CSV.
    Export {
        #[arg(long)]
        run: String,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        /// Static review dashboard assets, served under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0:#}")]
    Config(anyhow::Error),
    #[error("{0:#}")]
    Input(anyhow::Error),
    #[error("{0:#}")]
    Output(anyhow::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    fn code(&self) -> ErrorCode {
        match self {
            CliError::Config(_) => ErrorCode::ConfigError,
            CliError::Input(_) => ErrorCode::InvalidRequest,
            CliError::Output(_) => ErrorCode::StorageError,
            CliError::Pipeline(e) => e.code(),
        }
    }

    fn to_json(&self) -> Value {
        let mut body = json!({ "code": self.code().as_str(), "message": self.to_string() });
        if let CliError::Pipeline(e) = self {
            if let Some(details) = e.details() {
                body["details"] = details;
            }
        }
        body
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn parse<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    raw.parse()
        .with_context(|| format!("invalid {what} {raw:?}"))
        .map_err(CliError::Input)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)
        .context("writing output")
        .and_then(|_| writeln!(out).context("writing output"))
        .map_err(CliError::Output)
}

fn open(config: &CliConfig) -> Result<Arc<Pipeline>> {
    let provider = config
        .binding()
        .and_then(|b| b.build().map_err(anyhow::Error::from))
        .map_err(CliError::Config)?;
    let store = Store::open(&config.store_path).map_err(PipelineError::from)?;
    let pipeline_config = PipelineConfig {
        schema_version: config.schema_version.clone(),
        workers: config.workers,
        ..PipelineConfig::default()
    };
    Ok(Arc::new(Pipeline::new(Arc::new(store), provider, pipeline_config)?))
}

fn run(cli: Cli) -> Result<()> {
    let listen_flag = match &cli.command {
        Command::Serve { listen, .. } => listen.clone(),
        _ => None,
    };
    let config = CliConfig::from_process(&cli.global, listen_flag.as_deref()).map_err(CliError::Config)?;
    tracing::debug!(?config, "resolved configuration");
    let p = open(&config)?;
    match cli.command {
        Command::Ingest {
            paths,
            jurisdiction,
            language,
            court,
            decision_date,
        } => {
            let mut ids = Vec::with_capacity(paths.len());
            for path in paths {
                let body = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(CliError::Input)?;
                ids.push(p.ingest(NewDocument {
                    jurisdiction: jurisdiction.clone(),
                    language: language.clone(),
                    court: court.clone(),
                    decision_date,
                    source_ref: path.display().to_string(),
                    body,
                })?);
            }
            print(&json!({ "docIds": ids }))
        }
        Command::Analyze {
            profile,
            temperature,
            jurisdiction,
        } => {
            let mut req = RunRequest {
                profile_id: profile.map(ProfileId),
                temperature,
                ..RunRequest::default()
            };
            req.filter.jurisdiction = jurisdiction;
            print(&p.start_run(req)?)
        }
        Command::Calibrate { spec, profile } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))
                .map_err(CliError::Input)?;
            let mut req: CalibrationRequest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", spec.display()))
                .map_err(CliError::Input)?;
            if profile.is_some() {
                req.profile_id = profile.map(ProfileId);
            }
            print(&p.calibrate(req)?)
        }
        Command::Repeat {
            doc,
            n,
            temperature,
            profile,
        } => print(&p.repeatability(RepeatabilityRequest {
            doc_id: DocId(doc),
            profile_id: profile.map(ProfileId),
            n,
            temperature,
        })?),
        Command::Aggregate {
            field,
            top_k,
            run,
            threshold,
        } => {
            let run_id = run.map(|r| parse::<RunId>(&r, "run id")).transpose()?;
            print(&p.aggregate_findings(AggregateRequest {
                run_id,
                field,
                top_k,
                threshold,
                profile_id: None,
            })?)
        }
        Command::Arbitrate {
            finding,
            step,
            complete,
            max_turns,
        } => {
            let finding: FindingId = parse(&finding, "finding id")?;
            let open = p.open_case_for(finding);
            let case = match (open, step, complete) {
                (None, _, false) => p.open_arbitration(finding)?,
                (Some(case), true, _) => p.advance_case(case.case_id)?,
                (Some(case), false, false) => case,
                (existing, _, true) => {
                    let id = match existing {
                        Some(c) => c.case_id,
                        None => p.open_arbitration(finding)?.case_id,
                    };
                    p.complete_case(id, max_turns)?
                }
            };
            print(&case)
        }
        Command::Export { run, out } => {
            let csv = p.export_csv(parse(&run, "run id")?)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &csv)
                        .with_context(|| format!("writing {}", path.display()))
                        .map_err(CliError::Output)?;
                    print(&json!({ "runId": run, "out": path, "lines": csv.lines().count() }))
                }
                None => std::io::stdout()
                    .write_all(csv.as_bytes())
                    .context("writing output")
                    .map_err(CliError::Output),
            }
        }
        Command::Serve { ui_dir, .. } => {
            let handle = saap_core::api::start(p, config.listen, ui_dir)
                .with_context(|| format!("binding {}", config.listen))
                .map_err(CliError::Config)?;
            print(&json!({ "listening": handle.addr.to_string() }))?;
            handle.join().context("server").map_err(CliError::Output)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code().exit_code() as u8)
        }
    }
}
