use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chronopref_client::{Client, ClientError};
use chronopref_core::analysis::{build_cohort_report, figure_csvs, render_text, AnalysisConfig, CohortReport, SubjectData};
use chronopref_core::api::{CreateSession, ResponsePayload, TrialPayload};
use chronopref_core::export::{export_choice_csv, export_magnitude_csv, subjects_from_csv};
use chronopref_core::fitting::{fit_model, FitResult, ModelFamily};
use chronopref_core::magnitude::MagnitudeAnswer;
use chronopref_core::session_log::{
    load_dir, session_file_name, subjects_from_sessions, Session, SessionRecord, TaskKind, TaskOrder,
};
use chronopref_core::simulation::{
    default_cohort, run_choice_session, simulate_magnitude_session, subjective_time_cohort, AgentSpec, CohortSpec,
    PipelineConfig,
};
use chronopref_core::Error;
use chronopref_service::{AppState, ServiceConfig, DATA_DIR_ENV};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

const CHOICE_DATA: &str = "choice_data.csv";
const MAGNITUDE_DATA: &str = "magnitude_data.csv";

#[derive(Parser)]
#[command(name = "chronopref", version, about = "Intertemporal choice and time perception toolkit")]
struct Cli {
    /// Run fit and analyze on a running service instead of in-process.
    #[arg(long, global = true, env = "CHRONOPREF_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CohortKind {
    /// Mixed linear/power mappings and exponential/hyperbolic discounters.
    Default,
    /// Exponential discounting of power-compressed time.
    Subjective,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate both tasks for a cohort and write session files.
    Simulate {
        /// JSON list of agents; a generated cohort is used when absent.
        #[arg(long)]
        agents: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = CohortKind::Default)]
        cohort: CohortKind,
        #[arg(long, default_value_t = 24)]
        n: usize,
        /// Time exponent of the subjective cohort.
        #[arg(long, default_value_t = 0.7)]
        c: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model to every subject's series.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        /// linear, power, exponential, proportional_hyperbolic,
        /// general_hyperbolic or subjective_general_hyperbolic.
        #[arg(long)]
        model: String,
        /// Time exponent for the subjective model.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full analysis and write the report directory.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Analysis configuration as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a report written by `analyze`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = DATA_DIR_ENV, default_value = "data")]
        data: PathBuf,
    },
    /// Run agents through both tasks on a live server.
    Drive {
        #[arg(long)]
        agents: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        n: usize,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    NonConvergence(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::NonConvergence(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            Error::Io(_) => CliError::Other(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { code, .. } if code == "nonconvergence" => CliError::NonConvergence(e.to_string()),
            ClientError::Api { status, .. } if status.is_client_error() => CliError::Input(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Other(format!("{}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn load_agents(path: Option<&Path>, seed: u64, kind: CohortKind, n: usize, c: f64) -> Result<Vec<AgentSpec>, CliError> {
    match path {
        Some(p) => {
            let mut agents: Vec<AgentSpec> = read_json(p)?;
            if agents.is_empty() {
                return Err(CliError::Input(format!("{}: no agents", p.display())));
            }
            if seed != 0 {
                for (i, a) in agents.iter_mut().enumerate() {
                    a.seed = splitmix(seed ^ splitmix(i as u64));
                }
            }
            for a in &agents {
                a.validate().map_err(|e| CliError::Input(format!("agent {}: {e}", a.id)))?;
            }
            Ok(agents)
        }
        None => {
            let spec = CohortSpec { n, ..CohortSpec::default() };
            Ok(match kind {
                CohortKind::Default => default_cohort(&spec, seed)?,
                CohortKind::Subjective => subjective_time_cohort(&spec, c, seed)?,
            })
        }
    }
}

fn simulate(agents: &[AgentSpec], out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg = PipelineConfig::default();
    let mut capped = 0;
    for (i, agent) in agents.iter().enumerate() {
        let order = Some(TaskOrder::for_index(i as u64));
        let choice = run_choice_session(agent, cfg.staircase.clone())?;
        if !choice.is_complete() {
            capped += 1;
            log::warn!("agent {} stopped at the trial cap", agent.id);
        }
        let magnitude = simulate_magnitude_session(agent, agent.seed, cfg.magnitude.clone())?;
        SessionRecord::from_choice(&agent.id, choice, order).save(&out.join(session_file_name(&agent.id, TaskKind::Choice)))?;
        SessionRecord::from_magnitude(&agent.id, magnitude.session, order)
            .save(&out.join(session_file_name(&agent.id, TaskKind::Magnitude)))?;
    }
    write_json(&out.join("agents.json"), &agents)?;
    println!("wrote {} subjects to {} ({capped} capped)", agents.len(), out.display());
    Ok(())
}

fn load_records(input: &Path) -> Result<Vec<SessionRecord>, CliError> {
    if !input.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", input.display())));
    }
    let records = load_dir(input)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("no session files in {}", input.display())));
    }
    Ok(records)
}

/// Subjects from session files, or from the two exported data tables.
fn load_subjects(input: &Path) -> Result<Vec<SubjectData>, CliError> {
    let (choice, magnitude) = (input.join(CHOICE_DATA), input.join(MAGNITUDE_DATA));
    let has_sessions = input.is_dir() && !chronopref_core::session_log::session_files(input)?.is_empty();
    let (subjects, skipped) = if !has_sessions && choice.is_file() && magnitude.is_file() {
        let c = std::fs::File::open(&choice).map_err(io_err(&choice))?;
        let m = std::fs::File::open(&magnitude).map_err(io_err(&magnitude))?;
        subjects_from_csv(c, m)?
    } else {
        subjects_from_sessions(&load_records(input)?)
    };
    if !skipped.is_empty() {
        eprintln!("skipped {} subject(s) with incomplete data: {}", skipped.len(), skipped.join(", "));
    }
    if subjects.is_empty() {
        return Err(CliError::Input(format!("no complete subjects in {}", input.display())));
    }
    Ok(subjects)
}

#[derive(Serialize)]
struct SubjectFit {
    subject: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn fit(server: Option<&str>, input: &Path, model: &str, c: Option<f64>, out: &Path) -> Result<(), CliError> {
    let family = ModelFamily::from_name(model, c)
        .ok_or_else(|| CliError::Input(format!("unknown model {model:?} (the subjective model needs --c)")))?;
    let subjects = load_subjects(input)?;
    let client = server.map(Client::new);
    let cfg = AnalysisConfig::default().fit;
    let mut rows = vec![];
    let mut failed = 0;
    for s in subjects {
        let data = if family.is_discount() { s.dv } else { s.magnitude };
        let result = match &client {
            Some(cl) => cl.fit(family, data, cfg).await.map_err(CliError::from),
            None => fit_model(family, &data, &cfg).map_err(CliError::from),
        };
        match result {
            Ok(f) => rows.push(SubjectFit { subject: s.id, fit: Some(f), error: None }),
            Err(e) => {
                if matches!(e, CliError::NonConvergence(_)) {
                    failed += 1;
                } else {
                    return Err(e);
                }
                rows.push(SubjectFit { subject: s.id, fit: None, error: Some(e.to_string()) })
            }
        }
    }
    write_json(out, &rows)?;
    if failed > 0 {
        return Err(CliError::NonConvergence(format!("{failed} fit(s) did not converge")));
    }
    println!("wrote {} fits to {}", rows.len(), out.display());
    Ok(())
}

fn write_report(report: &CohortReport, out: &Path) -> Result<(), CliError> {
    write_json(&out.join("report.json"), report)?;
    let text_path = out.join("report.txt");
    std::fs::write(&text_path, render_text(report)).map_err(io_err(&text_path))?;
    for (name, body) in figure_csvs(report)? {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(())
}

fn export_tables(input: &Path, out: &Path) -> Result<(), CliError> {
    let records = load_dir(input)?;
    let mut choice = vec![];
    let mut magnitude = vec![];
    for r in &records {
        match &r.session {
            Session::Choice(s) => choice.push((r.header.subject_id.as_str(), s)),
            Session::Magnitude(s) => magnitude.push((r.header.subject_id.as_str(), s)),
        }
    }
    let cp = out.join(CHOICE_DATA);
    let summary = export_choice_csv(&choice, std::fs::File::create(&cp).map_err(io_err(&cp))?)?;
    let mp = out.join(MAGNITUDE_DATA);
    let msummary = export_magnitude_csv(&magnitude, std::fs::File::create(&mp).map_err(io_err(&mp))?)?;
    let skipped = summary.skipped.len() + msummary.skipped.len();
    if skipped > 0 {
        eprintln!("export skipped {skipped} incomplete session(s)");
    }
    Ok(())
}

async fn analyze(server: Option<&str>, input: &Path, out: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let cfg: AnalysisConfig = match config {
        Some(p) => read_json(p)?,
        None => AnalysisConfig::default(),
    };
    let subjects = load_subjects(input)?;
    let report = match server {
        Some(url) => Client::new(url).analyze(subjects, cfg).await?,
        None => build_cohort_report(&subjects, &cfg)?,
    };
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_report(&report, out)?;
    if !chronopref_core::session_log::session_files(input)?.is_empty() {
        export_tables(input, out)?;
    }
    print!("{}", render_text(&report));
    Ok(())
}

fn report(input: &Path, format: Format) -> Result<(), CliError> {
    let path = if input.is_dir() { input.join("report.json") } else { input.to_path_buf() };
    let report: CohortReport = read_json(&path)?;
    match format {
        Format::Text => print!("{}", render_text(&report)),
        Format::Csv => {
            for (name, body) in figure_csvs(&report)? {
                println!("# {name}");
                print!("{body}");
            }
        }
    }
    Ok(())
}

async fn serve(host: &str, port: u16, data: &Path) -> Result<(), CliError> {
    let state = AppState::open(&ServiceConfig::new(data))?;
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::Input(format!("cannot bind {host}:{port}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| CliError::Other(e.to_string()))?;
    eprintln!("serving on http://{addr} with data in {}", data.display());
    chronopref_service::serve(listener, std::sync::Arc::new(state), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| CliError::Other(e.to_string()))
}

async fn drive(url: &str, agents: &[AgentSpec]) -> Result<(), CliError> {
    let client = Client::new(url);
    client.health().await?;
    for agent in agents {
        let create = |task| CreateSession { task, seed: Some(agent.seed), config: None, subject_id: Some(agent.id.clone()) };
        let choice = client.create_session(&create(TaskKind::Choice)).await?;
        let mut rng = agent.choice_rng();
        loop {
            let next = client.next_trial(&choice.session_id).await?;
            let (Some(TrialPayload::Choice(trial)), Some(token)) = (next.trial, next.trial_token) else { break };
            let payload = ResponsePayload::Choice { choice: agent.choose(&trial, &mut rng), response_time: None };
            client.respond(&choice.session_id, &token, payload).await?;
        }
        let magnitude = client.create_session(&create(TaskKind::Magnitude)).await?;
        let mut rng = agent.magnitude_rng(agent.seed);
        loop {
            let next = client.next_trial(&magnitude.session_id).await?;
            let (Some(TrialPayload::Magnitude(trial)), Some(token)) = (next.trial, next.trial_token) else { break };
            let (answer, _) = agent.respond(&trial, 685, &mut rng);
            let line_px = match answer {
                MagnitudeAnswer::Line(px) => Some(px as i64),
                MagnitudeAnswer::Timeout => None,
            };
            client.respond(&magnitude.session_id, &token, ResponsePayload::Magnitude { line_px, latency: None }).await?;
        }
        println!("{}: done", agent.id);
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let server = cli.server.as_deref();
    match cli.command {
        Command::Simulate { agents, seed, cohort, n, c, out } => {
            simulate(&load_agents(agents.as_deref(), seed, cohort, n, c)?, &out)
        }
        Command::Fit { input, model, c, out } => fit(server, &input, &model, c, &out).await,
        Command::Analyze { input, out, config } => analyze(server, &input, &out, config.as_deref()).await,
        Command::Report { input, format } => report(&input, format),
        Command::Serve { port, host, data } => serve(&host, port, &data).await,
        Command::Drive { agents, seed, n } => {
            let url = server.ok_or_else(|| CliError::Input("drive needs --server".into()))?;
            drive(url, &load_agents(agents.as_deref(), seed, CohortKind::Default, n, 1.0)?).await
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
