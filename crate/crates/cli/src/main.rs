mod error;
mod report;
mod script;

use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use ntl_core::data::{generate_split_corpus, write_csv, SplitSpec, SynthConfig};
use ntl_core::session::{read_events, Clock, EventBody, Journal, RefinementAction, Session, SessionConfig};
use ntl_service::dataset::load_csv_with_split;
use ntl_service::ServiceConfig;

use error::CliError;
use script::{CustomerRef, Step};

/// Human-in-the-loop NTL refinement workbench.
#[derive(Debug, Parser)]
#[command(name = "ntlwb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic customer corpus (CSV) and its manifest.
    Gen(GenArgs),
    /// Replay an action script: baseline, then one iteration per action.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Summarise a journal as text and tab-separated tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 20_000)]
    customers: usize,
    #[arg(long, default_value_t = 0.034)]
    ntl_rate: f64,
    /// Plant one extreme label in the training split.
    #[arg(long)]
    outlier: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the stratified 80/10/10 split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Output CSV; the manifest goes next to it as `<stem>.manifest.txt`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Corpus CSV. Files without a split column get the default split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Session configuration as JSON (training parameters, k, advisor).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Constant journal timestamps, for byte-identical reruns.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "NTL_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "NTL_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "NTL_DATA_DIR", default_value = "ntl-data")]
    data_dir: PathBuf,
    /// Allowed browser origin; any origin when unset.
    #[arg(long, env = "NTL_CORS_ORIGIN")]
    cors_origin: Option<String>,
    #[arg(long, env = "NTL_TRAINING_TIMEOUT_SECS", default_value_t = 600)]
    training_timeout_secs: u64,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    journal: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// The corpus the journal was recorded on; enables the per-iteration
    /// Shapley exports.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ntlwb: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn manifest_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into());
    csv.with_file_name(format!("{stem}.manifest.txt"))
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let cfg = SynthConfig { n_customers: a.customers, ntl_rate: a.ntl_rate, outlier: a.outlier, seed: a.seed, ..Default::default() };
    let corpus = generate_split_corpus(&cfg, &SplitSpec { seed: a.split_seed, ..Default::default() })?;
    write_csv(&corpus.table, &a.output)?;
    let manifest = manifest_path(&a.output);
    fs::write(&manifest, corpus.manifest.to_text()).map_err(|e| CliError::output(&manifest, e))?;
    let m = &corpus.manifest;
    println!(
        "wrote {} ({} customers, {} NTL, max label {} kWh{}) and {}",
        a.output.display(),
        corpus.table.n_rows(),
        m.n_ntl,
        m.max_label,
        m.outlier_customer.as_ref().map(|c| format!(", outlier {c}")).unwrap_or_default(),
        manifest.display()
    );
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig, CliError> {
    let Some(path) = path else { return Ok(SessionConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e))
}

fn resolve(step: &Step, session: &Session) -> RefinementAction {
    match step {
        Step::CapLabel { customer, kwh } => {
            let customer_id = match customer {
                CustomerRef::Id(id) => id.clone(),
                CustomerRef::MaxLabel => {
                    let ids = session.dataset().customer_ids();
                    ids.iter()
                        .max_by(|a, b| {
                            let la = session.effective_label(a).unwrap_or(0.0);
                            let lb = session.effective_label(b).unwrap_or(0.0);
                            // First row wins ties.
                            la.total_cmp(&lb).then(b.cmp(a))
                        })
                        .cloned()
                        .unwrap_or_default()
                }
            };
            RefinementAction::CapLabel { customer_id, kwh: *kwh }
        }
        Step::DropFeature(f) => RefinementAction::DropFeature { feature: f.clone() },
        Step::RestoreFeature(f) => RefinementAction::RestoreFeature { feature: f.clone() },
        Step::Undo => RefinementAction::Undo,
    }
}

fn print_record(r: &ntl_core::session::IterationRecord) {
    let ndcg = r.metrics.ndcg_validation.map_or("-".into(), |v| format!("{v:.4}"));
    println!(
        "iteration {}: {:?}, validation NDCG {ndcg}, energy@{} {:.1} kWh, max |phi| {:.1} kWh",
        r.index, r.guard.status, r.metrics.k, r.metrics.energy_at_k_test, r.global_summary.max_abs_phi
    );
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.script).map_err(|e| CliError::input(&a.script, e))?;
    let steps = script::parse(&text).map_err(|e| CliError::User(format!("{}: {e}", a.script.display())))?;
    let config = load_config(a.config.as_deref())?;
    config.validate()?;
    let table = Arc::new(load_csv_with_split(&a.data, None)?);
    fs::create_dir_all(&a.out).map_err(|e| CliError::output(&a.out, e))?;
    let clock = if a.deterministic { Clock::Fixed } else { Clock::Wall };
    let journal_path = a.out.join("journal.jsonl");
    let journal = Journal::create(&journal_path, clock).map_err(|e| CliError::output(&journal_path, e))?;
    let mut session = Session::new(table, config)?.with_workdir(&a.out)?.with_journal(journal)?;

    print_record(session.run_iteration()?);
    for line in &steps {
        let action = resolve(&line.step, &session);
        session.apply(action.clone()).map_err(|e| match CliError::from(e) {
            CliError::User(m) => CliError::User(format!("{}: script line {}: {action}: {m}", a.script.display(), line.line)),
            other => other,
        })?;
        print_record(session.run_iteration()?);
    }
    let provenance = session.state().provenance.to_string();
    report::write_tables(&a.out, &journal_path.display().to_string(), &provenance, session.iterations())?;
    report::write_shap_exports(&session, &a.out)?;
    println!("wrote {} and reports to {}", journal_path.display(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let events = read_events(&a.journal).map_err(|e| CliError::input(&a.journal, e))?;
    let provenance = match events.first().map(|(_, e)| &e.event) {
        Some(EventBody::SessionStarted { provenance, .. }) => provenance.to_string(),
        _ => return Err(CliError::input(&a.journal, "journal does not start with session_started")),
    };
    let source = a.journal.display().to_string();
    match &a.data {
        Some(data) => {
            let table = Arc::new(load_csv_with_split(data, None)?);
            let mut session = Session::replay(&events, table, SessionConfig::default())?;
            if let Some(dir) = a.journal.parent().filter(|d| d.join("models").is_dir()) {
                session = session.with_workdir(dir)?;
            }
            report::write_tables(&a.out, &source, &provenance, session.iterations())?;
            report::write_shap_exports(&session, &a.out)?;
        }
        None => {
            let records: Vec<_> = events
                .into_iter()
                .filter_map(|(_, e)| match e.event {
                    EventBody::IterationCompleted { record } => Some(*record),
                    _ => None,
                })
                .collect();
            report::write_tables(&a.out, &source, &provenance, &records)?;
        }
    }
    println!("wrote report to {}", a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let mut cfg = ServiceConfig::new(&a.data_dir);
    cfg.training_timeout = Duration::from_secs(a.training_timeout_secs);
    cfg.cors_origin = a.cors_origin;
    cfg.clock = if a.deterministic { Clock::Fixed } else { Clock::Wall };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime
        .block_on(ntl_service::serve(SocketAddr::new(a.host, a.port), cfg))
        .map_err(|e| CliError::User(format!("cannot serve on {}:{}: {e}", a.host, a.port)))
}
