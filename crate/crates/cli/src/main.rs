//! `workbench` command line: generation, terminal interviews, merging,
//! annotation, agreement statistics and the HTTP server.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use workbench::annotation::{AnnotationRecord, UnitMode};
use workbench::api::{self, SessionView};
use workbench::config::{ConfigFile, Overrides, Settings};
use workbench::dialogue::{SessionConfig, SessionState};
use workbench::gateway::{load_script, ChatProvider, HttpProvider, Routed};
use workbench::generation::PromptTemplates;
use workbench::service::{NoProvider, TaxRef, Workbench};
use workbench::store::{CrashPoint, Store};
use workbench::taxonomy::{FieldValue, TaxonomyDiff};
use workbench::Clock;

/// Fault injection for crash-safety tests: `after-partial-write` or
/// `before-publish` aborts the process at that point of a version write.
const ENV_CRASH_AT: &str = "WORKBENCH_CRASH_AT";

#[derive(Parser)]
#[command(name = "workbench", version, about = "Build, validate, merge and test writing-revision taxonomies")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory (overrides WORKBENCH_STORE and the config file).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Answer every model request from this script file; also fixes the clock.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Stamp records with this RFC 3339 instant instead of the current time.
    #[arg(long, global = true)]
    now: Option<chrono::DateTime<chrono::Utc>>,
    /// Chat-completions endpoint (overrides WORKBENCH_LLM_BASE_URL).
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Default model name (overrides WORKBENCH_LLM_MODEL).
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Table)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a new taxonomy (stored as version 1) and print its id.
    Generate {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        task: String,
        /// Minimum number of intentions (default 10).
        #[arg(long)]
        min_intentions: Option<usize>,
        /// Store under this id instead of one derived from domain, task and time.
        #[arg(long)]
        id: Option<String>,
    },
    /// Validate a taxonomy in a terminal dialogue; expert replies are read line by line.
    Interview(InterviewArgs),
    /// Merge taxonomies (`ID` or `ID@vN`) into a new taxonomy.
    Merge {
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: Option<String>,
        /// Also ask the model to merge near-duplicate siblings.
        #[arg(long)]
        semantic: bool,
    },
    /// Node-level difference between two versions.
    Diff {
        id: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Print a stored taxonomy (`ID` or `ID@vN`).
    Show { taxonomy: String },
    /// List stored taxonomies and their versions.
    List,
    /// Store writing templates and inspect their edits.
    #[command(subcommand)]
    Template(TemplateCommand),
    /// Store annotations of one template, from a file or from the model.
    Annotate(AnnotateArgs),
    /// Inter-coder reliability for one template.
    Icr {
        #[arg(long)]
        template: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Args)]
struct InterviewArgs {
    #[arg(long, required_unless_present = "session")]
    taxonomy: Option<String>,
    #[arg(long, default_value = "expert")]
    expert: String,
    /// Resume an open session instead of starting one.
    #[arg(long, conflicts_with = "taxonomy")]
    session: Option<String>,
    /// Read replies from this file instead of standard input.
    #[arg(long)]
    replies: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TemplateCommand {
    /// Store an original/revised text pair and print the template id.
    Add {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        revised: PathBuf,
    },
    /// Show the edits of a stored template and its annotation units.
    Show {
        id: String,
        #[arg(long, value_enum, default_value_t = Units::Edit)]
        units: Units,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Edit,
    Sentence,
}

impl From<Units> for UnitMode {
    fn from(u: Units) -> Self {
        match u {
            Units::Edit => UnitMode::Edit,
            Units::Sentence => UnitMode::Sentence,
        }
    }
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    template: String,
    #[arg(long)]
    taxonomy: String,
    #[arg(long)]
    coder: String,
    /// Let the model annotate as `--coder`.
    #[arg(long, conflicts_with = "file")]
    llm: bool,
    /// JSON array of annotation records, all by `--coder`.
    #[arg(long, required_unless_present = "llm")]
    file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Units::Edit)]
    units: Units,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn taxref(raw: &str) -> Result<TaxRef> {
    raw.parse::<TaxRef>().map_err(anyhow::Error::msg)
}

fn version_arg(raw: &str) -> Result<u32> {
    raw.strip_prefix('v').unwrap_or(raw).parse().with_context(|| format!("bad version {raw:?}"))
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let min_intentions = match &cli.command {
        Command::Generate { min_intentions, .. } => *min_intentions,
        _ => None,
    };
    let bind = match &cli.command {
        Command::Serve { bind } => bind.clone(),
        _ => None,
    };
    let settings = Settings::resolve(
        file,
        |k| std::env::var(k).ok(),
        Overrides {
            store: cli.store.clone(),
            bind,
            base_url: cli.base_url.clone(),
            model: cli.model.clone(),
            min_intentions,
        },
    );
    let wb = Arc::new(workbench(&settings, cli.script.as_deref(), cli.now)?);
    let out = cli.output;
    let mut stdout = std::io::stdout().lock();

    match cli.command {
        Command::Generate { domain, task, id, .. } => {
            let tax = wb.generate(&domain, &task, None, id.as_deref())?;
            let (i, d, e) = tax.level_counts();
            if out == Output::Json {
                print_json(&mut stdout, &serde_json::json!({
                    "taxonomy_id": tax.taxonomy_id,
                    "version": tax.version,
                    "intentions": i,
                    "descriptions": d,
                    "examples": e,
                }))?;
            } else {
                eprintln!("generated {i} intentions, {d} descriptions, {e} examples");
                writeln!(stdout, "{}", tax.taxonomy_id)?;
            }
        }
        Command::Interview(args) => interview(&wb, args, out, &mut stdout)?,
        Command::Merge { inputs, out: id, semantic } => {
            let refs = inputs.iter().map(|r| taxref(r)).collect::<Result<Vec<_>>>()?;
            let (tax, report) = wb.merge(&refs, id, semantic)?;
            if out == Output::Json {
                print_json(&mut stdout, &serde_json::json!({
                    "taxonomy_id": tax.taxonomy_id,
                    "version": tax.version,
                    "report": report,
                }))?;
            } else {
                write!(stdout, "{}", report.render_table())?;
                writeln!(stdout, "merged into {} v{}", tax.taxonomy_id, tax.version)?;
            }
        }
        Command::Diff { id, from, to } => {
            let diff = wb.diff(&id, version_arg(&from)?, version_arg(&to)?)?;
            if out == Output::Json {
                print_json(&mut stdout, &diff)?;
            } else {
                write!(stdout, "{}", render_diff(&diff))?;
            }
        }
        Command::Show { taxonomy } => {
            let r = taxref(&taxonomy)?;
            let version = match r.version {
                Some(v) => v,
                None => wb.store.latest_version(&r.id)?.with_context(|| format!("taxonomy {} not found", r.id))?,
            };
            stdout.write_all(&wb.store.get_taxonomy_bytes(&r.id, version)?)?;
        }
        Command::List => {
            let list = wb.store.list_taxonomies()?;
            if out == Output::Json {
                print_json(&mut stdout, &list)?;
            } else {
                for t in list {
                    let versions: Vec<String> = t.versions.iter().map(|v| format!("v{v}")).collect();
                    writeln!(stdout, "{}\t{}\t{}\t{}", t.taxonomy_id, t.domain, t.task, versions.join(","))?;
                }
            }
        }
        Command::Template(TemplateCommand::Add { original, revised }) => {
            let tpl = wb.add_template(&read_text(&original)?, &read_text(&revised)?)?;
            if out == Output::Json {
                print_json(&mut stdout, &serde_json::json!({ "template_id": tpl.template_id }))?;
            } else {
                writeln!(stdout, "{}", tpl.template_id)?;
            }
        }
        Command::Template(TemplateCommand::Show { id, units }) => {
            let edits = wb.template_edits(&id, units.into())?;
            if out == Output::Json {
                print_json(&mut stdout, &edits)?;
            } else {
                writeln!(stdout, "{}", edits.markup)?;
                for u in &edits.units {
                    writeln!(stdout, "[{}] {}", u.index, u.text)?;
                }
            }
        }
        Command::Annotate(args) => {
            let r = taxref(&args.taxonomy)?;
            let records = if args.llm {
                wb.llm_annotate(&args.template, &r, &args.coder, args.units.into())?
            } else {
                let path = args.file.expect("clap enforces --file without --llm");
                let records: Vec<AnnotationRecord> =
                    serde_json::from_str(&read_text(&path)?).with_context(|| format!("invalid annotation file {}", path.display()))?;
                if let Some(r) = records.iter().find(|r| r.coder_id != args.coder || r.template_id != args.template) {
                    bail!(
                        "record for unit {} belongs to coder {:?} on template {:?}, expected {:?} on {:?}",
                        r.unit_index,
                        r.coder_id,
                        r.template_id,
                        args.coder,
                        args.template
                    );
                }
                wb.add_annotations(&r, &records)?
            };
            if out == Output::Json {
                print_json(&mut stdout, &records)?;
            } else {
                for r in &records {
                    writeln!(stdout, "[{}] {}", r.unit_index, r.label)?;
                }
                writeln!(stdout, "stored {} annotations by {}", records.len(), args.coder)?;
            }
        }
        Command::Icr { template } => {
            let report = wb.icr(&template)?;
            if out == Output::Json {
                print_json(&mut stdout, &report)?;
            } else {
                write!(stdout, "{}", report.render_table())?;
            }
        }
        Command::Serve { .. } => {
            drop(stdout);
            serve(wb, &settings)?;
        }
    }
    Ok(())
}

fn workbench(settings: &Settings, script: Option<&Path>, now: Option<chrono::DateTime<chrono::Utc>>) -> Result<Workbench> {
    let mut store = Store::open(&settings.store)?;
    if let Ok(point) = std::env::var(ENV_CRASH_AT) {
        let target = match point.as_str() {
            "after-partial-write" => CrashPoint::AfterPartialWrite,
            "before-publish" => CrashPoint::BeforePublish,
            other => bail!("{ENV_CRASH_AT}: unknown crash point {other:?}"),
        };
        store = store.with_crash_hook(move |p| {
            if p == target {
                std::process::abort();
            }
        });
    }
    let (provider, clock): (Arc<dyn ChatProvider>, Clock) = match (script, &settings.base_url) {
        (Some(path), _) => (Arc::new(load_script(path)?), Clock::fixed_default()),
        (None, Some(url)) => {
            let http = HttpProvider::new(url.clone(), settings.api_key.clone(), settings.retry.clone())?;
            (Arc::new(Routed::new(http, settings.routing.clone())), Clock::System)
        }
        (None, None) => (Arc::new(NoProvider), Clock::System),
    };
    let clock = now.map_or(clock, Clock::Fixed);
    let mut wb = Workbench::new(Arc::new(store), provider, clock);
    wb.min_intentions = settings.min_intentions;
    wb.session_config = SessionConfig {
        interviewer_preamble: settings.interviewer_preamble,
        ..SessionConfig::default()
    };
    if let Some(dir) = &settings.template_dir {
        wb.templates = PromptTemplates::load_dir(dir).with_context(|| format!("cannot load prompt templates from {}", dir.display()))?;
    }
    Ok(wb)
}

fn interview(wb: &Workbench, args: InterviewArgs, out: Output, stdout: &mut impl Write) -> Result<()> {
    let mut session = match (&args.session, &args.taxonomy) {
        (Some(id), _) => wb.load_session(id)?,
        (None, Some(t)) => wb.start_session(&taxref(t)?, &args.expert)?,
        (None, None) => unreachable!("clap requires --taxonomy or --session"),
    };
    let input: Box<dyn BufRead> = match &args.replies {
        Some(path) => Box::new(std::io::BufReader::new(
            std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
        )),
        None => Box::new(std::io::stdin().lock()),
    };
    let table = out == Output::Table;
    if table {
        writeln!(
            stdout,
            "session {} on {} v{} (expert {})",
            session.session_id,
            session.taxonomy_id(),
            session.current_version(),
            session.expert_id
        )?;
        writeln!(stdout, "reply :done to finalize early\n")?;
    }
    let mut lines = input.lines();
    let mut done = false;
    while session.state() == SessionState::AwaitingExpert {
        if table {
            let aspect = session.current_aspect().map(|a| a.name()).unwrap_or("");
            writeln!(stdout, "[{aspect}] Interviewer: {}", session.next_question()?)?;
        }
        stdout.flush()?;
        let Some(line) = lines.next().transpose()? else {
            break;
        };
        let reply = line.trim();
        if table {
            writeln!(stdout, "Expert: {reply}")?;
        }
        if reply == ":done" {
            done = true;
            break;
        }
        match wb.reply(&session.session_id, reply) {
            Ok((outcome, next)) => {
                session = next;
                if table {
                    let what = match &outcome.revised {
                        Some(t) => format!("revised to v{}", t.version),
                        None => "no change".to_string(),
                    };
                    writeln!(stdout, "Creator ({what}): {}\n", outcome.change_rationale)?;
                }
            }
            Err(e @ workbench::service::WorkbenchError::Dialogue(_)) => {
                writeln!(stdout, "Creator: could not use that reply ({e}); please try again.\n")?;
                session = wb.load_session(&session.session_id)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if session.state() == SessionState::AwaitingExpert && !done {
        if table {
            writeln!(stdout, "input ended; session {} left open", session.session_id)?;
        } else {
            print_json(stdout, &SessionView::from(&session))?;
        }
        return Ok(());
    }
    let (tax, session) = wb.finalize(&session.session_id, true)?;
    if table {
        let chain: Vec<String> = std::iter::once(session.start_version)
            .chain(session.version_chain())
            .map(|v| v.to_string())
            .collect();
        writeln!(stdout, "finalized {} at v{} (versions {})", tax.taxonomy_id, tax.version, chain.join(" -> "))?;
    } else {
        print_json(stdout, &SessionView::from(&session))?;
    }
    Ok(())
}

fn serve(wb: Arc<Workbench>, settings: &Settings) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    let token = settings.api_token.clone();
    let bind = settings.bind.clone();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("cannot bind {bind}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        api::serve(listener, api::router(wb, token)).await?;
        Ok(())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn print_json(out: &mut impl Write, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn render_diff(diff: &TaxonomyDiff) -> String {
    let mut out = format!("{} v{} -> v{}\n", diff.taxonomy_id, diff.from_version, diff.to_version);
    if diff.is_empty() {
        out.push_str("no changes\n");
    }
    for a in &diff.added {
        out.push_str(&format!("+ {} ({})\n", a.path.join(" / "), a.id));
    }
    for r in &diff.removed {
        out.push_str(&format!("- {} ({})\n", r.path.join(" / "), r.id));
    }
    for m in &diff.modified {
        let node = m.node.as_ref().map(|n| n.to_string()).unwrap_or_else(|| "roots".into());
        out.push_str(&format!("~ {node} {:?}: {} => {}\n", m.field, short(&m.before), short(&m.after)));
    }
    out
}

fn short(v: &FieldValue) -> String {
    match v {
        FieldValue::Text(t) => format!("{t:?}"),
        FieldValue::Example(e) => format!("{:?}", e.to_string()),
        FieldValue::Provenance(p) => format!("{:?}", p.kind),
        FieldValue::Ids(ids) => format!("[{}]", ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")),
    }
}
