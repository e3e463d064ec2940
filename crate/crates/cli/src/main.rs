use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use twin_core::analyzer::{analyze_dir, COUNTS_FILE, DEFAULT_PHRASES};
use twin_core::dialogue::DialogueError;
use twin_core::engine::{init_world, replay};
use twin_core::narrator::{
    with_retry, LiveConfig, LiveNarrator, ScriptedNarrator, ScriptedRuleSet,
};
use twin_core::persistence::{read_audit, LOG_FILE};
use twin_core::run::{ClockMode, RunDir};
use twin_core::time::display_date;
use twin_core::{InitSpec, Narrator};
use twin_service::Service;

#[derive(Parser)]
#[command(
    name = "twin",
    version,
    about = "Run and inspect a narrative world simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a fresh world and write its snapshot.
    Init {
        /// World description (JSON). Defaults to the built-in desert world.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Advance the simulation and save it.
    Run {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        ticks: u64,
        /// Real-time pause between ticks. Defaults to the world's setting.
        #[arg(long)]
        pace_ms: Option<u64>,
        #[command(flatten)]
        narrator: NarratorArgs,
    },
    /// Expose the simulation over HTTP until interrupted.
    Serve {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[command(flatten)]
        narrator: NarratorArgs,
    },
    /// Talk to an agent: one message per line, end of input concludes.
    Dialogue {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        agent: String,
        #[command(flatten)]
        narrator: NarratorArgs,
    },
    /// Count phrases and list created locations and mutations.
    Analyze {
        #[arg(long)]
        dir: PathBuf,
        /// Phrase to count; repeatable.
        #[arg(long = "phrase")]
        phrases: Vec<String>,
        /// Where to write the counts. Defaults to counts.json in the run directory.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Re-execute the prompt audit of a run and compare with its log.
    Replay {
        #[arg(long)]
        dir: PathBuf,
        /// Regenerate replies from this rule file and check them against
        /// the recording.
        #[arg(long)]
        script: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NarratorKind {
    Scripted,
    Live,
}

#[derive(Args)]
struct NarratorArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    narrator: NarratorKind,
    /// Rule file for the scripted narrator. Defaults to the built-in rules.
    #[arg(long)]
    script: Option<PathBuf>,
}

fn env_u64(name: &str, default: u64) -> Result<u64> {
    match std::env::var(name) {
        Ok(raw) => raw
            .trim()
            .parse()
            .with_context(|| format!("{name} must be a number")),
        Err(_) => Ok(default),
    }
}

impl NarratorArgs {
    /// Live runs stamp log lines with the system clock; scripted runs use a
    /// stepping clock so their output is reproducible.
    fn build(&self) -> Result<(Box<dyn Narrator>, ClockMode)> {
        match self.narrator {
            NarratorKind::Scripted => Ok((
                Box::new(scripted(self.script.as_deref())?),
                ClockMode::Stepping,
            )),
            NarratorKind::Live => {
                if self.script.is_some() {
                    bail!("--script only applies to --narrator scripted");
                }
                let config = LiveConfig::from_env().map_err(|e| anyhow!(e))?;
                let attempts = env_u64("NARRATOR_MAX_ATTEMPTS", 4)?.clamp(1, 20) as u32;
                let backoff = Duration::from_millis(env_u64("NARRATOR_BACKOFF_MS", 250)?);
                let live = LiveNarrator::new(config).context("narrator client")?;
                Ok((
                    Box::new(with_retry(live, attempts, backoff)),
                    ClockMode::System,
                ))
            }
        }
    }
}

fn scripted(path: Option<&Path>) -> Result<ScriptedNarrator> {
    Ok(match path {
        Some(path) => ScriptedNarrator::new(
            ScriptedRuleSet::load(path).with_context(|| format!("loading {}", path.display()))?,
        ),
        None => ScriptedNarrator::builtin(),
    })
}

fn init(spec: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(path) => InitSpec::load(path)?,
        None => InitSpec::gracia(),
    };
    let world = init_world(&spec, seed)?;
    RunDir::new(out).create(&world)?;
    println!(
        "initialised {} with {} agent(s) and {} location(s) at {}",
        world.name,
        world.agents.len(),
        world.locations.len(),
        out.display()
    );
    Ok(())
}

fn run(snapshot: &Path, ticks: u64, pace_ms: Option<u64>, narrator: &NarratorArgs) -> Result<()> {
    let (narrator, clock) = narrator.build()?;
    let dir = RunDir::new(snapshot);
    let mut engine = dir.open_engine(narrator, clock)?;
    let pace = Duration::from_millis(pace_ms.unwrap_or(engine.world().config.real_time_pacing_ms));
    let mut done = 0;
    let mut shifts = 0;
    let mut failure = None;
    while done < ticks {
        if done > 0 && !pace.is_zero() {
            std::thread::sleep(pace);
        }
        match engine.step() {
            Ok(report) => {
                done += 1;
                shifts += usize::from(report.shift.is_some());
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    dir.save(&engine)?;
    println!(
        "ran {done} tick(s), {shifts} narrative shift(s); it is {}",
        display_date(engine.world().now())
    );
    match failure {
        Some(e) => Err(anyhow!(e).context(format!("tick {} failed; progress saved", done + 1))),
        None => Ok(()),
    }
}

fn serve(snapshot: &Path, bind: SocketAddr, narrator: &NarratorArgs) -> Result<()> {
    let (narrator, clock) = narrator.build()?;
    let dir = RunDir::new(snapshot);
    let engine = dir.open_engine(narrator, clock)?;
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = twin_service::bind(bind).await?;
        eprintln!(
            "serving {} on http://{}",
            snapshot.display(),
            listener.local_addr()?
        );
        let service = Service::start(engine, Some(dir));
        let signal = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        twin_service::serve(service, listener, signal).await?;
        Ok(())
    })
}

fn dialogue(snapshot: &Path, agent: &str, narrator: &NarratorArgs) -> Result<()> {
    let (narrator, clock) = narrator.build()?;
    let dir = RunDir::new(snapshot);
    if !dir.load()?.agents.contains_key(agent) {
        bail!("unknown agent {agent:?}");
    }
    let mut engine = dir.open_engine(narrator, clock)?;
    let session = match engine.open_session(agent) {
        Ok(session) => session,
        Err(DialogueError::UnknownAgent(name)) => bail!("unknown agent {name:?}"),
        Err(e) => return Err(e.into()),
    };
    eprintln!("talking with {agent}; end input to conclude the dialogue");
    let mut stdout = io::stdout().lock();
    for line in io::stdin().lock().lines() {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        match engine.post_message(&session.id, &line) {
            Ok(reply) => writeln!(stdout, "{agent}: {reply}")?,
            Err(e @ (DialogueError::Unavailable(_) | DialogueError::Pending(_))) => {
                eprintln!("{e}; send the same line again to retry")
            }
            Err(e) => return Err(e.into()),
        }
        stdout.flush()?;
    }
    let talked = engine
        .sessions()
        .get(&session.id)
        .is_some_and(|s| !s.transcript.is_empty());
    if talked {
        let ids = engine.conclude_session(&session.id)?;
        let memory = engine.world().agents[agent]
            .memory
            .get(ids[0])
            .map(|r| r.text.clone());
        writeln!(stdout, "{agent} concluded: {}", memory.unwrap_or_default())?;
    }
    dir.save(&engine)?;
    Ok(())
}

fn analyze(dir: &Path, phrases: Vec<String>, counts: Option<PathBuf>) -> Result<()> {
    let phrases = if phrases.is_empty() {
        DEFAULT_PHRASES.iter().map(|p| p.to_string()).collect()
    } else {
        phrases
    };
    let report = analyze_dir(dir, &phrases)?;
    print!("{}", report.render_text());
    let counts = counts.unwrap_or_else(|| dir.join(COUNTS_FILE));
    std::fs::write(&counts, report.counts_json())
        .with_context(|| format!("writing {}", counts.display()))?;
    Ok(())
}

fn replay_dir(dir: &Path, script: Option<&Path>) -> Result<()> {
    let records = read_audit(&dir.join(twin_core::persistence::AUDIT_FILE))?;
    let backend: Option<Arc<dyn Narrator>> = match script {
        Some(path) => Some(Arc::new(scripted(Some(path))?)),
        None => None,
    };
    let replayed = replay(records, backend)?;
    let log_path = dir.join(LOG_FILE);
    let recorded = std::fs::read_to_string(&log_path)
        .with_context(|| format!("reading {}", log_path.display()))?;
    if replayed == recorded {
        println!(
            "replay reproduces {} ({} lines)",
            log_path.display(),
            recorded.lines().count()
        );
        return Ok(());
    }
    let line = recorded
        .lines()
        .zip(replayed.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| recorded.lines().count().min(replayed.lines().count()));
    bail!(
        "replay differs from {} at line {}",
        log_path.display(),
        line + 1
    )
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { spec, seed, out } => init(spec.as_deref(), seed, &out),
        Command::Run {
            snapshot,
            ticks,
            pace_ms,
            narrator,
        } => run(&snapshot, ticks, pace_ms, &narrator),
        Command::Serve {
            snapshot,
            bind,
            narrator,
        } => serve(&snapshot, bind, &narrator),
        Command::Dialogue {
            snapshot,
            agent,
            narrator,
        } => dialogue(&snapshot, &agent, &narrator),
        Command::Analyze {
            dir,
            phrases,
            counts,
        } => analyze(&dir, phrases, counts),
        Command::Replay { dir, script } => replay_dir(&dir, script.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
