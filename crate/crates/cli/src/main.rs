use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use sodsim::gfms::KnowledgeStore;
use sodsim::kernel::TelemetryLog;
use sodsim::membership::ImportanceMatrix;
use sodsim::scenario::{parse_scenario, ScenarioError, ScenarioSpec};
use sodsim::sim::{replay, run, ReplayError, ReplayVerdict, RunError, RunOutput};

const EXIT_PARSE: u8 = 2;
const EXIT_INTERNAL: u8 = 70;
const EXIT_DIVERGED: u8 = 1;

#[derive(Parser)]
#[command(name = "sodsim", version, about = "Deterministic swarm-of-drones simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Override the scenario's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory; defaults to <SODSIM_OUT_DIR>/<scenario name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "SODSIM_OUT_DIR", default_value = "out", hide_env_values = true)]
        out_root: PathBuf,
        /// Knowledge store carried into the brief and consolidated afterwards.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Re-execute a scenario and compare against a telemetry log.
    Replay {
        log: PathBuf,
        scenario: PathBuf,
        /// Knowledge snapshot the run started from (`knowledge_in.txt`).
        #[arg(long)]
        knowledge: Option<PathBuf>,
        /// Seed to re-execute with; defaults to the seed in the log header.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the challenge importance matrix as CSV.
    DumpMatrix,
    /// Run every *.toml scenario in a directory in parallel.
    Batch {
        dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, env = "SODSIM_OUT_DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Internal(RunError),
}

impl CliError {
    fn exit(&self) -> ExitCode {
        match self {
            CliError::Input(m) => {
                eprintln!("error: {m}");
                ExitCode::from(EXIT_PARSE)
            }
            CliError::Internal(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INTERNAL)
            }
        }
    }
}

fn load(path: &Path) -> Result<ScenarioSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        ScenarioError::Parse { line, column, message } => {
            CliError::Input(format!("{}:{line}:{column}: {message}", path.display()))
        }
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

fn load_store(path: Option<&Path>) -> Result<KnowledgeStore, CliError> {
    match path {
        Some(p) => KnowledgeStore::load(p).map_err(|e| CliError::Input(e.to_string())),
        None => Ok(KnowledgeStore::new()),
    }
}

/// Run and write artifacts. A non-empty input store is saved alongside as
/// `knowledge_in.txt` so the run can be replayed.
fn execute(spec: &ScenarioSpec, store: &KnowledgeStore, out: &Path) -> Result<RunOutput, CliError> {
    let output = run(spec, &store.snapshot()).map_err(CliError::Internal)?;
    let io_err = |e: std::io::Error| CliError::Input(format!("{}: {e}", out.display()));
    output.write_artifacts(out).map_err(io_err)?;
    if !store.is_empty() {
        fs::write(out.join("knowledge_in.txt"), store.to_text()).map_err(io_err)?;
    }
    Ok(output)
}

fn consolidate(store: Option<&Path>, output: &RunOutput) -> Result<(), CliError> {
    if let (Some(path), Some(report)) = (store, &output.mission_report) {
        KnowledgeStore::consolidate_file(path, report).map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(())
}

fn line(output: &RunOutput) -> String {
    let r = &output.report;
    format!(
        "{}: {} ({}) ticks={} objectives={}/{} digest={}",
        r.scenario,
        r.outcome_name(),
        r.reason,
        r.ticks,
        r.objectives_completed,
        r.objectives_total,
        r.telemetry_digest
    )
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    out_root: &Path,
    store: Option<&Path>,
) -> Result<ExitCode, CliError> {
    let mut spec = load(scenario)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let dir = out.unwrap_or_else(|| out_root.join(&spec.name));
    let output = execute(&spec, &load_store(store)?, &dir)?;
    consolidate(store, &output)?;
    println!("{}", line(&output));
    println!("artifacts: {}", dir.display());
    Ok(ExitCode::from(output.report.outcome.exit_code() as u8))
}

fn cmd_replay(log: &Path, scenario: &Path, knowledge: Option<&Path>, seed: Option<u64>) -> Result<ExitCode, CliError> {
    let mut spec = load(scenario)?;
    let text = fs::read_to_string(log).map_err(|e| CliError::Input(format!("{}: {e}", log.display())))?;
    let logged = TelemetryLog::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", log.display())))?;
    spec.seed = seed.unwrap_or(logged.seed);
    let knowledge = load_store(knowledge)?.snapshot();
    match replay(&text, &spec, &knowledge) {
        Ok(ReplayVerdict::Verified) => {
            println!("verified");
            Ok(ExitCode::SUCCESS)
        }
        Ok(ReplayVerdict::Divergence { index, expected, found }) => {
            println!("divergence at record {index}");
            println!("  expected: {}", expected.as_deref().unwrap_or("<end of log>"));
            println!("  found:    {}", found.as_deref().unwrap_or("<end of log>"));
            Ok(ExitCode::from(EXIT_DIVERGED))
        }
        Err(ReplayError::Telemetry(e)) => Err(CliError::Input(format!("{}: {e}", log.display()))),
        Err(ReplayError::Run(e)) => Err(CliError::Internal(e)),
    }
}

fn cmd_batch(dir: &Path, jobs: Option<usize>, out: &Path, store: Option<&Path>) -> Result<ExitCode, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let knowledge = load_store(store)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let results: Vec<(PathBuf, Result<RunOutput, CliError>)> = pool.install(|| {
        files
            .par_iter()
            .map(|f| {
                let r = load(f).and_then(|spec| execute(&spec, &knowledge, &out.join(&spec.name)));
                (f.clone(), r)
            })
            .collect()
    });
    // Consolidation runs in file order so the store does not depend on
    // scheduling.
    let mut worst = 0u8;
    for (file, r) in &results {
        match r {
            Ok(output) => {
                consolidate(store, output)?;
                println!("{}", line(output));
            }
            Err(CliError::Input(m)) => {
                eprintln!("{}: {m}", file.display());
                worst = worst.max(EXIT_PARSE);
            }
            Err(CliError::Internal(e)) => {
                eprintln!("{}: {e}", file.display());
                worst = worst.max(EXIT_INTERNAL);
            }
        }
    }
    println!("{} scenarios, artifacts under {}", results.len(), out.display());
    Ok(ExitCode::from(worst))
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run { scenario, seed, out, out_root, store } => {
            cmd_run(&scenario, seed, out, &out_root, store.as_deref())
        }
        Command::Replay { log, scenario, knowledge, seed } => cmd_replay(&log, &scenario, knowledge.as_deref(), seed),
        Command::DumpMatrix => {
            print!("{}", ImportanceMatrix::embedded().to_csv());
            Ok(ExitCode::SUCCESS)
        }
        Command::Batch { dir, jobs, out, store } => cmd_batch(&dir, jobs, &out, store.as_deref()),
        Command::Validate { scenario } => {
            let spec = load(&scenario)?;
            println!("{}: valid ({} drones, {} objectives)", spec.name, spec.drones.len(), spec.mission.objectives.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARSE) } else { ExitCode::SUCCESS };
        }
    };
    dispatch(cli).unwrap_or_else(|e| e.exit())
}
