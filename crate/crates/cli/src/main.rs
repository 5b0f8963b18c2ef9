mod fixtures;
mod manifest;
mod validate;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use causa_core::model::ExecutionRecord;
use causa_core::{causal_test, render, Error, Format, HarnessHandle, SearchControl, Transcript};
use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{Overrides, RunManifest};

const EXIT_FOUND: u8 = 0;
const EXIT_NONE_FOUND: u8 = 2;
const EXIT_ORIGINAL_PASSED: u8 = 3;
const EXIT_ERROR: u8 = 4;

#[derive(Parser)]
#[command(name = "causa", version, about = "Find the smallest input changes that make a failing test pass")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a causal search for one failing test.
    Run(RunArgs),
    /// List or materialize the bundled example subjects.
    Fixtures {
        #[command(subcommand)]
        action: FixturesCmd,
    },
    /// Check that a harness speaks the protocol.
    ValidateHarness(ValidateArgs),
    /// Serve a bundled fixture over the harness protocol.
    #[command(hide = true)]
    Harness { name: String },
}

#[derive(Subcommand)]
enum FixturesCmd {
    List,
    /// Write one manifest per fixture into DIR.
    Materialize { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

#[derive(Args, Default)]
struct SubjectArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Harness command line, split with shell quoting rules.
    #[arg(long)]
    harness_cmd: Option<String>,
    /// Arguments of the original test as a JSON array.
    #[arg(long)]
    args_json: Option<String>,
    #[arg(long)]
    oracle: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    subject: SubjectArgs,
    /// JSON array of existing test specs to reuse as candidates.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    target_passing: Option<usize>,
    #[arg(long)]
    max_candidates: Option<usize>,
    /// Per-execution timeout.
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    total_budget_ms: Option<u64>,
    /// Falls back to $CAUSA_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Per-argument distance weights, comma separated.
    #[arg(long)]
    weights: Option<String>,
    /// Re-run each passing candidate this many times.
    #[arg(long)]
    repeat: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
    /// Log each execution to stderr as it completes.
    #[arg(long)]
    progress: bool,
    /// Save every harness exchange to this JSON-lines file.
    #[arg(long, conflicts_with = "replay_transcript")]
    record_transcript: Option<PathBuf>,
    /// Answer requests from a recorded transcript instead of the harness.
    #[arg(long)]
    replay_transcript: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    subject: SubjectArgs,
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
}

/// A failure that ends the process with a single stderr line.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::OriginalPassed => (EXIT_ORIGINAL_PASSED, "original-passed"),
            Error::InvalidSpec(_) => (EXIT_ERROR, "invalid-spec"),
            Error::InvalidConfig(_) => (EXIT_ERROR, "invalid-config"),
            Error::Incomparable(_) => (EXIT_ERROR, "incomparable"),
            Error::HarnessDead(_) => (EXIT_ERROR, "harness-dead"),
            Error::Io(_) => (EXIT_ERROR, "io"),
            Error::Json(_) => (EXIT_ERROR, "json"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

fn io_failure(what: &str, e: std::io::Error) -> Failure {
    Failure { code: EXIT_ERROR, kind: "io", message: format!("{what}: {e}") }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(args) => run(args),
        Cmd::Fixtures { action } => fixtures_cmd(action),
        Cmd::ValidateHarness(args) => validate_cmd(args),
        Cmd::Harness { name } => serve_fixture(&name),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let message = f.message.replace(['\n', '\r'], " ");
            eprintln!("causa: error[{}]: {message}", f.kind);
            ExitCode::from(f.code)
        }
    }
}

fn load_subject(s: &SubjectArgs, extra: Overrides) -> Result<RunManifest, Failure> {
    let mut m = match &s.manifest {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    let overrides = Overrides {
        harness_cmd: s.harness_cmd.clone(),
        args_json: s.args_json.clone(),
        oracle: s.oracle.clone(),
        ..extra
    };
    m.apply(&overrides)?;
    Ok(m)
}

fn harness_handle(m: &RunManifest) -> Result<HarnessHandle, Failure> {
    let h = m.harness()?;
    let handle = h
        .env
        .iter()
        .fold(HarnessHandle::subprocess(h.command.clone(), h.args.clone()), |acc, (k, v)| acc.with_env(k, v));
    Ok(handle)
}

fn run(args: RunArgs) -> Result<u8, Failure> {
    let overrides = Overrides {
        suite: args.suite.clone(),
        target_passing: args.target_passing,
        max_candidates: args.max_candidates,
        timeout_ms: args.timeout_ms,
        total_budget_ms: args.total_budget_ms,
        seed: args.seed,
        env_seed: std::env::var("CAUSA_SEED").ok(),
        parallelism: args.parallelism,
        weights: args.weights.clone(),
        repeat: args.repeat,
        ..Overrides::default()
    };
    let m = load_subject(&args.subject, overrides)?;
    let original = m.original()?.clone();
    let catalog = m.catalog()?;

    let (handle, recorder) = match &args.replay_transcript {
        Some(path) => (HarnessHandle::replay(Transcript::load(path)?), None),
        None => {
            let handle = harness_handle(&m)?;
            if args.record_transcript.is_some() {
                let (handle, recorder) = handle.recording();
                (handle, Some(recorder))
            } else {
                (handle, None)
            }
        }
    };

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        let _ = ctrlc::set_handler(move || cancel.store(true, Ordering::SeqCst));
    }
    let mut log_progress = |r: &ExecutionRecord| {
        eprintln!(
            "[{:>5}] {:<7} distance {:.4}  {}",
            r.generation,
            r.outcome.label(),
            r.distance_to_original,
            r.spec.args.iter().map(|a| a.canonical_json()).collect::<Vec<_>>().join(", ")
        );
    };
    let control = SearchControl {
        cancel: Some(cancel),
        progress: if args.progress { Some(&mut log_progress) } else { None },
    };

    let report = causal_test(original, &m.suite, &catalog, &m.config, &handle, control);
    if let (Some(path), Some(recorder)) = (&args.record_transcript, &recorder) {
        recorder.snapshot().save(path)?;
    }
    let report = report?;

    let format = match args.format {
        FormatArg::Text => Format::Text,
        FormatArg::Json => Format::Json,
    };
    let bytes = render(&report, format, args.verbose);
    match &args.output {
        Some(path) => std::fs::write(path, &bytes).map_err(|e| io_failure(&path.display().to_string(), e))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| io_failure("stdout", e))?;
        }
    }
    Ok(if report.nearest_passing.is_empty() { EXIT_NONE_FOUND } else { EXIT_FOUND })
}

fn fixtures_cmd(action: FixturesCmd) -> Result<u8, Failure> {
    match action {
        FixturesCmd::List => {
            for f in fixtures::FIXTURES.iter().filter(|f| !f.faulty) {
                println!("{:<12} {}", f.name, f.summary);
            }
        }
        FixturesCmd::Materialize { dir } => {
            let exe = std::env::current_exe().map_err(|e| io_failure("current executable", e))?;
            let written =
                fixtures::materialize(&dir, &exe).map_err(|e| io_failure(&dir.display().to_string(), e))?;
            for path in written {
                println!("{}", path.display());
            }
        }
    }
    Ok(0)
}

fn validate_cmd(args: ValidateArgs) -> Result<u8, Failure> {
    let m = load_subject(&args.subject, Overrides::default())?;
    let harness = m.harness()?;
    let probe = m.original()?;
    let result = validate::validate(harness, probe, Duration::from_millis(args.timeout_ms));
    print!("{}", result.render());
    if result.conformant() {
        Ok(0)
    } else {
        Err(Failure {
            code: EXIT_ERROR,
            kind: "non-conformant",
            message: format!("{} protocol check(s) failed", result.checks.iter().filter(|c| !c.ok).count()),
        })
    }
}

fn serve_fixture(name: &str) -> Result<u8, Failure> {
    let fixture = fixtures::find(name).ok_or_else(|| Failure {
        code: EXIT_ERROR,
        kind: "unknown-fixture",
        message: format!("no fixture named {name:?}"),
    })?;
    fixtures::serve(fixture).map_err(|e| io_failure("harness", e))?;
    Ok(0)
}
