//! Command implementations behind the `arena` binary.
//!
//! Exit codes: 0 success, 1 validation findings or a replay mismatch,
//! 2 runtime error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use arena_core::agent::{replay_transcript, EpisodeConfig, Transcript, DEFAULT_T_MAX, N_HISTORY};
use arena_core::canonical::{sha256_hex, to_canonical_string};
use arena_core::corpus::{build_corpus, load_golden, Corpus, HUMAN_BASELINE_JSON};
use arena_core::evaluate::{EvalContext, EvaluatorRegistry, GetterRegistry};
use arena_core::observe::DetectorConfig;
use arena_core::orchestrate::{
    aggregate, run_suite, serve_worker, Backend, HumanBaseline, PolicySpec, RunReport, SuiteConfig, TaskSummary,
};
use arena_core::taskspec::{parse_task, validate, StepRegistry, TaskError, TaskSuite};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "arena", version, about = "Run and score desktop-agent episodes in a simulated Windows desktop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// Oracle scripts from the embedded corpus.
    Scripted,
    Random,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every task file in a directory.
    Validate {
        /// Task directory; the embedded corpus when omitted.
        #[arg(long, env = "ARENA_TASKS")]
        tasks: Option<PathBuf>,
    },
    /// Run a suite and write the report and transcripts.
    Run(RunArgs),
    /// Re-execute a transcript and compare the final snapshot digest.
    Replay { transcript: PathBuf },
    /// Render tables from the transcripts under a results directory.
    Report {
        results: PathBuf,
        /// Human-baseline JSON to show alongside the agent row.
        #[arg(long, env = "ARENA_HUMAN_BASELINE", conflicts_with = "human_baseline")]
        human: Option<PathBuf>,
        /// Use the bundled human-baseline fixture.
        #[arg(long)]
        human_baseline: bool,
    },
    /// Serve the worker bridge protocol.
    Serve {
        #[arg(long, env = "ARENA_BIND", default_value = "127.0.0.1:8750")]
        bind: String,
    },
    /// Write the embedded corpus to a directory.
    ExportCorpus {
        #[arg(long, env = "ARENA_OUT")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Task directory; the embedded corpus when omitted.
    #[arg(long, env = "ARENA_TASKS")]
    pub tasks: Option<PathBuf>,
    #[arg(long, env = "ARENA_POLICY", value_enum, default_value = "scripted")]
    pub policy: PolicyKind,
    /// Policy URL, required with `--policy remote`.
    #[arg(long, env = "ARENA_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "ARENA_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, env = "ARENA_MAX_STEPS", default_value_t = DEFAULT_T_MAX)]
    pub max_steps: usize,
    #[arg(long, env = "ARENA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "ARENA_OUT", default_value = "results")]
    pub out: PathBuf,
    #[arg(long, env = "ARENA_DETECTOR_PROFILE", default_value = "uia")]
    pub detector_profile: String,
    /// Bridge worker URLs; episodes run in-process when none are given.
    #[arg(long, env = "ARENA_BRIDGE", value_delimiter = ',')]
    pub bridge: Vec<String>,
}

impl RunArgs {
    pub fn new(out: &Path) -> Self {
        Self {
            tasks: None,
            policy: PolicyKind::Scripted,
            endpoint: None,
            workers: 1,
            max_steps: DEFAULT_T_MAX,
            seed: 0,
            out: out.to_path_buf(),
            detector_profile: "uia".into(),
            bridge: Vec::new(),
        }
    }
}

pub fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Validate { tasks } => cmd_validate(tasks.as_deref(), out),
        Command::Run(args) => match cmd_run(&args, out) {
            Ok(_) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_RUNTIME
            }
        },
        Command::Replay { transcript } => cmd_replay(&transcript, out, err),
        Command::Report {
            results,
            human,
            human_baseline,
        } => {
            let fixture = match (human, human_baseline) {
                (Some(p), _) => match std::fs::read_to_string(&p) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        let _ = writeln!(err, "error: cannot read {}: {e}", p.display());
                        return EXIT_RUNTIME;
                    }
                },
                (None, true) => Some(HUMAN_BASELINE_JSON.to_string()),
                (None, false) => None,
            };
            match cmd_report(&results, fixture.as_deref()) {
                Ok(text) => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::Serve { bind } => {
            let c = build_corpus();
            let _ = writeln!(out, "serving on {bind}");
            let _ = out.flush();
            match serve_worker(c.world.clone(), c.eval_context(), &bind) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::ExportCorpus { out: dir } => match build_corpus().export(&dir) {
            Ok(()) => {
                let _ = writeln!(out, "exported corpus to {}", dir.display());
                EXIT_OK
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_RUNTIME
            }
        },
    }
}

// ---------------------------------------------------------------------------
// validate

fn task_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Findings as `<file>:<keypath>: <message>` lines.
pub fn validation_findings(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut lines = Vec::new();
    let mut seen: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in task_files(dir)? {
        let name = path.display();
        let text = std::fs::read_to_string(&path)?;
        let task = match parse_task(&text) {
            Ok(t) => t,
            Err(TaskError::Schema { path: key, message }) => {
                lines.push(format!("{name}:{key}: {message}"));
                continue;
            }
            Err(e @ TaskError::Syntax(_)) => {
                lines.push(format!("{name}:$: {e}"));
                continue;
            }
        };
        for f in validate(&task, &StepRegistry::standard(), &EvaluatorRegistry, &GetterRegistry).findings {
            lines.push(format!("{name}:{}: {f}", f.key_path()));
        }
        if let Some(first) = seen.insert(task.id.clone(), path.clone()) {
            lines.push(format!("{name}:id: duplicate task id `{}` (also in {})", task.id, first.display()));
        }
    }
    Ok(lines)
}

pub fn cmd_validate(tasks: Option<&Path>, out: &mut dyn Write) -> i32 {
    let findings = match tasks {
        Some(dir) => match validation_findings(dir) {
            Ok(f) => f,
            Err(e) => {
                let _ = writeln!(out, "{}: {e}", dir.display());
                return EXIT_RUNTIME;
            }
        },
        None => {
            let c = build_corpus();
            c.suite
                .tasks
                .iter()
                .flat_map(|t| {
                    validate(t, &StepRegistry::standard(), &EvaluatorRegistry, &GetterRegistry)
                        .findings
                        .into_iter()
                        .map(move |f| format!("<corpus>/{}.json:{}: {f}", t.id, f.key_path()))
                })
                .collect()
        }
    };
    for f in &findings {
        let _ = writeln!(out, "{f}");
    }
    if findings.is_empty() {
        let _ = writeln!(out, "ok");
        EXIT_OK
    } else {
        EXIT_FINDINGS
    }
}

// ---------------------------------------------------------------------------
// run

/// Output locations of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub run_id: String,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub meta_json: PathBuf,
    pub transcripts_dir: PathBuf,
}

fn load_tasks(args: &RunArgs, corpus: &Corpus) -> Result<(TaskSuite, EvalContext), String> {
    match &args.tasks {
        None => Ok((corpus.suite.clone(), corpus.eval_context())),
        Some(dir) => {
            let suite = arena_core::taskspec::load_suite(dir).map_err(|e| match e {
                arena_core::taskspec::SuiteError::Parse(list) => list
                    .iter()
                    .map(|(p, e)| format!("{}: {e}", p.display()))
                    .collect::<Vec<_>>()
                    .join("\n"),
                e => e.to_string(),
            })?;
            let mut ctx = corpus.eval_context();
            ctx.golden
                .extend(load_golden(dir).map_err(|e| format!("golden files: {e}"))?);
            Ok((suite, ctx))
        }
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn policy_name(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::Scripted => "scripted",
        PolicyKind::Random => "random",
        PolicyKind::Remote => "remote",
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<RunOutput, String> {
    let detector = DetectorConfig::profile(&args.detector_profile).ok_or_else(|| {
        format!(
            "unknown detector profile `{}` (one of {})",
            args.detector_profile,
            DetectorConfig::PROFILES.join(", ")
        )
    })?;
    let corpus = build_corpus();
    let (suite, ctx) = load_tasks(args, &corpus)?;
    let policy = match args.policy {
        PolicyKind::Scripted => PolicySpec::Scripted(
            corpus
                .oracles
                .keys()
                .map(|id| (id.clone(), corpus.oracle_script(id).expect("corpus oracle")))
                .collect(),
        ),
        PolicyKind::Random => PolicySpec::Random,
        PolicyKind::Remote => PolicySpec::Remote {
            endpoint: args
                .endpoint
                .clone()
                .ok_or("--policy remote needs --endpoint")?,
            timeout: Duration::from_secs(60),
            retries: 1,
        },
    };
    let episode = EpisodeConfig {
        t_max: args.max_steps,
        n_history: N_HISTORY,
        wait_limit: None,
        detector,
        seed: args.seed,
    };
    let backend = if args.bridge.is_empty() {
        Backend::InProcess {
            workers: args.workers.max(1),
        }
    } else {
        Backend::Bridge {
            endpoints: args.bridge.clone(),
            timeout: Duration::from_secs(60),
        }
    };
    let task_ids: Vec<&str> = suite.tasks.iter().map(|t| t.id.as_str()).collect();
    let identity = json!({
        "policy": policy_name(args.policy),
        "endpoint": args.endpoint,
        "t_max": args.max_steps,
        "seed": args.seed,
        "detector_profile": args.detector_profile,
        "tasks": task_ids,
    });
    let run_id = format!("run-{}", &sha256_hex(to_canonical_string(&identity).as_bytes())[..12]);

    let started = SystemTime::now();
    let run = run_suite(&corpus.world, &suite, &policy, &SuiteConfig { backend, episode }, &ctx);
    let finished = SystemTime::now();

    let io = |p: &Path, e: std::io::Error| format!("{}: {e}", p.display());
    let transcripts_dir = args.out.join("results").join(&run_id);
    std::fs::create_dir_all(&transcripts_dir).map_err(|e| io(&transcripts_dir, e))?;
    for r in &run.results {
        let p = transcripts_dir.join(format!("{}.jsonl", file_stem(&r.task_id)));
        std::fs::write(&p, r.transcript.to_jsonl()).map_err(|e| io(&p, e))?;
    }
    let report_json = args.out.join("report.json");
    std::fs::write(&report_json, run.report.deterministic_json()).map_err(|e| io(&report_json, e))?;
    let report_txt = args.out.join("report.txt");
    let text = run.report.render_text(None);
    std::fs::write(&report_txt, &text).map_err(|e| io(&report_txt, e))?;
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let meta = json!({
        "run_id": run_id,
        "config": identity,
        "workers": args.workers.max(1),
        "bridge": args.bridge,
        "started_unix": secs(started),
        "finished_unix": secs(finished),
        "worker_seconds": run.report.timing,
    });
    let meta_json = args.out.join("meta.json");
    std::fs::write(&meta_json, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")
        .map_err(|e| io(&meta_json, e))?;

    let _ = out.write_all(run.report.render_table().as_bytes());
    let _ = writeln!(
        out,
        "{} of {} tasks succeeded; report in {}",
        run.report.overall.successes,
        run.report.overall.attempts,
        args.out.display()
    );
    Ok(RunOutput {
        report: run.report,
        run_id,
        report_json,
        report_txt,
        meta_json,
        transcripts_dir,
    })
}

// ---------------------------------------------------------------------------
// replay

pub fn cmd_replay(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
    };
    let verdict = Transcript::from_jsonl(&text).and_then(|t| replay_transcript(&build_corpus().world, &t));
    match verdict {
        Ok(v) => {
            let _ = writeln!(out, "final digest  {}", v.final_digest);
            let _ = writeln!(out, "logged digest {}", v.logged_digest.as_deref().unwrap_or("-"));
            let _ = writeln!(out, "{}", if v.matches { "match" } else { "mismatch" });
            if v.matches {
                EXIT_OK
            } else {
                EXIT_FINDINGS
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

// ---------------------------------------------------------------------------
// report

fn jsonl_files(dir: &Path, acc: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            jsonl_files(&p, acc)?;
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            acc.push(p);
        }
    }
    Ok(())
}

/// Aggregates every finished transcript under `dir`.
pub fn report_from_transcripts(dir: &Path) -> Result<RunReport, String> {
    let mut files = Vec::new();
    jsonl_files(dir, &mut files).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut summaries = Vec::new();
    let mut tasks = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| format!("{}: {e}", f.display()))?;
        let t = Transcript::from_jsonl(&text).map_err(|e| format!("{}: {e}", f.display()))?;
        if let Some(s) = TaskSummary::from_transcript(&t) {
            tasks.push(t.task().map_err(|e| format!("{}: {e}", f.display()))?);
            summaries.push(s);
        }
    }
    if summaries.is_empty() {
        return Err(format!("missing results: no finished transcripts under {}", dir.display()));
    }
    let suite = TaskSuite::from_tasks(tasks).map_err(|e| e.to_string())?;
    aggregate(&summaries, &suite).map_err(|e| e.to_string())
}

pub fn cmd_report(dir: &Path, human: Option<&str>) -> Result<String, String> {
    let report = report_from_transcripts(dir)?;
    let human = human
        .map(HumanBaseline::parse)
        .transpose()
        .map_err(|e| format!("human baseline: {e}"))?;
    let mut out = report.render_comparison(human.as_ref());
    if let Some(h) = &human {
        out.push('\n');
        out.push_str(&h.render());
    }
    Ok(out)
}
