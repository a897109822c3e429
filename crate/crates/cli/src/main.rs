//! `toolforge` — batch rollout runner, mock services, and run summaries.
//!
//! Exit codes: 0 success, 2 configuration error, 3 total batch failure.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use toolforge_cli::mock::{serve_mock, MockKind};
use toolforge_cli::pipeline::{execute_run, GeneratorChoice, Overrides, RunError, RunOptions};
use toolforge_cli::summarize::{summarize, SummarizeError};

const EXIT_CONFIG: i32 = 2;
const EXIT_TOTAL_FAILURE: i32 = 3;

#[derive(Parser)]
#[command(name = "toolforge", version, about = "Multi-turn tool-call rollout engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episode groups over a task file and write episode records.
    Rollout(RolloutArgs),
    /// Serve a mock endpoint (echo model, scripted judge, slow tool).
    ServeMock(ServeMockArgs),
    /// Recompute and print aggregates from a run directory.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
#[command(group(
    clap::ArgGroup::new("generator").required(true).args(["gen_endpoint", "gen_script"])
))]
struct RolloutArgs {
    /// Tool registry config file.
    #[arg(long, value_name = "FILE")]
    tools: PathBuf,
    /// Line-delimited task records {task_id, prompt, ground_truth}.
    #[arg(long, value_name = "FILE")]
    tasks: PathBuf,
    /// Engine config file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Chat-completion endpoint for the policy model.
    #[arg(long, value_name = "URL")]
    gen_endpoint: Option<String>,
    /// Scripted generator fixture (deterministic playback).
    #[arg(long, value_name = "FILE")]
    gen_script: Option<PathBuf>,
    /// Model name sent to --gen-endpoint (overrides the config's
    /// generation.model).
    #[arg(long, value_name = "NAME")]
    gen_model: Option<String>,
    /// Output directory for episodes.jsonl and manifest.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Episodes per task prompt (overrides config).
    #[arg(long)]
    group_size: Option<usize>,
    /// Invocation-round budget per episode (overrides config).
    #[arg(long)]
    max_turns: Option<usize>,
    /// Run seed; scripted runs with the same seed are byte-identical.
    #[arg(long)]
    seed: Option<u64>,
    /// Bound on task groups in flight (overrides config).
    #[arg(long)]
    max_concurrent_groups: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MockKindArg {
    EchoModel,
    ScriptedJudge,
    SlowTool,
}

#[derive(Args)]
struct ServeMockArgs {
    #[arg(long, value_enum)]
    kind: MockKindArg,
    /// Port to bind on 127.0.0.1 (0 picks a free port).
    #[arg(long)]
    port: u16,
    /// Judge score for scripted-judge (ignored when --body is given).
    #[arg(long, default_value_t = 1.0)]
    score: f64,
    /// Full response body override (scripted-judge and slow-tool).
    #[arg(long)]
    body: Option<String>,
    /// Response delay for slow-tool.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Run directory containing episodes.jsonl.
    run_dir: PathBuf,
    /// Print the machine-readable summary instead of text.
    #[arg(long)]
    json: bool,
}

fn init_logging() {
    use tracing_subscriber::EnvFilter;
    let filter =
        EnvFilter::try_from_env("TOOLFORGE_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

#[tokio::main]
async fn main() {
    init_logging();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Rollout(args) => run_rollout(args).await,
        Command::ServeMock(args) => run_serve_mock(args).await,
        Command::Summarize(args) => run_summarize(args),
    };
    std::process::exit(code);
}

async fn run_rollout(args: RolloutArgs) -> i32 {
    let generator = match (args.gen_script, args.gen_endpoint) {
        (Some(script), None) => GeneratorChoice::Script(script),
        (None, Some(url)) => GeneratorChoice::Endpoint {
            url,
            model: args.gen_model,
        },
        // clap's ArgGroup guarantees exactly one is present
        _ => unreachable!("generator flags validated by clap"),
    };
    let options = RunOptions {
        tools: args.tools,
        tasks: args.tasks,
        config: args.config,
        generator,
        out: args.out,
        overrides: Overrides {
            group_size: args.group_size,
            max_turns: args.max_turns,
            max_concurrent_groups: args.max_concurrent_groups,
            seed: args.seed,
        },
    };

    match execute_run(&options).await {
        Ok(report) => {
            let m = &report.manifest;
            println!(
                "wrote {} episodes across {} groups to {} ({} failed group(s), {} discarded episode(s))",
                m.counts.episodes,
                m.counts.groups,
                report.out_dir.display(),
                m.counts.group_failures,
                m.counts.episodes_discarded,
            );
            if let (Some(reward), Some(turns)) = (m.metrics.mean_reward, m.metrics.mean_turns) {
                println!(
                    "mean reward {:.4}, mean turns {:.2}, {:.1} episodes/minute",
                    reward, turns, m.metrics.episodes_per_minute
                );
            }
            0
        }
        Err(e @ RunError::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e @ RunError::TotalFailure { .. }) => {
            eprintln!("error: {e}");
            EXIT_TOTAL_FAILURE
        }
        Err(e @ RunError::Output(_)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

async fn run_serve_mock(args: ServeMockArgs) -> i32 {
    let kind = match args.kind {
        MockKindArg::EchoModel => MockKind::EchoModel,
        MockKindArg::ScriptedJudge => match args.body {
            Some(body) => MockKind::ScriptedJudge { body },
            None => MockKind::judge_with_score(args.score),
        },
        MockKindArg::SlowTool => MockKind::SlowTool {
            delay: Duration::from_millis(args.delay_ms),
            body: args.body.unwrap_or_else(|| "ok".into()),
        },
    };

    match serve_mock(kind, args.port).await {
        Ok(server) => {
            println!("mock listening on http://{}", server.addr());
            tokio::select! {
                _ = server.wait() => {}
                _ = tokio::signal::ctrl_c() => {}
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn run_summarize(args: SummarizeArgs) -> i32 {
    match summarize(&args.run_dir) {
        Ok(summary) => {
            if args.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&summary).expect("summary serializes")
                );
            } else {
                print!("{}", summary.render_text());
            }
            0
        }
        Err(e @ SummarizeError::EmptyRun(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
