//! `simreal`: render toy datasets, run experiment plans and merge reports.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 2 | usage or configuration error (bad flags, invalid plan or spec values, unknown plan kind) |
//! | 3 | schema or data error (malformed JSON, manifest, checkpoint or report; incompatible merges) |
//! | 4 | runtime failure (training, sampling, evaluation, I/O) |

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use simreal::curation::{generate_toy_dataset, ToySpec};
use simreal::experiments::{merge_reports, run_plan, ExperimentPlan, ExperimentReport, RunOptions};
use simreal::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_SCHEMA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "simreal", version, about = "Toy-scale synthetic-data experiments for human video diffusion")]
struct Cli {
    /// Seed override. Replaces the seed of the spec or plan; `report` accepts it and ignores it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a toy dataset from a JSON spec and write its manifest.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and report every group of a plan.
    RunExperiment {
        plan: PathBuf,
        /// Output directory; defaults to the plan's `output` under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for relative plan outputs.
        #[arg(long, env = "SIMREAL_OUT", default_value = ".")]
        out_root: PathBuf,
        /// Train independent groups concurrently.
        #[arg(long)]
        parallel: bool,
        /// Worker threads with `--parallel`; defaults to the available cores.
        #[arg(long, env = "SIMREAL_THREADS")]
        threads: Option<usize>,
    },
    /// Merge the reports of one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write merged.json, merged.md and radar.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A spec file that does not parse.
#[derive(Debug)]
struct SchemaError(String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

fn library_code(e: &Error) -> u8 {
    match e {
        Error::Stage { source, .. } => library_code(source),
        Error::Plan(_) | Error::InvalidArgument(_) | Error::Toml(_) => EXIT_USAGE,
        Error::Manifest(_) | Error::Checkpoint(_) | Error::Json(_) | Error::Report(_) | Error::Image(_) => EXIT_SCHEMA,
        _ => EXIT_RUNTIME,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_code(e);
        }
        if cause.is::<SchemaError>() {
            return EXIT_SCHEMA;
        }
    }
    EXIT_RUNTIME
}

fn gen_data(spec_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: ToySpec = serde_json::from_str(&text)
        .map_err(|e| SchemaError(format!("{}: not a toy dataset spec: {e}", spec_path.display())))?;
    let manifest = generate_toy_dataset(&spec, seed, out)?;
    println!("{} entries -> {}", manifest.len(), out.join("manifest.jsonl").display());
    Ok(())
}

fn run_experiment(plan_path: &Path, seed: Option<u64>, out: Option<PathBuf>, out_root: &Path, threads: usize) -> Result<()> {
    let text = fs::read_to_string(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
    let mut plan = ExperimentPlan::from_json(&text)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    let out = out.unwrap_or_else(|| out_root.join(&plan.output));
    let plan_dir = plan_path.parent().unwrap_or(Path::new("."));
    log::info!("running `{}` ({}) into {}", plan.name, plan.kind.name(), out.display());
    let report = run_plan(&plan, plan_dir, &out, RunOptions { threads })
        .with_context(|| format!("plan `{}` aborted; partial outputs are in {}", plan.name, out.display()))?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports = runs
        .iter()
        .map(|d| ExperimentReport::load(d))
        .collect::<simreal::Result<Vec<_>>>()?;
    let merged = merge_reports(&reports)?;
    print!("{}", merged.to_markdown());
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("merged.json"), serde_json::to_string_pretty(&merged)?)?;
        fs::write(dir.join("merged.md"), merged.to_markdown())?;
        if let Some(radar) = &merged.radar {
            fs::write(dir.join("radar.json"), serde_json::to_string_pretty(radar)?)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, cli.seed.unwrap_or(0), &out),
        Command::RunExperiment {
            plan,
            out,
            out_root,
            parallel,
            threads,
        } => {
            let threads = if parallel {
                threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            } else {
                1
            };
            run_experiment(&plan, cli.seed, out, &out_root, threads.max(1))
        }
        Command::Report { runs, out } => report(&runs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their sources in the message
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
