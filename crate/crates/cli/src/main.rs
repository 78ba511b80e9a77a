use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod record;

use commands::{execute, Outcome};
use config::{ConfigError, WorkflowConfig};
use record::{Invocation, RunRecord, SCHEMA_VERSION};

/// Bayes factor workflow: simulate, fit, compare, calibrate and decide.
#[derive(Debug, Parser)]
#[command(name = "bfwork", version)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "BFWORK_JOBS")]
    jobs: Option<usize>,
    /// Output directory for records and result files.
    #[arg(long, global = true, default_value = "bfwork-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from the design and generating parameters.
    Simulate,
    /// Fit the alternative model and summarize the posterior.
    Fit {
        #[arg(long)]
        data: Option<String>,
    },
    /// Bayes factor for the slope, repeated over several seeds.
    Bf {
        #[arg(long)]
        data: Option<String>,
    },
    /// Simulation-based calibration of the Bayes factor.
    Sbc,
    /// Bayes factor across prior SDs for the slope.
    Sensitivity {
        #[arg(long)]
        data: Option<String>,
    },
    /// Random-effects meta-analysis Bayes factor from study estimates.
    Meta {
        #[arg(long)]
        meta: Option<String>,
    },
    /// Utility-based decisions from a calibration ensemble or from counts.
    Decide {
        /// `sbc_runs.jsonl` from an earlier `sbc` run.
        #[arg(long, conflicts_with = "counts")]
        ensemble: Option<String>,
        /// Counts `h0_discovery,h0_no_discovery,h1_discovery,h1_no_discovery`.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Re-run a recorded command and check its outputs are reproduced.
    Replay { record: PathBuf },
    /// Print a summary of a run record.
    Report { record: PathBuf },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 3;
        }
        if let Some(core) = cause.downcast_ref::<bfwork_core::Error>() {
            use bfwork_core::Error::*;
            return match core {
                Structural(_) | Domain(_) => 4,
                Io(_) | Csv(_) | Parse(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !out.contains(&s) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &s;
        }
    }
    out
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_outputs(out: &Path, outcome: &Outcome) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut names = Vec::new();
    for (name, bytes) in &outcome.files {
        let p = out.join(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        names.push(name.clone());
    }
    Ok(names)
}

/// Runs `inv`, writes its files and record, and returns the record.
fn run_and_record(inv: Invocation, cfg: WorkflowConfig, out: &Path) -> Result<(RunRecord, Outcome)> {
    let started = now();
    let outcome = execute(&inv, &cfg)?;
    let files = write_outputs(out, &outcome)?;
    let rec = RunRecord {
        schema_version: SCHEMA_VERSION,
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: inv,
        config: cfg,
        started,
        finished: now(),
        status: outcome.status(),
        warnings: outcome.warnings.clone(),
        files,
        outputs: outcome.outputs.clone(),
    };
    rec.write(&out.join(format!("{}.record.json", rec.invocation.name())))?;
    Ok((rec, outcome))
}

fn print_outcome(rec: &RunRecord, outcome: &Outcome, out: &Path) {
    print!("{}", outcome.console);
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    println!("record written to {}", out.join(format!("{}.record.json", rec.invocation.name())).display());
}

fn replay(path: &Path, jobs_out: &Path) -> Result<bool> {
    let old = RunRecord::read(path)?;
    let (new, outcome) = run_and_record(old.invocation.clone(), old.config.clone(), jobs_out)?;
    print!("{}", outcome.console);
    let mut same = true;
    if serde_json::to_string(&new.outputs)? != serde_json::to_string(&old.outputs)? {
        eprintln!("outputs differ from the record");
        same = false;
    }
    if new.files != old.files {
        eprintln!("file list differs from the record: {:?} vs {:?}", new.files, old.files);
        same = false;
    }
    // compare against files written next to the original record, when present
    let dir = path.parent().unwrap_or(Path::new("."));
    for (name, bytes) in &outcome.files {
        if let Ok(orig) = std::fs::read(dir.join(name)) {
            if &orig != bytes {
                eprintln!("{name} differs from the original");
                same = false;
            }
        }
    }
    if same {
        println!("replay of {} reproduced all outputs", old.invocation.name());
    }
    Ok(same)
}

/// Flattens `v` into dotted paths with scalar values; long arrays are summarized by length.
fn flatten(prefix: &str, v: &serde_json::Value, lines: &mut Vec<(String, String)>) {
    use serde_json::Value;
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Null => {}
        Value::Bool(b) => lines.push((prefix.to_string(), b.to_string())),
        Value::Number(n) => {
            let s = match (n.as_i64(), n.as_u64()) {
                (Some(i), _) => i.to_string(),
                (_, Some(u)) => u.to_string(),
                _ => bfwork_core::io::fmt4(n.as_f64().unwrap_or(f64::NAN)),
            };
            lines.push((prefix.to_string(), s));
        }
        Value::String(s) => lines.push((prefix.to_string(), s.clone())),
        Value::Array(a) if a.len() > 12 => lines.push((prefix.to_string(), format!("[{} values]", a.len()))),
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&join(&i.to_string()), x, lines);
            }
        }
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&join(k), x, lines);
            }
        }
    }
}

fn report(path: &Path) -> Result<()> {
    let rec = RunRecord::read(path)?;
    println!("command:  {}", rec.invocation.name());
    println!("engine:   {}", rec.engine_version);
    println!("seed:     {}", rec.config.seed);
    println!("started:  {}", rec.started);
    println!("finished: {}", rec.finished);
    println!("status:   {:?}", rec.status);
    for w in &rec.warnings {
        println!("warning:  {w}");
    }
    if !rec.files.is_empty() {
        println!("files:    {}", rec.files.join(", "));
    }
    let mut lines = Vec::new();
    flatten("", &rec.outputs, &mut lines);
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in lines {
        println!("  {k:<width$}  {v}");
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<WorkflowConfig> {
    let mut cfg = match &cli.config {
        Some(p) => WorkflowConfig::read(p)?,
        None => WorkflowConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(ConfigError { line: None, message: "--jobs must be at least 1".into() }.into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    log::debug!("using {jobs} worker threads");

    let inv = match &cli.command {
        Command::Replay { record } => return replay(record, &cli.out),
        Command::Report { record } => return report(record).map(|_| true),
        Command::Simulate => Invocation::Simulate,
        Command::Fit { .. } => Invocation::Fit,
        Command::Bf { .. } => Invocation::Bf,
        Command::Sbc => Invocation::Sbc,
        Command::Sensitivity { .. } => Invocation::Sensitivity,
        Command::Meta { .. } => Invocation::Meta,
        Command::Decide { ensemble, counts } => Invocation::Decide {
            ensemble: ensemble.clone(),
            counts: match counts.as_deref() {
                None => None,
                Some(&[a, b, c, d]) => Some([a, b, c, d]),
                Some(other) => {
                    let message = format!("--counts needs exactly 4 values, got {}", other.len());
                    return Err(ConfigError { line: None, message }.into());
                }
            },
        },
    };
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Fit { data: Some(d) } | Command::Bf { data: Some(d) } | Command::Sensitivity { data: Some(d) } => {
            cfg.data_path = Some(d.clone())
        }
        Command::Meta { meta: Some(m) } => cfg.meta_path = Some(m.clone()),
        _ => {}
    }
    let (rec, outcome) = run_and_record(inv, cfg, &cli.out)?;
    print_outcome(&rec, &outcome, &cli.out);
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
