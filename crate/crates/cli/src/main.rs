// SPDX-License-Identifier: Apache-2.0
//! `eda-loop` command line.
//!
//! Exit codes: 0 success, 1 simulation ran but the testbench failed,
//! 2 usage or configuration error, 3 aborted run, 4 tool environment error.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use eda_loop_core::advisor::AdvisorMode;
use eda_loop_core::backend::{make_backend, BackendMode, Design};
use eda_loop_core::config::Settings;
use eda_loop_core::docstore::DocStore;
use eda_loop_core::mcp::Server;
use eda_loop_core::metrics::{ratio_table, read_table_csv, score, Objective};
use eda_loop_core::optimizer::{
    create_run_dir, history_table, render_history, resume, run_optimization, run_sweep,
    OptimizationHistory, OptimizerError, RunSpec, RunStatus,
};

const EXIT_TEST_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ABORTED: u8 = 3;
const EXIT_ENVIRONMENT: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "eda-loop", version, about = "Backend-aware ABC script optimization and MCP tool server")]
struct Cli {
    /// Settings file (TOML). Flags override values from the file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root directory for run artifacts.
    #[arg(long, global = true, value_name = "PATH")]
    runs_dir: Option<PathBuf>,
    /// Documentation snippets used for retrieval.
    #[arg(long, global = true, value_name = "PATH")]
    corpus_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true, value_enum)]
    advisor: Option<AdvisorArg>,
    #[arg(long, global = true, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serve MCP over stdin/stdout until stdin closes.
    Serve,
    /// Evaluate the nine fixed strategies and report the best per objective.
    Sweep {
        /// Design file (TOML).
        design: PathBuf,
    },
    /// Sweep, then refine ABC scripts until convergence.
    Optimize {
        /// Design file (TOML).
        design: PathBuf,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        /// Stop once the baseline score is at or below this value.
        #[arg(long)]
        target: Option<f64>,
        /// Free-text goal passed to the advisor.
        #[arg(long)]
        constraints: Option<String>,
        /// Continue an interrupted run from its history.json.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Comparison table with GeoMean and Ratio rows.
    Report {
        /// Per-design table (design,<c>_delay_ns...,<c>_area_um2...).
        #[arg(long, value_name = "PATH", conflicts_with = "history")]
        csv: Option<PathBuf>,
        /// Finished run histories; one column per advisor mode.
        #[arg(long, value_name = "PATH", num_args = 1..)]
        history: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run the design's self-checking testbench.
    Simulate {
        /// Design file (TOML) with a testbench.
        design: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Mock,
    Real,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AdvisorArg {
    Heuristic,
    Remote,
    NoFeedback,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Timing,
    Area,
    Balanced,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Csv,
}

/// A failure mapped to an exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

impl From<OptimizerError> for Failure {
    fn from(e: OptimizerError) -> Self {
        let code = if e.is_environment() {
            EXIT_ENVIRONMENT
        } else if matches!(e, OptimizerError::Backend { .. }) {
            EXIT_ABORTED
        } else {
            EXIT_USAGE
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p).map_err(usage)?,
        None => Settings::default(),
    };
    if let Some(d) = &cli.runs_dir {
        s.runs_dir = d.clone();
    }
    if let Some(d) = &cli.corpus_dir {
        s.corpus_dir = Some(d.clone());
    }
    if let Some(b) = cli.backend {
        s.backend.mode = match b {
            BackendArg::Mock => BackendMode::Mock,
            BackendArg::Real => BackendMode::Real,
        };
    }
    if let Some(a) = cli.advisor {
        s.advisor.mode = match a {
            AdvisorArg::Heuristic => AdvisorMode::Heuristic,
            AdvisorArg::Remote => AdvisorMode::Remote,
            AdvisorArg::NoFeedback => AdvisorMode::NoFeedback,
        };
    }
    if let Some(o) = cli.objective {
        s.objective = match o {
            ObjectiveArg::Timing => Objective::Timing,
            ObjectiveArg::Area => Objective::Area,
            ObjectiveArg::Balanced => Objective::Balanced,
        };
    }
    s.validate().map_err(usage)?;
    Ok(s)
}

fn load_docs(s: &Settings) -> Result<DocStore, Failure> {
    match &s.corpus_dir {
        Some(dir) => DocStore::load_dir(dir).map_err(usage),
        None => Ok(DocStore::new()),
    }
}

fn load_design(path: &Path) -> Result<Design, Failure> {
    Design::load(path).map_err(usage)
}

fn cmd_serve(s: Settings) -> Result<(), Failure> {
    let docs = load_docs(&s)?;
    let mut server = Server::new(s, docs);
    let stdin = std::io::stdin();
    server
        .serve(BufReader::new(stdin.lock()), std::io::stdout().lock())
        .map_err(|e| Failure {
            code: EXIT_ENVIRONMENT,
            message: format!("stdio failure: {e}"),
        })
}

fn cmd_sweep(s: Settings, design: &Path) -> Result<(), Failure> {
    let design = load_design(design)?;
    let backend = make_backend(&s.backend);
    let spec = RunSpec {
        design: &design,
        backend: backend.as_ref(),
        objective: s.objective,
        mode: "sweep",
        runs_root: &s.runs_dir,
        config: s.loop_config,
        constraints: "",
        cancel: None,
    };
    let (path, h) = run_sweep(&spec)?;
    let mut out = render_history(&h, &path);
    let reference = h.reference.expect("sweep sets the reference");
    for obj in Objective::ALL {
        let best = h
            .records
            .iter()
            .map(|r| (r, score(&r.metrics, obj, &reference).expect("valid reference")))
            .fold(None, |acc: Option<(_, f64)>, (r, sc)| match acc {
                Some((_, b)) if sc > b => acc,
                _ => Some((r, sc)),
            })
            .expect("nine records");
        out.push_str(&format!(
            "best {:<8} {:<8} delay {:.4} ns  area {:.2} um2\n",
            obj.as_str(),
            best.0.strategy.label(),
            best.0.metrics.critical_path_ns,
            best.0.metrics.area_um2
        ));
    }
    print!("{out}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    mut s: Settings,
    design: &Path,
    max_iterations: Option<usize>,
    patience: Option<usize>,
    target: Option<f64>,
    constraints: Option<String>,
    resume_from: Option<PathBuf>,
) -> Result<(), Failure> {
    if let Some(n) = max_iterations {
        s.loop_config.max_iterations = n;
    }
    if let Some(n) = patience {
        s.loop_config.patience = n;
    }
    if target.is_some() {
        s.loop_config.target = target;
    }
    if let Some(c) = constraints {
        s.advisor.constraints = c;
    }
    s.loop_config.single_proposal = s.advisor.mode == AdvisorMode::NoFeedback;
    s.validate().map_err(usage)?;
    let design = load_design(design)?;
    let docs = load_docs(&s)?;
    // a missing credential fails here, before any tool runs
    let mut advisor = s.advisor.build().map_err(usage)?;
    let backend = make_backend(&s.backend);
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let flag = cancel.clone();
        // a second Ctrl-C while a tool is running falls through to the default handler
        let _ = ctrlc::set_handler(move || {
            if flag.swap(true, Ordering::SeqCst) {
                std::process::exit(i32::from(EXIT_ABORTED));
            }
            eprintln!("interrupt: stopping after the current iteration");
        });
    }
    let docs = (!docs.is_empty()).then_some(&docs);
    let (path, h) = match resume_from {
        Some(p) => {
            let h = resume(
                &p,
                &design,
                backend.as_ref(),
                advisor.as_mut(),
                docs,
                &s.loop_config,
                &s.advisor.constraints,
                Some(&cancel),
            )?;
            (p, h)
        }
        None => {
            let spec = RunSpec {
                design: &design,
                backend: backend.as_ref(),
                objective: s.objective,
                mode: s.advisor.mode.as_str(),
                runs_root: &s.runs_dir,
                config: s.loop_config,
                constraints: &s.advisor.constraints,
                cancel: Some(&cancel),
            };
            run_optimization(&spec, advisor.as_mut(), docs)?
        }
    };
    print!("{}", render_history(&h, &path));
    if h.status == RunStatus::Aborted {
        return Err(Failure {
            code: EXIT_ABORTED,
            message: format!("run aborted; history at {}", path.display()),
        });
    }
    Ok(())
}

fn cmd_report(csv: Option<PathBuf>, history: Vec<PathBuf>, format: Format) -> Result<(), Failure> {
    let table = match (csv, history.is_empty()) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            let (columns, rows) = read_table_csv(&text).map_err(usage)?;
            ratio_table(columns, rows).map_err(usage)?
        }
        (None, false) => {
            let hs = history
                .iter()
                .map(|p| OptimizationHistory::load(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(usage)?;
            history_table(&hs).map_err(usage)?
        }
        (None, true) => return Err(usage("report needs --csv <file> or --history <file>...")),
    };
    print!(
        "{}",
        match format {
            Format::Text => table.to_text(),
            Format::Csv => table.to_csv(),
        }
    );
    Ok(())
}

fn cmd_simulate(s: Settings, design: &Path) -> Result<(), Failure> {
    let design = load_design(design)?;
    if design.testbench.is_none() {
        return Err(usage(format!("design `{}` has no testbench", design.name)));
    }
    let backend = make_backend(&s.backend);
    let dir = create_run_dir(&s.runs_dir, &design.name)?.join("sim");
    let r = backend.simulate(&design, &dir).map_err(|e| Failure {
        code: if e.is_environment() { EXIT_ENVIRONMENT } else { EXIT_ABORTED },
        message: e.to_string(),
    })?;
    println!("simulation {}", if r.passed { "passed" } else { "FAILED" });
    println!("log: {}", r.log.display());
    if let Some(v) = &r.vcd {
        println!("waveform: {}", v.display());
    }
    if r.passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_TEST_FAILED,
            message: "testbench reported failure".into(),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let s = settings(&cli)?;
    match cli.command {
        Command::Serve => cmd_serve(s),
        Command::Sweep { design } => cmd_sweep(s, &design),
        Command::Optimize {
            design,
            max_iterations,
            patience,
            target,
            constraints,
            resume,
        } => cmd_optimize(s, &design, max_iterations, patience, target, constraints, resume),
        Command::Report {
            csv,
            history,
            format,
        } => cmd_report(csv, history, format),
        Command::Simulate { design } => cmd_simulate(s, &design),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("eda-loop: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
