mod output;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use scenario::{ConfigError, Scenario};
use shapedyn::suites::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "shapedyn", version, about = "Run the shape-dynamics verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write results.json, manifest.json and CSV tables.
    Run {
        scenario: PathBuf,
        /// Output directory (default: the scenario's `out`, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed, overriding the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (falls back to SHAPEDYN_THREADS).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the available suites.
    Suites {
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Config(String),
    Checks(Vec<String>),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SHAPEDYN_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Failure::Config(format!("SHAPEDYN_THREADS: cannot parse `{v}`")))?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Failure::Config("threads: must be positive".into()));
    }
    Ok(n)
}

fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>, threads_flag: Option<usize>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut sc = Scenario::parse(&text)?;
    if let Some(s) = seed {
        sc.params.seed = s;
    }
    let threads = threads(threads_flag)?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let dir = out.or_else(|| sc.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| Path::new("out").join(&sc.name));

    let start = Instant::now();
    let report = match run_suite(sc.suite, &sc.params) {
        Ok(r) => r,
        Err(shapedyn::Error::InvalidParameter { name, reason }) => return Err(Failure::Config(format!("field `{name}`: {reason}"))),
        Err(e) => return Err(Failure::Runtime(e.to_string())),
    };
    let wall = start.elapsed().as_secs_f64();
    output::write_all(&dir, &sc, &report, wall, threads.unwrap_or_else(rayon::current_num_threads))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;

    for c in &report.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        println!("{mark} [{:>2}] {} = {:e} ({} {:e})", c.criterion, c.name, c.value, if c.above { ">" } else { "<" }, c.threshold);
    }
    println!("wrote {}", dir.display());
    let failing: Vec<String> = report.failing().map(|c| c.name.clone()).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(failing))
    }
}

fn list(json: bool) {
    if json {
        let catalog: Vec<serde_json::Value> = Suite::ALL
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name(),
                    "description": s.description(),
                    "criteria": s.criteria(),
                    "parameters": s.parameters(),
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&catalog).expect("catalog serializes"));
    } else {
        for s in Suite::ALL {
            println!("{:<24} {}", s.name(), s.description());
            println!("{:<24} parameters: {}", "", s.parameters().join(", "));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Suites { json } => {
            list(json);
            ExitCode::SUCCESS
        }
        Command::Run { scenario, out, seed, threads } => match run(&scenario, out, seed, threads) {
            Ok(()) => ExitCode::SUCCESS,
            Err(Failure::Checks(names)) => {
                for n in names {
                    eprintln!("failed check: {n}");
                }
                ExitCode::from(1)
            }
            Err(Failure::Runtime(msg)) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            Err(Failure::Config(msg)) => {
                eprintln!("config error: {msg}");
                ExitCode::from(2)
            }
        },
    }
}
