use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bondgame::agents::Role;
use bondgame::sim::{self, metrics, ScenarioConfig};
use clap::{Parser, Subcommand};

const USAGE: u8 = 1;
const CONFIG: u8 = 2;
const REPLAY: u8 = 3;

/// Simulates and audits collateralized verification games.
#[derive(Debug, Parser)]
#[command(name = "bondgame", version)]
struct Cli {
    /// Output directory. Nothing is written outside it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress progress and summaries on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario; writes metrics.csv and events.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every cell of the config's [sweep] grid; writes sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the base seed the cell seeds derive from.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify an event log and rebuild its final state.
    Replay { log: PathBuf },
    /// Per-role deviation table over the config's check_eq grid; writes check_eq.csv.
    CheckEq {
        /// Defaults to the built-in grid when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a metrics CSV.
    Report { metrics: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure { code, message: message.to_string() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("bondgame: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut config = ScenarioConfig::load(path).map_err(|e| fail(CONFIG, e))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Write-then-rename inside the output directory.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| fail(CONFIG, format!("{}: {e}", dir.display())))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(CONFIG, e))?;
    tmp.write_all(bytes).and_then(|_| tmp.as_file().sync_all()).map_err(|e| fail(CONFIG, e))?;
    tmp.persist(&target).map_err(|e| fail(CONFIG, e.error))?;
    Ok(target)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };
    match &cli.command {
        Command::Run { config, seed } => {
            let config = load(config, *seed)?;
            let out = sim::run(&config).map_err(|e| fail(CONFIG, e))?;
            let mut csv = Vec::new();
            metrics::write_csv(&mut csv, &[out.metrics.clone()]).map_err(|e| fail(CONFIG, e))?;
            let m = write_atomic(&cli.out, "metrics.csv", &csv)?;
            let l = write_atomic(&cli.out, "events.jsonl", &out.log.to_bytes())?;
            say(format!("seed {}", config.seed));
            say(out.metrics.summary());
            say(format!("wrote {} and {}", m.display(), l.display()));
        }
        Command::Sweep { config, seed } => {
            let config = load(config, *seed)?;
            let axes = sim::sweep::axes(&config);
            let rows = sim::sweep(&config, &axes).map_err(|e| fail(CONFIG, e))?;
            let mut csv = Vec::new();
            sim::sweep::write_csv(&mut csv, &axes, &rows).map_err(|e| fail(CONFIG, e))?;
            let path = write_atomic(&cli.out, "sweep.csv", &csv)?;
            say(format!("{} cells, wrote {}", rows.len(), path.display()));
        }
        Command::Replay { log } => {
            let bytes = fs::read(log).map_err(|e| fail(CONFIG, format!("{}: {e}", log.display())))?;
            match sim::replay(&bytes) {
                Ok(state) => {
                    say(format!(
                        "ok: {} records, {} processes, conservation {}",
                        state.records,
                        state.phases.len(),
                        if state.ledger.conservation_holds() { "holds" } else { "violated" }
                    ));
                    if !state.ledger.conservation_holds() {
                        return Err(fail(REPLAY, "replayed ledger violates conservation"));
                    }
                }
                Err(e) => return Err(fail(REPLAY, format!("replay failed: {e}"))),
            }
        }
        Command::CheckEq { config } => {
            let grid = match config {
                Some(path) => load(path, None)?.check_eq,
                None => ScenarioConfig::default().check_eq,
            };
            let rows = sim::check_eq(&grid).map_err(|e| fail(CONFIG, e))?;
            let mut csv = Vec::new();
            metrics::write_csv(&mut csv, &rows).map_err(|e| fail(CONFIG, e))?;
            let path = write_atomic(&cli.out, "check_eq.csv", &csv)?;
            for p in &grid.error_probabilities {
                let solver = rows.iter().filter(|r| r.role == Role::Solver && r.error_probability == *p);
                let (mut last_cheat, mut first_honest) = (None, None);
                for r in solver {
                    if r.equilibrium {
                        first_honest = first_honest.or(Some(r.solver_bond));
                    } else {
                        last_cheat = Some(r.solver_bond);
                    }
                }
                let show = |b: Option<u64>| b.map_or("-".to_string(), |b| b.to_string());
                say(format!("P_e {p}: cheating pays up to B_S {}, honest from B_S {}", show(last_cheat), show(first_honest)));
            }
            say(format!("wrote {}", path.display()));
        }
        Command::Report { metrics: path } => {
            let file = fs::File::open(path).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))?;
            let rows = metrics::read_csv(file).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))?;
            if rows.is_empty() {
                return Err(fail(CONFIG, format!("{}: no metrics rows", path.display())));
            }
            for (i, m) in rows.iter().enumerate() {
                if rows.len() > 1 {
                    println!("run {i}");
                }
                println!("{}", m.summary());
            }
        }
    }
    Ok(())
}
