//! Command-line driver: parse and print `.sir` modules, instrument them,
//! run them on the tagged-memory interpreter, generate the test corpus, and
//! evaluate detection parity across instrumentation modes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use safeir::corpus;
use safeir::instrument;
use safeir::ir::InstrMode;
use safeir::nofree::{build_call_graph, compute_nofree, NofreeDb};
use safeir::report;
use safeir::runtime::{execute, RunConfig, RunVerdict};
use safeir::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    Safeffi,
    #[value(name = "safeffi-heap")]
    SafeffiHeap,
}

impl From<ModeArg> for InstrMode {
    fn from(m: ModeArg) -> InstrMode {
        match m {
            ModeArg::Baseline => InstrMode::Baseline,
            ModeArg::Safeffi => InstrMode::SafeFfi,
            ModeArg::SafeffiHeap => InstrMode::SafeFfiHeap,
        }
    }
}

impl std::fmt::Display for ModeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(InstrMode::from(*self).keyword())
    }
}

#[derive(Parser)]
#[command(
    name = "safeir",
    about = "Mini-IR sanitizer with type-guided check hoisting",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a module, reporting diagnostics.
    Parse { file: PathBuf },
    /// Parse a module and print its canonical text.
    Print {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Insert dynamic checks under the chosen mode.
    Instrument {
        file: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Instrumented module destination (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Check-accounting JSON destination.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Persisted nofree annotations from other units.
        #[arg(long, env = "SAFEIR_NOFREE_DB")]
        nofree_db: Option<PathBuf>,
    },
    /// Execute a module on the tagged-memory interpreter.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "main")]
        entry: String,
        /// Instrument before running; omit to run the module as-is.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Shadow-memory granule size in bytes.
        #[arg(long, default_value_t = 16)]
        granule: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
        /// Outcome JSON destination (stdout when omitted).
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, env = "SAFEIR_NOFREE_DB")]
        nofree_db: Option<PathBuf>,
    },
    /// Per-function pointer-kind histograms as JSON.
    Stats { file: PathBuf },
    /// Write the 45-case corpus and its manifest.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Instrument and run every corpus case in each mode, grading verdicts.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![ModeArg::Baseline, ModeArg::Safeffi, ModeArg::SafeffiHeap])]
        modes: Vec<ModeArg>,
        /// Report JSON destination (stdout when omitted).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Inspect and maintain the persisted nofree annotations.
    #[command(subcommand, name = "nofree-db")]
    NofreeDb(DbCmd),
}

#[derive(Subcommand)]
enum DbCmd {
    /// Analyze modules and fold their verdicts into the database.
    Compute {
        files: Vec<PathBuf>,
        #[arg(long, env = "SAFEIR_NOFREE_DB")]
        nofree_db: PathBuf,
    },
    /// Print the database.
    Show {
        #[arg(long, env = "SAFEIR_NOFREE_DB")]
        nofree_db: PathBuf,
    },
    /// Merge databases into the target; disagreements become MAYFREE.
    Merge {
        inputs: Vec<PathBuf>,
        #[arg(long, env = "SAFEIR_NOFREE_DB")]
        nofree_db: PathBuf,
    },
}

fn load(path: &Path) -> Result<safeir::ir::ProgramModule> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path.display().to_string();
    text::load_module(&text, &name).map_err(|e| anyhow::anyhow!("{e}"))
}

fn load_db(path: Option<&PathBuf>) -> Result<NofreeDb> {
    match path {
        Some(p) => Ok(NofreeDb::load_or_default(p)?),
        None => Ok(NofreeDb::default()),
    }
}

fn write_or_stdout(target: Option<&PathBuf>, content: &str) -> Result<()> {
    match target {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Parse { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let name = file.display().to_string();
            match text::parse_module(&text, &name) {
                Err(e) => {
                    eprintln!("syntax error: {e}");
                    Ok(ExitCode::from(2))
                }
                Ok(module) => {
                    let diags = safeir::ir::validate_module(&module);
                    if diags.is_empty() {
                        println!(
                            "{}: ok ({} functions, {} globals)",
                            module.name,
                            module.functions.len(),
                            module.globals.len()
                        );
                        Ok(ExitCode::SUCCESS)
                    } else {
                        for d in &diags {
                            eprintln!("{d}");
                        }
                        Ok(ExitCode::from(1))
                    }
                }
            }
        }
        Cmd::Print { file, output } => {
            let module = load(&file)?;
            write_or_stdout(output.as_ref(), &text::print_module(&module))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Instrument {
            file,
            mode,
            output,
            stats,
            nofree_db,
        } => {
            let module = load(&file)?;
            let db = load_db(nofree_db.as_ref())?;
            let (instrumented, istats) = instrument::instrument(&module, mode.into(), &db)?;
            write_or_stdout(output.as_ref(), &text::print_module(&instrumented))?;
            if let Some(stats_path) = stats {
                // One record per function, keyed by name.
                let json = serde_json::to_string_pretty(&istats.functions)?;
                std::fs::write(&stats_path, json + "\n")
                    .with_context(|| format!("writing {}", stats_path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run {
            file,
            entry,
            mode,
            granule,
            max_steps,
            json,
            nofree_db,
        } => {
            let module = load(&file)?;
            let module = match mode {
                Some(mode) => {
                    if let Some(existing) = module.instrumented {
                        bail!("{} is already instrumented ({existing})", file.display());
                    }
                    let db = load_db(nofree_db.as_ref())?;
                    instrument::instrument(&module, mode.into(), &db)?.0
                }
                None => module,
            };
            let config = RunConfig {
                granule,
                max_steps,
                ..RunConfig::default()
            };
            let outcome = execute(&module, &entry, &config)?;
            let json_value = report::outcome_to_json(&outcome);
            write_or_stdout(
                json.as_ref(),
                &(serde_json::to_string_pretty(&json_value)? + "\n"),
            )?;
            match outcome.verdict {
                RunVerdict::CleanExit(_) => Ok(ExitCode::SUCCESS),
                RunVerdict::Violation(v) => {
                    eprintln!(
                        "violation: {:?} at {} ({} check)",
                        v.kind,
                        v.loc,
                        match v.check {
                            safeir::runtime::CheckRef::Site(k) => k.keyword(),
                            safeir::runtime::CheckRef::Intercept => "intercept",
                        }
                    );
                    Ok(ExitCode::from(1))
                }
                RunVerdict::Timeout => {
                    eprintln!("timeout after {max_steps} steps");
                    Ok(ExitCode::from(3))
                }
            }
        }
        Cmd::Stats { file } => {
            let module = load(&file)?;
            let histograms = report::kind_histograms(&module)?;
            println!("{}", serde_json::to_string_pretty(&histograms)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::GenCorpus { out } => {
            let cases = corpus::gen_corpus();
            corpus::save_corpus(&cases, &out)?;
            eprintln!("wrote {} cases to {}", cases.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Evaluate {
            corpus: dir,
            modes,
            json,
        } => {
            let cases = corpus::load_corpus(&dir)?;
            let modes: Vec<InstrMode> = modes.into_iter().map(InstrMode::from).collect();
            let parity = report::evaluate_parity(&cases, &modes)?;
            eprint!("{}", parity.human_table());
            let json_text = serde_json::to_string_pretty(&parity)? + "\n";
            write_or_stdout(json.as_ref(), &json_text)?;
            if parity.acceptance_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Cmd::NofreeDb(db_cmd) => run_db(db_cmd),
    }
}

fn run_db(cmd: DbCmd) -> Result<ExitCode> {
    match cmd {
        DbCmd::Compute { files, nofree_db } => {
            if files.is_empty() {
                bail!("nofree-db compute needs at least one module");
            }
            let mut db = NofreeDb::load_or_default(&nofree_db)?;
            for file in &files {
                let module = load(file)?;
                db = compute_nofree(&build_call_graph(&module), &db);
            }
            db.save(&nofree_db)?;
            eprintln!("{} entries in {}", db.len(), nofree_db.display());
            Ok(ExitCode::SUCCESS)
        }
        DbCmd::Show { nofree_db } => {
            let db = NofreeDb::load(&nofree_db)?;
            print!("{}", db.to_text());
            Ok(ExitCode::SUCCESS)
        }
        DbCmd::Merge { inputs, nofree_db } => {
            let mut db = NofreeDb::load_or_default(&nofree_db)?;
            for input in &inputs {
                db.merge(&NofreeDb::load(input)?);
            }
            db.save(&nofree_db)?;
            eprintln!("{} entries in {}", db.len(), nofree_db.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
