use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use molcvt::cli::{self, CliError};
use molcvt::cvae::ConditionSet;

#[derive(Parser)]
#[command(name = "molcvt", about = "Conditional variational Transformer for SMILES")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train { config: PathBuf },
    /// Generate molecules from a checkpoint.
    Generate {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        beam_width: usize,
        /// CSV with header prop1,prop2,prop3; rows are reused cyclically.
        #[arg(long)]
        conditions_file: Option<PathBuf>,
        /// Output CSV (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Score a generated CSV against reference sets.
    Eval {
        generated: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        test_scaffolds: Option<PathBuf>,
        /// Also write the metrics as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Dump encoder self-attention for one SMILES.
    Attend {
        checkpoint: PathBuf,
        smiles: String,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        head: Option<usize>,
        /// Conditions as `p1,p2,p3` (training means when omitted).
        #[arg(long, value_parser = parse_conditions)]
        conditions: Option<ConditionSet>,
        /// JSON output path (stdout when omitted).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check every SMILES in the `smiles` column of a CSV.
    Validate { file: PathBuf },
}

fn parse_conditions(text: &str) -> Result<ConditionSet, String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let values: [f64; 3] = values
        .try_into()
        .map_err(|_| "expected three comma-separated values".to_string())?;
    ConditionSet::new(values).map_err(|e| e.to_string())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|source| CliError::IoFailure {
            path: p.to_path_buf(),
            source,
        })?),
        None => Box::new(io::stdout()),
    })
}

fn write_failed(path: Option<&Path>, e: impl Into<io::Error>) -> CliError {
    CliError::IoFailure {
        path: path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source: e.into(),
    }
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Train { config } => {
            let summary = cli::cmd_train(&config, &mut io::stdout())?;
            println!(
                "trained {} epochs (now at epoch {}), checkpoint {}",
                summary.epochs_run,
                summary.final_epoch,
                summary.checkpoint.display()
            );
        }
        Command::Generate {
            checkpoint,
            n,
            seed,
            beam_width,
            conditions_file,
            out,
        } => {
            let report = cli::cmd_generate(
                &checkpoint,
                n,
                seed,
                beam_width,
                conditions_file.as_deref(),
                &mut io::stderr(),
            )?;
            let sink = output(out.as_deref())?;
            report.write_csv(sink).map_err(|e| write_failed(out.as_deref(), e))?;
        }
        Command::Eval {
            generated,
            train,
            test,
            test_scaffolds,
            csv,
        } => {
            let report = cli::cmd_eval(&generated, train.as_deref(), test.as_deref(), test_scaffolds.as_deref())?;
            print!("{}", report.to_table());
            if let Some(p) = csv {
                std::fs::write(&p, report.to_csv()).map_err(|e| write_failed(Some(&p), e))?;
            }
        }
        Command::Attend {
            checkpoint,
            smiles,
            layer,
            head,
            conditions,
            json,
        } => {
            let dump = cli::cmd_attend(&checkpoint, &smiles, layer, head, conditions)?;
            eprint!("{}", dump.heatmap());
            let mut sink = output(json.as_deref())?;
            writeln!(sink, "{}", dump.to_json()).map_err(|e| write_failed(json.as_deref(), e))?;
        }
        Command::Validate { file } => {
            let lines = cli::cmd_validate(&file)?;
            let valid = lines.iter().filter(|l| l.verdict.is_valid()).count();
            for l in &lines {
                match &l.verdict {
                    molcvt::chem::Verdict::Valid => println!("{}\tvalid\t{}", l.line, l.smiles),
                    molcvt::chem::Verdict::Invalid(e) => println!("{}\tinvalid\t{}\t{e}", l.line, l.smiles),
                }
            }
            println!("{valid}/{} valid", lines.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
