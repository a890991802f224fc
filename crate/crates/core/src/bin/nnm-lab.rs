use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nnm_core::lab::config::{parse_list, ConfigFile, ExperimentConfig};
use nnm_core::lab::runner::STUDY_FILE;
use nnm_core::lab::{compare_report, run, synthetic_study};
use nnm_core::Result;

#[derive(Parser)]
#[command(name = "nnm-lab", version, about = "Nuclear-norm curiosity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, pre-train or fine-tune agents as described by a config file.
    Run(RunArgs),
    /// Run the synthetic noise/outlier sensitivity study.
    Study(RunArgs),
    /// Summarize finished run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory for summary.csv and degradation.csv (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Comma-separated seeds, replacing `seeds` from the file.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory, replacing `output_dir` from the file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(args: &RunArgs, study: bool) -> Result<ExperimentConfig> {
    let mut file = ConfigFile::load(&args.config)?;
    if study {
        file.set("mode", "synthetic-study");
    }
    for o in &args.overrides {
        file.apply_override(o)?;
    }
    if let Some(seeds) = &args.seeds {
        parse_list::<u64>(seeds).map_err(|m| file.error("--seeds", m))?;
        file.set("seeds", seeds);
    }
    if let Some(out) = &args.out {
        file.set("output_dir", &out.display().to_string());
    }
    ExperimentConfig::from_file(&file)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args, false)?;
            let outcome = run(&cfg)?;
            for s in &outcome.seeds {
                println!(
                    "seed {}: final return {:.4}, success rate {:.4}, {} episodes, {} ms",
                    s.seed, s.final_return, s.success_rate, s.episodes, s.wall_ms
                );
            }
            println!("results in {}", outcome.output_dir.display());
        }
        Command::Study(args) => {
            let cfg = load(&args, true)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let rows = synthetic_study(&cfg.study)?;
            let path = cfg.output_dir.join(STUDY_FILE);
            nnm_core::lab::study::write_study(&path, &rows)?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
        Command::Report { dirs, out } => {
            let report = compare_report(&dirs)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("summary.csv"), report.summary_csv())?;
                    std::fs::write(dir.join("degradation.csv"), report.degradation_csv())?;
                    println!("report written to {}", dir.display());
                }
                None => {
                    print!("{}", report.summary_csv());
                    if !report.degradation.is_empty() {
                        println!();
                        print!("{}", report.degradation_csv());
                    }
                }
            }
        }
    }
    Ok(())
}
