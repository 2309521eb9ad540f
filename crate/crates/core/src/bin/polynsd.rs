//! Command-line front end: single training runs, sweeps, synthetic dataset
//! generation, config/dataset validation, and the numeric oracle checks.
//!
//! Exit codes: 0 success, 2 config error, 3 dataset error, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use polynsd::dataset::{check_against_known, known_dataset_stats};
use polynsd::experiment::{
    dataset_for_seed, oracle_check, run_experiment, ExperimentConfig,
};
use polynsd::model::{Checkpoint, CHECKPOINT_VERSION};
use polynsd::synth::{gen_dataset_with_diagnostics, SyntheticSpec};
use polynsd::train::train;
use polynsd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "polynsd",
    version,
    about = "Sheaf diffusion with polynomial spectral filters: training, sweeps, synthetic benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the configured dataset; optionally save a checkpoint.
    Train(CommonArgs),
    /// Run the configured sweep and export the results table.
    Sweep(CommonArgs),
    /// Generate a synthetic dataset into a directory of artifact files.
    SynthGen(CommonArgs),
    /// Check a config and its dataset; print statistics and warnings.
    Validate(CommonArgs),
    /// Cross-check the numeric core against its independent oracles.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file (experiment config; synthetic spec for synth-gen).
    #[arg(long)]
    config: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path: checkpoint file (train), table file (sweep), directory
    /// (synth-gen).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Results table format for sweep output.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::Dataset(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::SynthGen(args) => cmd_synth_gen(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::OracleCheck { seed } => cmd_oracle_check(seed),
    }
}

fn cmd_train(args: &CommonArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    let data = dataset_for_seed(&cfg.data, 0)?;
    println!("dataset: {}", data.summary());
    let out = train(&cfg.model, &data)?;
    let r = &out.report;
    println!(
        "trained {} epochs ({} parameters) in {:.2}s, status {}",
        r.epochs.len(),
        r.param_count,
        r.wall_seconds,
        r.status
    );
    println!(
        "best epoch {}: val accuracy {:.4}, test accuracy {:.4}",
        r.best_epoch, r.best_val_accuracy, r.test_accuracy
    );
    if let Some(path) = &args.out {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: cfg.model.clone(),
            seed: cfg.model.seed,
            in_features: data.num_features(),
            num_classes: data.num_classes,
            params: out.best_params.to_vec(),
        };
        ck.save(path)?;
        println!("checkpoint written to {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: &CommonArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    let table = run_experiment(&cfg)?;
    print!("{}", table.format_aggregates());
    match &args.out {
        Some(path) => {
            match args.format {
                FormatArg::Csv => table.write_csv(path)?,
                FormatArg::Json => table.write_json(path)?,
            }
            println!("results written to {}", path.display());
        }
        None => match args.format {
            FormatArg::Csv => print!("{}", table.to_csv()),
            FormatArg::Json => println!("{}", table.to_json()?),
        },
    }
    Ok(())
}

fn cmd_synth_gen(args: &CommonArgs) -> Result<()> {
    let mut spec = SyntheticSpec::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dir = args
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("synth-gen needs --out <directory>".into()))?;
    let (ds, diag) = gen_dataset_with_diagnostics(&spec)?;
    let paths = ds.save_to_dir(dir)?;
    println!("dataset: {}", ds.summary());
    println!(
        "rewired {} edges, {} skipped (no eligible target), {} duplicates removed, {} self-loops removed",
        diag.rewired, diag.skipped_no_target, diag.duplicates_removed, diag.self_loops_removed
    );
    println!(
        "wrote {}, {}, {}, {}",
        paths.edges.display(),
        paths.features.display(),
        paths.labels.display(),
        paths.splits.display()
    );
    Ok(())
}

fn cmd_validate(args: &CommonArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    println!("config ok: {}", args.config.display());
    let data = dataset_for_seed(&cfg.data, 0)?;
    let summary = data.summary();
    println!("dataset: {summary}");
    if let Some(name) = &cfg.data.name {
        match known_dataset_stats(name) {
            Some(known) => {
                let warnings = check_against_known(&summary, &known);
                if warnings.is_empty() {
                    println!("statistics match the published {} row", known.name);
                }
                for w in warnings {
                    println!("warning: {w}");
                }
            }
            None => println!("warning: no published statistics known for {name:?}"),
        }
    }
    Ok(())
}

fn cmd_oracle_check(seed: u64) -> Result<()> {
    let checks = oracle_check(seed)?;
    let mut failed = 0;
    for c in &checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("{tag} {} ({})", c.name, c.detail);
        if !c.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("error: {failed} oracle check(s) failed");
        std::process::exit(1);
    }
    println!("all {} oracle checks passed", checks.len());
    Ok(())
}
