use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use salience_lab::models::ModelKind;
use salience_lab_cli::{config::RunConfig, init_threads, pipeline, BUNDLED_CONFIG};

#[derive(Parser)]
#[command(name = "salience-lab", version, about = "Engagement modelling from player telemetry")]
struct Cli {
    /// JSON run configuration (default: the bundled desk-scale config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `path.to.key=value`; repeatable.
    #[arg(long = "set", value_name = "K=V", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic telemetry and its latent sidecar.
    Simulate,
    /// Build the train/test dataset from telemetry.
    Featurize {
        /// Telemetry CSV to ingest instead of the simulated one.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit one estimator.
    Train {
        #[arg(long)]
        model: ModelKind,
    },
    /// Hyperband search for the configured model.
    Tune,
    /// Score every trained model on the test split.
    Evaluate,
    /// Extract final-session salience states of the test users.
    Embed,
    /// Partition the salience states and profile each cluster.
    Cluster,
    /// Write comparison tables, plots and the summary.
    Report,
    /// Run simulate through report (without tuning).
    All,
    /// Print the bundled configuration.
    DefaultConfig,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{BUNDLED_CONFIG}");
        return Ok(());
    }
    init_threads()?;
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output_dir={}", serde_json::to_string(&out.to_string_lossy())?));
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = config.output_dir.display();
    match cli.command {
        Command::Simulate => {
            let traces = pipeline::simulate(&config)?;
            println!("simulated {} players into {out}", traces.len());
        }
        Command::Featurize { input } => {
            let split = pipeline::featurize(&config, input.as_deref())?;
            println!(
                "featurized {} train / {} test users",
                split.train.len(),
                split.test.len()
            );
        }
        Command::Train { model } => {
            let (_, history) = pipeline::train_model(&config, model)?;
            match history {
                Some(h) => println!(
                    "trained {model}: best epoch {} (validation loss {:.5})",
                    h.best_epoch, h.best_val_loss
                ),
                None => println!("fitted {model}"),
            }
        }
        Command::Tune => {
            let r = pipeline::tune(&config)?;
            println!(
                "{} trials; best validation loss {:.5} with {}",
                r.trials,
                r.best.val_loss,
                serde_json::to_string(&r.best.config)?
            );
        }
        Command::Evaluate => {
            for (kind, report) in pipeline::evaluate_models(&config)? {
                println!(
                    "{kind}: ch {:.5} st {:.5} ss {:.5} ab {:.5}",
                    report.overall[0], report.overall[1], report.overall[2], report.overall[3]
                );
            }
        }
        Command::Embed => {
            let (users, _) = pipeline::embed(&config)?;
            println!("embedded {} test users", users.len());
        }
        Command::Cluster => {
            let c = pipeline::cluster(&config)?;
            println!("k = {}", c.model.k);
        }
        Command::Report => {
            pipeline::report(&config)?;
            println!(
                "report written to {}",
                pipeline::Layout::new(&config).report().display()
            );
        }
        Command::All => {
            let summary = pipeline::run_all(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::DefaultConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
