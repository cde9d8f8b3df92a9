use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cardiolabel::cli::{self, CONFIG_FILE};
use cardiolabel::io::{Regime, RunConfig};
use cardiolabel::pcg_data::{LabelGroup, Location, SynthSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cardiolabel", version, about = "Multi-label heart murmur classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// position-dependent or position-independent.
    #[arg(long)]
    regime: Option<Regime>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 0.5)]
        prevalence: f64,
        #[arg(long, default_value_t = 12)]
        min_cycles: usize,
        #[arg(long, default_value_t = 16)]
        max_cycles: usize,
    },
    /// Build the sample store and split plan from a manifest.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train fold and final models on a prepared directory.
    Train {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-fold, holdout and patient-level metric tables.
    Eval {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Enables patient-level accuracy over the holdout recordings.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Label one patient from a manifest.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        models: PathBuf,
        /// Use only the recording from this location.
        #[arg(long)]
        location: Option<Location>,
        #[command(flatten)]
        common: Common,
    },
    /// Saliency CSV for one prepared sample.
    Saliency {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long, default_value = "timing")]
        group: String,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, prepared: Option<&Path>) -> cardiolabel::Result<RunConfig> {
    let mut cfg = match (&common.config, prepared.map(|p| p.join(CONFIG_FILE))) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(snapshot)) if snapshot.exists() => RunConfig::load(&snapshot)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(regime) = common.regime {
        cfg.regime = regime;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> cardiolabel::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            patients,
            prevalence,
            min_cycles,
            max_cycles,
        } => {
            let spec = SynthSpec {
                patients,
                murmur_prevalence: prevalence,
                min_cycles,
                max_cycles,
                ..SynthSpec::default()
            };
            let s = cli::cmd_synth(&spec, seed, &out)?;
            println!(
                "{} patients, {} recordings -> {}",
                s.patients,
                s.recordings,
                s.manifest.display()
            );
        }
        Command::Prepare {
            manifest,
            out,
            common,
        } => {
            let cfg = resolve(&common, None)?;
            let s = cli::cmd_prepare(&manifest, &cfg, &out)?;
            print!("{}", s.report);
            println!(
                "{} samples, {} holdout, {} folds -> {}",
                s.samples,
                s.plan.holdout.len(),
                s.plan.k(),
                out.display()
            );
        }
        Command::Train {
            prepared,
            out,
            common,
        } => {
            let cfg = resolve(&common, Some(&prepared))?;
            let s = cli::cmd_train_observed(&prepared, &cfg, &out, |name| {
                eprintln!("trained {name}");
            })?;
            println!("{} checkpoints -> {}", s.checkpoints.len(), out.join("models").display());
        }
        Command::Eval {
            prepared,
            models,
            out,
            manifest,
            common,
        } => {
            let cfg = resolve(&common, Some(&prepared))?;
            let s = cli::cmd_eval(&prepared, &models, &cfg, manifest.as_deref(), &out)?;
            for f in &s.metrics_files {
                println!("{}", f.display());
            }
            if let (Some(f), Some(acc)) = (&s.patient_file, &s.patient_accuracy) {
                println!("{} (average accuracy {:.4})", f.display(), acc.average);
            }
        }
        Command::Predict {
            manifest,
            patient,
            models,
            location,
            common,
        } => {
            let cfg = resolve(&common, None)?;
            let labels = cli::cmd_predict(&manifest, &patient, &models, &cfg, location)?;
            print!("{}", cli::describe_prediction(labels));
        }
        Command::Saliency {
            prepared,
            models,
            sample,
            group,
            class,
            out,
            common,
        } => {
            let cfg = resolve(&common, Some(&prepared))?;
            let group = LabelGroup::from_name(&group)?;
            let c = cli::cmd_saliency(&prepared, sample, &models, &cfg, group, class, &out)?;
            let shares: Vec<String> = c.percent.iter().map(|p| format!("{p:.2}")).collect();
            println!("contributions % [{}] -> {}", shares.join(", "), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
