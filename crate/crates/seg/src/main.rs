use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vimpute_core::postprocess::PostprocessConfig;
use vimpute_seg::config::{RunConfig, DATA_ROOT_ENV};
use vimpute_seg::run;
use vimpute_seg::Result;

/// Lung-field segmentation with a variational imputation branch.
#[derive(Parser)]
#[command(name = "vimpute-seg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset (`images/` and `masks/`).
    Phantoms {
        #[arg(long)]
        n: usize,
        /// Square canvas side in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Fraction of phantoms with one lung hidden under an opacity.
        #[arg(long, default_value_t = 0.0)]
        occluded_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a panel grid showing one image before and after augmentation.
    AugmentPreview {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; checkpoints and history go to `<train.checkpoint_dir>/<run.name>/`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Segment every PNG in a directory with a trained checkpoint.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of PNG images (or a dataset root with `images/`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Directory of reference masks; enables overlay output.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a checkpoint on a dataset directory; writes report.json and report.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root with `images/` and `masks/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and test both models under all four augmentation settings.
    Ablation {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
#[command(after_help = format!("The default data.root is taken from ${DATA_ROOT_ENV}."))]
struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--override train.max_epochs=1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn post(&self) -> Result<PostprocessConfig> {
        Ok(self.resolve()?.post)
    }
}

fn execute(cmd: Command) -> Result<()> {
    let mut log = std::io::stderr();
    match cmd {
        Command::Phantoms { n, size, occluded_fraction, seed, out } => {
            let ds = run::write_phantoms(n, (size, size), occluded_fraction, seed, &out)?;
            println!("wrote {} phantoms to {}", ds.len(), out.display());
        }
        Command::AugmentPreview { config, image, seed, out } => {
            run::augment_preview(&config.resolve()?, &image, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { config } => {
            let cfg = config.resolve()?;
            let trained = run::train_run(&cfg, &mut log)?;
            println!("best validation loss {} at epoch {}", trained.state.best_val_loss, trained.state.best_epoch);
        }
        Command::Segment { checkpoint, input, output, reference, config } => {
            let n = run::segment_run(&checkpoint, &input, &output, reference.as_deref(), &config.post()?)?;
            println!("wrote {n} masks to {}", output.display());
        }
        Command::Evaluate { checkpoint, data, out, config } => {
            let r = run::evaluate_run(&checkpoint, &data, &config.post()?, &out)?;
            println!("dice {:.4} ± {:.4}  accuracy {:.4} ± {:.4}", r.dice_mean, r.dice_std, r.acc_mean, r.acc_std);
        }
        Command::Ablation { config } => {
            let summary = run::ablation_run(&config.resolve()?, &mut log)?;
            println!("{:<9} {:<14} {:>17} {:>17}", "model", "augmentation", "dice", "accuracy");
            for r in &summary.rows {
                println!(
                    "{:<9} {:<14} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
                    r.model, r.augmentation, r.dice_mean, r.dice_std, r.acc_mean, r.acc_std
                );
            }
            for c in &summary.comparisons {
                println!("{} vs {} ({}): t = {:.3}, p = {:.4}", c.config_a, c.config_b, c.metric, c.t_statistic, c.p_value);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
