use std::path::PathBuf;
use std::process::ExitCode;

use bvi_cli::commands::{self, HistRequest, Split};
use bvi_cli::config::ExperimentConfig;
use bvi_core::data::FeatureFormat;
use bvi_core::model::Variant;
use bvi_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

fn config_help() -> String {
    format!(
        "Settings resolve as: command-line flag, then --config file, then default.\n\
         Set BVI_THREADS to bound the worker pool.\n\nDefault configuration:\n{}",
        ExperimentConfig::default().to_json()
    )
}

#[derive(Parser)]
#[command(name = "bvi", version, about = "Bayesian classification heads on synthetic features", after_long_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train/val/ood files (overrides data.dir).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Dataset file format (overrides data.format).
    #[arg(long)]
    data_format: Option<FeatureFormat>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load_or_default(self.config.as_deref())?;
        if let Some(d) = &self.data_dir {
            cfg.data.dir = d.clone();
        }
        if let Some(f) = self.data_format {
            cfg.data.format = f;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train, validation and OOD sets.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Output format; repeat for several.
        #[arg(long = "format", value_name = "csv|bfv")]
        formats: Vec<FeatureFormat>,
        /// Sampling-noise seed (overrides data.synth.noise_seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Preset: this many in-distribution and OOD classes.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train one head variant.
    Train {
        #[command(flatten)]
        common: Common,
        /// deterministic, mc-dropout or stochastic-vi.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training seed (overrides train.seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with Monte Carlo prediction.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Inference seed (overrides inference.seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate data, train all three variants and tabulate their metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Base training seed; each variant derives its own from it.
        #[arg(long)]
        seed: Option<u64>,
        /// Preset: this many in-distribution and OOD classes.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Density histogram of one column of an evaluation report.
    Hist {
        /// report.csv written by eval or compare.
        #[arg(long)]
        report: PathBuf,
        /// confidence, pred_entropy, exp_entropy or bald.
        #[arg(long, default_value = "confidence")]
        column: String,
        /// all, true, false, in or out.
        #[arg(long, default_value = "all")]
        split: Split,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, requires = "hi")]
        lo: Option<f64>,
        #[arg(long, requires = "lo")]
        hi: Option<f64>,
        /// Class count for the default entropy range ln K.
        #[arg(long)]
        classes: Option<usize>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_classes(cfg: &mut ExperimentConfig, classes: Option<usize>) {
    if let Some(k) = classes {
        cfg.data.synth.k_in = k;
        cfg.data.synth.k_out = k;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            out,
            formats,
            seed,
            classes,
        } => {
            let mut cfg = common.load()?;
            apply_classes(&mut cfg, classes);
            if let Some(s) = seed {
                cfg.data.synth.noise_seed = s;
            }
            let formats = if formats.is_empty() { vec![cfg.data.format] } else { formats };
            commands::gen_data(&cfg, &out, &formats)?;
            println!("wrote {}", out.display());
        }
        Command::Train {
            common,
            variant,
            epochs,
            seed,
            out,
        } => {
            let mut cfg = common.load()?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let variant = variant.unwrap_or(cfg.head.variant);
            commands::cmd_train(&cfg, variant, &out)?;
        }
        Command::Eval {
            common,
            checkpoint,
            mc_samples,
            seed,
            out,
        } => {
            let mut cfg = common.load()?;
            if let Some(t) = mc_samples {
                cfg.inference.mc_samples = t;
            }
            if let Some(s) = seed {
                cfg.inference.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.eval.out_dir.clone());
            commands::cmd_eval(&cfg, &checkpoint, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Compare {
            common,
            epochs,
            mc_samples,
            seed,
            classes,
            out,
        } => {
            let mut cfg = common.load()?;
            apply_classes(&mut cfg, classes);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(t) = mc_samples {
                cfg.inference.mc_samples = t;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            commands::compare(&cfg, &out)?;
            println!("wrote {}", out.join("comparison.md").display());
        }
        Command::Hist {
            report,
            column,
            split,
            bins,
            lo,
            hi,
            classes,
            out,
        } => {
            let req = HistRequest {
                column,
                split,
                bins,
                range: lo.zip(hi),
                classes,
            };
            let h = commands::hist_from_report(&report, &req)?;
            match out {
                Some(p) => bvi_core::io::write_atomic(&p, h.to_csv().as_bytes())?,
                None => print!("{}", h.to_csv()),
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("BVI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("BVI_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
