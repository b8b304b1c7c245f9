use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchreg::checkpoint::Checkpoint;
use patchreg::config::RunConfig;
use patchreg::error::{exit, CliError, Result};
use patchreg::evaluate::evaluate;
use patchreg::gradcheck::{gradcheck, passed, GradcheckOptions};
use patchreg::manifest::Split;
use patchreg::register::register;
use patchreg::synth::{synth, SynthOptions, MANIFEST};
use patchreg::train::train;
use patchreg_core::{Family, Model};

#[derive(Parser)]
#[command(name = "patchreg", version, about = "Patch-based diffeomorphic 2D registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where a model config comes from: a run config file or a preset name.
#[derive(Args)]
struct ModelSource {
    /// Run config JSON (`model`, `train`, `manifest`).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Preset name, e.g. `pure_mlp_s` or `swin_trans_desk`.
    #[arg(long)]
    preset: Option<String>,
    /// Image size for `*_desk` presets.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// Overrides both the model and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelSource {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::from_preset(name, self.image_size)?,
            (None, None) => return Err(CliError::Usage("pass --config or --preset".into())),
        };
        if let Some(s) = self.seed {
            cfg.model.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("`{s}` is not one of train, val, test"))
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).ok_or_else(|| format!("`{s}` is not one of pure_mlp, mlp_mixer, swin_trans"))
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the train split of a manifest.
    Train {
        #[command(flatten)]
        source: ModelSource,
        /// Overrides the config's manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides `train.max_epochs`; patience is lowered to fit.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides `train.patience`.
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one manifest split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register one image pair.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fixed image (PGM).
        #[arg(long)]
        fix: PathBuf,
        /// Moving image (PGM).
        #[arg(long)]
        mov: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resample inputs to the model's image size instead of failing.
        #[arg(long)]
        resize: bool,
    },
    /// Generate synthetic pairs with ground-truth displacements.
    Synth {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3.0)]
        max_disp: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Put every pair in this split instead of a 70/15/15 split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check; exit 0 iff every family passes.
    Gradcheck {
        /// Check one family only.
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip the sign of the GELU derivative; the check must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Print a preset as a run config.
    Preset {
        name: String,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write an untrained checkpoint.
    Init {
        #[command(flatten)]
        source: ModelSource,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            source,
            manifest,
            epochs,
            patience,
            out,
        } => {
            let mut cfg = source.resolve()?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
                if cfg.train.patience > e && patience.is_none() {
                    eprintln!("patience {} lowered to --epochs {e}", cfg.train.patience);
                    cfg.train.patience = e;
                }
            }
            if let Some(p) = patience {
                cfg.train.patience = p;
            }
            let o = train(&cfg, &out)?;
            println!(
                "trained {} epochs; best val loss {} at epoch {}{}",
                o.epochs.len(),
                o.best_val_loss,
                o.best_epoch,
                if o.stopped_early { " (early stop)" } else { "" }
            );
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let (s, _) = evaluate(&checkpoint, &manifest, split, &out)?;
            println!("evaluated {} pairs, skipped {}", s.evaluated, s.skipped.len());
            for st in &s.structures {
                if let Some(d) = st.dice {
                    println!("{:<12} dice mean {:.4} median {:.4}", st.structure, d.mean, d.median);
                }
            }
        }
        Command::Register {
            checkpoint,
            fix,
            mov,
            out,
            resize,
        } => {
            let r = register(&checkpoint, &fix, &mov, &out, resize)?;
            println!(
                "mse {:.6} -> {:.6}; inverse residual {:.3e}; jacobian min {:.4}",
                r.mse_identity, r.mse_warped, r.inverse_residual, r.jacobian.min
            );
        }
        Command::Synth {
            n,
            size,
            max_disp,
            seed,
            split,
            out,
        } => {
            let recs = synth(
                &SynthOptions {
                    n_pairs: n,
                    size,
                    max_disp,
                    seed,
                    split,
                },
                &out,
            )?;
            println!("wrote {} pairs and {}", recs.len(), out.join(MANIFEST).display());
        }
        Command::Gradcheck {
            family,
            size,
            dim,
            probes,
            seed,
            inject_fault,
        } => {
            let opts = GradcheckOptions {
                families: family.map(|f| vec![f]).unwrap_or_else(|| Family::ALL.to_vec()),
                size,
                dim,
                probes,
                seed,
                inject_fault,
            };
            let reports = gradcheck(&opts)?;
            let mut failed = Vec::new();
            for (f, r) in &reports {
                let ok = passed(r);
                println!(
                    "{:<10} max_rel_err {:.3e} mean_rel_err {:.3e} {}",
                    f.name(),
                    r.max_rel_err,
                    r.mean_rel_err,
                    if ok { "PASS" } else { "FAIL" }
                );
                if !ok {
                    failed.push(f.name());
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Verification(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                )));
            }
        }
        Command::Preset {
            name,
            image_size,
            manifest,
        } => {
            let mut cfg = RunConfig::from_preset(&name, image_size)?;
            cfg.manifest = manifest;
            println!("{}", cfg.to_json());
        }
        Command::Init { source, out } => {
            let cfg = source.resolve()?;
            cfg.validate()?;
            let model = Model::<f32>::new(&cfg.model)?;
            Checkpoint::from_model(&model).save(&out)?;
            println!("{} parameters -> {}", cfg.model.param_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
