//! Finite-difference gradient check of whole models at desk scale.

use patchreg_core::gradcore::{Fault, GradCheck};
use patchreg_core::training::model_grad_check;
use patchreg_core::{Family, GradCheckReport, ModelConfig};

use crate::error::{CliError, Result};

/// A family passes when every probed relative error is below this.
pub const TOLERANCE: f64 = 1e-4;
pub const MAX_SIZE: usize = 64;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub families: Vec<Family>,
    pub size: usize,
    pub dim: usize,
    pub probes: usize,
    pub seed: u64,
    pub inject_fault: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            families: Family::ALL.to_vec(),
            size: 32,
            dim: 16,
            probes: 10,
            seed: 0,
            inject_fault: false,
        }
    }
}

pub fn check_config(family: Family, size: usize, dim: usize, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::desk(family, size);
    cfg.dim = dim;
    cfg.seed = seed;
    cfg
}

pub fn gradcheck(opts: &GradcheckOptions) -> Result<Vec<(Family, GradCheckReport)>> {
    if opts.size > MAX_SIZE {
        return Err(CliError::Usage(format!("--size {} exceeds {MAX_SIZE}", opts.size)));
    }
    if opts.probes == 0 {
        return Err(CliError::Usage("--probes must be positive".into()));
    }
    let check = GradCheck {
        n_probes: opts.probes,
        seed: opts.seed,
        fault: opts.inject_fault.then_some(Fault::GeluSign),
        ..GradCheck::default()
    };
    opts.families
        .iter()
        .map(|&f| {
            let cfg = check_config(f, opts.size, opts.dim, opts.seed);
            cfg.validate()?;
            Ok((f, model_grad_check(&cfg, &check)?))
        })
        .collect()
}

pub fn passed(report: &GradCheckReport) -> bool {
    report.max_rel_err < TOLERANCE
}
