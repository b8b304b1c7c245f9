//! Single-pair registration with field and image outputs.

use std::fs;
use std::path::Path;

use patchreg_core::image::resize_image;
use patchreg_core::metrics::jacobian_stats;
use patchreg_core::svf::{compose, warp};
use patchreg_core::{Image, LabelMask, RegistrationResult};
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_model;
use crate::error::{CliError, Result};
use crate::field_io::{write_field, Dtype};
use crate::pgm;

/// Pixels excluded at each edge when measuring the inverse residual, where
/// clamped sampling breaks the group property.
pub const RESIDUAL_BORDER: usize = 2;

pub mod artifacts {
    pub const FORWARD: &str = "disp_forward.prgf";
    pub const INVERSE: &str = "disp_inverse.prgf";
    pub const WARPED: &str = "warped.pgm";
    pub const REPORT: &str = "report.json";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub neg_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterReport {
    pub image_size: usize,
    pub resized: bool,
    /// MSE between fixed and moving before registration.
    pub mse_identity: f64,
    /// MSE between fixed and the warped moving image.
    pub mse_warped: f64,
    pub max_displacement: f64,
    /// Mean magnitude of `compose(inverse, forward)` away from the border.
    pub inverse_residual: f64,
    pub jacobian: JacobianReport,
}

/// Mean displacement magnitude of `compose(inv, fwd)` over the interior.
pub fn inverse_residual(res: &RegistrationResult<f32>) -> Result<f64> {
    let c = compose(&res.disp_inverse, &res.disp_forward)?;
    let b = RESIDUAL_BORDER;
    let (h, w) = (c.height, c.width);
    if h <= 2 * b || w <= 2 * b {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in b..h - b {
        for j in b..w - b {
            sum += c.magnitude(i, j);
        }
    }
    Ok(sum / ((h - 2 * b) * (w - 2 * b)) as f64)
}

pub fn register(
    checkpoint: &Path,
    fix_path: &Path,
    mov_path: &Path,
    out: &Path,
    resize: bool,
) -> Result<RegisterReport> {
    let model = load_model::<f32>(checkpoint)?;
    let size = model.config().image_size;
    let fix = pgm::read_pgm(fix_path)?;
    let mov = pgm::read_pgm(mov_path)?;
    let fits = |img: &Image<f64>| img.height == size && img.width == size;
    let resized = !(fits(&fix) && fits(&mov));
    if resized && !resize {
        return Err(CliError::Usage(format!(
            "images are {}x{} and {}x{} but the model expects {size}x{size}; pass --resize to resample",
            fix.height, fix.width, mov.height, mov.width
        )));
    }
    let (fix, mov) = if resized {
        (resize_image(&fix, size)?, resize_image(&mov, size)?)
    } else {
        (fix, mov)
    };
    let (fix32, mov32): (Image<f32>, Image<f32>) = (fix.cast(), mov.cast());
    let res = model.register(&fix32, &mov32)?;
    let warped = warp(&mov32, &res.disp_forward)?;
    let all = LabelMask::new(size, size, vec![1; size * size])?;
    let jac = jacobian_stats(&res.disp_forward, &all, 1)?.expect("non-empty roi");
    let report = RegisterReport {
        image_size: size,
        resized,
        mse_identity: fix32.mse(&mov32)?,
        mse_warped: fix32.mse(&warped)?,
        max_displacement: res.disp_forward.max_magnitude(),
        inverse_residual: inverse_residual(&res)?,
        jacobian: JacobianReport {
            mean: jac.mean,
            std: jac.std,
            min: jac.min,
            neg_frac: jac.neg_frac,
        },
    };

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_field(&res.disp_forward, Dtype::F32, &out.join(artifacts::FORWARD))?;
    write_field(&res.disp_inverse, Dtype::F32, &out.join(artifacts::INVERSE))?;
    pgm::write_pgm(&warped.cast(), &out.join(artifacts::WARPED))?;
    let path = out.join(artifacts::REPORT);
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
