use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Fault, Tape, Tensor};
use crate::error::Result;
use crate::real::Real;

/// Finite-difference gradient check settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub n_probes: usize,
    pub step: f64,
    pub seed: u64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            n_probes: 10,
            step: 1e-5,
            seed: 0,
            floor: 1e-8,
            fault: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub param: ParamId,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub probes: Vec<Probe>,
}

/// Compare analytic gradients of the scalar `f` against central finite
/// differences on `cfg.n_probes` coordinates drawn uniformly over all
/// scalars of `params`. Gradient slots of `params` are left zeroed.
pub fn grad_check<T, F>(mut f: F, params: &mut ParamSet<T>, cfg: &GradCheck) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &ParamSet<T>) -> Result<Tensor>,
{
    params.zero_grad();
    let mut tape = Tape::with_fault(cfg.fault);
    let root = f(&mut tape, params)?;
    tape.backward(root)?;
    params.accumulate(&tape);
    drop(tape);

    let sizes: Vec<usize> = params.iter().map(|(_, p)| p.data.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probes = Vec::with_capacity(cfg.n_probes);
    let h = T::of(cfg.step);

    let mut eval = |params: &ParamSet<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(&mut tape, params)?;
        Ok(tape.scalar(root).f64())
    };

    for _ in 0..cfg.n_probes.max(1) {
        let mut flat = rng.random_range(0..total.max(1));
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let id = ParamId(pi);
        let analytic = params.get(id).grad[flat].f64();
        let orig = params.get(id).data[flat];

        params.get_mut(id).data[flat] = orig + h;
        let fp = eval(params)?;
        params.get_mut(id).data[flat] = orig - h;
        let fm = eval(params)?;
        params.get_mut(id).data[flat] = orig;

        // Divide by the step actually realised in this precision.
        let realised = (orig + h).f64() - (orig - h).f64();
        let numeric = (fp - fm) / realised;
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        probes.push(Probe {
            param: id,
            offset: flat,
            analytic,
            numeric,
            rel_err: (analytic - numeric).abs() / denom,
        });
    }
    params.zero_grad();

    let max_rel_err = probes.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    let mean_rel_err = probes.iter().map(|p| p.rel_err).sum::<f64>() / probes.len() as f64;
    Ok(GradCheckReport {
        max_rel_err,
        mean_rel_err,
        probes,
    })
}
