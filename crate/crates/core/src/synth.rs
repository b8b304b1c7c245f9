//! Procedural echo-like image pairs with a known, folding-free deformation.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{blur_plane, labels, Image, LabelMask};
use crate::metrics::warp_mask;
use crate::real::Real;
use crate::svf::{self, FieldKind, VectorField};

/// Gaussian-smoothed white noise, rescaled so its largest vector has length
/// `max_mag`. Returned as a velocity field. The noise is drawn on a grid
/// padded by `3σ` and cropped after blurring so the field statistics do not
/// depend on the distance to the border.
pub fn random_smooth_field<T: Real, R: Rng>(
    rng: &mut R,
    height: usize,
    width: usize,
    sigma: f64,
    max_mag: f64,
) -> VectorField<T> {
    let pad = libm::ceil(3.0 * sigma) as usize;
    let (ph, pw) = (height + 2 * pad, width + 2 * pad);
    let mut plane = || {
        let raw: Vec<f64> = (0..ph * pw).map(|_| StandardNormal.sample(rng)).collect();
        let smooth = blur_plane(&raw, ph, pw, sigma);
        let mut out = Vec::with_capacity(height * width);
        for i in 0..height {
            out.extend_from_slice(&smooth[(i + pad) * pw + pad..(i + pad) * pw + pad + width]);
        }
        out
    };
    let sx = plane();
    let sy = plane();
    let peak = sx.iter().zip(&sy).map(|(a, b)| libm::hypot(*a, *b)).fold(0.0, f64::max);
    let k = if peak > 0.0 { max_mag / peak } else { 0.0 };
    let data = sx.iter().chain(&sy).map(|&v| T::of(v * k)).collect();
    VectorField {
        height,
        width,
        kind: FieldKind::Velocity,
        data,
    }
}

/// Synthetic registration pair: `mov = warp(fix, gt_disp)` and
/// `mov_mask = warp_mask(fix_mask, gt_disp)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair<T> {
    pub fix: Image<T>,
    pub mov: Image<T>,
    pub gt_disp: VectorField<T>,
    pub fix_mask: LabelMask,
    pub mov_mask: LabelMask,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, i: f64, j: f64) -> bool {
        let dy = (i - self.cy) / self.ry;
        let dx = (j - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Echo-like anatomy: dark LV cavity, bright myocardial ring, dark atrium
/// below it, mid-gray tissue, multiplicative speckle.
pub fn phantom(rng: &mut ChaCha8Rng, size: usize) -> (Vec<f64>, LabelMask) {
    let s = size as f64;
    let jitter = |rng: &mut ChaCha8Rng, v: f64| v * (1.0 + rng.random_range(-0.05..0.05));
    let cavity = Ellipse {
        cy: jitter(rng, 0.38 * s),
        cx: jitter(rng, 0.5 * s),
        ry: jitter(rng, 0.2 * s),
        rx: jitter(rng, 0.14 * s),
    };
    let wall = 0.09 * s;
    let epi = Ellipse {
        ry: cavity.ry + wall,
        rx: cavity.rx + wall,
        ..cavity
    };
    let atrium = Ellipse {
        cy: jitter(rng, 0.8 * s),
        cx: jitter(rng, 0.5 * s),
        ry: 0.11 * s,
        rx: 0.14 * s,
    };

    let mut mask = LabelMask::zeros(size, size);
    let mut base = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64, j as f64);
            let (label, v) = if cavity.contains(y, x) {
                (labels::LV_ENDO, 0.08)
            } else if epi.contains(y, x) {
                (labels::MYOCARDIUM, 0.8)
            } else if atrium.contains(y, x) {
                (labels::LEFT_ATRIUM, 0.1)
            } else {
                (labels::BACKGROUND, 0.3 + 0.1 * y / s)
            };
            mask.data[i * size + j] = label;
            base.push(v);
        }
    }
    let soft = blur_plane(&base, size, size, 1.0);
    let noise: Vec<f64> = (0..size * size).map(|_| StandardNormal.sample(rng)).collect();
    let speckle = blur_plane(&noise, size, size, 0.7);
    let sd = libm::sqrt(speckle.iter().map(|v| v * v).sum::<f64>() / speckle.len() as f64).max(1e-12);
    let img = soft
        .iter()
        .zip(&speckle)
        .map(|(&v, &n)| (v * (1.0 + 0.1 * n / sd)).clamp(0.0, 1.0))
        .collect();
    (img, mask)
}

pub fn synth_pair<T: Real>(seed: u64, size: usize, max_disp: f64) -> Result<SynthPair<T>> {
    if size < 16 {
        return Err(Error::Contract(format!("synthetic size {size} is below 16")));
    }
    if !(0.0..size as f64 / 8.0).contains(&max_disp) {
        return Err(Error::Contract(format!(
            "max displacement {max_disp} must lie in [0, {})",
            size as f64 / 8.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img, fix_mask) = phantom(&mut rng, size);
    let fix: Image<T> = Image::new(size, size, img)?.cast();

    let v: VectorField<T> = random_smooth_field(&mut rng, size, size, size as f64 / 8.0, max_disp);
    let mut disp = VectorField::zeros(size, size, FieldKind::Displacement);
    if max_disp > 0.0 {
        let mut target = max_disp;
        loop {
            let u = svf::exp_field(&v.scaled(T::of(target / max_disp)), svf::DEFAULT_STEPS)?;
            let u = u.scaled(T::of(target / u.max_magnitude()));
            let jac = svf::jacobian_determinant(&u)?;
            if jac.data.iter().all(|&j| j > 0.0) {
                disp = u;
                break;
            }
            target *= 0.8;
        }
    }
    let mov = svf::warp(&fix, &disp)?;
    let mov_mask = warp_mask(&fix_mask, &disp)?;
    Ok(SynthPair {
        fix,
        mov,
        gt_disp: disp,
        fix_mask,
        mov_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;

    #[test]
    fn zero_displacement_gives_identical_images() {
        let p = synth_pair::<f64>(5, 32, 0.0).unwrap();
        assert_eq!(p.fix, p.mov);
        assert!(p.gt_disp.data.iter().all(|&v| v == 0.0));
        assert_eq!(p.fix_mask, p.mov_mask);
    }

    #[test]
    fn generated_flow_is_folding_free_and_bounded() {
        for seed in 0..100 {
            let p = synth_pair::<f64>(seed, 64, 3.0).unwrap();
            let jac = svf::jacobian_determinant(&p.gt_disp).unwrap();
            let min = jac.data.iter().copied().fold(f64::MAX, f64::min);
            assert!(min > 0.0, "seed {seed}: min J {min}");
            assert!(p.gt_disp.max_magnitude() <= 3.0 + 1e-9);
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let a = synth_pair::<f32>(11, 32, 2.0).unwrap();
        let b = synth_pair::<f32>(11, 32, 2.0).unwrap();
        assert_eq!(a, b);
        let warped = svf::warp(&a.fix, &a.gt_disp).unwrap();
        assert_eq!(warped, a.mov);
        let wm = warp_mask(&a.fix_mask, &a.gt_disp).unwrap();
        for l in labels::STRUCTURES {
            assert_eq!(dice(&wm, &a.mov_mask, l), 1.0);
            assert!(a.fix_mask.count(l) > 0);
        }
    }

    #[test]
    fn preconditions() {
        assert!(synth_pair::<f64>(0, 8, 0.5).is_err());
        assert!(synth_pair::<f64>(0, 32, 4.0).is_err());
    }
}
