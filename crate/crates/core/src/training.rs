//! Symmetric similarity loss, smoothness regularizer, Adam and pair
//! augmentation. The epoch loop itself lives in the `patchreg` crate.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gradcore::{grad_check, GradCheck, GradCheckReport, ParamSet, Tape, Tensor};
use crate::image::{blur_plane, gaussian_blur, Image};
use crate::models::{Model, ModelConfig, Network, RegistrationNodes};
use crate::real::Real;
use crate::svf::{self, FieldKind, FieldNode, VectorField};
use crate::synth::synth_pair;

/// Chance that each augmentation transform fires for a pair.
pub const APPLY_PROBABILITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerForm {
    /// Mean of `‖∂u/∂x‖² + ‖∂u/∂y‖²`.
    #[default]
    Diffusion,
    /// Mean of `‖∂u/∂x + ∂u/∂y‖²`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub rotation: bool,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub crop: bool,
    /// Smallest crop side as a fraction of the image side.
    pub crop_min_scale: f64,
    pub brightness: bool,
    pub brightness_delta: f64,
    pub contrast: bool,
    pub contrast_range: [f64; 2],
    pub sharpen: bool,
    /// Unsharp-mask amount range.
    pub sharpen_amount: [f64; 2],
    pub blur: bool,
    pub blur_sigma: [f64; 2],
    pub speckle: bool,
    /// Variance of the multiplicative Gaussian noise.
    pub speckle_variance: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation: true,
            rotation_deg: 15.0,
            crop: true,
            crop_min_scale: 0.8,
            brightness: true,
            brightness_delta: 0.2,
            contrast: true,
            contrast_range: [0.8, 1.25],
            sharpen: true,
            sharpen_amount: [0.5, 1.0],
            blur: true,
            blur_sigma: [0.5, 1.5],
            speckle: true,
            speckle_variance: 0.01,
        }
    }
}

impl AugmentationSpec {
    pub fn disabled() -> Self {
        AugmentationSpec {
            rotation: false,
            crop: false,
            brightness: false,
            contrast: false,
            sharpen: false,
            blur: false,
            speckle: false,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.rotation || self.crop || self.brightness || self.contrast || self.sharpen || self.blur || self.speckle
    }
}

fn d_lr() -> f64 {
    1e-4
}
fn d_epochs() -> usize {
    500
}
fn d_patience() -> usize {
    30
}
fn d_lambda() -> f64 {
    0.01
}
fn d_batch() -> usize {
    8
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub regularizer: RegularizerForm,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: d_lr(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            lambda: d_lambda(),
            batch_size: d_batch(),
            seed: 0,
            augmentation: AugmentationSpec::default(),
            precision: Precision::F32,
            regularizer: RegularizerForm::Diffusion,
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return fail("lambda must be positive");
        }
        if self.patience > self.max_epochs {
            return fail("patience exceeds max_epochs");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return fail("Adam betas must lie in [0,1) and eps must be positive");
        }
        Ok(())
    }
}

/// Mean squared difference of two same-shape tensors.
pub fn mse<T: Real>(tape: &mut Tape<T>, a: Tensor, b: Tensor) -> Result<Tensor> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Forward differences along x and y of a `[2,h,w]` field, with the last
/// column (x) and last row (y) clamped so their difference is zero.
fn forward_differences<T: Real>(tape: &mut Tape<T>, f: FieldNode) -> Result<(Tensor, Tensor)> {
    let (h, w) = (f.height, f.width);
    let mut right = Vec::with_capacity(2 * h * w);
    let mut down = Vec::with_capacity(2 * h * w);
    for c in 0..2 {
        for i in 0..h {
            for j in 0..w {
                right.push((c * h + i) * w + (j + 1).min(w - 1));
                down.push((c * h + (i + 1).min(h - 1)) * w + j);
            }
        }
    }
    let shape = [2, h, w];
    let r = tape.gather(f.tensor, Arc::from(right), shape)?;
    let d = tape.gather(f.tensor, Arc::from(down), shape)?;
    let dx = tape.sub(r, f.tensor)?;
    let dy = tape.sub(d, f.tensor)?;
    Ok((dx, dy))
}

/// Smoothness penalty, normalised by the pixel count `h·w`.
pub fn diffusion_regularizer<T: Real>(tape: &mut Tape<T>, disp: FieldNode, form: RegularizerForm) -> Result<Tensor> {
    if disp.height == 0 || disp.width == 0 {
        return dim_err(
            "diffusion_regularizer",
            format!("empty {}x{} field", disp.height, disp.width),
        );
    }
    let (dx, dy) = forward_differences(tape, disp)?;
    let per_channel = match form {
        RegularizerForm::Diffusion => {
            let a = tape.square(dx);
            let b = tape.square(dy);
            tape.add(a, b)?
        }
        RegularizerForm::Literal => {
            let s = tape.add(dx, dy)?;
            tape.square(s)
        }
    };
    let total = tape.sum(per_channel);
    Ok(tape.scale(total, T::one() / T::of((disp.height * disp.width) as f64)))
}

/// Value-level [`diffusion_regularizer`].
pub fn regularizer_value<T: Real>(disp: &VectorField<T>, form: RegularizerForm) -> Result<f64> {
    let mut tape = Tape::new();
    let n = disp.to_tape(&mut tape);
    let r = diffusion_regularizer(&mut tape, n, form)?;
    Ok(tape.scalar(r).f64())
}

/// Loss terms as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Tensor,
    pub forward_mse: Tensor,
    pub inverse_mse: Tensor,
    pub regularizer: Tensor,
}

/// Loss term values.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub forward_mse: f64,
    pub inverse_mse: f64,
    pub regularizer: f64,
}

impl LossTerms {
    pub fn add_scaled(&mut self, other: &LossTerms, k: f64) {
        self.total += k * other.total;
        self.forward_mse += k * other.forward_mse;
        self.inverse_mse += k * other.inverse_mse;
        self.regularizer += k * other.regularizer;
    }
}

impl LossNodes {
    pub fn read<T: Real>(&self, tape: &Tape<T>) -> LossTerms {
        LossTerms {
            total: tape.scalar(self.total).f64(),
            forward_mse: tape.scalar(self.forward_mse).f64(),
            inverse_mse: tape.scalar(self.inverse_mse).f64(),
            regularizer: tape.scalar(self.regularizer).f64(),
        }
    }
}

/// `mse(warp(mov, u), fix) + mse(warp(fix, u⁻¹), mov) + λ·reg(u)` with
/// `u = forward`, `u⁻¹ = inverse`.
pub fn symmetric_loss<T: Real>(
    tape: &mut Tape<T>,
    fix: Tensor,
    mov: Tensor,
    forward: FieldNode,
    inverse: FieldNode,
    lambda: f64,
    form: RegularizerForm,
) -> Result<LossNodes> {
    let warped_mov = svf::warp_image(tape, mov, forward)?;
    let warped_fix = svf::warp_image(tape, fix, inverse)?;
    let forward_mse = mse(tape, warped_mov, fix)?;
    let inverse_mse = mse(tape, warped_fix, mov)?;
    let regularizer = diffusion_regularizer(tape, forward, form)?;
    let data = tape.add(forward_mse, inverse_mse)?;
    let weighted = tape.scale(regularizer, T::of(lambda));
    let total = tape.add(data, weighted)?;
    Ok(LossNodes {
        total,
        forward_mse,
        inverse_mse,
        regularizer,
    })
}

/// Value-level [`symmetric_loss`] with explicit displacement fields.
pub fn loss_value<T: Real>(
    fix: &Image<T>,
    mov: &Image<T>,
    forward: &VectorField<T>,
    inverse: &VectorField<T>,
    lambda: f64,
    form: RegularizerForm,
) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let f = tape.constant([fix.height, fix.width], fix.data.clone())?;
    let m = tape.constant([mov.height, mov.width], mov.data.clone())?;
    let u = forward.to_tape(&mut tape);
    let ui = inverse.to_tape(&mut tape);
    let l = symmetric_loss(&mut tape, f, m, u, ui, lambda, form)?;
    Ok(l.read(&tape))
}

/// Builds the full loss graph for one pair.
pub fn pair_loss<T: Real>(
    tape: &mut Tape<T>,
    net: &Network,
    ps: &ParamSet<T>,
    fix: &Image<T>,
    mov: &Image<T>,
    cfg: &TrainConfig,
) -> Result<(LossNodes, RegistrationNodes)> {
    let (f, m, reg) = net.register_images(tape, ps, fix, mov)?;
    let loss = symmetric_loss(tape, f, m, reg.forward, reg.inverse, cfg.lambda, cfg.regularizer)?;
    Ok((loss, reg))
}

/// Loss and per-parameter gradients for one pair (see
/// [`ParamSet::extract_grads`] for the buffer layout).
pub fn pair_gradients<T: Real>(
    net: &Network,
    ps: &ParamSet<T>,
    fix: &Image<T>,
    mov: &Image<T>,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let (loss, _) = pair_loss(&mut tape, net, ps, fix, mov, cfg)?;
    let terms = loss.read(&tape);
    if !terms.total.is_finite() {
        return Ok((terms, Vec::new()));
    }
    tape.backward(loss.total)?;
    Ok((terms, ps.extract_grads(&tape)))
}

/// Forward-only loss for one pair.
pub fn pair_loss_value<T: Real>(
    net: &Network,
    ps: &ParamSet<T>,
    fix: &Image<T>,
    mov: &Image<T>,
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let (loss, _) = pair_loss(&mut tape, net, ps, fix, mov, cfg)?;
    Ok(loss.read(&tape))
}

/// One optimizer step on the mean loss over `pairs`, gradients summed in
/// pair order. Returns the mean loss terms before the update.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    opt: &mut Adam,
    pairs: &[(&Image<T>, &Image<T>)],
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    let per_pair = pairs
        .iter()
        .map(|(fix, mov)| pair_gradients(&model.net, &model.params, fix, mov, cfg))
        .collect::<Result<Vec<_>>>()?;
    apply_gradients(model, opt, &per_pair)
}

/// Averages per-pair gradients (in slice order) into the parameters' grad
/// slots and takes one Adam step. Fails on any non-finite loss before
/// touching the parameters.
pub fn apply_gradients<T: Real>(
    model: &mut Model<T>,
    opt: &mut Adam,
    per_pair: &[(LossTerms, Vec<Vec<T>>)],
) -> Result<LossTerms> {
    if per_pair.is_empty() {
        return Err(Error::Config("train_step needs at least one pair".into()));
    }
    if let Some((k, (terms, _))) = per_pair.iter().enumerate().find(|(_, (t, _))| !t.total.is_finite()) {
        return Err(Error::Contract(format!("non-finite loss {} at pair {k}", terms.total)));
    }
    let n = per_pair.len();
    let scale = T::one() / T::of(n as f64);
    let mut mean = LossTerms::default();
    model.params.zero_grad();
    for (terms, grads) in per_pair {
        model.params.accumulate_dense(grads, scale)?;
        mean.add_scaled(terms, 1.0 / n as f64);
    }
    opt.step(&mut model.params)?;
    model.params.zero_grad();
    Ok(mean)
}

/// Std of the noise added to freshly initialised parameters before a
/// gradient check, so the zero velocity head does not mask every gradient.
pub const CHECK_PERTURBATION: f64 = 0.05;

/// Finite-difference check of the full symmetric loss in 64-bit on one
/// synthetic pair at the model's image size.
pub fn model_grad_check(config: &ModelConfig, check: &GradCheck) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::new(config)?;
    model.params.perturb(config.seed ^ 0x5eed, CHECK_PERTURBATION);
    let size = config.image_size;
    let pair = synth_pair::<f64>(config.seed, size, size as f64 / 16.0)?;
    let cfg = TrainConfig::default();
    let net = model.net.clone();
    grad_check(
        |tape, ps| pair_loss(tape, &net, ps, &pair.fix, &pair.mov, &cfg).map(|(l, _)| l.total),
        &mut model.params,
        check,
    )
}

/// Adam with bias correction. Moments are kept in f64 whatever the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Adam::with(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }

    /// One update from the accumulated gradients. The caller zeroes them.
    pub fn step<T: Real>(&mut self, ps: &mut ParamSet<T>) -> Result<()> {
        if !ps.has_grad() {
            return Err(Error::Contract("adam step without accumulated gradients".into()));
        }
        if self.m.is_empty() {
            self.m = ps.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != ps.len() {
            return Err(Error::Contract(format!(
                "optimizer state for {} parameters, set has {}",
                self.m.len(),
                ps.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for ((p, m), v) in ps.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.data.len() {
                let g = p.grad[k].f64();
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                let x = p.data[k].f64() - self.lr * mh / (libm::sqrt(vh) + self.eps);
                p.data[k] = T::of(x);
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn fires<R: Rng>(rng: &mut R, enabled: bool) -> bool {
    // The coin is always drawn so that toggling one transform does not
    // shift the random stream of the others.
    let coin = rng.random::<f64>();
    enabled && coin < APPLY_PROBABILITY
}

/// Resample `img` at `src(i, j)` (absolute pixel coordinates).
fn remap(img: &Image<f64>, src: impl Fn(f64, f64) -> (f64, f64)) -> Image<f64> {
    let disp = VectorField::from_fn(img.height, img.width, FieldKind::Displacement, |i, j| {
        let (sx, sy) = src(i as f64, j as f64);
        (sx - j as f64, sy - i as f64)
    });
    svf::warp(img, &disp).expect("displacement built on the image grid")
}

fn map_pixels(img: &mut Image<f64>, f: impl Fn(f64) -> f64) {
    img.data.iter_mut().for_each(|v| *v = f(*v));
}

fn mean(img: &Image<f64>) -> f64 {
    img.data.iter().sum::<f64>() / img.data.len().max(1) as f64
}

/// Applies the same randomly drawn transforms to both images.
pub fn augment_pair<T: Real, R: Rng>(
    fix: &Image<T>,
    mov: &Image<T>,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Result<(Image<T>, Image<T>)> {
    if !fix.same_size(mov) {
        return dim_err(
            "augment_pair",
            format!("{}x{} vs {}x{}", fix.height, fix.width, mov.height, mov.width),
        );
    }
    if !spec.any_enabled() {
        return Ok((fix.clone(), mov.clone()));
    }
    let (h, w) = (fix.height, fix.width);
    let mut pair = [fix.cast::<f64>(), mov.cast::<f64>()];

    if fires(rng, spec.rotation) {
        let theta = uniform(rng, -spec.rotation_deg, spec.rotation_deg).to_radians();
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        for img in &mut pair {
            *img = remap(img, |i, j| {
                let (y, x) = (i - cy, j - cx);
                (c * x + s * y + cx, -s * x + c * y + cy)
            });
        }
    }
    if fires(rng, spec.crop) {
        let scale = uniform(rng, spec.crop_min_scale, 1.0);
        let top = uniform(rng, 0.0, (1.0 - scale) * (h as f64 - 1.0));
        let left = uniform(rng, 0.0, (1.0 - scale) * (w as f64 - 1.0));
        for img in &mut pair {
            *img = remap(img, |i, j| (left + j * scale, top + i * scale));
        }
    }
    if fires(rng, spec.brightness) {
        let delta = uniform(rng, -spec.brightness_delta, spec.brightness_delta);
        pair.iter_mut().for_each(|img| map_pixels(img, |v| v + delta));
    }
    if fires(rng, spec.contrast) {
        let k = uniform(rng, spec.contrast_range[0], spec.contrast_range[1]);
        for img in &mut pair {
            let mu = mean(img);
            map_pixels(img, |v| (v - mu) * k + mu);
        }
    }
    if fires(rng, spec.sharpen) {
        let amount = uniform(rng, spec.sharpen_amount[0], spec.sharpen_amount[1]);
        for img in &mut pair {
            let soft = gaussian_blur(img, 1.0);
            for (v, s) in img.data.iter_mut().zip(&soft.data) {
                *v += amount * (*v - s);
            }
        }
    }
    if fires(rng, spec.blur) {
        let sigma = uniform(rng, spec.blur_sigma[0], spec.blur_sigma[1]);
        for img in &mut pair {
            img.data = blur_plane(&img.data, h, w, sigma);
        }
    }
    if fires(rng, spec.speckle) {
        let normal = Normal::new(0.0, libm::sqrt(spec.speckle_variance.max(0.0)))
            .map_err(|e| Error::Config(format!("speckle variance: {e}")))?;
        let noise: Vec<f64> = (0..h * w).map(|_| normal.sample(rng)).collect();
        for img in &mut pair {
            for (v, n) in img.data.iter_mut().zip(&noise) {
                *v *= 1.0 + n;
            }
        }
    }
    let [mut a, mut b] = pair;
    a.clamp01();
    b.clamp01();
    Ok((a.cast(), b.cast()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(size: usize, k: f64) -> Image<f64> {
        Image::from_fn(size, size, |i, j| {
            0.5 + 0.4 * libm::sin(i as f64 * 0.3 + j as f64 * 0.2 + k)
        })
    }

    #[test]
    fn loss_zero_at_identity() {
        let a = img(16, 0.0);
        let z = VectorField::zeros(16, 16, FieldKind::Displacement);
        let l = loss_value(&a, &a, &z, &z, 0.01, RegularizerForm::Diffusion).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn linear_field_regularizer() {
        let (h, w) = (12, 10);
        let f = VectorField::<f64>::from_fn(h, w, FieldKind::Displacement, |_, j| (0.1 * j as f64, 0.0));
        let r = regularizer_value(&f, RegularizerForm::Diffusion).unwrap();
        let expect = 0.01 * (w - 1) as f64 / w as f64;
        assert!((r - expect).abs() < 1e-6, "{r} vs {expect}");
        let c = VectorField::<f64>::constant(h, w, FieldKind::Displacement, 0.3, -1.0);
        assert_eq!(regularizer_value(&c, RegularizerForm::Diffusion).unwrap(), 0.0);
        assert_eq!(regularizer_value(&c, RegularizerForm::Literal).unwrap(), 0.0);
    }

    #[test]
    fn adam_single_step_and_zero_gradient() {
        let mut ps = ParamSet::<f64>::new(0);
        let id = ps.add("p", [1], crate::gradcore::Init::Zeros).unwrap();
        ps.get_mut(id).data[0] = 1.0;
        ps.get_mut(id).grad[0] = 1.0;
        ps.accumulate_dense(&[vec![0.0]], 1.0).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(&mut ps).unwrap();
        assert!((ps.get(id).data[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);

        ps.zero_grad();
        ps.accumulate_dense(&[vec![0.0]], 1.0).unwrap();
        let before = ps.get(id).data[0];
        let (m0, v0) = (opt.m[0][0], opt.v[0][0]);
        opt.step(&mut ps).unwrap();
        assert_eq!(opt.m[0][0], 0.9 * m0);
        assert_eq!(opt.v[0][0], 0.999 * v0);
        // Zero new gradient still moves p through the retained momentum; the
        // zero-gradient case proper starts from fresh moments.
        assert!(ps.get(id).data[0] < before);

        let mut fresh = ParamSet::<f64>::new(0);
        let q = fresh.add("q", [3], crate::gradcore::Init::Zeros).unwrap();
        fresh.get_mut(q).data.copy_from_slice(&[0.5, -1.0, 2.0]);
        fresh.accumulate_dense(&[vec![0.0; 3]], 1.0).unwrap();
        Adam::new(0.1).step(&mut fresh).unwrap();
        assert_eq!(fresh.get(q).data, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn adam_requires_gradients() {
        let mut ps = ParamSet::<f64>::new(0);
        ps.add("p", [1], crate::gradcore::Init::Zeros).unwrap();
        assert!(matches!(Adam::new(0.1).step(&mut ps), Err(Error::Contract(_))));
    }

    #[test]
    fn augmentation_rules() {
        let (a, b) = (img(24, 0.0), img(24, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = augment_pair(&a, &b, &AugmentationSpec::disabled(), &mut rng).unwrap();
        assert_eq!((x, y), (a.clone(), b.clone()));
        for seed in 0..20 {
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let (x1, y1) = augment_pair(&a, &a, &AugmentationSpec::default(), &mut r1).unwrap();
            let (x2, y2) = augment_pair(&a, &a, &AugmentationSpec::default(), &mut r2).unwrap();
            assert_eq!(x1, y1);
            assert_eq!((x1, y1), (x2, y2));
        }
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig {
            patience: 600,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
