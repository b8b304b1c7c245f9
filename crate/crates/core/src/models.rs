//! The PureMLP, MLPMixer and SwinTrans registration networks.
//!
//! A network is one or more single-scale children. Each child embeds both
//! images with shared weights, runs the same extractor blocks over each
//! stream, fuses the two streams and predicts a velocity on its token grid.
//! Children are combined by a weighted sum at the finest child grid, then
//! integrated and upsampled to image resolution.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::blocks::{
    transpose_index, LinearParams, MixerBlock, MlpBlock, PatchEmbed, SwinCrossBlock, TokenMap, INIT_STD,
};
use crate::error::{dim_err, Error, Result};
use crate::gradcore::{Init, ParamId, ParamSet, Tape, Tensor};
use crate::image::Image;
use crate::real::Real;
use crate::svf::{self, FieldKind, FieldNode, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PureMlp,
    MlpMixer,
    SwinTrans,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::PureMlp, Family::MlpMixer, Family::SwinTrans];

    pub fn name(self) -> &'static str {
        match self {
            Family::PureMlp => "pure_mlp",
            Family::MlpMixer => "mlp_mixer",
            Family::SwinTrans => "swin_trans",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// One single-scale child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub patch: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    pub weight: f64,
}

impl ScaleConfig {
    pub fn plain(patch: usize, weight: f64) -> Self {
        ScaleConfig {
            patch,
            window: None,
            heads: None,
            weight,
        }
    }

    pub fn swin(patch: usize, window: usize, heads: usize, weight: f64) -> Self {
        ScaleConfig {
            patch,
            window: Some(window),
            heads: Some(heads),
            weight,
        }
    }
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_token_hidden_ratio() -> f64 {
    0.5
}

fn default_depth() -> usize {
    4
}

fn default_image_size() -> usize {
    128
}

fn default_steps() -> usize {
    svf::DEFAULT_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub scales: Vec<ScaleConfig>,
    pub dim: usize,
    #[serde(default = "default_depth")]
    pub depth_extract: usize,
    #[serde(default = "default_depth")]
    pub depth_cross: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_steps")]
    pub integration_steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Hidden width of every per-token MLP, as a multiple of `dim`.
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Hidden width of the Mixer token MLP, as a fraction of the token count.
    #[serde(default = "default_token_hidden_ratio")]
    pub token_hidden_ratio: f64,
}

/// Names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 6] = [
    "pure_mlp_s",
    "pure_mlp_m",
    "mlp_mixer_s",
    "mlp_mixer_m",
    "swin_trans_s",
    "swin_trans_m",
];

impl ModelConfig {
    fn base(family: Family, scales: Vec<ScaleConfig>) -> Self {
        ModelConfig {
            family,
            scales,
            dim: 128,
            depth_extract: 4,
            depth_cross: 4,
            image_size: 128,
            integration_steps: svf::DEFAULT_STEPS,
            seed: 0,
            mlp_ratio: 4,
            token_hidden_ratio: 0.5,
        }
    }

    /// Single-scale preset at 128² with 4×4 patches.
    pub fn single(family: Family) -> Self {
        let scale = match family {
            Family::SwinTrans => ScaleConfig::swin(4, 8, 32, 1.0),
            _ => ScaleConfig::plain(4, 1.0),
        };
        Self::base(family, vec![scale])
    }

    /// Three-child preset: patches 4, 8, 16 weighted 0.5, 0.3, 0.2.
    pub fn multi(family: Family) -> Self {
        let scales = match family {
            Family::SwinTrans => vec![
                ScaleConfig::swin(4, 8, 32, 0.5),
                ScaleConfig::swin(8, 4, 16, 0.3),
                ScaleConfig::swin(16, 2, 8, 0.2),
            ],
            _ => vec![
                ScaleConfig::plain(4, 0.5),
                ScaleConfig::plain(8, 0.3),
                ScaleConfig::plain(16, 0.2),
            ],
        };
        Self::base(family, scales)
    }

    pub fn preset(name: &str) -> Option<Self> {
        let (fam, size) = name.rsplit_once('_')?;
        let family = Family::parse(fam)?;
        match size {
            "s" => Some(Self::single(family)),
            "m" => Some(Self::multi(family)),
            _ => None,
        }
    }

    /// Small single-scale network for tests and gradient checks: dim 16,
    /// one block per stage, 4×4 patches, Swin window 4 with 4 heads.
    pub fn desk(family: Family, image_size: usize) -> Self {
        let scale = match family {
            Family::SwinTrans => ScaleConfig::swin(4, 4, 4, 1.0),
            _ => ScaleConfig::plain(4, 1.0),
        };
        ModelConfig {
            dim: 16,
            depth_extract: 1,
            depth_cross: 1,
            image_size,
            ..Self::base(family, vec![scale])
        }
    }

    pub fn token_hidden(&self, tokens: usize) -> usize {
        (libm::round(tokens as f64 * self.token_hidden_ratio) as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scales.is_empty() {
            return bad("model needs at least one scale".into());
        }
        if self.dim == 0 || self.mlp_ratio == 0 || self.integration_steps == 0 {
            return bad("dim, mlp_ratio and integration_steps must be positive".into());
        }
        if !(self.token_hidden_ratio.is_finite() && self.token_hidden_ratio > 0.0) {
            return bad(format!(
                "token_hidden_ratio {} must be positive",
                self.token_hidden_ratio
            ));
        }
        let total: f64 = self.scales.iter().map(|s| s.weight).sum();
        if self.scales.iter().any(|s| !(s.weight.is_finite() && s.weight >= 0.0)) || total <= 0.0 {
            return bad("scale weights must be non-negative with a positive sum".into());
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.patch == 0 || !self.image_size.is_multiple_of(s.patch) {
                return bad(format!(
                    "scale {i}: patch {} does not divide image size {}",
                    s.patch, self.image_size
                ));
            }
            let grid = self.image_size / s.patch;
            match (self.family, s.window, s.heads) {
                (Family::SwinTrans, Some(w), Some(h)) => {
                    if w == 0 || !grid.is_multiple_of(w) {
                        return bad(format!("scale {i}: window {w} does not divide token grid {grid}"));
                    }
                    if h == 0 || !self.dim.is_multiple_of(h) {
                        return bad(format!("scale {i}: {h} heads do not divide dim {}", self.dim));
                    }
                }
                (Family::SwinTrans, _, _) => {
                    return bad(format!("scale {i}: swin_trans needs window and heads"));
                }
                (f, None, None) => {
                    let _ = f;
                }
                (f, _, _) => {
                    return bad(format!("scale {i}: {} takes no window or heads", f.name()));
                }
            }
        }
        Ok(())
    }

    /// Closed-form parameter count; see the README for the per-block terms.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let r = self.mlp_ratio;
        self.scales
            .iter()
            .map(|s| {
                let grid = self.image_size / s.patch;
                let n = grid * grid;
                let embed = LinearParams::param_count(s.patch * s.patch, d);
                let token = match self.family {
                    Family::MlpMixer => MixerBlock::param_count(n, d, self.token_hidden(n), r),
                    _ => MlpBlock::param_count(d, r),
                };
                let cross = match self.family {
                    Family::SwinTrans => SwinCrossBlock::param_count(d, s.window.unwrap_or(1), s.heads.unwrap_or(1), r),
                    _ => token,
                };
                let head = LinearParams::param_count(d, d) + LinearParams::param_count(d, 2);
                embed + self.depth_extract * token + self.depth_cross * cross + head
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
enum TokenBlock {
    Mlp(MlpBlock),
    Mixer(MixerBlock),
}

impl TokenBlock {
    fn apply<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, x: TokenMap) -> Result<TokenMap> {
        match self {
            TokenBlock::Mlp(b) => b.apply(tape, ps, x),
            TokenBlock::Mixer(b) => b.apply(tape, ps, x),
        }
    }
}

#[derive(Clone, Debug)]
enum CrossStage {
    /// Streams added, then token blocks.
    Summed(Vec<TokenBlock>),
    /// Cross-attention stages; each output becomes the next fixed stream.
    Swin(Vec<SwinCrossBlock>),
}

/// A configured single-scale network. Holds parameter ids only; values
/// live in the owning [`Model`]'s [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Child {
    pub scale: ScaleConfig,
    pub grid_h: usize,
    pub grid_w: usize,
    embed: PatchEmbed,
    extract: Vec<TokenBlock>,
    cross: CrossStage,
    head_hidden: LinearParams,
    head_out: LinearParams,
    channels_first: alloc::sync::Arc<[usize]>,
}

impl Child {
    fn new<T: Real>(cfg: &ModelConfig, index: usize, ps: &mut ParamSet<T>) -> Result<Self> {
        let scale = cfg.scales[index].clone();
        let name = format!("c{index}");
        let (d, r, size) = (cfg.dim, cfg.mlp_ratio, cfg.image_size);
        let embed = PatchEmbed::new(ps, &format!("{name}.embed"), size, size, scale.patch, d)?;
        let (grid_h, grid_w) = embed.grid();
        let n = grid_h * grid_w;
        let token_block = |ps: &mut ParamSet<T>, part: &str, k: usize| -> Result<TokenBlock> {
            let bname = format!("{name}.{part}.{k}");
            Ok(match cfg.family {
                Family::MlpMixer => TokenBlock::Mixer(MixerBlock::new(ps, &bname, n, d, cfg.token_hidden(n), r)?),
                _ => TokenBlock::Mlp(MlpBlock::new(ps, &bname, d, r)?),
            })
        };
        let extract = (0..cfg.depth_extract)
            .map(|k| token_block(ps, "extract", k))
            .collect::<Result<Vec<_>>>()?;
        let cross = match cfg.family {
            Family::SwinTrans => {
                let (w, h) = (scale.window.unwrap_or(0), scale.heads.unwrap_or(0));
                CrossStage::Swin(
                    (0..cfg.depth_cross)
                        .map(|k| SwinCrossBlock::new(ps, &format!("{name}.cross.{k}"), grid_h, grid_w, d, w, h, r))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            _ => CrossStage::Summed(
                (0..cfg.depth_cross)
                    .map(|k| token_block(ps, "cross", k))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let head_hidden = LinearParams::new(ps, &format!("{name}.head.0"), d, d, Init::TruncNormal(INIT_STD))?;
        let head_out = LinearParams::new(ps, &format!("{name}.head.1"), d, 2, Init::Zeros)?;
        Ok(Child {
            scale,
            grid_h,
            grid_w,
            embed,
            extract,
            cross,
            head_hidden,
            head_out,
            channels_first: transpose_index(n, 2),
        })
    }

    /// Patch embedding plus extractor blocks for one stream. Both streams go
    /// through this with the same parameters.
    pub fn extract<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, img: Tensor) -> Result<TokenMap> {
        let mut x = self.embed.apply(tape, ps, img)?;
        for b in &self.extract {
            x = b.apply(tape, ps, x)?;
        }
        Ok(x)
    }

    pub fn head_out(&self) -> LinearParams {
        self.head_out
    }

    /// Velocity on the token grid, in token-grid pixels.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        fix: Tensor,
        mov: Tensor,
    ) -> Result<FieldNode> {
        let f = self.extract(tape, ps, fix)?;
        let m = self.extract(tape, ps, mov)?;
        let x = match &self.cross {
            CrossStage::Summed(blocks) => {
                let mut x = f.with_data(tape.add(f.data, m.data)?);
                for b in blocks {
                    x = b.apply(tape, ps, x)?;
                }
                x
            }
            CrossStage::Swin(blocks) => {
                let mut x = f;
                for b in blocks {
                    x = b.apply(tape, ps, x, m)?;
                }
                x
            }
        };
        let h = self.head_hidden.apply(tape, ps, x.data)?;
        let h = tape.gelu(h);
        let v = self.head_out.apply(tape, ps, h)?;
        let v = tape.gather(v, self.channels_first.clone(), [2, self.grid_h, self.grid_w])?;
        FieldNode::wrap(tape, v, FieldKind::Velocity)
    }
}

/// Weighted sum of child velocities at the finest child grid. Each input is
/// first resampled (with unit conversion) to that grid.
pub fn fuse_multiscale<T: Real>(tape: &mut Tape<T>, outs: &[FieldNode], weights: &[f64]) -> Result<FieldNode> {
    if outs.is_empty() {
        return Err(Error::Contract("fuse_multiscale needs at least one field".into()));
    }
    if outs.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} fields but {} weights",
            outs.len(),
            weights.len()
        )));
    }
    let finest = outs
        .iter()
        .max_by_key(|f| f.height * f.width)
        .map(|f| (f.height, f.width))
        .unwrap_or((0, 0));
    let mut acc: Option<FieldNode> = None;
    for (f, &w) in outs.iter().zip(weights) {
        let r = svf::resample_field(tape, *f, finest.0, finest.1)?;
        let s = FieldNode {
            tensor: tape.scale(r.tensor, T::of(w)),
            ..r
        };
        acc = Some(match acc {
            None => s,
            Some(a) => FieldNode {
                tensor: tape.add(a.tensor, s.tensor)?,
                ..a
            },
        });
    }
    acc.ok_or_else(|| Error::Contract("no fields".into()))
}

/// Value-level [`fuse_multiscale`].
pub fn fuse_fields<T: Real>(outs: &[VectorField<T>], weights: &[f64]) -> Result<VectorField<T>> {
    let mut tape = Tape::new();
    let nodes: Vec<FieldNode> = outs.iter().map(|f| f.to_tape(&mut tape)).collect();
    fuse_multiscale(&mut tape, &nodes, weights).map(|f| f.read(&tape))
}

/// Velocity and both displacements as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct RegistrationNodes {
    pub velocity: FieldNode,
    pub forward: FieldNode,
    pub inverse: FieldNode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult<T> {
    /// Fused velocity on the finest child grid.
    pub velocity: VectorField<T>,
    /// Image-resolution displacement with `fix ≈ warp(mov, disp_forward)`.
    pub disp_forward: VectorField<T>,
    /// Image-resolution displacement of `exp(−v)`, so `mov ≈ warp(fix, disp_inverse)`.
    pub disp_inverse: VectorField<T>,
}

/// Parameter-free network structure.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub children: Vec<Child>,
}

impl Network {
    pub fn build<T: Real>(config: &ModelConfig, ps: &mut ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let children = (0..config.scales.len())
            .map(|i| Child::new(config, i, ps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            config: config.clone(),
            children,
        })
    }

    fn image_tensor<T: Real>(&self, tape: &mut Tape<T>, img: &Image<T>) -> Result<Tensor> {
        let s = self.config.image_size;
        if (img.height, img.width) != (s, s) {
            return dim_err(
                "register",
                format!("model expects {s}x{s} images, got {}x{}", img.height, img.width),
            );
        }
        tape.constant([s, s], img.data.clone())
    }

    pub fn velocity<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        fix: Tensor,
        mov: Tensor,
    ) -> Result<FieldNode> {
        let outs = self
            .children
            .iter()
            .map(|c| c.forward(tape, ps, fix, mov))
            .collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = self.children.iter().map(|c| c.scale.weight).collect();
        fuse_multiscale(tape, &outs, &weights)
    }

    pub fn register_nodes<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        fix: Tensor,
        mov: Tensor,
    ) -> Result<RegistrationNodes> {
        let velocity = self.velocity(tape, ps, fix, mov)?;
        let steps = self.config.integration_steps;
        let size = self.config.image_size;
        let fwd = svf::integrate_svf(tape, velocity, steps)?;
        let forward = svf::resample_field(tape, fwd, size, size)?;
        let neg = FieldNode {
            tensor: tape.neg(velocity.tensor),
            ..velocity
        };
        let inv = svf::integrate_svf(tape, neg, steps)?;
        let inverse = svf::resample_field(tape, inv, size, size)?;
        Ok(RegistrationNodes {
            velocity,
            forward,
            inverse,
        })
    }

    /// Puts both images on `tape` and registers them.
    pub fn register_images<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        fix: &Image<T>,
        mov: &Image<T>,
    ) -> Result<(Tensor, Tensor, RegistrationNodes)> {
        let f = self.image_tensor(tape, fix)?;
        let m = self.image_tensor(tape, mov)?;
        let nodes = self.register_nodes(tape, ps, f, m)?;
        Ok((f, m, nodes))
    }
}

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: Network,
    pub params: ParamSet<T>,
}

impl<T: Real> Model<T> {
    /// Builds the network and draws its parameters from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut params = ParamSet::new(config.seed);
        let net = Network::build(config, &mut params)?;
        params.initialize();
        Ok(Model { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    /// Parameter ids of every velocity-head output layer.
    pub fn head_out_params(&self) -> Vec<ParamId> {
        self.net
            .children
            .iter()
            .flat_map(|c| [c.head_out.weight, c.head_out.bias])
            .collect()
    }

    pub fn zero_velocity_head(&mut self) {
        for id in self.head_out_params() {
            self.params.get_mut(id).data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn register(&self, fix: &Image<T>, mov: &Image<T>) -> Result<RegistrationResult<T>> {
        let mut tape = Tape::new();
        let (_, _, n) = self.net.register_images(&mut tape, &self.params, fix, mov)?;
        Ok(RegistrationResult {
            velocity: n.velocity.read(&tape),
            disp_forward: n.forward.read(&tape),
            disp_inverse: n.inverse.read(&tape),
        })
    }
}

/// Convenience alias for [`Model::new`].
pub fn init_model<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    Model::new(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(size: usize, k: f64) -> Image<f64> {
        Image::from_fn(size, size, |i, j| {
            ((i as f64 * 0.37 + j as f64 * 0.11 + k).sin() + 1.0) / 2.0
        })
    }

    #[test]
    fn presets_construct_and_count() {
        for name in PRESETS {
            let cfg = ModelConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let mut ps = ParamSet::<f32>::new(0);
            Network::build(&cfg, &mut ps).unwrap();
            assert_eq!(ps.numel(), cfg.param_count(), "{name}");
        }
        for f in Family::ALL {
            for size in [32, 64] {
                let cfg = ModelConfig::desk(f, size);
                let mut ps = ParamSet::<f32>::new(0);
                Network::build(&cfg, &mut ps).unwrap();
                assert_eq!(ps.numel(), cfg.param_count());
            }
        }
    }

    #[test]
    fn invalid_combinations_are_config_errors() {
        let mut c = ModelConfig::single(Family::SwinTrans);
        c.scales[0].window = Some(5);
        assert!(matches!(Model::<f32>::new(&c), Err(Error::Config(_))));
        let mut c = ModelConfig::single(Family::PureMlp);
        c.scales[0].window = Some(4);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::single(Family::SwinTrans);
        c.scales[0].heads = None;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::single(Family::MlpMixer);
        c.scales.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::desk(Family::SwinTrans, 32);
        let a = Model::<f32>::new(&cfg).unwrap();
        let b = Model::<f32>::new(&cfg).unwrap();
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.data, pb.data);
        }
    }

    #[test]
    fn zero_head_is_identity_and_velocity_grid() {
        for f in Family::ALL {
            let m = Model::<f64>::new(&ModelConfig::desk(f, 32)).unwrap();
            let (fix, mov) = (ramp(32, 0.0), ramp(32, 0.7));
            let r = m.register(&fix, &mov).unwrap();
            assert_eq!((r.velocity.height, r.velocity.width), (8, 8));
            assert!(r.velocity.data.iter().all(|&v| v == 0.0));
            assert!(r.disp_forward.data.iter().all(|&v| v == 0.0));
            assert!(r.disp_inverse.data.iter().all(|&v| v == 0.0));
            assert_eq!(svf::warp(&mov, &r.disp_forward).unwrap(), mov);
        }
    }

    #[test]
    fn wrong_image_size_is_dimension_error() {
        let m = Model::<f64>::new(&ModelConfig::desk(Family::PureMlp, 32)).unwrap();
        let img = ramp(16, 0.0);
        assert!(matches!(m.register(&img, &img), Err(Error::Dimension { .. })));
    }

    #[test]
    fn swin_identical_inputs_deterministic() {
        let cfg = ModelConfig::desk(Family::SwinTrans, 32);
        let mut m = Model::<f64>::new(&cfg).unwrap();
        m.params.perturb(9, 0.05);
        let img = ramp(32, 0.2);
        let a = m.register(&img, &img).unwrap();
        let b = m.register(&img, &img).unwrap();
        assert!(a.velocity.is_finite());
        assert!(a.velocity.max_magnitude() > 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn streams_share_extractor_parameters() {
        for f in Family::ALL {
            let mut m = Model::<f64>::new(&ModelConfig::desk(f, 32)).unwrap();
            m.params.perturb(1, 0.05);
            let child = &m.net.children[0];
            let used = |img: &Image<f64>| {
                let mut tape = Tape::new();
                let t = tape.constant([32, 32], img.data.clone()).unwrap();
                let out = child.extract(&mut tape, &m.params, t).unwrap();
                let ids: Vec<ParamId> = tape.param_ids().collect();
                (ids, tape.value(out.data).to_vec())
            };
            let (ids_a, feat_a) = used(&ramp(32, 0.0));
            let (ids_b, _) = used(&ramp(32, 1.3));
            assert_eq!(ids_a, ids_b);
            // The stream fed as "moving" sees exactly the "fixed" features.
            let mut tape = Tape::new();
            let a = tape.constant([32, 32], ramp(32, 1.3).data).unwrap();
            let b = tape.constant([32, 32], ramp(32, 0.0).data).unwrap();
            let _ = child.extract(&mut tape, &m.params, a).unwrap();
            let fb = child.extract(&mut tape, &m.params, b).unwrap();
            assert_eq!(tape.value(fb.data), &feat_a[..]);
        }
    }

    #[test]
    fn fusion_single_weight_and_convexity() {
        let f = VectorField::<f64>::from_fn(8, 8, FieldKind::Velocity, |i, j| {
            ((i as f64).sin(), (j as f64 * 0.3).cos())
        });
        assert_eq!(fuse_fields(core::slice::from_ref(&f), &[1.0]).unwrap(), f);
        let half = fuse_fields(&[f.clone(), f.clone()], &[0.5, 0.5]).unwrap();
        for (a, b) in half.data.iter().zip(&f.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(matches!(fuse_fields::<f64>(&[], &[]), Err(Error::Contract(_))));
    }
}
