//! Patch-token building blocks.
//!
//! Token maps are `[grid_h·grid_w, dim]` tensors in row-major token order:
//! the token at grid row `i`, column `j` is row `i·grid_w + j`. Window
//! partitions and patch tiling index into that order.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::gradcore::{Init, ParamId, ParamSet, Tape, Tensor, LN_EPS};
use crate::real::Real;

/// Weight init std for every linear layer.
pub const INIT_STD: f64 = 0.02;

/// Patch features on the token grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub data: Tensor,
}

impl TokenMap {
    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn with_data(self, data: Tensor) -> Self {
        TokenMap { data, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearParams {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        weight_init: Init,
    ) -> Result<Self> {
        Ok(LinearParams {
            weight: ps.add(format!("{name}.weight"), [d_in, d_out], weight_init)?,
            bias: ps.add(format!("{name}.bias"), [d_out], Init::Zeros)?,
            d_in,
            d_out,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, x: Tensor) -> Result<Tensor> {
        let w = tape.param(ps, self.weight);
        let b = tape.param(ps, self.bias);
        tape.linear(x, w, b)
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(NormParams {
            gamma: ps.add(format!("{name}.gamma"), [dim], Init::Ones)?,
            beta: ps.add(format!("{name}.beta"), [dim], Init::Zeros)?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, x: Tensor) -> Result<Tensor> {
        let g = tape.param(ps, self.gamma);
        let b = tape.param(ps, self.beta);
        tape.layer_norm(x, g, b, T::of(LN_EPS))
    }
}

/// Row-major `[rows, cols]` → `[cols, rows]` gather index.
pub fn transpose_index(rows: usize, cols: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            idx.push(r * cols + c);
        }
    }
    idx.into()
}

/// Linear projection of non-overlapping `patch × patch` tiles.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub patch: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub proj: LinearParams,
    tiles: Arc<[usize]>,
}

impl PatchEmbed {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        image_h: usize,
        image_w: usize,
        patch: usize,
        dim: usize,
    ) -> Result<Self> {
        if patch == 0 || !image_h.is_multiple_of(patch) || !image_w.is_multiple_of(patch) {
            return dim_err(
                "patch_embed",
                format!("patch {patch} does not divide image {image_h}x{image_w}"),
            );
        }
        Ok(PatchEmbed {
            patch,
            image_h,
            image_w,
            proj: LinearParams::new(
                ps,
                &format!("{name}.proj"),
                patch * patch,
                dim,
                Init::TruncNormal(INIT_STD),
            )?,
            tiles: tile_index(image_h, image_w, patch).into(),
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch, self.image_w / self.patch)
    }

    /// Tile-flattened pixels `[tokens, patch²]`, before projection.
    pub fn tiles<T: Real>(&self, tape: &mut Tape<T>, img: Tensor) -> Result<Tensor> {
        if tape.shape(img).numel() != self.image_h * self.image_w {
            return dim_err(
                "patch_embed",
                format!(
                    "image {} does not match configured {}x{}",
                    tape.shape(img),
                    self.image_h,
                    self.image_w
                ),
            );
        }
        let (gh, gw) = self.grid();
        tape.gather(img, self.tiles.clone(), [gh * gw, self.patch * self.patch])
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, img: Tensor) -> Result<TokenMap> {
        let tiles = self.tiles(tape, img)?;
        let data = self.proj.apply(tape, ps, tiles)?;
        let (grid_h, grid_w) = self.grid();
        Ok(TokenMap {
            grid_h,
            grid_w,
            dim: self.proj.d_out,
            data,
        })
    }
}

/// Pixel index of element `(pi, pj)` of tile `(ti, tj)`, tiles and pixels
/// both row-major.
pub fn tile_index(h: usize, w: usize, patch: usize) -> Vec<usize> {
    let (gh, gw) = (h / patch, w / patch);
    let mut idx = Vec::with_capacity(h * w);
    for ti in 0..gh {
        for tj in 0..gw {
            for pi in 0..patch {
                for pj in 0..patch {
                    idx.push((ti * patch + pi) * w + tj * patch + pj);
                }
            }
        }
    }
    idx
}

/// Per-token residual MLP: `x + fc2(gelu(fc1(norm(x))))`.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    pub norm: NormParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

impl MlpBlock {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, dim: usize, ratio: usize) -> Result<Self> {
        let hidden = dim * ratio;
        Ok(MlpBlock {
            norm: NormParams::new(ps, &format!("{name}.norm"), dim)?,
            fc1: LinearParams::new(ps, &format!("{name}.fc1"), dim, hidden, Init::TruncNormal(INIT_STD))?,
            fc2: LinearParams::new(ps, &format!("{name}.fc2"), hidden, dim, Init::TruncNormal(INIT_STD))?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, x: TokenMap) -> Result<TokenMap> {
        let n = self.norm.apply(tape, ps, x.data)?;
        let h = self.fc1.apply(tape, ps, n)?;
        let h = tape.gelu(h);
        let h = self.fc2.apply(tape, ps, h)?;
        let y = tape.add(x.data, h)?;
        Ok(x.with_data(y))
    }

    pub fn param_count(dim: usize, ratio: usize) -> usize {
        2 * dim + LinearParams::param_count(dim, dim * ratio) + LinearParams::param_count(dim * ratio, dim)
    }
}

/// Token-mixing sublayer followed by a channel-mixing [`MlpBlock`].
#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub tokens: usize,
    pub dim: usize,
    pub token_norm: NormParams,
    pub token_fc1: LinearParams,
    pub token_fc2: LinearParams,
    pub channel: MlpBlock,
    to_channels_major: Arc<[usize]>,
    to_tokens_major: Arc<[usize]>,
}

impl MixerBlock {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        tokens: usize,
        dim: usize,
        token_hidden: usize,
        ratio: usize,
    ) -> Result<Self> {
        Ok(MixerBlock {
            tokens,
            dim,
            token_norm: NormParams::new(ps, &format!("{name}.token_norm"), dim)?,
            token_fc1: LinearParams::new(
                ps,
                &format!("{name}.token_fc1"),
                tokens,
                token_hidden,
                Init::TruncNormal(INIT_STD),
            )?,
            token_fc2: LinearParams::new(
                ps,
                &format!("{name}.token_fc2"),
                token_hidden,
                tokens,
                Init::TruncNormal(INIT_STD),
            )?,
            channel: MlpBlock::new(ps, &format!("{name}.channel"), dim, ratio)?,
            to_channels_major: transpose_index(tokens, dim),
            to_tokens_major: transpose_index(dim, tokens),
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, ps: &ParamSet<T>, x: TokenMap) -> Result<TokenMap> {
        if x.tokens() != self.tokens || x.dim != self.dim {
            return dim_err(
                "mixer_block",
                format!(
                    "configured for {} tokens x {}, got {} x {}",
                    self.tokens,
                    self.dim,
                    x.tokens(),
                    x.dim
                ),
            );
        }
        let n = self.token_norm.apply(tape, ps, x.data)?;
        let t = tape.gather(n, self.to_channels_major.clone(), [self.dim, self.tokens])?;
        let t = self.token_fc1.apply(tape, ps, t)?;
        let t = tape.gelu(t);
        let t = self.token_fc2.apply(tape, ps, t)?;
        let t = tape.gather(t, self.to_tokens_major.clone(), [self.tokens, self.dim])?;
        let y = tape.add(x.data, t)?;
        self.channel.apply(tape, ps, x.with_data(y))
    }

    pub fn param_count(tokens: usize, dim: usize, token_hidden: usize, ratio: usize) -> usize {
        2 * dim
            + LinearParams::param_count(tokens, token_hidden)
            + LinearParams::param_count(token_hidden, tokens)
            + MlpBlock::param_count(dim, ratio)
    }
}

/// Tiling of a token grid into `window × window` groups, optionally after a
/// cyclic roll by `(−window/2, −window/2)`.
#[derive(Clone, Debug)]
pub struct WindowPartition {
    pub grid_h: usize,
    pub grid_w: usize,
    pub window: usize,
    pub shifted: bool,
    /// Original token index at `(window, position)`, windows row-major over
    /// the (rolled) grid, positions row-major inside each window.
    pub tokens: Vec<usize>,
    /// `[n_windows, window², window²]`, true where attention is forbidden.
    /// Only present for shifted partitions.
    pub mask: Option<Vec<bool>>,
}

impl WindowPartition {
    pub fn new(grid_h: usize, grid_w: usize, window: usize, shifted: bool) -> Result<Self> {
        if window == 0 || !grid_h.is_multiple_of(window) || !grid_w.is_multiple_of(window) {
            return dim_err(
                "window_partition",
                format!("window {window} does not divide grid {grid_h}x{grid_w}"),
            );
        }
        let shift = if shifted { window / 2 } else { 0 };
        let (nwh, nww) = (grid_h / window, grid_w / window);
        let ww = window * window;
        let mut tokens = Vec::with_capacity(grid_h * grid_w);
        for wi in 0..nwh {
            for wj in 0..nww {
                for pi in 0..window {
                    for pj in 0..window {
                        let r = (wi * window + pi + shift) % grid_h;
                        let c = (wj * window + pj + shift) % grid_w;
                        tokens.push(r * grid_w + c);
                    }
                }
            }
        }
        let mask = shifted.then(|| {
            let region = |v: usize, n: usize| -> usize {
                if v < n - window {
                    0
                } else if v < n - shift {
                    1
                } else {
                    2
                }
            };
            let mut m = vec![false; nwh * nww * ww * ww];
            for wi in 0..nwh {
                for wj in 0..nww {
                    let win = wi * nww + wj;
                    let id = |p: usize| {
                        let r = wi * window + p / window;
                        let c = wj * window + p % window;
                        region(r, grid_h) * 3 + region(c, grid_w)
                    };
                    for p in 0..ww {
                        for q in 0..ww {
                            m[(win * ww + p) * ww + q] = id(p) != id(q);
                        }
                    }
                }
            }
            m
        });
        Ok(WindowPartition {
            grid_h,
            grid_w,
            window,
            shifted,
            tokens,
            mask,
        })
    }

    pub fn n_windows(&self) -> usize {
        (self.grid_h / self.window) * (self.grid_w / self.window)
    }

    /// Gather index from `[tokens, dim]` to `[n_windows, window², dim]`.
    pub fn forward_index(&self, dim: usize) -> Vec<usize> {
        self.tokens
            .iter()
            .flat_map(|&t| (0..dim).map(move |d| t * dim + d))
            .collect()
    }

    /// Gather index from `[n_windows, window², dim]` back to `[tokens, dim]`.
    pub fn inverse_index(&self, dim: usize) -> Vec<usize> {
        let mut slot = vec![0usize; self.tokens.len()];
        for (k, &t) in self.tokens.iter().enumerate() {
            slot[t] = k;
        }
        slot.iter().flat_map(|&k| (0..dim).map(move |d| k * dim + d)).collect()
    }

    pub fn partition<T: Real>(&self, tape: &mut Tape<T>, x: TokenMap) -> Result<Tensor> {
        self.check(x)?;
        let ww = self.window * self.window;
        tape.gather(x.data, self.forward_index(x.dim).into(), [self.n_windows(), ww, x.dim])
    }

    pub fn reverse<T: Real>(&self, tape: &mut Tape<T>, windows: Tensor, dim: usize) -> Result<TokenMap> {
        let data = tape.gather(windows, self.inverse_index(dim).into(), [self.tokens.len(), dim])?;
        Ok(TokenMap {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            dim,
            data,
        })
    }

    fn check(&self, x: TokenMap) -> Result<()> {
        if (x.grid_h, x.grid_w) != (self.grid_h, self.grid_w) {
            return dim_err(
                "window_partition",
                format!(
                    "partition built for {}x{}, tokens are {}x{}",
                    self.grid_h, self.grid_w, x.grid_h, x.grid_w
                ),
            );
        }
        Ok(())
    }
}

/// Index into a `(2w−1)²` relative-position table for each `(query, key)`
/// pair of window positions.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let ww = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(ww * ww);
    for p in 0..ww {
        let (pr, pc) = (p / window, p % window);
        for q in 0..ww {
            let (qr, qc) = (q / window, q % window);
            idx.push((pr + window - 1 - qr) * span + (pc + window - 1 - qc));
        }
    }
    idx
}

/// Precomputed gathers for one attention branch.
#[derive(Clone, Debug)]
struct AttentionBranch {
    query: Arc<[usize]>,
    back: Arc<[usize]>,
    mask: Option<Vec<f64>>,
}

/// Windowed multi-head cross-attention: queries from the moving stream,
/// keys and values from the fixed stream, evaluated on a normal and a
/// shifted query partition and summed; then output projection, fixed-stream
/// skip connection and a per-token MLP sublayer. Keys and values always use
/// the normal partition. When the window spans the whole grid the second
/// branch is unshifted and unmasked.
#[derive(Clone, Debug)]
pub struct SwinCrossBlock {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub window: usize,
    pub heads: usize,
    pub norm_fix: NormParams,
    pub norm_mov: NormParams,
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub proj: LinearParams,
    /// `[heads, (2·window − 1)²]`.
    pub rel_bias: ParamId,
    pub mlp: MlpBlock,
    key: Arc<[usize]>,
    bias_index: Arc<[usize]>,
    normal: AttentionBranch,
    shifted: AttentionBranch,
}

impl SwinCrossBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        window: usize,
        heads: usize,
        ratio: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return dim_err("swin_cross_block", format!("dim {dim} not divisible by {heads} heads"));
        }
        let normal = WindowPartition::new(grid_h, grid_w, window, false)?;
        // A window covering the whole grid has nothing to shift across.
        let shift = window < grid_h || window < grid_w;
        let shifted = WindowPartition::new(grid_h, grid_w, window, shift)?;
        let lin = |ps: &mut ParamSet<T>, n: &str| {
            LinearParams::new(ps, &format!("{name}.{n}"), dim, dim, Init::TruncNormal(INIT_STD))
        };
        let span = 2 * window - 1;
        let block = SwinCrossBlock {
            grid_h,
            grid_w,
            dim,
            window,
            heads,
            norm_fix: NormParams::new(ps, &format!("{name}.norm_fix"), dim)?,
            norm_mov: NormParams::new(ps, &format!("{name}.norm_mov"), dim)?,
            q: lin(ps, "q")?,
            k: lin(ps, "k")?,
            v: lin(ps, "v")?,
            proj: lin(ps, "proj")?,
            rel_bias: ps.add(format!("{name}.rel_bias"), [heads, span * span], Init::Zeros)?,
            mlp: MlpBlock::new(ps, &format!("{name}.mlp"), dim, ratio)?,
            key: head_split_index(&normal, dim, heads).into(),
            bias_index: bias_gather_index(normal.n_windows(), heads, window).into(),
            normal: AttentionBranch::new(&normal, dim, heads),
            shifted: AttentionBranch::new(&shifted, dim, heads),
        };
        Ok(block)
    }

    pub fn param_count(dim: usize, window: usize, heads: usize, ratio: usize) -> usize {
        let span = 2 * window - 1;
        4 * dim + 4 * LinearParams::param_count(dim, dim) + heads * span * span + MlpBlock::param_count(dim, ratio)
    }

    fn check(&self, x: &TokenMap, which: &str) -> Result<()> {
        if (x.grid_h, x.grid_w, x.dim) != (self.grid_h, self.grid_w, self.dim) {
            return dim_err(
                "swin_cross_block",
                format!(
                    "{which} tokens {}x{}x{} do not match block {}x{}x{}",
                    x.grid_h, x.grid_w, x.dim, self.grid_h, self.grid_w, self.dim
                ),
            );
        }
        Ok(())
    }

    /// Attention probabilities `[n_windows·heads, window², window²]` of both
    /// branches plus the block output.
    pub fn apply_traced<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        fix: TokenMap,
        mov: TokenMap,
    ) -> Result<(TokenMap, [Tensor; 2])> {
        self.check(&fix, "fixed")?;
        self.check(&mov, "moving")?;
        let nf = self.norm_fix.apply(tape, ps, fix.data)?;
        let nm = self.norm_mov.apply(tape, ps, mov.data)?;
        let q = self.q.apply(tape, ps, nm)?;
        let k = self.k.apply(tape, ps, nf)?;
        let v = self.v.apply(tape, ps, nf)?;

        let ww = self.window * self.window;
        let dh = self.dim / self.heads;
        let batch = self.normal_windows() * self.heads;
        let kw = tape.gather(k, self.key.clone(), [batch, ww, dh])?;
        let vw = tape.gather(v, self.key.clone(), [batch, ww, dh])?;
        let table = tape.param(ps, self.rel_bias);
        let bias = tape.gather(table, self.bias_index.clone(), [batch, ww, ww])?;

        let mut outs = [fix.data; 2];
        let mut probs = [fix.data; 2];
        for (slot, branch) in [&self.normal, &self.shifted].into_iter().enumerate() {
            let qw = tape.gather(q, branch.query.clone(), [batch, ww, dh])?;
            let scores = tape.bmm_nt(qw, kw)?;
            let scores = tape.scale(scores, T::one() / T::of(dh as f64).sqrt());
            let mut scores = tape.add(scores, bias)?;
            if let Some(m) = &branch.mask {
                let c = tape.constant([batch, ww, ww], m.iter().map(|&v| T::of(v)).collect())?;
                scores = tape.add(scores, c)?;
            }
            let p = tape.softmax(scores);
            let o = tape.bmm(p, vw)?;
            outs[slot] = tape.gather(o, branch.back.clone(), [fix.tokens(), self.dim])?;
            probs[slot] = p;
        }
        let summed = tape.add(outs[0], outs[1])?;
        let projected = self.proj.apply(tape, ps, summed)?;
        let h = tape.add(fix.data, projected)?;
        let out = self.mlp.apply(tape, ps, fix.with_data(h))?;
        Ok((out, probs))
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        fix: TokenMap,
        mov: TokenMap,
    ) -> Result<TokenMap> {
        self.apply_traced(tape, ps, fix, mov).map(|(o, _)| o)
    }

    fn normal_windows(&self) -> usize {
        (self.grid_h / self.window) * (self.grid_w / self.window)
    }
}

impl AttentionBranch {
    fn new(part: &WindowPartition, dim: usize, heads: usize) -> Self {
        let ww = part.window * part.window;
        let dh = dim / heads;
        let query = head_split_index(part, dim, heads);
        // [batch, ww, dh] -> [tokens, dim]
        let mut back = vec![0usize; part.tokens.len() * dim];
        for win in 0..part.n_windows() {
            for h in 0..heads {
                for pos in 0..ww {
                    let t = part.tokens[win * ww + pos];
                    for d in 0..dh {
                        back[t * dim + h * dh + d] = ((win * heads + h) * ww + pos) * dh + d;
                    }
                }
            }
        }
        let mask = part.mask.as_ref().map(|m| {
            let mut out = Vec::with_capacity(part.n_windows() * heads * ww * ww);
            for win in 0..part.n_windows() {
                for _ in 0..heads {
                    out.extend(m[win * ww * ww..(win + 1) * ww * ww].iter().map(|&blocked| {
                        if blocked {
                            f64::NEG_INFINITY
                        } else {
                            0.0
                        }
                    }));
                }
            }
            out
        });
        AttentionBranch {
            query: query.into(),
            back: back.into(),
            mask,
        }
    }
}

/// `[tokens, dim]` → `[n_windows·heads, window², dim/heads]`.
fn head_split_index(part: &WindowPartition, dim: usize, heads: usize) -> Vec<usize> {
    let ww = part.window * part.window;
    let dh = dim / heads;
    let mut idx = Vec::with_capacity(part.tokens.len() * dim);
    for win in 0..part.n_windows() {
        for h in 0..heads {
            for pos in 0..ww {
                let t = part.tokens[win * ww + pos];
                for d in 0..dh {
                    idx.push(t * dim + h * dh + d);
                }
            }
        }
    }
    idx
}

fn bias_gather_index(n_windows: usize, heads: usize, window: usize) -> Vec<usize> {
    let rel = relative_position_index(window);
    let span2 = (2 * window - 1) * (2 * window - 1);
    let mut idx = Vec::with_capacity(n_windows * heads * rel.len());
    for _ in 0..n_windows {
        for h in 0..heads {
            idx.extend(rel.iter().map(|&r| h * span2 + r));
        }
    }
    idx
}
