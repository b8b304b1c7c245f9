use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::shape::Shape;
use super::tape::{Fault, Node, Op, Tape, Taps, Tensor};
use crate::error::{dim_err, Result};
use crate::real::Real;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return dim_err(op, format!("shapes {sa} and {sb} differ"));
        }
        Ok(sa.clone())
    }

    fn zip_with(&mut self, a: Tensor, b: Tensor, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(shape, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(shape, v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(shape, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Tensor, c: T) -> Tensor {
        let v = self.value(x).iter().map(|&e| e * c).collect();
        let shape = self.shape(x).clone();
        self.push(shape, v, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Tensor) -> Tensor {
        self.scale(x, -T::one())
    }

    pub fn square(&mut self, x: Tensor) -> Tensor {
        self.mul(x, x).expect("same tensor")
    }

    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let s = self.value(x).iter().copied().sum();
        self.push(Shape::scalar(), vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Tensor) -> Tensor {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn reshape(&mut self, x: Tensor, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != self.shape(x).numel() {
            return dim_err("reshape", format!("cannot view {} as {}", self.shape(x), shape));
        }
        let v = self.value(x).to_vec();
        Ok(self.push(shape, v, Op::Reshape(x)))
    }

    /// Matrix product of `a: [m,k]` and `b: [k,n]`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).clone(), self.shape(b).clone());
        if sa.rank() != 2 || sb.rank() != 2 || sa.0[1] != sb.0[0] {
            return dim_err("matmul", format!("cannot multiply {sa} by {sb}"));
        }
        Ok(self.matmul_raw(
            a,
            b,
            1,
            sa.0[0],
            sa.0[1],
            sb.0[1],
            false,
            Shape::new(&[sa.0[0], sb.0[1]]),
        ))
    }

    /// Batched product of `a: [B,m,k]` and `b: [B,k,n]`.
    pub fn bmm(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).clone(), self.shape(b).clone());
        if sa.rank() != 3 || sb.rank() != 3 || sa.0[0] != sb.0[0] || sa.0[2] != sb.0[1] {
            return dim_err("bmm", format!("cannot multiply {sa} by {sb}"));
        }
        let (bt, m, k, n) = (sa.0[0], sa.0[1], sa.0[2], sb.0[2]);
        Ok(self.matmul_raw(a, b, bt, m, k, n, false, Shape::new(&[bt, m, n])))
    }

    /// Batched `a · bᵀ` for `a: [B,m,k]`, `b: [B,n,k]`.
    pub fn bmm_nt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).clone(), self.shape(b).clone());
        if sa.rank() != 3 || sb.rank() != 3 || sa.0[0] != sb.0[0] || sa.0[2] != sb.0[2] {
            return dim_err("bmm_nt", format!("cannot multiply {sa} by transpose of {sb}"));
        }
        let (bt, m, k, n) = (sa.0[0], sa.0[1], sa.0[2], sb.0[1]);
        Ok(self.matmul_raw(a, b, bt, m, k, n, true, Shape::new(&[bt, m, n])))
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_raw(
        &mut self,
        a: Tensor,
        b: Tensor,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
        shape: Shape,
    ) -> Tensor {
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for bi in 0..batch {
                let a = &av[bi * m * k..(bi + 1) * m * k];
                let b = &bv[bi * k * n..(bi + 1) * k * n];
                let o = &mut out[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    gemm_nt(a, b, o, m, k, n);
                } else {
                    gemm_nn(a, b, o, m, k, n);
                }
            }
        }
        self.push(
            shape,
            out,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
        )
    }

    /// `x: [n,d] + bias: [d]`, broadcast over rows.
    pub fn add_row_bias(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor> {
        let (sx, sb) = (self.shape(x).clone(), self.shape(bias).clone());
        if sx.rank() != 2 || sb.rank() != 1 || sx.0[1] != sb.0[0] {
            return dim_err("add_row_bias", format!("cannot add bias {sb} to {sx}"));
        }
        let d = sb.0[0];
        let bv = self.value(bias).to_vec();
        let v = self.value(x).iter().enumerate().map(|(i, &e)| e + bv[i % d]).collect();
        Ok(self.push(sx, v, Op::AddRowBias(x, bias)))
    }

    /// Affine layer `x·w + b` with `x: [n,d_in]`, `w: [d_in,d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        let xw = self.matmul(x, w).map_err(|_| crate::Error::Dimension {
            op: "linear",
            detail: format!("input {} does not fit weight {}", self.shape(x), self.shape(w)),
        })?;
        self.add_row_bias(xw, b).map_err(|_| crate::Error::Dimension {
            op: "linear",
            detail: format!("bias {} does not fit output {}", self.shape(b), self.shape(xw)),
        })
    }

    /// Row-wise layer normalisation (biased variance) with affine scale/shift.
    pub fn layer_norm(&mut self, x: Tensor, gamma: Tensor, beta: Tensor, eps: T) -> Result<Tensor> {
        let sx = self.shape(x).clone();
        let d = sx.last();
        if sx.rank() != 2 || d == 0 || self.shape(gamma).dims() != [d] || self.shape(beta).dims() != [d] {
            return dim_err(
                "layer_norm",
                format!(
                    "input {} with gamma {} and beta {}",
                    sx,
                    self.shape(gamma),
                    self.shape(beta)
                ),
            );
        }
        let rows = sx.0[0];
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let inv_d = T::one() / T::of(d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * gv[c] + bv[c];
            }
        }
        Ok(self.push(
            sx,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&mut self, x: Tensor) -> Tensor {
        let v = self.value(x).iter().map(|&e| gelu(e)).collect();
        let shape = self.shape(x).clone();
        self.push(shape, v, Op::Gelu(x))
    }

    /// Softmax over the last axis. Rows may contain `-inf` logits as long as
    /// at least one entry per row is finite.
    pub fn softmax(&mut self, x: Tensor) -> Tensor {
        let shape = self.shape(x).clone();
        let n = shape.last();
        let mut v = self.value(x).to_vec();
        for row in v.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for e in row.iter_mut() {
                *e = (*e - m).exp_m();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.push(shape, v, Op::Softmax(x))
    }

    /// `out[i] = x[index[i]]`, viewed with `shape`. Covers transposes, tiling,
    /// window partitions and shifted views.
    pub fn gather(&mut self, x: Tensor, index: Arc<[usize]>, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        let n = self.value(x).len();
        if shape.numel() != index.len() {
            return dim_err("gather", format!("{} indices cannot fill shape {}", index.len(), shape));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return dim_err(
                "gather",
                format!("index {bad} out of range for input {}", self.shape(x)),
            );
        }
        let xv = self.value(x);
        let v = index.iter().map(|&i| xv[i]).collect();
        Ok(self.push(shape, v, Op::Gather(x, index)))
    }

    /// Bilinear sample of `src: [c,h,w]` (or `[h,w]`) at `(j + disp_x, i + disp_y)`
    /// with clamp-to-edge coordinates. `disp: [2,h,w]`, channel 0 = x (columns).
    pub fn warp(&mut self, src: Tensor, disp: Tensor) -> Result<Tensor> {
        let ss = self.shape(src).clone();
        let sd = self.shape(disp).clone();
        let (c, h, w) = match ss.dims() {
            [h, w] => (1, *h, *w),
            [c, h, w] => (*c, *h, *w),
            _ => return dim_err("warp", format!("source must be [h,w] or [c,h,w], got {ss}")),
        };
        if sd.dims() != [2, h, w] {
            return dim_err("warp", format!("displacement {sd} does not match source {ss}"));
        }
        let mut out = vec![T::zero(); c * h * w];
        {
            let sv = self.value(src);
            let dv = self.value(disp);
            for i in 0..h {
                for j in 0..w {
                    let p = i * w + j;
                    let s = sample_point(j, i, dv[p], dv[h * w + p], h, w);
                    for ch in 0..c {
                        let plane = &sv[ch * h * w..(ch + 1) * h * w];
                        out[ch * h * w + p] = s.interp(plane, w);
                    }
                }
            }
        }
        Ok(self.push(
            ss,
            out,
            Op::Warp {
                src,
                disp,
                channels: c,
                h,
                w,
            },
        ))
    }

    /// Corner-aligned bilinear resize of `x: [c,h,w]` to `[c,out_h,out_w]`.
    pub fn resize_bilinear(&mut self, x: Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        let sx = self.shape(x).clone();
        let [c, h, w] = *sx.dims() else {
            return dim_err("resize_bilinear", format!("input must be [c,h,w], got {sx}"));
        };
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return dim_err("resize_bilinear", format!("cannot resize {sx} to {out_h}x{out_w}"));
        }
        let rows = Taps::new(h, out_h);
        let cols = Taps::new(w, out_w);
        let mut out = vec![T::zero(); c * out_h * out_w];
        {
            let xv = self.value(x);
            for ch in 0..c {
                let plane = &xv[ch * h * w..(ch + 1) * h * w];
                for oi in 0..out_h {
                    let (r0, r1, fy) = (rows.lo[oi], rows.hi[oi], T::of(rows.frac[oi]));
                    for oj in 0..out_w {
                        let (c0, c1, fx) = (cols.lo[oj], cols.hi[oj], T::of(cols.frac[oj]));
                        let top = plane[r0 * w + c0] * (T::one() - fx) + plane[r0 * w + c1] * fx;
                        let bot = plane[r1 * w + c0] * (T::one() - fx) + plane[r1 * w + c1] * fx;
                        out[(ch * out_h + oi) * out_w + oj] = top * (T::one() - fy) + bot * fy;
                    }
                }
            }
        }
        Ok(self.push(
            Shape::new(&[c, out_h, out_w]),
            out,
            Op::Resize {
                x,
                channels: c,
                rows,
                cols,
                in_w: w,
            },
        ))
    }
}

impl Taps {
    /// Corner-aligned source taps for resampling `n_in` samples to `n_out`.
    pub(crate) fn new(n_in: usize, n_out: usize) -> Self {
        let mut t = Taps {
            lo: Vec::with_capacity(n_out),
            hi: Vec::with_capacity(n_out),
            frac: Vec::with_capacity(n_out),
        };
        for o in 0..n_out {
            let src = if n_out > 1 {
                o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            } else {
                0.0
            };
            let lo = (num_traits::Float::floor(src) as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            t.lo.push(lo);
            t.hi.push(hi);
            t.frac.push(src - lo as f64);
        }
        t
    }
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh_m())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh_m();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// One clamped bilinear sample location.
pub(crate) struct SamplePoint<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the coordinate was inside the grid (derivative non-zero).
    free_x: bool,
    free_y: bool,
}

#[inline]
pub(crate) fn sample_point<T: Real>(j: usize, i: usize, dx: T, dy: T, h: usize, w: usize) -> SamplePoint<T> {
    let (x0, x1, fx, free_x) = axis_tap(T::of(j as f64) + dx, w);
    let (y0, y1, fy, free_y) = axis_tap(T::of(i as f64) + dy, h);
    SamplePoint {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
        free_x,
        free_y,
    }
}

#[inline]
fn axis_tap<T: Real>(x: T, n: usize) -> (usize, usize, T, bool) {
    let max = T::of((n - 1) as f64);
    let free = x >= T::zero() && x <= max;
    let xc = x.max(T::zero()).min(max);
    let lo = xc.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, xc - T::of(lo as f64), free)
}

impl<T: Real> SamplePoint<T> {
    #[inline]
    pub(crate) fn interp(&self, plane: &[T], w: usize) -> T {
        let one = T::one();
        let top = plane[self.y0 * w + self.x0] * (one - self.fx) + plane[self.y0 * w + self.x1] * self.fx;
        let bot = plane[self.y1 * w + self.x0] * (one - self.fx) + plane[self.y1 * w + self.x1] * self.fx;
        top * (one - self.fy) + bot * self.fy
    }

    /// (d/dx, d/dy) of the interpolated value; zero along clamped axes.
    #[inline]
    fn slope(&self, plane: &[T], w: usize) -> (T, T) {
        let one = T::one();
        let v00 = plane[self.y0 * w + self.x0];
        let v01 = plane[self.y0 * w + self.x1];
        let v10 = plane[self.y1 * w + self.x0];
        let v11 = plane[self.y1 * w + self.x1];
        let gx = if self.free_x {
            (one - self.fy) * (v01 - v00) + self.fy * (v11 - v10)
        } else {
            T::zero()
        };
        let gy = if self.free_y {
            (one - self.fx) * (v10 - v00) + self.fx * (v11 - v01)
        } else {
            T::zero()
        };
        (gx, gy)
    }

    #[inline]
    fn scatter(&self, plane: &mut [T], w: usize, g: T) {
        let one = T::one();
        plane[self.y0 * w + self.x0] += g * (one - self.fy) * (one - self.fx);
        plane[self.y0 * w + self.x1] += g * (one - self.fy) * self.fx;
        plane[self.y1 * w + self.x0] += g * self.fy * (one - self.fx);
        plane[self.y1 * w + self.x1] += g * self.fy * self.fx;
    }
}

fn gemm_nn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (oe, &be) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *oe += av * be;
            }
        }
    }
}

fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Add the contribution `f` writes into the gradient buffer of `t`.
#[inline]
fn acc<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], t: Tensor, f: impl FnOnce(&mut [T])) {
    if !nodes[t.0].requires_grad {
        return;
    }
    let n = nodes[t.0].value.len();
    let buf = grads[t.0].get_or_insert_with(|| vec![T::zero(); n]);
    f(buf);
}

pub(crate) fn backprop<T: Real>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
    fault: Option<Fault>,
) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            acc(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            acc(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            acc(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            acc(nodes, grads, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale(x, c) => {
            acc(nodes, grads, *x, |gx| {
                gx.iter_mut().zip(g).for_each(|(e, &y)| *e += y * *c)
            });
        }
        Op::Sum(x) => {
            acc(nodes, grads, *x, |gx| gx.iter_mut().for_each(|e| *e += g[0]));
        }
        Op::Reshape(x) => {
            acc(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(e, &y)| *e += y));
        }
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            acc(nodes, grads, a, |ga| {
                for bi in 0..batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let bs = &bv[bi * k * n..(bi + 1) * k * n];
                    let gas = &mut ga[bi * m * k..(bi + 1) * m * k];
                    if trans_b {
                        // ga = g · b   (b stored [n,k])
                        gemm_nn(gs, bs, gas, m, n, k);
                    } else {
                        // ga = g · bᵀ  (b stored [k,n])
                        for i in 0..m {
                            for p in 0..k {
                                gas[i * k + p] += dot(&gs[i * n..(i + 1) * n], &bs[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            });
            acc(nodes, grads, b, |gb| {
                for bi in 0..batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let as_ = &av[bi * m * k..(bi + 1) * m * k];
                    let gbs = &mut gb[bi * k * n..(bi + 1) * k * n];
                    for i in 0..m {
                        let arow = &as_[i * k..(i + 1) * k];
                        let grow = &gs[i * n..(i + 1) * n];
                        if trans_b {
                            // gb[j,:] += g[i,j] · a[i,:]
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij == T::zero() {
                                    continue;
                                }
                                for (e, &av) in gbs[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                    *e += gij * av;
                                }
                            }
                        } else {
                            // gb[p,:] += a[i,p] · g[i,:]
                            for (p, &aip) in arow.iter().enumerate() {
                                if aip == T::zero() {
                                    continue;
                                }
                                for (e, &gv) in gbs[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *e += aip * gv;
                                }
                            }
                        }
                    }
                }
            });
        }
        Op::AddRowBias(x, bias) => {
            let d = nodes[bias.0].value.len();
            acc(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(e, &y)| *e += y));
            acc(nodes, grads, *bias, |gb| {
                for (i, &y) in g.iter().enumerate() {
                    gb[i % d] += y;
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = nodes[gamma.0].value.len();
            let rows = rstd.len();
            let gv = &nodes[gamma.0].value;
            acc(nodes, grads, *x, |gx| {
                let inv_d = T::one() / T::of(d as f64);
                for r in 0..rows {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for c in 0..d {
                        let gh = g[r * d + c] * gv[c];
                        s1 += gh;
                        s2 += gh * xhat[r * d + c];
                    }
                    s1 *= inv_d;
                    s2 *= inv_d;
                    for c in 0..d {
                        let gh = g[r * d + c] * gv[c];
                        gx[r * d + c] += rstd[r] * (gh - s1 - xhat[r * d + c] * s2);
                    }
                }
            });
            acc(nodes, grads, *gamma, |gg| {
                for (i, &y) in g.iter().enumerate() {
                    gg[i % d] += y * xhat[i];
                }
            });
            acc(nodes, grads, *beta, |gb| {
                for (i, &y) in g.iter().enumerate() {
                    gb[i % d] += y;
                }
            });
        }
        Op::Gelu(x) => {
            let xv = &nodes[x.0].value;
            let sign = if fault == Some(Fault::GeluSign) {
                -T::one()
            } else {
                T::one()
            };
            acc(nodes, grads, *x, |gx| {
                for i in 0..g.len() {
                    gx[i] += sign * g[i] * gelu_grad(xv[i]);
                }
            });
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let n = node.shape.last();
            acc(nodes, grads, *x, |gx| {
                for r in 0..y.len() / n {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let s = dot(ys, gs);
                    for c in 0..n {
                        gx[r * n + c] += ys[c] * (gs[c] - s);
                    }
                }
            });
        }
        Op::Gather(x, index) => {
            acc(nodes, grads, *x, |gx| {
                for (&i, &y) in index.iter().zip(g) {
                    gx[i] += y;
                }
            });
        }
        &Op::Warp {
            src,
            disp,
            channels,
            h,
            w,
        } => {
            let sv = &nodes[src.0].value;
            let dv = &nodes[disp.0].value;
            let hw = h * w;
            let want_src = nodes[src.0].requires_grad;
            let want_disp = nodes[disp.0].requires_grad;
            let mut gsrc = if want_src {
                vec![T::zero(); channels * hw]
            } else {
                Vec::new()
            };
            let mut gdisp = if want_disp { vec![T::zero(); 2 * hw] } else { Vec::new() };
            for i in 0..h {
                for j in 0..w {
                    let p = i * w + j;
                    let s = sample_point(j, i, dv[p], dv[hw + p], h, w);
                    for ch in 0..channels {
                        let gp = g[ch * hw + p];
                        if gp == T::zero() {
                            continue;
                        }
                        if want_src {
                            s.scatter(&mut gsrc[ch * hw..(ch + 1) * hw], w, gp);
                        }
                        if want_disp {
                            let (sx, sy) = s.slope(&sv[ch * hw..(ch + 1) * hw], w);
                            gdisp[p] += gp * sx;
                            gdisp[hw + p] += gp * sy;
                        }
                    }
                }
            }
            if want_src {
                acc(nodes, grads, src, |gx| {
                    gx.iter_mut().zip(&gsrc).for_each(|(e, &y)| *e += y)
                });
            }
            if want_disp {
                acc(nodes, grads, disp, |gx| {
                    gx.iter_mut().zip(&gdisp).for_each(|(e, &y)| *e += y)
                });
            }
        }
        Op::Resize {
            x,
            channels,
            rows,
            cols,
            in_w,
        } => {
            let (out_h, out_w) = (rows.lo.len(), cols.lo.len());
            let in_h = nodes[x.0].value.len() / (channels * in_w);
            let w = *in_w;
            acc(nodes, grads, *x, |gx| {
                for ch in 0..*channels {
                    let plane = &mut gx[ch * in_h * w..(ch + 1) * in_h * w];
                    for oi in 0..out_h {
                        let (r0, r1, fy) = (rows.lo[oi], rows.hi[oi], T::of(rows.frac[oi]));
                        for oj in 0..out_w {
                            let (c0, c1, fx) = (cols.lo[oj], cols.hi[oj], T::of(cols.frac[oj]));
                            let gv = g[(ch * out_h + oi) * out_w + oj];
                            let one = T::one();
                            plane[r0 * w + c0] += gv * (one - fy) * (one - fx);
                            plane[r0 * w + c1] += gv * (one - fy) * fx;
                            plane[r1 * w + c0] += gv * fy * (one - fx);
                            plane[r1 * w + c1] += gv * fy * fx;
                        }
                    }
                }
            });
        }
    }
}
