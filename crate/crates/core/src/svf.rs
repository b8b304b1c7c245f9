//! Stationary velocity fields and the spatial transform.
//!
//! Fields are `[2, h, w]` row-major: channel 0 is the x (column)
//! displacement, channel 1 the y (row) displacement, both in pixels of the
//! field's own grid. A transformation is stored as its displacement from the
//! identity grid, `φ = Id + u`. Sampling clamps coordinates to the grid edge.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::gradcore::{Tape, Tensor};
use crate::image::Image;
use crate::real::Real;

/// Scaling-and-squaring steps used unless configured otherwise.
pub const DEFAULT_STEPS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Velocity,
    Displacement,
}

impl FieldKind {
    fn name(self) -> &'static str {
        match self {
            FieldKind::Velocity => "velocity",
            FieldKind::Displacement => "displacement",
        }
    }
}

/// Owned two-channel field.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    pub height: usize,
    pub width: usize,
    pub kind: FieldKind,
    pub data: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(height: usize, width: usize, kind: FieldKind, data: Vec<T>) -> Result<Self> {
        if data.len() != 2 * height * width {
            return dim_err(
                "VectorField::new",
                format!(
                    "{height}x{width} field needs {} values, got {}",
                    2 * height * width,
                    data.len()
                ),
            );
        }
        Ok(VectorField {
            height,
            width,
            kind,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, kind: FieldKind) -> Self {
        VectorField {
            height,
            width,
            kind,
            data: vec![T::zero(); 2 * height * width],
        }
    }

    pub fn constant(height: usize, width: usize, kind: FieldKind, x: T, y: T) -> Self {
        Self::from_fn(height, width, kind, |_, _| (x, y))
    }

    /// Build from `f(row, col) -> (x, y)`.
    pub fn from_fn(height: usize, width: usize, kind: FieldKind, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let hw = height * width;
        let mut data = vec![T::zero(); 2 * hw];
        for i in 0..height {
            for j in 0..width {
                let (x, y) = f(i, j);
                data[i * width + j] = x;
                data[hw + i * width + j] = y;
            }
        }
        VectorField {
            height,
            width,
            kind,
            data,
        }
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn y(&self, i: usize, j: usize) -> T {
        self.data[self.height * self.width + i * self.width + j]
    }

    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        libm::hypot(self.x(i, j).f64(), self.y(i, j).f64())
    }

    pub fn max_magnitude(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.height {
            for j in 0..self.width {
                m = m.max(self.magnitude(i, j));
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: T) -> Self {
        VectorField {
            data: self.data.iter().map(|&v| v * c).collect(),
            ..self.clone()
        }
    }

    pub fn with_kind(mut self, kind: FieldKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn cast<U: Real>(&self) -> VectorField<U> {
        VectorField {
            height: self.height,
            width: self.width,
            kind: self.kind,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// Place this field on `tape` as a constant.
    pub fn to_tape(&self, tape: &mut Tape<T>) -> FieldNode {
        let t = tape
            .constant([2, self.height, self.width], self.data.clone())
            .expect("field length checked at construction");
        FieldNode {
            tensor: t,
            height: self.height,
            width: self.width,
            kind: self.kind,
        }
    }

    /// Place this field on `tape` as a differentiable leaf.
    pub fn to_tape_leaf(&self, tape: &mut Tape<T>) -> FieldNode {
        let t = tape
            .leaf([2, self.height, self.width], self.data.clone())
            .expect("field length checked at construction");
        FieldNode {
            tensor: t,
            height: self.height,
            width: self.width,
            kind: self.kind,
        }
    }
}

/// A vector field living on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldNode {
    pub tensor: Tensor,
    pub height: usize,
    pub width: usize,
    pub kind: FieldKind,
}

impl FieldNode {
    pub fn wrap<T: Real>(tape: &Tape<T>, tensor: Tensor, kind: FieldKind) -> Result<Self> {
        match *tape.shape(tensor).dims() {
            [2, h, w] => Ok(FieldNode {
                tensor,
                height: h,
                width: w,
                kind,
            }),
            _ => dim_err(
                "FieldNode::wrap",
                format!("expected [2,h,w], got {}", tape.shape(tensor)),
            ),
        }
    }

    pub fn read<T: Real>(&self, tape: &Tape<T>) -> VectorField<T> {
        VectorField {
            height: self.height,
            width: self.width,
            kind: self.kind,
            data: tape.value(self.tensor).to_vec(),
        }
    }
}

/// Identity coordinate grid of a given size: `x(i,j) = j`, `y(i,j) = i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingGrid {
    pub height: usize,
    pub width: usize,
}

impl SamplingGrid {
    pub fn x(&self, _i: usize, j: usize) -> f64 {
        j as f64
    }

    pub fn y(&self, i: usize, _j: usize) -> f64 {
        i as f64
    }

    /// Absolute sample locations `Id + disp`.
    pub fn displaced<T: Real>(&self, disp: &VectorField<T>) -> VectorField<f64> {
        VectorField::from_fn(self.height, self.width, FieldKind::Displacement, |i, j| {
            (self.x(i, j) + disp.x(i, j).f64(), self.y(i, j) + disp.y(i, j).f64())
        })
    }
}

fn expect_kind(op: &'static str, f: &FieldNode, kind: FieldKind) -> Result<()> {
    if f.kind != kind {
        return Err(Error::Kind {
            op,
            expected: kind.name(),
            got: f.kind.name(),
        });
    }
    Ok(())
}

/// `w` with `Id + w = (Id + outer) ∘ (Id + inner)`, i.e.
/// `w = inner + outer(Id + inner)`.
pub fn compose_displacements<T: Real>(tape: &mut Tape<T>, outer: FieldNode, inner: FieldNode) -> Result<FieldNode> {
    expect_kind("compose_displacements", &outer, FieldKind::Displacement)?;
    expect_kind("compose_displacements", &inner, FieldKind::Displacement)?;
    if (outer.height, outer.width) != (inner.height, inner.width) {
        return dim_err(
            "compose_displacements",
            format!(
                "outer {}x{} vs inner {}x{}",
                outer.height, outer.width, inner.height, inner.width
            ),
        );
    }
    let sampled = tape.warp(outer.tensor, inner.tensor)?;
    let w = tape.add(inner.tensor, sampled)?;
    Ok(FieldNode { tensor: w, ..inner })
}

/// Scaling and squaring: `u₀ = v / 2^steps`, then `u ← u ∘ (Id + u)` `steps`
/// times, giving `Id + u ≈ exp(v)`.
pub fn integrate_svf<T: Real>(tape: &mut Tape<T>, v: FieldNode, steps: usize) -> Result<FieldNode> {
    expect_kind("integrate_svf", &v, FieldKind::Velocity)?;
    if steps == 0 {
        return Err(Error::Contract("integrate_svf needs at least one step".into()));
    }
    let scale = T::one() / T::of(libm::pow(2.0, steps as f64));
    let mut u = FieldNode {
        tensor: tape.scale(v.tensor, scale),
        kind: FieldKind::Displacement,
        ..v
    };
    for _ in 0..steps {
        u = compose_displacements(tape, u, u)?;
    }
    Ok(u)
}

/// Bilinear warp of `img: [h,w]` or `[c,h,w]` by a displacement on the same grid.
pub fn warp_image<T: Real>(tape: &mut Tape<T>, img: Tensor, disp: FieldNode) -> Result<Tensor> {
    expect_kind("warp_image", &disp, FieldKind::Displacement)?;
    tape.warp(img, disp.tensor)
}

/// Corner-aligned bilinear resampling to `new_h × new_w`, values rescaled by
/// `new_w / w` (x) and `new_h / h` (y) so they are in new-grid pixels.
pub fn resample_field<T: Real>(tape: &mut Tape<T>, f: FieldNode, new_h: usize, new_w: usize) -> Result<FieldNode> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::Contract(format!("cannot resample to {new_h}x{new_w}")));
    }
    if (new_h, new_w) == (f.height, f.width) {
        return Ok(f);
    }
    let r = tape.resize_bilinear(f.tensor, new_h, new_w)?;
    let sx = T::of(new_w as f64 / f.width as f64);
    let sy = T::of(new_h as f64 / f.height as f64);
    let n = new_h * new_w;
    let mut factors = vec![sx; 2 * n];
    factors[n..].iter_mut().for_each(|v| *v = sy);
    let c = tape.constant([2, new_h, new_w], factors)?;
    let scaled = tape.mul(r, c)?;
    Ok(FieldNode {
        tensor: scaled,
        height: new_h,
        width: new_w,
        kind: f.kind,
    })
}

/// Value-level `exp(v)` on a throwaway tape.
pub fn exp_field<T: Real>(v: &VectorField<T>, steps: usize) -> Result<VectorField<T>> {
    let mut tape = Tape::new();
    let vn = v.to_tape(&mut tape);
    integrate_svf(&mut tape, vn, steps).map(|u| u.read(&tape))
}

/// Value-level [`compose_displacements`].
pub fn compose<T: Real>(outer: &VectorField<T>, inner: &VectorField<T>) -> Result<VectorField<T>> {
    let mut tape = Tape::new();
    let (o, i) = (outer.to_tape(&mut tape), inner.to_tape(&mut tape));
    compose_displacements(&mut tape, o, i).map(|w| w.read(&tape))
}

/// Value-level [`warp_image`].
pub fn warp<T: Real>(img: &Image<T>, disp: &VectorField<T>) -> Result<Image<T>> {
    let mut tape = Tape::new();
    let x = tape.constant([img.height, img.width], img.data.clone())?;
    let d = disp.to_tape(&mut tape);
    let y = warp_image(&mut tape, x, d)?;
    Image::new(img.height, img.width, tape.value(y).to_vec())
}

/// Value-level [`resample_field`].
pub fn resample<T: Real>(f: &VectorField<T>, new_h: usize, new_w: usize) -> Result<VectorField<T>> {
    let mut tape = Tape::new();
    let n = f.to_tape(&mut tape);
    resample_field(&mut tape, n, new_h, new_w).map(|r| r.read(&tape))
}

/// Per-pixel Jacobian determinant of `Id + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl JacobianMap {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Values excluding a `border`-pixel frame.
    pub fn interior(&self, border: usize) -> impl Iterator<Item = f64> + '_ {
        let (h, w) = (self.height, self.width);
        (border..h.saturating_sub(border))
            .flat_map(move |i| (border..w.saturating_sub(border)).map(move |j| self.at(i, j)))
    }
}

/// `det [[1 + ∂ux/∂x, ∂ux/∂y], [∂uy/∂x, 1 + ∂uy/∂y]]` with central differences
/// inside and one-sided differences on the border.
pub fn jacobian_determinant<T: Real>(disp: &VectorField<T>) -> Result<JacobianMap> {
    let (h, w) = (disp.height, disp.width);
    if h < 3 || w < 3 {
        return dim_err("jacobian_determinant", format!("field {h}x{w} is smaller than 3x3"));
    }
    let diff = |get: &dyn Fn(usize, usize) -> f64, i: usize, j: usize, along_x: bool| -> f64 {
        let (n, k) = if along_x { (w, j) } else { (h, i) };
        let at = |m: usize| if along_x { get(i, m) } else { get(m, j) };
        if k == 0 {
            at(1) - at(0)
        } else if k == n - 1 {
            at(n - 1) - at(n - 2)
        } else {
            (at(k + 1) - at(k - 1)) * 0.5
        }
    };
    let ux = |i: usize, j: usize| disp.x(i, j).f64();
    let uy = |i: usize, j: usize| disp.y(i, j).f64();
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let a = 1.0 + diff(&ux, i, j, true);
            let b = diff(&ux, i, j, false);
            let c = diff(&uy, i, j, true);
            let d = 1.0 + diff(&uy, i, j, false);
            data.push(a * d - b * c);
        }
    }
    Ok(JacobianMap {
        height: h,
        width: w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_smooth_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn interior_max_diff(a: &VectorField<f64>, b: &VectorField<f64>, border: usize) -> f64 {
        let mut m: f64 = 0.0;
        for i in border..a.height - border {
            for j in border..a.width - border {
                m = m.max((a.x(i, j) - b.x(i, j)).abs()).max((a.y(i, j) - b.y(i, j)).abs());
            }
        }
        m
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let v = VectorField::<f64>::zeros(16, 16, FieldKind::Velocity);
        let u = exp_field(&v, 7).unwrap();
        assert!(u.data.iter().all(|&x| x == 0.0));
        assert_eq!(u.kind, FieldKind::Displacement);
    }

    #[test]
    fn constant_velocity_integrates_to_itself() {
        for &(a, b) in &[(2.0, -1.5), (-2.0, 2.0), (0.7, 0.0)] {
            let v = VectorField::<f64>::constant(32, 32, FieldKind::Velocity, a, b);
            let u = exp_field(&v, 7).unwrap();
            let expect = VectorField::constant(32, 32, FieldKind::Displacement, a, b);
            assert!(interior_max_diff(&u, &expect, 3) < 1e-5);
        }
    }

    #[test]
    fn integrate_rejects_displacement() {
        let d = VectorField::<f64>::zeros(8, 8, FieldKind::Displacement);
        assert!(matches!(exp_field(&d, 7), Err(Error::Kind { .. })));
    }

    #[test]
    fn compose_with_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_smooth_field::<f64, _>(&mut rng, 16, 16, 3.0, 2.0).with_kind(FieldKind::Displacement);
        let z = VectorField::zeros(16, 16, FieldKind::Displacement);
        assert_eq!(compose(&z, &f).unwrap(), f);
        assert_eq!(compose(&f, &z).unwrap(), f);
    }

    #[test]
    fn translations_compose_additively() {
        let o = VectorField::<f64>::constant(16, 16, FieldKind::Displacement, 1.0, 0.0);
        let i = VectorField::<f64>::constant(16, 16, FieldKind::Displacement, 0.0, 1.0);
        let w = compose(&o, &i).unwrap();
        let expect = VectorField::constant(16, 16, FieldKind::Displacement, 1.0, 1.0);
        assert!(interior_max_diff(&w, &expect, 2) < 1e-12);
    }

    #[test]
    fn compose_size_mismatch() {
        let o = VectorField::<f64>::zeros(8, 8, FieldKind::Displacement);
        let i = VectorField::<f64>::zeros(8, 9, FieldKind::Displacement);
        assert!(matches!(compose(&o, &i), Err(Error::Dimension { .. })));
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        let img = Image::from_fn(12, 9, |_, _| rng.random::<f64>());
        let d = VectorField::zeros(12, 9, FieldKind::Displacement);
        assert_eq!(warp(&img, &d).unwrap(), img);
    }

    #[test]
    fn translated_ramp() {
        let w = 16;
        let img = Image::<f64>::from_fn(10, w, |_, j| j as f64 / (w - 1) as f64);
        let d = VectorField::constant(10, w, FieldKind::Displacement, 1.0, 0.0);
        let out = warp(&img, &d).unwrap();
        for i in 1..9 {
            for j in 1..w - 2 {
                assert!((out.at(i, j) - (j + 1) as f64 / (w - 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warp_is_exact_on_affine_images() {
        let img = Image::<f64>::from_fn(16, 16, |i, j| 0.3 + 0.01 * i as f64 + 0.02 * j as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_smooth_field::<f64, _>(&mut rng, 16, 16, 3.0, 0.9).with_kind(FieldKind::Displacement);
        let out = warp(&img, &d).unwrap();
        for i in 1..15 {
            for j in 1..15 {
                let expect = 0.3 + 0.01 * (i as f64 + d.y(i, j)) + 0.02 * (j as f64 + d.x(i, j));
                assert!((out.at(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_smooth_field::<f64, _>(&mut rng, 8, 8, 2.0, 1.0);
        assert_eq!(resample(&f, 8, 8).unwrap(), f);
        let c = VectorField::<f64>::constant(32, 32, FieldKind::Displacement, 1.0, 1.0);
        let up = resample(&c, 128, 128).unwrap();
        assert!(up.data.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn resample_round_trip_linear() {
        let f = VectorField::<f64>::from_fn(16, 16, FieldKind::Displacement, |_, j| {
            (0.05 * j as f64, 0.02 * j as f64)
        });
        let back = resample(&resample(&f, 61, 61).unwrap(), 16, 16).unwrap();
        assert!(interior_max_diff(&back, &f, 1) < 1e-5);
    }

    #[test]
    fn jacobian_cases() {
        let z = VectorField::<f64>::zeros(8, 8, FieldKind::Displacement);
        assert!(jacobian_determinant(&z).unwrap().data.iter().all(|&j| j == 1.0));
        let t = VectorField::<f64>::constant(8, 8, FieldKind::Displacement, 1.3, -0.4);
        assert!(jacobian_determinant(&t)
            .unwrap()
            .data
            .iter()
            .all(|&j| (j - 1.0).abs() < 1e-12));
        let e = VectorField::<f64>::from_fn(10, 10, FieldKind::Displacement, |i, j| (0.1 * j as f64, 0.1 * i as f64));
        let jm = jacobian_determinant(&e).unwrap();
        assert!(jm.interior(1).all(|v| (v - 1.21).abs() < 1e-6));
        assert!(jacobian_determinant(&VectorField::<f64>::zeros(2, 8, FieldKind::Displacement)).is_err());
    }
}
