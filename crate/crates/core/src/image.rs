//! Grayscale images, label masks and the value-level resampling helpers
//! shared by data loading, augmentation and synthesis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::gradcore::Tape;
use crate::real::Real;

/// Row-major `height × width` grayscale image, intensities nominally in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return dim_err(
                "Image::new",
                format!(
                    "{height}x{width} image needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            );
        }
        Ok(Image { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![T::zero(); height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Image { height, width, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    pub fn same_size<U>(&self, other: &Image<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// Mean squared difference.
    pub fn mse(&self, other: &Image<T>) -> Result<f64> {
        if !self.same_size(other) {
            return dim_err(
                "mse",
                format!("{}x{} vs {}x{}", self.height, self.width, other.height, other.width),
            );
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a.f64() - b.f64();
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }
}

/// Anatomical labels used by [`LabelMask`].
pub mod labels {
    pub const BACKGROUND: u8 = 0;
    /// Left-ventricle cavity (inside the endocardium).
    pub const LV_ENDO: u8 = 1;
    /// Ring between endocardium and epicardium.
    pub const MYOCARDIUM: u8 = 2;
    pub const LEFT_ATRIUM: u8 = 3;
    pub const STRUCTURES: [u8; 3] = [LV_ENDO, MYOCARDIUM, LEFT_ATRIUM];

    pub fn name(label: u8) -> &'static str {
        match label {
            BACKGROUND => "background",
            LV_ENDO => "lv_endo",
            MYOCARDIUM => "myocardium",
            LEFT_ATRIUM => "left_atrium",
            _ => "unknown",
        }
    }
}

/// Row-major integer label field with values in `{0,1,2,3}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return dim_err(
                "LabelMask::new",
                format!(
                    "{height}x{width} mask needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            );
        }
        if let Some(bad) = data.iter().find(|&&l| l > labels::LEFT_ATRIUM) {
            return Err(Error::Contract(format!("label {bad} outside 0..=3")));
        }
        Ok(LabelMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        LabelMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.width + j]
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

/// Corner-aligned bilinear resize to `height × width`.
pub fn resize<T: Real>(img: &Image<T>, height: usize, width: usize) -> Result<Image<T>> {
    if img.height == height && img.width == width {
        return Ok(img.clone());
    }
    let mut tape = Tape::<T>::new();
    let x = tape.constant([1, img.height, img.width], img.data.clone())?;
    let y = tape.resize_bilinear(x, height, width)?;
    Image::new(height, width, tape.value(y).to_vec())
}

/// Square bilinear resize used to bring inputs to the working resolution.
pub fn resize_image<T: Real>(img: &Image<T>, size: usize) -> Result<Image<T>> {
    if size < 2 {
        return Err(Error::Contract(format!("resize target {size} is below 2")));
    }
    resize(img, size, size)
}

/// Nearest-neighbour resize (labels are never blended).
pub fn resize_mask(mask: &LabelMask, height: usize, width: usize) -> LabelMask {
    let pick = |o: usize, n_out: usize, n_in: usize| -> usize {
        if n_out <= 1 {
            return 0;
        }
        let src = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        (libm::round(src) as usize).min(n_in - 1)
    };
    let mut data = Vec::with_capacity(height * width);
    for i in 0..height {
        let si = pick(i, height, mask.height);
        for j in 0..width {
            data.push(mask.at(si, pick(j, width, mask.width)));
        }
    }
    LabelMask { height, width, data }
}

/// Normalised 1-D Gaussian kernel with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = libm::ceil(3.0 * sigma).max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur of a row-major plane with clamp-to-edge borders.
pub fn blur_plane(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for i in 0..height {
        for j in 0..width {
            let mut s = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let jj = clamp(j as isize + t as isize - r, width);
                s += kv * data[i * width + jj];
            }
            tmp[i * width + j] = s;
        }
    }
    let mut out = vec![0.0; data.len()];
    for i in 0..height {
        for j in 0..width {
            let mut s = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let ii = clamp(i as isize + t as isize - r, height);
                s += kv * tmp[ii * width + j];
            }
            out[i * width + j] = s;
        }
    }
    out
}

pub fn gaussian_blur<T: Real>(img: &Image<T>, sigma: f64) -> Image<T> {
    let plane: Vec<f64> = img.data.iter().map(|v| v.f64()).collect();
    let out = blur_plane(&plane, img.height, img.width, sigma);
    Image {
        height: img.height,
        width: img.width,
        data: out.into_iter().map(T::of).collect(),
    }
}
