//! Segmentation overlap, boundary distances and Jacobian statistics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::image::{labels, LabelMask};
use crate::real::Real;
use crate::svf::{jacobian_determinant, VectorField};

/// Nearest-neighbour warp of a label mask: `out(i,j) = mask(round(i + dy), round(j + dx))`,
/// clamped to the grid.
pub fn warp_mask<T: Real>(mask: &LabelMask, disp: &VectorField<T>) -> Result<LabelMask> {
    let (h, w) = (mask.height, mask.width);
    if (disp.height, disp.width) != (h, w) {
        return dim_err(
            "warp_mask",
            format!("mask {h}x{w} vs field {}x{}", disp.height, disp.width),
        );
    }
    let pick = |c: f64, n: usize| libm::round(c).clamp(0.0, (n - 1) as f64) as usize;
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let si = pick(i as f64 + disp.y(i, j).f64(), h);
            let sj = pick(j as f64 + disp.x(i, j).f64(), w);
            data.push(mask.at(si, sj));
        }
    }
    Ok(LabelMask {
        height: h,
        width: w,
        data,
    })
}

/// `2|A∩B| / (|A|+|B|)` for the pixels carrying `label`; 1 when both are empty.
pub fn dice(a: &LabelMask, b: &LabelMask, label: u8) -> f64 {
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (na + nb) as f64
}

/// Label pixels with a 4-neighbour outside the label or on the image border.
pub fn boundary(mask: &LabelMask, label: u8) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if mask.at(i, j) != label {
                continue;
            }
            let edge = i == 0
                || j == 0
                || i == h - 1
                || j == w - 1
                || mask.at(i - 1, j) != label
                || mask.at(i + 1, j) != label
                || mask.at(i, j - 1) != label
                || mask.at(i, j + 1) != label;
            if edge {
                out.push((i, j));
            }
        }
    }
    out
}

/// Hausdorff and mean surface distance between the boundaries of two label sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub hausdorff: f64,
    pub mean: f64,
}

/// Boundary distances in pixels. `None` when either set is empty.
pub fn surface_distances(a: &LabelMask, b: &LabelMask, label: u8) -> Option<SurfaceDistances> {
    surface_distances_scaled(a, b, label, (1.0, 1.0))
}

/// Boundary distances with per-axis pixel spacing `(row, col)`.
pub fn surface_distances_scaled(
    a: &LabelMask,
    b: &LabelMask,
    label: u8,
    spacing: (f64, f64),
) -> Option<SurfaceDistances> {
    let ba = boundary(a, label);
    let bb = boundary(b, label);
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let (h, w) = (a.height, a.width);
    let da = squared_edt(&bb, h, w, spacing);
    let db = squared_edt(&ba, h, w, spacing);
    let directed = |pts: &[(usize, usize)], field: &[f64]| -> (f64, f64) {
        let mut max: f64 = 0.0;
        let mut sum = 0.0;
        for &(i, j) in pts {
            let d = libm::sqrt(field[i * w + j]);
            max = max.max(d);
            sum += d;
        }
        (max, sum / pts.len() as f64)
    };
    let (max_ab, mean_ab) = directed(&ba, &da);
    let (max_ba, mean_ba) = directed(&bb, &db);
    Some(SurfaceDistances {
        hausdorff: max_ab.max(max_ba),
        mean: 0.5 * (mean_ab + mean_ba),
    })
}

/// Exact squared Euclidean distance to the nearest of `sites` for every pixel
/// (separable lower-envelope transform).
fn squared_edt(sites: &[(usize, usize)], h: usize, w: usize, spacing: (f64, f64)) -> Vec<f64> {
    let mut f = vec![f64::INFINITY; h * w];
    for &(i, j) in sites {
        f[i * w + j] = 0.0;
    }
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h.max(w)];
    for j in 0..w {
        for i in 0..h {
            col[i] = f[i * w + j];
        }
        edt_1d(&col, &mut tmp[..h], spacing.0);
        for i in 0..h {
            f[i * w + j] = tmp[i];
        }
    }
    let mut row = vec![0.0; w];
    for i in 0..h {
        row.copy_from_slice(&f[i * w..(i + 1) * w]);
        edt_1d(&row, &mut tmp[..w], spacing.1);
        f[i * w..(i + 1) * w].copy_from_slice(&tmp[..w]);
    }
    f
}

/// `out[q] = min_p (s·(q−p))² + g[p]` over finite `g[p]`.
#[allow(clippy::needless_range_loop)]
fn edt_1d(g: &[f64], out: &mut [f64], s: f64) {
    let n = g.len();
    let s2 = s * s;
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let key = |p: usize| g[p] + s2 * (p * p) as f64;
    for q in 0..n {
        if !g[q].is_finite() {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.clear();
                z.push(f64::NEG_INFINITY);
                break;
            };
            let x = (key(q) - key(p)) / (2.0 * s2 * (q - p) as f64);
            if x <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
                if v.is_empty() {
                    continue;
                }
            } else {
                v.push(q);
                z.push(x);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = s2 * d * d + g[v[k]];
    }
}

/// Jacobian-determinant statistics over a region of interest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    /// Fraction of ROI pixels with determinant ≤ 0.
    pub neg_frac: f64,
    pub count: usize,
}

/// Determinant values of `disp` restricted to `roi == label`.
pub fn jacobian_values<T: Real>(disp: &VectorField<T>, roi: &LabelMask, label: u8) -> Result<Vec<f64>> {
    if (disp.height, disp.width) != (roi.height, roi.width) {
        return dim_err(
            "jacobian_stats",
            format!(
                "field {}x{} vs roi {}x{}",
                disp.height, disp.width, roi.height, roi.width
            ),
        );
    }
    let jac = jacobian_determinant(disp)?;
    Ok(jac
        .data
        .iter()
        .zip(&roi.data)
        .filter(|(_, &l)| l == label)
        .map(|(&v, _)| v)
        .collect())
}

/// `Ok(None)` when the ROI is empty.
pub fn jacobian_stats<T: Real>(disp: &VectorField<T>, roi: &LabelMask, label: u8) -> Result<Option<JacobianStats>> {
    let vals = jacobian_values(disp, roi, label)?;
    if vals.is_empty() {
        return Ok(None);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Some(JacobianStats {
        mean,
        std: libm::sqrt(var),
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        neg_frac: vals.iter().filter(|&&v| v <= 0.0).count() as f64 / n,
        count: vals.len(),
    }))
}

/// Metrics of one structure for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureMetrics {
    pub label: u8,
    pub dice: f64,
    /// `None` when either boundary is empty.
    pub distances: Option<SurfaceDistances>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub structures: Vec<StructureMetrics>,
    pub jacobian: Option<JacobianStats>,
    /// Raw myocardium determinants, for pooled distributions.
    pub jacobian_values: Vec<f64>,
}

/// All metrics for a registered pair. `warped_mask` is the moving mask after
/// warping, `fixed_mask` the reference; Jacobians are taken on the
/// myocardium of the fixed mask (the grid `disp` lives on).
pub fn evaluate_pair<T: Real>(
    fixed_mask: &LabelMask,
    warped_mask: &LabelMask,
    disp: &VectorField<T>,
    spacing: (f64, f64),
) -> Result<PairMetrics> {
    if (fixed_mask.height, fixed_mask.width) != (warped_mask.height, warped_mask.width) {
        return dim_err("evaluate_pair", "mask sizes differ".into());
    }
    let structures = labels::STRUCTURES
        .iter()
        .map(|&l| StructureMetrics {
            label: l,
            dice: dice(fixed_mask, warped_mask, l),
            distances: surface_distances_scaled(fixed_mask, warped_mask, l, spacing),
        })
        .collect();
    let values = jacobian_values(disp, fixed_mask, labels::MYOCARDIUM)?;
    let jacobian = jacobian_stats(disp, fixed_mask, labels::MYOCARDIUM)?;
    Ok(PairMetrics {
        structures,
        jacobian,
        jacobian_values: values,
    })
}

/// Boxplot statistics of a sample.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty sample. Quantiles interpolate linearly between
    /// order statistics.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Summary {
            count: v.len(),
            mean,
            std: libm::sqrt(var),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}
