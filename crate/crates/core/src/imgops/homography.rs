//! Planar homography estimation (normalized DLT inside RANSAC) and
//! inverse-mapped warping onto a union canvas.

use crate::measure::Measurable;
use crate::rng::SplitMix64;

use super::{Image, ImgError};

/// 3x3 projective transform, row-major, normalized so the bottom-right
/// element is 1 when nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    pub m: [f64; 9],
}

impl Measurable for Homography {
    fn size_bytes(&self) -> u64 {
        9 * 8 + 16
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0],
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > 1e-12
    }

    pub fn inverse(&self) -> Result<Homography, ImgError> {
        let d = self.det();
        if d.abs() <= 1e-12 {
            return Err(ImgError::SingularHomography);
        }
        let m = &self.m;
        let inv = [
            (m[4] * m[8] - m[5] * m[7]) / d,
            (m[2] * m[7] - m[1] * m[8]) / d,
            (m[1] * m[5] - m[2] * m[4]) / d,
            (m[5] * m[6] - m[3] * m[8]) / d,
            (m[0] * m[8] - m[2] * m[6]) / d,
            (m[2] * m[3] - m[0] * m[5]) / d,
            (m[3] * m[7] - m[4] * m[6]) / d,
            (m[1] * m[6] - m[0] * m[7]) / d,
            (m[0] * m[4] - m[1] * m[3]) / d,
        ];
        Ok(Homography { m: inv }.normalized())
    }

    /// Apply to a point; returns None when the point maps to infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[6] * x + m[7] * y + m[8];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (m[0] * x + m[1] * y + m[2]) / w,
            (m[3] * x + m[4] * y + m[5]) / w,
        ))
    }

    pub fn normalized(mut self) -> Self {
        let w = self.m[8];
        if w.abs() > 1e-12 {
            for v in &mut self.m {
                *v /= w;
            }
        }
        self
    }
}

/// Jacobi eigendecomposition of a symmetric matrix, returning the
/// eigenvector of the smallest eigenvalue. Deterministic sweep order.
#[allow(clippy::needless_range_loop)]
fn min_eigenvector_sym(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let mut v = vec![vec![0.0f64; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut min_idx = 0;
    for i in 1..n {
        if a[i][i] < a[min_idx][min_idx] {
            min_idx = i;
        }
    }
    (0..n).map(|k| v[k][min_idx]).collect()
}

/// Hartley normalization: translate the centroid to the origin and scale
/// the mean distance to sqrt(2). Returns (transform, transformed points).
fn hartley_normalize(points: &[(f64, f64)]) -> ([f64; 9], Vec<(f64, f64)>) {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let scale = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    let t = [scale, 0.0, -scale * cx, 0.0, scale, -scale * cy, 0.0, 0.0, 1.0];
    let mapped = points
        .iter()
        .map(|p| (scale * (p.0 - cx), scale * (p.1 - cy)))
        .collect();
    (t, mapped)
}

fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0f64; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    out
}

/// A (source, destination) point correspondence.
pub type PointPair = ((f64, f64), (f64, f64));

/// Direct linear transform on >= 4 correspondences, with Hartley
/// normalization of both point sets.
fn dlt(pairs: &[PointPair]) -> Result<Homography, ImgError> {
    if pairs.len() < 4 {
        return Err(ImgError::InsufficientMatches(pairs.len()));
    }
    let src: Vec<(f64, f64)> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
    let (t_src, src_n) = hartley_normalize(&src);
    let (t_dst, dst_n) = hartley_normalize(&dst);

    // Build A^T A directly (9x9) from the 2n x 9 constraint rows.
    let mut ata = vec![vec![0.0f64; 9]; 9];
    let mut accumulate = |row: [f64; 9]| {
        for i in 0..9 {
            for j in 0..9 {
                ata[i][j] += row[i] * row[j];
            }
        }
    };
    for (s, d) in src_n.iter().zip(&dst_n) {
        let (x, y) = *s;
        let (u, v) = *d;
        accumulate([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        accumulate([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h = min_eigenvector_sym(ata);
    let h_norm: [f64; 9] = h.try_into().expect("9-vector");
    // Denormalize: H = T_dst^-1 * H_n * T_src.
    let t_dst_h = Homography { m: t_dst };
    let t_dst_inv = t_dst_h.inverse()?;
    let full = mat_mul(&t_dst_inv.m, &mat_mul(&h_norm, &t_src));
    let h = Homography { m: full }.normalized();
    if !h.is_invertible() {
        return Err(ImgError::DegenerateConfiguration(
            "DLT produced a singular homography".into(),
        ));
    }
    Ok(h)
}

/// Symmetric transfer distance of one correspondence under H.
fn symmetric_transfer(h: &Homography, h_inv: &Homography, pair: &PointPair) -> f64 {
    let ((sx, sy), (dx, dy)) = *pair;
    let fwd = match h.apply(sx, sy) {
        Some((px, py)) => ((px - dx).powi(2) + (py - dy).powi(2)).sqrt(),
        None => return f64::INFINITY,
    };
    let bwd = match h_inv.apply(dx, dy) {
        Some((px, py)) => ((px - sx).powi(2) + (py - sy).powi(2)).sqrt(),
        None => return f64::INFINITY,
    };
    0.5 * (fwd + bwd)
}

#[allow(clippy::needless_range_loop)]
fn collinear(p: &[(f64, f64)]) -> bool {
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            for k in j + 1..p.len() {
                let cross = (p[j].0 - p[i].0) * (p[k].1 - p[i].1)
                    - (p[j].1 - p[i].1) * (p[k].0 - p[i].0);
                if cross.abs() < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacEstimate {
    pub homography: Homography,
    pub inlier_count: usize,
    /// Indices into the input pair list.
    pub inliers: Vec<usize>,
}

/// RANSAC over 4-point samples with a normalized-DLT model and a final
/// re-fit on all inliers. Deterministic for a given seed: sampling uses a
/// seeded generator and ties keep the first-found model.
pub fn estimate_homography_ransac(
    pairs: &[PointPair],
    iters: usize,
    inlier_px: f64,
    seed: u64,
) -> Result<RansacEstimate, ImgError> {
    if pairs.len() < 4 {
        return Err(ImgError::InsufficientMatches(pairs.len()));
    }
    if pairs.len() == 4 {
        let h = dlt(pairs)?;
        let h_inv = h.inverse()?;
        let inliers: Vec<usize> = (0..4)
            .filter(|&i| symmetric_transfer(&h, &h_inv, &pairs[i]) < inlier_px)
            .collect();
        return Ok(RansacEstimate {
            inlier_count: inliers.len(),
            inliers,
            homography: h,
        });
    }

    let mut rng = SplitMix64::new(seed);
    let mut best: Option<(f64, Homography)> = None;
    let mut degenerate_streak = 0usize;
    let mut it = 0usize;
    while it < iters {
        let sample = rng.distinct(4, pairs.len());
        let src: Vec<(f64, f64)> = sample.iter().map(|&i| pairs[i].0).collect();
        let dst: Vec<(f64, f64)> = sample.iter().map(|&i| pairs[i].1).collect();
        if collinear(&src) || collinear(&dst) {
            // Resample without consuming an iteration, bounded so fully
            // collinear inputs still terminate.
            degenerate_streak += 1;
            if degenerate_streak > iters * 10 {
                return Err(ImgError::DegenerateConfiguration(
                    "could not draw a non-collinear 4-point sample".into(),
                ));
            }
            continue;
        }
        degenerate_streak = 0;
        it += 1;
        let sampled: Vec<_> = sample.iter().map(|&i| pairs[i]).collect();
        let Ok(h) = dlt(&sampled) else { continue };
        let Ok(h_inv) = h.inverse() else { continue };
        // Truncated squared-error score: a zero-residual model beats a
        // compromise model that grazes more near-threshold matches.
        let score: f64 = pairs
            .iter()
            .map(|p| symmetric_transfer(&h, &h_inv, p).min(inlier_px).powi(2))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, h));
        }
    }
    let (_, rough) = best.ok_or_else(|| {
        ImgError::DegenerateConfiguration("no usable RANSAC model".into())
    })?;
    let rough_inv = rough.inverse()?;
    let inliers: Vec<usize> = (0..pairs.len())
        .filter(|&i| symmetric_transfer(&rough, &rough_inv, &pairs[i]) < inlier_px)
        .collect();
    if inliers.len() < 4 {
        return Ok(RansacEstimate {
            inlier_count: inliers.len(),
            inliers,
            homography: rough,
        });
    }
    let inlier_pairs: Vec<_> = inliers.iter().map(|&i| pairs[i]).collect();
    let refit = dlt(&inlier_pairs).unwrap_or(rough);
    let refit_inv = refit.inverse()?;
    let final_inliers: Vec<usize> = (0..pairs.len())
        .filter(|&i| symmetric_transfer(&refit, &refit_inv, &pairs[i]) < inlier_px)
        .collect();
    Ok(RansacEstimate {
        inlier_count: final_inliers.len(),
        inliers: final_inliers,
        homography: refit,
    })
}

/// Warp `add` into the `base` frame (H maps add coordinates to base
/// coordinates) and composite both onto the union canvas. Overlapping
/// pixels keep the base value.
pub fn warp_merge(base: &Image, add: &Image, h: &Homography) -> Result<Image, ImgError> {
    if !h.is_invertible() {
        return Err(ImgError::SingularHomography);
    }
    let h_inv = h.inverse()?;
    let corners = [
        (0.0, 0.0),
        (add.width as f64, 0.0),
        (0.0, add.height as f64),
        (add.width as f64, add.height as f64),
    ];
    let mut min_x = 0.0f64;
    let mut min_y = 0.0f64;
    let mut max_x = base.width as f64;
    let mut max_y = base.height as f64;
    for (cx, cy) in corners {
        if let Some((wx, wy)) = h.apply(cx, cy) {
            min_x = min_x.min(wx);
            min_y = min_y.min(wy);
            max_x = max_x.max(wx);
            max_y = max_y.max(wy);
        }
    }
    // Snap near-integer bounds so an identity-like H keeps the canvas size.
    let off_x = (min_x + 1e-6).floor();
    let off_y = (min_y + 1e-6).floor();
    let out_w = ((max_x - 1e-6).ceil() - off_x).max(1.0) as u32;
    let out_h = ((max_y - 1e-6).ceil() - off_y).max(1.0) as u32;
    let channels = base.channels.max(add.channels);
    let mut out = Image::filled(out_w, out_h, channels, 0);

    let read = |img: &Image, x: u32, y: u32, c: u8| -> u8 {
        if img.channels == channels {
            img.sample(x, y, c)
        } else {
            img.sample(x, y, 0)
        }
    };
    for y in 0..out_h {
        for x in 0..out_w {
            let bx = x as f64 + off_x;
            let by = y as f64 + off_y;
            // Base wins in overlaps.
            if bx >= 0.0 && bx < base.width as f64 && by >= 0.0 && by < base.height as f64 {
                for c in 0..channels {
                    out.set(x, y, c, read(base, bx as u32, by as u32, c));
                }
                continue;
            }
            if let Some((ax, ay)) = h_inv.apply(bx + 0.5, by + 0.5) {
                let ax = ax - 0.5;
                let ay = ay - 0.5;
                if ax > -1.0 && ax < add.width as f64 && ay > -1.0 && ay < add.height as f64 {
                    for c in 0..channels {
                        let v = bilinear(add, ax, ay, c, channels);
                        out.set(x, y, c, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn bilinear(img: &Image, x: f64, y: f64, c: u8, out_channels: u8) -> u8 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |ix: i64, iy: i64| -> f64 {
        let cx = ix.clamp(0, img.width as i64 - 1) as u32;
        let cy = iy.clamp(0, img.height as i64 - 1) as u32;
        let ch = if img.channels == out_channels { c } else { 0 };
        img.sample(cx, cy, ch) as f64
    };
    let (x0i, y0i) = (x0 as i64, y0 as i64);
    let v = sample(x0i, y0i) * (1.0 - fx) * (1.0 - fy)
        + sample(x0i + 1, y0i) * fx * (1.0 - fy)
        + sample(x0i, y0i + 1) * (1.0 - fx) * fy
        + sample(x0i + 1, y0i + 1) * fx * fy;
    v.round().clamp(0.0, 255.0) as u8
}
