//! Harris corner detection, normalized patch descriptors, and ratio-test
//! matching. A deterministic stand-in for SIFT/ORB-class features: every
//! call on identical input yields identical keypoints and descriptors.

use crate::measure::Measurable;

use super::{Image, ImgError};

pub const DESCRIPTOR_LEN: usize = 64;
const PATCH_HALF: i64 = 4; // 8x8 patch, offsets -4..4 exclusive of +4
const MIN_SIDE: u32 = 16;
const NMS_RADIUS: f64 = 4.0;
const HARRIS_K: f64 = 0.04;
const RESPONSE_REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    pub score: f64,
}

impl Measurable for Keypoint {
    fn size_bytes(&self) -> u64 {
        24
    }
}

/// Keypoints with their aligned descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

impl Measurable for FeatureSet {
    fn size_bytes(&self) -> u64 {
        16 + self.keypoints.len() as u64 * 24
            + self.descriptors.len() as u64 * (DESCRIPTOR_LEN as u64 * 8)
    }
}

/// Harris response over the whole image. Window is a 5x5 Gaussian
/// (sigma 1) over gradient products; gradients are Sobel.
fn harris_response(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width as i64, img.height as i64);
    let at = |x: i64, y: i64| -> f64 {
        let cx = x.clamp(0, w - 1);
        let cy = y.clamp(0, h - 1);
        img.data[(cy * w + cx) as usize] as f64
    };
    let mut ix = vec![0.0f64; (w * h) as usize];
    let mut iy = vec![0.0f64; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            ix[(y * w + x) as usize] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            iy[(y * w + x) as usize] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    // 5x5 Gaussian window (sigma 1), applied separably to the three
    // gradient-product planes.
    let g = [0.054_488_685, 0.244_201_342, 0.402_619_947, 0.244_201_342, 0.054_488_685];
    let n = (w * h) as usize;
    let mut ixx = vec![0.0f64; n];
    let mut iyy = vec![0.0f64; n];
    let mut ixy = vec![0.0f64; n];
    for k in 0..n {
        ixx[k] = ix[k] * ix[k];
        iyy[k] = iy[k] * iy[k];
        ixy[k] = ix[k] * iy[k];
    }
    let sxx = smooth5(&ixx, w, h, &g);
    let syy = smooth5(&iyy, w, h, &g);
    let sxy = smooth5(&ixy, w, h, &g);
    let mut response = vec![0.0f64; n];
    for k in 0..n {
        let det = sxx[k] * syy[k] - sxy[k] * sxy[k];
        let trace = sxx[k] + syy[k];
        response[k] = det - HARRIS_K * trace * trace;
    }
    response
}

/// Two-pass 5-tap smoothing with clamped edges.
fn smooth5(plane: &[f64], w: i64, h: i64, g: &[f64; 5]) -> Vec<f64> {
    let mut mid = vec![0.0f64; plane.len()];
    for y in 0..h {
        let row = (y * w) as usize;
        for x in 0..w {
            let mut acc = 0.0;
            for (i, wgt) in g.iter().enumerate() {
                let sx = (x + i as i64 - 2).clamp(0, w - 1) as usize;
                acc += wgt * plane[row + sx];
            }
            mid[row + x as usize] = acc;
        }
    }
    let mut out = vec![0.0f64; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, wgt) in g.iter().enumerate() {
                let sy = (y + j as i64 - 2).clamp(0, h - 1);
                acc += wgt * mid[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Top `max_kp` Harris corners with non-max suppression.
///
/// Candidates keep an 8-pixel margin from the border so the descriptor
/// patch always fits. Ordering is (score desc, y, x) and the suppression
/// radius is 4 pixels, so results are deterministic.
pub fn detect_corners(img: &Image, max_kp: usize) -> Result<Vec<Keypoint>, ImgError> {
    if img.channels != 1 {
        return Err(ImgError::BadChannels("corner detection needs 1 channel".into()));
    }
    if img.width < MIN_SIDE || img.height < MIN_SIDE {
        return Err(ImgError::TooSmall {
            need: MIN_SIDE,
            width: img.width,
            height: img.height,
        });
    }
    let response = harris_response(img);
    let w = img.width as i64;
    let margin = 2 * PATCH_HALF; // safe for patch sampling
    let max_r = response.iter().cloned().fold(0.0f64, f64::max);
    if max_r <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = max_r * RESPONSE_REL_FLOOR;
    let mut candidates: Vec<Keypoint> = Vec::new();
    for y in margin..img.height as i64 - margin {
        for x in margin..w - margin {
            let r = response[(y * w + x) as usize];
            if r > floor {
                candidates.push(Keypoint {
                    x: x as u32,
                    y: y as u32,
                    score: r,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    let mut picked: Vec<Keypoint> = Vec::new();
    for kp in candidates {
        if picked.len() >= max_kp {
            break;
        }
        let suppressed = picked.iter().any(|p| {
            let dx = p.x as f64 - kp.x as f64;
            let dy = p.y as f64 - kp.y as f64;
            (dx * dx + dy * dy).sqrt() <= NMS_RADIUS
        });
        if !suppressed {
            picked.push(kp);
        }
    }
    Ok(picked)
}

/// Mean/variance-normalized 8x8 patch descriptors for the given keypoints.
pub fn compute_descriptors(img: &Image, keypoints: &[Keypoint]) -> Result<FeatureSet, ImgError> {
    if img.channels != 1 {
        return Err(ImgError::BadChannels("descriptors need 1 channel".into()));
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let mut descriptors = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let mut patch = Vec::with_capacity(DESCRIPTOR_LEN);
        for dy in -PATCH_HALF..PATCH_HALF {
            for dx in -PATCH_HALF..PATCH_HALF {
                let sx = (kp.x as i64 + dx).clamp(0, w - 1);
                let sy = (kp.y as i64 + dy).clamp(0, h - 1);
                patch.push(img.data[(sy * w + sx) as usize] as f64);
            }
        }
        let mean = patch.iter().sum::<f64>() / DESCRIPTOR_LEN as f64;
        let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / DESCRIPTOR_LEN as f64;
        let std = var.sqrt();
        if std < 1e-9 {
            patch.iter_mut().for_each(|v| *v = 0.0);
        } else {
            patch.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        descriptors.push(patch);
    }
    Ok(FeatureSet {
        keypoints: keypoints.to_vec(),
        descriptors,
    })
}

/// Convenience: detect corners then describe them.
pub fn extract_features(img: &Image, max_kp: usize) -> Result<FeatureSet, ImgError> {
    let kps = detect_corners(img, max_kp)?;
    compute_descriptors(img, &kps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Index pairs (into `a`, into `b`).
    pub matches: Vec<(usize, usize)>,
    /// |matches| / max(1, min(|a|, |b|)).
    pub match_ratio: f64,
}

/// Nearest-neighbor matching with Lowe's ratio test.
///
/// For each descriptor in `a`, the best and second-best neighbors in `b`
/// are found by Euclidean distance; the match is kept when
/// `best <= ratio_thresh * second_best`. Ties break toward the lower index.
pub fn match_descriptors(
    a: &FeatureSet,
    b: &FeatureSet,
    ratio_thresh: f64,
) -> Result<MatchResult, ImgError> {
    if !(ratio_thresh > 0.0 && ratio_thresh <= 1.0) {
        return Err(ImgError::BadParam(format!(
            "ratio threshold must be in (0, 1], got {ratio_thresh}"
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(MatchResult {
            matches: Vec::new(),
            match_ratio: 0.0,
        });
    }
    let mut matches = Vec::new();
    for (ia, da) in a.descriptors.iter().enumerate() {
        // Squared distances with early abandonment: once a partial sum
        // exceeds the current second-best it cannot change the outcome.
        let mut best = f64::INFINITY;
        let mut best_idx = 0usize;
        let mut second = f64::INFINITY;
        for (ib, db) in b.descriptors.iter().enumerate() {
            let mut d = 0.0f64;
            let mut abandoned = false;
            for (chunk_a, chunk_b) in da.chunks_exact(8).zip(db.chunks_exact(8)) {
                for (x, y) in chunk_a.iter().zip(chunk_b) {
                    let diff = x - y;
                    d += diff * diff;
                }
                if d >= second {
                    abandoned = true;
                    break;
                }
            }
            if abandoned {
                continue;
            }
            if d < best {
                second = best;
                best = d;
                best_idx = ib;
            } else if d < second {
                second = d;
            }
        }
        // Ratio test on squared distances: d1 <= r * d2 iff d1^2 <= r^2 * d2^2.
        let accept = if second.is_finite() {
            best <= ratio_thresh * ratio_thresh * second
        } else {
            true
        };
        if accept {
            matches.push((ia, best_idx));
        }
    }
    let denom = a.len().min(b.len()).max(1);
    let match_ratio = matches.len() as f64 / denom as f64;
    Ok(MatchResult {
        matches,
        match_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corner_image() -> Image {
        // One bright rectangle on black: strong corners at its vertices.
        let mut img = Image::filled(40, 40, 1, 0);
        for y in 10..28u32 {
            for x in 12..30u32 {
                img.set(x, y, 0, 220);
            }
        }
        img
    }

    #[test]
    fn blank_image_has_no_keypoints() {
        let img = Image::filled(32, 32, 1, 128);
        assert!(detect_corners(&img, 10).unwrap().is_empty());
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = Image::filled(8, 8, 1, 0);
        assert!(matches!(detect_corners(&img, 4), Err(ImgError::TooSmall { .. })));
    }

    #[test]
    fn top_keypoint_sits_on_a_rectangle_corner() {
        let img = corner_image();
        let kps = detect_corners(&img, 4).unwrap();
        assert!(!kps.is_empty());
        // Brute-force check: the reported top score equals the true
        // response maximum inside the detector margin.
        let response = harris_response(&img);
        let w = img.width as i64;
        let mut max_inside = f64::MIN;
        for y in 8..img.height as i64 - 8 {
            for x in 8..w - 8 {
                max_inside = max_inside.max(response[(y * w + x) as usize]);
            }
        }
        assert!((kps[0].score - max_inside).abs() <= 1e-9 * max_inside.abs());
        let corners = [(12i64, 10i64), (29, 10), (12, 27), (29, 27)];
        let near = corners.iter().any(|(cx, cy)| {
            (kps[0].x as i64 - cx).abs() <= 1 && (kps[0].y as i64 - cy).abs() <= 1
        });
        assert!(near, "top keypoint {:?} not near any rectangle corner", kps[0]);
    }

    #[test]
    fn identical_images_identical_features() {
        let img = corner_image();
        let a = extract_features(&img, 16).unwrap();
        let b = extract_features(&img, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_match_is_identity_with_ratio_one() {
        let img = corner_image();
        let f = extract_features(&img, 16).unwrap();
        assert!(f.len() >= 4);
        let m = match_descriptors(&f, &f, 0.8).unwrap();
        assert_eq!(m.match_ratio, 1.0);
        for (ia, ib) in &m.matches {
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn far_apart_descriptors_do_not_match() {
        // Construct descriptor sets directly: `a` near the origin axis,
        // `b` a pair of nearly identical far points, so every best/second
        // distance ratio is close to 1 and fails a strict threshold.
        let kp = Keypoint { x: 8, y: 8, score: 1.0 };
        let a = FeatureSet {
            keypoints: vec![kp],
            descriptors: vec![vec![0.0; DESCRIPTOR_LEN]],
        };
        let mut d1 = vec![10.0; DESCRIPTOR_LEN];
        let mut d2 = vec![10.0; DESCRIPTOR_LEN];
        d1[0] = 10.1;
        d2[0] = 9.9;
        let b = FeatureSet {
            keypoints: vec![kp, kp],
            descriptors: vec![d1, d2],
        };
        let m = match_descriptors(&a, &b, 0.5).unwrap();
        assert!(m.matches.is_empty());
        assert_eq!(m.match_ratio, 0.0);
    }

    #[test]
    fn empty_set_gives_zero_ratio() {
        let empty = FeatureSet {
            keypoints: vec![],
            descriptors: vec![],
        };
        let img = corner_image();
        let f = extract_features(&img, 8).unwrap();
        let m = match_descriptors(&empty, &f, 0.8).unwrap();
        assert_eq!(m.match_ratio, 0.0);
    }

    #[test]
    fn bad_ratio_threshold_rejected() {
        let empty = FeatureSet {
            keypoints: vec![],
            descriptors: vec![],
        };
        assert!(match_descriptors(&empty, &empty, 0.0).is_err());
        assert!(match_descriptors(&empty, &empty, 1.5).is_err());
    }
}
