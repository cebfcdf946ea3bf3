//! Registration pairs: a textured reference scene and a moving image warped
//! from it under a known homography, plus ground-truth correspondences with
//! planted outliers.

use crate::imgops::{Homography, Image};
use crate::rng::SplitMix64;

use super::scene::textured_scene;
use super::{Correspondence, DatagenError, DatasetManifest, GroundTruth, ManifestEntry};

/// A generated pair: (id, moving image, reference image).
pub type ImagePair = (String, Image, Image);

/// Generate `n` pairs of `w`x`h` images. The true homography maps moving
/// coordinates into the reference frame: rotation by an angle drawn from
/// `[-rot_range, rot_range]` (radians) about the image center, composed
/// with a translation drawn from `[-trans_range, trans_range]` per axis.
///
/// When `rot_range` is zero the translation snaps to whole pixels, which
/// keeps detector-based recovery exact. `noise_sigma` adds Gaussian pixel
/// noise to the moving image. Each manifest entry carries the exact
/// homography and 60 correspondences of which `outlier_rate` are planted
/// mismatches.
#[allow(clippy::too_many_arguments)]
pub fn gen_warped_pairs(
    n: usize,
    w: u32,
    h: u32,
    trans_range: f64,
    rot_range: f64,
    noise_sigma: f64,
    outlier_rate: f64,
    seed: u64,
) -> Result<(Vec<ImagePair>, DatasetManifest), DatagenError> {
    if !(0.0..=0.5).contains(&outlier_rate) {
        return Err(DatagenError::BadParam(format!(
            "outlier_rate must be in [0, 0.5], got {outlier_rate}"
        )));
    }
    let max_shift = trans_range.abs();
    if (1.0 - max_shift / w as f64) * (1.0 - max_shift / h as f64) < 0.5 {
        return Err(DatagenError::BadParam(format!(
            "translation range {trans_range} leaves less than 50% overlap on {w}x{h}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut pairs = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let reference = textured_scene(w, h, &mut rng);
        let truth = sample_homography(w, h, trans_range, rot_range, &mut rng);
        let moving = render_moving(&reference, &truth, noise_sigma, &mut rng);
        let correspondences = plant_correspondences(w, h, &truth, outlier_rate, &mut rng);
        let im_id = format!("pair-{i:04}");
        entries.push(ManifestEntry {
            im_id: im_id.clone(),
            truth: GroundTruth::Pair {
                homography: truth.m,
                correspondences,
            },
        });
        pairs.push((im_id, moving, reference));
    }
    Ok((
        pairs,
        DatasetManifest {
            name: "warped_pairs".into(),
            count: n,
            width: w,
            height: h,
            seed,
            entries,
        },
    ))
}

fn sample_homography(
    w: u32,
    h: u32,
    trans_range: f64,
    rot_range: f64,
    rng: &mut SplitMix64,
) -> Homography {
    let (mut dx, mut dy) = (
        rng.range_f64(-trans_range, trans_range),
        rng.range_f64(-trans_range, trans_range),
    );
    if trans_range == 0.0 {
        dx = 0.0;
        dy = 0.0;
    }
    if rot_range == 0.0 {
        // Integer shifts keep pixel-grid detections exactly aligned.
        dx = dx.round();
        dy = dy.round();
        return Homography::translation(dx, dy);
    }
    let theta = rng.range_f64(-rot_range, rot_range);
    let (s, c) = theta.sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    // Rotate about the center, then translate.
    let m = [
        c,
        -s,
        cx - c * cx + s * cy + dx,
        s,
        c,
        cy - s * cx - c * cy + dy,
        0.0,
        0.0,
        1.0,
    ];
    Homography { m }
}

/// moving(x, y) = reference(H(x, y)), bilinear, zero outside.
fn render_moving(
    reference: &Image,
    h: &Homography,
    noise_sigma: f64,
    rng: &mut SplitMix64,
) -> Image {
    let (w, ht) = (reference.width, reference.height);
    let mut out = Image::filled(w, ht, reference.channels, 0);
    for y in 0..ht {
        for x in 0..w {
            if let Some((sx, sy)) = h.apply(x as f64, y as f64) {
                if sx >= 0.0 && sx <= w as f64 - 1.0 && sy >= 0.0 && sy <= ht as f64 - 1.0 {
                    for c in 0..reference.channels {
                        let v = bilinear(reference, sx, sy, c);
                        let v = if noise_sigma > 0.0 {
                            (v as f64 + noise_sigma * rng.normal()).round().clamp(0.0, 255.0) as u8
                        } else {
                            v
                        };
                        out.set(x, y, c, v);
                    }
                }
            }
        }
    }
    out
}

fn bilinear(img: &Image, x: f64, y: f64, c: u8) -> u8 {
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |ix: i64, iy: i64| -> f64 {
        let cx = ix.clamp(0, img.width as i64 - 1) as u32;
        let cy = iy.clamp(0, img.height as i64 - 1) as u32;
        img.sample(cx, cy, c) as f64
    };
    let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1) * (1.0 - fx) * fy
        + at(x0 + 1, y0 + 1) * fx * fy;
    v.round().clamp(0.0, 255.0) as u8
}

fn plant_correspondences(
    w: u32,
    h: u32,
    truth: &Homography,
    outlier_rate: f64,
    rng: &mut SplitMix64,
) -> Vec<Correspondence> {
    let total = 60usize;
    let outliers = (outlier_rate * total as f64).round() as usize;
    let mut points = Vec::with_capacity(total);
    for _ in 0..total {
        let x = rng.range_f64(w as f64 * 0.1, w as f64 * 0.9);
        let y = rng.range_f64(h as f64 * 0.1, h as f64 * 0.9);
        let (u, v) = truth.apply(x, y).expect("affine-like H maps finite points");
        points.push(((x, y), (u, v), false));
    }
    // Plant outliers at seeded positions with uniformly wrong targets.
    let picks = rng.distinct(outliers, total);
    for idx in picks {
        let wrong = (
            rng.range_f64(0.0, w as f64),
            rng.range_f64(0.0, h as f64),
        );
        // Keep outliers genuinely far from the true mapping.
        let (u, v) = points[idx].1;
        let far = ((wrong.0 - u).powi(2) + (wrong.1 - v).powi(2)).sqrt() > 10.0;
        points[idx] = (
            points[idx].0,
            if far { wrong } else { (wrong.0 + 40.0, wrong.1 + 40.0) },
            true,
        );
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranges_give_identity() {
        let (pairs, manifest) = gen_warped_pairs(2, 64, 64, 0.0, 0.0, 0.0, 0.0, 5).unwrap();
        for entry in &manifest.entries {
            let GroundTruth::Pair { homography, .. } = &entry.truth else {
                panic!()
            };
            assert_eq!(homography, &Homography::identity().m);
        }
        // Identity warp reproduces the reference exactly.
        for (_, moving, reference) in &pairs {
            assert_eq!(moving, reference);
        }
    }

    #[test]
    fn translation_matches_truth_exactly() {
        let (pairs, manifest) = gen_warped_pairs(3, 96, 64, 12.0, 0.0, 0.0, 0.0, 11).unwrap();
        for ((_, moving, reference), entry) in pairs.iter().zip(&manifest.entries) {
            let GroundTruth::Pair { homography, .. } = &entry.truth else {
                panic!()
            };
            let h = Homography { m: *homography };
            let (dx, dy) = (h.m[2], h.m[5]);
            assert_eq!(dx, dx.round());
            assert_eq!(dy, dy.round());
            // Every in-bounds moving pixel equals the shifted reference pixel.
            for y in 0..moving.height {
                for x in 0..moving.width {
                    let sx = x as i64 + dx as i64;
                    let sy = y as i64 + dy as i64;
                    if sx >= 0 && sy >= 0 && sx < reference.width as i64 && sy < reference.height as i64
                    {
                        assert_eq!(moving.sample(x, y, 0), reference.sample(sx as u32, sy as u32, 0));
                    }
                }
            }
        }
    }

    #[test]
    fn outlier_fraction_is_planted() {
        let (_, manifest) = gen_warped_pairs(2, 64, 64, 5.0, 0.0, 0.0, 0.2, 3).unwrap();
        for entry in &manifest.entries {
            let GroundTruth::Pair { correspondences, .. } = &entry.truth else {
                panic!()
            };
            let outliers = correspondences.iter().filter(|(_, _, o)| *o).count();
            assert_eq!(outliers, 12);
            assert_eq!(correspondences.len(), 60);
        }
    }

    #[test]
    fn excessive_translation_is_rejected() {
        assert!(matches!(
            gen_warped_pairs(1, 64, 64, 40.0, 0.0, 0.0, 0.0, 0),
            Err(DatagenError::BadParam(_))
        ));
    }
}
