//! Color-grouped images for clustering: k palettes spread around the hue
//! wheel, balanced group sizes, per-pixel jitter small enough to keep the
//! palettes separable in histogram-feature space.

use crate::imgops::Image;
use crate::rng::SplitMix64;

use super::{DatagenError, DatasetManifest, GroundTruth, ManifestEntry};

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Feature distance between two palettes, measured the same way the
/// clustering pipeline sees them: concatenated per-channel histograms.
fn palette_feature_distance(a: [u8; 3], b: [u8; 3], pixels: f64) -> f64 {
    // Each flat-colored image concentrates all pixels in one 32-wide bin
    // per channel; distance is zero when a channel shares a bin.
    let mut d2 = 0.0;
    for c in 0..3 {
        if a[c] / 8 != b[c] / 8 {
            d2 += 2.0 * pixels * pixels;
        }
    }
    d2.sqrt()
}

/// Generate `n` images in `k` balanced color groups (image `i` belongs to
/// group `i % k`). Palette separation in histogram-feature space must meet
/// `palette_separation`.
pub fn gen_cluster_images(
    n: usize,
    k: usize,
    w: u32,
    h: u32,
    palette_separation: f64,
    seed: u64,
) -> Result<(Vec<(String, Image)>, DatasetManifest), DatagenError> {
    if k == 0 || k > n.max(1) {
        return Err(DatagenError::BadParam(format!(
            "need 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let palettes: Vec<[u8; 3]> = (0..k)
        .map(|i| hsv_to_rgb(i as f64 * 360.0 / k as f64, 0.75, 0.82))
        .collect();
    let pixels = (w * h) as f64;
    for i in 0..k {
        for j in i + 1..k {
            let d = palette_feature_distance(palettes[i], palettes[j], pixels);
            if d < palette_separation {
                return Err(DatagenError::BadParam(format!(
                    "palettes {i} and {j} are only {d:.1} apart in feature space, need {palette_separation}"
                )));
            }
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut images = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k;
        let base = palettes[label];
        let mut img = Image::filled(w, h, 3, 0);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3u8 {
                    // Jitter stays inside one 8-wide histogram bin band.
                    let jitter = rng.below(7) as i32 - 3;
                    let v = (base[c as usize] as i32 + jitter).clamp(0, 255) as u8;
                    img.set(x, y, c, v);
                }
            }
        }
        let im_id = format!("cluster-{i:04}");
        entries.push(ManifestEntry {
            im_id: im_id.clone(),
            truth: GroundTruth::Group { label },
        });
        images.push((im_id, img));
    }
    Ok((
        images,
        DatasetManifest {
            name: "cluster_images".into(),
            count: n,
            width: w,
            height: h,
            seed,
            entries,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_balanced() {
        let (_, manifest) = gen_cluster_images(12, 3, 32, 32, 100.0, 1).unwrap();
        let mut counts = [0usize; 3];
        for e in &manifest.entries {
            let GroundTruth::Group { label } = e.truth else { panic!() };
            counts[label] += 1;
        }
        assert_eq!(counts, [4, 4, 4]);
    }

    #[test]
    fn k_one_is_all_same_label() {
        let (_, manifest) = gen_cluster_images(5, 1, 16, 16, 0.0, 2).unwrap();
        assert!(manifest
            .entries
            .iter()
            .all(|e| matches!(e.truth, GroundTruth::Group { label: 0 })));
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, _) = gen_cluster_images(6, 2, 24, 24, 10.0, 9).unwrap();
        let (b, _) = gen_cluster_images(6, 2, 24, 24, 10.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_k_rejected() {
        assert!(gen_cluster_images(3, 0, 16, 16, 0.0, 0).is_err());
        assert!(gen_cluster_images(3, 5, 16, 16, 0.0, 0).is_err());
    }
}
