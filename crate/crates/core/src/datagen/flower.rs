//! Synthetic flower-field images: flat green background with bright,
//! well-separated Gaussian blobs that stand out in the blue channel.

use crate::imgops::Image;
use crate::rng::SplitMix64;

use super::{DatagenError, DatasetManifest, GroundTruth, ManifestEntry};

pub const BLOB_RADIUS: u32 = 6;
const BG: [u8; 3] = [40, 150, 40];
const CORE: [u8; 3] = [250, 240, 200];

/// Generate `n` field images of `w`x`h` pixels, each carrying exactly
/// `blobs_per_img` blobs. Blob centers keep at least four radii of
/// separation; the manifest records exact counts and centers.
pub fn gen_flower_field(
    n: usize,
    w: u32,
    h: u32,
    blobs_per_img: usize,
    seed: u64,
) -> Result<(Vec<(String, Image)>, DatasetManifest), DatagenError> {
    let radius = BLOB_RADIUS;
    if blobs_per_img > 0 && (radius * 4) as u64 * blobs_per_img as u64 > w.min(h) as u64 {
        return Err(DatagenError::BadParam(format!(
            "{blobs_per_img} blobs of radius {radius} cannot be separated on a {w}x{h} canvas"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut images = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let centers = place_centers(w, h, blobs_per_img, radius, &mut rng)?;
        let img = paint(w, h, &centers, radius);
        let im_id = format!("flower-{i:04}");
        entries.push(ManifestEntry {
            im_id: im_id.clone(),
            truth: GroundTruth::Blobs {
                count: centers.len(),
                centers: centers.clone(),
            },
        });
        images.push((im_id, img));
    }
    Ok((
        images,
        DatasetManifest {
            name: "flower_field".into(),
            count: n,
            width: w,
            height: h,
            seed,
            entries,
        },
    ))
}

fn place_centers(
    w: u32,
    h: u32,
    blobs: usize,
    radius: u32,
    rng: &mut SplitMix64,
) -> Result<Vec<(u32, u32)>, DatagenError> {
    let margin = radius + 2;
    let min_sep = (radius * 4) as i64;
    let mut centers: Vec<(u32, u32)> = Vec::with_capacity(blobs);
    let mut attempts = 0;
    while centers.len() < blobs {
        attempts += 1;
        if attempts > 1000 {
            return Err(DatagenError::BadParam(format!(
                "could not place {blobs} separated blobs on a {w}x{h} canvas in 1000 attempts"
            )));
        }
        let x = margin + rng.below((w - 2 * margin) as u64) as u32;
        let y = margin + rng.below((h - 2 * margin) as u64) as u32;
        let ok = centers.iter().all(|&(cx, cy)| {
            let dx = cx as i64 - x as i64;
            let dy = cy as i64 - y as i64;
            dx * dx + dy * dy >= min_sep * min_sep
        });
        if ok {
            centers.push((x, y));
        }
    }
    Ok(centers)
}

fn paint(w: u32, h: u32, centers: &[(u32, u32)], radius: u32) -> Image {
    let mut img = Image::filled(w, h, 3, 0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3u8 {
                img.set(x, y, c, BG[c as usize]);
            }
        }
    }
    let sigma = radius as f64 / 2.0;
    let reach = (radius * 2) as i64;
    for &(cx, cy) in centers {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let x = cx as i64 + dx;
                let y = cy as i64 + dy;
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                let d2 = (dx * dx + dy * dy) as f64;
                let weight = (-d2 / (2.0 * sigma * sigma)).exp();
                for c in 0..3u8 {
                    let base = BG[c as usize] as f64;
                    let core = CORE[c as usize] as f64;
                    let v = base + (core - base) * weight;
                    let old = img.sample(x as u32, y as u32, c);
                    img.set(x as u32, y as u32, c, v.round().max(old as f64) as u8);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgops::extract_channel;

    #[test]
    fn zero_blobs_gives_flat_images() {
        let (images, manifest) = gen_flower_field(3, 64, 64, 0, 1).unwrap();
        assert_eq!(images.len(), 3);
        for (_, img) in &images {
            let b = extract_channel(img, 2).unwrap();
            assert!(b.data.iter().all(|&v| v == BG[2]));
        }
        assert!(manifest
            .entries
            .iter()
            .all(|e| matches!(e.truth, GroundTruth::Blobs { count: 0, .. })));
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, ma) = gen_flower_field(4, 80, 80, 3, 9).unwrap();
        let (b, mb) = gen_flower_field(4, 80, 80, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn centers_are_blue_channel_local_maxima() {
        let (images, manifest) = gen_flower_field(5, 128, 128, 5, 21).unwrap();
        for ((_, img), entry) in images.iter().zip(&manifest.entries) {
            let b = extract_channel(img, 2).unwrap();
            let GroundTruth::Blobs { centers, .. } = &entry.truth else {
                panic!("wrong truth kind")
            };
            for &(cx, cy) in centers {
                let center = b.sample(cx, cy, 0);
                for (nx, ny) in [(cx - 1, cy), (cx + 1, cy), (cx, cy - 1), (cx, cy + 1)] {
                    assert!(center >= b.sample(nx, ny, 0));
                }
                assert!(center > 150, "blob center too dim: {center}");
            }
        }
    }

    #[test]
    fn impossible_separation_is_rejected() {
        assert!(matches!(
            gen_flower_field(1, 64, 64, 9, 0),
            Err(DatagenError::BadParam(_))
        ));
    }
}
