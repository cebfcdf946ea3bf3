//! Overlapping tiles cropped from one wide textured scene, shuffled into a
//! seeded order, for mosaic reconstruction.

use crate::imgops::Image;
use crate::rng::SplitMix64;

use super::scene::textured_scene;
use super::{DatagenError, DatasetManifest, GroundTruth, ManifestEntry};

/// Crop `n` tiles of `tile_w`x`tile_h` from a wide scene, consecutive tiles
/// overlapping by `overlap_frac` of the tile width. Tile order is shuffled
/// by the seed; the manifest records true offsets and the overlap graph.
pub fn gen_mosaic_tiles(
    n: usize,
    tile_w: u32,
    tile_h: u32,
    overlap_frac: f64,
    seed: u64,
) -> Result<(Vec<(String, Image)>, DatasetManifest), DatagenError> {
    if n < 2 {
        return Err(DatagenError::BadParam("need at least 2 tiles".into()));
    }
    if !(0.2..0.95).contains(&overlap_frac) {
        return Err(DatagenError::BadParam(format!(
            "overlap_frac must be in [0.2, 0.95), got {overlap_frac}"
        )));
    }
    let stride = ((tile_w as f64) * (1.0 - overlap_frac)).round().max(1.0) as u32;
    let scene_w = tile_w + stride * (n as u32 - 1);
    let mut rng = SplitMix64::new(seed);
    let scene = textured_scene(scene_w, tile_h, &mut rng);

    let mut tiles: Vec<(String, Image, u32)> = (0..n)
        .map(|i| {
            let offset = i as u32 * stride;
            let mut img = Image::filled(tile_w, tile_h, 3, 0);
            for y in 0..tile_h {
                for x in 0..tile_w {
                    for c in 0..3u8 {
                        img.set(x, y, c, scene.sample(offset + x, y, c));
                    }
                }
            }
            (format!("tile-{i:03}"), img, offset)
        })
        .collect();
    rng.shuffle(&mut tiles);

    let offsets: Vec<(String, u32)> = tiles.iter().map(|(id, _, o)| (id.clone(), *o)).collect();
    let entries = tiles
        .iter()
        .map(|(id, _, offset)| {
            let neighbors = offsets
                .iter()
                .filter(|(other, o)| {
                    other != id && (*o as i64 - *offset as i64).unsigned_abs() < tile_w as u64
                })
                .map(|(other, _)| other.clone())
                .collect();
            ManifestEntry {
                im_id: id.clone(),
                truth: GroundTruth::Tile {
                    offset_x: *offset,
                    neighbors,
                },
            }
        })
        .collect();
    let images = tiles.into_iter().map(|(id, img, _)| (id, img)).collect();
    Ok((
        images,
        DatasetManifest {
            name: "mosaic_tiles".into(),
            count: n,
            width: tile_w,
            height: tile_h,
            seed,
            entries,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consecutive_tiles_share_content() {
        let (images, manifest) = gen_mosaic_tiles(4, 48, 32, 0.5, 7).unwrap();
        assert_eq!(images.len(), 4);
        // Find the two tiles with offsets 0 and 24 and compare the overlap.
        let mut by_offset: Vec<(u32, &Image)> = manifest
            .entries
            .iter()
            .map(|e| {
                let GroundTruth::Tile { offset_x, .. } = &e.truth else { panic!() };
                let img = &images.iter().find(|(id, _)| id == &e.im_id).unwrap().1;
                (*offset_x, img)
            })
            .collect();
        by_offset.sort_by_key(|(o, _)| *o);
        let (o0, t0) = by_offset[0];
        let (o1, t1) = by_offset[1];
        let shift = o1 - o0;
        for y in 0..t0.height {
            for x in 0..t0.width - shift {
                assert_eq!(t0.sample(x + shift, y, 0), t1.sample(x, y, 0));
            }
        }
    }

    #[test]
    fn overlap_graph_links_neighbors() {
        let (_, manifest) = gen_mosaic_tiles(5, 40, 24, 0.5, 3).unwrap();
        for e in &manifest.entries {
            let GroundTruth::Tile { neighbors, .. } = &e.truth else { panic!() };
            assert!(!neighbors.is_empty());
        }
    }

    #[test]
    fn rejects_degenerate_params() {
        assert!(gen_mosaic_tiles(1, 32, 32, 0.5, 0).is_err());
        assert!(gen_mosaic_tiles(3, 32, 32, 0.05, 0).is_err());
    }
}
