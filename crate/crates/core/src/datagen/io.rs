//! Dataset directory layout: PPM images plus one `manifest.jsonl`.
//!
//! Registration pairs store two files per entry (`<id>_moving.ppm`,
//! `<id>_ref.ppm`); every other dataset stores `<id>.ppm`.

use std::fs;
use std::path::Path;

use crate::imgops::{read_ppm, write_ppm, Image};

use super::{DatagenError, DatasetManifest, GroundTruth};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    /// (im_id, image) in manifest order; empty for pair datasets.
    pub images: Vec<(String, Image)>,
    /// (im_id, moving, reference) in manifest order; empty otherwise.
    pub pairs: Vec<(String, Image, Image)>,
}

fn io_err(e: std::io::Error) -> DatagenError {
    DatagenError::Io(e.to_string())
}

/// Write images (or pairs) and the manifest under `dir`.
pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    images: &[(String, Image)],
    pairs: &[(String, Image, Image)],
) -> Result<(), DatagenError> {
    fs::create_dir_all(dir).map_err(io_err)?;
    for (id, img) in images {
        write_ppm(img, &dir.join(format!("{id}.ppm"))).map_err(io_err)?;
    }
    for (id, moving, reference) in pairs {
        write_ppm(moving, &dir.join(format!("{id}_moving.ppm"))).map_err(io_err)?;
        write_ppm(reference, &dir.join(format!("{id}_ref.ppm"))).map_err(io_err)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest.to_jsonl()).map_err(io_err)?;
    Ok(())
}

/// Load a dataset directory back, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, DatagenError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(io_err)?;
    let manifest = DatasetManifest::from_jsonl(&text)?;
    let mut images = Vec::new();
    let mut pairs = Vec::new();
    for entry in &manifest.entries {
        match &entry.truth {
            GroundTruth::Pair { .. } => {
                let moving = read_ppm(&dir.join(format!("{}_moving.ppm", entry.im_id)))
                    .map_err(|e| DatagenError::Io(e.to_string()))?;
                let reference = read_ppm(&dir.join(format!("{}_ref.ppm", entry.im_id)))
                    .map_err(|e| DatagenError::Io(e.to_string()))?;
                pairs.push((entry.im_id.clone(), moving, reference));
            }
            _ => {
                let img = read_ppm(&dir.join(format!("{}.ppm", entry.im_id)))
                    .map_err(|e| DatagenError::Io(e.to_string()))?;
                images.push((entry.im_id.clone(), img));
            }
        }
    }
    Ok(LoadedDataset {
        manifest,
        images,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{gen_flower_field, gen_warped_pairs};
    use super::*;

    #[test]
    fn round_trip_image_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let (images, manifest) = gen_flower_field(3, 48, 48, 2, 5).unwrap();
        write_dataset(tmp.path(), &manifest, &images, &[]).unwrap();
        let loaded = load_dataset(tmp.path()).unwrap();
        assert_eq!(loaded.manifest, manifest);
        assert_eq!(loaded.images, images);
        assert!(loaded.pairs.is_empty());
    }

    #[test]
    fn round_trip_pair_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let (pairs, manifest) = gen_warped_pairs(2, 48, 48, 4.0, 0.0, 0.0, 0.0, 5).unwrap();
        write_dataset(tmp.path(), &manifest, &[], &pairs).unwrap();
        let loaded = load_dataset(tmp.path()).unwrap();
        assert_eq!(loaded.pairs, pairs);
        assert!(loaded.images.is_empty());
    }
}
