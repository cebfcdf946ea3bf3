//! Seeded synthetic dataset generators with ground truth.
//!
//! Every generator is a pure function of its parameters and seed: the same
//! call reproduces identical image bytes and an identical manifest.

mod clusters;
mod flower;
mod io;
mod scene;
mod tiles;
mod warped;

pub use clusters::gen_cluster_images;
pub use flower::{gen_flower_field, BLOB_RADIUS};
pub use io::{load_dataset, write_dataset, LoadedDataset};
pub use scene::textured_scene;
pub use tiles::gen_mosaic_tiles;
pub use warped::gen_warped_pairs;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatagenError {
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("dataset io failed: {0}")]
    Io(String),
}

/// Dataset description plus per-image ground truth, serialized as
/// JSON lines (header first, one entry per line after).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub im_id: String,
    pub truth: GroundTruth,
}

/// (source point in moving, target point in reference, is_outlier).
pub type Correspondence = ((f64, f64), (f64, f64), bool);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GroundTruth {
    Blobs {
        count: usize,
        centers: Vec<(u32, u32)>,
    },
    Group {
        label: usize,
    },
    Pair {
        /// True homography, row-major, moving -> reference.
        homography: [f64; 9],
        correspondences: Vec<Correspondence>,
    },
    Tile {
        offset_x: u32,
        /// Tile ids overlapping this one.
        neighbors: Vec<String>,
    },
    Plain,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "name": self.name,
            "count": self.count,
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatagenError> {
        let mut lines = text.lines();
        let header: serde_json::Value = lines
            .next()
            .ok_or_else(|| DatagenError::Io("empty manifest".into()))
            .and_then(|l| {
                serde_json::from_str(l).map_err(|e| DatagenError::Io(format!("bad header: {e}")))
            })?;
        let mut entries = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(line)
                    .map_err(|e| DatagenError::Io(format!("bad manifest entry: {e}")))?,
            );
        }
        Ok(DatasetManifest {
            name: header["name"].as_str().unwrap_or_default().to_string(),
            count: header["count"].as_u64().unwrap_or(0) as usize,
            width: header["width"].as_u64().unwrap_or(0) as u32,
            height: header["height"].as_u64().unwrap_or(0) as u32,
            seed: header["seed"].as_u64().unwrap_or(0),
            entries,
        })
    }
}
