//! The six reference image tasks in minimal / modular / split layouts,
//! plus single-threaded sequential oracles.

mod cluster;
mod fcount;
mod imatch;
mod imreg;
mod mosaic;
mod obe;
pub mod oracle;

pub use cluster::task_cluster;
pub use fcount::{mean_histogram_collective, task_fcount, MEAN_HIST_PARAM};
pub use imatch::task_imatch;
pub use imreg::task_imreg;
pub use mosaic::task_mosaic;
pub use obe::task_obe;

use crate::dataflow::{DataflowError, PerImage, ResultValue};
use crate::engine::{Dataset, Engine, ExecConfig, RunStats};
use crate::dataflow::PackedRecord;
use crate::imgops::Image;

/// The reference tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    ImageMatch,
    Clustering,
    FlowerCount,
    ObjectExtract,
    Registration,
    Mosaic,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::ImageMatch,
        TaskId::Clustering,
        TaskId::FlowerCount,
        TaskId::ObjectExtract,
        TaskId::Registration,
        TaskId::Mosaic,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TaskId::ImageMatch => "imatch",
            TaskId::Clustering => "cluster",
            TaskId::FlowerCount => "fcount",
            TaskId::ObjectExtract => "obe",
            TaskId::Registration => "imreg",
            TaskId::Mosaic => "mosaic",
        }
    }

    pub fn from_code(code: &str) -> Option<TaskId> {
        TaskId::ALL.iter().copied().find(|t| t.code() == code)
    }

    /// Number of engine steps in the task's minimal (fused) layout.
    pub fn min_steps(self) -> usize {
        match self {
            TaskId::ImageMatch => 1,
            TaskId::Clustering => 2,
            TaskId::FlowerCount => 3,
            TaskId::ObjectExtract => 1,
            TaskId::Registration => 1,
            TaskId::Mosaic => 2,
        }
    }
}

/// Modularity layout of a task run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Fused fewest-step plan.
    Minimal,
    /// One module group per declared stage.
    Modular,
    /// Modular plus chunked runtime data at the collective step.
    Split(usize),
}

impl Layout {
    pub fn label(self) -> String {
        match self {
            Layout::Minimal => "minimal".into(),
            Layout::Modular => "modular".into(),
            Layout::Split(n) => format!("split({n})"),
        }
    }
}

/// Shared task tuning knobs; every value has a working default.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTuning {
    /// Gaussian blur sigma for flower counting preprocess.
    pub sigma: f64,
    /// Histogram-correlation floor gating flower counts.
    pub corr_floor: f64,
    /// Keypoint budget per image.
    pub max_kp: usize,
    /// Lowe ratio threshold for descriptor matching.
    pub ratio_thresh: f64,
    pub ransac_iters: usize,
    pub inlier_px: f64,
    /// Mosaic greedy floor: stop when no candidate reaches this ratio.
    pub min_ratio: f64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for TaskTuning {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            corr_floor: 0.9,
            max_kp: 64,
            ratio_thresh: 0.8,
            ransac_iters: 300,
            inlier_px: 0.5,
            min_ratio: 0.05,
            kmeans_max_iters: 25,
            kmeans_tol: 1e-6,
        }
    }
}

/// A finished task run.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub task: TaskId,
    pub value: ResultValue,
    /// One output per input im_id, in input order (mosaic reports its
    /// merge order instead).
    pub per_image: Vec<(String, PerImage)>,
    /// Free-form run annotations (winner, selection order, flags).
    pub summary: Vec<(String, String)>,
    pub stats: RunStats,
}

impl PipelineResult {
    pub fn summary_value(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Compare two runs' outputs: exact for integers, text, and image bytes;
/// relative tolerance for floats; optional label-permutation matching for
/// clustering outputs.
pub fn outputs_equivalent(
    a: &PipelineResult,
    b: &PipelineResult,
    rel_tol: f64,
    labels_up_to_permutation: bool,
) -> bool {
    if a.per_image.len() != b.per_image.len() {
        return false;
    }
    if labels_up_to_permutation {
        let mut mapping: std::collections::BTreeMap<i64, i64> = std::collections::BTreeMap::new();
        let mut seen: std::collections::BTreeSet<i64> = std::collections::BTreeSet::new();
        for ((ka, va), (kb, vb)) in a.per_image.iter().zip(&b.per_image) {
            if ka != kb {
                return false;
            }
            let (PerImage::Int(la), PerImage::Int(lb)) = (va, vb) else {
                return false;
            };
            match mapping.get(la) {
                Some(mapped) if mapped != lb => return false,
                Some(_) => {}
                None => {
                    if !seen.insert(*lb) {
                        return false; // two source labels mapping to one target
                    }
                    mapping.insert(*la, *lb);
                }
            }
        }
        return true;
    }
    for ((ka, va), (kb, vb)) in a.per_image.iter().zip(&b.per_image) {
        if ka != kb || !va.approx_eq(vb, rel_tol) {
            return false;
        }
    }
    match (&a.value, &b.value) {
        (ResultValue::ImageCollection(ia), ResultValue::ImageCollection(ib)) => ia == ib,
        (va, vb) => va == vb,
    }
}

/// Build the input record dataset for image tasks.
pub(crate) fn records_from_images(
    engine: &Engine,
    images: &[(String, Image)],
) -> Result<Dataset<PackedRecord>, DataflowError> {
    let mut records = Vec::with_capacity(images.len());
    for (id, img) in images {
        records.push(PackedRecord::from_image(id, img.clone())?);
    }
    Ok(engine.parallelize(records))
}

pub(crate) fn new_engine(config: &ExecConfig) -> Result<Engine, DataflowError> {
    Engine::new(config.clone()).map_err(DataflowError::Engine)
}

/// Stats placeholder for sequential oracles (no engine involved).
pub(crate) fn oracle_stats() -> RunStats {
    RunStats {
        driver_highwater: 0,
        shuffle_bytes: 0,
        flowed_bytes: 0,
        broadcast_bytes: 0,
        stage_count: 0,
        wall_ms: 0,
    }
}
