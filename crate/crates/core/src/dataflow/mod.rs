//! Packed-record data flow between pipeline modules.
//!
//! Records ([`PackedRecord`]) bundle one image's entities in a fixed slot
//! order and flow through engine map stages wrapped by the data-parallel
//! flow layer ([`dpf_apply`]): unpack, invoke stage logic, repack with the
//! new slot retained alongside everything earlier. Plans compose modules
//! into fused groups or one-module-per-stage layouts ([`build_minimal_plan`],
//! [`build_modular_plan`]) with declared driver-side collectives between
//! groups.

mod plan;
mod record;
mod result;
mod specfile;
mod stage;

pub use plan::{
    build_minimal_plan, build_modular_plan, collect_results, default_extractor, dpf_apply,
    dpf_apply_group, execute_plan, validate_plan, CollectiveCtx, CollectiveFn, CollectiveSpec,
    PerImageBox, PipelinePlan, PlanOutcome, PlanStep, ResultExtractor, Retention, TaskStep,
};
pub use record::{pack, unpack, PackedRecord, Payload};
pub use result::{render_manifest, route_result, PerImage, ResultValue, StorageReceipt, StorageRouting};
pub use specfile::{parse_pipeline_spec, LayoutChoice, PipelineSpec, StorageChoice};
pub use stage::{
    Chunking, ModuleSpec, ParamMap, ParamSet, Slot, StageKind, StageLogic, RESULT_TAG,
};

use crate::engine::EngineError;
use crate::storage::StorageError;

/// Errors raised by the data-flow layer and plan execution.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataflowError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("stage {} requires slot '{slot}' (record '{im_id}')", stage.name())]
    MissingSlot {
        stage: StageKind,
        slot: &'static str,
        im_id: String,
    },
    #[error("invalid fusion: stage {} depends on collective output '{param}' not yet produced", stage.name())]
    InvalidFusion { stage: StageKind, param: String },
    #[error("invalid plan: {0}")]
    BadPlan(String),
    #[error("step '{step}' failed: {source}")]
    Step { step: String, source: EngineError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("pipeline spec error: {0}")]
    SpecError(String),
}

impl DataflowError {
    /// The engine memory failure behind this error, if any.
    pub fn memory_exceeded(&self) -> Option<(&str, u64, u64)> {
        match self {
            DataflowError::Step {
                step,
                source: EngineError::MemoryExceeded { needed, cap, .. },
            } => Some((step.as_str(), *needed, *cap)),
            DataflowError::Engine(EngineError::MemoryExceeded { context, needed, cap }) => {
                Some((context.as_str(), *needed, *cap))
            }
            _ => None,
        }
    }
}
