//! Stage contracts: the four canonical processing steps, their parameter
//! sets, and the per-module slot declarations.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::imgops::Image;

use super::record::{PackedRecord, Payload};
use super::DataflowError;

/// The four canonical steps of an image pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageKind {
    /// Conversion / noise reduction; reads `raw`, writes `processed`.
    Preprocess,
    /// Feature / metric extraction; reads `processed`, writes `metrics`.
    Estimate,
    /// Fitting / training; reads `processed` + `metrics`, writes `model`.
    Model,
    /// Final analysis; writes the per-record result slot.
    Analyze,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Preprocess => "preprocess",
            StageKind::Estimate => "estimate",
            StageKind::Model => "model",
            StageKind::Analyze => "analyze",
        }
    }
}

/// Record slots a stage can declare as inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Raw,
    Processed,
    Metrics,
    Model,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Raw => "raw",
            Slot::Processed => "processed",
            Slot::Metrics => "metrics",
            Slot::Model => "model",
        }
    }

    pub fn present_in(self, record: &PackedRecord) -> bool {
        match self {
            Slot::Raw => record.raw.is_some(),
            Slot::Processed => record.processed.is_some(),
            Slot::Metrics => record.metrics.is_some(),
            Slot::Model => record.model.is_some(),
        }
    }
}

/// Extra-slot tag where analyze output lands.
pub const RESULT_TAG: &str = "result";

/// One stage's keyed parameters. Values reuse the record payload type so
/// parameters can be numbers, strings, vectors, or whole reference images.
pub type ParamMap = BTreeMap<String, Payload>;

/// Parameters for all four stages. A stage only ever receives its own map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub preprocess: ParamMap,
    pub estimate: ParamMap,
    pub model: ParamMap,
    pub analyze: ParamMap,
}

impl ParamSet {
    pub fn for_stage(&self, kind: StageKind) -> &ParamMap {
        match kind {
            StageKind::Preprocess => &self.preprocess,
            StageKind::Estimate => &self.estimate,
            StageKind::Model => &self.model,
            StageKind::Analyze => &self.analyze,
        }
    }

    pub fn for_stage_mut(&mut self, kind: StageKind) -> &mut ParamMap {
        match kind {
            StageKind::Preprocess => &mut self.preprocess,
            StageKind::Estimate => &mut self.estimate,
            StageKind::Model => &mut self.model,
            StageKind::Analyze => &mut self.analyze,
        }
    }

    pub fn real(&self, kind: StageKind, key: &str) -> Option<f64> {
        self.for_stage(kind).get(key).and_then(Payload::as_real)
    }
}

/// Stage logic invoked per record by the data-parallel flow layer. Every
/// callable must be pure: no shared mutable state, same output for the
/// same inputs.
pub trait StageLogic: Send + Sync {
    /// Produce the processed image from the record's raw slot.
    fn preprocess(&self, _record: &PackedRecord, _params: &ParamMap) -> Result<Image, String> {
        Err("preprocess not implemented for this task".into())
    }

    /// Produce the metrics payload from the processed slot.
    fn estimate(&self, _record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        Err("estimate not implemented for this task".into())
    }

    /// Produce the model payload (or per-record model contribution).
    fn model(&self, _record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        Err("model not implemented for this task".into())
    }

    /// Produce the per-record analysis result.
    fn analyze(&self, _record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        Err("analyze not implemented for this task".into())
    }
}

/// Chunking policy for a collective step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chunking {
    None,
    /// Process runtime data in index ranges of this size.
    Chunked(usize),
}

/// One data-parallel module: a stage kind, its logic, the slots it reads,
/// and parameter keys it depends on (as produced by earlier collectives).
#[derive(Clone)]
pub struct ModuleSpec {
    pub kind: StageKind,
    pub logic: Arc<dyn StageLogic>,
    pub reads: Vec<Slot>,
    /// Parameter keys this stage's param map needs installed before it runs.
    pub depends_on: Vec<String>,
    pub chunking: Chunking,
}

impl std::fmt::Debug for ModuleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModuleSpec")
            .field("kind", &self.kind)
            .field("reads", &self.reads)
            .field("depends_on", &self.depends_on)
            .field("chunking", &self.chunking)
            .finish()
    }
}

impl ModuleSpec {
    /// Module with the default slot reads for its stage kind.
    pub fn new(kind: StageKind, logic: Arc<dyn StageLogic>) -> Self {
        let reads = match kind {
            StageKind::Preprocess => vec![Slot::Raw],
            StageKind::Estimate => vec![Slot::Processed],
            StageKind::Model => vec![Slot::Processed, Slot::Metrics],
            StageKind::Analyze => vec![Slot::Raw, Slot::Processed, Slot::Model],
        };
        Self {
            kind,
            logic,
            reads,
            depends_on: Vec::new(),
            chunking: Chunking::None,
        }
    }

    pub fn with_reads(mut self, reads: Vec<Slot>) -> Self {
        self.reads = reads;
        self
    }

    pub fn with_depends_on(mut self, keys: &[&str]) -> Self {
        self.depends_on = keys.iter().map(|k| k.to_string()).collect();
        self
    }

    /// Run this module's logic against one record, writing its output slot.
    pub fn apply(&self, record: &mut PackedRecord, params: &ParamMap) -> Result<(), String> {
        match self.kind {
            StageKind::Preprocess => {
                record.processed = Some(self.logic.preprocess(record, params)?);
            }
            StageKind::Estimate => {
                record.metrics = Some(self.logic.estimate(record, params)?);
            }
            StageKind::Model => {
                record.model = Some(self.logic.model(record, params)?);
            }
            StageKind::Analyze => {
                let result = self.logic.analyze(record, params)?;
                record.set_extra(RESULT_TAG, result);
            }
        }
        Ok(())
    }

    /// Check the record carries every slot this module reads.
    pub fn check_slots(&self, record: &PackedRecord, produced: &[Slot]) -> Result<(), DataflowError> {
        for slot in &self.reads {
            if !slot.present_in(record) && !produced.contains(slot) {
                return Err(DataflowError::MissingSlot {
                    stage: self.kind,
                    slot: slot.name(),
                    im_id: record.im_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Slot this module writes, if it is one of the structured slots.
    pub fn writes(&self) -> Option<Slot> {
        match self.kind {
            StageKind::Preprocess => Some(Slot::Processed),
            StageKind::Estimate => Some(Slot::Metrics),
            StageKind::Model => Some(Slot::Model),
            StageKind::Analyze => None,
        }
    }
}
