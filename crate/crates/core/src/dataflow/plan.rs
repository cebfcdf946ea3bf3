//! Pipeline plans: fused or modular composition of data-parallel modules,
//! driver-side collective steps between them, and plan execution with
//! boundary metering.
//!
//! A plan is a linear walk of steps. Each `Group` step is one engine map
//! stage: incoming records cross a module boundary (metered into
//! `flowed_bytes`), slots are validated, the group's stage logics run in
//! order per record, and outputs retain every earlier slot. `Collective`
//! steps run declared driver callbacks (dataset-wide reductions, chunked
//! scans) between groups and install computed parameters for later stages.

use std::sync::Arc;

use crate::engine::{Dataset, Engine, EngineError, RunStats};
use crate::measure::Measurable;

use super::record::{PackedRecord, Payload};
use super::result::{PerImage, ResultValue};
use super::stage::{Chunking, ModuleSpec, ParamMap, ParamSet, Slot, StageKind, RESULT_TAG};
use super::DataflowError;

/// Retention policy for record slots across module boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    /// Keep every slot up to the last step (the default data pattern).
    RetainAll,
    /// Drop the raw image once an estimate stage has run; quantifies the
    /// overhead of flowing full image bundles. Only valid for tasks whose
    /// analyze stage does not read the raw slot.
    DropRawAfterEstimate,
}

/// Context handed to a collective callback.
pub struct CollectiveCtx<'a> {
    pub engine: &'a Engine,
    pub dataset: &'a mut Dataset<PackedRecord>,
    pub params: &'a mut ParamSet,
    pub chunking: Chunking,
    pub step: String,
}

pub type CollectiveFn = Arc<dyn Fn(&mut CollectiveCtx) -> Result<(), DataflowError> + Send + Sync>;

/// A declared non-parallel (driver-side) step between module groups.
#[derive(Clone)]
pub struct CollectiveSpec {
    pub name: String,
    /// Position in the canonical stage order.
    pub kind: StageKind,
    /// Parameter keys this collective installs.
    pub produces: Vec<String>,
    /// Runtime-data chunking applied inside the callback.
    pub chunking: Chunking,
    /// A stage folded into this step in the minimal layout; the modular
    /// layout emits it as its own module group instead.
    pub absorbed: Option<ModuleSpec>,
    pub run: CollectiveFn,
}

impl std::fmt::Debug for CollectiveSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollectiveSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("produces", &self.produces)
            .field("chunking", &self.chunking)
            .field("absorbed", &self.absorbed.is_some())
            .finish()
    }
}

/// A task declaration: the ordered stages and collectives it consists of.
#[derive(Debug, Clone)]
pub enum TaskStep {
    Stage(ModuleSpec),
    Collective(CollectiveSpec),
}

impl TaskStep {
    fn kind(&self) -> StageKind {
        match self {
            TaskStep::Stage(m) => m.kind,
            TaskStep::Collective(c) => c.kind,
        }
    }
}

/// One executable step of a built plan.
#[derive(Debug, Clone)]
pub enum PlanStep {
    /// A fused group of modules executed as one engine map stage.
    Group(Vec<ModuleSpec>),
    Collective(CollectiveSpec),
}

pub type ResultExtractor = Arc<
    dyn Fn(
            &Engine,
            &Dataset<PackedRecord>,
            &ParamSet,
        ) -> Result<(ResultValue, Vec<(String, PerImage)>), DataflowError>
        + Send
        + Sync,
>;

/// An ordered list of plan steps plus the minimal-layout step count.
#[derive(Clone)]
pub struct PipelinePlan {
    pub steps: Vec<PlanStep>,
    /// Number of engine steps in the minimal layout of this task.
    pub n_s: usize,
    pub retention: Retention,
    pub extract: ResultExtractor,
}

impl std::fmt::Debug for PipelinePlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PipelinePlan")
            .field("steps", &self.steps)
            .field("n_s", &self.n_s)
            .field("retention", &self.retention)
            .finish()
    }
}

/// Extractor that reads the per-record result slot into a value list.
pub fn default_extractor() -> ResultExtractor {
    Arc::new(|engine, ds, _params| {
        let rows = collect_results(engine, ds)?;
        let list = rows
            .iter()
            .map(|(id, v)| (id.clone(), v.render()))
            .collect();
        Ok((ResultValue::ValueList(list), rows))
    })
}

/// Collect (im_id, result payload) pairs from the final records, charging
/// and releasing the driver for the skinny projection only.
pub fn collect_results(
    engine: &Engine,
    ds: &Dataset<PackedRecord>,
) -> Result<Vec<(String, PerImage)>, DataflowError> {
    let pairs = ds.map(|rec| {
        let value = match rec.extra_value(RESULT_TAG) {
            Some(Payload::Int(v)) => PerImage::Int(*v),
            Some(Payload::Real(v)) => PerImage::Real(*v),
            Some(Payload::Text(s)) => PerImage::Text(s.clone()),
            Some(Payload::Vector(v)) => PerImage::Reals(v.clone()),
            Some(Payload::Matrix(h)) => PerImage::Reals(h.m.to_vec()),
            Some(other) => PerImage::Text(format!("{other:?}")),
            None => PerImage::Text(String::new()),
        };
        (rec.im_id.clone(), PerImageBox(value))
    });
    let typed = pairs
        .collect()
        .map_err(|e| DataflowError::step("collect results", e))?;
    let bytes: u64 = typed.iter().map(|r| r.size_bytes()).sum();
    engine.driver_release(bytes);
    Ok(typed.into_iter().map(|(id, b)| (id, b.0)).collect())
}

/// Measurable wrapper so `PerImage` can ride through the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct PerImageBox(pub PerImage);

impl Measurable for PerImageBox {
    fn size_bytes(&self) -> u64 {
        match &self.0 {
            PerImage::Int(_) | PerImage::Real(_) => 8,
            PerImage::Text(s) => s.size_bytes(),
            PerImage::Reals(v) => 16 + v.len() as u64 * 8,
        }
    }
}

fn check_stage_order(decl: &[TaskStep]) -> Result<(), DataflowError> {
    let mut last: Option<StageKind> = None;
    for step in decl {
        let kind = step.kind();
        if let Some(prev) = last {
            if kind < prev {
                return Err(DataflowError::BadPlan(format!(
                    "stage {} declared after {}",
                    kind.name(),
                    prev.name()
                )));
            }
        }
        last = Some(kind);
    }
    Ok(())
}

/// Validate that every stage's declared parameter dependencies are
/// produced by a collective that runs strictly before the stage's group.
pub fn validate_plan(steps: &[PlanStep]) -> Result<(), DataflowError> {
    let mut installed: Vec<String> = Vec::new();
    for step in steps {
        match step {
            PlanStep::Group(group) => {
                for module in group {
                    for dep in &module.depends_on {
                        if !installed.contains(dep) {
                            return Err(DataflowError::InvalidFusion {
                                stage: module.kind,
                                param: dep.clone(),
                            });
                        }
                    }
                }
            }
            PlanStep::Collective(spec) => {
                installed.extend(spec.produces.iter().cloned());
                if let Some(absorbed) = &spec.absorbed {
                    for dep in &absorbed.depends_on {
                        if !installed.contains(dep) {
                            return Err(DataflowError::InvalidFusion {
                                stage: absorbed.kind,
                                param: dep.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Minimal layout: adjacent stages fuse into one group; a collective ends
/// the current group and keeps its absorbed stage folded in. The resulting
/// step count is the task's minimal step count.
pub fn build_minimal_plan(
    decl: &[TaskStep],
    retention: Retention,
    extract: ResultExtractor,
) -> Result<PipelinePlan, DataflowError> {
    check_stage_order(decl)?;
    let mut steps: Vec<PlanStep> = Vec::new();
    let mut current: Vec<ModuleSpec> = Vec::new();
    for step in decl {
        match step {
            TaskStep::Stage(module) => current.push(module.clone()),
            TaskStep::Collective(spec) => {
                if !current.is_empty() {
                    steps.push(PlanStep::Group(std::mem::take(&mut current)));
                }
                steps.push(PlanStep::Collective(spec.clone()));
            }
        }
    }
    if !current.is_empty() {
        steps.push(PlanStep::Group(current));
    }
    validate_plan(&steps)?;
    let n_s = steps.len();
    Ok(PipelinePlan {
        steps,
        n_s,
        retention,
        extract,
    })
}

/// Modular layout: one group per declared module, collectives unfused,
/// absorbed stages emitted as their own module groups.
pub fn build_modular_plan(
    decl: &[TaskStep],
    retention: Retention,
    extract: ResultExtractor,
) -> Result<PipelinePlan, DataflowError> {
    check_stage_order(decl)?;
    let minimal_n_s = build_minimal_plan(decl, retention, extract.clone())?.n_s;
    let mut steps: Vec<PlanStep> = Vec::new();
    for step in decl {
        match step {
            TaskStep::Stage(module) => steps.push(PlanStep::Group(vec![module.clone()])),
            TaskStep::Collective(spec) => {
                let mut unfused = spec.clone();
                let absorbed = unfused.absorbed.take();
                steps.push(PlanStep::Collective(unfused));
                if let Some(module) = absorbed {
                    steps.push(PlanStep::Group(vec![module]));
                }
            }
        }
    }
    validate_plan(&steps)?;
    Ok(PipelinePlan {
        steps,
        n_s: minimal_n_s,
        retention,
        extract,
    })
}

/// Wrapper making a group's parameter maps broadcastable.
struct GroupParams(Vec<ParamMap>);

impl Measurable for GroupParams {
    fn size_bytes(&self) -> u64 {
        self.0
            .iter()
            .flat_map(|m| m.iter())
            .map(|(k, v)| k.size_bytes() + v.size_bytes())
            .sum()
    }
}

/// Apply one module group as a single engine map stage, metering the
/// records that cross the module boundary.
pub fn dpf_apply_group(
    engine: &Engine,
    ds: &Dataset<PackedRecord>,
    group: &[ModuleSpec],
    params: &ParamSet,
    retention: Retention,
) -> Result<Dataset<PackedRecord>, DataflowError> {
    let step_name = group_name(group);
    // Boundary: materialize once (cached), meter flow, validate slots.
    let input = ds.cache();
    let flowed = input
        .total_bytes()
        .map_err(|e| DataflowError::step(&step_name, e))?;
    engine.add_flowed_bytes(flowed);
    let parts = input
        .partition_contents()
        .map_err(|e| DataflowError::step(&step_name, e))?;
    let mut produced: Vec<Slot> = Vec::new();
    for module in group {
        for part in &parts {
            for record in part {
                module.check_slots(record, &produced)?;
            }
        }
        if let Some(slot) = module.writes() {
            produced.push(slot);
        }
    }
    drop(parts);

    // Stage parameters are delivered to workers as one broadcast.
    let maps: Vec<ParamMap> = group.iter().map(|m| params.for_stage(m.kind).clone()).collect();
    let bc = engine
        .broadcast(GroupParams(maps))
        .map_err(|e| DataflowError::step(&step_name, e))?;
    let modules: Vec<ModuleSpec> = group.to_vec();
    let drop_raw = retention == Retention::DropRawAfterEstimate
        && group.iter().any(|m| m.kind >= StageKind::Estimate);
    let out = input.try_map(move |record| {
        let mut rec = record.clone();
        for (module, pmap) in modules.iter().zip(&bc.value().0) {
            module
                .apply(&mut rec, pmap)
                .map_err(|e| format!("record {}: {e}", rec.im_id))?;
        }
        if drop_raw {
            rec.raw = None;
        }
        Ok(rec)
    });
    Ok(out)
}

/// Apply a single module as its own engine map stage (one module group).
pub fn dpf_apply(
    engine: &Engine,
    ds: &Dataset<PackedRecord>,
    module: &ModuleSpec,
    params: &ParamSet,
) -> Result<Dataset<PackedRecord>, DataflowError> {
    dpf_apply_group(engine, ds, std::slice::from_ref(module), params, Retention::RetainAll)
}

/// Run an absorbed stage inside a collective step: same engine map as a
/// group apply, but no module boundary is crossed, so no flow metering.
fn apply_absorbed(
    engine: &Engine,
    ds: &Dataset<PackedRecord>,
    module: &ModuleSpec,
    params: &ParamSet,
) -> Result<Dataset<PackedRecord>, DataflowError> {
    let step_name = format!("absorbed {}", module.kind.name());
    let pmap = params.for_stage(module.kind).clone();
    let bc = engine
        .broadcast(GroupParams(vec![pmap]))
        .map_err(|e| DataflowError::step(&step_name, e))?;
    let module = module.clone();
    Ok(ds.try_map(move |record| {
        let mut rec = record.clone();
        module
            .apply(&mut rec, &bc.value().0[0])
            .map_err(|e| format!("record {}: {e}", rec.im_id))?;
        Ok(rec)
    }))
}

fn group_name(group: &[ModuleSpec]) -> String {
    let names: Vec<&str> = group.iter().map(|m| m.kind.name()).collect();
    format!("group[{}]", names.join("+"))
}

/// Everything a finished plan run yields.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub value: ResultValue,
    pub per_image: Vec<(String, PerImage)>,
    pub params: ParamSet,
    pub stats: RunStats,
}

/// Execute a plan: groups in order, collectives between them, result
/// extraction at the end. Aborts on the first failing step.
pub fn execute_plan(
    engine: &Engine,
    plan: &PipelinePlan,
    input: Dataset<PackedRecord>,
    params: ParamSet,
) -> Result<PlanOutcome, DataflowError> {
    validate_plan(&plan.steps)?;
    let mut ds = input;
    let mut params = params;
    for step in &plan.steps {
        match step {
            PlanStep::Group(group) => {
                ds = dpf_apply_group(engine, &ds, group, &params, plan.retention)?;
            }
            PlanStep::Collective(spec) => {
                let mut ctx = CollectiveCtx {
                    engine,
                    dataset: &mut ds,
                    params: &mut params,
                    chunking: spec.chunking,
                    step: spec.name.clone(),
                };
                (spec.run)(&mut ctx)?;
                if let Some(absorbed) = &spec.absorbed {
                    ds = apply_absorbed(engine, &ds, absorbed, &params)?;
                }
            }
        }
    }
    let (value, per_image) = (plan.extract)(engine, &ds, &params)?;
    Ok(PlanOutcome {
        value,
        per_image,
        params,
        stats: engine.stats(),
    })
}

impl DataflowError {
    pub(crate) fn step(step: &str, source: EngineError) -> Self {
        DataflowError::Step {
            step: step.to_string(),
            source,
        }
    }
}
