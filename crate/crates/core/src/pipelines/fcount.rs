//! Flower counting: blue-channel contrast, per-image histograms, a
//! dataset-mean histogram computed at the driver, then correlation-gated
//! blob counting.
//!
//! The mean-histogram collective is where layouts differ: the fused and
//! modular layouts collect every histogram to the driver at once (the
//! memory-failure mode under a driver cap), while the split layout scans
//! indexed chunks, releasing driver memory between chunks.

use std::sync::Arc;

use crate::dataflow::{
    build_minimal_plan, build_modular_plan, default_extractor, execute_plan, Chunking,
    CollectiveCtx, CollectiveSpec, DataflowError, ModuleSpec, ParamMap, ParamSet, Payload,
    PackedRecord, Retention, Slot, StageKind, StageLogic, TaskStep,
};
use crate::engine::ExecConfig;
use crate::imgops::{
    compute_histogram, connected_components, correlate_histograms, extract_channel,
    gaussian_blur, mean_histograms, otsu_threshold, Histogram, Image,
};
use crate::measure::Measurable;

use super::{new_engine, records_from_images, Layout, PipelineResult, TaskId, TaskTuning};

pub const MEAN_HIST_PARAM: &str = "mean_hist";
pub const MEAN_STEP: &str = "mean_histogram";

struct CountLogic;

impl StageLogic for CountLogic {
    fn preprocess(&self, record: &PackedRecord, params: &ParamMap) -> Result<Image, String> {
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        let sigma = params.get("sigma").and_then(Payload::as_real).unwrap_or(1.0);
        let blue = extract_channel(raw, 2).map_err(|e| e.to_string())?;
        gaussian_blur(&blue, sigma).map_err(|e| e.to_string())
    }

    fn estimate(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        let processed = record.processed.as_ref().ok_or("processed slot empty")?;
        let hist = compute_histogram(processed).map_err(|e| e.to_string())?;
        Ok(Payload::Hist(hist))
    }

    fn analyze(&self, record: &PackedRecord, params: &ParamMap) -> Result<Payload, String> {
        let processed = record.processed.as_ref().ok_or("processed slot empty")?;
        let hist = record
            .metrics
            .as_ref()
            .and_then(Payload::as_hist)
            .ok_or("metrics slot empty")?;
        let mean = params
            .get(MEAN_HIST_PARAM)
            .and_then(Payload::as_hist)
            .ok_or("mean_hist parameter missing")?;
        let corr_floor = params
            .get("corr_floor")
            .and_then(Payload::as_real)
            .unwrap_or(0.9);
        let corr = correlate_histograms(hist, mean).map_err(|e| e.to_string())?;
        // Plots whose histogram decorrelates from the dataset mean are
        // treated as masked-out outliers and contribute no count.
        if !corr.degenerate && corr.value < corr_floor {
            return Ok(Payload::Int(0));
        }
        let (_, mask) = otsu_threshold(processed).map_err(|e| e.to_string())?;
        let labels = connected_components(&mask);
        Ok(Payload::Int(labels.count as i64))
    }
}

/// The dataset-mean collective. Unchunked: one full collect at the driver.
/// Chunked: index the histograms, scan ranges of `split`, release driver
/// memory between chunks, divide the running sum by the element count.
pub fn mean_histogram_collective(ctx: &mut CollectiveCtx) -> Result<(), DataflowError> {
    let hists = ctx.dataset.try_map(|rec| {
        rec.metrics
            .as_ref()
            .and_then(Payload::as_hist)
            .cloned()
            .ok_or_else(|| format!("record {}: metrics slot empty", rec.im_id))
    });
    let mean = match ctx.chunking {
        Chunking::None => {
            let all = hists
                .collect()
                .map_err(|e| DataflowError::step(MEAN_STEP, e))?;
            if all.is_empty() {
                Histogram::zeroed(0)
            } else {
                let bytes: u64 = all.iter().map(Measurable::size_bytes).sum();
                let mean = mean_histograms(&all)
                    .map_err(|e| DataflowError::BadParam(e.to_string()))?;
                ctx.engine.driver_release(bytes);
                mean
            }
        }
        Chunking::Chunked(split) => {
            let split = split.max(1) as u64;
            let indexed = hists.zip_with_index().cache();
            let total = indexed
                .count()
                .map_err(|e| DataflowError::step(MEAN_STEP, e))? as u64;
            let mut sum = Histogram::zeroed(0);
            ctx.engine
                .driver_charge(sum.size_bytes(), "mean accumulator")
                .map_err(|e| DataflowError::step(MEAN_STEP, e))?;
            let mut start = 0u64;
            while start < total {
                let end = (start + split).min(total);
                let chunk = indexed.filter(move |(_, i)| *i >= start && *i < end);
                let got = chunk
                    .collect()
                    .map_err(|e| DataflowError::step(MEAN_STEP, e))?;
                let bytes: u64 = got.iter().map(Measurable::size_bytes).sum();
                for (h, _) in &got {
                    sum.add(h);
                }
                ctx.engine.driver_release(bytes);
                start = end;
            }
            ctx.engine.driver_release(sum.size_bytes());
            if total > 0 {
                sum.scale(1.0 / total as f64);
            }
            sum
        }
    };
    ctx.params
        .analyze
        .insert(MEAN_HIST_PARAM.into(), Payload::Hist(mean));
    Ok(())
}

fn declaration(tuning: &TaskTuning, chunking: Chunking) -> (Vec<TaskStep>, ParamSet) {
    let logic: Arc<dyn StageLogic> = Arc::new(CountLogic);
    let decl = vec![
        TaskStep::Stage(ModuleSpec::new(StageKind::Preprocess, logic.clone())),
        TaskStep::Stage(ModuleSpec::new(StageKind::Estimate, logic.clone())),
        TaskStep::Collective(CollectiveSpec {
            name: MEAN_STEP.into(),
            kind: StageKind::Model,
            produces: vec![MEAN_HIST_PARAM.into()],
            chunking,
            absorbed: None,
            run: Arc::new(mean_histogram_collective),
        }),
        TaskStep::Stage(
            ModuleSpec::new(StageKind::Analyze, logic)
                .with_reads(vec![Slot::Processed, Slot::Metrics])
                .with_depends_on(&[MEAN_HIST_PARAM]),
        ),
    ];
    let mut params = ParamSet::default();
    params
        .preprocess
        .insert("sigma".into(), Payload::Real(tuning.sigma));
    params
        .analyze
        .insert("corr_floor".into(), Payload::Real(tuning.corr_floor));
    (decl, params)
}

/// Per-image planted-blob counts. `Layout::Minimal` is the fused plan,
/// `Layout::Split(n)` chunks the mean-histogram step in ranges of `n`.
pub fn task_fcount(
    images: &[(String, Image)],
    layout: Layout,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    let engine = new_engine(config)?;
    let chunking = match layout {
        Layout::Split(n) => {
            if n == 0 {
                return Err(DataflowError::BadParam("split size must be >= 1".into()));
            }
            Chunking::Chunked(n)
        }
        _ => Chunking::None,
    };
    let (decl, params) = declaration(tuning, chunking);
    let plan = match layout {
        Layout::Minimal => build_minimal_plan(&decl, Retention::RetainAll, default_extractor())?,
        _ => build_modular_plan(&decl, Retention::RetainAll, default_extractor())?,
    };
    debug_assert_eq!(plan.n_s, TaskId::FlowerCount.min_steps());
    let input = records_from_images(&engine, images)?;
    let outcome = execute_plan(&engine, &plan, input, params)?;
    Ok(PipelineResult {
        task: TaskId::FlowerCount,
        value: outcome.value,
        per_image: outcome.per_image,
        summary: Vec::new(),
        stats: outcome.stats,
    })
}
