//! Image matching: score every image against a broadcast template by
//! descriptor match ratio.

use std::sync::Arc;

use crate::dataflow::{
    build_minimal_plan, build_modular_plan, default_extractor, execute_plan, DataflowError,
    ModuleSpec, ParamMap, ParamSet, Payload, PerImage, PackedRecord, Retention, Slot, StageKind,
    StageLogic, TaskStep,
};
use crate::engine::ExecConfig;
use crate::imgops::{extract_features, match_descriptors, to_gray, Image};

use super::{records_from_images, new_engine, Layout, PipelineResult, TaskId, TaskTuning};

struct MatchLogic;

impl StageLogic for MatchLogic {
    fn preprocess(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Image, String> {
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        to_gray(raw).map_err(|e| e.to_string())
    }

    fn estimate(&self, record: &PackedRecord, params: &ParamMap) -> Result<Payload, String> {
        let processed = record.processed.as_ref().ok_or("processed slot empty")?;
        let max_kp = params
            .get("max_kp")
            .and_then(Payload::as_int)
            .unwrap_or(64) as usize;
        let features = extract_features(processed, max_kp).map_err(|e| e.to_string())?;
        Ok(Payload::Features(features))
    }

    fn analyze(&self, record: &PackedRecord, params: &ParamMap) -> Result<Payload, String> {
        let features = record
            .metrics
            .as_ref()
            .and_then(Payload::as_features)
            .ok_or("metrics slot empty")?;
        let template = params
            .get("template_features")
            .and_then(Payload::as_features)
            .ok_or("template_features parameter missing")?;
        let ratio_thresh = params
            .get("ratio_thresh")
            .and_then(Payload::as_real)
            .unwrap_or(0.8);
        let result = match_descriptors(features, template, ratio_thresh).map_err(|e| e.to_string())?;
        Ok(Payload::Real(result.match_ratio))
    }
}

fn declaration(tuning: &TaskTuning) -> (Vec<TaskStep>, ParamSet) {
    let logic: Arc<dyn StageLogic> = Arc::new(MatchLogic);
    let decl = vec![
        TaskStep::Stage(ModuleSpec::new(StageKind::Preprocess, logic.clone())),
        TaskStep::Stage(ModuleSpec::new(StageKind::Estimate, logic.clone())),
        TaskStep::Stage(ModuleSpec::new(StageKind::Analyze, logic).with_reads(vec![Slot::Metrics])),
    ];
    let mut params = ParamSet::default();
    params
        .estimate
        .insert("max_kp".into(), Payload::Int(tuning.max_kp as i64));
    params
        .analyze
        .insert("ratio_thresh".into(), Payload::Real(tuning.ratio_thresh));
    (decl, params)
}

/// Per-image match ratio against `template`; the summary names the best
/// match (ties to the lowest im_id).
pub fn task_imatch(
    images: &[(String, Image)],
    template: &Image,
    layout: Layout,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    if matches!(layout, Layout::Split(_)) {
        return Err(DataflowError::BadParam(
            "split layout is not defined for image matching".into(),
        ));
    }
    let engine = new_engine(config)?;
    let (decl, mut params) = declaration(tuning);
    let template_gray = to_gray(template).map_err(|e| DataflowError::BadParam(e.to_string()))?;
    let template_features =
        extract_features(&template_gray, tuning.max_kp).map_err(|e| DataflowError::BadParam(e.to_string()))?;
    params
        .analyze
        .insert("template_features".into(), Payload::Features(template_features));

    let plan = match layout {
        Layout::Minimal => build_minimal_plan(&decl, Retention::RetainAll, default_extractor())?,
        _ => build_modular_plan(&decl, Retention::RetainAll, default_extractor())?,
    };
    debug_assert_eq!(plan.n_s, TaskId::ImageMatch.min_steps());
    let input = records_from_images(&engine, images)?;
    let outcome = execute_plan(&engine, &plan, input, params)?;

    let mut summary = Vec::new();
    let best = outcome
        .per_image
        .iter()
        .filter_map(|(id, v)| match v {
            PerImage::Real(r) => Some((id.clone(), *r)),
            _ => None,
        })
        .fold(None::<(String, f64)>, |acc, (id, r)| match acc {
            None => Some((id, r)),
            Some((bid, br)) => {
                if r > br || (r == br && id < bid) {
                    Some((id, r))
                } else {
                    Some((bid, br))
                }
            }
        });
    if let Some((id, ratio)) = best {
        summary.push(("best_im_id".to_string(), id));
        summary.push(("best_ratio".to_string(), format!("{ratio:.12}")));
    }
    Ok(PipelineResult {
        task: TaskId::ImageMatch,
        value: outcome.value,
        per_image: outcome.per_image,
        summary,
        stats: outcome.stats,
    })
}
