//! Image registration: per-pair feature matching, RANSAC homography, and
//! warping the moving image onto the reference. Records bundle both images
//! of a pair, so the modular layout flows full image bundles across every
//! module boundary while the minimal layout fuses to a single stage.

use std::sync::Arc;

use crate::dataflow::{
    build_minimal_plan, build_modular_plan, execute_plan, DataflowError, ModuleSpec, ParamMap,
    ParamSet, Payload, PerImage, PackedRecord, ResultValue, Retention, Slot, StageKind,
    StageLogic, TaskStep, RESULT_TAG,
};
use crate::engine::ExecConfig;
use crate::imgops::{
    estimate_homography_ransac, extract_features, match_descriptors, to_gray, warp_merge,
    FeatureSet, Image,
};
use crate::measure::Measurable;

use super::{new_engine, Layout, PipelineResult, TaskId, TaskTuning};

pub(crate) const REFERENCE_TAG: &str = "reference";
pub(crate) const SKIP_PREFIX: &str = "skipped:";

/// Stable per-pair RANSAC seed, shared with the sequential oracle.
pub(crate) fn pair_seed(config_seed: u64, im_id: &str) -> u64 {
    config_seed ^ crc32fast::hash(im_id.as_bytes()) as u64
}

/// (moving keypoint, reference keypoint) coordinate pairs for matches.
pub(crate) fn matched_points(
    moving: &FeatureSet,
    reference: &FeatureSet,
    matches: &[(usize, usize)],
) -> Vec<((f64, f64), (f64, f64))> {
    matches
        .iter()
        .map(|&(ia, ib)| {
            let a = moving.keypoints[ia];
            let b = reference.keypoints[ib];
            ((a.x as f64, a.y as f64), (b.x as f64, b.y as f64))
        })
        .collect()
}

struct RegisterLogic;

impl StageLogic for RegisterLogic {
    fn preprocess(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Image, String> {
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        to_gray(raw).map_err(|e| e.to_string())
    }

    fn estimate(&self, record: &PackedRecord, params: &ParamMap) -> Result<Payload, String> {
        let processed = record.processed.as_ref().ok_or("processed slot empty")?;
        let reference = record
            .extra_value(REFERENCE_TAG)
            .and_then(Payload::as_picture)
            .ok_or("reference image missing")?;
        let max_kp = params
            .get("max_kp")
            .and_then(Payload::as_int)
            .unwrap_or(64) as usize;
        let moving_features = extract_features(processed, max_kp).map_err(|e| e.to_string())?;
        let reference_gray = to_gray(reference).map_err(|e| e.to_string())?;
        let reference_features =
            extract_features(&reference_gray, max_kp).map_err(|e| e.to_string())?;
        Ok(Payload::List(vec![
            Payload::Features(moving_features),
            Payload::Features(reference_features),
        ]))
    }

    fn model(&self, record: &PackedRecord, params: &ParamMap) -> Result<Payload, String> {
        let bundle = record
            .metrics
            .as_ref()
            .and_then(Payload::as_list)
            .ok_or("metrics slot empty")?;
        let (Some(moving), Some(reference)) = (
            bundle.first().and_then(Payload::as_features),
            bundle.get(1).and_then(Payload::as_features),
        ) else {
            return Err("metrics bundle malformed".into());
        };
        let ratio_thresh = params
            .get("ratio_thresh")
            .and_then(Payload::as_real)
            .unwrap_or(0.8);
        let iters = params
            .get("ransac_iters")
            .and_then(Payload::as_int)
            .unwrap_or(300) as usize;
        let inlier_px = params
            .get("inlier_px")
            .and_then(Payload::as_real)
            .unwrap_or(2.0);
        let seed = params.get("seed").and_then(Payload::as_int).unwrap_or(0) as u64;
        let matched = match_descriptors(moving, reference, ratio_thresh).map_err(|e| e.to_string())?;
        let pairs = matched_points(moving, reference, &matched.matches);
        let estimate = estimate_homography_ransac(
            &pairs,
            iters,
            inlier_px,
            pair_seed(seed, &record.im_id),
        );
        match estimate {
            Ok(est) => Ok(Payload::List(vec![
                Payload::Matrix(est.homography),
                Payload::Int(est.inlier_count as i64),
                Payload::Text("ok".into()),
            ])),
            // Too few matches: the pair is skipped with a flag, not failed.
            Err(e) => Ok(Payload::List(vec![
                Payload::Matrix(crate::imgops::Homography::identity()),
                Payload::Int(0),
                Payload::Text(format!("{SKIP_PREFIX}{e}")),
            ])),
        }
    }

    fn analyze(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        let reference = record
            .extra_value(REFERENCE_TAG)
            .and_then(Payload::as_picture)
            .ok_or("reference image missing")?;
        let model = record
            .model
            .as_ref()
            .and_then(Payload::as_list)
            .ok_or("model slot empty")?;
        let status = model.get(2).and_then(Payload::as_text).unwrap_or("ok");
        if let Some(reason) = status.strip_prefix(SKIP_PREFIX) {
            return Ok(Payload::Text(format!("{SKIP_PREFIX}{reason}")));
        }
        let homography = model
            .first()
            .and_then(Payload::as_matrix)
            .ok_or("model bundle malformed")?;
        let warped = warp_merge(reference, raw, homography).map_err(|e| e.to_string())?;
        Ok(Payload::List(vec![
            Payload::Matrix(homography.clone()),
            Payload::Picture(warped),
        ]))
    }
}

fn declaration(tuning: &TaskTuning, seed: u64) -> (Vec<TaskStep>, ParamSet) {
    let logic: Arc<dyn StageLogic> = Arc::new(RegisterLogic);
    let decl = vec![
        TaskStep::Stage(ModuleSpec::new(StageKind::Preprocess, logic.clone())),
        TaskStep::Stage(ModuleSpec::new(StageKind::Estimate, logic.clone())),
        TaskStep::Stage(ModuleSpec::new(StageKind::Model, logic.clone())),
        TaskStep::Stage(
            ModuleSpec::new(StageKind::Analyze, logic)
                .with_reads(vec![Slot::Raw, Slot::Processed, Slot::Model]),
        ),
    ];
    let mut params = ParamSet::default();
    params
        .estimate
        .insert("max_kp".into(), Payload::Int(tuning.max_kp as i64));
    params
        .model
        .insert("ratio_thresh".into(), Payload::Real(tuning.ratio_thresh));
    params
        .model
        .insert("ransac_iters".into(), Payload::Int(tuning.ransac_iters as i64));
    params
        .model
        .insert("inlier_px".into(), Payload::Real(tuning.inlier_px));
    params.model.insert("seed".into(), Payload::Int(seed as i64));
    (decl, params)
}

/// Register each (moving, reference) pair. Per-image outputs are the nine
/// recovered homography entries (or a skip marker); the result value is
/// the warped-image collection.
pub fn task_imreg(
    pairs: &[(String, Image, Image)],
    layout: Layout,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    if matches!(layout, Layout::Split(_)) {
        return Err(DataflowError::BadParam(
            "split layout is not defined for registration".into(),
        ));
    }
    let engine = new_engine(config)?;
    let (decl, params) = declaration(tuning, config.seed);

    let extractor: crate::dataflow::ResultExtractor = Arc::new(|engine, ds, _params| {
        let rows = ds.map(|rec| {
            let outcome = match rec.extra_value(RESULT_TAG) {
                Some(Payload::List(items)) => {
                    let h = items.first().and_then(Payload::as_matrix);
                    let warped = items.get(1).and_then(Payload::as_picture);
                    match (h, warped) {
                        (Some(h), Some(w)) => Ok((h.m.to_vec(), w.clone())),
                        _ => Err("malformed result".to_string()),
                    }
                }
                Some(Payload::Text(t)) => Err(t.clone()),
                _ => Err("missing result".to_string()),
            };
            (rec.im_id.clone(), ResultRow(outcome))
        });
        let collected = rows
            .collect()
            .map_err(|e| DataflowError::step("collect results", e))?;
        let bytes: u64 = collected.iter().map(Measurable::size_bytes).sum();
        engine.driver_release(bytes);
        let mut warped_out = Vec::new();
        let mut per_image = Vec::new();
        for (id, row) in collected {
            match row.0 {
                Ok((h, warped)) => {
                    per_image.push((id.clone(), PerImage::Reals(h)));
                    warped_out.push((id, warped));
                }
                Err(text) => per_image.push((id, PerImage::Text(text))),
            }
        }
        Ok((ResultValue::ImageCollection(warped_out), per_image))
    });

    let plan = match layout {
        Layout::Minimal => build_minimal_plan(&decl, Retention::RetainAll, extractor)?,
        _ => build_modular_plan(&decl, Retention::RetainAll, extractor)?,
    };
    debug_assert_eq!(plan.n_s, TaskId::Registration.min_steps());

    let mut records = Vec::with_capacity(pairs.len());
    for (id, moving, reference) in pairs {
        let mut rec = PackedRecord::from_image(id, moving.clone())?;
        rec.set_extra(REFERENCE_TAG, Payload::Picture(reference.clone()));
        records.push(rec);
    }
    let input = engine.parallelize(records);
    let outcome = execute_plan(&engine, &plan, input, params)?;

    let skipped: Vec<String> = outcome
        .per_image
        .iter()
        .filter_map(|(id, v)| match v {
            PerImage::Text(t) if t.starts_with(SKIP_PREFIX) => Some(id.clone()),
            _ => None,
        })
        .collect();
    let mut summary = Vec::new();
    if !skipped.is_empty() {
        summary.push(("skipped_pairs".into(), skipped.join(",")));
    }
    Ok(PipelineResult {
        task: TaskId::Registration,
        value: outcome.value,
        per_image: outcome.per_image,
        summary,
        stats: outcome.stats,
    })
}

/// Measurable wrapper for the extraction projection.
struct ResultRow(Result<(Vec<f64>, Image), String>);

impl Measurable for ResultRow {
    fn size_bytes(&self) -> u64 {
        match &self.0 {
            Ok((h, img)) => 16 + h.len() as u64 * 8 + img.size_bytes(),
            Err(t) => 16 + t.len() as u64,
        }
    }
}

impl Clone for ResultRow {
    fn clone(&self) -> Self {
        ResultRow(self.0.clone())
    }
}
