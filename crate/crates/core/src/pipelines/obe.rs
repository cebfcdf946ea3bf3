//! Object extraction: threshold, label components, report bounding boxes
//! and crops.

use std::sync::Arc;

use crate::dataflow::{
    build_minimal_plan, build_modular_plan, execute_plan, DataflowError, ModuleSpec, ParamMap,
    ParamSet, Payload, PerImage, PackedRecord, ResultValue, Retention, Slot, StageKind,
    StageLogic, TaskStep, RESULT_TAG,
};
use crate::engine::ExecConfig;
use crate::imgops::{component_boxes, connected_components, otsu_threshold, to_gray, BoundingBox, Image};

use super::{new_engine, records_from_images, Layout, PipelineResult, TaskId, TaskTuning};

pub(crate) fn crop(img: &Image, b: &BoundingBox) -> Image {
    let mut out = Image::filled(b.width, b.height, img.channels, 0);
    for y in 0..b.height {
        for x in 0..b.width {
            for c in 0..img.channels {
                out.set(x, y, c, img.sample(b.x + x, b.y + y, c));
            }
        }
    }
    out
}

pub(crate) fn render_boxes(boxes: &[BoundingBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{},{},{},{}", b.x, b.y, b.width, b.height))
        .collect::<Vec<_>>()
        .join(";")
}

struct ExtractLogic;

impl StageLogic for ExtractLogic {
    fn preprocess(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Image, String> {
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        to_gray(raw).map_err(|e| e.to_string())
    }

    fn analyze(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        let processed = record.processed.as_ref().ok_or("processed slot empty")?;
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        let (_, mask) = otsu_threshold(processed).map_err(|e| e.to_string())?;
        let labels = connected_components(&mask);
        let boxes = component_boxes(&labels);
        let crops: Vec<Payload> = boxes
            .iter()
            .map(|b| Payload::Picture(crop(raw, b)))
            .collect();
        Ok(Payload::List(vec![
            Payload::Text(render_boxes(&boxes)),
            Payload::List(crops),
        ]))
    }
}

/// Bounding boxes and crops of bright objects per image. The result value
/// is the crop collection (routed to sharded storage); per-image outputs
/// are the rendered box lists.
pub fn task_obe(
    images: &[(String, Image)],
    layout: Layout,
    config: &ExecConfig,
    _tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    if matches!(layout, Layout::Split(_)) {
        return Err(DataflowError::BadParam(
            "split layout is not defined for object extraction".into(),
        ));
    }
    let engine = new_engine(config)?;
    let logic: Arc<dyn StageLogic> = Arc::new(ExtractLogic);
    let decl = vec![
        TaskStep::Stage(ModuleSpec::new(StageKind::Preprocess, logic.clone())),
        TaskStep::Stage(
            ModuleSpec::new(StageKind::Analyze, logic).with_reads(vec![Slot::Raw, Slot::Processed]),
        ),
    ];

    let extractor: crate::dataflow::ResultExtractor = Arc::new(|engine, ds, _params| {
        let rows = ds.map(|rec| {
            let (boxes, crops) = match rec.extra_value(RESULT_TAG) {
                Some(Payload::List(items)) if items.len() == 2 => {
                    let boxes = items[0].as_text().unwrap_or_default().to_string();
                    let crops: Vec<Image> = items[1]
                        .as_list()
                        .map(|l| l.iter().filter_map(|p| p.as_picture().cloned()).collect())
                        .unwrap_or_default();
                    (boxes, crops)
                }
                _ => (String::new(), Vec::new()),
            };
            (rec.im_id.clone(), (boxes, crops))
        });
        let collected = rows
            .collect()
            .map_err(|e| DataflowError::step("collect results", e))?;
        let bytes: u64 = collected
            .iter()
            .map(crate::measure::Measurable::size_bytes)
            .sum();
        engine.driver_release(bytes);
        let mut crops_out = Vec::new();
        let mut per_image = Vec::new();
        for (id, (boxes, crops)) in collected {
            for (i, c) in crops.into_iter().enumerate() {
                crops_out.push((format!("{id}#{i}"), c));
            }
            per_image.push((id, PerImage::Text(boxes)));
        }
        Ok((ResultValue::ImageCollection(crops_out), per_image))
    });

    let plan = match layout {
        Layout::Minimal => build_minimal_plan(&decl, Retention::RetainAll, extractor)?,
        _ => build_modular_plan(&decl, Retention::RetainAll, extractor)?,
    };
    debug_assert_eq!(plan.n_s, TaskId::ObjectExtract.min_steps());
    let input = records_from_images(&engine, images)?;
    let outcome = execute_plan(&engine, &plan, input, ParamSet::default())?;
    Ok(PipelineResult {
        task: TaskId::ObjectExtract,
        value: outcome.value,
        per_image: outcome.per_image,
        summary: Vec::new(),
        stats: outcome.stats,
    })
}
