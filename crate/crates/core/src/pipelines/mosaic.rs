//! Mosaic generation by greedy accretion: start from the first tile, scan
//! untraversed tiles in index chunks against the broadcast features of the
//! growing mosaic, merge the best match by RANSAC homography, repeat.

use std::collections::HashSet;
use std::sync::Arc;

use crate::dataflow::{
    build_minimal_plan, execute_plan, Chunking, CollectiveCtx, CollectiveSpec, DataflowError,
    ModuleSpec, ParamMap, ParamSet, Payload, PerImage, PackedRecord, ResultValue, Retention,
    StageKind, StageLogic, TaskStep,
};
use crate::engine::{EngineError, ExecConfig};
use crate::imgops::{
    compute_descriptors, detect_corners, estimate_homography_ransac, extract_features,
    match_descriptors, to_gray, warp_merge, FeatureSet, Image,
};

use crate::measure::Measurable;

use super::imreg::{matched_points, pair_seed};
use super::{new_engine, records_from_images, PipelineResult, TaskId, TaskTuning};

const MERGE_STEP: &str = "greedy_merge";
pub(crate) const MOSAIC_PARAM: &str = "mosaic";
pub(crate) const ORDER_PARAM: &str = "selection_order";
pub(crate) const FLAG_PARAM: &str = "flag";

struct TileLogic;

impl StageLogic for TileLogic {
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
}

struct MergeOpts {
    split_size: usize,
    max_kp: usize,
    ratio_thresh: f64,
    ransac_iters: usize,
    inlier_px: f64,
    min_ratio: f64,
    seed: u64,
}

fn step_err(e: EngineError) -> DataflowError {
    DataflowError::step(MERGE_STEP, e)
}

/// One greedy outer iteration's winner: (ratio, index, im_id).
type Candidate = (f64, u64, String);

fn better(a: &Candidate, b: &Candidate) -> bool {
    b.0 > a.0 || (b.0 == a.0 && b.1 < a.1)
}

/// Features of the growing mosaic, collected per tile-sized window so the
/// budget stays spatially uniform as the canvas grows. A plain global
/// top-K by response starves far-from-peak regions once the canvas is
/// several tiles wide, and candidate tiles then cannot match their own
/// overlap region.
pub(crate) fn mosaic_canvas_features(
    canvas_gray: &Image,
    tile_w: u32,
    tile_h: u32,
    max_kp: usize,
) -> Result<FeatureSet, String> {
    let mut keypoints = Vec::new();
    let mut wy = 0u32;
    while wy < canvas_gray.height {
        let h = tile_h.min(canvas_gray.height - wy);
        let mut wx = 0u32;
        while wx < canvas_gray.width {
            let w = tile_w.min(canvas_gray.width - wx);
            if w >= 16 && h >= 16 {
                let mut window = Image::filled(w, h, 1, 0);
                for y in 0..h {
                    for x in 0..w {
                        window.set(x, y, 0, canvas_gray.sample(wx + x, wy + y, 0));
                    }
                }
                let kps = detect_corners(&window, max_kp).map_err(|e| e.to_string())?;
                for kp in kps {
                    keypoints.push(crate::imgops::Keypoint {
                        x: wx + kp.x,
                        y: wy + kp.y,
                        score: kp.score,
                    });
                }
            }
            wx += tile_w;
        }
        wy += tile_h;
    }
    keypoints.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    compute_descriptors(canvas_gray, &keypoints).map_err(|e| e.to_string())
}

fn greedy_merge(ctx: &mut CollectiveCtx, opts: &MergeOpts) -> Result<(), DataflowError> {
    let indexed = ctx.dataset.zip_with_index().cache();
    let total = indexed.count().map_err(step_err)? as u64;

    // Seed the mosaic with the first tile.
    let first = indexed.filter(|(_, i)| *i == 0);
    let seed_tile = first.collect().map_err(step_err)?;
    let (seed_rec, _) = seed_tile
        .first()
        .ok_or_else(|| DataflowError::BadParam("mosaic needs at least one tile".into()))?;
    ctx.engine.driver_release(seed_rec.size_bytes());
    let mut mosaic = seed_rec
        .raw
        .clone()
        .ok_or_else(|| DataflowError::BadParam("tile record has no raw image".into()))?;
    let mut traversed: HashSet<u64> = HashSet::from([0]);
    let mut order: Vec<String> = vec![seed_rec.im_id.clone()];
    let mut flag = "ok".to_string();
    let (tile_w, tile_h) = (mosaic.width, mosaic.height);

    while (traversed.len() as u64) < total {
        // Features of the current mosaic, rebroadcast every iteration.
        let mosaic_gray =
            to_gray(&mosaic).map_err(|e| DataflowError::BadParam(e.to_string()))?;
        let mosaic_features = mosaic_canvas_features(&mosaic_gray, tile_w, tile_h, opts.max_kp)
            .map_err(DataflowError::BadParam)?;
        let bc = ctx.engine.broadcast(mosaic_features.clone()).map_err(step_err)?;

        // Scan untraversed tiles in index chunks, keeping the best ratio
        // seen in this outer iteration (ties to the lowest index).
        let mut best: Option<Candidate> = None;
        let mut start = 0u64;
        while start < total {
            let end = (start + opts.split_size.max(1) as u64).min(total);
            let skip: Arc<HashSet<u64>> = Arc::new(traversed.clone());
            let in_chunk = indexed.filter(move |(_, i)| *i >= start && *i < end && !skip.contains(i));
            let ratio_thresh = opts.ratio_thresh;
            let bc = bc.clone();
            let scored = in_chunk.try_map(move |(rec, i)| {
                let features = rec
                    .metrics
                    .as_ref()
                    .and_then(Payload::as_features)
                    .ok_or_else(|| format!("record {}: metrics slot empty", rec.im_id))?;
                let result = match_descriptors(features, bc.value(), ratio_thresh)
                    .map_err(|e| e.to_string())?;
                Ok((result.match_ratio, *i, rec.im_id.clone()))
            });
            match scored.reduce_first(|a, b| if better(a, b) { b.clone() } else { a.clone() }) {
                Ok(chunk_best) => {
                    if best.as_ref().is_none_or(|b| better(b, &chunk_best)) {
                        best = Some(chunk_best);
                    }
                }
                Err(EngineError::EmptyDataset) => {}
                Err(e) => return Err(step_err(e)),
            }
            start = end;
        }

        let Some((ratio, index, _)) = best else { break };
        if ratio < opts.min_ratio {
            flag = "no_viable_match".into();
            break;
        }

        // Fetch the winning tile and merge it through a homography.
        let pick = indexed.filter(move |(_, i)| *i == index);
        let picked = pick.collect().map_err(step_err)?;
        let (rec, _) = picked.first().expect("winning index exists");
        ctx.engine.driver_release(rec.size_bytes());
        let tile_features = rec
            .metrics
            .as_ref()
            .and_then(Payload::as_features)
            .cloned()
            .unwrap_or_else(|| FeatureSet {
                keypoints: vec![],
                descriptors: vec![],
            });
        let matched = match_descriptors(&tile_features, &mosaic_features, opts.ratio_thresh)
            .map_err(|e| DataflowError::BadParam(e.to_string()))?;
        let pairs = matched_points(&tile_features, &mosaic_features, &matched.matches);
        let estimate = estimate_homography_ransac(
            &pairs,
            opts.ransac_iters,
            opts.inlier_px,
            pair_seed(opts.seed, &rec.im_id),
        );
        let homography = match estimate {
            Ok(est) => est.homography,
            Err(e) => {
                flag = format!("merge_failed:{}:{e}", rec.im_id);
                break;
            }
        };
        let tile_raw = rec.raw.clone().expect("tile record has raw image");
        mosaic = warp_merge(&mosaic, &tile_raw, &homography)
            .map_err(|e| DataflowError::BadParam(e.to_string()))?;
        traversed.insert(index);
        order.push(rec.im_id.clone());
    }

    ctx.params
        .analyze
        .insert(MOSAIC_PARAM.into(), Payload::Picture(mosaic));
    ctx.params.analyze.insert(
        ORDER_PARAM.into(),
        Payload::List(order.into_iter().map(Payload::Text).collect()),
    );
    ctx.params
        .analyze
        .insert(FLAG_PARAM.into(), Payload::Text(flag));
    Ok(())
}

/// Build the composite mosaic. Chunk size only affects scan batching; the
/// selection order is identical for any `split_size >= 1`.
pub fn task_mosaic(
    images: &[(String, Image)],
    split_size: usize,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    if images.len() < 2 {
        return Err(DataflowError::BadParam(
            "mosaic needs at least 2 overlapping images".into(),
        ));
    }
    if split_size == 0 {
        return Err(DataflowError::BadParam("split_size must be >= 1".into()));
    }
    let engine = new_engine(config)?;
    let logic: Arc<dyn StageLogic> = Arc::new(TileLogic);
    let opts = MergeOpts {
        split_size,
        max_kp: tuning.max_kp,
        ratio_thresh: tuning.ratio_thresh,
        ransac_iters: tuning.ransac_iters,
        inlier_px: tuning.inlier_px,
        min_ratio: tuning.min_ratio,
        seed: config.seed,
    };
    let decl = vec![
        TaskStep::Stage(ModuleSpec::new(StageKind::Preprocess, logic.clone())),
        TaskStep::Stage(ModuleSpec::new(StageKind::Estimate, logic)),
        TaskStep::Collective(CollectiveSpec {
            name: MERGE_STEP.into(),
            kind: StageKind::Model,
            produces: vec![MOSAIC_PARAM.into(), ORDER_PARAM.into(), FLAG_PARAM.into()],
            chunking: Chunking::Chunked(split_size),
            absorbed: None,
            run: Arc::new(move |ctx| greedy_merge(ctx, &opts)),
        }),
    ];

    let extractor: crate::dataflow::ResultExtractor = Arc::new(|_engine, _ds, params| {
        let mosaic = params
            .analyze
            .get(MOSAIC_PARAM)
            .and_then(Payload::as_picture)
            .cloned()
            .ok_or_else(|| DataflowError::BadParam("mosaic collective produced no image".into()))?;
        let order: Vec<String> = params
            .analyze
            .get(ORDER_PARAM)
            .and_then(Payload::as_list)
            .map(|l| {
                l.iter()
                    .filter_map(|p| p.as_text().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default();
        let per_image = order
            .iter()
            .enumerate()
            .map(|(rank, id)| (id.clone(), PerImage::Int(rank as i64)))
            .collect();
        Ok((
            ResultValue::ImageCollection(vec![("mosaic".into(), mosaic)]),
            per_image,
        ))
    });

    let plan = build_minimal_plan(&decl, Retention::RetainAll, extractor)?;
    assert_eq!(plan.n_s, TaskId::Mosaic.min_steps());
    let input = records_from_images(&engine, images)?;
    let outcome = execute_plan(&engine, &plan, input, ParamSet::default())?;

    let mut summary = Vec::new();
    let order: Vec<String> = outcome
        .per_image
        .iter()
        .map(|(id, _)| id.clone())
        .collect();
    summary.push((ORDER_PARAM.to_string(), order.join(",")));
    if let Some(Payload::Text(flag)) = outcome.params.analyze.get(FLAG_PARAM) {
        summary.push((FLAG_PARAM.to_string(), flag.clone()));
    }
    Ok(PipelineResult {
        task: TaskId::Mosaic,
        value: outcome.value,
        per_image: outcome.per_image,
        summary,
        stats: outcome.stats,
    })
}
