//! Single-threaded reference implementations of every task: plain loops
//! over the image primitives, no engine involved. These are the canonical
//! comparison targets for all layout-equivalence checks.

use std::collections::BTreeMap;

use crate::dataflow::{DataflowError, PerImage, ResultValue};
use crate::imgops::{
    component_boxes, compute_histogram, connected_components, correlate_histograms,
    estimate_homography_ransac, extract_channel, extract_features, gaussian_blur, kmeans_assign,
    kmeans_fit, match_descriptors, mean_histograms, otsu_threshold, to_gray, warp_merge, BoundingBox,
    FeatureSet, Image,
};
use crate::engine::ExecConfig;

use super::imreg::{pair_seed, SKIP_PREFIX};
use super::{oracle_stats, PipelineResult, TaskId, TaskTuning};

fn img_err(e: crate::imgops::ImgError) -> DataflowError {
    DataflowError::BadParam(e.to_string())
}

pub fn oracle_imatch(
    images: &[(String, Image)],
    template: &Image,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    let _ = config;
    let template_gray = to_gray(template).map_err(img_err)?;
    let template_features = extract_features(&template_gray, tuning.max_kp).map_err(img_err)?;
    let mut per_image = Vec::with_capacity(images.len());
    for (id, img) in images {
        let gray = to_gray(img).map_err(img_err)?;
        let features = extract_features(&gray, tuning.max_kp).map_err(img_err)?;
        let result =
            match_descriptors(&features, &template_features, tuning.ratio_thresh).map_err(img_err)?;
        per_image.push((id.clone(), PerImage::Real(result.match_ratio)));
    }
    let value = ResultValue::ValueList(
        per_image
            .iter()
            .map(|(id, v)| (id.clone(), v.render()))
            .collect(),
    );
    let mut summary = Vec::new();
    let best = per_image
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
        value,
        per_image,
        summary,
        stats: oracle_stats(),
    })
}

fn oracle_color_feature(img: &Image) -> Result<Vec<f64>, DataflowError> {
    let bins = super::cluster::FEATURE_BINS;
    let mut feature = Vec::with_capacity(3 * bins);
    for c in 0..3u8 {
        let plane = extract_channel(img, c).map_err(img_err)?;
        let hist = compute_histogram(&plane).map_err(img_err)?;
        for chunk in hist.bins.chunks(256 / bins) {
            feature.push(chunk.iter().sum());
        }
    }
    Ok(feature)
}

pub fn oracle_cluster(
    images: &[(String, Image)],
    k: usize,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    let mut features = Vec::with_capacity(images.len());
    for (_, img) in images {
        features.push(oracle_color_feature(img)?);
    }
    let (centroids, report) = kmeans_fit(
        &features,
        k,
        tuning.kmeans_max_iters,
        tuning.kmeans_tol,
        config.seed,
    )
    .map_err(img_err)?;
    let labels = kmeans_assign(&features, &centroids);
    let per_image: Vec<(String, PerImage)> = images
        .iter()
        .zip(labels)
        .map(|((id, _), label)| (id.clone(), PerImage::Int(label as i64)))
        .collect();
    let value = ResultValue::ValueList(
        per_image
            .iter()
            .map(|(id, v)| (id.clone(), v.render()))
            .collect(),
    );
    let objective: Vec<String> = report.objective.iter().map(|o| format!("{o:?}")).collect();
    Ok(PipelineResult {
        task: TaskId::Clustering,
        value,
        per_image,
        summary: vec![
            ("kmeans_iterations".into(), report.iterations.to_string()),
            ("kmeans_objective".into(), objective.join(",")),
        ],
        stats: oracle_stats(),
    })
}

pub fn oracle_fcount(
    images: &[(String, Image)],
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    let _ = config;
    let mut processed = Vec::with_capacity(images.len());
    let mut hists = Vec::with_capacity(images.len());
    for (_, img) in images {
        let blue = extract_channel(img, 2).map_err(img_err)?;
        let blurred = gaussian_blur(&blue, tuning.sigma).map_err(img_err)?;
        hists.push(compute_histogram(&blurred).map_err(img_err)?);
        processed.push(blurred);
    }
    let mean = if hists.is_empty() {
        crate::imgops::Histogram::zeroed(0)
    } else {
        mean_histograms(&hists).map_err(img_err)?
    };
    let mut per_image = Vec::with_capacity(images.len());
    for (((id, _), blurred), hist) in images.iter().zip(&processed).zip(&hists) {
        let corr = correlate_histograms(hist, &mean).map_err(img_err)?;
        let count = if !corr.degenerate && corr.value < tuning.corr_floor {
            0
        } else {
            let (_, mask) = otsu_threshold(blurred).map_err(img_err)?;
            connected_components(&mask).count as i64
        };
        per_image.push((id.clone(), PerImage::Int(count)));
    }
    let value = ResultValue::ValueList(
        per_image
            .iter()
            .map(|(id, v)| (id.clone(), v.render()))
            .collect(),
    );
    Ok(PipelineResult {
        task: TaskId::FlowerCount,
        value,
        per_image,
        summary: Vec::new(),
        stats: oracle_stats(),
    })
}

fn oracle_crop(img: &Image, b: &BoundingBox) -> Image {
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

pub fn oracle_obe(
    images: &[(String, Image)],
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    let _ = (config, tuning);
    let mut per_image = Vec::with_capacity(images.len());
    let mut crops = Vec::new();
    for (id, img) in images {
        let gray = to_gray(img).map_err(img_err)?;
        let (_, mask) = otsu_threshold(&gray).map_err(img_err)?;
        let labels = connected_components(&mask);
        let boxes = component_boxes(&labels);
        for (i, b) in boxes.iter().enumerate() {
            crops.push((format!("{id}#{i}"), oracle_crop(img, b)));
        }
        let rendered = boxes
            .iter()
            .map(|b| format!("{},{},{},{}", b.x, b.y, b.width, b.height))
            .collect::<Vec<_>>()
            .join(";");
        per_image.push((id.clone(), PerImage::Text(rendered)));
    }
    Ok(PipelineResult {
        task: TaskId::ObjectExtract,
        value: ResultValue::ImageCollection(crops),
        per_image,
        summary: Vec::new(),
        stats: oracle_stats(),
    })
}

fn matched_coordinate_pairs(
    a: &FeatureSet,
    b: &FeatureSet,
    matches: &[(usize, usize)],
) -> Vec<((f64, f64), (f64, f64))> {
    matches
        .iter()
        .map(|&(ia, ib)| {
            let pa = a.keypoints[ia];
            let pb = b.keypoints[ib];
            ((pa.x as f64, pa.y as f64), (pb.x as f64, pb.y as f64))
        })
        .collect()
}

pub fn oracle_imreg(
    pairs: &[(String, Image, Image)],
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    let mut per_image = Vec::with_capacity(pairs.len());
    let mut warped_out = Vec::new();
    let mut skipped = Vec::new();
    for (id, moving, reference) in pairs {
        let moving_gray = to_gray(moving).map_err(img_err)?;
        let moving_features = extract_features(&moving_gray, tuning.max_kp).map_err(img_err)?;
        let reference_gray = to_gray(reference).map_err(img_err)?;
        let reference_features =
            extract_features(&reference_gray, tuning.max_kp).map_err(img_err)?;
        let matched = match_descriptors(&moving_features, &reference_features, tuning.ratio_thresh)
            .map_err(img_err)?;
        let coords = matched_coordinate_pairs(&moving_features, &reference_features, &matched.matches);
        match estimate_homography_ransac(
            &coords,
            tuning.ransac_iters,
            tuning.inlier_px,
            pair_seed(config.seed, id),
        ) {
            Ok(est) => {
                let warped = warp_merge(reference, moving, &est.homography).map_err(img_err)?;
                per_image.push((id.clone(), PerImage::Reals(est.homography.m.to_vec())));
                warped_out.push((id.clone(), warped));
            }
            Err(e) => {
                per_image.push((id.clone(), PerImage::Text(format!("{SKIP_PREFIX}{e}"))));
                skipped.push(id.clone());
            }
        }
    }
    let mut summary = Vec::new();
    if !skipped.is_empty() {
        summary.push(("skipped_pairs".into(), skipped.join(",")));
    }
    Ok(PipelineResult {
        task: TaskId::Registration,
        value: ResultValue::ImageCollection(warped_out),
        per_image,
        summary,
        stats: oracle_stats(),
    })
}

/// Full-scan greedy mosaic: every outer iteration scans all untraversed
/// tiles in index order and merges the best ratio (ties to the lowest
/// index) — the reference for chunked-scan invariance.
pub fn oracle_mosaic(
    images: &[(String, Image)],
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    if images.len() < 2 {
        return Err(DataflowError::BadParam(
            "mosaic needs at least 2 overlapping images".into(),
        ));
    }
    let mut tiles = Vec::with_capacity(images.len());
    for (id, img) in images {
        let gray = to_gray(img).map_err(img_err)?;
        let features = extract_features(&gray, tuning.max_kp).map_err(img_err)?;
        tiles.push((id.clone(), img.clone(), features));
    }
    let mut mosaic = tiles[0].1.clone();
    let mut traversed = vec![false; tiles.len()];
    traversed[0] = true;
    let mut order = vec![tiles[0].0.clone()];
    let mut flag = "ok".to_string();
    let (tile_w, tile_h) = (mosaic.width, mosaic.height);

    while traversed.iter().any(|t| !t) {
        let mosaic_gray = to_gray(&mosaic).map_err(img_err)?;
        let mosaic_features =
            super::mosaic::mosaic_canvas_features(&mosaic_gray, tile_w, tile_h, tuning.max_kp)
                .map_err(DataflowError::BadParam)?;
        let mut best: Option<(f64, usize)> = None;
        for (i, (_, _, features)) in tiles.iter().enumerate() {
            if traversed[i] {
                continue;
            }
            let result = match_descriptors(features, &mosaic_features, tuning.ratio_thresh)
                .map_err(img_err)?;
            let candidate = (result.match_ratio, i);
            let take = match &best {
                None => true,
                Some((r, idx)) => candidate.0 > *r || (candidate.0 == *r && candidate.1 < *idx),
            };
            if take {
                best = Some(candidate);
            }
        }
        let Some((ratio, index)) = best else { break };
        if ratio < tuning.min_ratio {
            flag = "no_viable_match".into();
            break;
        }
        let (id, raw, features) = &tiles[index];
        let matched = match_descriptors(features, &mosaic_features, tuning.ratio_thresh)
            .map_err(img_err)?;
        let coords = matched_coordinate_pairs(features, &mosaic_features, &matched.matches);
        let homography = match estimate_homography_ransac(
            &coords,
            tuning.ransac_iters,
            tuning.inlier_px,
            pair_seed(config.seed, id),
        ) {
            Ok(est) => est.homography,
            Err(e) => {
                flag = format!("merge_failed:{id}:{e}");
                break;
            }
        };
        mosaic = warp_merge(&mosaic, raw, &homography).map_err(img_err)?;
        traversed[index] = true;
        order.push(id.clone());
    }

    let per_image: Vec<(String, PerImage)> = order
        .iter()
        .enumerate()
        .map(|(rank, id)| (id.clone(), PerImage::Int(rank as i64)))
        .collect();
    Ok(PipelineResult {
        task: TaskId::Mosaic,
        value: ResultValue::ImageCollection(vec![("mosaic".into(), mosaic)]),
        per_image,
        summary: vec![
            ("selection_order".into(), order.join(",")),
            ("flag".into(), flag),
        ],
        stats: oracle_stats(),
    })
}

/// Dictionary-shaped view of per-image outputs, for quick lookups in tests.
pub fn per_image_map(result: &PipelineResult) -> BTreeMap<String, PerImage> {
    result.per_image.iter().cloned().collect()
}
