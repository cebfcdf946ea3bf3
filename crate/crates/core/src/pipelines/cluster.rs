//! Image clustering: per-image color-histogram features, k-means trained
//! through engine iterations (broadcast centroids, map assignments, reduce
//! partial sums), then per-image labeling from the final centroids.

use std::sync::Arc;

use crate::dataflow::{
    build_minimal_plan, build_modular_plan, default_extractor, execute_plan, Chunking,
    CollectiveCtx, CollectiveSpec, DataflowError, ModuleSpec, ParamMap, ParamSet, Payload,
    PackedRecord, Retention, Slot, StageKind, StageLogic, TaskStep,
};
use crate::engine::ExecConfig;
use crate::imgops::{compute_histogram, extract_channel, kmeans_plus_plus_init, Image};
use crate::measure::Measurable;
use crate::rng::SplitMix64;

use super::{new_engine, records_from_images, Layout, PipelineResult, TaskId, TaskTuning};

pub(crate) const CENTROIDS_PARAM: &str = "centroids";
const KMEANS_STEP: &str = "kmeans_train";
pub(crate) const FEATURE_BINS: usize = 32;

/// Concatenated per-channel 32-bin histograms: a 96-dim color signature.
pub(crate) fn color_feature(img: &Image) -> Result<Vec<f64>, String> {
    let mut feature = Vec::with_capacity(3 * FEATURE_BINS);
    for c in 0..3u8 {
        let plane = extract_channel(img, c).map_err(|e| e.to_string())?;
        let hist = compute_histogram(&plane).map_err(|e| e.to_string())?;
        for chunk in hist.bins.chunks(256 / FEATURE_BINS) {
            feature.push(chunk.iter().sum());
        }
    }
    Ok(feature)
}

pub(crate) fn nearest_center(feature: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d: f64 = feature.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// Mergeable per-iteration statistics: cluster sums and counts, total
/// objective, and the farthest point (for empty-cluster reseeding).
#[derive(Debug, Clone, PartialEq)]
struct IterStat {
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
    objective: f64,
    farthest: Option<(f64, u64, Vec<f64>)>,
}

impl IterStat {
    fn zero(k: usize, dim: usize) -> Self {
        Self {
            sums: vec![vec![0.0; dim]; k],
            counts: vec![0; k],
            objective: 0.0,
            farthest: None,
        }
    }

    fn singleton(k: usize, assigned: usize, feature: &[f64], dist: f64, index: u64) -> Self {
        let dim = feature.len();
        let mut stat = Self::zero(k, dim);
        stat.counts[assigned] = 1;
        stat.sums[assigned] = feature.to_vec();
        stat.objective = dist;
        stat.farthest = Some((dist, index, feature.to_vec()));
        stat
    }

    fn merge(a: &Self, b: &Self) -> Self {
        let mut out = a.clone();
        for (sa, sb) in out.sums.iter_mut().zip(&b.sums) {
            for (x, y) in sa.iter_mut().zip(sb) {
                *x += y;
            }
        }
        for (ca, cb) in out.counts.iter_mut().zip(&b.counts) {
            *ca += cb;
        }
        out.objective += b.objective;
        out.farthest = match (out.farthest.take(), b.farthest.clone()) {
            (None, f) => f,
            (f, None) => f,
            (Some(fa), Some(fb)) => {
                // Max distance; ties go to the lower point index.
                if fb.0 > fa.0 || (fb.0 == fa.0 && fb.1 < fa.1) {
                    Some(fb)
                } else {
                    Some(fa)
                }
            }
        };
        out
    }
}

impl Measurable for IterStat {
    fn size_bytes(&self) -> u64 {
        let dims: u64 = self.sums.iter().map(|s| 16 + s.len() as u64 * 8).sum();
        16 + dims + self.counts.len() as u64 * 8 + 8
            + self.farthest.as_ref().map_or(0, |(_, _, f)| 32 + f.len() as u64 * 8)
    }
}

struct KmeansParams {
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
}

/// Lloyd iterations over the engine: centroids broadcast each round,
/// assignments mapped on workers, partial sums reduced to the driver.
/// Seeding collects the (small) feature vectors once and runs the same
/// deterministic k-means++ as the in-memory implementation.
fn kmeans_collective(ctx: &mut CollectiveCtx, opts: &KmeansParams) -> Result<(), DataflowError> {
    let features = ctx
        .dataset
        .try_map(|rec| {
            rec.metrics
                .as_ref()
                .and_then(Payload::as_vector)
                .map(|v| v.to_vec())
                .ok_or_else(|| format!("record {}: metrics slot empty", rec.im_id))
        })
        .zip_with_index()
        .cache();
    let n = features
        .count()
        .map_err(|e| DataflowError::step(KMEANS_STEP, e))?;
    if opts.k == 0 || opts.k > n {
        return Err(DataflowError::BadParam(format!(
            "need 1 <= k <= {n}, got k = {}",
            opts.k
        )));
    }

    // Seed centroids from a one-shot driver collect of the features.
    let plain = features.map(|(f, _)| f.clone());
    let collected = plain
        .collect()
        .map_err(|e| DataflowError::step(KMEANS_STEP, e))?;
    let bytes: u64 = collected.iter().map(Measurable::size_bytes).sum();
    let mut rng = SplitMix64::new(opts.seed);
    let mut centers = kmeans_plus_plus_init(&collected, opts.k, &mut rng);
    ctx.engine.driver_release(bytes);
    drop(collected);

    let dim = centers[0].len();
    let k = opts.k;
    let mut objective_history = Vec::new();
    let mut iterations = 0usize;
    for _ in 0..opts.max_iters.max(1) {
        iterations += 1;
        let bc = ctx
            .engine
            .broadcast(centers.clone())
            .map_err(|e| DataflowError::step(KMEANS_STEP, e))?;
        let stats = features
            .map(move |(f, idx)| {
                let (assigned, dist) = nearest_center(f, bc.value());
                IterStat::singleton(k, assigned, f, dist, *idx)
            })
            .reduce(IterStat::zero(k, dim), IterStat::merge)
            .map_err(|e| DataflowError::step(KMEANS_STEP, e))?;
        objective_history.push(stats.objective);
        let mut new_centers = Vec::with_capacity(k);
        for (c, (sum, count)) in stats.sums.iter().zip(&stats.counts).enumerate() {
            if *count == 0 {
                let far = stats
                    .farthest
                    .as_ref()
                    .map(|(_, _, f)| f.clone())
                    .unwrap_or_else(|| centers[c].clone());
                new_centers.push(far);
            } else {
                new_centers.push(sum.iter().map(|s| s / *count as f64).collect());
            }
        }
        let movement = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        centers = new_centers;
        if movement < opts.tol {
            break;
        }
    }

    let centroids = Payload::List(centers.into_iter().map(Payload::Vector).collect());
    ctx.params.analyze.insert(CENTROIDS_PARAM.into(), centroids);
    ctx.params.analyze.insert(
        "kmeans_objective".into(),
        Payload::Vector(objective_history),
    );
    ctx.params
        .analyze
        .insert("kmeans_iterations".into(), Payload::Int(iterations as i64));
    Ok(())
}

struct FeatureLogic;

impl StageLogic for FeatureLogic {
    fn estimate(&self, record: &PackedRecord, _params: &ParamMap) -> Result<Payload, String> {
        let raw = record.raw.as_ref().ok_or("raw slot empty")?;
        Ok(Payload::Vector(color_feature(raw)?))
    }
}

struct LabelLogic;

impl StageLogic for LabelLogic {
    fn analyze(&self, record: &PackedRecord, params: &ParamMap) -> Result<Payload, String> {
        let feature = record
            .metrics
            .as_ref()
            .and_then(Payload::as_vector)
            .ok_or("metrics slot empty")?;
        let centers: Vec<Vec<f64>> = params
            .get(CENTROIDS_PARAM)
            .and_then(Payload::as_list)
            .ok_or("centroids parameter missing")?
            .iter()
            .filter_map(|p| p.as_vector().map(|v| v.to_vec()))
            .collect();
        let (label, _) = nearest_center(feature, &centers);
        Ok(Payload::Int(label as i64))
    }
}

/// Per-image cluster labels. Minimal layout folds labeling into the
/// training step; modular runs feature extraction, training, and labeling
/// as separate modules.
pub fn task_cluster(
    images: &[(String, Image)],
    k: usize,
    layout: Layout,
    config: &ExecConfig,
    tuning: &TaskTuning,
) -> Result<PipelineResult, DataflowError> {
    if matches!(layout, Layout::Split(_)) {
        return Err(DataflowError::BadParam(
            "split layout is not defined for clustering".into(),
        ));
    }
    if k == 0 {
        return Err(DataflowError::BadParam("k must be >= 1".into()));
    }
    let engine = new_engine(config)?;
    let opts = KmeansParams {
        k,
        max_iters: tuning.kmeans_max_iters,
        tol: tuning.kmeans_tol,
        seed: config.seed,
    };
    let estimate: Arc<dyn StageLogic> = Arc::new(FeatureLogic);
    let label: Arc<dyn StageLogic> = Arc::new(LabelLogic);
    let decl = vec![
        TaskStep::Stage(ModuleSpec::new(StageKind::Estimate, estimate).with_reads(vec![Slot::Raw])),
        TaskStep::Collective(CollectiveSpec {
            name: KMEANS_STEP.into(),
            kind: StageKind::Model,
            produces: vec![
                CENTROIDS_PARAM.into(),
                "kmeans_objective".into(),
                "kmeans_iterations".into(),
            ],
            chunking: Chunking::None,
            absorbed: Some(
                ModuleSpec::new(StageKind::Analyze, label)
                    .with_reads(vec![Slot::Metrics])
                    .with_depends_on(&[CENTROIDS_PARAM]),
            ),
            run: Arc::new(move |ctx| kmeans_collective(ctx, &opts)),
        }),
    ];
    let plan = match layout {
        Layout::Minimal => build_minimal_plan(&decl, Retention::RetainAll, default_extractor())?,
        _ => build_modular_plan(&decl, Retention::RetainAll, default_extractor())?,
    };
    debug_assert_eq!(plan.n_s, TaskId::Clustering.min_steps());
    let input = records_from_images(&engine, images)?;
    let outcome = execute_plan(&engine, &plan, input, ParamSet::default())?;

    let mut summary = Vec::new();
    if let Some(Payload::Int(iters)) = outcome.params.analyze.get("kmeans_iterations") {
        summary.push(("kmeans_iterations".into(), iters.to_string()));
    }
    if let Some(Payload::Vector(objective)) = outcome.params.analyze.get("kmeans_objective") {
        let rendered: Vec<String> = objective.iter().map(|o| format!("{o:?}")).collect();
        summary.push(("kmeans_objective".into(), rendered.join(",")));
    }
    Ok(PipelineResult {
        task: TaskId::Clustering,
        value: outcome.value,
        per_image: outcome.per_image,
        summary,
        stats: outcome.stats,
    })
}
