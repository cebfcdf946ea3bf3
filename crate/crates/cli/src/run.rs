//! `run`: execute one pipeline described by a spec file against a dataset
//! directory, route its results to storage, and print the run stats.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pixelpipe::dataflow::{
    parse_pipeline_spec, render_manifest, route_result, DataflowError, LayoutChoice, ParamSet,
    Payload, PipelineSpec, StageKind, StorageRouting,
};
use pixelpipe::datagen::load_dataset;
use pixelpipe::engine::ExecConfig;
use pixelpipe::pipelines::{
    task_cluster, task_fcount, task_imatch, task_imreg, task_mosaic, task_obe, Layout,
    PipelineResult, TaskId, TaskTuning,
};
use pixelpipe::storage::StoreKind;

use crate::GlobalOpts;

#[derive(Args)]
pub struct RunArgs {
    /// Pipeline spec file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Dataset directory (from `gen`).
    #[arg(long)]
    pub data: PathBuf,
}

/// Pull tuning overrides out of the spec's per-stage parameter maps.
fn tuning_from(params: &ParamSet) -> TaskTuning {
    let mut tuning = TaskTuning::default();
    let lookup = |key: &str| -> Option<f64> {
        [
            StageKind::Preprocess,
            StageKind::Estimate,
            StageKind::Model,
            StageKind::Analyze,
        ]
        .iter()
        .find_map(|kind| params.real(*kind, key))
    };
    if let Some(v) = lookup("sigma") {
        tuning.sigma = v;
    }
    if let Some(v) = lookup("corr_floor") {
        tuning.corr_floor = v;
    }
    if let Some(v) = lookup("max_kp") {
        tuning.max_kp = v as usize;
    }
    if let Some(v) = lookup("ratio_thresh") {
        tuning.ratio_thresh = v;
    }
    if let Some(v) = lookup("ransac_iters") {
        tuning.ransac_iters = v as usize;
    }
    if let Some(v) = lookup("inlier_px") {
        tuning.inlier_px = v;
    }
    if let Some(v) = lookup("min_ratio") {
        tuning.min_ratio = v;
    }
    if let Some(v) = lookup("kmeans_max_iters") {
        tuning.kmeans_max_iters = v as usize;
    }
    if let Some(v) = lookup("kmeans_tol") {
        tuning.kmeans_tol = v;
    }
    tuning
}

fn layout_from(spec: &PipelineSpec) -> Result<Layout, DataflowError> {
    Ok(match spec.layout {
        LayoutChoice::Minimal => Layout::Minimal,
        LayoutChoice::Modular => Layout::Modular,
        LayoutChoice::Split => {
            let size = spec.split_size.unwrap_or(10);
            if size == 0 {
                return Err(DataflowError::SpecError(
                    "invalid value '0' for key 'split_size'".into(),
                ));
            }
            Layout::Split(size)
        }
    })
}

pub fn execute_spec(
    spec: &PipelineSpec,
    data: &std::path::Path,
    base_config: &ExecConfig,
) -> anyhow::Result<PipelineResult> {
    let task = TaskId::from_code(&spec.task)
        .ok_or_else(|| DataflowError::SpecError(format!("invalid value '{}' for key 'task'", spec.task)))?;
    let layout = layout_from(spec)?;
    let tuning = tuning_from(&spec.params);
    let mut config = spec.config.clone();
    // Command-line globals win over spec-file defaults when set.
    if base_config.driver_mem_cap > 0 {
        config.driver_mem_cap = base_config.driver_mem_cap;
    }
    let dataset = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;

    let result = match task {
        TaskId::ImageMatch => {
            let template_id = spec
                .params
                .for_stage(StageKind::Estimate)
                .get("template_id")
                .and_then(Payload::as_text)
                .map(str::to_string);
            let template = match template_id {
                Some(id) => dataset
                    .images
                    .iter()
                    .find(|(im_id, _)| *im_id == id)
                    .map(|(_, img)| img.clone())
                    .ok_or_else(|| DataflowError::BadParam(format!("template_id '{id}' not in dataset")))?,
                None => {
                    dataset
                        .images
                        .first()
                        .ok_or_else(|| DataflowError::BadParam("empty dataset".into()))?
                        .1
                        .clone()
                }
            };
            task_imatch(&dataset.images, &template, layout, &config, &tuning)?
        }
        TaskId::Clustering => {
            let k = spec
                .params
                .real(StageKind::Model, "k")
                .map(|v| v as usize)
                .unwrap_or(3);
            task_cluster(&dataset.images, k, layout, &config, &tuning)?
        }
        TaskId::FlowerCount => task_fcount(&dataset.images, layout, &config, &tuning)?,
        TaskId::ObjectExtract => task_obe(&dataset.images, layout, &config, &tuning)?,
        TaskId::Registration => task_imreg(&dataset.pairs, layout, &config, &tuning)?,
        TaskId::Mosaic => {
            let split = spec.split_size.unwrap_or(dataset.images.len().max(1));
            task_mosaic(&dataset.images, split, &config, &tuning)?
        }
    };
    Ok(result)
}

pub fn cmd_run(args: &RunArgs, global: &GlobalOpts) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))?;
    let spec = parse_pipeline_spec(&text)?;
    let result = execute_spec(&spec, &args.data, &global.exec_config())?;

    fs::create_dir_all(&global.out)?;
    let storage_dir = global.out.join(&spec.storage.dir);
    let routing = StorageRouting {
        sharded: StoreKind::Sharded {
            dir: storage_dir.join("sharded"),
            shard_count: spec.storage.shards,
            replication: 1,
        },
        flat: match spec.storage.backend.as_str() {
            "kv" => StoreKind::Kv(storage_dir.join("results.kvlog")),
            _ => StoreKind::Flat(storage_dir.join("flat")),
        },
    };
    let receipt = route_result(&result.value, &routing)?;
    let manifest_path = global.out.join(format!("{}_results.tsv", spec.task));
    fs::write(&manifest_path, render_manifest(&result.per_image))?;

    for (key, value) in &result.summary {
        println!("{key}={value}");
    }
    let stats = &result.stats;
    println!(
        "task={} layout={:?} images={} stored={} driver_highwater={} shuffle={} flowed={} broadcast={} stages={} wall_ms={}",
        spec.task,
        spec.layout,
        result.per_image.len(),
        receipt.entries.len(),
        stats.driver_highwater,
        stats.shuffle_bytes,
        stats.flowed_bytes,
        stats.broadcast_bytes,
        stats.stage_count,
        stats.wall_ms,
    );
    println!("results manifest: {}", manifest_path.display());
    Ok(())
}
