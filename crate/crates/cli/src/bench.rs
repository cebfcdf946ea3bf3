//! `bench`: run a (task × size × layout) matrix, verify output equality
//! across layouts inline, and emit a human table plus machine-readable
//! JSON-lines rows.
//!
//! Asserted columns (outcome, outputs_equal, byte counters, N_S) are
//! deterministic for a fixed seed; wall_ms is informational only.

use std::fs;

use anyhow::Context;
use clap::Args;
use pixelpipe::datagen::{gen_cluster_images, gen_flower_field, gen_mosaic_tiles, gen_warped_pairs};
use pixelpipe::pipelines::{
    oracle, outputs_equivalent, task_cluster, task_fcount, task_imatch, task_imreg, task_mosaic,
    task_obe, Layout, PipelineResult, TaskId, TaskTuning,
};
use serde::Serialize;

use crate::GlobalOpts;

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated task codes (default: all six).
    #[arg(long, default_value = "imatch,cluster,fcount,obe,imreg,mosaic")]
    pub tasks: String,
    /// Comma-separated dataset sizes.
    #[arg(long, default_value = "12")]
    pub sizes: String,
    /// Comma-separated layouts to try where defined.
    #[arg(long, default_value = "minimal,modular,split")]
    pub layouts: String,
    /// Chunk size for split layouts (0 = size/10, at least 1).
    #[arg(long = "split-size", default_value_t = 0)]
    pub split_size: usize,
    /// Square image side for generated datasets.
    #[arg(long = "image-size", default_value_t = 128)]
    pub image_size: u32,
}

#[derive(Serialize)]
struct BenchRow {
    task: String,
    n: usize,
    layout: String,
    outcome: String,
    n_s: usize,
    outputs_equal: Option<bool>,
    driver_highwater: u64,
    flowed_bytes: u64,
    shuffle_bytes: u64,
    broadcast_bytes: u64,
    stage_count: u64,
    wall_ms: u64,
}

fn layouts_for(task: TaskId, requested: &[String]) -> Vec<Layout> {
    let defined: Vec<&str> = match task {
        TaskId::FlowerCount => vec!["minimal", "modular", "split"],
        TaskId::Mosaic => vec!["minimal"],
        _ => vec!["minimal", "modular"],
    };
    requested
        .iter()
        .filter(|l| defined.contains(&l.as_str()))
        .map(|l| match l.as_str() {
            "minimal" => Layout::Minimal,
            "modular" => Layout::Modular,
            _ => Layout::Split(0), // size patched per cell
        })
        .collect()
}

struct Cell {
    task: TaskId,
    n: usize,
    layout: Layout,
    result: Result<PipelineResult, pixelpipe::dataflow::DataflowError>,
}

pub fn cmd_bench(args: &BenchArgs, global: &GlobalOpts) -> anyhow::Result<()> {
    let tasks: Vec<TaskId> = args
        .tasks
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|code| {
            TaskId::from_code(code.trim()).ok_or_else(|| {
                pixelpipe::dataflow::DataflowError::BadParam(format!("unknown task '{code}'"))
            })
        })
        .collect::<Result<_, _>>()?;
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse().context("bad --sizes entry"))
        .collect::<Result<_, _>>()?;
    let requested_layouts: Vec<String> = args
        .layouts
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let tuning = TaskTuning::default();
    let config = global.exec_config();
    let side = args.image_size;
    let mut rows: Vec<BenchRow> = Vec::new();

    for &task in &tasks {
        for &n in &sizes {
            let split = if args.split_size > 0 {
                args.split_size
            } else {
                (n / 10).max(1)
            };
            // Reference results come from the sequential oracle on the
            // same generated dataset.
            let mut cells: Vec<Cell> = Vec::new();
            let reference: Option<PipelineResult> = match task {
                TaskId::ImageMatch => {
                    let k = 4.min(n.max(1));
                    let (images, _) =
                        gen_cluster_images(n, k, side, side, 10.0, global.seed)?;
                    let template = images.first().map(|(_, img)| img.clone());
                    for layout in layouts_for(task, &requested_layouts) {
                        let result = match &template {
                            Some(t) => task_imatch(&images, t, layout, &config, &tuning),
                            None => task_imatch(&[], &blank_template(), layout, &config, &tuning),
                        };
                        cells.push(Cell { task, n, layout, result });
                    }
                    match &template {
                        Some(t) => Some(oracle::oracle_imatch(&images, t, &config, &tuning)?),
                        None => None,
                    }
                }
                TaskId::Clustering => {
                    let k = 3.min(n.max(1));
                    let (images, _) =
                        gen_cluster_images(n, k, side, side, 10.0, global.seed)?;
                    for layout in layouts_for(task, &requested_layouts) {
                        cells.push(Cell {
                            task,
                            n,
                            layout,
                            result: task_cluster(&images, k, layout, &config, &tuning),
                        });
                    }
                    Some(oracle::oracle_cluster(&images, k, &config, &tuning)?)
                }
                TaskId::FlowerCount => {
                    let blobs = blobs_that_fit(side, 5);
                    let (images, _) = gen_flower_field(n, side, side, blobs, global.seed)?;
                    for layout in layouts_for(task, &requested_layouts) {
                        let layout = match layout {
                            Layout::Split(_) => Layout::Split(split),
                            other => other,
                        };
                        cells.push(Cell {
                            task,
                            n,
                            layout,
                            result: task_fcount(&images, layout, &config, &tuning),
                        });
                    }
                    Some(oracle::oracle_fcount(&images, &config, &tuning)?)
                }
                TaskId::ObjectExtract => {
                    let blobs = blobs_that_fit(side, 4);
                    let (images, _) = gen_flower_field(n, side, side, blobs, global.seed + 1)?;
                    for layout in layouts_for(task, &requested_layouts) {
                        cells.push(Cell {
                            task,
                            n,
                            layout,
                            result: task_obe(&images, layout, &config, &tuning),
                        });
                    }
                    Some(oracle::oracle_obe(&images, &config, &tuning)?)
                }
                TaskId::Registration => {
                    let (pairs, _) =
                        gen_warped_pairs(n, side, side, 10.0, 0.0, 0.0, 0.0, global.seed)?;
                    for layout in layouts_for(task, &requested_layouts) {
                        cells.push(Cell {
                            task,
                            n,
                            layout,
                            result: task_imreg(&pairs, layout, &config, &tuning),
                        });
                    }
                    Some(oracle::oracle_imreg(&pairs, &config, &tuning)?)
                }
                TaskId::Mosaic => {
                    let (tiles, _) =
                        gen_mosaic_tiles(n.max(2), 96, 72, 0.6, global.seed)?;
                    for layout in layouts_for(task, &requested_layouts) {
                        cells.push(Cell {
                            task,
                            n,
                            layout,
                            result: task_mosaic(&tiles, split, &config, &tuning),
                        });
                    }
                    Some(oracle::oracle_mosaic(&tiles, &config, &tuning)?)
                }
            };

            for cell in cells {
                rows.push(to_row(cell, reference.as_ref()));
            }
        }
    }

    // Human-readable table.
    println!(
        "{:<8} {:>5} {:<10} {:<24} {:>4} {:<7} {:>12} {:>12} {:>10} {:>8} {:>8}",
        "task", "n", "layout", "outcome", "N_S", "equal", "highwater", "flowed", "shuffle", "stages", "wall_ms"
    );
    for row in &rows {
        println!(
            "{:<8} {:>5} {:<10} {:<24} {:>4} {:<7} {:>12} {:>12} {:>10} {:>8} {:>8}",
            row.task,
            row.n,
            row.layout,
            row.outcome,
            row.n_s,
            row.outputs_equal.map_or("-".to_string(), |b| b.to_string()),
            row.driver_highwater,
            row.flowed_bytes,
            row.shuffle_bytes,
            row.stage_count,
            row.wall_ms,
        );
    }

    fs::create_dir_all(&global.out)?;
    let jsonl_path = global.out.join("bench.jsonl");
    let mut jsonl = String::new();
    for row in &rows {
        jsonl.push_str(&serde_json::to_string(row)?);
        jsonl.push('\n');
    }
    fs::write(&jsonl_path, jsonl)?;
    println!("rows: {} -> {}", rows.len(), jsonl_path.display());
    Ok(())
}

fn blank_template() -> pixelpipe::imgops::Image {
    pixelpipe::imgops::Image::filled(16, 16, 3, 0)
}

/// Largest blob count (up to `want`) whose separation rule fits `side`.
fn blobs_that_fit(side: u32, want: usize) -> usize {
    let max = (side / (pixelpipe::datagen::BLOB_RADIUS * 4)) as usize;
    want.min(max.max(1))
}

fn to_row(cell: Cell, reference: Option<&PipelineResult>) -> BenchRow {
    match cell.result {
        Ok(result) => {
            let equal = reference.map(|r| {
                outputs_equivalent(&result, r, 1e-9, cell.task == TaskId::Clustering)
            });
            BenchRow {
                task: cell.task.code().to_string(),
                n: cell.n,
                layout: cell.layout.label(),
                outcome: "ok".into(),
                n_s: cell.task.min_steps(),
                outputs_equal: equal,
                driver_highwater: result.stats.driver_highwater,
                flowed_bytes: result.stats.flowed_bytes,
                shuffle_bytes: result.stats.shuffle_bytes,
                broadcast_bytes: result.stats.broadcast_bytes,
                stage_count: result.stats.stage_count,
                wall_ms: result.stats.wall_ms,
            }
        }
        Err(err) => {
            let outcome = match err.memory_exceeded() {
                Some((step, _, _)) => format!("MemoryExceeded({step})"),
                None => format!("error({err})"),
            };
            BenchRow {
                task: cell.task.code().to_string(),
                n: cell.n,
                layout: cell.layout.label(),
                outcome,
                n_s: cell.task.min_steps(),
                outputs_equal: None,
                driver_highwater: 0,
                flowed_bytes: 0,
                shuffle_bytes: 0,
                broadcast_bytes: 0,
                stage_count: 0,
                wall_ms: 0,
            }
        }
    }
}
