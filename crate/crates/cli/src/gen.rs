//! `gen`: synthetic dataset generation.

use anyhow::Context;
use clap::Args;
use pixelpipe::datagen::{
    gen_cluster_images, gen_flower_field, gen_mosaic_tiles, gen_warped_pairs, write_dataset,
};
use pixelpipe::pipelines::TaskId;

use crate::GlobalOpts;

#[derive(Args)]
pub struct GenArgs {
    /// Target task: imatch | cluster | fcount | obe | imreg | mosaic.
    #[arg(long)]
    pub task: String,
    /// Number of images (or pairs / tiles).
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    #[arg(long, default_value_t = 256)]
    pub height: u32,
    /// Blobs per image (fcount / obe datasets).
    #[arg(long, default_value_t = 5)]
    pub blobs: usize,
    /// Cluster count (cluster datasets).
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Minimum palette separation in feature space.
    #[arg(long, default_value_t = 100.0)]
    pub separation: f64,
    /// Translation range in pixels (imreg datasets).
    #[arg(long, default_value_t = 10.0)]
    pub translate: f64,
    /// Rotation range in radians (imreg datasets).
    #[arg(long, default_value_t = 0.0)]
    pub rotate: f64,
    /// Pixel noise sigma (imreg datasets).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Planted outlier fraction in correspondences (imreg datasets).
    #[arg(long, default_value_t = 0.2)]
    pub outliers: f64,
    /// Tile overlap fraction (mosaic datasets).
    #[arg(long, default_value_t = 0.6)]
    pub overlap: f64,
}

pub fn cmd_gen(args: &GenArgs, global: &GlobalOpts) -> anyhow::Result<()> {
    let task = TaskId::from_code(&args.task).ok_or_else(|| {
        pixelpipe::datagen::DatagenError::BadParam(format!("unknown task '{}'", args.task))
    })?;
    let seed = global.seed;
    let dir = &global.out;
    let (images, pairs, manifest) = match task {
        TaskId::FlowerCount | TaskId::ObjectExtract => {
            let (images, manifest) =
                gen_flower_field(args.n, args.width, args.height, args.blobs, seed)?;
            (images, Vec::new(), manifest)
        }
        TaskId::Clustering | TaskId::ImageMatch => {
            let (images, manifest) = gen_cluster_images(
                args.n,
                args.k,
                args.width,
                args.height,
                args.separation,
                seed,
            )?;
            (images, Vec::new(), manifest)
        }
        TaskId::Registration => {
            let (pairs, manifest) = gen_warped_pairs(
                args.n,
                args.width,
                args.height,
                args.translate,
                args.rotate,
                args.noise,
                args.outliers,
                seed,
            )?;
            (Vec::new(), pairs, manifest)
        }
        TaskId::Mosaic => {
            let (images, manifest) =
                gen_mosaic_tiles(args.n.max(2), args.width, args.height, args.overlap, seed)?;
            (images, Vec::new(), manifest)
        }
    };
    write_dataset(dir, &manifest, &images, &pairs)
        .with_context(|| format!("writing dataset to {}", dir.display()))?;
    println!(
        "wrote {} entries to {} (manifest {})",
        manifest.count,
        dir.display(),
        dir.join("manifest.jsonl").display()
    );
    Ok(())
}
