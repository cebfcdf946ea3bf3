//! `iobench`: storage backend pair benchmark with fidelity verification.
//!
//! The table has one row per backend pair and one column per dataset
//! size. Times are reported for orientation only; the verified property
//! is the bit-exact round trip of every payload on every pair.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pixelpipe::datagen::load_dataset;
use pixelpipe::imgops::write_ppm_bytes;
use pixelpipe::rng::SplitMix64;
use pixelpipe::storage::{io_bench, store_write, Encoding, IoRow, RecordEnvelope, StoreKind};

use crate::GlobalOpts;

#[derive(Args)]
pub struct IobenchArgs {
    /// Comma-separated synthetic payload counts (ignored with --data).
    #[arg(long, default_value = "100")]
    pub n: String,
    /// Synthetic payload size in bytes.
    #[arg(long = "payload-bytes", default_value_t = 4096)]
    pub payload_bytes: usize,
    /// Use the images of an existing dataset directory as payloads.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

fn synthetic_envelopes(n: usize, bytes: usize, seed: u64) -> Vec<RecordEnvelope> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let payload: Vec<u8> = (0..bytes).map(|_| rng.below(256) as u8).collect();
            RecordEnvelope::new(&format!("payload-{i:05}"), payload, Encoding::Text)
        })
        .collect()
}

/// Run the three backend pairs for one dataset, rooted at `root`.
fn bench_pairs(root: &std::path::Path, envelopes: &[RecordEnvelope]) -> anyhow::Result<Vec<IoRow>> {
    let keys: Vec<String> = envelopes.iter().map(|e| e.key.clone()).collect();
    let kv_src = StoreKind::Kv(root.join("src.kvlog"));
    let kv_dst = StoreKind::Kv(root.join("dst.kvlog"));
    let sharded_src = StoreKind::Sharded {
        dir: root.join("sharded-src"),
        shard_count: 4,
        replication: 1,
    };
    let sharded_dst = StoreKind::Sharded {
        dir: root.join("sharded-dst"),
        shard_count: 4,
        replication: 1,
    };
    let flat_dst = StoreKind::Flat(root.join("flat-dst"));

    store_write(&kv_src, envelopes)?;
    store_write(&sharded_src, envelopes)?;
    Ok(vec![
        io_bench(&kv_src, &kv_dst, &keys)?,
        io_bench(&sharded_src, &sharded_dst, &keys)?,
        io_bench(&sharded_src, &flat_dst, &keys)?,
    ])
}

pub fn cmd_iobench(args: &IobenchArgs, global: &GlobalOpts) -> anyhow::Result<()> {
    let root = global.out.join("iobench");
    if root.exists() {
        fs::remove_dir_all(&root)?;
    }
    fs::create_dir_all(&root)?;

    // One column of results per dataset size.
    let mut columns: Vec<(String, Vec<IoRow>)> = Vec::new();
    match &args.data {
        Some(dir) => {
            let dataset =
                load_dataset(dir).with_context(|| format!("loading {}", dir.display()))?;
            let envelopes: Vec<RecordEnvelope> = dataset
                .images
                .iter()
                .map(|(id, img)| RecordEnvelope::new(id, write_ppm_bytes(img), Encoding::RawImage))
                .collect();
            if !envelopes.is_empty() {
                let rows = bench_pairs(&root.join("data"), &envelopes)?;
                columns.push((format!("{}(data)", envelopes.len()), rows));
            }
        }
        None => {
            for part in args.n.split(',').filter(|s| !s.is_empty()) {
                let n: usize = part.trim().parse().context("bad --n entry")?;
                if n == 0 {
                    continue;
                }
                let envelopes = synthetic_envelopes(n, args.payload_bytes, global.seed);
                let rows = bench_pairs(&root.join(format!("n{n}")), &envelopes)?;
                columns.push((n.to_string(), rows));
            }
        }
    }

    // Pivot: rows are backend pairs, columns are dataset sizes. An empty
    // dataset yields the header only.
    print!("{:<16}", "io model");
    for (label, _) in &columns {
        print!(" {label:>16}");
    }
    println!();
    if columns.is_empty() {
        return Ok(());
    }
    let mut all_exact = true;
    for pair_idx in 0..3usize {
        let pair_label = match pair_idx {
            0 => "kv-kv",
            1 => "sharded-sharded",
            _ => "sharded-flat",
        };
        print!("{pair_label:<16}");
        for (_, rows) in &columns {
            let row = &rows[pair_idx];
            all_exact &= row.fidelity;
            let cell = format!(
                "{}ms/{}ms {}",
                row.read_ms,
                row.write_ms,
                if row.fidelity { "exact" } else { "MISMATCH" }
            );
            print!(" {cell:>16}");
        }
        println!();
    }
    if !all_exact {
        anyhow::bail!("round-trip fidelity violated");
    }
    Ok(())
}
