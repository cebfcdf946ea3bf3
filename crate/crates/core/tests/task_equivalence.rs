//! Every task, every layout, against its sequential oracle on small
//! synthetic datasets.

use pixelpipe::datagen::{
    gen_cluster_images, gen_flower_field, gen_mosaic_tiles, gen_warped_pairs, GroundTruth,
};
use pixelpipe::dataflow::PerImage;
use pixelpipe::engine::ExecConfig;
use pixelpipe::imgops::Homography;
use pixelpipe::pipelines::{
    oracle, outputs_equivalent, task_cluster, task_fcount, task_imatch, task_imreg, task_mosaic,
    task_obe, Layout, TaskTuning,
};

fn config(partitions: usize) -> ExecConfig {
    ExecConfig {
        num_workers: 2,
        num_partitions: partitions,
        seed: 11,
        ..ExecConfig::default()
    }
}

#[test]
fn imatch_layouts_match_oracle_and_template_wins() {
    let (images, _) = gen_cluster_images(8, 4, 64, 64, 10.0, 3).unwrap();
    let template = images[2].1.clone();
    let tuning = TaskTuning::default();
    let cfg = config(3);
    let reference = oracle::oracle_imatch(&images, &template, &cfg, &tuning).unwrap();
    for layout in [Layout::Minimal, Layout::Modular] {
        let run = task_imatch(&images, &template, layout, &cfg, &tuning).unwrap();
        assert!(
            outputs_equivalent(&run, &reference, 1e-9, false),
            "{layout:?} differs from oracle"
        );
        assert_eq!(run.summary_value("best_im_id"), Some("cluster-0002"));
        assert_eq!(run.summary_value("best_ratio"), Some("1.000000000000"));
    }
}

#[test]
fn imatch_empty_dataset_gives_empty_result() {
    let (images, _) = gen_cluster_images(2, 1, 64, 64, 0.0, 3).unwrap();
    let template = images[0].1.clone();
    let run = task_imatch(&[], &template, Layout::Minimal, &config(2), &TaskTuning::default())
        .unwrap();
    assert!(run.per_image.is_empty());
    assert!(run.summary_value("best_im_id").is_none());
}

#[test]
fn cluster_recovers_groups_and_matches_oracle() {
    let (images, manifest) = gen_cluster_images(12, 3, 48, 48, 100.0, 7).unwrap();
    let tuning = TaskTuning::default();
    let cfg = config(3);
    let reference = oracle::oracle_cluster(&images, 3, &cfg, &tuning).unwrap();
    for layout in [Layout::Minimal, Layout::Modular] {
        let run = task_cluster(&images, 3, layout, &cfg, &tuning).unwrap();
        assert!(
            outputs_equivalent(&run, &reference, 1e-9, true),
            "{layout:?} labels differ from oracle"
        );
        // Ground truth recovered up to permutation.
        let truth: Vec<i64> = manifest
            .entries
            .iter()
            .map(|e| match e.truth {
                GroundTruth::Group { label } => label as i64,
                _ => panic!(),
            })
            .collect();
        let got: Vec<i64> = run
            .per_image
            .iter()
            .map(|(_, v)| match v {
                PerImage::Int(l) => *l,
                _ => panic!(),
            })
            .collect();
        let mut mapping = std::collections::BTreeMap::new();
        for (t, g) in truth.iter().zip(&got) {
            assert_eq!(*mapping.entry(*t).or_insert(*g), *g, "labels not a permutation");
        }
    }
}

#[test]
fn cluster_k_one_gives_single_label() {
    let (images, _) = gen_cluster_images(6, 2, 32, 32, 10.0, 5).unwrap();
    let run = task_cluster(&images, 1, Layout::Minimal, &config(2), &TaskTuning::default())
        .unwrap();
    assert!(run
        .per_image
        .iter()
        .all(|(_, v)| matches!(v, PerImage::Int(0))));
}

#[test]
fn fcount_all_layouts_exact_counts() {
    let (images, manifest) = gen_flower_field(9, 96, 96, 3, 17).unwrap();
    let tuning = TaskTuning::default();
    let cfg = config(3);
    let reference = oracle::oracle_fcount(&images, &cfg, &tuning).unwrap();
    for layout in [Layout::Minimal, Layout::Modular, Layout::Split(4)] {
        let run = task_fcount(&images, layout, &cfg, &tuning).unwrap();
        assert!(
            outputs_equivalent(&run, &reference, 1e-9, false),
            "{layout:?} differs from oracle"
        );
        for ((_, v), entry) in run.per_image.iter().zip(&manifest.entries) {
            let GroundTruth::Blobs { count, .. } = &entry.truth else { panic!() };
            assert_eq!(v, &PerImage::Int(*count as i64), "wrong count for {entry:?}");
        }
    }
}

#[test]
fn fcount_fused_fails_under_cap_split_succeeds() {
    let (images, _) = gen_flower_field(20, 64, 64, 2, 23).unwrap();
    let hist_bytes = 256 * 8 + 16u64;
    let cap = 20 * hist_bytes / 2;
    let cfg = ExecConfig {
        num_workers: 2,
        num_partitions: 4,
        driver_mem_cap: cap,
        seed: 1,
        ..ExecConfig::default()
    };
    let tuning = TaskTuning::default();
    let fused = task_fcount(&images, Layout::Minimal, &cfg, &tuning).unwrap_err();
    let (step, needed, got_cap) = fused.memory_exceeded().expect("fused must hit the cap");
    assert_eq!(step, "mean_histogram");
    assert_eq!(got_cap, cap);
    assert!(needed > cap);

    let split = task_fcount(&images, Layout::Split(2), &cfg, &tuning).unwrap();
    assert_eq!(split.per_image.len(), 20);
    assert!(split.stats.driver_highwater <= cap);

    // Counts from the split run equal the uncapped fused run's counts.
    let uncapped = ExecConfig { driver_mem_cap: 0, ..cfg };
    let fused_ok = task_fcount(&images, Layout::Minimal, &uncapped, &tuning).unwrap();
    assert!(outputs_equivalent(&split, &fused_ok, 1e-9, false));
}

#[test]
fn obe_boxes_match_oracle_and_blank_images_are_empty() {
    let (mut images, _) = gen_flower_field(5, 128, 128, 4, 31).unwrap();
    let (blank, _) = gen_flower_field(1, 128, 128, 0, 32).unwrap();
    images.extend(blank);
    let tuning = TaskTuning::default();
    let cfg = config(2);
    let reference = oracle::oracle_obe(&images, &cfg, &tuning).unwrap();
    for layout in [Layout::Minimal, Layout::Modular] {
        let run = task_obe(&images, layout, &cfg, &tuning).unwrap();
        assert!(
            outputs_equivalent(&run, &reference, 1e-9, false),
            "{layout:?} differs from oracle"
        );
    }
    // The blank image reports no boxes.
    let blank_row = &reference.per_image.last().unwrap().1;
    assert_eq!(blank_row, &PerImage::Text(String::new()));
}

#[test]
fn imreg_identity_pair_recovers_identity() {
    let (pairs, _) = gen_warped_pairs(2, 72, 72, 0.0, 0.0, 0.0, 0.0, 41).unwrap();
    let run = task_imreg(&pairs, Layout::Minimal, &config(2), &TaskTuning::default()).unwrap();
    for (_, v) in &run.per_image {
        let PerImage::Reals(h) = v else { panic!("pair skipped: {v:?}") };
        for (got, want) in h.iter().zip(&Homography::identity().m) {
            assert!((got - want).abs() < 1e-9, "H {h:?}");
        }
    }
}

#[test]
fn imreg_translation_recovered_and_layouts_agree() {
    let (pairs, manifest) = gen_warped_pairs(4, 96, 96, 10.0, 0.0, 0.0, 0.0, 43).unwrap();
    let tuning = TaskTuning::default();
    let cfg = config(2);
    let reference = oracle::oracle_imreg(&pairs, &cfg, &tuning).unwrap();
    let minimal = task_imreg(&pairs, Layout::Minimal, &cfg, &tuning).unwrap();
    let modular = task_imreg(&pairs, Layout::Modular, &cfg, &tuning).unwrap();
    assert!(outputs_equivalent(&minimal, &reference, 1e-9, false));
    assert!(outputs_equivalent(&modular, &reference, 1e-9, false));
    // Modular retain-all flows strictly more bytes across its 4 boundaries.
    assert!(
        modular.stats.flowed_bytes > minimal.stats.flowed_bytes,
        "modular {} vs minimal {}",
        modular.stats.flowed_bytes,
        minimal.stats.flowed_bytes
    );
    // Recovered homographies sit within 1e-2 px of the truth at noise 0.
    for ((_, v), entry) in minimal.per_image.iter().zip(&manifest.entries) {
        let GroundTruth::Pair { homography, .. } = &entry.truth else { panic!() };
        if let PerImage::Reals(h) = v {
            let est = Homography { m: h.as_slice().try_into().unwrap() };
            let truth = Homography { m: *homography };
            for (x, y) in [(10.0, 10.0), (50.0, 30.0), (80.0, 70.0)] {
                let (ex, ey) = est.apply(x, y).unwrap();
                let (tx, ty) = truth.apply(x, y).unwrap();
                let err = ((ex - tx).powi(2) + (ey - ty).powi(2)).sqrt();
                assert!(err < 1e-2, "reprojection error {err}");
            }
        }
    }
}

#[test]
fn mosaic_selection_matches_oracle_for_all_chunk_sizes() {
    let (tiles, _) = gen_mosaic_tiles(6, 96, 72, 0.6, 51).unwrap();
    let tuning = TaskTuning::default();
    let cfg = config(2);
    let reference = oracle::oracle_mosaic(&tiles, &cfg, &tuning).unwrap();
    assert_eq!(reference.summary_value("flag"), Some("ok"));
    for split in [1usize, 3, 6, 100] {
        let run = task_mosaic(&tiles, split, &cfg, &tuning).unwrap();
        assert_eq!(
            run.summary_value("selection_order"),
            reference.summary_value("selection_order"),
            "split {split}"
        );
        assert!(outputs_equivalent(&run, &reference, 1e-9, false), "split {split}");
    }
}

#[test]
fn mosaic_two_identical_images_single_merge() {
    let (tiles, _) = gen_mosaic_tiles(2, 48, 48, 0.5, 61).unwrap();
    let duplicated = vec![
        ("a".to_string(), tiles[0].1.clone()),
        ("b".to_string(), tiles[0].1.clone()),
    ];
    let run = task_mosaic(&duplicated, 1, &config(1), &TaskTuning::default()).unwrap();
    assert_eq!(run.summary_value("selection_order"), Some("a,b"));
    // Identity merge of identical images keeps the canvas size.
    let pixelpipe::dataflow::ResultValue::ImageCollection(images) = &run.value else {
        panic!()
    };
    assert_eq!(images[0].1.width, 48);
    assert_eq!(images[0].1.height, 48);
}

#[test]
fn mosaic_rejects_trivial_inputs() {
    let (tiles, _) = gen_mosaic_tiles(2, 48, 48, 0.5, 1).unwrap();
    assert!(task_mosaic(&tiles[..1], 1, &config(1), &TaskTuning::default()).is_err());
    assert!(task_mosaic(&tiles, 0, &config(1), &TaskTuning::default()).is_err());
}

#[test]
fn mosaic_flags_unrelated_images_as_no_viable_match() {
    // Two unrelated textured scenes share no content; with a high ratio
    // floor the greedy loop stops after the seed tile and flags it.
    let (a, _) = gen_mosaic_tiles(2, 64, 64, 0.5, 301).unwrap();
    let (b, _) = gen_mosaic_tiles(2, 64, 64, 0.5, 909).unwrap();
    let images = vec![
        ("left".to_string(), a[0].1.clone()),
        ("right".to_string(), b[0].1.clone()),
    ];
    let tuning = TaskTuning {
        min_ratio: 0.9,
        ..TaskTuning::default()
    };
    let cfg = config(1);
    let run = task_mosaic(&images, 1, &cfg, &tuning).unwrap();
    assert_eq!(run.summary_value("flag"), Some("no_viable_match"));
    assert_eq!(run.summary_value("selection_order"), Some("left"));
    let reference = oracle::oracle_mosaic(&images, &cfg, &tuning).unwrap();
    assert_eq!(reference.summary_value("flag"), Some("no_viable_match"));
    assert_eq!(
        run.summary_value("selection_order"),
        reference.summary_value("selection_order")
    );
}

#[test]
fn fcount_gates_decorrelated_plots_to_zero() {
    // A gradient image's histogram decorrelates from the field mean; the
    // correlation floor masks it out even though thresholding would find
    // foreground.
    let (mut images, _) = gen_flower_field(6, 96, 96, 2, 401).unwrap();
    let mut outlier = pixelpipe::imgops::Image::filled(96, 96, 3, 0);
    for y in 0..96u32 {
        for x in 0..96u32 {
            let v = ((x * 255) / 95) as u8;
            outlier.set(x, y, 0, v);
            outlier.set(x, y, 1, v);
            outlier.set(x, y, 2, v);
        }
    }
    images.push(("odd-plot".to_string(), outlier));
    let run = task_fcount(&images, Layout::Minimal, &config(2), &TaskTuning::default()).unwrap();
    let odd = run
        .per_image
        .iter()
        .find(|(id, _)| id == "odd-plot")
        .map(|(_, v)| v.clone())
        .unwrap();
    assert_eq!(odd, PerImage::Int(0));
    // Regular plots still count their blobs.
    assert!(run
        .per_image
        .iter()
        .filter(|(id, _)| id != "odd-plot")
        .all(|(_, v)| v == &PerImage::Int(2)));
}

#[test]
fn oracle_runs_are_deterministic() {
    let (images, _) = gen_flower_field(4, 64, 64, 2, 71).unwrap();
    let cfg = config(2);
    let tuning = TaskTuning::default();
    let a = oracle::oracle_fcount(&images, &cfg, &tuning).unwrap();
    let b = oracle::oracle_fcount(&images, &cfg, &tuning).unwrap();
    assert!(outputs_equivalent(&a, &b, 0.0, false));
}
