use std::fs;
use std::path::Path;

use turbev_core::bench::dataset::{load_entry, split_ids, synthetic_clean_images};
use turbev_core::bench::eval::{floor_check, Aggregate, Aggregates, EvalSplit};
use turbev_core::bench::{gen_dataset, run_eval, DatasetManifest, Psnr};
use turbev_core::io::{decode_evtb, encode_evtb, encode_pfm, read_image};
use turbev_core::{Config, Image, TurbulenceParams};

fn small_config(count: usize) -> Config {
    let mut cfg = Config::default();
    cfg.dataset.synthetic_count = count;
    cfg.dataset.scene_size = 96;
    cfg.dataset.image_size = 48;
    cfg
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ten_images_split_nine_to_one() {
    let cfg = small_config(10);
    let clean = synthetic_clean_images(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, dir.path(), &cfg, 4).unwrap();
    assert_eq!(m.entries.len(), 10);
    assert_eq!(m.split.train.len(), 9);
    assert_eq!(m.split.test.len(), 1);
    let (loaded, root) = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(root, dir.path());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let cfg = small_config(3);
    let clean = synthetic_clean_images(&cfg, 9).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_dataset(&clean, a.path(), &cfg, 9).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| gen_dataset(&clean, b.path(), &cfg, 9).unwrap());
    assert_eq!(file_bytes(a.path()), file_bytes(b.path()));

    let c = tempfile::tempdir().unwrap();
    gen_dataset(&clean, c.path(), &cfg, 10).unwrap();
    assert_ne!(file_bytes(a.path()), file_bytes(c.path()));
}

#[test]
fn artifacts_round_trip_through_codecs() {
    let cfg = small_config(2);
    let clean = synthetic_clean_images(&cfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, dir.path(), &cfg, 2).unwrap();
    for entry in &m.entries {
        let data = load_entry(dir.path(), entry).unwrap();
        assert!(!data.events.is_empty());
        assert_eq!(data.turbulent.dims(), (48, 48));
        let evtb = fs::read(dir.path().join(&entry.events_path)).unwrap();
        assert_eq!(encode_evtb(&decode_evtb(&evtb).unwrap()).unwrap(), evtb);
        let pfm = fs::read(dir.path().join(&entry.turbulent_path)).unwrap();
        assert_eq!(encode_pfm(&data.turbulent), pfm);
        assert_eq!(entry.params_hash.len(), 64);
    }
    assert_ne!(m.entries[0].params_hash, m.entries[1].params_hash);
}

#[test]
fn manifest_validation_rejects_broken_datasets() {
    let cfg = small_config(2);
    let clean = synthetic_clean_images(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, dir.path(), &cfg, 1).unwrap();

    let mut overlap = m.clone();
    overlap.split.test.push(overlap.split.train[0].clone());
    assert!(overlap.validate(dir.path()).is_err());

    let mut dup = m.clone();
    dup.entries.push(dup.entries[0].clone());
    assert!(dup.validate(dir.path()).is_err());

    let mut missing = m.clone();
    missing.split.train.pop();
    assert!(missing.validate(dir.path()).is_err());

    fs::remove_file(dir.path().join(&m.entries[0].events_path)).unwrap();
    let err = DatasetManifest::load(dir.path().join("manifest.json")).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn empty_clean_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen_dataset(&[], dir.path(), &Config::default(), 0).is_err());
    assert!(turbev_core::bench::dataset::collect_clean_images(dir.path()).is_err());
}

#[test]
fn clean_images_are_read_from_a_directory() {
    let src = tempfile::tempdir().unwrap();
    for (i, name) in ["b.pfm", "a.pgm"].iter().enumerate() {
        let img = Image::from_fn(40, 40, |x, y| ((x + y + i) % 7) as f64 / 7.0).unwrap();
        turbev_core::io::write_image(&img, src.path().join(name)).unwrap();
    }
    fs::write(src.path().join("notes.txt"), "ignored").unwrap();
    let clean = turbev_core::bench::dataset::collect_clean_images(src.path()).unwrap();
    let ids: Vec<&str> = clean.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
    let mut cfg = Config::default();
    cfg.dataset.image_size = 32;
    let out = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, out.path(), &cfg, 0).unwrap();
    let cropped = read_image(out.path().join(&m.entries[0].clean_path)).unwrap();
    assert_eq!(cropped.dims(), (32, 32));
}

#[test]
fn split_is_seeded_and_exhaustive() {
    let ids: Vec<String> = (0..37).map(|i| format!("id{i}")).collect();
    let a = split_ids(&ids, 0.9, 5);
    assert_eq!(a, split_ids(&ids, 0.9, 5));
    assert_eq!(a.test.len(), 4);
    assert_eq!(a.train.len() + a.test.len(), ids.len());
    assert_ne!(a.test, split_ids(&ids, 0.9, 6).test);
}

#[test]
fn eval_report_is_reproducible_and_consistent() {
    let mut cfg = small_config(4);
    cfg.eval.split = EvalSplit::All;
    let clean = synthetic_clean_images(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, dir.path(), &cfg, 3).unwrap();
    let (a, _) = run_eval(&m, dir.path(), &cfg).unwrap();
    let (b, _) = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_eval(&m, dir.path(), &cfg).unwrap());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.entries.len(), 4);
    assert_eq!(a.aggregates, Aggregates::from_rows(&a.entries));
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 5);
    let round: turbev_core::bench::EvalReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(round, a);
}

#[test]
fn degenerate_dataset_leaves_psnr_unchanged() {
    let mut cfg = small_config(3);
    cfg.turbulence = TurbulenceParams::degenerate();
    cfg.eval.split = EvalSplit::All;
    let clean = synthetic_clean_images(&cfg, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, dir.path(), &cfg, 8).unwrap();
    let (report, _) = run_eval(&m, dir.path(), &cfg).unwrap();
    for row in &report.entries {
        assert_eq!(row.psnr_restored, row.psnr_turb);
        assert_eq!(row.psnr_restored, Psnr::Identical);
    }
    assert!(report.floor.passed);
    assert!(report.to_json().contains("\"identical\""));
}

#[test]
fn floor_check_follows_the_means() {
    let rows = |turb: f64, restored: Psnr| Aggregates {
        psnr_turb: turbev_core::bench::eval::PsnrAggregate::of(&[Psnr::Db(turb)]),
        psnr_restored: turbev_core::bench::eval::PsnrAggregate::of(&[restored]),
        ssim_turb: Aggregate::of(&[0.5]),
        ssim_restored: Aggregate::of(&[0.5]),
        epe: None,
    };
    assert!(floor_check(&rows(25.0, Psnr::Db(27.5)), 2.0).passed);
    assert!(!floor_check(&rows(25.0, Psnr::Db(26.0)), 2.0).passed);
    let perfect = floor_check(&rows(25.0, Psnr::Identical), 2.0);
    assert!(perfect.passed);
    assert_eq!(perfect.psnr_gain_db, None);
}

#[test]
fn aggregates_are_population_statistics() {
    let a = Aggregate::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(a.mean, 2.5);
    assert!((a.std - 1.25f64.sqrt()).abs() < 1e-15);
}

#[test]
fn eval_of_empty_split_is_an_argument_error() {
    let cfg = small_config(2);
    let clean = synthetic_clean_images(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&clean, dir.path(), &cfg, 1).unwrap();
    assert!(m.split.test.is_empty());
    assert_eq!(run_eval(&m, dir.path(), &cfg).unwrap_err().exit_code(), 2);
}
