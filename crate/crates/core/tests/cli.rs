use std::path::{Path, PathBuf};

use goi::cli::run;
use goi::eval::{evaluate, load_testset};
use goi::image::{load_mask, save_mask};
use goi::scene::{load_camera, load_scene};
use goi::synth::load_embeddings;
use goi::trainer::load_model;
use goi::{open_vocab_query, QueryOptions};

fn goi(args: &[&str]) -> i32 {
    let mut full = vec!["goi".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth -> init-codebook -> train on a short schedule; returns (bench dir, model dir).
fn pipeline(root: &Path) -> (PathBuf, PathBuf) {
    let bench = root.join("bench");
    let model = root.join("model");
    let codebook = root.join("cb.goic");
    assert_eq!(goi(&["--seed", "1", "synth", "--preset", "blocks5", "--out", s(&bench)]), 0);
    assert_eq!(
        goi(&[
            "--seed", "1", "init-codebook", "--manifest", s(&bench.join("dataset.json")), "--entries", "32",
            "--iters", "5", "--out", s(&codebook),
        ]),
        0
    );
    // A short schedule needs an earlier temperature switch.
    let config = root.join("short.json");
    let mut cfg = goi::trainer::load_train_config(bench.join("train_config.json")).unwrap();
    cfg.tau_switch_iter = 50;
    std::fs::write(&config, serde_json::to_vec(&cfg).unwrap()).unwrap();
    assert_eq!(
        goi(&[
            "train", "--scene", s(&bench.join("scene.gois")), "--manifest", s(&bench.join("dataset.json")),
            "--codebook", s(&codebook), "--config", s(&config), "--iterations", "100", "--out", s(&model),
        ]),
        0
    );
    (bench, model)
}

#[test]
fn full_pipeline_matches_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let (bench, model_dir) = pipeline(dir.path());
    let cam = bench.join("test/cam_00.json");
    let emb = bench.join("embeddings.json");
    let model = load_model(&model_dir).unwrap();
    assert_eq!(model.meta.config.iterations, 100);
    assert_eq!(model.meta.config.seed, 1);

    // The query subcommand is a thin wrapper: identical mask bytes.
    let cli_mask = dir.path().join("cli.pgm");
    assert_eq!(
        goi(&[
            "query", "--model", s(&model_dir), "--camera", s(&cam), "--text", "red block", "--embeddings", s(&emb),
            "--no-osh", "--threshold", "0.6", "--out-mask", s(&cli_mask),
        ]),
        0
    );
    let embedding = load_embeddings(&emb).unwrap().lookup("red block").unwrap();
    let lib = open_vocab_query(
        &model,
        &load_camera(&cam).unwrap(),
        &embedding,
        None,
        &QueryOptions::fixed_threshold(0.6),
    )
    .unwrap();
    let lib_mask = dir.path().join("lib.pgm");
    save_mask(&lib.mask, &lib_mask).unwrap();
    assert_eq!(std::fs::read(&cli_mask).unwrap(), std::fs::read(&lib_mask).unwrap());

    // Refined query, then manipulation of the selected Gaussians.
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(bench.join("testset.json")).unwrap()).unwrap();
    let pseudo_cam = bench.join(manifest["cases"][0]["pseudo_camera"].as_str().unwrap());
    let goi_file = dir.path().join("sel.json");
    let plane = dir.path().join("plane.json");
    assert_eq!(
        goi(&[
            "query", "--model", s(&model_dir), "--camera", s(&cam), "--text", "red block", "--embeddings", s(&emb),
            "--pseudo-mask", s(&bench.join("pseudo/mask_l0.pgm")), "--pseudo-camera",
            s(&pseudo_cam), "--out-mask", s(&dir.path().join("osh.pgm")), "--out-goi",
            s(&goi_file), "--out-hyperplane", s(&plane), "--out-overlay", s(&dir.path().join("overlay.ppm")),
        ]),
        0
    );
    assert!(load_mask(dir.path().join("osh.pgm")).unwrap().data.iter().any(|&b| b));
    let reused = dir.path().join("reused.pgm");
    assert_eq!(
        goi(&[
            "query", "--model", s(&model_dir), "--camera", s(&cam), "--text", "red block", "--embeddings", s(&emb),
            "--hyperplane", s(&plane), "--out-mask", s(&reused),
        ]),
        0
    );
    assert_eq!(std::fs::read(&reused).unwrap(), std::fs::read(dir.path().join("osh.pgm")).unwrap());

    let edited = dir.path().join("deleted.gois");
    assert_eq!(
        goi(&[
            "manipulate", "--scene", s(&model_dir.join("scene.gois")), "--goi", s(&goi_file), "--action", "delete",
            "--out", s(&edited),
        ]),
        0
    );
    assert!(load_scene(&edited).unwrap().len() < model.scene.len());

    assert_eq!(
        goi(&[
            "render", "--model", s(&model_dir), "--camera", s(&cam), "--out-rgb", s(&dir.path().join("rgb.ppm")),
            "--out-alpha", s(&dir.path().join("a.pgm")), "--out-feat", s(&dir.path().join("f.goif")),
        ]),
        0
    );

    // eval writes the same report as the library loop.
    let report = dir.path().join("report.json");
    assert_eq!(
        goi(&["eval", "--model", s(&model_dir), "--testset", s(&bench.join("testset.json")), "--no-osh", "--out", s(&report)]),
        0
    );
    let cases = load_testset(bench.join("testset.json"), None).unwrap();
    let m = evaluate(&model, &cases, &QueryOptions::fixed_threshold(0.6)).unwrap();
    let lib_report = dir.path().join("lib_report.json");
    goi::eval::save_report(&m, &lib_report).unwrap();
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&lib_report).unwrap());
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    // Missing --text.
    assert_eq!(goi(&["query", "--model", d, "--camera", d, "--embeddings", d, "--no-osh", "--out-mask", d]), 1);
    // No pseudo-mask and no --no-osh.
    assert_eq!(goi(&["query", "--model", d, "--camera", d, "--text", "x", "--embeddings", d, "--out-mask", d]), 1);
    assert_eq!(goi(&["render", "--model", d, "--camera", d]), 1);
    assert_eq!(goi(&["manipulate", "--scene", d, "--goi", d, "--action", "translate", "--out", d]), 1);
    assert_eq!(goi(&["synth", "--preset", "nope", "--out", d]), 1);
    assert_eq!(goi(&["--threads", "0", "synth", "--preset", "blocks5", "--out", d]), 1);
    assert_eq!(goi(&["frobnicate"]), 1);
}

#[test]
fn help_on_every_subcommand_exits_0() {
    assert_eq!(goi(&["--help"]), 0);
    for sub in ["import-ply", "init-codebook", "train", "render", "query", "manipulate", "eval", "synth"] {
        assert_eq!(goi(&[sub, "--help"]), 0, "{sub}");
    }
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ply");
    assert_eq!(goi(&["import-ply", "--in", s(&missing), "--out", s(&dir.path().join("o.gois"))]), 2);
    let bad = dir.path().join("bad.ply");
    std::fs::write(&bad, b"not a ply").unwrap();
    assert_eq!(goi(&["import-ply", "--in", s(&bad), "--out", s(&dir.path().join("o.gois"))]), 2);
}

#[test]
fn invalid_training_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(goi(&["train", "--scene", d, "--manifest", d, "--codebook", d, "--lr-feature=-1", "--out", d]), 2);
    // Default temperature switch lies past a 100-iteration run.
    assert_eq!(goi(&["train", "--scene", d, "--manifest", d, "--codebook", d, "--iterations", "100", "--out", d]), 2);
}
