//! The whole pipeline through files: write a synthetic benchmark, cluster
//! the codebook, train, then score fixed-threshold and refined queries.
//!
//! cargo run --release --example evaluate_benchmark [preset] [seed]

use goi::eval::{evaluate, load_testset};
use goi::synth::{Benchmark, BenchmarkSpec};
use goi::kmeans::DEFAULT_KMEANS_ITERATIONS;
use goi::trainer::{init_codebook, load_dataset, load_train_config, save_model};
use goi::{train_semantic_field, Decoder, QueryOptions};

fn main() -> goi::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "adversarial5".into());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("goi_bench_{preset}_{seed}"));

    let t = std::time::Instant::now();
    let files = Benchmark::generate(&BenchmarkSpec::preset(&preset)?, seed)?.write(&dir)?;
    let ds = load_dataset(&files.dataset)?;
    let scene = goi::scene::load_scene(&files.scene)?;
    let cfg = load_train_config(&files.train_config)?;
    let cb = init_codebook(&ds, 300, DEFAULT_KMEANS_ITERATIONS, cfg.seed)?;
    let dec = Decoder::random(cb.len(), scene.feature_dim(), cfg.seed);
    let model = train_semantic_field(&scene, &ds, &cb, &dec, &cfg)?;
    save_model(&model, dir.join("model"))?;
    println!("trained in {:.1?}", t.elapsed());

    let cases = load_testset(&files.testset, None)?;
    let fixed = evaluate(&model, &cases, &QueryOptions::fixed_threshold(0.6))?;
    let osh = evaluate(&model, &cases, &QueryOptions::default())?;
    println!("{:<28} {:>8} {:>8}", "case", "fixed", "osh");
    for (a, b) in fixed.cases.iter().zip(&osh.cases) {
        println!("{:<28} {:>8.3} {:>8.3}", a.name, a.iou, b.iou);
    }
    for (name, m) in [("fixed", &fixed), ("osh", &osh)] {
        println!("{name:>5}: mIoU {:.4}  mPA {:.4}  mP {:.4}", m.miou, m.mpa, m.mp);
    }
    println!("benchmark and model in {}", dir.display());
    Ok(())
}
