//! Text queries against a trained field: the fixed cosine threshold and the
//! refined hyperplane side by side, with mask and overlay images written out.
//!
//! cargo run --release --example query_text [text]
//!
//! Reuses the model written by the train_field example for blocks5 seed 0
//! when it exists, otherwise trains a short one first.

use goi::image::{rgb_to_ppm, save_mask};
use goi::query::{overlay, OVERLAY_COLOR};
use goi::synth::{oracle_mask, Benchmark, BenchmarkSpec};
use goi::kmeans::DEFAULT_KMEANS_ITERATIONS;
use goi::trainer::{fit_field, load_model};
use goi::{open_vocab_query, render, MaskSource, QueryOptions, TrainConfig};

fn main() -> goi::Result<()> {
    let bench = Benchmark::generate(&BenchmarkSpec::preset("blocks5")?, 0)?;
    let text = std::env::args().nth(1).unwrap_or_else(|| bench.labeled.names[2].clone());
    let label = bench
        .labeled
        .label_of(&text)
        .ok_or_else(|| goi::Error::Invalid(format!("no object called {text:?}; try one of {:?}", bench.labeled.names)))?;

    let cached = std::env::temp_dir().join("goi_model_blocks5_0");
    let model = match load_model(&cached) {
        Ok(m) => m,
        Err(_) => {
            println!("no saved model, training 400 iterations");
            let ds = bench.dataset();
            let cfg = TrainConfig {
                iterations: 400,
                tau_switch_iter: 300,
                ..TrainConfig::default()
            };
            fit_field(&bench.labeled.scene, &ds, 300, DEFAULT_KMEANS_ITERATIONS, &cfg)?
        }
    };

    let cam = &bench.test_cameras[0];
    let pv = bench.pseudo_view(label)?;
    let pseudo = MaskSource {
        mask: oracle_mask(&bench.labeled, &bench.train_cameras[pv], label)?,
        camera: Some(bench.train_cameras[pv].clone()),
    };
    let embedding = &bench.labeled.embeddings[label];
    let truth = oracle_mask(&bench.labeled, cam, label)?;
    let out = std::env::temp_dir().join("goi_query_example");
    std::fs::create_dir_all(&out).expect("create output directory");
    let frame = render(&model.scene, cam)?;

    for (tag, opts) in [("fixed", QueryOptions::fixed_threshold(0.6)), ("osh", QueryOptions::default())] {
        let r = open_vocab_query(&model, cam, embedding, Some(&pseudo), &opts)?;
        let iou = goi::eval::iou(&r.mask, &truth)?;
        println!(
            "{tag:>5}: {} pixels, {} Gaussians, IoU {iou:.3}",
            r.stats.positive_pixels, r.stats.selected_gaussians
        );
        save_mask(&r.mask, out.join(format!("{tag}_mask.pgm")))?;
        let blended = overlay(&frame.rgb, &r.mask, OVERLAY_COLOR)?;
        std::fs::write(out.join(format!("{tag}_overlay.ppm")), rgb_to_ppm(frame.width, frame.height, &blended))
            .expect("write overlay");
    }
    println!("query {text:?}: images in {}", out.display());
    Ok(())
}
