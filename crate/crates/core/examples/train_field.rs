//! Distill a semantic field into a synthetic scene and report how cleanly
//! each cluster's Gaussians decode to a single codebook entry.
//!
//! cargo run --release --example train_field [preset] [seed] [iterations]

use std::collections::HashMap;

use goi::query::decode_gaussian_features;
use goi::synth::{Benchmark, BenchmarkSpec};
use goi::kmeans::DEFAULT_KMEANS_ITERATIONS;
use goi::trainer::{fit_field, save_model};
use goi::TrainConfig;

fn main() -> goi::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "blocks5".into());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);

    let bench = Benchmark::generate(&BenchmarkSpec::preset(&preset)?, seed)?;
    let ds = bench.dataset();
    let scene = &bench.labeled.scene;
    let cfg = TrainConfig {
        iterations,
        tau_switch_iter: iterations.min(1000),
        seed,
        ..TrainConfig::default()
    };
    let model = fit_field(scene, &ds, 300, DEFAULT_KMEANS_ITERATIONS, &cfg)?;
    for row in model.meta.loss_trace.iter().step_by(25) {
        println!(
            "iter {:>5}  total {:.4}  ent {:.4}  max {:.4}  joint {:.4}  e2e {:.4}",
            row.0, row.1, row.2, row.3, row.4, row.5
        );
    }

    let decoded = decode_gaussian_features(&model.scene, &model.codebook, &model.decoder)?;
    let labels = &bench.labeled.labels;
    let mut hits = 0;
    for k in 0..bench.labeled.n_clusters() {
        let mut votes: HashMap<usize, usize> = HashMap::new();
        for (i, (entry, _)) in decoded.iter().enumerate() {
            if labels[i] == k {
                *votes.entry(*entry).or_default() += 1;
            }
        }
        let (entry, n) = votes.into_iter().max_by_key(|&(e, n)| (n, std::cmp::Reverse(e))).unwrap_or((0, 0));
        let total = labels.iter().filter(|&&l| l == k).count();
        println!("{:>14}: {n}/{total} Gaussians decode to entry {entry}", bench.labeled.names[k]);
        hits += n;
    }
    println!("dominant-entry fraction {:.3}", hits as f64 / labels.len() as f64);

    let out = std::env::temp_dir().join(format!("goi_model_{preset}_{seed}"));
    save_model(&model, &out)?;
    println!("model in {}", out.display());
    Ok(())
}
