//! Initialize a codebook by spherical k-means over noisy ground-truth maps
//! and check how well it covers the true class embeddings.
//!
//! cargo run --release --example codebook_kmeans [entries]

use goi::synth::{Benchmark, BenchmarkSpec};
use goi::kmeans::DEFAULT_KMEANS_ITERATIONS;
use goi::trainer::{gt_samples, init_codebook};

fn main() -> goi::Result<()> {
    let entries: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let bench = Benchmark::generate(&BenchmarkSpec::preset("blocks5")?, 0)?;
    let ds = bench.dataset();
    println!("{} non-zero pixels", gt_samples(&ds)?.nrows());
    let cb = init_codebook(&ds, entries, DEFAULT_KMEANS_ITERATIONS, 0)?;
    let (units, _) = cb.unit_rows()?;
    for (name, e) in bench.labeled.names.iter().zip(&bench.labeled.embeddings) {
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (best, cos) = units
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i, r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / norm))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        let members = units
            .rows()
            .into_iter()
            .filter(|r| r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / norm > 0.9)
            .count();
        println!("{name:>14}: nearest entry {best} (cos {cos:.4}), {members} entries within cos 0.9");
    }
    Ok(())
}
