//! Why a fixed cosine threshold is not enough: two classes whose embeddings
//! are close both pass the threshold, and a hyperplane fitted to one
//! pseudo-mask separates them.
//!
//! cargo run --example osh_refine

use goi::image::Mask;
use goi::osh::{classify_map, finetune_osh, init_hyperplane, OshConfig, SemanticMap};
use ndarray::Array2;

fn main() -> goi::Result<()> {
    // Unit features for a 6x8 view: target on the left, a look-alike
    // (cosine 0.8 with the target) in the middle, background on the right.
    let (h, w) = (6, 8);
    let target = [1.0, 0.0, 0.0];
    let decoy = [0.8, 0.6, 0.0];
    let other = [0.0, 0.0, 1.0];
    let mut feats = Array2::zeros((h * w, 3));
    let mut pseudo = Mask::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let f = match c {
                0..=1 => target,
                2..=4 => decoy,
                _ => other,
            };
            feats.row_mut(r * w + c).assign(&ndarray::arr1(&f));
            pseudo.data[r * w + c] = c <= 1;
        }
    }
    let map = SemanticMap::new(h, w, feats)?;
    let valid = Mask::from_vec(h, w, vec![true; h * w])?;

    let h0 = init_hyperplane(&target, 0.6)?;
    let fixed = classify_map(&h0, &map, &valid)?;
    let refined = finetune_osh(&h0, &map, &valid, &pseudo, &OshConfig::default())?;
    let osh = classify_map(&refined.hyperplane, &map, &valid)?;

    let show = |name: &str, m: &Mask| {
        println!("{name}:");
        for r in 0..h {
            let row: String = (0..w).map(|c| if m.data[r * w + c] { '#' } else { '.' }).collect();
            println!("  {row}");
        }
    };
    show("pseudo-mask", &pseudo);
    show("fixed threshold 0.6", &fixed);
    show("refined hyperplane", &osh);
    println!(
        "loss {:.4} -> {:.6} in {} steps; IoU fixed {:.3}, refined {:.3}",
        refined.history[0],
        refined.final_loss,
        refined.history.len() - 1,
        goi::eval::iou(&fixed, &pseudo)?,
        goi::eval::iou(&osh, &pseudo)?
    );
    Ok(())
}
