//! Scene edits on a selection of Gaussians: delete, extract, translate and
//! recolor one object, rendering each result.
//!
//! cargo run --release --example manipulate_scene [out_dir]

use std::path::PathBuf;

use goi::image::rgb_to_ppm;
use goi::query::manipulate;
use goi::synth::{generate_scene, orbit_camera, Layout};
use goi::{render, Action};

fn main() -> goi::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("goi_manipulate_example"));
    std::fs::create_dir_all(&out).expect("create output directory");

    let ls = generate_scene(Layout::Blocks, 4, 150, 3)?;
    let cam = orbit_camera(2.6 * ls.extent(), 0.4, 60f64.to_radians(), 96, 96, 55f64.to_radians())?;
    // A selection the query step would produce for one object.
    let goi: Vec<usize> = (0..ls.scene.len()).filter(|&i| ls.labels[i] == 1).collect();
    println!("editing {:?}: {} Gaussians", ls.names[1], goi.len());

    let edits = [
        ("original", None),
        ("delete", Some(Action::Delete)),
        ("extract", Some(Action::Extract)),
        ("translate", Some(Action::Translate([0.0, 0.0, 1.5]))),
        ("highlight", Some(Action::Highlight([1.0, 0.9, 0.0]))),
    ];
    for (name, action) in edits {
        let scene = match action {
            Some(a) => manipulate(&ls.scene, &goi, a)?,
            None => ls.scene.clone(),
        };
        let frame = render(&scene, &cam)?;
        let covered = frame.alpha.iter().filter(|&&a| a > 0.5).count();
        std::fs::write(out.join(format!("{name}.ppm")), rgb_to_ppm(frame.width, frame.height, &frame.rgb))
            .expect("write frame");
        println!("{name:>9}: {} Gaussians, {covered} opaque pixels", scene.len());
    }
    println!("frames in {}", out.display());
    Ok(())
}
