//! Render a synthetic scene from an orbit of cameras and write PPM frames.
//!
//! cargo run --release --example render_scene [out_dir]

use std::path::PathBuf;

use goi::image::{gray_to_pgm, rgb_to_ppm};
use goi::render;
use goi::synth::{generate_scene, orbit_camera, Layout};

fn main() -> goi::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("goi_render_example"));
    std::fs::create_dir_all(&out).expect("create output directory");

    let ls = generate_scene(Layout::Rings, 5, 200, 7)?;
    let distance = 2.6 * ls.extent();
    for k in 0..4 {
        let azimuth = k as f64 * std::f64::consts::FRAC_PI_2;
        let cam = orbit_camera(distance, azimuth, 60f64.to_radians(), 128, 96, 55f64.to_radians())?;
        let frame = render(&ls.scene, &cam)?;
        let coverage = frame.alpha.iter().filter(|&&a| a > 0.5).count();
        std::fs::write(out.join(format!("rgb_{k}.ppm")), rgb_to_ppm(frame.width, frame.height, &frame.rgb))
            .expect("write frame");
        std::fs::write(
            out.join(format!("alpha_{k}.pgm")),
            gray_to_pgm(frame.width, frame.height, &frame.alpha),
        )
        .expect("write alpha");
        println!("view {k}: {coverage} opaque pixels");
    }
    println!("frames in {}", out.display());
    Ok(())
}
