//! Import a small 3DGS point file and inspect the activated parameters.
//!
//! cargo run --example import_ply [path.ply]

use goi::ply::{import_ply, scene_from_ply_bytes};
use goi::scene::save_scene;

const HEADER: &str = "ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
property float nx
property float ny
property float nz
property float f_dc_0
property float f_dc_1
property float f_dc_2
property float opacity
property float scale_0
property float scale_1
property float scale_2
property float rot_0
property float rot_1
property float rot_2
property float rot_3
end_header
";

fn main() -> goi::Result<()> {
    let scene = match std::env::args().nth(1) {
        Some(path) => import_ply(path, 10)?,
        None => {
            let mut text = HEADER.to_string();
            text.push_str("0 0 0 0 0 0 1.77 -1.77 -1.77 2.0 -3 -3 -4 1 0 0 0\n");
            text.push_str("1 0 0 0 0 0 -1.77 1.77 -1.77 0.0 -2.5 -3 -4 0.92 0 0 0.38\n");
            text.push_str("0 1 0.5 0 0 0 0 0 1.77 -2.0 -2 -2 -2 2 0 0 0\n");
            scene_from_ply_bytes(text.as_bytes(), 10)?
        }
    };
    for (i, g) in scene.gaussians.iter().take(5).enumerate() {
        println!(
            "{i}: at {:?} opacity {:.3} scale {:?} rgb {:?}",
            g.centroid, g.opacity, g.scale, g.rgb
        );
    }
    let out = std::env::temp_dir().join("goi_import_example.gois");
    save_scene(&scene, &out)?;
    println!("{} Gaussians, feature dim {} -> {}", scene.len(), scene.feature_dim(), out.display());
    Ok(())
}
