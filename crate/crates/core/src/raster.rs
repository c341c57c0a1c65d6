//! Tile-based software rasterizer for frozen Gaussians.
//!
//! Geometry is projected once per camera into a [`Rasterization`], which
//! records for every pixel the composited weight `α_i T_i` of each
//! contributing Gaussian. Because geometry is frozen, rendered features are a
//! linear function of the per-Gaussian features: the forward pass is a sparse
//! product with those weights and the backward pass is its exact transpose.
//!
//! Numerics follow the vanilla 3DGS conventions: 0.3 px² dilation, α clamped
//! at 0.99, contributions below 1/255 dropped, compositing stops once the
//! transmittance falls below 1e-4. Splats are sorted globally by depth (ties
//! by source index) and binned into 16×16 tiles. All accumulation is 64-bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::scene::{Camera, Gaussian, Scene};

pub const TILE_SIZE: usize = 16;
pub const NEAR_PLANE: f64 = 0.01;
pub const DILATION: f64 = 0.3;
pub const ALPHA_CLAMP: f64 = 0.99;
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_STOP: f64 = 1e-4;

/// A Gaussian projected to screen space.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// `(a, b, c)` of the symmetric matrix `[[a, b], [b, c]]`, in pixels².
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub source_index: usize,
}

impl Splat2D {
    /// Inverse of `cov2d` as `(a, b, c)`, or `None` when it is not positive
    /// definite.
    pub fn conic(&self) -> Option<[f64; 3]> {
        let [a, b, c] = self.cov2d;
        let det = a * c - b * b;
        if !(det > 0.0 && a > 0.0 && c > 0.0) || !det.is_finite() {
            return None;
        }
        Some([c / det, -b / det, a / det])
    }
}

/// Projects one Gaussian; `None` when it lies at or behind the near plane.
pub fn project_gaussian(g: &Gaussian, source_index: usize, cam: &Camera) -> Option<Splat2D> {
    let x = g.centroid.map(f64::from);
    let t = cam.world_to_cam_point(x);
    if !(t[2] > NEAR_PLANE) {
        return None;
    }
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let j = [
        [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
        [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
    ];
    let w = cam.rotation();
    let sigma = g.covariance();
    // M = J W (2x3), cov2d = M Σ Mᵀ.
    let mut m = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            m[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let mut ms = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ms[r][c] = (0..3).map(|k| m[r][k] * sigma[k][c]).sum();
        }
    }
    let entry = |r: usize, c: usize| -> f64 { (0..3).map(|k| ms[r][k] * m[c][k]).sum() };
    let cov2d = [entry(0, 0) + DILATION, entry(0, 1), entry(1, 1) + DILATION];
    Some(Splat2D {
        mean2d: [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy],
        cov2d,
        depth: tz,
        opacity: f64::from(g.opacity),
        source_index,
    })
}

#[inline]
fn alpha_with_conic(conic: &[f64; 3], mean: &[f64; 2], opacity: f64, px: f64, py: f64) -> f64 {
    let dx = px - mean[0];
    let dy = py - mean[1];
    let power = -0.5 * (conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy);
    let alpha = (opacity * power.exp()).min(ALPHA_CLAMP);
    if alpha < ALPHA_CUTOFF {
        0.0
    } else {
        alpha
    }
}

/// Screen-space opacity of a splat at a pixel position. `None` signals a
/// non-invertible covariance; callers skip such splats.
pub fn eval_alpha(s: &Splat2D, pixel: [f64; 2]) -> Option<f64> {
    let conic = s.conic()?;
    Some(alpha_with_conic(&conic, &s.mean2d, s.opacity, pixel[0], pixel[1]))
}

struct PreparedSplat {
    splat: Splat2D,
    conic: [f64; 3],
    /// Inclusive pixel bounds `(col0, row0, col1, row1)`.
    bounds: [usize; 4],
}

fn prepare(g: &Gaussian, index: usize, cam: &Camera) -> Option<PreparedSplat> {
    let splat = project_gaussian(g, index, cam)?;
    let conic = splat.conic()?;
    if !(splat.opacity >= ALPHA_CUTOFF) {
        return None;
    }
    // Outside the ellipse q > q_max the opacity is below the cutoff.
    let q_max = (2.0 * (255.0 * splat.opacity).ln()).max(0.0);
    let hx = (q_max * splat.cov2d[0]).sqrt() + 1.0;
    let hy = (q_max * splat.cov2d[2]).sqrt() + 1.0;
    let [mx, my] = splat.mean2d;
    let (w, h) = (f64::from(cam.width), f64::from(cam.height));
    if !(mx + hx >= 0.0 && mx - hx <= w - 1.0 && my + hy >= 0.0 && my - hy <= h - 1.0) {
        return None;
    }
    let bounds = [
        (mx - hx).ceil().max(0.0) as usize,
        (my - hy).ceil().max(0.0) as usize,
        (mx + hx).floor().min(w - 1.0) as usize,
        (my + hy).floor().min(h - 1.0) as usize,
    ];
    if bounds[0] > bounds[2] || bounds[1] > bounds[3] {
        return None;
    }
    Some(PreparedSplat {
        splat,
        conic,
        bounds,
    })
}

#[derive(Debug, Default)]
struct TileBlock {
    /// Gaussian indices touching the tile, in global depth order.
    slots: Vec<u32>,
    /// Image pixel indices of the tile, row-major within the tile.
    pixels: Vec<u32>,
    offsets: Vec<u32>,
    /// `(slot, α T)` per pixel in compositing order.
    entries: Vec<(u32, f64)>,
}

/// Per-pixel compositing weights of one scene seen from one camera.
#[derive(Debug)]
pub struct Rasterization {
    width: usize,
    height: usize,
    n_gaussians: usize,
    tiles: Vec<TileBlock>,
    pixel_loc: Vec<(u32, u32)>,
    alpha: Vec<f64>,
    rgb: Vec<f64>,
}

/// Projects, sorts, bins and composites the scene's geometry.
pub fn rasterize(scene: &Scene, cam: &Camera) -> Result<Rasterization> {
    cam.validate()?;
    let (width, height) = (cam.width as usize, cam.height as usize);
    let mut splats: Vec<PreparedSplat> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| prepare(g, i, cam))
        .collect();
    splats.sort_by(|a, b| {
        a.splat
            .depth
            .total_cmp(&b.splat.depth)
            .then(a.splat.source_index.cmp(&b.splat.source_index))
    });

    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let [c0, r0, c1, r1] = s.bounds;
        for ty in r0 / TILE_SIZE..=r1 / TILE_SIZE {
            for tx in c0 / TILE_SIZE..=c1 / TILE_SIZE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let tiles: Vec<(TileBlock, Vec<[f64; 4]>)> = bins
        .into_par_iter()
        .enumerate()
        .map(|(tile, bin)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            composite_tile(scene, &splats, &bin, tx, ty, width, height)
        })
        .collect();

    let mut pixel_loc = vec![(0u32, 0u32); width * height];
    let mut alpha = vec![0.0; width * height];
    let mut rgb = vec![0.0; width * height * 3];
    let mut blocks = Vec::with_capacity(tiles.len());
    for (t, (block, shade)) in tiles.into_iter().enumerate() {
        for (local, (&p, s)) in block.pixels.iter().zip(&shade).enumerate() {
            let p = p as usize;
            pixel_loc[p] = (t as u32, local as u32);
            alpha[p] = s[3];
            rgb[p * 3..p * 3 + 3].copy_from_slice(&s[..3]);
        }
        blocks.push(block);
    }
    Ok(Rasterization {
        width,
        height,
        n_gaussians: scene.len(),
        tiles: blocks,
        pixel_loc,
        alpha,
        rgb,
    })
}

fn composite_tile(
    scene: &Scene,
    splats: &[PreparedSplat],
    bin: &[u32],
    tx: usize,
    ty: usize,
    width: usize,
    height: usize,
) -> (TileBlock, Vec<[f64; 4]>) {
    let mut block = TileBlock {
        slots: bin
            .iter()
            .map(|&k| splats[k as usize].splat.source_index as u32)
            .collect(),
        ..Default::default()
    };
    let mut shade = Vec::new();
    block.offsets.push(0);
    for row in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height) {
        for col in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width) {
            block.pixels.push((row * width + col) as u32);
            let (px, py) = (col as f64, row as f64);
            let mut t = 1.0f64;
            let mut color = [0.0f64; 3];
            for (slot, &k) in bin.iter().enumerate() {
                let s = &splats[k as usize];
                let [c0, r0, c1, r1] = s.bounds;
                if col < c0 || col > c1 || row < r0 || row > r1 {
                    continue;
                }
                let a = alpha_with_conic(&s.conic, &s.splat.mean2d, s.splat.opacity, px, py);
                if a == 0.0 {
                    continue;
                }
                let w = a * t;
                block.entries.push((slot as u32, w));
                let c = &scene.gaussians[s.splat.source_index].rgb;
                for ch in 0..3 {
                    color[ch] += f64::from(c[ch]) * w;
                }
                t *= 1.0 - a;
                if t < TRANSMITTANCE_STOP {
                    break;
                }
            }
            block.offsets.push(block.entries.len() as u32);
            shade.push([color[0], color[1], color[2], 1.0 - t]);
        }
    }
    (block, shade)
}

impl Rasterization {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn gaussian_count(&self) -> usize {
        self.n_gaussians
    }

    /// Accumulated opacity `1 - T_final` per pixel.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Composited color, `H × W × 3`.
    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    /// `(gaussian index, α T)` pairs of a pixel in compositing order.
    pub fn weights_at(&self, pixel: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (t, local) = self.pixel_loc[pixel];
        let block = &self.tiles[t as usize];
        let range = block.offsets[local as usize] as usize..block.offsets[local as usize + 1] as usize;
        block.entries[range]
            .iter()
            .map(move |&(slot, w)| (block.slots[slot as usize] as usize, w))
    }

    /// Renders per-Gaussian features (row-major `n × dim`) into an
    /// `H × W × dim` buffer.
    pub fn composite_features(&self, features: &[f64], dim: usize) -> Result<Vec<f64>> {
        if features.len() != self.n_gaussians * dim {
            return Err(Error::Shape(format!(
                "feature buffer has {} values, expected {} x {dim}",
                features.len(),
                self.n_gaussians
            )));
        }
        let mut out = vec![0.0; self.pixel_count() * dim];
        if dim == 0 {
            return Ok(out);
        }
        out.par_chunks_mut(dim).enumerate().for_each(|(p, acc)| {
            for (g, w) in self.weights_at(p) {
                for (a, &f) in acc.iter_mut().zip(&features[g * dim..(g + 1) * dim]) {
                    *a += w * f;
                }
            }
        });
        Ok(out)
    }

    /// Transpose of [`Self::composite_features`]: maps an `H × W × dim`
    /// gradient to per-Gaussian gradients. Partial sums are formed per tile
    /// and combined in (tile, slot) order, so the result does not depend on
    /// the number of worker threads.
    pub fn backward_features(&self, grad: &[f64], dim: usize) -> Result<Vec<f64>> {
        if grad.len() != self.pixel_count() * dim {
            return Err(Error::Shape(format!(
                "gradient map has {} values, expected {} x {dim}",
                grad.len(),
                self.pixel_count()
            )));
        }
        let partials: Vec<Vec<f64>> = self
            .tiles
            .par_iter()
            .map(|block| {
                let mut acc = vec![0.0; block.slots.len() * dim];
                for (local, &p) in block.pixels.iter().enumerate() {
                    let g = &grad[p as usize * dim..(p as usize + 1) * dim];
                    let range = block.offsets[local] as usize..block.offsets[local + 1] as usize;
                    for &(slot, w) in &block.entries[range] {
                        let dst = &mut acc[slot as usize * dim..(slot as usize + 1) * dim];
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d += w * gv;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; self.n_gaussians * dim];
        for (block, acc) in self.tiles.iter().zip(&partials) {
            for (slot, &g) in block.slots.iter().enumerate() {
                let dst = &mut out[g as usize * dim..(g as usize + 1) * dim];
                for (d, &v) in dst.iter_mut().zip(&acc[slot * dim..(slot + 1) * dim]) {
                    *d += v;
                }
            }
        }
        Ok(out)
    }
}

/// Rendered color, low-dimensional features and accumulated opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H × W × 3`.
    pub rgb: Vec<f32>,
    pub ld_features: FeatureMap,
    /// `H × W`.
    pub alpha: Vec<f32>,
}

pub fn render(scene: &Scene, cam: &Camera) -> Result<RenderOutput> {
    let raster = rasterize(scene, cam)?;
    let dim = scene.feature_dim();
    let feats = raster.composite_features(&scene.features_f64(), dim)?;
    Ok(RenderOutput {
        width: raster.width,
        height: raster.height,
        rgb: raster.rgb.iter().map(|&v| v as f32).collect(),
        ld_features: FeatureMap::from_vec(
            raster.height,
            raster.width,
            dim,
            feats.iter().map(|&v| v as f32).collect(),
        )?,
        alpha: raster.alpha.iter().map(|&v| v as f32).collect(),
    })
}

/// Gradient of a loss with respect to every Gaussian feature (row-major
/// `n × D_low`), given its gradient with respect to the rendered feature map.
/// Geometry receives no gradient.
pub fn render_backward(scene: &Scene, cam: &Camera, grad_ld: &FeatureMap) -> Result<Vec<f64>> {
    if grad_ld.height != cam.height as usize
        || grad_ld.width != cam.width as usize
        || grad_ld.dim != scene.feature_dim()
    {
        return Err(Error::Shape(format!(
            "gradient map {}x{}x{} does not match camera {}x{} with feature dim {}",
            grad_ld.height,
            grad_ld.width,
            grad_ld.dim,
            cam.height,
            cam.width,
            scene.feature_dim()
        )));
    }
    let raster = rasterize(scene, cam)?;
    let grad: Vec<f64> = grad_ld.data.iter().map(|&v| f64::from(v)).collect();
    raster.backward_features(&grad, scene.feature_dim())
}
