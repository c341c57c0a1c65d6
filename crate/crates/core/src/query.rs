//! Open-vocabulary queries against a trained model: per-pixel and
//! per-Gaussian hard decoding, hyperplane classification, and scene edits on
//! the selected Gaussians.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::osh::{classify_map, finetune_osh, init_hyperplane, Hyperplane, OshConfig, SemanticMap};
use crate::raster::rasterize;
use crate::scene::{Camera, Scene};
use crate::tfcc::{argmax, Codebook, Decoder};
use crate::trainer::TrainedModel;

/// Pixels with accumulated opacity at or below this never match a query.
pub const MIN_QUERY_ALPHA: f64 = 0.5;

/// Hard-decoded entry index of each row of `features` (`n × D_low`).
pub fn decode_entries(features: ArrayView2<f64>, dec: &Decoder) -> Result<Vec<usize>> {
    if features.ncols() != dec.in_dim() {
        return Err(Error::Shape(format!(
            "features have {} components, decoder expects {}",
            features.ncols(),
            dec.in_dim()
        )));
    }
    let logits = features.dot(&dec.weight.t()) + &dec.bias;
    Ok(logits.outer_iter().map(argmax).collect())
}

fn scene_features(scene: &Scene) -> Result<Array2<f64>> {
    Array2::from_shape_vec((scene.len(), scene.feature_dim()), scene.features_f64())
        .map_err(|e| Error::Shape(e.to_string()))
}

fn check_model(scene: &Scene, cb: &Codebook, dec: &Decoder) -> Result<()> {
    if dec.out_dim() != cb.len() || dec.in_dim() != scene.feature_dim() {
        return Err(Error::Inconsistent(format!(
            "decoder {}x{} does not fit codebook of {} entries and {}-dim features",
            dec.out_dim(),
            dec.in_dim(),
            cb.len(),
            scene.feature_dim()
        )));
    }
    Ok(())
}

/// Decoded entry index and semantic vector of every Gaussian, in scene order.
pub fn decode_gaussian_features(scene: &Scene, cb: &Codebook, dec: &Decoder) -> Result<Vec<(usize, Array1<f64>)>> {
    check_model(scene, cb, dec)?;
    let entries = decode_entries(scene_features(scene)?.view(), dec)?;
    Ok(entries.into_iter().map(|d| (d, cb.entry(d).to_owned())).collect())
}

/// Indices of the Gaussians whose normalized semantic vector lies on the
/// positive side of `h`.
pub fn select_goi(scene: &Scene, cb: &Codebook, dec: &Decoder, h: &Hyperplane) -> Result<Vec<usize>> {
    check_model(scene, cb, dec)?;
    if h.dim() != cb.dim() {
        return Err(Error::Shape(format!(
            "hyperplane dim {} vs codebook dim {}",
            h.dim(),
            cb.dim()
        )));
    }
    let (units, _) = cb.unit_rows()?;
    let positive: Vec<bool> = (0..cb.len())
        .map(|d| h.score(units.row(d)).map(|s| s > 0.0))
        .collect::<Result<_>>()?;
    let entries = decode_entries(scene_features(scene)?.view(), dec)?;
    Ok(entries
        .into_iter()
        .enumerate()
        .filter(|&(_, d)| positive[d])
        .map(|(i, _)| i)
        .collect())
}

/// Rendered view decoded to normalized semantic features, with the mask of
/// pixels opaque enough to carry semantics.
#[derive(Clone, Debug)]
pub struct DecodedView {
    pub map: SemanticMap,
    pub valid: Mask,
    /// Hard-decoded entry per pixel.
    pub entries: Vec<usize>,
    pub alpha: Vec<f64>,
    pub rgb: Vec<f64>,
}

pub fn decode_view(model: &TrainedModel, cam: &Camera) -> Result<DecodedView> {
    model.validate()?;
    let raster = rasterize(&model.scene, cam)?;
    let dl = model.scene.feature_dim();
    let fhat = raster.composite_features(&model.scene.features_f64(), dl)?;
    let fhat = Array2::from_shape_vec((raster.pixel_count(), dl), fhat).map_err(|e| Error::Shape(e.to_string()))?;
    let entries = decode_entries(fhat.view(), &model.decoder)?;
    let (units, _) = model.codebook.unit_rows()?;
    let features = units.select(ndarray::Axis(0), &entries);
    let (h, w) = (raster.height(), raster.width());
    let valid = Mask::from_vec(h, w, raster.alpha().iter().map(|&a| a > MIN_QUERY_ALPHA).collect())?;
    Ok(DecodedView {
        map: SemanticMap::new(h, w, features)?,
        valid,
        entries,
        alpha: raster.alpha().to_vec(),
        rgb: raster.rgb().to_vec(),
    })
}

/// A pseudo-mask and the view it was produced from. Without a camera the
/// mask belongs to the query view itself.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSource {
    pub mask: Mask,
    pub camera: Option<Camera>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryOptions {
    pub use_osh: bool,
    pub osh: OshConfig,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            use_osh: true,
            osh: OshConfig::default(),
        }
    }
}

impl QueryOptions {
    /// Fixed cosine-threshold query without refinement.
    pub fn fixed_threshold(tau_q: f64) -> Self {
        Self {
            use_osh: false,
            osh: OshConfig {
                init_threshold: tau_q,
                ..OshConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStats {
    pub positive_pixels: usize,
    pub selected_gaussians: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub mask: Mask,
    pub goi_indices: Vec<usize>,
    pub hyperplane: Hyperplane,
    pub stats: QueryStats,
    /// Final refinement loss when the hyperplane was refined.
    pub osh_loss: Option<f64>,
}

/// Initial hyperplane for the text, refined on the pseudo-mask's view when
/// `opts.use_osh` is set.
pub fn fit_hyperplane(
    model: &TrainedModel,
    cam: &Camera,
    text_embedding: &[f64],
    mask_source: Option<&MaskSource>,
    opts: &QueryOptions,
) -> Result<(Hyperplane, Option<f64>)> {
    if text_embedding.len() != model.codebook.dim() {
        return Err(Error::Shape(format!(
            "text embedding has {} values, codebook dim is {}",
            text_embedding.len(),
            model.codebook.dim()
        )));
    }
    let h0 = init_hyperplane(text_embedding, opts.osh.init_threshold)?;
    if !opts.use_osh {
        return Ok((h0, None));
    }
    let source = mask_source.ok_or_else(|| Error::Invalid("hyperplane refinement needs a pseudo-mask".into()))?;
    let view_cam = source.camera.as_ref().unwrap_or(cam);
    let view = decode_view(model, view_cam)?;
    let r = finetune_osh(&h0, &view.map, &view.valid, &source.mask, &opts.osh)?;
    Ok((r.hyperplane, Some(r.final_loss)))
}

/// 2D mask from `cam` and the 3D selection for an already fitted hyperplane.
pub fn query_with_hyperplane(model: &TrainedModel, cam: &Camera, h: &Hyperplane) -> Result<QueryResult> {
    let view = decode_view(model, cam)?;
    let mask = classify_map(h, &view.map, &view.valid)?;
    let goi_indices = select_goi(&model.scene, &model.codebook, &model.decoder, h)?;
    Ok(QueryResult {
        stats: QueryStats {
            positive_pixels: mask.count(),
            selected_gaussians: goi_indices.len(),
        },
        mask,
        goi_indices,
        hyperplane: h.clone(),
        osh_loss: None,
    })
}

/// Full query: fit (and optionally refine) the hyperplane, then classify the
/// view and the scene.
pub fn open_vocab_query(
    model: &TrainedModel,
    cam: &Camera,
    text_embedding: &[f64],
    mask_source: Option<&MaskSource>,
    opts: &QueryOptions,
) -> Result<QueryResult> {
    let (h, loss) = fit_hyperplane(model, cam, text_embedding, mask_source, opts)?;
    let mut out = query_with_hyperplane(model, cam, &h)?;
    out.osh_loss = loss;
    Ok(out)
}

/// Selected Gaussian indices as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoiFile {
    pub indices: Vec<usize>,
}

pub fn save_goi(indices: &[usize], path: impl AsRef<Path>) -> Result<()> {
    binio::write_json(
        path.as_ref(),
        &GoiFile {
            indices: indices.to_vec(),
        },
    )
}

pub fn load_goi(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let f: GoiFile = binio::read_json(path.as_ref())?;
    Ok(f.indices)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Action {
    Delete,
    Extract,
    Translate([f32; 3]),
    Highlight([f32; 3]),
}

/// New scene with `action` applied to the Gaussians at `indices`.
pub fn manipulate(scene: &Scene, indices: &[usize], action: Action) -> Result<Scene> {
    let mut selected = vec![false; scene.len()];
    for &i in indices {
        if i >= scene.len() {
            return Err(Error::Invalid(format!(
                "index {i} out of range for a scene of {} Gaussians",
                scene.len()
            )));
        }
        selected[i] = true;
    }
    let gaussians = match action {
        Action::Delete | Action::Extract => {
            let keep = matches!(action, Action::Extract);
            scene
                .gaussians
                .iter()
                .zip(&selected)
                .filter(|&(_, &s)| s == keep)
                .map(|(g, _)| g.clone())
                .collect()
        }
        Action::Translate(delta) => scene
            .gaussians
            .iter()
            .zip(&selected)
            .map(|(g, &s)| {
                let mut g = g.clone();
                if s {
                    for k in 0..3 {
                        g.centroid[k] += delta[k];
                    }
                }
                g
            })
            .collect(),
        Action::Highlight(rgb) => {
            if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Invalid("highlight color must lie in [0, 1]".into()));
            }
            scene
                .gaussians
                .iter()
                .zip(&selected)
                .map(|(g, &s)| {
                    let mut g = g.clone();
                    if s {
                        g.rgb = rgb;
                    }
                    g
                })
                .collect()
        }
    };
    Scene::from_gaussians(scene.feature_dim(), gaussians)
}

pub const OVERLAY_COLOR: [f32; 3] = [1.0, 0.1, 0.1];

/// Image with the masked pixels blended halfway toward `color`.
pub fn overlay(rgb: &[f32], mask: &Mask, color: [f32; 3]) -> Result<Vec<f32>> {
    if rgb.len() != mask.data.len() * 3 {
        return Err(Error::Shape(format!(
            "{} color values for a {}x{} mask",
            rgb.len(),
            mask.height,
            mask.width
        )));
    }
    let mut out = rgb.to_vec();
    for (px, &m) in out.chunks_mut(3).zip(&mask.data) {
        if m {
            for k in 0..3 {
                px[k] = 0.5 * px[k] + 0.5 * color[k];
            }
        }
    }
    Ok(out)
}
