//! Semantic-field optimization: per-Gaussian features, codebook and decoder
//! fitted to ground-truth feature maps through the rasterizer.

use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::image::{load_feature_map, FeatureMap};
use crate::kmeans::{kmeans_init, subsample_rows};
use crate::raster::{rasterize, Rasterization};
use crate::scene::{load_camera, load_scene, save_scene, Camera, Scene};
use crate::tfcc::{
    load_codebook, load_decoder, save_codebook, save_decoder, total_loss, Codebook, Decoder, LossTerms,
    LossWeights,
};

/// Pixels with accumulated opacity at or below this are never sampled.
pub const MIN_TRAIN_ALPHA: f64 = 0.5;
pub const TRACE_EVERY: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lambda_ent: f64,
    pub lambda_max: f64,
    pub lambda_joint: f64,
    pub lambda_e2e: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_switch_iter: usize,
    /// Softmax temperature of the soft decode inside the end-to-end term.
    pub temp_dec: f64,
    pub lr_feature: f64,
    pub lr_codebook: f64,
    pub lr_decoder: f64,
    pub pixels_per_iter: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            lambda_ent: 0.3,
            lambda_max: 1.0,
            lambda_joint: 1.0,
            lambda_e2e: 1.0,
            tau_start: 1.0,
            tau_end: 2.0,
            tau_switch_iter: 1000,
            temp_dec: 10.0,
            lr_feature: 1.0,
            lr_codebook: 0.3,
            lr_decoder: 0.1,
            pixels_per_iter: 4096,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_ent,
            self.lambda_max,
            self.lambda_joint,
            self.lambda_e2e,
            self.lr_feature,
            self.lr_codebook,
            self.lr_decoder,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(
                "loss weights and learning rates must be finite and non-negative".into(),
            ));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0 && self.temp_dec > 0.0)
            || !self.tau_start.is_finite()
            || !self.tau_end.is_finite()
            || !self.temp_dec.is_finite()
        {
            return Err(Error::Invalid("tau_start, tau_end and temp_dec must be positive".into()));
        }
        if self.iterations > 0 && self.tau_switch_iter > self.iterations {
            return Err(Error::Invalid(format!(
                "tau_switch_iter {} exceeds iterations {}",
                self.tau_switch_iter, self.iterations
            )));
        }
        if self.pixels_per_iter == 0 {
            return Err(Error::Invalid("pixels_per_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            ent: self.lambda_ent,
            max: self.lambda_max,
            joint: self.lambda_joint,
            e2e: self.lambda_e2e,
            temp_dec: self.temp_dec,
        }
    }
}

/// Reads a JSON training config; absent keys take their defaults.
pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let cfg: TrainConfig = binio::read_json(path.as_ref())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Annealing temperature of the entropy term at `iter`.
pub fn tau_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    if iter < cfg.tau_switch_iter {
        cfg.tau_start
    } else {
        cfg.tau_end
    }
}

/// One posed view with its ground-truth semantic feature map.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub features: FeatureMap,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub feature_dim_high: usize,
    pub views: Vec<TrainView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub camera: PathBuf,
    pub features: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub feature_dim_high: usize,
    pub views: Vec<ManifestView>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Invalid("dataset has no views".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if v.features.dim != self.feature_dim_high {
                return Err(Error::Inconsistent(format!(
                    "view {i}: feature map has dim {}, dataset declares {}",
                    v.features.dim, self.feature_dim_high
                )));
            }
            if v.features.height == 0 || v.features.width == 0 {
                return Err(Error::Inconsistent(format!("view {i}: empty feature map")));
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a dataset manifest; relative paths resolve against its directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest: DatasetManifest = binio::read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let views = manifest
        .views
        .iter()
        .map(|v| {
            Ok(TrainView {
                camera: load_camera(resolve(base, &v.camera))?,
                features: load_feature_map(resolve(base, &v.features))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        feature_dim_high: manifest.feature_dim_high,
        views,
    };
    ds.validate()?;
    Ok(ds)
}

/// Ground-truth pixel for a render pixel, by nearest-neighbor lookup when the
/// map resolution differs from the camera's.
pub fn gt_pixel<'a>(map: &'a FeatureMap, cam: &Camera, row: usize, col: usize) -> &'a [f32] {
    let r = ((row as f64 + 0.5) * map.height as f64 / cam.height as f64) as usize;
    let c = ((col as f64 + 0.5) * map.width as f64 / cam.width as f64) as usize;
    map.pixel(r.min(map.height - 1), c.min(map.width - 1))
}

/// Valid (opaque enough, non-zero target) pixels of every training view.
pub fn trainable_pixels(raster: &Rasterization, view: &TrainView) -> Vec<usize> {
    let w = raster.width();
    raster
        .alpha()
        .iter()
        .enumerate()
        .filter(|&(p, &a)| {
            a > MIN_TRAIN_ALPHA && gt_pixel(&view.features, &view.camera, p / w, p % w).iter().any(|&v| v != 0.0)
        })
        .map(|(p, _)| p)
        .collect()
}

/// Largest number of views whose maps feed the codebook initialization.
pub const MAX_INIT_VIEWS: usize = 50;

/// Non-zero ground-truth pixels of the first [`MAX_INIT_VIEWS`] views, the
/// codebook initialization corpus.
pub fn gt_samples(ds: &Dataset) -> Result<Array2<f64>> {
    let mut rows = Vec::new();
    let mut count = 0;
    for view in ds.views.iter().take(MAX_INIT_VIEWS) {
        for px in view.features.data.chunks(view.features.dim) {
            if px.iter().any(|&v| v != 0.0) {
                rows.extend(px.iter().map(|&v| f64::from(v)));
                count += 1;
            }
        }
    }
    Array2::from_shape_vec((count, ds.feature_dim_high), rows).map_err(|e| Error::Shape(e.to_string()))
}

/// Upper bound on the pixels clustered for codebook initialization.
pub const MAX_INIT_SAMPLES: usize = 200_000;

/// Spherical k-means codebook over the dataset's ground-truth pixels,
/// subsampled to at most [`MAX_INIT_SAMPLES`].
pub fn init_codebook(ds: &Dataset, n_entries: usize, iterations: usize, seed: u64) -> Result<Codebook> {
    let samples = gt_samples(ds)?;
    let samples = subsample_rows(samples.view(), MAX_INIT_SAMPLES, seed);
    info!("clustering {} pixels into {n_entries} entries", samples.nrows());
    kmeans_init(samples.view(), n_entries, iterations, seed)
}

/// Codebook initialization, decoder initialization and training in one call,
/// all seeded by `cfg.seed`. Equivalent to `init-codebook` followed by `train`
/// on the command line with the same seed.
pub fn fit_field(
    scene: &Scene,
    ds: &Dataset,
    n_entries: usize,
    kmeans_iterations: usize,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let cb = init_codebook(ds, n_entries, kmeans_iterations, cfg.seed)?;
    let dec = Decoder::random(cb.len(), scene.feature_dim(), cfg.seed);
    train_semantic_field(scene, ds, &cb, &dec, cfg)
}

fn descend<'a>(lr: f64, params: impl Iterator<Item = &'a mut f64>, grads: impl Iterator<Item = &'a f64>) {
    for (p, &g) in params.zip(grads) {
        *p -= lr * g;
    }
}

/// `[iteration, total, ent, max, joint, e2e]`.
pub type TraceRow = (usize, f64, f64, f64, f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: TrainConfig,
    pub loss_trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub scene: Scene,
    pub codebook: Codebook,
    pub decoder: Decoder,
    pub meta: ModelMeta,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        if self.decoder.out_dim() != self.codebook.len() {
            return Err(Error::Inconsistent(format!(
                "decoder produces {} logits but the codebook has {} entries",
                self.decoder.out_dim(),
                self.codebook.len()
            )));
        }
        if self.decoder.in_dim() != self.scene.feature_dim() {
            return Err(Error::Inconsistent(format!(
                "decoder expects {}-dim features but the scene stores {}",
                self.decoder.in_dim(),
                self.scene.feature_dim()
            )));
        }
        Ok(())
    }
}

fn trace_row(iter: usize, t: &LossTerms) -> TraceRow {
    (iter, t.total, t.ent, t.max, t.joint, t.e2e)
}

/// Fits per-Gaussian features, codebook entries and decoder to the dataset.
///
/// Geometry is left untouched. Each iteration renders one view (views are
/// visited round-robin in a seed-shuffled order), samples up to
/// `pixels_per_iter` trainable pixels and takes one gradient-descent step on every parameter
/// group. The returned parameters are rounded to `f32` so
/// that the in-memory model equals its saved form.
pub fn train_semantic_field(
    scene: &Scene,
    ds: &Dataset,
    cb0: &Codebook,
    dec0: &Decoder,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    ds.validate()?;
    if cb0.dim() != ds.feature_dim_high {
        return Err(Error::Inconsistent(format!(
            "codebook dim {} does not match dataset dim {}",
            cb0.dim(),
            ds.feature_dim_high
        )));
    }
    if dec0.out_dim() != cb0.len() || dec0.in_dim() != scene.feature_dim() {
        return Err(Error::Inconsistent(format!(
            "decoder {}x{} does not fit codebook of {} entries and {}-dim features",
            dec0.out_dim(),
            dec0.in_dim(),
            cb0.len(),
            scene.feature_dim()
        )));
    }

    let dl = scene.feature_dim();
    let dh = ds.feature_dim_high;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.views.len()).collect();
    order.shuffle(&mut rng);

    let mut features = scene.features_f64();
    let mut cb = cb0.clone();
    let mut dec = dec0.clone();
    let weights = cfg.loss_weights();
    let mut trace = Vec::new();
    let mut rasters: Vec<Option<(Rasterization, Vec<usize>)>> = (0..ds.views.len()).map(|_| None).collect();

    for iter in 0..cfg.iterations {
        let vi = order[iter % order.len()];
        let view = &ds.views[vi];
        if rasters[vi].is_none() {
            let raster = rasterize(scene, &view.camera)?;
            let valid = trainable_pixels(&raster, view);
            debug!("view {vi}: {} trainable pixels", valid.len());
            rasters[vi] = Some((raster, valid));
        }
        let (raster, valid) = rasters[vi].as_ref().unwrap();
        if valid.is_empty() {
            warn!("iteration {iter}: view {vi} has no pixels with alpha > {MIN_TRAIN_ALPHA}, skipped");
            continue;
        }
        let mut picked: Vec<usize> = if valid.len() <= cfg.pixels_per_iter {
            valid.clone()
        } else {
            rand::seq::index::sample(&mut rng, valid.len(), cfg.pixels_per_iter)
                .into_iter()
                .map(|k| valid[k])
                .collect()
        };
        picked.sort_unstable();

        let b = picked.len();
        let w = raster.width();
        let mut v_gt = Array2::<f64>::zeros((b, dh));
        let mut fhat = Array2::<f64>::zeros((b, dl));
        for (i, &p) in picked.iter().enumerate() {
            let gt = gt_pixel(&view.features, &view.camera, p / w, p % w);
            v_gt.row_mut(i).iter_mut().zip(gt).for_each(|(d, &s)| *d = f64::from(s));
            let mut row = fhat.row_mut(i);
            for (g, wt) in raster.weights_at(p) {
                for (k, r) in row.iter_mut().enumerate() {
                    *r += wt * features[g * dl + k];
                }
            }
        }

        let tau = tau_schedule(iter, cfg);
        let out = total_loss(v_gt.view(), fhat.view(), &cb, &dec, tau, &weights)?;
        if iter % TRACE_EVERY == 0 || iter + 1 == cfg.iterations {
            trace.push(trace_row(iter, &out.terms));
            debug!(
                "iter {iter} tau {tau} loss {:.6} (ent {:.4} max {:.4} joint {:.4} e2e {:.4})",
                out.terms.total, out.terms.ent, out.terms.max, out.terms.joint, out.terms.e2e
            );
        }

        // Scatter pixel gradients back onto the contributing Gaussians.
        if cfg.lr_feature > 0.0 {
            let mut grad = vec![0.0; features.len()];
            for (i, &p) in picked.iter().enumerate() {
                let gr = out.grad_features.row(i);
                for (g, wt) in raster.weights_at(p) {
                    for k in 0..dl {
                        grad[g * dl + k] += wt * gr[k];
                    }
                }
            }
            descend(cfg.lr_feature, features.iter_mut(), grad.iter());
        }
        if cfg.lr_codebook > 0.0 {
            descend(cfg.lr_codebook, cb.entries_mut().iter_mut(), out.grad_entries.iter());
            let reset = cb.reset_degenerate(&mut rng);
            if reset > 0 {
                warn!("iteration {iter}: reset {reset} degenerate codebook entries");
            }
        }
        if cfg.lr_decoder > 0.0 {
            descend(cfg.lr_decoder, dec.weight.iter_mut(), out.grad_weight.iter());
            descend(cfg.lr_decoder, dec.bias.iter_mut(), out.grad_bias.iter());
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("features diverged at iteration {iter}")));
        }
    }

    let mut out_scene = scene.clone();
    out_scene.set_features(&features)?;
    if cfg.iterations > 0 && cfg.lr_codebook > 0.0 {
        cb.round_to_f32();
    }
    if cfg.iterations > 0 && cfg.lr_decoder > 0.0 {
        dec.round_to_f32();
    }
    if let Some(last) = trace.last() {
        info!("final loss {:.6} (e2e {:.4})", last.1, last.5);
    }
    Ok(TrainedModel {
        scene: out_scene,
        codebook: cb,
        decoder: dec,
        meta: ModelMeta {
            config: cfg.clone(),
            loss_trace: trace,
        },
    })
}

pub const SCENE_FILE: &str = "scene.gois";
pub const CODEBOOK_FILE: &str = "codebook.goic";
pub const DECODER_FILE: &str = "decoder.goid";
pub const META_FILE: &str = "meta.json";

pub fn save_model(model: &TrainedModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    model.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_scene(&model.scene, dir.join(SCENE_FILE))?;
    save_codebook(&model.codebook, dir.join(CODEBOOK_FILE))?;
    save_decoder(&model.decoder, dir.join(DECODER_FILE))?;
    binio::write_json(&dir.join(META_FILE), &model.meta)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let model = TrainedModel {
        scene: load_scene(dir.join(SCENE_FILE))?,
        codebook: load_codebook(dir.join(CODEBOOK_FILE))?,
        decoder: load_decoder(dir.join(DECODER_FILE))?,
        meta: binio::read_json(&dir.join(META_FILE))?,
    };
    model.validate()?;
    Ok(model)
}

/// Mean of each loss term over the first and last `n` trace rows.
pub fn trace_means(trace: &[TraceRow], n: usize) -> Option<(Array1<f64>, Array1<f64>)> {
    if trace.is_empty() || n == 0 {
        return None;
    }
    let row = |r: &TraceRow| Array1::from(vec![r.1, r.2, r.3, r.4, r.5]);
    let k = n.min(trace.len());
    let head = trace[..k].iter().map(row).fold(Array1::zeros(5), |a, b| a + b) / k as f64;
    let tail = trace[trace.len() - k..].iter().map(row).fold(Array1::zeros(5), |a, b| a + b) / k as f64;
    Some((head, tail))
}
