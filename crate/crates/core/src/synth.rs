//! Labeled synthetic scenes, noisy ground-truth feature maps, oracle masks and
//! lookup-table text embeddings.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::image::{save_feature_map, save_mask, FeatureMap, Mask};
use crate::raster::{rasterize, Rasterization};
use crate::scene::{save_camera, save_scene, Camera, Gaussian, Scene, DEFAULT_FEATURE_DIM};
use crate::tfcc::DEFAULT_SEMANTIC_DIM;
use crate::eval::EvalCase;
use crate::query::MaskSource;
use crate::trainer::{Dataset, DatasetManifest, ManifestView, TrainConfig, TrainView};

/// Bounding radius of every cluster's footprint.
pub const BLOB_RADIUS: f64 = 1.0;
/// Distance between neighbouring cluster centers, in blob radii.
pub const CLUSTER_SPACING: f64 = 4.5;
/// Largest allowed `|cos|` between two generated embeddings.
pub const MAX_EMBEDDING_COSINE: f64 = 0.3;
/// Largest in-plane axis of a cluster Gaussian, in blob radii.
pub const SPLAT_SCALE: f64 = 0.12;
pub const SPLAT_OPACITY: f32 = 0.5;
const MAX_REJECTIONS: usize = 10_000;
const COLOR_NAMES: [(&str, [f32; 3]); 8] = [
    ("red", [0.85, 0.15, 0.12]),
    ("green", [0.2, 0.7, 0.25]),
    ("blue", [0.15, 0.3, 0.85]),
    ("yellow", [0.9, 0.85, 0.2]),
    ("purple", [0.55, 0.25, 0.7]),
    ("orange", [0.95, 0.55, 0.1]),
    ("cyan", [0.2, 0.8, 0.85]),
    ("pink", [0.95, 0.5, 0.7]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Square patches on a grid.
    Blocks,
    /// Round discs evenly spaced on a circle.
    Rings,
}

/// A scene whose Gaussians carry known cluster labels and embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub scene: Scene,
    pub labels: Vec<usize>,
    /// Unit embedding per cluster.
    pub embeddings: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub centers: Vec<[f64; 3]>,
    /// Unit embedding of empty pixels.
    pub background: Vec<f64>,
    pub layout: Layout,
}

impl LabeledScene {
    pub fn n_clusters(&self) -> usize {
        self.embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.background.len()
    }

    pub fn label_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Smallest sphere around the origin that holds every cluster.
    pub fn extent(&self) -> f64 {
        self.centers
            .iter()
            .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
            .fold(0.0, f64::max)
            + BLOB_RADIUS
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_gaussian_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` random unit vectors whose pairwise `|cos|` stays within
/// [`MAX_EMBEDDING_COSINE`].
pub fn sample_embeddings<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        let v = unit_gaussian_vector(rng, dim);
        if out.iter().all(|u| dot(u, &v).abs() <= MAX_EMBEDDING_COSINE) {
            out.push(v);
        } else {
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(Error::Numeric(format!(
                    "could not draw {count} embeddings of dim {dim} with |cos| <= {MAX_EMBEDDING_COSINE}"
                )));
            }
        }
    }
    Ok(out)
}

fn layout_centers(layout: Layout, n: usize) -> Vec<[f64; 3]> {
    let spacing = CLUSTER_SPACING * BLOB_RADIUS;
    match layout {
        Layout::Blocks => {
            let cols = (n as f64).sqrt().ceil() as usize;
            let rows = n.div_ceil(cols);
            (0..n)
                .map(|i| {
                    let (r, c) = (i / cols, i % cols);
                    [
                        (c as f64 - (cols - 1) as f64 / 2.0) * spacing,
                        (r as f64 - (rows - 1) as f64 / 2.0) * spacing,
                        0.0,
                    ]
                })
                .collect()
        }
        Layout::Rings => {
            let radius = if n < 2 {
                0.0
            } else {
                spacing / (2.0 * (PI / n as f64).sin())
            };
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    [radius * a.cos(), radius * a.sin(), 0.0]
                })
                .collect()
        }
    }
}

fn blob_gaussians<R: Rng>(
    rng: &mut R,
    layout: Layout,
    center: [f64; 3],
    count: usize,
    rgb: [f32; 3],
    feature_dim: usize,
) -> Vec<Gaussian> {
    let s = SPLAT_SCALE * BLOB_RADIUS;
    (0..count)
        .map(|_| {
            let (x, y) = match layout {
                Layout::Blocks => {
                    let h = 0.62 * BLOB_RADIUS;
                    (rng.random_range(-h..h), rng.random_range(-h..h))
                }
                Layout::Rings => {
                    let r = 0.82 * BLOB_RADIUS * rng.random::<f64>().sqrt();
                    let a = rng.random_range(0.0..2.0 * PI);
                    (r * a.cos(), r * a.sin())
                }
            };
            let z = rng.random_range(-0.02..0.02) * BLOB_RADIUS;
            let yaw = rng.random_range(0.0..PI);
            let jitter = rng.random_range(-0.05f32..0.05);
            Gaussian {
                centroid: [(center[0] + x) as f32, (center[1] + y) as f32, (center[2] + z) as f32],
                rotation: [(yaw / 2.0).cos() as f32, 0.0, 0.0, (yaw / 2.0).sin() as f32],
                scale: [s as f32, (0.8 * s) as f32, (0.3 * s) as f32],
                opacity: SPLAT_OPACITY,
                rgb: rgb.map(|c| (c + jitter).clamp(0.0, 1.0)),
                feature: vec![0.0; feature_dim],
            }
        })
        .collect()
}

fn normalize_rotation(g: &mut Gaussian) {
    let n = g.rotation.iter().map(|v| v * v).sum::<f32>().sqrt();
    g.rotation.iter_mut().for_each(|v| *v /= n);
}

/// Spatially separated opaque clusters with random, nearly orthogonal
/// embeddings of dimension `dim`.
pub fn generate_scene_with_dim(
    layout: Layout,
    n_clusters: usize,
    gaussians_per_cluster: usize,
    dim: usize,
    seed: u64,
) -> Result<LabeledScene> {
    if n_clusters < 2 {
        return Err(Error::Invalid(format!("need at least 2 clusters, got {n_clusters}")));
    }
    if n_clusters > COLOR_NAMES.len() {
        return Err(Error::Invalid(format!("at most {} clusters are supported", COLOR_NAMES.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = sample_embeddings(&mut rng, n_clusters + 1, dim)?;
    let background = all.pop().unwrap();
    let centers = layout_centers(layout, n_clusters);
    let noun = match layout {
        Layout::Blocks => "block",
        Layout::Rings => "ring",
    };
    let mut scene = Scene::new(DEFAULT_FEATURE_DIM);
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (k, &center) in centers.iter().enumerate() {
        let (color, rgb) = COLOR_NAMES[k];
        names.push(format!("{color} {noun}"));
        for mut g in blob_gaussians(&mut rng, layout, center, gaussians_per_cluster, rgb, DEFAULT_FEATURE_DIM) {
            normalize_rotation(&mut g);
            scene.push(g)?;
            labels.push(k);
        }
    }
    Ok(LabeledScene {
        scene,
        labels,
        embeddings: all,
        names,
        centers,
        background,
        layout,
    })
}

pub fn generate_scene(layout: Layout, n_clusters: usize, gaussians_per_cluster: usize, seed: u64) -> Result<LabeledScene> {
    generate_scene_with_dim(layout, n_clusters, gaussians_per_cluster, DEFAULT_SEMANTIC_DIM, seed)
}

/// Adds a distractor cluster whose embedding has cosine `distractor_cosine`
/// with the target's, placed on the nearest free lattice slot.
pub fn generate_adversarial_pair(
    base: &LabeledScene,
    target_label: usize,
    distractor_cosine: f64,
    seed: u64,
) -> Result<LabeledScene> {
    if target_label >= base.n_clusters() {
        return Err(Error::Invalid(format!("unknown label {target_label}")));
    }
    if !(distractor_cosine.abs() < 1.0) {
        return Err(Error::Invalid("distractor cosine must lie in (-1, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d157);
    let t = &base.embeddings[target_label];
    // Gram-Schmidt: a random direction orthogonal to the target.
    let u = loop {
        let r = unit_gaussian_vector(&mut rng, t.len());
        let c = dot(&r, t);
        let o: Vec<f64> = r.iter().zip(t).map(|(a, b)| a - c * b).collect();
        let n = dot(&o, &o).sqrt();
        if n > 1e-3 {
            break o.into_iter().map(|v| v / n).collect::<Vec<_>>();
        }
    };
    let s = (1.0 - distractor_cosine * distractor_cosine).sqrt();
    let emb: Vec<f64> = t.iter().zip(&u).map(|(a, b)| distractor_cosine * a + s * b).collect();

    let spacing = CLUSTER_SPACING * BLOB_RADIUS;
    let origin = base.centers[0];
    let mut candidates = Vec::new();
    for i in -6i32..=6 {
        for j in -6i32..=6 {
            let p = [origin[0] + i as f64 * spacing, origin[1] + j as f64 * spacing, 0.0];
            let clear = base
                .centers
                .iter()
                .all(|c| ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt() >= spacing - 1e-9);
            if clear {
                candidates.push(((p[0] * p[0] + p[1] * p[1]).sqrt(), j, i, p));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let center = candidates[0].3;

    let per_cluster = base.labels.iter().filter(|&&l| l == target_label).count();
    let mut out = base.clone();
    let label = out.n_clusters();
    let (color, rgb) = COLOR_NAMES[target_label];
    let noun = match base.layout {
        Layout::Blocks => "block",
        Layout::Rings => "ring",
    };
    out.names.push(format!("{color} decoy {noun}"));
    for mut g in blob_gaussians(&mut rng, base.layout, center, per_cluster, rgb, base.scene.feature_dim()) {
        normalize_rotation(&mut g);
        out.scene.push(g)?;
        out.labels.push(label);
    }
    out.embeddings.push(emb);
    out.centers.push(center);
    Ok(out)
}

/// Composited weight of every label at every pixel (`H × W × n_clusters`).
pub fn label_weights(ls: &LabeledScene, raster: &Rasterization) -> Vec<f64> {
    let n = ls.n_clusters();
    let mut out = vec![0.0; raster.pixel_count() * n];
    for p in 0..raster.pixel_count() {
        for (g, w) in raster.weights_at(p) {
            out[p * n + ls.labels[g]] += w;
        }
    }
    out
}

/// Label seen at each pixel: the label with the largest composited weight,
/// or `None` when the uncovered share `1 - alpha` is larger still.
pub fn pixel_labels(ls: &LabeledScene, raster: &Rasterization) -> Vec<Option<usize>> {
    let n = ls.n_clusters();
    let weights = label_weights(ls, raster);
    raster
        .alpha()
        .iter()
        .enumerate()
        .map(|(p, &a)| {
            let w = &weights[p * n..(p + 1) * n];
            let mut best = 0;
            for k in 1..n {
                if w[k] > w[best] {
                    best = k;
                }
            }
            if w[best] > 0.0 && w[best] >= 1.0 - a {
                Some(best)
            } else {
                None
            }
        })
        .collect()
}

/// Seed for one view's noise draw.
pub fn view_seed(seed: u64, view: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ view.wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Ground-truth semantic map: each pixel's label embedding plus isotropic
/// noise with total standard deviation `noise_sigma`, renormalized. Empty
/// pixels carry the background embedding.
pub fn generate_gt_features(ls: &LabeledScene, cam: &Camera, noise_sigma: f64, seed: u64) -> Result<FeatureMap> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Invalid(format!("invalid noise sigma {noise_sigma}")));
    }
    let raster = rasterize(&ls.scene, cam)?;
    let labels = pixel_labels(ls, &raster);
    let dim = ls.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma / (dim as f64).sqrt()).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut map = FeatureMap::zeros(cam.height as usize, cam.width as usize, dim);
    let mut v = vec![0.0; dim];
    for (p, label) in labels.iter().enumerate() {
        let base = match label {
            Some(k) => &ls.embeddings[*k],
            None => &ls.background,
        };
        for (x, &b) in v.iter_mut().zip(base) {
            *x = b + if noise_sigma > 0.0 { rng.sample(normal) } else { 0.0 };
        }
        let n = dot(&v, &v).sqrt();
        for (d, &x) in map.at_mut(p).iter_mut().zip(&v) {
            *d = (x / n) as f32;
        }
    }
    Ok(map)
}

/// Pixels where the target cluster holds more than half of the composited
/// weight.
pub fn oracle_mask(ls: &LabeledScene, cam: &Camera, target_label: usize) -> Result<Mask> {
    if target_label >= ls.n_clusters() {
        return Err(Error::Invalid(format!("unknown label {target_label}")));
    }
    let raster = rasterize(&ls.scene, cam)?;
    let mut mask = Mask::new(cam.height as usize, cam.width as usize);
    for p in 0..raster.pixel_count() {
        let w: f64 = raster.weights_at(p).filter(|&(g, _)| ls.labels[g] == target_label).map(|(_, w)| w).sum();
        mask.data[p] = w > 0.5;
    }
    Ok(mask)
}

/// Camera on a sphere around the origin, looking at it with world `+z` up.
pub fn orbit_camera(
    distance: f64,
    azimuth: f64,
    elevation: f64,
    width: u32,
    height: u32,
    fov_y: f64,
) -> Result<Camera> {
    let eye = [
        distance * elevation.cos() * azimuth.cos(),
        distance * elevation.cos() * azimuth.sin(),
        distance * elevation.sin(),
    ];
    Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], width, height, fov_y)
}

/// A complete synthetic experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub layout: Layout,
    pub n_clusters: usize,
    pub gaussians_per_cluster: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub width: u32,
    pub height: u32,
    pub noise_sigma: f64,
    pub dim_high: usize,
    /// `(target label, cosine)` of an added distractor cluster.
    pub distractor: Option<(usize, f64)>,
}

impl BenchmarkSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            layout: Layout::Blocks,
            n_clusters: 5,
            gaussians_per_cluster: 200,
            train_views: 20,
            test_views: 3,
            width: 64,
            height: 64,
            noise_sigma: 0.1,
            dim_high: DEFAULT_SEMANTIC_DIM,
            distractor: None,
        };
        match name {
            "blocks5" => Ok(base),
            "rings5" => Ok(Self {
                layout: Layout::Rings,
                ..base
            }),
            "adversarial5" => Ok(Self {
                distractor: Some((0, 0.8)),
                ..base
            }),
            _ => Err(Error::Invalid(format!(
                "unknown preset {name:?} (expected blocks5, rings5 or adversarial5)"
            ))),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["blocks5", "rings5", "adversarial5"]
    }
}

/// Cameras, ground-truth maps and labels of a generated benchmark, kept in
/// memory.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub seed: u64,
    pub labeled: LabeledScene,
    pub train_cameras: Vec<Camera>,
    pub train_features: Vec<FeatureMap>,
    pub test_cameras: Vec<Camera>,
}

const ELEVATION: f64 = 60.0 * PI / 180.0;
const TEST_ELEVATION: f64 = 52.0 * PI / 180.0;
const FOV_Y: f64 = 55.0 * PI / 180.0;

impl Benchmark {
    pub fn generate(spec: &BenchmarkSpec, seed: u64) -> Result<Self> {
        if spec.train_views == 0 {
            return Err(Error::Invalid("benchmark needs at least one training view".into()));
        }
        let mut labeled =
            generate_scene_with_dim(spec.layout, spec.n_clusters, spec.gaussians_per_cluster, spec.dim_high, seed)?;
        if let Some((target, cosine)) = spec.distractor {
            labeled = generate_adversarial_pair(&labeled, target, cosine, seed)?;
        }
        let extent = labeled.extent();
        let distance = 1.2 * extent / (0.5 * FOV_Y).tan() + extent * ELEVATION.cos() * 0.5;
        let step = 2.0 * PI / spec.train_views as f64;
        let train_cameras = (0..spec.train_views)
            .map(|k| orbit_camera(distance, k as f64 * step, ELEVATION, spec.width, spec.height, FOV_Y))
            .collect::<Result<Vec<_>>>()?;
        let test_cameras = (0..spec.test_views)
            .map(|k| {
                let slot = (k * spec.train_views) / spec.test_views.max(1);
                let az = (slot as f64 + 0.5) * step;
                orbit_camera(distance, az, TEST_ELEVATION, spec.width, spec.height, FOV_Y)
            })
            .collect::<Result<Vec<_>>>()?;
        let train_features = train_cameras
            .iter()
            .enumerate()
            .map(|(k, cam)| generate_gt_features(&labeled, cam, spec.noise_sigma, view_seed(seed, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            seed,
            labeled,
            train_cameras,
            train_features,
            test_cameras,
        })
    }

    /// Training views and ground-truth maps as a dataset.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            feature_dim_high: self.labeled.dim(),
            views: self
                .train_cameras
                .iter()
                .zip(&self.train_features)
                .map(|(c, f)| TrainView {
                    camera: c.clone(),
                    features: f.clone(),
                })
                .collect(),
        }
    }

    /// The held-out query cases, identical to what [`load_testset`] reads
    /// back from the written test set.
    ///
    /// [`load_testset`]: crate::eval::load_testset
    pub fn eval_cases(&self) -> Result<Vec<EvalCase>> {
        let mut pseudo = Vec::new();
        for label in 0..self.labeled.n_clusters() {
            let view = self.pseudo_view(label)?;
            let cam = &self.train_cameras[view];
            pseudo.push(MaskSource {
                mask: oracle_mask(&self.labeled, cam, label)?,
                camera: Some(cam.clone()),
            });
        }
        let mut cases = Vec::new();
        for (v, cam) in self.test_cameras.iter().enumerate() {
            for label in 0..self.labeled.n_clusters() {
                let text = &self.labeled.names[label];
                cases.push(EvalCase {
                    name: format!("test/cam_{v:02}.json:{text}"),
                    camera: cam.clone(),
                    gt_mask: oracle_mask(&self.labeled, cam, label)?,
                    text: text.clone(),
                    embedding: self.labeled.embeddings[label].iter().map(|&x| f64::from(x as f32)).collect(),
                    pseudo: Some(pseudo[label].clone()),
                });
            }
        }
        Ok(cases)
    }

    /// Training view where `label` covers the most pixels; the view the
    /// pseudo-mask for that label is drawn from.
    pub fn pseudo_view(&self, label: usize) -> Result<usize> {
        let mut best = (0, 0);
        for (k, cam) in self.train_cameras.iter().enumerate() {
            let n = oracle_mask(&self.labeled, cam, label)?.count();
            if n > best.1 {
                best = (k, n);
            }
        }
        Ok(best.0)
    }

    /// Writes the experiment directory and returns its file layout.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<BenchmarkFiles> {
        let dir = dir.as_ref();
        let files = BenchmarkFiles::new(dir);
        save_scene(&self.labeled.scene, &files.scene)?;
        binio::write_json(
            &files.labels,
            &LabelFile {
                labels: self.labeled.labels.clone(),
                names: self.labeled.names.clone(),
            },
        )?;
        let table = EmbeddingTable {
            dim: self.labeled.dim(),
            entries: self
                .labeled
                .names
                .iter()
                .zip(&self.labeled.embeddings)
                .map(|(text, e)| EmbeddingEntry {
                    text: text.clone(),
                    embedding: e.iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        };
        binio::write_json(&files.embeddings, &table)?;

        let mut views = Vec::new();
        for (k, (cam, map)) in self.train_cameras.iter().zip(&self.train_features).enumerate() {
            let cam_rel = PathBuf::from(format!("train/cam_{k:02}.json"));
            let feat_rel = PathBuf::from(format!("train/feat_{k:02}.goif"));
            save_camera(cam, dir.join(&cam_rel))?;
            save_feature_map(map, dir.join(&feat_rel))?;
            views.push(ManifestView {
                camera: cam_rel,
                features: feat_rel,
            });
        }
        binio::write_json(
            &files.dataset,
            &DatasetManifest {
                feature_dim_high: self.labeled.dim(),
                views,
            },
        )?;

        let mut pseudo = Vec::new();
        for label in 0..self.labeled.n_clusters() {
            let view = self.pseudo_view(label)?;
            let rel = PathBuf::from(format!("pseudo/mask_l{label}.pgm"));
            save_mask(&oracle_mask(&self.labeled, &self.train_cameras[view], label)?, dir.join(&rel))?;
            pseudo.push((rel, PathBuf::from(format!("train/cam_{view:02}.json"))));
        }
        let mut cases = Vec::new();
        for (v, cam) in self.test_cameras.iter().enumerate() {
            let cam_rel = PathBuf::from(format!("test/cam_{v:02}.json"));
            save_camera(cam, dir.join(&cam_rel))?;
            for label in 0..self.labeled.n_clusters() {
                let rel = PathBuf::from(format!("test/gt_v{v:02}_l{label}.pgm"));
                save_mask(&oracle_mask(&self.labeled, cam, label)?, dir.join(&rel))?;
                cases.push(crate::eval::CaseSpec {
                    camera: cam_rel.clone(),
                    gt_mask: rel,
                    text: self.labeled.names[label].clone(),
                    pseudo_mask: Some(pseudo[label].0.clone()),
                    pseudo_camera: Some(pseudo[label].1.clone()),
                });
            }
        }
        binio::write_json(
            &files.testset,
            &crate::eval::TestSet {
                embeddings: Some(PathBuf::from("embeddings.json")),
                cases,
            },
        )?;
        binio::write_json(&files.train_config, &TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        })?;
        binio::write_json(&files.benchmark, &BenchmarkRecord {
            spec: self.spec.clone(),
            seed: self.seed,
        })?;
        Ok(files)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkRecord {
    spec: BenchmarkSpec,
    seed: u64,
}

/// Per-Gaussian labels written next to a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub labels: Vec<usize>,
    pub names: Vec<String>,
}

/// Paths of a written benchmark directory.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkFiles {
    pub root: PathBuf,
    pub scene: PathBuf,
    pub labels: PathBuf,
    pub embeddings: PathBuf,
    pub dataset: PathBuf,
    pub testset: PathBuf,
    pub train_config: PathBuf,
    pub benchmark: PathBuf,
}

impl BenchmarkFiles {
    pub fn new(dir: &Path) -> Self {
        Self {
            root: dir.to_path_buf(),
            scene: dir.join("scene.gois"),
            labels: dir.join("labels.json"),
            embeddings: dir.join("embeddings.json"),
            dataset: dir.join("dataset.json"),
            testset: dir.join("testset.json"),
            train_config: dir.join("train_config.json"),
            benchmark: dir.join("benchmark.json"),
        }
    }
}

/// Text-to-embedding lookup table standing in for a text encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: Vec<EmbeddingEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEntry {
    pub text: String,
    pub embedding: Vec<f32>,
}

impl EmbeddingTable {
    pub fn lookup(&self, text: &str) -> Result<Vec<f64>> {
        let e = self
            .entries
            .iter()
            .find(|e| e.text == text)
            .ok_or_else(|| Error::Invalid(format!("no embedding for text {text:?}")))?;
        if e.embedding.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding for {text:?} has {} values, table declares {}",
                e.embedding.len(),
                self.dim
            )));
        }
        Ok(e.embedding.iter().map(|&v| f64::from(v)).collect())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    binio::read_json(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = generate_scene(Layout::Blocks, 5, 200, 3).unwrap();
        assert_eq!(a.scene.len(), 1000);
        assert_eq!(a.n_clusters(), 5);
        let b = generate_scene(Layout::Blocks, 5, 200, 3).unwrap();
        assert_eq!(a, b);
        assert!(generate_scene(Layout::Rings, 1, 10, 0).is_err());
    }

    #[test]
    fn embeddings_nearly_orthogonal() {
        let ls = generate_scene(Layout::Rings, 8, 5, 9).unwrap();
        let mut all = ls.embeddings.clone();
        all.push(ls.background.clone());
        for i in 0..all.len() {
            assert!((dot(&all[i], &all[i]) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(dot(&all[i], &all[j]).abs() <= MAX_EMBEDDING_COSINE);
            }
        }
    }

    #[test]
    fn centers_are_separated() {
        for layout in [Layout::Blocks, Layout::Rings] {
            let ls = generate_scene(layout, 5, 4, 0).unwrap();
            let ls = generate_adversarial_pair(&ls, 0, 0.8, 0).unwrap();
            for i in 0..ls.centers.len() {
                for j in 0..i {
                    let (a, b) = (ls.centers[i], ls.centers[j]);
                    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    assert!(d >= 4.0 * BLOB_RADIUS);
                }
            }
        }
    }

    #[test]
    fn distractor_cosine_exact() {
        let ls = generate_scene(Layout::Blocks, 5, 4, 1).unwrap();
        let adv = generate_adversarial_pair(&ls, 2, 0.8, 1).unwrap();
        assert_eq!(adv.n_clusters(), 6);
        assert!((dot(&adv.embeddings[2], &adv.embeddings[5]) - 0.8).abs() < 1e-6);
        assert!((dot(&adv.embeddings[5], &adv.embeddings[5]) - 1.0).abs() < 1e-9);
        assert_eq!(adv.labels.iter().filter(|&&l| l == 5).count(), 4);
    }

    #[test]
    fn noiseless_pixels_match_embeddings() {
        let ls = generate_scene_with_dim(Layout::Blocks, 3, 60, 16, 2).unwrap();
        let cam = orbit_camera(12.0, 0.3, 1.0, 32, 32, 1.0).unwrap();
        let map = generate_gt_features(&ls, &cam, 0.0, 0).unwrap();
        let raster = rasterize(&ls.scene, &cam).unwrap();
        let labels = pixel_labels(&ls, &raster);
        for (p, l) in labels.iter().enumerate() {
            let want = l.map_or(&ls.background, |k| &ls.embeddings[k]);
            for (a, b) in map.at(p).iter().zip(want) {
                assert!((f64::from(*a) - b).abs() < 1e-6);
            }
        }
        assert!(labels.iter().any(|l| l.is_some()));
    }

    #[test]
    fn views_draw_independent_noise() {
        let ls = generate_scene_with_dim(Layout::Blocks, 2, 40, 16, 2).unwrap();
        let cam = orbit_camera(10.0, 0.0, 1.0, 16, 16, 1.0).unwrap();
        let a = generate_gt_features(&ls, &cam, 0.1, view_seed(0, 0)).unwrap();
        let b = generate_gt_features(&ls, &cam, 0.1, view_seed(0, 1)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, generate_gt_features(&ls, &cam, 0.1, view_seed(0, 0)).unwrap());
    }

    #[test]
    fn oracle_mask_excludes_absent_target() {
        let ls = generate_scene_with_dim(Layout::Blocks, 2, 40, 8, 4).unwrap();
        // Looking away from the scene.
        let cam = Camera::look_at([0.0, 0.0, 5.0], [0.0, 0.0, 10.0], [0.0, 1.0, 0.0], 16, 16, 1.0).unwrap();
        assert_eq!(oracle_mask(&ls, &cam, 0).unwrap().count(), 0);
        assert!(oracle_mask(&ls, &cam, 7).is_err());
    }

    #[test]
    fn embedding_lookup() {
        let table = EmbeddingTable {
            dim: 2,
            entries: vec![EmbeddingEntry {
                text: "green grass".into(),
                embedding: vec![0.0, 1.0],
            }],
        };
        assert_eq!(table.lookup("green grass").unwrap(), vec![0.0, 1.0]);
        assert!(table.lookup("sky").is_err());
    }
}
