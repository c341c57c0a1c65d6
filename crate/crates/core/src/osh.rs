//! Semantic-space hyperplane: initialization from a text embedding, binary
//! classification of normalized features, and one-shot logistic refinement
//! against a pseudo-mask.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::image::Mask;

/// Halvings of the step size tried before a refinement step is abandoned.
const MAX_BACKTRACKS: usize = 60;
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperplane {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl Hyperplane {
    pub fn new(weight: Vec<f64>, bias: f64) -> Result<Self> {
        if weight.iter().chain([&bias]).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("hyperplane must be finite".into()));
        }
        if weight.iter().all(|&v| v == 0.0) {
            return Err(Error::Invalid("hyperplane weight must be non-zero".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    /// `weight · x + bias`.
    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature has {} components, hyperplane has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter().zip(&self.weight).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }
}

pub fn load_hyperplane(path: impl AsRef<Path>) -> Result<Hyperplane> {
    let h: Hyperplane = binio::read_json(path.as_ref())?;
    Hyperplane::new(h.weight, h.bias)
}

pub fn save_hyperplane(h: &Hyperplane, path: impl AsRef<Path>) -> Result<()> {
    binio::write_json(path.as_ref(), h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OshConfig {
    /// Weight `w` of the positive-class term.
    pub pos_weight: f64,
    pub steps: usize,
    pub lr: f64,
    /// Cosine threshold the initial bias derives from.
    pub init_threshold: f64,
}

impl Default for OshConfig {
    fn default() -> Self {
        Self {
            pos_weight: 0.1,
            steps: 500,
            lr: 5.0,
            init_threshold: 0.6,
        }
    }
}

impl OshConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_weight > 0.0) || !self.pos_weight.is_finite() {
            return Err(Error::Invalid("pos_weight must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Invalid("steps must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Invalid("lr must be positive".into()));
        }
        if !self.init_threshold.is_finite() {
            return Err(Error::Invalid("init_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Unit text direction with bias `-tau_q`, so a unit feature scores
/// positive exactly when its cosine to the text exceeds `tau_q`.
pub fn init_hyperplane(text_embedding: &[f64], tau_q: f64) -> Result<Hyperplane> {
    if text_embedding.is_empty() {
        return Err(Error::Invalid("empty text embedding".into()));
    }
    let n = text_embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Invalid("text embedding has zero norm".into()));
    }
    Hyperplane::new(text_embedding.iter().map(|v| v / n).collect(), -tau_q)
}

/// Strictly positive score. Callers pass L2-normalized features.
pub fn classify(h: &Hyperplane, feature: ArrayView1<f64>) -> Result<bool> {
    Ok(h.score(feature)? > 0.0)
}

/// Per-pixel semantic features, one row per pixel (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    pub height: usize,
    pub width: usize,
    pub features: Array2<f64>,
}

impl SemanticMap {
    pub fn new(height: usize, width: usize, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != height * width {
            return Err(Error::Shape(format!(
                "{} feature rows for a {height}x{width} map",
                features.nrows()
            )));
        }
        Ok(Self {
            height,
            width,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn check(&self, mask: &Mask, what: &str) -> Result<()> {
        if mask.height != self.height || mask.width != self.width {
            return Err(Error::Shape(format!(
                "{what} is {}x{} but the feature map is {}x{}",
                mask.height, mask.width, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Positive pixels: valid and classified positive.
pub fn classify_map(h: &Hyperplane, map: &SemanticMap, valid: &Mask) -> Result<Mask> {
    map.check(valid, "validity mask")?;
    if map.dim() != h.dim() {
        return Err(Error::Shape(format!(
            "feature map dim {} vs hyperplane dim {}",
            map.dim(),
            h.dim()
        )));
    }
    let w = ArrayView1::from(&h.weight[..]);
    let scores = map.features.dot(&w);
    let data = valid
        .data
        .iter()
        .zip(scores.iter())
        .map(|(&v, &s)| v && s + h.bias > 0.0)
        .collect();
    Mask::from_vec(map.height, map.width, data)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted logistic-regression problem with identical rows merged.
#[derive(Clone, Debug)]
pub struct OshProblem {
    /// Distinct feature rows.
    pub features: Array2<f64>,
    pub positive: Vec<bool>,
    /// Multiplicity of each row.
    pub counts: Vec<f64>,
    pub total: f64,
    pub pos_weight: f64,
}

impl OshProblem {
    /// Collects the valid pixels of `map` with their pseudo-labels.
    pub fn from_map(map: &SemanticMap, valid: &Mask, pseudo: &Mask, pos_weight: f64) -> Result<Self> {
        map.check(valid, "validity mask")?;
        map.check(pseudo, "pseudo-mask")?;
        let mut index: HashMap<(Vec<u64>, bool), usize> = HashMap::new();
        let mut rows: Vec<usize> = Vec::new();
        let mut positive = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for p in 0..map.height * map.width {
            if !valid.data[p] {
                continue;
            }
            let key = (map.features.row(p).iter().map(|v| v.to_bits()).collect(), pseudo.data[p]);
            match index.get(&key) {
                Some(&k) => counts[k] += 1.0,
                None => {
                    index.insert(key, rows.len());
                    rows.push(p);
                    positive.push(pseudo.data[p]);
                    counts.push(1.0);
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::Invalid("no valid pixels to refine the hyperplane on".into()));
        }
        let features = map.features.select(ndarray::Axis(0), &rows);
        let total = counts.iter().sum();
        Ok(Self {
            features,
            positive,
            counts,
            total,
            pos_weight,
        })
    }

    /// One row per sample, no merging.
    pub fn from_samples(features: Array2<f64>, positive: Vec<bool>, pos_weight: f64) -> Result<Self> {
        if features.nrows() != positive.len() || positive.is_empty() {
            return Err(Error::Shape(format!(
                "{} features for {} labels",
                features.nrows(),
                positive.len()
            )));
        }
        let n = positive.len();
        Ok(Self {
            features,
            positive,
            counts: vec![1.0; n],
            total: n as f64,
            pos_weight,
        })
    }

    /// Mean weighted binary cross-entropy and its gradient with respect to
    /// the weight vector and the bias.
    pub fn loss(&self, h: &Hyperplane) -> Result<(f64, Array1<f64>, f64)> {
        if h.dim() != self.features.ncols() {
            return Err(Error::Shape(format!(
                "hyperplane dim {} vs feature dim {}",
                h.dim(),
                self.features.ncols()
            )));
        }
        let w = ArrayView1::from(&h.weight[..]);
        let m = self.features.dot(&w) + h.bias;
        let mut loss = 0.0;
        let mut dm = Array1::zeros(m.len());
        for (i, &mi) in m.iter().enumerate() {
            let c = self.counts[i] / self.total;
            if self.positive[i] {
                loss += c * self.pos_weight * softplus(-mi);
                dm[i] = -c * self.pos_weight * sigmoid(-mi);
            } else {
                loss += c * softplus(mi);
                dm[i] = c * sigmoid(mi);
            }
        }
        let grad_w = self.features.t().dot(&dm);
        let grad_b = dm.sum();
        Ok((loss, grad_w, grad_b))
    }
}

/// Outcome of a refinement run.
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub hyperplane: Hyperplane,
    pub final_loss: f64,
    /// Loss before the first step and after every step.
    pub history: Vec<f64>,
}

/// Full-batch gradient descent on the weighted logistic loss from `h0`.
///
/// A step that would raise the loss is retried with half the step size, so
/// the loss never increases.
pub fn refine(h0: &Hyperplane, problem: &OshProblem, cfg: &OshConfig) -> Result<Refinement> {
    cfg.validate()?;
    let mut h = h0.clone();
    let (mut loss, mut gw, mut gb) = problem.loss(&h)?;
    let mut history = vec![loss];
    let mut lr = cfg.lr;
    for _ in 0..cfg.steps {
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let weight: Vec<f64> = h.weight.iter().zip(gw.iter()).map(|(w, g)| w - lr * g).collect();
            let cand = Hyperplane {
                weight,
                bias: h.bias - lr * gb,
            };
            let (l, cw, cb) = problem.loss(&cand)?;
            if l <= loss + MONOTONE_SLACK && l.is_finite() {
                h = cand;
                loss = l.min(loss);
                gw = cw;
                gb = cb;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        history.push(loss);
        if !accepted {
            break;
        }
    }
    let hyperplane = Hyperplane::new(h.weight, h.bias)
        .map_err(|_| Error::Numeric("hyperplane refinement collapsed to a zero weight".into()))?;
    Ok(Refinement {
        hyperplane,
        final_loss: loss,
        history,
    })
}

/// Refines `h0` against `pseudo` on the valid pixels of one view.
pub fn finetune_osh(
    h0: &Hyperplane,
    map: &SemanticMap,
    valid: &Mask,
    pseudo: &Mask,
    cfg: &OshConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    let problem = OshProblem::from_map(map, valid, pseudo, cfg.pos_weight)?;
    refine(h0, &problem, cfg)
}
