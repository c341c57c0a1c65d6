//! Segmentation metrics and the single-query evaluation loop.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::image::{load_mask, Mask};
use crate::osh::Hyperplane;
use crate::query::{fit_hyperplane, query_with_hyperplane, MaskSource, QueryOptions};
use crate::scene::{load_camera, Camera};
use crate::synth::load_embeddings;
use crate::trainer::TrainedModel;

struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

fn counts(pred: &Mask, gt: &Mask) -> Result<Counts> {
    pred.same_shape(gt)?;
    let mut c = Counts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `|pred ∧ gt| / |pred ∨ gt|`, 1 when both are empty.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = counts(pred, gt)?;
    let union = c.tp + c.fp + c.fn_;
    Ok(if union == 0 { 1.0 } else { c.tp as f64 / union as f64 })
}

/// `(TP + TN) / total`, 1 for zero-sized masks.
pub fn pixel_accuracy(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = counts(pred, gt)?;
    let total = c.tp + c.fp + c.fn_ + c.tn;
    Ok(if total == 0 { 1.0 } else { (c.tp + c.tn) as f64 / total as f64 })
}

/// `TP / (TP + FP)`. Without predicted positives: 1 if the ground truth is
/// empty too, 0 otherwise.
pub fn precision(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = counts(pred, gt)?;
    let predicted = c.tp + c.fp;
    Ok(if predicted > 0 {
        c.tp as f64 / predicted as f64
    } else if c.fn_ == 0 {
        1.0
    } else {
        0.0
    })
}

/// One entry of a test-set manifest; paths resolve against the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub camera: PathBuf,
    pub gt_mask: PathBuf,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_mask: Option<PathBuf>,
    /// View the pseudo-mask was produced from; the case camera when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_camera: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSet {
    /// Embedding table used to look up each case's text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub cases: Vec<CaseSpec>,
}

/// A fully loaded evaluation case.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub name: String,
    pub camera: Camera,
    pub gt_mask: Mask,
    pub text: String,
    pub embedding: Vec<f64>,
    pub pseudo: Option<MaskSource>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn case_error(i: usize, e: Error) -> Error {
    Error::Invalid(format!("case {i}: {e}"))
}

/// Loads every case of a test-set manifest. `embeddings` overrides the table
/// named in the manifest.
pub fn load_testset(path: impl AsRef<Path>, embeddings: Option<&Path>) -> Result<Vec<EvalCase>> {
    let path = path.as_ref();
    let set: TestSet = binio::read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let table_path = match (embeddings, &set.embeddings) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => resolve(base, p),
        (None, None) => return Err(Error::Invalid("test set names no embedding table".into())),
    };
    let table = load_embeddings(&table_path)?;
    set.cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let camera = load_camera(resolve(base, &c.camera)).map_err(|e| case_error(i, e))?;
            let gt_mask = load_mask(resolve(base, &c.gt_mask)).map_err(|e| case_error(i, e))?;
            if gt_mask.height != camera.height as usize || gt_mask.width != camera.width as usize {
                return Err(case_error(
                    i,
                    Error::Shape(format!(
                        "mask {}x{} vs camera {}x{}",
                        gt_mask.height, gt_mask.width, camera.height, camera.width
                    )),
                ));
            }
            let embedding = table.lookup(&c.text).map_err(|e| case_error(i, e))?;
            let pseudo = match &c.pseudo_mask {
                Some(m) => Some(MaskSource {
                    mask: load_mask(resolve(base, m)).map_err(|e| case_error(i, e))?,
                    camera: match &c.pseudo_camera {
                        Some(p) => Some(load_camera(resolve(base, p)).map_err(|e| case_error(i, e))?),
                        None => None,
                    },
                }),
                None => None,
            };
            Ok(EvalCase {
                name: format!("{}:{}", c.camera.display(), c.text),
                camera,
                gt_mask,
                text: c.text.clone(),
                embedding,
                pseudo,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub name: String,
    pub text: String,
    pub iou: f64,
    pub pixel_accuracy: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cases: Vec<CaseMetrics>,
    pub miou: f64,
    pub mpa: f64,
    pub mp: f64,
}

impl Metrics {
    /// Unweighted means over `cases`.
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        let n = cases.len().max(1) as f64;
        let mean = |f: fn(&CaseMetrics) -> f64| cases.iter().map(f).sum::<f64>() / n;
        Self {
            miou: mean(|c| c.iou),
            mpa: mean(|c| c.pixel_accuracy),
            mp: mean(|c| c.precision),
            cases,
        }
    }

    /// Same metrics rounded to 4 decimal places for reporting.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| (v * 1e4).round() / 1e4;
        Self {
            cases: self
                .cases
                .iter()
                .map(|c| CaseMetrics {
                    name: c.name.clone(),
                    text: c.text.clone(),
                    iou: r(c.iou),
                    pixel_accuracy: r(c.pixel_accuracy),
                    precision: r(c.precision),
                })
                .collect(),
            miou: r(self.miou),
            mpa: r(self.mpa),
            mp: r(self.mp),
        }
    }
}

pub fn score_case(name: &str, text: &str, pred: &Mask, gt: &Mask) -> Result<CaseMetrics> {
    Ok(CaseMetrics {
        name: name.to_string(),
        text: text.to_string(),
        iou: iou(pred, gt)?,
        pixel_accuracy: pixel_accuracy(pred, gt)?,
        precision: precision(pred, gt)?,
    })
}

/// Runs one query per case and aggregates the metrics. A text's hyperplane
/// is fitted on its first case and reused for later cases with that text.
pub fn evaluate(model: &TrainedModel, cases: &[EvalCase], opts: &QueryOptions) -> Result<Metrics> {
    let mut planes: HashMap<&str, Hyperplane> = HashMap::new();
    let mut out = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let h = match planes.get(case.text.as_str()) {
            Some(h) => h.clone(),
            None => {
                let (h, _) = fit_hyperplane(model, &case.camera, &case.embedding, case.pseudo.as_ref(), opts)
                    .map_err(|e| case_error(i, e))?;
                planes.insert(&case.text, h.clone());
                h
            }
        };
        let result = query_with_hyperplane(model, &case.camera, &h).map_err(|e| case_error(i, e))?;
        out.push(score_case(&case.name, &case.text, &result.mask, &case.gt_mask)?);
    }
    Ok(Metrics::from_cases(out))
}

pub fn save_report(metrics: &Metrics, path: impl AsRef<Path>) -> Result<()> {
    binio::write_json(path.as_ref(), &metrics.rounded())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> Mask {
        let mut m = Mask::new(h, w);
        for &i in on {
            m.data[i] = true;
        }
        m
    }

    #[test]
    fn iou_cases() {
        let a = mask(2, 2, &[0, 1]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &mask(2, 2, &[2, 3])).unwrap(), 0.0);
        let block = mask(3, 3, &[0, 1, 3, 4]);
        let inner = mask(3, 3, &[0, 1]);
        assert_eq!(iou(&block, &inner).unwrap(), 0.5);
        assert_eq!(iou(&Mask::new(2, 2), &Mask::new(2, 2)).unwrap(), 1.0);
        assert!(iou(&a, &Mask::new(1, 4)).is_err());
    }

    #[test]
    fn accuracy_and_precision_cases() {
        let gt = mask(2, 2, &[0, 1]);
        assert_eq!(pixel_accuracy(&gt, &gt).unwrap(), 1.0);
        assert_eq!(precision(&gt, &gt).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&mask(2, 2, &[2, 3]), &gt).unwrap(), 0.0);
        let pred = mask(2, 4, &[0, 1, 2, 3]);
        let gt = mask(2, 4, &[2, 3, 6]);
        assert_eq!(precision(&pred, &gt).unwrap(), 0.5);
        assert_eq!(precision(&Mask::new(2, 2), &Mask::new(2, 2)).unwrap(), 1.0);
        assert_eq!(precision(&Mask::new(2, 2), &mask(2, 2, &[1])).unwrap(), 0.0);
    }

    #[test]
    fn means_are_unweighted() {
        let c = |v: f64| CaseMetrics {
            name: String::new(),
            text: String::new(),
            iou: v,
            pixel_accuracy: v,
            precision: v,
        };
        let m = Metrics::from_cases(vec![c(1.0), c(0.0)]);
        assert_eq!(m.miou, 0.5);
        let one = Metrics::from_cases(vec![c(0.25)]);
        assert_eq!(one.miou, 0.25);
    }

    #[test]
    fn rounding_to_four_places() {
        let m = Metrics::from_cases(vec![CaseMetrics {
            name: "a".into(),
            text: "t".into(),
            iou: 2.0 / 3.0,
            pixel_accuracy: 1.0,
            precision: 0.123456,
        }]);
        let r = m.rounded();
        assert_eq!(r.miou, 0.6667);
        assert_eq!(r.cases[0].precision, 0.1235);
    }
}
