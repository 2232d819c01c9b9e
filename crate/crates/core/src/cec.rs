//! Class-specific expelling calibration.
//!
//! Calibration looks at training-set predictions that tightly overlap a
//! ground-truth box of class `c` (IOU strictly above `phi`) and records the
//! mean class-`c` score `m_c` of those predictions. At test time a
//! prediction keeps its class-`c` score only while
//!
//! ```text
//! score_c - alpha * m_c > 0
//! ```
//!
//! Scores that fail are zeroed. The final label is the best surviving class,
//! or `unknown` with score 1 when nothing survives.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::io::{read_json, write_json};
use crate::manifest::digest_json;
use crate::metrics::{evaluate, EvalConfig};
use crate::model::{CategoryId, Dataset, GroundTruthBox, Label, Prediction, TaskSpec};

pub const DEFAULT_PHI: f64 = 0.9;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    /// Mean confident score; `None` when no training pair qualified.
    pub m: Option<f64>,
    /// Number of qualifying (prediction, ground truth) pairs.
    #[serde(rename = "M")]
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpellingProfile {
    #[serde(default = "profile_version")]
    pub version: u32,
    pub phi: f64,
    pub alpha: f64,
    pub classes: BTreeMap<CategoryId, ClassProfile>,
    #[serde(default)]
    pub config_digest: String,
}

fn profile_version() -> u32 {
    PROFILE_VERSION
}

impl ExpellingProfile {
    pub fn new(phi: f64, alpha: f64, classes: BTreeMap<CategoryId, ClassProfile>) -> Self {
        let mut p = ExpellingProfile {
            version: PROFILE_VERSION,
            phi,
            alpha,
            classes,
            config_digest: String::new(),
        };
        p.config_digest = p.digest();
        p
    }

    fn digest(&self) -> String {
        digest_json(&serde_json::json!({
            "phi": self.phi,
            "alpha": self.alpha,
            "classes": self.classes.keys().collect::<Vec<_>>(),
        }))
    }

    /// The same calibration with a different expelling degree.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self::new(self.phi, alpha, self.classes.clone())
    }

    /// `alpha * m_c`, or 0 for classes that were never observed confidently.
    pub fn expelling_term(&self, class: CategoryId) -> f64 {
        self.classes
            .get(&class)
            .and_then(|p| p.m)
            .map_or(0.0, |m| self.alpha * m)
    }

    pub fn never_expelling(&self) -> Vec<CategoryId> {
        self.classes
            .iter()
            .filter(|(_, p)| p.m.is_none())
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::Validation(format!("phi = {} outside [0, 1]", self.phi)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("alpha = {} must be >= 0", self.alpha)));
        }
        for (c, p) in &self.classes {
            match p.m {
                Some(m) if !(0.0..=1.0).contains(&m) => {
                    return Err(Error::Validation(format!("class {c}: m = {m} outside [0, 1]")))
                }
                Some(_) if p.pairs == 0 => {
                    return Err(Error::Validation(format!("class {c}: m given with M = 0")))
                }
                None if p.pairs > 0 => {
                    return Err(Error::Validation(format!("class {c}: M > 0 but m missing")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let profile: ExpellingProfile = read_json(path.as_ref())?;
        if profile.version != PROFILE_VERSION {
            return Err(Error::Validation(format!(
                "unsupported profile version {}",
                profile.version
            )));
        }
        profile.validate()?;
        Ok(profile)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// The training score that enters the class-`c` mean for a qualifying pair:
/// the paired training prediction's own class-`c` score.
fn pair_score(pred: &Prediction, index: usize, class: CategoryId) -> Result<f64> {
    let scores = pred.scores.as_ref().ok_or_else(|| {
        Error::Validation(format!("training prediction {index} has no score vector"))
    })?;
    scores.get(&class).copied().ok_or_else(|| {
        Error::Validation(format!(
            "training prediction {index} has no score for class {class}"
        ))
    })
}

/// Builds the expelling profile for `classes` from training predictions and
/// their ground truth. Pairs are formed within an image; crowd regions are
/// skipped.
pub fn calibrate(
    train_predictions: &[Prediction],
    train_ground_truths: &[GroundTruthBox],
    classes: &BTreeSet<CategoryId>,
    phi: f64,
    alpha: f64,
) -> Result<ExpellingProfile> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidArgument(format!("phi = {phi} outside [0, 1]")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be >= 0")));
    }
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, p) in train_predictions.iter().enumerate() {
        by_image.entry(p.image_id).or_default().push(i);
    }

    let mut samples: BTreeMap<CategoryId, Vec<f64>> =
        classes.iter().map(|&c| (c, Vec::new())).collect();
    for gt in train_ground_truths {
        if gt.is_crowd {
            continue;
        }
        let Some(bucket) = samples.get_mut(&gt.category_id) else {
            continue;
        };
        for &i in by_image.get(&gt.image_id).map(Vec::as_slice).unwrap_or(&[]) {
            let pred = &train_predictions[i];
            if iou(&pred.bbox, &gt.bbox) > phi {
                bucket.push(pair_score(pred, i, gt.category_id)?);
            }
        }
    }

    let profiles = samples
        .into_iter()
        .map(|(c, mut v)| {
            // summing in sorted order makes the mean independent of file order
            v.sort_by(f64::total_cmp);
            let m = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            if m.is_none() {
                log::warn!("class {c}: no training prediction overlaps its boxes above phi = {phi}; it never expels");
            }
            (c, ClassProfile { m, pairs: v.len() })
        })
        .collect();
    Ok(ExpellingProfile::new(phi, alpha, profiles))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPrediction {
    pub original: Prediction,
    /// Known-class scores after expelling: each is the original score or 0.
    pub surviving: BTreeMap<CategoryId, f64>,
    pub label: Label,
    pub score: f64,
}

impl CalibratedPrediction {
    /// True when calibration turned a class prediction into `unknown`.
    pub fn minted_unknown(&self) -> bool {
        self.label.is_unknown() && !self.original.label.is_unknown()
    }

    pub fn to_prediction(&self) -> Prediction {
        Prediction {
            image_id: self.original.image_id,
            bbox: self.original.bbox,
            label: self.label,
            score: self.score,
            scores: self.original.scores.as_ref().map(|_| self.surviving.clone()),
        }
    }
}

/// Re-allocates one prediction's known-class scores.
///
/// Predictions already labelled `unknown` pass through unchanged. Classes in
/// the score vector that the profile does not cover are never expelled.
pub fn expel(prediction: &Prediction, profile: &ExpellingProfile) -> Result<CalibratedPrediction> {
    if prediction.label.is_unknown() {
        return Ok(CalibratedPrediction {
            original: prediction.clone(),
            surviving: prediction.scores.clone().unwrap_or_default(),
            label: Label::Unknown,
            score: prediction.score,
        });
    }
    let scores = prediction.scores.as_ref().ok_or_else(|| {
        Error::Validation(format!(
            "prediction on image {} has no score vector",
            prediction.image_id
        ))
    })?;
    if let Some(missing) = profile.classes.keys().find(|c| !scores.contains_key(c)) {
        return Err(Error::Validation(format!(
            "prediction on image {} has no score for profiled class {missing}",
            prediction.image_id
        )));
    }

    let surviving: BTreeMap<CategoryId, f64> = scores
        .iter()
        .map(|(&c, &s)| {
            let indicator = s - profile.expelling_term(c);
            (c, if indicator > 0.0 { s } else { 0.0 })
        })
        .collect();

    // ties go to the original label, then to the lowest class id
    let original = prediction.label.class();
    let best = surviving
        .iter()
        .filter(|(_, &s)| s > 0.0)
        .fold(None::<(CategoryId, f64)>, |best, (&c, &s)| match best {
            Some((bc, bs)) if bs > s || (bs == s && Some(c) != original) => Some((bc, bs)),
            _ => Some((c, s)),
        });

    let (label, score) = match best {
        Some((c, s)) => (Label::Class(c), s),
        None => (Label::Unknown, 1.0),
    };
    Ok(CalibratedPrediction {
        original: prediction.clone(),
        surviving,
        label,
        score,
    })
}

pub fn apply_batch(predictions: &[Prediction], profile: &ExpellingProfile) -> Result<Vec<CalibratedPrediction>> {
    predictions.iter().map(|p| expel(p, profile)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub map_known: Option<f64>,
    /// Known-class mAP lost relative to the uncalibrated predictions.
    pub map_drop: Option<f64>,
    pub udp: Option<f64>,
    pub udr: Option<f64>,
    pub wi: Option<f64>,
    pub a_ose: usize,
    pub selected: bool,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "alpha,mAP_known,mAP_drop,UDP,UDR,WI,A-OSE,selected";

    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.alpha,
            cell(self.map_known),
            cell(self.map_drop),
            cell(self.udp),
            cell(self.udr),
            cell(self.wi),
            self.a_ose,
            self.selected
        )
    }
}

/// Evaluates the calibrated validation predictions for each `alpha` and
/// marks the largest alpha whose known-class mAP drop stays within
/// `max_drop` (absolute, mAP in [0, 1]).
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    profile: &ExpellingProfile,
    alphas: &[f64],
    val: &Dataset,
    val_predictions: &[Prediction],
    task_spec: &TaskSpec,
    task: usize,
    cfg: &EvalConfig,
    max_drop: f64,
) -> Result<Vec<SweepRow>> {
    let baseline = evaluate(val, val_predictions, task_spec, task, cfg)?.map_both;
    let mut rows = alphas
        .iter()
        .map(|&alpha| {
            let calibrated: Vec<Prediction> = apply_batch(val_predictions, &profile.with_alpha(alpha))?
                .iter()
                .map(CalibratedPrediction::to_prediction)
                .collect();
            let report = evaluate(val, &calibrated, task_spec, task, cfg)?;
            let map_drop = match (baseline, report.map_both) {
                (Some(b), Some(m)) => Some(b - m),
                _ => None,
            };
            Ok(SweepRow {
                alpha,
                map_known: report.map_both,
                map_drop,
                udp: report.udp,
                udr: report.udr,
                wi: report.wi,
                a_ose: report.a_ose,
                selected: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.map_drop.is_some_and(|d| d <= max_drop))
        .max_by(|(_, a), (_, b)| a.alpha.total_cmp(&b.alpha))
        .map(|(i, _)| i);
    if let Some(i) = chosen {
        rows[i].selected = true;
    }
    Ok(rows)
}
