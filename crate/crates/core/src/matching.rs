//! Greedy prediction-to-ground-truth matching.
//!
//! Every metric is computed from two passes over a scene:
//!
//! * [`match_known`] runs the usual detection protocol for each known class:
//!   predictions in descending score order (ties keep input order) take the
//!   still-unmatched ground truth of their class with the highest IOU, if
//!   that IOU is strictly above the threshold.
//! * [`match_unknown`] matches `unknown`-labelled predictions against the
//!   ground truths of classes that are unknown at the evaluated task, and
//!   finds unknown objects that known-class predictions claim instead.
//!
//! Crowd regions never match anything. Ground-truth ties in IOU go to the
//! annotation that appears first in the input.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::model::{AnnotationId, CategoryId, GroundTruthBox, ImageId, Label, Prediction, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    /// Predictions scoring below this are dropped before matching.
    pub score_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_threshold: 0.5,
            score_threshold: 0.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou_threshold", self.iou_threshold),
            ("score_threshold", self.score_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// How A-OSE (and therefore WI) counts open-set errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AoseMode {
    /// Unknown ground-truth objects claimed by at least one known-class
    /// prediction.
    #[default]
    Objects,
    /// Known-class predictions that overlap an unknown object.
    Predictions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchEntry {
    /// Index into the prediction list.
    pub prediction: usize,
    pub score: f64,
    pub is_tp: bool,
}

/// Per-class match outcome. `entries` are in processing order (descending
/// score, stable).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassMatches {
    pub entries: Vec<MatchEntry>,
    /// Non-crowd ground truths of the class.
    pub gt_count: usize,
}

impl ClassMatches {
    pub fn tp(&self) -> usize {
        self.entries.iter().filter(|e| e.is_tp).count()
    }

    pub fn fp(&self) -> usize {
        self.entries.len() - self.tp()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchTable {
    pub classes: BTreeMap<CategoryId, ClassMatches>,
    /// Per image: known ground truth -> matching prediction.
    pub assignments: BTreeMap<ImageId, BTreeMap<AnnotationId, usize>>,
    /// Known non-crowd ground truths left unmatched.
    pub unmatched: Vec<AnnotationId>,
    /// Unmatched predictions absorbed by a crowd region; neither TP nor FP.
    pub ignored: Vec<usize>,
    pub true_positives: BTreeSet<usize>,
}

impl MatchTable {
    pub fn tp_k(&self) -> usize {
        self.true_positives.len()
    }

    pub fn fp_k(&self) -> usize {
        self.classes.values().map(ClassMatches::fp).sum()
    }

    pub fn known_gt_count(&self) -> usize {
        self.classes.values().map(|c| c.gt_count).sum()
    }

    pub fn is_true_positive(&self, prediction: usize) -> bool {
        self.true_positives.contains(&prediction)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownCounts {
    pub tp_u: usize,
    pub fn_u: usize,
    pub fn_u_star: usize,
    /// Unknown objects claimed by a known-class prediction.
    pub fp_o: usize,
    /// Known-class predictions overlapping an unknown object.
    pub fp_o_predictions: usize,
    pub total_unknown_gt: usize,
}

impl UnknownCounts {
    pub fn a_ose(&self, mode: AoseMode) -> usize {
        match mode {
            AoseMode::Objects => self.fp_o,
            AoseMode::Predictions => self.fp_o_predictions,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UnknownMatch {
    pub counts: UnknownCounts,
    /// Unknown ground truth -> `unknown`-labelled prediction that recalled it.
    pub assignments: BTreeMap<AnnotationId, usize>,
    /// Unknown ground truth -> highest score among the known-class
    /// predictions that claim it.
    pub confusion: BTreeMap<AnnotationId, f64>,
    /// Known-class predictions (index, score) overlapping an unknown object.
    pub confusing_predictions: Vec<(usize, f64)>,
}

impl UnknownMatch {
    /// A-OSE restricted to known-class predictions scoring at least
    /// `min_score`.
    pub fn a_ose_at(&self, min_score: f64, mode: AoseMode) -> usize {
        match mode {
            AoseMode::Objects => self.confusion.values().filter(|&&s| s >= min_score).count(),
            AoseMode::Predictions => self
                .confusing_predictions
                .iter()
                .filter(|(_, s)| *s >= min_score)
                .count(),
        }
    }
}

/// Sorts prediction indices by descending score, keeping input order on ties.
fn score_order(indices: &mut [usize], predictions: &[Prediction]) {
    indices.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));
}

/// Greedy assignment: each prediction (in `order`) takes the untaken
/// ground truth from `candidates[image]` with the highest IOU above
/// `threshold`. Returns the matched ground-truth index per position.
fn greedy_assign(
    order: &[usize],
    predictions: &[Prediction],
    ground_truths: &[GroundTruthBox],
    candidates: &HashMap<ImageId, Vec<usize>>,
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    order
        .iter()
        .map(|&p| {
            let pred = &predictions[p];
            let mut best: Option<(usize, f64)> = None;
            for &g in candidates.get(&pred.image_id).map(Vec::as_slice).unwrap_or(&[]) {
                if taken.contains(&g) {
                    continue;
                }
                let v = iou(&pred.bbox, &ground_truths[g].bbox);
                if v > threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let hit = best.map(|(g, _)| g);
            if let Some(g) = hit {
                taken.insert(g);
            }
            hit
        })
        .collect()
}

fn group_by_image(
    ground_truths: &[GroundTruthBox],
    mut keep: impl FnMut(&GroundTruthBox) -> bool,
) -> HashMap<ImageId, Vec<usize>> {
    let mut map: HashMap<ImageId, Vec<usize>> = HashMap::new();
    for (i, g) in ground_truths.iter().enumerate() {
        if keep(g) {
            map.entry(g.image_id).or_default().push(i);
        }
    }
    map
}

fn max_iou(pred: &Prediction, ground_truths: &[GroundTruthBox], group: Option<&Vec<usize>>) -> f64 {
    group
        .map(|v| {
            v.iter()
                .map(|&g| iou(&pred.bbox, &ground_truths[g].bbox))
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0)
}

/// Matches known-class predictions against known-class ground truths for
/// task `task` (1-based).
pub fn match_known(
    predictions: &[Prediction],
    ground_truths: &[GroundTruthBox],
    task_spec: &TaskSpec,
    task: usize,
    cfg: &MatchConfig,
) -> Result<MatchTable> {
    task_spec.check_index(task)?;
    cfg.validate()?;
    let known = task_spec.known(task)?;
    let mut table = MatchTable::default();

    for &class in &known {
        let regular = group_by_image(ground_truths, |g| g.category_id == class && !g.is_crowd);
        let crowd = group_by_image(ground_truths, |g| g.category_id == class && g.is_crowd);
        let mut order: Vec<usize> = predictions
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == Label::Class(class) && p.score >= cfg.score_threshold)
            .map(|(i, _)| i)
            .collect();
        score_order(&mut order, predictions);

        let hits = greedy_assign(&order, predictions, ground_truths, &regular, cfg.iou_threshold);
        let mut matched = BTreeSet::new();
        let mut entries = Vec::with_capacity(order.len());
        for (&p, hit) in order.iter().zip(hits) {
            let pred = &predictions[p];
            if let Some(g) = hit {
                let gt = &ground_truths[g];
                table
                    .assignments
                    .entry(gt.image_id)
                    .or_default()
                    .insert(gt.id, p);
                table.true_positives.insert(p);
                matched.insert(g);
                entries.push(MatchEntry { prediction: p, score: pred.score, is_tp: true });
                continue;
            }
            let crowd_iou = max_iou(pred, ground_truths, crowd.get(&pred.image_id));
            let regular_iou = max_iou(pred, ground_truths, regular.get(&pred.image_id));
            if crowd_iou > cfg.iou_threshold && crowd_iou >= regular_iou {
                table.ignored.push(p);
            } else {
                entries.push(MatchEntry { prediction: p, score: pred.score, is_tp: false });
            }
        }

        let mut gt_count = 0;
        for group in regular.values() {
            for &g in group {
                gt_count += 1;
                if !matched.contains(&g) {
                    table.unmatched.push(ground_truths[g].id);
                }
            }
        }
        table.classes.insert(class, ClassMatches { entries, gt_count });
    }
    table.unmatched.sort_unstable();
    table.ignored.sort_unstable();
    Ok(table)
}

/// Counts unknown-object recall and confusion for task `task`.
///
/// `known` must be the [`MatchTable`] of the same predictions, ground
/// truths and task: known-class predictions that are already true positives
/// never count as claiming an unknown object.
pub fn match_unknown(
    predictions: &[Prediction],
    ground_truths: &[GroundTruthBox],
    task_spec: &TaskSpec,
    task: usize,
    cfg: &MatchConfig,
    known: &MatchTable,
) -> Result<UnknownMatch> {
    task_spec.check_index(task)?;
    cfg.validate()?;
    let known_classes = task_spec.known(task)?;
    let unknown_classes = task_spec.unknown(task)?;
    let unknown_gts =
        group_by_image(ground_truths, |g| !g.is_crowd && unknown_classes.contains(&g.category_id));
    let total_unknown_gt: usize = unknown_gts.values().map(Vec::len).sum();

    let mut order: Vec<usize> = predictions
        .iter()
        .enumerate()
        .filter(|(_, p)| p.label.is_unknown() && p.score >= cfg.score_threshold)
        .map(|(i, _)| i)
        .collect();
    score_order(&mut order, predictions);
    let hits = greedy_assign(&order, predictions, ground_truths, &unknown_gts, cfg.iou_threshold);

    let mut result = UnknownMatch::default();
    let mut recalled = BTreeSet::new();
    for (&p, hit) in order.iter().zip(hits) {
        if let Some(g) = hit {
            result.assignments.insert(ground_truths[g].id, p);
            recalled.insert(g);
        }
    }

    // Known-class predictions that explain no known object.
    let confusers = predictions.iter().enumerate().filter(|(i, p)| {
        p.score >= cfg.score_threshold
            && p.label.class().is_some_and(|c| known_classes.contains(&c))
            && !known.is_true_positive(*i)
    });
    let mut confused_gts: BTreeSet<usize> = BTreeSet::new();
    for (i, pred) in confusers {
        let mut overlaps_any = false;
        for &g in unknown_gts.get(&pred.image_id).map(Vec::as_slice).unwrap_or(&[]) {
            if iou(&pred.bbox, &ground_truths[g].bbox) > cfg.iou_threshold {
                overlaps_any = true;
                confused_gts.insert(g);
                let best = result.confusion.entry(ground_truths[g].id).or_insert(pred.score);
                *best = best.max(pred.score);
            }
        }
        if overlaps_any {
            result.confusing_predictions.push((i, pred.score));
        }
    }

    let tp_u = recalled.len();
    result.counts = UnknownCounts {
        tp_u,
        fn_u: total_unknown_gt - tp_u,
        fn_u_star: confused_gts.difference(&recalled).count(),
        fp_o: confused_gts.len(),
        fp_o_predictions: result.confusing_predictions.len(),
        total_unknown_gt,
    };
    Ok(result)
}

/// Runs both passes.
pub fn match_scene(
    predictions: &[Prediction],
    ground_truths: &[GroundTruthBox],
    task_spec: &TaskSpec,
    task: usize,
    cfg: &MatchConfig,
) -> Result<(MatchTable, UnknownMatch)> {
    let known = match_known(predictions, ground_truths, task_spec, task, cfg)?;
    let unknown = match_unknown(predictions, ground_truths, task_spec, task, cfg, &known)?;
    Ok((known, unknown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::model::Task;

    const A: CategoryId = CategoryId(1);
    const B: CategoryId = CategoryId(2);
    const U: CategoryId = CategoryId(3);

    fn spec() -> TaskSpec {
        TaskSpec::new(
            vec![
                Task { name: "t1".into(), classes: vec![A, B] },
                Task { name: "t2".into(), classes: vec![U] },
            ],
            [A, B, U],
        )
        .unwrap()
    }

    fn gt(id: u64, class: CategoryId, b: BBox) -> GroundTruthBox {
        GroundTruthBox { id, image_id: 1, bbox: b, category_id: class, is_crowd: false }
    }

    fn pred(label: Label, score: f64, b: BBox) -> Prediction {
        Prediction::new(1, b, label, score)
    }

    fn unit() -> BBox {
        BBox::new(0., 0., 10., 10.).unwrap()
    }

    /// A box with the given IOU against `unit()` (shifted horizontally).
    fn shifted(target_iou: f64) -> BBox {
        // overlap width w over 10x10 boxes: iou = w / (20 - w)
        let w = 20.0 * target_iou / (1.0 + target_iou);
        BBox::new(10.0 - w, 0., 20.0 - w, 10.).unwrap()
    }

    #[test]
    fn single_true_positive() {
        let gts = [gt(1, A, unit())];
        let preds = [pred(Label::Class(A), 0.9, shifted(0.9))];
        let t = match_known(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        assert_eq!((t.tp_k(), t.fp_k()), (1, 0));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let gts = [gt(1, A, unit())];
        let preds = [
            pred(Label::Class(A), 0.6, shifted(0.9)),
            pred(Label::Class(A), 0.8, shifted(0.9)),
        ];
        let t = match_known(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        assert_eq!((t.tp_k(), t.fp_k()), (1, 1));
        assert!(t.is_true_positive(1));
        assert_eq!(t.assignments[&1][&1], 1);
    }

    #[test]
    fn no_predictions_leaves_everything_unmatched() {
        let gts = [gt(1, A, unit()), gt(2, B, unit())];
        let t = match_known(&[], &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        assert_eq!((t.tp_k(), t.fp_k()), (0, 0));
        assert_eq!(t.unmatched, vec![1, 2]);
    }

    #[test]
    fn iou_threshold_is_strict() {
        let gts = [gt(1, A, unit())];
        let b = BBox::new(0., 0., 5., 10.).unwrap(); // iou exactly 0.5
        assert_eq!(iou(&b, &unit()), 0.5);
        let t = match_known(&[pred(Label::Class(A), 0.9, b)], &gts, &spec(), 1, &MatchConfig::default())
            .unwrap();
        assert_eq!(t.tp_k(), 0);
    }

    #[test]
    fn crowd_regions_absorb_predictions() {
        let mut crowd = gt(1, A, unit());
        crowd.is_crowd = true;
        let preds = [pred(Label::Class(A), 0.9, shifted(0.8))];
        let t = match_known(&preds, &[crowd], &spec(), 1, &MatchConfig::default()).unwrap();
        assert_eq!((t.tp_k(), t.fp_k()), (0, 0));
        assert_eq!(t.ignored, vec![0]);
        assert_eq!(t.classes[&A].gt_count, 0);
    }

    #[test]
    fn task_index_is_checked() {
        assert!(match_known(&[], &[], &spec(), 3, &MatchConfig::default()).is_err());
        assert!(match_known(&[], &[], &spec(), 0, &MatchConfig::default()).is_err());
    }

    #[test]
    fn unknowns_recalled_by_unknown_predictions() {
        let far = unit().translate(100., 0.);
        let gts = [gt(1, U, unit()), gt(2, U, far)];
        let preds = [
            pred(Label::Unknown, 0.5, shifted(0.8)),
            pred(Label::Unknown, 0.6, far.translate(1., 0.)),
        ];
        let (_, u) = match_scene(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        let c = u.counts;
        assert_eq!((c.tp_u, c.fn_u, c.fn_u_star, c.fp_o), (2, 0, 0, 0));
    }

    #[test]
    fn misclassified_unknown() {
        let gts = [gt(1, U, unit())];
        let preds = [pred(Label::Class(A), 0.9, shifted(0.9))];
        let (_, u) = match_scene(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        let c = u.counts;
        assert_eq!((c.tp_u, c.fn_u, c.fn_u_star, c.fp_o), (0, 1, 1, 1));
    }

    #[test]
    fn recalled_and_misclassified_unknown() {
        let gts = [gt(1, U, unit())];
        let preds = [
            pred(Label::Unknown, 0.5, shifted(0.8)),
            pred(Label::Class(A), 0.7, shifted(0.8)),
        ];
        let (_, u) = match_scene(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        let c = u.counts;
        assert_eq!((c.tp_u, c.fn_u_star, c.fp_o), (1, 0, 1));
    }

    #[test]
    fn known_true_positives_do_not_claim_unknowns() {
        // the class-A box matches its own GT and also overlaps an unknown one
        let gts = [gt(1, A, unit()), gt(2, U, shifted(0.95))];
        let preds = [pred(Label::Class(A), 0.9, unit())];
        let (t, u) = match_scene(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        assert_eq!(t.tp_k(), 1);
        assert_eq!(u.counts.fp_o, 0);
        assert_eq!(u.counts.fn_u_star, 0);
    }

    #[test]
    fn zero_unknowns_give_zero_counts() {
        let gts = [gt(1, A, unit())];
        let preds = [pred(Label::Unknown, 0.9, unit())];
        let (_, u) = match_scene(&preds, &gts, &spec(), 2, &MatchConfig::default()).unwrap();
        assert_eq!(u.counts, UnknownCounts::default());
    }

    #[test]
    fn per_prediction_aose() {
        let gts = [gt(1, U, unit())];
        let preds = [
            pred(Label::Class(A), 0.9, shifted(0.9)),
            pred(Label::Class(B), 0.4, shifted(0.7)),
        ];
        let (_, u) = match_scene(&preds, &gts, &spec(), 1, &MatchConfig::default()).unwrap();
        assert_eq!(u.counts.a_ose(AoseMode::Objects), 1);
        assert_eq!(u.counts.a_ose(AoseMode::Predictions), 2);
        assert_eq!(u.a_ose_at(0.5, AoseMode::Predictions), 1);
        assert_eq!(u.a_ose_at(0.95, AoseMode::Objects), 0);
    }
}
