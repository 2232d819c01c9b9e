//! The open-world metric suite: per-class AP and mAP splits, unknown recall,
//! Wilderness Impact, A-OSE, UDR and UDP.
//!
//! Ratios that have an empty denominator are reported as `None` (`null` in
//! JSON, an empty cell in CSV), never as zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{
    match_scene, AoseMode, ClassMatches, MatchConfig, MatchEntry, MatchTable, UnknownCounts,
    UnknownMatch,
};
use crate::model::{CategoryId, Dataset, Prediction, TaskSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Area under the monotone precision envelope, all recall points.
    #[default]
    Continuous,
    /// PASCAL VOC 2007 11-point interpolation.
    Voc11,
}

/// Average precision of one class from its match entries.
///
/// Returns `None` when the class has no ground truth.
pub fn average_precision(entries: &[MatchEntry], gt_count: usize, method: ApMethod) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut sorted: Vec<&MatchEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut tp = 0usize;
    let mut points = Vec::with_capacity(sorted.len());
    for (n, e) in sorted.iter().enumerate() {
        tp += usize::from(e.is_tp);
        let recall = tp as f64 / gt_count as f64;
        let precision = tp as f64 / (n + 1) as f64;
        points.push((recall, precision));
    }
    // precision envelope, right to left
    let mut envelope = vec![0.0; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        envelope[i] = running;
    }

    let ap = match method {
        ApMethod::Continuous => {
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (&(recall, _), &p) in points.iter().zip(&envelope) {
                area += (recall - prev_recall) * p;
                prev_recall = recall;
            }
            area
        }
        ApMethod::Voc11 => {
            (0..=10)
                .map(|t| {
                    let r = t as f64 / 10.0;
                    points
                        .iter()
                        .zip(&envelope)
                        .find(|((recall, _), _)| *recall >= r)
                        .map_or(0.0, |(_, &p)| p)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Some(ap)
}

/// Mean of the defined values, summed in sorted order so that relabelling
/// classes cannot change the result.
fn mean_defined<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let mut defined: Vec<f64> = values.filter_map(|v| *v).collect();
    defined.sort_by(f64::total_cmp);
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// The known-class operating point at which Wilderness Impact is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WiOperatingPoint {
    pub recall_level: f64,
    /// Lowest retained score; `None` when nothing is retained.
    pub score_threshold: Option<f64>,
    /// Aggregate known-class recall of the retained predictions.
    pub recall: Option<f64>,
    /// False when `recall_level` is unreachable and the point falls back to
    /// the maximum attainable recall.
    pub recall_reached: bool,
    pub tp_k: usize,
    pub fp_k: usize,
    /// A-OSE over the retained known-class predictions.
    pub a_ose: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WildernessImpact {
    pub value: Option<f64>,
    pub point: WiOperatingPoint,
}

/// WI = A-OSE / (TP_k + FP_k), with all three counts taken over the
/// known-class predictions retained at the score threshold where aggregate
/// known recall first reaches `recall_level`.
pub fn wilderness_impact(
    table: &MatchTable,
    unknown: &UnknownMatch,
    recall_level: f64,
    mode: AoseMode,
) -> WildernessImpact {
    let mut pooled: Vec<&MatchEntry> = table.classes.values().flat_map(|c| &c.entries).collect();
    pooled.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.prediction.cmp(&b.prediction)));
    let total_gt = table.known_gt_count();

    let mut cutoff = None;
    let mut tp = 0usize;
    if total_gt > 0 {
        for e in &pooled {
            tp += usize::from(e.is_tp);
            if tp as f64 / total_gt as f64 >= recall_level {
                cutoff = Some(e.score);
                break;
            }
        }
    }
    let recall_reached = cutoff.is_some();
    let threshold = cutoff.or_else(|| pooled.last().map(|e| e.score));

    let (tp_k, fp_k) = match threshold {
        Some(s) => pooled
            .iter()
            .filter(|e| e.score >= s)
            .fold((0, 0), |(t, f), e| if e.is_tp { (t + 1, f) } else { (t, f + 1) }),
        None => (0, 0),
    };
    // with no retained known predictions there is nothing to confuse
    let a_ose = threshold.map_or(0, |s| unknown.a_ose_at(s, mode));
    let point = WiOperatingPoint {
        recall_level,
        score_threshold: threshold,
        recall: (total_gt > 0).then(|| tp_k as f64 / total_gt as f64),
        recall_reached,
        tp_k,
        fp_k,
        a_ose,
    };
    let value = wi_ratio(a_ose, tp_k + fp_k);
    WildernessImpact { value, point }
}

/// `a_ose / retained`, or `None` for an empty denominator.
pub fn wi_ratio(a_ose: usize, retained: usize) -> Option<f64> {
    (retained > 0).then(|| a_ose as f64 / retained as f64)
}

/// Unknown detection recall: (TP_u + FN_u*) / (TP_u + FN_u).
pub fn udr(counts: &UnknownCounts) -> Option<f64> {
    let denom = counts.tp_u + counts.fn_u;
    (denom > 0).then(|| (counts.tp_u + counts.fn_u_star) as f64 / denom as f64)
}

/// Unknown detection precision: TP_u / (TP_u + FN_u*).
pub fn udp(counts: &UnknownCounts) -> Option<f64> {
    let denom = counts.tp_u + counts.fn_u_star;
    (denom > 0).then(|| counts.tp_u as f64 / denom as f64)
}

/// Unknown recall: TP_u over all unknown ground truths.
pub fn unknown_recall(counts: &UnknownCounts) -> Option<f64> {
    (counts.total_unknown_gt > 0).then(|| counts.tp_u as f64 / counts.total_unknown_gt as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub matching: MatchConfig,
    pub wi_recall: f64,
    pub ap_method: ApMethod,
    pub aose_mode: AoseMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            matching: MatchConfig::default(),
            wi_recall: 0.8,
            ap_method: ApMethod::Continuous,
            aose_mode: AoseMode::Objects,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: usize,
    pub task_name: String,
    /// AP per known class; `None` for classes without ground truth.
    pub ap: BTreeMap<CategoryId, Option<f64>>,
    /// Recall per known class over all retained predictions.
    pub recall: BTreeMap<CategoryId, Option<f64>>,
    pub map_previous: Option<f64>,
    pub map_current: Option<f64>,
    pub map_both: Option<f64>,
    pub ur: Option<f64>,
    pub wi: Option<f64>,
    pub a_ose: usize,
    pub udr: Option<f64>,
    pub udp: Option<f64>,
    pub tp_k: usize,
    pub fp_k: usize,
    pub counts: UnknownCounts,
    pub wi_point: WiOperatingPoint,
    pub config: EvalConfig,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "task,WI,A-OSE,mAP_prev,mAP_cur,mAP_both,UR,UDR,UDP";

    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.task,
            cell(self.wi),
            self.a_ose,
            cell(self.map_previous),
            cell(self.map_current),
            cell(self.map_both),
            cell(self.ur),
            cell(self.udr),
            cell(self.udp),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Evaluates `predictions` against `dataset` for task `task` (1-based).
pub fn evaluate(
    dataset: &Dataset,
    predictions: &[Prediction],
    task_spec: &TaskSpec,
    task: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    task_spec.check_index(task)?;
    if !(0.0..=1.0).contains(&cfg.wi_recall) {
        return Err(Error::InvalidArgument(format!(
            "wi_recall = {} is outside [0, 1]",
            cfg.wi_recall
        )));
    }
    let mut warnings = Vec::new();
    let images = dataset.image_ids();
    let foreign = predictions
        .iter()
        .filter(|p| !images.contains(&p.image_id))
        .count();
    if foreign > 0 {
        warnings.push(format!(
            "{foreign} predictions refer to images absent from the ground truth"
        ));
    }

    let (table, unknown) =
        match_scene(predictions, &dataset.annotations, task_spec, task, &cfg.matching)?;

    let ap: BTreeMap<CategoryId, Option<f64>> = table
        .classes
        .iter()
        .map(|(&c, m)| (c, average_precision(&m.entries, m.gt_count, cfg.ap_method)))
        .collect();
    let recall = table
        .classes
        .iter()
        .map(|(&c, m): (&CategoryId, &ClassMatches)| {
            (c, (m.gt_count > 0).then(|| m.tp() as f64 / m.gt_count as f64))
        })
        .collect();
    let over = |classes: &BTreeSet<CategoryId>| mean_defined(classes.iter().filter_map(|c| ap.get(c)));
    let map_previous = over(&task_spec.known(task - 1)?);
    let map_current = over(&task_spec.current(task)?);
    let map_both = over(&task_spec.known(task)?);

    let wi = wilderness_impact(&table, &unknown, cfg.wi_recall, cfg.aose_mode);
    if wi.value.is_none() {
        warnings.push("WI undefined: no known-class predictions retained".into());
    } else if !wi.point.recall_reached {
        warnings.push(format!(
            "known recall never reaches {}; WI measured at maximum recall",
            cfg.wi_recall
        ));
    }
    for w in &warnings {
        log::warn!("task {task}: {w}");
    }

    let counts = unknown.counts;
    Ok(EvalReport {
        task,
        task_name: task_spec.tasks()[task - 1].name.clone(),
        ap,
        recall,
        map_previous,
        map_current,
        map_both,
        ur: unknown_recall(&counts),
        wi: wi.value,
        a_ose: counts.a_ose(cfg.aose_mode),
        udr: udr(&counts),
        udp: udp(&counts),
        tp_k: table.tp_k(),
        fp_k: table.fp_k(),
        counts,
        wi_point: wi.point,
        config: *cfg,
        warnings,
    })
}
