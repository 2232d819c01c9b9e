//! Proposal advisor: confirming unknown proposals with an auxiliary,
//! unsupervised proposal source and relabelling RPN anchors accordingly.
//!
//! The flow for one image is
//!
//! 1. [`select_potential_unknowns`]: the highest-objectness RPN proposals not
//!    assigned to a known object;
//! 2. [`confirm`]: keep a proposal's objectness only if some auxiliary box
//!    overlaps it with IOU strictly above `theta`, otherwise zero it;
//! 3. [`reassign_anchors`]: move the negative anchors behind confirmed
//!    proposals to the unknown-positive set;
//! 4. [`rpn_cls_loss`]: binary cross-entropy of the RPN objectness scores
//!    under the new anchor labels.
//!
//! Auxiliary proposals are read from files; producing them is up to the
//! caller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::io::{parse_json, read_text};

pub const DEFAULT_THETA: f64 = 0.7;
pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_AUX_TOP_K: usize = 50;
/// IOU above which an anchor is taken to be the origin of a proposal when
/// the proposal carries no anchor id.
pub const DEFAULT_ANCHOR_MATCH_IOU: f64 = 0.7;
/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Rpn,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
    pub source: ProposalSource,
    /// True when the RPN assigned this proposal to a known-class object.
    pub matched_known: bool,
    pub anchor_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmedProposal {
    pub proposal: Proposal,
    pub confirmed_score: f64,
    /// Best IOU against the auxiliary set (0 when it is empty).
    pub best_iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorLabel {
    Positive,
    Negative,
    UnknownPositive,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub id: Option<u64>,
    pub bbox: BBox,
    pub label: AnchorLabel,
    /// RPN objectness f(a) in (0, 1).
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn count(&self, label: AnchorLabel) -> usize {
        self.anchors.iter().filter(|a| a.label == label).count()
    }
}

/// The `k` highest-objectness proposals not matched to a known object,
/// in descending objectness (ties keep input order).
pub fn select_potential_unknowns(proposals: &[Proposal], k: usize) -> Result<Vec<Proposal>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut pool: Vec<&Proposal> = proposals.iter().filter(|p| !p.matched_known).collect();
    pool.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));
    Ok(pool.into_iter().take(k).cloned().collect())
}

/// Confirmed score = objectness if the best auxiliary IOU exceeds `theta`,
/// else 0.
pub fn confirm(potentials: &[Proposal], auxiliary: &[Proposal], theta: f64) -> Vec<ConfirmedProposal> {
    potentials
        .iter()
        .map(|p| {
            let best_iou = auxiliary
                .iter()
                .map(|a| iou(&p.bbox, &a.bbox))
                .fold(0.0, f64::max);
            let confirmed_score = if best_iou > theta { p.objectness } else { 0.0 };
            ConfirmedProposal {
                proposal: p.clone(),
                confirmed_score,
                best_iou,
            }
        })
        .collect()
}

/// Confirmed proposals with a nonzero score, best first, at most `top_k`
/// of them when given.
pub fn select_confirmed(confirmed: &[ConfirmedProposal], top_k: Option<usize>) -> Vec<ConfirmedProposal> {
    let mut kept: Vec<&ConfirmedProposal> = confirmed.iter().filter(|c| c.confirmed_score > 0.0).collect();
    kept.sort_by(|a, b| b.confirmed_score.total_cmp(&a.confirmed_score));
    kept.into_iter()
        .take(top_k.unwrap_or(usize::MAX))
        .cloned()
        .collect()
}

/// Relabels negative anchors behind confirmed proposals as unknown-positive.
///
/// A confirmed proposal with an `anchor_id` claims that anchor; otherwise
/// every anchor with IOU above `match_iou` is claimed. Only negatives move.
pub fn reassign_anchors(anchors: &AnchorSet, confirmed: &[ConfirmedProposal], match_iou: f64) -> AnchorSet {
    let active: Vec<&ConfirmedProposal> = confirmed.iter().filter(|c| c.confirmed_score > 0.0).collect();
    let anchors = anchors
        .anchors
        .iter()
        .map(|a| {
            let claimed = a.label == AnchorLabel::Negative
                && active.iter().any(|c| match (c.proposal.anchor_id, a.id) {
                    (Some(pid), Some(aid)) => pid == aid,
                    (Some(_), None) => false,
                    (None, _) => iou(&c.proposal.bbox, &a.bbox) > match_iou,
                });
            let mut out = a.clone();
            if claimed {
                out.label = AnchorLabel::UnknownPositive;
            }
            out
        })
        .collect();
    AnchorSet { anchors }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub loss: f64,
    pub positives: usize,
    pub unknown_positives: usize,
    pub negatives: usize,
    /// Contributing anchors whose score was clamped away from 0 or 1.
    pub clamped: usize,
}

/// Summed binary cross-entropy: positives and unknown-positives against
/// target 1, remaining negatives against target 0. Ignored anchors do not
/// contribute.
pub fn rpn_cls_loss(anchors: &AnchorSet) -> Result<LossReport> {
    let mut report = LossReport {
        loss: 0.0,
        positives: 0,
        unknown_positives: 0,
        negatives: 0,
        clamped: 0,
    };
    for (i, a) in anchors.anchors.iter().enumerate() {
        let target_one = match a.label {
            AnchorLabel::Ignore => continue,
            AnchorLabel::Positive => {
                report.positives += 1;
                true
            }
            AnchorLabel::UnknownPositive => {
                report.unknown_positives += 1;
                true
            }
            AnchorLabel::Negative => {
                report.negatives += 1;
                false
            }
        };
        let f = a
            .score
            .filter(|s| (0.0..=1.0).contains(s))
            .ok_or_else(|| {
                Error::Validation(format!("anchor {i} needs a score in [0, 1], got {:?}", a.score))
            })?;
        let clamped = f.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        if clamped != f {
            report.clamped += 1;
        }
        report.loss -= if target_one { clamped.ln() } else { (1.0 - clamped).ln() };
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Serialize, Deserialize)]
struct RawRpnProposal {
    bbox: [f64; 4],
    objectness: f64,
    #[serde(default)]
    matched_known: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAuxProposal {
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAnchor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_id: Option<u64>,
    bbox: [f64; 4],
    label: AnchorLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawConfirmed {
    bbox: [f64; 4],
    objectness: f64,
    confirmed_score: f64,
    best_iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_id: Option<u64>,
}

fn xywh(i: usize, b: [f64; 4]) -> Result<BBox> {
    BBox::from_xywh(b[0], b[1], b[2], b[3])
        .ok_or_else(|| Error::Validation(format!("entry {i}: invalid box {b:?}")))
}

fn unit_score(i: usize, what: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Validation(format!("entry {i}: {what} {v} outside [0, 1]")))
    }
}

pub fn parse_rpn_proposals(text: &str) -> Result<Vec<Proposal>> {
    let raw: Vec<RawRpnProposal> = parse_json(text)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Proposal {
                bbox: xywh(i, r.bbox)?,
                objectness: unit_score(i, "objectness", r.objectness)?,
                source: ProposalSource::Rpn,
                matched_known: r.matched_known,
                anchor_id: r.anchor_id,
            })
        })
        .collect()
}

pub fn load_rpn_proposals(path: impl AsRef<Path>) -> Result<Vec<Proposal>> {
    parse_rpn_proposals(&read_text(path.as_ref())?)
}

/// Parses auxiliary proposals and keeps the best `top_k`: by descending
/// score when every entry has one, otherwise in file order.
pub fn parse_auxiliary_proposals(text: &str, top_k: usize) -> Result<Vec<Proposal>> {
    let raw: Vec<RawAuxProposal> = parse_json(text)?;
    let scored = raw.iter().all(|r| r.score.is_some());
    let mut props = raw
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Proposal {
                bbox: xywh(i, r.bbox)?,
                objectness: match r.score {
                    Some(s) => unit_score(i, "score", s)?,
                    None => 1.0,
                },
                source: ProposalSource::Auxiliary,
                matched_known: false,
                anchor_id: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if scored {
        props.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));
    }
    props.truncate(top_k);
    Ok(props)
}

pub fn load_auxiliary_proposals(path: impl AsRef<Path>, top_k: usize) -> Result<Vec<Proposal>> {
    parse_auxiliary_proposals(&read_text(path.as_ref())?, top_k)
}

pub fn parse_anchors(text: &str) -> Result<AnchorSet> {
    let raw: Vec<RawAnchor> = parse_json(text)?;
    let anchors = raw
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Anchor {
                id: r.anchor_id,
                bbox: xywh(i, r.bbox)?,
                label: r.label,
                score: r.score.map(|s| unit_score(i, "score", s)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnchorSet { anchors })
}

pub fn load_anchors(path: impl AsRef<Path>) -> Result<AnchorSet> {
    parse_anchors(&read_text(path.as_ref())?)
}

pub fn anchors_to_string(anchors: &AnchorSet) -> String {
    let raw: Vec<RawAnchor> = anchors
        .anchors
        .iter()
        .map(|a| RawAnchor {
            anchor_id: a.id,
            bbox: a.bbox.to_xywh(),
            label: a.label,
            score: a.score,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("anchors always serialize")
}

pub fn confirmed_to_string(confirmed: &[ConfirmedProposal]) -> String {
    let raw: Vec<RawConfirmed> = confirmed
        .iter()
        .map(|c| RawConfirmed {
            bbox: c.proposal.bbox.to_xywh(),
            objectness: c.proposal.objectness,
            confirmed_score: c.confirmed_score,
            best_iou: c.best_iou,
            anchor_id: c.proposal.anchor_id,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("proposals always serialize")
}

pub fn parse_confirmed(text: &str) -> Result<Vec<ConfirmedProposal>> {
    let raw: Vec<RawConfirmed> = parse_json(text)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(ConfirmedProposal {
                proposal: Proposal {
                    bbox: xywh(i, r.bbox)?,
                    objectness: unit_score(i, "objectness", r.objectness)?,
                    source: ProposalSource::Rpn,
                    matched_known: false,
                    anchor_id: r.anchor_id,
                },
                confirmed_score: unit_score(i, "confirmed_score", r.confirmed_score)?,
                best_iou: r.best_iou,
            })
        })
        .collect()
}

pub fn load_confirmed(path: impl AsRef<Path>) -> Result<Vec<ConfirmedProposal>> {
    parse_confirmed(&read_text(path.as_ref())?)
}
