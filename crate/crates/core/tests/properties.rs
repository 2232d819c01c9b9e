use std::collections::{BTreeMap, BTreeSet};

use owod::cec::{calibrate, expel, ExpellingProfile};
use owod::matching::{match_known, match_scene, MatchConfig};
use owod::metrics::{average_precision, udp, udr, unknown_recall, ApMethod};
use owod::pad::{confirm, rpn_cls_loss, Anchor, AnchorLabel, AnchorSet, Proposal, ProposalSource};
use owod::{BBox, CategoryId, GroundTruthBox, Label, Prediction, Task, TaskSpec};
use proptest::prelude::*;

fn spec() -> TaskSpec {
    TaskSpec::new(
        vec![
            Task { name: "a".into(), classes: vec![CategoryId(1), CategoryId(2)] },
            Task { name: "b".into(), classes: vec![CategoryId(3), CategoryId(4)] },
        ],
        (1..=4).map(CategoryId),
    )
    .unwrap()
}

/// Boxes near one of four anchor positions so overlaps are common.
fn bbox() -> impl Strategy<Value = BBox> {
    (0..4u8, 0..4u8, 0..4u8).prop_map(|(cell, dx, dy)| {
        let (x, y) = (f64::from(cell % 2) * 6.0 + f64::from(dx), f64::from(cell / 2) * 6.0 + f64::from(dy));
        BBox::new(x, y, x + 8.0, y + 8.0).unwrap()
    })
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![(1..=4u32).prop_map(|c| Label::Class(CategoryId(c))), Just(Label::Unknown)]
}

fn gts(max: usize, crowd: bool) -> impl Strategy<Value = Vec<GroundTruthBox>> {
    prop::collection::vec((0..2u64, bbox(), 1..=4u32, prop::bool::weighted(if crowd { 0.1 } else { 0.0 })), 0..max)
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (image_id, bbox, c, is_crowd))| GroundTruthBox {
                    id: i as u64 + 1,
                    image_id,
                    bbox,
                    category_id: CategoryId(c),
                    is_crowd,
                })
                .collect()
        })
}

fn pred() -> impl Strategy<Value = Prediction> {
    (0..2u64, bbox(), label(), 1..=10u32).prop_map(|(image, b, l, s)| Prediction::new(image, b, l, f64::from(s) / 10.0))
}

fn preds(max: usize) -> impl Strategy<Value = Vec<Prediction>> {
    prop::collection::vec(pred(), 0..max)
}

fn cfg() -> MatchConfig {
    MatchConfig::default()
}

proptest! {
    #[test]
    fn unknown_count_identities(g in gts(8, true), p in preds(8)) {
        let (_, u) = match_scene(&p, &g, &spec(), 1, &cfg()).unwrap();
        let c = u.counts;
        prop_assert_eq!(c.tp_u + c.fn_u, c.total_unknown_gt);
        prop_assert!(c.fn_u_star <= c.fn_u);
        prop_assert!(c.fn_u_star <= c.fp_o);
        prop_assert!(c.fp_o <= c.total_unknown_gt);
        for v in [udr(&c), udp(&c), unknown_recall(&c)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Some(r) = udr(&c) {
            let lhs = r * c.total_unknown_gt as f64;
            prop_assert!((lhs - (c.tp_u + c.fn_u_star) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn appending_a_prediction_never_lowers_unknown_recall(g in gts(8, true), p in preds(8), extra in pred()) {
        let (_, before) = match_scene(&p, &g, &spec(), 1, &cfg()).unwrap();
        let mut more = p.clone();
        more.push(extra);
        let (_, after) = match_scene(&more, &g, &spec(), 1, &cfg()).unwrap();
        prop_assert!(after.counts.tp_u >= before.counts.tp_u);
    }

    #[test]
    fn a_correct_unknown_prediction_never_lowers_ur_or_udr(g in gts(8, true), p in preds(8), pick in any::<prop::sample::Index>()) {
        let targets: Vec<&GroundTruthBox> = g.iter().filter(|a| !a.is_crowd && a.category_id.0 >= 3).collect();
        prop_assume!(!targets.is_empty());
        let t = targets[pick.index(targets.len())];
        let (_, before) = match_scene(&p, &g, &spec(), 1, &cfg()).unwrap();
        let mut more = p.clone();
        more.push(Prediction::new(t.image_id, t.bbox, Label::Unknown, 1.0));
        let (_, after) = match_scene(&more, &g, &spec(), 1, &cfg()).unwrap();
        prop_assert!(unknown_recall(&after.counts) >= unknown_recall(&before.counts));
        prop_assert!(udr(&after.counts) >= udr(&before.counts));
    }

    #[test]
    fn known_matching_ignores_input_order(g in gts(8, true), p in preds(8), seed in any::<u64>()) {
        let mut distinct = p.clone();
        for (i, q) in distinct.iter_mut().enumerate() {
            q.score = 0.01 + i as f64 * 0.1;
        }
        let n = distinct.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let shuffled: Vec<Prediction> = order.iter().map(|&i| distinct[i].clone()).collect();
        let a = match_known(&distinct, &g, &spec(), 1, &cfg()).unwrap();
        let b = match_known(&shuffled, &g, &spec(), 1, &cfg()).unwrap();
        prop_assert_eq!(a.tp_k(), b.tp_k());
        prop_assert_eq!(a.fp_k(), b.fp_k());
        let remap = |m: &BTreeMap<u64, BTreeMap<u64, usize>>, f: &dyn Fn(usize) -> usize| -> BTreeMap<u64, usize> {
            m.values().flat_map(|v| v.iter().map(|(&g, &p)| (g, f(p)))).collect()
        };
        prop_assert_eq!(remap(&a.assignments, &|p| p), remap(&b.assignments, &|p| order[p]));
    }

    #[test]
    fn greedy_is_maximal_when_each_prediction_sees_one_object(g in gts(6, false), p in preds(8)) {
        let thr = cfg().iou_threshold;
        let known = spec().known(1).unwrap();
        let overlaps = |q: &Prediction| -> Vec<u64> {
            g.iter()
                .filter(|a| a.image_id == q.image_id && Some(a.category_id) == q.label.class())
                .filter(|a| known.contains(&a.category_id) && owod::iou(&q.bbox, &a.bbox) > thr)
                .map(|a| a.id)
                .collect()
        };
        prop_assume!(p.iter().all(|q| overlaps(q).len() <= 1));
        let reachable: BTreeSet<u64> = p.iter().flat_map(overlaps).collect();
        let t = match_known(&p, &g, &spec(), 1, &cfg()).unwrap();
        prop_assert_eq!(t.tp_k(), reachable.len());
    }

    #[test]
    fn other_classes_do_not_move_average_precision(g in gts(8, true), p in preds(8), b in bbox()) {
        let ap = |p: &[Prediction]| {
            let t = match_known(p, &g, &spec(), 1, &cfg()).unwrap();
            let c = &t.classes[&CategoryId(1)];
            average_precision(&c.entries, c.gt_count, ApMethod::Continuous)
        };
        let mut more = p.clone();
        more.push(Prediction::new(0, b, Label::Class(CategoryId(2)), 0.0));
        prop_assert_eq!(ap(&p), ap(&more));
    }

    #[test]
    fn expelling_keeps_or_zeroes_each_score(
        scores in prop::collection::vec(0.0f64..1.0, 3),
        means in prop::collection::vec(prop::option::of(0.0f64..1.0), 3),
        alpha in 0.0f64..2.0,
        orig in 1..=3u32,
    ) {
        let classes = (1..=3u32)
            .zip(&means)
            .map(|(c, &m)| (CategoryId(c), owod::cec::ClassProfile { m, pairs: usize::from(m.is_some()) }))
            .collect();
        let profile = ExpellingProfile::new(0.9, alpha, classes);
        let vector: BTreeMap<CategoryId, f64> = (1..=3).map(CategoryId).zip(scores.iter().copied()).collect();
        let p = Prediction::new(0, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), Label::Class(CategoryId(orig)), vector[&CategoryId(orig)])
            .with_scores(vector.clone());
        let once = expel(&p, &profile).unwrap();
        for (c, s) in &once.surviving {
            prop_assert!(*s == 0.0 || *s == vector[c]);
        }
        match once.label {
            Label::Unknown => prop_assert_eq!(once.score, 1.0),
            Label::Class(c) => prop_assert_eq!(once.score, once.surviving[&c]),
        }
        let twice = expel(&once.to_prediction(), &profile).unwrap();
        prop_assert_eq!(twice.label, once.label);
        prop_assert_eq!(twice.score, once.score);
    }

    #[test]
    fn calibration_ignores_prediction_order(g in gts(8, true), p in preds(10)) {
        let with_vectors: Vec<Prediction> = p
            .into_iter()
            .map(|q| {
                let v = (1..=4).map(|c| (CategoryId(c), q.score / f64::from(c))).collect();
                q.with_scores(v)
            })
            .collect();
        let classes: BTreeSet<CategoryId> = (1..=2).map(CategoryId).collect();
        let a = calibrate(&with_vectors, &g, &classes, 0.5, 1.0).unwrap();
        let mut rev = with_vectors.clone();
        rev.reverse();
        let b = calibrate(&rev, &g, &classes, 0.5, 1.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stricter_confirmation_keeps_fewer(
        potentials in prop::collection::vec((bbox(), 0.01f64..1.0), 0..8),
        aux in prop::collection::vec(bbox(), 0..8),
        lo in 0.0f64..1.0,
        hi in 0.0f64..1.0,
    ) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let mk = |b: BBox, o: f64, source| Proposal { bbox: b, objectness: o, source, matched_known: false, anchor_id: None };
        let pot: Vec<Proposal> = potentials.iter().map(|&(b, o)| mk(b, o, ProposalSource::Rpn)).collect();
        let aux: Vec<Proposal> = aux.iter().map(|&b| mk(b, 1.0, ProposalSource::Auxiliary)).collect();
        let a = confirm(&pot, &aux, lo);
        let b = confirm(&pot, &aux, hi);
        for ((x, y), p) in a.iter().zip(&b).zip(&pot) {
            prop_assert!(x.confirmed_score == 0.0 || x.confirmed_score == p.objectness);
            prop_assert!(y.confirmed_score <= x.confirmed_score);
        }
    }

    #[test]
    fn loss_is_non_negative(anchors in prop::collection::vec((0..4u8, 0.0f64..=1.0), 1..12)) {
        let labels = [AnchorLabel::Positive, AnchorLabel::Negative, AnchorLabel::UnknownPositive, AnchorLabel::Ignore];
        let set = AnchorSet {
            anchors: anchors
                .iter()
                .map(|&(l, s)| Anchor { id: None, bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), label: labels[l as usize], score: Some(s) })
                .collect(),
        };
        let r = rpn_cls_loss(&set).unwrap();
        prop_assert!(r.loss >= 0.0 && r.loss.is_finite());
    }
}
