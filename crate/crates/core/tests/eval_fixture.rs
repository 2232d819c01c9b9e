//! Four-image fixture with hand-planned outcomes.
//!
//! | image | ground truth                      | predictions                                           |
//! |-------|-----------------------------------|-------------------------------------------------------|
//! | 1     | cat, dog, cow                     | cat TP 0.9, cat duplicate FP 0.8, dog TP 0.7, unknown on cow 0.6 |
//! | 2     | cat, cow, cow                     | cat TP 0.95, dog on cow 0.78, unknown on cow 0.4, cat near that cow 0.3 |
//! | 3     | dog, dog crowd                    | dog TP 0.85, dog on crowd 0.75 (ignored), stray dog 0.2 |
//! | 4     | cow, cat                          | cat TP 0.65, unknown on nothing 0.55                   |
//!
//! At task 1 (cat, dog known; cow unknown):
//! * cat PR: T T F T F over 3 objects, AP = (1 + 1 + 0.75) / 3 = 11/12
//! * dog PR: T F T F over 2 objects, AP = 0.5 + 0.5 * 2/3 = 5/6
//! * unknown: 4 cows, 2 recalled, 2 claimed by known predictions (one of
//!   them also recalled), so tp_u 2, fn_u 2, fn_u* 1, fp_o 2
//! * WI: recall 0.8 is first reached at score 0.7, where 6 predictions are
//!   retained (4 TP, 2 FP) and one cow is claimed at score >= 0.7

use std::path::PathBuf;

use owod::io::{load_annotations, load_predictions, TaskConfig};
use owod::matching::AoseMode;
use owod::metrics::{evaluate, ApMethod, EvalConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval4").join(name)
}

fn report(cfg: &EvalConfig, task: usize) -> owod::metrics::EvalReport {
    let gt = load_annotations(fixture("gt.json")).unwrap();
    let spec = TaskConfig::load(fixture("tasks.json")).unwrap().resolve(&gt.categories).unwrap();
    let preds = load_predictions(fixture("preds.json"), &gt.category_ids()).unwrap();
    evaluate(&gt, &preds, &spec, task, cfg).unwrap()
}

fn close(a: Option<f64>, b: f64) -> bool {
    a.is_some_and(|a| (a - b).abs() < 1e-12)
}

#[test]
fn task_one_matches_hand_computation() {
    let r = report(&EvalConfig::default(), 1);
    assert!(close(r.ap[&owod::CategoryId(1)], 11.0 / 12.0));
    assert!(close(r.ap[&owod::CategoryId(2)], 5.0 / 6.0));
    assert!(close(r.map_both, 0.875));
    assert!(close(r.map_current, 0.875));
    assert_eq!(r.map_previous, None);
    assert_eq!((r.tp_k, r.fp_k), (5, 4));
    let c = r.counts;
    assert_eq!((c.tp_u, c.fn_u, c.fn_u_star, c.fp_o, c.total_unknown_gt), (2, 2, 1, 2, 4));
    assert_eq!(r.a_ose, 2);
    assert!(close(r.ur, 0.5));
    assert!(close(r.udr, 0.75));
    assert!(close(r.udp, 2.0 / 3.0));
    assert_eq!(r.wi_point.score_threshold, Some(0.7));
    assert_eq!((r.wi_point.tp_k, r.wi_point.fp_k, r.wi_point.a_ose), (4, 2, 1));
    assert!(r.wi_point.recall_reached);
    assert!(close(r.wi, 1.0 / 6.0));
    assert_eq!(
        r.csv_row(),
        "1,0.16666666666666666,2,,0.875,0.875,0.5,0.75,0.6666666666666666"
    );
}

#[test]
fn eleven_point_interpolation() {
    let cfg = EvalConfig { ap_method: ApMethod::Voc11, ..EvalConfig::default() };
    let r = report(&cfg, 1);
    assert!(close(r.ap[&owod::CategoryId(1)], 10.0 / 11.0));
    assert!(close(r.ap[&owod::CategoryId(2)], (6.0 + 5.0 * 2.0 / 3.0) / 11.0));
}

#[test]
fn per_prediction_open_set_errors() {
    let cfg = EvalConfig { aose_mode: AoseMode::Predictions, ..EvalConfig::default() };
    let r = report(&cfg, 1);
    assert_eq!(r.counts.fp_o_predictions, 2);
    assert_eq!(r.wi_point.a_ose, 1);
}

#[test]
fn last_task_has_no_unknowns() {
    let r = report(&EvalConfig::default(), 2);
    assert_eq!(r.counts.total_unknown_gt, 0);
    assert_eq!((r.ur, r.udr, r.udp), (None, None, None));
    assert!(r.map_previous.is_some());
    // cows are now known and every cow prediction was labelled unknown
    assert!(close(r.map_current, 0.0));
}

#[test]
fn toml_config_resolves_like_json() {
    let gt = load_annotations(fixture("gt.json")).unwrap();
    let a = TaskConfig::load(fixture("tasks.json")).unwrap().resolve(&gt.categories).unwrap();
    let b = TaskConfig::load(fixture("tasks.toml")).unwrap().resolve(&gt.categories).unwrap();
    assert_eq!(a.known(1).unwrap(), b.known(1).unwrap());
    assert_eq!(a.all_classes(), b.all_classes());
}
