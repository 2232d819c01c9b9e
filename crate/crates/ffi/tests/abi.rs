use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use owod_ffi::*;

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/eval4").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = owod_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

struct Loaded {
    gt: *mut OwodDataset,
    spec: *mut OwodTaskSpec,
    preds: *mut OwodPredictions,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe {
            owod_predictions_free(self.preds);
            owod_task_spec_free(self.spec);
            owod_dataset_free(self.gt);
        }
    }
}

fn load() -> Loaded {
    let mut l = Loaded { gt: ptr::null_mut(), spec: ptr::null_mut(), preds: ptr::null_mut() };
    unsafe {
        assert_eq!(owod_dataset_load(fixture("gt.json").as_ptr(), &mut l.gt), OwodStatus::Ok);
        assert_eq!(owod_task_spec_load(fixture("tasks.json").as_ptr(), l.gt, &mut l.spec), OwodStatus::Ok);
        assert_eq!(owod_predictions_load(fixture("preds.json").as_ptr(), l.gt, &mut l.preds), OwodStatus::Ok);
    }
    l
}

fn metric(report: *const OwodReport, m: OwodMetric) -> Option<f64> {
    let (mut v, mut has) = (0.0, false);
    assert_eq!(unsafe { owod_report_metric(report, m as i32, &mut v, &mut has) }, OwodStatus::Ok);
    has.then_some(v)
}

#[test]
fn handles_report_counts() {
    let l = load();
    unsafe {
        assert_eq!(owod_dataset_image_count(l.gt), 4);
        assert_eq!(owod_dataset_annotation_count(l.gt), 10);
        assert_eq!(owod_task_spec_len(l.spec), 2);
        assert_eq!(owod_predictions_len(l.preds), 13);
        assert_eq!(owod_predictions_unknown_count(l.preds), 3);
    }
}

#[test]
fn evaluation_matches_the_library() {
    let l = load();
    let opts = owod_eval_options_default();
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(owod_evaluate(l.gt, l.spec, l.preds, 1, &opts, &mut report), OwodStatus::Ok);
    }
    let close = |m, want: f64| {
        let got = metric(report, m).unwrap();
        assert!((got - want).abs() < 1e-12, "{m:?}: {got} vs {want}");
    };
    close(OwodMetric::MapBoth, 0.875);
    close(OwodMetric::Wi, 1.0 / 6.0);
    close(OwodMetric::AOse, 2.0);
    close(OwodMetric::Ur, 0.5);
    close(OwodMetric::Udr, 0.75);
    close(OwodMetric::Udp, 2.0 / 3.0);
    close(OwodMetric::TpK, 5.0);
    close(OwodMetric::FnUStar, 1.0);
    assert_eq!(metric(report, OwodMetric::MapPrevious), None);

    let json = unsafe { owod_report_json(report) };
    assert!(!json.is_null());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"task\": 1") || text.contains("\"task\":1"), "{text}");
    unsafe {
        owod_string_free(json);
        owod_report_free(report);
    }
}

#[test]
fn eleven_point_option() {
    let l = load();
    let opts = OwodEvalOptions { ap_method: OwodApMethod::Voc11 as i32, ..owod_eval_options_default() };
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(owod_evaluate(l.gt, l.spec, l.preds, 1, &opts, &mut report), OwodStatus::Ok);
    }
    let got = metric(report, OwodMetric::MapBoth).unwrap();
    assert!((got - 0.8787878787878787).abs() < 1e-12);
    unsafe { owod_report_free(report) };
}

#[test]
fn errors_come_back_as_codes() {
    let l = load();
    let mut report = ptr::null_mut();
    let opts = owod_eval_options_default();
    unsafe {
        assert_eq!(owod_evaluate(l.gt, l.spec, l.preds, 9, &opts, &mut report), OwodStatus::TaskIndex);
        assert!(report.is_null());
        assert!(last_error().contains('9'));

        let bad = OwodEvalOptions { ap_method: 42, ..opts };
        assert_eq!(owod_evaluate(l.gt, l.spec, l.preds, 1, &bad, &mut report), OwodStatus::InvalidArgument);

        assert_eq!(owod_evaluate(ptr::null(), l.spec, l.preds, 1, &opts, &mut report), OwodStatus::NullPointer);

        let mut gt = ptr::null_mut();
        let missing = CString::new("/nonexistent/gt.json").unwrap();
        assert_eq!(owod_dataset_load(missing.as_ptr(), &mut gt), OwodStatus::Io);
        assert!(last_error().contains("/nonexistent/gt.json"));

        let mut v = 0.0;
        let mut has = true;
        assert_eq!(owod_report_metric(ptr::null(), 0, &mut v, &mut has), OwodStatus::NullPointer);

        // freeing null is a no-op
        owod_dataset_free(ptr::null_mut());
        owod_report_free(ptr::null_mut());
        owod_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_paths_are_rejected() {
    let bytes = CString::new(vec![0xffu8, 0xfe]).unwrap();
    let mut gt = ptr::null_mut();
    assert_eq!(unsafe { owod_dataset_load(bytes.as_ptr(), &mut gt) }, OwodStatus::InvalidUtf8);
}

#[test]
fn iou_of_corner_boxes() {
    let a = OwodBox { x_min: 0.0, y_min: 0.0, x_max: 10.0, y_max: 10.0 };
    let b = OwodBox { x_min: 5.0, y_min: 0.0, x_max: 15.0, y_max: 10.0 };
    assert!((owod_iou(a, b) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn pad_confirmation_and_loss() {
    let pot = [
        OwodBox { x_min: 0.0, y_min: 0.0, x_max: 10.0, y_max: 10.0 },
        OwodBox { x_min: 50.0, y_min: 50.0, x_max: 60.0, y_max: 60.0 },
    ];
    let obj = [0.9, 0.8];
    let aux = [OwodBox { x_min: 0.0, y_min: 0.0, x_max: 7.0, y_max: 10.0 }];
    let mut scores = [f64::NAN; 2];
    unsafe {
        let s = owod_pad_confirm(pot.as_ptr(), obj.as_ptr(), 2, aux.as_ptr(), 1, 0.69, scores.as_mut_ptr());
        assert_eq!(s, OwodStatus::Ok);
        assert_eq!(scores, [0.9, 0.0]);
        let s = owod_pad_confirm(pot.as_ptr(), obj.as_ptr(), 2, aux.as_ptr(), 1, 0.7, scores.as_mut_ptr());
        assert_eq!(s, OwodStatus::Ok);
        assert_eq!(scores, [0.0, 0.0]);
        // an empty auxiliary set may be null
        let s = owod_pad_confirm(pot.as_ptr(), obj.as_ptr(), 2, ptr::null(), 0, 0.7, scores.as_mut_ptr());
        assert_eq!(s, OwodStatus::Ok);
    }

    let probs = [0.5, 0.5, 0.3];
    let labels = [OwodAnchorLabel::Positive as i32, OwodAnchorLabel::UnknownPositive as i32, OwodAnchorLabel::Ignore as i32];
    let mut loss = 0.0;
    unsafe {
        assert_eq!(owod_pad_rpn_cls_loss(probs.as_ptr(), labels.as_ptr(), 3, &mut loss), OwodStatus::Ok);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let bad = [7];
        assert_eq!(owod_pad_rpn_cls_loss(probs.as_ptr(), bad.as_ptr(), 1, &mut loss), OwodStatus::InvalidArgument);
    }
}

#[test]
fn calibration_round_trips_through_a_file() {
    let l = load();
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.json");
    std::fs::write(
        &train,
        r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.8, "scores": {"1": 0.8, "2": 0.2}},
            {"image_id": 3, "category_id": 2, "bbox": [0, 0, 10, 10], "score": 0.6, "scores": {"1": 0.4, "2": 0.6}}]"#,
    )
    .unwrap();
    let train = CString::new(train.to_str().unwrap()).unwrap();
    let path = CString::new(dir.path().join("profile.json").to_str().unwrap()).unwrap();
    unsafe {
        let mut preds = ptr::null_mut();
        assert_eq!(owod_predictions_load(train.as_ptr(), l.gt, &mut preds), OwodStatus::Ok);
        let mut profile = ptr::null_mut();
        assert_eq!(owod_cec_calibrate(preds, l.gt, l.spec, 1, 0.9, 0.5, &mut profile), OwodStatus::Ok);
        assert!((owod_profile_expelling_term(profile, 1) - 0.4).abs() < 1e-12);
        assert!((owod_profile_expelling_term(profile, 2) - 0.3).abs() < 1e-12);
        assert_eq!(owod_profile_save(profile, path.as_ptr()), OwodStatus::Ok);

        let mut again = ptr::null_mut();
        assert_eq!(owod_profile_load(path.as_ptr(), &mut again), OwodStatus::Ok);
        let mut applied = ptr::null_mut();
        assert_eq!(owod_cec_apply(preds, again, f64::NAN, &mut applied), OwodStatus::Ok);
        assert_eq!(owod_predictions_len(applied), 2);
        assert_eq!(owod_predictions_unknown_count(applied), 0);

        assert_eq!(owod_cec_apply(preds, again, -1.0, &mut applied), OwodStatus::Validation);

        owod_predictions_free(applied);
        owod_profile_free(again);
        owod_profile_free(profile);
        owod_predictions_free(preds);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/owod.h")).unwrap();
    let lib = include_str!("../src/lib.rs");
    let exports: Vec<&str> = lib
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 25, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["OwodStatus", "OwodMetric", "OwodBox", "OwodEvalOptions", "OWOD_STATUS_TASK_INDEX"] {
        assert!(header.contains(ty), "{ty}");
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(owod_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().join("libowod_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new(cc)
        .arg(here.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(here.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let fixtures = here.join("../core/tests/fixtures/eval4");
    let out = std::process::Command::new(&bin)
        .args(["gt.json", "tasks.json", "preds.json"].map(|f| fixtures.join(f)))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("task index 7"));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
