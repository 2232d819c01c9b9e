//! C ABI over `owod-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_load` or
//! computing functions and released with the matching `*_free`. Fallible
//! functions return an [`OwodStatus`]; the message of the last failure on the
//! calling thread is available from [`owod_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use owod::cec::{self, ExpellingProfile};
use owod::io::{self, TaskConfig};
use owod::matching::{AoseMode, MatchConfig};
use owod::metrics::{self, ApMethod, EvalConfig, EvalReport};
use owod::pad::{self, Anchor, AnchorLabel, AnchorSet, Proposal, ProposalSource};
use owod::{BBox, CategoryId, Dataset, Error, Prediction, TaskSpec};

/// Result code of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwodStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidUtf8 = -2,
    Io = -3,
    Parse = -4,
    Validation = -5,
    TaskIndex = -6,
    TaskConfig = -7,
    InvalidArgument = -8,
    Panic = -99,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwodApMethod {
    Continuous = 0,
    Voc11 = 1,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwodAoseMode {
    Objects = 0,
    Predictions = 1,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwodMetric {
    Wi = 0,
    AOse = 1,
    MapPrevious = 2,
    MapCurrent = 3,
    MapBoth = 4,
    Ur = 5,
    Udr = 6,
    Udp = 7,
    TpK = 8,
    FpK = 9,
    TpU = 10,
    FnU = 11,
    FnUStar = 12,
    FpO = 13,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwodAnchorLabel {
    Positive = 0,
    Negative = 1,
    UnknownPositive = 2,
    Ignore = 3,
}

/// Corner-format box.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwodBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwodEvalOptions {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub wi_recall: f64,
    /// An [`OwodApMethod`] value.
    pub ap_method: i32,
    /// An [`OwodAoseMode`] value.
    pub aose_mode: i32,
}

pub struct OwodDataset(Dataset);
pub struct OwodTaskSpec(TaskSpec);
pub struct OwodPredictions(Vec<Prediction>);
pub struct OwodReport(EvalReport);
pub struct OwodProfile(ExpellingProfile);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(OwodStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => OwodStatus::Io,
            Error::Parse { .. } => OwodStatus::Parse,
            Error::Reference { .. } | Error::Validation(_) => OwodStatus::Validation,
            Error::TaskIndex { .. } => OwodStatus::TaskIndex,
            Error::TaskConfig(_) => OwodStatus::TaskConfig,
            Error::InvalidArgument(_) => OwodStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OwodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OwodStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            OwodStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OwodStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(OwodStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn invalid(what: &str, value: i32) -> Failure {
    Failure(OwodStatus::InvalidArgument, format!("{value} is not a valid {what}"))
}

fn ap_method(v: i32) -> Result<ApMethod, Failure> {
    match v {
        x if x == OwodApMethod::Continuous as i32 => Ok(ApMethod::Continuous),
        x if x == OwodApMethod::Voc11 as i32 => Ok(ApMethod::Voc11),
        _ => Err(invalid("AP method", v)),
    }
}

fn aose_mode(v: i32) -> Result<AoseMode, Failure> {
    match v {
        x if x == OwodAoseMode::Objects as i32 => Ok(AoseMode::Objects),
        x if x == OwodAoseMode::Predictions as i32 => Ok(AoseMode::Predictions),
        _ => Err(invalid("A-OSE mode", v)),
    }
}

fn anchor_label(v: i32) -> Result<AnchorLabel, Failure> {
    [
        (OwodAnchorLabel::Positive, AnchorLabel::Positive),
        (OwodAnchorLabel::Negative, AnchorLabel::Negative),
        (OwodAnchorLabel::UnknownPositive, AnchorLabel::UnknownPositive),
        (OwodAnchorLabel::Ignore, AnchorLabel::Ignore),
    ]
    .into_iter()
    .find(|(c, _)| *c as i32 == v)
    .map(|(_, l)| l)
    .ok_or_else(|| invalid("anchor label", v))
}

fn to_bbox(b: &OwodBox) -> Result<BBox, Failure> {
    BBox::new(b.x_min, b.y_min, b.x_max, b.y_max).ok_or_else(|| {
        Failure(OwodStatus::Validation, format!("invalid box {b:?}"))
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn owod_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn owod_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn owod_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Intersection over union of two corner boxes; 0 for degenerate unions.
#[no_mangle]
pub extern "C" fn owod_iou(a: OwodBox, b: OwodBox) -> f64 {
    let conv = |b: OwodBox| BBox {
        x_min: b.x_min,
        y_min: b.y_min,
        x_max: b.x_max,
        y_max: b.y_max,
    };
    owod::iou(&conv(a), &conv(b))
}

#[no_mangle]
pub unsafe extern "C" fn owod_dataset_load(path: *const c_char, out: *mut *mut OwodDataset) -> OwodStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, OwodDataset(io::load_annotations(path)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_dataset_free(dataset: *mut OwodDataset) {
    release(dataset)
}

#[no_mangle]
pub unsafe extern "C" fn owod_dataset_image_count(dataset: *const OwodDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.images.len())
}

#[no_mangle]
pub unsafe extern "C" fn owod_dataset_annotation_count(dataset: *const OwodDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.annotations.len())
}

/// Loads a task configuration (JSON, or TOML by extension) and resolves its
/// class names against `dataset`.
#[no_mangle]
pub unsafe extern "C" fn owod_task_spec_load(
    path: *const c_char,
    dataset: *const OwodDataset,
    out: *mut *mut OwodTaskSpec,
) -> OwodStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let dataset = borrow(dataset, "dataset")?;
        let spec = TaskConfig::load(path)?.resolve(&dataset.0.categories)?;
        store(out, OwodTaskSpec(spec))
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_task_spec_free(spec: *mut OwodTaskSpec) {
    release(spec)
}

#[no_mangle]
pub unsafe extern "C" fn owod_task_spec_len(spec: *const OwodTaskSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.0.len())
}

/// Loads a prediction file whose class ids must belong to `dataset`.
#[no_mangle]
pub unsafe extern "C" fn owod_predictions_load(
    path: *const c_char,
    dataset: *const OwodDataset,
    out: *mut *mut OwodPredictions,
) -> OwodStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let dataset = borrow(dataset, "dataset")?;
        let preds = io::load_predictions(path, &dataset.0.category_ids())?;
        store(out, OwodPredictions(preds))
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_predictions_write(
    predictions: *const OwodPredictions,
    path: *const c_char,
) -> OwodStatus {
    guard(|| {
        let preds = borrow(predictions, "predictions")?;
        let path = path_arg(path, "path")?;
        Ok(io::write_predictions(path, &preds.0)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_predictions_free(predictions: *mut OwodPredictions) {
    release(predictions)
}

#[no_mangle]
pub unsafe extern "C" fn owod_predictions_len(predictions: *const OwodPredictions) -> usize {
    predictions.as_ref().map_or(0, |p| p.0.len())
}

/// Number of predictions labelled unknown.
#[no_mangle]
pub unsafe extern "C" fn owod_predictions_unknown_count(predictions: *const OwodPredictions) -> usize {
    predictions
        .as_ref()
        .map_or(0, |p| p.0.iter().filter(|p| p.label.is_unknown()).count())
}

#[no_mangle]
pub extern "C" fn owod_eval_options_default() -> OwodEvalOptions {
    let cfg = EvalConfig::default();
    OwodEvalOptions {
        iou_threshold: cfg.matching.iou_threshold,
        score_threshold: cfg.matching.score_threshold,
        wi_recall: cfg.wi_recall,
        ap_method: OwodApMethod::Continuous as i32,
        aose_mode: OwodAoseMode::Objects as i32,
    }
}

/// Evaluates `predictions` for 1-based `task`. `options` may be NULL for the
/// defaults.
#[no_mangle]
pub unsafe extern "C" fn owod_evaluate(
    dataset: *const OwodDataset,
    spec: *const OwodTaskSpec,
    predictions: *const OwodPredictions,
    task: usize,
    options: *const OwodEvalOptions,
    out: *mut *mut OwodReport,
) -> OwodStatus {
    guard(|| {
        let dataset = borrow(dataset, "dataset")?;
        let spec = borrow(spec, "task spec")?;
        let preds = borrow(predictions, "predictions")?;
        let o = options.as_ref().copied().unwrap_or_else(|| owod_eval_options_default());
        let cfg = EvalConfig {
            matching: MatchConfig {
                iou_threshold: o.iou_threshold,
                score_threshold: o.score_threshold,
            },
            wi_recall: o.wi_recall,
            ap_method: ap_method(o.ap_method)?,
            aose_mode: aose_mode(o.aose_mode)?,
        };
        let report = metrics::evaluate(&dataset.0, &preds.0, &spec.0, task, &cfg)?;
        store(out, OwodReport(report))
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_report_free(report: *mut OwodReport) {
    release(report)
}

/// Reads one [`OwodMetric`]. `*has_value` is false when the metric is undefined
/// (for example UDP with no unknown detections); `*value` is then NaN.
#[no_mangle]
pub unsafe extern "C" fn owod_report_metric(
    report: *const OwodReport,
    metric: i32,
    value: *mut f64,
    has_value: *mut bool,
) -> OwodStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        if value.is_null() || has_value.is_null() {
            return Err(null("output pointer"));
        }
        let count = |n: usize| Some(n as f64);
        let table = [
            (OwodMetric::Wi, r.wi),
            (OwodMetric::AOse, count(r.a_ose)),
            (OwodMetric::MapPrevious, r.map_previous),
            (OwodMetric::MapCurrent, r.map_current),
            (OwodMetric::MapBoth, r.map_both),
            (OwodMetric::Ur, r.ur),
            (OwodMetric::Udr, r.udr),
            (OwodMetric::Udp, r.udp),
            (OwodMetric::TpK, count(r.tp_k)),
            (OwodMetric::FpK, count(r.fp_k)),
            (OwodMetric::TpU, count(r.counts.tp_u)),
            (OwodMetric::FnU, count(r.counts.fn_u)),
            (OwodMetric::FnUStar, count(r.counts.fn_u_star)),
            (OwodMetric::FpO, count(r.counts.fp_o)),
        ];
        let v = table
            .into_iter()
            .find(|(m, _)| *m as i32 == metric)
            .ok_or_else(|| invalid("metric", metric))?
            .1;
        *has_value = v.is_some();
        *value = v.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// The full report as JSON. Free the result with [`owod_string_free`].
#[no_mangle]
pub unsafe extern "C" fn owod_report_json(report: *const OwodReport) -> *mut c_char {
    match report.as_ref() {
        Some(r) => CString::new(r.0.to_json()).map_or(ptr::null_mut(), CString::into_raw),
        None => {
            set_last_error("report is null");
            ptr::null_mut()
        }
    }
}

/// Builds an expelling profile. With a task spec the profile covers the
/// classes known at `task`; with NULL it covers every dataset class.
#[no_mangle]
pub unsafe extern "C" fn owod_cec_calibrate(
    train_predictions: *const OwodPredictions,
    train_dataset: *const OwodDataset,
    spec: *const OwodTaskSpec,
    task: usize,
    phi: f64,
    alpha: f64,
    out: *mut *mut OwodProfile,
) -> OwodStatus {
    guard(|| {
        let preds = borrow(train_predictions, "predictions")?;
        let dataset = borrow(train_dataset, "dataset")?;
        let classes: BTreeSet<CategoryId> = match spec.as_ref() {
            Some(s) => s.0.known(task)?,
            None => dataset.0.category_ids(),
        };
        let profile = cec::calibrate(&preds.0, &dataset.0.annotations, &classes, phi, alpha)?;
        store(out, OwodProfile(profile))
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_profile_load(path: *const c_char, out: *mut *mut OwodProfile) -> OwodStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, OwodProfile(ExpellingProfile::load(path)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_profile_save(profile: *const OwodProfile, path: *const c_char) -> OwodStatus {
    guard(|| {
        let profile = borrow(profile, "profile")?;
        let path = path_arg(path, "path")?;
        Ok(profile.0.save(path)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn owod_profile_free(profile: *mut OwodProfile) {
    release(profile)
}

/// Expelling term `alpha * m_c` of one class; NaN when the class is absent.
#[no_mangle]
pub unsafe extern "C" fn owod_profile_expelling_term(profile: *const OwodProfile, class_id: u32) -> f64 {
    match profile.as_ref() {
        Some(p) if p.0.classes.contains_key(&CategoryId(class_id)) => {
            p.0.expelling_term(CategoryId(class_id))
        }
        _ => f64::NAN,
    }
}

/// Re-labels predictions with `profile`. A NaN `alpha` keeps the profile's.
#[no_mangle]
pub unsafe extern "C" fn owod_cec_apply(
    predictions: *const OwodPredictions,
    profile: *const OwodProfile,
    alpha: f64,
    out: *mut *mut OwodPredictions,
) -> OwodStatus {
    guard(|| {
        let preds = borrow(predictions, "predictions")?;
        let profile = borrow(profile, "profile")?;
        let profile = if alpha.is_nan() {
            profile.0.clone()
        } else {
            let p = profile.0.with_alpha(alpha);
            p.validate()?;
            p
        };
        let calibrated = cec::apply_batch(&preds.0, &profile)?;
        store(
            out,
            OwodPredictions(calibrated.iter().map(|c| c.to_prediction()).collect()),
        )
    })
}

/// Confirms potential unknown proposals against auxiliary boxes. Writes one
/// score per potential into `scores`: its objectness when some auxiliary box
/// overlaps it with IOU above `theta`, otherwise 0.
#[no_mangle]
pub unsafe extern "C" fn owod_pad_confirm(
    potentials: *const OwodBox,
    objectness: *const f64,
    potential_count: usize,
    auxiliary: *const OwodBox,
    auxiliary_count: usize,
    theta: f64,
    scores: *mut f64,
) -> OwodStatus {
    guard(|| {
        let boxes = slice(potentials, potential_count, "potentials")?;
        let obj = slice(objectness, potential_count, "objectness")?;
        let aux = slice(auxiliary, auxiliary_count, "auxiliary")?;
        if potential_count > 0 && scores.is_null() {
            return Err(null("scores"));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Failure(OwodStatus::InvalidArgument, format!("theta = {theta} is outside [0, 1]")));
        }
        let pots = boxes
            .iter()
            .zip(obj)
            .map(|(b, &o)| {
                Ok(Proposal {
                    bbox: to_bbox(b)?,
                    objectness: o,
                    source: ProposalSource::Rpn,
                    matched_known: false,
                    anchor_id: None,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let aux = aux
            .iter()
            .map(|b| {
                Ok(Proposal {
                    bbox: to_bbox(b)?,
                    objectness: 0.0,
                    source: ProposalSource::Auxiliary,
                    matched_known: false,
                    anchor_id: None,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        for (i, c) in pad::confirm(&pots, &aux, theta).iter().enumerate() {
            *scores.add(i) = c.confirmed_score;
        }
        Ok(())
    })
}

/// Objectness loss over anchors given as parallel score and
/// [`OwodAnchorLabel`] arrays.
#[no_mangle]
pub unsafe extern "C" fn owod_pad_rpn_cls_loss(
    scores: *const f64,
    labels: *const i32,
    count: usize,
    loss: *mut f64,
) -> OwodStatus {
    guard(|| {
        let scores = slice(scores, count, "scores")?;
        let labels = slice(labels, count, "labels")?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let anchors = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &l))| {
                Ok(Anchor {
                    id: Some(i as u64),
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box"),
                    label: anchor_label(l)?,
                    score: Some(s),
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        *loss = pad::rpn_cls_loss(&AnchorSet { anchors })?.loss;
        Ok(())
    })
}
