use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use owod::benchmark::{self, AnnotationRule, BuildOptions, DedupMode, SplitPlan};
use owod::cec::{self, ExpellingProfile, SweepRow};
use owod::io::{self, TaskConfig};
use owod::manifest::RunManifest;
use owod::matching::{AoseMode, MatchConfig};
use owod::metrics::{self, ApMethod, EvalConfig, EvalReport};
use owod::pad;
use owod::{CategoryId, Dataset, Error, TaskSpec};

const EXIT_AUDIT_FAILURE: u8 = 1;
const EXIT_INPUT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "owod", version, about = "Open-world object detection benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-task train/val splits and a test split.
    Build(BuildArgs),
    /// Check a split plan against the benchmark principles.
    Audit(AuditArgs),
    /// Evaluate predictions for one task.
    Eval(EvalArgs),
    /// Remove duplicate images from an annotation file.
    Dedup(DedupArgs),
    /// Calibration by expelling classifier scores.
    #[command(subcommand)]
    Cec(CecCommand),
    /// Proposal-level unknown discovery.
    #[command(subcommand)]
    Pad(PadCommand),
}

#[derive(Args, Serialize)]
struct BuildArgs {
    /// Training pool (COCO JSON).
    #[arg(long)]
    annotations: PathBuf,
    /// Test pool (COCO JSON).
    #[arg(long)]
    test_annotations: Option<PathBuf>,
    #[arg(long)]
    task_config: PathBuf,
    /// Test-pool image ids to hold out, one per line.
    #[arg(long)]
    exclusion_list: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    val_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every known class in train/val instead of only the new ones.
    #[arg(long)]
    fine_tune: bool,
    /// Test images with fewer annotations are excluded.
    #[arg(long, default_value_t = 1)]
    completeness_floor: usize,
    /// Deduplicate the training pool by image content under this root.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Deduplicate the test pool by image content under this root.
    #[arg(long)]
    test_image_root: Option<PathBuf>,
    #[arg(long, default_value = "splits")]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Plan manifest or the directory holding it.
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum ApArg {
    Continuous,
    Voc11,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum AoseArg {
    Objects,
    Predictions,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    task_config: PathBuf,
    /// 1-based task index.
    #[arg(long)]
    task: usize,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = 0.0)]
    score_threshold: f64,
    #[arg(long, default_value_t = 0.8)]
    wi_recall: f64,
    #[arg(long, value_enum, default_value = "continuous")]
    ap: ApArg,
    #[arg(long, value_enum, default_value = "objects")]
    aose: AoseArg,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Also write report.json, report.csv and manifest.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DedupArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Compare image bytes under this root instead of file names.
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CecCommand {
    /// Estimate per-class expelling terms from training predictions.
    Calibrate(CalibrateArgs),
    /// Re-label predictions with a profile.
    Apply(ApplyArgs),
    /// Tabulate known-class mAP drop and unknown metrics over alphas.
    Sweep(SweepArgs),
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    train_preds: PathBuf,
    #[arg(long)]
    train_gt: PathBuf,
    #[arg(long, default_value_t = cec::DEFAULT_PHI)]
    phi: f64,
    #[arg(long, default_value_t = cec::DEFAULT_ALPHA)]
    alpha: f64,
    /// Restrict the profile to the classes known at `--task`.
    #[arg(long, requires = "task")]
    task_config: Option<PathBuf>,
    #[arg(long, requires = "task_config")]
    task: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ApplyArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    /// Override the profile's alpha.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Comma-separated alpha grid.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[arg(long)]
    train_preds: PathBuf,
    #[arg(long)]
    train_gt: PathBuf,
    #[arg(long)]
    val_preds: PathBuf,
    #[arg(long)]
    val_gt: PathBuf,
    #[arg(long)]
    task_config: PathBuf,
    #[arg(long)]
    task: usize,
    #[arg(long, default_value_t = cec::DEFAULT_PHI)]
    phi: f64,
    /// Largest tolerated absolute drop in known-class mAP.
    #[arg(long, default_value_t = 0.01)]
    max_drop: f64,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = 0.8)]
    wi_recall: f64,
}

#[derive(Subcommand)]
enum PadCommand {
    /// Score potential unknown proposals against auxiliary proposals.
    Confirm(ConfirmArgs),
    /// Relabel negative anchors claimed by confirmed proposals.
    Reassign(ReassignArgs),
    /// Objectness loss over an anchor file.
    Loss(LossArgs),
}

#[derive(Args, Serialize)]
struct ConfirmArgs {
    #[arg(long)]
    rpn_proposals: PathBuf,
    #[arg(long)]
    aux_proposals: PathBuf,
    #[arg(long, default_value_t = pad::DEFAULT_THETA)]
    theta: f64,
    /// Potential unknowns kept from the RPN proposals.
    #[arg(long, default_value_t = pad::DEFAULT_TOP_K)]
    topk: usize,
    #[arg(long, default_value_t = pad::DEFAULT_AUX_TOP_K)]
    aux_topk: usize,
    /// Keep only the K best confirmed proposals with a positive score.
    #[arg(long)]
    select: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ReassignArgs {
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    confirmed: PathBuf,
    #[arg(long, default_value_t = pad::DEFAULT_ANCHOR_MATCH_IOU)]
    match_iou: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    anchors: PathBuf,
}

type CmdResult = Result<u8, Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OWOD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dedup(a) => cmd_dedup(a),
        Command::Cec(CecCommand::Calibrate(a)) => cmd_calibrate(a),
        Command::Cec(CecCommand::Apply(a)) => cmd_apply(a),
        Command::Cec(CecCommand::Sweep(a)) => cmd_sweep(a),
        Command::Pad(PadCommand::Confirm(a)) => cmd_confirm(a),
        Command::Pad(PadCommand::Reassign(a)) => cmd_reassign(a),
        Command::Pad(PadCommand::Loss(a)) => cmd_loss(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

fn stdout(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| if text.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") })
        .map_err(|e| Error::io("<stdout>", e))
}

/// Writes `text` to `out` with its manifest, or to stdout.
fn emit(text: &str, out: Option<&Path>, mut run: RunManifest) -> Result<(), Error> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
            run.add_output(path)?;
            run.write(RunManifest::path_for(path))
        }
        None => stdout(text),
    }
}

fn load_spec(task_config: &Path, categories: &Dataset) -> Result<TaskSpec, Error> {
    TaskConfig::load(task_config)?.resolve(&categories.categories)
}

fn cmd_build(a: BuildArgs) -> CmdResult {
    let mut run = RunManifest::start("build", &a, Some(a.seed));
    let train_pool = io::load_annotations(&a.annotations)?;
    run.add_input(&a.annotations)?;
    let test_pool = match &a.test_annotations {
        Some(p) => {
            run.add_input(p)?;
            io::load_annotations(p)?
        }
        None => {
            eprintln!("warning: no --test-annotations given; the test split is empty");
            Dataset {
                categories: train_pool.categories.clone(),
                ..Dataset::default()
            }
        }
    };
    let spec = load_spec(&a.task_config, &train_pool)?;
    run.add_input(&a.task_config)?;
    let exclusions = match &a.exclusion_list {
        Some(p) => {
            run.add_input(p)?;
            io::load_exclusion_list(p)?
        }
        None => Vec::new(),
    };
    let opts = BuildOptions {
        val_size: a.val_size,
        seed: a.seed,
        annotation_rule: if a.fine_tune {
            AnnotationRule::AllKnown
        } else {
            AnnotationRule::NewlyKnown
        },
        completeness_floor: a.completeness_floor,
        train_image_root: a.image_root.clone(),
        test_image_root: a.test_image_root.clone(),
    };
    let plan = benchmark::build(&train_pool, &test_pool, &spec, &exclusions, &opts)?;
    if !plan.auto_excluded.is_empty() {
        eprintln!(
            "note: {} test images below the completeness floor were excluded",
            plan.auto_excluded.len()
        );
    }
    let manifest = plan.write(&a.out, Some(run))?;
    log::info!("plan written to {}", manifest.display());
    stdout(&plan.count_table())?;
    Ok(0)
}

fn cmd_audit(a: AuditArgs) -> CmdResult {
    let plan = SplitPlan::read(&a.plan)?;
    let report = benchmark::audit(&plan);
    eprint!("{}", report.summary());
    stdout(&serde_json::to_string_pretty(&report).expect("audit reports serialize"))?;
    Ok(if report.passed { 0 } else { EXIT_AUDIT_FAILURE })
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let mut run = RunManifest::start("eval", &a, None);
    let gt = io::load_annotations(&a.gt)?;
    let spec = load_spec(&a.task_config, &gt)?;
    let preds = io::load_predictions(&a.preds, &gt.category_ids())?;
    for p in [&a.gt, &a.preds, &a.task_config] {
        run.add_input(p)?;
    }
    let cfg = EvalConfig {
        matching: MatchConfig {
            iou_threshold: a.iou,
            score_threshold: a.score_threshold,
        },
        wi_recall: a.wi_recall,
        ap_method: match a.ap {
            ApArg::Continuous => ApMethod::Continuous,
            ApArg::Voc11 => ApMethod::Voc11,
        },
        aose_mode: match a.aose {
            AoseArg::Objects => AoseMode::Objects,
            AoseArg::Predictions => AoseMode::Predictions,
        },
    };
    let report = metrics::evaluate(&gt, &preds, &spec, a.task, &cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let csv = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("report.json");
        let csv_path = dir.join("report.csv");
        std::fs::write(&json_path, report.to_json() + "\n").map_err(|e| Error::io(&json_path, e))?;
        std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
        run.add_output(&json_path)?;
        run.add_output(&csv_path)?;
        run.write(dir.join("manifest.json"))?;
    }
    match a.format {
        Format::Json => stdout(&report.to_json())?,
        Format::Csv => stdout(&csv)?,
    }
    Ok(0)
}

fn cmd_dedup(a: DedupArgs) -> CmdResult {
    let mut run = RunManifest::start("dedup", &a, None);
    let data = io::load_annotations(&a.annotations)?;
    run.add_input(&a.annotations)?;
    let mode = a.image_root.clone().map_or(DedupMode::FileName, DedupMode::ContentHash);
    let (deduped, removed) = benchmark::deduplicate(&data, &mode)?;
    eprintln!("removed {} duplicate images", removed.len());
    emit(&io::annotations_to_string(&deduped), Some(&a.out), run)?;
    Ok(0)
}

fn cmd_calibrate(a: CalibrateArgs) -> CmdResult {
    let mut run = RunManifest::start("cec calibrate", &a, None);
    let gt = io::load_annotations(&a.train_gt)?;
    let classes: BTreeSet<CategoryId> = match (&a.task_config, a.task) {
        (Some(cfg), Some(t)) => {
            run.add_input(cfg)?;
            load_spec(cfg, &gt)?.known(t)?
        }
        _ => gt.category_ids(),
    };
    let preds = io::load_predictions(&a.train_preds, &gt.category_ids())?;
    run.add_input(&a.train_preds)?;
    run.add_input(&a.train_gt)?;
    let profile = cec::calibrate(&preds, &gt.annotations, &classes, a.phi, a.alpha)?;
    let never = profile.never_expelling();
    if !never.is_empty() {
        eprintln!("warning: no qualifying training pair for classes {never:?}; they are never expelled");
    }
    let text = serde_json::to_string_pretty(&profile).expect("profiles serialize");
    emit(&text, a.out.as_deref(), run)?;
    Ok(0)
}

fn cmd_apply(a: ApplyArgs) -> CmdResult {
    let mut run = RunManifest::start("cec apply", &a, None);
    let mut profile = ExpellingProfile::load(&a.profile)?;
    if let Some(alpha) = a.alpha {
        profile = profile.with_alpha(alpha);
        profile.validate()?;
    }
    let classes: BTreeSet<CategoryId> = profile.classes.keys().copied().collect();
    let preds = io::load_predictions(&a.preds, &classes)?;
    run.add_input(&a.preds)?;
    run.add_input(&a.profile)?;
    let calibrated = cec::apply_batch(&preds, &profile)?;
    let minted = calibrated.iter().filter(|c| c.minted_unknown()).count();
    eprintln!("{minted} of {} predictions relabelled unknown", calibrated.len());
    let out: Vec<_> = calibrated.iter().map(|c| c.to_prediction()).collect();
    emit(&io::predictions_to_string(&out), a.out.as_deref(), run)?;
    Ok(0)
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let train_gt = io::load_annotations(&a.train_gt)?;
    let val_gt = io::load_annotations(&a.val_gt)?;
    let spec = load_spec(&a.task_config, &val_gt)?;
    let classes = spec.known(a.task)?;
    let train_preds = io::load_predictions(&a.train_preds, &train_gt.category_ids())?;
    let val_preds = io::load_predictions(&a.val_preds, &val_gt.category_ids())?;
    let profile = cec::calibrate(&train_preds, &train_gt.annotations, &classes, a.phi, cec::DEFAULT_ALPHA)?;
    let cfg = EvalConfig {
        matching: MatchConfig {
            iou_threshold: a.iou,
            ..MatchConfig::default()
        },
        wi_recall: a.wi_recall,
        ..EvalConfig::default()
    };
    let rows = cec::sweep(&profile, &a.alphas, &val_gt, &val_preds, &spec, a.task, &cfg, a.max_drop)?;
    let mut text = format!("{}\n", SweepRow::CSV_HEADER);
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    stdout(&text)?;
    Ok(0)
}

fn cmd_confirm(a: ConfirmArgs) -> CmdResult {
    let mut run = RunManifest::start("pad confirm", &a, None);
    let rpn = pad::load_rpn_proposals(&a.rpn_proposals)?;
    let aux = pad::load_auxiliary_proposals(&a.aux_proposals, a.aux_topk)?;
    run.add_input(&a.rpn_proposals)?;
    run.add_input(&a.aux_proposals)?;
    if !(0.0..=1.0).contains(&a.theta) {
        return Err(Error::InvalidArgument(format!("theta = {} is outside [0, 1]", a.theta)));
    }
    let potentials = pad::select_potential_unknowns(&rpn, a.topk)?;
    let mut confirmed = pad::confirm(&potentials, &aux, a.theta);
    if let Some(k) = a.select {
        confirmed = pad::select_confirmed(&confirmed, Some(k));
    }
    emit(&pad::confirmed_to_string(&confirmed), a.out.as_deref(), run)?;
    Ok(0)
}

fn cmd_reassign(a: ReassignArgs) -> CmdResult {
    let mut run = RunManifest::start("pad reassign", &a, None);
    let anchors = pad::load_anchors(&a.anchors)?;
    let confirmed = pad::load_confirmed(&a.confirmed)?;
    run.add_input(&a.anchors)?;
    run.add_input(&a.confirmed)?;
    let relabelled = pad::reassign_anchors(&anchors, &confirmed, a.match_iou);
    eprintln!(
        "{} anchors relabelled unknown_positive",
        relabelled.count(pad::AnchorLabel::UnknownPositive)
    );
    emit(&pad::anchors_to_string(&relabelled), a.out.as_deref(), run)?;
    Ok(0)
}

fn cmd_loss(a: LossArgs) -> CmdResult {
    let anchors = pad::load_anchors(&a.anchors)?;
    let report = pad::rpn_cls_loss(&anchors)?;
    eprintln!(
        "positives={} unknown_positives={} negatives={} clamped={}",
        report.positives, report.unknown_positives, report.negatives, report.clamped
    );
    stdout(&report.loss.to_string())?;
    Ok(0)
}
