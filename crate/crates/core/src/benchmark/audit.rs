use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::plan::SplitPlan;
use crate::model::{AnnotationId, CategoryId, Dataset, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Principle {
    ClassOpenness,
    TaskIncrement,
    AnnotationSpecificity,
    LabelIntegrity,
    DataSpecificity,
}

impl Principle {
    pub const ALL: [Principle; 5] = [
        Principle::ClassOpenness,
        Principle::TaskIncrement,
        Principle::AnnotationSpecificity,
        Principle::LabelIntegrity,
        Principle::DataSpecificity,
    ];
}

impl fmt::Display for Principle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Principle::ClassOpenness => "class openness",
            Principle::TaskIncrement => "task increment",
            Principle::AnnotationSpecificity => "annotation specificity",
            Principle::LabelIntegrity => "label integrity",
            Principle::DataSpecificity => "data specificity",
        })
    }
}

/// One concrete counter-example.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Finding {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub image_ids: Vec<ImageId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub annotation_ids: Vec<AnnotationId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub class_ids: Vec<CategoryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipleResult {
    pub principle: Principle,
    pub passed: bool,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub principles: Vec<PrincipleResult>,
    /// Groups of images sharing a file name inside one split.
    pub duplicate_clusters: Vec<Vec<ImageId>>,
    /// Test images whose box coverage is an extreme low outlier. Informational.
    pub incomplete_suspects: Vec<ImageId>,
}

impl AuditReport {
    pub fn result(&self, p: Principle) -> &PrincipleResult {
        self.principles
            .iter()
            .find(|r| r.principle == p)
            .expect("every principle is audited")
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for r in &self.principles {
            out.push_str(&format!(
                "{}\t{}\n",
                r.principle,
                if r.passed { "PASS" } else { "FAIL" }
            ));
            for f in &r.findings {
                out.push_str(&format!("  - {}\n", f.message));
            }
        }
        out
    }
}

/// Checks a split plan against every benchmark principle.
pub fn audit(plan: &SplitPlan) -> AuditReport {
    let mut clusters = Vec::new();
    let principles = vec![
        result(Principle::ClassOpenness, class_openness(plan)),
        result(Principle::TaskIncrement, task_increment(plan)),
        result(Principle::AnnotationSpecificity, annotation_specificity(plan)),
        result(Principle::LabelIntegrity, label_integrity(plan)),
        result(Principle::DataSpecificity, data_specificity(plan, &mut clusters)),
    ];
    AuditReport {
        passed: principles.iter().all(|r| r.passed),
        principles,
        duplicate_clusters: clusters,
        incomplete_suspects: coverage_outliers(&plan.test),
    }
}

fn result(principle: Principle, findings: Vec<Finding>) -> PrincipleResult {
    PrincipleResult {
        principle,
        passed: findings.is_empty(),
        findings,
    }
}

fn class_openness(plan: &SplitPlan) -> Vec<Finding> {
    let spec = &plan.task_spec;
    let present: BTreeSet<CategoryId> =
        plan.test.annotations.iter().map(|a| a.category_id).collect();
    let mut findings = Vec::new();
    for t in 1..spec.len() {
        let unknown = spec.unknown(t).unwrap_or_default();
        if unknown.is_disjoint(&present) {
            findings.push(Finding {
                message: format!(
                    "test split has no annotation of the {} classes unknown at task {t}",
                    unknown.len()
                ),
                task: Some(t),
                class_ids: unknown.into_iter().collect(),
                ..Finding::default()
            });
        }
    }
    let undeclared: Vec<_> = plan
        .test
        .annotations
        .iter()
        .filter(|a| !spec.all_classes().contains(&a.category_id))
        .collect();
    if !undeclared.is_empty() {
        findings.push(Finding {
            message: format!(
                "{} test annotations use classes outside the task configuration",
                undeclared.len()
            ),
            annotation_ids: undeclared.iter().map(|a| a.id).collect(),
            class_ids: undeclared
                .iter()
                .map(|a| a.category_id)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            ..Finding::default()
        });
    }
    findings
}

fn task_increment(plan: &SplitPlan) -> Vec<Finding> {
    let spec = &plan.task_spec;
    let problems = spec.partition_problems();
    let mut findings = Vec::new();
    if spec.is_empty() {
        findings.push(Finding {
            message: "no tasks defined".into(),
            class_ids: spec.all_classes().iter().copied().collect(),
            ..Finding::default()
        });
    }
    for (what, ids) in [
        ("assigned to no task", &problems.missing),
        ("assigned more than once", &problems.duplicated),
        ("not dataset categories", &problems.foreign),
    ] {
        if !ids.is_empty() {
            findings.push(Finding {
                message: format!("{} classes {what}", ids.len()),
                class_ids: ids.clone(),
                ..Finding::default()
            });
        }
    }
    for &t in &problems.empty_tasks {
        findings.push(Finding {
            message: format!("task {t} introduces no class"),
            task: Some(t),
            ..Finding::default()
        });
    }
    if plan.tasks.len() != spec.len() {
        findings.push(Finding {
            message: format!(
                "{} task splits for {} configured tasks",
                plan.tasks.len(),
                spec.len()
            ),
            task: Some(plan.tasks.len().min(spec.len()) + 1),
            ..Finding::default()
        });
    }
    findings
}

fn annotation_specificity(plan: &SplitPlan) -> Vec<Finding> {
    let spec = &plan.task_spec;
    let mut findings = Vec::new();
    for (i, split) in plan.tasks.iter().enumerate() {
        let t = i + 1;
        let Ok(unknown) = spec.unknown(t) else { continue };
        for (name, data) in [("train", &split.train), ("val", &split.val)] {
            let bad: Vec<_> = data
                .annotations
                .iter()
                .filter(|a| unknown.contains(&a.category_id))
                .collect();
            if bad.is_empty() {
                continue;
            }
            findings.push(Finding {
                message: format!(
                    "task {t} {name} split labels {} instances of unknown classes",
                    bad.len()
                ),
                task: Some(t),
                image_ids: bad
                    .iter()
                    .map(|a| a.image_id)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
                annotation_ids: bad.iter().map(|a| a.id).collect(),
                class_ids: bad
                    .iter()
                    .map(|a| a.category_id)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            });
        }
    }
    findings
}

fn label_integrity(plan: &SplitPlan) -> Vec<Finding> {
    let mut counts: BTreeMap<ImageId, usize> = BTreeMap::new();
    for ann in &plan.test.annotations {
        *counts.entry(ann.image_id).or_default() += 1;
    }
    let mut findings = Vec::new();
    let sparse: Vec<ImageId> = plan
        .test
        .images
        .iter()
        .filter(|i| counts.get(&i.id).copied().unwrap_or(0) < plan.completeness_floor)
        .map(|i| i.id)
        .collect();
    if !sparse.is_empty() {
        findings.push(Finding {
            message: format!(
                "{} test images have fewer than {} annotations",
                sparse.len(),
                plan.completeness_floor
            ),
            image_ids: sparse,
            ..Finding::default()
        });
    }
    let excluded: BTreeSet<ImageId> = plan.exclusion_list.iter().copied().collect();
    let leaked: Vec<ImageId> = plan
        .test
        .images
        .iter()
        .filter(|i| excluded.contains(&i.id))
        .map(|i| i.id)
        .collect();
    if !leaked.is_empty() {
        findings.push(Finding {
            message: format!("{} excluded images remain in the test split", leaked.len()),
            image_ids: leaked,
            ..Finding::default()
        });
    }
    findings
}

fn data_specificity(plan: &SplitPlan, clusters: &mut Vec<Vec<ImageId>>) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut internal = |label: String, task: Option<usize>, data: &Dataset| {
        let mut ids: BTreeMap<ImageId, usize> = BTreeMap::new();
        let mut names: BTreeMap<&str, Vec<ImageId>> = BTreeMap::new();
        for img in &data.images {
            *ids.entry(img.id).or_default() += 1;
            names.entry(&img.file_name).or_default().push(img.id);
        }
        let repeated: Vec<ImageId> = ids.into_iter().filter(|&(_, n)| n > 1).map(|(id, _)| id).collect();
        if !repeated.is_empty() {
            findings.push(Finding {
                message: format!("{label} repeats {} image ids", repeated.len()),
                task,
                image_ids: repeated,
                ..Finding::default()
            });
        }
        for (name, group) in names {
            if group.len() > 1 {
                findings.push(Finding {
                    message: format!("{label} holds {} images named {name:?}", group.len()),
                    task,
                    image_ids: group.clone(),
                    ..Finding::default()
                });
                clusters.push(group);
            }
        }
    };
    for (i, split) in plan.tasks.iter().enumerate() {
        internal(format!("task {} train", i + 1), Some(i + 1), &split.train);
        internal(format!("task {} val", i + 1), Some(i + 1), &split.val);
    }
    internal("test".to_string(), None, &plan.test);

    for (i, split) in plan.tasks.iter().enumerate() {
        let t = i + 1;
        for (a, b, da, db) in [
            ("train", "val", &split.train, &split.val),
            ("train", "test", &split.train, &plan.test),
            ("val", "test", &split.val, &plan.test),
        ] {
            let shared = overlap(da, db);
            if !shared.is_empty() {
                findings.push(Finding {
                    message: format!("task {t} {a} and {b} share {} images", shared.len()),
                    task: Some(t),
                    image_ids: shared,
                    ..Finding::default()
                });
            }
        }
    }
    findings
}

/// Images of `a` that also appear in `b` by id or by file name.
fn overlap(a: &Dataset, b: &Dataset) -> Vec<ImageId> {
    let ids = b.image_ids();
    let names: BTreeSet<&str> = b.images.iter().map(|i| i.file_name.as_str()).collect();
    a.images
        .iter()
        .filter(|i| ids.contains(&i.id) || names.contains(i.file_name.as_str()))
        .map(|i| i.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Images whose annotated area fraction lies below `Q1 - 3 * IQR`.
fn coverage_outliers(test: &Dataset) -> Vec<ImageId> {
    let mut area: BTreeMap<ImageId, f64> = BTreeMap::new();
    for ann in test.annotations.iter().filter(|a| !a.is_crowd) {
        *area.entry(ann.image_id).or_default() += ann.bbox.area();
    }
    let coverage: Vec<(ImageId, f64)> = test
        .images
        .iter()
        .filter(|i| i.width > 0 && i.height > 0)
        .map(|i| {
            let total = f64::from(i.width) * f64::from(i.height);
            (i.id, area.get(&i.id).copied().unwrap_or(0.0) / total)
        })
        .collect();
    if coverage.len() < 4 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = coverage.iter().map(|&(_, c)| c).collect();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let (q1, q3) = (q(0.25), q(0.75));
    let cut = q1 - 3.0 * (q3 - q1);
    coverage
        .into_iter()
        .filter(|&(_, c)| c < cut)
        .map(|(id, _)| id)
        .collect()
}
