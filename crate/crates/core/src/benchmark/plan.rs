use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_annotations, read_json, write_annotations, write_json};
use crate::manifest::{digest_json, RunManifest};
use crate::model::{Category, Dataset, ImageId, TaskSpec};

pub const PLAN_FORMAT: &str = "owod-split-plan/1";
const MANIFEST_NAME: &str = "manifest.json";

/// Which annotations a task's train and val images keep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationRule {
    /// Only the classes introduced by the task.
    #[default]
    NewlyKnown,
    /// Every class known at the task (fine-tuning splits).
    AllKnown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub train: Dataset,
    pub val: Dataset,
}

/// The full output of a benchmark build.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub task_spec: TaskSpec,
    pub categories: Vec<Category>,
    pub tasks: Vec<TaskSplit>,
    pub test: Dataset,
    /// Test-pool images held out of the test split, requested and automatic.
    pub exclusion_list: Vec<ImageId>,
    /// The subset of `exclusion_list` added for falling below the floor.
    pub auto_excluded: Vec<ImageId>,
    /// Images dropped as duplicates inside a pool.
    pub removed_duplicates: Vec<ImageId>,
    /// Training-pool images dropped for colliding with a test image.
    pub removed_overlap: Vec<ImageId>,
    pub annotation_rule: AnnotationRule,
    pub completeness_floor: usize,
    pub seed: u64,
    pub val_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskEntry {
    name: String,
    classes: Vec<crate::model::CategoryId>,
    train: String,
    val: String,
    train_images: usize,
    val_images: usize,
    train_annotations: usize,
    val_annotations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanManifest {
    format: String,
    config_digest: String,
    seed: u64,
    val_size: usize,
    annotation_rule: AnnotationRule,
    completeness_floor: usize,
    categories: Vec<Category>,
    all_classes: Vec<crate::model::CategoryId>,
    tasks: Vec<TaskEntry>,
    test: String,
    test_images: usize,
    test_annotations: usize,
    exclusion_list: Vec<ImageId>,
    auto_excluded: Vec<ImageId>,
    removed_duplicates: Vec<ImageId>,
    removed_overlap: Vec<ImageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunManifest>,
}

#[derive(Serialize)]
struct ConfigView<'a> {
    tasks: &'a [crate::model::Task],
    seed: u64,
    val_size: usize,
    annotation_rule: AnnotationRule,
    completeness_floor: usize,
}

impl SplitPlan {
    /// Digest of the settings that determine the plan.
    pub fn config_digest(&self) -> String {
        digest_json(&ConfigView {
            tasks: self.task_spec.tasks(),
            seed: self.seed,
            val_size: self.val_size,
            annotation_rule: self.annotation_rule,
            completeness_floor: self.completeness_floor,
        })
    }

    /// Writes every split plus `manifest.json` into `dir`. When `run` is
    /// given, the split files are recorded as its outputs and the run is
    /// embedded in the manifest. Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>, mut run: Option<RunManifest>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tasks = Vec::new();
        let mut written = Vec::new();
        for (i, (split, spec)) in self.tasks.iter().zip(self.task_spec.tasks()).enumerate() {
            let train = format!("task{}_train.json", i + 1);
            let val = format!("task{}_val.json", i + 1);
            write_annotations(dir.join(&train), &split.train)?;
            write_annotations(dir.join(&val), &split.val)?;
            written.push(dir.join(&train));
            written.push(dir.join(&val));
            tasks.push(TaskEntry {
                name: spec.name.clone(),
                classes: spec.classes.clone(),
                train,
                val,
                train_images: split.train.images.len(),
                val_images: split.val.images.len(),
                train_annotations: split.train.annotations.len(),
                val_annotations: split.val.annotations.len(),
            });
        }
        write_annotations(dir.join("test.json"), &self.test)?;
        written.push(dir.join("test.json"));
        if let Some(run) = run.as_mut() {
            for path in &written {
                run.add_output(path)?;
            }
            run.finish();
        }
        let manifest = PlanManifest {
            format: PLAN_FORMAT.to_string(),
            config_digest: self.config_digest(),
            seed: self.seed,
            val_size: self.val_size,
            annotation_rule: self.annotation_rule,
            completeness_floor: self.completeness_floor,
            categories: self.categories.clone(),
            all_classes: self.task_spec.all_classes().iter().copied().collect(),
            tasks,
            test: "test.json".to_string(),
            test_images: self.test.images.len(),
            test_annotations: self.test.annotations.len(),
            exclusion_list: self.exclusion_list.clone(),
            auto_excluded: self.auto_excluded.clone(),
            removed_duplicates: self.removed_duplicates.clone(),
            removed_overlap: self.removed_overlap.clone(),
            run,
        };
        let path = dir.join(MANIFEST_NAME);
        write_json(&path, &manifest)?;
        Ok(path)
    }

    /// Reads a plan from its manifest file or from the directory holding it.
    /// The task list is taken as written, so a broken partition surfaces in
    /// the audit instead of failing the read.
    pub fn read(path: impl AsRef<Path>) -> Result<SplitPlan> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let m: PlanManifest = read_json(&manifest_path)?;
        if m.format != PLAN_FORMAT {
            return Err(Error::Validation(format!(
                "{}: unsupported plan format {:?}",
                manifest_path.display(),
                m.format
            )));
        }
        let mut tasks = Vec::new();
        let mut specs = Vec::new();
        for entry in &m.tasks {
            tasks.push(TaskSplit {
                train: load_annotations(dir.join(&entry.train))?,
                val: load_annotations(dir.join(&entry.val))?,
            });
            specs.push(crate::model::Task {
                name: entry.name.clone(),
                classes: entry.classes.clone(),
            });
        }
        Ok(SplitPlan {
            task_spec: TaskSpec::new_unchecked(specs, m.all_classes),
            categories: m.categories,
            tasks,
            test: load_annotations(dir.join(&m.test))?,
            exclusion_list: m.exclusion_list,
            auto_excluded: m.auto_excluded,
            removed_duplicates: m.removed_duplicates,
            removed_overlap: m.removed_overlap,
            annotation_rule: m.annotation_rule,
            completeness_floor: m.completeness_floor,
            seed: m.seed,
            val_size: m.val_size,
        })
    }

    /// Image counts laid out as a tab-separated table, one column per task.
    pub fn count_table(&self) -> String {
        let mut out = String::from("split");
        for t in self.task_spec.tasks() {
            out.push('\t');
            out.push_str(&t.name);
        }
        out.push_str("\nclasses");
        for t in self.task_spec.tasks() {
            out.push_str(&format!("\t{}", t.classes.len()));
        }
        out.push_str("\ntrain");
        for s in &self.tasks {
            out.push_str(&format!("\t{}", s.train.images.len()));
        }
        out.push_str("\nval");
        for s in &self.tasks {
            out.push_str(&format!("\t{}", s.val.images.len()));
        }
        out.push_str(&format!("\ntest\t{}\n", self.test.images.len()));
        out
    }
}
