//! Domain types shared by every module.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type ImageId = u64;
pub type AnnotationId = u64;

/// A dataset category id. COCO ids are positive integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Predicted label: a dataset category or the reserved `unknown` sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Class(CategoryId),
    Unknown,
}

impl Label {
    /// Value used for `category_id` in prediction files.
    pub const UNKNOWN_ID: i64 = -1;

    pub fn class(self) -> Option<CategoryId> {
        match self {
            Label::Class(c) => Some(c),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(self) -> bool {
        matches!(self, Label::Unknown)
    }

    pub fn to_file_id(self) -> i64 {
        match self {
            Label::Class(c) => i64::from(c.0),
            Label::Unknown => Self::UNKNOWN_ID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub bbox: BBox,
    pub category_id: CategoryId,
    pub is_crowd: bool,
}

/// One detection. `scores`, when present, holds the per-class probabilities
/// the detector produced for the known classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: ImageId,
    pub bbox: BBox,
    pub label: Label,
    pub score: f64,
    pub scores: Option<BTreeMap<CategoryId, f64>>,
}

impl Prediction {
    pub fn new(image_id: ImageId, bbox: BBox, label: Label, score: f64) -> Self {
        Prediction {
            image_id,
            bbox,
            label,
            score,
            scores: None,
        }
    }

    pub fn with_scores(mut self, scores: BTreeMap<CategoryId, f64>) -> Self {
        self.scores = Some(scores);
        self
    }

    /// Checks the score range and, for class-labelled predictions with a
    /// score vector, that the label is one of the vector's maxima.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "prediction on image {} has score {} outside [0, 1]",
                self.image_id, self.score
            )));
        }
        let Some(scores) = &self.scores else {
            return Ok(());
        };
        if let Some((c, s)) = scores.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!(
                "prediction on image {} has class {c} score {s} outside [0, 1]",
                self.image_id
            )));
        }
        if let Label::Class(label) = self.label {
            let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
            match scores.get(&label) {
                Some(&s) if s == max => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "prediction on image {} is labelled {label} but that is not the argmax of its score vector",
                        self.image_id
                    )))
                }
            }
        }
        Ok(())
    }
}

/// A COCO-style dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<GroundTruthBox>,
    pub categories: Vec<Category>,
}

impl Dataset {
    /// Checks id uniqueness and that every annotation references a declared
    /// image and category.
    pub fn validate(&self) -> Result<()> {
        let mut images = BTreeSet::new();
        for img in &self.images {
            if !images.insert(img.id) {
                return Err(Error::Validation(format!("duplicate image id {}", img.id)));
            }
        }
        let mut cats = BTreeSet::new();
        for cat in &self.categories {
            if !cats.insert(cat.id) {
                return Err(Error::Validation(format!("duplicate category id {}", cat.id)));
            }
        }
        let mut anns = BTreeSet::new();
        for ann in &self.annotations {
            if !anns.insert(ann.id) {
                return Err(Error::Validation(format!("duplicate annotation id {}", ann.id)));
            }
            if !images.contains(&ann.image_id) {
                return Err(Error::Reference {
                    annotation_id: ann.id,
                    message: format!("image_id {} is not declared", ann.image_id),
                });
            }
            if !cats.contains(&ann.category_id) {
                return Err(Error::Reference {
                    annotation_id: ann.id,
                    message: format!("category_id {} is not declared", ann.category_id),
                });
            }
            if !ann.bbox.is_valid() {
                return Err(Error::Validation(format!(
                    "annotation {} has an invalid box",
                    ann.id
                )));
            }
        }
        Ok(())
    }

    pub fn category_ids(&self) -> BTreeSet<CategoryId> {
        self.categories.iter().map(|c| c.id).collect()
    }

    pub fn category(&self, id: CategoryId) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn image_ids(&self) -> BTreeSet<ImageId> {
        self.images.iter().map(|i| i.id).collect()
    }

    /// Annotation indices grouped by image id.
    pub fn annotations_by_image(&self) -> HashMap<ImageId, Vec<usize>> {
        let mut map: HashMap<ImageId, Vec<usize>> = HashMap::new();
        for (i, ann) in self.annotations.iter().enumerate() {
            map.entry(ann.image_id).or_default().push(i);
        }
        map
    }

    /// The subset restricted to `keep` images, with annotations filtered by
    /// `keep_annotation`. Categories are carried over unchanged.
    pub fn subset(
        &self,
        keep: &BTreeSet<ImageId>,
        mut keep_annotation: impl FnMut(&GroundTruthBox) -> bool,
    ) -> Dataset {
        Dataset {
            images: self
                .images
                .iter()
                .filter(|i| keep.contains(&i.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id) && keep_annotation(a))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub classes: Vec<CategoryId>,
}

/// Problems that stop a task list from partitioning the class set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PartitionProblems {
    /// Dataset classes assigned to no task.
    pub missing: Vec<CategoryId>,
    /// Classes assigned to more than one task (or twice within one).
    pub duplicated: Vec<CategoryId>,
    /// Classes that are not dataset classes.
    pub foreign: Vec<CategoryId>,
    /// 1-based indices of tasks with no classes.
    pub empty_tasks: Vec<usize>,
}

impl PartitionProblems {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
            && self.duplicated.is_empty()
            && self.foreign.is_empty()
            && self.empty_tasks.is_empty()
    }
}

impl fmt::Display for PartitionProblems {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = |v: &[CategoryId]| {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut parts = Vec::new();
        if !self.missing.is_empty() {
            parts.push(format!("missing classes [{}]", ids(&self.missing)));
        }
        if !self.duplicated.is_empty() {
            parts.push(format!("duplicated classes [{}]", ids(&self.duplicated)));
        }
        if !self.foreign.is_empty() {
            parts.push(format!("undeclared classes [{}]", ids(&self.foreign)));
        }
        if !self.empty_tasks.is_empty() {
            parts.push(format!("empty tasks {:?}", self.empty_tasks));
        }
        f.write_str(&parts.join("; "))
    }
}

/// An ordered partition of the dataset classes into incremental tasks.
///
/// Task indices are 1-based. `known(t)` is the union of tasks `1..=t`
/// (`known(0)` is empty) and `unknown(t)` its complement in the class set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    tasks: Vec<Task>,
    all_classes: BTreeSet<CategoryId>,
}

impl TaskSpec {
    pub fn new(tasks: Vec<Task>, all_classes: impl IntoIterator<Item = CategoryId>) -> Result<Self> {
        let spec = Self::new_unchecked(tasks, all_classes);
        let problems = spec.partition_problems();
        if spec.tasks.is_empty() {
            return Err(Error::TaskConfig("no tasks defined".into()));
        }
        if !problems.is_empty() {
            return Err(Error::TaskConfig(problems.to_string()));
        }
        Ok(spec)
    }

    /// Builds a spec without checking the partition. Used when reading split
    /// plans back for auditing, where a broken spec is a finding, not an
    /// error.
    pub fn new_unchecked(
        tasks: Vec<Task>,
        all_classes: impl IntoIterator<Item = CategoryId>,
    ) -> Self {
        TaskSpec {
            tasks,
            all_classes: all_classes.into_iter().collect(),
        }
    }

    pub fn partition_problems(&self) -> PartitionProblems {
        let mut seen = BTreeSet::new();
        let mut duplicated = BTreeSet::new();
        let mut foreign = BTreeSet::new();
        let mut empty_tasks = Vec::new();
        for (i, task) in self.tasks.iter().enumerate() {
            if task.classes.is_empty() {
                empty_tasks.push(i + 1);
            }
            for &c in &task.classes {
                if !seen.insert(c) {
                    duplicated.insert(c);
                }
                if !self.all_classes.contains(&c) {
                    foreign.insert(c);
                }
            }
        }
        PartitionProblems {
            missing: self.all_classes.difference(&seen).copied().collect(),
            duplicated: duplicated.into_iter().collect(),
            foreign: foreign.into_iter().collect(),
            empty_tasks,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn all_classes(&self) -> &BTreeSet<CategoryId> {
        &self.all_classes
    }

    pub fn check_index(&self, task: usize) -> Result<()> {
        if task == 0 || task > self.tasks.len() {
            return Err(Error::TaskIndex {
                index: task,
                count: self.tasks.len(),
            });
        }
        Ok(())
    }

    /// Classes introduced by task `task` (1-based).
    pub fn current(&self, task: usize) -> Result<BTreeSet<CategoryId>> {
        self.check_index(task)?;
        Ok(self.tasks[task - 1].classes.iter().copied().collect())
    }

    /// Union of tasks `1..=task`. `task = 0` yields the empty set.
    pub fn known(&self, task: usize) -> Result<BTreeSet<CategoryId>> {
        if task > self.tasks.len() {
            return Err(Error::TaskIndex {
                index: task,
                count: self.tasks.len(),
            });
        }
        Ok(self.tasks[..task]
            .iter()
            .flat_map(|t| t.classes.iter().copied())
            .collect())
    }

    pub fn unknown(&self, task: usize) -> Result<BTreeSet<CategoryId>> {
        let known = self.known(task)?;
        Ok(self.all_classes.difference(&known).copied().collect())
    }

    /// Applies a class-id relabelling to every task and the class universe.
    pub fn map_classes(&self, f: impl Fn(CategoryId) -> CategoryId) -> TaskSpec {
        TaskSpec {
            tasks: self
                .tasks
                .iter()
                .map(|t| Task {
                    name: t.name.clone(),
                    classes: t.classes.iter().map(|&c| f(c)).collect(),
                })
                .collect(),
            all_classes: self.all_classes.iter().map(|&c| f(c)).collect(),
        }
    }
}
