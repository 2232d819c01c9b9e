//! Reading and writing the file formats: COCO annotations, prediction
//! files, task configurations and exclusion lists.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::{
    Category, CategoryId, Dataset, GroundTruthBox, ImageId, ImageInfo, Label, Prediction, Task,
    TaskSpec,
};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::json(text, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// COCO annotations

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: ImageId,
    #[serde(default)]
    file_name: String,
    #[serde(default)]
    width: u32,
    #[serde(default)]
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: ImageId,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_deserializing)]
    area: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
    #[serde(default)]
    supercategory: String,
}

/// Parses a COCO-style annotation document.
pub fn parse_annotations(text: &str) -> Result<Dataset> {
    let raw: CocoFile = parse_json(text)?;
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for a in raw.annotations {
        let [x, y, w, h] = a.bbox;
        if w < 0.0 || h < 0.0 {
            return Err(Error::Validation(format!(
                "annotation {} has negative width or height ({w} x {h})",
                a.id
            )));
        }
        let bbox = BBox::from_xywh(x, y, w, h).ok_or_else(|| {
            Error::Validation(format!("annotation {} has a non-finite box", a.id))
        })?;
        annotations.push(GroundTruthBox {
            id: a.id,
            image_id: a.image_id,
            bbox,
            category_id: CategoryId(a.category_id),
            is_crowd: a.iscrowd != 0,
        });
    }
    let dataset = Dataset {
        images: raw
            .images
            .into_iter()
            .map(|i| ImageInfo {
                id: i.id,
                file_name: i.file_name,
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
        categories: raw
            .categories
            .into_iter()
            .map(|c| Category {
                id: CategoryId(c.id),
                name: c.name,
                supercategory: c.supercategory,
            })
            .collect(),
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_annotations(&read_text(path.as_ref())?)
}

pub fn annotations_to_string(dataset: &Dataset) -> String {
    let file = CocoFile {
        images: dataset
            .images
            .iter()
            .map(|i| CocoImage {
                id: i.id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations: dataset
            .annotations
            .iter()
            .map(|a| CocoAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id.0,
                bbox: a.bbox.to_xywh(),
                iscrowd: u8::from(a.is_crowd),
                area: a.bbox.area(),
            })
            .collect(),
        categories: dataset
            .categories
            .iter()
            .map(|c| CocoCategory {
                id: c.id.0,
                name: c.name.clone(),
                supercategory: c.supercategory.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("COCO documents always serialize")
}

pub fn write_annotations(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_text(path.as_ref(), &annotations_to_string(dataset))
}

// ---------------------------------------------------------------------------
// Predictions

#[derive(Debug, Serialize, Deserialize)]
struct RawPrediction {
    image_id: ImageId,
    category_id: i64,
    bbox: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<BTreeMap<String, f64>>,
}

/// Parses a prediction array. `classes` is the class table of the dataset
/// the predictions refer to; `category_id = -1` is the unknown sentinel.
pub fn parse_predictions(text: &str, classes: &BTreeSet<CategoryId>) -> Result<Vec<Prediction>> {
    let raw: Vec<RawPrediction> = parse_json(text)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = if r.category_id == Label::UNKNOWN_ID {
                Label::Unknown
            } else {
                let id = u32::try_from(r.category_id)
                    .ok()
                    .map(CategoryId)
                    .filter(|c| classes.contains(c))
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "prediction {i}: category_id {} is neither -1 nor a known class",
                            r.category_id
                        ))
                    })?;
                Label::Class(id)
            };
            let [x, y, w, h] = r.bbox;
            let bbox = BBox::from_xywh(x, y, w, h).ok_or_else(|| {
                Error::Validation(format!("prediction {i}: invalid box {:?}", r.bbox))
            })?;
            let scores = r
                .scores
                .map(|m| {
                    m.into_iter()
                        .map(|(k, v)| {
                            let id = k.parse::<u32>().map(CategoryId).map_err(|_| {
                                Error::Validation(format!(
                                    "prediction {i}: score key {k:?} is not a class id"
                                ))
                            })?;
                            Ok((id, v))
                        })
                        .collect::<Result<BTreeMap<_, _>>>()
                })
                .transpose()?;
            let p = Prediction {
                image_id: r.image_id,
                bbox,
                label,
                score: r.score,
                scores,
            };
            p.validate()
                .map_err(|e| Error::Validation(format!("prediction {i}: {e}")))?;
            Ok(p)
        })
        .collect()
}

pub fn load_predictions(
    path: impl AsRef<Path>,
    classes: &BTreeSet<CategoryId>,
) -> Result<Vec<Prediction>> {
    parse_predictions(&read_text(path.as_ref())?, classes)
}

pub fn predictions_to_string(predictions: &[Prediction]) -> String {
    let raw: Vec<RawPrediction> = predictions
        .iter()
        .map(|p| RawPrediction {
            image_id: p.image_id,
            category_id: p.label.to_file_id(),
            bbox: p.bbox.to_xywh(),
            score: p.score,
            scores: p
                .scores
                .as_ref()
                .map(|m| m.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
        })
        .collect();
    serde_json::to_string(&raw).expect("predictions always serialize")
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<()> {
    write_text(path.as_ref(), &predictions_to_string(predictions))
}

// ---------------------------------------------------------------------------
// Task configuration

/// A class reference in a task configuration: a category name or id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Id(u32),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub name: String,
    pub classes: Vec<ClassRef>,
}

/// Ordered task list as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub tasks: Vec<TaskEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TaskConfigDoc {
    Bare(Vec<TaskEntry>),
    Wrapped(TaskConfig),
}

impl TaskConfig {
    /// Parses JSON (a bare array or `{"tasks": [...]}`) or TOML
    /// (`[[tasks]]` tables).
    pub fn parse(text: &str, is_toml: bool) -> Result<Self> {
        if is_toml {
            return toml::from_str::<TaskConfig>(text).map_err(|e| {
                let offset = e.span().map(|s| s.start).unwrap_or(0);
                let line = text[..offset.min(text.len())].matches('\n').count() + 1;
                let column = offset - text[..offset].rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
                Error::Parse {
                    offset,
                    line,
                    column,
                    message: e.message().to_string(),
                }
            });
        }
        Ok(match parse_json::<TaskConfigDoc>(text)? {
            TaskConfigDoc::Bare(tasks) => TaskConfig { tasks },
            TaskConfigDoc::Wrapped(c) => c,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        Self::parse(&read_text(path)?, is_toml)
    }

    /// Resolves names and ids against `categories` and checks that the tasks
    /// partition them.
    pub fn resolve(&self, categories: &[Category]) -> Result<TaskSpec> {
        let tasks = self
            .tasks
            .iter()
            .map(|entry| {
                let classes = entry
                    .classes
                    .iter()
                    .map(|r| match r {
                        ClassRef::Id(id) => categories
                            .iter()
                            .find(|c| c.id.0 == *id)
                            .map(|c| c.id)
                            .ok_or_else(|| {
                                Error::TaskConfig(format!(
                                    "task {:?}: class id {id} is not a dataset category",
                                    entry.name
                                ))
                            }),
                        ClassRef::Name(name) => categories
                            .iter()
                            .find(|c| &c.name == name)
                            .map(|c| c.id)
                            .ok_or_else(|| {
                                Error::TaskConfig(format!(
                                    "task {:?}: class {name:?} is not a dataset category",
                                    entry.name
                                ))
                            }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Task {
                    name: entry.name.clone(),
                    classes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TaskSpec::new(tasks, categories.iter().map(|c| c.id))
    }
}

/// Reads a newline-delimited list of image ids. Blank lines and `#` comments
/// are skipped.
pub fn parse_exclusion_list(text: &str) -> Result<Vec<ImageId>> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            l.parse::<ImageId>().map_err(|_| {
                Error::Validation(format!("exclusion list line {}: {l:?} is not an image id", n + 1))
            })
        })
        .collect()
}

pub fn load_exclusion_list(path: impl AsRef<Path>) -> Result<Vec<ImageId>> {
    parse_exclusion_list(&read_text(path.as_ref())?)
}
