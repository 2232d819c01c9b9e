//! Tooling for open-world object detection (OWOD) experiments.
//!
//! The crate covers three jobs that are usually scattered across ad-hoc
//! scripts:
//!
//! - **Benchmark construction.** [`benchmark`] turns COCO-style annotation
//!   files into incremental task splits and audits a split against the five
//!   open-world benchmark principles (class openness, task increment,
//!   annotation specificity, label integrity, data specificity).
//! - **Evaluation.** [`matching`] and [`metrics`] compute known-class mAP
//!   (previous / current / both), unknown recall, Wilderness Impact, A-OSE and
//!   the unknown detection recall / precision pair (UDR / UDP).
//! - **Post-processing.** [`pad`] exposes the proposal confirmation and
//!   anchor relabelling used to mine unknown proposals, and [`cec`] the
//!   class-specific expelling calibrator that re-allocates over-confident
//!   known-class predictions to `unknown`.
//!
//! Everything is file driven: annotations and predictions use the COCO JSON
//! conventions, with `category_id = -1` marking an unknown prediction.

pub mod benchmark;
pub mod cec;
pub mod error;
pub mod geometry;
pub mod io;
pub mod manifest;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pad;

pub use error::{Error, Result};
pub use geometry::{iou, BBox};
pub use model::{
    Category, CategoryId, Dataset, GroundTruthBox, ImageId, ImageInfo, Label, Prediction, Task,
    TaskSpec,
};
