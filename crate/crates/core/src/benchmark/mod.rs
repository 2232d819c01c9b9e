//! Open-world benchmark construction and auditing.
//!
//! [`build`] turns a training pool and a test pool (COCO-style datasets) into
//! per-task train/val splits plus one fully-annotated test split. [`audit`]
//! checks any split plan against the five benchmark principles:
//!
//! | principle              | check                                                        |
//! |------------------------|--------------------------------------------------------------|
//! | class openness         | the test split holds classes unknown at every task but the last |
//! | task increment         | tasks partition the classes, each adding at least one        |
//! | annotation specificity | train/val of task `t` carry no annotation of `unknown(t)`    |
//! | label integrity        | test images meet the completeness floor and are not excluded |
//! | data specificity       | splits are pairwise disjoint and free of duplicates          |

mod audit;
mod build;
mod dedup;
mod plan;

pub use audit::{audit, AuditReport, Finding, Principle, PrincipleResult};
pub use build::{build, BuildOptions};
pub use dedup::{deduplicate, DedupMode};
pub use plan::{AnnotationRule, SplitPlan, TaskSplit, PLAN_FORMAT};
