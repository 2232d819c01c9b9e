use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dedup::{deduplicate, DedupMode};
use super::plan::{AnnotationRule, SplitPlan, TaskSplit};
use crate::error::{Error, Result};
use crate::model::{Dataset, ImageId, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub val_size: usize,
    pub seed: u64,
    pub annotation_rule: AnnotationRule,
    /// Test images with fewer annotations are excluded automatically.
    pub completeness_floor: usize,
    /// Image roots for content-hash deduplication of the training and test
    /// pools. Without them images are compared by file name.
    pub train_image_root: Option<PathBuf>,
    pub test_image_root: Option<PathBuf>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            val_size: 1000,
            seed: 0,
            annotation_rule: AnnotationRule::NewlyKnown,
            completeness_floor: 1,
            train_image_root: None,
            test_image_root: None,
        }
    }
}

fn mode(root: &Option<PathBuf>) -> DedupMode {
    root.clone().map_or(DedupMode::FileName, DedupMode::ContentHash)
}

/// Builds per-task train/val splits from `train_pool` and a test split from
/// `test_pool`.
///
/// Task `t` trains on every pool image holding at least one annotation of the
/// classes it introduces. `val_size` of those images are drawn as its
/// validation split (never reusing an earlier task's validation image) and
/// removed from training. Train and val keep only annotations allowed by the
/// annotation rule; the test split keeps every annotation.
pub fn build(
    train_pool: &Dataset,
    test_pool: &Dataset,
    spec: &TaskSpec,
    exclusion_list: &[ImageId],
    opts: &BuildOptions,
) -> Result<SplitPlan> {
    train_pool.validate()?;
    test_pool.validate()?;
    let problems = spec.partition_problems();
    if spec.is_empty() || !problems.is_empty() {
        return Err(Error::TaskConfig(if spec.is_empty() {
            "no tasks defined".into()
        } else {
            problems.to_string()
        }));
    }
    if spec.all_classes() != &train_pool.category_ids() {
        return Err(Error::TaskConfig(
            "task classes do not match the training pool categories".into(),
        ));
    }
    if !test_pool.images.is_empty() && test_pool.category_ids() != train_pool.category_ids() {
        return Err(Error::Validation(
            "training and test pools declare different categories".into(),
        ));
    }

    let test_ids = test_pool.image_ids();
    let missing: Vec<_> = exclusion_list.iter().filter(|id| !test_ids.contains(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "exclusion list references images not in the test pool: {missing:?}"
        )));
    }

    let test_mode = mode(&opts.test_image_root);
    let train_mode = mode(&opts.train_image_root);
    let (test_pool, mut removed_duplicates) = deduplicate(test_pool, &test_mode)?;
    let (train_pool, removed_train) = deduplicate(train_pool, &train_mode)?;
    removed_duplicates.extend(removed_train);

    // Training images that are also test images, by id, name or content.
    let mut test_keys: BTreeSet<String> =
        test_pool.images.iter().map(|i| i.file_name.clone()).collect();
    let same_hash_space = opts.train_image_root.is_some() && opts.test_image_root.is_some();
    if same_hash_space {
        test_keys.extend(test_mode.keys(&test_pool)?);
    }
    let train_hashes = if same_hash_space {
        Some(train_mode.keys(&train_pool)?)
    } else {
        None
    };
    let test_ids = test_pool.image_ids();
    let mut removed_overlap = Vec::new();
    let mut pool_ids = BTreeSet::new();
    for (i, img) in train_pool.images.iter().enumerate() {
        let hash_hit = train_hashes.as_ref().is_some_and(|h| test_keys.contains(&h[i]));
        if test_ids.contains(&img.id) || test_keys.contains(&img.file_name) || hash_hit {
            removed_overlap.push(img.id);
        } else {
            pool_ids.insert(img.id);
        }
    }

    let mut excluded: BTreeSet<ImageId> = exclusion_list.iter().copied().collect();
    let mut counts: BTreeMap<ImageId, usize> = BTreeMap::new();
    for ann in &test_pool.annotations {
        *counts.entry(ann.image_id).or_default() += 1;
    }
    let mut auto_excluded = Vec::new();
    for img in &test_pool.images {
        let n = counts.get(&img.id).copied().unwrap_or(0);
        if n < opts.completeness_floor && !excluded.contains(&img.id) {
            auto_excluded.push(img.id);
        }
    }
    excluded.extend(&auto_excluded);
    let test_keep: BTreeSet<ImageId> = test_ids.difference(&excluded).copied().collect();
    let test = test_pool.subset(&test_keep, |_| true);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut used_val: BTreeSet<ImageId> = BTreeSet::new();
    let mut tasks = Vec::with_capacity(spec.len());
    for t in 1..=spec.len() {
        let newly = spec.current(t)?;
        let allowed = match opts.annotation_rule {
            AnnotationRule::NewlyKnown => newly.clone(),
            AnnotationRule::AllKnown => spec.known(t)?,
        };
        let mut train_ids: BTreeSet<ImageId> = train_pool
            .annotations
            .iter()
            .filter(|a| newly.contains(&a.category_id) && pool_ids.contains(&a.image_id))
            .map(|a| a.image_id)
            .collect();
        if opts.val_size >= train_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "task {t}: val size {} is not smaller than its {} training images",
                opts.val_size,
                train_ids.len()
            )));
        }
        let candidates: Vec<ImageId> = train_ids.difference(&used_val).copied().collect();
        if opts.val_size > candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "task {t}: only {} images are free for a validation split of {}",
                candidates.len(),
                opts.val_size
            )));
        }
        let val_ids: BTreeSet<ImageId> =
            rand::seq::index::sample(&mut rng, candidates.len(), opts.val_size)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
        for id in &val_ids {
            train_ids.remove(id);
        }
        used_val.extend(&val_ids);
        let keep = |a: &crate::model::GroundTruthBox| allowed.contains(&a.category_id);
        tasks.push(TaskSplit {
            train: train_pool.subset(&train_ids, keep),
            val: train_pool.subset(&val_ids, keep),
        });
    }

    let mut exclusion_list: Vec<ImageId> = exclusion_list.to_vec();
    exclusion_list.extend(&auto_excluded);
    Ok(SplitPlan {
        task_spec: spec.clone(),
        categories: train_pool.categories.clone(),
        tasks,
        test,
        exclusion_list,
        auto_excluded,
        removed_duplicates,
        removed_overlap,
        annotation_rule: opts.annotation_rule,
        completeness_floor: opts.completeness_floor,
        seed: opts.seed,
        val_size: opts.val_size,
    })
}
