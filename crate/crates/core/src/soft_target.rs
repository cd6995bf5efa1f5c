//! Context-aware soft targets and the class-distinct batch sampler.
//!
//! For batch member `i` with crop `c_i` and condition `d_i`, row `i` of the
//! target matrix puts
//!
//! * `1 - alpha - beta` on the diagonal,
//! * `alpha / N_crop(i)` on each member with the same crop and another condition,
//! * `beta / N_disease(i)` on each member with the same condition and another crop,
//! * `0` elsewhere,
//!
//! where the counts are taken over the other batch members. A row without
//! same-crop (or same-condition) partners keeps the unassigned `alpha` (or
//! `beta`) on its diagonal so that it still sums to one.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::synth::{Dataset, Split};
use crate::vocab::Concept;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    pub p: Array2<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl SoftLabelMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            p: Array2::eye(n),
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }
}

pub fn validate_smoothing(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta < 0.0 || alpha + beta >= 1.0 {
        return Err(Error::InvalidSmoothing { alpha, beta });
    }
    Ok(())
}

pub fn build_soft_label_matrix(concepts: &[&Concept], alpha: f64, beta: f64) -> Result<SoftLabelMatrix> {
    validate_smoothing(alpha, beta)?;
    let n = concepts.len();
    if n == 0 {
        return Err(Error::EmptySpec("soft label matrix for an empty batch".into()));
    }
    let mut seen = HashSet::with_capacity(n);
    for c in concepts {
        if !seen.insert((&c.crop, &c.condition)) {
            return Err(Error::DuplicateClassInBatch(c.class_id));
        }
    }

    let mut p = Array2::zeros((n, n));
    for (i, ci) in concepts.iter().enumerate() {
        let mut n_crop = 0usize;
        let mut n_disease = 0usize;
        for (k, ck) in concepts.iter().enumerate() {
            if k == i {
                continue;
            }
            match (ci.same_crop(ck), ci.same_condition(ck)) {
                (true, false) => n_crop += 1,
                (false, true) => n_disease += 1,
                _ => {}
            }
        }
        let a = if n_crop > 0 { alpha } else { 0.0 };
        let b = if n_disease > 0 { beta } else { 0.0 };
        for (k, ck) in concepts.iter().enumerate() {
            p[[i, k]] = if k == i {
                1.0 - a - b
            } else {
                match (ci.same_crop(ck), ci.same_condition(ck)) {
                    (true, false) => a / n_crop as f64,
                    (false, true) => b / n_disease as f64,
                    _ => 0.0,
                }
            };
        }
    }
    Ok(SoftLabelMatrix { p, alpha, beta })
}

/// Batches of dataset sample indices with pairwise-distinct classes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    /// Samples that could not be placed without repeating a class; they are
    /// scheduled first in the following epoch.
    pub deferred: Vec<usize>,
}

impl BatchPlan {
    pub fn scheduled(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Plans one epoch over `(sample_index, class)` pairs.
///
/// Samples are shuffled within their class (with `priority` samples moved to
/// the front), then each batch takes one sample from each of the
/// `batch_size` classes with the most samples left, ties broken by a fresh
/// random class order. Once fewer than `batch_size` classes remain, one
/// ragged batch takes a sample from each remaining class and the rest are
/// deferred. Batch order is shuffled at the end.
pub fn plan_epoch(
    members: &[(usize, usize)],
    batch_size: usize,
    seed: u64,
    priority: &[usize],
) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(idx, class) in members {
        by_class.entry(class).or_default().push(idx);
    }
    if batch_size > by_class.len() {
        return Err(Error::BatchTooLarge {
            batch_size,
            classes: by_class.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first: HashSet<usize> = priority.iter().copied().collect();
    let mut queues: Vec<(usize, Vec<usize>)> = by_class
        .into_iter()
        .map(|(class, mut idx)| {
            idx.shuffle(&mut rng);
            // stable partition: priority samples first; pop() takes from the back
            idx.sort_by_key(|i| first.contains(i));
            (class, idx)
        })
        .collect();

    let mut plan = BatchPlan::default();
    let mut order: Vec<usize> = (0..queues.len()).collect();
    loop {
        order.retain(|&q| !queues[q].1.is_empty());
        if order.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        order.sort_by_key(|&q| std::cmp::Reverse(queues[q].1.len()));
        let take = order.len().min(batch_size);
        let mut batch: Vec<usize> = order[..take]
            .iter()
            .map(|&q| queues[q].1.pop().unwrap())
            .collect();
        batch.shuffle(&mut rng);
        plan.batches.push(batch);
        if take < batch_size {
            break;
        }
    }
    for (_, rest) in &queues {
        plan.deferred.extend(rest.iter().rev());
    }
    plan.batches.shuffle(&mut rng);
    Ok(plan)
}

/// Plans one epoch over the training split of `dataset`.
pub fn sample_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    let members: Vec<(usize, usize)> = dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, s)| (i, s.concept_id))
        .collect();
    plan_epoch(&members, batch_size, seed, &[])
}
