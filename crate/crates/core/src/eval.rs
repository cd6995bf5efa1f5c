//! Evaluation protocols over frozen, unit-norm embeddings.
//!
//! All rankings order candidates by cosine similarity, descending, with ties
//! broken by the lower candidate index.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::loss::log_softmax_rows;
use crate::optim::{adamw_step, AdamWConfig, OptimizerState, ParamSet};
use crate::vocab::Concept;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Probe optimiser budget.
pub const PROBE_STEPS: usize = 500;
pub const PROBE_LR: f64 = 0.1;

/// Describes how class-level captions are paired with images when computing recall.
pub const RETRIEVAL_CONVENTION: &str = "class-level: i2t hit = true class caption within top K of all class captions; \
t2i hit = any image of the caption's class within top K of all images; one t2i query per image";

/// Index of the highest-scoring entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Candidate indices sorted by score descending, ties by index.
pub fn rank_candidates(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn zero_shot_predict(image_embeddings: ArrayView2<f64>, class_prompts: ArrayView2<f64>) -> Result<Vec<usize>> {
    if class_prompts.nrows() == 0 {
        return Err(Error::EmptyClassSet);
    }
    if image_embeddings.ncols() != class_prompts.ncols() {
        return Err(Error::shape("zero_shot_classify", "embedding dimensions differ"));
    }
    let scores = image_embeddings.dot(&class_prompts.t());
    Ok(scores.rows().into_iter().map(argmax).collect())
}

/// Fraction of images whose most similar class prompt is their own class.
pub fn zero_shot_classify(
    image_embeddings: ArrayView2<f64>,
    class_prompts: ArrayView2<f64>,
    true_labels: &[usize],
) -> Result<f64> {
    let pred = zero_shot_predict(image_embeddings, class_prompts)?;
    if pred.len() != true_labels.len() {
        return Err(Error::shape("zero_shot_classify", "label count differs from image count"));
    }
    if pred.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(accuracy(&pred, true_labels))
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub i2t: BTreeMap<usize, f64>,
    pub t2i: BTreeMap<usize, f64>,
}

impl RetrievalResult {
    pub fn mean_r1(&self) -> f64 {
        (self.i2t[&1] + self.t2i[&1]) / 2.0
    }
}

/// Rank (0-based) of the best candidate carrying `label`, or `None` if no
/// candidate carries it.
fn rank_of_label(scores: ArrayView1<f64>, cand_labels: &[usize], label: usize) -> Option<usize> {
    let best = cand_labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(i, _)| i)
        .reduce(|a, b| if scores[b] > scores[a] { b } else { a })?;
    let s = scores[best];
    Some(
        scores
            .iter()
            .enumerate()
            .filter(|&(c, &x)| x > s || (x == s && c < best))
            .count(),
    )
}

/// Recall@K where a query hits when any candidate with its label ranks within K.
pub fn labeled_recall(
    queries: ArrayView2<f64>,
    query_labels: &[usize],
    candidates: ArrayView2<f64>,
    candidate_labels: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if queries.nrows() == 0 || candidates.nrows() == 0 {
        return Err(Error::EmptySet);
    }
    if queries.nrows() != query_labels.len() || candidates.nrows() != candidate_labels.len() {
        return Err(Error::shape("recall_at_k", "labels do not match rows"));
    }
    let scores = queries.dot(&candidates.t());
    let ranks: Vec<Option<usize>> = scores
        .rows()
        .into_iter()
        .zip(query_labels)
        .map(|(row, &l)| rank_of_label(row, candidate_labels, l))
        .collect();
    let n = ranks.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r < k)).count();
            (k, hits as f64 / n)
        })
        .collect())
}

/// Instance-level recall: row `i` of `v` is paired with row `i` of `t`.
pub fn recall_at_k(v: ArrayView2<f64>, t: ArrayView2<f64>, ks: &[usize]) -> Result<RetrievalResult> {
    if v.nrows() == 0 {
        return Err(Error::EmptySet);
    }
    if v.dim() != t.dim() {
        return Err(Error::shape("recall_at_k", format!("V {:?} vs T {:?}", v.dim(), t.dim())));
    }
    let ids: Vec<usize> = (0..v.nrows()).collect();
    Ok(RetrievalResult {
        i2t: labeled_recall(v, &ids, t, &ids, ks)?,
        t2i: labeled_recall(t, &ids, v, &ids, ks)?,
    })
}

/// Recall with class-level captions; see [`RETRIEVAL_CONVENTION`].
/// `captions` has one row per class id.
pub fn class_retrieval(
    images: ArrayView2<f64>,
    image_labels: &[usize],
    captions: ArrayView2<f64>,
    ks: &[usize],
) -> Result<RetrievalResult> {
    let class_ids: Vec<usize> = (0..captions.nrows()).collect();
    let i2t = labeled_recall(images, image_labels, captions, &class_ids, ks)?;
    let queries = captions.select(Axis(0), image_labels);
    let t2i = labeled_recall(queries.view(), image_labels, images, image_labels, ks)?;
    Ok(RetrievalResult { i2t, t2i })
}

/// Multinomial logistic regression weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ParamSet for LinearClassifier {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice().unwrap(), self.bias.as_slice().unwrap()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_slice_mut().unwrap(), self.bias.as_slice_mut().unwrap()]
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

impl LinearClassifier {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        let logits = x.dot(&self.weight) + &self.bias;
        logits.rows().into_iter().map(argmax).collect()
    }

    /// Full-batch AdamW on mean cross-entropy, starting from zero weights.
    pub fn fit(x: ArrayView2<f64>, y: &[usize], classes: usize, steps: usize, lr: f64) -> Result<Self> {
        let mut model = LinearClassifier {
            weight: Array2::zeros((x.ncols(), classes)),
            bias: Array1::zeros(classes),
        };
        let mut state = OptimizerState::new(&model);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let n = x.nrows() as f64;
        for _ in 0..steps {
            let logits = x.dot(&model.weight) + &model.bias;
            let mut g = log_softmax_rows(logits.view()).mapv(f64::exp);
            for (r, &label) in y.iter().enumerate() {
                g[[r, label]] -= 1.0;
            }
            g /= n;
            let grads = LinearClassifier {
                weight: x.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            };
            adamw_step(&mut model, &grads, &mut state, lr, &cfg)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub shots: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Few-shot linear probe: `runs` independent draws of `shots` examples per
/// class from the training pool, each fit with [`LinearClassifier::fit`].
#[allow(clippy::too_many_arguments)]
pub fn linear_probe(
    train_embeddings: ArrayView2<f64>,
    train_labels: &[usize],
    test_embeddings: ArrayView2<f64>,
    test_labels: &[usize],
    shots: usize,
    runs: usize,
    seed: u64,
) -> Result<ProbeResult> {
    if test_labels.is_empty() || runs == 0 || shots == 0 {
        return Err(Error::EmptySet);
    }
    let classes = train_labels
        .iter()
        .chain(test_labels)
        .max()
        .map_or(0, |&m| m + 1);
    let mut pool: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in train_labels.iter().enumerate() {
        pool.entry(l).or_default().push(i);
    }
    for &l in test_labels {
        if !pool.contains_key(&l) {
            return Err(Error::MissingClass(l));
        }
    }
    for (&class_id, members) in &pool {
        if members.len() < shots {
            return Err(Error::InsufficientSamples {
                class_id,
                available: members.len(),
                required: shots,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accuracies = Vec::with_capacity(runs);
    for _ in 0..runs {
        let mut picked = Vec::with_capacity(shots * pool.len());
        for members in pool.values() {
            picked.extend(members.choose_multiple(&mut rng, shots).copied());
        }
        let x = train_embeddings.select(Axis(0), &picked);
        let y: Vec<usize> = picked.iter().map(|&i| train_labels[i]).collect();
        let model = LinearClassifier::fit(x.view(), &y, classes, PROBE_STEPS, PROBE_LR)?;
        accuracies.push(accuracy(&model.predict(test_embeddings), test_labels));
    }
    let (mean, sd) = mean_sd(&accuracies);
    Ok(ProbeResult {
        shots,
        accuracies,
        mean,
        sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Class,
    Crop,
    Condition,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Crop, Grouping::Condition, Grouping::Class];

    pub fn key(self, c: &Concept) -> String {
        match self {
            Grouping::Class => c.class_id.to_string(),
            Grouping::Crop => c.crop.clone(),
            Grouping::Condition => c.condition.clone(),
        }
    }

    /// Dense group ids for each point, numbered by first appearance.
    pub fn labels(self, concepts: &[&Concept]) -> Vec<usize> {
        let mut ids: HashMap<String, usize> = HashMap::new();
        concepts
            .iter()
            .map(|c| {
                let next = ids.len();
                *ids.entry(self.key(c)).or_insert(next)
            })
            .collect()
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Class => "class",
            Grouping::Crop => "crop",
            Grouping::Condition => "condition",
        })
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(Grouping::Class),
            "crop" => Ok(Grouping::Crop),
            "condition" => Ok(Grouping::Condition),
            other => Err(Error::Config(format!("unknown grouping `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub silhouette: f64,
    pub grouping: Grouping,
}

/// Mean silhouette with Euclidean distance. Members of singleton groups score 0.
pub fn silhouette(embeddings: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::shape("silhouette", "one label per point required"));
    }
    let groups = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; groups];
    for &l in labels {
        sizes[l] += 1;
    }
    let present = sizes.iter().filter(|&&s| s > 0).count();
    if present < 2 {
        return Err(Error::UndefinedSilhouette(present));
    }
    let sq: Array1<f64> = embeddings.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = embeddings.dot(&embeddings.t());
    let mut total = 0.0;
    let mut sums = vec![0.0; groups];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                let d2 = (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0);
                sums[labels[j]] += d2.sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..groups)
            .filter(|&g| g != own && sizes[g] > 0)
            .map(|g| sums[g] / sizes[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

pub fn cluster_score(embeddings: ArrayView2<f64>, concepts: &[&Concept], grouping: Grouping) -> Result<ClusterScore> {
    Ok(ClusterScore {
        silhouette: silhouette(embeddings, &grouping.labels(concepts))?,
        grouping,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub concept: Concept,
    pub score: f64,
}

/// Top-`top_k` candidates for one query, with their concepts.
pub fn ranking_report(
    query: ArrayView1<f64>,
    candidates: ArrayView2<f64>,
    candidate_concepts: &[Concept],
    top_k: usize,
) -> Result<Vec<RankedConcept>> {
    if candidates.nrows() != candidate_concepts.len() {
        return Err(Error::shape("ranking_report", "one concept per candidate required"));
    }
    let scores = candidates.dot(&query);
    Ok(rank_candidates(scores.view())
        .into_iter()
        .take(top_k)
        .map(|i| RankedConcept {
            concept: candidate_concepts[i].clone(),
            score: scores[i],
        })
        .collect())
}

pub fn same_crop_count(report: &[RankedConcept], crop: &str) -> usize {
    report.iter().filter(|r| r.concept.crop == crop).count()
}

/// Outcome of a one-sided paired sign test that `a` exceeds `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub p_value: f64,
}

pub fn paired_sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        // P(X >= wins) for X ~ Binomial(n, 1/2)
        let dist = Binomial::new(0.5, n).expect("valid binomial");
        if wins == 0 {
            1.0
        } else {
            dist.sf(wins - 1)
        }
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
        for mut r in m.rows_mut() {
            let norm = r.dot(&r).sqrt();
            r /= norm;
        }
        m
    }

    #[test]
    fn zero_shot_exact_match() {
        let prompts = Array2::<f64>::eye(4);
        let labels = [2, 0, 3, 1, 1];
        let images = prompts.select(Axis(0), &labels);
        assert_eq!(zero_shot_classify(images.view(), prompts.view(), &labels).unwrap(), 1.0);
    }

    #[test]
    fn zero_shot_single_class_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let images = unit_rows(&mut rng, 6, 3);
        let prompts = unit_rows(&mut rng, 1, 3);
        assert_eq!(zero_shot_classify(images.view(), prompts.view(), &[0; 6]).unwrap(), 1.0);
        let none = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            zero_shot_classify(images.view(), none.view(), &[0; 6]),
            Err(Error::EmptyClassSet)
        ));
    }

    #[test]
    fn zero_shot_random_images_near_chance() {
        // K = 5 orthogonal prompts; 4000 random images: std of the estimate is
        // sqrt(0.2 * 0.8 / 4000) ~ 0.0063, so 3 sigma ~ 0.019.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prompts = Array2::<f64>::eye(5);
        let images = unit_rows(&mut rng, 4000, 5);
        let labels: Vec<usize> = (0..4000).map(|_| rng.random_range(0..5)).collect();
        let acc = zero_shot_classify(images.view(), prompts.view(), &labels).unwrap();
        assert!((acc - 0.2).abs() < 0.019, "{acc}");
    }

    #[test]
    fn zero_shot_invariant_to_common_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let images = unit_rows(&mut rng, 50, 4);
        let prompts = unit_rows(&mut rng, 6, 4);
        let a = zero_shot_predict(images.view(), prompts.view()).unwrap();
        let b = zero_shot_predict(images.view(), (&prompts * 14.285).view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let e = Array2::<f64>::eye(6);
        let r = recall_at_k(e.view(), e.view(), &RECALL_KS).unwrap();
        assert!(r.i2t.values().chain(r.t2i.values()).all(|&x| x == 1.0));
    }

    #[test]
    fn swapped_pair_recall() {
        // Rows 0 and 1 of T exchanged: queries 0 and 1 find each other's partner first.
        let n = 6;
        let v = Array2::<f64>::eye(n);
        let mut t = v.clone();
        t.row_mut(0).assign(&v.row(1));
        t.row_mut(1).assign(&v.row(0));
        let r = recall_at_k(v.view(), t.view(), &[1, 2]).unwrap();
        let expected = (n - 2) as f64 / n as f64;
        assert_eq!(r.i2t[&1], expected);
        assert_eq!(r.t2i[&1], expected);
        // true partner of query 0 is t_0 = e_1, scoring 0 and tied with the
        // other zeros; index 0 wins the tie-break so it is ranked 2nd.
        assert_eq!(r.i2t[&2], 1.0);
        assert!(r.i2t[&2] >= expected);
    }

    #[test]
    fn recall_empty_set() {
        let e = Array2::<f64>::zeros((0, 3));
        assert!(matches!(recall_at_k(e.view(), e.view(), &[1]), Err(Error::EmptySet)));
    }

    #[test]
    fn class_retrieval_convention() {
        let captions = Array2::<f64>::eye(3);
        let labels = [0, 0, 1, 2];
        let images = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let r = class_retrieval(images.view(), &labels, captions.view(), &[1, 2]).unwrap();
        assert_eq!(r.i2t[&1], 0.75);
        // caption 0 finds image 0 first; caption 1 ties images 1 and 2, index 1 is class 0
        assert_eq!(r.t2i[&1], 0.75);
        assert_eq!(r.t2i[&2], 1.0);
    }

    #[test]
    fn probe_separable_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make = |rng: &mut ChaCha8Rng, n: usize| {
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let x = Array2::from_shape_fn((n, 3), |(i, j)| {
                let center = if labels[i] == 0 { 1.0 } else { -1.0 };
                (if j == 0 { center } else { 0.0 }) + 0.1 * rng.sample::<f64, _>(StandardNormal)
            });
            (x, labels)
        };
        let (xtr, ytr) = make(&mut rng, 64);
        let (xte, yte) = make(&mut rng, 40);
        let r = linear_probe(xtr.view(), &ytr, xte.view(), &yte, 16, 3, 0).unwrap();
        assert_eq!(r.accuracies, vec![1.0; 3]);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn probe_without_signal_is_chance() {
        let k = 4;
        let xtr = Array2::<f64>::ones((40, 3));
        let ytr: Vec<usize> = (0..40).map(|i| i % k).collect();
        let xte = Array2::<f64>::ones((40, 3));
        let yte = ytr.clone();
        let r = linear_probe(xtr.view(), &ytr, xte.view(), &yte, 5, 2, 1).unwrap();
        assert!((r.mean - 1.0 / k as f64).abs() < 1e-12);
    }

    #[test]
    fn probe_missing_class() {
        let x = Array2::<f64>::ones((4, 2));
        let r = linear_probe(x.view(), &[0, 0, 1, 1], x.view(), &[0, 1, 2, 2], 1, 1, 0);
        assert!(matches!(r, Err(Error::MissingClass(2))));
    }

    #[test]
    fn silhouette_hand_computed() {
        // Points 0, 1 | 4, 6 on a line.
        // a(0)=1, b(0)=(4+6)/2=5 -> 0.8;  a(1)=1, b(1)=(3+5)/2=4 -> 0.75
        // a(2)=2, b(2)=(4+3)/2=3.5 -> 1.5/3.5;  a(3)=2, b(3)=(6+5)/2=5.5 -> 3.5/5.5
        let x = array![[0.0], [1.0], [4.0], [6.0]];
        let s = silhouette(x.view(), &[0, 0, 1, 1]).unwrap();
        let expected = (0.8 + 0.75 + 1.5 / 3.5 + 3.5 / 5.5) / 4.0;
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn silhouette_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((40, 2), |(i, j)| {
            let c = if i < 20 { 10.0 } else { -10.0 };
            (if j == 0 { c } else { 0.0 }) + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        assert!(silhouette(x.view(), &labels).unwrap() > 0.9);
    }

    #[test]
    fn silhouette_permuted_labels_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = unit_rows(&mut rng, 120, 4);
        let mut labels: Vec<usize> = (0..120).map(|i| i % 3).collect();
        let mut total = 0.0;
        let trials = 30;
        for _ in 0..trials {
            labels.shuffle(&mut rng);
            total += silhouette(x.view(), &labels).unwrap();
        }
        assert!((total / trials as f64).abs() < 0.05);
    }

    #[test]
    fn silhouette_singletons_and_single_group() {
        let x = array![[0.0], [1.0], [5.0]];
        // group 1 is a singleton and scores 0; points 0,1: a=1, b=5 or 4
        let s = silhouette(x.view(), &[0, 0, 1]).unwrap();
        assert!((s - (0.8 + 0.75) / 3.0).abs() < 1e-12);
        assert!(matches!(silhouette(x.view(), &[0, 0, 0]), Err(Error::UndefinedSilhouette(1))));
    }

    #[test]
    fn silhouette_rotation_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = unit_rows(&mut rng, 30, 2);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = array![[c, -s], [s, c]];
        let y = x.dot(&rot) + &array![5.0, -2.0];
        let a = silhouette(x.view(), &labels).unwrap();
        let b = silhouette(y.view(), &labels).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    fn concepts() -> Vec<Concept> {
        [("apple", "scab"), ("apple", "rust"), ("tomato", "scab"), ("potato", "blight")]
            .iter()
            .enumerate()
            .map(|(i, (c, d))| Concept {
                class_id: i,
                crop: c.to_string(),
                condition: d.to_string(),
                description: String::new(),
            })
            .collect()
    }

    #[test]
    fn ranking_exact_match_first() {
        let cands = Array2::<f64>::eye(4);
        let r = ranking_report(cands.row(2), cands.view(), &concepts(), 3).unwrap();
        assert_eq!(r[0].concept.class_id, 2);
        assert_eq!(r[0].score, 1.0);
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn ranking_ties_follow_index_and_truncate() {
        let full = Array2::<f64>::eye(4);
        let r = ranking_report(full.row(0), full.view(), &concepts(), 10).unwrap();
        assert_eq!(r.len(), 4);
        let q = array![0.0, 0.0, 0.0];
        let cands = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let r = ranking_report(q.view(), cands.view(), &concepts(), 4).unwrap();
        let ids: Vec<usize> = r.iter().map(|x| x.concept.class_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        assert!(r.iter().all(|x| x.score == 0.0));
        assert_eq!(same_crop_count(&r, "apple"), 2);
    }

    #[test]
    fn sign_test_values() {
        // 10 wins of 10: p = 2^-10
        let t = paired_sign_test(&[1.0; 10], &[0.0; 10]);
        assert_eq!((t.wins, t.losses), (10, 0));
        assert!((t.p_value - 1.0 / 1024.0).abs() < 1e-12);
        // 1 win, 1 loss: P(X >= 1) = 3/4
        let t = paired_sign_test(&[1.0, 0.0, 2.0], &[0.0, 1.0, 2.0]);
        assert_eq!(t.ties, 1);
        assert!((t.p_value - 0.75).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn recall_monotone_in_k(seed in any::<u64>(), n in 1usize..30) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = unit_rows(&mut rng, n, 4);
                let t = unit_rows(&mut rng, n, 4);
                let r = recall_at_k(v.view(), t.view(), &[1, 2, 5, 10, 30]).unwrap();
                for m in [&r.i2t, &r.t2i] {
                    let vals: Vec<f64> = m.values().copied().collect();
                    prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
                    prop_assert!(vals.iter().all(|&x| (0.0..=1.0).contains(&x)));
                    prop_assert_eq!(m[&30], 1.0);
                }
            }
        }
    }
}
