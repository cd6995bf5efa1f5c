//! Synthetic crop × condition datasets and the manifest file format.
//!
//! Each populated class has mean
//! `crop_signal * u(crop) + disease_signal * w(condition) + class_signal * z(class)`
//! where `u`, `w`, `z` are unit vectors drawn from a seeded Gaussian. Samples
//! add isotropic Gaussian noise. Classes sharing a crop or a condition
//! therefore share a component of their mean.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{fnv1a64, ConceptVocabulary, HEALTHY};

const MANIFEST_MAGIC: &str = "softclip-manifest";
const MANIFEST_VERSION: &str = "v1";

const CROPS: &[&str] = &[
    "apple", "tomato", "potato", "grape", "corn", "pepper", "peach", "cherry", "strawberry",
    "squash", "soybean", "orange", "rice", "wheat", "cassava", "coffee",
];

/// Condition index 0 is always `healthy`.
const CONDITIONS: &[(&str, &str)] = &[
    (HEALTHY, ""),
    ("scab", "olive green velvety spots that turn dark and corky"),
    ("rust", "bright orange pustules on the lower leaf surface"),
    ("early blight", "dark concentric rings forming target shaped brown lesions"),
    ("late blight", "water soaked grey green patches with white mould at edges"),
    ("powdery mildew", "white powdery fungal growth covering the leaf surface"),
    ("bacterial spot", "small dark water soaked spots with yellow halos"),
    ("leaf mold", "pale yellow patches above with olive velvety growth below"),
    ("mosaic virus", "mottled light and dark green mosaic pattern with curling"),
    ("black rot", "brown circular lesions with purple margins and black fruiting bodies"),
    ("leaf spot", "grey rectangular lesions running parallel to the veins"),
    ("downy mildew", "angular yellow lesions with grey downy growth underneath"),
];

/// The 38 PlantVillage class names as `(crop, condition, description)` records.
pub fn plant_village_records() -> Vec<(&'static str, &'static str, &'static str)> {
    vec![
        ("apple", "scab", "olive green spots that turn dark and velvety"),
        ("apple", "black rot", "purple spots enlarging into brown frog eye lesions"),
        ("apple", "cedar apple rust", "bright orange yellow spots with red borders"),
        ("apple", HEALTHY, ""),
        ("blueberry", HEALTHY, ""),
        ("cherry", "powdery mildew", "white powdery patches on young leaves"),
        ("cherry", HEALTHY, ""),
        ("corn", "gray leaf spot", "rectangular grey lesions bounded by veins"),
        ("corn", "common rust", "cinnamon brown pustules on both leaf surfaces"),
        ("corn", "northern leaf blight", "long cigar shaped grey green lesions"),
        ("corn", HEALTHY, ""),
        ("grape", "black rot", "tan lesions with dark borders and black dots"),
        ("grape", "esca", "tiger stripe discoloration between veins"),
        ("grape", "leaf blight", "irregular dark brown angular spots"),
        ("grape", HEALTHY, ""),
        ("orange", "citrus greening", "blotchy asymmetric yellow mottling"),
        ("peach", "bacterial spot", "small angular water soaked spots that drop out"),
        ("peach", HEALTHY, ""),
        ("pepper", "bacterial spot", "small brown raised spots with yellow halos"),
        ("pepper", HEALTHY, ""),
        ("potato", "early blight", "dark concentric ring target spots"),
        ("potato", "late blight", "water soaked lesions with white mould"),
        ("potato", HEALTHY, ""),
        ("raspberry", HEALTHY, ""),
        ("soybean", HEALTHY, ""),
        ("squash", "powdery mildew", "white talc like growth on leaf surface"),
        ("strawberry", "leaf scorch", "purple blotches that dry into scorched margins"),
        ("strawberry", HEALTHY, ""),
        ("tomato", "bacterial spot", "small dark greasy spots on leaflets"),
        ("tomato", "early blight", "brown concentric rings with yellow halo"),
        ("tomato", "late blight", "large greasy grey green blotches"),
        ("tomato", "leaf mold", "yellow patches above with olive mould below"),
        ("tomato", "septoria leaf spot", "many small circular spots with grey centres"),
        ("tomato", "spider mites", "fine stippling and webbing with bronzing"),
        ("tomato", "target spot", "brown lesions with concentric target rings"),
        ("tomato", "yellow leaf curl virus", "upward curling yellowed leaf margins"),
        ("tomato", "mosaic virus", "light and dark green mottled mosaic"),
        ("tomato", HEALTHY, ""),
    ]
}

fn crop_name(i: usize) -> String {
    CROPS.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("crop{i}"))
}

fn condition_record(i: usize) -> (String, String) {
    match CONDITIONS.get(i) {
        Some((name, desc)) => (name.to_string(), desc.to_string()),
        None => (
            format!("disease{i}"),
            format!("symptom pattern {i} with lesion type {i}"),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_crops: usize,
    pub n_conditions: usize,
    /// Populated `(crop_index, condition_index)` pairs; condition 0 is healthy.
    pub classes: Vec<(usize, usize)>,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub crop_signal: f64,
    pub disease_signal: f64,
    pub class_signal: f64,
    pub noise_sigma: f64,
    /// Probability that a sample is drawn around a related class (same crop
    /// or same condition) while keeping its own label.
    #[serde(default)]
    pub confusion: f64,
    /// Build each diseased condition's direction from the words of its
    /// symptom description, so conditions sharing symptom words look alike.
    #[serde(default)]
    pub symptom_grounded: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// Populates `n_classes` of the `n_crops × n_conditions` grid, chosen by
    /// a seeded shuffle and listed in `(crop, condition)` order. Signal and
    /// noise fields are left at unit/0.1 and are meant to be overridden.
    pub fn grid(n_crops: usize, n_conditions: usize, n_classes: usize, seed: u64) -> Self {
        let mut pairs: Vec<(usize, usize)> = (0..n_crops)
            .flat_map(|c| (0..n_conditions).map(move |d| (c, d)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        pairs.shuffle(&mut rng);
        pairs.truncate(n_classes);
        pairs.sort_unstable();
        Self {
            n_crops,
            n_conditions,
            classes: pairs,
            samples_per_class: 10,
            feature_dim: 32,
            crop_signal: 1.0,
            disease_signal: 1.0,
            class_signal: 1.0,
            noise_sigma: 0.1,
            confusion: 0.0,
            symptom_grounded: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::EmptySpec("synthetic spec has no classes".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::InvalidConfig("feature_dim must be >= 2".into()));
        }
        let mut seen = HashSet::new();
        for &(c, d) in &self.classes {
            if c >= self.n_crops || d >= self.n_conditions {
                return Err(Error::InvalidConfig(format!(
                    "class ({c}, {d}) outside the {}x{} grid",
                    self.n_crops, self.n_conditions
                )));
            }
            if !seen.insert((c, d)) {
                return Err(Error::InvalidConfig(format!("class ({c}, {d}) listed twice")));
            }
        }
        for (name, v) in [
            ("crop_signal", self.crop_signal),
            ("disease_signal", self.disease_signal),
            ("class_signal", self.class_signal),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.confusion) {
            return Err(Error::InvalidConfig("confusion must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Vocabulary for the populated classes, in `classes` order.
    pub fn vocabulary(&self) -> Result<ConceptVocabulary> {
        ConceptVocabulary::build(self.classes.iter().map(|&(c, d)| {
            let (cond, desc) = condition_record(d);
            (crop_name(c), cond, desc)
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: u64,
    pub features: Vec<f64>,
    pub concept_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub vocabulary: ConceptVocabulary,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn num_classes(&self) -> usize {
        self.vocabulary.len()
    }

    /// Fails with `EmptySpec` when there is nothing to train or evaluate on.
    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::EmptySpec("dataset has an empty vocabulary".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::EmptySpec("dataset has no samples".into()));
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].concept_id).collect()
    }

    /// Row-stacked features of the selected samples.
    pub fn feature_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let f = self.feature_dim();
        let mut m = Array2::zeros((indices.len(), f));
        for (r, &i) in indices.iter().enumerate() {
            for (c, &x) in self.samples[i].features.iter().enumerate() {
                m[[r, c]] = x;
            }
        }
        m
    }

    fn validate(&self, origin: &Path) -> Result<()> {
        let k = self.vocabulary.len();
        let f = self.feature_dim();
        let mut ids = HashSet::new();
        for (n, s) in self.samples.iter().enumerate() {
            if s.concept_id >= k {
                return Err(Error::DanglingReference {
                    sample_id: s.sample_id,
                    concept_id: s.concept_id,
                    k,
                });
            }
            if !ids.insert(s.sample_id) {
                return Err(Error::ParseError {
                    path: origin.to_path_buf(),
                    line: 0,
                    message: format!("duplicate sample id {} (sample #{n})", s.sample_id),
                });
            }
            if s.features.len() != f || s.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::ParseError {
                    path: origin.to_path_buf(),
                    line: 0,
                    message: format!("sample {} has malformed features", s.sample_id),
                });
            }
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Normalised sum of one seeded unit direction per description word.
fn symptom_direction(description: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for word in description.split_whitespace() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(word));
        for (s, x) in sum.iter_mut().zip(unit_vector(&mut rng, dim)) {
            *s += x;
        }
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    sum.into_iter().map(|x| x / norm).collect()
}

/// Class means for every populated class, in `spec.classes` order.
pub fn class_means(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(draw_means(spec, &mut rng))
}

fn draw_means(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let f = spec.feature_dim;
    let crop_dirs: Vec<Vec<f64>> = (0..spec.n_crops).map(|_| unit_vector(rng, f)).collect();
    let mut cond_dirs: Vec<Vec<f64>> = (0..spec.n_conditions).map(|_| unit_vector(rng, f)).collect();
    if spec.symptom_grounded {
        for (d, dir) in cond_dirs.iter_mut().enumerate() {
            let (_, description) = condition_record(d);
            if !description.is_empty() {
                *dir = symptom_direction(&description, f, spec.seed);
            }
        }
    }
    spec.classes
        .iter()
        .map(|&(c, d)| {
            let z = unit_vector(rng, f);
            (0..f)
                .map(|j| {
                    spec.crop_signal * crop_dirs[c][j]
                        + spec.disease_signal * cond_dirs[d][j]
                        + spec.class_signal * z[j]
                })
                .collect()
        })
        .collect()
}

/// Generates a dataset from `spec`. All samples are in the train split
/// until [`split_dataset`] assigns them.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let vocabulary = spec.vocabulary()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = draw_means(spec, &mut rng);
    let mut samples = Vec::with_capacity(means.len() * spec.samples_per_class);
    let related: Vec<Vec<usize>> = spec
        .classes
        .iter()
        .map(|&(c, d)| {
            (0..spec.classes.len())
                .filter(|&j| {
                    let (cj, dj) = spec.classes[j];
                    (cj == c) != (dj == d)
                })
                .collect()
        })
        .collect();
    for (class_id, own) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let mut mean = own;
            if spec.confusion > 0.0 && !related[class_id].is_empty() && rng.random_bool(spec.confusion) {
                mean = &means[*related[class_id].choose(&mut rng).expect("non-empty")];
            }
            let features = mean
                .iter()
                .map(|&m| {
                    let e: f64 = rng.sample(StandardNormal);
                    m + spec.noise_sigma * e
                })
                .collect();
            samples.push(Sample {
                sample_id: samples.len() as u64,
                features,
                concept_id: class_id,
                split: Split::Train,
            });
        }
    }
    Ok(Dataset { vocabulary, samples })
}

/// Largest-remainder apportionment of `n` items to `ratios`, with every
/// positive ratio receiving at least one item when `n` allows it.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut remaining = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Stratified per-class split into train/val/test.
pub fn split_dataset(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let required = r.iter().filter(|x| **x > 0.0).count();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class.entry(s.concept_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for (&class_id, members) in &by_class {
        if required == 3 && members.len() < 3 {
            return Err(Error::InsufficientSamples {
                class_id,
                available: members.len(),
                required: 3,
            });
        }
        let mut members = members.clone();
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(members.len(), r);
        for (pos, &i) in members.iter().enumerate() {
            out.samples[i].split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Serializes a dataset to the manifest text format.
///
/// ```text
/// softclip-manifest<TAB>v1<TAB>feature_dim=<f><TAB>K=<k>
/// concept<TAB><class_id><TAB><crop><TAB><condition><TAB><description>   (K lines)
/// sample<TAB><sample_id><TAB><split><TAB><concept_id><TAB><f0> <f1> ...
/// ```
///
/// Features are written in shortest round-trip scientific notation, so
/// loading reproduces every bit.
pub fn manifest_to_string(dataset: &Dataset) -> String {
    let mut out = format!(
        "{MANIFEST_MAGIC}\t{MANIFEST_VERSION}\tfeature_dim={}\tK={}\n",
        dataset.feature_dim(),
        dataset.num_classes()
    );
    for c in dataset.vocabulary.iter() {
        out.push_str(&format!(
            "concept\t{}\t{}\t{}\t{}\n",
            c.class_id, c.crop, c.condition, c.description
        ));
    }
    for s in &dataset.samples {
        let feats: Vec<String> = s.features.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&format!(
            "sample\t{}\t{}\t{}\t{}\n",
            s.sample_id,
            s.split,
            s.concept_id,
            feats.join(" ")
        ));
    }
    out
}

pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, manifest_to_string(dataset))
        .map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    parse_manifest(&text, path)
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Dataset> {
    let perr = |line: usize, message: String| Error::ParseError {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Dataset::default());
    };
    let head: Vec<&str> = header.split('\t').collect();
    if head.len() != 4 || head[0] != MANIFEST_MAGIC || head[1] != MANIFEST_VERSION {
        return Err(perr(1, "bad manifest header".into()));
    }
    let field = |s: &str, key: &str| -> Result<usize> {
        s.strip_prefix(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| perr(1, format!("expected {key}<integer>, got `{s}`")))
    };
    let feature_dim = field(head[2], "feature_dim=")?;
    let k = field(head[3], "K=")?;

    let mut records = Vec::with_capacity(k);
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        match cols[0] {
            "concept" => {
                if cols.len() != 5 {
                    return Err(perr(lineno, "concept line needs 5 fields".into()));
                }
                let id: usize = cols[1]
                    .parse()
                    .map_err(|_| perr(lineno, format!("bad class id `{}`", cols[1])))?;
                if id != records.len() || !samples.is_empty() {
                    return Err(perr(lineno, "concept ids must be dense, ordered and precede samples".into()));
                }
                records.push((cols[2].to_string(), cols[3].to_string(), cols[4].to_string()));
            }
            "sample" => {
                if cols.len() != 5 {
                    return Err(perr(lineno, "sample line needs 5 fields".into()));
                }
                let sample_id: u64 = cols[1]
                    .parse()
                    .map_err(|_| perr(lineno, format!("bad sample id `{}`", cols[1])))?;
                let split: Split = cols[2].parse().map_err(|m| perr(lineno, m))?;
                let concept_id: usize = cols[3]
                    .parse()
                    .map_err(|_| perr(lineno, format!("bad concept id `{}`", cols[3])))?;
                let features: Vec<f64> = cols[4]
                    .split(' ')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(lineno, format!("bad feature value: {e}")))?;
                if features.len() != feature_dim {
                    return Err(perr(
                        lineno,
                        format!("expected {feature_dim} features, got {}", features.len()),
                    ));
                }
                if features.iter().any(|x| !x.is_finite()) {
                    return Err(perr(lineno, "non-finite feature value".into()));
                }
                samples.push(Sample {
                    sample_id,
                    features,
                    concept_id,
                    split,
                });
            }
            other => return Err(perr(lineno, format!("unknown record kind `{other}`"))),
        }
    }
    if records.len() != k {
        return Err(perr(1, format!("header declares K={k} but {} concepts follow", records.len())));
    }
    let vocabulary = if records.is_empty() {
        ConceptVocabulary::default()
    } else {
        ConceptVocabulary::build(records)?
    };
    let dataset = Dataset { vocabulary, samples };
    dataset.validate(origin)?;
    Ok(dataset)
}
