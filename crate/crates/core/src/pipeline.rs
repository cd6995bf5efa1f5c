//! Runs tied to files: training, evaluation, the ablation grid and reports.
//!
//! Each run directory holds `checkpoint.bin`, `train_log.jsonl`,
//! `metrics.jsonl` and `manifest.json`. The metrics file starts with a header
//! record carrying the config hash, so it can be matched to its manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::{
    class_retrieval, cluster_score, linear_probe, ranking_report, same_crop_count, zero_shot_classify, ClusterScore,
    Grouping, ProbeResult, RetrievalResult, RECALL_KS, RETRIEVAL_CONVENTION,
};
use crate::synth::{load_manifest, Dataset, Split};
use crate::train::{embed_class_captions, embed_images, train, TrainLog};
use crate::vocab::{Concept, ContextMode};

pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retrieval: RetrievalResult,
    pub zero_shot: f64,
    pub probes: Vec<ProbeResult>,
    pub clusters: Vec<ClusterScore>,
    /// Same-crop concepts among the top-K class captions, one count per test image.
    pub same_crop_counts: Vec<usize>,
}

impl EvalReport {
    pub fn silhouette(&self, grouping: Grouping) -> Option<f64> {
        self.clusters.iter().find(|c| c.grouping == grouping).map(|c| c.silhouette)
    }

    pub fn mean_same_crop(&self) -> f64 {
        self.same_crop_counts.iter().sum::<usize>() as f64 / self.same_crop_counts.len().max(1) as f64
    }
}

fn test_split(dataset: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let idx = dataset.indices(Split::Test);
    if idx.is_empty() {
        return Err(Error::EmptySpec("test split is empty".into()));
    }
    let labels = dataset.labels(&idx);
    Ok((idx, labels))
}

/// Every protocol on the test split, with probes trained on the train split.
pub fn evaluate(params: &EncoderParams, dataset: &Dataset, config: &RunConfig) -> Result<EvalReport> {
    dataset.ensure_nonempty()?;
    let (test, labels) = test_split(dataset)?;
    let images = embed_images(params, dataset.feature_matrix(&test).view())?;
    let captions = embed_class_captions(params, dataset, &config.train)?;

    let retrieval = class_retrieval(images.view(), &labels, captions.view(), &RECALL_KS)?;
    let zero_shot = zero_shot_classify(images.view(), captions.view(), &labels)?;

    let train_idx = dataset.indices(Split::Train);
    let train_images = embed_images(params, dataset.feature_matrix(&train_idx).view())?;
    let train_labels = dataset.labels(&train_idx);
    let probes = config
        .eval
        .probe_shots
        .iter()
        .map(|&shots| {
            linear_probe(
                train_images.view(),
                &train_labels,
                images.view(),
                &labels,
                shots,
                config.eval.probe_runs,
                config.train.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let concepts: Vec<&Concept> = labels.iter().map(|&l| &dataset.vocabulary.concepts()[l]).collect();
    let clusters = Grouping::ALL
        .iter()
        .map(|&g| cluster_score(images.view(), &concepts, g))
        .collect::<Result<Vec<_>>>()?;

    let same_crop_counts = same_crop_counts(&images, &captions, dataset, &labels, config.eval.top_k)?;
    Ok(EvalReport {
        retrieval,
        zero_shot,
        probes,
        clusters,
        same_crop_counts,
    })
}

fn same_crop_counts(
    images: &Array2<f64>,
    captions: &Array2<f64>,
    dataset: &Dataset,
    labels: &[usize],
    top_k: usize,
) -> Result<Vec<usize>> {
    let all = dataset.vocabulary.concepts();
    images
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(q, &l)| {
            let report = ranking_report(q, captions.view(), all, top_k)?;
            Ok(same_crop_count(&report, &all[l].crop))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub context_mode: ContextMode,
    pub cst_enabled: bool,
    pub retrieval_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub grouping: String,
    pub value: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum MetricsLine {
    Header(MetricsHeader),
    Metric(MetricRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub header: MetricsHeader,
    pub records: Vec<MetricRecord>,
}

impl MetricsFile {
    pub fn from_report(report: &EvalReport, config: &RunConfig) -> Self {
        let hash = config.hash();
        let mut records = Vec::new();
        let mut push = |metric: String, grouping: String, value: f64| {
            records.push(MetricRecord {
                metric,
                grouping,
                value,
                config_hash: hash.clone(),
            })
        };
        for (dir, map) in [("i2t", &report.retrieval.i2t), ("t2i", &report.retrieval.t2i)] {
            for (k, v) in map {
                push(format!("r@{k}"), dir.into(), *v);
            }
        }
        push("zero_shot_accuracy".into(), "class".into(), report.zero_shot);
        for p in &report.probes {
            push("probe_accuracy_mean".into(), format!("shots={}", p.shots), p.mean);
            push("probe_accuracy_sd".into(), format!("shots={}", p.shots), p.sd);
        }
        for c in &report.clusters {
            push("silhouette".into(), c.grouping.to_string(), c.silhouette);
        }
        push(
            format!("same_crop_top{}", config.eval.top_k),
            "i2t".into(),
            report.mean_same_crop(),
        );
        MetricsFile {
            header: MetricsHeader {
                version: METRICS_VERSION,
                config_hash: hash.clone(),
                seed: config.train.seed,
                context_mode: config.train.context_mode,
                cst_enabled: config.train.cst_enabled,
                retrieval_convention: RETRIEVAL_CONVENTION.into(),
            },
            records,
        }
    }

    pub fn get(&self, metric: &str, grouping: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.metric == metric && r.grouping == grouping)
            .map(|r| r.value)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&MetricsLine::Header(self.header.clone())).expect("serializable");
        out.push('\n');
        for r in &self.records {
            out += &serde_json::to_string(&MetricsLine::Metric(r.clone())).expect("serializable");
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())), origin)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(format!("opening metrics {}", path.display()), e))?;
        let lines = BufReader::new(f)
            .lines()
            .map(|l| l.map_err(|e| Error::io(format!("reading metrics {}", path.display()), e)));
        Self::from_lines(lines, path)
    }

    fn from_lines(lines: impl Iterator<Item = Result<String>>, origin: &Path) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: MetricsLine = serde_json::from_str(&line).map_err(|e| Error::ParseError {
                path: origin.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            match (parsed, n) {
                (MetricsLine::Header(h), 0) => header = Some(h),
                (MetricsLine::Metric(m), _) if header.is_some() => records.push(m),
                _ => {
                    return Err(Error::ParseError {
                        path: origin.to_path_buf(),
                        line: n + 1,
                        message: "expected a single header record on the first line".into(),
                    })
                }
            }
        }
        let header = header.ok_or_else(|| Error::ParseError {
            path: origin.to_path_buf(),
            line: 1,
            message: "missing header record".into(),
        })?;
        if header.version != METRICS_VERSION {
            return Err(Error::ParseError {
                path: origin.to_path_buf(),
                line: 1,
                message: format!("unsupported metrics version {}", header.version),
            });
        }
        Ok(Self { header, records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub data_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub log_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// The fully resolved configuration, as `key = value` lines.
    pub config: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, serde_json::to_string_pretty(self).expect("serializable") + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub params: EncoderParams,
    pub log: TrainLog,
    pub report: EvalReport,
    pub metrics: MetricsFile,
}

/// Trains and writes the checkpoint, log and manifest into `out`.
pub fn run_train(config: &RunConfig, data_path: &Path, out: &Path) -> Result<(RunManifest, EncoderParams, TrainLog)> {
    let started = now();
    let dataset = load_manifest(data_path)?;
    let outcome = train(&config.train, &dataset)?;
    create_dir(out)?;
    let checkpoint_path = out.join("checkpoint.bin");
    let log_path = out.join("train_log.jsonl");
    save_checkpoint(&outcome.params, &checkpoint_path)?;
    write(&log_path, outcome.log.to_jsonl())?;
    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.train.seed,
        data_path: data_path.to_path_buf(),
        checkpoint_path,
        log_path: Some(log_path),
        metrics_path: None,
        started_unix: started,
        finished_unix: now(),
        config: config.render(),
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok((manifest, outcome.params, outcome.log))
}

/// Evaluates a checkpoint and writes `metrics.jsonl` plus a manifest into `out`.
pub fn run_eval(config: &RunConfig, data_path: &Path, checkpoint: &Path, out: &Path) -> Result<(RunManifest, MetricsFile)> {
    let started = now();
    let dataset = load_manifest(data_path)?;
    let params = load_checkpoint(checkpoint)?;
    let report = evaluate(&params, &dataset, config)?;
    let metrics = MetricsFile::from_report(&report, config);
    create_dir(out)?;
    let metrics_path = out.join("metrics.jsonl");
    write(&metrics_path, metrics.to_jsonl())?;
    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.train.seed,
        data_path: data_path.to_path_buf(),
        checkpoint_path: checkpoint.to_path_buf(),
        log_path: None,
        metrics_path: Some(metrics_path),
        started_unix: started,
        finished_unix: now(),
        config: config.render(),
    };
    manifest.save(&out.join("eval_manifest.json"))?;
    Ok((manifest, metrics))
}

/// Trains, then evaluates the in-memory parameters, writing all artifacts into `out`.
pub fn run_full(config: &RunConfig, dataset: &Dataset, data_path: &Path, out: &Path) -> Result<RunOutput> {
    let started = now();
    let outcome = train(&config.train, dataset)?;
    let report = evaluate(&outcome.params, dataset, config)?;
    let metrics = MetricsFile::from_report(&report, config);
    create_dir(out)?;
    let checkpoint_path = out.join("checkpoint.bin");
    let log_path = out.join("train_log.jsonl");
    let metrics_path = out.join("metrics.jsonl");
    save_checkpoint(&outcome.params, &checkpoint_path)?;
    write(&log_path, outcome.log.to_jsonl())?;
    write(&metrics_path, metrics.to_jsonl())?;
    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.train.seed,
        data_path: data_path.to_path_buf(),
        checkpoint_path,
        log_path: Some(log_path),
        metrics_path: Some(metrics_path),
        started_unix: started,
        finished_unix: now(),
        config: config.render(),
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(RunOutput {
        manifest,
        params: outcome.params,
        log: outcome.log,
        report,
        metrics,
    })
}

/// The four `(context_mode, cst_enabled)` cells in table order.
pub const ABLATION_GRID: [(ContextMode, bool); 4] = [
    (ContextMode::Short, false),
    (ContextMode::Short, true),
    (ContextMode::Long, false),
    (ContextMode::Long, true),
];

pub fn ablation_configs(base: &RunConfig) -> Vec<RunConfig> {
    ABLATION_GRID
        .iter()
        .map(|&(mode, cst)| {
            let mut c = base.clone();
            c.train.context_mode = mode;
            c.train.cst_enabled = cst;
            c
        })
        .collect()
}

pub fn cell_name(mode: ContextMode, cst: bool) -> String {
    format!("{mode}-{}", if cst { "cst" } else { "hard" })
}

/// Runs the grid into `out/<cell>/` and writes `out/ablation.txt`.
pub fn run_ablate(config: &RunConfig, data_path: &Path, out: &Path) -> Result<Vec<RunOutput>> {
    let dataset = load_manifest(data_path)?;
    let runs = ablation_configs(config)
        .iter()
        .map(|c| {
            let dir = out.join(cell_name(c.train.context_mode, c.train.cst_enabled));
            run_full(c, &dataset, data_path, &dir)
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<MetricsFile> = runs.iter().map(|r| r.metrics.clone()).collect();
    write(&out.join("ablation.txt"), render_report(&metrics))?;
    Ok(runs)
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn method(h: &MetricsHeader) -> &'static str {
    if h.cst_enabled {
        "CST"
    } else {
        "hard"
    }
}

fn check(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        ""
    }
}

/// Plain-text tables: retrieval per direction, silhouette by grouping, and
/// the template × CST grid.
pub fn render_report(metrics: &[MetricsFile]) -> String {
    let mut out = String::new();
    for (dir, title) in [("i2t", "Image-to-text retrieval (%)"), ("t2i", "Text-to-image retrieval (%)")] {
        let _ = writeln!(out, "{title}");
        let _ = writeln!(out, "{:<8} {:<8} {:>8} {:>8} {:>8}", "Method", "Context", "R@1", "R@5", "R@10");
        for m in metrics {
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>8} {:>8} {:>8}",
                method(&m.header),
                m.header.context_mode.to_string(),
                pct(m.get("r@1", dir)),
                pct(m.get("r@5", dir)),
                pct(m.get("r@10", dir)),
            );
        }
        out.push('\n');
    }
    let _ = writeln!(out, "Silhouette score");
    let _ = writeln!(out, "{:<8} {:<8} {:>9} {:>9} {:>9}", "Method", "Context", "Class", "Crop", "Condition");
    for m in metrics {
        let s = |g: &str| m.get("silhouette", g).map_or_else(|| "-".into(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<8} {:<8} {:>9} {:>9} {:>9}",
            method(&m.header),
            m.header.context_mode.to_string(),
            s("class"),
            s("crop"),
            s("condition"),
        );
    }
    out.push('\n');
    let _ = writeln!(out, "Template and CST ablation, mean of both directions (%)");
    let _ = writeln!(out, "{:<10} {:<4} {:>8} {:>8} {:>8}", "Long ctx", "CST", "R@1", "R@5", "R@10");
    let mut rows: Vec<&MetricsFile> = metrics.iter().collect();
    rows.sort_by_key(|m| (m.header.context_mode == ContextMode::Long, m.header.cst_enabled));
    for m in rows {
        let mean = |k: &str| Some((m.get(k, "i2t")? + m.get(k, "t2i")?) / 2.0);
        let _ = writeln!(
            out,
            "{:<10} {:<4} {:>8} {:>8} {:>8}",
            check(m.header.context_mode == ContextMode::Long),
            check(m.header.cst_enabled),
            pct(mean("r@1")),
            pct(mean("r@5")),
            pct(mean("r@10")),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn fake_report(r1: f64, cst: bool) -> (EvalReport, RunConfig) {
        let map: BTreeMap<usize, f64> = [(1, r1), (5, 1.0), (10, 1.0)].into_iter().collect();
        let report = EvalReport {
            retrieval: RetrievalResult {
                i2t: map.clone(),
                t2i: map,
            },
            zero_shot: r1,
            probes: vec![ProbeResult {
                shots: 4,
                accuracies: vec![0.5, 0.7],
                mean: 0.6,
                sd: 0.1414,
            }],
            clusters: vec![ClusterScore {
                silhouette: -0.1,
                grouping: Grouping::Crop,
            }],
            same_crop_counts: vec![1, 2, 3],
        };
        let mut cfg = RunConfig::default();
        cfg.train.cst_enabled = cst;
        (report, cfg)
    }

    #[test]
    fn metrics_round_trip() {
        let (r, c) = fake_report(0.9, true);
        let m = MetricsFile::from_report(&r, &c);
        let back = MetricsFile::parse(&m.to_jsonl(), Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("r@1", "t2i"), Some(0.9));
        assert_eq!(back.get("same_crop_top5", "i2t"), Some(2.0));
        assert!(m.to_jsonl().starts_with("{\"record\":\"header\""));
        assert!(m.records.iter().all(|r| r.config_hash == c.hash()));
    }

    #[test]
    fn metrics_without_header_rejected() {
        let (r, c) = fake_report(0.9, true);
        let text = MetricsFile::from_report(&r, &c).to_jsonl();
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(MetricsFile::parse(&body, Path::new("m")), Err(Error::ParseError { line: 1, .. })));
    }

    #[test]
    fn grid_has_four_distinct_hashes() {
        let cfgs = ablation_configs(&RunConfig::default());
        let hashes: std::collections::HashSet<String> = cfgs.iter().map(RunConfig::hash).collect();
        assert_eq!(hashes.len(), 4);
        assert_eq!(cfgs[0].train.context_mode, ContextMode::Short);
        assert!(!cfgs[0].train.cst_enabled);
        assert!(cfgs[3].train.cst_enabled);
    }

    #[test]
    fn report_contains_all_columns() {
        let metrics: Vec<MetricsFile> = [(0.8, false), (0.9, true)]
            .iter()
            .map(|&(r1, cst)| {
                let (r, c) = fake_report(r1, cst);
                MetricsFile::from_report(&r, &c)
            })
            .collect();
        let text = render_report(&metrics);
        for needle in ["R@1", "R@5", "R@10", "Crop", "90.00", "80.00", "-0.1000"] {
            assert!(text.contains(needle), "{needle}\n{text}");
        }
    }
}
