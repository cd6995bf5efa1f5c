//! `softclip` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softclip::config::{parse_config, RunConfig};
use softclip::pipeline::{render_report, run_ablate, run_eval, run_train, MetricsFile};
use softclip::synth::{generate_dataset, save_manifest, split_dataset, SynthSpec};
use softclip::{Error, Result};

#[derive(Parser)]
#[command(name = "softclip", version, about = "Contrastive image-text training with context-aware soft targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic crop/condition dataset manifest.
    GenData(GenDataArgs),
    /// Train both encoders and write a checkpoint and training log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write a metrics file.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the context-mode x soft-target grid.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render metrics files as plain-text tables.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Also write the tables to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    crops: usize,
    #[arg(long, default_value_t = 5)]
    conditions: usize,
    #[arg(long, default_value_t = 40)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    crop_signal: f64,
    #[arg(long, default_value_t = 1.0)]
    disease_signal: f64,
    #[arg(long, default_value_t = 1.0)]
    class_signal: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Probability of drawing a sample around a related class.
    #[arg(long, default_value_t = 0.0)]
    confusion: f64,
    /// Derive condition directions from symptom description words.
    #[arg(long)]
    symptom_grounded: bool,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set tau=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `long` or `short`.
    #[arg(long)]
    context_mode: Option<String>,
    #[arg(long)]
    cst_enabled: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let flags = [
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("peak_lr", self.peak_lr.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("context_mode", self.context_mode.clone()),
            ("cst_enabled", self.cst_enabled.map(|v| v.to_string())),
        ];
        overrides.extend(flags.into_iter().filter_map(|(k, v)| Some((k.to_string(), v?))));
        parse_config(self.config.as_deref(), &overrides)
    }
}

fn parse_split(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("--split expects three numbers, got `{text}`")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Config(format!("--split expects three numbers, got `{text}`"))),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    if a.classes > a.crops * a.conditions {
        return Err(Error::Config(format!(
            "{} classes do not fit a {}x{} grid",
            a.classes, a.crops, a.conditions
        )));
    }
    let mut spec = SynthSpec::grid(a.crops, a.conditions, a.classes, a.seed);
    spec.samples_per_class = a.samples_per_class;
    spec.feature_dim = a.feature_dim;
    spec.crop_signal = a.crop_signal;
    spec.disease_signal = a.disease_signal;
    spec.class_signal = a.class_signal;
    spec.noise_sigma = a.noise;
    spec.confusion = a.confusion;
    spec.symptom_grounded = a.symptom_grounded;
    let data = split_dataset(&generate_dataset(&spec)?, parse_split(&a.split)?, a.seed)?;
    save_manifest(&data, &a.out)?;
    println!(
        "wrote {} samples over {} classes to {}",
        data.samples.len(),
        data.num_classes(),
        a.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train { config, data, out } => {
            let cfg = config.resolve()?;
            let (manifest, _, log) = run_train(&cfg, &data, &out)?;
            if let Some(e) = log.epochs.last() {
                let val = e.val_r1.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
                println!("final epoch {}: mean loss {:.4}, validation R@1 {val}", e.epoch, e.mean_loss);
            }
            println!("config {} -> {}", manifest.config_hash, manifest.checkpoint_path.display());
            Ok(())
        }
        Command::Eval {
            config,
            data,
            checkpoint,
            out,
        } => {
            let cfg = config.resolve()?;
            let (manifest, metrics) = run_eval(&cfg, &data, &checkpoint, &out)?;
            print!("{}", render_report(std::slice::from_ref(&metrics)));
            if let Some(p) = manifest.metrics_path {
                println!("metrics -> {}", p.display());
            }
            Ok(())
        }
        Command::Ablate { config, data, out } => {
            let cfg = config.resolve()?;
            let runs = run_ablate(&cfg, &data, &out)?;
            let metrics: Vec<MetricsFile> = runs.into_iter().map(|r| r.metrics).collect();
            print!("{}", render_report(&metrics));
            Ok(())
        }
        Command::Report { metrics, out } => {
            let files = metrics.iter().map(|p| MetricsFile::read(p)).collect::<Result<Vec<_>>>()?;
            let text = render_report(&files);
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
            Ok(())
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData(_) => "gen-data",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Ablate { .. } => "ablate",
        Command::Report { .. } => "report",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("softclip {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
