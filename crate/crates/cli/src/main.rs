use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atdgnn_core::harness::train::fit_final;
use atdgnn_core::harness::{
    evaluate, make_cv_plan, run_ablation, train_two_stage, AblationConfig, Dataset, ExperimentReport,
};
use atdgnn_core::io::config::ExperimentConfig;
use atdgnn_core::io::{generate_synthetic, load_toml, read_container, write_atomic, write_container, Checkpoint, SynthSpec};
use atdgnn_core::model::{GraphChoice, GraphPreset};
use atdgnn_core::signal::{bandpass, downsample};
use atdgnn_core::{Error, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "atdgnn", version, about = "EEG emotion recognition with attention and dynamic graph learning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel outer folds; defaults to the fold count capped by available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, env = "ATDGNN_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Overrides the configured electrode grouping.
    #[arg(
        long,
        global = true,
        value_parser = PossibleValuesParser::new(["general", "frontal", "hemispheric"])
            .map(|s| s.parse::<GraphPreset>().expect("restricted to known presets"))
    )]
    graph: Option<GraphPreset>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band-pass filter and downsample a container.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic recording from a spec file.
    Synth {
        /// Synthetic spec (TOML); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Nested cross-validation with two-stage training.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Also fit one model per dimension on every trial and save it.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Score a saved checkpoint on a container.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of every primitive and the tiny end-to-end model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Run the baseline and ablation variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        variant: AblationFlags,
    },
}

/// A single variant given on the command line instead of the config's list.
#[derive(Args, Debug)]
struct AblationFlags {
    #[arg(long)]
    no_sliding_window: bool,
    #[arg(long)]
    no_attention: bool,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=4))]
    gnn_layers: Option<u8>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=4))]
    temporal_layers: Option<u8>,
}

impl AblationFlags {
    fn variant(&self) -> Option<AblationConfig> {
        if !self.no_sliding_window && !self.no_attention && self.gnn_layers.is_none() && self.temporal_layers.is_none() {
            return None;
        }
        let base = AblationConfig::default();
        Some(AblationConfig {
            use_sliding_window: !self.no_sliding_window,
            use_attention: !self.no_attention,
            gnn_layers: self.gnn_layers.map_or(base.gnn_layers, usize::from),
            temporal_layers: self.temporal_layers.map_or(base.temporal_layers, usize::from),
        })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Config(_) | Error::Validation(_) => 3,
        Error::Corruption(_) | Error::Version { .. } => 4,
        Error::NumericCheck(_) => 5,
        Error::Contract { .. } | Error::Tensor(_) => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={}", e.kind(), message);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn experiment_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => load_toml(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.cv.seed = seed;
    }
    if let Some(preset) = g.graph {
        cfg.model.graph = GraphChoice::Preset(preset);
    }
    Ok(cfg)
}

fn workers(g: &Global, folds: usize) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    g.workers.unwrap_or_else(|| folds.min(cores)).max(1)
}

fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<Dataset> {
    let rec = read_container(path)?;
    if rec.sample_rate_hz != cfg.model.sample_rate_hz {
        return Err(Error::Validation(format!(
            "recording is sampled at {} Hz but the model expects {} Hz; run preprocess first",
            rec.sample_rate_hz, cfg.model.sample_rate_hz
        )));
    }
    Dataset::from_recording(&rec, &cfg.segments, cfg.model.input_mode)
}

fn out_path(g: &Global, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&g.out_dir).map_err(|e| Error::io(&g.out_dir, e))?;
    Ok(g.out_dir.join(name))
}

fn write_report(g: &Global, stem: &str, report: &ExperimentReport) -> Result<()> {
    let json = report.to_json().map_err(|e| Error::Corruption(format!("report encoding: {e}")))?;
    write_atomic(&out_path(g, &format!("{stem}.json"))?, json.as_bytes())?;
    write_atomic(&out_path(g, &format!("{stem}.csv"))?, report.to_csv().as_bytes())
}

fn print_summary(label: &str, report: &ExperimentReport) {
    for d in &report.dimensions {
        let s = d.summary;
        println!(
            "{label} {}: ACC {:.2} ± {:.2}  F1 {:.2} ± {:.2}",
            d.dimension.name(),
            s.mean_accuracy,
            s.std_accuracy,
            s.mean_f1,
            s.std_f1
        );
    }
    for w in &report.warnings {
        println!("{label} warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Preprocess { input, output } => {
            let cfg = experiment_config(g)?;
            let p = &cfg.preprocess;
            let rec = read_container(input)?;
            let filtered = bandpass(&rec, p.low_hz, p.high_hz)?;
            let out = downsample(&filtered, p.target_rate_hz)?;
            write_container(output, &out, &[])?;
            println!(
                "preprocessed {} channels × {} trials: {} Hz → {} Hz",
                out.channel_count(),
                out.trial_count(),
                rec.sample_rate_hz,
                out.sample_rate_hz
            );
        }
        Command::Synth { spec, output } => {
            let mut spec: SynthSpec = match spec {
                Some(path) => load_toml(path)?,
                None => SynthSpec::default(),
            };
            if let Some(seed) = g.seed {
                spec.seed = seed;
            }
            let out = generate_synthetic(&spec)?;
            write_container(output, &out.recording, &out.warnings)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} trials to {}", out.recording.trial_count(), output.display());
        }
        Command::Train { data, save_checkpoints } => {
            let cfg = experiment_config(g)?;
            let dataset = load_dataset(&cfg, data)?;
            let plan = make_cv_plan(dataset.trial_count, cfg.cv.outer_folds, cfg.cv.inner_folds, cfg.cv.seed)?;
            let report = train_two_stage(
                &cfg.model,
                &plan,
                &cfg.schedule,
                &dataset,
                &cfg.dimensions,
                workers(g, plan.outer_folds),
            )?;
            write_report(g, "report", &report)?;
            print_summary("cv", &report);
            if *save_checkpoints {
                for &dim in &cfg.dimensions {
                    let mut fit = fit_final(&cfg.model, &cfg.schedule, &dataset, dim, cfg.cv.inner_folds, cfg.cv.seed)?;
                    let ck = Checkpoint::capture(&mut fit.model, &cfg.segments, dim, &dataset.electrodes);
                    let path = out_path(g, &format!("checkpoint-{}.json", dim.name()))?;
                    write_atomic(&path, ck.to_json()?.as_bytes())?;
                    println!("saved {}", path.display());
                }
            }
        }
        Command::Evaluate { checkpoint, data } => {
            let ck = Checkpoint::load(checkpoint)?;
            let rec = read_container(data)?;
            if rec.sample_rate_hz != ck.model.sample_rate_hz {
                return Err(Error::Validation(format!(
                    "recording is sampled at {} Hz but the checkpoint expects {} Hz",
                    rec.sample_rate_hz, ck.model.sample_rate_hz
                )));
            }
            let dataset = Dataset::from_recording(&rec, &ck.segments, ck.model.input_mode)?;
            if dataset.electrodes != ck.electrodes || dataset.input_len != ck.input_len {
                return Err(Error::Validation(
                    "recording channels or segment length differ from the checkpoint's".into(),
                ));
            }
            let mut model = ck.restore()?;
            let samples: Vec<_> = dataset.samples.iter().collect();
            let (accuracy, f1) = evaluate(&mut model, &samples, ck.dimension)?;
            let metrics = serde_json::json!({
                "dimension": ck.dimension.name(),
                "samples": samples.len(),
                "accuracy": accuracy,
                "f1": f1,
            });
            println!("{metrics}");
        }
        Command::Gradcheck { tolerance } => {
            let seed = g.seed.unwrap_or(0);
            let mut reports = atdgnn_tensor::primitive_suite(seed)?;
            reports.extend(atdgnn_core::model::gradcheck::model_suite(seed)?);
            let mut worst = 0.0f64;
            let mut failed = Vec::new();
            for r in &reports {
                let ok = r.passed(*tolerance);
                println!("{:<22} entries {:>5}  max rel err {:.3e}  {}", r.name, r.entries_checked, r.max_relative_error, if ok { "ok" } else { "FAIL" });
                worst = worst.max(r.max_relative_error);
                if !ok {
                    failed.push(r.name.clone());
                }
            }
            println!("max relative error: {worst:.3e}");
            if !failed.is_empty() {
                return Err(Error::NumericCheck(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Command::Ablate { data, variant } => {
            let cfg = experiment_config(g)?;
            let variants = match variant.variant() {
                Some(v) => vec![v],
                None if !cfg.ablations.is_empty() => cfg.ablations.clone(),
                None => return Err(Error::Config("no ablation variants in the config or on the command line".into())),
            };
            variants.iter().try_for_each(AblationConfig::validate)?;
            let dataset = load_dataset(&cfg, data)?;
            let plan = make_cv_plan(dataset.trial_count, cfg.cv.outer_folds, cfg.cv.inner_folds, cfg.cv.seed)?;
            let n_workers = workers(g, plan.outer_folds);
            let baseline = train_two_stage(&cfg.model, &plan, &cfg.schedule, &dataset, &cfg.dimensions, n_workers)?;
            write_report(g, "ablation-baseline", &baseline)?;
            print_summary("baseline", &baseline);
            let mut table = String::from("variant,use_sliding_window,use_attention,gnn_layers,temporal_layers,mean_accuracy,delta\n");
            let base_acc = baseline.mean_accuracy();
            table.push_str(&format!("baseline,,,,,{base_acc},0\n"));
            for (i, ab) in variants.iter().enumerate() {
                let report = run_ablation(&cfg.model, ab, &plan, &cfg.schedule, &dataset, &cfg.dimensions, n_workers)?;
                let stem = format!("ablation-{i}");
                write_report(g, &stem, &report)?;
                print_summary(&stem, &report);
                let acc = report.mean_accuracy();
                table.push_str(&format!(
                    "{stem},{},{},{},{},{acc},{}\n",
                    ab.use_sliding_window,
                    ab.use_attention,
                    ab.gnn_layers,
                    ab.temporal_layers,
                    acc - base_acc
                ));
            }
            write_atomic(&out_path(g, "ablations.csv")?, table.as_bytes())?;
        }
    }
    Ok(())
}
