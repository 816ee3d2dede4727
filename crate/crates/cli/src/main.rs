//! Command-line front end: dataset generation, training, single-sample
//! inference and benchmarking, all driven by one JSON configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xfcsi::bench::{run_benchmark, write_outputs, SweepVar};
use xfcsi::config::{load_config, ConfigError, RunConfig};
use xfcsi::manifest::{file_sha256, Manifest};
use xfcsi::{ckpt, dataset};
use xfcsi_core::channel::{cosine_similarity, nmse};
use xfcsi_core::flow::{train, HISTORY_CSV_HEADER};
use xfcsi_core::ode::{infer_channel, trace_nmse};
use xfcsi_core::scene::generate_dataset;

#[derive(Parser)]
#[command(name = "xfcsi", version, about = "Pilot-free channel inference from multimodal sensing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single keys, e.g. --set train.learning_rate=0.001
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = load_config(self.config.as_deref(), &self.sets)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired sensing/channel dataset file.
    GenerateData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset path (overrides paths.data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the flow model and write checkpoints plus history.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset file (overrides paths.data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides paths.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Infer the channel for one dataset sample and report its metrics.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint directory (overrides paths.ckpt_dir).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Dataset file (overrides paths.data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sample index into the dataset.
        #[arg(long)]
        index: usize,
        /// Integration steps (overrides infer.k).
        #[arg(long)]
        k: Option<usize>,
        /// Write per-step NMSE rows to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate the configured methods across a sweep and emit reports.
    Benchmark {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Sweep variable: snr or tca.
        #[arg(long, value_parser = parse_sweep)]
        sweep: SweepChoice,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy)]
struct SweepChoice(SweepVar);

fn parse_sweep(s: &str) -> Result<SweepChoice, String> {
    match s {
        "snr" => Ok(SweepChoice(SweepVar::SnrDb)),
        "tca" => Ok(SweepChoice(SweepVar::TcaMs)),
        other => Err(format!("unknown sweep '{other}', expected snr or tca")),
    }
}

#[derive(Debug)]
enum CliError {
    /// Bad usage or configuration: exit code 2.
    Usage(String),
    /// Runtime failure: exit code 1.
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<xfcsi::FileError> for CliError {
    fn from(e: xfcsi::FileError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<xfcsi_core::Error> for CliError {
    fn from(e: xfcsi_core::Error) -> Self {
        match e {
            xfcsi_core::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData { config, out } => {
            let cfg = config.load()?;
            let path = out
                .or(cfg.paths.data.clone())
                .ok_or_else(|| CliError::Usage("no output path: pass --out or set paths.data".into()))?;
            cmd_generate(&cfg, &path)
        }
        Command::Train { config, data, out } => {
            let cfg = config.load()?;
            let data = data
                .or(cfg.paths.data.clone())
                .ok_or_else(|| CliError::Usage("no dataset: pass --data or set paths.data".into()))?;
            let out = out
                .or(cfg.paths.out_dir.clone())
                .ok_or_else(|| CliError::Usage("no output dir: pass --out or set paths.out_dir".into()))?;
            cmd_train(&cfg, &data, &out)
        }
        Command::Infer { config, ckpt, data, index, k, trace } => {
            let cfg = config.load()?;
            let data = data
                .or(cfg.paths.data.clone())
                .ok_or_else(|| CliError::Usage("no dataset: pass --data or set paths.data".into()))?;
            let ckpt_dir = ckpt
                .or(cfg.paths.ckpt_dir.clone())
                .ok_or_else(|| CliError::Usage("no checkpoints: pass --ckpt or set paths.ckpt_dir".into()))?;
            cmd_infer(&cfg, &ckpt_dir, &data, index, k, trace.as_deref())
        }
        Command::Benchmark { config, data, ckpt, sweep, out } => {
            let cfg = config.load()?;
            let data = data
                .or(cfg.paths.data.clone())
                .ok_or_else(|| CliError::Usage("no dataset: pass --data or set paths.data".into()))?;
            let out = out
                .or(cfg.paths.out_dir.clone())
                .ok_or_else(|| CliError::Usage("no output dir: pass --out or set paths.out_dir".into()))?;
            let ckpt_dir = ckpt.or(cfg.paths.ckpt_dir.clone());
            cmd_benchmark(&cfg, &data, ckpt_dir.as_deref(), sweep.0, &out)
        }
    }
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = generate_dataset(&cfg.scene, &cfg.arrays, cfg.seed)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    dataset::save_dataset(out, &ds)?;
    let hash = file_sha256(out)?;
    let mut manifest = Manifest::new("generate-data", cfg);
    manifest.dataset_sha256 = Some(hash.clone());
    manifest.record_output(
        out.file_name().and_then(|n| n.to_str()).unwrap_or("dataset"),
        out,
    )?;
    manifest.write(&out.with_extension("manifest.json"))?;
    println!("samples: {}", ds.samples.len());
    println!("sha256: {hash}");
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &Path, out_dir: &Path) -> Result<(), CliError> {
    let ds = dataset::load_dataset(data)?;
    let outcome = train(&ds, &cfg.train)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(e.to_string()))?;

    let enc_path = out_dir.join("encoder.ckpt");
    let vel_path = out_dir.join("velocity.ckpt");
    ckpt::save_checkpoint(&enc_path, &outcome.store, &["encoder/", "align/"])?;
    ckpt::save_checkpoint(&vel_path, &outcome.store, &["velocity/"])?;

    let mut history = String::from(HISTORY_CSV_HEADER);
    history.push('\n');
    for row in &outcome.history {
        history.push_str(&xfcsi_core::flow::history_csv_row(row));
        history.push('\n');
    }
    let hist_path = out_dir.join("history.csv");
    std::fs::write(&hist_path, history).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut manifest = Manifest::new("train", cfg);
    manifest.dataset_sha256 = Some(file_sha256(data)?);
    manifest.record_output("encoder.ckpt", &enc_path)?;
    manifest.record_output("velocity.ckpt", &vel_path)?;
    manifest.record_output("history.csv", &hist_path)?;
    manifest.write(&out_dir.join("manifest.json"))?;

    let last = outcome.history.last().expect("at least one epoch");
    println!("epochs: {}", outcome.history.len());
    println!("final total loss: {}", last.total);
    println!("final test NMSE: {} dB", last.test_nmse_db);
    println!("temperature: {}", outcome.temperature.value(&outcome.store));
    Ok(())
}

fn cmd_infer(
    cfg: &RunConfig,
    ckpt_dir: &Path,
    data: &Path,
    index: usize,
    k_override: Option<usize>,
    trace_out: Option<&Path>,
) -> Result<(), CliError> {
    let ds = dataset::load_dataset(data)?;
    if index >= ds.samples.len() {
        return Err(CliError::Usage(format!(
            "sample index {index} out of range (dataset has {})",
            ds.samples.len()
        )));
    }
    let k = k_override.unwrap_or(cfg.infer.k);
    if k == 0 {
        return Err(CliError::Usage("k must be >= 1".into()));
    }

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut store = xfcsi_core::params::ParamStore::<f32>::new();
    let encoder = xfcsi_core::encoder::EncoderModel::new(
        &mut store,
        &mut rng,
        cfg.train.encoder.clone(),
        cfg.arrays.n_ue,
        cfg.arrays.n_bs,
    )?;
    let unet = xfcsi_core::unet::UnetModel::new(
        &mut store,
        &mut rng,
        cfg.train.unet.clone(),
        cfg.arrays.n_ue,
        cfg.arrays.n_bs,
    )?;
    let _ = xfcsi_core::flow::Temperature::register(&mut store, cfg.train.tau_init);
    ckpt::apply_checkpoint(&ckpt_dir.join("encoder.ckpt"), &mut store, &["encoder/", "align/"])?;
    ckpt::apply_checkpoint(&ckpt_dir.join("velocity.ckpt"), &mut store, &["velocity/"])?;

    let s = &ds.samples[index];
    let result = infer_channel(&encoder, &unet, &store, &s.image, &s.cloud, &s.coord, k)?;
    let err = nmse(&s.channel, &result.h_hat)?;
    let cos = cosine_similarity(&s.channel, &result.h_hat)?;
    println!("sample: user {} frame {}", s.user_id, s.frame_index);
    println!("k: {k}");
    println!("nmse_db: {}", err.db);
    println!("cossim: {cos}");

    if let Some(path) = trace_out {
        let target = xfcsi_core::channel::stack_real(&xfcsi_core::channel::to_angular(&s.channel)?);
        let steps = trace_nmse(&result.trace, &target)?;
        let mut csv = String::from("step,t,nmse_db\n");
        for (i, n) in steps.iter().enumerate() {
            let t = i as f64 * result.trace.step_size;
            csv.push_str(&format!(
                "{},{},{}\n",
                i,
                t,
                n.db.max(xfcsi_core::channel::NMSE_DB_FLOOR)
            ));
        }
        std::fs::write(path, csv).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("trace: {}", path.display());
    }
    Ok(())
}

fn cmd_benchmark(
    cfg: &RunConfig,
    data: &Path,
    ckpt_dir: Option<&Path>,
    sweep: SweepVar,
    out_dir: &Path,
) -> Result<(), CliError> {
    let ds = dataset::load_dataset(data)?;
    let output = run_benchmark(cfg, &ds, ckpt_dir, sweep)?;
    write_outputs(out_dir, &output)?;

    let mut manifest = Manifest::new("benchmark", cfg);
    manifest.dataset_sha256 = Some(file_sha256(data)?);
    for name in ["report.json", "results.csv", "per_sample.csv"] {
        manifest.record_output(name, &out_dir.join(name))?;
    }
    manifest.write(&out_dir.join("manifest.json"))?;

    for m in &output.report.methods {
        match (&m.ok, &m.error) {
            (true, _) => println!("method {}: ok", m.name),
            (false, Some(e)) => println!("method {}: skipped ({e})", m.name),
            (false, None) => println!("method {}: skipped", m.name),
        }
    }
    println!("aggregate rows: {}", output.report.aggregates.len());
    println!("report: {}", out_dir.join("report.json").display());
    Ok(())
}
