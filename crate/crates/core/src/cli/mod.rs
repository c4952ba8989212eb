//! Command-line interface: `generate`, `train`, `eval`, `bench` and
//! `inspect-hierarchy`.
//!
//! Exit codes: 0 on success, 1 for usage, configuration, data and checkpoint
//! errors, 2 for numerical failures during training or prediction.

mod bench;
mod inspect;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::encoding::PositionalKind;
use crate::error::{Error, Result};
use crate::events::{
    generate_hawkes, generate_multiscale, load_sequences, make_examples, normalize_with_scale, write_sequences,
    EventSequence, Format, HawkesConfig, LoadOptions, MultiscaleConfig, NormMode, Vocabulary,
};
use crate::model::{AttentionMode, Checkpoint, SplitSpec, TimeDistribution};
use crate::train::{
    ablation_grid, evaluate, sensitivity_sweep, train, write_ablation_csv, write_report_csv, write_sensitivity_csv,
    Dataset, Optimizer, TrainConfig,
};

pub use bench::BenchArgs;
pub use inspect::InspectArgs;

#[derive(Parser, Debug)]
#[command(
    name = "xtsformer",
    version,
    about = "Cross-temporal-scale transformer for irregular event sequences"
)]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate(GenerateArgs),
    /// Train a model, writing a checkpoint, loss curve and test report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Attention cost table for growing sequence lengths.
    Bench(BenchArgs),
    /// Print the scale hierarchy of one sequence.
    InspectHierarchy(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GeneratorKind {
    Hawkes,
    Multiscale,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl From<FileFormat> for Format {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Csv => Format::Csv,
            FileFormat::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: GeneratorKind,
    #[arg(long)]
    pub seqs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FileFormat,
    #[arg(long)]
    pub num_types: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub base_rate: Option<f64>,
    #[arg(long)]
    pub excitation: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub burst_rate: Option<f64>,
    #[arg(long)]
    pub burst_size: Option<usize>,
    #[arg(long)]
    pub gap_scale: Option<f64>,
    #[arg(long)]
    pub bursts_per_seq: Option<usize>,
    #[arg(long)]
    pub type_noise: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Event file (CSV or JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Input format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub data_format: Option<FileFormat>,
    /// File with one type label per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub distribution: Option<TimeDistribution>,
    #[arg(long)]
    pub attention: Option<AttentionMode>,
    #[arg(long)]
    pub positional: Option<PositionalKind>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    #[arg(long)]
    pub normalization: Option<NormMode>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub nonneg: bool,
    #[arg(long)]
    pub causal: bool,
    #[arg(long)]
    pub layer_norm: bool,
    #[arg(long)]
    pub early_stopping: bool,
    /// Also run the 8-row ablation grid.
    #[arg(long)]
    pub ablation: bool,
    /// Also run a sensitivity sweep over these largest scales.
    #[arg(long, value_delimiter = ',')]
    pub sweep_scales: Vec<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// History length; defaults to the checkpoint's training window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Writes `bytes` to `path`, creating missing parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_data(args: &DataArgs, num_types: Option<usize>) -> Result<Vec<EventSequence>> {
    let format = match args.data_format {
        Some(f) => f.into(),
        None => Format::from_path(&args.data).ok_or_else(|| {
            Error::Config(format!(
                "cannot infer the format of {}; pass --data-format",
                args.data.display()
            ))
        })?,
    };
    let vocab = args.vocab.as_deref().map(Vocabulary::load).transpose()?;
    load_sequences(&args.data, format, &LoadOptions { num_types, vocab })
}

fn run_generate(a: &GenerateArgs) -> Result<()> {
    let (seqs, params) = match a.kind {
        GeneratorKind::Hawkes => {
            let d = HawkesConfig::default();
            let cfg = HawkesConfig {
                num_seqs: a.seqs.unwrap_or(d.num_seqs),
                horizon: a.horizon.unwrap_or(d.horizon),
                base_rate: a.base_rate.unwrap_or(d.base_rate),
                excitation: a.excitation.unwrap_or(d.excitation),
                decay: a.decay.unwrap_or(d.decay),
                num_types: a.num_types.unwrap_or(d.num_types),
                seed: a.seed,
            };
            (generate_hawkes(&cfg)?, serde_json::to_value(&cfg)?)
        }
        GeneratorKind::Multiscale => {
            let d = MultiscaleConfig::default();
            let cfg = MultiscaleConfig {
                num_seqs: a.seqs.unwrap_or(d.num_seqs),
                burst_rate: a.burst_rate.unwrap_or(d.burst_rate),
                burst_size: a.burst_size.unwrap_or(d.burst_size),
                gap_scale: a.gap_scale.unwrap_or(d.gap_scale),
                num_types: a.num_types.unwrap_or(d.num_types),
                seed: a.seed,
                bursts_per_seq: a.bursts_per_seq.unwrap_or(d.bursts_per_seq),
                type_noise: a.type_noise.unwrap_or(d.type_noise),
            };
            (generate_multiscale(&cfg)?, serde_json::to_value(&cfg)?)
        }
    };
    create_dir(&a.out)?;
    let file = match a.format {
        FileFormat::Csv => "events.csv",
        FileFormat::Jsonl => "events.jsonl",
    };
    write_sequences(&a.out.join(file), a.format.into(), &seqs)?;
    let manifest = json!({
        "generator": format!("{:?}", a.kind).to_lowercase(),
        "params": params,
        "seed": a.seed,
        "num_sequences": seqs.len(),
        "num_events": seqs.iter().map(EventSequence::len).sum::<usize>(),
        "file": file,
    });
    write_json(&a.out.join("manifest.json"), &manifest)?;
    println!("wrote {} sequences to {}", seqs.len(), a.out.join(file).display());
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn effective_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.epochs => c.epochs);
    set!(a.lr => c.learning_rate);
    set!(a.batch_size => c.batch_size);
    set!(a.seed => c.seed);
    set!(a.window => c.window);
    set!(a.optimizer => c.optimizer);
    set!(a.normalization => c.normalization);
    set!(a.clip_norm => c.clip_norm);
    set!(a.patience => c.patience);
    set!(a.scales => c.model.scales);
    set!(a.d_model => c.model.d_model);
    set!(a.heads => c.model.heads);
    set!(a.alpha => c.model.alpha);
    set!(a.distribution => c.model.distribution);
    set!(a.attention => c.model.attention);
    set!(a.positional => c.model.positional);
    c.model.nonneg |= a.nonneg;
    c.model.causal |= a.causal;
    c.model.layer_norm |= a.layer_norm;
    c.early_stopping |= a.early_stopping;
    c.validate()?;
    Ok(c)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = effective_train_config(a)?;
    let seqs = load_data(&a.input, None)?;
    let data = Dataset::from_sequences(&seqs, cfg.window, cfg.normalization, cfg.seed)?;
    let mut cfg = cfg;
    cfg.model.num_types = data.num_types;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    log::info!(
        "{} train / {} valid / {} test examples",
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );

    let result = train(&data, &cfg)?;
    let split = SplitSpec {
        window: cfg.window,
        seed: cfg.seed,
        normalization: cfg.normalization,
    };
    Checkpoint::from_model(&result.model, Some(data.norm.clone()), Some(split)).save(&a.out.join("checkpoint.json"))?;
    write_json(&a.out.join("loss_curve.json"), &result.curve)?;
    let report = evaluate(&result.model, &data.test, &data.norm)?;
    write_json(&a.out.join("report.json"), &report)?;
    println!(
        "test: accuracy {:.4}, macro F1 {:.4}, RMSE {:.4}, NLL {:.4} ({} examples)",
        report.accuracy, report.macro_f1, report.rmse, report.mean_nll, report.num_examples
    );

    if a.ablation {
        let rows = ablation_grid(&data, &cfg)?;
        write_json(&a.out.join("ablation.json"), &rows)?;
        let path = a.out.join("ablation.csv");
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_ablation_csv(&rows, f).map_err(|e| Error::io(&path, e))?;
    }
    if !a.sweep_scales.is_empty() {
        let rows = sensitivity_sweep(&data, &cfg, &a.sweep_scales)?;
        write_json(&a.out.join("sensitivity.json"), &rows)?;
        let path = a.out.join("sensitivity.csv");
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_sensitivity_csv(&rows, f).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let k = model.cfg.num_types;
    let mut seqs = load_data(&a.input, None)?;
    if let Some(found) = seqs.first().map(|s| s.num_types) {
        if found > k {
            return Err(Error::Mismatch(format!(
                "dataset has {found} event types but the checkpoint was trained with num_types = {k}"
            )));
        }
    }
    for s in &mut seqs {
        s.num_types = k;
    }
    let window = a
        .window
        .or(ck.split.as_ref().map(|s| s.window))
        .ok_or_else(|| Error::Config("checkpoint has no split spec; pass --window".into()))?;

    let (examples, norm) = match (a.split, &ck.split) {
        (Split::All, _) | (_, None) => {
            if !matches!(a.split, Split::All) {
                return Err(Error::Config(
                    "checkpoint has no split spec; only --split all is available".into(),
                ));
            }
            let norm = ck
                .norm
                .clone()
                .ok_or_else(|| Error::Config("checkpoint has no normalization statistics".into()))?;
            let (normed, _) = normalize_with_scale(&seqs, norm.mode, norm.scale);
            let ex = normed.iter().flat_map(|s| make_examples(s, window)).collect();
            (ex, norm)
        }
        (split, Some(spec)) => {
            let data = Dataset::from_sequences(&seqs, window, spec.normalization, spec.seed)?;
            let ex = match split {
                Split::Train => data.train,
                Split::Valid => data.valid,
                _ => data.test,
            };
            (ex, data.norm)
        }
    };
    let report = evaluate(&model, &examples, &norm)?;
    let mut buf = Vec::new();
    match a.format {
        ReportFormat::Json => {
            buf = serde_json::to_vec_pretty(&report)?;
            buf.push(b'\n');
        }
        ReportFormat::Csv => write_report_csv(&report, &mut buf).expect("write to memory"),
    }
    match &a.out {
        Some(p) => write_file(p, &buf)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only when a pool already exists, e.g. a second call in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => bench::run(a),
        Command::InspectHierarchy(a) => inspect::run(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
