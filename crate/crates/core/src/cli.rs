//! The `textdistill` command line: config resolution, the four
//! subcommands, and their exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or other runtime failure |
//! | 2 | invalid config or arguments |
//! | 3 | distillation diverged |
//! | 4 | artifact does not match the config (shape or embedding hash) |
//! | 5 | corrupt artifact |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::{export_json, load_artifact, save_artifact, DistillConfig, DistillError, DistilledSet, InitMode};
use crate::eval::{
    compare_protocol, distill_dataset, size_sweep, summarize, write_comparison_csv, write_curves_csv, write_sweep_csv,
    CompareConfig, EvalContext, EvalError, SyntheticSpec,
};
use crate::model::{ModelConfig, TextCnn};
use crate::textdata::{load_csv_dataset, load_embeddings, Dataset, EmbeddingTable, FieldPolicy, LabeledText, Vocab};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;
pub const EXIT_CORRUPT: i32 = 5;

pub const ARTIFACT_FILE: &str = "distilled.ddtc";
pub const METRICS_FILE: &str = "distill_metrics.csv";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// A failed command: its exit code and a message for standard error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        let code = match &e {
            DistillError::Diverged { .. } | DistillError::NonFiniteGradient { .. } => EXIT_DIVERGED,
            DistillError::CorruptArtifact(_) => EXIT_CORRUPT,
            DistillError::InvalidConfig(_)
            | DistillError::RealSampleModeNeedsDataset
            | DistillError::ClassTooSmall { .. }
            | DistillError::EmptyDataset => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Distill(d) => d.into(),
            EvalError::InvalidConfig(_) | EvalError::ClassTooSmall { .. } | EvalError::EmptySource => {
                Self::config(e.to_string())
            }
            e => Self::new(EXIT_RUNTIME, e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_RUNTIME, e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

/// Benchmark-layout CSV corpora on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub train: PathBuf,
    pub test: PathBuf,
    pub num_classes: usize,
    #[serde(default)]
    pub fields: FieldPolicy,
    /// Tokens seen fewer times in the training texts map to UNK.
    #[serde(default = "one")]
    pub min_count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(CsvData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSource {
    /// `Normal(0, std²)` vectors for every vocabulary entry.
    Random { std: f64, seed: u64 },
    /// Whitespace-separated text vectors; missing tokens are drawn from a
    /// normal matched to the file.
    File { path: PathBuf, seed: u64 },
}

/// Shared training schedule of every evaluated source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub balanced_random: bool,
    pub eval_batch_size: usize,
    /// Distilled sizes per class for `eval`'s size sweep; empty skips it.
    pub sweep: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            alpha: 0.1,
            seeds: vec![0, 1, 2],
            balanced_random: true,
            eval_batch_size: 256,
            sweep: Vec::new(),
        }
    }
}

impl EvalSettings {
    pub fn compare(&self) -> CompareConfig {
        CompareConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            seeds: self.seeds.clone(),
            balanced_random: self.balanced_random,
        }
    }
}

/// Everything a run depends on. `distill.seq_len` and `distill.embed_dim`
/// are always taken from the model, and `seed` replaces `distill.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSource,
    pub embeddings: EmbeddingSource,
    pub model: ModelConfig,
    pub distill: DistillConfig,
    pub eval: EvalSettings,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig {
            embed_dim: 16,
            max_len: 40,
            num_classes: 4,
            ..ModelConfig::default()
        };
        let distill = DistillConfig {
            alpha_inner: 0.1,
            alpha_outer: 30.0,
            inner_epochs: 10,
            init_mode: InitMode::RealSample,
            ..DistillConfig::default()
        };
        Self {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            embeddings: EmbeddingSource::Random { std: 0.5, seed: 0 },
            model,
            distill,
            eval: EvalSettings::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    /// Reads `path`, or returns the defaults when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    /// Applies command-line overrides and derived fields.
    pub fn resolve(mut self, flags: &CommonFlags) -> Self {
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(out) = &flags.out {
            self.out_dir = out.clone();
        }
        if let Some(sweep) = &flags.sweep {
            self.eval.sweep = sweep.clone();
        }
        self.distill.seq_len = self.model.max_len;
        self.distill.embed_dim = self.model.embed_dim;
        self.distill.seed = self.seed;
        self
    }

    pub fn num_classes(&self) -> usize {
        match &self.data {
            DataSource::Synthetic(s) => s.num_classes,
            DataSource::Csv(c) => c.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| CliError::config(e.to_string()))?;
        if self.num_classes() != self.model.num_classes {
            return Err(CliError::config(format!(
                "data has {} classes but the model has {}",
                self.num_classes(),
                self.model.num_classes
            )));
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate().map_err(CliError::config)?,
            DataSource::Csv(c) => {
                for p in [&c.train, &c.test] {
                    if !p.is_file() {
                        return Err(CliError::config(format!("dataset {} does not exist", p.display())));
                    }
                }
                if c.min_count == 0 {
                    return Err(CliError::config("min_count must be at least 1"));
                }
            }
        }
        match &self.embeddings {
            EmbeddingSource::Random { std, .. } if !(std.is_finite() && *std > 0.0) => {
                return Err(CliError::config(format!("embedding std must be positive, got {std}")));
            }
            EmbeddingSource::File { path, .. } if !path.is_file() => {
                return Err(CliError::config(format!(
                    "embedding file {} does not exist",
                    path.display()
                )));
            }
            _ => {}
        }
        self.distill.validate(&self.model).map_err(CliError::from)?;
        self.eval.compare().validate().map_err(CliError::from)?;
        if self.eval.eval_batch_size == 0 {
            return Err(CliError::config("eval_batch_size must be positive"));
        }
        if self.eval.sweep.contains(&0) || self.eval.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::config(format!(
                "sweep sizes must be positive and ascending, got {:?}",
                self.eval.sweep
            )));
        }
        Ok(())
    }
}

/// Loaded corpus and evaluation context of a resolved config.
pub struct Workspace {
    pub vocab: Vocab,
    pub train: Dataset,
    pub ctx: EvalContext,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let (train_texts, test_texts) = match &config.data {
            DataSource::Synthetic(spec) => spec.generate(),
            DataSource::Csv(c) => (
                load_csv_dataset(&c.train, c.num_classes, c.fields).map_err(runtime)?,
                load_csv_dataset(&c.test, c.num_classes, c.fields).map_err(runtime)?,
            ),
        };
        let min_count = match &config.data {
            DataSource::Csv(c) => c.min_count,
            DataSource::Synthetic(_) => 1,
        };
        let texts: Vec<&str> = train_texts.iter().map(|t| t.text.as_str()).collect();
        let vocab = Vocab::build(&texts, min_count);
        let (l, d, c) = (config.model.max_len, config.model.embed_dim, config.model.num_classes);
        let train = Dataset::from_texts(&train_texts, &vocab, l, c).map_err(runtime)?;
        let test = Dataset::from_texts(&test_texts, &vocab, l, c).map_err(runtime)?;
        let table: EmbeddingTable<f32> = match &config.embeddings {
            EmbeddingSource::Random { std, seed } => EmbeddingTable::random(vocab.len(), d, *std, *seed),
            EmbeddingSource::File { path, seed } => load_embeddings(path, &vocab, d, *seed),
        }
        .map_err(runtime)?;
        let model = TextCnn::new(config.model.clone()).map_err(|e| CliError::config(e.to_string()))?;
        Ok(Self {
            vocab,
            train,
            ctx: EvalContext {
                model,
                table,
                test,
                eval_batch_size: config.eval.eval_batch_size,
            },
        })
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// JSON run config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed, overriding the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated distilled sizes per class for the size sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
}

#[derive(Debug, Parser)]
#[command(
    name = "textdistill",
    version,
    about = "Distil text classification datasets into a few embedding matrices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distil the training set and write the artifact and per-step metrics.
    Distill(CommonFlags),
    /// Compare full, random-subset and distilled training.
    Eval {
        #[command(flatten)]
        flags: CommonFlags,
        /// Artifact to evaluate; defaults to the one in the output directory.
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Dump an artifact as JSON.
    Export {
        #[command(flatten)]
        flags: CommonFlags,
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Write the built-in synthetic corpus as train.csv and test.csv.
    GenSynthetic(CommonFlags),
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Errors go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Distill(flags) => cmd_distill(&load_config(&flags)?).map(drop),
        Command::Eval { flags, artifact } => {
            let config = load_config(&flags)?;
            let artifact = artifact.unwrap_or_else(|| config.out_dir.join(ARTIFACT_FILE));
            cmd_eval(&config, &artifact)
        }
        Command::Export { flags, artifact } => {
            let config = RunConfig::load(flags.config.as_deref())?.resolve(&flags);
            let artifact = artifact.unwrap_or_else(|| config.out_dir.join(ARTIFACT_FILE));
            let out = flags.out.as_ref().map(|d| d.join("distilled.json"));
            let json = cmd_export(&artifact, out.as_deref())?;
            if out.is_none() {
                println!("{json}");
            }
            Ok(())
        }
        Command::GenSynthetic(flags) => {
            let config = RunConfig::load(flags.config.as_deref())?.resolve(&flags);
            let mut spec = match config.data {
                DataSource::Synthetic(s) => s,
                DataSource::Csv(_) => SyntheticSpec::default(),
            };
            if let Some(seed) = flags.seed {
                spec.seed = seed;
            }
            cmd_gen_synthetic(&spec, &config.out_dir)
        }
    }
}

fn load_config(flags: &CommonFlags) -> Result<RunConfig> {
    let config = RunConfig::load(flags.config.as_deref())?.resolve(flags);
    config.validate()?;
    Ok(config)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Resolved config, command and output digests. Contains nothing that
/// varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub embedding_hash: String,
    /// SHA-256 of every written file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

fn write_manifest(config: &RunConfig, command: &str, embedding_hash: String, files: &[&str]) -> Result<()> {
    let mut outputs = BTreeMap::new();
    for &name in files {
        let bytes = std::fs::read(config.out_dir.join(name)).map_err(runtime)?;
        outputs.insert(name.to_string(), sha256_hex(&bytes));
    }
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed: config.seed,
        embedding_hash,
        outputs,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(runtime)?;
    crate::atomic_write(&config.out_dir.join(MANIFEST_FILE), &json).map_err(runtime)
}

#[derive(Serialize)]
struct MetricRow {
    step: u64,
    outer_loss: f64,
    grad_norm: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(runtime)?;
    }
    let bytes = w.into_inner().map_err(runtime)?;
    crate::atomic_write(path, &bytes).map_err(runtime)
}

/// Distils per `config` and writes the artifact, metrics and manifest.
/// Nothing is written when distillation fails.
pub fn cmd_distill(config: &RunConfig) -> Result<DistilledSet<f32>> {
    let ws = Workspace::load(config)?;
    let mut metrics = Vec::new();
    let set = distill_dataset(&ws.ctx, &ws.train, &config.distill, |r| {
        metrics.push(MetricRow {
            step: r.step,
            outer_loss: r.outer_loss,
            grad_norm: r.grad_norm,
        })
    })?;
    create_dir(&config.out_dir)?;
    save_artifact(config.out_dir.join(ARTIFACT_FILE), &set)?;
    write_csv(&config.out_dir.join(METRICS_FILE), &metrics)?;
    write_manifest(
        config,
        "distill",
        ws.ctx.table.content_hash(),
        &[ARTIFACT_FILE, METRICS_FILE],
    )?;
    Ok(set)
}

/// Rejects an artifact whose shape or embedding table differs from what
/// `config` would produce.
pub fn check_compatible(set: &DistilledSet<f32>, config: &RunConfig, embedding_hash: &str) -> Result<()> {
    let m = &config.model;
    let mut problems = String::new();
    for (what, have, want) in [
        ("seq_len", set.seq_len(), m.max_len),
        ("embed_dim", set.embed_dim(), m.embed_dim),
        ("num_classes", set.num_classes(), m.num_classes),
    ] {
        if have != want {
            let _ = write!(problems, " {what} {have} != {want};");
        }
    }
    if set.embedding_hash() != embedding_hash {
        problems.push_str(" embedding hash differs;");
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_MISMATCH,
            format!("artifact does not match config:{problems}"),
        ))
    }
}

/// Writes `comparison.csv`, `curves.csv` and `sweep.csv` (header only when
/// no sweep sizes are configured) plus the manifest.
pub fn cmd_eval(config: &RunConfig, artifact: &Path) -> Result<()> {
    let set = load_artifact(artifact)?;
    let ws = Workspace::load(config)?;
    let hash = ws.ctx.table.content_hash();
    check_compatible(&set, config, &hash)?;
    let cmp = &config.eval.compare();
    let (rows, curves) = compare_protocol(&ws.ctx, &ws.train, std::slice::from_ref(&set), cmp)?;
    let sweep = if config.eval.sweep.is_empty() {
        Vec::new()
    } else {
        size_sweep(
            &ws.ctx,
            &ws.train,
            &config.eval.sweep,
            &config.distill,
            cmp,
            |_, _, _| {},
        )?
    };
    create_dir(&config.out_dir)?;
    let dir = &config.out_dir;
    write_comparison_csv(dir.join("comparison.csv"), &rows)?;
    write_curves_csv(dir.join("curves.csv"), &curves)?;
    write_sweep_csv(dir.join("sweep.csv"), &sweep)?;
    for s in summarize(&rows) {
        let rel = s.relative_pct.map_or_else(|| "n/a".to_string(), |r| format!("{r:.2}%"));
        eprintln!(
            "{:?}: {:.4} ± {:.4} over {} seeds ({rel} of full)",
            s.source, s.mean, s.std, s.runs
        );
    }
    write_manifest(config, "eval", hash, &["comparison.csv", "curves.csv", "sweep.csv"])
}

/// JSON text of `artifact`, also written atomically to `out` if given.
pub fn cmd_export(artifact: &Path, out: Option<&Path>) -> Result<String> {
    let set = load_artifact(artifact)?;
    let json = serde_json::to_string(&export_json(&set)).map_err(runtime)?;
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        crate::atomic_write(path, json.as_bytes()).map_err(runtime)?;
    }
    Ok(json)
}

fn corpus_csv(texts: &[LabeledText]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(Vec::new());
    for t in texts {
        w.write_record([(t.label + 1).to_string(), t.text.clone()])
            .map_err(runtime)?;
    }
    w.into_inner().map_err(runtime)
}

/// Writes the corpus in the benchmark layout (1-based label, text).
pub fn cmd_gen_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<()> {
    spec.validate().map_err(CliError::config)?;
    let (train, test) = spec.generate();
    create_dir(out_dir)?;
    crate::atomic_write(&out_dir.join("train.csv"), &corpus_csv(&train)?).map_err(runtime)?;
    crate::atomic_write(&out_dir.join("test.csv"), &corpus_csv(&test)?).map_err(runtime)
}
