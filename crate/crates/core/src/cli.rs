//! Command-line interface: argument definitions and the subcommands.
//!
//! Precedence of settings, lowest first: built-in defaults, the `--config`
//! file, `--set section.key=value` overrides in order, then dedicated
//! flags (`--seed`, `--mode`, `--lr`, `--epochs`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autodiff::OpKind;
use crate::config::RunConfig;
use crate::data::{self, DatasetFile, Splits};
use crate::error::{Error, Result};
use crate::experiment::{self, generation_scores, GroupError};
use crate::metrics::{roc_table, summary_table, RocResult};
use crate::model::{Mode, ModelConfig, TieNet};
use crate::text::Vocabulary;
use crate::training::{log_tsv, samples, TrainSample};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Checkpoint directory layout written by `train`.
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "model.toml";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Gradient threshold of the `gradcheck` command.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "tienet", version, about = "Text-image embedding network on synthetic chest-film data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [model], [train] and [data] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// One of r, ir, igr, i-baseline.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true, env = "TIENET_OUT", default_value = "tienet-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/val/test splits.
    Gen,
    /// Train one mode and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate checkpoints: per-class ROC files and an AUC summary.
    Eval(EvalArgs),
    /// Generate a report and an attention trace for one image.
    Generate(GenerateArgs),
    /// Finite-difference check of every parameter group.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.tsv and val.tsv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory written by `train`. Repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Adds a column scored by the labels themselves.
    #[arg(long, hide = true)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file whose first record supplies the image.
    #[arg(long, conflicts_with = "data")]
    pub image: Option<PathBuf>,
    /// Dataset directory; combine with --index and --split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Scales the backward rule of one op, e.g. `tanh`.
    #[arg(long, hide = true, value_name = "OP")]
    pub corrupt_backward: Option<String>,
}

/// Record of one command invocation and everything it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub mode: Option<Mode>,
    pub checkpoint: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seed,
            mode: None,
            checkpoint: None,
            artifacts: Vec::new(),
            metrics: BTreeMap::new(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    /// Lists itself as an artifact and writes `manifest.json` into `dir`.
    fn finish(mut self, dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        self.artifacts.push(path.clone());
        self.finished_unix = now();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ModeInput { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Resolves the configuration from file, overrides and flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.set(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.model.mode = mode;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = resolve_config(&cli.common)?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Gen => cmd_gen(&cfg, out).map(|_| EXIT_OK),
        Command::Train(a) => {
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            cmd_train(&cfg, &a.data, out).map(|_| EXIT_OK)
        }
        Command::Eval(a) => cmd_eval(&cfg, a, out).map(|_| EXIT_OK),
        Command::Generate(a) => {
            let (text, _) = cmd_generate(&cfg, a, out)?;
            println!("{text}");
            Ok(EXIT_OK)
        }
        Command::Gradcheck(a) => {
            let fault = match &a.corrupt_backward {
                Some(name) => Some((
                    OpKind::parse(name).ok_or_else(|| Error::Config(format!("unknown op `{name}`")))?,
                    1.5,
                )),
                None => None,
            };
            let mode = cli.common.mode.unwrap_or(Mode::IGR);
            let seed = cli.common.seed.unwrap_or(0);
            let rows = cmd_gradcheck(mode, seed, fault)?;
            print!("{}", gradcheck_table(&rows));
            Ok(if rows.iter().all(|r| r.max_rel <= GRADCHECK_TOL) { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    cfg.data.validate()?;
    let splits = data::generate(&cfg.data)?;
    data::audit(&cfg.data, &splits)?;
    let mut manifest = RunManifest::new("gen", cfg, cfg.data.seed);
    manifest.artifacts = splits.save(out)?;
    for (name, split) in data::SPLIT_NAMES.iter().zip([&splits.train, &splits.val, &splits.test]) {
        manifest.metrics.insert(format!("{name}_records"), split.len() as f64);
    }
    manifest.finish(out)
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let train_file = DatasetFile::load(&data_dir.join("train.tsv"))?;
    let val_file = DatasetFile::load(&data_dir.join("val.tsv"))?;
    if train_file.is_empty() || val_file.is_empty() {
        return Err(Error::invalid("train and val splits must be nonempty"));
    }
    let splits = Splits {
        train: train_file,
        val: val_file,
        test: DatasetFile::default(),
    };
    let prep = experiment::prepare(&splits, &cfg.data, cfg.train.min_count)?;
    let (model, outcome) = experiment::train_mode(&prep, &cfg.model, cfg.model.mode, &cfg.train)?;

    create_dir(out)?;
    let mut resolved = cfg.clone();
    resolved.model = model.config().clone();
    let mut manifest = RunManifest::new("train", &resolved, cfg.train.seed);
    manifest.mode = Some(cfg.model.mode);

    let ckpt = out.join(CHECKPOINT_FILE);
    model.save(&ckpt)?;
    let files = [
        (CONFIG_FILE, resolved.to_toml()),
        (VOCAB_FILE, prep.vocab.to_text()),
        (LOG_FILE, log_tsv(&outcome.log)),
    ];
    manifest.artifacts.push(ckpt.clone());
    for (name, text) in files {
        let path = out.join(name);
        write(&path, &text)?;
        manifest.artifacts.push(path);
    }
    manifest.checkpoint = Some(ckpt);
    manifest.metrics.insert("best_epoch".into(), outcome.best_epoch as f64);
    manifest.metrics.insert("best_val_auc".into(), outcome.best_val_auc);
    manifest.finish(out)
}

/// A trained model with its vocabulary and resolved configuration.
pub struct LoadedCheckpoint {
    pub config: RunConfig,
    pub model: TieNet,
    pub vocab: Vocabulary,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let model = TieNet::load(config.model.clone(), &dir.join(CHECKPOINT_FILE))?;
    if model.config().vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "{}: vocabulary has {} entries, model expects {}",
            dir.display(),
            vocab.len(),
            model.config().vocab_size
        )));
    }
    Ok(LoadedCheckpoint { config, model, vocab })
}

fn load_split(dir: &Path, split: &str) -> Result<DatasetFile> {
    DatasetFile::load(&dir.join(format!("{split}.tsv")))
}

/// Column label, column order in the summary, ROC file suffix.
fn method_of(mode: Option<Mode>) -> (&'static str, usize, &'static str) {
    match mode {
        Some(m) => (m.label(), Mode::ALL.iter().position(|&x| x == m).unwrap_or(0), m.as_str()),
        None => ("oracle", Mode::ALL.len(), "oracle"),
    }
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, out: &Path) -> Result<RunManifest> {
    if args.checkpoints.is_empty() && !args.oracle {
        return Err(Error::Config("eval needs at least one --checkpoint".into()));
    }
    let file = load_split(&args.data, &args.split)?;
    if file.is_empty() {
        return Err(Error::invalid(format!("split {} is empty", args.split)));
    }
    let labels: Vec<Vec<u8>> = file.records.iter().map(|r| r.labels.clone()).collect();
    create_dir(out)?;

    let mut columns: Vec<(Option<Mode>, RocResult)> = Vec::new();
    let mut manifest = RunManifest::new("eval", cfg, cfg.train.seed);
    let mut class_names = cfg.data.class_names();
    for dir in &args.checkpoints {
        let ck = load_checkpoint(dir)?;
        class_names = ck.config.data.class_names();
        let set: Vec<TrainSample> = samples(&file, &ck.vocab);
        let preds = experiment::predict_all(&ck.model, &set)?;
        let mode = ck.model.config().mode;
        columns.push((Some(mode), experiment::roc_of(&preds, &set)?));
        if mode == Mode::IGR {
            let generated: Vec<_> = preds.iter().filter_map(|p| p.generated.as_ref().map(|g| g.tokens.clone())).collect();
            let scores = generation_scores(&ck.vocab, &generated, &set);
            for (prefix, s) in [("igr_text", scores.paired), ("igr_shuffled", scores.shuffled)] {
                manifest.metrics.insert(format!("{prefix}_bleu1"), s.bleu1);
                manifest.metrics.insert(format!("{prefix}_bleu4"), s.bleu4);
                manifest.metrics.insert(format!("{prefix}_rouge_l"), s.rouge_l);
                manifest.metrics.insert(format!("{prefix}_meteor"), s.meteor_simple);
            }
        }
    }
    if args.oracle {
        let probs: Vec<Vec<f64>> = labels.iter().map(|l| l.iter().map(|&y| f64::from(y)).collect()).collect();
        columns.push((None, crate::metrics::evaluate_classes(&probs, &labels)?));
    }
    if class_names.len() != labels[0].len() {
        class_names = (0..labels[0].len()).map(|m| format!("class{m}")).collect();
    }
    columns.sort_by_key(|(m, _)| method_of(*m).1);

    for (mode, roc) in &columns {
        let (label, _, suffix) = method_of(*mode);
        for (name, curve) in class_names.iter().zip(&roc.curves) {
            if let Some(curve) = curve {
                let path = out.join(format!("roc_{name}_{suffix}.tsv"));
                write(&path, &roc_table(curve))?;
                manifest.artifacts.push(path);
            }
        }
        manifest.metrics.insert(format!("{label}_avg"), roc.avg);
        manifest.metrics.insert(format!("{label}_wavg"), roc.weighted_avg);
    }
    let table_cols: Vec<(&str, Vec<Option<f64>>)> =
        columns.iter().map(|(m, r)| (method_of(*m).0, r.aucs())).collect();
    let counts = file.class_counts(None).per_class;
    let summary = summary_table(&class_names, &table_cols, &counts)?;
    let path = out.join("summary.tsv");
    write(&path, &summary)?;
    manifest.artifacts.push(path);
    print!("{summary}");
    manifest.finish(out)
}

/// Returns the generated report text and the manifest.
pub fn cmd_generate(cfg: &RunConfig, args: &GenerateArgs, out: &Path) -> Result<(String, RunManifest)> {
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.model.config().mode != Mode::IGR {
        return Err(Error::Config(format!(
            "generate needs an igr checkpoint, {} holds mode {}",
            args.checkpoint.display(),
            ck.model.config().mode.as_str()
        )));
    }
    let record = match (&args.image, &args.data) {
        (Some(path), _) => DatasetFile::load(path)?.records.into_iter().next(),
        (None, Some(dir)) => load_split(dir, &args.split)?.records.into_iter().nth(args.index),
        (None, None) => return Err(Error::Config("generate needs --image or --data".into())),
    }
    .ok_or_else(|| Error::invalid("no record at the requested position"))?;

    let pred = ck.model.predict(Some(&record.image), None)?;
    let generated = pred.generated.as_ref().expect("igr prediction carries a report");
    let text = ck.vocab.decode(&generated.tokens).join(" ");
    create_dir(out)?;
    let mut manifest = RunManifest::new("generate", cfg, cfg.train.seed);
    manifest.mode = Some(Mode::IGR);
    manifest.checkpoint = Some(args.checkpoint.join(CHECKPOINT_FILE));

    let report_path = out.join("report.txt");
    write(&report_path, &format!("{text}\n"))?;
    manifest.artifacts.push(report_path);
    if let Some(trace) = &pred.trace {
        let path = out.join("trace.txt");
        trace.save(&path, Some(&ck.vocab))?;
        manifest.artifacts.push(path);
    }
    let mut probs = String::from("class\tprobability\n");
    for (name, p) in ck.config.data.class_names().iter().zip(&pred.probs) {
        probs.push_str(&format!("{name}\t{p:.6}\n"));
    }
    let probs_path = out.join("classes.tsv");
    write(&probs_path, &probs)?;
    manifest.artifacts.push(probs_path);
    let manifest = manifest.finish(out)?;
    Ok((text, manifest))
}

/// Gradient check of the full objective on the tiny configuration.
pub fn cmd_gradcheck(mode: Mode, seed: u64, fault: Option<(OpKind, f64)>) -> Result<Vec<GroupError>> {
    let cfg = ModelConfig {
        mode,
        ..ModelConfig::tiny()
    };
    experiment::gradcheck_groups(&cfg, seed, fault)
}

pub fn gradcheck_table(rows: &[GroupError]) -> String {
    let mut s = String::from("group\tmax_rel_err\tmax_abs_err\tstatus\n");
    for r in rows {
        let status = if r.max_rel <= GRADCHECK_TOL { "PASS" } else { "FAIL" };
        s.push_str(&format!("{}\t{:.3e}\t{:.3e}\t{status}\n", r.group, r.max_rel, r.max_abs));
    }
    s
}
