//! Command-line front end: `synth`, `train`, `analyze` and `network`.
//!
//! Settings resolve as command-line flag, then `--config` TOML file, then the
//! built-in default. Every value is validated before any work starts.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{
    assessment_table, write_table_csv, write_timeseries_csv, SplitsFile, DEFAULT_FRACTION,
};
use crate::checkpoint::Checkpoint;
use crate::corpus::{load_corpus, Corpus};
use crate::multitask::{Architecture, MtpuTrainConfig, Schedule};
use crate::net::{Loss, NetConfig, OptimConfig, OptimizerKind};
use crate::pipeline::{checkpoint_vocabulary, score_unlabeled, train, Mode, TrainOptions};
use crate::purisk::{PuConfig, TrainConfig};
use crate::synth::{generate, SynthConfig};
use crate::textmine::{
    build_network, EdgeRule, ExportFormat, Group, GroupLabel, Horizon, DEFAULT_TOP_EDGES,
    DEFAULT_TOP_WORDS,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mtpu",
    version,
    about = "Split future-outlook survey answers into near and distant horizons with multi-task PU learning"
)]
pub struct Cli {
    /// TOML file with default values for any flag (flag names with `_`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with hidden near/distant labels.
    Synth(SynthArgs),
    /// Train a multi-task model or one of the two baselines.
    Train(TrainArgs),
    /// Score unlabeled answers, split them and write the assessment tables.
    Analyze(AnalyzeArgs),
    /// Build the co-occurrence network of one period/horizon group.
    Network(NetworkArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Hidden-label JSONL to write.
    #[arg(long)]
    pub truth: PathBuf,
    /// Number of monthly periods [default: 6].
    #[arg(long)]
    pub periods: Option<usize>,
    /// Current-condition answers per period [default: 300].
    #[arg(long)]
    pub n_pos: Option<usize>,
    /// Future-condition answers per period [default: 300].
    #[arg(long)]
    pub n_unl: Option<usize>,
    /// Vocabulary size [default: 2000].
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// True near-future fraction of the future answers, one value or one per
    /// period, comma separated [default: 0.2].
    #[arg(long, value_delimiter = ',')]
    pub prior: Option<Vec<f64>>,
    /// Uniform background weight shared by both topics, 0 = disjoint
    /// [default: 0.5].
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Mean tokens per answer [default: 12].
    #[arg(long)]
    pub doc_len: Option<f64>,
    /// First month, YYYY-MM [default: 2016-01].
    #[arg(long)]
    pub start: Option<String>,
    /// Seed for all randomness [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// mtpu (shared trunk, one head per month), pu1 (one pooled network) or
    /// pu2 (one network per month) [default: mtpu].
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Class prior p(y=+1) of the future answers, one value or one per period,
    /// comma separated [default: 0.2, the assumed share of near-future answers].
    #[arg(long, value_delimiter = ',')]
    pub prior: Option<Vec<f64>>,
    /// Passes over the unlabeled data [default: 20; not given by the method,
    /// chosen for convergence at survey scale].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate [default: 0.001, the usual Adam step].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Positive samples per minibatch [default: 64].
    #[arg(long)]
    pub batch_pos: Option<usize>,
    /// Unlabeled samples per minibatch [default: 256].
    #[arg(long)]
    pub batch_unl: Option<usize>,
    /// L2 regularization added to every gradient as lambda * param
    /// [default: 0.0001].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Seed for initialization and minibatch order [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// adam or sgd [default: adam].
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Width of every hidden layer [default: 500, as in the original
    /// three-layer trunk and two-layer heads].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Minimum corpus count for a token to enter the vocabulary [default: 1].
    #[arg(long)]
    pub min_count: Option<usize>,
    /// round-robin (one step per period in turn) or joint (summed per-period
    /// risks) [default: round-robin].
    #[arg(long)]
    pub schedule: Option<String>,
    /// Clamp for reported probabilities, in (0, 0.5) [default: 0.00001].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// logistic or sigmoid surrogate loss [default: logistic].
    #[arg(long)]
    pub loss: Option<String>,
    /// Use the plain unbiased risk instead of the non-negative one.
    #[arg(long)]
    pub unbiased: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Corpus JSONL the models were trained on.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Multi-task checkpoint.
    #[arg(long)]
    pub mtpu: PathBuf,
    /// Pooled baseline checkpoint.
    #[arg(long)]
    pub pu1: Option<PathBuf>,
    /// Per-period baseline checkpoint.
    #[arg(long)]
    pub pu2: Option<PathBuf>,
    /// Share of each period cut from either end of the score order
    /// [default: 0.2].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Directory for table.csv, timeseries.csv and splits.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    /// splits.json written by `analyze`.
    #[arg(long)]
    pub splits: PathBuf,
    /// Period label (YYYY-MM) or 1-based index.
    #[arg(long)]
    pub period: String,
    /// near or distant.
    #[arg(long)]
    pub horizon: String,
    /// Number of top tf-idf words [default: 50].
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep every edge with Jaccard at least this value.
    #[arg(long, conflicts_with = "top_edges")]
    pub threshold: Option<f64>,
    /// Keep the strongest N edges [default: 60, a readability choice].
    #[arg(long)]
    pub top_edges: Option<usize>,
    /// Directory for network_<period>_<horizon>.{dot,json}.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Priors {
    One(f64),
    Many(Vec<f64>),
}

impl Priors {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Priors::One(p) => vec![p],
            Priors::Many(v) => v,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    prior: Option<Priors>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_pos: Option<usize>,
    batch_unl: Option<usize>,
    weight_decay: Option<f64>,
    seed: Option<u64>,
    optimizer: Option<String>,
    hidden: Option<usize>,
    min_count: Option<usize>,
    schedule: Option<String>,
    epsilon: Option<f64>,
    loss: Option<String>,
    unbiased: Option<bool>,
    mode: Option<String>,
    fraction: Option<f64>,
    k: Option<usize>,
    threshold: Option<f64>,
    top_edges: Option<usize>,
    periods: Option<usize>,
    n_pos: Option<usize>,
    n_unl: Option<usize>,
    vocab_size: Option<usize>,
    overlap: Option<f64>,
    doc_len: Option<f64>,
    start: Option<String>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))
        }
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(v: Option<String>) -> Result<Option<T>> {
    v.map(|s| s.parse()).transpose()
}

fn parse_month(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::config(format!("start month {s:?} is not YYYY-MM"));
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    let y = y.parse().map_err(|_| bad())?;
    let m = m.parse().map_err(|_| bad())?;
    Ok((y, m))
}

fn synth_config(a: &SynthArgs, f: &FileConfig) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    let start = match a.start.clone().or_else(|| f.start.clone()) {
        Some(s) => parse_month(&s)?,
        None => d.start,
    };
    let cfg = SynthConfig {
        periods: a.periods.or(f.periods).unwrap_or(d.periods),
        n_pos: a.n_pos.or(f.n_pos).unwrap_or(d.n_pos),
        n_unl: a.n_unl.or(f.n_unl).unwrap_or(d.n_unl),
        vocab_size: a.vocab_size.or(f.vocab_size).unwrap_or(d.vocab_size),
        priors: a
            .prior
            .clone()
            .or_else(|| f.prior.clone().map(Priors::into_vec))
            .unwrap_or(d.priors.clone()),
        overlap: a.overlap.or(f.overlap).unwrap_or(d.overlap),
        doc_len: a.doc_len.or(f.doc_len).unwrap_or(d.doc_len),
        start,
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves training settings; `mode` comes from the flag or the file.
pub fn train_options(mode: Option<String>, h: &HyperArgs, config: Option<&Path>) -> Result<TrainOptions> {
    let f = read_config(config)?;
    train_options_from(mode, h, &f)
}

fn train_options_from(mode: Option<String>, h: &HyperArgs, f: &FileConfig) -> Result<TrainOptions> {
    let mode: Mode = parse(mode.or(f.mode.clone()))?.unwrap_or_default();
    let seed = h.seed.or(f.seed).unwrap_or(0);
    let default_optim = OptimConfig::default();
    let optim = OptimConfig {
        kind: parse::<OptimizerKind>(h.optimizer.clone().or(f.optimizer.clone()))?.unwrap_or_default(),
        lr: h.lr.or(f.lr).unwrap_or(default_optim.lr),
        weight_decay: h.weight_decay.or(f.weight_decay).unwrap_or(default_optim.weight_decay),
        ..default_optim
    };
    let default_train = TrainConfig::default();
    let train = TrainConfig {
        epochs: h.epochs.or(f.epochs).unwrap_or(default_train.epochs),
        batch_pos: h.batch_pos.or(f.batch_pos).unwrap_or(default_train.batch_pos),
        batch_unl: h.batch_unl.or(f.batch_unl).unwrap_or(default_train.batch_unl),
        optim,
        seed,
    };
    let loss: Loss = parse(h.loss.clone().or(f.loss.clone()))?.unwrap_or(Loss::Logistic);
    let nonneg = !(h.unbiased || f.unbiased.unwrap_or(false));
    let priors = h
        .prior
        .clone()
        .or_else(|| f.prior.clone().map(Priors::into_vec))
        .unwrap_or_else(|| vec![PuConfig::default().prior]);
    if priors.is_empty() {
        return Err(Error::config("--prior needs at least one value"));
    }
    let pu = priors
        .into_iter()
        .map(|prior| PuConfig { prior, loss, nonneg })
        .collect();
    let arch = match h.hidden.or(f.hidden) {
        Some(w) => Architecture::uniform(w),
        None => Architecture::default(),
    };
    let opts = TrainOptions {
        mode,
        arch,
        net: NetConfig {
            seed,
            epsilon: h.epsilon.or(f.epsilon).unwrap_or(NetConfig::default().epsilon),
            ..Default::default()
        },
        mtpu: MtpuTrainConfig {
            pu,
            schedule: parse::<Schedule>(h.schedule.clone().or(f.schedule.clone()))?.unwrap_or_default(),
            train,
            freeze_trunk: false,
            periods: None,
        },
        min_count: h.min_count.or(f.min_count).unwrap_or(1),
    };
    opts.validate()?;
    Ok(opts)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_synth(a: &SynthArgs, f: &FileConfig) -> Result<()> {
    let cfg = synth_config(a, f)?;
    let (corpus, truth) = generate(&cfg)?;
    let mut out = create(&a.out)?;
    corpus.write_jsonl(&mut out)?;
    out.flush()?;
    let mut out = create(&a.truth)?;
    truth.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, f: &FileConfig) -> Result<()> {
    let opts = train_options_from(a.mode.clone(), &a.hyper, f)?;
    let corpus = load_corpus(&a.corpus)?;
    let trained = train(&corpus, &opts)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    trained.checkpoint.save(&a.out)
}

fn load_scores(corpus: &Corpus, path: &Path) -> Result<Vec<Vec<(String, f64)>>> {
    let ckpt = Checkpoint::load(path)?;
    let vocab = checkpoint_vocabulary(corpus, &ckpt)?;
    score_unlabeled(corpus, &vocab, &ckpt.model)
}

/// Writes `table.csv`, `timeseries.csv` and `splits.json` into `out_dir`.
pub fn analyze(
    corpus: &Corpus,
    mtpu: &Path,
    pu1: Option<&Path>,
    pu2: Option<&Path>,
    fraction: f64,
    out_dir: &Path,
) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::config(format!("fraction {fraction} must lie in (0, 0.5]")));
    }
    let mtpu_scores = load_scores(corpus, mtpu)?;
    let pu1_scores = pu1.map(|p| load_scores(corpus, p)).transpose()?;
    let pu2_scores = pu2.map(|p| load_scores(corpus, p)).transpose()?;
    let table = assessment_table(
        corpus,
        &mtpu_scores,
        pu1_scores.as_deref(),
        pu2_scores.as_deref(),
        fraction,
    )?;
    fs::create_dir_all(out_dir)?;
    let mut out = create(&out_dir.join("table.csv"))?;
    write_table_csv(&table.rows, &mut out)?;
    out.flush()?;
    let mut out = create(&out_dir.join("timeseries.csv"))?;
    write_timeseries_csv(&table.rows, &mut out)?;
    out.flush()?;
    let splits = SplitsFile::from_table(corpus, &table, fraction)?;
    let mut json = serde_json::to_string_pretty(&splits)?;
    json.push('\n');
    fs::write(out_dir.join("splits.json"), json)?;
    for row in &table.rows {
        if let Some(e) = &row.error {
            eprintln!("warning: {}: {e}", row.period);
        }
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs, f: &FileConfig) -> Result<()> {
    let fraction = a.fraction.or(f.fraction).unwrap_or(DEFAULT_FRACTION);
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::config(format!("fraction {fraction} must lie in (0, 0.5]")));
    }
    let corpus = load_corpus(&a.corpus)?;
    analyze(&corpus, &a.mtpu, a.pu1.as_deref(), a.pu2.as_deref(), fraction, &a.out_dir)
}

/// Groups of every period and horizon in a splits file.
pub fn split_groups(corpus: &Corpus, splits: &SplitsFile) -> Result<Vec<Group>> {
    let mut groups = Vec::new();
    for s in &splits.periods {
        let period = corpus.resolve_period(&s.period)?;
        for (horizon, ids) in [(Horizon::Near, &s.near), (Horizon::Distant, &s.distant)] {
            if !ids.is_empty() {
                groups.push(Group::from_corpus(corpus, GroupLabel { period, horizon }, ids)?);
            }
        }
    }
    Ok(groups)
}

fn cmd_network(a: &NetworkArgs, f: &FileConfig) -> Result<()> {
    let k = a.k.or(f.k).unwrap_or(DEFAULT_TOP_WORDS);
    let horizon: Horizon = a.horizon.parse()?;
    let rule = match (a.threshold, a.top_edges) {
        (Some(t), _) => EdgeRule::MinJaccard(t),
        (None, Some(n)) => EdgeRule::TopEdges(n),
        (None, None) => match (f.threshold, f.top_edges) {
            (Some(_), Some(_)) => {
                return Err(Error::config("config sets both threshold and top_edges"))
            }
            (Some(t), None) => EdgeRule::MinJaccard(t),
            (None, n) => EdgeRule::TopEdges(n.unwrap_or(DEFAULT_TOP_EDGES)),
        },
    };
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if let EdgeRule::MinJaccard(t) = rule {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::config(format!("threshold {t} outside [0, 1]")));
        }
    }
    let corpus = load_corpus(&a.corpus)?;
    let splits: SplitsFile = serde_json::from_str(&fs::read_to_string(&a.splits)?)?;
    let period = corpus.resolve_period(&a.period)?;
    let label = GroupLabel { period, horizon };
    let groups = split_groups(&corpus, &splits)?;
    let group = groups.iter().find(|g| g.label == label).ok_or_else(|| {
        Error::period(period, format!("no {} documents in the splits file", a.horizon))
    })?;
    let network = build_network(group, &groups, k, rule)?;
    fs::create_dir_all(&a.out_dir)?;
    let stem = format!("network_{}_{}", corpus.period_label(period)?, a.horizon);
    for (format, ext) in [(ExportFormat::Dot, "dot"), (ExportFormat::Json, "json")] {
        fs::write(a.out_dir.join(format!("{stem}.{ext}")), network.export(format)?)?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let f = read_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &f),
        Command::Train(a) => cmd_train(a, &f),
        Command::Analyze(a) => cmd_analyze(a, &f),
        Command::Network(a) => cmd_network(a, &f),
    }
}

/// Parses `args` and runs; returns the process exit code
/// (0 success, 1 validation failure, 2 runtime failure).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
