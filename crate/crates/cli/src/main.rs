//! `subevent`: generate synthetic streams, train and evaluate sub-event
//! labelers, and verify gradients.
//!
//! Reports go to stdout as JSON, progress to stderr. Exit codes: 0 success,
//! 1 verification or training failure, 2 usage or configuration error.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use subevent::autodiff::{Fault, GradCheckOptions};
use subevent::config::RunConfig;
use subevent::evalkit::{
    bio_to_spans, burst_baseline, eval_bin_level, eval_binary_event, eval_relaxed, positive_runs,
    Aggregation, EvalReport, Protocol, SubEventSpan,
};
use subevent::ingest::{read_dataset, to_examples, RawStream, StreamExample, Vocab};
use subevent::labeler::{
    gradcheck_configs, gradcheck_model, train_with_progress, write_learning_curve, GradCheckCase,
    Head, LabelScheme, Model, OUTSIDE,
};
use subevent::synth::generate;
use subevent::Error;

const CURVE_FILE: &str = "learning_curve.csv";

#[derive(Parser)]
#[command(
    name = "subevent",
    version,
    about = "Sub-event detection as BIO labeling over time bins"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test dataset.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a labeler and write its checkpoint and learning curve.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training streams (overrides `train_dir`).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Development streams for model selection (overrides `dev_dir`).
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Fresh output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Not supported: training is single-shot.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint, or the burst baseline, on a dataset directory.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding `model.ckpt` and `model.json`.
        #[arg(long, required_unless_present = "baseline")]
        model: Option<PathBuf>,
        /// Dataset directory (overrides `test_dir`).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, conflicts_with = "model")]
        baseline: Option<Baseline>,
        #[arg(long, value_enum, default_value = "bin-level")]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "micro")]
        agg: AggArg,
        /// Every applicable protocol and aggregation, as a JSON array.
        #[arg(long)]
        all: bool,
    },
    /// Label every stream of a dataset directory.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding `model.ckpt` and `model.json`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory (overrides `test_dir`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of every encoder and head configuration.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Corrupt the tanh backward pass; the check must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON run config; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Model seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Generator seed (overrides `data_seed`).
    #[arg(long)]
    data_seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.model.seed = seed;
        }
        if let Some(seed) = self.data_seed {
            cfg.synth.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Burst,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    BinLevel,
    Relaxed,
    BinaryEvent,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::BinLevel => Protocol::BinLevel,
            ProtocolArg::Relaxed => Protocol::Relaxed,
            ProtocolArg::BinaryEvent => Protocol::BinaryEvent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Micro,
    Macro,
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Micro => Aggregation::Micro,
            AggArg::Macro => Aggregation::Macro,
        }
    }
}

/// A failed check, as opposed to bad input.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Annotation(_)
            | Error::Parse { .. }
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Json(_),
        )
        | None => 2,
        Some(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate { config, out } => cmd_generate(&config, out),
        Command::Train {
            config,
            train,
            dev,
            out,
            resume,
        } => cmd_train(&config, train, dev, out, resume),
        Command::Eval {
            config,
            model,
            data,
            baseline,
            protocol,
            agg,
            all,
        } => {
            let cfg = config.resolve()?;
            let data = pick(data, &cfg.data.test_dir, "--data or test_dir")?;
            let reports = match baseline {
                Some(Baseline::Burst) => eval_burst(&cfg, &data, protocol.into(), agg.into(), all)?,
                None => eval_model(
                    &model.expect("clap requires --model"),
                    &data,
                    protocol.into(),
                    agg.into(),
                    all,
                )?,
            };
            if all {
                emit(&reports)
            } else {
                emit(&reports[0])
            }
        }
        Command::Predict {
            config,
            model,
            data,
        } => {
            let cfg = config.resolve()?;
            let data = pick(data, &cfg.data.test_dir, "--data or test_dir")?;
            cmd_predict(&model, &data)
        }
        Command::Gradcheck {
            config,
            tolerance,
            inject_fault,
        } => cmd_gradcheck(&config, tolerance, inject_fault),
    }
}

fn pick(
    flag: Option<PathBuf>,
    from_config: &Option<PathBuf>,
    what: &str,
) -> anyhow::Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| anyhow!(Error::Config(format!("missing {what}"))))
}

/// Pretty JSON on stdout. A closed pipe (`| head`) is not an error.
fn emit<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn read_dir_streams(dir: &Path) -> anyhow::Result<Vec<RawStream>> {
    read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn cmd_generate(args: &ConfigArgs, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = args.resolve()?;
    let out = pick(out, &cfg.data.out_dir, "--out or out_dir")?;
    cfg.data.out_dir = Some(out.clone());
    let dataset = generate(&cfg.synth)?;
    dataset
        .write(&out)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    let resolved = cfg.write_resolved(&out)?;
    let mut splits = serde_json::Map::new();
    for (name, streams) in dataset.splits() {
        eprintln!("{name}: {} streams", streams.len());
        splits.insert(
            name.to_string(),
            json!({
                "dir": out.join(name),
                "streams": streams.len(),
                "posts": streams.iter().map(|s| s.tweets.len()).sum::<usize>(),
            }),
        );
    }
    emit(&json!({ "out_dir": out, "splits": splits, "resolved_config": resolved }))
}

/// Checks every annotated type against the scheme before tokenizing, so an
/// unknown label is reported by name together with its file.
fn check_types(streams: &[RawStream], scheme: &LabelScheme, split: &str) -> anyhow::Result<()> {
    for s in streams {
        for span in &s.annotation.spans {
            if scheme.type_id(&span.kind).is_none() {
                bail!(Error::Config(format!(
                    "{split} stream `{}` uses label `{}`, which is not in the training label scheme {:?}",
                    s.annotation.stream_id,
                    span.kind,
                    scheme.types()
                )));
            }
        }
    }
    Ok(())
}

fn cmd_train(
    args: &ConfigArgs,
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> anyhow::Result<()> {
    if let Some(path) = resume {
        bail!(Error::Config(format!(
            "cannot resume from {}: training is single-shot, start a fresh run in a new directory",
            path.display()
        )));
    }
    let mut cfg = args.resolve()?;
    let train_dir = pick(train, &cfg.data.train_dir, "--train or train_dir")?;
    let dev_dir = dev.or_else(|| cfg.data.dev_dir.clone());
    let out = pick(out, &cfg.data.out_dir, "--out or out_dir")?;
    cfg.data.train_dir = Some(train_dir.clone());
    cfg.data.dev_dir = dev_dir.clone();
    cfg.data.out_dir = Some(out.clone());
    let checkpoint = out.join(subevent::labeler::CHECKPOINT_FILE);
    if checkpoint.exists() {
        bail!(Error::Config(format!(
            "{} already exists; training is single-shot and never resumes or overwrites",
            checkpoint.display()
        )));
    }

    let scheme = cfg.scheme()?;
    let train_raw = read_dir_streams(&train_dir)?;
    check_types(&train_raw, &scheme, "train")?;
    let dev_raw = match &dev_dir {
        Some(d) => read_dir_streams(d)?,
        None => Vec::new(),
    };
    check_types(&dev_raw, &scheme, "dev")?;
    let docs: Vec<Vec<String>> = train_raw.iter().flat_map(RawStream::token_docs).collect();
    let vocab = Vocab::build(docs.iter().map(Vec::as_slice), cfg.data.min_count);
    let (train_ex, discarded_train) = to_examples(&train_raw, &vocab, &scheme)?;
    let (dev_ex, discarded_dev) = to_examples(&dev_raw, &vocab, &scheme)?;
    eprintln!(
        "train: {} streams, dev: {} streams, vocab {}; discarded {} posts outside stream windows",
        train_ex.len(),
        dev_ex.len(),
        vocab.len(),
        discarded_train + discarded_dev
    );

    let started = Instant::now();
    let outcome = train_with_progress(cfg.model.clone(), scheme, vocab, &train_ex, &dev_ex, |r| {
        eprintln!(
            "epoch {:>3}  train_loss {:.6}  dev_f1 {:.4}",
            r.epoch, r.train_loss, r.dev_f1
        );
    })?;
    outcome.model.save(&out)?;
    let curve_path = out.join(CURVE_FILE);
    write_learning_curve(BufWriter::new(File::create(&curve_path)?), &outcome.curve)?;
    let resolved = cfg.write_resolved(&out)?;
    emit(&json!({
        "checkpoint": checkpoint,
        "learning_curve": curve_path,
        "resolved_config": resolved,
        "epochs_run": outcome.curve.len(),
        "best_epoch": outcome.best_epoch,
        "best_dev_f1": outcome.best_dev_f1,
        "seconds": started.elapsed().as_secs_f64(),
    }))
}

const AGGREGATIONS: [Aggregation; 2] = [Aggregation::Micro, Aggregation::Macro];

fn combos(
    protocols: &[Protocol],
    protocol: Protocol,
    agg: Aggregation,
    all: bool,
) -> anyhow::Result<Vec<(Protocol, Aggregation)>> {
    if all {
        return Ok(protocols
            .iter()
            .flat_map(|&p| AGGREGATIONS.map(|a| (p, a)))
            .collect());
    }
    if !protocols.contains(&protocol) {
        bail!(Error::Config(format!(
            "protocol {} needs typed labels; this predictor only flags events (use binary-event)",
            serde_json::to_string(&protocol)?
        )));
    }
    Ok(vec![(protocol, agg)])
}

fn binary_reports(
    gold: &[Vec<SubEventSpan>],
    flags: &[Vec<bool>],
    protocol: Protocol,
    agg: Aggregation,
    all: bool,
) -> anyhow::Result<Vec<EvalReport>> {
    combos(&[Protocol::BinaryEvent], protocol, agg, all)?
        .into_iter()
        .map(|(_, a)| Ok(eval_binary_event(gold, flags, a)?))
        .collect()
}

fn eval_burst(
    cfg: &RunConfig,
    data: &Path,
    protocol: Protocol,
    agg: Aggregation,
    all: bool,
) -> anyhow::Result<Vec<EvalReport>> {
    let raw = read_dir_streams(data)?;
    // the detector never sees labels, so the data's own types form the scheme
    let types: BTreeSet<&str> = raw
        .iter()
        .flat_map(|s| s.annotation.spans.iter().map(|sp| sp.kind.as_str()))
        .collect();
    let scheme = if types.is_empty() {
        cfg.scheme()?
    } else {
        LabelScheme::new(types)?
    };
    let (examples, _) = to_examples(&raw, &Vocab::from_tokens(std::iter::empty()), &scheme)?;
    let flags = examples
        .iter()
        .map(|e| burst_baseline(&e.counts(), cfg.data.burst()))
        .collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<_> = examples.iter().map(|e| e.gold_spans.clone()).collect();
    binary_reports(&gold, &flags, protocol, agg, all)
}

fn load_model(dir: &Path) -> anyhow::Result<Model> {
    Model::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn model_examples(model: &Model, data: &Path) -> anyhow::Result<Vec<StreamExample>> {
    let raw = read_dir_streams(data)?;
    check_types(&raw, &model.scheme, "evaluation")?;
    let (examples, discarded) = to_examples(&raw, &model.vocab, &model.scheme)?;
    eprintln!(
        "{} streams, discarded {discarded} posts outside stream windows",
        examples.len()
    );
    Ok(examples)
}

fn eval_model(
    dir: &Path,
    data: &Path,
    protocol: Protocol,
    agg: Aggregation,
    all: bool,
) -> anyhow::Result<Vec<EvalReport>> {
    let model = load_model(dir)?;
    let examples = model_examples(&model, data)?;
    let gold_spans: Vec<_> = examples.iter().map(|e| e.gold_spans.clone()).collect();
    if model.config.head == Head::Binary {
        let flags = examples
            .iter()
            .map(|e| model.predict_binary(e))
            .collect::<Result<Vec<_>, _>>()?;
        return binary_reports(&gold_spans, &flags, protocol, agg, all);
    }
    let labels = examples
        .iter()
        .map(|e| model.predict_bio(e))
        .collect::<Result<Vec<_>, _>>()?;
    let gold_labels: Vec<_> = examples.iter().map(|e| e.gold_labels.clone()).collect();
    let flags: Vec<Vec<bool>> = labels
        .iter()
        .map(|l| l.iter().map(|&x| x != OUTSIDE).collect())
        .collect();
    let protocols = [Protocol::BinLevel, Protocol::Relaxed, Protocol::BinaryEvent];
    combos(&protocols, protocol, agg, all)?
        .into_iter()
        .map(|(p, a)| {
            Ok(match p {
                Protocol::BinLevel => eval_bin_level(&gold_labels, &labels, a)?,
                Protocol::Relaxed => eval_relaxed(&gold_spans, &labels, &model.scheme, a)?,
                Protocol::BinaryEvent => eval_binary_event(&gold_spans, &flags, a)?,
            })
        })
        .collect()
}

fn cmd_predict(dir: &Path, data: &Path) -> anyhow::Result<()> {
    let model = load_model(dir)?;
    let examples = model_examples(&model, data)?;
    let mut out = Vec::with_capacity(examples.len());
    for e in &examples {
        let entry: Value = match model.config.head {
            Head::Bio => {
                let labels = model.predict_bio(e)?;
                json!({
                    "stream_id": e.stream_id,
                    "labels": labels.iter().map(|&l| model.scheme.label_name(l)).collect::<Vec<_>>(),
                    "spans": bio_to_spans(&labels, &model.scheme),
                })
            }
            Head::Binary => {
                let flags = model.predict_binary(e)?;
                let events: Vec<Value> = positive_runs(&flags)
                    .into_iter()
                    .map(|(a, b)| json!({ "first_bin": a, "last_bin": b }))
                    .collect();
                json!({ "stream_id": e.stream_id, "event": flags, "events": events })
            }
        };
        out.push(entry);
    }
    emit(&out)
}

fn cmd_gradcheck(
    args: &ConfigArgs,
    tolerance: Option<f64>,
    inject_fault: bool,
) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let mut options = GradCheckOptions::default();
    if let Some(t) = tolerance {
        if t.is_nan() || t <= 0.0 {
            bail!(Error::Config(format!(
                "tolerance must be positive, got {t}"
            )));
        }
        options.tolerance = t;
    }
    if inject_fault {
        options.fault = Some(Fault::FlipTanhBackward);
    }
    let started = Instant::now();
    let mut cases: Vec<GradCheckCase> = Vec::new();
    for mut config in gradcheck_configs() {
        config.seed = cfg.model.seed;
        let case = gradcheck_model(&config, options)?;
        eprintln!(
            "{:<16} tl={:<5} chrono={:<5} head={:<6} max_rel_err {:.3e}  {}",
            config.variant.name(),
            config.tweet_lstm,
            config.chronological,
            serde_json::to_string(&config.head)?.trim_matches('"'),
            case.report.max_relative_error,
            if case.report.passed { "ok" } else { "FAIL" }
        );
        cases.push(case);
    }
    let failed = cases.iter().filter(|c| !c.report.passed).count();
    emit(&json!({
        "passed": failed == 0,
        "failed": failed,
        "total": cases.len(),
        "tolerance": options.tolerance,
        "seconds": started.elapsed().as_secs_f64(),
        "cases": cases,
    }))?;
    if failed > 0 {
        return Err(VerificationFailed(format!(
            "{failed} of {} gradient checks failed",
            cases.len()
        ))
        .into());
    }
    Ok(())
}
