//! The `rmn` command line: prepare, train, eval, inspect, compare.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 training divergence. `RMN_SEED` overrides the configured seed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::corpus::{prepare_dialog, prepare_story};
use crate::data::{make_batch, Corpus, DataError, DatasetKind};
use crate::feature_map::{step_cost_profile, write_cost_csv};
use crate::model::{Architecture, ModelConfig};
use crate::report::{cost_ratios, cost_table, dialog_report, error_table, AttentionReport, RunManifest};
use crate::train::checkpoint::{load_checkpoint, save_checkpoint};
use crate::train::config::schema_text;
use crate::train::{evaluate, write_metrics, MetricRow, TrainConfig, TrainError, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rmn", version, about = "Relation Memory Network for bAbI story and dialog tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw bAbI files into an RMND corpus.
    Prepare {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_parser = ["story", "dialog"])]
        dataset: String,
        /// Task id, comma list, or `all` (story only).
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
        /// Double `<silence>` before restaurant recommendations (dialog).
        #[arg(long)]
        double_silence: bool,
    },
    /// Train a model; writes model.rmn1, metrics.csv and manifest.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base settings: story, dialog1 .. dialog5. Defaults from the corpus.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the epoch limit.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint and print the error table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Attention trace of one episode as CSV and an HTML heatmap.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        episode_id: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Per-step cost of the pairwise baseline and the hop model over memory sizes.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "rn,rmn")]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "20,130")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the training config schema.
    Schema,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Config(_) => EXIT_USAGE,
            TrainError::Divergence(_) => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        TrainError::from(e).into()
    }
}

impl From<crate::nn::ModelError> for CliError {
    fn from(e: crate::nn::ModelError) -> Self {
        TrainError::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

fn data(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: msg.into(),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Prepare {
            data_dir,
            dataset,
            task,
            out,
            double_silence,
        } => cmd_prepare(&data_dir, &dataset, &task, &out, double_silence),
        Command::Train {
            config,
            preset,
            corpus,
            out,
            resume,
            epochs,
        } => cmd_train(config.as_deref(), preset.as_deref(), &corpus, &out, resume.as_deref(), epochs),
        Command::Eval {
            checkpoint,
            corpus,
            split,
            metrics,
        } => cmd_eval(&checkpoint, &corpus, &split, metrics.as_deref()),
        Command::Inspect {
            checkpoint,
            corpus,
            episode_id,
            out,
            split,
        } => cmd_inspect(&checkpoint, &corpus, episode_id, &out, &split),
        Command::Compare {
            models,
            n_list,
            batch_size,
            reps,
            out,
        } => cmd_compare(&models, &n_list, batch_size, reps, out.as_deref()),
        Command::Schema => {
            print!("{}", schema_text());
            Ok(())
        }
    }
}

pub fn parse_tasks(list: &str, dataset: DatasetKind) -> Result<Vec<u32>, CliError> {
    let max = match dataset {
        DatasetKind::Story => 20,
        DatasetKind::Dialog => 5,
    };
    if list == "all" {
        return Ok((1..=max).collect());
    }
    list.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .ok()
                .filter(|t| (1..=max).contains(t))
                .ok_or_else(|| usage(format!("task must be 1..={max}, got `{t}`")))
        })
        .collect()
}

pub fn cmd_prepare(dir: &Path, dataset: &str, task: &str, out: &Path, double_silence: bool) -> Result<(), CliError> {
    let kind = DatasetKind::parse(dataset).ok_or_else(|| usage(format!("unknown dataset `{dataset}`")))?;
    let tasks = parse_tasks(task, kind)?;
    let corpus = match kind {
        DatasetKind::Story => prepare_story(dir, &tasks)?,
        DatasetKind::Dialog => {
            let [t] = tasks[..] else {
                return Err(usage("dialog corpora hold one task"));
            };
            prepare_dialog(dir, t, double_silence)?
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    corpus.write(out)?;
    let digest = corpus.digest();
    let mut vocab = corpus.vocab.words().join("\n");
    vocab.push('\n');
    write_file(&out.with_extension("vocab.txt"), vocab)?;
    let manifest = RunManifest::new(
        "prepare",
        format!("dataset = {dataset}\ntask = {task}\ndouble_silence = {double_silence}\n"),
        vec![("corpus".into(), digest)],
        0,
    );
    write_file(&out.with_extension("manifest.json"), manifest.to_json())?;
    print!("{}", corpus.summary());
    println!("wrote {} (manifest {})", out.display(), manifest.digest());
    Ok(())
}

fn preset_config(preset: Option<&str>, corpus: &Corpus) -> Result<TrainConfig, CliError> {
    let name = match preset {
        Some(p) => p.to_string(),
        None => match (corpus.kind, corpus.tasks().as_slice()) {
            (DatasetKind::Dialog, [t]) => format!("dialog{t}"),
            _ => "story".into(),
        },
    };
    if name == "story" {
        return Ok(TrainConfig::story());
    }
    name.strip_prefix("dialog")
        .and_then(|t| t.parse().ok())
        .and_then(TrainConfig::dialog_task)
        .ok_or_else(|| usage(format!("unknown preset `{name}` (story, dialog1..dialog5)")))
}

fn print_tables(corpus: &Corpus, trainer: &mut Trainer) -> Result<(), CliError> {
    if corpus.split("test").is_none() {
        return Ok(());
    }
    let test = trainer.test(corpus, "test")?;
    match corpus.kind {
        DatasetKind::Story => print!("{}", error_table("Test error", &test)),
        DatasetKind::Dialog => {
            let oov = match corpus.split("test_oov") {
                Some(_) => Some(trainer.test(corpus, "test_oov")?),
                None => None,
            };
            print!("{}", dialog_report(&test, oov.as_ref()));
        }
    }
    Ok(())
}

pub fn cmd_train(
    config: Option<&Path>,
    preset: Option<&str>,
    corpus_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let corpus = Corpus::read(corpus_path)?;
    let mut trainer = match resume {
        Some(ck) => {
            if config.is_some() || preset.is_some() {
                return Err(usage("--resume takes its config from the checkpoint"));
            }
            let ck = load_checkpoint(ck)?;
            if ck.corpus_digest != corpus.digest() {
                return Err(data("checkpoint was trained on a different corpus"));
            }
            Trainer::from_checkpoint(ck)?
        }
        None => {
            let base = preset_config(preset, &corpus)?;
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
                    TrainConfig::parse_with_base(&text, base)?
                }
                None => base,
            };
            cfg.apply_env_seed()?;
            Trainer::new(cfg, &corpus)?
        }
    };
    if let Some(e) = epochs {
        trainer.config.epochs = e;
    }
    let mut manifest = RunManifest::new(
        "train",
        trainer.config.to_text(),
        vec![("corpus".into(), trainer.corpus_digest.clone())],
        trainer.config.seed,
    );
    eprintln!(
        "training {} parameters on {} episodes",
        trainer.model.num_parameters(),
        corpus.episodes("train").len()
    );
    trainer.train(&corpus, |r| {
        let valid = r
            .valid
            .as_ref()
            .map_or(String::new(), |t| format!("  valid err {:5.2}%", 100.0 - t.accuracy_pct()));
        eprintln!(
            "epoch {:>3}  loss {:.4}  train err {:5.2}%{valid}  {:.1}s",
            r.epoch, r.train_loss, r.train_error_pct, r.seconds
        );
    })?;
    print_tables(&corpus, &mut trainer)?;
    manifest.finished_unix = crate::report::unix_now();
    let digest = manifest.digest();
    fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    save_checkpoint(&out.join("model.rmn1"), &trainer.checkpoint())?;
    let mut csv = Vec::new();
    write_metrics(&trainer.history, Some(&digest), &mut csv)?;
    write_file(&out.join("metrics.csv"), csv)?;
    write_file(&out.join("manifest.json"), manifest.to_json())?;
    println!("wrote {} (manifest {digest})", out.display());
    Ok(())
}

fn load_pair(checkpoint: &Path, corpus: &Path) -> Result<(crate::model::Model, Corpus), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let corpus = Corpus::read(corpus)?;
    if ck.dims.vocab_size != corpus.vocab.len() || ck.dims.num_classes != corpus.answers.len() {
        return Err(data("checkpoint vocabulary or answer classes do not match the corpus"));
    }
    Ok((ck.model()?, corpus))
}

pub fn cmd_eval(checkpoint: &Path, corpus: &Path, split: &str, metrics: Option<&Path>) -> Result<(), CliError> {
    let (model, corpus) = load_pair(checkpoint, corpus)?;
    let eps = corpus
        .split(split)
        .ok_or_else(|| data(format!("corpus has no `{split}` split")))?;
    let table = evaluate(&model, &eps.episodes, 32)?;
    let mut rows = MetricRow::from_table(0, split, &table);
    match corpus.kind {
        DatasetKind::Story => print!("{}", error_table(&format!("Error on {split}"), &table)),
        DatasetKind::Dialog => {
            let oov = match corpus.split("test_oov").filter(|_| split == "test") {
                Some(o) => Some(evaluate(&model, &o.episodes, 32)?),
                None => None,
            };
            if let Some(o) = &oov {
                rows.extend(MetricRow::from_table(0, "test_oov", o));
            }
            print!("{}", dialog_report(&table, oov.as_ref()));
        }
    }
    if let Some(p) = metrics {
        let mut csv = Vec::new();
        write_metrics(&rows, None, &mut csv)?;
        write_file(p, csv)?;
    }
    Ok(())
}

/// Attention report for one episode of `split`.
pub fn inspect_episode(model: &crate::model::Model, corpus: &Corpus, split: &str, id: usize) -> Result<AttentionReport, CliError> {
    let eps = corpus.episodes(split);
    let ep = eps
        .get(id)
        .ok_or_else(|| data(format!("episode {id} out of range ({} episodes in `{split}`)", eps.len())))?;
    let batch = make_batch(&[ep], corpus.answers.len(), model.dims().match_fields);
    let (dists, traces, _) = model.predict(&batch)?;
    let trace = &traces[0];
    let words = |ids: &[u32]| corpus.vocab.decode(ids).join(" ");
    Ok(AttentionReport {
        episode: id,
        sentences: ep.sentences.iter().map(|s| words(s)).collect(),
        question: words(&ep.question),
        alphas: trace.hops.iter().map(|h| h.alpha.clone()).collect(),
        betas: trace.hops.iter().map(|h| h.beta).collect(),
        answer: corpus.answers[dists[0].argmax()].clone(),
        gold: corpus.answers[ep.answer as usize].clone(),
    })
}

pub fn cmd_inspect(checkpoint: &Path, corpus: &Path, id: usize, out: &Path, split: &str) -> Result<(), CliError> {
    let (model, corpus) = load_pair(checkpoint, corpus)?;
    if model.config().architecture == Architecture::Rn {
        return Err(usage("the pairwise baseline has no attention to inspect"));
    }
    let report = inspect_episode(&model, &corpus, split, id)?;
    write_file(&out.join("attention.csv"), report.to_csv())?;
    write_file(&out.join("attention.html"), report.to_html())?;
    print!("{}", report.to_text());
    Ok(())
}

/// Default layouts used by `compare`: the hop model with the joint story
/// setup, and the pairwise baseline with a four-layer 256-unit `g`.
pub fn compare_config(model: &str) -> Option<ModelConfig> {
    let rmn = ModelConfig::default();
    match model {
        "rmn" => Some(rmn),
        "rn" => Some(ModelConfig {
            architecture: Architecture::Rn,
            g_layers: vec![256, 256, 256, 256],
            f_layers: vec![256, 512, 159],
            ..rmn
        }),
        _ => None,
    }
}

pub fn cmd_compare(models: &[String], ns: &[usize], batch_size: usize, reps: usize, out: Option<&Path>) -> Result<(), CliError> {
    let configs = models
        .iter()
        .map(|m| {
            compare_config(m)
                .map(|c| (m.clone(), c))
                .ok_or_else(|| usage(format!("unknown model `{m}` (rn, rmn)")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(usage("--n-list needs positive sizes"));
    }
    let rows = step_cost_profile(&configs, ns, batch_size, reps)?;
    print!("{}", cost_table(&rows));
    for (m, wall, evals) in cost_ratios(&rows) {
        println!("{m}: wall-time ratio {wall:.2}x, evaluation ratio {evals:.2}x");
    }
    if let Some(p) = out {
        let mut buf = Vec::new();
        write_cost_csv(&rows, &mut buf).map_err(|e| data(e.to_string()))?;
        write_file(p, buf)?;
    }
    Ok(())
}
