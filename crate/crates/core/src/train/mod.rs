//! Optimization loop, evaluation tables, metrics and checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batches, Corpus, DataError, Episode};
use crate::model::{Model, ModelDims, StepOutput};
use crate::nn::ModelError;
use crate::tensor::TensorError;

pub mod adam;
pub mod checkpoint;
pub mod config;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{TrainConfig, Widths};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// A task is failed when its error exceeds this percentage.
pub const FAIL_THRESHOLD_PCT: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskError {
    pub task: u32,
    pub episodes: usize,
    pub errors: usize,
    pub loss_sum: f64,
}

impl TaskError {
    pub fn error_pct(&self) -> f64 {
        100.0 * self.errors as f64 / self.episodes.max(1) as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.episodes.max(1) as f64
    }
}

/// Per-task test error, sorted by task id.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ErrorTable {
    pub rows: Vec<TaskError>,
}

impl ErrorTable {
    fn row_mut(&mut self, task: u32) -> &mut TaskError {
        let i = match self.rows.binary_search_by_key(&task, |r| r.task) {
            Ok(i) => i,
            Err(i) => {
                self.rows.insert(
                    i,
                    TaskError {
                        task,
                        episodes: 0,
                        errors: 0,
                        loss_sum: 0.0,
                    },
                );
                i
            }
        };
        &mut self.rows[i]
    }

    /// Mean over tasks of the per-task error percentage.
    pub fn mean_error_pct(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(TaskError::error_pct).sum::<f64>() / self.rows.len() as f64
    }

    pub fn failed_tasks(&self) -> usize {
        self.rows.iter().filter(|r| r.error_pct() > FAIL_THRESHOLD_PCT).count()
    }

    pub fn total_episodes(&self) -> usize {
        self.rows.iter().map(|r| r.episodes).sum()
    }

    pub fn mean_loss(&self) -> f64 {
        let n = self.total_episodes().max(1) as f64;
        self.rows.iter().map(|r| r.loss_sum).sum::<f64>() / n
    }

    pub fn accuracy_pct(&self) -> f64 {
        let n = self.total_episodes().max(1) as f64;
        100.0 * (1.0 - self.rows.iter().map(|r| r.errors).sum::<usize>() as f64 / n)
    }
}

/// Eval-mode error table; the model is not modified.
pub fn evaluate(model: &Model, episodes: &[Episode], batch_size: usize) -> Result<ErrorTable> {
    let classes = model.dims().num_classes;
    let fields = model.dims().match_fields;
    let mut table = ErrorTable::default();
    for batch in batches(episodes, batch_size, None, classes, fields) {
        let (dists, _, _) = model.predict(&batch)?;
        for ((d, &gold), &task) in dists.iter().zip(&batch.answers).zip(&batch.tasks) {
            let row = table.row_mut(task);
            row.episodes += 1;
            if d.argmax() != gold {
                row.errors += 1;
            }
            row.loss_sum -= d.probs[gold].max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub error_pct: f64,
    pub loss: f64,
}

impl MetricRow {
    pub fn from_table(epoch: usize, split: &str, t: &ErrorTable) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = t
            .rows
            .iter()
            .map(|r| MetricRow {
                epoch,
                split: split.into(),
                task: r.task.to_string(),
                error_pct: r.error_pct(),
                loss: r.mean_loss(),
            })
            .collect();
        rows.push(MetricRow {
            epoch,
            split: split.into(),
            task: "all".into(),
            error_pct: 100.0 - t.accuracy_pct(),
            loss: t.mean_loss(),
        });
        rows
    }
}

/// Writes metrics CSV; `manifest` (a digest) goes in a leading `#` line.
pub fn write_metrics<W: Write>(rows: &[MetricRow], manifest: Option<&str>, mut out: W) -> Result<()> {
    let map = |e: std::io::Error| TrainError::Checkpoint(format!("metrics write: {e}"));
    if let Some(m) = manifest {
        writeln!(out, "# manifest {m}").map_err(map)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| TrainError::Checkpoint(format!("metrics write: {e}")))?;
    }
    w.flush().map_err(map)
}

pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(|e| TrainError::Checkpoint(format!("metrics read: {e}"))))
        .collect()
}

/// Optimizer-side state carried across epochs and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub best_valid: f64,
    pub bad_epochs: usize,
    pub stopped: bool,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            epoch: 0,
            rng,
            best_valid: f64::INFINITY,
            bad_epochs: 0,
            stopped: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error_pct: f64,
    pub valid: Option<ErrorTable>,
    pub seconds: f64,
}

pub fn dims_for(corpus: &Corpus, config: &TrainConfig) -> ModelDims {
    ModelDims {
        vocab_size: corpus.vocab.len(),
        num_classes: corpus.answers.len(),
        max_sentence_len: corpus.max_sentence_len(),
        max_question_len: corpus.max_question_len(),
        match_fields: if config.match_features { corpus.match_fields as usize } else { 0 },
    }
}

fn is_non_finite(e: &ModelError) -> bool {
    matches!(
        e,
        ModelError::Tensor(TensorError::NonFinite { .. }) | ModelError::Tensor(TensorError::Domain { .. })
    )
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub state: TrainState,
    pub history: Vec<MetricRow>,
    pub corpus_digest: String,
}

impl Trainer {
    pub fn new(config: TrainConfig, corpus: &Corpus) -> Result<Self> {
        let issues = config.check();
        if !issues.is_empty() {
            return Err(TrainError::Config(issues));
        }
        let dims = dims_for(corpus, &config);
        if let Some(w) = config.f_layers.last.filter(|&w| w != dims.num_classes) {
            return Err(TrainError::Config(vec![format!(
                "f_layers: last width {w} differs from the corpus's {} answer classes (use auto)",
                dims.num_classes
            )]));
        }
        let model = Model::new(config.model_config(&dims), dims)?;
        Ok(Self {
            state: TrainState::new(config.seed),
            config,
            model,
            adam: AdamState::default(),
            history: Vec::new(),
            corpus_digest: corpus.digest(),
        })
    }

    /// Forward, backward, optional clipping and one Adam update.
    pub fn train_step(&mut self, batch: &crate::model::Batch) -> Result<StepOutput> {
        let mut out = match self.model.step(batch) {
            Ok(o) => o,
            Err(e) if is_non_finite(&e) => return Err(TrainError::Divergence(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        if !out.loss.is_finite() {
            return Err(TrainError::Divergence(format!("loss {}", out.loss)));
        }
        if self.config.clip_norm > 0.0 {
            clip_global_norm(&mut out.grads, self.config.clip_norm);
        }
        adam_step(&mut self.model.params, &out.grads, &mut self.adam, self.config.lr)?;
        if let Some(name) = out.grads.keys().find(|k| {
            self.model.params.get(k).is_ok_and(|t| t.data().iter().any(|v| !v.is_finite()))
        }) {
            return Err(TrainError::Divergence(format!("parameter `{name}` is no longer finite")));
        }
        Ok(out)
    }

    pub fn run_epoch(&mut self, corpus: &Corpus) -> Result<EpochReport> {
        let t0 = Instant::now();
        let train = corpus.episodes("train");
        if train.is_empty() {
            return Err(TrainError::Data(DataError::Missing("corpus has no train split".into())));
        }
        let dims = self.model.dims().clone();
        let order: Vec<_> = batches(train, self.config.batch_size, Some(&mut self.state.rng), dims.num_classes, dims.match_fields).collect();
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for batch in &order {
            let out = self.train_step(batch)?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            seen += batch.len();
        }
        self.state.epoch += 1;
        let epoch = self.state.epoch;
        let train_loss = loss_sum / seen as f64;
        let train_error_pct = 100.0 * (1.0 - correct as f64 / seen as f64);
        self.history.push(MetricRow {
            epoch,
            split: "train".into(),
            task: "all".into(),
            error_pct: train_error_pct,
            loss: train_loss,
        });
        let valid_eps = corpus.episodes("valid");
        let valid = if valid_eps.is_empty() {
            None
        } else {
            let t = evaluate(&self.model, valid_eps, self.config.batch_size).map_err(|e| match e {
                TrainError::Model(m) if is_non_finite(&m) => TrainError::Divergence(m.to_string()),
                e => e,
            })?;
            self.history.extend(MetricRow::from_table(epoch, "valid", &t));
            Some(t)
        };
        let score = valid.as_ref().map_or(train_error_pct, |t| 100.0 - t.accuracy_pct());
        if score < self.state.best_valid {
            self.state.best_valid = score;
            self.state.bad_epochs = 0;
        } else {
            self.state.bad_epochs += 1;
        }
        if self.config.patience > 0 && self.state.bad_epochs >= self.config.patience {
            self.state.stopped = true;
        }
        Ok(EpochReport {
            epoch,
            train_loss,
            train_error_pct,
            valid,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }

    /// Runs epochs until the epoch limit, early stopping or the time budget.
    pub fn train(&mut self, corpus: &Corpus, mut on_epoch: impl FnMut(&EpochReport)) -> Result<()> {
        let t0 = Instant::now();
        while !self.state.stopped && self.state.epoch < self.config.epochs {
            let r = self.run_epoch(corpus)?;
            on_epoch(&r);
            if self.config.time_budget_secs > 0.0 && t0.elapsed().as_secs_f64() > self.config.time_budget_secs {
                break;
            }
        }
        Ok(())
    }

    /// Evaluates the named split and appends its rows to the history.
    pub fn test(&mut self, corpus: &Corpus, split: &str) -> Result<ErrorTable> {
        let t = evaluate(&self.model, corpus.episodes(split), self.config.batch_size)?;
        self.history.extend(MetricRow::from_table(self.state.epoch, split, &t));
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            dims: self.model.dims().clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            state: self.state.clone(),
            history: self.history.clone(),
            corpus_digest: self.corpus_digest.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = ck.model()?;
        Ok(Self {
            config: ck.config,
            model,
            adam: ck.adam,
            state: ck.state,
            history: ck.history,
            corpus_digest: ck.corpus_digest,
        })
    }
}
